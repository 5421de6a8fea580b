//! Secondary indexes over STc records: an interval list sorted by `t_first`
//! with per-block maxima of `t_last`, and a uniform spatial grid.

use std::collections::HashMap;

use crate::model::{Point2, Rect, Timestamp};

const BLOCK: usize = 32;

#[derive(Debug, Clone, Default)]
pub(crate) struct TimeIndex {
    /// `(t_first, t_last, record)` sorted by `t_first`, then record.
    entries: Vec<(Timestamp, Timestamp, usize)>,
    block_max_last: Vec<Timestamp>,
}

impl TimeIndex {
    pub fn build(intervals: impl Iterator<Item = (Timestamp, Timestamp, usize)>) -> Self {
        let mut entries: Vec<_> = intervals.collect();
        entries.sort_unstable_by_key(|&(first, _, rec)| (first, rec));
        let block_max_last = entries
            .chunks(BLOCK)
            .map(|c| c.iter().map(|e| e.1).max().unwrap_or(Timestamp::MIN))
            .collect();
        TimeIndex {
            entries,
            block_max_last,
        }
    }

    /// Records whose closed interval intersects `[t0, t1]`.
    pub fn overlapping(&self, t0: Timestamp, t1: Timestamp, out: &mut Vec<usize>) {
        let end = self.entries.partition_point(|e| e.0 <= t1);
        for (b, &max_last) in self.block_max_last.iter().enumerate() {
            let start = b * BLOCK;
            if start >= end {
                break;
            }
            if max_last < t0 {
                continue;
            }
            let stop = (start + BLOCK).min(end);
            out.extend(
                self.entries[start..stop]
                    .iter()
                    .filter(|e| e.1 >= t0)
                    .map(|e| e.2),
            );
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GridIndex {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    pub fn build(cell: f64, points: impl Iterator<Item = (Point2, usize)>) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (p, rec) in points {
            cells.entry(Self::key(cell, &p)).or_default().push(rec);
        }
        GridIndex { cell, cells }
    }

    fn key(cell: f64, p: &Point2) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Candidate records in cells overlapping `region`; callers still test
    /// containment exactly.
    pub fn candidates(&self, region: &Rect, out: &mut Vec<usize>) {
        let (x0, y0) = Self::key(self.cell, &region.min);
        let (x1, y1) = Self::key(self.cell, &region.max);
        let span = (x1 - x0 + 1).saturating_mul(y1 - y0 + 1);
        if span < 0 || span as usize > self.cells.len() {
            for (&(cx, cy), recs) in &self.cells {
                if (x0..=x1).contains(&cx) && (y0..=y1).contains(&cy) {
                    out.extend(recs);
                }
            }
            return;
        }
        for cx in x0..=x1 {
            for cy in y0..=y1 {
                if let Some(recs) = self.cells.get(&(cx, cy)) {
                    out.extend(recs);
                }
            }
        }
    }
}
