//! Detector-noise sweep: the same world and patrol re-rendered at each
//! false-positive rate, queried with one attribute query per observed object.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::suite::{materialize, SuiteQuery};
use super::{build_store, Engine, GroundTruthIndex};
use crate::error::{D3aError, Result};
use crate::model::{Embedding, EngineConfig};
use crate::perception::CameraModel;
use crate::query::{evaluate_rank, execute, Precision, QueryKind, MRR_CUTOFF};
use crate::sim::{gen_patrol, gen_world, SimData, WorldSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fpr: f64,
    pub engine: Engine,
    pub queries: usize,
    pub mrr: f64,
    pub miss_rate: f64,
}

/// Q1 Category queries carrying the object's clean code as attribute.
fn sweep_queries(gt: &GroundTruthIndex, dim: usize) -> Result<Vec<SuiteQuery>> {
    gt.observed_objects()
        .enumerate()
        .map(|(id, g)| {
            let index = gt.object(g).map_or(0, |o| o.true_embedding_index);
            Ok(SuiteQuery {
                id,
                kind: QueryKind::Q1,
                precision: Precision::Category,
                gt_targets: vec![g],
                time_range: None,
                absent_category: None,
                attribute: Some(Embedding::one_hot(dim, index)?.as_slice().to_vec()),
            })
        })
        .collect()
}

pub fn fpr_sweep(
    levels: &[f64],
    base: &WorldSpec,
    cam: &CameraModel,
    cfg: &EngineConfig,
    engines: &[Engine],
) -> Result<Vec<SweepRow>> {
    if levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(D3aError::Config("sweep levels must be strictly ascending".into()));
    }
    let world = gen_world(base)?;
    let mut rows = Vec::new();
    for &fpr in levels {
        let spec = WorldSpec { fpr, ..base.clone() };
        let stream = gen_patrol(&world, &spec, cam)?;
        let data = SimData::new(&spec, cam, world.clone(), stream);
        let gt = GroundTruthIndex::new(&data)?;
        let queries = sweep_queries(&gt, data.manifest.embedding_dim)?;
        for &engine in engines {
            let (store, _) = build_store(engine, &data, cfg)?;
            let mapping = BTreeMap::new();
            let mut rr = Vec::with_capacity(queries.len());
            for q in &queries {
                let formal = materialize(q, &gt, &mapping, cfg.q2_together_window_ms);
                let result = execute(&formal, &store, cfg.cos_sim_thresh, cfg.q2_together_window_ms)?;
                rr.push(evaluate_rank(&result, MRR_CUTOFF, |a| q.is_correct(&gt, a)));
            }
            let n = rr.len().max(1) as f64;
            rows.push(SweepRow {
                fpr,
                engine,
                queries: rr.len(),
                mrr: rr.iter().sum::<f64>() / n,
                miss_rate: rr.iter().filter(|r| **r == 0.0).count() as f64 / n,
            });
            log::info!("sweep fpr={fpr} engine={} done", engine.name());
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("fpr,engine,mrr,miss_rate\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.fpr, r.engine.name(), r.mrr, r.miss_rate);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_detector_finds_every_object() {
        let spec = WorldSpec {
            n_static: 6,
            n_dynamic: 1,
            duration_ms: 60 * 60_000,
            seed: 9,
            ..WorldSpec::default().noiseless()
        };
        let rows = fpr_sweep(&[0.0], &spec, &CameraModel::default(), &EngineConfig::default(), &Engine::ALL).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!(r.miss_rate, 0.0, "{r:?}");
        }
        let d3a = rows.iter().find(|r| r.engine == Engine::D3a).unwrap();
        assert_eq!(d3a.mrr, 1.0);
        assert_eq!(sweep_csv(&rows).lines().count(), 4);
    }

    #[test]
    fn levels_must_ascend() {
        let err = fpr_sweep(&[0.2, 0.1], &WorldSpec::default(), &CameraModel::default(), &EngineConfig::default(), &[]);
        assert!(err.is_err());
    }
}
