//! Density-based clustering over an arbitrary pairwise distance.
//!
//! A point is core when at least `min_pts` points (itself included) lie
//! within `eps`. Points are visited in input order; a border point joins the
//! first cluster whose expansion reaches it.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Noise,
    Cluster(usize),
}

impl Label {
    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Cluster(c) => Some(c),
            Label::Noise => None,
        }
    }
}

/// Labels `n` points. `dist(i, j)` must be symmetric.
pub fn dbscan<F>(n: usize, dist: F, eps: f64, min_pts: usize) -> Vec<Label>
where
    F: Fn(usize, usize) -> f64,
{
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| i == j || dist(i, j) <= eps).collect())
        .collect();

    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut next_cluster = 0;
    let mut queue = VecDeque::new();

    for p in 0..n {
        if labels[p].is_some() {
            continue;
        }
        if neighbors[p].len() < min_pts {
            labels[p] = Some(Label::Noise);
            continue;
        }
        let cluster = Label::Cluster(next_cluster);
        next_cluster += 1;
        labels[p] = Some(cluster);
        queue.extend(neighbors[p].iter().copied().filter(|&q| q != p));

        while let Some(q) = queue.pop_front() {
            match labels[q] {
                Some(Label::Noise) => {
                    // border point, never expanded
                    labels[q] = Some(cluster);
                    continue;
                }
                Some(Label::Cluster(_)) => continue,
                None => labels[q] = Some(cluster),
            }
            if neighbors[q].len() >= min_pts {
                queue.extend(neighbors[q].iter().copied());
            }
        }
    }

    labels.into_iter().map(|l| l.unwrap_or(Label::Noise)).collect()
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::Label;

    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        let mut c = i;
        while parent[c] != r {
            let next = parent[c];
            parent[c] = r;
            c = next;
        }
        r
    }

    /// Reference labeling from the explicit neighbor graph: core components
    /// via union-find, numbered by their smallest core index; border points
    /// take the lowest-numbered adjacent component.
    pub fn reference_dbscan(dist: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Label> {
        let n = dist.len();
        let adj = |i: usize, j: usize| i == j || dist[i][j] <= eps;
        let core: Vec<bool> = (0..n)
            .map(|i| (0..n).filter(|&j| adj(i, j)).count() >= min_pts)
            .collect();
        let mut parent: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && adj(i, j) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut component_rank = vec![usize::MAX; n];
        let mut next = 0;
        for i in 0..n {
            if core[i] {
                let root = find(&mut parent, i);
                if component_rank[root] == usize::MAX {
                    component_rank[root] = next;
                    next += 1;
                }
            }
        }
        (0..n)
            .map(|i| {
                if core[i] {
                    Label::Cluster(component_rank[find(&mut parent, i)])
                } else {
                    (0..n)
                        .filter(|&j| core[j] && adj(i, j))
                        .map(|j| component_rank[find(&mut parent, j)])
                        .min()
                        .map_or(Label::Noise, Label::Cluster)
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::reference_dbscan;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_input() {
        assert!(dbscan(0, |_, _| 0.0, 0.5, 2).is_empty());
    }

    #[test]
    fn identical_points_form_one_cluster() {
        assert_eq!(dbscan(3, |_, _| 0.0, 0.5, 2), vec![Label::Cluster(0); 3]);
    }

    #[test]
    fn isolated_point_is_noise() {
        let xs: [f64; _] = [0.0, 0.1, 5.0];
        let labels = dbscan(3, |i, j| (xs[i] - xs[j]).abs(), 0.5, 2);
        assert_eq!(labels, vec![Label::Cluster(0), Label::Cluster(0), Label::Noise]);
    }

    #[test]
    fn min_pts_one_makes_every_point_a_cluster() {
        let xs: [f64; _] = [0.0, 10.0];
        let labels = dbscan(2, |i, j| (xs[i] - xs[j]).abs(), 0.5, 1);
        assert_eq!(labels, vec![Label::Cluster(0), Label::Cluster(1)]);
    }

    #[test]
    fn border_point_joins_first_discovered_cluster() {
        // cores at 0,1 (cluster 0) and 3,4 (cluster 1); 2 touches both
        let xs: [f64; _] = [0.0, 0.9, 2.0, 3.1, 4.0];
        let labels = dbscan(5, |i, j| (xs[i] - xs[j]).abs(), 1.1, 3);
        let dist: Vec<Vec<f64>> = xs
            .iter()
            .map(|a| xs.iter().map(|b| (a - b).abs()).collect())
            .collect();
        assert_eq!(labels, reference_dbscan(&dist, 1.1, 3));
    }

    proptest! {
        #[test]
        fn matches_reference_on_random_planar_sets(
            pts in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 0..50),
            eps in 0.2f64..3.0,
            min_pts in 1usize..5,
        ) {
            let dist: Vec<Vec<f64>> = pts
                .iter()
                .map(|a| pts.iter().map(|b| (a.0 - b.0).hypot(a.1 - b.1)).collect())
                .collect();
            let got = dbscan(pts.len(), |i, j| dist[i][j], eps, min_pts);
            prop_assert_eq!(got, reference_dbscan(&dist, eps, min_pts));
        }
    }
}
