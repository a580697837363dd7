//! Agglomerative clustering of channels under a single distance threshold.
//!
//! Clusters are identified by their smallest member channel. Each step merges
//! the pair with the smallest linkage value; ties go to the lexicographically
//! smallest `(first id, second id)` pair. Merging stops as soon as the best
//! linkage is not strictly below the threshold, so `t = 0` never merges.

use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};

/// Largest channel count accepted by [`brute_force_cluster`].
pub const BRUTE_FORCE_MAX: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Complete,
    Single,
    Average,
}

impl Linkage {
    pub const ALL: [Linkage; 3] = [Linkage::Complete, Linkage::Single, Linkage::Average];

    pub fn name(self) -> &'static str {
        match self {
            Linkage::Complete => "complete",
            Linkage::Single => "single",
            Linkage::Average => "average",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

impl std::fmt::Display for Linkage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Flat clustering: `labels[c]` is the cluster of channel `c`.
///
/// Labels are canonical: clusters are numbered in order of their smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    pub fn singletons(size: usize) -> Self {
        Self {
            labels: (0..size).collect(),
            num_clusters: size,
        }
    }

    /// Relabels arbitrary cluster ids into canonical first-appearance order.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|&r| {
                let next = map.len();
                *map.entry(r).or_insert(next)
            })
            .collect();
        Self {
            labels,
            num_clusters: map.len(),
        }
    }

    /// Member lists, each ascending, ordered by label.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_clusters];
        for (c, &l) in self.labels.iter().enumerate() {
            groups[l].push(c);
        }
        groups
    }
}

/// One agglomeration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// Id (smallest member) of the surviving cluster.
    pub left: usize,
    pub right: usize,
    pub distance: f64,
}

fn check_inputs(matrix: &DistanceMatrix, threshold: f64) -> Result<()> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold must be >= 0, got {threshold}"
        )));
    }
    if matrix.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clustering input matrix"));
    }
    Ok(())
}

pub fn hierarchical_cluster(
    matrix: &DistanceMatrix,
    threshold: f64,
    linkage: Linkage,
) -> Result<ClusterAssignment> {
    hierarchical_merges(matrix, threshold, linkage).map(|(a, _)| a)
}

/// Clusters and also returns the merge sequence.
pub fn hierarchical_merges(
    matrix: &DistanceMatrix,
    threshold: f64,
    linkage: Linkage,
) -> Result<(ClusterAssignment, Vec<Merge>)> {
    check_inputs(matrix, threshold)?;
    let n = matrix.size();
    // Cluster-to-cluster linkage, indexed by cluster id; only rows/cols of active ids are live.
    let mut dist = matrix.values().to_vec();
    let mut sizes = vec![1usize; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::new();

    while active.len() > 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for (p, &a) in active.iter().enumerate() {
            for &b in &active[p + 1..] {
                let d = dist[a * n + b];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((a, b, d));
                }
            }
        }
        let (a, b, d) = best.expect("at least two active clusters");
        if d >= threshold {
            break;
        }
        let (na, nb) = (sizes[a] as f64, sizes[b] as f64);
        for &k in &active {
            if k == a || k == b {
                continue;
            }
            let (da, db) = (dist[a * n + k], dist[b * n + k]);
            let merged = match linkage {
                Linkage::Complete => da.max(db),
                Linkage::Single => da.min(db),
                Linkage::Average => (na * da + nb * db) / (na + nb),
            };
            dist[a * n + k] = merged;
            dist[k * n + a] = merged;
        }
        sizes[a] += sizes[b];
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        active.retain(|&k| k != b);
        merges.push(Merge {
            left: a,
            right: b,
            distance: d,
        });
    }
    Ok((ClusterAssignment::from_labels(&owner), merges))
}

/// Naive reference: recomputes every cluster-pair linkage from member lists at each step.
pub fn brute_force_cluster(
    matrix: &DistanceMatrix,
    threshold: f64,
    linkage: Linkage,
) -> Result<ClusterAssignment> {
    let n = matrix.size();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooManyChannels {
            max: BRUTE_FORCE_MAX,
            got: n,
        });
    }
    check_inputs(matrix, threshold)?;
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|c| vec![c]).collect();
    let link = |x: &[usize], y: &[usize]| -> f64 {
        let pairs = x
            .iter()
            .flat_map(|&i| y.iter().map(move |&j| matrix.get(i, j)));
        match linkage {
            Linkage::Complete => pairs.fold(f64::NEG_INFINITY, f64::max),
            Linkage::Single => pairs.fold(f64::INFINITY, f64::min),
            Linkage::Average => pairs.sum::<f64>() / (x.len() * y.len()) as f64,
        }
    };
    loop {
        clusters.sort_by_key(|c| c[0]);
        let mut best: Option<(usize, usize, f64)> = None;
        for p in 0..clusters.len() {
            for q in p + 1..clusters.len() {
                let d = link(&clusters[p], &clusters[q]);
                let better = match best {
                    None => true,
                    Some((bp, bq, bd)) => d < bd || (d == bd && (p, q) < (bp, bq)),
                };
                if better {
                    best = Some((p, q, d));
                }
            }
        }
        match best {
            Some((p, q, d)) if d < threshold => {
                let right = clusters.remove(q);
                clusters[p].extend(right);
                clusters[p].sort_unstable();
            }
            _ => break,
        }
    }
    let mut labels = vec![0; n];
    for (l, members) in clusters.iter().enumerate() {
        for &c in members {
            labels[c] = l;
        }
    }
    Ok(ClusterAssignment::from_labels(&labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn three() -> DistanceMatrix {
        DistanceMatrix::from_rows(3, &[0.0, 0.1, 0.9, 0.1, 0.0, 0.8, 0.9, 0.8, 0.0]).unwrap()
    }

    #[test]
    fn three_channel_examples() {
        let m = three();
        let a = hierarchical_cluster(&m, 0.5, Linkage::Complete).unwrap();
        assert_eq!(a.groups(), vec![vec![0, 1], vec![2]]);
        assert_eq!(a, brute_force_cluster(&m, 0.5, Linkage::Complete).unwrap());

        let (a, merges) = hierarchical_merges(&m, 1.0, Linkage::Complete).unwrap();
        assert_eq!(a.num_clusters, 1);
        assert_eq!(merges[0].distance, 0.1);
        assert_eq!(merges[1].distance, 0.9);

        // single linkage would join at 0.8 instead
        let (_, merges) = hierarchical_merges(&m, 1.0, Linkage::Single).unwrap();
        assert_eq!(merges[1].distance, 0.8);
        let (_, merges) = hierarchical_merges(&m, 1.0, Linkage::Average).unwrap();
        assert!((merges[1].distance - 0.85).abs() < 1e-15);
    }

    #[test]
    fn zero_threshold_gives_singletons() {
        let m = DistanceMatrix::zeros(4);
        assert_eq!(
            hierarchical_cluster(&m, 0.0, Linkage::Complete).unwrap(),
            ClusterAssignment::singletons(4)
        );
    }

    #[test]
    fn brute_force_edges() {
        let one = DistanceMatrix::zeros(1);
        assert_eq!(
            brute_force_cluster(&one, 0.5, Linkage::Complete)
                .unwrap()
                .num_clusters,
            1
        );
        let far = DistanceMatrix::from_upper(5, |_, _| 1.0);
        assert_eq!(
            brute_force_cluster(&far, 0.5, Linkage::Average)
                .unwrap()
                .num_clusters,
            5
        );
        let big = DistanceMatrix::zeros(9);
        assert!(matches!(
            brute_force_cluster(&big, 0.5, Linkage::Complete),
            Err(Error::TooManyChannels { .. })
        ));
    }

    #[test]
    fn ties_break_lexicographically() {
        // every pair equally distant: (0,1) merges first, then {0,1} with 2
        let m = DistanceMatrix::from_upper(3, |_, _| 0.2);
        let (_, merges) = hierarchical_merges(&m, 0.5, Linkage::Complete).unwrap();
        assert_eq!((merges[0].left, merges[0].right), (0, 1));
        assert_eq!((merges[1].left, merges[1].right), (0, 2));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = three();
        assert!(hierarchical_cluster(&m, -0.1, Linkage::Complete).is_err());
        assert!(hierarchical_cluster(&m, f64::NAN, Linkage::Complete).is_err());
    }

    #[test]
    fn linkage_names_round_trip() {
        for l in Linkage::ALL {
            assert_eq!(Linkage::parse(l.name()), Some(l));
        }
        assert_eq!(Linkage::default(), Linkage::Complete);
    }

    fn matrix_strategy(max: usize) -> impl Strategy<Value = DistanceMatrix> {
        (1..=max).prop_flat_map(|n| {
            prop::collection::vec(0.0f64..1.0, n * n)
                .prop_map(move |v| DistanceMatrix::from_rows(n, &v).unwrap())
        })
    }

    fn linkage_strategy() -> impl Strategy<Value = Linkage> {
        prop::sample::select(Linkage::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn matches_brute_force(m in matrix_strategy(6), t in 0.0f64..1.1, l in linkage_strategy()) {
            prop_assert_eq!(
                hierarchical_cluster(&m, t, l).unwrap(),
                brute_force_cluster(&m, t, l).unwrap()
            );
        }

        #[test]
        fn assignment_is_a_partition(m in matrix_strategy(10), t in 0.0f64..1.1, l in linkage_strategy()) {
            let a = hierarchical_cluster(&m, t, l).unwrap();
            prop_assert!(a.num_clusters >= 1 && a.num_clusters <= m.size());
            let groups = a.groups();
            prop_assert!(groups.iter().all(|g| !g.is_empty()));
            prop_assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), m.size());
        }

        #[test]
        fn merges_stay_below_threshold(m in matrix_strategy(10), t in 0.0f64..1.1, l in linkage_strategy()) {
            let (_, merges) = hierarchical_merges(&m, t, l).unwrap();
            prop_assert!(merges.iter().all(|mg| mg.distance < t));
        }

        #[test]
        fn cluster_count_non_increasing_in_threshold(
            m in matrix_strategy(10), t1 in 0.0f64..1.1, t2 in 0.0f64..1.1, l in linkage_strategy()
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = hierarchical_cluster(&m, lo, l).unwrap();
            let b = hierarchical_cluster(&m, hi, l).unwrap();
            prop_assert!(b.num_clusters <= a.num_clusters);
        }

        #[test]
        fn permutation_equivariance(
            m in matrix_strategy(7),
            t in 0.0f64..1.1,
            l in linkage_strategy(),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = m.size();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            // channel c of the permuted matrix is channel perm[c] of the original
            let pm = DistanceMatrix::from_upper(n, |i, j| m.get(perm[i], perm[j]));
            let a = hierarchical_cluster(&m, t, l).unwrap();
            let b = hierarchical_cluster(&pm, t, l).unwrap();
            // with distinct distances the partition is unique up to relabeling
            let mut vals: Vec<f64> = m.off_diagonal().collect();
            vals.sort_by(f64::total_cmp);
            prop_assume!(vals.windows(2).all(|w| w[0] != w[1]));
            let mapped: Vec<usize> = (0..n).map(|c| a.labels[perm[c]]).collect();
            prop_assert_eq!(ClusterAssignment::from_labels(&mapped), b);
        }
    }
}
