//! Pruning plans: which channels each layer keeps, and how the removed ones
//! are folded into their representatives in the following layer.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{hierarchical_cluster, ClusterAssignment, Linkage};
use crate::distance::{build_distance_matrix, ChannelStats};
use crate::error::{Error, Result};
use crate::model::{DenseHead, LayerBlock, ModelGraph};

pub const PLAN_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    /// Global clustering threshold on normalized distances.
    pub threshold: f64,
    pub linkage: Linkage,
    /// Lower bound on retained channels per layer.
    pub min_channels: usize,
    /// Fold removed channels' next-layer kernels into their representatives.
    pub compensate: bool,
    /// Leave the final block untouched.
    pub freeze_last: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            linkage: Linkage::Complete,
            min_channels: 1,
            compensate: true,
            freeze_last: false,
        }
    }
}

impl PruneConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "threshold must be a finite value >= 0, got {}",
                self.threshold
            )));
        }
        if self.min_channels == 0 {
            return Err(Error::InvalidArgument("min_channels must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    /// Channel count of the layer before pruning.
    pub channels: usize,
    /// Cluster member lists, ascending, ordered by smallest member.
    pub clusters: Vec<Vec<usize>>,
    /// Retained channel of each cluster, parallel to `clusters`.
    pub representatives: Vec<usize>,
    pub removed: Vec<usize>,
    /// Removed channel -> representative it is folded into.
    pub compensation: BTreeMap<usize, usize>,
    #[serde(default)]
    pub degenerate: bool,
}

impl LayerPlan {
    /// Keeps every channel.
    pub fn identity(channels: usize) -> Self {
        Self::from_assignment(
            &ClusterAssignment::singletons(channels),
            &vec![1.0; channels],
        )
        .expect("singletons are never empty")
    }

    fn from_assignment(assignment: &ClusterAssignment, gammas: &[f32]) -> Result<Self> {
        let clusters = assignment.groups();
        let representatives = clusters
            .iter()
            .map(|g| select_representatives(g, gammas))
            .collect::<Result<Vec<_>>>()?;
        let mut plan = Self {
            channels: assignment.labels.len(),
            clusters,
            representatives,
            removed: Vec::new(),
            compensation: BTreeMap::new(),
            degenerate: false,
        };
        plan.refresh_removed();
        Ok(plan)
    }

    fn refresh_removed(&mut self) {
        self.compensation.clear();
        for (members, &rep) in self.clusters.iter().zip(&self.representatives) {
            for &c in members {
                if c != rep {
                    self.compensation.insert(c, rep);
                }
            }
        }
        self.removed = self.compensation.keys().copied().collect();
    }

    /// Retained channels in ascending order.
    pub fn retained(&self) -> Vec<usize> {
        let mut keep = self.representatives.clone();
        keep.sort_unstable();
        keep
    }

    pub fn assignment(&self) -> ClusterAssignment {
        let mut labels = vec![0; self.channels];
        for (l, members) in self.clusters.iter().enumerate() {
            for &c in members {
                labels[c] = l;
            }
        }
        ClusterAssignment::from_labels(&labels)
    }

    /// Splits removed channels with the largest |γ| into singleton clusters until
    /// at least `min` channels are retained.
    fn enforce_min_channels(&mut self, min: usize, gammas: &[f32]) {
        let target = min.min(self.channels);
        if self.representatives.len() >= target {
            return;
        }
        let mut candidates = self.removed.clone();
        candidates.sort_by(|&a, &b| gammas[b].abs().total_cmp(&gammas[a].abs()).then(a.cmp(&b)));
        for c in candidates
            .into_iter()
            .take(target - self.representatives.len())
        {
            for members in self.clusters.iter_mut() {
                members.retain(|&m| m != c);
            }
            self.clusters.push(vec![c]);
            self.representatives.push(c);
        }
        let mut paired: Vec<(Vec<usize>, usize)> = self
            .clusters
            .drain(..)
            .zip(self.representatives.drain(..))
            .collect();
        paired.sort_by_key(|(members, _)| members[0]);
        (self.clusters, self.representatives) = paired.into_iter().unzip();
        self.refresh_removed();
    }

    /// Structural checks against a layer of `channels` channels.
    pub fn validate(&self, channels: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::PlanMismatch(msg));
        if self.channels != channels {
            return bad(format!(
                "plan has {} channels, layer has {channels}",
                self.channels
            ));
        }
        if self.clusters.len() != self.representatives.len() {
            return bad("clusters and representatives differ in length".into());
        }
        let mut seen = vec![false; channels];
        for (members, rep) in self.clusters.iter().zip(&self.representatives) {
            if !members.contains(rep) {
                return bad(format!("representative {rep} is not in its cluster"));
            }
            for &c in members {
                if c >= channels || std::mem::replace(&mut seen[c], true) {
                    return bad(format!("channel {c} is out of range or clustered twice"));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("clusters do not cover every channel".into());
        }
        let mut expected = BTreeMap::new();
        for (members, &rep) in self.clusters.iter().zip(&self.representatives) {
            expected.extend(members.iter().filter(|&&c| c != rep).map(|&c| (c, rep)));
        }
        if expected != self.compensation {
            return bad("compensation map does not match clusters".into());
        }
        if !self.removed.iter().copied().eq(expected.keys().copied()) {
            return bad("removed set does not match clusters".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub version: String,
    pub threshold: f64,
    pub linkage: Linkage,
    pub compensate: bool,
    pub min_channels: usize,
    pub layers: Vec<LayerPlan>,
}

impl PruningPlan {
    /// A plan that keeps every channel of `model`.
    pub fn identity(model: &ModelGraph) -> Self {
        Self {
            version: PLAN_VERSION.into(),
            threshold: 0.0,
            linkage: Linkage::Complete,
            compensate: true,
            min_channels: 1,
            layers: model
                .channel_counts()
                .into_iter()
                .map(LayerPlan::identity)
                .collect(),
        }
    }

    /// Removes a single channel `removed` of `layer`, folding it into `representative`.
    pub fn single_removal(
        model: &ModelGraph,
        layer: usize,
        removed: usize,
        representative: usize,
    ) -> Result<Self> {
        let mut plan = Self::identity(model);
        let lp = plan.layers.get_mut(layer).ok_or(Error::IndexOutOfRange {
            what: "layer",
            index: layer,
            len: model.blocks.len(),
        })?;
        for (index, what) in [(removed, "channel"), (representative, "channel")] {
            if index >= lp.channels {
                return Err(Error::IndexOutOfRange {
                    what,
                    index,
                    len: lp.channels,
                });
            }
        }
        if removed == representative {
            return Err(Error::InvalidArgument(
                "removed channel and representative must differ".into(),
            ));
        }
        let labels: Vec<usize> = (0..lp.channels)
            .map(|c| if c == removed { representative } else { c })
            .collect();
        lp.clusters = ClusterAssignment::from_labels(&labels).groups();
        lp.representatives = lp
            .clusters
            .iter()
            .map(|g| {
                if g.contains(&representative) {
                    representative
                } else {
                    g[0]
                }
            })
            .collect();
        lp.refresh_removed();
        Ok(plan)
    }

    pub fn removed_count(&self) -> usize {
        self.layers.iter().map(|l| l.removed.len()).sum()
    }

    pub fn retained_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.representatives.len())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Cluster member with the largest |γ|; ties go to the smallest index.
pub fn select_representatives(cluster: &[usize], gammas: &[f32]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for &c in cluster {
        let g = *gammas.get(c).ok_or(Error::IndexOutOfRange {
            what: "gamma",
            index: c,
            len: gammas.len(),
        })?;
        best = match best {
            Some(b) if gammas[b].abs() > g.abs() || (gammas[b].abs() == g.abs() && b < c) => {
                Some(b)
            }
            _ => Some(c),
        };
    }
    best.ok_or(Error::EmptyCluster)
}

fn plan_layer(block: &LayerBlock, config: &PruneConfig) -> Result<LayerPlan> {
    let stats = ChannelStats::layer(&block.bn);
    let normalized = build_distance_matrix(&stats).normalize();
    if normalized.degenerate {
        let mut plan = LayerPlan::identity(block.out_channels());
        plan.degenerate = true;
        return Ok(plan);
    }
    let assignment = hierarchical_cluster(&normalized.matrix, config.threshold, config.linkage)?;
    let mut plan = LayerPlan::from_assignment(&assignment, &block.bn.gamma)?;
    plan.enforce_min_channels(config.min_channels, &block.bn.gamma);
    Ok(plan)
}

/// Distance matrix from BN statistics, normalization, clustering and
/// representative selection, independently for every layer.
pub fn build_pruning_plan(model: &ModelGraph, config: &PruneConfig) -> Result<PruningPlan> {
    config.validate()?;
    model.validate()?;
    let last = model.blocks.len() - 1;
    let layers = model
        .blocks
        .par_iter()
        .enumerate()
        .map(|(l, block)| {
            if config.freeze_last && l == last {
                Ok(LayerPlan::identity(block.out_channels()))
            } else {
                plan_layer(block, config)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PruningPlan {
        version: PLAN_VERSION.into(),
        threshold: config.threshold,
        linkage: config.linkage,
        compensate: config.compensate,
        min_channels: config.min_channels,
        layers,
    })
}

/// Produces the pruned model described by `plan`.
///
/// Removed output channels are dropped from each block. In the consumer of a
/// pruned layer (the next block, or the dense head after the last block) every
/// removed channel's input weights are first added onto its representative's
/// when the plan asks for compensation, then the removed inputs are dropped.
pub fn apply_plan(model: &ModelGraph, plan: &PruningPlan) -> Result<ModelGraph> {
    model.validate()?;
    if plan.layers.len() != model.blocks.len() {
        return Err(Error::PlanMismatch(format!(
            "plan has {} layers, model has {} blocks",
            plan.layers.len(),
            model.blocks.len()
        )));
    }
    for (l, (lp, block)) in plan.layers.iter().zip(&model.blocks).enumerate() {
        lp.validate(block.out_channels())
            .map_err(|e| Error::PlanMismatch(format!("layer {l}: {e}")))?;
    }

    let all_inputs: Vec<usize> = (0..model.input.channels).collect();
    let mut blocks = Vec::with_capacity(model.blocks.len());
    for (l, block) in model.blocks.iter().enumerate() {
        let keep_out = plan.layers[l].retained();
        let mut conv = block.conv.clone();
        let keep_in = match l.checked_sub(1).map(|p| &plan.layers[p]) {
            Some(prev) => {
                if plan.compensate {
                    for (&removed, &rep) in &prev.compensation {
                        conv.fold_input(removed, rep);
                    }
                }
                prev.retained()
            }
            None => all_inputs.clone(),
        };
        blocks.push(LayerBlock {
            conv: conv.select(&keep_out, &keep_in),
            bn: block.bn.select(&keep_out),
            act: block.act,
            pool: block.pool,
        });
    }

    let head = match &model.head {
        Some(head) => {
            let geometry = model.geometry()?;
            let last = geometry.last().expect("validated model has blocks");
            let area = last.pooled_height * last.pooled_width;
            Some(prune_head(
                head,
                plan.layers.last().expect("non-empty"),
                area,
                plan.compensate,
            ))
        }
        None => None,
    };

    ModelGraph::new(model.input, blocks, head)
}

fn prune_head(head: &DenseHead, last: &LayerPlan, area: usize, compensate: bool) -> DenseHead {
    let mut weights = head.weights.clone();
    let row = head.in_features;
    if compensate {
        for (&removed, &rep) in &last.compensation {
            for o in 0..head.out_features {
                for a in 0..area {
                    let src = weights[o * row + removed * area + a];
                    weights[o * row + rep * area + a] += src;
                }
            }
        }
    }
    let keep = last.retained();
    let in_features = keep.len() * area;
    let mut pruned = Vec::with_capacity(in_features * head.out_features);
    for o in 0..head.out_features {
        for &c in &keep {
            let start = o * row + c * area;
            pruned.extend_from_slice(&weights[start..start + area]);
        }
    }
    DenseHead {
        in_features,
        out_features: head.out_features,
        weights: pruned,
        bias: head.bias.clone(),
    }
}

/// Bound coefficient `(n_l / n_{l+1}) · K² · ‖W‖²` for one `K×K` kernel matrix.
pub fn compute_lambda(kernel_slice: &[f32], n_l: usize, n_l1: usize) -> Result<f64> {
    if n_l1 == 0 {
        return Err(Error::InvalidArgument("n_{l+1} must be > 0".into()));
    }
    let k2 = kernel_slice.len() as f64;
    let norm2: f64 = kernel_slice.iter().map(|&w| (w as f64) * (w as f64)).sum();
    Ok(n_l as f64 / n_l1 as f64 * k2 * norm2)
}
