//! Inference FLOPs, counting non-tensor layers too.
//!
//! A multiply-add counts as two FLOPs. The per-element constants for BN,
//! activations and pooling are fixed here and embedded in every report.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ModelGraph;
use crate::tensor::ActivationKind;

/// Per-operation FLOP constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopConventions {
    /// FLOPs per multiply-add in convolutions and dense layers.
    pub multiply_add: u64,
    /// Per activation: one multiply and one add with folded statistics.
    pub batch_norm: u64,
    pub relu: u64,
    /// exp, add, divide and negate.
    pub sigmoid: u64,
    pub identity: u64,
    /// Per input element of each pooling window.
    pub pooling: u64,
}

pub const CONVENTIONS: FlopConventions = FlopConventions {
    multiply_add: 2,
    batch_norm: 2,
    relu: 1,
    sigmoid: 4,
    identity: 0,
    pooling: 1,
};

impl FlopConventions {
    pub fn activation(&self, kind: ActivationKind) -> u64 {
        match kind {
            ActivationKind::ReLU => self.relu,
            ActivationKind::Sigmoid => self.sigmoid,
            ActivationKind::Identity => self.identity,
        }
    }

    pub fn describe(&self) -> Vec<String> {
        vec![
            format!(
                "conv: {}*K^2*C_in*C_out*H_out*W_out (a multiply-add counts as {} FLOPs)",
                self.multiply_add, self.multiply_add
            ),
            format!("batch norm: {} per activation", self.batch_norm),
            format!(
                "activation: relu {}, sigmoid {}, identity {} per element",
                self.relu, self.sigmoid, self.identity
            ),
            format!("pooling: {} per input element of each window", self.pooling),
            format!("dense: {}*in*out", self.multiply_add),
            "totals are per sample times batch".to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub conv: u64,
    pub batch_norm: u64,
    pub activation: u64,
    pub pooling: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub batch: usize,
    pub layers: Vec<LayerFlops>,
    pub head: u64,
    pub total: u64,
    pub baseline_total: u64,
    pub pruned_ratio: f64,
    pub conventions: FlopConventions,
    pub convention_notes: Vec<String>,
}

impl FlopsReport {
    /// Re-expresses this report relative to another model's total.
    pub fn against(mut self, baseline_total: u64) -> Self {
        self.baseline_total = baseline_total;
        self.pruned_ratio = if baseline_total == 0 {
            0.0
        } else {
            1.0 - self.total as f64 / baseline_total as f64
        };
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// FLOPs of one forward pass over `batch` samples; the model is its own baseline.
pub fn flops_count(model: &ModelGraph, batch: usize) -> Result<FlopsReport> {
    let c = CONVENTIONS;
    let geometry = model.geometry()?;
    let batch64 = batch as u64;
    let layers: Vec<LayerFlops> = model
        .blocks
        .iter()
        .zip(&geometry)
        .map(|(block, g)| {
            let k2 = (block.conv.kernel_size * block.conv.kernel_size) as u64;
            let out_area = (g.out_height * g.out_width) as u64;
            let outputs = block.out_channels() as u64 * out_area;
            let conv = c.multiply_add * k2 * block.in_channels() as u64 * outputs;
            let batch_norm = c.batch_norm * outputs;
            let activation = c.activation(block.act) * outputs;
            let pooling = block.pool.map_or(0, |p| {
                let windows = block.out_channels() * g.pooled_height * g.pooled_width;
                c.pooling * (windows * p.size * p.size) as u64
            });
            let total = conv + batch_norm + activation + pooling;
            LayerFlops {
                conv: conv * batch64,
                batch_norm: batch_norm * batch64,
                activation: activation * batch64,
                pooling: pooling * batch64,
                total: total * batch64,
            }
        })
        .collect();
    let head = model.head.as_ref().map_or(0, |h| {
        c.multiply_add * (h.in_features * h.out_features) as u64 * batch64
    });
    let total = layers.iter().map(|l| l.total).sum::<u64>() + head;
    Ok(FlopsReport {
        batch,
        layers,
        head,
        total,
        baseline_total: total,
        pruned_ratio: 0.0,
        conventions: c,
        convention_notes: c.describe(),
    })
}

/// FLOPs of `model` with `pruned_ratio` measured against `baseline`.
pub fn flops_compare(
    model: &ModelGraph,
    baseline: &ModelGraph,
    batch: usize,
) -> Result<FlopsReport> {
    let base = flops_count(baseline, batch)?.total;
    Ok(flops_count(model, batch)?.against(base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{InputShape, LayerBlock};
    use crate::plan::{apply_plan, build_pruning_plan, PruneConfig, PruningPlan};
    use crate::tensor::{BnParams, ConvKernel};

    #[test]
    fn single_conv() {
        let input = InputShape {
            channels: 1,
            height: 8,
            width: 8,
        };
        let block = LayerBlock::new(
            ConvKernel::new(1, 1, 3, vec![0.0; 9]).unwrap(),
            BnParams::identity(1, 1e-5),
            ActivationKind::Identity,
        )
        .unwrap();
        let model = ModelGraph::new(input, vec![block], None).unwrap();
        let r = flops_count(&model, 1).unwrap();
        assert_eq!(r.layers[0].conv, 1152);
        // BN is always present in a block; identity activation costs nothing
        assert_eq!(r.total, 1152 + 2 * 64);
        assert_eq!(flops_count(&model, 3).unwrap().total, 3 * r.total);
    }

    #[test]
    fn vgg16_cifar_totals() {
        let r = flops_count(&fixtures::vgg16_cifar(10, 0), 1).unwrap();
        // conv 626_393_088 + BN/ReLU 829_440 + pooling 124_928 + dense 10_240
        assert_eq!(r.total, 627_357_696);
        let r100 = flops_count(&fixtures::vgg16_cifar(100, 0), 1).unwrap();
        assert_eq!(r100.total, 627_449_856);
        assert_eq!(
            r.total,
            r.layers.iter().map(|l| l.total).sum::<u64>() + r.head
        );
    }

    #[test]
    fn halving_channels_quarters_middle_convs() {
        let model = fixtures::vgg16_cifar(10, 1);
        let mut plan = PruningPlan::identity(&model);
        for lp in plan.layers.iter_mut() {
            let c = lp.channels;
            let labels: Vec<usize> = (0..c).map(|i| i / 2 * 2).collect();
            let groups = crate::cluster::ClusterAssignment::from_labels(&labels).groups();
            lp.representatives = groups.iter().map(|g| g[0]).collect();
            lp.clusters = groups;
            lp.compensation = lp.clusters.iter().map(|g| (g[1], g[0])).collect();
            lp.removed = lp.compensation.keys().copied().collect();
        }
        let pruned = apply_plan(&model, &plan).unwrap();
        let base = flops_count(&model, 1).unwrap();
        let r = flops_compare(&pruned, &model, 1).unwrap();
        for l in 1..model.blocks.len() {
            assert_eq!(r.layers[l].conv * 4, base.layers[l].conv);
        }
        assert!(r.pruned_ratio > 0.7 && r.pruned_ratio < 0.76);
    }

    #[test]
    fn pruning_strictly_reduces_flops() {
        for seed in 0..10 {
            let model = fixtures::random_model(&fixtures::RandomModelSpec::default(), seed);
            let plan = build_pruning_plan(&model, &PruneConfig::with_threshold(0.3)).unwrap();
            let pruned = apply_plan(&model, &plan).unwrap();
            let r = flops_compare(&pruned, &model, 1).unwrap();
            if plan.removed_count() > 0 {
                assert!(r.total < r.baseline_total);
                assert!(r.pruned_ratio > 0.0);
            } else {
                assert_eq!(r.total, r.baseline_total);
            }
        }
    }
}
