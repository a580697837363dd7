//! Numerical checks of the pruning theory.
//!
//! * distance convergence: the empirical distance of two independent channels
//!   approaches the closed form as the channel size grows;
//! * activation shift: pruning channel `i` and folding its next-layer kernels
//!   into `j` moves every next-layer channel by at most `λ · Dist(N_i, N_j)`;
//! * the contraction property `(h(x1) − h(x2))² ≤ (x1 − x2)²` of ReLU and sigmoid;
//! * agreement between empirical and closed-form distance matrices.
//!
//! Every harness derives one RNG stream per trial from `(seed, trial)`, so
//! results do not depend on how rayon schedules the work.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{
    build_distance_matrix, empirical_channel_distance, empirical_distance_matrix,
    probabilistic_channel_distance, ChannelStats, DistanceMatrix,
};
use crate::error::{Error, Result};
use crate::fixtures::{gaussian_input, random_model_with, stream_rng, RandomModelSpec};
use crate::model::ModelGraph;
use crate::plan::{apply_plan, compute_lambda, PruningPlan};
use crate::tensor::{ActivationKind, ConvKernel, Tensor4};

/// Absolute slack on `shift <= bound` comparisons.
pub const BOUND_SLACK: f64 = 1e-9;
/// λ above this is reported as a loose bound.
pub const LOOSE_LAMBDA: f64 = 10.0;
/// Largest accepted relative error of the empirical distance at the largest size.
pub const CONVERGENCE_TOLERANCE: f64 = 0.01;
pub const CONVERGENCE_SIZES: [usize; 4] = [1_000, 10_000, 100_000, 1_000_000];
/// Largest accepted `max|empirical − closed form| / max(closed form)` per layer.
pub const FIDELITY_TOLERANCE: f64 = 0.05;

fn relative_error(value: f64, reference: f64) -> f64 {
    let err = (value - reference).abs();
    if reference > 0.0 {
        err / reference
    } else {
        err
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub mean_empirical: f64,
    pub probabilistic: f64,
    /// Mean over trials of `|empirical − probabilistic| / probabilistic`.
    pub mean_rel_error: f64,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub trials: usize,
    pub stats_i: ChannelStats,
    pub stats_j: ChannelStats,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    /// Number of consecutive sizes at which the mean relative error went up.
    pub fn inversions(&self) -> usize {
        self.rows
            .windows(2)
            .filter(|w| w[1].mean_rel_error > w[0].mean_rel_error)
            .count()
    }

    pub fn final_rel_error(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.mean_rel_error)
    }

    /// Final error within [`CONVERGENCE_TOLERANCE`] and never increasing with `n`.
    pub fn converged(&self) -> bool {
        self.final_rel_error() <= CONVERGENCE_TOLERANCE && self.inversions() == 0
    }
}

/// Samples two independent Gaussian channels of each size `n` and compares
/// their empirical distance with the closed form.
pub fn verify_prop1(
    stats_i: ChannelStats,
    stats_j: ChannelStats,
    sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "sizes must be strictly increasing".into(),
        ));
    }
    let normal = |s: &ChannelStats| {
        Normal::new(s.mu as f32, s.sigma2.sqrt() as f32)
            .map_err(|e| Error::InvalidArgument(e.to_string()))
    };
    let (di, dj) = (normal(&stats_i)?, normal(&stats_j)?);
    let limit = probabilistic_channel_distance(&stats_i, &stats_j);

    let rows = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let empirical: Vec<f64> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = stream_rng(seed, ((k as u64) << 32) | t as u64);
                    let a: Vec<f32> = (&di).sample_iter(&mut rng).take(n).collect();
                    let b: Vec<f32> = (&dj).sample_iter(&mut rng).take(n).collect();
                    empirical_channel_distance(&a, &b).expect("equal lengths")
                })
                .collect();
            let errors: Vec<f64> = empirical
                .iter()
                .map(|&e| relative_error(e, limit))
                .collect();
            ConvergenceRow {
                n,
                mean_empirical: empirical.iter().sum::<f64>() / trials as f64,
                probabilistic: limit,
                mean_rel_error: errors.iter().sum::<f64>() / trials as f64,
                max_rel_error: errors.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect();
    Ok(ConvergenceReport {
        seed,
        trials,
        stats_i,
        stats_j,
        rows,
    })
}

/// Per-output-channel activation shift from pruning one channel, two ways.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMeasurement {
    /// Distance between the unpruned and the compensated pruned model's
    /// next-layer pre-BN activations.
    pub forward: Vec<f64>,
    /// `(1/n_{l+1}) ‖(h(N_i) − h(N_j)) ∗ W_(i,c)‖²` evaluated directly.
    pub closed_form: Vec<f64>,
}

/// Single-channel convolution in f64, same geometry as `kernel`.
fn conv_single(
    x: &[f64],
    (height, width, batch): (usize, usize, usize),
    weights: &[f32],
    kernel: &ConvKernel,
) -> Vec<f64> {
    let k = kernel.kernel_size;
    let oh_n = kernel.output_size(height).unwrap_or(0);
    let ow_n = kernel.output_size(width).unwrap_or(0);
    let mut out = vec![0.0; oh_n * ow_n * batch];
    for oh in 0..oh_n {
        for ow in 0..ow_n {
            let dst = &mut out[(oh * ow_n + ow) * batch..][..batch];
            for kh in 0..k {
                let ih = (oh * kernel.stride + kh) as isize - kernel.padding as isize;
                if ih < 0 || ih as usize >= height {
                    continue;
                }
                for kw in 0..k {
                    let iw = (ow * kernel.stride + kw) as isize - kernel.padding as isize;
                    if iw < 0 || iw as usize >= width {
                        continue;
                    }
                    let w = weights[kh * k + kw] as f64;
                    let src = &x[(ih as usize * width + iw as usize) * batch..][..batch];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
    }
    out
}

fn mean_square(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

fn activated(channel: &[f32], act: ActivationKind) -> Vec<f64> {
    channel.iter().map(|&v| act.apply_f64(v as f64)).collect()
}

fn check_shift_layer(model: &ModelGraph, layer: usize) -> Result<()> {
    if layer + 1 >= model.blocks.len() {
        return Err(Error::IndexOutOfRange {
            what: "layer with a successor",
            index: layer,
            len: model.blocks.len().saturating_sub(1),
        });
    }
    if model.blocks[layer].pool.is_some() {
        return Err(Error::InvalidArgument(format!(
            "block {layer} is followed by pooling; the shift is defined between adjacent convolutions"
        )));
    }
    Ok(())
}

/// Closed-form shift of every output channel of block `layer + 1` when channel
/// `pruned` of block `layer` is replaced by `representative`.
fn closed_form_shift(
    post_bn: &Tensor4,
    act: ActivationKind,
    next: &ConvKernel,
    pruned: usize,
    representative: usize,
) -> Vec<f64> {
    let hi = activated(post_bn.channel(pruned), act);
    let hj = activated(post_bn.channel(representative), act);
    let delta: Vec<f64> = hi.iter().zip(&hj).map(|(a, b)| a - b).collect();
    let dims = (post_bn.height(), post_bn.width(), post_bn.batch());
    (0..next.out_channels)
        .map(|c| mean_square(&conv_single(&delta, dims, next.slice(c, pruned), next)))
        .collect()
}

pub fn measure_shift(
    model: &ModelGraph,
    layer: usize,
    pruned: usize,
    representative: usize,
    input: &Tensor4,
) -> Result<ShiftMeasurement> {
    check_shift_layer(model, layer)?;
    let plan = PruningPlan::single_removal(model, layer, pruned, representative)?;
    let pruned_model = apply_plan(model, &plan)?;

    let full = model.forward_until(input, layer + 2)?;
    let reduced = pruned_model.forward_until(input, layer + 2)?;
    let (a, ap) = (&full[layer + 1].pre_bn, &reduced[layer + 1].pre_bn);
    let forward = (0..a.channels())
        .map(|c| empirical_channel_distance(a.channel(c), ap.channel(c)))
        .collect::<Result<Vec<_>>>()?;

    let closed_form = closed_form_shift(
        &full[layer].post_bn,
        model.blocks[layer].act,
        &model.blocks[layer + 1].conv,
        pruned,
        representative,
    );
    Ok(ShiftMeasurement {
        forward,
        closed_form,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    /// Trial (input batch) index, or network index for the random suite.
    pub trial: usize,
    pub layer: usize,
    pub pruned: usize,
    /// Nearest channel by empirical post-BN distance; the one the pruned channel folds into.
    pub representative: usize,
    pub output_channel: usize,
    pub shift: f64,
    pub lambda: f64,
    pub min_distance: f64,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub pairs: usize,
    pub violations: usize,
    pub all_satisfied: bool,
    pub max_lambda: f64,
    /// Pairs with λ above [`LOOSE_LAMBDA`].
    pub loose_bound_pairs: usize,
    /// Largest `shift / bound` over pairs with a positive bound.
    pub max_tightness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub seed: u64,
    pub trials: usize,
    pub batch: usize,
    /// Layers not checked because pooling separates them from the next convolution.
    pub skipped_layers: Vec<usize>,
    pub summary: BoundSummary,
    pub entries: Vec<BoundEntry>,
}

impl BoundReport {
    fn from_entries(
        seed: u64,
        trials: usize,
        batch: usize,
        skipped_layers: Vec<usize>,
        entries: Vec<BoundEntry>,
    ) -> Self {
        let violations = entries.iter().filter(|e| !e.satisfied).count();
        let summary = BoundSummary {
            pairs: entries.len(),
            violations,
            all_satisfied: violations == 0,
            max_lambda: entries.iter().map(|e| e.lambda).fold(0.0, f64::max),
            loose_bound_pairs: entries.iter().filter(|e| e.lambda > LOOSE_LAMBDA).count(),
            max_tightness: entries
                .iter()
                .filter(|e| e.bound > 0.0)
                .map(|e| e.shift / e.bound)
                .fold(0.0, f64::max),
        };
        Self {
            seed,
            trials,
            batch,
            skipped_layers,
            summary,
            entries,
        }
    }

    /// Same report keeping only the violating entries.
    pub fn violations_only(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|e| !e.satisfied)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prop2Options {
    pub trials: usize,
    pub batch: usize,
    pub seed: u64,
    /// Identity also has a derivative in `[0, 1]` but is rejected unless allowed.
    pub allow_identity: bool,
}

impl Default for Prop2Options {
    fn default() -> Self {
        Self {
            trials: 1,
            batch: 4,
            seed: 0,
            allow_identity: false,
        }
    }
}

fn check_bound_activations(model: &ModelGraph, allow_identity: bool) -> Result<()> {
    for block in &model.blocks[..model.blocks.len().saturating_sub(1)] {
        if block.act == ActivationKind::Identity && !allow_identity {
            return Err(Error::UnsupportedActivation(
                "identity (pass allow_identity to include it)".into(),
            ));
        }
    }
    Ok(())
}

/// Checks the shift bound of every (pruned channel, output channel) pair for one input batch.
fn bound_entries(model: &ModelGraph, input: &Tensor4, trial: usize) -> Result<Vec<BoundEntry>> {
    let outs = model.forward(input)?;
    let mut entries = Vec::new();
    for layer in 0..model.blocks.len().saturating_sub(1) {
        if model.blocks[layer].pool.is_some() {
            continue;
        }
        let post_bn = &outs[layer].post_bn;
        let channels = post_bn.channels();
        if channels < 2 {
            continue;
        }
        let distances = empirical_distance_matrix(post_bn);
        let next = &model.blocks[layer + 1].conv;
        let n_l = post_bn.channel_len();
        let n_l1 = outs[layer + 1].pre_bn.channel_len();
        for pruned in 0..channels {
            let (representative, min_distance) = (0..channels)
                .filter(|&j| j != pruned)
                .map(|j| (j, distances.get(pruned, j)))
                .fold(None, |best: Option<(usize, f64)>, (j, d)| match best {
                    Some((_, bd)) if bd <= d => best,
                    _ => Some((j, d)),
                })
                .expect("at least two channels");
            let shifts = closed_form_shift(
                post_bn,
                model.blocks[layer].act,
                next,
                pruned,
                representative,
            );
            for (output_channel, shift) in shifts.into_iter().enumerate() {
                let lambda = compute_lambda(next.slice(output_channel, pruned), n_l, n_l1)?;
                let bound = lambda * min_distance;
                entries.push(BoundEntry {
                    trial,
                    layer,
                    pruned,
                    representative,
                    output_channel,
                    shift,
                    lambda,
                    min_distance,
                    bound,
                    satisfied: shift <= bound + BOUND_SLACK,
                });
            }
        }
    }
    Ok(entries)
}

/// Checks `shift ≤ λ · min_j Dist(N_i, N_j)` on `trials` random input batches.
///
/// The minimum runs over the empirical post-BN distances of the actual batch
/// (excluding `j = i`), and the pruned channel is folded into that nearest `j`.
pub fn verify_prop2(model: &ModelGraph, options: &Prop2Options) -> Result<BoundReport> {
    model.validate()?;
    check_bound_activations(model, options.allow_identity)?;
    if options.trials == 0 || options.batch == 0 {
        return Err(Error::InvalidArgument(
            "trials and batch must be >= 1".into(),
        ));
    }
    let per_trial = (0..options.trials)
        .into_par_iter()
        .map(|t| {
            let input = gaussian_input(
                &mut stream_rng(options.seed, t as u64),
                model.input,
                options.batch,
            );
            bound_entries(model, &input, t)
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = (0..model.blocks.len().saturating_sub(1))
        .filter(|&l| model.blocks[l].pool.is_some())
        .collect();
    Ok(BoundReport::from_entries(
        options.seed,
        options.trials,
        options.batch,
        skipped,
        per_trial.into_iter().flatten().collect(),
    ))
}

/// Random small networks for the shift-bound suite: 2 to 4 blocks of 2 to 8
/// channels, `K = 3`, 8×8 inputs. About one block in ten gets `γ = 0`.
pub fn suite_network(act: ActivationKind, rng: &mut impl Rng) -> ModelGraph {
    let spec = RandomModelSpec {
        blocks: rng.random_range(2..=4),
        act,
        ..RandomModelSpec::default()
    };
    let mut model = random_model_with(&spec, rng);
    for block in model.blocks.iter_mut() {
        if rng.random_bool(0.1) {
            block.bn.gamma.iter_mut().for_each(|g| *g = 0.0);
        }
    }
    model
}

/// The shift bound over `networks` random networks, one input batch each.
pub fn verify_prop2_random(
    networks: usize,
    act: ActivationKind,
    batch: usize,
    seed: u64,
) -> Result<BoundReport> {
    if act == ActivationKind::Identity {
        return Err(Error::UnsupportedActivation(act.to_string()));
    }
    let per_net = (0..networks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let model = suite_network(act, &mut rng);
            let input = gaussian_input(&mut rng, model.input, batch);
            bound_entries(&model, &input, k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport::from_entries(
        seed,
        networks,
        batch,
        Vec::new(),
        per_net.into_iter().flatten().collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationCheck {
    pub activation: ActivationKind,
    pub seed: u64,
    pub samples: usize,
    pub violations: usize,
    pub holds: bool,
}

const ACTIVATION_CHUNK: usize = 1 << 16;

/// Samples pairs uniformly in `[-100, 100]²` and counts violations of
/// `(h(x1) − h(x2))² ≤ (x1 − x2)²`.
pub fn verify_activation_inequality(
    kind: ActivationKind,
    samples: usize,
    seed: u64,
) -> Result<ActivationCheck> {
    if kind == ActivationKind::Identity {
        return Err(Error::UnsupportedActivation(kind.to_string()));
    }
    let chunks = samples.div_ceil(ACTIVATION_CHUNK);
    let violations = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let count = ACTIVATION_CHUNK.min(samples - k * ACTIVATION_CHUNK);
            (0..count)
                .filter(|_| {
                    let x1 = rng.random_range(-100.0..=100.0f64);
                    let x2 = rng.random_range(-100.0..=100.0f64);
                    let dh = kind.apply_f64(x1) - kind.apply_f64(x2);
                    dh * dh > (x1 - x2) * (x1 - x2)
                })
                .count()
        })
        .sum::<usize>();
    Ok(ActivationCheck {
        activation: kind,
        seed,
        samples,
        violations,
        holds: violations == 0,
    })
}

/// Empirical (trial mean), closed-form and absolute-difference matrices of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDistanceReport {
    pub layer: usize,
    pub empirical: DistanceMatrix,
    pub probabilistic: DistanceMatrix,
    pub abs_diff: DistanceMatrix,
}

impl LayerDistanceReport {
    /// Largest absolute difference relative to the largest closed-form entry.
    pub fn within_tolerance(&self) -> bool {
        self.relative_max_diff() <= FIDELITY_TOLERANCE
    }

    pub fn relative_max_diff(&self) -> f64 {
        let max = self.probabilistic.max_entry();
        if max > 0.0 {
            self.abs_diff.max_entry() / max
        } else {
            self.abs_diff.max_entry()
        }
    }
}

/// Mean empirical post-BN distance matrices over `trials` random batches next
/// to the closed-form matrices from BN parameters.
pub fn empirical_layer_matrices(
    model: &ModelGraph,
    trials: usize,
    batch: usize,
    seed: u64,
) -> Result<Vec<DistanceMatrix>> {
    if trials == 0 || batch == 0 {
        return Err(Error::InvalidArgument(
            "trials and batch must be >= 1".into(),
        ));
    }
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let input = gaussian_input(&mut stream_rng(seed, t as u64), model.input, batch);
            let outs = model.forward(&input)?;
            Ok(outs
                .iter()
                .map(|o| empirical_distance_matrix(&o.post_bn))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    (0..model.blocks.len())
        .map(|l| {
            let mats: Vec<DistanceMatrix> = per_trial.iter().map(|t| t[l].clone()).collect();
            DistanceMatrix::mean(&mats)
        })
        .collect()
}

pub fn distance_matrix_report(
    model: &ModelGraph,
    trials: usize,
    batch: usize,
    seed: u64,
) -> Result<Vec<LayerDistanceReport>> {
    model.validate()?;
    let empirical = empirical_layer_matrices(model, trials, batch, seed)?;
    model
        .blocks
        .iter()
        .zip(empirical)
        .enumerate()
        .map(|(layer, (block, empirical))| {
            let probabilistic = build_distance_matrix(&ChannelStats::layer(&block.bn));
            let abs_diff = empirical.abs_diff(&probabilistic)?;
            Ok(LayerDistanceReport {
                layer,
                empirical,
                probabilistic,
                abs_diff,
            })
        })
        .collect()
}
