//! Seeded workloads shared by the benchmarks.

use rand::Rng;
use simprune::fixtures::{gaussian_input, stream_rng};
use simprune::{ChannelStats, ConvKernel, InputShape, Tensor4};

/// Closed-form stats of `channels` channels with `γ` in `[0.05, 1)` and `β` in `[-1, 1)`.
pub fn layer_stats(channels: usize, seed: u64) -> Vec<ChannelStats> {
    let mut rng = stream_rng(seed, 0);
    (0..channels)
        .map(|_| {
            let gamma: f32 = rng.random_range(0.05..1.0);
            let beta: f32 = rng.random_range(-1.0..1.0);
            ChannelStats::from_bn(beta, gamma)
        })
        .collect()
}

/// A `3×3` convolution and a matching Gaussian input batch.
pub fn conv_workload(
    in_channels: usize,
    out_channels: usize,
    size: usize,
    batch: usize,
    seed: u64,
) -> (Tensor4, ConvKernel) {
    let mut rng = stream_rng(seed, 1);
    let shape = InputShape {
        channels: in_channels,
        height: size,
        width: size,
    };
    let input = gaussian_input(&mut rng, shape, batch);
    let weights = (0..out_channels * in_channels * 9)
        .map(|_| rng.random_range(-0.1..0.1))
        .collect();
    let kernel = ConvKernel::new(out_channels, in_channels, 3, weights).expect("consistent sizes");
    (input, kernel)
}
