//! Seeded model and input generators shared by tests, benches, the CLI and the
//! verification harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::model::{DenseHead, InputShape, LayerBlock, ModelGraph};
use crate::tensor::{ActivationKind, BnParams, ConvKernel, Pool, Tensor4};

pub const DEFAULT_EPS: f32 = 1e-5;

/// RNG for work item `stream` under `seed`; identical regardless of scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Batch of i.i.d. standard normal inputs.
pub fn gaussian_input(rng: &mut impl Rng, shape: InputShape, batch: usize) -> Tensor4 {
    Tensor4::from_fn(
        shape.channels,
        shape.height,
        shape.width,
        batch,
        |_, _, _, _| StandardNormal.sample(rng),
    )
}

/// Shape of a randomly generated single-branch network.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomModelSpec {
    pub input: InputShape,
    pub blocks: usize,
    pub min_channels: usize,
    pub max_channels: usize,
    pub kernel_size: usize,
    pub act: ActivationKind,
    pub with_head: bool,
    /// Kernel weights are uniform in `[-a, a]` with `a` log-uniform in this range.
    pub weight_bound: (f32, f32),
    /// `|γ|` range; the sign is random.
    pub gamma_range: (f32, f32),
    pub beta_range: (f32, f32),
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        Self {
            input: InputShape {
                channels: 3,
                height: 8,
                width: 8,
            },
            blocks: 3,
            min_channels: 2,
            max_channels: 8,
            kernel_size: 3,
            act: ActivationKind::ReLU,
            with_head: false,
            // K = 3 slices then have norms of roughly 0.1 to 1.0
            weight_bound: (0.06, 0.58),
            gamma_range: (0.1, 1.5),
            beta_range: (-1.0, 1.0),
        }
    }
}

fn uniform_pair(rng: &mut impl Rng, (lo, hi): (f32, f32)) -> f32 {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub fn random_model(spec: &RandomModelSpec, seed: u64) -> ModelGraph {
    random_model_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_model_with(spec: &RandomModelSpec, rng: &mut impl Rng) -> ModelGraph {
    let k = spec.kernel_size;
    let mut prev = spec.input.channels;
    let mut blocks = Vec::with_capacity(spec.blocks);
    for _ in 0..spec.blocks {
        let c = rng.random_range(spec.min_channels..=spec.max_channels);
        let (lo, hi) = spec.weight_bound;
        let bound = if lo < hi {
            (rng.random_range(lo.ln()..hi.ln())).exp()
        } else {
            lo
        };
        let weights = (0..c * prev * k * k)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let gamma = (0..c)
            .map(|_| {
                let g = uniform_pair(rng, spec.gamma_range);
                if rng.random_bool(0.5) {
                    g
                } else {
                    -g
                }
            })
            .collect();
        let beta = (0..c).map(|_| uniform_pair(rng, spec.beta_range)).collect();
        let conv = ConvKernel::new(c, prev, k, weights).expect("consistent sizes");
        let bn = BnParams::new(gamma, beta, DEFAULT_EPS).expect("consistent sizes");
        blocks.push(LayerBlock::new(conv, bn, spec.act).expect("consistent sizes"));
        prev = c;
    }
    let head = spec.with_head.then(|| {
        let in_features = prev * spec.input.height * spec.input.width;
        let out_features = 4;
        DenseHead {
            in_features,
            out_features,
            weights: (0..in_features * out_features)
                .map(|_| rng.random_range(-0.1..0.1))
                .collect(),
            bias: vec![0.0; out_features],
        }
    });
    ModelGraph::new(spec.input, blocks, head).expect("random model is valid")
}

/// Four 32-channel blocks on 32×16×16 inputs with trained-like BN parameters.
/// Wide fan-in and a small border fraction keep cross-channel correlation of the
/// conv outputs low, which is what separates empirical from closed-form distances.
pub fn fidelity_spec() -> RandomModelSpec {
    RandomModelSpec {
        input: InputShape {
            channels: 32,
            height: 16,
            width: 16,
        },
        blocks: 4,
        min_channels: 32,
        max_channels: 32,
        gamma_range: (0.2, 1.0),
        beta_range: (-2.0, 2.0),
        ..Default::default()
    }
}

/// Two blocks; channels 1 and 3 of the first block are exact duplicates
/// (same filters, same `γ`, `β`) and every other pair is far apart. The second
/// block has two channels, so its normalized distance matrix is degenerate.
pub fn duplicate_channel_model() -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let input = InputShape {
        channels: 3,
        height: 8,
        width: 8,
    };
    let filter = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        (0..3 * 9).map(|_| rng.random_range(-0.5..0.5)).collect()
    };
    let f0 = filter(&mut rng);
    let f1 = filter(&mut rng);
    let f2 = filter(&mut rng);
    let weights = [f0, f1.clone(), f2, f1].concat();
    let first = LayerBlock::new(
        ConvKernel::new(4, 3, 3, weights).unwrap(),
        BnParams::new(vec![1.0; 4], vec![0.0, 5.0, 10.0, 5.0], DEFAULT_EPS).unwrap(),
        ActivationKind::ReLU,
    )
    .unwrap();
    let second = LayerBlock::new(
        ConvKernel::new(
            2,
            4,
            3,
            (0..2 * 4 * 9)
                .map(|_| rng.random_range(-0.5..0.5))
                .collect(),
        )
        .unwrap(),
        BnParams::new(vec![1.0, 0.5], vec![0.0, 1.0], DEFAULT_EPS).unwrap(),
        ActivationKind::ReLU,
    )
    .unwrap();
    ModelGraph::new(input, vec![first, second], None).unwrap()
}

/// Channel plan of the 16-layer VGG variant for CIFAR; `None` is a 2×2 max pool.
pub const VGG16_CIFAR: [Option<usize>; 17] = [
    Some(64),
    Some(64),
    None,
    Some(128),
    Some(128),
    None,
    Some(256),
    Some(256),
    Some(256),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
    Some(512),
    Some(512),
    Some(512),
];

/// VGG-16 for 32×32 CIFAR images: 13 Conv3×3-BN-ReLU blocks with four max pools,
/// a final 2×2 average pool and a single linear classifier on 512 features.
/// Weights are random (He-normal); `γ` and `β` are drawn around trained-like values.
pub fn vgg16_cifar(num_classes: usize, seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = InputShape {
        channels: 3,
        height: 32,
        width: 32,
    };
    let mut blocks: Vec<LayerBlock> = Vec::new();
    let mut prev = 3;
    for entry in VGG16_CIFAR {
        match entry {
            Some(c) => {
                let std = (2.0 / (9 * c) as f32).sqrt();
                let normal = Normal::new(0.0, std).unwrap();
                let weights = (0..c * prev * 9).map(|_| normal.sample(&mut rng)).collect();
                let gamma = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
                let beta = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
                blocks.push(
                    LayerBlock::new(
                        ConvKernel::new(c, prev, 3, weights).unwrap(),
                        BnParams::new(gamma, beta, DEFAULT_EPS).unwrap(),
                        ActivationKind::ReLU,
                    )
                    .unwrap(),
                );
                prev = c;
            }
            None => {
                let last = blocks.last_mut().expect("pool follows a conv");
                last.pool = Some(Pool::max2());
            }
        }
    }
    blocks.last_mut().unwrap().pool = Some(Pool::avg2());
    let std = (1.0 / prev as f32).sqrt();
    let normal = Normal::new(0.0, std).unwrap();
    let head = DenseHead {
        in_features: prev,
        out_features: num_classes,
        weights: (0..prev * num_classes)
            .map(|_| normal.sample(&mut rng))
            .collect(),
        bias: vec![0.0; num_classes],
    };
    ModelGraph::new(input, blocks, Some(head)).expect("vgg16 fixture is valid")
}
