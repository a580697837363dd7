//! Single-branch Conv -> BN -> activation networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    activation, bn_forward, conv2d, pool_forward, ActivationKind, BnParams, ConvKernel, Pool,
    Tensor4,
};

/// Per-sample input geometry of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlock {
    pub conv: ConvKernel,
    pub bn: BnParams,
    pub act: ActivationKind,
    /// Optional pooling applied to the activation output.
    pub pool: Option<Pool>,
}

impl LayerBlock {
    pub fn new(conv: ConvKernel, bn: BnParams, act: ActivationKind) -> Result<Self> {
        let block = Self {
            conv,
            bn,
            act,
            pool: None,
        };
        block.validate()?;
        Ok(block)
    }

    pub fn with_pool(mut self, pool: Pool) -> Self {
        self.pool = Some(pool);
        self
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        self.conv.validate()?;
        self.bn.validate(self.conv.out_channels)
    }
}

/// Fully connected classifier on the flattened `(c, h, w)` output of the last block.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out, in)` row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DenseHead {
    pub fn validate(&self) -> Result<()> {
        let expected = self.in_features * self.out_features;
        if self.weights.len() != expected {
            return Err(Error::shape(
                "head weights length",
                expected,
                self.weights.len(),
            ));
        }
        if self.bias.len() != self.out_features {
            return Err(Error::shape(
                "head bias length",
                self.out_features,
                self.bias.len(),
            ));
        }
        Ok(())
    }
}

/// Intermediate results of one block.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub pre_bn: Tensor4,
    pub post_bn: Tensor4,
    pub post_act: Tensor4,
}

/// Spatial geometry of one block, per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGeometry {
    pub in_height: usize,
    pub in_width: usize,
    /// Convolution output size, i.e. the size of the block's activations.
    pub out_height: usize,
    pub out_width: usize,
    /// Size after the optional pooling stage; equals the output size without pooling.
    pub pooled_height: usize,
    pub pooled_width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub input: InputShape,
    pub blocks: Vec<LayerBlock>,
    pub head: Option<DenseHead>,
}

impl ModelGraph {
    pub fn new(
        input: InputShape,
        blocks: Vec<LayerBlock>,
        head: Option<DenseHead>,
    ) -> Result<Self> {
        let model = Self {
            input,
            blocks,
            head,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks per-block invariants, the channel chain and the spatial chain.
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidModel("model has no blocks".into()));
        }
        let mut channels = self.input.channels;
        for (i, block) in self.blocks.iter().enumerate() {
            block
                .validate()
                .map_err(|e| Error::InvalidModel(format!("block {i}: {e}")))?;
            if block.in_channels() != channels {
                return Err(Error::InvalidModel(format!(
                    "block {i}: in_channels {} does not match previous out_channels {channels}",
                    block.in_channels()
                )));
            }
            channels = block.out_channels();
        }
        let geometry = self.geometry()?;
        if let Some(head) = &self.head {
            head.validate()?;
            let last = geometry.last().expect("non-empty");
            let flat = channels * last.pooled_height * last.pooled_width;
            if head.in_features != flat {
                return Err(Error::InvalidModel(format!(
                    "head in_features {} does not match flattened block output {flat}",
                    head.in_features
                )));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Vec<BlockGeometry>> {
        let (mut h, mut w) = (self.input.height, self.input.width);
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let bad = |what: &str| Error::InvalidModel(format!("block {i}: {what} does not fit"));
            let oh = block.conv.output_size(h).ok_or_else(|| bad("kernel"))?;
            let ow = block.conv.output_size(w).ok_or_else(|| bad("kernel"))?;
            let (ph, pw) = match &block.pool {
                Some(p) => (
                    p.output_size(oh).ok_or_else(|| bad("pool"))?,
                    p.output_size(ow).ok_or_else(|| bad("pool"))?,
                ),
                None => (oh, ow),
            };
            out.push(BlockGeometry {
                in_height: h,
                in_width: w,
                out_height: oh,
                out_width: ow,
                pooled_height: ph,
                pooled_width: pw,
            });
            h = ph;
            w = pw;
        }
        Ok(out)
    }

    pub fn channel_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(LayerBlock::out_channels).collect()
    }

    /// Learnable parameter count: conv weights, BN γ/β and the head.
    pub fn parameter_count(&self) -> usize {
        let blocks: usize = self
            .blocks
            .iter()
            .map(|b| b.conv.weights.len() + b.bn.gamma.len() + b.bn.beta.len())
            .sum();
        let head = self
            .head
            .as_ref()
            .map_or(0, |h| h.weights.len() + h.bias.len());
        blocks + head
    }

    /// Runs every block and returns the intermediate tensors of each.
    pub fn forward(&self, input: &Tensor4) -> Result<Vec<BlockOutput>> {
        self.forward_until(input, self.blocks.len())
    }

    /// Runs the first `count` blocks.
    pub fn forward_until(&self, input: &Tensor4, count: usize) -> Result<Vec<BlockOutput>> {
        let mut outputs: Vec<BlockOutput> = Vec::with_capacity(count);
        let mut pooled: Option<Tensor4> = None;
        for block in &self.blocks[..count.min(self.blocks.len())] {
            let x = pooled.as_ref().unwrap_or(input);
            let out = block_forward(x, block)?;
            pooled = match &block.pool {
                Some(p) => Some(pool_forward(&out.post_act, p)?),
                None => Some(out.post_act.clone()),
            };
            outputs.push(out);
        }
        Ok(outputs)
    }
}

pub fn block_forward(input: &Tensor4, block: &LayerBlock) -> Result<BlockOutput> {
    let pre_bn = conv2d(input, &block.conv)?;
    let post_bn = bn_forward(&pre_bn, &block.bn)?;
    let post_act = activation(&post_bn, block.act);
    Ok(BlockOutput {
        pre_bn,
        post_bn,
        post_act,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_block(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        act: ActivationKind,
    ) -> LayerBlock {
        let w = (0..c_out * c_in * 9)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let gamma = (0..c_out).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta = (0..c_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        LayerBlock::new(
            ConvKernel::new(c_out, c_in, 3, w).unwrap(),
            BnParams::new(gamma, beta, 1e-5).unwrap(),
            act,
        )
        .unwrap()
    }

    #[test]
    fn zero_kernel_relu_block_is_zero() {
        let block = LayerBlock::new(
            ConvKernel::new(2, 1, 3, vec![0.0; 18]).unwrap(),
            BnParams::new(vec![1.0, 1.0], vec![0.0, 0.0], 1e-5).unwrap(),
            ActivationKind::ReLU,
        )
        .unwrap();
        let x = Tensor4::from_fn(1, 4, 4, 2, |_, h, w, b| (h + w + b) as f32);
        let out = block_forward(&x, &block).unwrap();
        assert!(out.post_act.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_block_normalizes_input() {
        let block = LayerBlock::new(
            ConvKernel::with_geometry(1, 1, 1, 1, 0, vec![1.0]).unwrap(),
            BnParams::identity(1, 1e-5),
            ActivationKind::Identity,
        )
        .unwrap();
        let x = Tensor4::from_fn(1, 3, 3, 2, |_, h, w, b| (h * 7 + w * 3 + b) as f32);
        let out = block_forward(&x, &block).unwrap();
        assert_eq!(out.post_act, bn_forward(&x, &block.bn).unwrap());
    }

    #[test]
    fn block_is_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let block = random_block(&mut rng, 3, 4, ActivationKind::Sigmoid);
        let x = Tensor4::from_fn(3, 6, 6, 3, |_, _, _, _| rng.random_range(-1.0..1.0));
        let out = block_forward(&x, &block).unwrap();
        let expect = activation(
            &bn_forward(&conv2d(&x, &block.conv).unwrap(), &block.bn).unwrap(),
            ActivationKind::Sigmoid,
        );
        assert_eq!(out.post_act, expect);
        assert!(out.post_act.is_finite());
    }

    #[test]
    fn validation_catches_chain_breaks() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let input = InputShape {
            channels: 3,
            height: 8,
            width: 8,
        };
        let a = random_block(&mut rng, 3, 4, ActivationKind::ReLU);
        let b = random_block(&mut rng, 5, 2, ActivationKind::ReLU);
        assert!(ModelGraph::new(input, vec![a.clone(), b], None).is_err());
        assert!(ModelGraph::new(input, vec![], None).is_err());

        let head = DenseHead {
            in_features: 4 * 4 * 4,
            out_features: 2,
            weights: vec![0.0; 4 * 16 * 2],
            bias: vec![0.0; 2],
        };
        let pooled = a.clone().with_pool(Pool::max2());
        assert!(ModelGraph::new(input, vec![pooled], Some(head.clone())).is_ok());
        assert!(ModelGraph::new(input, vec![a], Some(head)).is_err());
    }

    #[test]
    fn forward_respects_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let input = InputShape {
            channels: 2,
            height: 8,
            width: 8,
        };
        let a = random_block(&mut rng, 2, 3, ActivationKind::ReLU).with_pool(Pool::max2());
        let b = random_block(&mut rng, 3, 2, ActivationKind::ReLU);
        let model = ModelGraph::new(input, vec![a, b], None).unwrap();
        let x = Tensor4::from_fn(2, 8, 8, 2, |_, _, _, _| rng.random_range(-1.0..1.0));
        let outs = model.forward(&x).unwrap();
        assert_eq!(outs[0].post_act.height(), 8);
        assert_eq!(outs[1].pre_bn.height(), 4);
        let g = model.geometry().unwrap();
        assert_eq!((g[1].in_height, g[1].out_height), (4, 4));
    }
}
