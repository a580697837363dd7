//! Dense tensors and the forward operations of a Conv -> BN -> activation block.
//!
//! Every activation tensor uses the `(c, h, w, b)` row-major layout, so a single
//! channel across the whole batch is one contiguous slice. Convolutions carry
//! no bias term; batch normalization uses the statistics of the tensor it is
//! given (mini-batch mode) and never running averages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation tensor with `(channels, height, width, batch)` row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    channels: usize,
    height: usize,
    width: usize,
    batch: usize,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        batch: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let expected = channels * height * width * batch;
        if data.len() != expected {
            return Err(Error::shape("tensor data length", expected, data.len()));
        }
        Ok(Self {
            channels,
            height,
            width,
            batch,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, batch: usize) -> Self {
        Self {
            channels,
            height,
            width,
            batch,
            data: vec![0.0; channels * height * width * batch],
        }
    }

    /// Builds a tensor by evaluating `f(c, h, w, b)` at every position.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        batch: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width * batch);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..width {
                    for b in 0..batch {
                        data.push(f(c, h, w, b));
                    }
                }
            }
        }
        Self {
            channels,
            height,
            width,
            batch,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Elements per channel, `H·W·B`.
    pub fn channel_len(&self) -> usize {
        self.height * self.width * self.batch
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.channel_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, h: usize, w: usize, b: usize) -> f32 {
        self.data[self.offset(c, h, w, b)]
    }

    fn offset(&self, c: usize, h: usize, w: usize, b: usize) -> usize {
        ((c * self.height + h) * self.width + w) * self.batch + b
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, keep: &[usize]) -> Tensor4 {
        let n = self.channel_len();
        let mut data = Vec::with_capacity(keep.len() * n);
        for &c in keep {
            data.extend_from_slice(self.channel(c));
        }
        Tensor4 {
            channels: keep.len(),
            height: self.height,
            width: self.width,
            batch: self.batch,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn map(&self, f: impl Fn(f32) -> f32) -> Tensor4 {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    fn with_data(&self, data: Vec<f32>) -> Tensor4 {
        Tensor4 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            batch: self.batch,
            data,
        }
    }
}

/// Square convolution kernel, weights stored `(out, in, kh, kw)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: Vec<f32>,
}

impl ConvKernel {
    /// Kernel with the default geometry: stride 1, size-preserving padding `K/2`.
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        weights: Vec<f32>,
    ) -> Result<Self> {
        Self::with_geometry(
            out_channels,
            in_channels,
            kernel_size,
            1,
            kernel_size / 2,
            weights,
        )
    }

    pub fn with_geometry(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f32>,
    ) -> Result<Self> {
        let kernel = Self {
            out_channels,
            in_channels,
            kernel_size,
            stride,
            padding,
            weights,
        };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.out_channels * self.in_channels * self.kernel_size * self.kernel_size;
        if self.weights.len() != expected {
            return Err(Error::shape(
                "conv weights length",
                expected,
                self.weights.len(),
            ));
        }
        if self.kernel_size == 0 {
            return Err(Error::InvalidModel("kernel_size must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidModel("stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of weights in one `K×K` kernel matrix.
    pub fn slice_len(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    /// The `K×K` kernel matrix connecting input channel `input` to output channel `output`.
    pub fn slice(&self, output: usize, input: usize) -> &[f32] {
        let k2 = self.slice_len();
        let start = (output * self.in_channels + input) * k2;
        &self.weights[start..start + k2]
    }

    fn slice_mut(&mut self, output: usize, input: usize) -> &mut [f32] {
        let k2 = self.slice_len();
        let start = (output * self.in_channels + input) * k2;
        &mut self.weights[start..start + k2]
    }

    /// Output spatial size for an input of `size` along one axis, if the kernel fits.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        let padded = size + 2 * self.padding;
        if padded < self.kernel_size {
            return None;
        }
        Some((padded - self.kernel_size) / self.stride + 1)
    }

    /// Adds kernel matrix `(·, from)` into `(·, into)` for every output channel.
    pub(crate) fn fold_input(&mut self, from: usize, into: usize) {
        for o in 0..self.out_channels {
            let src: Vec<f32> = self.slice(o, from).to_vec();
            for (dst, s) in self.slice_mut(o, into).iter_mut().zip(src) {
                *dst += s;
            }
        }
    }

    /// Restricts the kernel to the given output and input channel lists.
    pub(crate) fn select(&self, outputs: &[usize], inputs: &[usize]) -> ConvKernel {
        let mut weights = Vec::with_capacity(outputs.len() * inputs.len() * self.slice_len());
        for &o in outputs {
            for &i in inputs {
                weights.extend_from_slice(self.slice(o, i));
            }
        }
        ConvKernel {
            out_channels: outputs.len(),
            in_channels: inputs.len(),
            kernel_size: self.kernel_size,
            stride: self.stride,
            padding: self.padding,
            weights,
        }
    }
}

/// Batch-normalization affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
}

impl BnParams {
    pub fn new(gamma: Vec<f32>, beta: Vec<f32>, eps: f32) -> Result<Self> {
        let bn = Self { gamma, beta, eps };
        bn.validate(bn.gamma.len())?;
        Ok(bn)
    }

    /// `γ = 1`, `β = 0`.
    pub fn identity(channels: usize, eps: f32) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.gamma.len() != channels {
            return Err(Error::shape("bn gamma length", channels, self.gamma.len()));
        }
        if self.beta.len() != channels {
            return Err(Error::shape("bn beta length", channels, self.beta.len()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "bn eps must be > 0, got {}",
                self.eps
            )));
        }
        Ok(())
    }

    pub(crate) fn select(&self, keep: &[usize]) -> BnParams {
        BnParams {
            gamma: keep.iter().map(|&c| self.gamma[c]).collect(),
            beta: keep.iter().map(|&c| self.beta[c]).collect(),
            eps: self.eps,
        }
    }
}

/// Elementwise non-linearity applied after batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[serde(rename = "relu")]
    ReLU,
    Sigmoid,
    Identity,
}

impl ActivationKind {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            ActivationKind::ReLU => x.max(0.0),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActivationKind::Identity => x,
        }
    }

    pub fn apply_f64(self, x: f64) -> f64 {
        match self {
            ActivationKind::ReLU => x.max(0.0),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActivationKind::Identity => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::ReLU => "relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Some(ActivationKind::ReLU),
            "sigmoid" => Some(ActivationKind::Sigmoid),
            "identity" | "linear" | "none" => Some(ActivationKind::Identity),
            _ => None,
        }
    }
}

impl std::fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Square pooling window applied after a block's activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub kind: PoolKind,
    pub size: usize,
    pub stride: usize,
}

impl Pool {
    pub fn max2() -> Self {
        Pool {
            kind: PoolKind::Max,
            size: 2,
            stride: 2,
        }
    }

    pub fn avg2() -> Self {
        Pool {
            kind: PoolKind::Avg,
            size: 2,
            stride: 2,
        }
    }

    pub fn output_size(&self, size: usize) -> Option<usize> {
        if self.size == 0 || self.stride == 0 || size < self.size {
            return None;
        }
        Some((size - self.size) / self.stride + 1)
    }
}

/// Direct 2-D convolution without bias.
pub fn conv2d(input: &Tensor4, kernel: &ConvKernel) -> Result<Tensor4> {
    kernel.validate()?;
    if input.channels != kernel.in_channels {
        return Err(Error::shape(
            "conv2d input channels",
            kernel.in_channels,
            input.channels,
        ));
    }
    let out_h = kernel
        .output_size(input.height)
        .ok_or_else(|| Error::shape("conv2d input height", kernel.kernel_size, input.height))?;
    let out_w = kernel
        .output_size(input.width)
        .ok_or_else(|| Error::shape("conv2d input width", kernel.kernel_size, input.width))?;

    let batch = input.batch;
    let k = kernel.kernel_size;
    let (stride, pad) = (kernel.stride, kernel.padding);
    let mut out = Tensor4::zeros(kernel.out_channels, out_h, out_w, batch);

    for o in 0..kernel.out_channels {
        for c in 0..kernel.in_channels {
            let w = kernel.slice(o, c);
            for kh in 0..k {
                for kw in 0..k {
                    let weight = w[kh * k + kw];
                    if weight == 0.0 {
                        continue;
                    }
                    for oh in 0..out_h {
                        let ih = (oh * stride + kh) as isize - pad as isize;
                        if ih < 0 || ih as usize >= input.height {
                            continue;
                        }
                        for ow in 0..out_w {
                            let iw = (ow * stride + kw) as isize - pad as isize;
                            if iw < 0 || iw as usize >= input.width {
                                continue;
                            }
                            let src = input.offset(c, ih as usize, iw as usize, 0);
                            let dst = out.offset(o, oh, ow, 0);
                            let src = &input.data[src..src + batch];
                            let dst = &mut out.data[dst..dst + batch];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += weight * s;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Mean and (biased) variance of a slice, accumulated in f64.
pub fn moments(values: &[f32]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var)
}

/// Batch normalization using the statistics of `input` itself.
pub fn bn_forward(input: &Tensor4, bn: &BnParams) -> Result<Tensor4> {
    bn.validate(input.channels)?;
    let n = input.channel_len();
    let mut data = Vec::with_capacity(input.data.len());
    for c in 0..input.channels {
        let x = input.channel(c);
        let (mean, var) = moments(x);
        let scale = bn.gamma[c] as f64 / (var + bn.eps as f64).sqrt();
        let shift = bn.beta[c] as f64;
        data.extend(
            x.iter()
                .map(|&v| ((v as f64 - mean) * scale + shift) as f32),
        );
        debug_assert_eq!(data.len(), (c + 1) * n);
    }
    let out = input.with_data(data);
    if !out.is_finite() {
        return Err(Error::NonFinite("bn_forward"));
    }
    Ok(out)
}

pub fn activation(input: &Tensor4, kind: ActivationKind) -> Tensor4 {
    match kind {
        ActivationKind::Identity => input.clone(),
        _ => input.map(|v| kind.apply(v)),
    }
}

pub fn pool_forward(input: &Tensor4, pool: &Pool) -> Result<Tensor4> {
    let out_h = pool
        .output_size(input.height)
        .ok_or_else(|| Error::shape("pool input height", pool.size, input.height))?;
    let out_w = pool
        .output_size(input.width)
        .ok_or_else(|| Error::shape("pool input width", pool.size, input.width))?;
    let area = (pool.size * pool.size) as f32;
    Ok(Tensor4::from_fn(
        input.channels,
        out_h,
        out_w,
        input.batch,
        |c, oh, ow, b| {
            let window = (0..pool.size).flat_map(|dh| {
                (0..pool.size).map(move |dw| (oh * pool.stride + dh, ow * pool.stride + dw))
            });
            match pool.kind {
                PoolKind::Max => window
                    .map(|(h, w)| input.get(c, h, w, b))
                    .fold(f32::NEG_INFINITY, f32::max),
                PoolKind::Avg => window.map(|(h, w)| input.get(c, h, w, b)).sum::<f32>() / area,
            }
        },
    ))
}
