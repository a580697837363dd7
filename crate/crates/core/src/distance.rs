//! Channel distances.
//!
//! Two routes to the same quantity: the empirical mean squared difference of two
//! channels' activations, and its closed-form limit for independent channels with
//! known first two moments, `(μ_i − μ_j)² + σ²_i + σ²_j`. For batch-normalized
//! channels the moments are `(β, γ²)`, so a whole layer's distance matrix comes
//! straight from its BN parameters without touching any data.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BnParams, Tensor4};

/// Ranges narrower than this leave a matrix unnormalized and flagged degenerate.
pub const DEGENERATE_RANGE: f64 = 1e-12;

/// Mean and variance of one channel's activation distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mu: f64,
    pub sigma2: f64,
}

impl ChannelStats {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "channel stats need finite mu and sigma2 >= 0, got ({mu}, {sigma2})"
            )));
        }
        Ok(Self { mu, sigma2 })
    }

    /// Post-BN channel statistics: mean `β`, variance `γ²`.
    pub fn from_bn(beta: f32, gamma: f32) -> Self {
        let gamma = gamma as f64;
        Self {
            mu: beta as f64,
            sigma2: gamma * gamma,
        }
    }

    pub fn layer(bn: &BnParams) -> Vec<Self> {
        bn.beta
            .iter()
            .zip(&bn.gamma)
            .map(|(&b, &g)| Self::from_bn(b, g))
            .collect()
    }
}

/// Symmetric `C×C` channel distance matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            values: vec![0.0; size * size],
        }
    }

    /// Builds a matrix from its strict upper triangle, evaluated by `f(i, j)` for `i < j`.
    pub fn from_upper(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(size);
        for i in 0..size {
            for j in i + 1..size {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds from a full row-major square; the upper triangle wins and the diagonal is zeroed.
    pub fn from_rows(size: usize, values: &[f64]) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::shape(
                "distance matrix entries",
                size * size,
                values.len(),
            ));
        }
        let m = Self::from_upper(size, |i, j| values[i * size + j]);
        if m.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("distance matrix"));
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.size + j] = v;
        self.values[j * self.size + i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Strict upper-triangle entries in row-major order.
    pub fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).flat_map(move |i| (i + 1..self.size).map(move |j| self.get(i, j)))
    }

    pub fn off_diagonal_range(&self) -> Option<(f64, f64)> {
        self.off_diagonal().fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    pub fn max_entry(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Maps off-diagonal entries affinely onto `[0, 1]`.
    ///
    /// The minimum and maximum are taken over off-diagonal entries only. A range
    /// below [`DEGENERATE_RANGE`] returns the matrix unchanged, flagged degenerate.
    pub fn normalize(&self) -> Normalized {
        let Some((lo, hi)) = self.off_diagonal_range() else {
            return Normalized {
                matrix: self.clone(),
                degenerate: false,
            };
        };
        let range = hi - lo;
        if range < DEGENERATE_RANGE {
            return Normalized {
                matrix: self.clone(),
                degenerate: true,
            };
        }
        let matrix = Self::from_upper(self.size, |i, j| {
            ((self.get(i, j) - lo) / range).clamp(0.0, 1.0)
        });
        Normalized {
            matrix,
            degenerate: false,
        }
    }

    /// Elementwise `|self − other|`.
    pub fn abs_diff(&self, other: &DistanceMatrix) -> Result<DistanceMatrix> {
        if self.size != other.size {
            return Err(Error::shape("distance matrix size", self.size, other.size));
        }
        Ok(Self::from_upper(self.size, |i, j| {
            (self.get(i, j) - other.get(i, j)).abs()
        }))
    }

    /// Elementwise mean of equally sized matrices.
    pub fn mean(matrices: &[DistanceMatrix]) -> Result<DistanceMatrix> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero matrices".into()))?;
        let mut sum = vec![0.0; first.values.len()];
        for m in matrices {
            if m.size != first.size {
                return Err(Error::shape("distance matrix size", first.size, m.size));
            }
            for (s, v) in sum.iter_mut().zip(&m.values) {
                *s += v;
            }
        }
        let n = matrices.len() as f64;
        Ok(DistanceMatrix {
            size: first.size,
            values: sum.into_iter().map(|v| v / n).collect(),
        })
    }

    /// Full square, row-major, comma separated, 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.size {
            for j in 0..self.size {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format_sig9(self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Result of [`DistanceMatrix::normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub matrix: DistanceMatrix,
    pub degenerate: bool,
}

/// `%.9g`-style formatting.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let mut s = String::new();
        let _ = write!(s, "{v:.decimals$}");
        if s.contains('.') {
            let trimmed = s.trim_end_matches('0').trim_end_matches('.');
            s.truncate(trimmed.len());
        }
        s
    } else {
        format!("{v:.8e}")
    }
}

/// Mean squared difference of two equally shaped channel slices, accumulated in f64.
pub fn empirical_channel_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("channel slice length", a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Closed-form distance of two independent channels: `(μ_i − μ_j)² + σ²_i + σ²_j`.
pub fn probabilistic_channel_distance(si: &ChannelStats, sj: &ChannelStats) -> f64 {
    let dm = si.mu - sj.mu;
    dm * dm + (si.sigma2 + sj.sigma2)
}

/// Pairwise closed-form distances; the diagonal is zero by convention.
pub fn build_distance_matrix(layer_stats: &[ChannelStats]) -> DistanceMatrix {
    DistanceMatrix::from_upper(layer_stats.len(), |i, j| {
        probabilistic_channel_distance(&layer_stats[i], &layer_stats[j])
    })
}

/// Pairwise empirical distances between the channels of a (post-BN) activation tensor.
pub fn empirical_distance_matrix(activations: &Tensor4) -> DistanceMatrix {
    DistanceMatrix::from_upper(activations.channels(), |i, j| {
        empirical_channel_distance(activations.channel(i), activations.channel(j))
            .expect("channels of one tensor share a shape")
    })
}
