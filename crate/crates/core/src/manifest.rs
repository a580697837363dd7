//! On-disk model interchange: a JSON manifest plus raw little-endian f32 blobs.
//!
//! ```json
//! {
//!   "version": "1",
//!   "input": {"channels": 3, "height": 32, "width": 32},
//!   "blocks": [{"kind": "conv_bn_act", "in_channels": 3, "out_channels": 64,
//!               "kernel_size": 3, "stride": 1, "padding": 1, "activation": "relu",
//!               "weight_blob": "model.block0.weight.bin",
//!               "gamma": [...], "beta": [...], "eps": 1e-5,
//!               "pool": {"kind": "max", "size": 2, "stride": 2}}],
//!   "head": {"in_features": 512, "out_features": 10,
//!            "weight_blob": "model.head.weight.bin", "bias_blob": "model.head.bias.bin"}
//! }
//! ```
//!
//! Blob paths are relative to the manifest's directory. Conv weights are
//! `(out, in, kh, kw)` row-major, head weights `(out, in)`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DenseHead, InputShape, LayerBlock, ModelGraph};
use crate::tensor::{ActivationKind, BnParams, ConvKernel, Pool};

pub const MANIFEST_VERSION: &str = "1";
pub const BLOCK_KIND: &str = "conv_bn_act";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub version: String,
    pub input: InputShape,
    pub blocks: Vec<BlockEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub kind: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Defaults to `kernel_size / 2`.
    #[serde(default)]
    pub padding: Option<usize>,
    pub activation: String,
    pub weight_blob: String,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<Pool>,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEntry {
    pub in_features: usize,
    pub out_features: usize,
    pub weight_blob: String,
    pub bias_blob: String,
}

fn manifest_err(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.into(),
        msg: msg.into(),
    }
}

pub fn read_blob(path: &Path, expected: usize, field: &str) -> Result<Vec<f32>> {
    let bytes = fs::read(path)
        .map_err(|e| manifest_err(field, format!("cannot read blob {}: {e}", path.display())))?;
    if bytes.len() != 4 * expected {
        return Err(manifest_err(
            field,
            format!(
                "blob {} has {} bytes, expected {} ({} f32 values)",
                path.display(),
                bytes.len(),
                4 * expected,
                expected
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn encode_blob(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn convert(manifest: &ModelManifest, dir: &Path) -> Result<ModelGraph> {
    if manifest.version != MANIFEST_VERSION {
        return Err(manifest_err(
            "version",
            format!("unsupported version {:?}", manifest.version),
        ));
    }
    if manifest.blocks.is_empty() {
        return Err(manifest_err("blocks", "model has no blocks"));
    }
    let mut prev = manifest.input.channels;
    let mut blocks = Vec::with_capacity(manifest.blocks.len());
    for (i, b) in manifest.blocks.iter().enumerate() {
        let at = |field: &str| format!("blocks[{i}].{field}");
        if b.kind != BLOCK_KIND {
            return Err(manifest_err(
                at("kind"),
                format!("unsupported block kind {:?}", b.kind),
            ));
        }
        if b.in_channels != prev {
            return Err(manifest_err(
                at("in_channels"),
                format!(
                    "{} does not match previous output channels {prev}",
                    b.in_channels
                ),
            ));
        }
        let act = ActivationKind::parse(&b.activation).ok_or_else(|| {
            manifest_err(
                at("activation"),
                format!("unknown activation {:?}", b.activation),
            )
        })?;
        for (field, len) in [("gamma", b.gamma.len()), ("beta", b.beta.len())] {
            if len != b.out_channels {
                return Err(manifest_err(
                    at(field),
                    format!("has {len} values, out_channels is {}", b.out_channels),
                ));
            }
        }
        if b.eps.is_nan() || b.eps <= 0.0 {
            return Err(manifest_err(at("eps"), "must be > 0"));
        }
        if b.stride == 0 || b.kernel_size == 0 {
            return Err(manifest_err(
                at("stride"),
                "stride and kernel_size must be >= 1",
            ));
        }
        let count = b.out_channels * b.in_channels * b.kernel_size * b.kernel_size;
        let weights = read_blob(&dir.join(&b.weight_blob), count, &at("weight_blob"))?;
        let conv = ConvKernel::with_geometry(
            b.out_channels,
            b.in_channels,
            b.kernel_size,
            b.stride,
            b.padding.unwrap_or(b.kernel_size / 2),
            weights,
        )
        .map_err(|e| manifest_err(at("weight_blob"), e.to_string()))?;
        let bn = BnParams {
            gamma: b.gamma.clone(),
            beta: b.beta.clone(),
            eps: b.eps,
        };
        blocks.push(LayerBlock {
            conv,
            bn,
            act,
            pool: b.pool,
        });
        prev = b.out_channels;
    }
    let head = match &manifest.head {
        Some(h) => Some(DenseHead {
            in_features: h.in_features,
            out_features: h.out_features,
            weights: read_blob(
                &dir.join(&h.weight_blob),
                h.in_features * h.out_features,
                "head.weight_blob",
            )?,
            bias: read_blob(&dir.join(&h.bias_blob), h.out_features, "head.bias_blob")?,
        }),
        None => None,
    };
    ModelGraph::new(manifest.input, blocks, head).map_err(|e| manifest_err("model", e.to_string()))
}

pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text)
        .map_err(|e| manifest_err(path.display().to_string(), e.to_string()))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    convert(&manifest, dir).map_err(|e| match e {
        Error::Manifest { path: field, msg } => {
            manifest_err(format!("{}: {field}", path.display()), msg)
        }
        other => other,
    })
}

fn blob_stem(manifest_path: &Path) -> String {
    manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

/// Writes the manifest and its blobs next to it.
pub fn save_model(model: &ModelGraph, manifest_path: impl AsRef<Path>) -> Result<()> {
    let path = manifest_path.as_ref();
    model.validate()?;
    let dir: PathBuf = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let stem = blob_stem(path);
    let mut blocks = Vec::with_capacity(model.blocks.len());
    for (i, b) in model.blocks.iter().enumerate() {
        let weight_blob = format!("{stem}.block{i}.weight.bin");
        write_atomic(&dir.join(&weight_blob), &encode_blob(&b.conv.weights))?;
        blocks.push(BlockEntry {
            kind: BLOCK_KIND.into(),
            in_channels: b.conv.in_channels,
            out_channels: b.conv.out_channels,
            kernel_size: b.conv.kernel_size,
            stride: b.conv.stride,
            padding: Some(b.conv.padding),
            activation: b.act.name().into(),
            weight_blob,
            gamma: b.bn.gamma.clone(),
            beta: b.bn.beta.clone(),
            eps: b.bn.eps,
            pool: b.pool,
        });
    }
    let head = match &model.head {
        Some(h) => {
            let weight_blob = format!("{stem}.head.weight.bin");
            let bias_blob = format!("{stem}.head.bias.bin");
            write_atomic(&dir.join(&weight_blob), &encode_blob(&h.weights))?;
            write_atomic(&dir.join(&bias_blob), &encode_blob(&h.bias))?;
            Some(HeadEntry {
                in_features: h.in_features,
                out_features: h.out_features,
                weight_blob,
                bias_blob,
            })
        }
        None => None,
    };
    let manifest = ModelManifest {
        version: MANIFEST_VERSION.into(),
        input: model.input,
        blocks,
        head,
    };
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    write_atomic(path, json.as_bytes())
}
