//! JSON checkpoints and kernel CSV export.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Part, SeparatorConfig, SeparatorParams};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub val_loss: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct KernelPair {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FcLayer {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: SeparatorConfig,
    /// `[path][channel]`
    kernels: Vec<Vec<KernelPair>>,
    /// `[path][layer]`, empty without FC layers.
    fc: Vec<Vec<FcLayer>>,
    training_meta: TrainingMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: SeparatorParams,
    pub meta: TrainingMeta,
}

fn rows4(k: &[f64]) -> Vec<Vec<f64>> {
    k.chunks(4).map(<[f64]>::to_vec).collect()
}

impl Checkpoint {
    pub fn new(params: SeparatorParams, meta: TrainingMeta) -> Self {
        Checkpoint { params, meta }
    }

    pub fn to_json(&self) -> Result<String> {
        let p = &self.params;
        let cfg = *p.config();
        let kernels = (0..cfg.n_param_paths())
            .map(|path| {
                (0..cfg.n_k)
                    .map(|ch| KernelPair {
                        re: rows4(p.kernel(path, ch, Part::Re)),
                        im: rows4(p.kernel(path, ch, Part::Im)),
                    })
                    .collect()
            })
            .collect();
        let fc = if cfg.use_fc {
            (0..cfg.n_param_paths())
                .map(|path| {
                    (0..cfg.fc_depth)
                        .map(|l| FcLayer {
                            w: p.fc_weight(path, l).outer_iter().map(|r| r.to_vec()).collect(),
                            b: p.fc_bias(path, l).to_vec(),
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        let file = CheckpointFile {
            format_version: FORMAT_VERSION,
            config: cfg,
            kernels,
            fc,
            training_meta: self.meta.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format_version {}",
                file.format_version
            )));
        }
        let cfg = file.config;
        cfg.validate()?;
        let mut values: Vec<f64> = Vec::with_capacity(cfg.n_params());
        let shape_err = |what: &str| Error::invalid(format!("checkpoint {what} has the wrong shape"));
        if file.kernels.len() != cfg.n_param_paths() {
            return Err(shape_err("kernels"));
        }
        for path in &file.kernels {
            if path.len() != cfg.n_k {
                return Err(shape_err("kernels"));
            }
            for pair in path {
                for k in [&pair.re, &pair.im] {
                    if k.len() != 4 || k.iter().any(|r| r.len() != 4) {
                        return Err(shape_err("kernels"));
                    }
                    values.extend(k.iter().flatten());
                }
            }
        }
        let d = cfg.width();
        let expected_paths = if cfg.use_fc { cfg.n_param_paths() } else { 0 };
        if file.fc.len() != expected_paths {
            return Err(shape_err("fc"));
        }
        for path in &file.fc {
            if path.len() != cfg.fc_depth {
                return Err(shape_err("fc"));
            }
            for layer in path {
                if layer.w.len() != d || layer.w.iter().any(|r| r.len() != d) || layer.b.len() != d {
                    return Err(shape_err("fc"));
                }
                values.extend(layer.w.iter().flatten());
                values.extend(&layer.b);
            }
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("checkpoint contains non-finite weights"));
        }
        Ok(Checkpoint {
            params: SeparatorParams::from_parts(cfg, values)?,
            meta: file.training_meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// One 4x4 block per (path, channel, part):
/// `path,channel,part,row,k0,k1,k2,k3`.
pub fn write_kernels_csv<W: Write>(params: &SeparatorParams, mut out: W) -> Result<()> {
    writeln!(out, "path,channel,part,row,k0,k1,k2,k3")?;
    let cfg = params.config();
    for path in 0..cfg.n_param_paths() {
        for ch in 0..cfg.n_k {
            for (part, name) in [(Part::Re, "re"), (Part::Im, "im")] {
                let k = params.kernel(path, ch, part);
                for r in 0..4 {
                    let row = &k[4 * r..4 * r + 4];
                    writeln!(
                        out,
                        "{path},{ch},{name},{r},{:e},{:e},{:e},{:e}",
                        row[0], row[1], row[2], row[3]
                    )?;
                }
            }
        }
    }
    Ok(())
}

/// Mean over all kernels of `|K − c I₄|`, with `c` fitted per kernel by
/// least squares (`c = tr K / 4`).
pub fn kernel_identity_deviation(params: &SeparatorParams) -> f64 {
    let cfg = params.config();
    let mut total = 0.0;
    let mut count = 0usize;
    for path in 0..cfg.n_param_paths() {
        for ch in 0..cfg.n_k {
            for part in [Part::Re, Part::Im] {
                let k = params.effective_kernel(path, ch, part);
                let c = (k[0] + k[5] + k[10] + k[15]) / 4.0;
                for (i, x) in k.iter().enumerate() {
                    let target = if i % 5 == 0 { c } else { 0.0 };
                    total += (x - target).abs();
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

/// Mean `|K − I₄|` over all kernels, without scale fitting.
pub fn kernel_unit_deviation(params: &SeparatorParams) -> f64 {
    let cfg = params.config();
    let mut total = 0.0;
    let mut count = 0usize;
    for path in 0..cfg.n_param_paths() {
        for ch in 0..cfg.n_k {
            for part in [Part::Re, Part::Im] {
                for (i, x) in params.kernel(path, ch, part).iter().enumerate() {
                    total += (x - if i % 5 == 0 { 1.0 } else { 0.0 }).abs();
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}
