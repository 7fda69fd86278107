//! The improved ECAPA-TDNN and the baseline ECAPA-TDNN.

mod checkpoint;
mod config;
mod label;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, load_checkpoint_expecting, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{parse_kv_lines, ModelConfig};
pub use label::EmotionLabel;

use std::fmt;
use std::str::FromStr;

use crate::blocks::{AttentiveStatsPool, DiffAttention, Mca, Res2Block};
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{BatchNorm1d, Conv1d, Dense};
use crate::params::{ParamKind, ParamStore, Scope, Session};
use crate::rng;
use crate::tensor::Tensor;

/// Stem convolution kernel.
pub const STEM_KERNEL: usize = 5;
/// Kernel of the dilated Res2 convolutions.
pub const RES2_KERNEL: usize = 3;
/// Initial value of the differential-attention λ.
pub const LAMBDA_INIT: f64 = 0.5;
/// Path segments that belong to the three added modules.
pub const MODULE_NAMESPACES: [&str; 3] = ["mca", "rse", "diffattn"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Improved,
    Baseline,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Improved => "improved",
            Arch::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "improved" => Ok(Arch::Improved),
            "baseline" => Ok(Arch::Baseline),
            other => Err(Error::ConfigInvalid(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Conv → ReLU → BN.
#[derive(Clone, Debug)]
struct ConvBlock {
    conv: Conv1d,
    bn: BatchNorm1d,
}

impl ConvBlock {
    fn new(scope: &mut Scope<'_>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let mut s = scope.sub(name);
        Self {
            conv: Conv1d::new(&mut s, "conv", cin, cout, k, 1, true),
            bn: BatchNorm1d::new(&mut s, "bn", cout),
        }
    }

    fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let h = self.conv.forward(s, x)?;
        let h = s.g.relu(h)?;
        self.bn.forward(s, h)
    }

    fn flops(&self, t: usize) -> u64 {
        self.conv.flops(t) + (self.conv.out_channels * t) as u64 + self.bn.flops(t)
    }
}

#[derive(Clone, Debug)]
enum Fusion {
    Mca(Mca),
    /// Plain 1×1 conv of the same output width, used when MCA is ablated.
    Plain(Conv1d),
}

#[derive(Clone, Debug)]
struct Improved {
    stem: ConvBlock,
    blocks: Vec<Res2Block>,
    agg: ConvBlock,
    fusion: Fusion,
    diff: Option<DiffAttention>,
    head: Dense,
}

#[derive(Clone, Debug)]
struct Baseline {
    stem: ConvBlock,
    blocks: Vec<Res2Block>,
    agg: ConvBlock,
    asp: AttentiveStatsPool,
    asp_bn: BatchNorm1d,
    embed: Dense,
    embed_bn: BatchNorm1d,
    head: Dense,
}

#[derive(Clone, Debug)]
enum Net {
    Improved(Improved),
    Baseline(Baseline),
}

/// A built model: architecture, config, parameters and module layout.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: Arch,
    pub config: ModelConfig,
    pub store: ParamStore,
    net: Net,
}

fn build_trunk(scope: &mut Scope<'_>, cfg: &ModelConfig, rse: bool) -> Result<(ConvBlock, Vec<Res2Block>)> {
    let c = cfg.channels;
    let stem = ConvBlock::new(scope, "stem", cfg.input_coeffs, c, STEM_KERNEL);
    let mut bs = scope.sub("blocks");
    let blocks = (0..3)
        .map(|i| {
            Res2Block::new(
                &mut bs,
                &i.to_string(),
                c,
                cfg.res2_scale,
                RES2_KERNEL,
                cfg.dilations[i],
                cfg.reduction_ratio,
                rse,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((stem, blocks))
}

fn trunk_forward(s: &mut Session<'_>, stem: &ConvBlock, blocks: &[Res2Block], x: Var) -> Result<Var> {
    let mut h = stem.forward(s, x)?;
    let mut outs = Vec::with_capacity(blocks.len());
    for b in blocks {
        h = b.forward(s, h)?;
        outs.push(h);
    }
    s.g.concat_channels(&outs)
}

impl Model {
    /// Improved ECAPA-TDNN: stem, three MCA-RSE Res2Blocks, cross-layer
    /// aggregation (concat, 1×1 conv 3C→C), MCA conv layer (C→4C), global
    /// average pooling, differential attention over the four C-wide branch
    /// descriptors, dense head.
    pub fn build_improved(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let c = cfg.channels;
        let mut store = ParamStore::new();
        let mut r = rng::seeded(seed);
        let mut scope = Scope::new(&mut store, &mut r);
        let (stem, blocks) = build_trunk(&mut scope, &cfg, cfg.use_rse)?;
        let agg = ConvBlock::new(&mut scope, "agg", 3 * c, c, 1);
        let fusion = if cfg.use_mca {
            Fusion::Mca(Mca::new(&mut scope, "mca", c, c, cfg.mca_branch_dilations, cfg.reduction_ratio)?)
        } else {
            Fusion::Plain(Conv1d::new(&mut scope, "proj", c, 4 * c, 1, 1, true))
        };
        let diff = if cfg.use_diff_attn {
            Some(DiffAttention::new(&mut scope, "diffattn", c, cfg.heads, LAMBDA_INIT)?)
        } else {
            None
        };
        let head = Dense::new(&mut scope, "head", 4 * c, cfg.num_classes, true);
        let net = Net::Improved(Improved { stem, blocks, agg, fusion, diff, head });
        Ok(Self { arch: Arch::Improved, config: cfg, store, net })
    }

    /// Baseline ECAPA-TDNN: stem, three SE-Res2Blocks, concat + 1×1 conv,
    /// attentive statistics pooling, BN, embedding layer, BN, dense head.
    pub fn build_baseline(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let c = cfg.channels;
        let embed_dim = Self::baseline_embed_dim(c);
        let mut store = ParamStore::new();
        let mut r = rng::seeded(seed);
        let mut scope = Scope::new(&mut store, &mut r);
        let (stem, blocks) = build_trunk(&mut scope, &cfg, false)?;
        let agg = ConvBlock::new(&mut scope, "agg", 3 * c, 3 * c, 1);
        let asp = AttentiveStatsPool::new(&mut scope, "asp", 3 * c, c);
        let asp_bn = BatchNorm1d::new(&mut scope, "asp_bn", 6 * c);
        let embed = Dense::new(&mut scope, "embed", 6 * c, embed_dim, true);
        let embed_bn = BatchNorm1d::new(&mut scope, "embed_bn", embed_dim);
        let head = Dense::new(&mut scope, "head", embed_dim, cfg.num_classes, true);
        let net = Net::Baseline(Baseline { stem, blocks, agg, asp, asp_bn, embed, embed_bn, head });
        Ok(Self { arch: Arch::Baseline, config: cfg, store, net })
    }

    pub fn build(arch: Arch, config: &ModelConfig, seed: u64) -> Result<Self> {
        match arch {
            Arch::Improved => Self::build_improved(config, seed),
            Arch::Baseline => Self::build_baseline(config, seed),
        }
    }

    /// Width of the baseline embedding layer (`3C/2`, 192 at 128 channels).
    pub fn baseline_embed_dim(channels: usize) -> usize {
        (3 * channels / 2).max(1)
    }

    /// Logits `[B, classes]` for input `[B, coeffs, T]`.
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = s.g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.config.input_coeffs {
            return Err(Error::shape(
                "model_forward",
                format!("expected [B, {}, T], got {shape:?}", self.config.input_coeffs),
            ));
        }
        let batch = shape[0];
        match &self.net {
            Net::Improved(m) => {
                let h = trunk_forward(s, &m.stem, &m.blocks, x)?;
                let h = m.agg.forward(s, h)?;
                let h = match &m.fusion {
                    Fusion::Mca(mca) => mca.forward(s, h)?,
                    Fusion::Plain(conv) => conv.forward(s, h)?,
                };
                let mut z = s.g.global_avg_pool_time(h)?;
                if let Some(d) = &m.diff {
                    let c = self.config.channels;
                    let rows = (0..batch)
                        .map(|b| {
                            let row = s.g.narrow(z, 0, b, 1)?;
                            let tokens = s.g.reshape(row, &[4, c])?;
                            let out = d.forward(s, tokens)?;
                            s.g.reshape(out, &[1, 4 * c])
                        })
                        .collect::<Result<Vec<_>>>()?;
                    z = s.g.concat(&rows, 0)?;
                }
                m.head.forward(s, z)
            }
            Net::Baseline(m) => {
                let h = trunk_forward(s, &m.stem, &m.blocks, x)?;
                let h = m.agg.forward(s, h)?;
                let p = m.asp.forward(s, h)?;
                let p = s.g.reshape(p, &[batch, 6 * self.config.channels, 1])?;
                let p = m.asp_bn.forward(s, p)?;
                let p = s.g.reshape(p, &[batch, 6 * self.config.channels])?;
                let e = m.embed.forward(s, p)?;
                let dim = m.embed.outputs;
                let e = s.g.reshape(e, &[batch, dim, 1])?;
                let e = m.embed_bn.forward(s, e)?;
                let e = s.g.reshape(e, &[batch, dim])?;
                m.head.forward(s, e)
            }
        }
    }

    /// Eval-mode class probabilities `[B, classes]`. Accepts `[coeffs, T]` or `[B, coeffs, T]`.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let x = if x.rank() == 2 {
            x.reshape(&[1, x.shape()[0], x.shape()[1]])?
        } else {
            x.clone()
        };
        let mut s = Session::eval(&self.store);
        let input = s.input(x);
        let logits = self.forward(&mut s, input)?;
        let p = s.g.softmax(logits, 1)?;
        Ok(s.g.value(p).clone())
    }

    /// Argmax class per row, ties to the lowest id.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.probabilities(x)?;
        Ok(argmax_rows(&p))
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Trainable parameter counts grouped by module, in construction order.
    /// Blocks are reported individually (`blocks.0`, ...).
    pub fn module_param_counts(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for e in self.store.entries().iter().filter(|e| e.kind == ParamKind::Trainable) {
            let mut parts = e.name.split('.');
            let first = parts.next().unwrap_or_default();
            let key = if first == "blocks" {
                format!("blocks.{}", parts.next().unwrap_or_default())
            } else {
                first.to_string()
            };
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, n)) => *n += e.value.numel(),
                None => out.push((key, e.value.numel())),
            }
        }
        out
    }

    /// Whether any parameter path contains `segment` as a full dotted segment.
    pub fn has_namespace(&self, segment: &str) -> bool {
        self.store.entries().iter().any(|e| e.name.split('.').any(|p| p == segment))
    }

    /// Names of the added-module namespaces present in this model.
    pub fn namespaces(&self) -> Vec<&'static str> {
        MODULE_NAMESPACES.into_iter().filter(|n| self.has_namespace(n)).collect()
    }

    /// Analytic eval-mode FLOPs for one sample of `frames` frames, softmax included.
    pub fn flops(&self, frames: usize) -> u64 {
        let t = frames;
        let c = self.config.channels;
        let classes = self.config.num_classes as u64;
        match &self.net {
            Net::Improved(m) => {
                let trunk = m.stem.flops(t) + m.blocks.iter().map(|b| b.flops(t)).sum::<u64>();
                let fusion = match &m.fusion {
                    Fusion::Mca(mca) => mca.flops(t),
                    Fusion::Plain(conv) => conv.flops(t),
                };
                let gap = (4 * c * t) as u64;
                let diff = m.diff.as_ref().map_or(0, |d| d.flops(4));
                trunk + m.agg.flops(t) + fusion + gap + diff + m.head.flops() + classes
            }
            Net::Baseline(m) => {
                let trunk = m.stem.flops(t) + m.blocks.iter().map(|b| b.flops(t)).sum::<u64>();
                trunk
                    + m.agg.flops(t)
                    + m.asp.flops(t)
                    + m.asp_bn.flops(1)
                    + m.embed.flops()
                    + m.embed_bn.flops(1)
                    + m.head.flops()
                    + classes
            }
        }
    }

    /// FLOPs of the convolution layers before pooling; linear in `frames`.
    pub fn conv_trunk_flops(&self, frames: usize) -> u64 {
        let t = frames;
        let (stem, blocks, agg) = match &self.net {
            Net::Improved(m) => (&m.stem, &m.blocks, &m.agg),
            Net::Baseline(m) => (&m.stem, &m.blocks, &m.agg),
        };
        let base = stem.conv.flops(t) + blocks.iter().map(|b| b.conv_flops(t)).sum::<u64>() + agg.conv.flops(t);
        base + match &self.net {
            Net::Improved(m) => match &m.fusion {
                Fusion::Mca(mca) => mca.conv_flops(t),
                Fusion::Plain(conv) => conv.flops(t),
            },
            Net::Baseline(m) => m.asp.conv_flops(t),
        }
    }

    /// Id of the classification head weight, used to zero the head in tests.
    pub fn head_params(&self) -> (crate::params::ParamId, Option<crate::params::ParamId>) {
        let head = match &self.net {
            Net::Improved(m) => &m.head,
            Net::Baseline(m) => &m.head,
        };
        (head.weight, head.bias)
    }
}

/// Row-wise argmax of a `[B, K]` tensor; ties go to the lowest index.
pub fn argmax_rows(p: &Tensor) -> Vec<usize> {
    let k = *p.shape().last().unwrap();
    p.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
