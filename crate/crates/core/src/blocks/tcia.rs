//! Temporal-channel interactive attention.

use crate::error::Result;
use crate::graph::{Graph, Padding, Var};
use crate::nn::Conv1d;
use crate::params::{Scope, Session};

use super::SqueezeExcite;

/// Kernel of the temporal attention convolution.
pub const TEMPORAL_KERNEL: usize = 7;

/// Temporal attention `A_t`: channel mean, a 1→1 "same" convolution
/// (kernel `1×1×7`, bias `[1]`), then a sigmoid. Returns `T` values per sample
/// (`[T]` for a `C×T` input, `[B, T]` for `B×C×T`).
pub fn temporal_attention(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let rank = shape.len();
    let t = shape[rank - 1];
    let pooled = g.mean(x, rank - 2)?;
    let (seq_shape, out_shape) = if rank == 2 {
        (vec![1, t], vec![t])
    } else {
        (vec![shape[0], 1, t], vec![shape[0], t])
    };
    let seq = g.reshape(pooled, &seq_shape)?;
    let conv = g.conv1d(seq, w, Some(b), 1, Padding::Same)?;
    let act = g.sigmoid(conv)?;
    g.reshape(act, &out_shape)
}

/// `x + Conv1D((A_t A_cᵀ) ⊙ x_rse)` with a kernel-1 `C→C` convolution.
pub fn tcia_fuse(
    g: &mut Graph,
    x: Var,
    x_rse: Var,
    a_t: Var,
    a_c: Var,
    conv_w: Var,
    conv_b: Var,
) -> Result<Var> {
    let mask = g.outer(a_c, a_t)?;
    let m = g.mul(mask, x_rse)?;
    let fused = g.conv1d(m, conv_w, Some(conv_b), 1, Padding::Same)?;
    g.add(x, fused)
}

/// RSE attention stage of the MCA-RSE Res2Block: residual SE, temporal
/// attention, and their rank-1 fusion. `A_c` is the SE gate.
#[derive(Clone, Debug)]
pub struct RseAttention {
    pub se: SqueezeExcite,
    pub temporal: Conv1d,
    pub fuse: Conv1d,
    pub channels: usize,
}

impl RseAttention {
    pub fn new(scope: &mut Scope<'_>, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let mut s = scope.sub(name);
        Ok(Self {
            se: SqueezeExcite::new(&mut s, "se", channels, reduction)?,
            temporal: Conv1d::new(&mut s, "temporal", 1, 1, TEMPORAL_KERNEL, 1, true),
            fuse: Conv1d::new(&mut s, "fuse", channels, channels, 1, 1, true),
            channels,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (x_rse, a_c) = self.se.forward_residual(s, x)?;
        let tw = s.param(self.temporal.weight);
        let tb = s.param(self.temporal.bias.unwrap());
        let a_t = temporal_attention(&mut s.g, x, tw, tb)?;
        let fw = s.param(self.fuse.weight);
        let fb = s.param(self.fuse.bias.unwrap());
        tcia_fuse(&mut s.g, x, x_rse, a_t, a_c, fw, fb)
    }

    pub fn flops(&self, frames: usize) -> u64 {
        let ct = (self.channels * frames) as u64;
        let rse = self.se.flops(frames) + ct;
        let temporal = ct + self.temporal.flops(frames) + frames as u64;
        // outer, mask multiply, fuse conv, residual add
        rse + temporal + ct + ct + self.fuse.flops(frames) + ct
    }

    pub fn conv_flops(&self, frames: usize) -> u64 {
        self.temporal.flops(frames) + self.fuse.flops(frames)
    }
}
