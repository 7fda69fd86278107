use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, Scope, Session};

/// Channel gate `s = σ(W₂ δ(W₁ z))` with `z` the time-mean of `x`.
pub fn se_gate(g: &mut Graph, x: Var, w1: Var, w2: Var) -> Result<Var> {
    let z = g.global_avg_pool_time(x)?;
    let h = g.dense(z, w1, None)?;
    let h = g.relu(h)?;
    let s = g.dense(h, w2, None)?;
    g.sigmoid(s)
}

/// Squeeze-and-excitation: `s ⊙ x`. Returns the output and the gate.
pub fn se_block(g: &mut Graph, x: Var, w1: Var, w2: Var) -> Result<(Var, Var)> {
    let s = se_gate(g, x, w1, w2)?;
    Ok((g.scale_channels(x, s)?, s))
}

/// Residual squeeze-and-excitation: `x + SE(x)`. Returns the output and the gate.
pub fn rse_block(g: &mut Graph, x: Var, w1: Var, w2: Var) -> Result<(Var, Var)> {
    let (se, s) = se_block(g, x, w1, w2)?;
    Ok((g.add(x, se)?, s))
}

/// SE parameters: `W₁ ∈ (C/r)×C`, `W₂ ∈ C×(C/r)`, no biases.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub w1: ParamId,
    pub w2: ParamId,
    pub channels: usize,
    pub reduced: usize,
}

impl SqueezeExcite {
    pub fn new(scope: &mut Scope<'_>, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::ConfigInvalid(format!(
                "{channels} channels not divisible by reduction ratio {reduction}"
            )));
        }
        let reduced = channels / reduction;
        let mut s = scope.sub(name);
        Ok(Self {
            w1: s.kaiming("w1", &[reduced, channels], channels),
            w2: s.kaiming("w2", &[channels, reduced], reduced),
            channels,
            reduced,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<(Var, Var)> {
        let (w1, w2) = (s.param(self.w1), s.param(self.w2));
        se_block(&mut s.g, x, w1, w2)
    }

    pub fn forward_residual(&self, s: &mut Session<'_>, x: Var) -> Result<(Var, Var)> {
        let (w1, w2) = (s.param(self.w1), s.param(self.w2));
        rse_block(&mut s.g, x, w1, w2)
    }

    pub fn flops(&self, frames: usize) -> u64 {
        let (c, r, t) = (self.channels, self.reduced, frames);
        // mean, W₁, relu, W₂, sigmoid, scale
        (c * t + 2 * r * c + r + 2 * c * r + c + c * t) as u64
    }
}
