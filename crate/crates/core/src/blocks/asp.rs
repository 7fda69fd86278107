use crate::error::Result;
use crate::graph::{Graph, Padding, Var};
use crate::nn::Conv1d;
use crate::params::{Scope, Session};

/// Variance floor applied before the square root.
pub const STD_FLOOR: f64 = 1e-8;

/// Attention-weighted mean and standard deviation over time. `alpha` has the
/// shape of `x` and sums to one along time.
pub fn weighted_mean_std(g: &mut Graph, x: Var, alpha: Var) -> Result<(Var, Var)> {
    let t_axis = g.shape(x).len() - 1;
    let ax = g.mul(alpha, x)?;
    let mu = g.sum(ax, t_axis)?;
    let x2 = g.mul(x, x)?;
    let ax2 = g.mul(alpha, x2)?;
    let m2 = g.sum(ax2, t_axis)?;
    let mu2 = g.mul(mu, mu)?;
    let var = g.sub(m2, mu2)?;
    let var = g.clamp_min(var, STD_FLOOR)?;
    let sd = g.sqrt(var)?;
    Ok((mu, sd))
}

/// Channel-dependent attentive statistics pooling: `[μ; σ]`, giving `2C`
/// values per sample. `w1` is `A×C×1`, `w2` is `C×A×1`.
pub fn attentive_stats_pooling(g: &mut Graph, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = g.conv1d(x, w1, Some(b1), 1, Padding::Same)?;
    let h = g.tanh(h)?;
    let e = g.conv1d(h, w2, Some(b2), 1, Padding::Same)?;
    let t_axis = g.shape(x).len() - 1;
    let alpha = g.softmax(e, t_axis)?;
    let (mu, sd) = weighted_mean_std(g, x, alpha)?;
    g.concat(&[mu, sd], t_axis - 1)
}

#[derive(Clone, Debug)]
pub struct AttentiveStatsPool {
    pub attn1: Conv1d,
    pub attn2: Conv1d,
    pub channels: usize,
    pub bottleneck: usize,
}

impl AttentiveStatsPool {
    pub fn new(scope: &mut Scope<'_>, name: &str, channels: usize, bottleneck: usize) -> Self {
        let mut s = scope.sub(name);
        Self {
            attn1: Conv1d::new(&mut s, "attn1", channels, bottleneck, 1, 1, true),
            attn2: Conv1d::new(&mut s, "attn2", bottleneck, channels, 1, 1, true),
            channels,
            bottleneck,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w1 = s.param(self.attn1.weight);
        let b1 = s.param(self.attn1.bias.unwrap());
        let w2 = s.param(self.attn2.weight);
        let b2 = s.param(self.attn2.bias.unwrap());
        attentive_stats_pooling(&mut s.g, x, w1, b1, w2, b2)
    }

    pub fn flops(&self, frames: usize) -> u64 {
        let (c, t) = (self.channels, frames);
        let ct = (c * t) as u64;
        let attn = self.attn1.flops(t) + (self.bottleneck * t) as u64 + self.attn2.flops(t) + ct;
        // α⊙x, Σ, x⊙x, α⊙x², Σ, then μ², subtract, clamp, sqrt on C values
        attn + 5 * ct + 4 * c as u64
    }

    pub fn conv_flops(&self, frames: usize) -> u64 {
        self.attn1.flops(frames) + self.attn2.flops(frames)
    }
}
