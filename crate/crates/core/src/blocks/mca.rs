use crate::error::{Error, Result};
use crate::graph::{Graph, Padding, Var};
use crate::nn::Conv1d;
use crate::params::{ParamId, Scope, Session};

/// Kernel sizes of the three dilated branches.
pub const MCA_KERNELS: [usize; 3] = [3, 5, 7];
/// Window of the max-pool branch (stride 1, T-preserving).
pub const MCA_POOL_KERNEL: usize = 3;

/// Graph handles of the MCA parameters.
#[derive(Clone, Copy, Debug)]
pub struct McaVars {
    pub entry_w: Var,
    pub entry_b: Var,
    pub branch_w: [Var; 3],
    pub branch_b: [Var; 3],
    pub pool_w: Var,
    pub pool_b: Var,
    /// `(4C/r)×4C`
    pub gate_w1: Var,
    /// `4C×(4C/r)`
    pub gate_w2: Var,
}

/// `F_cat = [F₃, F₅, F₇, M]`: a shared 1×1 entry conv feeds three dilated
/// convs, and a separate 1×1 conv feeds a max pool.
pub fn mca_features(g: &mut Graph, x: Var, p: &McaVars, dilations: [usize; 3]) -> Result<Var> {
    let entry = g.conv1d(x, p.entry_w, Some(p.entry_b), 1, Padding::Same)?;
    let mut parts = Vec::with_capacity(4);
    for i in 0..3 {
        parts.push(g.conv1d(entry, p.branch_w[i], Some(p.branch_b[i]), dilations[i], Padding::Same)?);
    }
    let proj = g.conv1d(x, p.pool_w, Some(p.pool_b), 1, Padding::Same)?;
    parts.push(g.max_pool_time(proj, MCA_POOL_KERNEL, 1)?);
    g.concat_channels(&parts)
}

/// Multi-scale channel attention: `σ(W₂ δ(W₁ z)) ⊙ F_cat`, `C×T → 4C×T`.
pub fn mca_block(g: &mut Graph, x: Var, p: &McaVars, dilations: [usize; 3]) -> Result<Var> {
    let fcat = mca_features(g, x, p, dilations)?;
    let s = super::se_gate(g, fcat, p.gate_w1, p.gate_w2)?;
    g.scale_channels(fcat, s)
}

#[derive(Clone, Debug)]
pub struct Mca {
    pub entry: Conv1d,
    pub branches: [Conv1d; 3],
    pub pool_proj: Conv1d,
    pub gate_w1: ParamId,
    pub gate_w2: ParamId,
    pub width: usize,
    pub gate_reduced: usize,
}

impl Mca {
    /// `in_channels → 4·width` channels.
    pub fn new(
        scope: &mut Scope<'_>,
        name: &str,
        in_channels: usize,
        width: usize,
        dilations: [usize; 3],
        reduction: usize,
    ) -> Result<Self> {
        let gate = 4 * width;
        if reduction == 0 || gate % reduction != 0 {
            return Err(Error::ConfigInvalid(format!(
                "MCA gate width {gate} not divisible by reduction ratio {reduction}"
            )));
        }
        let reduced = gate / reduction;
        let mut s = scope.sub(name);
        let entry = Conv1d::new(&mut s, "entry", in_channels, width, 1, 1, true);
        let branches = [0, 1, 2].map(|i| {
            let k = MCA_KERNELS[i];
            Conv1d::new(&mut s, &format!("branch{k}"), width, width, k, dilations[i], true)
        });
        let pool_proj = Conv1d::new(&mut s, "pool", in_channels, width, 1, 1, true);
        let mut gs = s.sub("gate");
        let gate_w1 = gs.kaiming("w1", &[reduced, gate], gate);
        let gate_w2 = gs.kaiming("w2", &[gate, reduced], reduced);
        Ok(Self {
            entry,
            branches,
            pool_proj,
            gate_w1,
            gate_w2,
            width,
            gate_reduced: reduced,
        })
    }

    pub fn dilations(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| self.branches[i].dilation)
    }

    pub fn vars(&self, s: &mut Session<'_>) -> McaVars {
        let mut p = |id: ParamId| s.param(id);
        McaVars {
            entry_w: p(self.entry.weight),
            entry_b: p(self.entry.bias.unwrap()),
            branch_w: [0, 1, 2].map(|i| p(self.branches[i].weight)),
            branch_b: [0, 1, 2].map(|i| p(self.branches[i].bias.unwrap())),
            pool_w: p(self.pool_proj.weight),
            pool_b: p(self.pool_proj.bias.unwrap()),
            gate_w1: p(self.gate_w1),
            gate_w2: p(self.gate_w2),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let vars = self.vars(s);
        mca_block(&mut s.g, x, &vars, self.dilations())
    }

    pub fn flops(&self, frames: usize) -> u64 {
        let (w, t) = (self.width, frames);
        let g = 4 * w;
        let r = self.gate_reduced;
        let convs: u64 = self.entry.flops(t) + self.branches.iter().map(|c| c.flops(t)).sum::<u64>() + self.pool_proj.flops(t);
        let pool = (MCA_POOL_KERNEL * w * t) as u64;
        // mean, W₁, relu, W₂, sigmoid, scale
        let gate = (g * t + 2 * r * g + r + 2 * g * r + g + g * t) as u64;
        convs + pool + gate
    }

    pub fn conv_flops(&self, frames: usize) -> u64 {
        self.entry.flops(frames)
            + self.branches.iter().map(|c| c.flops(frames)).sum::<u64>()
            + self.pool_proj.flops(frames)
    }
}
