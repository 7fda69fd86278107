//! Differential attention over a short token sequence.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, Scope, Session};

/// Graph handles of the differential-attention parameters. All projections
/// are `C×C` without bias; `lambda` has shape `[1]`.
#[derive(Clone, Copy, Debug)]
pub struct DiffAttnVars {
    pub wq1: Var,
    pub wk1: Var,
    pub wq2: Var,
    pub wk2: Var,
    pub wv: Var,
    pub lambda: Var,
}

fn check(g: &Graph, z: Var, heads: usize) -> Result<(usize, usize)> {
    let zs = g.shape(z);
    if zs.len() != 2 {
        return Err(Error::shape("differential_attention", format!("expected N×C tokens, got {zs:?}")));
    }
    let c = zs[1];
    if heads == 0 || c % heads != 0 {
        return Err(Error::HeadIndivisible { dim: c, heads });
    }
    Ok((zs[0], c / heads))
}

/// Per-head row-stochastic attention `softmax(Q Kᵀ / √d)`.
fn head_weights(g: &mut Graph, q: Var, k: Var, heads: usize, d: usize) -> Result<Vec<Var>> {
    let scale = 1.0 / (d as f64).sqrt();
    (0..heads)
        .map(|h| {
            let qh = g.narrow(q, 1, h * d, d)?;
            let kh = g.narrow(k, 1, h * d, d)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.mul_const(s, scale)?;
            g.softmax(s, 1)
        })
        .collect()
}

fn project(g: &mut Graph, z: Var, w: Var) -> Result<Var> {
    // Z·Wᵀ keeps the dense convention W ∈ out×in
    g.dense(z, w, None)
}

/// Combined weights `A₁ − λ A₂` per head, each `N×N`.
pub fn differential_weights(g: &mut Graph, z: Var, p: &DiffAttnVars, heads: usize) -> Result<Vec<Var>> {
    let (_, d) = check(g, z, heads)?;
    let q1 = project(g, z, p.wq1)?;
    let k1 = project(g, z, p.wk1)?;
    let q2 = project(g, z, p.wq2)?;
    let k2 = project(g, z, p.wk2)?;
    let a1 = head_weights(g, q1, k1, heads, d)?;
    let a2 = head_weights(g, q2, k2, heads, d)?;
    a1.into_iter()
        .zip(a2)
        .map(|(a, b)| {
            let lb = g.mul_scalar(b, p.lambda)?;
            g.sub(a, lb)
        })
        .collect()
}

fn apply(g: &mut Graph, z: Var, weights: Vec<Var>, wv: Var, d: usize) -> Result<Var> {
    let v = project(g, z, wv)?;
    let heads: Vec<Var> = weights
        .into_iter()
        .enumerate()
        .map(|(h, a)| {
            let vh = g.narrow(v, 1, h * d, d)?;
            g.matmul(a, vh)
        })
        .collect::<Result<_>>()?;
    let r = g.concat(&heads, 1)?;
    g.mul(r, z)
}

/// `R ⊙ Z` with `R` the head-concatenation of `(A₁ − λA₂) V`. `z` is `N×C`.
pub fn differential_attention(g: &mut Graph, z: Var, p: &DiffAttnVars, heads: usize) -> Result<Var> {
    let (_, d) = check(g, z, heads)?;
    let w = differential_weights(g, z, p, heads)?;
    apply(g, z, w, p.wv, d)
}

/// Single-softmax reference: `(A V) ⊙ Z` with `A = softmax(Q Kᵀ/√d)`.
pub fn standard_attention(g: &mut Graph, z: Var, wq: Var, wk: Var, wv: Var, heads: usize) -> Result<Var> {
    let (_, d) = check(g, z, heads)?;
    let q = project(g, z, wq)?;
    let k = project(g, z, wk)?;
    let w = head_weights(g, q, k, heads, d)?;
    apply(g, z, w, wv, d)
}

#[derive(Clone, Debug)]
pub struct DiffAttention {
    pub wq1: ParamId,
    pub wk1: ParamId,
    pub wq2: ParamId,
    pub wk2: ParamId,
    pub wv: ParamId,
    pub lambda: ParamId,
    pub channels: usize,
    pub heads: usize,
}

impl DiffAttention {
    pub fn new(scope: &mut Scope<'_>, name: &str, channels: usize, heads: usize, lambda_init: f64) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::HeadIndivisible { dim: channels, heads });
        }
        let mut s = scope.sub(name);
        let mut w = |n: &str| s.kaiming(n, &[channels, channels], channels);
        let (wq1, wk1, wq2, wk2, wv) = (w("wq1"), w("wk1"), w("wq2"), w("wk2"), w("wv"));
        let lambda = s.constant("lambda", &[1], lambda_init);
        Ok(Self { wq1, wk1, wq2, wk2, wv, lambda, channels, heads })
    }

    pub fn vars(&self, s: &mut Session<'_>) -> DiffAttnVars {
        DiffAttnVars {
            wq1: s.param(self.wq1),
            wk1: s.param(self.wk1),
            wq2: s.param(self.wq2),
            wk2: s.param(self.wk2),
            wv: s.param(self.wv),
            lambda: s.param(self.lambda),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, z: Var) -> Result<Var> {
        let p = self.vars(s);
        differential_attention(&mut s.g, z, &p, self.heads)
    }

    /// FLOPs for one `tokens×C` sequence.
    pub fn flops(&self, tokens: usize) -> u64 {
        let (n, c, h) = (tokens, self.channels, self.heads);
        let d = c / h;
        let proj = 5 * 2 * n * c * c;
        // scores, scaling, softmax for each of the two maps
        let maps = 2 * h * (2 * n * d * n + n * n + n * n);
        // λ·A₂, subtraction, A·V
        let combine = h * (n * n + n * n + 2 * n * n * d);
        (proj + maps + combine + n * c) as u64
    }
}
