//! Shared helpers for the integration tests: random data, straight-line
//! reference implementations written directly from the block definitions,
//! and gradient-check drivers.

#![allow(dead_code)]

pub mod cases;
pub mod suite;

use cryecapa::gradcheck::{central_difference_check_kink_aware, gradient_check, GradCheckReport};
use cryecapa::params::{Mode, ParamKind, ParamStore, Session};
use cryecapa::rng::{self, ChaCha8Rng};
use cryecapa::{Graph, Result, Tensor, Var};
use rand::Rng;

pub const H: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn randn(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = rng::normal(r, n).into_iter().map(|v| v * scale).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Normal samples pushed at least `gap` away from zero (keeps ReLU kinks out
/// of finite-difference stencils).
pub fn randn_away_from_zero(r: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = randn(r, shape, 1.0);
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap } else { gap } * (1.0 + r.gen::<f64>());
        }
    }
    t
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

// ------------------------------------------------------------------ oracles

/// Direct sliding-window convolution with symmetric zero padding (extra pad
/// on the right). `x` is `cin×t`, `w` is `cout×cin×k`.
pub fn conv1d_same(x: &[f64], cin: usize, t: usize, w: &[f64], cout: usize, k: usize, d: usize, b: Option<&[f64]>) -> Vec<f64> {
    let left = ((k - 1) * d) / 2;
    let mut out = vec![0.0; cout * t];
    for o in 0..cout {
        for ti in 0..t {
            let mut acc = b.map_or(0.0, |b| b[o]);
            for i in 0..cin {
                for j in 0..k {
                    let p = ti as isize + (j * d) as isize - left as isize;
                    if p >= 0 && (p as usize) < t {
                        acc += w[(o * cin + i) * k + j] * x[i * t + p as usize];
                    }
                }
            }
            out[o * t + ti] = acc;
        }
    }
    out
}

/// Sliding max with −∞ padding, stride 1.
pub fn maxpool_same(x: &[f64], rows: usize, t: usize, k: usize) -> Vec<f64> {
    let left = (k - 1) / 2;
    let mut out = vec![0.0; rows * t];
    for r in 0..rows {
        for ti in 0..t {
            let mut m = f64::NEG_INFINITY;
            for j in 0..k {
                let p = ti as isize + j as isize - left as isize;
                if p >= 0 && (p as usize) < t {
                    m = m.max(x[r * t + p as usize]);
                }
            }
            out[r * t + ti] = m;
        }
    }
    out
}

/// `y = W x` with `W` stored `m×n`.
pub fn matvec(w: &[f64], m: usize, n: usize, x: &[f64]) -> Vec<f64> {
    (0..m).map(|i| (0..n).map(|j| w[i * n + j] * x[j]).sum()).collect()
}

/// Squeeze-and-excitation on a `c×t` map: returns `(s ⊙ x, s)`.
pub fn se_oracle(x: &[f64], c: usize, t: usize, w1: &[f64], w2: &[f64], reduced: usize) -> (Vec<f64>, Vec<f64>) {
    let z: Vec<f64> = (0..c).map(|i| x[i * t..(i + 1) * t].iter().sum::<f64>() / t as f64).collect();
    let h: Vec<f64> = matvec(w1, reduced, c, &z).into_iter().map(|v| v.max(0.0)).collect();
    let s: Vec<f64> = matvec(w2, c, reduced, &h).into_iter().map(sigmoid).collect();
    let out = (0..c * t).map(|i| s[i / t] * x[i]).collect();
    (out, s)
}

pub struct McaWeights {
    pub entry_w: Tensor,
    pub entry_b: Tensor,
    pub branch_w: [Tensor; 3],
    pub branch_b: [Tensor; 3],
    pub pool_w: Tensor,
    pub pool_b: Tensor,
    pub gate_w1: Tensor,
    pub gate_w2: Tensor,
}

impl McaWeights {
    pub fn random(r: &mut ChaCha8Rng, cin: usize, width: usize, reduction: usize) -> Self {
        let g = 4 * width;
        let kernels = [3, 5, 7];
        Self {
            entry_w: randn(r, &[width, cin, 1], 0.5),
            entry_b: randn(r, &[width], 0.1),
            branch_w: kernels.map(|k| randn(r, &[width, width, k], 0.4)),
            branch_b: kernels.map(|_| randn(r, &[width], 0.1)),
            pool_w: randn(r, &[width, cin, 1], 0.5),
            pool_b: randn(r, &[width], 0.1),
            gate_w1: randn(r, &[g / reduction, g], 0.3),
            gate_w2: randn(r, &[g, g / reduction], 0.3),
        }
    }

    pub fn as_list(&self) -> Vec<Tensor> {
        let mut v = vec![self.entry_w.clone(), self.entry_b.clone()];
        v.extend(self.branch_w.iter().cloned());
        v.extend(self.branch_b.iter().cloned());
        v.extend([self.pool_w.clone(), self.pool_b.clone(), self.gate_w1.clone(), self.gate_w2.clone()]);
        v
    }
}

/// Graph handles in the order of [`McaWeights::as_list`].
pub fn mca_vars(v: &[Var]) -> cryecapa::blocks::McaVars {
    cryecapa::blocks::McaVars {
        entry_w: v[0],
        entry_b: v[1],
        branch_w: [v[2], v[3], v[4]],
        branch_b: [v[5], v[6], v[7]],
        pool_w: v[8],
        pool_b: v[9],
        gate_w1: v[10],
        gate_w2: v[11],
    }
}

/// Multi-scale channel attention on a `cin×t` map, output `4·width × t`.
pub fn mca_oracle(x: &[f64], cin: usize, t: usize, width: usize, p: &McaWeights, dilations: [usize; 3]) -> Vec<f64> {
    let kernels = [3, 5, 7];
    let entry = conv1d_same(x, cin, t, p.entry_w.data(), width, 1, 1, Some(p.entry_b.data()));
    let mut fcat = Vec::with_capacity(4 * width * t);
    for b in 0..3 {
        fcat.extend(conv1d_same(&entry, width, t, p.branch_w[b].data(), width, kernels[b], dilations[b], Some(p.branch_b[b].data())));
    }
    let proj = conv1d_same(x, cin, t, p.pool_w.data(), width, 1, 1, Some(p.pool_b.data()));
    fcat.extend(maxpool_same(&proj, width, t, 3));
    let g = 4 * width;
    se_oracle(&fcat, g, t, p.gate_w1.data(), p.gate_w2.data(), p.gate_w1.shape()[0]).0
}

fn softmax_rows(m: &mut [f64], n: usize) {
    for row in m.chunks_mut(n) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        row.iter_mut().for_each(|v| *v = (*v - mx).exp() / s);
    }
}

/// `Z Wᵀ` for `z` `n×c` and `w` `c×c`.
fn project(z: &[f64], n: usize, c: usize, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        out[i * c..(i + 1) * c].copy_from_slice(&matvec(w, c, c, &z[i * c..(i + 1) * c]));
    }
    out
}

/// Per-head softmax(Q Kᵀ/√d), `heads` blocks of `n×n`.
fn attention_maps(q: &[f64], k: &[f64], n: usize, c: usize, heads: usize) -> Vec<Vec<f64>> {
    let d = c / heads;
    (0..heads)
        .map(|h| {
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..d).map(|e| q[i * c + h * d + e] * k[j * c + h * d + e]).sum();
                    a[i * n + j] = dot / (d as f64).sqrt();
                }
            }
            softmax_rows(&mut a, n);
            a
        })
        .collect()
}

fn apply_maps(maps: &[Vec<f64>], v: &[f64], z: &[f64], n: usize, c: usize) -> Vec<f64> {
    let d = c / maps.len();
    let mut out = vec![0.0; n * c];
    for (h, a) in maps.iter().enumerate() {
        for i in 0..n {
            for e in 0..d {
                let r: f64 = (0..n).map(|j| a[i * n + j] * v[j * c + h * d + e]).sum();
                out[i * c + h * d + e] = r * z[i * c + h * d + e];
            }
        }
    }
    out
}

/// Differential attention `((A₁ − λA₂)V) ⊙ Z` on `n×c` tokens.
#[allow(clippy::too_many_arguments)]
pub fn diff_attn_oracle(z: &[f64], n: usize, c: usize, w: [&[f64]; 5], lambda: f64, heads: usize) -> Vec<f64> {
    let [wq1, wk1, wq2, wk2, wv] = w;
    let a1 = attention_maps(&project(z, n, c, wq1), &project(z, n, c, wk1), n, c, heads);
    let a2 = attention_maps(&project(z, n, c, wq2), &project(z, n, c, wk2), n, c, heads);
    let combined: Vec<Vec<f64>> = a1
        .iter()
        .zip(&a2)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - lambda * y).collect())
        .collect();
    apply_maps(&combined, &project(z, n, c, wv), z, n, c)
}

/// Single-softmax attention `(A V) ⊙ Z`.
pub fn attention_oracle(z: &[f64], n: usize, c: usize, wq: &[f64], wk: &[f64], wv: &[f64], heads: usize) -> Vec<f64> {
    let a = attention_maps(&project(z, n, c, wq), &project(z, n, c, wk), n, c, heads);
    apply_maps(&a, &project(z, n, c, wv), z, n, c)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------- gradient checks

/// `Σ r ⊙ y` for a fixed random `r`, giving generic O(1) gradients.
pub fn projection_loss(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut r = rng::derived(seed, 99);
    let w = g.constant(randn(&mut r, &shape, 1.0));
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

pub fn check_fn<F>(f: F, inputs: &[Tensor]) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    gradient_check(f, inputs, H, None).unwrap()
}

/// Gradient check of a session-based function with respect to its input and
/// the trainable parameters of `store` (at most `max_param_coords` probed per
/// tensor).
///
/// Parameters whose name ends with one of `structural_zero` have a gradient
/// that vanishes identically (for example a bias that only shifts softmax
/// inputs). Their analytic gradient is required to be zero to 1e-12 instead
/// of being compared with finite differences; a violation reports an
/// infinite error.
pub fn check_session<F>(
    store: &ParamStore,
    mode: Mode,
    x: &Tensor,
    f: F,
    max_param_coords: usize,
    structural_zero: &[&str],
) -> GradCheckReport
where
    F: Fn(&mut Session<'_>, Var) -> Result<Var>,
{
    let all_ids = store.trainable_ids();
    let is_zero = |id: &cryecapa::ParamId| structural_zero.iter().any(|s| store.entry(*id).name.ends_with(s));
    let (gx, gp) = {
        let mut s = Session::new(store, mode, true);
        let xv = s.g.variable(x.clone());
        let loss = f(&mut s, xv).unwrap();
        s.g.backward(loss).unwrap();
        (s.g.grad(xv).unwrap().to_vec(), s.param_grads())
    };
    let mut zero_violation = false;
    let mut ids = Vec::new();
    let mut gp_kept = Vec::new();
    for (id, g) in all_ids.iter().zip(gp) {
        if is_zero(id) {
            zero_violation |= g.iter().any(|v| v.abs() > 1e-12);
        } else {
            ids.push(*id);
            gp_kept.push(g);
        }
    }
    let gp = gp_kept;
    let mut inputs = vec![x.clone()];
    inputs.extend(ids.iter().map(|&id| store.value(id).clone()));
    let mut analytic = vec![gx];
    analytic.extend(gp);
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut s = Session::new(store, mode, false);
        let xv = s.input(vals[0].clone());
        let loss = f(&mut s, xv)?;
        Ok(s.g.value(loss).data()[0])
    };
    // the input is probed fully; parameters are sampled
    let mut report = central_difference_check_kink_aware(eval, &analytic[..1], &inputs[..1], H, None).unwrap();
    let mut work = store.clone();
    let eval = |vals: &[Tensor]| -> Result<f64> {
        for (id, v) in ids.iter().zip(vals) {
            work.value_mut(*id).data_mut().copy_from_slice(v.data());
        }
        let mut s = Session::new(&work, mode, false);
        let xv = s.input(x.clone());
        let loss = f(&mut s, xv)?;
        Ok(s.g.value(loss).data()[0])
    };
    let params =
        central_difference_check_kink_aware(eval, &analytic[1..], &inputs[1..], H, Some(max_param_coords)).unwrap();
    report.coordinates += params.coordinates;
    report.kinks += params.kinks;
    if params.max_rel_error > report.max_rel_error {
        report.max_rel_error = params.max_rel_error;
        report.worst = params.worst.map(|(i, c)| (i + 1, c));
        report.worst_values = params.worst_values;
    }
    if zero_violation {
        report.max_rel_error = f64::INFINITY;
    }
    report
}

/// Number of buffer entries, for sanity checks on stores.
pub fn buffer_count(store: &ParamStore) -> usize {
    store.entries().iter().filter(|e| e.kind == ParamKind::Buffer).count()
}
