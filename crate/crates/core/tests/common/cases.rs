//! Oracle-equivalence cases: each returns the largest absolute difference
//! between a block and its straight-line reference on a random instance.

use cryecapa::blocks::{differential_attention, mca_block, rse_block, se_block, standard_attention, DiffAttnVars};
use cryecapa::model::{Arch, Model, ModelConfig, MODULE_NAMESPACES};
use cryecapa::rng;
use cryecapa::train::{count_flops, measured_flops, train, Sample, TrainConfig, TrainOutputs};
use cryecapa::{Graph, Tensor};
use rand::Rng;

use super::{attention_oracle, diff_attn_oracle, max_abs_diff, mca_oracle, mca_vars, randn, se_oracle, McaWeights};

pub const ORACLE_TOL: f64 = 1e-12;

fn small_dims(r: &mut impl Rng) -> (usize, usize, usize) {
    let reduction = [1, 2, 4][r.gen_range(0..3)];
    let c = reduction * r.gen_range(1..=4);
    let t = r.gen_range(1..=12);
    (c, t, reduction)
}

/// SE and RSE against the reference; also checks `rse == x + se` bitwise
/// and that every gate value lies strictly inside (0, 1).
pub fn se_case(seed: u64) -> f64 {
    let mut r = rng::derived(seed, 21);
    let (c, t, red) = small_dims(&mut r);
    let x = randn(&mut r, &[c, t], 1.0);
    let w1 = randn(&mut r, &[c / red, c], 0.7);
    let w2 = randn(&mut r, &[c, c / red], 0.7);
    let mut g = Graph::new();
    let (xv, w1v, w2v) = (g.constant(x.clone()), g.constant(w1.clone()), g.constant(w2.clone()));
    let (y, s) = se_block(&mut g, xv, w1v, w2v).unwrap();
    let (yr, _) = rse_block(&mut g, xv, w1v, w2v).unwrap();
    let (want, want_s) = se_oracle(x.data(), c, t, w1.data(), w2.data(), c / red);
    let residual_exact = g
        .value(yr)
        .data()
        .iter()
        .zip(x.data())
        .zip(g.value(y).data())
        .all(|((r, x), s)| x + s == *r);
    let gate_open = g.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0);
    if !residual_exact || !gate_open {
        return f64::INFINITY;
    }
    max_abs_diff(g.value(y).data(), &want).max(max_abs_diff(g.value(s).data(), &want_s))
}

pub fn mca_case(seed: u64) -> f64 {
    let mut r = rng::derived(seed, 22);
    let cin = r.gen_range(1..=5);
    let width = r.gen_range(1..=4);
    let t = r.gen_range(1..=12);
    let dil = [r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3)];
    let red = if width % 2 == 0 { 2 } else { 4 };
    let w = McaWeights::random(&mut r, cin, width, red);
    let x = randn(&mut r, &[cin, t], 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let vars: Vec<_> = w.as_list().into_iter().map(|t| g.constant(t)).collect();
    let y = mca_block(&mut g, xv, &mca_vars(&vars), dil).unwrap();
    if g.shape(y) != [4 * width, t] {
        return f64::INFINITY;
    }
    max_abs_diff(g.value(y).data(), &mca_oracle(x.data(), cin, t, width, &w, dil))
}

struct AttnInstance {
    z: Tensor,
    w: Vec<Tensor>,
    n: usize,
    c: usize,
    heads: usize,
}

fn attn_instance(seed: u64, stream: u64) -> AttnInstance {
    let mut r = rng::derived(seed, stream);
    let heads = [1, 2, 4][r.gen_range(0..3)];
    let c = heads * r.gen_range(1..=3);
    let n = r.gen_range(1..=6);
    let z = randn(&mut r, &[n, c], 1.0);
    let w = (0..5).map(|_| randn(&mut r, &[c, c], 0.6)).collect();
    AttnInstance { z, w, n, c, heads }
}

fn run_diff_attn(a: &AttnInstance, lambda: f64) -> Vec<f64> {
    let mut g = Graph::new();
    let z = g.constant(a.z.clone());
    let w: Vec<_> = a.w.iter().map(|t| g.constant(t.clone())).collect();
    let p = DiffAttnVars {
        wq1: w[0],
        wk1: w[1],
        wq2: w[2],
        wk2: w[3],
        wv: w[4],
        lambda: g.constant(Tensor::from_vec(vec![lambda])),
    };
    let y = differential_attention(&mut g, z, &p, a.heads).unwrap();
    g.value(y).data().to_vec()
}

/// Differential attention with a random λ against the reference.
pub fn diff_attn_case(seed: u64) -> f64 {
    let a = attn_instance(seed, 23);
    let lambda = rng::derived(seed, 24).gen_range(-1.0..1.0);
    let w: Vec<&[f64]> = a.w.iter().map(|t| t.data()).collect();
    let want = diff_attn_oracle(a.z.data(), a.n, a.c, [w[0], w[1], w[2], w[3], w[4]], lambda, a.heads);
    max_abs_diff(&run_diff_attn(&a, lambda), &want)
}

/// λ = 0 against both the single-softmax library path and its reference.
pub fn diff_attn_lambda0_case(seed: u64) -> f64 {
    let a = attn_instance(seed, 25);
    let got = run_diff_attn(&a, 0.0);
    let mut g = Graph::new();
    let z = g.constant(a.z.clone());
    let w: Vec<_> = a.w.iter().map(|t| g.constant(t.clone())).collect();
    let single = standard_attention(&mut g, z, w[0], w[1], w[4], a.heads).unwrap();
    let want = attention_oracle(a.z.data(), a.n, a.c, a.w[0].data(), a.w[1].data(), a.w[4].data(), a.heads);
    max_abs_diff(&got, g.value(single).data()).max(max_abs_diff(&got, &want))
}

/// One ablation flag against the full improved model.
pub struct AblationRow {
    pub namespace: &'static str,
    pub full_params: usize,
    pub ablated_params: usize,
    pub namespace_before: bool,
    pub namespace_after: bool,
}

impl AblationRow {
    pub fn holds(&self) -> bool {
        self.ablated_params < self.full_params && self.namespace_before && !self.namespace_after
    }
}

/// Ablation audit at `cfg`: parameter counts and namespace presence.
pub fn ablation_rows(cfg: &ModelConfig) -> Vec<AblationRow> {
    let full = Model::build(Arch::Improved, cfg, 0).unwrap();
    MODULE_NAMESPACES
        .iter()
        .zip(["use_mca", "use_rse", "use_diff_attn"])
        .map(|(&ns, key)| {
            let mut c = cfg.clone();
            c.set(key, "false").unwrap();
            let ablated = Model::build(Arch::Improved, &c, 0).unwrap();
            AblationRow {
                namespace: ns,
                full_params: full.num_params(),
                ablated_params: ablated.num_params(),
                namespace_before: full.has_namespace(ns),
                namespace_after: ablated.has_namespace(ns),
            }
        })
        .collect()
}

/// `(analytic, measured)` FLOPs of one sample.
pub fn flops_pair(arch: Arch, cfg: &ModelConfig, frames: usize) -> (u64, u64) {
    let m = Model::build(arch, cfg, 1).unwrap();
    (count_flops(&m, frames).flops, measured_flops(&m, frames).unwrap())
}

/// Whether `value` lies within a factor of two of `published`.
pub fn within_factor_two(value: f64, published: f64) -> bool {
    value >= published / 2.0 && value <= published * 2.0
}

// ------------------------------------------------------------------ training

pub const OVERFIT_PER_CLASS: usize = 4;
pub const OVERFIT_STEPS: usize = 500;
pub const LOSS_WINDOW: usize = 50;

/// Tiny architecture with six classes.
pub fn overfit_config() -> ModelConfig {
    ModelConfig { num_classes: 6, ..ModelConfig::tiny() }
}

/// Separable by construction: class `k` is a cosine of `k + 1` cycles per
/// clip on every coefficient, with a per-coefficient phase and mild noise.
pub fn separable_samples(cfg: &ModelConfig, per_class: usize, seed: u64) -> Vec<Sample> {
    let mut r = rng::derived(seed, 31);
    let (c, t) = (cfg.input_coeffs, cfg.target_frames);
    let mut out = Vec::new();
    for k in 0..cfg.num_classes {
        for _ in 0..per_class {
            let noise = rng::normal(&mut r, c * t);
            let data = (0..c * t)
                .map(|i| {
                    let (ch, f) = (i / t, i % t);
                    let phase = 2.0 * std::f64::consts::PI * (k + 1) as f64 * f as f64 / t as f64;
                    1.5 * (phase + ch as f64).cos() + 0.3 * noise[i]
                })
                .collect();
            out.push(Sample { features: Tensor::new(vec![c, t], data).unwrap(), label: k });
        }
    }
    out
}

pub struct OverfitOutcome {
    /// First step after which training accuracy was 100%.
    pub first_perfect_step: Option<usize>,
    pub final_accuracy: f64,
    pub window_means: Vec<f64>,
}

impl OverfitOutcome {
    /// Means of consecutive `LOSS_WINDOW`-step windows never increase.
    pub fn window_monotone(&self) -> bool {
        self.window_means.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Full-batch Adam on the 24 separable samples, one step per epoch.
pub fn overfit_run(arch: Arch, seed: u64) -> OverfitOutcome {
    let cfg = overfit_config();
    let data = separable_samples(&cfg, OVERFIT_PER_CLASS, seed);
    let mut m = Model::build(arch, &cfg, seed).unwrap();
    let tc = TrainConfig { epochs: OVERFIT_STEPS, batch_size: data.len(), lr: OVERFIT_LR, seed };
    let rep = train(&mut m, &data, &[], &tc, &TrainOutputs::default()).unwrap();
    assert_eq!(rep.step_losses.len(), OVERFIT_STEPS);
    OverfitOutcome {
        first_perfect_step: rep.epochs.iter().find(|e| e.test_acc == 1.0).map(|e| e.epoch),
        final_accuracy: rep.epochs.last().unwrap().test_acc,
        window_means: rep
            .step_losses
            .chunks(LOSS_WINDOW)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect(),
    }
}

/// Learning rate of the overfit run; the default 2e-5 is tuned for 700
/// epochs over thousands of clips.
pub const OVERFIT_LR: f64 = 3e-3;

/// Log text with the wall-clock column removed.
pub fn log_without_wall_time(log: &str) -> String {
    log.lines()
        .map(|l| if l.starts_with('#') { l.to_string() } else { l.rsplit_once(',').map_or(l, |(head, _)| head).to_string() })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Two identical short runs; returns `(logs equal modulo wall time,
/// final checkpoints byte-identical, best checkpoints byte-identical)`.
pub fn determinism_check(arch: Arch, seed: u64, dir: &std::path::Path) -> (bool, bool, bool) {
    let cfg = overfit_config();
    let data = separable_samples(&cfg, OVERFIT_PER_CLASS, seed);
    let (train_set, test_set) = data.split_at(18);
    let run = |tag: &str| {
        let outputs = TrainOutputs {
            log: Some(dir.join(format!("{tag}.log"))),
            best_checkpoint: Some(dir.join(format!("{tag}.best"))),
            final_checkpoint: Some(dir.join(format!("{tag}.final"))),
            header: Vec::new(),
        };
        let mut m = Model::build(arch, &cfg, seed).unwrap();
        let tc = TrainConfig { epochs: 6, batch_size: 5, lr: 1e-3, seed };
        train(&mut m, train_set, test_set, &tc, &outputs).unwrap();
        let read = |p: &Option<std::path::PathBuf>| std::fs::read(p.as_ref().unwrap()).unwrap();
        (String::from_utf8(read(&outputs.log)).unwrap(), read(&outputs.final_checkpoint), read(&outputs.best_checkpoint))
    };
    let a = run("a");
    let b = run("b");
    (log_without_wall_time(&a.0) == log_without_wall_time(&b.0), a.1 == b.1, a.2 == b.2)
}
