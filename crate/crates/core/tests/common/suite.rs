//! Randomised gradient-check cases: every differentiable op, every block,
//! and the end-to-end tiny model. Each case draws its shapes and values from
//! the seed.

use cryecapa::blocks::{
    attentive_stats_pooling, differential_attention, mca_block, rse_block, se_block, tcia_fuse,
    temporal_attention, DiffAttnVars, Res2Block,
};
use cryecapa::gradcheck::GradCheckReport;
use cryecapa::model::{Arch, Model, ModelConfig};
use cryecapa::params::{Mode, ParamStore, Scope};
use cryecapa::rng::{self, ChaCha8Rng};
use cryecapa::{NormMode, Padding, Tensor};
use rand::Rng;

use super::{check_fn, check_session, projection_loss, randn, randn_away_from_zero, H};

pub const OPS: &[&str] = &[
    "conv1d_same", "conv1d_valid", "conv1d_unbatched", "matmul", "transpose", "dense", "dense_vector",
    "add", "sub", "mul", "mul_const", "mul_scalar", "relu", "sigmoid", "tanh", "sqrt", "clamp_min",
    "softmax", "mean", "sum", "sum_all", "global_avg_pool_time", "max_pool_time", "concat",
    "concat_channels", "narrow", "split_channels", "reshape", "scale_channels", "scale_time", "outer",
    "batch_norm_train", "batch_norm_eval", "cross_entropy",
];

pub const BLOCKS: &[&str] = &[
    "se", "rse", "mca", "temporal_attention", "tcia_fuse", "mca_rse_res2block", "differential_attention",
    "attentive_stats_pooling",
];

fn dim(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.gen_range(lo..=hi)
}

/// Values with pairwise gaps much larger than the FD step (max-pool needs a
/// unique argmax inside every stencil).
fn distinct(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
    use rand::seq::SliceRandom;
    v.shuffle(r);
    let jitter = rng::uniform(r, n, 0.01);
    Tensor::new(shape.to_vec(), v.iter().zip(jitter).map(|(a, b)| a + b).collect()).unwrap()
}

pub fn op_check(name: &str, seed: u64) -> GradCheckReport {
    let mut r = rng::derived(seed, 7);
    let (b, c, t) = (dim(&mut r, 1, 3), dim(&mut r, 1, 4), dim(&mut r, 1, 6));
    let ps = seed;
    match name {
        "conv1d_same" | "conv1d_valid" | "conv1d_unbatched" => {
            let (k, d, co) = (dim(&mut r, 1, 4), dim(&mut r, 1, 3), dim(&mut r, 1, 3));
            let valid = name == "conv1d_valid";
            let t = if valid { (k - 1) * d + dim(&mut r, 1, 4) } else { t };
            let xs = if name == "conv1d_unbatched" { vec![c, t] } else { vec![b, c, t] };
            let inputs = [randn(&mut r, &xs, 1.0), randn(&mut r, &[co, c, k], 0.5), randn(&mut r, &[co], 0.5)];
            let pad = if valid { Padding::Valid } else { Padding::Same };
            check_fn(
                |g, v| {
                    let y = g.conv1d(v[0], v[1], Some(v[2]), d, pad)?;
                    projection_loss(g, y, ps)
                },
                &inputs,
            )
        }
        "matmul" => {
            let n = dim(&mut r, 1, 4);
            let inputs = [randn(&mut r, &[b + 1, c], 1.0), randn(&mut r, &[c, n], 1.0)];
            check_fn(|g, v| { let y = g.matmul(v[0], v[1])?; projection_loss(g, y, ps) }, &inputs)
        }
        "transpose" => {
            let inputs = [randn(&mut r, &[c, t], 1.0)];
            check_fn(|g, v| { let y = g.transpose(v[0])?; projection_loss(g, y, ps) }, &inputs)
        }
        "dense" | "dense_vector" => {
            let m = dim(&mut r, 1, 4);
            let xs = if name == "dense" { vec![b, c] } else { vec![c] };
            let inputs = [randn(&mut r, &xs, 1.0), randn(&mut r, &[m, c], 1.0), randn(&mut r, &[m], 1.0)];
            check_fn(|g, v| { let y = g.dense(v[0], v[1], Some(v[2]))?; projection_loss(g, y, ps) }, &inputs)
        }
        "add" | "sub" | "mul" => {
            let inputs = [randn(&mut r, &[b, c, t], 1.0), randn(&mut r, &[b, c, t], 1.0)];
            check_fn(
                |g, v| {
                    let y = match name {
                        "add" => g.add(v[0], v[1])?,
                        "sub" => g.sub(v[0], v[1])?,
                        _ => g.mul(v[0], v[1])?,
                    };
                    projection_loss(g, y, ps)
                },
                &inputs,
            )
        }
        "mul_const" => {
            let k = r.gen_range(-2.0..2.0);
            let inputs = [randn(&mut r, &[c, t], 1.0)];
            check_fn(|g, v| { let y = g.mul_const(v[0], k)?; projection_loss(g, y, ps) }, &inputs)
        }
        "mul_scalar" => {
            let inputs = [randn(&mut r, &[c, t], 1.0), randn(&mut r, &[1], 1.0)];
            check_fn(|g, v| { let y = g.mul_scalar(v[0], v[1])?; projection_loss(g, y, ps) }, &inputs)
        }
        "relu" => {
            let inputs = [randn_away_from_zero(&mut r, &[b, c, t], 10.0 * H)];
            check_fn(|g, v| { let y = g.relu(v[0])?; projection_loss(g, y, ps) }, &inputs)
        }
        "sigmoid" | "tanh" => {
            let inputs = [randn(&mut r, &[b, c, t], 1.5)];
            check_fn(
                |g, v| {
                    let y = if name == "sigmoid" { g.sigmoid(v[0])? } else { g.tanh(v[0])? };
                    projection_loss(g, y, ps)
                },
                &inputs,
            )
        }
        "sqrt" => {
            let mut x = randn(&mut r, &[c, t], 1.0);
            x.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.2);
            check_fn(|g, v| { let y = g.sqrt(v[0])?; projection_loss(g, y, ps) }, &[x])
        }
        "clamp_min" => {
            let floor = 0.1;
            let mut x = randn_away_from_zero(&mut r, &[c, t], 10.0 * H);
            x.data_mut().iter_mut().for_each(|v| *v += floor);
            check_fn(|g, v| { let y = g.clamp_min(v[0], floor)?; projection_loss(g, y, ps) }, &[x])
        }
        "softmax" => {
            let axis = dim(&mut r, 0, 2);
            let inputs = [randn(&mut r, &[b, c, t], 2.0)];
            check_fn(|g, v| { let y = g.softmax(v[0], axis)?; projection_loss(g, y, ps) }, &inputs)
        }
        "mean" | "sum" => {
            let axis = dim(&mut r, 0, 2);
            let inputs = [randn(&mut r, &[b, c, t], 1.0)];
            check_fn(
                |g, v| {
                    let y = if name == "mean" { g.mean(v[0], axis)? } else { g.sum(v[0], axis)? };
                    projection_loss(g, y, ps)
                },
                &inputs,
            )
        }
        "sum_all" => {
            let inputs = [randn(&mut r, &[b, c, t], 1.0)];
            check_fn(|g, v| { let y = g.mul(v[0], v[0])?; g.sum_all(y) }, &inputs)
        }
        "global_avg_pool_time" => {
            let inputs = [randn(&mut r, &[b, c, t], 1.0)];
            check_fn(|g, v| { let y = g.global_avg_pool_time(v[0])?; projection_loss(g, y, ps) }, &inputs)
        }
        "max_pool_time" => {
            let (k, s) = (dim(&mut r, 1, 4), dim(&mut r, 1, 2));
            let inputs = [distinct(&mut r, &[b, c, t])];
            check_fn(|g, v| { let y = g.max_pool_time(v[0], k, s)?; projection_loss(g, y, ps) }, &inputs)
        }
        "concat" => {
            let axis = dim(&mut r, 0, 2);
            let mut s2 = vec![b, c, t];
            s2[axis] += 1;
            let inputs = [randn(&mut r, &[b, c, t], 1.0), randn(&mut r, &s2, 1.0)];
            check_fn(|g, v| { let y = g.concat(&[v[0], v[1]], axis)?; projection_loss(g, y, ps) }, &inputs)
        }
        "concat_channels" => {
            let inputs = [randn(&mut r, &[b, c, t], 1.0), randn(&mut r, &[b, c + 1, t], 1.0), randn(&mut r, &[b, 1, t], 1.0)];
            check_fn(|g, v| { let y = g.concat_channels(v)?; projection_loss(g, y, ps) }, &inputs)
        }
        "narrow" => {
            let len = dim(&mut r, 1, t);
            let start = dim(&mut r, 0, t - len);
            let inputs = [randn(&mut r, &[b, c, t], 1.0)];
            check_fn(|g, v| { let y = g.narrow(v[0], 2, start, len)?; projection_loss(g, y, ps) }, &inputs)
        }
        "split_channels" => {
            let inputs = [randn(&mut r, &[b, c + 2, t], 1.0)];
            check_fn(
                |g, v| {
                    let parts = g.split_channels(v[0], &[c, 2])?;
                    let a = projection_loss(g, parts[0], ps)?;
                    let q = g.mul(parts[1], parts[1])?;
                    let q = g.sum_all(q)?;
                    g.add(a, q)
                },
                &inputs,
            )
        }
        "reshape" => {
            let inputs = [randn(&mut r, &[b, c, t], 1.0)];
            check_fn(
                |g, v| {
                    let y = g.reshape(v[0], &[b * c, t])?;
                    let y = g.softmax(y, 1)?;
                    projection_loss(g, y, ps)
                },
                &inputs,
            )
        }
        "scale_channels" | "scale_time" => {
            let n = if name == "scale_channels" { c } else { t };
            let inputs = [randn(&mut r, &[b, c, t], 1.0), randn(&mut r, &[b, n], 1.0)];
            check_fn(
                |g, v| {
                    let y = if name == "scale_channels" { g.scale_channels(v[0], v[1])? } else { g.scale_time(v[0], v[1])? };
                    projection_loss(g, y, ps)
                },
                &inputs,
            )
        }
        "outer" => {
            let inputs = [randn(&mut r, &[b, c], 1.0), randn(&mut r, &[b, t], 1.0)];
            check_fn(|g, v| { let y = g.outer(v[0], v[1])?; projection_loss(g, y, ps) }, &inputs)
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let t = t.max(2);
            let inputs = [randn(&mut r, &[b, c, t], 1.0), randn(&mut r, &[c], 1.0), randn(&mut r, &[c], 1.0)];
            let rm = rng::uniform(&mut r, c, 1.0);
            let rv: Vec<f64> = rng::uniform(&mut r, c, 0.5).iter().map(|v| v + 1.0).collect();
            let train = name == "batch_norm_train";
            check_fn(
                |g, v| {
                    let mode = if train {
                        NormMode::Train { eps: 1e-5 }
                    } else {
                        NormMode::Eval { running_mean: &rm, running_var: &rv, eps: 1e-5 }
                    };
                    let (y, _) = g.batch_norm(v[0], v[1], v[2], mode)?;
                    projection_loss(g, y, ps)
                },
                &inputs,
            )
        }
        "cross_entropy" => {
            let k = dim(&mut r, 2, 6);
            let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..k)).collect();
            let inputs = [randn(&mut r, &[b, k], 2.0)];
            check_fn(|g, v| g.cross_entropy(v[0], &labels), &inputs)
        }
        other => panic!("unknown op case {other}"),
    }
}

pub fn block_check(name: &str, seed: u64) -> GradCheckReport {
    let mut r = rng::derived(seed, 11);
    let ps = seed;
    let reduction = 2;
    let c = 2 * dim(&mut r, 1, 4);
    let t = dim(&mut r, 2, 10);
    let batched = r.gen_bool(0.5);
    let xs = if batched { vec![2, c, t] } else { vec![c, t] };
    match name {
        "se" | "rse" => {
            let inputs = [randn(&mut r, &xs, 1.0), randn(&mut r, &[c / reduction, c], 0.7), randn(&mut r, &[c, c / reduction], 0.7)];
            let residual = name == "rse";
            check_fn(
                |g, v| {
                    let (y, _) = if residual { rse_block(g, v[0], v[1], v[2])? } else { se_block(g, v[0], v[1], v[2])? };
                    projection_loss(g, y, ps)
                },
                &inputs,
            )
        }
        "mca" => {
            let w = super::McaWeights::random(&mut r, c, c, reduction);
            let dil = [1, dim(&mut r, 1, 2), dim(&mut r, 1, 3)];
            let mut inputs = vec![randn(&mut r, &xs, 1.0)];
            inputs.extend(w.as_list());
            check_fn(
                |g, v| {
                    let p = super::mca_vars(&v[1..]);
                    let y = mca_block(g, v[0], &p, dil)?;
                    projection_loss(g, y, ps)
                },
                &inputs,
            )
        }
        "temporal_attention" => {
            let inputs = [randn(&mut r, &xs, 1.0), randn(&mut r, &[1, 1, 7], 0.5), randn(&mut r, &[1], 0.3)];
            check_fn(|g, v| { let y = temporal_attention(g, v[0], v[1], v[2])?; projection_loss(g, y, ps) }, &inputs)
        }
        "tcia_fuse" => {
            let vs = if batched { vec![2, c] } else { vec![c] };
            let ts = if batched { vec![2, t] } else { vec![t] };
            let inputs = [
                randn(&mut r, &xs, 1.0), randn(&mut r, &xs, 1.0), randn(&mut r, &ts, 1.0), randn(&mut r, &vs, 1.0),
                randn(&mut r, &[c, c, 1], 0.5), randn(&mut r, &[c], 0.3),
            ];
            check_fn(|g, v| { let y = tcia_fuse(g, v[0], v[1], v[2], v[3], v[4], v[5])?; projection_loss(g, y, ps) }, &inputs)
        }
        "differential_attention" => {
            let n = dim(&mut r, 1, 5);
            let heads = if c % 4 == 0 { 4 } else { 2 };
            let mut inputs = vec![randn(&mut r, &[n, c], 1.0)];
            for _ in 0..5 {
                inputs.push(randn(&mut r, &[c, c], 0.5));
            }
            inputs.push(Tensor::from_vec(vec![r.gen_range(0.0..1.0)]));
            check_fn(
                |g, v| {
                    let p = DiffAttnVars { wq1: v[1], wk1: v[2], wq2: v[3], wk2: v[4], wv: v[5], lambda: v[6] };
                    let y = differential_attention(g, v[0], &p, heads)?;
                    projection_loss(g, y, ps)
                },
                &inputs,
            )
        }
        "attentive_stats_pooling" => {
            // the score bias b₂ only shifts softmax inputs along time, so its
            // gradient vanishes identically; it is held constant here
            let a = dim(&mut r, 1, 4);
            let inputs = [
                randn(&mut r, &xs, 1.0), randn(&mut r, &[a, c, 1], 0.5), randn(&mut r, &[a], 0.3),
                randn(&mut r, &[c, a, 1], 0.5),
            ];
            let b2 = randn(&mut r, &[c], 0.3);
            check_fn(
                |g, v| {
                    let b2 = g.constant(b2.clone());
                    let y = attentive_stats_pooling(g, v[0], v[1], v[2], v[3], b2)?;
                    projection_loss(g, y, ps)
                },
                &inputs,
            )
        }
        "mca_rse_res2block" => {
            let c = 8;
            let mut store = ParamStore::new();
            let mut init = rng::derived(seed, 12);
            let block = {
                let mut scope = Scope::new(&mut store, &mut init);
                Res2Block::new(&mut scope, "block", c, 4, 3, dim(&mut r, 1, 3), reduction, true).unwrap()
            };
            perturb_norms(&mut store, &mut r);
            let x = randn(&mut r, &[2, c, t], 1.0);
            check_session(&store, Mode::Eval, &x, |s, x| { let y = block.forward(s, x)?; projection_loss(&mut s.g, y, ps) }, 4, &[])
        }
        other => panic!("unknown block case {other}"),
    }
}

/// Random affine and running statistics so batch norms are not identities.
fn perturb_norms(store: &mut ParamStore, r: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.entry(id).name.clone();
        let n = store.value(id).numel();
        let vals: Option<Vec<f64>> = if name.ends_with("gamma") || name.ends_with("running_var") {
            Some(rng::uniform(r, n, 0.4).iter().map(|v| v + 1.0).collect())
        } else if name.ends_with("beta") || name.ends_with("running_mean") || name.ends_with("bias") {
            Some(rng::uniform(r, n, 0.3))
        } else {
            None
        };
        if let Some(v) = vals {
            store.value_mut(id).data_mut().copy_from_slice(&v);
        }
    }
}

/// The tiny end-to-end configuration named in the gradient contract.
pub fn tiny_config() -> ModelConfig {
    ModelConfig { channels: 8, input_coeffs: 4, target_frames: 12, num_classes: 3, ..ModelConfig::default() }
}

/// Cross-entropy of the full model (batch of 2) against random labels.
///
/// Batch norms run on their running statistics: in training mode a bias
/// feeding a batch norm has an identically zero gradient, which the
/// relative-error measure cannot score (finite-difference noise over a 1e-8
/// floor). Training-mode normalisation is checked on its own in `op_check`.
pub fn model_check(arch: Arch, seed: u64) -> GradCheckReport {
    let cfg = tiny_config();
    let mut m = Model::build(arch, &cfg, seed).unwrap();
    let mut r = rng::derived(seed, 13);
    perturb_affine(&mut m.store, &mut r);
    let x = randn(&mut r, &[2, cfg.input_coeffs, cfg.target_frames], 1.0);
    calibrate_norms(&mut m, &x);
    let labels: Vec<usize> = (0..2).map(|_| r.gen_range(0..cfg.num_classes)).collect();
    check_session(
        &m.store,
        Mode::Eval,
        &x,
        |s, x| {
            let y = m.forward(s, x)?;
            s.g.cross_entropy(y, &labels)
        },
        3,
        &["asp.attn2.bias"],
    )
}

/// Random batch-norm affine parameters and biases.
pub fn perturb_affine(store: &mut ParamStore, r: &mut ChaCha8Rng) {
    for id in store.trainable_ids() {
        let name = store.entry(id).name.clone();
        let n = store.value(id).numel();
        if name.ends_with("gamma") {
            let v: Vec<f64> = rng::uniform(r, n, 0.4).iter().map(|v| v + 1.0).collect();
            store.value_mut(id).data_mut().copy_from_slice(&v);
        } else if name.ends_with("beta") || name.ends_with("bias") {
            let v = rng::uniform(r, n, 0.3);
            store.value_mut(id).data_mut().copy_from_slice(&v);
        }
    }
}

/// Bring running statistics close to the statistics of `x`, so eval-mode
/// activations keep a sensible scale.
pub fn calibrate_norms(m: &mut Model, x: &Tensor) {
    for _ in 0..40 {
        let updates = {
            let mut s = cryecapa::Session::train(&m.store);
            let xv = s.input(x.clone());
            m.forward(&mut s, xv).unwrap();
            s.take_stat_updates()
        };
        m.store.apply_updates(updates);
    }
}

