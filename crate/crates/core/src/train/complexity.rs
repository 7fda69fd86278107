use std::fmt::Write as _;

use crate::flops;
use crate::model::Model;
use crate::params::Session;
use crate::tensor::Tensor;

/// A published complexity row: millions of parameters and GFLOPs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PublishedRow {
    pub params_m: f64,
    pub gflops: f64,
}

pub const PUBLISHED_IMPROVED: PublishedRow = PublishedRow { params_m: 1.43, gflops: 0.32 };
pub const PUBLISHED_BASELINE: PublishedRow = PublishedRow { params_m: 0.84, gflops: 0.20 };

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub arch: String,
    pub total_params: usize,
    pub per_module: Vec<(String, usize)>,
    pub frames: usize,
    pub flops: u64,
    pub conv_trunk_flops: u64,
}

/// Trainable scalar count (running statistics excluded, λ included).
pub fn count_params(model: &Model) -> usize {
    model.num_params()
}

/// Full report at `frames` frames for one sample.
pub fn count_flops(model: &Model, frames: usize) -> ComplexityReport {
    ComplexityReport {
        arch: model.arch.to_string(),
        total_params: count_params(model),
        per_module: model.module_param_counts(),
        frames,
        flops: model.flops(frames),
        conv_trunk_flops: model.conv_trunk_flops(frames),
    }
}

/// FLOPs counted at runtime during an eval forward (softmax included) of a
/// zero input with one sample.
pub fn measured_flops(model: &Model, frames: usize) -> crate::Result<u64> {
    let x = Tensor::zeros(&[1, model.config.input_coeffs, frames]);
    let (out, n) = flops::measure(|| -> crate::Result<()> {
        let mut s = Session::eval(&model.store);
        let input = s.input(x);
        let logits = model.forward(&mut s, input)?;
        s.g.softmax(logits, 1)?;
        Ok(())
    });
    out?;
    Ok(n)
}

impl ComplexityReport {
    pub fn params_millions(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }

    /// `key = value` lines.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let p = &self.arch;
        let _ = writeln!(out, "{p}.params = {}", self.total_params);
        let _ = writeln!(out, "{p}.params_millions = {:.4}", self.params_millions());
        for (name, n) in &self.per_module {
            let _ = writeln!(out, "{p}.params.{name} = {n}");
        }
        let _ = writeln!(out, "{p}.frames = {}", self.frames);
        let _ = writeln!(out, "{p}.flops = {}", self.flops);
        let _ = writeln!(out, "{p}.gflops = {:.4}", self.gflops());
        let _ = writeln!(out, "{p}.conv_trunk_flops = {}", self.conv_trunk_flops);
        out
    }
}
