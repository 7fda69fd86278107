//! Parameterised layers built on [`Session`].

use crate::error::Result;
use crate::graph::{conv_geometry, NormMode, Padding, Var};
use crate::params::{Mode, ParamId, Scope, Session};
use crate::tensor::Tensor;

/// 1-D convolution with "same" padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new(
        scope: &mut Scope<'_>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        bias: bool,
    ) -> Self {
        let mut s = scope.sub(name);
        let weight = s.kaiming("weight", &[out_channels, in_channels, kernel], in_channels * kernel);
        let bias = bias.then(|| s.constant("bias", &[out_channels], 0.0));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            dilation,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.g.conv1d(x, w, b, self.dilation, Padding::Same)
    }

    /// FLOPs for one sample of `frames` input frames.
    pub fn flops(&self, frames: usize) -> u64 {
        let (_, _, t_out) = conv_geometry(frames, self.kernel, self.dilation, Padding::Same).unwrap();
        let macs = (self.in_channels * self.out_channels * self.kernel * t_out) as u64;
        2 * macs + if self.bias.is_some() { (self.out_channels * t_out) as u64 } else { 0 }
    }
}

/// Fully connected layer `y = W·x (+ b)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(scope: &mut Scope<'_>, name: &str, inputs: usize, outputs: usize, bias: bool) -> Self {
        let mut s = scope.sub(name);
        let weight = s.kaiming("weight", &[outputs, inputs], inputs);
        let bias = bias.then(|| s.constant("bias", &[outputs], 0.0));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.g.dense(x, w, b)
    }

    pub fn flops(&self) -> u64 {
        (2 * self.inputs * self.outputs + if self.bias.is_some() { self.outputs } else { 0 }) as u64
    }
}

/// Batch norm over batch and time with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm1d {
    pub fn new(scope: &mut Scope<'_>, name: &str, channels: usize) -> Self {
        let mut s = scope.sub(name);
        Self {
            gamma: s.constant("gamma", &[channels], 1.0),
            beta: s.constant("beta", &[channels], 0.0),
            running_mean: s.buffer("running_mean", &[channels], 0.0),
            running_var: s.buffer("running_var", &[channels], 1.0),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.g.batch_norm(x, gamma, beta, NormMode::Train { eps: self.eps })?;
                let stats = stats.expect("train mode returns statistics");
                // running variance tracks the unbiased estimate
                let unbias = if stats.count > 1 {
                    stats.count as f64 / (stats.count - 1) as f64
                } else {
                    1.0
                };
                let m = self.momentum;
                let rm = s.store().value(self.running_mean).data();
                let rv = s.store().value(self.running_var).data();
                let new_mean: Vec<f64> = rm.iter().zip(&stats.mean).map(|(r, b)| (1.0 - m) * r + m * b).collect();
                let new_var: Vec<f64> = rv.iter().zip(&stats.var).map(|(r, b)| (1.0 - m) * r + m * b * unbias).collect();
                s.record_stat_update(self.running_mean, Tensor::from_vec(new_mean));
                s.record_stat_update(self.running_var, Tensor::from_vec(new_var));
                Ok(y)
            }
            Mode::Eval => {
                let store = s.store();
                let rm = store.value(self.running_mean).data();
                let rv = store.value(self.running_var).data();
                let (y, _) = s.g.batch_norm(
                    x,
                    gamma,
                    beta,
                    NormMode::Eval {
                        running_mean: rm,
                        running_var: rv,
                        eps: self.eps,
                    },
                )?;
                Ok(y)
            }
        }
    }

    /// Eval-mode FLOPs for one sample of `frames` frames.
    pub fn flops(&self, frames: usize) -> u64 {
        (2 * self.channels * frames) as u64
    }
}
