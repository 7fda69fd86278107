use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{BatchNorm1d, Conv1d};
use crate::params::{Scope, Session};

use super::{RseAttention, SqueezeExcite};

/// Hierarchical Res2Net convolution: split into `scale` groups,
/// `y₁ = x₁`, `y₂ = K(x₂)`, `yᵢ = K(xᵢ + yᵢ₋₁)`, where `K` is a dilated
/// conv → ReLU → BN.
#[derive(Clone, Debug)]
pub struct Res2Dilated {
    pub convs: Vec<Conv1d>,
    pub norms: Vec<BatchNorm1d>,
    pub scale: usize,
    pub width: usize,
}

impl Res2Dilated {
    pub fn new(
        scope: &mut Scope<'_>,
        name: &str,
        channels: usize,
        scale: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        if scale < 2 || channels % scale != 0 {
            return Err(Error::ScaleIndivisible { channels, scale });
        }
        let width = channels / scale;
        let mut s = scope.sub(name);
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for i in 1..scale {
            let mut g = s.sub(&i.to_string());
            convs.push(Conv1d::new(&mut g, "conv", width, width, kernel, dilation, true));
            norms.push(BatchNorm1d::new(&mut g, "bn", width));
        }
        Ok(Self { convs, norms, scale, width })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let parts = s.g.split_channels(x, &vec![self.width; self.scale])?;
        let mut outs = vec![parts[0]];
        let mut prev: Option<Var> = None;
        for (i, part) in parts.iter().enumerate().skip(1) {
            let input = match prev {
                Some(p) => s.g.add(*part, p)?,
                None => *part,
            };
            let h = self.convs[i - 1].forward(s, input)?;
            let h = s.g.relu(h)?;
            let h = self.norms[i - 1].forward(s, h)?;
            outs.push(h);
            prev = Some(h);
        }
        s.g.concat_channels(&outs)
    }

    pub fn flops(&self, frames: usize) -> u64 {
        let wt = (self.width * frames) as u64;
        let adds = (self.scale - 2) as u64 * wt;
        let per: u64 = self.convs.iter().zip(&self.norms).map(|(c, n)| c.flops(frames) + wt + n.flops(frames)).sum();
        adds + per
    }

    pub fn conv_flops(&self, frames: usize) -> u64 {
        self.convs.iter().map(|c| c.flops(frames)).sum()
    }
}

/// SE-Res2Block, optionally preceded by RSE attention (the MCA-RSE Res2Block).
///
/// `[rse] → 1×1 conv → ReLU → BN → Res2 → 1×1 conv → ReLU → BN → SE → + x`
#[derive(Clone, Debug)]
pub struct Res2Block {
    pub rse: Option<RseAttention>,
    pub conv1: Conv1d,
    pub bn1: BatchNorm1d,
    pub res2: Res2Dilated,
    pub conv2: Conv1d,
    pub bn2: BatchNorm1d,
    pub se: SqueezeExcite,
    pub channels: usize,
}

impl Res2Block {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scope: &mut Scope<'_>,
        name: &str,
        channels: usize,
        scale: usize,
        kernel: usize,
        dilation: usize,
        reduction: usize,
        with_rse: bool,
    ) -> Result<Self> {
        let mut s = scope.sub(name);
        let rse = if with_rse {
            Some(RseAttention::new(&mut s, "rse", channels, reduction)?)
        } else {
            None
        };
        Ok(Self {
            rse,
            conv1: Conv1d::new(&mut s, "conv1", channels, channels, 1, 1, true),
            bn1: BatchNorm1d::new(&mut s, "bn1", channels),
            res2: Res2Dilated::new(&mut s, "res2", channels, scale, kernel, dilation)?,
            conv2: Conv1d::new(&mut s, "conv2", channels, channels, 1, 1, true),
            bn2: BatchNorm1d::new(&mut s, "bn2", channels),
            se: SqueezeExcite::new(&mut s, "se", channels, reduction)?,
            channels,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        if let Some(rse) = &self.rse {
            h = rse.forward(s, h)?;
        }
        let h = self.conv1.forward(s, h)?;
        let h = s.g.relu(h)?;
        let h = self.bn1.forward(s, h)?;
        let h = self.res2.forward(s, h)?;
        let h = self.conv2.forward(s, h)?;
        let h = s.g.relu(h)?;
        let h = self.bn2.forward(s, h)?;
        let (h, _) = self.se.forward(s, h)?;
        s.g.add(h, x)
    }

    pub fn flops(&self, frames: usize) -> u64 {
        let ct = (self.channels * frames) as u64;
        self.rse.as_ref().map_or(0, |r| r.flops(frames))
            + self.conv1.flops(frames)
            + ct
            + self.bn1.flops(frames)
            + self.res2.flops(frames)
            + self.conv2.flops(frames)
            + ct
            + self.bn2.flops(frames)
            + self.se.flops(frames)
            + ct
    }

    pub fn conv_flops(&self, frames: usize) -> u64 {
        self.rse.as_ref().map_or(0, |r| r.conv_flops(frames))
            + self.conv1.flops(frames)
            + self.res2.conv_flops(frames)
            + self.conv2.flops(frames)
    }
}
