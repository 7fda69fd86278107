use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Architecture hyperparameters shared by the improved and baseline models.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_coeffs: usize,
    pub channels: usize,
    pub num_classes: usize,
    /// Dilation of the k=3 convolutions in each of the three Res2 blocks.
    pub dilations: [usize; 3],
    /// Dilations of the MCA branches with kernels 3, 5, 7.
    pub mca_branch_dilations: [usize; 3],
    pub reduction_ratio: usize,
    pub res2_scale: usize,
    pub heads: usize,
    pub use_mca: bool,
    pub use_rse: bool,
    pub use_diff_attn: bool,
    pub target_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_coeffs: 13,
            channels: 128,
            num_classes: 6,
            dilations: [2, 3, 4],
            mca_branch_dilations: [1, 2, 3],
            reduction_ratio: 4,
            res2_scale: 4,
            heads: 4,
            use_mca: true,
            use_rse: true,
            use_diff_attn: true,
            target_frames: 298,
        }
    }
}

pub(crate) const CONFIG_KEYS: [&str; 12] = [
    "input_coeffs",
    "channels",
    "num_classes",
    "dilations",
    "mca_branch_dilations",
    "reduction_ratio",
    "res2_scale",
    "heads",
    "use_mca",
    "use_rse",
    "use_diff_attn",
    "target_frames",
];

impl ModelConfig {
    /// Small configuration for gradient checks and quick training runs.
    pub fn tiny() -> Self {
        Self {
            input_coeffs: 4,
            channels: 8,
            num_classes: 3,
            target_frames: 12,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.input_coeffs == 0 || self.channels == 0 || self.target_frames == 0 {
            return bad("input_coeffs, channels and target_frames must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.dilations.contains(&0) || self.mca_branch_dilations.contains(&0) {
            return bad("dilations must be positive".into());
        }
        if self.res2_scale < 2 || self.channels % self.res2_scale != 0 {
            return bad(format!("channels {} not divisible by res2_scale {}", self.channels, self.res2_scale));
        }
        if self.reduction_ratio == 0 || self.channels % self.reduction_ratio != 0 {
            return bad(format!(
                "channels {} not divisible by reduction_ratio {}",
                self.channels, self.reduction_ratio
            ));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        Ok(())
    }

    /// Set one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let invalid = || Error::ConfigInvalid(format!("bad value '{v}' for {key}"));
        let int = || v.parse::<usize>().map_err(|_| invalid());
        let flag = || match v {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(invalid()),
        };
        let triple = || -> Result<[usize; 3]> {
            let parts: Vec<usize> = v
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| invalid())?;
            parts.try_into().map_err(|_| invalid())
        };
        match key {
            "input_coeffs" => self.input_coeffs = int()?,
            "channels" => self.channels = int()?,
            "num_classes" => self.num_classes = int()?,
            "dilations" => self.dilations = triple()?,
            "mca_branch_dilations" => self.mca_branch_dilations = triple()?,
            "reduction_ratio" => self.reduction_ratio = int()?,
            "res2_scale" => self.res2_scale = int()?,
            "heads" => self.heads = int()?,
            "use_mca" => self.use_mca = flag()?,
            "use_rse" => self.use_rse = flag()?,
            "use_diff_attn" => self.use_diff_attn = flag()?,
            "target_frames" => self.target_frames = int()?,
            _ => return Err(Error::ConfigInvalid(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let triple = |t: [usize; 3]| format!("{},{},{}", t[0], t[1], t[2]);
        Some(match key {
            "input_coeffs" => self.input_coeffs.to_string(),
            "channels" => self.channels.to_string(),
            "num_classes" => self.num_classes.to_string(),
            "dilations" => triple(self.dilations),
            "mca_branch_dilations" => triple(self.mca_branch_dilations),
            "reduction_ratio" => self.reduction_ratio.to_string(),
            "res2_scale" => self.res2_scale.to_string(),
            "heads" => self.heads.to_string(),
            "use_mca" => self.use_mca.to_string(),
            "use_rse" => self.use_rse.to_string(),
            "use_diff_attn" => self.use_diff_attn.to_string(),
            "target_frames" => self.target_frames.to_string(),
            _ => return None,
        })
    }

    pub fn keys() -> &'static [&'static str] {
        &CONFIG_KEYS
    }

    /// Canonical `key = value` text, one line per field in a fixed order.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        for k in CONFIG_KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).unwrap());
        }
        out
    }

    /// Parse `key = value` lines; missing keys keep their defaults.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_kv_lines(text)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    /// Human-readable list of fields that differ from `other`.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        CONFIG_KEYS
            .iter()
            .filter_map(|k| {
                let (a, b) = (self.get(k).unwrap(), other.get(k).unwrap());
                (a != b).then(|| format!("{k}: {a} vs {b}"))
            })
            .collect()
    }
}

/// Split `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected 'key = value'", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
