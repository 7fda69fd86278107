//! Attention and residual blocks of the improved ECAPA-TDNN and its baseline.
//!
//! Each block exists twice: as a pure function over graph variables (used by
//! gradient checks and oracles) and as a module that owns its parameters.

mod asp;
mod diff_attn;
mod mca;
mod res2;
mod se;
mod tcia;

pub use asp::{attentive_stats_pooling, weighted_mean_std, AttentiveStatsPool, STD_FLOOR};
pub use diff_attn::{
    differential_attention, differential_weights, standard_attention, DiffAttention, DiffAttnVars,
};
pub use mca::{mca_block, mca_features, Mca, McaVars, MCA_KERNELS, MCA_POOL_KERNEL};
pub use res2::{Res2Block, Res2Dilated};
pub use se::{rse_block, se_block, se_gate, SqueezeExcite};
pub use tcia::{tcia_fuse, temporal_attention, RseAttention, TEMPORAL_KERNEL};
