mod common;

use common::suite::{block_check, model_check, op_check, BLOCKS, OPS};
use common::GRAD_TOL;
use cryecapa::model::Arch;

#[test]
fn ops_match_central_differences() {
    for op in OPS {
        for seed in 0..20 {
            let rep = op_check(op, seed);
            assert!(rep.max_rel_error < GRAD_TOL, "{op} seed {seed}: {rep:?}");
        }
    }
}

#[test]
fn blocks_match_central_differences() {
    for block in BLOCKS {
        for seed in 0..20 {
            let rep = block_check(block, seed);
            assert!(rep.max_rel_error < GRAD_TOL, "{block} seed {seed}: {rep:?}");
        }
    }
}

#[test]
fn tiny_models_match_central_differences() {
    for arch in [Arch::Improved, Arch::Baseline] {
        for seed in 0..20 {
            let rep = model_check(arch, seed);
            assert!(rep.max_rel_error < GRAD_TOL, "{arch} seed {seed}: {rep:?}");
        }
    }
}
