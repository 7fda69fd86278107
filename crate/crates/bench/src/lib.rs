//! Criterion benchmarks for the convolution kernel, the MFCC front end and
//! model forward/training passes. Run with `cargo bench -p cryecapa-bench`.
