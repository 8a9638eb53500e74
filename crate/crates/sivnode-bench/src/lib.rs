//! Criterion benchmarks for the sivnode simulation kernels; see `benches/`.
