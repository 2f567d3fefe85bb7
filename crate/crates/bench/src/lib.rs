//! Criterion benchmarks for the convolution kernels; see `benches/`.
