//! Benchmarks for the floodmax sampler live in `benches/`.
