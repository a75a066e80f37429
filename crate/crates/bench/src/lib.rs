//! Criterion benchmarks for the drivestyle pipeline live in `benches/`.
