//! Criterion benchmarks for homlab; see `benches/`.
