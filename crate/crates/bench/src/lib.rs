//! Criterion benchmarks for `upo-core`; see `benches/`.
