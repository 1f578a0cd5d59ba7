//! Criterion benchmarks for the `purecma` engine; see `benches/engine.rs`.
