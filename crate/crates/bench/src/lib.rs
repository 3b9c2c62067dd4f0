//! Criterion benchmarks for the pricing backends; see `benches/pricing.rs`.
