//! Criterion benchmarks for the simulation and analysis pipeline; see `benches/`.
