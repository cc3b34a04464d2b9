//! Benchmarks live in `benches/`; run them with `cargo bench -p spo2dcac-bench`.
