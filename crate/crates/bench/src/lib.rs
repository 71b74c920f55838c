//! Criterion benchmarks for the hot paths of the detection pipeline live in
//! `benches/`; this crate has no library code of its own.
