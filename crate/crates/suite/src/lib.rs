//! Acceptance criteria for nestfit live in `tests/acceptance.rs`; run them
//! with `cargo test -p nestfit-suite --test acceptance`.
