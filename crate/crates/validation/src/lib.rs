//! Acceptance checks for the rdlab workspace live in `tests/acceptance.rs`;
//! run them with `cargo test -p rdlab-validation --test acceptance`.
