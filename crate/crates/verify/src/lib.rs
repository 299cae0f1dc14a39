//! Acceptance checks for the workspace; see `tests/acceptance.rs`.
//!
//! The checks drive the `menucast` binary, which is built on demand.
