//! Acceptance criteria for `dualcert`, run with
//! `cargo test -p dualcert-acceptance`.
