//! End-to-end acceptance checks for `panel-impute`, run as
//! `cargo test -p panel-impute-validation --test acceptance`.
