//! Holds the `acceptance` test target; run it with
//! `cargo test -p hcn-validation --test acceptance`.
