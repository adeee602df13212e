//! Holds the `acceptance` test target: `cargo test -p mfoffload-verify`.
