//! Holds the `acceptance` test target (see `tests/acceptance.rs`). It prints
//! one PASS/FAIL line per acceptance criterion and exits non-zero on any failure.
