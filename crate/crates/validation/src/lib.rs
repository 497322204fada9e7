//! Reporting helpers for the acceptance suite in `tests/acceptance.rs`.
//!
//! The suite lives in its own package so that it runs after the unit and
//! integration tests of the other crates in `cargo test --workspace`.

use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

static SERIAL: Mutex<()> = Mutex::new(());

/// Hold this while a criterion runs, so wall-clock budgets are measured one
/// criterion at a time.
pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// The one-line verdict, e.g. `criterion 3: PASS | ... | 0.41s of 60s`.
pub fn verdict_line(n: u32, pass: bool, budget: Duration, elapsed: Duration, detail: &str) -> String {
    let ok = pass && elapsed <= budget;
    format!(
        "criterion {n}: {} | {detail} | {:.2}s of {}s",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    )
}

/// Print the verdict line, then fail the calling test if the criterion
/// failed or ran over budget.
///
/// The line goes to the raw stderr handle, which the test harness does not
/// capture, so passing criteria show up in a plain `cargo test` log too.
pub fn report(n: u32, pass: bool, budget: Duration, elapsed: Duration, detail: String) {
    let line = verdict_line(n, pass, budget, elapsed, &detail);
    let _ = writeln!(std::io::stderr().lock(), "{line}");
    assert!(pass, "criterion {n} failed: {detail}");
    assert!(elapsed <= budget, "criterion {n} exceeded its runtime budget");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn over_budget_is_a_failure() {
        let line = verdict_line(2, true, Duration::from_secs(1), Duration::from_secs(2), "x");
        assert!(line.starts_with("criterion 2: FAIL"));
        assert!(verdict_line(2, true, Duration::from_secs(1), Duration::ZERO, "x").contains("PASS"));
    }
}
