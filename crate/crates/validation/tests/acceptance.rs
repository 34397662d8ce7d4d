//! Runs every acceptance criterion in order and prints one verdict line per
//! criterion. Pass criterion ids (e.g. `AC3 AC9`) as arguments to run a
//! subset. Exits non-zero when any selected criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use masha_validation::{criteria, Outcome};

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for c in criteria() {
        if !wanted.is_empty() && !wanted.iter().any(|w| w.eq_ignore_ascii_case(c.id)) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome {
                pass: false,
                lines: vec![format!("[FAILED] panicked: {msg}")],
            }
        });
        let elapsed = started.elapsed();
        let in_time = elapsed <= c.limit;
        let pass = outcome.pass && in_time;
        println!(
            "{:<5} {}  {}  ({:.1} s, limit {} s{})",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.title,
            elapsed.as_secs_f64(),
            c.limit.as_secs(),
            if in_time { "" } else { ", over time" }
        );
        for line in &outcome.lines {
            println!("        {line}");
        }
        if !pass {
            failed.push(c.id);
        }
    }
    println!("acceptance: {} passed, {} failed{}", ran - failed.len(), failed.len(), if failed.is_empty() {
        String::new()
    } else {
        format!(" ({})", failed.join(", "))
    });
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
