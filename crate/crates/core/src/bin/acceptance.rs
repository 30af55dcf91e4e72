//! Runs the acceptance criteria and prints a JSON summary.
//!
//! Usage: `acceptance [--seed N] [--only ID]...`

use std::process::ExitCode;

use cpfopt::acceptance::{criterion_ids, run_one, CriterionResult, DEFAULT_SEED};

fn main() -> ExitCode {
    let mut seed = DEFAULT_SEED;
    let mut only: Vec<u8> = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        let value = args.next();
        let parsed = match (a.as_str(), value.as_deref()) {
            ("--seed", Some(v)) => v.parse().map(|v| seed = v).is_ok(),
            ("--only", Some(v)) => v.parse().map(|v| only.push(v)).is_ok(),
            _ => false,
        };
        if !parsed {
            eprintln!("usage: acceptance [--seed N] [--only ID]...");
            return ExitCode::from(2);
        }
    }
    let ids: Vec<u8> = criterion_ids()
        .map(|c| c.0)
        .filter(|id| only.is_empty() || only.contains(id))
        .collect();
    let mut results: Vec<CriterionResult> = Vec::new();
    for id in ids {
        let r = run_one(id, seed).expect("registered criterion");
        eprintln!(
            "[{}] {:>2} {} measured={:.6e} ({:.1} s) {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.name,
            r.measured,
            r.runtime_secs,
            r.detail
        );
        results.push(r);
    }
    let all = results.iter().all(|r| r.passed);
    let summary = serde_json::json!({ "seed": seed, "passed": all, "criteria": results });
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable summary"));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
