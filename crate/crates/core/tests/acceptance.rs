//! Acceptance suite: one scripted scenario per criterion, one status line
//! each. Numeric arguments restrict the run to those criteria, for example
//! `cargo test --test acceptance -- 1 3 9`.

use std::process::ExitCode;

use fairguide::repro::{run_criterion, status_line, CRITERIA};

fn main() -> ExitCode {
    let picked: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids: Vec<u8> = if picked.is_empty() {
        CRITERIA.iter().map(|c| c.0).collect()
    } else {
        picked
    };
    let verbose = std::env::var_os("FAIRGUIDE_VERBOSE").is_some();
    let mut failed = Vec::new();
    for id in ids {
        let outcome = match run_criterion(id) {
            Ok(o) => o,
            Err(e) => {
                println!("criterion {id:>2} FAIL  {e}");
                failed.push(id);
                continue;
            }
        };
        println!("{}", status_line(&outcome));
        if verbose || !outcome.passed {
            for d in &outcome.details {
                println!("    {d}");
            }
        }
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {failed:?}");
        ExitCode::FAILURE
    }
}
