//! Prints one line per acceptance criterion. Failures are reported, not raised; the
//! `hcount verify` command turns them into a nonzero exit status.

use hcount::verify::{format_line, run, CRITERIA};

fn main() {
    let ids: Vec<u32> = (1..=CRITERIA).collect();
    let results = run(&ids, |r| println!("{}", format_line(r)));
    let failed: Vec<u32> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!(
        "acceptance: {} of {} criteria pass",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failing: {failed:?}");
    }
}
