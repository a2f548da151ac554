//! Runs the numerical self-checks (the same ones as `pctl verify`), then
//! again with a deliberately wrong gradient to show that they catch it.
//!
//! ```text
//! cargo run --release --example self_check
//! ```

use pctl::verify::{run_checks, VerifyOptions};

fn main() {
    let report = run_checks(VerifyOptions::default());
    print!("{}", report.to_text());
    println!("all passed: {}\n", report.passed());

    let broken = run_checks(VerifyOptions { inject_sign_flip: true });
    let failed: Vec<&str> = broken.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    println!("with a sign-flipped instance gradient, {} checks fail:", failed.len());
    for name in failed {
        println!("  {name}");
    }
}
