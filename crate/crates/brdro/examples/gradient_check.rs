//! Finite-difference verification of every hand-written gradient.
//!
//! All backward passes in this crate are written by hand, so each
//! differentiable objective ships as a "bundle" that the checker probes
//! at random parameter points against central finite differences. This
//! is the same machinery behind `brdro gradcheck`.
//!
//! Run with: cargo run --example gradient_check

use brdro::gradcheck::{format_reports, run_all};

fn main() -> brdro::Result<()> {
    let reports = run_all(200, 1)?;
    println!("{}", format_reports(&reports));
    if reports.iter().any(|r| !r.passed()) {
        std::process::exit(2);
    }
    println!("all {} bundles agree with finite differences", reports.len());
    Ok(())
}
