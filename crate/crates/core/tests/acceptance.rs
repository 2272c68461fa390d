//! Runs the full acceptance suite and prints one line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use miso_wpt::validate;

fn main() -> ExitCode {
    let start = Instant::now();
    let sweeps = validate::reference_sweeps();
    let mut all = Vec::new();
    let mut report = |o: validate::CriterionOutcome| {
        println!("{o}");
        all.push(o.passed);
    };
    report(validate::siso_collapse());
    report(validate::convex_chain());
    report(validate::tightness(&sweeps));
    report(validate::nonnegativity(&sweeps));
    report(validate::degradation(&sweeps));
    report(validate::pim_eigensystems());
    report(validate::kkt_and_duality(&sweeps));
    report(validate::load_optimization());
    report(validate::oracle_agreement());
    let passed = all.iter().filter(|&&p| p).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.1}s",
        all.len(),
        start.elapsed().as_secs_f64()
    );
    if passed == all.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
