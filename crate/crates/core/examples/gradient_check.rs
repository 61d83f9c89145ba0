//! Checks analytic gradients of random small networks against central
//! differences in f64.
//!
//!     cargo run --example gradient_check -- [cases] [seed]

use rsn2::verify::{gradient_suite, GradCheckConfig};

fn main() -> rsn2::Result<()> {
    let mut args = std::env::args().skip(1);
    let cases = args.next().and_then(|a| a.parse().ok()).unwrap_or(50);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);
    let cfg = GradCheckConfig::default();
    let report = gradient_suite(seed, cases, &cfg)?;
    println!(
        "{cases} networks, {} coordinates checked, {} skipped at kinks",
        report.checked, report.skipped
    );
    println!("max relative error {:.3e} at {:?}", report.max_rel_error, report.worst);
    println!("{}", if report.passed(cfg.tolerance) { "PASS" } else { "FAIL" });
    Ok(())
}
