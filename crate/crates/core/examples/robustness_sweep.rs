//! Sweeps one or more physical parameters across their randomization ranges
//! and prints the return curve of a checkpoint.
//!
//! cargo run --release --example robustness_sweep <checkpoint.json> [param ...]

use std::path::Path;

use sim2real::gapeval::robustness_report;
use sim2real::learner::Checkpoint;
use sim2real::randomize::{RandomizationRanges, RandomizedParam};

fn main() -> sim2real::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .expect("usage: robustness_sweep <checkpoint.json> [param ...]");
    let ck = Checkpoint::load(Path::new(&path))?;
    let mut params = args
        .map(|a| RandomizedParam::from_name(&a))
        .collect::<sim2real::Result<Vec<_>>>()?;
    if params.is_empty() {
        params = vec![RandomizedParam::Inertia];
    }
    let report = robustness_report(
        &ck.agent,
        &ck.config.env,
        &params,
        &RandomizationRanges::default(),
        10,
        3,
        0,
    )?;
    for curve in &report.sweeps {
        println!("{}", curve.parameter);
        for p in &curve.points {
            println!("  {:9.4}  {:8.3} ± {:.3}", p.parameter_value, p.mean, p.std);
        }
    }
    println!("overall {:.3} ± {:.3}", report.mean, report.std);
    Ok(())
}
