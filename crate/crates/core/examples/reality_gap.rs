//! Measures the sim-to-pseudo-real return gap of a trained checkpoint.
//!
//! cargo run --release --example reality_gap <checkpoint.json> [episodes]

use std::path::Path;

use sim2real::gapeval::{reality_gap, PseudoRealConfig};
use sim2real::learner::Checkpoint;

fn main() -> sim2real::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("usage: reality_gap <checkpoint.json> [episodes]");
    let episodes: usize = args.next().map(|a| a.parse().expect("episodes")).unwrap_or(9);
    let ck = Checkpoint::load(Path::new(&path))?;
    let pseudo_real = PseudoRealConfig::default();
    println!(
        "pseudo-real differs in: {:?}",
        pseudo_real.differing_fields(&ck.config.env.params)
    );
    let report = reality_gap(&ck.agent, &ck.config.env, &pseudo_real, episodes, 0)?;
    println!(
        "sim          {:8.3} ± {:.3}",
        report.sim_return.mean, report.sim_return.std
    );
    println!(
        "pseudo-real  {:8.3} ± {:.3}",
        report.pseudo_real_return.mean, report.pseudo_real_return.std
    );
    println!("gap          {:8.3}", report.gap);
    println!("success rate {:8.2}", report.success_rate);
    Ok(())
}
