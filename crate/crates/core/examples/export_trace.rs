//! Records one evaluation episode of the open-loop trot and writes its
//! per-step trace as CSV plus a JSON metadata file.
//!
//! cargo run --release --example export_trace [out_dir] [seed]

use std::path::PathBuf;

use sim2real::env::{reset, EnvConfig, ACTION_DIM};
use sim2real::gapeval::{evaluation_env, gait_metrics};

fn main() -> sim2real::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "trace".into()));
    let seed: u64 = args.next().map(|a| a.parse().expect("seed")).unwrap_or(0);
    std::fs::create_dir_all(&out)?;

    let cfg = evaluation_env(&EnvConfig::trot());
    let (mut env, _) = reset(&cfg, seed)?;
    env.record_trace();
    while !env.step(&[0.0; ACTION_DIM])?.done {}
    let trace = env.take_trace().expect("trace was recorded");
    trace.write_csv(&out.join("episode.csv"))?;
    trace.write_metadata_json(&out.join("episode.json"))?;

    let m = gait_metrics(&trace)?;
    println!(
        "{} steps, return {:.3}, distance {:.2} m, speed {:.2} m/s, power {:.1} W -> {}",
        trace.len(),
        trace.total_return(),
        m.distance,
        m.speed,
        m.avg_mech_power,
        out.display()
    );
    Ok(())
}
