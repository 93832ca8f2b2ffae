//! Learns a gallop from scratch with the large observation space and domain
//! randomization, then evaluates the deterministic policy.
//!
//! cargo run --release --example train_gallop [steps] [seed] [out_dir]

use std::path::PathBuf;

use sim2real::gapeval::{evaluate_policy, evaluation_env, gait_metrics};
use sim2real::learner::{resume, Checkpoint, Task, TrainConfig};

fn main() -> sim2real::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|a| a.parse().expect("steps")).unwrap_or(500_000);
    let seed: u64 = args.next().map(|a| a.parse().expect("seed")).unwrap_or(0);
    let out = args.next().map(PathBuf::from);

    let config = TrainConfig::preset(Task::Gallop, steps, seed);
    let ck = resume(Checkpoint::initial(&config)?, out.as_deref(), |row, stats| {
        eprintln!(
            "iter {:3}  steps {:7}  return {:8.3} ± {:.3}  kl {:.4}",
            row.iteration, row.env_steps, row.mean_return, row.std_return, stats.approx_kl
        );
    })?;

    let eval = evaluate_policy(&ck.agent, &evaluation_env(&config.env), 5, 100)?;
    println!("eval return {:.3} ± {:.3}", eval.stats.mean, eval.stats.std);
    for trace in &eval.traces {
        let m = gait_metrics(trace)?;
        println!(
            "  distance {:5.2} m  speed {:5.2} m/s  power {:6.1} W",
            m.distance, m.speed, m.avg_mech_power
        );
    }
    Ok(())
}
