//! Learns feedback around the open-loop trot reference and compares it with
//! the reference alone in nominal and pseudo-real environments.
//!
//! cargo run --release --example train_trot [steps] [seed] [out_dir]

use std::path::PathBuf;

use sim2real::gapeval::{evaluate_policy, evaluation_env, PseudoRealConfig};
use sim2real::learner::{resume, Checkpoint, Task, TrainConfig};

fn main() -> sim2real::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|a| a.parse().expect("steps")).unwrap_or(500_000);
    let seed: u64 = args.next().map(|a| a.parse().expect("seed")).unwrap_or(0);
    let out = args.next().map(PathBuf::from);

    let config = TrainConfig::preset(Task::Trot, steps, seed);
    let ck = resume(Checkpoint::initial(&config)?, out.as_deref(), |row, _| {
        eprintln!(
            "iter {:3}  steps {:7}  return {:8.3}",
            row.iteration, row.env_steps, row.mean_return
        );
    })?;

    let nominal = evaluation_env(&config.env);
    let pseudo_real = PseudoRealConfig::default().env_config(&config.env);
    for (name, env) in [("nominal", &nominal), ("pseudo-real", &pseudo_real)] {
        for (label, env) in [("hybrid", env.clone()), ("open-loop", env.clone().open_loop_only())] {
            let s = evaluate_policy(&ck.agent, &env, 9, 0)?.stats;
            println!(
                "{name:<12} {label:<10} return {:7.3} ± {:.3}  survived {:.0}%",
                s.mean,
                s.std,
                100.0 * s.success_rate
            );
        }
    }
    Ok(())
}
