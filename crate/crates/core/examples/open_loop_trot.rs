//! Plays the open-loop trot reference alone, in nominal simulation and in the
//! pseudo-real environment.
//!
//! cargo run --release --example open_loop_trot [episodes]

use sim2real::env::{reset, EnvConfig, ACTION_DIM};
use sim2real::gapeval::{evaluation_env, PseudoRealConfig};

fn run(cfg: &EnvConfig, seed: u64) -> sim2real::Result<(usize, f64, f64)> {
    let (mut env, _) = reset(cfg, seed)?;
    let start = env.state().base_position.x;
    let mut total = 0.0;
    loop {
        let step = env.step(&[0.0; ACTION_DIM])?;
        total += step.reward;
        if step.done {
            return Ok((env.step_count(), total, env.state().base_position.x - start));
        }
    }
}

fn main() -> sim2real::Result<()> {
    let episodes: u64 = std::env::args()
        .nth(1)
        .map(|a| a.parse().expect("episodes"))
        .unwrap_or(9);
    let open_loop = EnvConfig::trot().open_loop_only();
    let envs = [
        ("nominal", evaluation_env(&open_loop)),
        ("pseudo-real", PseudoRealConfig::default().env_config(&open_loop)),
    ];
    for (name, cfg) in &envs {
        let mut falls = 0;
        for seed in 0..episodes {
            let (len, ret, dx) = run(cfg, seed)?;
            falls += (len < cfg.episode_cap) as usize;
            println!("{name:<12} seed {seed:2}  steps {len:4}  return {ret:8.4}  dx {dx:6.2} m");
        }
        println!("{name:<12} falls {falls}/{episodes}\n");
    }
    Ok(())
}
