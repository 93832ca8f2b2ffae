//! Recovers injected sensing latencies with the one-step PWM spike test.
//!
//! cargo run --release --example latency_calibration [latency_ms ...]

use sim2real::cli::calibrate_latency;

fn main() -> sim2real::Result<()> {
    let mut injected: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse::<f64>().expect("latency in ms") / 1000.0)
        .collect();
    if injected.is_empty() {
        injected = vec![0.0, 0.003, 0.018, 0.040];
    }
    println!("{:<8} {:>10} {:>10} {:>8}", "loop", "injected", "measured", "ok");
    for m in calibrate_latency(&injected)? {
        println!(
            "{:<8} {:>8.1}ms {:>8.1}ms {:>8}",
            m.loop_name,
            1e3 * m.injected,
            1e3 * m.measured,
            m.within_one_step()
        );
    }
    Ok(())
}
