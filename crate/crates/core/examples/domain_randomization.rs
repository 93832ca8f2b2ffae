//! Draws randomized parameter sets and reports their empirical ranges.
//!
//! cargo run --release --example domain_randomization [draws] [seed]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sim2real::randomize::{nominal_params, sample_params, RandomizationRanges, RandomizedParam};

fn main() {
    let mut args = std::env::args().skip(1);
    let draws: usize = args.next().map(|a| a.parse().expect("draws")).unwrap_or(10_000);
    let seed: u64 = args.next().map(|a| a.parse().expect("seed")).unwrap_or(0);
    let ranges = RandomizationRanges::default();
    let nominal = nominal_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<_> = (0..draws).map(|_| sample_params(&ranges, &nominal, &mut rng)).collect();

    println!(
        "{:<17} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "parameter", "nominal", "lower", "upper", "min", "mean", "max"
    );
    for p in RandomizedParam::ALL {
        let values: Vec<f64> = samples.iter().map(|s| p.get(s)).collect();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let r = ranges.get(p);
        println!(
            "{:<17} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}  {}",
            p.name(),
            p.get(&nominal),
            r.lower,
            r.upper,
            min,
            mean,
            max,
            p.unit()
        );
    }
}
