//! Trains the calibration-driven model on `y = x + noise` and prints test metrics.
//!
//! `cargo run --release -p calreg-core --example synthetic_calibration -- [seed] [iterations]`

use calreg_core::dataio::{standardize, Dataset};
use calreg_core::interval::CalibrationLevels;
use calreg_core::lbc::{train_lbc, LbcConfig};
use calreg_core::metrics::calibration_report;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn make(n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let noise = Normal::new(0.0, 0.1).unwrap();
    let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
    let y = Array1::from_shape_fn(n, |i| x[[i, 0]] + noise.sample(rng));
    Dataset::from_arrays(x, y).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let iterations: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = make(500, &mut rng);
    let test = make(200, &mut rng);
    let (train_s, others, stats) = standardize(&train, &[&test]).unwrap();
    let config = LbcConfig {
        seed,
        iterations,
        ..LbcConfig::default()
    };
    let levels = CalibrationLevels::default();
    let (model, history) = train_lbc(&train_s, &config, &levels, Some(&others[0])).unwrap();
    for h in history.iter().filter(|h| h.val_rmse.is_some()) {
        println!(
            "it {:5} loss_g {:.4} loss_f {:.4} rmse {:.4} ece {:.4}",
            h.iteration,
            h.loss_g,
            h.loss_f,
            h.val_rmse.unwrap(),
            h.val_ece.unwrap()
        );
    }
    let pred = model
        .predict(others[0].features.view())
        .unwrap()
        .unstandardize(&stats);
    let report = calibration_report(test.targets.view(), &pred, &levels).unwrap();
    println!("{}", serde_json::to_string(&report).unwrap());
}
