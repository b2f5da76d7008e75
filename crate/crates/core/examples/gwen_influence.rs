//! Influence of the positioner tower on a short line-of-sight link.
//!
//! ```bash
//! cargo run --release --example gwen_influence
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uwb_rangekit::channel::{sample_measurement, DeviceId, Position, ProfileLibrary};
use uwb_rangekit::stats::error_metrics;

fn main() {
    let los = ProfileLibrary::bundled()
        .cell(DeviceId::Dw3000, "gwen-los", 0.35)
        .unwrap()
        .clone();
    let pos = Position::new(0.0, 0.0).unwrap();
    for (label, profile) in [("line of sight", los.clone()), ("tower", los.with_tower(true))] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d: Vec<f64> = (0..10_000)
            .filter_map(|_| sample_measurement(&profile, pos, &mut rng).meters())
            .collect();
        let m = error_metrics(&d, 0.35, 0.10);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        println!("{label:>14}: n={} mean={mean:.4} m sd={:.4} m", d.len(), m.sd_m.unwrap());
    }
}
