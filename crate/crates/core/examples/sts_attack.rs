//! STS frame validation against forged and replayed frames, plus the
//! ghost-peak and Cicada distance attacks.
//!
//! ```bash
//! cargo run --example sts_attack
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uwb_rangekit::ranging::RangingOutcome;
use uwb_rangekit::sts::{
    apply_cicada, apply_ghost_peak, AttackKind, AttackerModel, StsKey, StsSession, Verdict,
};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let key = StsKey::new(*b"0123456789abcdef", 0);
    let mut lock = StsSession::new(key);
    let injector = AttackerModel::new(AttackKind::PreambleInjection);

    // Forged frames: right preamble, random STS.
    let mut forged_accepted = 0;
    for _ in 0..1000 {
        let frame = injector.forge_frame(&mut rng, 11, lock.sts_bits());
        if lock.receive(&frame) == Verdict::Accept {
            forged_accepted += 1;
        }
    }
    println!("forged frames accepted: {forged_accepted}/1000");

    // A legitimate frame is accepted once; its replay is stale.
    let frame = lock.next_legitimate_frame(11, None);
    println!("legitimate: {:?}", lock.receive(&frame));
    println!("replayed:   {:?}", lock.receive(&injector.replay_frame(&frame)));

    // Ghost peak: occasional early path, shortening the distance.
    let ghost = AttackerModel::ghost_peak(0.05, 3.0).unwrap();
    let honest = RangingOutcome::from_meters(5.0);
    let outcomes: Vec<f64> = (0..10_000)
        .filter_map(|_| apply_ghost_peak(&mut rng, &ghost, honest).meters())
        .collect();
    let shortened = outcomes.iter().filter(|&&d| d < 5.0).count();
    let min = outcomes.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("ghost peak: {shortened}/10000 shortened, shortest {min:.2} m");

    // Cicada: jamming breaks exchanges and spreads the survivors.
    let cicada = AttackerModel::new(AttackKind::Cicada);
    let survivors: Vec<f64> = (0..10_000)
        .filter_map(|_| apply_cicada(&mut rng, &cicada, honest).meters())
        .collect();
    let mean = survivors.iter().sum::<f64>() / survivors.len() as f64;
    println!("cicada: {} of 10000 survived, mean {mean:.3} m", survivors.len());
}
