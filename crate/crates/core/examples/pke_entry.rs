//! Passive keyless entry decisions for the bundled scenarios.
//!
//! ```bash
//! cargo run --release --example pke_entry
//! ```

use uwb_rangekit::channel::ProfileLibrary;
use uwb_rangekit::pke::{simulate_entry_scenario, PkeDecision, PkePolicy, Scenario};

const SCENARIOS: [(&str, &str); 4] = [
    ("honest_approach", include_str!("../scenarios/honest_approach.json")),
    ("forced_negatives", include_str!("../scenarios/forced_negatives.json")),
    ("ghost_peak_stationary", include_str!("../scenarios/ghost_peak_stationary.json")),
    ("preamble_injection", include_str!("../scenarios/preamble_injection.json")),
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let library = ProfileLibrary::bundled();
    for (name, text) in SCENARIOS {
        let scenario = Scenario::from_json(text)?;
        let t = simulate_entry_scenario(&scenario, PkePolicy::default(), 7, &library)?;
        let first_event = t
            .entries
            .iter()
            .find(|e| !matches!(e.decision, PkeDecision::NoAction(_)))
            .map(|e| format!("{:?} at t={:.1}s", e.decision, e.t))
            .unwrap_or_else(|| "no action".into());
        println!(
            "{name:>22}: cycles={} unlocks={} suspends={} rejected_frames={} first: {first_event}",
            t.entries.len(),
            t.unlocks(),
            t.suspends(),
            t.rejected_frames
        );
    }

    // A stricter lock: a longer window and a tighter threshold.
    let strict = PkePolicy { window: 20, unlock_threshold_m: 0.4, ..PkePolicy::default() };
    let t = simulate_entry_scenario(&Scenario::from_json(SCENARIOS[0].1)?, strict, 7, &library)?;
    println!("strict policy on honest_approach: first unlock {:?} s", t.time_to_unlock_s());
    Ok(())
}
