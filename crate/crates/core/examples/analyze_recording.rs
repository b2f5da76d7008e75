//! Metrics, reports and run-to-run comparison of campaign recordings.
//!
//! ```bash
//! cargo run --release --example analyze_recording -- [recording.zip]
//! ```
//!
//! Without an argument two runs of the reproducibility setup are simulated
//! and compared.

use std::path::Path;

use uwb_rangekit::campaign::{load_recording, run_campaign, CampaignOptions, Recording, Settings, SimulatedDevice, SweepPlan};
use uwb_rangekit::channel::{DeviceId, ProfileLibrary};
use uwb_rangekit::stats::{compare_recordings, compute_metrics, export_report, slice_summary, ExportFormat, MetricsOptions};

fn simulate(dir: &Path, seed: u64) -> Result<Recording, Box<dyn std::error::Error>> {
    let profile = ProfileLibrary::bundled().resolve(DeviceId::Dw3000, "gwen-repro", 0.5)?;
    let settings = Settings {
        plan: SweepPlan::default(),
        device: DeviceId::Dw3000.to_string(),
        remote_device: None,
        environment: "gwen-repro".into(),
        true_distance_m: 0.5,
        source: "simulated".into(),
        seed: Some(seed),
        complete: false,
    };
    let path = dir.join(format!("run{seed}.zip"));
    Ok(run_campaign(&mut SimulatedDevice::new(profile), settings, &path, CampaignOptions::default())?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("uwb-rangekit-analyze");
    std::fs::create_dir_all(&dir)?;

    let rec = match std::env::args().nth(1) {
        Some(p) => load_recording(p)?,
        None => simulate(&dir, 1)?,
    };
    let report = compute_metrics(&rec, &MetricsOptions::default())?;
    println!(
        "{} {} @ {} m: positions={} failed={} mae={:?} sd={:?} rmse={:?} accuracy={:?}",
        rec.settings.device,
        rec.settings.environment,
        report.true_distance_m,
        report.positions,
        report.failed_positions,
        report.mae_m,
        report.sd_m,
        report.rmse_m,
        report.accuracy_frac
    );
    for (fmt, name) in [(ExportFormat::Csv, "report.csv"), (ExportFormat::Json, "report.json"), (ExportFormat::SvgPolar, "polar.svg")] {
        export_report(&report, fmt, dir.join(name))?;
    }
    println!("reports in {}", dir.display());

    let s = slice_summary(&rec, 90.0, 10)?;
    println!("phi=90 slice: n={} mean={:?} sd={:?}", s.n, s.mean_m, s.sd_m);

    if std::env::args().nth(1).is_none() {
        let rerun = simulate(&dir, 4)?;
        let c = compare_recordings(&rec, &rerun, 10)?;
        println!("run 1 vs run 4: mean delta {:?} m, sd delta {:?} m", c.mean_delta_m, c.sd_delta_m);
    }
    Ok(())
}
