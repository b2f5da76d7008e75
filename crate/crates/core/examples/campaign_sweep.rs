//! Sweep the positioner over a simulated link, interrupt the campaign
//! part-way and resume it from the checkpoint.
//!
//! ```bash
//! cargo run --release --example campaign_sweep -- out.zip
//! ```

use std::time::Duration;

use uwb_rangekit::campaign::{
    load_recording, run_campaign, CampaignOptions, Sample, SessionConfig, Settings, SimulatedDevice, Source,
    SourceError, SweepPlan,
};
use uwb_rangekit::channel::{DeviceId, Position, ProfileLibrary};

/// Wraps a source and pulls the plug after `limit` positions.
struct Flaky<S> {
    inner: S,
    limit: usize,
}

impl<S: Source> Source for Flaky<S> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn start_session(&mut self, cfg: &SessionConfig) -> Result<(), SourceError> {
        self.inner.start_session(cfg)
    }
    fn set_position(&mut self, index: usize, pos: Position) -> Result<(), SourceError> {
        if index >= self.limit {
            return Err(SourceError::Io(std::io::ErrorKind::BrokenPipe.into()));
        }
        self.inner.set_position(index, pos)
    }
    fn collect(&mut self, n: usize, timeout_s: f64) -> Result<Vec<Sample>, SourceError> {
        self.inner.collect(n, timeout_s)
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "campaign.zip".into()));
    let _ = std::fs::remove_file(&out);

    let profile = ProfileLibrary::bundled().resolve(DeviceId::GalaxyS21u, "lab", 5.0)?;
    let settings = Settings {
        plan: SweepPlan::default(),
        device: DeviceId::GalaxyS21u.to_string(),
        remote_device: None,
        environment: "lab".into(),
        true_distance_m: 5.0,
        source: "simulated".into(),
        seed: Some(42),
        complete: false,
    };
    let opts = CampaignOptions { checkpoint_interval: Duration::ZERO };

    let mut flaky = Flaky { inner: SimulatedDevice::new(profile.clone()), limit: 300 };
    match run_campaign(&mut flaky, settings.clone(), &out, opts) {
        Ok(_) => unreachable!("the source is cut after 300 positions"),
        Err(e) => println!("interrupted: {e}"),
    }
    let partial = load_recording(&out)?;
    println!("checkpoint holds {} of {} positions", partial.data.len(), settings.plan.position_count());

    let rec = run_campaign(&mut SimulatedDevice::new(profile), settings, &out, opts)?;
    println!(
        "resumed: {} positions, {} samples, complete={} -> {}",
        rec.data.len(),
        rec.sample_count(),
        rec.is_complete(),
        out.display()
    );
    Ok(())
}
