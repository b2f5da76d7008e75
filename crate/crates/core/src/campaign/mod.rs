//! Positioner-style sweep campaigns over pluggable measurement sources.

mod plan;
mod recording;
mod source;

pub use plan::{generate_sweep, PlanError, SweepPlan};
pub use recording::{
    load_recording, save_recording, PositionRecord, Recording, RecordingError, Sample, Settings, LOG_MEMBER,
    RECORDING_MEMBER, RECORDING_SCHEMA,
};
pub use source::{LinkStats, Replay, SerialDevice, SessionConfig, SimulatedDevice, Source, SourceError};

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("source failed after {completed} positions (partial recording kept): {source}")]
    Source { completed: usize, source: SourceError },
    #[error(transparent)]
    Recording(#[from] RecordingError),
    #[error("{0} holds a recording with different settings")]
    SettingsMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CampaignOptions {
    /// Save a checkpoint after a position once this much time has passed
    /// since the last save. Zero saves after every position.
    pub checkpoint_interval: Duration,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        Self {
            checkpoint_interval: Duration::from_secs(2),
        }
    }
}

fn same_run(a: &Settings, b: &Settings) -> bool {
    Settings { complete: false, ..a.clone() } == Settings { complete: false, ..b.clone() }
}

/// Sweep every planned position, collecting up to `samples_per_position`
/// samples within the per-position budget, and store the recording at
/// `output`.
///
/// A recording already at `output` with the same settings is resumed from
/// its last completed position; the finished archive is byte-identical to
/// an uninterrupted run. If the source fails, the partial recording is kept
/// (marked incomplete) and the error returned.
pub fn run_campaign(
    source: &mut dyn Source,
    settings: Settings,
    output: &Path,
    opts: CampaignOptions,
) -> Result<Recording, CampaignError> {
    let sweep = generate_sweep(&settings.plan)?;
    let settings = Settings {
        complete: false,
        ..settings
    };

    let mut rec = match load_recording(output) {
        Ok(existing) if same_run(&existing.settings, &settings) => existing,
        Ok(_) => return Err(CampaignError::SettingsMismatch(output.display().to_string())),
        Err(RecordingError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => Recording::new(settings.clone()),
        Err(e) => return Err(e.into()),
    };
    if rec.is_complete() {
        return Ok(rec);
    }

    let plan = settings.plan;
    let seed = settings.seed.unwrap_or(0);
    let fail = |rec: &mut Recording, e: SourceError| -> CampaignError {
        let completed = rec.data.len();
        match save_recording(rec, output) {
            Ok(()) => CampaignError::Source { completed, source: e },
            Err(save) => save.into(),
        }
    };
    if let Err(e) = source.start_session(&SessionConfig { plan, seed }) {
        return Err(fail(&mut rec, e));
    }

    let mut last_save = Instant::now();
    let start = rec.data.len();
    for (index, &pos) in sweep.iter().enumerate().skip(start) {
        let samples = match source
            .set_position(index, pos)
            .and_then(|()| source.collect(plan.samples_per_position as usize, plan.position_timeout_s))
        {
            Ok(s) => s,
            Err(e) => return Err(fail(&mut rec, e)),
        };
        let samples: Vec<Sample> = samples.into_iter().take(plan.samples_per_position as usize).collect();
        let log = rec.extras.get_or_insert_with(String::new);
        let _ = writeln!(log, "{index} theta={} phi={} samples={}", pos.theta_deg(), pos.phi_deg(), samples.len());
        rec.data.push(PositionRecord { position: pos, samples });
        if index + 1 < sweep.len() && last_save.elapsed() >= opts.checkpoint_interval {
            save_recording(&rec, output)?;
            last_save = Instant::now();
        }
    }
    rec.settings.complete = true;
    save_recording(&rec, output)?;
    Ok(rec)
}
