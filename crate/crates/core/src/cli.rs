//! Command-line front end: `campaign`, `analyze` and `pke`.
//!
//! Exit codes: 0 ok, 2 usage or configuration, 3 data, 4 policy-triggered.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::campaign::{run_campaign, CampaignError, CampaignOptions, Recording, Settings, SimulatedDevice, SweepPlan};
use crate::channel::{load_profiles, ChannelError, DeviceId, ProfileLibrary};
use crate::pke::{simulate_entry_scenario, PkePolicy, Scenario, ScenarioError};
use crate::stats::{self, MetricsOptions, MetricsReport, StatsError, DEFAULT_MIN_SAMPLES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_POLICY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "uwb-rangekit", version, about = "UWB ranging simulation, campaigns, analysis and entry decisions")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// RNG seed; required by the simulating subcommands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Profile library (JSON). Defaults to the bundled profiles.
    #[arg(long, global = true, env = "UWB_RANGEKIT_PROFILES")]
    pub profiles: Option<PathBuf>,
    /// Output path: recording for `campaign`, report directory for
    /// `analyze`, transcript for `pke` (stdout if absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress the summary line.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep the positioner over a simulated link and write a recording.
    Campaign(CampaignArgs),
    /// Compute metrics for a recording and write CSV, JSON and SVG reports.
    Analyze(AnalyzeArgs),
    /// Run a keyless-entry scenario and write its decision transcript.
    Pke(PkeArgs),
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    #[arg(long)]
    pub device: String,
    #[arg(long)]
    pub environment: String,
    /// True distance between the devices, meters.
    #[arg(long)]
    pub distance: f64,
    /// Sweep plan overrides, e.g. `theta-step=90 phi-step=90`.
    #[arg(long, value_name = "KEY=VALUE", num_args = 1..)]
    pub plan: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub recording: PathBuf,
    /// Ground truth; defaults to the distance stored in the recording.
    #[arg(long)]
    pub true_distance: Option<f64>,
    /// Accuracy band half-width, meters.
    #[arg(long, default_value_t = stats::DEFAULT_ACCURACY_BAND_M)]
    pub band: f64,
    /// Emit an SVG polar plot of these arm angles.
    #[arg(long, num_args = 1..)]
    pub slice_phi: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PkeArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Policy overrides, e.g. `window=15 attack-k=3`.
    #[arg(long, value_name = "KEY=VALUE", num_args = 1..)]
    pub policy: Vec<String>,
    /// Exit with status 4 if the session was suspended.
    #[arg(long)]
    pub fail_on_suspend: bool,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(m: impl Display) -> Self {
        Self { code: EXIT_USAGE, message: m.to_string() }
    }
    fn data(m: impl Display) -> Self {
        Self { code: EXIT_DATA, message: m.to_string() }
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32, Failure> {
    match &cli.command {
        Command::Campaign(a) => cmd_campaign(&cli.global, a),
        Command::Analyze(a) => cmd_analyze(&cli.global, a),
        Command::Pke(a) => cmd_pke(&cli.global, a),
    }
}

fn split_kv(s: &str) -> Result<(&str, &str), Failure> {
    s.split_once('=')
        .ok_or_else(|| Failure::usage(format!("override `{s}` is not KEY=VALUE")))
}

fn profiles(g: &Global) -> Result<ProfileLibrary, Failure> {
    match &g.profiles {
        Some(p) => load_profiles(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display()))),
        None => Ok(ProfileLibrary::bundled()),
    }
}

fn seed(g: &Global) -> Result<u64, Failure> {
    g.seed
        .ok_or_else(|| Failure::usage("--seed is required for simulation"))
}

fn min_samples(plan: &SweepPlan) -> usize {
    DEFAULT_MIN_SAMPLES.min(plan.samples_per_position as usize)
}

fn cmd_campaign(g: &Global, a: &CampaignArgs) -> Result<i32, Failure> {
    let device: DeviceId = a.device.parse().map_err(Failure::usage)?;
    let mut plan = SweepPlan::default();
    for kv in &a.plan {
        let (k, v) = split_kv(kv)?;
        plan.apply_override(k, v).map_err(Failure::usage)?;
    }
    plan.validate().map_err(Failure::usage)?;
    let profile = profiles(g)?
        .resolve(device, &a.environment, a.distance)
        .map_err(Failure::usage)?;
    let seed = seed(g)?;

    let settings = Settings {
        plan,
        device: device.to_string(),
        remote_device: None,
        environment: a.environment.clone(),
        true_distance_m: a.distance,
        source: "simulated".into(),
        seed: Some(seed),
        complete: false,
    };
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("recording.zip"));
    let mut source = SimulatedDevice::new(profile);
    let rec = run_campaign(&mut source, settings, &out, CampaignOptions::default()).map_err(|e| match e {
        CampaignError::Plan(_) | CampaignError::SettingsMismatch(_) => Failure::usage(e),
        _ => Failure::data(e),
    })?;

    if !g.quiet {
        let r = metrics(&rec, None, stats::DEFAULT_ACCURACY_BAND_M)?;
        println!(
            "positions={} samples={} failed={} ({:.1}%) -> {}",
            r.positions,
            rec.sample_count(),
            r.failed_positions,
            100.0 * r.failure_frac,
            out.display()
        );
    }
    Ok(EXIT_OK)
}

fn metrics(rec: &Recording, truth: Option<f64>, band: f64) -> Result<MetricsReport, Failure> {
    let opts = MetricsOptions {
        true_distance_m: truth,
        accuracy_band_m: band,
        min_samples: min_samples(rec.plan()),
    };
    stats::compute_metrics(rec, &opts).map_err(Failure::usage)
}

fn fmt_m(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn cmd_analyze(g: &Global, a: &AnalyzeArgs) -> Result<i32, Failure> {
    let rec = crate::campaign::load_recording(&a.recording)
        .map_err(|e| Failure::data(format!("{}: {e}", a.recording.display())))?;
    let report = metrics(&rec, a.true_distance, a.band)?;

    let mut slices = Vec::new();
    for &phi in &a.slice_phi {
        let s = report
            .slice(phi)
            .ok_or_else(|| Failure::usage(StatsError::PhiNotInPlan(phi)))?;
        slices.push(s.clone());
    }

    let dir = match &g.out {
        Some(d) => d.clone(),
        None => a.recording.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(if dir.as_os_str().is_empty() { Path::new(".") } else { &dir })
        .map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    let stem = a
        .recording
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recording".into());
    write(&dir.join(format!("{stem}.report.csv")), &stats::render_csv(&report).map_err(Failure::data)?)?;
    write(&dir.join(format!("{stem}.report.json")), &stats::render_json(&report))?;
    if !slices.is_empty() {
        write(&dir.join(format!("{stem}.polar.svg")), &stats::render_svg_polar(&slices))?;
    }

    if !g.quiet {
        println!(
            "positions={} failed={} samples={} mae={} sd={} rmse={} accuracy={} failure={:.3}",
            report.positions,
            report.failed_positions,
            report.samples,
            fmt_m(report.mae_m),
            fmt_m(report.sd_m),
            fmt_m(report.rmse_m),
            fmt_m(report.accuracy_frac),
            report.failure_frac
        );
    }
    Ok(EXIT_OK)
}

fn cmd_pke(g: &Global, a: &PkeArgs) -> Result<i32, Failure> {
    let text = std::fs::read_to_string(&a.scenario)
        .map_err(|e| Failure::usage(format!("{}: {e}", a.scenario.display())))?;
    let scenario = Scenario::from_json(&text).map_err(Failure::usage)?;
    let mut policy = PkePolicy::default();
    for kv in &a.policy {
        let (k, v) = split_kv(kv)?;
        policy.apply_override(k, v).map_err(Failure::usage)?;
    }
    policy.validate().map_err(Failure::usage)?;
    let library = profiles(g)?;
    let seed = seed(g)?;

    let transcript = simulate_entry_scenario(&scenario, policy, seed, &library).map_err(|e| match e {
        ScenarioError::Channel(ChannelError::Io(_)) => Failure::data(e),
        _ => Failure::usage(e),
    })?;
    let jsonl = transcript.to_jsonl();
    match &g.out {
        Some(p) => write(p, &jsonl)?,
        None => print!("{jsonl}"),
    }

    let suspends = transcript.suspends();
    if !g.quiet {
        let ttu = transcript
            .time_to_unlock_s()
            .map(|t| format!("{t:.2}s"))
            .unwrap_or_else(|| "never".into());
        eprintln!(
            "cycles={} unlocks={} suspends={} first_unlock={} rejected_frames={}",
            transcript.entries.len(),
            transcript.unlocks(),
            suspends,
            ttu,
            transcript.rejected_frames
        );
    }
    Ok(if a.fail_on_suspend && suspends > 0 { EXIT_POLICY } else { EXIT_OK })
}
