use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EntryEngine, PkeDecision, PkePolicy, PkeSession, PkeState, PolicyError};
use crate::channel::{sample_measurement, DeviceId, Measurement, Position, ProfileLibrary};
use crate::ranging::{range_measured, ClockModel, ExchangeConfig, FailureReason, RangingOutcome};
use crate::sts::{apply_cicada, apply_ghost_peak, AttackKind, AttackerModel, Frame, StsKey, StsSession, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("malformed scenario at {pointer}: {message}")]
    Parse { pointer: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
}

/// Key holder position over time; distances are interpolated linearly and
/// held after the last waypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Gaussian {
        #[serde(default)]
        bias_m: f64,
        #[serde(default)]
        sigma_m: f64,
    },
    /// A calibrated profile, re-targeted to the current distance.
    Profile {
        device: DeviceId,
        environment: String,
        #[serde(default = "default_orientation")]
        position: Position,
    },
}

fn default_orientation() -> Position {
    Position::from_centidegrees(0, 0).expect("origin is valid")
}

/// Replace the outcome of one cycle, e.g. to inject attack samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedSample {
    pub cycle: usize,
    /// `None` forces a failed exchange.
    pub distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub cycle_s: f64,
    pub cycles: usize,
    pub walk: Vec<Waypoint>,
    pub channel: ChannelSpec,
    #[serde(default)]
    pub attacker: Option<AttackerModel>,
    #[serde(default)]
    pub forced: Vec<ForcedSample>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            pointer: crate::json_pointer(e.path()),
            message: e.inner().to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.cycle_s.is_finite() && self.cycle_s > 0.0) {
            return err("cycle_s must be positive".into());
        }
        if self.walk.is_empty() {
            return err("walk needs at least one waypoint".into());
        }
        for (i, w) in self.walk.iter().enumerate() {
            if !(w.t.is_finite() && w.distance_m.is_finite() && w.distance_m >= 0.0) {
                return err(format!("waypoint {i} must have finite time and non-negative distance"));
            }
            if i > 0 && w.t <= self.walk[i - 1].t {
                return err(format!("waypoint {i} is not after its predecessor"));
            }
        }
        if let ChannelSpec::Gaussian { bias_m, sigma_m } = &self.channel {
            if !(bias_m.is_finite() && sigma_m.is_finite() && *sigma_m >= 0.0) {
                return err("gaussian channel needs finite bias and non-negative sigma".into());
            }
        }
        if let Some(a) = &self.attacker {
            a.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        if let Some(f) = self.forced.iter().find(|f| f.cycle >= self.cycles) {
            return err(format!("forced cycle {} is beyond the {} cycles", f.cycle, self.cycles));
        }
        Ok(())
    }

    pub fn distance_at(&self, t: f64) -> f64 {
        let w = &self.walk;
        if t <= w[0].t {
            return w[0].distance_m;
        }
        for pair in w.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if t <= b.t {
                return a.distance_m + (b.distance_m - a.distance_m) * (t - a.t) / (b.t - a.t);
            }
        }
        w[w.len() - 1].distance_m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub scenario: String,
    pub seed: u64,
    pub policy: PkePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub t: f64,
    /// Distance the lock computed; `null` for a failed exchange.
    pub raw: Option<f64>,
    pub state: PkeState,
    pub decision: PkeDecision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub entries: Vec<TranscriptEntry>,
    /// Injected frames the STS check discarded.
    pub rejected_frames: u64,
}

impl Transcript {
    pub fn unlocks(&self) -> usize {
        self.entries.iter().filter(|e| e.decision == PkeDecision::Unlock).count()
    }

    pub fn suspends(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.decision, PkeDecision::Suspend(_)))
            .count()
    }

    pub fn time_to_unlock_s(&self) -> Option<f64> {
        self.entries.iter().find(|e| e.decision == PkeDecision::Unlock).map(|e| e.t)
    }

    /// Header line, then one line per cycle.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// Drive a lock-side [`PkeSession`] through a scenario. Each cycle is a
/// tick-level DS-TWR exchange whose three frames are STS-checked; attacker
/// frames that fail the check are discarded before ranging.
pub fn simulate_entry_scenario(
    scenario: &Scenario,
    policy: PkePolicy,
    seed: u64,
    profiles: &ProfileLibrary,
) -> Result<Transcript, ScenarioError> {
    let mut engine = PkeSession::new(policy)?;
    simulate_with_engine(scenario, policy, seed, profiles, &mut engine)
}

/// As [`simulate_entry_scenario`], with any engine.
pub fn simulate_with_engine(
    scenario: &Scenario,
    policy: PkePolicy,
    seed: u64,
    profiles: &ProfileLibrary,
    engine: &mut dyn EntryEngine,
) -> Result<Transcript, ScenarioError> {
    scenario.validate()?;
    if let ChannelSpec::Profile { device, environment, .. } = &scenario.channel {
        // fail early on a missing cell
        match profiles.resolve(*device, environment, scenario.distance_at(0.0).max(0.01)) {
            Ok(_) | Err(crate::channel::ChannelError::BeyondCap { .. }) => {}
            Err(other) => return Err(other.into()),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut key = [0u8; 16];
    rng.fill(&mut key);
    let start = StsKey::new(key, 0);
    let mut tx_key = start;
    let mut rx = StsSession::new(start);
    let initiator = ClockModel::with_skew(3.0).expect("valid skew");
    let responder = ClockModel::with_skew(-5.0).expect("valid skew");
    let exchange = ExchangeConfig::default();
    let preamble = exchange.preamble_code.unwrap_or(11);

    let mut entries = Vec::with_capacity(scenario.cycles);
    let mut rejected_frames = 0;
    for cycle in 0..scenario.cycles {
        let t = cycle as f64 * scenario.cycle_s;
        let truth = scenario.distance_at(t);

        let measured = match &scenario.channel {
            ChannelSpec::Gaussian { bias_m, sigma_m } => {
                let noise = if *sigma_m > 0.0 {
                    Normal::new(0.0, *sigma_m).expect("finite sigma").sample(&mut rng)
                } else {
                    0.0
                };
                Measurement::Distance(truth + bias_m + noise)
            }
            ChannelSpec::Profile {
                device,
                environment,
                position,
            } => match profiles.resolve(*device, environment, truth) {
                Ok(p) => sample_measurement(&p, *position, &mut rng),
                Err(_) => Measurement::Fail,
            },
        };

        let mut sts_ok = true;
        for _ in 0..3 {
            if let Some(a) = scenario.attacker.filter(|a| a.kind == AttackKind::PreambleInjection) {
                let forged = a.forge_frame(&mut rng, preamble, rx.sts_bits());
                if rx.receive(&forged) != Verdict::Accept {
                    rejected_frames += 1;
                }
            }
            let frame = Frame::legitimate(&tx_key, preamble, None);
            tx_key = tx_key.next();
            sts_ok &= rx.receive(&frame) == Verdict::Accept;
        }

        let mut outcome = match measured {
            Measurement::Fail => RangingOutcome::failed(FailureReason::NoSignal),
            _ if !sts_ok => RangingOutcome::failed(FailureReason::StsMismatch),
            Measurement::Distance(d) => {
                let phases = (rng.random(), rng.random());
                range_measured(&initiator, &responder, &exchange, truth, d, phases)
            }
        };
        if let Some(a) = &scenario.attacker {
            outcome = match a.kind {
                AttackKind::GhostPeak => apply_ghost_peak(&mut rng, a, outcome),
                AttackKind::Cicada => apply_cicada(&mut rng, a, outcome),
                AttackKind::PreambleInjection => outcome,
            };
        }
        if let Some(f) = scenario.forced.iter().rev().find(|f| f.cycle == cycle) {
            outcome = match f.distance_m {
                Some(d) => RangingOutcome::from_meters(d),
                None => RangingOutcome::failed(FailureReason::NoSignal),
            };
        }

        let decision = engine.ingest(&outcome);
        entries.push(TranscriptEntry {
            t,
            raw: outcome.meters(),
            state: engine.state(),
            decision,
        });
    }

    Ok(Transcript {
        header: TranscriptHeader {
            scenario: scenario.name.clone(),
            seed,
            policy,
        },
        entries,
        rejected_frames,
    })
}
