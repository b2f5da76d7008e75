//! Passive keyless entry decision engine.
//!
//! The lock keeps the window: every DS-TWR outcome it has validated is fed
//! to [`PkeSession::ingest`], which only acts on the mean of a full sliding
//! window, never on a single sample. Negative distances stay out of the
//! window but are counted, and several strongly negative values within the
//! look-back suspend the session.

mod scenario;

pub use scenario::{
    simulate_entry_scenario, simulate_with_engine, ChannelSpec, ForcedSample, Scenario, ScenarioError, Transcript, TranscriptEntry,
    TranscriptHeader, Waypoint,
};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::ranging::RangingOutcome;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid policy: {0}")]
pub struct PolicyError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PkePolicy {
    /// Sliding window length, in valid samples.
    pub window: usize,
    /// Ranging cycles before any decision is allowed.
    pub min_cycles: usize,
    pub unlock_threshold_m: f64,
    /// Samples below this never enter the window.
    pub negative_floor_m: f64,
    /// Raw values at or below this count as attack evidence.
    pub attack_negative_m: f64,
    pub attack_count_k: usize,
    /// Raw outcomes kept for attack detection.
    pub attack_lookback: usize,
    /// Largest allowed change of the window mean between cycles; `None`
    /// disables the check.
    pub fluctuation_bound_m: Option<f64>,
}

impl Default for PkePolicy {
    fn default() -> Self {
        Self {
            window: 10,
            min_cycles: 10,
            unlock_threshold_m: 0.5,
            negative_floor_m: 0.0,
            attack_negative_m: -1.0,
            attack_count_k: 3,
            attack_lookback: 30,
            fluctuation_bound_m: Some(1.0),
        }
    }
}

impl PkePolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let err = |m: &str| Err(PolicyError(m.into()));
        if self.window == 0 {
            return err("window must be at least 1");
        }
        if self.attack_count_k == 0 || self.attack_lookback == 0 {
            return err("attack count and look-back must be at least 1");
        }
        if ![self.unlock_threshold_m, self.negative_floor_m, self.attack_negative_m]
            .iter()
            .all(|v| v.is_finite())
        {
            return err("thresholds must be finite");
        }
        if !(self.attack_negative_m < self.negative_floor_m && self.negative_floor_m < self.unlock_threshold_m) {
            return err("thresholds must satisfy attack-negative < negative-floor < unlock");
        }
        if let Some(b) = self.fluctuation_bound_m {
            if !(b.is_finite() && b > 0.0) {
                return err("fluctuation bound must be positive");
            }
        }
        Ok(())
    }

    /// Apply one `key=value` override as accepted by the command line.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), PolicyError> {
        let real = || value.parse::<f64>().map_err(|_| PolicyError(format!("{key}: `{value}` is not a number")));
        let count = || value.parse::<usize>().map_err(|_| PolicyError(format!("{key}: `{value}` is not a count")));
        match key {
            "window" => self.window = count()?,
            "min-cycles" => self.min_cycles = count()?,
            "unlock" => self.unlock_threshold_m = real()?,
            "negative-floor" => self.negative_floor_m = real()?,
            "attack-negative" => self.attack_negative_m = real()?,
            "attack-k" => self.attack_count_k = count()?,
            "lookback" => self.attack_lookback = count()?,
            "fluctuation" if value == "off" => self.fluctuation_bound_m = None,
            "fluctuation" => self.fluctuation_bound_m = Some(real()?),
            other => {
                return Err(PolicyError(format!(
                    "unknown policy key `{other}` (window, min-cycles, unlock, negative-floor, attack-negative, attack-k, lookback, fluctuation)"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PkeState {
    Collecting,
    Ready,
    Unlocked,
    Suspended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldReason {
    /// Not enough cycles or window not yet full.
    Collecting,
    AboveThreshold,
    AlreadyUnlocked,
    /// The sample was below the negative floor and was dropped.
    NegativeDropped,
    /// The exchange failed.
    NoSample,
    Suspended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuspendReason {
    AttackSuspected,
    Fluctuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum PkeDecision {
    NoAction(HoldReason),
    Unlock,
    Suspend(SuspendReason),
}

/// Anything that turns a stream of ranging outcomes into entry decisions.
pub trait EntryEngine {
    fn ingest(&mut self, outcome: &RangingOutcome) -> PkeDecision;
    fn state(&self) -> PkeState;
    /// Distances the next decision would average over.
    fn window_values(&self) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct PkeSession {
    policy: PkePolicy,
    valid_window: VecDeque<f64>,
    raw_history: VecDeque<Option<f64>>,
    state: PkeState,
    cycles: usize,
    last_mean: Option<f64>,
}

impl PkeSession {
    pub fn new(policy: PkePolicy) -> Result<Self, PolicyError> {
        policy.validate()?;
        Ok(Self {
            policy,
            valid_window: VecDeque::with_capacity(policy.window),
            raw_history: VecDeque::with_capacity(policy.attack_lookback),
            state: PkeState::Collecting,
            cycles: 0,
            last_mean: None,
        })
    }

    pub fn policy(&self) -> &PkePolicy {
        &self.policy
    }

    pub fn cycles(&self) -> usize {
        self.cycles
    }

    /// Leave suspension and start collecting from scratch.
    pub fn reset(&mut self) {
        *self = Self::new(self.policy).expect("policy was validated");
    }

    pub fn window_mean(&self) -> Option<f64> {
        (self.valid_window.len() == self.policy.window)
            .then(|| self.valid_window.iter().sum::<f64>() / self.valid_window.len() as f64)
    }

    fn attack_evidence(&self) -> usize {
        self.raw_history
            .iter()
            .filter(|r| matches!(r, Some(d) if *d <= self.policy.attack_negative_m))
            .count()
    }
}

impl EntryEngine for PkeSession {
    fn ingest(&mut self, outcome: &RangingOutcome) -> PkeDecision {
        if self.state == PkeState::Suspended {
            return PkeDecision::NoAction(HoldReason::Suspended);
        }
        self.cycles += 1;
        let raw = outcome.meters();

        if self.raw_history.len() == self.policy.attack_lookback {
            self.raw_history.pop_front();
        }
        self.raw_history.push_back(raw);
        if self.attack_evidence() >= self.policy.attack_count_k {
            self.state = PkeState::Suspended;
            return PkeDecision::Suspend(SuspendReason::AttackSuspected);
        }

        let hold = match raw {
            None => Some(HoldReason::NoSample),
            Some(d) if d < self.policy.negative_floor_m => Some(HoldReason::NegativeDropped),
            Some(d) => {
                if self.valid_window.len() == self.policy.window {
                    self.valid_window.pop_front();
                }
                self.valid_window.push_back(d);
                None
            }
        };

        let Some(mean) = self.window_mean() else {
            return PkeDecision::NoAction(hold.unwrap_or(HoldReason::Collecting));
        };
        if let (Some(bound), Some(prev)) = (self.policy.fluctuation_bound_m, self.last_mean) {
            if (mean - prev).abs() > bound {
                self.state = PkeState::Suspended;
                return PkeDecision::Suspend(SuspendReason::Fluctuation);
            }
        }
        self.last_mean = Some(mean);

        if self.state == PkeState::Collecting && self.cycles >= self.policy.min_cycles {
            self.state = PkeState::Ready;
        }
        let below = mean < self.policy.unlock_threshold_m;
        match self.state {
            PkeState::Collecting => PkeDecision::NoAction(HoldReason::Collecting),
            PkeState::Ready if below => {
                self.state = PkeState::Unlocked;
                PkeDecision::Unlock
            }
            PkeState::Ready => PkeDecision::NoAction(hold.unwrap_or(HoldReason::AboveThreshold)),
            PkeState::Unlocked => {
                if !below {
                    // walked away: the next approach may unlock again
                    self.state = PkeState::Ready;
                    PkeDecision::NoAction(hold.unwrap_or(HoldReason::AboveThreshold))
                } else {
                    PkeDecision::NoAction(HoldReason::AlreadyUnlocked)
                }
            }
            PkeState::Suspended => unreachable!("handled on entry"),
        }
    }

    fn state(&self) -> PkeState {
        self.state
    }

    fn window_values(&self) -> Vec<f64> {
        self.valid_window.iter().copied().collect()
    }
}
