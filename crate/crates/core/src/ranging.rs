//! Two-way ranging: device clock models, the DS-TWR / SS-TWR message
//! exchange, and the distance estimators.
//!
//! Timestamps are integer device ticks on a 40-bit wrapping counter, as on
//! DW3000-class transceivers. Every interval is taken by wrapping subtraction
//! inside one device's clock domain and converted to seconds with that
//! device's nominal tick length; the estimator never mixes raw ticks from
//! two clocks.
//!
//! The double-sided estimator is
//!
//! ```text
//!        T_round1 * T_round2 - T_reply1 * T_reply2
//! ToF = -------------------------------------------
//!        T_round1 + T_round2 + T_reply1 + T_reply2
//! ```
//!
//! The denominator sums both rounds *and* both replies. Writing it as
//! `2 * (T_round1 + T_round2)` does not recover the time of flight even for a
//! drift-free symmetric exchange.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// DW3000 timestamp resolution (15.65 ps).
pub const DEFAULT_TICK_SECONDS: f64 = 15.65e-12;

/// Width of the hardware timestamp counter.
pub const COUNTER_BITS: u32 = 40;

/// Mask for the 40-bit counter.
pub const COUNTER_MASK: u64 = (1 << COUNTER_BITS) - 1;

/// Hard bound on accepted oscillator error.
pub const MAX_SKEW_PPM: f64 = 100.0;

/// Longest interval that unwraps unambiguously on a 40-bit counter.
const MAX_INTERVAL_TICKS: i64 = 1 << (COUNTER_BITS - 1);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RangingError {
    #[error("tick length must be positive and finite, got {0}")]
    InvalidTick(f64),
    #[error("clock skew {0} ppm exceeds the ±{MAX_SKEW_PPM} ppm bound")]
    SkewOutOfRange(f64),
    #[error("clock phase must lie in [0, 1), got {0}")]
    InvalidPhase(f64),
    #[error("reply delay must be positive")]
    ZeroReplyDelay,
    #[error("channel {0} is not a supported HRP channel (5, 6, 8, 9)")]
    UnsupportedChannel(u8),
}

/// Why an exchange did not yield a distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// An interval does not fit the 40-bit counter.
    Overflow,
    /// Timestamps violate protocol ordering or the estimator denominator is not positive.
    DegenerateExchange,
    /// A frame carried an unexpected STS and was discarded.
    StsMismatch,
    /// The radio link did not deliver the frame.
    NoSignal,
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FailureReason::Overflow => "overflow",
            FailureReason::DegenerateExchange => "degenerate_exchange",
            FailureReason::StsMismatch => "sts_mismatch",
            FailureReason::NoSignal => "no_signal",
        };
        f.write_str(s)
    }
}

/// A free-running device oscillator.
///
/// Local count at true time `t` is
/// `offset_ticks + phase + t * (1 + skew_ppm * 1e-6) / tick_seconds`;
/// timestamps latch it to whole ticks, reduced modulo 2^40.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    pub offset_ticks: i64,
    pub skew_ppm: f64,
    pub tick_seconds: f64,
    /// Fractional tick phase at true time zero, in `[0, 1)`.
    #[serde(default)]
    pub phase: f64,
}

impl Default for ClockModel {
    fn default() -> Self {
        Self {
            offset_ticks: 0,
            skew_ppm: 0.0,
            tick_seconds: DEFAULT_TICK_SECONDS,
            phase: 0.0,
        }
    }
}

impl ClockModel {
    pub fn new(offset_ticks: i64, skew_ppm: f64, tick_seconds: f64) -> Result<Self, RangingError> {
        let clock = Self {
            offset_ticks,
            skew_ppm,
            tick_seconds,
            phase: 0.0,
        };
        clock.validate()?;
        Ok(clock)
    }

    /// Ideal clock with only a frequency error.
    pub fn with_skew(skew_ppm: f64) -> Result<Self, RangingError> {
        Self::new(0, skew_ppm, DEFAULT_TICK_SECONDS)
    }

    pub fn phase(mut self, phase: f64) -> Result<Self, RangingError> {
        self.phase = phase;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), RangingError> {
        if !(self.tick_seconds.is_finite() && self.tick_seconds > 0.0) {
            return Err(RangingError::InvalidTick(self.tick_seconds));
        }
        if !self.skew_ppm.is_finite() || self.skew_ppm.abs() > MAX_SKEW_PPM {
            return Err(RangingError::SkewOutOfRange(self.skew_ppm));
        }
        if !(0.0..1.0).contains(&self.phase) {
            return Err(RangingError::InvalidPhase(self.phase));
        }
        Ok(())
    }

    fn rate(&self) -> f64 {
        1.0 + self.skew_ppm * 1e-6
    }

    /// Continuous local count (excluding the integer offset) at true time `t`.
    fn count_at(&self, t: f64) -> f64 {
        self.phase + t * self.rate() / self.tick_seconds
    }

    /// True time at which the local count reaches `count`.
    fn time_of(&self, count: i64) -> f64 {
        (count as f64 - self.phase) * self.tick_seconds / self.rate()
    }

    fn stamp(&self, count: i64) -> u64 {
        (self.offset_ticks.wrapping_add(count)).rem_euclid(1 << COUNTER_BITS) as u64
    }

    /// Distance in metres covered by light during one tick.
    pub fn quantization_m(&self) -> f64 {
        self.tick_seconds * SPEED_OF_LIGHT
    }
}

/// Which device recorded a timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Initiator,
    Responder,
}

/// The six DS-TWR timestamps of one exchange.
///
/// `tx_poll`, `rx_resp` and `tx_final` are initiator ticks; `rx_poll`,
/// `tx_resp` and `rx_final` are responder ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampSet {
    pub tx_poll: u64,
    pub rx_poll: u64,
    pub tx_resp: u64,
    pub rx_resp: u64,
    pub tx_final: u64,
    pub rx_final: u64,
}

/// Ticks elapsed from `from` to `to` on the wrapping counter.
pub fn counter_delta(to: u64, from: u64) -> u64 {
    to.wrapping_sub(from) & COUNTER_MASK
}

impl TimestampSet {
    pub const OWNERS: [(&'static str, Owner); 6] = [
        ("tx_poll", Owner::Initiator),
        ("rx_poll", Owner::Responder),
        ("tx_resp", Owner::Responder),
        ("rx_resp", Owner::Initiator),
        ("tx_final", Owner::Initiator),
        ("rx_final", Owner::Responder),
    ];

    /// Initiator: poll sent → response received.
    pub fn round1_ticks(&self) -> u64 {
        counter_delta(self.rx_resp, self.tx_poll)
    }

    /// Responder: poll received → response sent.
    pub fn reply1_ticks(&self) -> u64 {
        counter_delta(self.tx_resp, self.rx_poll)
    }

    /// Responder: response sent → final received.
    pub fn round2_ticks(&self) -> u64 {
        counter_delta(self.rx_final, self.tx_resp)
    }

    /// Initiator: response received → final sent.
    pub fn reply2_ticks(&self) -> u64 {
        counter_delta(self.tx_final, self.rx_resp)
    }

    /// The poll/response half used by single-sided ranging.
    pub fn single_sided(&self) -> SsTimestamps {
        SsTimestamps {
            tx_poll: self.tx_poll,
            rx_poll: self.rx_poll,
            tx_resp: self.tx_resp,
            rx_resp: self.rx_resp,
        }
    }

    /// Shift every timestamp recorded by `owner` by `ticks` (mod 2^40).
    pub fn shifted(mut self, owner: Owner, ticks: u64) -> Self {
        let shift = |v: &mut u64| *v = v.wrapping_add(ticks) & COUNTER_MASK;
        match owner {
            Owner::Initiator => {
                shift(&mut self.tx_poll);
                shift(&mut self.rx_resp);
                shift(&mut self.tx_final);
            }
            Owner::Responder => {
                shift(&mut self.rx_poll);
                shift(&mut self.tx_resp);
                shift(&mut self.rx_final);
            }
        }
        self
    }
}

/// First four timestamps of an exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsTimestamps {
    pub tx_poll: u64,
    pub rx_poll: u64,
    pub tx_resp: u64,
    pub rx_resp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RangingStatus {
    Distance { meters: f64 },
    Failed { reason: FailureReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangingOutcome {
    pub status: RangingStatus,
    pub raw: Option<TimestampSet>,
    pub tof_seconds: Option<f64>,
}

impl RangingOutcome {
    pub fn from_tof(tof_seconds: f64, raw: Option<TimestampSet>) -> Self {
        Self {
            status: RangingStatus::Distance {
                meters: tof_seconds * SPEED_OF_LIGHT,
            },
            raw,
            tof_seconds: Some(tof_seconds),
        }
    }

    /// Outcome carrying only a distance, e.g. from a measurement source.
    pub fn from_meters(meters: f64) -> Self {
        Self::from_tof(meters / SPEED_OF_LIGHT, None)
    }

    pub fn failed(reason: FailureReason) -> Self {
        Self {
            status: RangingStatus::Failed { reason },
            raw: None,
            tof_seconds: None,
        }
    }

    pub fn meters(&self) -> Option<f64> {
        match self.status {
            RangingStatus::Distance { meters } => Some(meters),
            RangingStatus::Failed { .. } => None,
        }
    }

    pub fn is_success(&self) -> bool {
        self.meters().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangingMode {
    DsTwr,
    SsTwr,
}

/// Exchange parameters. Channel and preamble code are carried as metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeConfig {
    pub mode: RangingMode,
    /// Responder turnaround, responder ticks.
    pub responder_reply_ticks: u64,
    /// Initiator turnaround, initiator ticks.
    pub initiator_reply_ticks: u64,
    pub channel: Option<u8>,
    pub preamble_code: Option<u8>,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        let one_ms = (1e-3 / DEFAULT_TICK_SECONDS).round() as u64;
        Self {
            mode: RangingMode::DsTwr,
            responder_reply_ticks: one_ms,
            initiator_reply_ticks: one_ms,
            channel: Some(9),
            preamble_code: Some(11),
        }
    }
}

impl ExchangeConfig {
    pub fn symmetric(reply_ticks: u64) -> Self {
        Self {
            responder_reply_ticks: reply_ticks,
            initiator_reply_ticks: reply_ticks,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RangingError> {
        if self.responder_reply_ticks == 0 || self.initiator_reply_ticks == 0 {
            return Err(RangingError::ZeroReplyDelay);
        }
        if let Some(ch) = self.channel {
            if ![5, 6, 8, 9].contains(&ch) {
                return Err(RangingError::UnsupportedChannel(ch));
            }
        }
        Ok(())
    }
}

/// Extra path delay of each message beyond the line-of-sight flight time.
/// Negative values model an early (spurious) first path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelDelays {
    pub poll: f64,
    pub response: f64,
    pub final_msg: f64,
}

impl ChannelDelays {
    pub fn uniform(seconds: f64) -> Self {
        Self {
            poll: seconds,
            response: seconds,
            final_msg: seconds,
        }
    }
}

/// Forward-simulate the three-message exchange and return the timestamps
/// each device records.
///
/// The initiator sends the poll on its next tick boundary after true time
/// zero. Receptions are latched to the nearest tick of the receiver's clock;
/// transmissions are scheduled an exact number of ticks after the preceding
/// reception, as delayed-TX hardware does.
pub fn run_exchange(
    initiator: &ClockModel,
    responder: &ClockModel,
    true_tof_seconds: f64,
    cfg: &ExchangeConfig,
    delays: ChannelDelays,
) -> Result<TimestampSet, FailureReason> {
    if !true_tof_seconds.is_finite() || true_tof_seconds < 0.0 {
        return Err(FailureReason::DegenerateExchange);
    }
    if initiator.validate().is_err() || responder.validate().is_err() || cfg.validate().is_err() {
        return Err(FailureReason::DegenerateExchange);
    }
    let reply_r = i64::try_from(cfg.responder_reply_ticks).map_err(|_| FailureReason::Overflow)?;
    let reply_i = i64::try_from(cfg.initiator_reply_ticks).map_err(|_| FailureReason::Overflow)?;
    if reply_r >= MAX_INTERVAL_TICKS || reply_i >= MAX_INTERVAL_TICKS {
        return Err(FailureReason::Overflow);
    }

    let latch = |clock: &ClockModel, t: f64| -> Result<i64, FailureReason> {
        // Nearest tick. Floor latching loses half a tick per reception on
        // average, which biases the ToF estimate short by half a tick.
        let c = clock.count_at(t).round();
        if !c.is_finite() || c.abs() >= MAX_INTERVAL_TICKS as f64 {
            return Err(FailureReason::Overflow);
        }
        Ok(c as i64)
    };

    let tx_poll = initiator.phase.ceil() as i64;
    let t_tx_poll = initiator.time_of(tx_poll);
    let rx_poll = latch(responder, t_tx_poll + true_tof_seconds + delays.poll)?;

    let tx_resp = rx_poll + reply_r;
    let t_tx_resp = responder.time_of(tx_resp);
    let rx_resp = latch(initiator, t_tx_resp + true_tof_seconds + delays.response)?;

    let tx_final = rx_resp + reply_i;
    let t_tx_final = initiator.time_of(tx_final);
    let rx_final = latch(responder, t_tx_final + true_tof_seconds + delays.final_msg)?;

    // Each device must see its own events in protocol order.
    if !(tx_poll < rx_resp && rx_resp < tx_final && rx_poll < tx_resp && tx_resp < rx_final) {
        return Err(FailureReason::DegenerateExchange);
    }
    if rx_final - rx_poll >= MAX_INTERVAL_TICKS || tx_final - tx_poll >= MAX_INTERVAL_TICKS {
        return Err(FailureReason::Overflow);
    }

    Ok(TimestampSet {
        tx_poll: initiator.stamp(tx_poll),
        rx_poll: responder.stamp(rx_poll),
        tx_resp: responder.stamp(tx_resp),
        rx_resp: initiator.stamp(rx_resp),
        tx_final: initiator.stamp(tx_final),
        rx_final: responder.stamp(rx_final),
    })
}

/// Double-sided two-way ranging estimate.
///
/// Rounds and replies are converted to seconds in their owner's domain. The
/// numerator is formed from exact integer tick products, so drift-free
/// symmetric exchanges lose nothing to floating-point cancellation.
pub fn ds_twr_distance(
    ts: &TimestampSet,
    initiator_tick_seconds: f64,
    responder_tick_seconds: f64,
) -> RangingOutcome {
    let round1 = ts.round1_ticks() as i128;
    let reply1 = ts.reply1_ticks() as i128;
    let round2 = ts.round2_ticks() as i128;
    let reply2 = ts.reply2_ticks() as i128;

    // round1/reply2 are initiator ticks, reply1/round2 responder ticks, so
    // both products carry the factor ti * tr.
    let cross = round1 * round2 - reply1 * reply2;
    let ti = initiator_tick_seconds;
    let tr = responder_tick_seconds;
    let denom = (round1 + reply2) as f64 * ti + (round2 + reply1) as f64 * tr;
    if !(denom > 0.0) || !denom.is_finite() {
        return RangingOutcome::failed(FailureReason::DegenerateExchange);
    }
    let tof = cross as f64 * ti * tr / denom;
    RangingOutcome::from_tof(tof, Some(*ts))
}

/// Single-sided two-way ranging estimate: `(T_round1 - T_reply1) / 2`.
/// Clock drift is not cancelled; the error grows with the reply delay.
pub fn ss_twr_distance(
    ts: &SsTimestamps,
    initiator_tick_seconds: f64,
    responder_tick_seconds: f64,
) -> RangingOutcome {
    let round1 = counter_delta(ts.rx_resp, ts.tx_poll) as f64 * initiator_tick_seconds;
    let reply1 = counter_delta(ts.tx_resp, ts.rx_poll) as f64 * responder_tick_seconds;
    if round1 < reply1 {
        return RangingOutcome::failed(FailureReason::DegenerateExchange);
    }
    RangingOutcome::from_tof((round1 - reply1) / 2.0, None)
}

/// Run an exchange and estimate with the configured mode.
pub fn range_once(
    initiator: &ClockModel,
    responder: &ClockModel,
    true_tof_seconds: f64,
    cfg: &ExchangeConfig,
    delays: ChannelDelays,
) -> RangingOutcome {
    match run_exchange(initiator, responder, true_tof_seconds, cfg, delays) {
        Ok(ts) => match cfg.mode {
            RangingMode::DsTwr => ds_twr_distance(&ts, initiator.tick_seconds, responder.tick_seconds),
            RangingMode::SsTwr => {
                let mut out = ss_twr_distance(&ts.single_sided(), initiator.tick_seconds, responder.tick_seconds);
                out.raw = Some(ts);
                out
            }
        },
        Err(reason) => RangingOutcome::failed(reason),
    }
}

/// DS-TWR exchange over a channel whose propagation makes the devices see
/// `measured_m` instead of `true_m`; the difference is applied as an extra
/// path delay on every message. `phases` are the sub-tick phases of the
/// initiator and responder clocks.
pub fn range_measured(
    initiator: &ClockModel,
    responder: &ClockModel,
    cfg: &ExchangeConfig,
    true_m: f64,
    measured_m: f64,
    phases: (f64, f64),
) -> RangingOutcome {
    let (Ok(initiator), Ok(responder)) = (initiator.phase(phases.0), responder.phase(phases.1)) else {
        return RangingOutcome::failed(FailureReason::DegenerateExchange);
    };
    let extra = (measured_m - true_m) / SPEED_OF_LIGHT;
    range_once(&initiator, &responder, true_m / SPEED_OF_LIGHT, cfg, ChannelDelays::uniform(extra))
}
