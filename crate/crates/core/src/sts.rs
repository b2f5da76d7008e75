//! Scrambled Timestamp Sequence (STS) generation and frame validation, plus
//! the attacker models used against a ranging session.
//!
//! The STS is AES-128 in counter mode: block `i` of the sequence for frame
//! counter `n` is `AES_k(n || i)`, both halves big-endian `u64`. A receiver
//! only accepts a frame whose STS equals the sequence it expects for the
//! current counter.

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranging::{FailureReason, RangingOutcome, TimestampSet};

/// Default STS length in bits.
pub const DEFAULT_STS_BITS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StsError {
    #[error("STS length must be a positive multiple of 8 bits, got {0}")]
    InvalidLength(usize),
    #[error("ghost-peak success probability must be in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("reduction must be non-negative and finite, got {0}")]
    InvalidReduction(f64),
}

/// Session secret and frame counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StsKey {
    pub key: [u8; 16],
    pub counter: u64,
}

impl StsKey {
    pub fn new(key: [u8; 16], counter: u64) -> Self {
        Self { key, counter }
    }

    pub fn next(self) -> Self {
        Self {
            counter: self.counter.wrapping_add(1),
            ..self
        }
    }
}

/// A packed bit sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StsSequence {
    bytes: Vec<u8>,
}

impl StsSequence {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn len_bits(&self) -> usize {
        self.bytes.len() * 8
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bytes[i / 8] >> (7 - i % 8) & 1 == 1
    }

    /// Number of differing bits; sequences must have equal length.
    pub fn hamming(&self, other: &Self) -> usize {
        self.bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }
}

/// Keyed pseudo-random expansion of `(key, counter)` with the default length.
pub fn generate_sts(key: &StsKey) -> StsSequence {
    generate_sts_bits(key, DEFAULT_STS_BITS).expect("default length is valid")
}

pub fn generate_sts_bits(key: &StsKey, bits: usize) -> Result<StsSequence, StsError> {
    if bits == 0 || bits % 8 != 0 {
        return Err(StsError::InvalidLength(bits));
    }
    let cipher = Aes128::new(GenericArray::from_slice(&key.key));
    let n_bytes = bits / 8;
    let mut bytes = Vec::with_capacity(n_bytes.div_ceil(16) * 16);
    for block_idx in 0..n_bytes.div_ceil(16) as u64 {
        let mut block = [0u8; 16];
        block[..8].copy_from_slice(&key.counter.to_be_bytes());
        block[8..].copy_from_slice(&block_idx.to_be_bytes());
        let mut block = GenericArray::from(block);
        cipher.encrypt_block(&mut block);
        bytes.extend_from_slice(&block);
    }
    bytes.truncate(n_bytes);
    Ok(StsSequence { bytes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Legitimate,
    Attacker,
}

/// An HRP frame as seen by the receiver's STS check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub preamble_code: u8,
    pub sts: StsSequence,
    pub payload: Option<TimestampSet>,
    /// Ground truth for tests and transcripts; the receiver never looks at it.
    pub origin: Origin,
}

impl Frame {
    pub fn legitimate(key: &StsKey, preamble_code: u8, payload: Option<TimestampSet>) -> Self {
        Self {
            preamble_code,
            sts: generate_sts(key),
            payload,
            origin: Origin::Legitimate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    StsMismatch,
    LengthMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

/// Accept iff the frame's STS equals the sequence expected for `expected`.
pub fn validate_frame(frame: &Frame, expected: &StsKey) -> Verdict {
    let Ok(want) = generate_sts_bits(expected, frame.sts.len_bits()) else {
        return Verdict::Reject(RejectReason::LengthMismatch);
    };
    if frame.sts == want {
        Verdict::Accept
    } else {
        Verdict::Reject(RejectReason::StsMismatch)
    }
}

/// Receiver-side session: validates frames against the current counter and
/// advances it on every accept, so a replayed frame is stale.
#[derive(Debug, Clone)]
pub struct StsSession {
    key: StsKey,
    sts_bits: usize,
    accepted: u64,
    rejected: u64,
}

impl StsSession {
    pub fn new(key: StsKey) -> Self {
        Self {
            key,
            sts_bits: DEFAULT_STS_BITS,
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn with_length(key: StsKey, sts_bits: usize) -> Result<Self, StsError> {
        if sts_bits == 0 || sts_bits % 8 != 0 {
            return Err(StsError::InvalidLength(sts_bits));
        }
        Ok(Self {
            sts_bits,
            ..Self::new(key)
        })
    }

    /// The key state the next legitimate frame must match.
    pub fn expected(&self) -> StsKey {
        self.key
    }

    pub fn sts_bits(&self) -> usize {
        self.sts_bits
    }

    /// Frame the legitimate peer would send next.
    pub fn next_legitimate_frame(&self, preamble_code: u8, payload: Option<TimestampSet>) -> Frame {
        Frame {
            preamble_code,
            sts: generate_sts_bits(&self.key, self.sts_bits).expect("length validated"),
            payload,
            origin: Origin::Legitimate,
        }
    }

    pub fn receive(&mut self, frame: &Frame) -> Verdict {
        let verdict = if frame.sts.len_bits() != self.sts_bits {
            Verdict::Reject(RejectReason::LengthMismatch)
        } else {
            validate_frame(frame, &self.key)
        };
        match verdict {
            Verdict::Accept => {
                self.key = self.key.next();
                self.accepted += 1;
            }
            Verdict::Reject(_) => self.rejected += 1,
        }
        verdict
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Early frame with the right preamble but a guessed STS.
    PreambleInjection,
    /// Low-probability acceptance of an earlier spurious path.
    GhostPeak,
    /// Fixed-interval pulse jamming.
    Cicada,
}

/// How a successful ghost peak picks its reduction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionDraw {
    /// Uniform on `(0, reduction_meters]`.
    #[default]
    Uniform,
    /// Always exactly `reduction_meters`.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackerModel {
    pub kind: AttackKind,
    #[serde(default = "default_ghost_prob")]
    pub ghost_success_prob: f64,
    /// Largest ghost-peak reduction; draws are uniform on `(0, reduction_meters]`.
    #[serde(default = "default_reduction")]
    pub reduction_meters: f64,
    #[serde(default)]
    pub reduction_draw: ReductionDraw,
    /// Ghost-peak results are clamped to this floor.
    #[serde(default = "default_floor")]
    pub floor_m: f64,
    #[serde(default = "default_pulse_interval")]
    pub pulse_interval_s: f64,
    /// Probability that a Cicada pulse train breaks an exchange.
    #[serde(default = "default_cicada_fail")]
    pub cicada_fail_prob: f64,
    /// Symmetric error inflation of exchanges that survive jamming.
    #[serde(default = "default_cicada_sigma")]
    pub cicada_sigma_m: f64,
}

fn default_ghost_prob() -> f64 {
    0.05
}
fn default_reduction() -> f64 {
    3.0
}
fn default_floor() -> f64 {
    -3.0
}
fn default_pulse_interval() -> f64 {
    1e-6
}
fn default_cicada_fail() -> f64 {
    0.3
}
fn default_cicada_sigma() -> f64 {
    0.5
}

impl AttackerModel {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            ghost_success_prob: default_ghost_prob(),
            reduction_meters: default_reduction(),
            reduction_draw: ReductionDraw::Uniform,
            floor_m: default_floor(),
            pulse_interval_s: default_pulse_interval(),
            cicada_fail_prob: default_cicada_fail(),
            cicada_sigma_m: default_cicada_sigma(),
        }
    }

    pub fn ghost_peak(prob: f64, reduction_meters: f64) -> Result<Self, StsError> {
        let m = Self {
            ghost_success_prob: prob,
            reduction_meters,
            ..Self::new(AttackKind::GhostPeak)
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), StsError> {
        for p in [self.ghost_success_prob, self.cicada_fail_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(StsError::InvalidProbability(p));
            }
        }
        if !(self.reduction_meters.is_finite() && self.reduction_meters >= 0.0) {
            return Err(StsError::InvalidReduction(self.reduction_meters));
        }
        if !(self.cicada_sigma_m.is_finite() && self.cicada_sigma_m >= 0.0) {
            return Err(StsError::InvalidReduction(self.cicada_sigma_m));
        }
        Ok(())
    }

    /// A frame forged without the key: right preamble, uniformly random STS.
    pub fn forge_frame<R: Rng + ?Sized>(&self, rng: &mut R, preamble_code: u8, sts_bits: usize) -> Frame {
        let mut bytes = vec![0u8; sts_bits / 8];
        rng.fill(bytes.as_mut_slice());
        Frame {
            preamble_code,
            sts: StsSequence::from_bytes(bytes),
            payload: None,
            origin: Origin::Attacker,
        }
    }

    /// Re-transmission of a frame the attacker overheard earlier.
    pub fn replay_frame(&self, observed: &Frame) -> Frame {
        Frame {
            origin: Origin::Attacker,
            ..observed.clone()
        }
    }
}

/// With probability `ghost_success_prob`, shorten an honest distance by a
/// draw from `(0, reduction_meters]`, never going below `floor_m`.
/// Failed outcomes pass through.
pub fn apply_ghost_peak<R: Rng + ?Sized>(
    rng: &mut R,
    model: &AttackerModel,
    honest: RangingOutcome,
) -> RangingOutcome {
    let Some(d) = honest.meters() else {
        return honest;
    };
    if !rng.random_bool(model.ghost_success_prob.clamp(0.0, 1.0)) {
        return honest;
    }
    let reduction = match model.reduction_draw {
        // 1 - U[0,1) lies in (0, 1].
        ReductionDraw::Uniform => model.reduction_meters * (1.0 - rng.random::<f64>()),
        ReductionDraw::Fixed => model.reduction_meters,
    };
    // never below the floor, and never longer than the honest path
    let mut out = RangingOutcome::from_meters((d - reduction).max(model.floor_m).min(d));
    out.raw = honest.raw;
    out
}

/// Cicada jamming: some exchanges fail outright, survivors get symmetric
/// Gaussian error of `cicada_sigma_m`.
pub fn apply_cicada<R: Rng + ?Sized>(rng: &mut R, model: &AttackerModel, honest: RangingOutcome) -> RangingOutcome {
    let Some(d) = honest.meters() else {
        return honest;
    };
    if rng.random_bool(model.cicada_fail_prob.clamp(0.0, 1.0)) {
        return RangingOutcome::failed(FailureReason::NoSignal);
    }
    if model.cicada_sigma_m == 0.0 {
        return honest;
    }
    let noise = Normal::new(0.0, model.cicada_sigma_m).expect("sigma validated");
    let mut out = RangingOutcome::from_meters(d + noise.sample(rng));
    out.raw = honest.raw;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const KEY: [u8; 16] = *b"0123456789abcdef";

    #[test]
    fn deterministic() {
        let k = StsKey::new(KEY, 42);
        assert_eq!(generate_sts(&k), generate_sts(&k));
        assert_eq!(generate_sts(&k).len_bits(), 4096);
    }

    #[test]
    fn known_answer_first_block() {
        // FIPS-197 C.1 vector, then block 0 of a sequence is AES(counter || 0).
        let key: [u8; 16] = core::array::from_fn(|i| i as u8);
        let pt: [u8; 16] = core::array::from_fn(|i| (i as u8) * 0x11);
        let counter = u64::from_be_bytes(pt[..8].try_into().unwrap());
        let cipher = Aes128::new(GenericArray::from_slice(&key));
        let mut block = GenericArray::from(pt);
        cipher.encrypt_block(&mut block);
        assert_eq!(
            block.as_slice(),
            &[0x69, 0xc4, 0xe0, 0xd8, 0x6a, 0x7b, 0x04, 0x30, 0xd8, 0xcd, 0xb7, 0x80, 0x70, 0xb4, 0xc5, 0x5a]
        );
        let seq = generate_sts_bits(&StsKey::new(key, counter), 128).unwrap();
        let mut block0 = [0u8; 16];
        block0[..8].copy_from_slice(&counter.to_be_bytes());
        let mut block0 = GenericArray::from(block0);
        cipher.encrypt_block(&mut block0);
        assert_eq!(seq.as_bytes(), block0.as_slice());
    }

    #[test]
    fn adjacent_counters_avalanche() {
        let mut worst = 1.0f64;
        for n in 0..1000u64 {
            let a = generate_sts(&StsKey::new(KEY, n));
            let b = generate_sts(&StsKey::new(KEY, n + 1));
            worst = worst.min(a.hamming(&b) as f64 / 4096.0);
        }
        assert!(worst >= 0.40, "worst-case bit difference {worst}");
    }

    #[test]
    fn key_sensitivity() {
        let zero = generate_sts(&StsKey::new([0; 16], 7));
        let ones = generate_sts(&StsKey::new([0xff; 16], 7));
        assert_ne!(zero, ones);
    }

    #[test]
    fn legitimate_frame_accepted() {
        let k = StsKey::new(KEY, 9);
        let frame = Frame::legitimate(&k, 11, None);
        assert_eq!(validate_frame(&frame, &k), Verdict::Accept);
    }

    #[test]
    fn stale_counter_rejected() {
        let k = StsKey::new(KEY, 9);
        let stale = Frame { origin: Origin::Attacker, ..Frame::legitimate(&k, 11, None) };
        assert_eq!(validate_frame(&stale, &k.next()), Verdict::Reject(RejectReason::StsMismatch));
    }

    #[test]
    fn replay_rejected_by_session() {
        let mut session = StsSession::new(StsKey::new(KEY, 0));
        let frame = session.next_legitimate_frame(11, None);
        assert_eq!(session.receive(&frame), Verdict::Accept);
        let attacker = AttackerModel::new(AttackKind::PreambleInjection);
        assert_eq!(
            session.receive(&attacker.replay_frame(&frame)),
            Verdict::Reject(RejectReason::StsMismatch)
        );
        assert_eq!((session.accepted(), session.rejected()), (1, 1));
    }

    #[test]
    fn injected_frames_never_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut session = StsSession::new(StsKey::new(KEY, 0));
        let attacker = AttackerModel::new(AttackKind::PreambleInjection);
        for _ in 0..10_000 {
            let f = attacker.forge_frame(&mut rng, 11, session.sts_bits());
            assert_ne!(session.receive(&f), Verdict::Accept);
        }
        assert_eq!(session.accepted(), 0);
    }

    #[test]
    fn length_mismatch() {
        let mut session = StsSession::with_length(StsKey::new(KEY, 0), 1024).unwrap();
        let long = Frame::legitimate(&StsKey::new(KEY, 0), 11, None);
        assert_eq!(session.receive(&long), Verdict::Reject(RejectReason::LengthMismatch));
        assert!(StsSession::with_length(StsKey::new(KEY, 0), 12).is_err());
        assert!(generate_sts_bits(&StsKey::new(KEY, 0), 0).is_err());
    }

    #[test]
    fn ghost_peak_never_and_always() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let honest = RangingOutcome::from_meters(5.0);
        let never = AttackerModel::ghost_peak(0.0, 3.0).unwrap();
        for _ in 0..1000 {
            assert_eq!(apply_ghost_peak(&mut rng, &never, honest), honest);
        }
        let fixed = AttackerModel {
            reduction_draw: ReductionDraw::Fixed,
            ..AttackerModel::ghost_peak(1.0, 2.0).unwrap()
        };
        assert_eq!(apply_ghost_peak(&mut rng, &fixed, honest).meters(), Some(3.0));
        let uniform = AttackerModel::ghost_peak(1.0, 2.0).unwrap();
        for _ in 0..1000 {
            let d = apply_ghost_peak(&mut rng, &uniform, honest).meters().unwrap();
            assert!((3.0..5.0).contains(&d), "{d}");
        }
    }

    #[test]
    fn ghost_peak_respects_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = AttackerModel { floor_m: -3.0, ..AttackerModel::ghost_peak(1.0, 10.0).unwrap() };
        for _ in 0..1000 {
            let d = apply_ghost_peak(&mut rng, &m, RangingOutcome::from_meters(0.5)).meters().unwrap();
            assert!(d >= -3.0);
        }
    }

    #[test]
    fn cicada_fails_some_exchanges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = AttackerModel::new(AttackKind::Cicada);
        let fails = (0..10_000)
            .filter(|_| !apply_cicada(&mut rng, &m, RangingOutcome::from_meters(2.0)).is_success())
            .count();
        assert!((2700..3300).contains(&fails), "{fails}");
    }

    #[test]
    fn model_validation() {
        assert_eq!(AttackerModel::ghost_peak(1.5, 1.0), Err(StsError::InvalidProbability(1.5)));
        assert_eq!(AttackerModel::ghost_peak(0.5, -1.0), Err(StsError::InvalidReduction(-1.0)));
    }
}
