use std::io::{BufRead, BufReader, Read, Write};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::plan::SweepPlan;
use super::recording::{Recording, Sample};
use crate::channel::{sample_measurement, EnvironmentProfile, Measurement, Position};
use crate::ranging::{range_measured, ClockModel, ExchangeConfig};
use crate::sts::{apply_cicada, apply_ghost_peak, AttackKind, AttackerModel, Frame, StsKey, StsSession, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error("source I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("source used before start_session")]
    NotStarted,
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub plan: SweepPlan,
    pub seed: u64,
}

/// A measurement backend the campaign controller drives.
pub trait Source {
    fn name(&self) -> &str;

    fn start_session(&mut self, cfg: &SessionConfig) -> Result<(), SourceError>;

    /// Called before collecting at sweep position `index`.
    fn set_position(&mut self, _index: usize, _pos: Position) -> Result<(), SourceError> {
        Ok(())
    }

    /// At most `n` successful samples within `timeout_s`.
    fn collect(&mut self, n: usize, timeout_s: f64) -> Result<Vec<Sample>, SourceError>;
}

/// Counters of what happened inside a simulated link.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub attempts: u64,
    pub channel_failures: u64,
    pub exchange_failures: u64,
    pub sts_rejections: u64,
}

struct PositionState {
    pos: Position,
    rng: ChaCha8Rng,
    tx_key: StsKey,
    rx: StsSession,
}

/// Simulated handset and remote: a channel profile decides each attempt,
/// the tick-level DS-TWR exchange produces the distance, and every frame
/// goes through STS validation.
pub struct SimulatedDevice {
    profile: EnvironmentProfile,
    attacker: Option<AttackerModel>,
    exchange: ExchangeConfig,
    initiator: ClockModel,
    responder: ClockModel,
    seed: u64,
    sts_key: [u8; 16],
    exchange_duration_s: f64,
    started: bool,
    state: Option<PositionState>,
    stats: LinkStats,
}

impl SimulatedDevice {
    pub fn new(profile: EnvironmentProfile) -> Self {
        Self {
            profile,
            attacker: None,
            exchange: ExchangeConfig::default(),
            initiator: ClockModel::with_skew(4.0).expect("valid skew"),
            responder: ClockModel::with_skew(-7.0).expect("valid skew"),
            seed: 0,
            sts_key: [0; 16],
            exchange_duration_s: 0.15,
            started: false,
            state: None,
            stats: LinkStats::default(),
        }
    }

    pub fn with_attacker(mut self, attacker: AttackerModel) -> Self {
        self.attacker = Some(attacker);
        self
    }

    pub fn with_clocks(mut self, initiator: ClockModel, responder: ClockModel) -> Self {
        self.initiator = initiator;
        self.responder = responder;
        self
    }

    pub fn with_exchange(mut self, exchange: ExchangeConfig) -> Self {
        self.exchange = exchange;
        self
    }

    pub fn profile(&self) -> &EnvironmentProfile {
        &self.profile
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    /// One ranging attempt at the current position.
    fn attempt(&mut self) -> Result<Option<f64>, SourceError> {
        let st = self.state.as_mut().ok_or(SourceError::NotStarted)?;
        self.stats.attempts += 1;
        let d = match sample_measurement(&self.profile, st.pos, &mut st.rng) {
            Measurement::Fail => {
                self.stats.channel_failures += 1;
                return Ok(None);
            }
            Measurement::Distance(d) => d,
        };

        // Poll, response and final each carry an STS.
        let preamble = self.exchange.preamble_code.unwrap_or(11);
        for _ in 0..3 {
            if let Some(a) = &self.attacker {
                if a.kind == AttackKind::PreambleInjection {
                    let forged = a.forge_frame(&mut st.rng, preamble, st.rx.sts_bits());
                    if st.rx.receive(&forged) != Verdict::Accept {
                        self.stats.sts_rejections += 1;
                    }
                }
            }
            let frame = Frame::legitimate(&st.tx_key, preamble, None);
            st.tx_key = st.tx_key.next();
            if st.rx.receive(&frame) != Verdict::Accept {
                self.stats.sts_rejections += 1;
                self.stats.exchange_failures += 1;
                return Ok(None);
            }
        }

        let phases = (st.rng.random(), st.rng.random());
        let mut outcome = range_measured(
            &self.initiator,
            &self.responder,
            &self.exchange,
            self.profile.true_distance_m,
            d,
            phases,
        );
        if let Some(a) = &self.attacker {
            outcome = match a.kind {
                AttackKind::GhostPeak => apply_ghost_peak(&mut st.rng, a, outcome),
                AttackKind::Cicada => apply_cicada(&mut st.rng, a, outcome),
                AttackKind::PreambleInjection => outcome,
            };
        }
        match outcome.meters() {
            Some(m) => Ok(Some(m)),
            None => {
                self.stats.exchange_failures += 1;
                Ok(None)
            }
        }
    }
}

impl Source for SimulatedDevice {
    fn name(&self) -> &str {
        "simulated"
    }

    fn start_session(&mut self, cfg: &SessionConfig) -> Result<(), SourceError> {
        if let Some(a) = &self.attacker {
            a.validate().map_err(|e| SourceError::Config(e.to_string()))?;
        }
        self.exchange.validate().map_err(|e| SourceError::Config(e.to_string()))?;
        self.seed = cfg.seed;
        self.exchange_duration_s = cfg.plan.exchange_duration_s;
        let mut keygen = ChaCha8Rng::seed_from_u64(cfg.seed);
        keygen.set_stream(u64::MAX);
        keygen.fill(&mut self.sts_key);
        self.started = true;
        self.state = None;
        Ok(())
    }

    /// Each position gets its own random stream and STS counter range, so a
    /// campaign resumed at any position reproduces the uninterrupted run.
    fn set_position(&mut self, index: usize, pos: Position) -> Result<(), SourceError> {
        if !self.started {
            return Err(SourceError::NotStarted);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let key = StsKey::new(self.sts_key, (index as u64) << 32);
        self.state = Some(PositionState {
            pos,
            rng,
            tx_key: key,
            rx: StsSession::new(key),
        });
        Ok(())
    }

    fn collect(&mut self, n: usize, timeout_s: f64) -> Result<Vec<Sample>, SourceError> {
        if self.state.is_none() {
            return Err(SourceError::NotStarted);
        }
        let attempts = (timeout_s / self.exchange_duration_s + 1e-9).floor() as u64;
        let mut out = Vec::with_capacity(n);
        for k in 1..=attempts {
            if out.len() >= n {
                break;
            }
            if let Some(d_m) = self.attempt()? {
                out.push(Sample {
                    d_m,
                    t_s: k as f64 * self.exchange_duration_s,
                });
            }
        }
        Ok(out)
    }
}

/// External ranging device speaking a line protocol:
/// the controller sends `RNG <n>`, the device answers with `D <meters>` or
/// `F <reason>` lines and a closing `OK`.
pub struct SerialDevice<W: Write> {
    writer: W,
    lines: Receiver<std::io::Result<String>>,
    name: String,
    started: bool,
    failures: u64,
}

impl<W: Write> SerialDevice<W> {
    /// `reader` is drained on a background thread so that `collect` can
    /// enforce its timeout.
    pub fn new<R: Read + Send + 'static>(reader: R, writer: W) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => {
                        let _ = tx.send(Err(std::io::ErrorKind::UnexpectedEof.into()));
                        break;
                    }
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Self {
            writer,
            lines: rx,
            name: "serial".into(),
            started: false,
            failures: 0,
        }
    }

    /// Failure lines seen so far.
    pub fn failures(&self) -> u64 {
        self.failures
    }
}

impl SerialDevice<std::fs::File> {
    /// Open a character device (or FIFO) already configured for the link.
    pub fn open(path: impl AsRef<std::path::Path>) -> Result<Self, SourceError> {
        let file = std::fs::OpenOptions::new().read(true).write(true).open(path.as_ref())?;
        let reader = file.try_clone()?;
        let mut dev = Self::new(reader, file);
        dev.name = format!("serial:{}", path.as_ref().display());
        Ok(dev)
    }
}

impl<W: Write> Source for SerialDevice<W> {
    fn name(&self) -> &str {
        &self.name
    }

    fn start_session(&mut self, _cfg: &SessionConfig) -> Result<(), SourceError> {
        self.started = true;
        Ok(())
    }

    fn collect(&mut self, n: usize, timeout_s: f64) -> Result<Vec<Sample>, SourceError> {
        if !self.started {
            return Err(SourceError::NotStarted);
        }
        // Drop leftovers of a request that previously timed out.
        while let Ok(line) = self.lines.try_recv() {
            line?;
        }
        writeln!(self.writer, "RNG {n}")?;
        self.writer.flush()?;

        let start = Instant::now();
        let deadline = start + Duration::from_secs_f64(timeout_s.max(0.0));
        let mut out = Vec::with_capacity(n);
        loop {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            let line = match self.lines.recv_timeout(deadline - now) {
                Ok(line) => line?,
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into()),
            };
            let line = line.trim();
            if line == "OK" {
                break;
            } else if let Some(v) = line.strip_prefix("D ") {
                let d_m: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| SourceError::Protocol(format!("bad distance line `{line}`")))?;
                if out.len() < n {
                    out.push(Sample {
                        d_m,
                        t_s: start.elapsed().as_secs_f64(),
                    });
                }
            } else if line.starts_with("F ") || line == "F" {
                self.failures += 1;
            } else if !line.is_empty() {
                return Err(SourceError::Protocol(format!("unexpected line `{line}`")));
            }
        }
        Ok(out)
    }
}

/// Plays back the samples of an existing recording.
pub struct Replay {
    recording: Recording,
    current: Option<usize>,
}

impl Replay {
    pub fn new(recording: Recording) -> Self {
        Self { recording, current: None }
    }
}

impl Source for Replay {
    fn name(&self) -> &str {
        "replay"
    }

    fn start_session(&mut self, _cfg: &SessionConfig) -> Result<(), SourceError> {
        Ok(())
    }

    fn set_position(&mut self, _index: usize, pos: Position) -> Result<(), SourceError> {
        self.current = self.recording.data.iter().position(|r| r.position == pos);
        Ok(())
    }

    fn collect(&mut self, n: usize, timeout_s: f64) -> Result<Vec<Sample>, SourceError> {
        let Some(i) = self.current else {
            return Ok(Vec::new());
        };
        Ok(self.recording.data[i]
            .samples
            .iter()
            .filter(|s| s.t_s <= timeout_s)
            .take(n)
            .copied()
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{AngularField, DeviceId};
    use std::os::unix::net::UnixStream;

    fn session(seed: u64) -> SessionConfig {
        SessionConfig {
            plan: SweepPlan::default(),
            seed,
        }
    }

    fn pos(t: f64, p: f64) -> Position {
        Position::new(t, p).unwrap()
    }

    #[test]
    fn ideal_simulation_hits_true_distance() {
        let mut dev = SimulatedDevice::new(EnvironmentProfile::ideal(DeviceId::Dw3000, "lab", 5.0));
        dev.start_session(&session(3)).unwrap();
        dev.set_position(0, pos(0.0, 0.0)).unwrap();
        let s = dev.collect(10, 30.0).unwrap();
        assert_eq!(s.len(), 10);
        for (k, x) in s.iter().enumerate() {
            assert!((x.d_m - 5.0).abs() < 0.01, "{}", x.d_m);
            assert!((x.t_s - 0.15 * (k + 1) as f64).abs() < 1e-12);
        }
        assert_eq!(dev.stats().sts_rejections, 0);
    }

    #[test]
    fn budget_caps_attempts() {
        let profile = EnvironmentProfile {
            p_fail: AngularField::Constant(0.97),
            ..EnvironmentProfile::ideal(DeviceId::Pixel6Pro, "outside", 5.0)
        };
        let mut dev = SimulatedDevice::new(profile);
        dev.start_session(&session(4)).unwrap();
        dev.set_position(0, pos(0.0, 0.0)).unwrap();
        let s = dev.collect(10, 30.0).unwrap();
        assert!(s.len() < 10);
        assert!(s.iter().all(|x| x.t_s <= 30.0 + 1e-9));
        assert_eq!(dev.stats().attempts, 200);
    }

    #[test]
    fn positions_are_independent_streams() {
        let profile = EnvironmentProfile {
            sigma_m: AngularField::Constant(0.1),
            ..EnvironmentProfile::ideal(DeviceId::Dw3000, "lab", 5.0)
        };
        let run = |order: &[usize]| {
            let mut dev = SimulatedDevice::new(profile.clone());
            dev.start_session(&session(5)).unwrap();
            let mut out = vec![Vec::new(); 3];
            for &i in order {
                dev.set_position(i, pos(i as f64 * 10.0, 0.0)).unwrap();
                out[i] = dev.collect(10, 30.0).unwrap();
            }
            out
        };
        assert_eq!(run(&[0, 1, 2]), run(&[2, 0, 1]));
    }

    #[test]
    fn injected_frames_are_rejected_and_harmless() {
        let mut dev = SimulatedDevice::new(EnvironmentProfile::ideal(DeviceId::Dw3000, "lab", 0.3))
            .with_attacker(AttackerModel::new(AttackKind::PreambleInjection));
        dev.start_session(&session(6)).unwrap();
        dev.set_position(0, pos(0.0, 0.0)).unwrap();
        let s = dev.collect(10, 30.0).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|x| (x.d_m - 0.3).abs() < 0.01));
        assert_eq!(dev.stats().sts_rejections, 30);
    }

    #[test]
    fn collect_before_start_fails() {
        let mut dev = SimulatedDevice::new(EnvironmentProfile::ideal(DeviceId::Dw3000, "lab", 0.3));
        assert!(matches!(dev.collect(1, 1.0), Err(SourceError::NotStarted)));
    }

    fn fake_device(script: impl Fn(usize) -> Vec<String> + Send + 'static) -> SerialDevice<UnixStream> {
        let (ours, theirs) = UnixStream::pair().unwrap();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(theirs.try_clone().unwrap());
            let mut writer = theirs;
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap_or(0) > 0 {
                let n: usize = line.trim().strip_prefix("RNG ").unwrap().parse().unwrap();
                for l in script(n) {
                    let _ = writer.write_all(l.as_bytes());
                }
                line.clear();
            }
        });
        SerialDevice::new(ours.try_clone().unwrap(), ours)
    }

    #[test]
    fn serial_protocol() {
        let mut dev = fake_device(|n| {
            let mut v: Vec<String> = (0..n).map(|i| format!("D {}\n", 1.0 + i as f64 / 100.0)).collect();
            v.insert(1, "F timeout\n".into());
            v.push("OK\n".into());
            v
        });
        dev.start_session(&session(0)).unwrap();
        let s = dev.collect(4, 5.0).unwrap();
        assert_eq!(s.iter().map(|x| x.d_m).collect::<Vec<_>>(), vec![1.0, 1.01, 1.02, 1.03]);
        assert_eq!(dev.failures(), 1);
    }

    #[test]
    fn serial_timeout_and_garbage() {
        let mut silent = fake_device(|_| vec!["D 2.0\n".into()]);
        silent.start_session(&session(0)).unwrap();
        let t = Instant::now();
        let s = silent.collect(5, 0.2).unwrap();
        assert_eq!(s.len(), 1);
        assert!(t.elapsed() < Duration::from_secs(2));

        let mut noisy = fake_device(|_| vec!["HELLO\n".into()]);
        noisy.start_session(&session(0)).unwrap();
        assert!(matches!(noisy.collect(1, 2.0), Err(SourceError::Protocol(_))));
    }

    #[test]
    fn serial_eof_is_io_error() {
        let (ours, theirs) = UnixStream::pair().unwrap();
        drop(theirs);
        let mut dev = SerialDevice::new(ours.try_clone().unwrap(), ours);
        dev.start_session(&session(0)).unwrap();
        assert!(matches!(dev.collect(1, 2.0), Err(SourceError::Io(_))));
    }
}
