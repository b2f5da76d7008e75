//! Orientation- and environment-dependent measurement model.
//!
//! A profile describes one (device, environment, distance) cell as a
//! mixture: a Bernoulli link failure whose probability follows the antenna
//! shielding lobe, a Gaussian core with angle-dependent bias and spread, and
//! rare outliers (multipath enlargements, first-path reductions).

mod field;
mod profiles;

pub use field::{AngularField, FormKind, NamedForm, ShieldingLobe};
pub use profiles::{load_profiles, parse_profiles, DeviceProfileSet, ProfileLibrary, DEFAULT_PROFILES_JSON};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Pareto};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid position: {0}")]
    InvalidPosition(String),
    #[error("unknown device `{0}` (expected iphone12pro, galaxyS21u, pixel6pro or dw3000)")]
    UnknownDevice(String),
    #[error("no profile for {device} in environment `{environment}`")]
    MissingCell { device: DeviceId, environment: String },
    #[error("{device} cannot range at {distance_m} m: beyond max distance cap of {cap_m} m")]
    BeyondCap { device: DeviceId, distance_m: f64, cap_m: f64 },
    #[error("profile error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("cannot read profiles: {0}")]
    Io(#[from] std::io::Error),
}

/// Gimbal orientation, stored at 0.01° resolution.
///
/// `theta` is the base rotation in `[0, 360)`, `phi` the arm rotation in
/// `[0, 180]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Position {
    theta_cdeg: u32,
    phi_cdeg: u32,
}

impl Position {
    pub fn new(theta_deg: f64, phi_deg: f64) -> Result<Self, ChannelError> {
        if !(0.0..360.0).contains(&theta_deg) {
            return Err(ChannelError::InvalidPosition(format!("theta {theta_deg} outside [0, 360)")));
        }
        if !(0.0..=180.0).contains(&phi_deg) {
            return Err(ChannelError::InvalidPosition(format!("phi {phi_deg} outside [0, 180]")));
        }
        let theta_cdeg = (theta_deg * 100.0).round() as u32;
        if theta_cdeg >= 36_000 {
            return Err(ChannelError::InvalidPosition(format!("theta {theta_deg} rounds to 360")));
        }
        Ok(Self {
            theta_cdeg,
            phi_cdeg: (phi_deg * 100.0).round() as u32,
        })
    }

    pub fn from_centidegrees(theta_cdeg: u32, phi_cdeg: u32) -> Result<Self, ChannelError> {
        if theta_cdeg >= 36_000 || phi_cdeg > 18_000 {
            return Err(ChannelError::InvalidPosition(format!(
                "({theta_cdeg}, {phi_cdeg}) centidegrees out of range"
            )));
        }
        Ok(Self { theta_cdeg, phi_cdeg })
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_cdeg as f64 / 100.0
    }

    pub fn phi_deg(&self) -> f64 {
        self.phi_cdeg as f64 / 100.0
    }

    pub fn theta_cdeg(&self) -> u32 {
        self.theta_cdeg
    }

    pub fn phi_cdeg(&self) -> u32 {
        self.phi_cdeg
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(θ={}°, φ={}°)", self.theta_deg(), self.phi_deg())
    }
}

#[derive(Serialize, Deserialize)]
struct PositionRepr {
    theta: f64,
    phi: f64,
}

impl Serialize for Position {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PositionRepr {
            theta: self.theta_deg(),
            phi: self.phi_deg(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Position {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PositionRepr::deserialize(d)?;
        Position::new(r.theta, r.phi).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceId {
    #[serde(rename = "iphone12pro")]
    Iphone12Pro,
    #[serde(rename = "galaxyS21u")]
    GalaxyS21u,
    #[serde(rename = "pixel6pro")]
    Pixel6Pro,
    #[serde(rename = "dw3000")]
    Dw3000,
}

impl DeviceId {
    pub const ALL: [DeviceId; 4] = [DeviceId::Iphone12Pro, DeviceId::GalaxyS21u, DeviceId::Pixel6Pro, DeviceId::Dw3000];

    pub fn as_str(&self) -> &'static str {
        match self {
            DeviceId::Iphone12Pro => "iphone12pro",
            DeviceId::GalaxyS21u => "galaxyS21u",
            DeviceId::Pixel6Pro => "pixel6pro",
            DeviceId::Dw3000 => "dw3000",
        }
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeviceId {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceId::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ChannelError::UnknownDevice(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierModel {
    /// Probability of a multipath enlargement.
    pub p_enlarge: f64,
    /// Mean of the (Lomax, shape 3) enlargement draw.
    pub enlarge_tail_m: f64,
    /// Enlargements are truncated at this size.
    #[serde(default = "default_enlarge_max")]
    pub enlarge_max_m: f64,
    /// Probability of a first-path reduction.
    pub p_reduce: f64,
    /// Reductions are uniform on `[max(floor, d - span), d)`.
    #[serde(default = "default_reduce_span")]
    pub reduce_span_m: f64,
    pub reduce_floor_m: f64,
}

fn default_enlarge_max() -> f64 {
    3.0
}

fn default_reduce_span() -> f64 {
    3.0
}

impl Default for OutlierModel {
    fn default() -> Self {
        Self {
            p_enlarge: 0.0,
            enlarge_tail_m: 0.0,
            enlarge_max_m: default_enlarge_max(),
            p_reduce: 0.0,
            reduce_span_m: default_reduce_span(),
            reduce_floor_m: -3.0,
        }
    }
}

/// Extra bias and spread added when the gimbal tower sits between the devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TowerObstruction {
    pub enabled: bool,
    pub bias_add_m: f64,
    pub sigma_add_m: f64,
}

impl Default for TowerObstruction {
    fn default() -> Self {
        Self {
            enabled: false,
            bias_add_m: 0.01,
            sigma_add_m: 0.004,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapKind {
    /// Firmware stops ranging beyond the cap.
    #[default]
    Hard,
    /// Failure probability ramps to 1 over `soft_cap_ramp_m` beyond the cap.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentProfile {
    pub device: DeviceId,
    /// `outside`, `lab`, `garage` or a custom label.
    pub environment: String,
    pub true_distance_m: f64,
    pub bias_m: AngularField,
    pub sigma_m: AngularField,
    pub p_fail: AngularField,
    #[serde(default)]
    pub outlier: OutlierModel,
    #[serde(default)]
    pub max_distance_cap_m: Option<f64>,
    #[serde(default)]
    pub cap_kind: CapKind,
    #[serde(default = "default_soft_ramp")]
    pub soft_cap_ramp_m: f64,
    #[serde(default)]
    pub tower_obstruction: TowerObstruction,
}

fn default_soft_ramp() -> f64 {
    2.0
}

/// One ranging attempt as seen by the measurement layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement {
    Fail,
    Distance(f64),
}

impl Measurement {
    pub fn meters(&self) -> Option<f64> {
        match *self {
            Measurement::Distance(d) => Some(d),
            Measurement::Fail => None,
        }
    }
}

impl EnvironmentProfile {
    /// Ideal profile: no bias, no noise, never fails.
    pub fn ideal(device: DeviceId, environment: &str, true_distance_m: f64) -> Self {
        Self {
            device,
            environment: environment.to_string(),
            true_distance_m,
            bias_m: AngularField::Constant(0.0),
            sigma_m: AngularField::Constant(0.0),
            p_fail: AngularField::Constant(0.0),
            outlier: OutlierModel::default(),
            max_distance_cap_m: None,
            cap_kind: CapKind::Hard,
            soft_cap_ramp_m: default_soft_ramp(),
            tower_obstruction: TowerObstruction::default(),
        }
    }

    /// Same channel, different ground-truth distance.
    pub fn at_distance(&self, true_distance_m: f64) -> Self {
        Self {
            true_distance_m,
            ..self.clone()
        }
    }

    pub fn with_tower(&self, enabled: bool) -> Self {
        let mut p = self.clone();
        p.tower_obstruction.enabled = enabled;
        p
    }

    /// True when a hard cap makes every attempt fail.
    pub fn beyond_hard_cap(&self) -> bool {
        matches!((self.cap_kind, self.max_distance_cap_m), (CapKind::Hard, Some(cap)) if self.true_distance_m > cap)
    }

    /// Per-attempt failure probability at `pos`, cap included.
    pub fn failure_probability(&self, pos: Position) -> f64 {
        let base = self.p_fail.eval(pos).clamp(0.0, 1.0);
        match (self.cap_kind, self.max_distance_cap_m) {
            (CapKind::Hard, Some(cap)) if self.true_distance_m > cap => 1.0,
            (CapKind::Soft, Some(cap)) if self.true_distance_m > cap => {
                let ramp = if self.soft_cap_ramp_m > 0.0 {
                    ((self.true_distance_m - cap) / self.soft_cap_ramp_m).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                1.0 - (1.0 - base) * (1.0 - ramp)
            }
            _ => base,
        }
    }

    pub fn bias_at(&self, pos: Position) -> f64 {
        let tower = if self.tower_obstruction.enabled { self.tower_obstruction.bias_add_m } else { 0.0 };
        self.bias_m.eval(pos) + tower
    }

    pub fn sigma_at(&self, pos: Position) -> f64 {
        let tower = if self.tower_obstruction.enabled { self.tower_obstruction.sigma_add_m } else { 0.0 };
        (self.sigma_m.eval(pos) + tower).max(0.0)
    }
}

/// Draw one measurement for `pos`.
pub fn sample_measurement<R: Rng + ?Sized>(profile: &EnvironmentProfile, pos: Position, rng: &mut R) -> Measurement {
    let p_fail = profile.failure_probability(pos);
    if p_fail >= 1.0 || rng.random_bool(p_fail) {
        return Measurement::Fail;
    }
    let sigma = profile.sigma_at(pos);
    let noise = if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    };
    let mut d = profile.true_distance_m + profile.bias_at(pos) + noise;

    let o = &profile.outlier;
    let u: f64 = rng.random();
    if u < o.p_enlarge {
        d += enlargement(rng, o);
    } else if u < o.p_enlarge + o.p_reduce {
        let lo = (d - o.reduce_span_m).max(o.reduce_floor_m);
        if lo < d {
            d = rng.random_range(lo..d);
        }
    }
    Measurement::Distance(d)
}

/// Strictly positive multipath excess path length.
fn enlargement<R: Rng + ?Sized>(rng: &mut R, o: &OutlierModel) -> f64 {
    const SHAPE: f64 = 3.0;
    if o.enlarge_tail_m <= 0.0 {
        return f64::MIN_POSITIVE;
    }
    // Lomax(scale, shape) = Pareto(scale, shape) - scale, mean scale / (shape - 1).
    let scale = o.enlarge_tail_m * (SHAPE - 1.0);
    let x = Pareto::new(scale, SHAPE).expect("positive parameters").sample(rng) - scale;
    x.clamp(f64::MIN_POSITIVE, o.enlarge_max_m.max(f64::MIN_POSITIVE))
}

/// Antenna gain factor of a handset for the default shielding lobe.
///
/// 1 when the antenna faces the remote (θ = 0), smallest at θ = 180° with
/// the arm at φ = 90°, where the phone body sits between the antennas.
pub fn shielding_gain(pos: Position) -> f64 {
    ShieldingLobe::default().gain(pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pos(t: f64, p: f64) -> Position {
        Position::new(t, p).unwrap()
    }

    fn gaussian(true_m: f64, bias: f64, sigma: f64) -> EnvironmentProfile {
        EnvironmentProfile {
            bias_m: AngularField::Constant(bias),
            sigma_m: AngularField::Constant(sigma),
            ..EnvironmentProfile::ideal(DeviceId::Dw3000, "custom", true_m)
        }
    }

    fn mean_sd(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        (m, v.sqrt())
    }

    #[test]
    fn position_ranges() {
        assert!(Position::new(360.0, 0.0).is_err());
        assert!(Position::new(359.999, 0.0).is_err());
        assert!(Position::new(0.0, 180.5).is_err());
        assert!(Position::new(-1.0, 0.0).is_err());
        let p = pos(12.34, 179.99);
        assert_eq!((p.theta_deg(), p.phi_deg()), (12.34, 179.99));
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"theta":12.34,"phi":179.99}"#);
        assert_eq!(serde_json::from_str::<Position>(&json).unwrap(), p);
    }

    #[test]
    fn device_ids_parse() {
        assert_eq!("pixel6pro".parse::<DeviceId>().unwrap(), DeviceId::Pixel6Pro);
        assert_eq!("galaxyS21u".parse::<DeviceId>().unwrap(), DeviceId::GalaxyS21u);
        assert!("nokia".parse::<DeviceId>().is_err());
    }

    #[test]
    fn always_failing_profile() {
        let p = EnvironmentProfile {
            p_fail: AngularField::Constant(1.0),
            ..gaussian(5.0, 0.0, 0.1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(sample_measurement(&p, pos(0.0, 90.0), &mut rng), Measurement::Fail);
        }
    }

    #[test]
    fn hard_cap_always_fails() {
        let p = EnvironmentProfile {
            max_distance_cap_m: Some(40.0),
            ..gaussian(41.0, 0.0, 0.05)
        };
        assert!(p.beyond_hard_cap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| sample_measurement(&p, pos(0.0, 0.0), &mut rng) == Measurement::Fail));
        assert!(!p.at_distance(39.0).beyond_hard_cap());
    }

    #[test]
    fn soft_cap_ramps() {
        let p = EnvironmentProfile {
            max_distance_cap_m: Some(11.6),
            cap_kind: CapKind::Soft,
            soft_cap_ramp_m: 2.0,
            ..gaussian(11.0, 0.0, 0.05)
        };
        let at = |d: f64| p.at_distance(d).failure_probability(pos(0.0, 0.0));
        assert_eq!(at(11.0), 0.0);
        assert!((at(12.6) - 0.5).abs() < 1e-12);
        assert_eq!(at(14.0), 1.0);
        assert!(!p.at_distance(20.0).beyond_hard_cap());
    }

    #[test]
    fn gaussian_core_converges() {
        let p = gaussian(5.0, 0.07, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| sample_measurement(&p, pos(30.0, 40.0), &mut rng).meters().unwrap())
            .collect();
        let (m, sd) = mean_sd(&xs);
        assert!((m - 5.07).abs() < 3.0 * 0.2 / 100.0, "mean {m}");
        assert!((sd - 0.2).abs() < 0.01, "sd {sd}");
    }

    #[test]
    fn tower_toggle_adds_bias_and_spread() {
        let p = gaussian(0.35, 0.0, 0.013).with_tower(true);
        assert!((p.bias_at(pos(0.0, 0.0)) - 0.01).abs() < 1e-15);
        assert!((p.sigma_at(pos(0.0, 0.0)) - 0.017).abs() < 1e-15);
    }

    #[test]
    fn outliers_respect_sign_and_floor() {
        let p = EnvironmentProfile {
            outlier: OutlierModel {
                p_enlarge: 0.3,
                enlarge_tail_m: 0.8,
                enlarge_max_m: 3.0,
                p_reduce: 0.3,
                reduce_span_m: 5.0,
                reduce_floor_m: -3.0,
            },
            ..gaussian(0.5, 0.0, 0.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut up, mut down) = (0, 0);
        for _ in 0..10_000 {
            let d = sample_measurement(&p, pos(0.0, 0.0), &mut rng).meters().unwrap();
            assert!(d >= -3.0 && d <= 3.5);
            if d > 0.5 {
                up += 1;
            } else if d < 0.5 {
                down += 1;
            }
        }
        assert!((2700..3300).contains(&up), "{up}");
        assert!((2700..3300).contains(&down), "{down}");
    }

    #[test]
    fn deterministic_stream() {
        let p = gaussian(5.0, 0.0, 0.1);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100).map(|i| sample_measurement(&p, pos((i * 10 % 360) as f64, 90.0), &mut rng).meters()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn shielding_gain_shape() {
        assert_eq!(shielding_gain(pos(0.0, 90.0)), 1.0);
        assert_eq!(shielding_gain(pos(0.0, 0.0)), 1.0);
        let g_min = ShieldingLobe::default().g_min;
        assert!((shielding_gain(pos(180.0, 90.0)) - g_min).abs() < 1e-12);
        assert!(shielding_gain(pos(180.0, 0.0)) > shielding_gain(pos(180.0, 90.0)));
        // minimum over a fine grid is at (180, 90)
        let mut min = (f64::INFINITY, pos(0.0, 0.0));
        for t in 0..360 {
            for p in 0..=180 {
                let g = shielding_gain(pos(t as f64, p as f64));
                assert!((0.0..=1.0).contains(&g));
                if g < min.0 {
                    min = (g, pos(t as f64, p as f64));
                }
            }
        }
        assert_eq!(min.1, pos(180.0, 90.0));
    }
}
