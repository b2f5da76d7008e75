use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AngularField, ChannelError, DeviceId, EnvironmentProfile};

/// Calibrated profiles shipped with the crate.
pub const DEFAULT_PROFILES_JSON: &str = include_str!("../../profiles/default.json");

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    schema: u32,
    #[serde(default)]
    description: Option<String>,
    profiles: Vec<EnvironmentProfile>,
}

/// All profiles of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfileSet {
    pub device: DeviceId,
    pub profiles: Vec<EnvironmentProfile>,
}

/// Every device's profile set, as loaded from one file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileLibrary {
    sets: Vec<DeviceProfileSet>,
}

fn same_distance(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

impl ProfileLibrary {
    /// The bundled calibration.
    pub fn bundled() -> Self {
        parse_profiles(DEFAULT_PROFILES_JSON).expect("bundled profiles are valid")
    }

    pub fn sets(&self) -> &[DeviceProfileSet] {
        &self.sets
    }

    pub fn device(&self, device: DeviceId) -> Option<&DeviceProfileSet> {
        self.sets.iter().find(|s| s.device == device)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &EnvironmentProfile> {
        self.sets.iter().flat_map(|s| s.profiles.iter())
    }

    /// Exact (device, environment, distance) cell.
    pub fn cell(&self, device: DeviceId, environment: &str, distance_m: f64) -> Option<&EnvironmentProfile> {
        self.device(device)?
            .profiles
            .iter()
            .find(|p| p.environment == environment && same_distance(p.true_distance_m, distance_m))
    }

    /// Profile for an arbitrary distance: the exact cell when shipped,
    /// otherwise the nearest calibrated distance of that device and
    /// environment moved to `distance_m`. Fails when a hard cap makes the
    /// distance unmeasurable.
    pub fn resolve(&self, device: DeviceId, environment: &str, distance_m: f64) -> Result<EnvironmentProfile, ChannelError> {
        let missing = || ChannelError::MissingCell {
            device,
            environment: environment.to_string(),
        };
        let set = self.device(device).ok_or_else(missing)?;
        let nearest = set
            .profiles
            .iter()
            .filter(|p| p.environment == environment)
            .min_by(|a, b| {
                let da = (a.true_distance_m - distance_m).abs();
                let db = (b.true_distance_m - distance_m).abs();
                da.total_cmp(&db)
            })
            .ok_or_else(missing)?;
        let profile = nearest.at_distance(distance_m);
        if profile.beyond_hard_cap() {
            return Err(ChannelError::BeyondCap {
                device,
                distance_m,
                cap_m: profile.max_distance_cap_m.unwrap_or(f64::INFINITY),
            });
        }
        Ok(profile)
    }
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<ProfileLibrary, ChannelError> {
    let text = std::fs::read_to_string(path)?;
    parse_profiles(&text)
}

pub fn parse_profiles(text: &str) -> Result<ProfileLibrary, ChannelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ProfileFile = serde_path_to_error::deserialize(de).map_err(|e| ChannelError::Schema {
        pointer: crate::json_pointer(e.path()),
        message: e.inner().to_string(),
    })?;
    if file.schema != SCHEMA_VERSION {
        return Err(ChannelError::Schema {
            pointer: "/schema".into(),
            message: format!("unsupported schema {}, expected {SCHEMA_VERSION}", file.schema),
        });
    }

    let mut seen = BTreeSet::new();
    for (i, p) in file.profiles.iter().enumerate() {
        validate_profile(p).map_err(|(suffix, message)| ChannelError::Schema {
            pointer: format!("/profiles/{i}{suffix}"),
            message,
        })?;
        let key = (p.device, p.environment.clone(), (p.true_distance_m * 1e6).round() as i64);
        if !seen.insert(key) {
            return Err(ChannelError::Schema {
                pointer: format!("/profiles/{i}"),
                message: format!("duplicate cell {} / {} / {} m", p.device, p.environment, p.true_distance_m),
            });
        }
    }

    let mut sets: Vec<DeviceProfileSet> = Vec::new();
    for p in file.profiles {
        match sets.iter_mut().find(|s| s.device == p.device) {
            Some(s) => s.profiles.push(p),
            None => sets.push(DeviceProfileSet {
                device: p.device,
                profiles: vec![p],
            }),
        }
    }
    sets.sort_by_key(|s| s.device);
    Ok(ProfileLibrary { sets })
}

type Invalid = (String, String);

fn check_field(name: &str, field: &AngularField, lo: f64, hi: f64) -> Result<(), Invalid> {
    field.check().map_err(|(suffix, m)| (format!("/{name}{suffix}"), m))?;
    let (min, max) = field.bounds();
    if min < lo || max > hi {
        let pointer = match field {
            AngularField::Constant(_) => format!("/{name}"),
            AngularField::Form(_) => format!("/{name}/params"),
        };
        return Err((pointer, format!("{name} ranges over [{min}, {max}], must stay within [{lo}, {hi}]")));
    }
    Ok(())
}

fn validate_profile(p: &EnvironmentProfile) -> Result<(), Invalid> {
    let positive = |name: &str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err((format!("/{name}"), format!("{name} must be positive, got {v}")))
        }
    };
    let non_negative = |name: &str, v: f64| {
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err((format!("/{name}"), format!("{name} must be non-negative, got {v}")))
        }
    };
    let probability = |name: &str, v: f64| {
        if (0.0..=1.0).contains(&v) {
            Ok(())
        } else {
            Err((format!("/{name}"), format!("{name} must be a probability, got {v}")))
        }
    };

    if p.environment.is_empty() {
        return Err(("/environment".into(), "environment must not be empty".into()));
    }
    positive("true_distance_m", p.true_distance_m)?;
    check_field("bias_m", &p.bias_m, f64::MIN, f64::MAX)?;
    check_field("sigma_m", &p.sigma_m, 0.0, f64::MAX)?;
    check_field("p_fail", &p.p_fail, 0.0, 1.0)?;

    let o = &p.outlier;
    probability("outlier/p_enlarge", o.p_enlarge)?;
    probability("outlier/p_reduce", o.p_reduce)?;
    if o.p_enlarge + o.p_reduce > 1.0 {
        return Err(("/outlier".into(), "p_enlarge + p_reduce exceeds 1".into()));
    }
    non_negative("outlier/enlarge_tail_m", o.enlarge_tail_m)?;
    non_negative("outlier/enlarge_max_m", o.enlarge_max_m)?;
    non_negative("outlier/reduce_span_m", o.reduce_span_m)?;
    if !o.reduce_floor_m.is_finite() {
        return Err(("/outlier/reduce_floor_m".into(), "floor must be finite".into()));
    }
    if let Some(cap) = p.max_distance_cap_m {
        positive("max_distance_cap_m", cap)?;
    }
    non_negative("soft_cap_ramp_m", p.soft_cap_ramp_m)?;
    non_negative("tower_obstruction/sigma_add_m", p.tower_obstruction.sigma_add_m)?;
    if !p.tower_obstruction.bias_add_m.is_finite() {
        return Err(("/tower_obstruction/bias_add_m".into(), "must be finite".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(sigma: &str) -> String {
        format!(
            r#"{{"schema":1,"profiles":[
              {{"device":"dw3000","environment":"lab","true_distance_m":0.5,
                "bias_m":0.0,"sigma_m":0.05,"p_fail":0.0}},
              {{"device":"dw3000","environment":"outside","true_distance_m":5.0,
                "bias_m":0.0,"sigma_m":{sigma},"p_fail":0.0}}]}}"#
        )
    }

    #[test]
    fn bundled_file_has_every_cell() {
        let lib = ProfileLibrary::bundled();
        for device in DeviceId::ALL {
            for env in ["outside", "lab", "garage"] {
                for d in [0.5, 5.0] {
                    assert!(lib.cell(device, env, d).is_some(), "{device} {env} {d}");
                }
            }
        }
    }

    #[test]
    fn negative_sigma_points_at_field() {
        let err = parse_profiles(&minimal("-0.1")).unwrap_err();
        match err {
            ChannelError::Schema { pointer, message } => {
                assert_eq!(pointer, "/profiles/1/sigma_m");
                assert!(message.contains("sigma_m"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn type_error_points_at_field() {
        let err = parse_profiles(&minimal(r#""wide""#)).unwrap_err();
        let ChannelError::Schema { pointer, .. } = err else { panic!() };
        assert_eq!(pointer, "/profiles/1/sigma_m");

        let bad_device = minimal("0.1").replace(r#""device":"dw3000","environment":"outside""#, r#""device":"nokia","environment":"outside""#);
        let ChannelError::Schema { pointer, .. } = parse_profiles(&bad_device).unwrap_err() else { panic!() };
        assert_eq!(pointer, "/profiles/1/device");
    }

    #[test]
    fn form_parameter_errors() {
        let text = minimal(r#"{"form":"shielding_linear","params":[0.1,0.5,1,180,0.05,-0.2]}"#);
        let ChannelError::Schema { pointer, .. } = parse_profiles(&text).unwrap_err() else { panic!() };
        assert_eq!(pointer, "/profiles/1/sigma_m/params");
    }

    #[test]
    fn duplicate_and_schema_version() {
        let dup = minimal("0.1").replace(r#""environment":"outside","true_distance_m":5.0"#, r#""environment":"lab","true_distance_m":0.5"#);
        let ChannelError::Schema { pointer, .. } = parse_profiles(&dup).unwrap_err() else { panic!() };
        assert_eq!(pointer, "/profiles/1");
        let v2 = minimal("0.1").replace(r#""schema":1"#, r#""schema":2"#);
        let ChannelError::Schema { pointer, .. } = parse_profiles(&v2).unwrap_err() else { panic!() };
        assert_eq!(pointer, "/schema");
    }

    #[test]
    fn resolve_retargets_and_caps() {
        let lib = ProfileLibrary::bundled();
        let p = lib.resolve(DeviceId::Iphone12Pro, "outside", 30.0).unwrap();
        assert_eq!(p.true_distance_m, 30.0);
        assert!(matches!(
            lib.resolve(DeviceId::Iphone12Pro, "outside", 45.0),
            Err(ChannelError::BeyondCap { cap_m, .. }) if cap_m == 40.0
        ));
        assert!(matches!(
            lib.resolve(DeviceId::GalaxyS21u, "outside", 23.5),
            Err(ChannelError::BeyondCap { .. })
        ));
        // Pixel is not capped in firmware, it only fades out.
        assert!(lib.resolve(DeviceId::Pixel6Pro, "outside", 14.0).is_ok());
        assert!(matches!(
            lib.resolve(DeviceId::Pixel6Pro, "moon", 5.0),
            Err(ChannelError::MissingCell { .. })
        ));
    }
}
