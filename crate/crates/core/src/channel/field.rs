use serde::{Deserialize, Serialize};

use super::Position;

/// Body-shielding lobe of a handset antenna.
///
/// `depth` is 0 when the antenna faces the remote and 1 at
/// `theta = center_deg` with the arm at 90°; `gain = 1 - (1 - g_min) * depth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShieldingLobe {
    pub g_min: f64,
    /// Fraction of the full shielding already present with the arm at 0° or 180°.
    pub arm_floor: f64,
    /// Sharpens the lobe around its center.
    pub exponent: f64,
    pub center_deg: f64,
}

impl Default for ShieldingLobe {
    fn default() -> Self {
        Self {
            g_min: 0.1,
            arm_floor: 0.5,
            exponent: 1.0,
            center_deg: 180.0,
        }
    }
}

impl ShieldingLobe {
    pub const N_PARAMS: usize = 4;

    fn from_params(p: &[f64]) -> Self {
        let at = |i: usize| p.get(i).copied().unwrap_or(0.0);
        Self {
            g_min: at(0),
            arm_floor: at(1),
            exponent: at(2),
            center_deg: at(3),
        }
    }

    pub fn depth(&self, pos: Position) -> f64 {
        let facing_away = (1.0 + (pos.theta_deg() - self.center_deg).to_radians().cos()) / 2.0;
        let arm = self.arm_floor + (1.0 - self.arm_floor) * pos.phi_deg().to_radians().sin();
        facing_away.max(0.0).powf(self.exponent) * arm
    }

    pub fn gain(&self, pos: Position) -> f64 {
        1.0 - (1.0 - self.g_min) * self.depth(pos)
    }

    fn check(&self) -> Result<(), (usize, String)> {
        if !(0.0..1.0).contains(&self.g_min) {
            return Err((0, format!("g_min must lie in [0, 1), got {}", self.g_min)));
        }
        if !(0.0..=1.0).contains(&self.arm_floor) {
            return Err((1, format!("arm_floor must lie in [0, 1], got {}", self.arm_floor)));
        }
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return Err((2, format!("exponent must be positive, got {}", self.exponent)));
        }
        if !self.center_deg.is_finite() {
            return Err((3, "center_deg must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    /// `[value]`
    Constant,
    /// `[g_min, arm_floor, exponent, center_deg, base, slope]`:
    /// `base + slope * (1 - gain)`.
    ShieldingLinear,
    /// `[g_min, arm_floor, exponent, center_deg, g_threshold, width, low, high]`:
    /// `low + (high - low) * logistic((g_threshold - gain) / width)`.
    ShieldingLogistic,
}

impl FormKind {
    pub fn n_params(&self) -> usize {
        match self {
            FormKind::Constant => 1,
            FormKind::ShieldingLinear => ShieldingLobe::N_PARAMS + 2,
            FormKind::ShieldingLogistic => ShieldingLobe::N_PARAMS + 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedForm {
    pub form: FormKind,
    pub params: Vec<f64>,
}

/// A scalar over gimbal orientations: either a bare number or a named
/// parametric form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AngularField {
    Constant(f64),
    Form(NamedForm),
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl AngularField {
    pub fn eval(&self, pos: Position) -> f64 {
        match self {
            AngularField::Constant(v) => *v,
            AngularField::Form(NamedForm { form, params }) => {
                let at = |i: usize| params.get(i).copied().unwrap_or(0.0);
                match form {
                    FormKind::Constant => at(0),
                    FormKind::ShieldingLinear => {
                        let g = ShieldingLobe::from_params(params).gain(pos);
                        at(4) + at(5) * (1.0 - g)
                    }
                    FormKind::ShieldingLogistic => {
                        let g = ShieldingLobe::from_params(params).gain(pos);
                        let (thr, width, low, high) = (at(4), at(5), at(6), at(7));
                        low + (high - low) * logistic((thr - g) / width)
                    }
                }
            }
        }
    }

    /// Bounds of the field over all orientations.
    pub fn bounds(&self) -> (f64, f64) {
        let ordered = |a: f64, b: f64| (a.min(b), a.max(b));
        match self {
            AngularField::Constant(v) => (*v, *v),
            AngularField::Form(NamedForm { form, params }) => {
                let at = |i: usize| params.get(i).copied().unwrap_or(0.0);
                match form {
                    FormKind::Constant => (at(0), at(0)),
                    FormKind::ShieldingLinear => ordered(at(4), at(4) + at(5) * (1.0 - at(0))),
                    FormKind::ShieldingLogistic => ordered(at(6), at(7)),
                }
            }
        }
    }

    /// Structural check. On failure returns the JSON-pointer suffix below the
    /// field and a message.
    pub fn check(&self) -> Result<(), (String, String)> {
        match self {
            AngularField::Constant(v) if !v.is_finite() => Err((String::new(), "value must be finite".into())),
            AngularField::Constant(_) => Ok(()),
            AngularField::Form(NamedForm { form, params }) => {
                if params.len() != form.n_params() {
                    return Err((
                        "/params".into(),
                        format!("form {:?} takes {} parameters, got {}", form, form.n_params(), params.len()),
                    ));
                }
                if let Some(i) = params.iter().position(|p| !p.is_finite()) {
                    return Err((format!("/params/{i}"), "parameter must be finite".into()));
                }
                if *form != FormKind::Constant {
                    ShieldingLobe::from_params(params)
                        .check()
                        .map_err(|(i, m)| (format!("/params/{i}"), m))?;
                }
                if *form == FormKind::ShieldingLogistic && params[5] <= 0.0 {
                    return Err(("/params/5".into(), "logistic width must be positive".into()));
                }
                Ok(())
            }
        }
    }

    /// Mean of the field over a set of orientations.
    pub fn mean_over(&self, positions: &[Position]) -> f64 {
        positions.iter().map(|&p| self.eval(p)).sum::<f64>() / positions.len() as f64
    }
}
