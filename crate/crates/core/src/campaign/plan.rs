use serde::{Deserialize, Serialize};

use crate::channel::Position;

/// Orientation grid and per-position budget of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub theta_start: f64,
    pub theta_end: f64,
    pub theta_step: f64,
    pub phi_start: f64,
    pub phi_end: f64,
    pub phi_step: f64,
    pub samples_per_position: u32,
    /// Simulated-clock budget per position.
    pub position_timeout_s: f64,
    /// Simulated duration of one ranging attempt.
    #[serde(default = "default_exchange_duration")]
    pub exchange_duration_s: f64,
}

fn default_exchange_duration() -> f64 {
    0.15
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            theta_start: 0.0,
            theta_end: 350.0,
            theta_step: 10.0,
            phi_start: 0.0,
            phi_end: 180.0,
            phi_step: 10.0,
            samples_per_position: 10,
            position_timeout_s: 30.0,
            exchange_duration_s: default_exchange_duration(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid plan: {0}")]
pub struct PlanError(pub String);

fn axis(start: f64, end: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let v = start + step * k as f64;
        if v > end + 1e-9 {
            break;
        }
        out.push(v);
        k += 1;
    }
    out
}

impl SweepPlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        let err = |m: String| Err(PlanError(m));
        for (name, v) in [
            ("theta-start", self.theta_start),
            ("theta-end", self.theta_end),
            ("theta-step", self.theta_step),
            ("phi-start", self.phi_start),
            ("phi-end", self.phi_end),
            ("phi-step", self.phi_step),
            ("timeout", self.position_timeout_s),
            ("exchange-duration", self.exchange_duration_s),
        ] {
            if !v.is_finite() {
                return err(format!("{name} must be finite"));
            }
        }
        if self.theta_step <= 0.0 || self.phi_step <= 0.0 {
            return err("steps must be positive".into());
        }
        if !(0.0 <= self.theta_start && self.theta_start <= self.theta_end && self.theta_end < 360.0) {
            return err(format!(
                "theta range [{}, {}] must satisfy 0 <= start <= end < 360",
                self.theta_start, self.theta_end
            ));
        }
        if !(0.0 <= self.phi_start && self.phi_start <= self.phi_end && self.phi_end <= 180.0) {
            return err(format!(
                "phi range [{}, {}] must satisfy 0 <= start <= end <= 180",
                self.phi_start, self.phi_end
            ));
        }
        if self.samples_per_position == 0 {
            return err("samples per position must be at least 1".into());
        }
        if self.position_timeout_s <= 0.0 || self.exchange_duration_s <= 0.0 {
            return err("timeout and exchange duration must be positive".into());
        }
        // Grid points must survive the 0.01° storage resolution distinctly.
        if self.theta_step < 0.01 || self.phi_step < 0.01 {
            return err("steps below 0.01° are not representable".into());
        }
        Ok(())
    }

    pub fn thetas(&self) -> Vec<f64> {
        axis(self.theta_start, self.theta_end, self.theta_step)
    }

    pub fn phis(&self) -> Vec<f64> {
        axis(self.phi_start, self.phi_end, self.phi_step)
    }

    pub fn position_count(&self) -> usize {
        self.thetas().len() * self.phis().len()
    }

    /// Attempts that fit in the per-position budget.
    pub fn max_attempts(&self) -> u64 {
        (self.position_timeout_s / self.exchange_duration_s + 1e-9).floor() as u64
    }

    /// Apply one `key=value` override as accepted by the command line.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), PlanError> {
        let num = || value.parse::<f64>().map_err(|_| PlanError(format!("{key}: `{value}` is not a number")));
        match key {
            "theta-start" => self.theta_start = num()?,
            "theta-end" => self.theta_end = num()?,
            "theta-step" => self.theta_step = num()?,
            "phi-start" => self.phi_start = num()?,
            "phi-end" => self.phi_end = num()?,
            "phi-step" => self.phi_step = num()?,
            "timeout" => self.position_timeout_s = num()?,
            "exchange-duration" => self.exchange_duration_s = num()?,
            "samples" => {
                self.samples_per_position = value
                    .parse()
                    .map_err(|_| PlanError(format!("samples: `{value}` is not a positive integer")))?
            }
            other => {
                return Err(PlanError(format!(
                    "unknown plan key `{other}` (theta-start, theta-end, theta-step, phi-start, phi-end, phi-step, samples, timeout, exchange-duration)"
                )))
            }
        }
        Ok(())
    }
}

/// Serpentine sweep: the arm climbs from `phi_start` to `phi_end`, the base
/// advances one step, the arm comes back down, and so on until the base has
/// covered its range.
pub fn generate_sweep(plan: &SweepPlan) -> Result<Vec<Position>, PlanError> {
    plan.validate()?;
    let phis = plan.phis();
    let mut out = Vec::with_capacity(plan.position_count());
    for (i, theta) in plan.thetas().into_iter().enumerate() {
        let column: Box<dyn Iterator<Item = &f64>> = if i % 2 == 0 {
            Box::new(phis.iter())
        } else {
            Box::new(phis.iter().rev())
        };
        for &phi in column {
            out.push(Position::new(theta, phi).map_err(|e| PlanError(e.to_string()))?);
        }
    }
    Ok(out)
}
