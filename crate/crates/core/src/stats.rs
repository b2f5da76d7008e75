//! Ranging error metrics over recordings, polar slices, run comparison and
//! report export.
//!
//! SD is the population standard deviation of the measured distances
//! (pooled over every sample that counts); the mean of the per-position
//! SDs is reported separately as `mean_sd_m`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::campaign::{Recording, SweepPlan};
use crate::channel::Position;

pub const DEFAULT_ACCURACY_BAND_M: f64 = 0.10;
pub const DEFAULT_MIN_SAMPLES: usize = 10;

/// JSON schema of the report written by [`export_report`].
pub const REPORT_SCHEMA_JSON: &str = include_str!("../schemas/report.schema.json");

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("phi {0}° is not part of the sweep plan")]
    PhiNotInPlan(f64),
    #[error("recordings were made with different plans")]
    PlanMismatch,
    #[error("invalid option: {0}")]
    Options(String),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsOptions {
    /// Ground truth; `None` takes it from the recording settings.
    pub true_distance_m: Option<f64>,
    pub accuracy_band_m: f64,
    /// Positions with fewer samples count as failed.
    pub min_samples: usize,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            true_distance_m: None,
            accuracy_band_m: DEFAULT_ACCURACY_BAND_M,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

impl MetricsOptions {
    fn validate(&self) -> Result<(), StatsError> {
        if !(self.accuracy_band_m >= 0.0 && self.accuracy_band_m.is_finite()) {
            return Err(StatsError::Options(format!("band {} must be non-negative", self.accuracy_band_m)));
        }
        if let Some(t) = self.true_distance_m {
            if !t.is_finite() {
                return Err(StatsError::Options("true distance must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Error metrics of a sample set. `None` when there are no samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub n: usize,
    pub mae_m: Option<f64>,
    pub sd_m: Option<f64>,
    pub rmse_m: Option<f64>,
    pub mean_error_m: Option<f64>,
    pub accuracy_frac: Option<f64>,
}

pub fn error_metrics(distances: &[f64], true_distance_m: f64, band_m: f64) -> ErrorMetrics {
    let n = distances.len();
    if n == 0 {
        return ErrorMetrics::default();
    }
    let nf = n as f64;
    let mean_d = distances.iter().sum::<f64>() / nf;
    let var = distances.iter().map(|d| (d - mean_d).powi(2)).sum::<f64>() / nf;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut signed = 0.0;
    let mut hits = 0usize;
    for &d in distances {
        let e = d - true_distance_m;
        abs += e.abs();
        sq += e * e;
        signed += e;
        if e.abs() <= band_m {
            hits += 1;
        }
    }
    ErrorMetrics {
        n,
        mae_m: Some(abs / nf),
        sd_m: Some(var.sqrt()),
        rmse_m: Some((sq / nf).sqrt()),
        mean_error_m: Some(signed / nf),
        accuracy_frac: Some(hits as f64 / nf),
    }
}

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (Some(m), Some(v.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub n: usize,
    pub mean_m: Option<f64>,
    pub sd_m: Option<f64>,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicePoint {
    pub theta_deg: f64,
    pub mean_m: f64,
}

/// Mean distance over one full base rotation at a fixed arm angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarSlice {
    pub phi_deg: f64,
    pub points: Vec<SlicePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub true_distance_m: f64,
    pub accuracy_band_m: f64,
    pub min_samples: usize,
    pub positions: usize,
    pub failed_positions: usize,
    pub samples: usize,
    pub mae_m: Option<f64>,
    pub sd_m: Option<f64>,
    pub rmse_m: Option<f64>,
    pub mean_error_m: Option<f64>,
    pub accuracy_frac: Option<f64>,
    pub failure_frac: f64,
    /// Mean of the per-position SDs.
    pub mean_sd_m: Option<f64>,
    /// Sweep order.
    pub per_position: Vec<PositionStats>,
    /// Ascending `phi_deg`.
    pub polar_slices: Vec<PolarSlice>,
}

impl MetricsReport {
    /// Error metrics are undefined when no sample survived.
    pub fn is_defined(&self) -> bool {
        self.mae_m.is_some()
    }

    pub fn slice(&self, phi_deg: f64) -> Option<&PolarSlice> {
        self.polar_slices.iter().find(|s| same_angle(s.phi_deg, phi_deg))
    }
}

fn same_angle(a: f64, b: f64) -> bool {
    (a * 100.0).round() == (b * 100.0).round()
}

fn counted(rec: &Recording, min_samples: usize) -> impl Iterator<Item = (Position, Vec<f64>)> + '_ {
    rec.data
        .iter()
        .filter(move |r| r.samples.len() >= min_samples)
        .map(|r| (r.position, r.samples.iter().map(|s| s.d_m).collect()))
}

/// Samples that count towards the error metrics: those of non-failed
/// positions.
pub fn counted_distances(rec: &Recording, min_samples: usize) -> Vec<f64> {
    counted(rec, min_samples).flat_map(|(_, d)| d).collect()
}

pub fn compute_metrics(rec: &Recording, opts: &MetricsOptions) -> Result<MetricsReport, StatsError> {
    opts.validate()?;
    let truth = opts.true_distance_m.unwrap_or(rec.settings.true_distance_m);
    let plan = rec.plan();

    let per_position: Vec<PositionStats> = rec
        .data
        .iter()
        .map(|r| {
            let d: Vec<f64> = r.samples.iter().map(|s| s.d_m).collect();
            let (mean_m, sd_m) = mean_sd(&d);
            PositionStats {
                theta_deg: r.position.theta_deg(),
                phi_deg: r.position.phi_deg(),
                n: d.len(),
                mean_m,
                sd_m,
                failed: d.len() < opts.min_samples,
            }
        })
        .collect();

    let distances = counted_distances(rec, opts.min_samples);
    let m = error_metrics(&distances, truth, opts.accuracy_band_m);
    let ok_sds: Vec<f64> = per_position.iter().filter(|p| !p.failed).filter_map(|p| p.sd_m).collect();
    let mean_sd_m = (!ok_sds.is_empty()).then(|| ok_sds.iter().sum::<f64>() / ok_sds.len() as f64);

    // Positions the campaign never reached count as failed.
    let positions = plan.position_count().max(rec.data.len());
    let failed_positions = positions - per_position.iter().filter(|p| !p.failed).count();

    let polar_slices = plan
        .phis()
        .into_iter()
        .map(|phi| PolarSlice {
            phi_deg: Position::new(0.0, phi).map(|p| p.phi_deg()).unwrap_or(phi),
            points: slice_points(&per_position, phi),
        })
        .collect();

    Ok(MetricsReport {
        true_distance_m: truth,
        accuracy_band_m: opts.accuracy_band_m,
        min_samples: opts.min_samples,
        positions,
        failed_positions,
        samples: m.n,
        mae_m: m.mae_m,
        sd_m: m.sd_m,
        rmse_m: m.rmse_m,
        mean_error_m: m.mean_error_m,
        accuracy_frac: m.accuracy_frac,
        failure_frac: if positions == 0 { 0.0 } else { failed_positions as f64 / positions as f64 },
        mean_sd_m,
        per_position,
        polar_slices,
    })
}

fn slice_points(per_position: &[PositionStats], phi: f64) -> Vec<SlicePoint> {
    let mut pts: Vec<SlicePoint> = per_position
        .iter()
        .filter(|p| !p.failed && same_angle(p.phi_deg, phi))
        .filter_map(|p| {
            p.mean_m.map(|mean_m| SlicePoint {
                theta_deg: p.theta_deg,
                mean_m,
            })
        })
        .collect();
    pts.sort_by(|a, b| a.theta_deg.total_cmp(&b.theta_deg));
    pts
}

fn check_phi(plan: &SweepPlan, phi_deg: f64) -> Result<(), StatsError> {
    if plan.phis().iter().any(|&p| same_angle(p, phi_deg)) {
        Ok(())
    } else {
        Err(StatsError::PhiNotInPlan(phi_deg))
    }
}

/// `(theta, mean distance)` over one base rotation at arm angle `phi_deg`,
/// ordered by theta. Failed positions are left out.
pub fn polar_slice(rec: &Recording, phi_deg: f64, min_samples: usize) -> Result<Vec<(f64, f64)>, StatsError> {
    check_phi(rec.plan(), phi_deg)?;
    let opts = MetricsOptions {
        min_samples,
        ..MetricsOptions::default()
    };
    let report = compute_metrics(rec, &opts)?;
    Ok(slice_points(&report.per_position, phi_deg)
        .into_iter()
        .map(|p| (p.theta_deg, p.mean_m))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub n: usize,
    pub mean_m: Option<f64>,
    pub sd_m: Option<f64>,
}

/// Mean and SD over every sample of a slice's non-failed positions.
pub fn slice_summary(rec: &Recording, phi_deg: f64, min_samples: usize) -> Result<SliceSummary, StatsError> {
    check_phi(rec.plan(), phi_deg)?;
    let d: Vec<f64> = counted(rec, min_samples)
        .filter(|(p, _)| same_angle(p.phi_deg(), phi_deg))
        .flat_map(|(_, d)| d)
        .collect();
    let (mean_m, sd_m) = mean_sd(&d);
    Ok(SliceSummary { n: d.len(), mean_m, sd_m })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionDelta {
    pub theta_deg: f64,
    pub phi_deg: f64,
    /// `mean(b) - mean(a)`; `None` if either side failed there.
    pub delta_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Mean of the per-position deltas.
    pub mean_delta_m: Option<f64>,
    /// Pooled SD of `b` minus pooled SD of `a`.
    pub sd_delta_m: Option<f64>,
    pub per_position: Vec<PositionDelta>,
}

/// Compare two runs of the same plan, e.g. a setup torn down and rebuilt.
pub fn compare_recordings(a: &Recording, b: &Recording, min_samples: usize) -> Result<Comparison, StatsError> {
    if a.plan() != b.plan() || a.data.len() != b.data.len() {
        return Err(StatsError::PlanMismatch);
    }
    let mut per_position = Vec::with_capacity(a.data.len());
    for (ra, rb) in a.data.iter().zip(&b.data) {
        if ra.position != rb.position {
            return Err(StatsError::PlanMismatch);
        }
        let mean = |r: &crate::campaign::PositionRecord| {
            (r.samples.len() >= min_samples && !r.samples.is_empty())
                .then(|| r.samples.iter().map(|s| s.d_m).sum::<f64>() / r.samples.len() as f64)
        };
        per_position.push(PositionDelta {
            theta_deg: ra.position.theta_deg(),
            phi_deg: ra.position.phi_deg(),
            delta_m: mean(ra).zip(mean(rb)).map(|(x, y)| y - x),
        });
    }
    let deltas: Vec<f64> = per_position.iter().filter_map(|p| p.delta_m).collect();
    let (mean_delta_m, _) = mean_sd(&deltas);
    let (_, sd_a) = mean_sd(&counted_distances(a, min_samples));
    let (_, sd_b) = mean_sd(&counted_distances(b, min_samples));
    Ok(Comparison {
        mean_delta_m,
        sd_delta_m: sd_a.zip(sd_b).map(|(x, y)| y - x),
        per_position,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
    SvgPolar,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per position: `theta_deg,phi_deg,n,mean_m,sd_m,failed`.
/// Undefined values are empty fields.
pub fn render_csv(report: &MetricsReport) -> Result<String, StatsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["theta_deg", "phi_deg", "n", "mean_m", "sd_m", "failed"])?;
    for p in &report.per_position {
        w.write_record([
            p.theta_deg.to_string(),
            p.phi_deg.to_string(),
            p.n.to_string(),
            opt(p.mean_m),
            opt(p.sd_m),
            p.failed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| StatsError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

const SVG_SIZE: f64 = 400.0;
const SVG_RADIUS: f64 = 170.0;

/// Polar plot: one `<path>` per slice, θ = 0 at the top, clockwise. The
/// radius scale is shared by all slices and labelled on the rings.
pub fn render_svg_polar(slices: &[PolarSlice]) -> String {
    let c = SVG_SIZE / 2.0;
    let max = slices
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.mean_m))
        .fold(0.0f64, f64::max);
    let scale_max = if max > 0.0 { max * 1.1 } else { 1.0 };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}">"#,
        s = SVG_SIZE
    );
    let _ = writeln!(out, r#"<rect width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>"#);
    for ring in 1..=4 {
        let r = SVG_RADIUS * ring as f64 / 4.0;
        let _ = writeln!(out, r##"<circle cx="{c:.3}" cy="{c:.3}" r="{r:.3}" fill="none" stroke="#cccccc"/>"##);
        let label = scale_max * ring as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<text x="{:.3}" y="{:.3}" font-size="10" fill="#666666">{label:.2} m</text>"##,
            c + 2.0,
            c - r - 2.0
        );
    }
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    for (i, s) in slices.iter().enumerate() {
        let mut d = String::new();
        for (k, p) in s.points.iter().enumerate() {
            let r = SVG_RADIUS * p.mean_m.max(0.0) / scale_max;
            let a = p.theta_deg.to_radians();
            let (x, y) = (c + r * a.sin(), c - r * a.cos());
            let _ = write!(d, "{}{x:.3},{y:.3} ", if k == 0 { "M" } else { "L" });
        }
        if !s.points.is_empty() {
            d.push('Z');
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"><title>phi={} deg</title></path>"#,
            d.trim_end(),
            colors[i % colors.len()],
            s.phi_deg
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn export_report(report: &MetricsReport, format: ExportFormat, path: impl AsRef<Path>) -> Result<(), StatsError> {
    let text = match format {
        ExportFormat::Csv => render_csv(report)?,
        ExportFormat::Json => render_json(report),
        ExportFormat::SvgPolar => render_svg_polar(&report.polar_slices),
    };
    std::fs::write(path, text)?;
    Ok(())
}
