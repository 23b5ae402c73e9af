//! Evaluation metrics: angular error with the green channel inserted,
//! summary statistics, illuminant counting and per-illuminant error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{AidError, Result};
use crate::imaging::{ChromaticityRB, IlluminationMap, WeightMaps};
use crate::losses::{match_centroids, CentroidSet};
use crate::model::Decomposition;
use crate::synth::Scene;

/// Weight-map maximum at or above which a slot counts as an active illuminant.
pub const ACTIVE_THRESHOLD: f64 = 0.3;

/// Angle in degrees between two RGB vectors.
pub fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Angular error between two chromaticities as `(r, 1, b)` vectors.
pub fn angular_error(a: &ChromaticityRB, b: &ChromaticityRB) -> f64 {
    angle_between(a.rgb(), b.rgb())
}

/// Mean per-pixel angular error between two illumination maps.
pub fn map_mae(pred: &IlluminationMap, gt: &IlluminationMap) -> Result<f64> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(AidError::dim(
            "map_mae",
            &[pred.height(), pred.width()],
            &[gt.height(), gt.width()],
        ));
    }
    let n = pred.num_pixels();
    let total: f64 = (0..n).map(|i| angular_error(&pred.pixel(i), &gt.pixel(i))).sum();
    Ok(total / n as f64)
}

/// Active-slot count and mask: slot `k` is active iff `max_x α_k(x) >= threshold`.
pub fn count_illuminants(weights: &WeightMaps, threshold: f64) -> (usize, Vec<bool>) {
    let mask: Vec<bool> = (0..weights.count())
        .map(|k| weights.max_weight(k) >= threshold)
        .collect();
    (mask.iter().filter(|&&a| a).count(), mask)
}

/// Angular error of every ground-truth illuminant against the predicted
/// chromaticity of its centroid-matched slot.
pub fn per_illuminant_ae(decomp: &Decomposition, scene: &Scene, centroids: &CentroidSet) -> Result<Vec<f64>> {
    let m = match_centroids(&scene.gt_chromas, centroids)?;
    m.indices
        .iter()
        .zip(&scene.gt_chromas)
        .map(|(&slot, gt)| {
            let pred = decomp.chromas.get(slot).ok_or_else(|| {
                AidError::Argument(format!("matched slot {slot} missing from decomposition"))
            })?;
            Ok(angular_error(gt, pred))
        })
        .collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub trimean: f64,
    pub best25: f64,
    pub worst25: f64,
}

/// Mean, median, tri-mean and best/worst quartile means.
///
/// Quartile means average the `max(1, n/4)` smallest or largest values.
pub fn summarize(errors: &[f64]) -> Result<SummaryStats> {
    if errors.is_empty() {
        return Err(AidError::Argument("cannot summarize an empty error list".into()));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(AidError::Argument("error list contains non-finite values".into()));
    }
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let q = (n / 4).max(1);
    let mean_of = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (q1, q2, q3) = (
        quantile_sorted(&s, 0.25),
        quantile_sorted(&s, 0.5),
        quantile_sorted(&s, 0.75),
    );
    Ok(SummaryStats {
        mean: mean_of(&s),
        median: q2,
        trimean: (q1 + 2.0 * q2 + q3) / 4.0,
        best25: mean_of(&s[..q]),
        worst25: mean_of(&s[n - q..]),
    })
}

/// Per-scene evaluation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub scene_id: usize,
    pub n_illuminants: usize,
    pub mae: f64,
    pub predicted_count: usize,
    pub illuminant_ae: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: SummaryStats,
    pub count_accuracy: f64,
    pub illuminant_ae_mean: f64,
    pub illuminant_ae_median: f64,
    pub records: Vec<ImageRecord>,
}

impl EvalReport {
    /// Assembles a report; record order does not affect any aggregate.
    pub fn from_records(mut records: Vec<ImageRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.scene_id);
        let maes: Vec<f64> = records.iter().map(|r| r.mae).collect();
        let mae = summarize(&maes)?;
        let correct = records
            .iter()
            .filter(|r| r.predicted_count == r.n_illuminants)
            .count();
        let flat: Vec<f64> = records.iter().flat_map(|r| r.illuminant_ae.iter().copied()).collect();
        let ae = summarize(&flat)?;
        Ok(EvalReport {
            mae,
            count_accuracy: correct as f64 / records.len() as f64,
            illuminant_ae_mean: ae.mean,
            illuminant_ae_median: ae.median,
            records,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width text table of the aggregate metrics.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rows = [
            ("mean", self.mae.mean),
            ("median", self.mae.median),
            ("tri-mean", self.mae.trimean),
            ("best 25%", self.mae.best25),
            ("worst 25%", self.mae.worst25),
            ("# illum acc.", self.count_accuracy),
            ("illum AE mean", self.illuminant_ae_mean),
            ("illum AE median", self.illuminant_ae_median),
        ];
        let _ = writeln!(out, "{:<16} {:>10}", "metric", "value");
        let _ = writeln!(out, "{}", "-".repeat(27));
        for (name, v) in rows {
            let _ = writeln!(out, "{name:<16} {v:>10.4}");
        }
        let _ = writeln!(out, "{:<16} {:>10}", "images", self.records.len());
        out
    }
}
