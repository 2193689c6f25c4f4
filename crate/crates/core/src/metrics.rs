//! Spectral robustness scores of a metric tensor and dataset-level summaries.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{input_metric, MetricChoice};
use crate::linalg::{DenseVector, EigenDecomposition};
use crate::vae::VaeModel;

/// Eigenvalues below this fraction of `λ_max` are dropped before computing entropies.
pub const ENTROPY_CUTOFF: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustnessScore {
    pub spectral_radius: f64,
    /// Shannon entropy (nats) of the eigenvalues normalized to sum to one.
    pub vn_entropy_normalized: f64,
    /// `−Σ λ ln λ` on the unnormalized eigenvalues.
    pub vn_entropy_raw: f64,
    /// Eigenvalues kept after the cutoff.
    pub rank: usize,
    /// Set when the spectrum is identically zero.
    pub degenerate: bool,
}

pub fn spectral_radius(eig: &EigenDecomposition) -> Result<f64> {
    if eig.values().is_empty() {
        return Err(Error::InvalidInput("empty spectrum".into()));
    }
    Ok(eig.values().iter().fold(0.0, |m: f64, v| m.max(v.abs())))
}

fn kept_eigenvalues(eig: &EigenDecomposition) -> Result<Vec<f64>> {
    let vals = eig.psd_values()?;
    let top = vals.first().copied().unwrap_or(0.0);
    Ok(vals.into_iter().filter(|&v| v > 0.0 && v >= ENTROPY_CUTOFF * top).collect())
}

/// Von Neumann entropy of a PSD spectrum in nats.
///
/// Normalized mode uses `p_k = λ_k / Σλ` and `−Σ p_k ln p_k`; raw mode is the
/// literal `−Σ λ_k ln λ_k`. An all-zero spectrum gives 0.
pub fn von_neumann_entropy(eig: &EigenDecomposition, normalized: bool) -> Result<f64> {
    if eig.values().is_empty() {
        return Err(Error::InvalidInput("empty spectrum".into()));
    }
    let kept = kept_eigenvalues(eig)?;
    if kept.is_empty() {
        return Ok(0.0);
    }
    if normalized {
        let total: f64 = kept.iter().sum();
        Ok(-kept
            .iter()
            .map(|&l| {
                let p = l / total;
                p * p.ln()
            })
            .sum::<f64>())
    } else {
        Ok(-kept.iter().map(|&l| l * l.ln()).sum::<f64>())
    }
}

pub fn robustness_score(eig: &EigenDecomposition) -> Result<RobustnessScore> {
    let spectral_radius = spectral_radius(eig)?;
    let kept = kept_eigenvalues(eig)?;
    Ok(RobustnessScore {
        spectral_radius,
        vn_entropy_normalized: von_neumann_entropy(eig, true)?,
        vn_entropy_raw: von_neumann_entropy(eig, false)?,
        rank: kept.len(),
        degenerate: kept.is_empty(),
    })
}

/// `(1/N) Σ (x_i − x̂_i)²`
pub fn reconstruction_mse(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape(format!("lengths {} and {}", x.len(), x_hat.len())));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    Ok(x.iter().zip(x_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScoreSummary {
    pub count: usize,
    pub spectral_radius: MeanStd,
    pub vn_entropy_normalized: MeanStd,
    pub vn_entropy_raw: MeanStd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    /// `(sample index, score)` in dataset order.
    pub rows: Vec<(usize, RobustnessScore)>,
    /// Samples whose metric could not be scored.
    pub failures: Vec<(usize, String)>,
    pub summary: ScoreSummary,
}

impl ScoreTable {
    pub fn from_rows(rows: Vec<(usize, RobustnessScore)>, failures: Vec<(usize, String)>) -> Self {
        let pick = |f: fn(&RobustnessScore) -> f64| MeanStd::of(&rows.iter().map(|(_, s)| f(s)).collect::<Vec<_>>());
        let summary = ScoreSummary {
            count: rows.len(),
            spectral_radius: pick(|s| s.spectral_radius),
            vn_entropy_normalized: pick(|s| s.vn_entropy_normalized),
            vn_entropy_raw: pick(|s| s.vn_entropy_raw),
        };
        Self { rows, failures, summary }
    }
}

pub fn score_sample(model: &VaeModel, x: &[f64], source: MetricChoice) -> Result<RobustnessScore> {
    let metric = input_metric(model, x, source)?;
    robustness_score(metric.eig()?)
}

/// Scores every sample. Failing samples are skipped and listed in `failures`.
pub fn score_dataset(model: &VaeModel, samples: &[DenseVector], source: MetricChoice) -> Result<ScoreTable> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty dataset".into()));
    }
    let results: Vec<Result<RobustnessScore>> = samples.par_iter().map(|x| score_sample(model, x, source)).collect();
    let mut rows = Vec::with_capacity(samples.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => rows.push((i, s)),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    Ok(ScoreTable::from_rows(rows, failures))
}
