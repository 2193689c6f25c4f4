//! Input-space attacks on the encoder: the one-step eigendirection attack,
//! l2-bounded projected gradient ascent on the latent mean, and a
//! random-direction control.

use crate::error::{Error, Result};
use crate::geometry::{input_metric, MetricChoice, MetricTensor};
use crate::linalg::{axpy, norm2, DenseVector, RngState};
use crate::metrics::reconstruction_mse;
use crate::vae::VaeModel;

/// Canonical demonstration step sizes.
pub const DEMO_STEPS: [f64; 2] = [0.5233, 0.7443];

/// Eigenvalues at or below this fraction of `λ_max` count as numerically zero.
pub const RANK_REL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackMode {
    /// `x_c = x + δ·λ_k·v_k`
    EigenvalueScaled,
    /// `x_c = x + δ·v_k`
    UnitStep,
}

impl AttackMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scaled" | "eigenvalue-scaled" => Ok(AttackMode::EigenvalueScaled),
            "unit" | "unit-step" => Ok(AttackMode::UnitStep),
            other => Err(Error::InvalidParameter(format!("unknown attack mode '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackMode::EigenvalueScaled => "scaled",
            AttackMode::UnitStep => "unit",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub x_original: DenseVector,
    pub x_corrupted: DenseVector,
    /// Unit-norm perturbation direction.
    pub direction: DenseVector,
    /// Scalar multiplying `direction` in `x_corrupted = x_original + step·direction`.
    pub step: f64,
    /// Eigenvalue of the attacked direction (eigen attack only).
    pub eigenvalue: Option<f64>,
    /// `‖μ(x_c) − μ(x)‖₂`
    pub latent_shift: f64,
    /// MSE between `x_original` and the mean reconstruction of `x_corrupted`.
    pub recon_mse: f64,
}

impl AttackResult {
    pub fn perturbation_norm(&self) -> f64 {
        norm2(&crate::linalg::sub_vec(&self.x_corrupted, &self.x_original))
    }
}

/// Re-encodes and decodes `x_c` with zero noise and fills in the result.
pub fn evaluate_perturbation(
    model: &VaeModel,
    x: &[f64],
    direction: DenseVector,
    step: f64,
    eigenvalue: Option<f64>,
) -> Result<AttackResult> {
    let x_c = axpy(x, step, &direction);
    let (mu0, _) = model.encode(x)?;
    let (mu1, _) = model.encode(&x_c)?;
    let latent_shift = norm2(&crate::linalg::sub_vec(&mu1, &mu0));
    let recon = model.decode_mean(&mu1)?;
    let recon_mse = reconstruction_mse(x, &recon)?;
    Ok(AttackResult {
        x_original: x.to_vec(),
        x_corrupted: x_c,
        direction,
        step,
        eigenvalue,
        latent_shift,
        recon_mse,
    })
}

/// The `k`-th (1-based) eigenpair of `metric`, with the eigenvector's first
/// component of magnitude above 1e-12 made positive.
pub fn eigen_direction(metric: &MetricTensor, k: usize) -> Result<(f64, DenseVector)> {
    let eig = metric.eig()?;
    let vals = eig.psd_values()?;
    let top = vals.first().copied().unwrap_or(0.0);
    let rank = vals
        .iter()
        .take(eig.num_vectors())
        .filter(|&&v| v > 0.0 && v > RANK_REL_TOL * top)
        .count();
    if k == 0 || k > rank {
        return Err(Error::Rank { k, rank });
    }
    let mut v = eig.vector(k - 1).expect("k within stored vectors");
    if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
    }
    Ok((vals[k - 1], v))
}

/// One-step attack along the `k`-th eigendirection of a precomputed metric.
pub fn eigen_attack_with_metric(
    model: &VaeModel,
    x: &[f64],
    metric: &MetricTensor,
    delta: f64,
    k: usize,
    mode: AttackMode,
) -> Result<AttackResult> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {delta}")));
    }
    let (lambda, v) = eigen_direction(metric, k)?;
    let step = match mode {
        AttackMode::EigenvalueScaled => delta * lambda,
        AttackMode::UnitStep => delta,
    };
    evaluate_perturbation(model, x, v, step, Some(lambda))
}

/// One-step attack along the `k`-th eigendirection of the input metric at `x`.
pub fn eigen_attack(
    model: &VaeModel,
    x: &[f64],
    delta: f64,
    k: usize,
    mode: AttackMode,
    source: MetricChoice,
) -> Result<AttackResult> {
    let metric = input_metric(model, x, source)?;
    eigen_attack_with_metric(model, x, &metric, delta, k, mode)
}

/// `μ(p)` and `∇_p ⟨upstream, μ(p)⟩`.
fn mean_vjp(model: &VaeModel, p: &[f64], upstream: impl FnOnce(&[f64]) -> DenseVector) -> Result<(DenseVector, DenseVector)> {
    let (h, tape_trunk) = model.encoder_trunk().forward(p)?;
    let (mu, tape_mu) = model.mu_head().forward(&h)?;
    let up = upstream(&mu);
    let g_h = model.mu_head().backward(&tape_mu, &up, None)?;
    let g_x = model.encoder_trunk().backward(&tape_trunk, &g_h, None)?;
    Ok((mu, g_x))
}

/// Projected gradient ascent on `d(η) = ‖μ(x + η) − μ(x)‖²` over the ball
/// `‖η‖₂ ≤ eta0`.
///
/// Starts from a random `η` of norm `eta0 / 10`, takes normalized gradient
/// steps of length `step_size`, projects back onto the ball, and returns the
/// best iterate seen.
pub fn pga_latent_attack(
    model: &VaeModel,
    x: &[f64],
    eta0: f64,
    steps: usize,
    step_size: f64,
    rng: &mut RngState,
) -> Result<AttackResult> {
    if !(eta0 > 0.0 && eta0.is_finite()) {
        return Err(Error::InvalidParameter(format!("norm budget must be positive, got {eta0}")));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("need at least one ascent step".into()));
    }
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {step_size}")));
    }
    let (mu0, _) = model.encode(x)?;
    let mut eta: DenseVector = rng.unit_sphere(x.len()).into_iter().map(|v| v * eta0 / 10.0).collect();
    let mut best = (f64::NEG_INFINITY, eta.clone());

    for it in 0..=steps {
        let p = axpy(x, 1.0, &eta);
        let (mu, grad) = mean_vjp(model, &p, |mu| mu.iter().zip(&mu0).map(|(a, b)| 2.0 * (a - b)).collect())?;
        let d: f64 = mu.iter().zip(&mu0).map(|(a, b)| (a - b).powi(2)).sum();
        if !d.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::AttackDiverged(format!("non-finite objective at iteration {it}")));
        }
        if d > best.0 {
            best = (d, eta.clone());
        }
        if it == steps {
            break;
        }
        let gn = norm2(&grad);
        if gn == 0.0 {
            break;
        }
        eta = axpy(&eta, step_size / gn, &grad);
        let en = norm2(&eta);
        if en > eta0 {
            eta.iter_mut().for_each(|v| *v *= eta0 / en);
        }
    }

    let eta = best.1;
    let en = norm2(&eta);
    let direction = if en > 0.0 {
        eta.iter().map(|v| v / en).collect()
    } else {
        rng.unit_sphere(x.len())
    };
    evaluate_perturbation(model, x, direction, en, None)
}

/// `x_c = x + step_norm·u` with `u` uniform on the unit sphere.
pub fn random_direction_attack(model: &VaeModel, x: &[f64], step_norm: f64, rng: &mut RngState) -> Result<AttackResult> {
    if !(step_norm > 0.0 && step_norm.is_finite()) {
        return Err(Error::InvalidParameter(format!("step norm must be positive, got {step_norm}")));
    }
    let u = rng.unit_sphere(x.len());
    evaluate_perturbation(model, x, u, step_norm, None)
}
