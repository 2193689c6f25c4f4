//! Jacobians of the stochastic encoder and decoder and the pullback metric
//! tensors they induce on input space.
//!
//! The expected encoder metric is `Ĝ = J_μᵀJ_μ + J_σᵀJ_σ`; with a curved
//! latent space the decoder metric `G_z` is sandwiched in between. Metrics are
//! kept as a factor `F` with `FᵀF = Ĝ`, so their rank is bounded by the
//! number of factor rows and eigenpairs come from the small Gram matrix.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::linalg::{gram_eig, sym_eig, DenseMatrix, DenseVector, EigenDecomposition, RngState};
use crate::vae::{Likelihood, VaeModel, LOG_SIGMA_MAX, LOG_SIGMA_MIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricSource {
    /// Flat latent space (`G_z = I`).
    EncoderFlat,
    /// Latent space carrying the decoder pullback `G_z`.
    EncoderDecoderCombined,
    /// Pullback of the decoder onto latent space.
    Decoder,
    /// Monte-Carlo average of sampled encoder metrics.
    MonteCarlo,
}

impl MetricSource {
    pub fn name(self) -> &'static str {
        match self {
            MetricSource::EncoderFlat => "encoder",
            MetricSource::EncoderDecoderCombined => "combined",
            MetricSource::Decoder => "decoder",
            MetricSource::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JacobianPair {
    /// `∂μ/∂x`, d_z × N
    pub j_mu: DenseMatrix,
    /// `∂σ/∂x`, d_z × N
    pub j_sigma: DenseMatrix,
}

impl JacobianPair {
    pub fn new(j_mu: DenseMatrix, j_sigma: DenseMatrix) -> Result<Self> {
        if j_mu.shape() != j_sigma.shape() {
            return Err(Error::Shape(format!(
                "J_mu is {:?} but J_sigma is {:?}",
                j_mu.shape(),
                j_sigma.shape()
            )));
        }
        if !j_mu.is_finite() || !j_sigma.is_finite() {
            return Err(Error::InvalidInput("Jacobians must be finite".into()));
        }
        Ok(Self { j_mu, j_sigma })
    }
}

#[derive(Clone, Debug)]
enum Repr {
    /// `G = FᵀF`
    Factored(DenseMatrix),
    Dense(DenseMatrix),
}

/// Symmetric PSD metric on an `N`-dimensional tangent space with a lazily
/// computed eigendecomposition.
#[derive(Debug)]
pub struct MetricTensor {
    repr: Repr,
    source: MetricSource,
    eig: OnceLock<EigenDecomposition>,
}

impl Clone for MetricTensor {
    fn clone(&self) -> Self {
        let eig = OnceLock::new();
        if let Some(e) = self.eig.get() {
            let _ = eig.set(e.clone());
        }
        Self {
            repr: self.repr.clone(),
            source: self.source,
            eig,
        }
    }
}

impl MetricTensor {
    pub fn from_factor(factor: DenseMatrix, source: MetricSource) -> Result<Self> {
        if !factor.is_finite() {
            return Err(Error::InvalidInput("metric factor has non-finite entries".into()));
        }
        Ok(Self {
            repr: Repr::Factored(factor),
            source,
            eig: OnceLock::new(),
        })
    }

    pub fn from_dense(matrix: DenseMatrix, source: MetricSource) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(Error::Shape("metric must be square".into()));
        }
        if !matrix.is_finite() {
            return Err(Error::InvalidInput("metric has non-finite entries".into()));
        }
        Ok(Self {
            repr: Repr::Dense(matrix),
            source,
            eig: OnceLock::new(),
        })
    }

    pub fn source(&self) -> MetricSource {
        self.source
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            Repr::Factored(f) => f.cols(),
            Repr::Dense(g) => g.rows(),
        }
    }

    pub fn factor(&self) -> Option<&DenseMatrix> {
        match &self.repr {
            Repr::Factored(f) => Some(f),
            Repr::Dense(_) => None,
        }
    }

    /// Dense `N × N` matrix.
    pub fn matrix(&self) -> DenseMatrix {
        match &self.repr {
            Repr::Factored(f) => f.gram(),
            Repr::Dense(g) => g.clone(),
        }
    }

    /// Eigendecomposition, computed on first use. Factors with no more rows
    /// than columns go through the Gram trick.
    pub fn eig(&self) -> Result<&EigenDecomposition> {
        if let Some(e) = self.eig.get() {
            return Ok(e);
        }
        let e = match &self.repr {
            Repr::Factored(f) if f.rows() <= f.cols() => gram_eig(f)?,
            Repr::Factored(f) => sym_eig(&f.gram())?,
            Repr::Dense(g) => sym_eig(g)?,
        };
        e.psd_values()?;
        let _ = self.eig.set(e);
        Ok(self.eig.get().expect("just set"))
    }

    /// `ηᵀGη`, as `‖Fη‖²` when factored.
    pub fn quadratic_form(&self, eta: &[f64]) -> Result<f64> {
        if eta.len() != self.dim() {
            return Err(Error::Shape(format!(
                "direction of length {} for a {}-dimensional metric",
                eta.len(),
                self.dim()
            )));
        }
        Ok(match &self.repr {
            Repr::Factored(f) => f.matvec(eta)?.iter().map(|v| v * v).sum(),
            Repr::Dense(g) => {
                let ge = g.matvec(eta)?;
                ge.iter().zip(eta).map(|(a, b)| a * b).sum::<f64>().max(0.0)
            }
        })
    }
}

/// `∂μ/∂x` and `∂σ/∂x` at `x`, with `σ = exp(log σ)` so that row `k` of the
/// log-σ Jacobian is scaled by `σ_k` (and zeroed where the clamp is active).
pub fn encoder_jacobians(model: &VaeModel, x: &[f64]) -> Result<JacobianPair> {
    let trunk = model.encoder_trunk();
    let h = trunk.eval(x)?;
    let j_trunk = trunk.input_jacobian(x)?;
    let j_mu = model.mu_head().input_jacobian(&h)?.matmul(&j_trunk)?;
    let ls_raw = model.logsigma_head().eval(&h)?;
    let dsigma: Vec<f64> = ls_raw
        .iter()
        .map(|&v| {
            if (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&v) {
                v.exp()
            } else {
                0.0
            }
        })
        .collect();
    let j_sigma = model
        .logsigma_head()
        .input_jacobian(&h)?
        .scale_rows(&dsigma)?
        .matmul(&j_trunk)?;
    JacobianPair::new(j_mu, j_sigma)
}

/// `Ĝ = J_μᵀJ_μ + J_σᵀJ_σ`, stored as the factor `[J_μ; J_σ]`.
pub fn pullback_metric(jp: &JacobianPair) -> Result<MetricTensor> {
    let factor = jp.j_mu.vstack(&jp.j_sigma)?;
    MetricTensor::from_factor(factor, MetricSource::EncoderFlat)
}

/// Average of `(J_μ + ε ⊙ J_σ)ᵀ(J_μ + ε ⊙ J_σ)` over the given noise draws,
/// where `ε ⊙ J_σ` scales row `k` of `J_σ` by `ε_k`.
pub fn mc_metric_with_noise(jp: &JacobianPair, noise: &[DenseVector]) -> Result<MetricTensor> {
    if noise.is_empty() {
        return Err(Error::InvalidParameter("need at least one noise draw".into()));
    }
    let n = jp.j_mu.cols();
    let mut acc = DenseMatrix::zeros(n, n);
    for eps in noise {
        let j = jp.j_mu.add(&jp.j_sigma.scale_rows(eps)?)?;
        let g = j.gram();
        acc.as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .for_each(|(a, b)| *a += b);
    }
    MetricTensor::from_dense(acc.scaled(1.0 / noise.len() as f64), MetricSource::MonteCarlo)
}

/// Brute-force estimate of `E_ε[G_x]` from `samples` noise draws.
pub fn expected_metric_mc(model: &VaeModel, x: &[f64], samples: usize, rng: &mut RngState) -> Result<MetricTensor> {
    if samples == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let jp = encoder_jacobians(model, x)?;
    let dz = model.latent_dim();
    let noise: Vec<DenseVector> = (0..samples).map(|_| crate::linalg::sample_std_normal(rng, dz)).collect();
    mc_metric_with_noise(&jp, &noise)
}

/// Stacked decoder Jacobians `B = [∂μ_dec/∂z; ∂σ_dec/∂z]`; the σ block is
/// omitted for a deterministic decoder.
pub fn decoder_jacobian_stack(model: &VaeModel, z: &[f64]) -> Result<DenseMatrix> {
    let dec = model.decoder();
    let mut j_mean = dec.input_jacobian(z)?;
    if model.likelihood() == Likelihood::Bernoulli {
        let mean: Vec<f64> = model.decode_mean(z)?;
        let d: Vec<f64> = mean.iter().map(|m| m * (1.0 - m)).collect();
        j_mean = j_mean.scale_rows(&d)?;
    }
    match model.decoder_logsigma() {
        None => Ok(j_mean),
        Some(net) => {
            let raw = net.eval(z)?;
            let d: Vec<f64> = raw
                .iter()
                .map(|&v| {
                    if (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&v) {
                        v.exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let j_sigma = net.input_jacobian(z)?.scale_rows(&d)?;
            j_mean.vstack(&j_sigma)
        }
    }
}

/// `G_z = J_μᵀJ_μ + J_σᵀJ_σ` of the decoder at latent point `z`.
pub fn decoder_metric(model: &VaeModel, z: &[f64]) -> Result<MetricTensor> {
    MetricTensor::from_factor(decoder_jacobian_stack(model, z)?, MetricSource::Decoder)
}

/// Square factor `L` with `LᵀL = G` for a small PSD matrix.
fn psd_sqrt_factor(g: &DenseMatrix) -> Result<DenseMatrix> {
    let e = sym_eig(g)?;
    let vals = e.psd_values()?;
    let n = g.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        let s = lam.sqrt();
        for c in 0..n {
            l.set(k, c, s * e.vectors().get(c, k));
        }
    }
    Ok(l)
}

/// `Ĝ = J_μᵀ G_z J_μ + J_σᵀ G_z J_σ` with `G_z` taken at the encoder mean.
///
/// With `G_z = BᵀB` the factor is `[B J_μ; B J_σ]`. When `B` has more rows than
/// the latent dimension it is first compressed to a square root of `G_z`,
/// which leaves `FᵀF` unchanged and keeps the factor at `2·d_z` rows.
pub fn combined_metric(model: &VaeModel, x: &[f64]) -> Result<MetricTensor> {
    let jp = encoder_jacobians(model, x)?;
    let (mu, _) = model.encode(x)?;
    let b = decoder_jacobian_stack(model, &mu)?;
    let b = if b.rows() > model.latent_dim() {
        psd_sqrt_factor(&b.gram())?
    } else {
        b
    };
    let factor = b.matmul(&jp.j_mu)?.vstack(&b.matmul(&jp.j_sigma)?)?;
    MetricTensor::from_factor(factor, MetricSource::EncoderDecoderCombined)
}

/// Which metric an attack or score is computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricChoice {
    Encoder,
    Combined,
}

impl MetricChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "encoder" | "flat" => Ok(MetricChoice::Encoder),
            "combined" => Ok(MetricChoice::Combined),
            other => Err(Error::InvalidParameter(format!("unknown metric source '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricChoice::Encoder => "encoder",
            MetricChoice::Combined => "combined",
        }
    }
}

pub fn input_metric(model: &VaeModel, x: &[f64], choice: MetricChoice) -> Result<MetricTensor> {
    match choice {
        MetricChoice::Encoder => pullback_metric(&encoder_jacobians(model, x)?),
        MetricChoice::Combined => combined_metric(model, x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm2, sample_std_normal};
    use crate::nn::Mlp;
    use crate::vae::Architecture;

    fn random_model(seed: u64, input: usize) -> VaeModel {
        let arch = Architecture {
            input_dim: input,
            encoder_hidden: vec![7, 6],
            latent_dim: 3,
            decoder_hidden: vec![5],
            decoder_sigma: false,
        };
        VaeModel::new(&arch, 1.0, Likelihood::Gaussian, &mut RngState::new(seed)).unwrap()
    }

    fn linear_model(w: DenseMatrix, log_sigma: f64) -> VaeModel {
        let (dz, n) = w.shape();
        let ls = Mlp::linear(DenseMatrix::zeros(dz, n), vec![log_sigma; dz]).unwrap();
        let dec = Mlp::linear(DenseMatrix::zeros(n, dz), vec![0.0; n]).unwrap();
        VaeModel::from_parts(
            Mlp::new(n, vec![]).unwrap(),
            Mlp::linear(w, vec![0.0; dz]).unwrap(),
            ls,
            dec,
            None,
            1.0,
            Likelihood::Gaussian,
        )
        .unwrap()
    }

    fn fd_map(f: impl Fn(&[f64]) -> DenseVector, x: &[f64], h: f64) -> DenseMatrix {
        let m = f(x).len();
        let mut j = DenseMatrix::zeros(m, x.len());
        for c in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[c] += h;
            xm[c] -= h;
            let (a, b) = (f(&xp), f(&xm));
            for r in 0..m {
                j.set(r, c, (a[r] - b[r]) / (2.0 * h));
            }
        }
        j
    }

    fn rel(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-12)
    }

    #[test]
    fn constant_sigma_linear_mean() {
        let w = DenseMatrix::from_rows(&[[1.0, 2.0, 0.0], [0.5, -1.0, 3.0]]).unwrap();
        let m = linear_model(w.clone(), -0.5);
        let jp = encoder_jacobians(&m, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(jp.j_mu, w);
        assert!(jp.j_sigma.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_network_gives_zero_jacobians() {
        let m = linear_model(DenseMatrix::zeros(2, 3), 0.0);
        let jp = encoder_jacobians(&m, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(jp.j_mu.frobenius_norm(), 0.0);
        assert_eq!(jp.j_sigma.frobenius_norm(), 0.0);
    }

    #[test]
    fn encoder_jacobians_match_finite_differences() {
        for seed in 0..5 {
            let m = random_model(seed, 5);
            let x = sample_std_normal(&mut RngState::new(100 + seed), 5);
            let jp = encoder_jacobians(&m, &x).unwrap();
            let fd_mu = fd_map(|p| m.encode(p).unwrap().0, &x, 1e-5);
            let fd_sigma = fd_map(|p| m.encode(p).unwrap().1.iter().map(|v| v.exp()).collect(), &x, 1e-5);
            assert!(rel(&jp.j_mu, &fd_mu) < 1e-4);
            assert!(rel(&jp.j_sigma, &fd_sigma) < 1e-4);
        }
    }

    #[test]
    fn pullback_small_cases() {
        let jp = JacobianPair::new(DenseMatrix::identity(2), DenseMatrix::zeros(2, 2)).unwrap();
        assert_eq!(pullback_metric(&jp).unwrap().matrix(), DenseMatrix::identity(2));

        let jp = JacobianPair::new(
            DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap(),
            DenseMatrix::zeros(1, 2),
        )
        .unwrap();
        let g = pullback_metric(&jp).unwrap().matrix();
        assert_eq!(g, DenseMatrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap());
        assert!(JacobianPair::new(DenseMatrix::zeros(1, 2), DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn mc_with_zero_noise_is_mean_gram() {
        let m = random_model(3, 4);
        let jp = encoder_jacobians(&m, &[0.1, 0.5, -0.2, 0.3]).unwrap();
        let g = mc_metric_with_noise(&jp, &[vec![0.0; 3]]).unwrap().matrix();
        assert!(rel(&g, &jp.j_mu.gram()) < 1e-15);
    }

    #[test]
    fn mc_without_sigma_term_is_exact() {
        let w = DenseMatrix::from_rows(&[[1.0, -2.0], [0.3, 0.4]]).unwrap();
        let m = linear_model(w.clone(), 0.2);
        let g = expected_metric_mc(&m, &[0.0, 1.0], 7, &mut RngState::new(1)).unwrap().matrix();
        assert!(rel(&g, &w.gram()) < 1e-15);
    }

    #[test]
    fn mc_converges_to_closed_form() {
        let m = random_model(12, 5);
        let x = [0.3, -0.1, 0.8, 0.0, -0.6];
        let exact = pullback_metric(&encoder_jacobians(&m, &x).unwrap()).unwrap().matrix();
        let est = expected_metric_mc(&m, &x, 10_000, &mut RngState::new(4)).unwrap().matrix();
        assert!(rel(&est, &exact) < 0.05);
    }

    #[test]
    fn mc_error_shrinks_like_inverse_sqrt() {
        let m = random_model(5, 4);
        let x = [0.2, 0.1, -0.4, 0.9];
        let jp = encoder_jacobians(&m, &x).unwrap();
        let exact = pullback_metric(&jp).unwrap().matrix();
        let rms = |k: usize| {
            let mut rng = RngState::new(k as u64);
            let reps = 40;
            let s: f64 = (0..reps)
                .map(|_| {
                    let noise: Vec<_> = (0..k).map(|_| sample_std_normal(&mut rng, 3)).collect();
                    rel(&mc_metric_with_noise(&jp, &noise).unwrap().matrix(), &exact).powi(2)
                })
                .sum();
            (s / reps as f64).sqrt()
        };
        let ratio = rms(1000) / rms(4000);
        assert!((1.5..=3.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn pullback_is_symmetric_psd_and_low_rank() {
        let m = random_model(7, 9);
        let g = pullback_metric(&encoder_jacobians(&m, &[0.1; 9]).unwrap()).unwrap();
        let dense = g.matrix();
        assert_eq!(dense, dense.transpose());
        let e = g.eig().unwrap();
        let vals = e.psd_values().unwrap();
        let rank = vals.iter().filter(|&&v| v > 1e-10 * vals[0]).count();
        assert!(rank <= 2 * m.latent_dim());
    }

    #[test]
    fn first_order_fidelity() {
        let m = random_model(21, 6);
        let x = [0.2, -0.3, 0.5, 0.1, 0.0, -0.7];
        let g = pullback_metric(&encoder_jacobians(&m, &x).unwrap()).unwrap();
        let stacked = |p: &[f64]| -> DenseVector {
            let (mu, ls) = m.encode(p).unwrap();
            mu.into_iter().chain(ls.into_iter().map(f64::exp)).collect()
        };
        let base = stacked(&x);
        let mut rng = RngState::new(2);
        let h = 1e-3;
        for _ in 0..10 {
            let u = rng.unit_sphere(6);
            let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + h * b).collect();
            let moved = stacked(&xp);
            let d2: f64 = moved.iter().zip(&base).map(|(a, b)| (a - b).powi(2)).sum();
            let q = h * h * g.quadratic_form(&u).unwrap();
            assert!((d2 - q).abs() / (q + 1e-12) < 0.05);
        }
    }

    #[test]
    fn quadratic_form_cases() {
        let m = random_model(4, 5);
        let g = pullback_metric(&encoder_jacobians(&m, &[0.3; 5]).unwrap()).unwrap();
        assert_eq!(g.quadratic_form(&[0.0; 5]).unwrap(), 0.0);
        let e = g.eig().unwrap();
        let v = e.vector(0).unwrap();
        assert!((g.quadratic_form(&v).unwrap() - e.values()[0]).abs() < 1e-10 * e.values()[0]);
        let eta = sample_std_normal(&mut RngState::new(3), 5);
        let dense = g.matrix();
        let direct: f64 = crate::linalg::dot(&dense.matvec(&eta).unwrap(), &eta);
        assert!((g.quadratic_form(&eta).unwrap() - direct).abs() < 1e-10 * direct.abs().max(1.0));
        assert!(g.quadratic_form(&[1.0]).is_err());
    }

    fn decoder_only(dec: Mlp, likelihood: Likelihood) -> VaeModel {
        let (dz, n) = (dec.input_dim(), dec.output_dim());
        let enc = Mlp::linear(DenseMatrix::zeros(dz, n), vec![0.0; dz]).unwrap();
        VaeModel::from_parts(Mlp::new(n, vec![]).unwrap(), enc.clone(), enc, dec, None, 1.0, likelihood).unwrap()
    }

    #[test]
    fn decoder_metric_identity_and_linear() {
        let m = decoder_only(Mlp::linear(DenseMatrix::identity(3), vec![0.0; 3]).unwrap(), Likelihood::Gaussian);
        assert_eq!(decoder_metric(&m, &[0.2, 0.1, 0.0]).unwrap().matrix(), DenseMatrix::identity(3));

        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 1.0], [3.0, -1.0]]).unwrap();
        let m = decoder_only(Mlp::linear(a.clone(), vec![0.5; 3]).unwrap(), Likelihood::Gaussian);
        assert_eq!(decoder_metric(&m, &[0.4, -0.3]).unwrap().matrix(), a.gram());
    }

    #[test]
    fn decoder_metric_matches_finite_differences() {
        let arch = Architecture {
            input_dim: 5,
            encoder_hidden: vec![4],
            latent_dim: 3,
            decoder_hidden: vec![6],
            decoder_sigma: true,
        };
        let m = VaeModel::new(&arch, 1.0, Likelihood::Gaussian, &mut RngState::new(8)).unwrap();
        let z = [0.3, -0.2, 0.9];
        let fd = fd_map(
            |p| {
                let mut v = m.decode_mean(p).unwrap();
                v.extend(m.decode_sigma(p).unwrap().unwrap());
                v
            },
            &z,
            1e-5,
        );
        let g = decoder_metric(&m, &z).unwrap().matrix();
        assert!(rel(&g, &fd.gram()) < 1e-4);

        let mb = VaeModel::new(&Architecture { decoder_sigma: false, ..arch }, 1.0, Likelihood::Bernoulli, &mut RngState::new(8)).unwrap();
        let fd = fd_map(|p| mb.decode_mean(p).unwrap(), &z, 1e-5);
        assert!(rel(&decoder_metric(&mb, &z).unwrap().matrix(), &fd.gram()) < 1e-4);
    }

    fn with_decoder(m: &VaeModel, dec: Mlp) -> VaeModel {
        VaeModel::from_parts(
            m.encoder_trunk().clone(),
            m.mu_head().clone(),
            m.logsigma_head().clone(),
            dec,
            None,
            1.0,
            Likelihood::Gaussian,
        )
        .unwrap()
    }

    #[test]
    fn combined_with_identity_decoder_equals_flat() {
        let base = random_model(31, 3);
        let m = with_decoder(&base, Mlp::linear(DenseMatrix::identity(3), vec![0.0; 3]).unwrap());
        let x = [0.4, -0.9, 0.2];
        let flat = pullback_metric(&encoder_jacobians(&m, &x).unwrap()).unwrap().matrix();
        let comb = combined_metric(&m, &x).unwrap().matrix();
        assert!(comb.sub(&flat).unwrap().frobenius_norm() <= 1e-10 * flat.frobenius_norm());

        let m2 = with_decoder(&base, Mlp::linear(DenseMatrix::identity(3).scaled(2.0), vec![0.0; 3]).unwrap());
        let comb2 = combined_metric(&m2, &x).unwrap().matrix();
        assert!(comb2.sub(&flat.scaled(4.0)).unwrap().frobenius_norm() <= 1e-10 * flat.frobenius_norm());
    }

    #[test]
    fn combined_factored_matches_dense_assembly() {
        let m = random_model(40, 5);
        let x = [0.1, 0.2, 0.3, -0.4, 0.5];
        let jp = encoder_jacobians(&m, &x).unwrap();
        let gz = decoder_metric(&m, &m.encode(&x).unwrap().0).unwrap().matrix();
        let sandwich = |j: &DenseMatrix| j.transpose().matmul(&gz).unwrap().matmul(j).unwrap();
        let dense = sandwich(&jp.j_mu).add(&sandwich(&jp.j_sigma)).unwrap();
        let comb = combined_metric(&m, &x).unwrap();
        assert!(rel(&comb.matrix(), &dense) < 1e-10);
        let eta = [1.0, 0.0, -1.0, 0.5, 0.25];
        let q = crate::linalg::dot(&dense.matvec(&eta).unwrap(), &eta);
        assert!((comb.quadratic_form(&eta).unwrap() - q).abs() < 1e-10 * q.max(1.0));
        assert!(norm2(&eta) > 0.0);
    }
}
