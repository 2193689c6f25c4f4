//! β-VAE with a Gaussian encoder, the negative-ELBO objective, the latent
//! mixup penalty and an Adam training loop.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{norm2, sample_beta, sample_std_normal, DenseVector, RngState};
use crate::nn::{sigmoid, Activation, Mlp, Tape};

/// Bounds applied to every log-σ output before exponentiation.
pub const LOG_SIGMA_MIN: f64 = -7.0;
pub const LOG_SIGMA_MAX: f64 = 7.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Likelihood {
    /// Decoder emits logits; mean is `sigmoid(logits)`; inputs must lie in `[0, 1]`.
    Bernoulli,
    /// Decoder emits the mean directly. Unit variance unless the model has a
    /// decoder log-σ head, in which case the variance is learned.
    Gaussian,
}

impl Likelihood {
    pub fn name(self) -> &'static str {
        match self {
            Likelihood::Bernoulli => "bernoulli",
            Likelihood::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(Likelihood::Bernoulli),
            "gaussian" | "gaussian-unit-variance" => Ok(Likelihood::Gaussian),
            other => Err(Error::InvalidParameter(format!("unknown likelihood '{other}'"))),
        }
    }
}

/// Layer widths of a model. Hidden layers use tanh.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub decoder_sigma: bool,
}

impl Architecture {
    /// Encoder 256/256/512/32 with 32×32 heads, mirrored decoder.
    pub fn paper(input_dim: usize) -> Self {
        Self {
            input_dim,
            encoder_hidden: vec![256, 256, 512, 32],
            latent_dim: 32,
            decoder_hidden: vec![32, 512, 256, 256],
            decoder_sigma: false,
        }
    }

    /// 64/64 encoder, d_z = 8, mirrored decoder.
    pub fn small(input_dim: usize) -> Self {
        Self {
            input_dim,
            encoder_hidden: vec![64, 64],
            latent_dim: 8,
            decoder_hidden: vec![64, 64],
            decoder_sigma: false,
        }
    }

    pub fn with_decoder_sigma(mut self, on: bool) -> Self {
        self.decoder_sigma = on;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    encoder_trunk: Mlp,
    mu_head: Mlp,
    logsigma_head: Mlp,
    decoder: Mlp,
    decoder_logsigma: Option<Mlp>,
    beta: f64,
    likelihood: Likelihood,
}

/// Mean, log-σ, the noise used and the resulting sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: DenseVector,
    pub log_sigma: DenseVector,
    pub epsilon: DenseVector,
    pub z: DenseVector,
}

impl VaeModel {
    pub fn new(arch: &Architecture, beta: f64, likelihood: Likelihood, rng: &mut RngState) -> Result<Self> {
        if arch.input_dim == 0 || arch.latent_dim == 0 {
            return Err(Error::InvalidParameter("input and latent dimensions must be positive".into()));
        }
        let mut enc_dims = vec![arch.input_dim];
        enc_dims.extend_from_slice(&arch.encoder_hidden);
        let trunk = if arch.encoder_hidden.is_empty() {
            Mlp::new(arch.input_dim, Vec::new())?
        } else {
            Mlp::dense(&enc_dims, Activation::Tanh, true, rng)?
        };
        let h = trunk.output_dim();
        let mu_head = Mlp::dense(&[h, arch.latent_dim], Activation::Tanh, false, rng)?;
        let logsigma_head = Mlp::dense(&[h, arch.latent_dim], Activation::Tanh, false, rng)?;
        let mut dec_dims = vec![arch.latent_dim];
        dec_dims.extend_from_slice(&arch.decoder_hidden);
        dec_dims.push(arch.input_dim);
        let decoder = Mlp::dense(&dec_dims, Activation::Tanh, false, rng)?;
        let decoder_logsigma = if arch.decoder_sigma {
            let mid = arch.decoder_hidden.first().copied().unwrap_or(arch.latent_dim);
            Some(Mlp::dense(&[arch.latent_dim, mid, arch.input_dim], Activation::Tanh, false, rng)?)
        } else {
            None
        };
        Self::from_parts(trunk, mu_head, logsigma_head, decoder, decoder_logsigma, beta, likelihood)
    }

    /// Assembles a model from explicit networks after checking the dimension chain.
    pub fn from_parts(
        encoder_trunk: Mlp,
        mu_head: Mlp,
        logsigma_head: Mlp,
        decoder: Mlp,
        decoder_logsigma: Option<Mlp>,
        beta: f64,
        likelihood: Likelihood,
    ) -> Result<Self> {
        let h = encoder_trunk.output_dim();
        if mu_head.input_dim() != h || logsigma_head.input_dim() != h {
            return Err(Error::Shape(format!(
                "heads take {} / {} inputs but trunk emits {h}",
                mu_head.input_dim(),
                logsigma_head.input_dim()
            )));
        }
        let dz = mu_head.output_dim();
        if logsigma_head.output_dim() != dz || decoder.input_dim() != dz {
            return Err(Error::Shape("latent dimension differs across heads and decoder".into()));
        }
        if decoder.output_dim() != encoder_trunk.input_dim() {
            return Err(Error::Shape(format!(
                "decoder emits {} values for {}-dimensional inputs",
                decoder.output_dim(),
                encoder_trunk.input_dim()
            )));
        }
        if let Some(ds) = &decoder_logsigma {
            if ds.input_dim() != dz || ds.output_dim() != decoder.output_dim() {
                return Err(Error::Shape("decoder log-sigma head has the wrong shape".into()));
            }
            if likelihood == Likelihood::Bernoulli {
                return Err(Error::InvalidParameter(
                    "a decoder log-sigma head requires the gaussian likelihood".into(),
                ));
            }
        }
        check_beta(beta)?;
        Ok(Self {
            encoder_trunk,
            mu_head,
            logsigma_head,
            decoder,
            decoder_logsigma,
            beta,
            likelihood,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_trunk.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.output_dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        check_beta(beta)?;
        self.beta = beta;
        Ok(())
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn encoder_trunk(&self) -> &Mlp {
        &self.encoder_trunk
    }

    pub fn mu_head(&self) -> &Mlp {
        &self.mu_head
    }

    pub fn logsigma_head(&self) -> &Mlp {
        &self.logsigma_head
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn decoder_logsigma(&self) -> Option<&Mlp> {
        self.decoder_logsigma.as_ref()
    }

    /// Networks in parameter order: trunk, μ head, log-σ head, decoder,
    /// then the optional decoder log-σ head.
    pub fn networks(&self) -> Vec<&Mlp> {
        let mut v = vec![&self.encoder_trunk, &self.mu_head, &self.logsigma_head, &self.decoder];
        if let Some(d) = &self.decoder_logsigma {
            v.push(d);
        }
        v
    }

    fn networks_mut(&mut self) -> Vec<&mut Mlp> {
        let mut v = vec![
            &mut self.encoder_trunk,
            &mut self.mu_head,
            &mut self.logsigma_head,
            &mut self.decoder,
        ];
        if let Some(d) = &mut self.decoder_logsigma {
            v.push(d);
        }
        v
    }

    pub fn num_params(&self) -> usize {
        self.networks().iter().map(|n| n.num_params()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for n in self.networks() {
            n.write_params(&mut v);
        }
        v
    }

    pub fn set_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "model has {} parameters, got {}",
                self.num_params(),
                src.len()
            )));
        }
        let mut off = 0;
        for n in self.networks_mut() {
            off += n.read_params(&src[off..])?;
        }
        Ok(())
    }

    /// Encoder mean and clamped log-σ.
    pub fn encode(&self, x: &[f64]) -> Result<(DenseVector, DenseVector)> {
        let h = self.encoder_trunk.eval(x)?;
        let mu = self.mu_head.eval(&h)?;
        let log_sigma = self.logsigma_head.eval(&h)?.into_iter().map(clamp_log_sigma).collect();
        Ok((mu, log_sigma))
    }

    /// Samples a latent code with the given noise.
    pub fn encode_with_noise(&self, x: &[f64], epsilon: &[f64]) -> Result<LatentCode> {
        let (mu, log_sigma) = self.encode(x)?;
        let z = reparameterize(&mu, &log_sigma, epsilon)?;
        Ok(LatentCode {
            mu,
            log_sigma,
            epsilon: epsilon.to_vec(),
            z,
        })
    }

    /// Decoder mean `g(z)` (after the sigmoid for the Bernoulli likelihood).
    pub fn decode_mean(&self, z: &[f64]) -> Result<DenseVector> {
        let out = self.decoder.eval(z)?;
        Ok(match self.likelihood {
            Likelihood::Bernoulli => out.into_iter().map(sigmoid).collect(),
            Likelihood::Gaussian => out,
        })
    }

    /// Decoder standard deviation when the model has a decoder log-σ head.
    pub fn decode_sigma(&self, z: &[f64]) -> Result<Option<DenseVector>> {
        match &self.decoder_logsigma {
            None => Ok(None),
            Some(net) => Ok(Some(
                net.eval(z)?.into_iter().map(|v| clamp_log_sigma(v).exp()).collect(),
            )),
        }
    }

    /// Deterministic reconstruction `g(μ(x))`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<DenseVector> {
        let (mu, _) = self.encode(x)?;
        self.decode_mean(&mu)
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("input has non-finite entries".into()));
        }
        if self.likelihood == Likelihood::Bernoulli && x.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Domain("bernoulli likelihood needs inputs in [0, 1]".into()));
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(())
}

#[inline]
fn clamp_log_sigma(v: f64) -> f64 {
    v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)
}

#[inline]
fn log_sigma_passes(v: f64) -> bool {
    (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&v)
}

/// `z = μ + exp(log σ) ⊙ ε`
pub fn reparameterize(mu: &[f64], log_sigma: &[f64], epsilon: &[f64]) -> Result<DenseVector> {
    if mu.len() != log_sigma.len() || mu.len() != epsilon.len() {
        return Err(Error::Shape(format!(
            "mu/log_sigma/epsilon lengths {} / {} / {}",
            mu.len(),
            log_sigma.len(),
            epsilon.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(log_sigma)
        .zip(epsilon)
        .map(|((m, ls), e)| m + ls.exp() * e)
        .collect())
}

/// KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − 2 log σ).
pub fn kl_term(mu: &[f64], log_sigma: &[f64]) -> Result<f64> {
    if mu.len() != log_sigma.len() {
        return Err(Error::Shape(format!("mu has {} entries, log_sigma {}", mu.len(), log_sigma.len())));
    }
    if mu.iter().chain(log_sigma).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("KL inputs must be finite".into()));
    }
    let kl: f64 = mu
        .iter()
        .zip(log_sigma)
        .map(|(m, ls)| m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls)
        .sum::<f64>()
        * 0.5;
    // each summand is ≥ 0 analytically; round-off can dip below
    Ok(kl.max(0.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub recon: f64,
    pub kl: f64,
    pub mixup: f64,
    pub total: f64,
}

/// Negative log-likelihood of `x` given decoder outputs, and its gradient with
/// respect to those outputs (mean/logits, decoder log-σ).
fn recon_and_grad(
    likelihood: Likelihood,
    x: &[f64],
    out: &[f64],
    dec_log_sigma_raw: Option<&[f64]>,
) -> (f64, DenseVector, Option<DenseVector>) {
    match (likelihood, dec_log_sigma_raw) {
        (Likelihood::Bernoulli, _) => {
            // BCE with logits: softplus(l) − x·l
            let mut loss = 0.0;
            let grad = x
                .iter()
                .zip(out)
                .map(|(&xv, &l)| {
                    let softplus = if l > 0.0 { l + (-l).exp().ln_1p() } else { l.exp().ln_1p() };
                    loss += softplus - xv * l;
                    sigmoid(l) - xv
                })
                .collect();
            (loss, grad, None)
        }
        (Likelihood::Gaussian, None) => {
            let mut loss = 0.0;
            let grad = x
                .iter()
                .zip(out)
                .map(|(&xv, &m)| {
                    let d = m - xv;
                    loss += 0.5 * d * d;
                    d
                })
                .collect();
            (loss, grad, None)
        }
        (Likelihood::Gaussian, Some(raw)) => {
            // ½ (x − m)² / σ² + log σ per coordinate, constant dropped
            let mut loss = 0.0;
            let mut gm = Vec::with_capacity(x.len());
            let mut gs = Vec::with_capacity(x.len());
            for ((&xv, &m), &r) in x.iter().zip(out).zip(raw) {
                let ls = clamp_log_sigma(r);
                let inv_var = (-2.0 * ls).exp();
                let d = m - xv;
                loss += 0.5 * d * d * inv_var + ls;
                gm.push(d * inv_var);
                gs.push(if log_sigma_passes(r) { 1.0 - d * d * inv_var } else { 0.0 });
            }
            (loss, gm, Some(gs))
        }
    }
}

/// Negative ELBO for one datum with a fixed noise draw: `recon + β·KL`.
pub fn elbo_loss(model: &VaeModel, x: &[f64], epsilon: &[f64]) -> Result<(f64, LossParts)> {
    model.check_domain(x)?;
    let code = model.encode_with_noise(x, epsilon)?;
    let out = model.decoder.eval(&code.z)?;
    let raw = match &model.decoder_logsigma {
        Some(n) => Some(n.eval(&code.z)?),
        None => None,
    };
    let (recon, _, _) = recon_and_grad(model.likelihood, x, &out, raw.as_deref());
    let kl = kl_term(&code.mu, &code.log_sigma)?;
    let total = recon + model.beta * kl;
    Ok((
        total,
        LossParts {
            recon,
            kl,
            mixup: 0.0,
            total,
        },
    ))
}

/// Convex combinations `α·a + (1 − α)·b` of an input pair and a latent pair.
pub fn mixup_pair(x_i: &[f64], x_j: &[f64], z_i: &[f64], z_j: &[f64], alpha: f64) -> Result<(DenseVector, DenseVector)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("mixup alpha must lie in [0, 1], got {alpha}")));
    }
    if x_i.len() != x_j.len() || z_i.len() != z_j.len() {
        return Err(Error::Shape("mixup endpoints differ in length".into()));
    }
    let mix = |a: &[f64], b: &[f64]| -> DenseVector { a.iter().zip(b).map(|(p, q)| alpha * p + (1.0 - alpha) * q).collect() };
    Ok((mix(x_i, x_j), mix(z_i, z_j)))
}

/// `C = ‖z_m − μ(x_m)‖₂ + ‖g(z_m) − x_m‖₂` with both maps at their means.
pub fn mixup_penalty(model: &VaeModel, x_m: &[f64], z_m: &[f64]) -> Result<f64> {
    if x_m.len() != model.input_dim() || z_m.len() != model.latent_dim() {
        return Err(Error::Shape(format!(
            "mixup point has dims ({}, {}), model expects ({}, {})",
            x_m.len(),
            z_m.len(),
            model.input_dim(),
            model.latent_dim()
        )));
    }
    let (mu, _) = model.encode(x_m)?;
    let recon = model.decode_mean(z_m)?;
    let latent: f64 = z_m.iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let input: f64 = recon.iter().zip(x_m).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(latent + input)
}

/// Flat-gradient offsets of each network inside [`VaeModel::params`].
struct Offsets {
    trunk: std::ops::Range<usize>,
    mu: std::ops::Range<usize>,
    ls: std::ops::Range<usize>,
    dec: std::ops::Range<usize>,
    dec_ls: std::ops::Range<usize>,
}

impl Offsets {
    fn of(model: &VaeModel) -> Self {
        let mut off = 0;
        let mut next = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        Offsets {
            trunk: next(model.encoder_trunk.num_params()),
            mu: next(model.mu_head.num_params()),
            ls: next(model.logsigma_head.num_params()),
            dec: next(model.decoder.num_params()),
            dec_ls: next(model.decoder_logsigma.as_ref().map_or(0, |n| n.num_params())),
        }
    }
}

/// One mixup partner for a training sample.
#[derive(Clone, Debug)]
pub struct MixupTarget {
    pub x_m: DenseVector,
    pub z_m: DenseVector,
}

/// Loss of one datum and its gradient, *added* into `grad`.
///
/// The sample contributes `recon + β·KL`, plus `weight · C` when a mixup
/// target is given. The mixup target is a constant (no gradient flows into
/// the endpoint encodings).
pub fn accumulate_sample_grad(
    model: &VaeModel,
    x: &[f64],
    epsilon: &[f64],
    mixup: Option<(&MixupTarget, f64)>,
    grad: &mut [f64],
) -> Result<LossParts> {
    if grad.len() != model.num_params() {
        return Err(Error::Shape("gradient buffer does not match the model".into()));
    }
    model.check_domain(x)?;
    if epsilon.len() != model.latent_dim() {
        return Err(Error::Shape("noise length differs from latent dimension".into()));
    }
    let off = Offsets::of(model);

    let (h, tape_trunk) = model.encoder_trunk.forward(x)?;
    let (mu, tape_mu) = model.mu_head.forward(&h)?;
    let (ls_raw, tape_ls) = model.logsigma_head.forward(&h)?;
    let ls: Vec<f64> = ls_raw.iter().map(|&v| clamp_log_sigma(v)).collect();
    let sigma: Vec<f64> = ls.iter().map(|v| v.exp()).collect();
    let z: Vec<f64> = (0..mu.len()).map(|k| mu[k] + sigma[k] * epsilon[k]).collect();

    let (out, tape_dec) = model.decoder.forward(&z)?;
    let dec_ls = match &model.decoder_logsigma {
        Some(n) => Some(n.forward(&z)?),
        None => None,
    };
    let (recon, g_out, g_dec_ls) =
        recon_and_grad(model.likelihood, x, &out, dec_ls.as_ref().map(|(o, _)| o.as_slice()));
    let kl = kl_term(&mu, &ls)?;

    let mut g_z = model.decoder.backward(&tape_dec, &g_out, Some(&mut grad[off.dec.clone()]))?;
    if let (Some((_, tape)), Some(gs), Some(net)) = (&dec_ls, &g_dec_ls, &model.decoder_logsigma) {
        let extra = net.backward(tape, gs, Some(&mut grad[off.dec_ls.clone()]))?;
        g_z.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
    }

    let beta = model.beta;
    let g_mu: Vec<f64> = (0..mu.len()).map(|k| g_z[k] + beta * mu[k]).collect();
    let g_ls: Vec<f64> = (0..mu.len())
        .map(|k| {
            if log_sigma_passes(ls_raw[k]) {
                g_z[k] * sigma[k] * epsilon[k] + beta * (sigma[k] * sigma[k] - 1.0)
            } else {
                0.0
            }
        })
        .collect();

    let mut g_h = model.mu_head.backward(&tape_mu, &g_mu, Some(&mut grad[off.mu.clone()]))?;
    let g_h2 = model.logsigma_head.backward(&tape_ls, &g_ls, Some(&mut grad[off.ls.clone()]))?;
    g_h.iter_mut().zip(g_h2).for_each(|(a, b)| *a += b);
    model.encoder_trunk.backward(&tape_trunk, &g_h, Some(&mut grad[off.trunk.clone()]))?;

    let mut mix_value = 0.0;
    if let Some((target, weight)) = mixup {
        if weight != 0.0 {
            mix_value = mixup_penalty_grad(model, target, weight, &off, grad)?;
        }
    }

    let total = recon + beta * kl + mixup.map_or(0.0, |(_, w)| w) * mix_value;
    Ok(LossParts {
        recon,
        kl,
        mixup: mix_value,
        total,
    })
}

fn mixup_penalty_grad(model: &VaeModel, t: &MixupTarget, weight: f64, off: &Offsets, grad: &mut [f64]) -> Result<f64> {
    // latent term through the encoder mean
    let (h, tape_trunk) = model.encoder_trunk.forward(&t.x_m)?;
    let (mu, tape_mu): (DenseVector, Tape) = model.mu_head.forward(&h)?;
    let diff_z: Vec<f64> = mu.iter().zip(&t.z_m).map(|(a, b)| a - b).collect();
    let nz = norm2(&diff_z);
    if nz > 0.0 {
        let up: Vec<f64> = diff_z.iter().map(|d| weight * d / nz).collect();
        let g_h = model.mu_head.backward(&tape_mu, &up, Some(&mut grad[off.mu.clone()]))?;
        model.encoder_trunk.backward(&tape_trunk, &g_h, Some(&mut grad[off.trunk.clone()]))?;
    }

    // input term through the decoder mean
    let (out, tape_dec) = model.decoder.forward(&t.z_m)?;
    let mean: Vec<f64> = match model.likelihood {
        Likelihood::Bernoulli => out.iter().map(|&l| sigmoid(l)).collect(),
        Likelihood::Gaussian => out.clone(),
    };
    let diff_x: Vec<f64> = mean.iter().zip(&t.x_m).map(|(a, b)| a - b).collect();
    let nx = norm2(&diff_x);
    if nx > 0.0 {
        let up: Vec<f64> = diff_x
            .iter()
            .zip(&mean)
            .map(|(d, m)| {
                let g = weight * d / nx;
                match model.likelihood {
                    Likelihood::Bernoulli => g * m * (1.0 - m),
                    Likelihood::Gaussian => g,
                }
            })
            .collect();
        model.decoder.backward(&tape_dec, &up, Some(&mut grad[off.dec.clone()]))?;
    }
    Ok(nz + nx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    /// Weight of the mixup penalty; zero disables mixup entirely.
    pub mixup_weight: f64,
    /// Shape `a = b` of the Beta distribution for the mixing coefficient.
    pub mixup_shape: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            epochs: 30,
            batch_size: 64,
            beta: 1.0,
            mixup_weight: 0.0,
            mixup_shape: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        if !(self.mixup_weight >= 0.0 && self.mixup_weight.is_finite()) {
            return Err(Error::InvalidParameter("mixup_weight must be finite and >= 0".into()));
        }
        if !(self.mixup_shape > 0.0) {
            return Err(Error::InvalidParameter("mixup_shape must be positive".into()));
        }
        check_beta(self.beta)
    }
}

/// Per-epoch means over all samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub mixup: f64,
    pub total: f64,
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Samples summed per chunk; fixed so the reduction order never depends on
/// the thread count.
const GRAD_CHUNK: usize = 8;

/// Trains `model` in place with minibatch Adam on the mean per-sample loss.
///
/// Noise and shuffling come from a stream seeded with `config.seed`; mixup
/// partners and coefficients from an independent derived stream, so a run
/// with `mixup_weight = 0` sees exactly the same noise as a mixup run.
pub fn train(model: &mut VaeModel, data: &[DenseVector], config: &TrainConfig) -> Result<Vec<EpochLoss>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    for x in data {
        if x.len() != model.input_dim() {
            return Err(Error::Shape(format!(
                "sample of length {} for a {}-input model",
                x.len(),
                model.input_dim()
            )));
        }
        model.check_domain(x)?;
    }
    model.set_beta(config.beta)?;

    let mut rng = RngState::new(config.seed);
    let mut mix_rng = RngState::derive(config.seed, 1);
    let mut adam = Adam::new(model.num_params(), config.learning_rate);
    let mut params = model.params();
    let dz = model.latent_dim();
    let use_mixup = config.mixup_weight > 0.0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut sums = LossParts::default();
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let eps: Vec<DenseVector> = batch.iter().map(|_| sample_std_normal(&mut rng, dz)).collect();

            // latent codes for the mixup endpoints come from the same noise
            let targets: Option<Vec<MixupTarget>> = if use_mixup {
                let mut partners: Vec<usize> = (0..batch.len()).collect();
                mix_rng.shuffle(&mut partners);
                let mut out = Vec::with_capacity(batch.len());
                let codes: Vec<DenseVector> = batch
                    .iter()
                    .zip(&eps)
                    .map(|(&i, e)| model.encode_with_noise(&data[i], e).map(|c| c.z))
                    .collect::<Result<_>>()?;
                for (a, &b) in partners.iter().enumerate() {
                    let alpha = sample_beta(&mut mix_rng, config.mixup_shape, config.mixup_shape)?;
                    let (x_m, z_m) = mixup_pair(&data[batch[a]], &data[batch[b]], &codes[a], &codes[b], alpha)?;
                    out.push(MixupTarget { x_m, z_m });
                }
                Some(out)
            } else {
                None
            };

            let n_params = params.len();
            let chunk_results: Vec<Result<(Vec<f64>, LossParts)>> = (0..batch.len())
                .collect::<Vec<_>>()
                .par_chunks(GRAD_CHUNK)
                .map(|idx| {
                    let mut g = vec![0.0; n_params];
                    let mut parts = LossParts::default();
                    for &s in idx {
                        let mix = targets.as_ref().map(|t| (&t[s], config.mixup_weight));
                        let p = accumulate_sample_grad(model, &data[batch[s]], &eps[s], mix, &mut g)?;
                        parts.recon += p.recon;
                        parts.kl += p.kl;
                        parts.mixup += p.mixup;
                        parts.total += p.total;
                    }
                    Ok((g, parts))
                })
                .collect();

            let mut grad = vec![0.0; n_params];
            let mut batch_parts = LossParts::default();
            for r in chunk_results {
                let (g, p) = r?;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                batch_parts.recon += p.recon;
                batch_parts.kl += p.kl;
                batch_parts.mixup += p.mixup;
                batch_parts.total += p.total;
            }
            if !batch_parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, batch: batch_idx });
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params, &grad);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, batch: batch_idx });
            }
            model.set_params(&params)?;

            sums.recon += batch_parts.recon;
            sums.kl += batch_parts.kl;
            sums.mixup += batch_parts.mixup;
            sums.total += batch_parts.total;
        }
        let n = data.len() as f64;
        history.push(EpochLoss {
            epoch,
            recon: sums.recon / n,
            kl: sums.kl / n,
            mixup: sums.mixup / n,
            total: sums.total / n,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;

    fn identity_model(n: usize, likelihood: Likelihood) -> VaeModel {
        let id = || Mlp::linear(DenseMatrix::identity(n), vec![0.0; n]).unwrap();
        let zero = Mlp::linear(DenseMatrix::zeros(n, n), vec![0.0; n]).unwrap();
        VaeModel::from_parts(Mlp::new(n, vec![]).unwrap(), id(), zero, id(), None, 1.0, likelihood).unwrap()
    }

    fn small_model(seed: u64, input: usize) -> VaeModel {
        let arch = Architecture {
            input_dim: input,
            encoder_hidden: vec![6],
            latent_dim: 3,
            decoder_hidden: vec![5],
            decoder_sigma: false,
        };
        VaeModel::new(&arch, 0.7, Likelihood::Gaussian, &mut RngState::new(seed)).unwrap()
    }

    #[test]
    fn zero_heads_give_standard_posterior() {
        let n = 3;
        let zero = || Mlp::linear(DenseMatrix::zeros(2, n), vec![0.0; 2]).unwrap();
        let dec = Mlp::linear(DenseMatrix::zeros(n, 2), vec![0.0; n]).unwrap();
        let m = VaeModel::from_parts(Mlp::new(n, vec![]).unwrap(), zero(), zero(), dec, None, 1.0, Likelihood::Gaussian).unwrap();
        let (mu, ls) = m.encode(&[0.3, -2.0, 5.0]).unwrap();
        assert_eq!(mu, vec![0.0, 0.0]);
        assert_eq!(ls, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_encoder_mean() {
        let m = identity_model(2, Likelihood::Gaussian);
        assert_eq!(m.encode(&[1.0, -1.0]).unwrap().0, vec![1.0, -1.0]);
    }

    #[test]
    fn reparameterize_cases() {
        assert_eq!(reparameterize(&[1.5], &[0.3], &[0.0]).unwrap(), vec![1.5]);
        let z = reparameterize(&[1.0], &[2f64.ln()], &[0.5]).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-15);
        let z = reparameterize(&[1.0], &[LOG_SIGMA_MIN], &[2.0]).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-3 * 2.0);
        assert!(reparameterize(&[1.0, 2.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn encoder_clamps_log_sigma() {
        let n = 2;
        let big = Mlp::linear(DenseMatrix::identity(n).scaled(100.0), vec![0.0; n]).unwrap();
        let id = Mlp::linear(DenseMatrix::identity(n), vec![0.0; n]).unwrap();
        let m = VaeModel::from_parts(Mlp::new(n, vec![]).unwrap(), id.clone(), big, id, None, 1.0, Likelihood::Gaussian).unwrap();
        let (_, ls) = m.encode(&[1.0, -1.0]).unwrap();
        assert_eq!(ls, vec![LOG_SIGMA_MAX, LOG_SIGMA_MIN]);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_term(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((kl_term(&[1.0, 0.0], &[0.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_term(&[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // KL(q‖p) = E_q[log q(z) − log p(z)], estimated with 10⁶ draws
        let ls = -1.0f64;
        let sigma = ls.exp();
        let mut rng = RngState::new(21);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let e = rng.normal();
            let z = sigma * e;
            let log_q = -0.5 * e * e - ls;
            let log_p = -0.5 * z * z;
            acc += log_q - log_p;
        }
        let mc = acc / n as f64;
        let exact = kl_term(&[0.0], &[ls]).unwrap();
        assert!((exact - 0.5 * ((-2.0f64).exp() + 1.0)).abs() < 1e-15);
        assert!((mc - exact).abs() / exact < 0.01, "mc {mc} vs {exact}");
    }

    #[test]
    fn elbo_limits() {
        let mut m = identity_model(2, Likelihood::Gaussian);
        let x = [0.4, -0.2];
        let (loss, parts) = elbo_loss(&m, &x, &[0.0, 0.0]).unwrap();
        assert_eq!(parts.recon, 0.0);
        assert!((loss - parts.kl).abs() < 1e-15);
        m.set_beta(0.0).unwrap();
        let (loss, parts) = elbo_loss(&m, &x, &[0.3, 0.1]).unwrap();
        assert_eq!(loss, parts.recon);
        m.set_beta(1.0).unwrap();
        let (loss, parts) = elbo_loss(&m, &x, &[0.3, 0.1]).unwrap();
        assert_eq!(loss, parts.recon + parts.kl);
    }

    #[test]
    fn bernoulli_domain() {
        let m = identity_model(2, Likelihood::Bernoulli);
        assert!(matches!(elbo_loss(&m, &[0.5, 1.5], &[0.0, 0.0]), Err(Error::Domain(_))));
        let (_, parts) = elbo_loss(&m, &[0.5, 1.0], &[0.0, 0.0]).unwrap();
        // logits equal x: BCE = softplus(x) − x²
        let expect = (1.0 + 0.5f64.exp()).ln() - 0.25 + (1.0 + 1.0f64.exp()).ln() - 1.0;
        assert!((parts.recon - expect).abs() < 1e-12);
    }

    #[test]
    fn mixup_pair_endpoints_and_midpoint() {
        let (xi, xj, zi, zj) = ([0.0, 2.0], [2.0, 0.0], [1.0], [3.0]);
        assert_eq!(mixup_pair(&xi, &xj, &zi, &zj, 1.0).unwrap(), (xi.to_vec(), zi.to_vec()));
        assert_eq!(mixup_pair(&xi, &xj, &zi, &zj, 0.0).unwrap(), (xj.to_vec(), zj.to_vec()));
        assert_eq!(mixup_pair(&xi, &xj, &zi, &zj, 0.5).unwrap(), (vec![1.0, 1.0], vec![2.0]));
        assert!(mixup_pair(&xi, &xj, &zi, &zj, 1.5).is_err());
    }

    #[test]
    fn mixup_penalty_vanishes_for_inverse_linear_pair() {
        let w = DenseMatrix::from_rows(&[[2.0, 1.0], [0.0, 1.0]]).unwrap();
        let w_inv = DenseMatrix::from_rows(&[[0.5, -0.5], [0.0, 1.0]]).unwrap();
        let zero = Mlp::linear(DenseMatrix::zeros(2, 2), vec![0.0; 2]).unwrap();
        let m = VaeModel::from_parts(
            Mlp::new(2, vec![]).unwrap(),
            Mlp::linear(w.clone(), vec![0.0; 2]).unwrap(),
            zero,
            Mlp::linear(w_inv, vec![0.0; 2]).unwrap(),
            None,
            1.0,
            Likelihood::Gaussian,
        )
        .unwrap();
        let (xi, xj) = ([0.3, -1.0], [2.0, 0.5]);
        let zi = w.matvec(&xi).unwrap();
        let zj = w.matvec(&xj).unwrap();
        for alpha in [0.0, 0.2, 0.77, 1.0] {
            let (xm, zm) = mixup_pair(&xi, &xj, &zi, &zj, alpha).unwrap();
            assert!(mixup_penalty(&m, &xm, &zm).unwrap() < 1e-14);
        }
    }

    #[test]
    fn mixup_penalty_matches_direct_norms() {
        let m = small_model(3, 4);
        let x = [0.1, 0.2, -0.3, 0.9];
        let z = [0.5, -0.5, 0.25];
        let (mu, _) = m.encode(&x).unwrap();
        let g = m.decode_mean(&z).unwrap();
        let direct = norm2(&crate::linalg::sub_vec(&z, &mu)) + norm2(&crate::linalg::sub_vec(&g, &x));
        let c = mixup_penalty(&m, &x, &z).unwrap();
        assert!(c >= 0.0);
        assert!((c - direct).abs() < 1e-14);
    }

    #[test]
    fn mixup_penalty_endpoints_are_autoencoding_residuals() {
        let m = small_model(8, 4);
        let (xi, xj) = ([0.1, 0.2, -0.3, 0.9], [-1.0, 0.0, 0.5, 0.2]);
        let (zi, _) = m.encode(&xi).unwrap();
        let (zj, _) = m.encode(&xj).unwrap();
        for (alpha, x, z) in [(1.0, &xi, &zi), (0.0, &xj, &zj)] {
            let (xm, zm) = mixup_pair(&xi, &xj, &zi, &zj, alpha).unwrap();
            let residual = norm2(&crate::linalg::sub_vec(&m.decode_mean(z).unwrap(), x));
            assert!((mixup_penalty(&m, &xm, &zm).unwrap() - residual).abs() < 1e-14);
        }
    }

    fn check_grad(model: &VaeModel, x: &[f64], eps: &[f64], mix: Option<(&MixupTarget, f64)>) {
        let mut grad = vec![0.0; model.num_params()];
        let parts = accumulate_sample_grad(model, x, eps, mix, &mut grad).unwrap();
        let loss_at = |p: &[f64]| -> f64 {
            let mut m = model.clone();
            m.set_params(p).unwrap();
            let mut scratch = vec![0.0; p.len()];
            accumulate_sample_grad(&m, x, eps, mix, &mut scratch).unwrap().total
        };
        let p0 = model.params();
        assert!((loss_at(&p0) - parts.total).abs() < 1e-12);
        let h = 1e-5;
        for i in 0..p0.len() {
            let mut pp = p0.clone();
            pp[i] += h;
            let fp = loss_at(&pp);
            pp[i] -= 2.0 * h;
            let fm = loss_at(&pp);
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-5);
            assert!((fd - grad[i]).abs() / denom < 1e-4, "param {i}: analytic {} fd {fd}", grad[i]);
        }
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let m = small_model(11, 4);
        check_grad(&m, &[0.3, -0.5, 1.2, 0.1], &[0.4, -1.1, 0.7], None);
    }

    #[test]
    fn bernoulli_and_mixup_gradients_match_finite_differences() {
        let arch = Architecture {
            input_dim: 4,
            encoder_hidden: vec![5],
            latent_dim: 2,
            decoder_hidden: vec![5],
            decoder_sigma: false,
        };
        let m = VaeModel::new(&arch, 2.0, Likelihood::Bernoulli, &mut RngState::new(2)).unwrap();
        let t = MixupTarget {
            x_m: vec![0.2, 0.9, 0.5, 0.0],
            z_m: vec![0.3, -0.8],
        };
        check_grad(&m, &[0.1, 0.7, 1.0, 0.0], &[0.5, -0.2], Some((&t, 0.8)));
    }

    #[test]
    fn learned_decoder_sigma_gradient_matches_finite_differences() {
        let arch = Architecture::small(3).with_decoder_sigma(true);
        let arch = Architecture {
            encoder_hidden: vec![4],
            latent_dim: 2,
            decoder_hidden: vec![4],
            ..arch
        };
        let m = VaeModel::new(&arch, 1.0, Likelihood::Gaussian, &mut RngState::new(6)).unwrap();
        check_grad(&m, &[0.3, -0.2, 0.8], &[1.0, -0.4], None);
        assert!(VaeModel::new(&arch, 1.0, Likelihood::Bernoulli, &mut RngState::new(6)).is_err());
    }

    fn blob(n: usize, dim: usize, seed: u64) -> Vec<DenseVector> {
        let mut rng = RngState::new(seed);
        (0..n).map(|_| sample_std_normal(&mut rng, dim).into_iter().map(|v| 0.5 * v + 1.0).collect()).collect()
    }

    #[test]
    fn training_reduces_reconstruction_loss() {
        let data = blob(200, 6, 1);
        let arch = Architecture::small(6);
        let mut m = VaeModel::new(&arch, 1.0, Likelihood::Gaussian, &mut RngState::new(3)).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 32,
            seed: 4,
            ..TrainConfig::default()
        };
        let hist = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(hist.len(), 30);
        assert!(hist.last().unwrap().recon < hist[0].recon);
        assert!(m.params().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn training_is_deterministic_and_zero_mixup_is_plain() {
        let data = blob(64, 5, 2);
        let arch = Architecture::small(5);
        let run = |mixup_weight: f64| {
            let mut m = VaeModel::new(&arch, 1.0, Likelihood::Gaussian, &mut RngState::new(9)).unwrap();
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 16,
                mixup_weight,
                seed: 5,
                ..TrainConfig::default()
            };
            let h = train(&mut m, &data, &cfg).unwrap();
            (m.params(), h)
        };
        let (p1, h1) = run(0.0);
        let (p2, h2) = run(0.0);
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
        let (p3, h3) = run(1.0);
        assert_ne!(p1, p3);
        assert!(h3.iter().all(|e| e.mixup > 0.0));
        assert!(h1.iter().all(|e| e.mixup == 0.0));
    }

    #[test]
    fn larger_beta_shrinks_kl() {
        let data = blob(200, 6, 3);
        let arch = Architecture::small(6);
        let kl_for = |beta: f64| {
            let mut m = VaeModel::new(&arch, beta, Likelihood::Gaussian, &mut RngState::new(1)).unwrap();
            let cfg = TrainConfig {
                epochs: 30,
                batch_size: 32,
                beta,
                seed: 2,
                ..TrainConfig::default()
            };
            train(&mut m, &data, &cfg).unwrap().last().unwrap().kl
        };
        assert!(kl_for(0.1) > kl_for(5.0));
    }

    #[test]
    fn training_rejects_bad_input() {
        let arch = Architecture::small(3);
        let mut m = VaeModel::new(&arch, 1.0, Likelihood::Gaussian, &mut RngState::new(1)).unwrap();
        assert!(train(&mut m, &[], &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mut m, &[vec![0.0; 3]], &bad).is_err());
    }
}
