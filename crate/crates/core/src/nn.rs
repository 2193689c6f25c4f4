//! Multilayer perceptrons with reverse-mode parameter gradients and
//! forward-mode input Jacobians.
//!
//! Parameters are exposed as one flat vector per network (each affine layer
//! contributes its row-major weight followed by its bias) so that optimizers
//! and checkpoints can treat a network as a plain `&[f64]`.

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector, RngState};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// `y = W x + b`, with `W` stored output-major (`out × in`).
    Affine { weight: DenseMatrix, bias: DenseVector },
    Tanh,
    Sigmoid,
    /// Batch normalization frozen to running statistics: `y = scale ⊙ x + shift`.
    /// Not trainable.
    FrozenNorm { scale: DenseVector, shift: DenseVector },
}

impl Layer {
    pub fn affine(weight: DenseMatrix, bias: DenseVector) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Layer::Affine { weight, bias })
    }

    /// Frozen batch-norm from running mean/variance and the learned affine.
    pub fn frozen_norm(mean: &[f64], var: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Self> {
        let n = mean.len();
        if var.len() != n || gamma.len() != n || beta.len() != n {
            return Err(Error::Shape("frozen-norm statistics differ in length".into()));
        }
        let scale: Vec<f64> = (0..n).map(|i| gamma[i] / (var[i] + eps).sqrt()).collect();
        let shift: Vec<f64> = (0..n).map(|i| beta[i] - mean[i] * scale[i]).collect();
        if scale.iter().chain(&shift).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("frozen-norm parameters are not finite".into()));
        }
        Ok(Layer::FrozenNorm { scale, shift })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Affine { .. } => "affine",
            Layer::Tanh => "tanh",
            Layer::Sigmoid => "sigmoid",
            Layer::FrozenNorm { .. } => "frozen-norm",
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Layer::Affine { weight, bias } => weight.rows() * weight.cols() + bias.len(),
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    fn layer(self) -> Layer {
        match self {
            Activation::Tanh => Layer::Tanh,
            Activation::Sigmoid => Layer::Sigmoid,
        }
    }
}

/// Cached per-layer values from a forward pass: `values[0]` is the input and
/// `values[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct Tape {
    values: Vec<DenseVector>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("tape always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

impl Mlp {
    /// Validates the dimension chain of `layers` starting from `input_dim`.
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut dim = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Affine { weight, bias } => {
                    if weight.cols() != dim {
                        return Err(Error::Shape(format!(
                            "layer {i}: affine expects {} inputs, chain provides {dim}",
                            weight.cols()
                        )));
                    }
                    if bias.len() != weight.rows() {
                        return Err(Error::Shape(format!("layer {i}: bias length mismatch")));
                    }
                    if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
                        return Err(Error::InvalidInput(format!("layer {i}: non-finite parameters")));
                    }
                    dim = weight.rows();
                }
                Layer::FrozenNorm { scale, shift } => {
                    if scale.len() != dim || shift.len() != dim {
                        return Err(Error::Shape(format!(
                            "layer {i}: frozen-norm width {} on a {dim}-wide chain",
                            scale.len()
                        )));
                    }
                    if scale.iter().chain(shift).any(|v| !v.is_finite()) {
                        return Err(Error::InvalidInput(format!("layer {i}: non-finite norm parameters")));
                    }
                }
                Layer::Tanh | Layer::Sigmoid => {}
            }
        }
        Ok(Self {
            layers,
            input_dim,
            output_dim: dim,
        })
    }

    /// Fully connected stack through `dims`, with `activation` after every
    /// hidden affine layer and optionally after the last one.
    ///
    /// Weights are drawn uniformly from `±√(6 / (fan_in + fan_out))`, biases start at zero.
    pub fn dense(dims: &[usize], activation: Activation, activate_output: bool, rng: &mut RngState) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidParameter("a dense stack needs at least two widths".into()));
        }
        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-limit, limit))
                .collect();
            let weight = DenseMatrix::from_row_major(fan_out, fan_in, data)?;
            layers.push(Layer::Affine {
                weight,
                bias: vec![0.0; fan_out],
            });
            let last = i + 2 == dims.len();
            if !last || activate_output {
                layers.push(activation.layer());
            }
        }
        Self::new(dims[0], layers)
    }

    /// Single affine layer `y = W x + b`.
    pub fn linear(weight: DenseMatrix, bias: DenseVector) -> Result<Self> {
        let input_dim = weight.cols();
        Self::new(input_dim, vec![Layer::affine(weight, bias)?])
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Appends the flat parameter vector to `out`.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            if let Layer::Affine { weight, bias } = layer {
                out.extend_from_slice(weight.as_slice());
                out.extend_from_slice(bias);
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.write_params(&mut v);
        v
    }

    /// Overwrites parameters from the front of `src`; returns the number consumed.
    pub fn read_params(&mut self, src: &[f64]) -> Result<usize> {
        if src.len() < self.num_params() {
            return Err(Error::Shape(format!(
                "need {} parameters, got {}",
                self.num_params(),
                src.len()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            if let Layer::Affine { weight, bias } = layer {
                let nw = weight.rows() * weight.cols();
                weight.as_mut_slice().copy_from_slice(&src[off..off + nw]);
                off += nw;
                let nb = bias.len();
                bias.copy_from_slice(&src[off..off + nb]);
                off += nb;
            }
        }
        Ok(off)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim,
                x.len()
            )));
        }
        Ok(())
    }

    fn apply(layer: &Layer, x: &[f64]) -> DenseVector {
        match layer {
            Layer::Affine { weight, bias } => {
                let mut y = weight.matvec(x).expect("dimension chain validated");
                y.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
                y
            }
            Layer::Tanh => x.iter().map(|v| v.tanh()).collect(),
            Layer::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            Layer::FrozenNorm { scale, shift } => x
                .iter()
                .zip(scale.iter().zip(shift))
                .map(|(v, (s, b))| s * v + b)
                .collect(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(DenseVector, Tape)> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        for layer in &self.layers {
            let y = Self::apply(layer, values.last().unwrap());
            values.push(y);
        }
        let out = values.last().unwrap().clone();
        Ok((out, Tape { values }))
    }

    /// Output only, without keeping the tape.
    pub fn eval(&self, x: &[f64]) -> Result<DenseVector> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = Self::apply(layer, &cur);
        }
        Ok(cur)
    }

    /// Reverse pass of `⟨upstream, net(x)⟩`.
    ///
    /// Parameter gradients are *added* into `param_grad` (flat layout, see
    /// [`Mlp::params`]) when provided; the gradient with respect to the
    /// input is returned.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], mut param_grad: Option<&mut [f64]>) -> Result<DenseVector> {
        if upstream.len() != self.output_dim {
            return Err(Error::Shape(format!(
                "upstream of length {} for {} outputs",
                upstream.len(),
                self.output_dim
            )));
        }
        if tape.values.len() != self.layers.len() + 1 {
            return Err(Error::Shape("tape was recorded by a different network".into()));
        }
        if let Some(g) = param_grad.as_deref() {
            if g.len() != self.num_params() {
                return Err(Error::Shape(format!(
                    "gradient buffer of length {} for {} parameters",
                    g.len(),
                    self.num_params()
                )));
            }
        }
        let mut offset = self.num_params();
        let mut grad = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.values[i];
            let output = &tape.values[i + 1];
            grad = match layer {
                Layer::Affine { weight, bias } => {
                    let nw = weight.rows() * weight.cols();
                    offset -= nw + bias.len();
                    if let Some(g) = param_grad.as_deref_mut() {
                        let (gw, gb) = g[offset..offset + nw + bias.len()].split_at_mut(nw);
                        let cols = weight.cols();
                        for (r, &u) in grad.iter().enumerate() {
                            if u == 0.0 {
                                continue;
                            }
                            for (w, &xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(input) {
                                *w += u * xv;
                            }
                            gb[r] += u;
                        }
                    }
                    weight.tr_matvec(&grad)?
                }
                Layer::Tanh => grad.iter().zip(output).map(|(g, y)| g * (1.0 - y * y)).collect(),
                Layer::Sigmoid => grad.iter().zip(output).map(|(g, y)| g * y * (1.0 - y)).collect(),
                Layer::FrozenNorm { scale, .. } => grad.iter().zip(scale).map(|(g, s)| g * s).collect(),
            };
        }
        Ok(grad)
    }

    /// Gradient of `⟨upstream, net(x)⟩` with respect to every parameter.
    pub fn param_grad(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let (_, tape) = self.forward(x)?;
        let mut g = vec![0.0; self.num_params()];
        self.backward(&tape, upstream, Some(&mut g))?;
        Ok(g)
    }

    /// Exact `∂net(x)/∂x` (output_dim × input_dim) by forward accumulation.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<DenseMatrix> {
        self.check_input(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("input has non-finite entries".into()));
        }
        // `None` stands for the identity until the first layer with weights
        let mut jac: Option<DenseMatrix> = None;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let next = Self::apply(layer, &cur);
            jac = Some(match layer {
                Layer::Affine { weight, .. } => match jac {
                    None => weight.clone(),
                    Some(j) => weight.matmul(&j)?,
                },
                Layer::Tanh | Layer::Sigmoid | Layer::FrozenNorm { .. } => {
                    let d: Vec<f64> = match layer {
                        Layer::Tanh => next.iter().map(|y| 1.0 - y * y).collect(),
                        Layer::Sigmoid => next.iter().map(|y| y * (1.0 - y)).collect(),
                        Layer::FrozenNorm { scale, .. } => scale.clone(),
                        Layer::Affine { .. } => unreachable!(),
                    };
                    match jac {
                        None => DenseMatrix::from_diag(&d),
                        Some(j) => j.scale_rows(&d)?,
                    }
                }
            });
            cur = next;
        }
        Ok(jac.unwrap_or_else(|| DenseMatrix::identity(self.input_dim)))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
