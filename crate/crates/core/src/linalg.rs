//! Dense `f64` linear algebra, a cyclic Jacobi symmetric eigensolver, and the
//! seeded random source used throughout the crate.

use std::fmt;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Plain owned vector; most routines borrow it as `&[f64]`.
pub type DenseVector = Vec<f64>;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> DenseVector {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `A x`
    pub fn matvec(&self, x: &[f64]) -> Result<DenseVector> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "matrix has {} columns, vector has length {}",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `Aᵀ y`
    pub fn tr_matvec(&self, y: &[f64]) -> Result<DenseVector> {
        if y.len() != self.rows {
            return Err(Error::Shape(format!(
                "matrix has {} rows, vector has length {}",
                self.rows,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += yr * a;
            }
        }
        Ok(out)
    }

    /// `AᵀA` (cols × cols). The result is exactly symmetric.
    pub fn gram(&self) -> DenseMatrix {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for r in 0..self.rows {
                    s += self.data[r * n + i] * self.data[r * n + j];
                }
                g.data[i * n + j] = s;
                g.data[j * n + i] = s;
            }
        }
        g
    }

    /// `AAᵀ` (rows × rows). The result is exactly symmetric.
    pub fn outer_gram(&self) -> DenseMatrix {
        let m = self.rows;
        let mut g = Self::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let s = dot(self.row(i), self.row(j));
                g.data[i * m + j] = s;
                g.data[j * m + i] = s;
            }
        }
        g
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, s: f64) -> DenseMatrix {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Multiplies row `r` by `s[r]`, i.e. `diag(s) A`.
    pub fn scale_rows(&self, s: &[f64]) -> Result<DenseMatrix> {
        if s.len() != self.rows {
            return Err(Error::Shape(format!(
                "{} row scales for {} rows",
                s.len(),
                self.rows
            )));
        }
        let mut out = self.clone();
        for (r, &sr) in s.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|v| *v *= sr);
        }
        Ok(out)
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot stack {} columns on {} columns",
                self.cols, other.cols
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Largest absolute asymmetry `|G_ij − G_ji|`.
    fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub_vec(a: &[f64], b: &[f64]) -> DenseVector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `a + s·b`
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> DenseVector {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Eigenpairs of a symmetric matrix, eigenvalues sorted non-increasing.
///
/// `values` always covers the full dimension `n`. `vectors` is `n × k` with
/// one orthonormal column per stored eigenvector, `k ≤ n`; the low-rank path
/// of [`gram_eig`] stores no vectors for its structurally-zero eigenvalues.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenDecomposition {
    values: Vec<f64>,
    vectors: DenseMatrix,
}

/// Negative eigenvalues above `-PSD_CLAMP_TOL · max(1, λ_max)` are read as zero.
pub const PSD_CLAMP_TOL: f64 = 1e-10;

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Raw eigenvalues, sorted non-increasing.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of stored eigenvectors.
    pub fn num_vectors(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &DenseMatrix {
        &self.vectors
    }

    /// Column `k` (0-based) of the eigenvector matrix.
    pub fn vector(&self, k: usize) -> Option<DenseVector> {
        (k < self.vectors.cols()).then(|| self.vectors.column(k))
    }

    /// Eigenvalues of a theoretically PSD matrix with round-off negatives
    /// clamped to zero. Fails if any eigenvalue is clearly negative.
    pub fn psd_values(&self) -> Result<Vec<f64>> {
        let scale = self.values.first().copied().unwrap_or(0.0).abs().max(1.0);
        self.values
            .iter()
            .map(|&v| {
                if v >= 0.0 {
                    Ok(v)
                } else if v >= -PSD_CLAMP_TOL * scale {
                    Ok(0.0)
                } else {
                    Err(Error::NotPsd { eigenvalue: v })
                }
            })
            .collect()
    }

    /// Scales every eigenvalue by `c`; `c ≥ 0` keeps the ordering.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eigenvalue scale must be non-negative, got {c}"
            )));
        }
        Ok(Self {
            values: self.values.iter().map(|v| v * c).collect(),
            vectors: self.vectors.clone(),
        })
    }

    pub fn from_parts(values: Vec<f64>, vectors: DenseMatrix) -> Result<Self> {
        if vectors.rows() != values.len() && vectors.cols() != 0 {
            return Err(Error::Shape(format!(
                "{} eigenvalues but eigenvectors of length {}",
                values.len(),
                vectors.rows()
            )));
        }
        if vectors.cols() > values.len() {
            return Err(Error::Shape("more eigenvectors than eigenvalues".into()));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("eigenvalues must be sorted non-increasing".into()));
        }
        Ok(Self { values, vectors })
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;
const SYMMETRY_REL_TOL: f64 = 1e-10;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Iterates until the off-diagonal Frobenius norm drops below
/// `1e-12 · ‖G‖_F`, for at most 100 sweeps.
pub fn sym_eig(g: &DenseMatrix) -> Result<EigenDecomposition> {
    let (n, c) = g.shape();
    if n != c {
        return Err(Error::Shape(format!("sym_eig needs a square matrix, got {n}x{c}")));
    }
    if !g.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let fro = g.frobenius_norm();
    let asym = g.max_asymmetry();
    if asym > SYMMETRY_REL_TOL * fro.max(f64::MIN_POSITIVE) {
        return Err(Error::SymmetryViolation { max_abs: asym });
    }

    let mut a = g.clone();
    // symmetrize exactly; upper triangle wins
    for i in 0..n {
        for j in (i + 1)..n {
            let v = a.get(i, j);
            a.set(j, i, v);
        }
    }
    // rows of `vt` are the eigenvectors, kept contiguous for the rotation updates
    let mut vt = DenseMatrix::identity(n);
    let threshold = JACOBI_REL_TOL * fro;

    let off_norm = |a: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for &x in &a.row(i)[i + 1..] {
                s += 2.0 * x * x;
            }
        }
        s.sqrt()
    };

    let mut converged = off_norm(&a) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                // rotation angle annihilating a[p][q]
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;

                // A ← JᵀAJ touches only rows/columns p and q; update the rows
                // and mirror them into the columns.
                rotate_rows(a.as_mut_slice(), n, p, q, cs, sn);
                for k in 0..n {
                    if k != p && k != q {
                        let (pk, qk) = (a.get(p, k), a.get(q, k));
                        a.set(k, p, pk);
                        a.set(k, q, qk);
                    }
                }
                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);

                rotate_rows(vt.as_mut_slice(), n, p, q, cs, sn);
            }
        }
        sweeps += 1;
        converged = off_norm(&a) <= threshold;
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, dst, vt.get(src, k));
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Rows p, q ← (c·row_p − s·row_q, s·row_p + c·row_q).
fn rotate_rows(data: &mut [f64], n: usize, p: usize, q: usize, cs: f64, sn: f64) {
    debug_assert!(p < q);
    let (head, tail) = data.split_at_mut(q * n);
    let rp = &mut head[p * n..(p + 1) * n];
    let rq = &mut tail[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = cs * xp - sn * xq;
        *y = sn * xp + cs * xq;
    }
}

/// Relative cutoff below which a Gram eigenvalue is treated as structurally zero.
const GRAM_RANK_TOL: f64 = 1e-13;

/// Eigendecomposition of `FᵀF` (n × n) through the small m × m matrix `FFᵀ`.
///
/// Each positive eigenpair `(λ, u)` of `FFᵀ` maps back to `v = Fᵀu / √λ`.
/// The trailing `n − m` eigenvalues are reported as exactly zero with no
/// stored eigenvector, as are eigenvalues below `1e-13 · λ_max`.
pub fn gram_eig(f: &DenseMatrix) -> Result<EigenDecomposition> {
    let (m, n) = f.shape();
    if m > n {
        return Err(Error::Contract(format!(
            "gram_eig needs rows <= cols, got {m}x{n}; use sym_eig on the dense Gram matrix"
        )));
    }
    if !f.is_finite() {
        return Err(Error::InvalidInput("factor has non-finite entries".into()));
    }
    let small = sym_eig(&f.outer_gram())?;
    let top = small.values.first().copied().unwrap_or(0.0).max(0.0);
    let cutoff = GRAM_RANK_TOL * top;

    let mut values = vec![0.0; n];
    let mut cols: Vec<DenseVector> = Vec::new();
    for (k, &lam) in small.values.iter().enumerate() {
        if lam > cutoff && lam > 0.0 {
            let u = small.vectors.column(k);
            let mut v = f.tr_matvec(&u)?;
            let inv = 1.0 / lam.sqrt();
            v.iter_mut().for_each(|x| *x *= inv);
            values[k] = lam;
            cols.push(v);
        } else if lam < 0.0 && lam < -PSD_CLAMP_TOL * top.max(1.0) {
            return Err(Error::NotPsd { eigenvalue: lam });
        }
    }
    let mut vectors = DenseMatrix::zeros(n, cols.len());
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            vectors.set(i, j, x);
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Seeded pseudo-random source (xoshiro256++ seeded through SplitMix64).
///
/// Two states built from the same seed produce bitwise-identical streams.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent stream for worker `index` of a job seeded with `base`.
    pub fn derive(base: u64, index: u64) -> Self {
        Self::new(split_seed(base, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via the Box–Muller transform; the second variate of
    /// each pair is cached for the next call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform index in `0..n` (n > 0).
    pub fn below(&mut self, n: usize) -> usize {
        // Lemire's multiply-shift; bias is negligible for the sizes used here
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Uniform direction on the unit sphere in `R^n`.
    pub fn unit_sphere(&mut self, n: usize) -> DenseVector {
        loop {
            let v = sample_std_normal(self, n);
            let nrm = norm2(&v);
            if nrm > 1e-300 {
                return v.into_iter().map(|x| x / nrm).collect();
            }
        }
    }

    /// Gamma(shape, 1) by Marsaglia–Tsang, boosted for shape < 1.
    fn gamma(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0);
            return g * self.uniform_open().powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform_open();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return d * v;
            }
        }
    }
}

/// SplitMix64 finaliser applied to `(base, index)`.
pub fn split_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` i.i.d. standard normal draws.
pub fn sample_std_normal(rng: &mut RngState, n: usize) -> DenseVector {
    (0..n).map(|_| rng.normal()).collect()
}

/// One draw from Beta(a, b), strictly inside (0, 1).
///
/// Uses Jöhnk's rejection method when both shapes are at most one (its
/// acceptance rate is high there) and the gamma-ratio construction
/// otherwise.
pub fn sample_beta(rng: &mut RngState, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta shapes must be positive and finite, got a={a}, b={b}"
        )));
    }
    loop {
        let x = if a <= 1.0 && b <= 1.0 {
            johnk(rng, a, b)
        } else {
            let ga = rng.gamma(a);
            let gb = rng.gamma(b);
            ga / (ga + gb)
        };
        if x > 0.0 && x < 1.0 {
            return Ok(x);
        }
    }
}

fn johnk(rng: &mut RngState, a: f64, b: f64) -> f64 {
    loop {
        // log-space keeps tiny powers from underflowing to 0/0
        let lx = rng.uniform_open().ln() / a;
        let ly = rng.uniform_open().ln() / b;
        let hi = lx.max(ly);
        let lsum = hi + ((lx - hi).exp() + (ly - hi).exp()).ln();
        if lsum <= 0.0 {
            return (lx - lsum).exp();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(g: &DenseMatrix, e: &EigenDecomposition) -> f64 {
        let v = e.vectors();
        let gv = g.matmul(v).unwrap();
        let vl = v.matmul(&DenseMatrix::from_diag(&e.values()[..v.cols()])).unwrap();
        gv.sub(&vl).unwrap().frobenius_norm() / g.frobenius_norm().max(1e-30)
    }

    #[test]
    fn diagonal_matrix() {
        let e = sym_eig(&DenseMatrix::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(e.values(), &[3.0, 1.0]);
        let v0 = e.vector(0).unwrap();
        assert!((v0[0].abs() - 0.0).abs() < 1e-15 && (v0[1].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_closed_form() {
        // characteristic polynomial (2-λ)² - 1 = 0 → λ ∈ {3, 1}
        let g = DenseMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = sym_eig(&g).unwrap();
        assert!((e.values()[0] - 3.0).abs() < 1e-14);
        assert!((e.values()[1] - 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vector(0).unwrap();
        let v1 = e.vector(1).unwrap();
        // columns are (1,1)/√2 and (1,−1)/√2 up to sign
        assert!((v0[0].abs() - s).abs() < 1e-12 && (v0[1].abs() - s).abs() < 1e-12);
        assert!(v0[0] * v0[1] > 0.0);
        assert!((v1[0].abs() - s).abs() < 1e-12 && v1[0] * v1[1] < 0.0);
        assert!(residual(&g, &e) < 1e-12);
    }

    #[test]
    fn identity_residual() {
        let g = DenseMatrix::identity(7);
        let e = sym_eig(&g).unwrap();
        assert!(e.values().iter().all(|&v| v == 1.0));
        assert!(residual(&g, &e) < 1e-14);
    }

    #[test]
    fn rejects_asymmetric_and_nonfinite() {
        let g = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&g), Err(Error::SymmetryViolation { .. })));
        let g = DenseMatrix::from_rows(&[[1.0, f64::NAN], [f64::NAN, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&g), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn empty_matrix() {
        let e = sym_eig(&DenseMatrix::zeros(0, 0)).unwrap();
        assert_eq!(e.dim(), 0);
    }

    #[test]
    fn gram_rank_one_row() {
        let f = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        let e = gram_eig(&f).unwrap();
        assert_eq!(e.values(), &[1.0, 0.0, 0.0]);
        assert_eq!(e.num_vectors(), 1);
        let v = e.vector(0).unwrap();
        assert!((v[0].abs() - 1.0).abs() < 1e-15 && v[1] == 0.0 && v[2] == 0.0);
    }

    #[test]
    fn gram_zero_and_wide_contract() {
        let e = gram_eig(&DenseMatrix::zeros(2, 5)).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
        assert_eq!(e.num_vectors(), 0);
        assert!(matches!(
            gram_eig(&DenseMatrix::zeros(3, 2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gram_matches_dense_on_2x784() {
        let mut rng = RngState::new(17);
        let f = DenseMatrix::from_row_major(2, 784, sample_std_normal(&mut rng, 2 * 784)).unwrap();
        let fast = gram_eig(&f).unwrap();
        let dense = sym_eig(&f.gram()).unwrap();
        for k in 0..2 {
            let (a, b) = (fast.values()[k], dense.values()[k]);
            assert!((a - b).abs() < 1e-8 * b.max(1.0), "{a} vs {b}");
            let va = fast.vector(k).unwrap();
            let vb = dense.vector(k).unwrap();
            assert!((dot(&va, &vb).abs() - 1.0).abs() < 1e-8);
        }
        assert!(dense.values()[2..].iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn psd_clamp() {
        let e = EigenDecomposition::from_parts(vec![2.0, -1e-12], DenseMatrix::identity(2)).unwrap();
        assert_eq!(e.psd_values().unwrap(), vec![2.0, 0.0]);
        let e = EigenDecomposition::from_parts(vec![2.0, -1e-3], DenseMatrix::identity(2)).unwrap();
        assert!(matches!(e.psd_values(), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn normal_stream_is_reproducible() {
        let a = sample_std_normal(&mut RngState::new(42), 3);
        let b = sample_std_normal(&mut RngState::new(42), 3);
        assert_eq!(a, b);
        assert!(sample_std_normal(&mut RngState::new(42), 0).is_empty());
    }

    #[test]
    fn normal_moments() {
        // CLT: sd of the mean is 1/√n ≈ 0.0032, of the variance ≈ √(2/n) ≈ 0.0045
        let n = 100_000;
        let xs = sample_std_normal(&mut RngState::new(7), n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn beta_half_half_mean_and_support() {
        let mut rng = RngState::new(3);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_beta(&mut rng, 0.5, 0.5).unwrap();
            assert!(x > 0.0 && x < 1.0);
            sum += x;
        }
        // sd of Beta(½,½) is √(1/8); sd of the mean ≈ 0.0011
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn beta_one_one_is_uniform() {
        let mut rng = RngState::new(11);
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sample_beta(&mut rng, 1.0, 1.0).unwrap()).collect();
        xs.sort_by(f64::total_cmp);
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (x - lo).abs().max((hi - x).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn beta_large_shapes_use_gamma_ratio() {
        let mut rng = RngState::new(5);
        let n = 50_000;
        let mean = (0..n).map(|_| sample_beta(&mut rng, 2.0, 6.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn beta_rejects_bad_shapes() {
        let mut rng = RngState::new(1);
        assert!(sample_beta(&mut rng, 0.0, 1.0).is_err());
        assert!(sample_beta(&mut rng, 1.0, -2.0).is_err());
    }

    #[test]
    fn derived_streams_differ() {
        let a = RngState::derive(9, 0).next_u64();
        let b = RngState::derive(9, 1).next_u64();
        assert_ne!(a, b);
        assert_eq!(RngState::derive(9, 1).next_u64(), b);
    }
}
