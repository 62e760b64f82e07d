//! Dense numeric kernels for the fixed convolution/softmax graph.
//!
//! Everything is generic over [`Real`] so the same code runs in 32-bit or
//! 64-bit precision. Backward rules are written by hand next to their forward
//! counterparts; there is no tape.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seeded deterministic generator used everywhere randomness is needed.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[default]
    #[serde(rename = "64")]
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            other => Err(Error::InvalidArgument(format!(
                "precision must be 32 or 64, got {other}"
            ))),
        }
    }
}

/// Floating point scalar the model can be instantiated with.
pub trait Real:
    Float + Sum + AddAssign + SubAssign + MulAssign + Default + Debug + Display + Send + Sync + 'static
{
    const PRECISION: Precision;
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one value from the first `Self::BYTES` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("f64 converts to any Real")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Fills every entry i.i.d. uniform on `[lo, hi]`.
    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| T::of(rng.random_range(lo..=hi)))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · x + bias`, one output per row.
    pub fn matvec(&self, x: &[T], bias: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(bias.len(), self.rows);
        (0..self.rows)
            .map(|r| dot(self.row(r), x) + bias[r])
            .collect()
    }

    /// `selfᵀ · y`.
    pub fn transpose_matvec(&self, y: &[T]) -> Vec<T> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == T::zero() {
                continue;
            }
            axpy(yr, self.row(r), &mut out);
        }
        out
    }

    /// `self += a ⊗ b`.
    pub fn add_outer(&mut self, a: &[T], b: &[T]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            axpy(ar, b, self.row_mut(r));
        }
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        add_into(&mut self.data, &other.data);
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `y += a · x`.
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn add_into<T: Real>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Pre-activation of one filter on one window: `w · x + b`.
pub fn affine<T: Real>(w: &[T], x: &[T], b: T) -> Result<T> {
    if w.len() != x.len() {
        return Err(Error::Shape(format!(
            "filter length {} vs window length {}",
            w.len(),
            x.len()
        )));
    }
    Ok(dot(w, x) + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Real>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Sigmoid => sigmoid_scalar(v),
        }
    }

    /// Derivative at pre-activation `v`.
    pub fn derivative<T: Real>(self, v: T) -> T {
        match self {
            Activation::Relu => {
                if v > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid_scalar(v);
                s * (T::one() - s)
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

fn sigmoid_scalar<T: Real>(v: T) -> T {
    // Split on sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn relu<T: Real>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| Activation::Relu.apply(x)).collect()
}

pub fn sigmoid<T: Real>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

/// Maximum and first-occurrence argmax.
pub fn max_pool<T: Real>(c: &[T]) -> Result<(T, usize)> {
    let mut it = c.iter().copied().enumerate();
    let (mut best_i, mut best) = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("max_pool over an empty feature map".into()))?;
    for (i, v) in it {
        if v > best {
            best = v;
            best_i = i;
        }
    }
    Ok((best, best_i))
}

/// Routes `upstream` to the argmax slot of a pooled map of length `len`.
pub fn max_pool_backward<T: Real>(len: usize, argmax: usize, upstream: T) -> Vec<T> {
    let mut g = vec![T::zero(); len];
    g[argmax] = upstream;
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxOutput<T> {
    pub loss: T,
    pub probs: Vec<T>,
    pub dlogits: Vec<T>,
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax cross-entropy against class `gold`, with `dloss/dlogits`.
pub fn softmax_xent<T: Real>(logits: &[T], gold: usize) -> Result<SoftmaxOutput<T>> {
    if logits.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "softmax needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if gold >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "gold class {gold} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let shifted: Vec<T> = logits.iter().map(|&z| z - max).collect();
    let log_total = shifted.iter().map(|&z| z.exp()).sum::<T>().ln();
    let probs: Vec<T> = shifted.iter().map(|&z| (z - log_total).exp()).collect();
    let loss = log_total - shifted[gold];
    let mut dlogits = probs.clone();
    dlogits[gold] -= T::one();
    Ok(SoftmaxOutput {
        loss,
        probs,
        dlogits,
    })
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`. With `rng = None` (evaluation) the mask is all ones.
pub fn dropout_mask<T: Real>(len: usize, rate: f64, rng: Option<&mut Rng>) -> Result<Vec<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    let rng = match rng {
        Some(rng) if rate > 0.0 => rng,
        _ => return Ok(vec![T::one(); len]),
    };
    let keep = T::of(1.0 / (1.0 - rate));
    Ok((0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect())
}

/// Denominator floor for relative gradient error; below it the comparison is
/// effectively absolute.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error, if any were checked.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Coordinates whose central difference straddled a non-differentiable point.
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` to central differences of `f` at `params` for each
/// coordinate in `coords`.
pub fn grad_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    h: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    grad_check_piecewise(|p| (f(p), ()), params, analytic, coords, h)
}

/// Like [`grad_check`] for piecewise-smooth functions. `f` also returns a
/// region signature (e.g. active ReLU units and pooling argmaxes); coordinates
/// where the signature differs between `θ+h` and `θ−h` are skipped.
pub fn grad_check_piecewise<F, S>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    h: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> (f64, S),
    S: PartialEq,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} params vs {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for i in coords {
        let orig = theta[i];
        theta[i] = orig + h;
        let (plus, sig_plus) = f(&theta);
        theta[i] = orig - h;
        let (minus, sig_minus) = f(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        if sig_plus != sig_minus {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(i);
        }
    }
    Ok(report)
}
