//! Dense row-major `f64` matrices and the handful of differentiable
//! primitives the losses are built from.
//!
//! Every primitive that sits on a loss path has a matching `*_backward`
//! function returning the exact vector-Jacobian product. The gradient
//! contract is verified with [`finite_diff_check`].

use std::fmt;

use crate::error::{Error, Result};

/// Dense real matrix, row-major, 64-bit.
#[derive(Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for RealMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RealMatrix({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "{:?}", self.row(r))?;
            if r + 1 < self.rows {
                write!(f, ", ")?;
            }
        }
        write!(f, "]")
    }
}

impl RealMatrix {
    /// Builds a matrix from row-major data. Rejects length mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{}x{} matrix needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
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
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &RealMatrix, scale: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "cannot accumulate {:?} into {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs_diff(&self, other: &RealMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Matrix product `a · b` (or `a · bᵀ` when `transpose_b`).
///
/// The inner index is summed left to right, so results are reproducible
/// bit for bit.
pub fn matmul(a: &RealMatrix, b: &RealMatrix, transpose_b: bool) -> Result<RealMatrix> {
    let (inner_b, out_cols) = if transpose_b {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    if a.cols != inner_b {
        return Err(Error::shape(format!(
            "matmul inner dimensions differ: {:?} x {:?}{}",
            a.shape(),
            b.shape(),
            if transpose_b { "ᵀ" } else { "" }
        )));
    }
    let mut out = RealMatrix::zeros(a.rows, out_cols);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..out_cols {
            let mut acc = 0.0;
            for (k, &av) in ar.iter().enumerate() {
                let bv = if transpose_b { b.get(j, k) } else { b.get(k, j) };
                acc += av * bv;
            }
            out.data[i * out_cols + j] = acc;
        }
    }
    Ok(out)
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!(
            "temperature must be positive, got {temperature}"
        )))
    }
}

/// Row-wise softmax of `m / temperature`, max-shifted.
pub fn softmax_rows(m: &RealMatrix, temperature: f64) -> Result<RealMatrix> {
    check_temperature(temperature)?;
    let mut out = m.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r), temperature);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Vector-Jacobian product of [`softmax_rows`]: given the softmax output `y`
/// and upstream gradient `dy`, returns the gradient with respect to the
/// pre-softmax input.
pub fn softmax_rows_backward(y: &RealMatrix, dy: &RealMatrix, temperature: f64) -> RealMatrix {
    let mut dx = RealMatrix::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let inner = dot(yr, dyr);
        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = yr[c] * (dyr[c] - inner) / temperature;
        }
    }
    dx
}

/// Unit-normalizes every row. All-zero rows pass through unchanged.
pub fn l2norm_rows(m: &RealMatrix) -> RealMatrix {
    let mut out = m.clone();
    for r in 0..out.rows {
        l2norm_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn l2norm_in_place(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Gradient of `y = x / ‖x‖` for a single vector. Zero input yields zero gradient.
pub(crate) fn l2norm_vec_backward(x: &[f64], dy: &[f64], out: &mut [f64]) {
    let n = norm(x);
    if n == 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let proj = dot(x, dy) / (n * n);
    for ((o, &xi), &gi) in out.iter_mut().zip(x).zip(dy) {
        *o = (gi - xi * proj) / n;
    }
}

/// Vector-Jacobian product of [`l2norm_rows`] taken at input `x`.
pub fn l2norm_rows_backward(x: &RealMatrix, dy: &RealMatrix) -> RealMatrix {
    let mut dx = RealMatrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let (xr, dyr) = (x.row(r), dy.row(r));
        l2norm_vec_backward(xr, dyr, dx.row_mut(r));
    }
    dx
}

/// `τ · log Σ exp(v_i / τ)`, max-shifted.
pub fn logsumexp_row(v: &[f64], temperature: f64) -> Result<f64> {
    check_temperature(temperature)?;
    if v.is_empty() {
        return Err(Error::param("logsumexp of an empty vector"));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|x| ((x - max) / temperature).exp()).sum();
    Ok(max + temperature * sum.ln())
}

/// `log(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// One gradient per registered input, each shaped like its input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    grads: Vec<RealMatrix>,
}

impl GradientTape {
    /// Zero gradients shaped like `inputs`.
    pub fn for_inputs(inputs: &[RealMatrix]) -> Self {
        Self {
            grads: inputs
                .iter()
                .map(|m| RealMatrix::zeros(m.rows, m.cols))
                .collect(),
        }
    }

    pub fn from_grads(grads: Vec<RealMatrix>) -> Self {
        Self { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, i: usize) -> &RealMatrix {
        &self.grads[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut RealMatrix {
        &mut self.grads[i]
    }

    pub fn grads(&self) -> &[RealMatrix] {
        &self.grads
    }

    pub fn into_grads(self) -> Vec<RealMatrix> {
        self.grads
    }

    /// Checks that there is exactly one same-shape gradient per input.
    pub fn check_against(&self, inputs: &[RealMatrix]) -> Result<()> {
        if self.grads.len() != inputs.len() {
            return Err(Error::shape(format!(
                "{} gradients for {} inputs",
                self.grads.len(),
                inputs.len()
            )));
        }
        for (i, (g, x)) in self.grads.iter().zip(inputs).enumerate() {
            if g.shape() != x.shape() {
                return Err(Error::shape(format!(
                    "gradient {i} is {:?}, input is {:?}",
                    g.shape(),
                    x.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Denominator floor for the relative error in [`finite_diff_check`]:
/// `|analytic − numeric| / max(|analytic|, |numeric|, GRAD_REL_FLOOR)`.
/// Entries smaller than the floor are held to an absolute error of
/// `rel_tol · GRAD_REL_FLOOR`.
pub const GRAD_REL_FLOOR: f64 = 1e-2;

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input, row, col)` of the worst relative error.
    pub worst: Option<(usize, usize, usize)>,
    pub probes: usize,
    pub rel_tol: f64,
}

impl FiniteDiffReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.rel_tol
    }
}

/// Compares the analytic gradients returned by `f` against central
/// differences `(f(x+h) − f(x−h)) / 2h`, entry by entry.
pub fn finite_diff_check<F>(
    f: F,
    inputs: &[RealMatrix],
    step: f64,
    rel_tol: f64,
) -> Result<FiniteDiffReport>
where
    F: Fn(&[RealMatrix]) -> Result<(f64, GradientTape)>,
{
    if !(step > 0.0) {
        return Err(Error::param(format!("step must be positive, got {step}")));
    }
    let (value, tape) = f(inputs)?;
    if !value.is_finite() {
        return Err(Error::numeric("non-finite value at the base point"));
    }
    tape.check_against(inputs)?;

    let mut probe = inputs.to_vec();
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        probes: 0,
        rel_tol,
    };
    for (idx, input) in inputs.iter().enumerate() {
        for r in 0..input.rows {
            for c in 0..input.cols {
                let orig = input.get(r, c);
                probe[idx].set(r, c, orig + step);
                let plus = f(&probe)?.0;
                probe[idx].set(r, c, orig - step);
                let minus = f(&probe)?.0;
                probe[idx].set(r, c, orig);
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite value probing input {idx} at ({r}, {c})"
                    )));
                }
                let numeric = (plus - minus) / (2.0 * step);
                let analytic = tape.get(idx).get(r, c);
                let abs = (analytic - numeric).abs();
                let rel = abs / analytic.abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
                report.max_abs_error = report.max_abs_error.max(abs);
                if rel > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(rel);
                    report.worst = Some((idx, r, c));
                }
                report.probes += 1;
            }
        }
    }
    Ok(report)
}
