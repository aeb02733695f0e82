//! Dense row-major matrices and the primitive kernels the tape is built from.
//!
//! Everything is `f64`. Constructors reject non-finite data, so a `Matrix`
//! that exists is always finite unless it was produced by a kernel that
//! overflowed; kernels that can overflow check their output.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} {:?}", self.rows, self.cols, self.data)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite entry {} at row {}, col {}",
                data[pos],
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

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// A single-row matrix.
    pub fn row_vector(values: &[f64]) -> Result<Self> {
        Self::new(1, values.len(), values.to_vec())
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(idx.iter().map(|&c| row[c]));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot concatenate {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        let n = self.rows as f64;
        sums.iter().map(|s| s / n).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }
}

/// Anything that owns an ordered list of trainable matrices.
///
/// The order must match the order in which the owner registers parameters on
/// a [`crate::tape::Tape`], so that gradients line up slot by slot.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Matrix>;
    fn parameters_mut(&mut self) -> Vec<&mut Matrix>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|m| m.len()).sum()
    }
}

impl Parameterized for Vec<Matrix> {
    fn parameters(&self) -> Vec<&Matrix> {
        self.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.iter_mut().collect()
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite value in {what}")))
    }
}

/// `y = W x + b` for one sample, with `W` shaped `out x in`.
pub fn affine_forward(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::Shape(format!(
            "affine: W is {}x{}, x has {}, b has {}",
            w.rows(),
            w.cols(),
            x.len(),
            b.len()
        )));
    }
    check_finite(x, "affine input")?;
    check_finite(b, "affine bias")?;
    Ok((0..w.rows()).map(|o| b[o] + dot(w.row(o), x)).collect())
}

/// Batched affine map: rows of `x` (B x in) through `W` (out x in) plus a
/// broadcast bias row (1 x out).
pub fn affine_batch(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if w.cols() != x.cols() || b.rows() != 1 || b.cols() != w.rows() {
        return Err(Error::Shape(format!(
            "affine: x is {}x{}, W is {}x{}, b is {}x{}",
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let out = w.rows();
    let mut data = Vec::with_capacity(x.rows() * out);
    for r in 0..x.rows() {
        let xr = x.row(r);
        for o in 0..out {
            data.push(b.data[o] + dot(w.row(o), xr));
        }
    }
    Ok(Matrix::from_raw(x.rows(), out, data))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Sigmoid),
            2 => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation code {other}"))),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &[f64], kind: Activation) -> Result<Vec<f64>> {
    check_finite(x, "activation input")?;
    Ok(x.iter().map(|&v| kind.apply(v)).collect())
}

/// Max-shifted softmax. Outputs are positive and sum to one.
pub fn softmax_stable(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    check_finite(v, "softmax input")?;
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            Matrix::new(1, 1, vec![f64::INFINITY]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn affine_examples() {
        let y = affine_forward(&[3.0, -1.0], &Matrix::identity(2), &[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![3.0, -1.0]);

        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(
            affine_forward(&[1.0, 1.0], &w, &[0.0, 0.0]).unwrap(),
            vec![3.0, 7.0]
        );

        let w = Matrix::from_rows(&[vec![0.3, -2.0, 5.0], vec![1.5, 0.25, -4.0]]).unwrap();
        assert_eq!(
            affine_forward(&[0.0; 3], &w, &[0.7, -0.2]).unwrap(),
            vec![0.7, -0.2]
        );
    }

    #[test]
    fn affine_errors() {
        let w = Matrix::identity(2);
        assert!(matches!(
            affine_forward(&[1.0], &w, &[0.0, 0.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            affine_forward(&[1.0, 1.0], &w, &[0.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            affine_forward(&[f64::NAN, 1.0], &w, &[0.0, 0.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn affine_batch_matches_single() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.5]]).unwrap();
        let b = Matrix::row_vector(&[0.1, 0.2, 0.3]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![-2.0, 0.5]]).unwrap();
        let y = affine_batch(&x, &w, &b).unwrap();
        for r in 0..2 {
            let single = affine_forward(x.row(r), &w, b.as_slice()).unwrap();
            assert_eq!(y.row(r), single.as_slice());
        }
    }

    #[test]
    fn activation_examples() {
        assert_eq!(
            activation(&[-1.0, 2.0], Activation::Relu).unwrap(),
            vec![0.0, 2.0]
        );
        assert_eq!(activation(&[0.0], Activation::Sigmoid).unwrap(), vec![0.5]);
        assert_eq!(activation(&[0.0], Activation::Tanh).unwrap(), vec![0.0]);
        assert_eq!(Activation::Tanh.derivative(0.0, 0.0), 1.0);
        assert!(matches!(
            "gelu".parse::<Activation>(),
            Err(Error::Config(_))
        ));
        assert_eq!("ReLU".parse::<Activation>().unwrap(), Activation::Relu);
    }

    #[test]
    fn sigmoid_stays_in_open_interval() {
        for x in [-30.0, -5.0, 0.0, 5.0, 30.0] {
            let y = Activation::Sigmoid.apply(x);
            assert!(y > 0.0 && y < 1.0, "sigmoid({x}) = {y}");
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_stable(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        let p = softmax_stable(&[0.0, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        assert_eq!(softmax_stable(&[1000.0, 1000.0]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(softmax_stable(&[]), Err(Error::Shape(_))));
    }
}
