use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Matrix;

/// One affine layer, `W` shaped `out x in`, bias a `1 x out` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Matrix,
    pub b: Matrix,
}

/// Parameter nodes of a [`Dense`] layer on a tape.
#[derive(Debug, Clone, Copy)]
pub struct DenseNodes {
    pub w: NodeId,
    pub b: NodeId,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Matrix::zeros(outputs, inputs),
            b: Matrix::zeros(1, outputs),
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            w: Matrix::from_raw(outputs, inputs, data),
            b: Matrix::zeros(1, outputs),
        }
    }

    pub fn from_parts(w: Matrix, b: Matrix) -> Result<Self> {
        if b.rows() != 1 || b.cols() != w.rows() {
            return Err(Error::Shape(format!(
                "bias {}x{} does not fit weights {}x{}",
                b.rows(),
                b.cols(),
                w.rows(),
                w.cols()
            )));
        }
        Ok(Self { w, b })
    }

    pub fn inputs(&self) -> usize {
        self.w.cols()
    }

    pub fn outputs(&self) -> usize {
        self.w.rows()
    }

    pub fn register(&self, tape: &mut Tape) -> DenseNodes {
        DenseNodes {
            w: tape.param(&self.w),
            b: tape.param(&self.b),
        }
    }
}
