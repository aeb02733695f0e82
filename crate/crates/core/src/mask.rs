//! The feature-mask module.
//!
//! A single affine layer maps each candidate row to per-candidate logits. The
//! logits are averaged over the batch, divided by the temperature and passed
//! through a softmax (logits more than [`LOGIT_SPAN`] below the largest are
//! raised to that floor first), so the mask is one vector per batch with entries in
//! `(0, 1)` that sum to one. Anything that produces such a vector from a batch
//! of candidate rows could replace this generator; the rest of the model only
//! sees the mask node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Dense, DenseNodes};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Matrix, Parameterized};

/// Largest gap kept between the top tempered logit and any other, so that
/// for `D_c >= 2` every weight stays strictly inside `(0, 1)`.
pub const LOGIT_SPAN: f64 = 30.0;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    d_c: usize,
    logits: Dense,
    temperature: f64,
}

impl FeatureMask {
    /// Zero-initialized logit generator: the first mask is uniform.
    pub fn new(d_c: usize) -> Result<Self> {
        if d_c == 0 {
            return Err(Error::Shape(
                "feature mask needs at least one candidate".into(),
            ));
        }
        Ok(Self {
            d_c,
            logits: Dense::zeros(d_c, d_c),
            temperature: DEFAULT_TEMPERATURE,
        })
    }

    pub fn from_layer(logits: Dense, temperature: f64) -> Result<Self> {
        if logits.inputs() != logits.outputs() || logits.inputs() == 0 {
            return Err(Error::Shape(format!(
                "mask layer must be square and non-empty, got {}x{}",
                logits.outputs(),
                logits.inputs()
            )));
        }
        let mut fm = Self::new(logits.inputs())?;
        fm.logits = logits;
        fm.set_temperature(temperature)?;
        Ok(fm)
    }

    pub fn d_c(&self) -> usize {
        self.d_c
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {t}"
            )));
        }
        self.temperature = t;
        Ok(())
    }

    pub fn layer(&self) -> &Dense {
        &self.logits
    }

    pub fn register(&self, tape: &mut Tape) -> DenseNodes {
        self.logits.register(tape)
    }

    /// Records the mask for the candidate batch `xc`, returning a `1 x D_c` node.
    pub fn record(&self, tape: &mut Tape, nodes: DenseNodes, xc: NodeId) -> Result<NodeId> {
        let x = tape.value(xc);
        if x.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if x.cols() != self.d_c {
            return Err(Error::Shape(format!(
                "mask expects {} candidate columns, got {}",
                self.d_c,
                x.cols()
            )));
        }
        let per_sample = tape.affine(xc, nodes.w, nodes.b)?;
        let mean = tape.mean_rows(per_sample)?;
        let scaled = tape.scale(mean, 1.0 / self.temperature)?;
        let floored = tape.floor_below_max(scaled, LOGIT_SPAN)?;
        tape.softmax_rows(floored)
    }

    pub fn mask_forward(&self, xc_batch: &Matrix) -> Result<Vec<f64>> {
        if xc_batch.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut tape = Tape::new();
        let nodes = self.register(&mut tape);
        let xc = tape.input(xc_batch.clone());
        let m = self.record(&mut tape, nodes, xc)?;
        Ok(tape.value(m).as_slice().to_vec())
    }

    /// Final candidate importance: the mask computed from the whole training set.
    pub fn importance(&self, train_xc: &Matrix) -> Result<Vec<f64>> {
        self.mask_forward(train_xc)
    }
}

impl Parameterized for FeatureMask {
    fn parameters(&self) -> Vec<&Matrix> {
        vec![&self.logits.w, &self.logits.b]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.logits.w, &mut self.logits.b]
    }
}

/// `Xc ⊙ m`: every row scaled elementwise by the mask.
pub fn apply_mask(xc: &Matrix, m: &[f64]) -> Result<Matrix> {
    if m.len() != xc.cols() {
        return Err(Error::Shape(format!(
            "mask of length {} against {} columns",
            m.len(),
            xc.cols()
        )));
    }
    let mut out = xc.clone();
    let cols = xc.cols().max(1);
    for row in out.as_mut_slice().chunks_mut(cols) {
        for (v, s) in row.iter_mut().zip(m) {
            *v *= s;
        }
    }
    Ok(out)
}
