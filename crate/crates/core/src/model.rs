//! The conditional selection network and the plain evaluator MLP.
//!
//! ```text
//! Xp ──> f_p ──────────────┐
//!                          ├─ concat ─> g ─> Ŷ
//! Xc ──> (Xc ⊙ m) ─> f_c ──┘
//!  └──> mask ──> m
//! ```
//!
//! With no preselected columns `f_p` is dropped and `g` sees `f_c` alone.

use serde::{Deserialize, Serialize};

use crate::data::{argmax, Batch, Task};
use crate::error::{Error, Result};
use crate::layers::{Dense, DenseNodes};
use crate::mask::FeatureMask;
use crate::rng;
use crate::tape::{check_one_hot, NodeId, Tape, PROB_FLOOR};
use crate::tensor::{Activation, Matrix, Parameterized};

/// A model the trainer can fit: it records a scalar loss for a batch.
pub trait Trainable: Parameterized {
    fn task(&self) -> Task;

    fn record_loss(&self, tape: &mut Tape, batch: &Batch) -> Result<NodeId>;

    fn set_temperature(&mut self, _temperature: f64) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub encoder_width: usize,
    pub head_width: usize,
    pub activation: Activation,
    pub temperature: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder_width: 16,
            head_width: 32,
            activation: Activation::Relu,
            temperature: crate::mask::DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_p: usize,
    pub d_c: usize,
    pub d_y: usize,
}

/// Predictions for one batch; classification rows are probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub y_hat: Matrix,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondSelModel {
    task: Task,
    dims: Dims,
    arch: Architecture,
    fm: FeatureMask,
    fp: Option<Dense>,
    fc: Dense,
    hidden: Dense,
    out: Dense,
}

struct Recorded {
    mask: NodeId,
    output: NodeId,
}

impl CondSelModel {
    pub fn new(d_p: usize, d_c: usize, task: Task, arch: Architecture, seed: u64) -> Result<Self> {
        if arch.encoder_width == 0 || arch.head_width == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut rng = rng::stream(seed, rng::TAG_INIT, &[]);
        let mut fm = FeatureMask::new(d_c)?;
        fm.set_temperature(arch.temperature)?;
        let fp = (d_p > 0).then(|| Dense::glorot(d_p, arch.encoder_width, &mut rng));
        let fc = Dense::glorot(d_c, arch.encoder_width, &mut rng);
        let fused = arch.encoder_width * if d_p > 0 { 2 } else { 1 };
        let hidden = Dense::glorot(fused, arch.head_width, &mut rng);
        let out = Dense::glorot(arch.head_width, task.d_y(), &mut rng);
        Self::from_parts(task, arch, fm, fp, fc, hidden, out)
    }

    /// Assembles a model from trained layers, checking that every width chains.
    pub fn from_parts(
        task: Task,
        arch: Architecture,
        fm: FeatureMask,
        fp: Option<Dense>,
        fc: Dense,
        hidden: Dense,
        out: Dense,
    ) -> Result<Self> {
        let d_c = fm.d_c();
        let shape_err = |what: String| Err(Error::Shape(what));
        if fc.inputs() != d_c {
            return shape_err(format!("f_c takes {} inputs, mask has {d_c}", fc.inputs()));
        }
        let fused = fc.outputs() + fp.as_ref().map_or(0, Dense::outputs);
        if hidden.inputs() != fused {
            return shape_err(format!(
                "head takes {} inputs, fusion yields {fused}",
                hidden.inputs()
            ));
        }
        if out.inputs() != hidden.outputs() {
            return shape_err(format!(
                "output layer takes {} inputs, hidden layer yields {}",
                out.inputs(),
                hidden.outputs()
            ));
        }
        if out.outputs() != task.d_y() {
            return shape_err(format!(
                "{task} needs {} outputs, got {}",
                task.d_y(),
                out.outputs()
            ));
        }
        let dims = Dims {
            d_p: fp.as_ref().map_or(0, Dense::inputs),
            d_c,
            d_y: task.d_y(),
        };
        Ok(Self {
            task,
            dims,
            arch,
            fm,
            fp,
            fc,
            hidden,
            out,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn feature_mask(&self) -> &FeatureMask {
        &self.fm
    }

    pub fn layers(&self) -> (Option<&Dense>, &Dense, &Dense, &Dense) {
        (self.fp.as_ref(), &self.fc, &self.hidden, &self.out)
    }

    fn record(&self, tape: &mut Tape, xp: &Matrix, xc: &Matrix) -> Result<Recorded> {
        if xp.rows() != xc.rows() {
            return Err(Error::Shape(format!(
                "Xp has {} rows, Xc has {}",
                xp.rows(),
                xc.rows()
            )));
        }
        if xp.cols() != self.dims.d_p || xc.cols() != self.dims.d_c {
            return Err(Error::Shape(format!(
                "model expects D_p={}, D_c={}; got {} and {}",
                self.dims.d_p,
                self.dims.d_c,
                xp.cols(),
                xc.cols()
            )));
        }
        // registration order must match `parameters()`
        let fm_nodes = self.fm.register(tape);
        let fp_nodes = self.fp.as_ref().map(|l| l.register(tape));
        let fc_nodes = self.fc.register(tape);
        let hidden_nodes = self.hidden.register(tape);
        let out_nodes = self.out.register(tape);

        let act = self.arch.activation;
        let xc_node = tape.input(xc.clone());
        let mask = self.fm.record(tape, fm_nodes, xc_node)?;
        let masked = tape.mul_row(xc_node, mask)?;
        let enc_c = dense_act(tape, masked, fc_nodes, act)?;
        let fused = match fp_nodes {
            Some(nodes) => {
                let xp_node = tape.input(xp.clone());
                let enc_p = dense_act(tape, xp_node, nodes, act)?;
                tape.concat(enc_p, enc_c)?
            }
            None => enc_c,
        };
        let h = dense_act(tape, fused, hidden_nodes, act)?;
        let logits = tape.affine(h, out_nodes.w, out_nodes.b)?;
        let output = match self.task {
            Task::Regression => logits,
            Task::BinaryClassification => tape.softmax_rows(logits)?,
        };
        Ok(Recorded { mask, output })
    }

    pub fn forward(&self, xp: &Matrix, xc: &Matrix) -> Result<Prediction> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, xp, xc)?;
        Ok(Prediction {
            y_hat: tape.value(rec.output).clone(),
            task: self.task,
        })
    }

    /// Mask computed on this batch, as the model would apply it.
    pub fn mask(&self, xc: &Matrix) -> Result<Vec<f64>> {
        self.fm.mask_forward(xc)
    }

    /// Importance scores of the candidates, computed from the full training set.
    pub fn importance(&self, train_xc: &Matrix) -> Result<Vec<f64>> {
        self.fm.importance(train_xc)
    }

    /// Loss and parameter gradients on one batch.
    pub fn loss_and_gradients(&self, batch: &Batch) -> Result<(f64, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let loss = self.record_loss(&mut tape, batch)?;
        Ok((tape.value(loss).as_slice()[0], tape.backward(loss)?))
    }

    /// Gradient of the loss with respect to the raw candidate inputs.
    pub fn input_gradient(&self, batch: &Batch) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xc = tape.param(&batch.xc);
        let fm_nodes = self.fm.register(&mut tape);
        let fc_nodes = self.fc.register(&mut tape);
        let fp_nodes = self.fp.as_ref().map(|l| l.register(&mut tape));
        let hidden_nodes = self.hidden.register(&mut tape);
        let out_nodes = self.out.register(&mut tape);
        let act = self.arch.activation;
        let mask = self.fm.record(&mut tape, fm_nodes, xc)?;
        let masked = tape.mul_row(xc, mask)?;
        let enc_c = dense_act(&mut tape, masked, fc_nodes, act)?;
        let fused = match fp_nodes {
            Some(nodes) => {
                let xp_node = tape.input(batch.xp.clone());
                let enc_p = dense_act(&mut tape, xp_node, nodes, act)?;
                tape.concat(enc_p, enc_c)?
            }
            None => enc_c,
        };
        let h = dense_act(&mut tape, fused, hidden_nodes, act)?;
        let logits = tape.affine(h, out_nodes.w, out_nodes.b)?;
        let output = match self.task {
            Task::Regression => logits,
            Task::BinaryClassification => tape.softmax_rows(logits)?,
        };
        let y = tape.input(batch.y.clone());
        let loss = task_loss(&mut tape, self.task, output, y)?;
        Ok(tape.backward(loss)?.swap_remove(0))
    }
}

fn dense_act(tape: &mut Tape, x: NodeId, nodes: DenseNodes, act: Activation) -> Result<NodeId> {
    let z = tape.affine(x, nodes.w, nodes.b)?;
    tape.activation(z, act)
}

fn task_loss(tape: &mut Tape, task: Task, output: NodeId, y: NodeId) -> Result<NodeId> {
    match task {
        Task::Regression => tape.mse(output, y),
        Task::BinaryClassification => tape.cross_entropy(output, y),
    }
}

impl Parameterized for CondSelModel {
    fn parameters(&self) -> Vec<&Matrix> {
        let mut p = self.fm.parameters();
        if let Some(fp) = &self.fp {
            p.extend([&fp.w, &fp.b]);
        }
        p.extend([
            &self.fc.w,
            &self.fc.b,
            &self.hidden.w,
            &self.hidden.b,
            &self.out.w,
            &self.out.b,
        ]);
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.fm.parameters_mut();
        if let Some(fp) = &mut self.fp {
            p.extend([&mut fp.w, &mut fp.b]);
        }
        p.extend([
            &mut self.fc.w,
            &mut self.fc.b,
            &mut self.hidden.w,
            &mut self.hidden.b,
            &mut self.out.w,
            &mut self.out.b,
        ]);
        p
    }
}

impl Trainable for CondSelModel {
    fn task(&self) -> Task {
        self.task
    }

    fn record_loss(&self, tape: &mut Tape, batch: &Batch) -> Result<NodeId> {
        let rec = self.record(tape, &batch.xp, &batch.xc)?;
        let _ = rec.mask;
        let y = tape.input(batch.y.clone());
        task_loss(tape, self.task, rec.output, y)
    }

    fn set_temperature(&mut self, temperature: f64) -> Result<()> {
        self.fm.set_temperature(temperature)?;
        self.arch.temperature = temperature;
        Ok(())
    }
}

/// Plain feed-forward network on `[Xp, Xc]`, used to score variable subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    task: Task,
    layers: Vec<Dense>,
    activation: Activation,
}

pub const EVALUATOR_HIDDEN: [usize; 2] = [32, 32];

impl Mlp {
    pub fn new(
        inputs: usize,
        hidden: &[usize],
        task: Task,
        activation: Activation,
        zero_output: bool,
        seed: u64,
    ) -> Result<Self> {
        if inputs == 0 {
            return Err(Error::Argument(
                "an MLP needs at least one input variable".into(),
            ));
        }
        if hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut rng = rng::stream(seed, rng::TAG_INIT, &[]);
        let mut widths = vec![inputs];
        widths.extend_from_slice(hidden);
        let mut layers: Vec<Dense> = widths
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], &mut rng))
            .collect();
        let last = *widths.last().unwrap();
        layers.push(if zero_output {
            Dense::zeros(last, task.d_y())
        } else {
            Dense::glorot(last, task.d_y(), &mut rng)
        });
        Ok(Self {
            task,
            layers,
            activation,
        })
    }

    /// The subset evaluator: two hidden layers of width 32, three affine maps.
    pub fn evaluator(inputs: usize, task: Task, seed: u64) -> Result<Self> {
        Self::new(
            inputs,
            &EVALUATOR_HIDDEN,
            task,
            Activation::Relu,
            false,
            seed,
        )
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn record(&self, tape: &mut Tape, xp: &Matrix, xc: &Matrix) -> Result<NodeId> {
        let x = xp.hconcat(xc)?;
        if x.cols() != self.inputs() {
            return Err(Error::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.inputs(),
                x.cols()
            )));
        }
        let nodes: Vec<DenseNodes> = self.layers.iter().map(|l| l.register(tape)).collect();
        let mut h = tape.input(x);
        let (last, hidden) = nodes.split_last().unwrap();
        for n in hidden {
            h = dense_act(tape, h, *n, self.activation)?;
        }
        let logits = tape.affine(h, last.w, last.b)?;
        match self.task {
            Task::Regression => Ok(logits),
            Task::BinaryClassification => tape.softmax_rows(logits),
        }
    }

    pub fn forward(&self, xp: &Matrix, xc: &Matrix) -> Result<Prediction> {
        let mut tape = Tape::new();
        let out = self.record(&mut tape, xp, xc)?;
        Ok(Prediction {
            y_hat: tape.value(out).clone(),
            task: self.task,
        })
    }
}

impl Parameterized for Mlp {
    fn parameters(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }
}

impl Trainable for Mlp {
    fn task(&self) -> Task {
        self.task
    }

    fn record_loss(&self, tape: &mut Tape, batch: &Batch) -> Result<NodeId> {
        let out = self.record(tape, &batch.xp, &batch.xc)?;
        let y = tape.input(batch.y.clone());
        task_loss(tape, self.task, out, y)
    }
}

/// Anything that maps `(Xp, Xc)` to predictions.
pub trait Predictor {
    fn predict(&self, xp: &Matrix, xc: &Matrix) -> Result<Prediction>;
}

impl Predictor for CondSelModel {
    fn predict(&self, xp: &Matrix, xc: &Matrix) -> Result<Prediction> {
        self.forward(xp, xc)
    }
}

impl Predictor for Mlp {
    fn predict(&self, xp: &Matrix, xc: &Matrix) -> Result<Prediction> {
        self.forward(xp, xc)
    }
}

/// MSE for regression, clamped cross-entropy for classification.
pub fn loss(pred: &Prediction, y: &Matrix) -> Result<f64> {
    let p = &pred.y_hat;
    if p.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            p.rows(),
            p.cols(),
            y.rows(),
            y.cols()
        )));
    }
    if p.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let n = p.rows() as f64;
    let total: f64 = match pred.task {
        Task::Regression => p
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum(),
        Task::BinaryClassification => {
            check_one_hot(y)?;
            p.as_slice()
                .iter()
                .zip(y.as_slice())
                .map(|(&pk, &yk)| -yk * pk.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln())
                .sum()
        }
    };
    Ok(total / n)
}

/// Held-out metric: accuracy for classification (argmax, ties to the lower
/// class), MSE for regression.
pub fn prediction_metric(pred: &Prediction, y: &Matrix) -> Result<f64> {
    if y.rows() == 0 {
        return Err(Error::EmptySet);
    }
    match pred.task {
        Task::Regression => loss(pred, y),
        Task::BinaryClassification => {
            if pred.y_hat.shape() != y.shape() {
                return Err(Error::Shape("prediction and label shapes differ".into()));
            }
            let hits = (0..y.rows())
                .filter(|&r| argmax(pred.y_hat.row(r)) == argmax(y.row(r)))
                .count();
            Ok(hits as f64 / y.rows() as f64)
        }
    }
}

pub fn predict_metric<M: Predictor>(
    model: &M,
    xp: &Matrix,
    xc: &Matrix,
    y: &Matrix,
) -> Result<f64> {
    if y.rows() == 0 {
        return Err(Error::EmptySet);
    }
    let pred = model.predict(xp, xc)?;
    prediction_metric(&pred, y)
}

/// Whether `a` is a better metric value than `b` for this task.
pub fn metric_better(task: Task, a: f64, b: f64) -> bool {
    match task {
        Task::Regression => a < b,
        Task::BinaryClassification => a > b,
    }
}
