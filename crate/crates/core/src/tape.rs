//! Reverse-mode differentiation over batched matrices.
//!
//! A [`Tape`] lives for one forward/backward pass. Every recorded node holds
//! its output value; parameter nodes are numbered in registration order and
//! [`Tape::backward`] returns one gradient per registered parameter.

use crate::data::argmax;
use crate::error::{Error, Result};
use crate::tensor::{affine_batch, dot, softmax_into, Activation, Matrix};

/// Probabilities are clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]` before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Act { x: NodeId, kind: Activation },
    SoftmaxRows(NodeId),
    MeanRows(NodeId),
    Scale { x: NodeId, factor: f64 },
    FloorBelowMax { x: NodeId, span: f64 },
    MulRow { x: NodeId, row: NodeId },
    Concat { left: NodeId, right: NodeId },
    Mse { pred: NodeId, target: NodeId },
    CrossEntropy { probs: NodeId, target: NodeId },
}

#[derive(Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Matrix>,
    params: Vec<NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite output from {op:?}")));
        }
        self.ops.push(op);
        self.values.push(value);
        Ok(NodeId(self.ops.len() - 1))
    }

    /// A constant leaf (data, targets).
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.ops.push(Op::Input);
        self.values.push(value);
        NodeId(self.ops.len() - 1)
    }

    /// A trainable leaf. Its gradient lands in slot `num_params()` at call time.
    pub fn param(&mut self, value: &Matrix) -> NodeId {
        self.ops.push(Op::Param);
        self.values.push(value.clone());
        let id = NodeId(self.ops.len() - 1);
        self.params.push(id);
        id
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let op = Op::Affine { x, w, b };
        let v = self.eval(&op, &self.values)?;
        self.push(op, v)
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> Result<NodeId> {
        let op = Op::Act { x, kind };
        let v = self.eval(&op, &self.values)?;
        self.push(op, v)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let op = Op::SoftmaxRows(x);
        let v = self.eval(&op, &self.values)?;
        self.push(op, v)
    }

    /// Column means, `B x n -> 1 x n`.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let op = Op::MeanRows(x);
        let v = self.eval(&op, &self.values)?;
        self.push(op, v)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let op = Op::Scale { x, factor };
        let v = self.eval(&op, &self.values)?;
        self.push(op, v)
    }

    /// Raises every entry to at least its row maximum minus `span`.
    pub fn floor_below_max(&mut self, x: NodeId, span: f64) -> Result<NodeId> {
        let op = Op::FloorBelowMax { x, span };
        let v = self.eval(&op, &self.values)?;
        self.push(op, v)
    }

    /// Multiplies every row of `x` elementwise by the single row `row`.
    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let op = Op::MulRow { x, row };
        let v = self.eval(&op, &self.values)?;
        self.push(op, v)
    }

    pub fn concat(&mut self, left: NodeId, right: NodeId) -> Result<NodeId> {
        let op = Op::Concat { left, right };
        let v = self.eval(&op, &self.values)?;
        self.push(op, v)
    }

    /// Batch mean of the per-row summed squared error.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let op = Op::Mse { pred, target };
        let v = self.eval(&op, &self.values)?;
        self.push(op, v)
    }

    /// Batch mean of `-sum_k t_k log p_k`; `target` rows must be one-hot.
    pub fn cross_entropy(&mut self, probs: NodeId, target: NodeId) -> Result<NodeId> {
        check_one_hot(self.value(target))?;
        let op = Op::CrossEntropy { probs, target };
        let v = self.eval(&op, &self.values)?;
        self.push(op, v)
    }

    /// Recomputes every derived node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.values.len());
        for (i, op) in self.ops.iter().enumerate() {
            let v = match op {
                Op::Input | Op::Param => self.values[i].clone(),
                _ => self.eval(op, &values)?,
            };
            values.push(v);
        }
        Ok(values)
    }

    fn eval(&self, op: &Op, values: &[Matrix]) -> Result<Matrix> {
        let val = |id: &NodeId| &values[id.0];
        match op {
            Op::Input | Op::Param => unreachable!("leaves are not evaluated"),
            Op::Affine { x, w, b } => affine_batch(val(x), val(w), val(b)),
            Op::Act { x, kind } => Ok(val(x).map(|v| kind.apply(v))),
            Op::SoftmaxRows(x) => {
                let x = val(x);
                if x.cols() == 0 {
                    return Err(Error::Shape("softmax over zero columns".into()));
                }
                let mut out = Matrix::zeros(x.rows(), x.cols());
                let cols = x.cols();
                for r in 0..x.rows() {
                    softmax_into(x.row(r), &mut out.as_mut_slice()[r * cols..(r + 1) * cols]);
                }
                Ok(out)
            }
            Op::MeanRows(x) => {
                let x = val(x);
                if x.rows() == 0 {
                    return Err(Error::EmptyBatch);
                }
                Ok(Matrix::from_raw(1, x.cols(), x.column_means()))
            }
            Op::Scale { x, factor } => Ok(val(x).map(|v| v * factor)),
            Op::FloorBelowMax { x, span } => {
                let x = val(x);
                let mut out = x.clone();
                let cols = x.cols();
                for r in 0..x.rows() {
                    let floor = x.row(r)[argmax(x.row(r))] - span;
                    for v in &mut out.as_mut_slice()[r * cols..(r + 1) * cols] {
                        *v = v.max(floor);
                    }
                }
                Ok(out)
            }
            Op::MulRow { x, row } => {
                let (x, row) = (val(x), val(row));
                if row.rows() != 1 || row.cols() != x.cols() {
                    return Err(Error::Shape(format!(
                        "row broadcast: {}x{} against {}x{}",
                        x.rows(),
                        x.cols(),
                        row.rows(),
                        row.cols()
                    )));
                }
                let m = row.as_slice();
                let mut out = x.clone();
                for chunk in out.as_mut_slice().chunks_mut(x.cols().max(1)) {
                    for (o, s) in chunk.iter_mut().zip(m) {
                        *o *= s;
                    }
                }
                Ok(out)
            }
            Op::Concat { left, right } => val(left).hconcat(val(right)),
            Op::Mse { pred, target } => {
                let (p, t) = (val(pred), val(target));
                check_same_shape(p, t, "mse")?;
                if p.rows() == 0 {
                    return Err(Error::EmptyBatch);
                }
                let sum: f64 = p
                    .as_slice()
                    .iter()
                    .zip(t.as_slice())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                Ok(Matrix::from_raw(1, 1, vec![sum / p.rows() as f64]))
            }
            Op::CrossEntropy { probs, target } => {
                let (p, t) = (val(probs), val(target));
                check_same_shape(p, t, "cross-entropy")?;
                if p.rows() == 0 {
                    return Err(Error::EmptyBatch);
                }
                let sum: f64 = p
                    .as_slice()
                    .iter()
                    .zip(t.as_slice())
                    .map(|(&pk, &tk)| -tk * pk.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln())
                    .sum();
                Ok(Matrix::from_raw(1, 1, vec![sum / p.rows() as f64]))
            }
        }
    }

    /// Gradients of the scalar `loss` with respect to every registered
    /// parameter, in registration order. Parameters off the loss path get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Matrix>> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let out = &self.values[i];
            match &self.ops[i] {
                Op::Input => {}
                Op::Param => {
                    grads[i] = Some(g);
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (batch, inp, outw) = (xv.rows(), xv.cols(), wv.rows());
                    let mut dx = Matrix::zeros(batch, inp);
                    let mut dw = Matrix::zeros(outw, inp);
                    let mut db = vec![0.0; outw];
                    for r in 0..batch {
                        let gr = g.row(r);
                        let xr = xv.row(r);
                        let dxr = &mut dx.as_mut_slice()[r * inp..(r + 1) * inp];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            db[o] += go;
                            let wr = wv.row(o);
                            for k in 0..inp {
                                dxr[k] += go * wr[k];
                            }
                            let dwr = &mut dw.as_mut_slice()[o * inp..(o + 1) * inp];
                            for k in 0..inp {
                                dwr[k] += go * xr[k];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, Matrix::from_raw(1, outw, db));
                }
                Op::Act { x, kind } => {
                    let xv = self.value(*x);
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(xv.as_slice().iter().zip(out.as_slice()))
                        .map(|(gi, (&xi, &yi))| gi * kind.derivative(xi, yi))
                        .collect();
                    accumulate(&mut grads, *x, Matrix::from_raw(xv.rows(), xv.cols(), data));
                }
                Op::SoftmaxRows(x) => {
                    let cols = out.cols();
                    let mut dx = Matrix::zeros(out.rows(), cols);
                    for r in 0..out.rows() {
                        let (yr, gr) = (out.row(r), g.row(r));
                        let inner = dot(yr, gr);
                        let dxr = &mut dx.as_mut_slice()[r * cols..(r + 1) * cols];
                        for k in 0..cols {
                            dxr[k] = yr[k] * (gr[k] - inner);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanRows(x) => {
                    let xv = self.value(*x);
                    let n = xv.rows() as f64;
                    let row: Vec<f64> = g.as_slice().iter().map(|v| v / n).collect();
                    let data = row.repeat(xv.rows());
                    accumulate(&mut grads, *x, Matrix::from_raw(xv.rows(), xv.cols(), data));
                }
                Op::Scale { x, factor } => {
                    accumulate(&mut grads, *x, g.map(|v| v * factor));
                }
                Op::FloorBelowMax { x, span } => {
                    let xv = self.value(*x);
                    let cols = xv.cols();
                    let mut dx = g.clone();
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        let top = argmax(row);
                        let dxr = &mut dx.as_mut_slice()[r * cols..(r + 1) * cols];
                        for k in 0..cols {
                            if row[k] < row[top] - span {
                                dxr[top] += dxr[k];
                                dxr[k] = 0.0;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MulRow { x, row } => {
                    let (xv, rv) = (self.value(*x), self.value(*row));
                    let cols = xv.cols();
                    let mut dx = g.clone();
                    let mut drow = vec![0.0; cols];
                    for r in 0..xv.rows() {
                        let (gr, xr) = (g.row(r), xv.row(r));
                        let dxr = &mut dx.as_mut_slice()[r * cols..(r + 1) * cols];
                        for k in 0..cols {
                            dxr[k] = gr[k] * rv.as_slice()[k];
                            drow[k] += gr[k] * xr[k];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *row, Matrix::from_raw(1, cols, drow));
                }
                Op::Concat { left, right } => {
                    let lc = self.value(*left).cols();
                    let rc = self.value(*right).cols();
                    let li: Vec<usize> = (0..lc).collect();
                    let ri: Vec<usize> = (lc..lc + rc).collect();
                    accumulate(&mut grads, *left, g.select_columns(&li));
                    accumulate(&mut grads, *right, g.select_columns(&ri));
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let scale = 2.0 * g.as_slice()[0] / p.rows() as f64;
                    let dp: Vec<f64> = p
                        .as_slice()
                        .iter()
                        .zip(t.as_slice())
                        .map(|(a, b)| scale * (a - b))
                        .collect();
                    let dt = dp.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *pred, Matrix::from_raw(p.rows(), p.cols(), dp));
                    accumulate(
                        &mut grads,
                        *target,
                        Matrix::from_raw(p.rows(), p.cols(), dt),
                    );
                }
                Op::CrossEntropy { probs, target } => {
                    let (p, t) = (self.value(*probs), self.value(*target));
                    let scale = g.as_slice()[0] / p.rows() as f64;
                    let dp = p
                        .as_slice()
                        .iter()
                        .zip(t.as_slice())
                        .map(|(&pk, &tk)| {
                            if (PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&pk) {
                                -scale * tk / pk
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let dt = p
                        .as_slice()
                        .iter()
                        .map(|&pk| -scale * pk.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln())
                        .collect();
                    accumulate(&mut grads, *probs, Matrix::from_raw(p.rows(), p.cols(), dp));
                    accumulate(
                        &mut grads,
                        *target,
                        Matrix::from_raw(p.rows(), p.cols(), dt),
                    );
                }
            }
        }

        let mut out = Vec::with_capacity(self.params.len());
        for &id in &self.params {
            let g = if id.0 <= loss.0 {
                grads[id.0].take()
            } else {
                None
            };
            let v = &self.values[id.0];
            out.push(g.unwrap_or_else(|| Matrix::zeros(v.rows(), v.cols())));
        }
        if let Some(bad) = out.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {bad}"
            )));
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn check_same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what}: prediction {}x{} vs target {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )))
    }
}

pub(crate) fn check_one_hot(t: &Matrix) -> Result<()> {
    for r in 0..t.rows() {
        let row = t.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Label(format!("row {r} is not one-hot: {row:?}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn scalar_square_loss_gradient() {
        // loss = (w x - y)^2 at w=2, x=3, y=5: d/dw = 2 (wx - y) x = 6
        let mut tape = Tape::new();
        let w = tape.param(&m(&[vec![2.0]]));
        let b = tape.param(&m(&[vec![0.0]]));
        let x = tape.input(m(&[vec![3.0]]));
        let y = tape.input(m(&[vec![5.0]]));
        let p = tape.affine(x, w, b).unwrap();
        let loss = tape.mse(p, y).unwrap();
        assert_eq!(tape.value(loss).as_slice(), &[1.0]);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g[0].as_slice(), &[6.0]);
        assert_eq!(g[1].as_slice(), &[2.0]);
    }

    #[test]
    fn gradient_vanishes_at_minimum() {
        let mut tape = Tape::new();
        let w = tape.param(&m(&[vec![5.0 / 3.0]]));
        let b = tape.param(&m(&[vec![0.0]]));
        let x = tape.input(m(&[vec![3.0]]));
        let y = tape.input(m(&[vec![5.0]]));
        let p = tape.affine(x, w, b).unwrap();
        let loss = tape.mse(p, y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g[0].as_slice()[0].abs() < 1e-12);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(&m(&[vec![1.5, -0.5]]));
        let b = tape.param(&m(&[vec![0.1]]));
        let unused = tape.param(&m(&[vec![7.0, 8.0], vec![9.0, 1.0]]));
        let x = tape.input(m(&[vec![1.0, 2.0]]));
        let y = tape.input(m(&[vec![0.0]]));
        let p = tape.affine(x, w, b).unwrap();
        let loss = tape.mse(p, y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g[2], Matrix::zeros(2, 2));
        assert_eq!(tape.value(unused).shape(), (2, 2));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(&m(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let b = tape.param(&m(&[vec![0.0, 0.0]]));
        let x = tape.input(m(&[vec![1.0, 2.0]]));
        let out = tape.affine(x, w, b).unwrap();
        assert!(matches!(tape.backward(out), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_rejects_soft_labels() {
        let mut tape = Tape::new();
        let p = tape.input(m(&[vec![0.5, 0.5]]));
        let t = tape.input(m(&[vec![0.3, 0.7]]));
        assert!(matches!(tape.cross_entropy(p, t), Err(Error::Label(_))));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::new();
        let w = tape.param(&m(&[vec![0.3, -1.2], vec![0.7, 0.4], vec![-0.1, 0.9]]));
        let b = tape.param(&m(&[vec![0.05, -0.2, 0.1]]));
        let x = tape.input(m(&[vec![1.0, 2.0], vec![-0.5, 0.25]]));
        let h = tape.affine(x, w, b).unwrap();
        let a = tape.activation(h, Activation::Tanh).unwrap();
        let s = tape.softmax_rows(a).unwrap();
        let mean = tape.mean_rows(s).unwrap();
        let _ = tape.mul_row(a, mean).unwrap();
        let replayed = tape.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v.as_slice(), tape.values[i].as_slice());
        }
    }

    /// Builds a small graph that touches one primitive and returns the loss
    /// and analytic gradients; used with the finite-difference checker.
    fn primitive_case(which: usize, params: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let p: Vec<NodeId> = params.iter().map(|v| tape.param(v)).collect();
        let x = tape.input(m(&[
            vec![0.4, -1.3, 0.8],
            vec![1.1, 0.2, -0.6],
            vec![-0.7, 0.9, 0.3],
        ]));
        let h = tape.affine(x, p[0], p[1])?;
        let out = match which {
            0 => h,
            1 => tape.activation(h, Activation::Relu)?,
            2 => tape.activation(h, Activation::Sigmoid)?,
            3 => tape.activation(h, Activation::Tanh)?,
            4 => tape.softmax_rows(h)?,
            5 => {
                let mean = tape.mean_rows(h)?;
                let s = tape.scale(mean, 0.5)?;
                let sm = tape.softmax_rows(s)?;
                tape.mul_row(x, sm)?
            }
            6 => {
                let t = tape.activation(h, Activation::Tanh)?;
                tape.concat(t, x)?
            }
            // spans below and above the in-row spread: clamped and untouched
            7 => tape.floor_below_max(h, 0.4)?,
            8 => tape.floor_below_max(h, 50.0)?,
            _ => unreachable!(),
        };
        let target_cols = tape.value(out).cols();
        let loss = if which == 4 {
            let mut t = Matrix::zeros(3, target_cols);
            for r in 0..3 {
                t.set(r, r % target_cols, 1.0);
            }
            let t = tape.input(t);
            tape.cross_entropy(out, t)?
        } else {
            let t = tape.input(Matrix::filled(3, target_cols, 0.3));
            tape.mse(out, t)?
        };
        let v = tape.value(loss).as_slice()[0];
        Ok((v, tape.backward(loss)?))
    }

    #[test]
    fn floor_below_max_values() {
        let mut tape = Tape::new();
        let x = tape.input(m(&[vec![0.0, -50.0, 3.0], vec![-1.0, -1.0, -1.0]]));
        let y = tape.floor_below_max(x, 10.0).unwrap();
        assert_eq!(
            tape.value(y).as_slice(),
            &[0.0, -7.0, 3.0, -1.0, -1.0, -1.0]
        );
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let params = vec![
            m(&[
                vec![0.5, -0.3, 0.8],
                vec![0.1, 0.9, -0.4],
                vec![-0.7, 0.2, 0.6],
            ]),
            m(&[vec![0.05, -0.1, 0.2]]),
        ];
        for which in 0..9 {
            let err = finite_diff_check(|p: &Vec<Matrix>| primitive_case(which, p), &params, 1e-5)
                .unwrap();
            assert!(err < 1e-4, "primitive {which}: max rel err {err}");
        }
    }
}
