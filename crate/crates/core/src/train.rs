//! Seeded mini-batch training with Adam.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::model::Trainable;
use crate::rng;
use crate::tape::Tape;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub task: Option<Task>,
    pub temperature: f64,
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            task: None,
            temperature: crate::mask::DEFAULT_TEMPERATURE,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if n > 0 && self.batch_size > n {
            return bad(format!(
                "batch size {} exceeds {n} samples",
                self.batch_size
            ));
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad(format!("adam eps must be positive, got {}", self.adam_eps));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.early_stop_patience == Some(0) {
            return bad("early stop patience must be at least 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Option<Vec<f64>>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates, one pair per parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn for_params(params: &[&Matrix]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update. Increments `state.step` first, so the
/// first call uses timestep 1.
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.shape() != grads[i].shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Shape(format!("adam: slot {i} shape mismatch")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].as_slice();
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        for (k, w) in p.as_mut_slice().iter_mut().enumerate() {
            m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
            v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *w -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// Row order for one epoch. The stream is keyed by `(seed, epoch)` only.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, rng::TAG_SHUFFLE, &[epoch as u64]);
    order.shuffle(&mut r);
    order
}

/// Consecutive batches of `batch_size` rows; the last one may be short.
pub fn batches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size)
}

fn mean_loss<M: Trainable>(model: &M, data: &Dataset) -> Result<f64> {
    let mut tape = Tape::new();
    let l = model.record_loss(&mut tape, &data.full_batch())?;
    Ok(tape.value(l).as_slice()[0])
}

pub fn train<M: Trainable>(
    model: M,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(M, TrainHistory)> {
    train_with_validation(model, data, None, config)
}

/// Trains for `config.epochs` passes. With a validation set, its loss is
/// recorded per epoch and drives optional early stopping (best parameters are
/// restored).
pub fn train_with_validation<M: Trainable>(
    mut model: M,
    data: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(M, TrainHistory)> {
    config.validate(data.n())?;
    if data.n() == 0 {
        return Err(Error::EmptySet);
    }
    if let Some(task) = config.task {
        if task != model.task() || task != data.task() {
            return Err(Error::Config(format!(
                "config task {task} does not match model {} / data {}",
                model.task(),
                data.task()
            )));
        }
    }
    model.set_temperature(config.temperature)?;

    let start = Instant::now();
    let hyper = config.adam();
    let mut state = AdamState::for_params(&model.parameters());
    let mut history = TrainHistory {
        validation_loss: validation.map(|_| Vec::new()),
        ..TrainHistory::default()
    };
    let mut best: Option<(f64, Vec<Matrix>)> = None;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        let order = epoch_order(data.n(), config.seed, epoch);
        let mut weighted = 0.0;
        for (b, rows) in batches(&order, config.batch_size).enumerate() {
            let batch = data.batch(rows);
            let mut tape = Tape::new();
            let diverged = |what: String| Error::Divergence {
                epoch,
                batch: b,
                what,
            };
            let loss = model.record_loss(&mut tape, &batch).map_err(|e| match e {
                Error::Numeric(msg) => diverged(msg),
                other => other,
            })?;
            let value = tape.value(loss).as_slice()[0];
            if !value.is_finite() {
                return Err(diverged(format!("loss is {value}")));
            }
            let grads = tape.backward(loss).map_err(|e| match e {
                Error::Numeric(msg) => diverged(msg),
                other => other,
            })?;
            adam_step(&mut model.parameters_mut(), &grads, &mut state, &hyper)?;
            if model.parameters().iter().any(|p| !p.is_finite()) {
                return Err(diverged("parameters became non-finite".into()));
            }
            weighted += value * rows.len() as f64;
        }
        history.train_loss.push(weighted / data.n() as f64);

        if let Some(val) = validation {
            let vl = mean_loss(&model, val)?;
            history.validation_loss.as_mut().unwrap().push(vl);
            if let Some(patience) = config.early_stop_patience {
                if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                    best = Some((vl, model.parameters().into_iter().cloned().collect()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= patience {
                        break;
                    }
                }
            }
        }
    }
    if let Some((_, params)) = best {
        for (p, saved) in model.parameters_mut().into_iter().zip(params) {
            *p = saved;
        }
    }
    history.seconds = start.elapsed().as_secs_f64();
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, CondSelModel, Mlp};
    use crate::tensor::{Activation, Parameterized};

    #[test]
    fn first_step_bias_correction() {
        let mut p = Matrix::filled(1, 1, 0.0);
        let mut state = AdamState::for_params(&[&p]);
        let hyper = AdamHyper {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        adam_step(
            &mut [&mut p],
            &[Matrix::filled(1, 1, 1.0)],
            &mut state,
            &hyper,
        )
        .unwrap();
        // m_hat = 0.1 / 0.1 = 1, v_hat = 0.001 / 0.001 = 1
        let expect = -0.1 / (1.0 + 1e-8);
        assert!((p.get(0, 0) - expect).abs() < 1e-15, "{}", p.get(0, 0));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Matrix::filled(2, 2, 0.7);
        let mut state = AdamState::for_params(&[&p]);
        let hyper = TrainConfig::default().adam();
        adam_step(&mut [&mut p], &[Matrix::zeros(2, 2)], &mut state, &hyper).unwrap();
        assert_eq!(p, Matrix::filled(2, 2, 0.7));
    }

    #[test]
    fn first_step_opposes_gradient() {
        for g in [-3.0, -1e-6, 2.5, 1e4] {
            let mut p = Matrix::filled(1, 1, 0.0);
            let mut state = AdamState::for_params(&[&p]);
            adam_step(
                &mut [&mut p],
                &[Matrix::filled(1, 1, g)],
                &mut state,
                &TrainConfig::default().adam(),
            )
            .unwrap();
            assert_eq!(p.get(0, 0).signum(), -g.signum());
        }
    }

    #[test]
    fn adam_shape_errors() {
        let mut p = Matrix::zeros(2, 2);
        let mut state = AdamState::for_params(&[&p]);
        let h = TrainConfig::default().adam();
        assert!(adam_step(&mut [&mut p], &[Matrix::zeros(1, 2)], &mut state, &h).is_err());
        assert!(adam_step(&mut [&mut p], &[], &mut state, &h).is_err());
    }

    #[test]
    fn epochs_visit_every_row_once() {
        for epoch in 0..5 {
            let order = epoch_order(103, 9, epoch);
            let mut seen: Vec<usize> = batches(&order, 10).flatten().copied().collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..103).collect::<Vec<_>>());
        }
        assert_ne!(epoch_order(50, 9, 0), epoch_order(50, 9, 1));
        assert_eq!(epoch_order(50, 9, 3), epoch_order(50, 9, 3));
    }

    fn separable(n: usize) -> Dataset {
        let mut xc = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let a = ((i * 37) % 101) as f64 / 50.0 - 1.0;
            let b = ((i * 53) % 97) as f64 / 48.0 - 1.0;
            xc.extend([a, b]);
            y.extend(if a + b > 0.0 { [0.0, 1.0] } else { [1.0, 0.0] });
        }
        Dataset::new(
            Matrix::zeros(n, 0),
            Matrix::new(n, 2, xc).unwrap(),
            Matrix::new(n, 2, y).unwrap(),
            vec![],
            vec!["a".into(), "b".into()],
            "y".into(),
            Task::BinaryClassification,
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let data = separable(40);
        let m = CondSelModel::new(0, 2, Task::BinaryClassification, Architecture::default(), 1)
            .unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (trained, h) = train(m.clone(), &data, &cfg).unwrap();
        assert_eq!(trained, m);
        assert!(h.train_loss.is_empty());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = separable(200);
        let m = Mlp::new(
            2,
            &[8],
            Task::BinaryClassification,
            Activation::Tanh,
            false,
            3,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-2,
            seed: 5,
            ..TrainConfig::default()
        };
        let (a, ha) = train(m.clone(), &data, &cfg).unwrap();
        let (b, hb) = train(m.clone(), &data, &cfg).unwrap();
        assert!(ha.train_loss.last().unwrap() < ha.train_loss.first().unwrap());
        assert_eq!(a, b);
        assert_eq!(ha.train_loss, hb.train_loss);

        let (_, hc) = train(m, &data, &TrainConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(ha.train_loss, hc.train_loss);
    }

    #[test]
    fn early_stopping_records_validation() {
        let data = separable(120);
        let m = Mlp::new(
            2,
            &[4],
            Task::BinaryClassification,
            Activation::Tanh,
            false,
            3,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 500,
            batch_size: 16,
            learning_rate: 5e-2,
            early_stop_patience: Some(3),
            ..TrainConfig::default()
        };
        let (_, h) =
            train_with_validation(m, &data, Some(&data.select_rows(&[0, 1, 2, 3])), &cfg).unwrap();
        let vl = h.validation_loss.unwrap();
        assert_eq!(vl.len(), h.train_loss.len());
        assert!(vl.len() < 500);
    }

    #[test]
    fn divergence_is_reported() {
        let data = separable(32);
        let m = Mlp::new(
            2,
            &[4],
            Task::BinaryClassification,
            Activation::Relu,
            false,
            3,
        )
        .unwrap();
        let mut huge = m.clone();
        for p in huge.parameters_mut() {
            p.as_mut_slice().fill(1e300);
        }
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let err = train(huge, &data, &cfg).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Divergence {
                    epoch: 0,
                    batch: 0,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate(100).is_ok());
        assert!(TrainConfig {
            batch_size: 0,
            ..ok.clone()
        }
        .validate(10)
        .is_err());
        assert!(TrainConfig {
            batch_size: 11,
            ..ok.clone()
        }
        .validate(10)
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..ok.clone()
        }
        .validate(10)
        .is_err());
        assert!(TrainConfig {
            adam_beta1: 1.0,
            ..ok.clone()
        }
        .validate(100)
        .is_err());
        assert!(TrainConfig {
            adam_beta2: -0.1,
            ..ok.clone()
        }
        .validate(100)
        .is_err());
    }
}
