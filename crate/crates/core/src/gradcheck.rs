//! Central finite differences against analytic gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Batch, Task};
use crate::error::{Error, Result};
use crate::model::{Architecture, CondSelModel};
use crate::rng;
use crate::tensor::{Matrix, Parameterized};

/// Relative error with an absolute floor: `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Perturbs every scalar parameter by `±eps` and returns the maximum
/// relative error between the central difference and the analytic gradient
/// that `forward` reports at the unperturbed point.
///
/// `forward` returns `(loss, gradients)` with gradients in parameter order.
pub fn finite_diff_check<P, F>(forward: F, params: &P, eps: f64) -> Result<f64>
where
    P: Parameterized + Clone,
    F: Fn(&P) -> Result<(f64, Vec<Matrix>)>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Argument(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let (_, analytic) = forward(params)?;
    let shapes: Vec<(usize, usize)> = params.parameters().iter().map(|m| m.shape()).collect();
    if analytic.len() != shapes.len() || analytic.iter().zip(&shapes).any(|(g, s)| g.shape() != *s)
    {
        return Err(Error::Shape(
            "analytic gradients do not match parameter shapes".into(),
        ));
    }

    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (slot, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let original = params.parameters()[slot].as_slice()[k];

            probe.parameters_mut()[slot].as_mut_slice()[k] = original + eps;
            let (plus, _) = forward(&probe)?;
            probe.parameters_mut()[slot].as_mut_slice()[k] = original - eps;
            let (minus, _) = forward(&probe)?;
            probe.parameters_mut()[slot].as_mut_slice()[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad.as_slice()[k], numeric));
        }
    }
    Ok(worst)
}

/// Gradient check of a freshly initialized [`CondSelModel`] on a random
/// batch of `rows` standard-normal samples. The mask layer is perturbed away
/// from its zero init so that its gradient path carries signal.
pub fn check_model(
    d_p: usize,
    d_c: usize,
    task: Task,
    rows: usize,
    seed: u64,
    eps: f64,
) -> Result<f64> {
    if rows == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut model = CondSelModel::new(d_p, d_c, task, Architecture::default(), seed)?;
    let mut r = rng::stream(seed, rng::TAG_DATA, &[0x67c]);
    let slots = model.feature_mask().parameters().len();
    for p in model.parameters_mut().into_iter().take(slots) {
        for v in p.as_mut_slice() {
            *v = r.random_range(-0.5..0.5);
        }
    }
    let mut normal = |rows: usize, cols: usize| {
        let data = (0..rows * cols).map(|_| r.sample(StandardNormal)).collect();
        Matrix::new(rows, cols, data)
    };
    let xp = normal(rows, d_p)?;
    let xc = normal(rows, d_c)?;
    let y = match task {
        Task::Regression => normal(rows, 1)?,
        Task::BinaryClassification => {
            let mut y = Matrix::zeros(rows, 2);
            for i in 0..rows {
                y.set(i, r.random_range(0..2), 1.0);
            }
            y
        }
    };
    let batch = Batch { xp, xc, y };
    finite_diff_check(|m: &CondSelModel| m.loss_and_gradients(&batch), &model, eps)
}
