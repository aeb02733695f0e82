//! Synthetic datasets with known relevant variables.
//!
//! All generator equations live in this file. Each generator is a pure
//! function of its sizes, parameters and seed.
//!
//! # Open-defect delays
//!
//! Twelve supply voltages `0.50, 0.55, ..., 1.05 V`. The nominal `0.9V`
//! column is preselected, the other eleven are candidates. For a chip with
//! speed factor `s ~ N(0, σ_s)` and threshold shift `δ ~ N(0, σ_vth)`:
//!
//! ```text
//! base(v)      = v / (v - 0.35 - δ)^1.3                     (alpha-power delay)
//! healthy(v)   = base(v) · (1 + s) · (1 + ε_v),  ε_v ~ N(0, σ_m)
//! defective(v) = healthy(v) + r · base(v) · exp(-(v - 0.5) / 0.1),  r ~ U(0.04, 0.2)
//! ```
//!
//! with `σ_s = 0.06`, `σ_vth = 0.004`, `σ_m = 0.01`, all multiplied by the
//! noise scale. The defect term decays with voltage, so the lowest voltages
//! carry the defect signal while `0.9V` mostly measures the speed factor. With
//! the noise scale at zero the classes split at a threshold on the `0.5V`
//! column.
//!
//! # Post-silicon tuning
//!
//! Columns `c1..c4, t1..t7` with `t2` preselected and target `FoM`.
//! `t1..t5 ~ N(0, 1)` independently. The decoys share one latent factor
//! `z ~ N(0, 1)`: `c_i, t6, t7 = 0.6 z + 0.8 e` with fresh `e ~ N(0, 1)`, so
//! they are correlated with each other and independent of the target.
//!
//! ```text
//! FoM = tanh(1.5 t1) · (1 + 0.3 t2)
//!     + 0.8 sin(1.5 t3)
//!     + 0.6 t4 · (1 + 0.5 tanh(t2))
//!     + 0.4 t5²
//!     + 0.5 t2
//!     + σ · N(0, 1),           σ = 0.05 · noise scale
//! ```
//!
//! # Generic planted set
//!
//! Candidates and preselected columns are i.i.d. `N(0, 1)`. With `R` the
//! relevant candidates and `p̄` the mean of the preselected columns (0 if
//! there are none):
//!
//! ```text
//! s = Σ_{r∈R} tanh(1.5 x_r) · (1 + 0.5 tanh(p̄)) + 0.5 Σ_i tanh(p_i)
//! ```
//!
//! Regression targets are `s + 0.1 ε`; classification labels are
//! `1[s + 0.1 ε > 0]`, one-hot encoded.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

pub const NOMINAL_VOLTAGE: &str = "0.9V";
pub const DEFECT_LABELS: [&str; 2] = ["ok", "defect"];

/// Supply voltages in volts, ascending.
pub fn voltage_grid() -> Vec<f64> {
    (0..12).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

pub fn voltage_name(v: f64) -> String {
    format!("{v}V")
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenDefectParams {
    pub noise_scale: f64,
}

impl Default for OpenDefectParams {
    fn default() -> Self {
        Self { noise_scale: 1.0 }
    }
}

/// Voltages at or below this carry most of the defect signal.
pub const OPEN_DEFECT_INFORMATIVE_MAX_V: f64 = 0.6;

pub fn gen_open_defect(n_defective: usize, n_ok: usize, seed: u64) -> Result<Dataset> {
    gen_open_defect_with(n_defective, n_ok, seed, OpenDefectParams::default())
}

pub fn gen_open_defect_with(
    n_defective: usize,
    n_ok: usize,
    seed: u64,
    params: OpenDefectParams,
) -> Result<Dataset> {
    if n_defective == 0 || n_ok == 0 {
        return Err(Error::Argument(
            "both classes need at least one sample".into(),
        ));
    }
    let volts = voltage_grid();
    let nominal = volts.iter().position(|&v| (v - 0.9).abs() < 1e-9).unwrap();
    let candidates: Vec<usize> = (0..volts.len()).filter(|&i| i != nominal).collect();
    let n = n_defective + n_ok;
    let ns = params.noise_scale;
    let mut r = rng::stream(seed, rng::TAG_DATA, &[1]);

    let mut xp = Vec::with_capacity(n);
    let mut xc = Vec::with_capacity(n * candidates.len());
    let mut y = Vec::with_capacity(2 * n);
    // defective rows first, then healthy rows
    for row in 0..n {
        let defective = row < n_defective;
        let speed = 0.06 * ns * normal(&mut r);
        let vth_shift = 0.004 * ns * normal(&mut r);
        let severity = r.random_range(0.04..0.2);
        let delays: Vec<f64> = volts
            .iter()
            .map(|&v| {
                let base = v / (v - 0.35 - vth_shift).powf(1.3);
                let measured = base * (1.0 + speed) * (1.0 + 0.01 * ns * normal(&mut r));
                if defective {
                    measured + severity * base * (-(v - 0.5) / 0.1).exp()
                } else {
                    measured
                }
            })
            .collect();
        xp.push(delays[nominal]);
        xc.extend(candidates.iter().map(|&i| delays[i]));
        y.extend(if defective { [0.0, 1.0] } else { [1.0, 0.0] });
    }
    Dataset::new(
        Matrix::new(n, 1, xp)?,
        Matrix::new(n, candidates.len(), xc)?,
        Matrix::new(n, 2, y)?,
        vec![voltage_name(volts[nominal])],
        candidates.iter().map(|&i| voltage_name(volts[i])).collect(),
        "label".into(),
        Task::BinaryClassification,
        Some(DEFECT_LABELS.map(String::from)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningParams {
    pub noise_scale: f64,
}

impl Default for TuningParams {
    fn default() -> Self {
        Self { noise_scale: 1.0 }
    }
}

pub const TUNING_CANDIDATES: [&str; 10] =
    ["c1", "c2", "c3", "c4", "t1", "t3", "t4", "t5", "t6", "t7"];
pub const TUNING_PRESELECTED: &str = "t2";
pub const TUNING_RELEVANT: [&str; 4] = ["t1", "t3", "t4", "t5"];

/// Candidate indices of `t1, t3, t4, t5`.
pub fn tuning_relevant_indices() -> Vec<usize> {
    TUNING_RELEVANT
        .iter()
        .map(|name| TUNING_CANDIDATES.iter().position(|c| c == name).unwrap())
        .collect()
}

/// The noiseless figure of merit.
pub fn tuning_fom(t1: f64, t2: f64, t3: f64, t4: f64, t5: f64) -> f64 {
    (1.5 * t1).tanh() * (1.0 + 0.3 * t2)
        + 0.8 * (1.5 * t3).sin()
        + 0.6 * t4 * (1.0 + 0.5 * t2.tanh())
        + 0.4 * t5 * t5
        + 0.5 * t2
}

pub fn gen_tuning(n: usize, seed: u64) -> Result<Dataset> {
    gen_tuning_with(n, seed, TuningParams::default())
}

pub fn gen_tuning_with(n: usize, seed: u64, params: TuningParams) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Argument("n must be at least 1".into()));
    }
    let mut r = rng::stream(seed, rng::TAG_DATA, &[2]);
    let mut xp = Vec::with_capacity(n);
    let mut xc = Vec::with_capacity(n * 10);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let t: [f64; 5] = std::array::from_fn(|_| normal(&mut r));
        let [t1, t2, t3, t4, t5] = t;
        let z = normal(&mut r);
        let decoys: [f64; 6] = std::array::from_fn(|_| 0.6 * z + 0.8 * normal(&mut r));
        let fom = tuning_fom(t1, t2, t3, t4, t5) + 0.05 * params.noise_scale * normal(&mut r);

        xp.push(t2);
        // c1..c4, t1, t3, t4, t5, t6, t7
        xc.extend_from_slice(&decoys[..4]);
        xc.extend([t1, t3, t4, t5]);
        xc.extend_from_slice(&decoys[4..]);
        y.push(fom);
    }
    Dataset::new(
        Matrix::new(n, 1, xp)?,
        Matrix::new(n, 10, xc)?,
        Matrix::new(n, 1, y)?,
        vec![TUNING_PRESELECTED.into()],
        TUNING_CANDIDATES.iter().map(|s| s.to_string()).collect(),
        "FoM".into(),
        Task::Regression,
        None,
    )
}

/// Sizes and relevant set for [`gen_planted`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub n: usize,
    pub d_c: usize,
    pub d_p: usize,
    pub relevant: Vec<usize>,
    pub task: Task,
}

pub const PLANTED_NOISE: f64 = 0.1;

pub fn gen_planted(spec: &PlantedSpec, seed: u64) -> Result<Dataset> {
    if spec.relevant.is_empty() {
        return Err(Error::Argument("relevant set is empty".into()));
    }
    if spec.n == 0 || spec.d_c == 0 {
        return Err(Error::Argument("n and d_c must be at least 1".into()));
    }
    if let Some(&bad) = spec.relevant.iter().find(|&&j| j >= spec.d_c) {
        return Err(Error::Argument(format!(
            "relevant index {bad} is not a candidate (d_c = {})",
            spec.d_c
        )));
    }
    let mut relevant = spec.relevant.clone();
    relevant.sort_unstable();
    relevant.dedup();

    let (n, d_c, d_p) = (spec.n, spec.d_c, spec.d_p);
    let mut r = rng::stream(seed, rng::TAG_DATA, &[3]);
    let mut xp = Vec::with_capacity(n * d_p);
    let mut xc = Vec::with_capacity(n * d_c);
    let mut y = Vec::with_capacity(n * spec.task.d_y());
    for _ in 0..n {
        let p: Vec<f64> = (0..d_p).map(|_| normal(&mut r)).collect();
        let x: Vec<f64> = (0..d_c).map(|_| normal(&mut r)).collect();
        let p_mean = if d_p == 0 {
            0.0
        } else {
            p.iter().sum::<f64>() / d_p as f64
        };
        let gain = 1.0 + 0.5 * p_mean.tanh();
        let s = relevant
            .iter()
            .map(|&j| (1.5 * x[j]).tanh() * gain)
            .sum::<f64>()
            + 0.5 * p.iter().map(|v| v.tanh()).sum::<f64>()
            + PLANTED_NOISE * normal(&mut r);
        match spec.task {
            Task::Regression => y.push(s),
            Task::BinaryClassification => y.extend(if s > 0.0 { [0.0, 1.0] } else { [1.0, 0.0] }),
        }
        xp.extend(p);
        xc.extend(x);
    }
    Dataset::new(
        Matrix::new(n, d_p, xp)?,
        Matrix::new(n, d_c, xc)?,
        Matrix::new(n, spec.task.d_y(), y)?,
        (0..d_p).map(|i| format!("p{i}")).collect(),
        (0..d_c).map(|j| format!("x{j}")).collect(),
        "y".into(),
        spec.task,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_defect_shape_and_names() {
        let d = gen_open_defect(1000, 1000, 0).unwrap();
        assert_eq!((d.n(), d.d_c(), d.d_p()), (2000, 11, 1));
        assert_eq!(d.preselected_names(), &["0.9V".to_string()]);
        assert_eq!(d.candidate_names()[0], "0.5V");
        assert_eq!(d.candidate_names()[1], "0.55V");
        assert_eq!(d.candidate_names()[10], "1.05V");
        assert!(!d.candidate_names().contains(&"0.9V".to_string()));
        let defects = (0..d.n()).filter(|&r| d.class_of(r) == 1).count();
        assert_eq!(defects, 1000);
    }

    #[test]
    fn noiseless_defects_split_at_lowest_voltage() {
        let d = gen_open_defect_with(50, 50, 3, OpenDefectParams { noise_scale: 0.0 }).unwrap();
        let low = d.xc().column(0);
        let max_ok = (0..d.n())
            .filter(|&r| d.class_of(r) == 0)
            .map(|r| low[r])
            .fold(f64::MIN, f64::max);
        let min_bad = (0..d.n())
            .filter(|&r| d.class_of(r) == 1)
            .map(|r| low[r])
            .fold(f64::MAX, f64::min);
        assert!(min_bad > max_ok, "{min_bad} vs {max_ok}");
    }

    #[test]
    fn tuning_layout() {
        let d = gen_tuning(50, 1).unwrap();
        assert_eq!((d.d_c(), d.d_p()), (10, 1));
        assert_eq!(d.preselected_names(), &["t2".to_string()]);
        assert_eq!(d.target_name(), "FoM");
        assert_eq!(tuning_relevant_indices(), vec![4, 5, 6, 7]);
    }

    #[test]
    fn noiseless_tuning_target_is_reproducible() {
        let d = gen_tuning_with(30, 2, TuningParams { noise_scale: 0.0 }).unwrap();
        for r in 0..d.n() {
            let c = d.xc().row(r);
            let expect = tuning_fom(c[4], d.xp().get(r, 0), c[5], c[6], c[7]);
            assert_eq!(d.y().get(r, 0), expect);
        }
    }

    #[test]
    fn generators_are_pure() {
        assert_eq!(gen_tuning(20, 5).unwrap(), gen_tuning(20, 5).unwrap());
        assert_ne!(gen_tuning(20, 5).unwrap(), gen_tuning(20, 6).unwrap());
        assert_eq!(
            gen_open_defect(5, 7, 1).unwrap(),
            gen_open_defect(5, 7, 1).unwrap()
        );
        let spec = PlantedSpec {
            n: 10,
            d_c: 6,
            d_p: 1,
            relevant: vec![0, 3],
            task: Task::Regression,
        };
        assert_eq!(
            gen_planted(&spec, 1).unwrap(),
            gen_planted(&spec, 1).unwrap()
        );
        assert_ne!(
            gen_planted(&spec, 1).unwrap().xc(),
            gen_planted(&spec, 2).unwrap().xc()
        );
    }

    #[test]
    fn planted_edge_cases() {
        let spec = PlantedSpec {
            n: 1,
            d_c: 3,
            d_p: 0,
            relevant: vec![1],
            task: Task::BinaryClassification,
        };
        let d = gen_planted(&spec, 0).unwrap();
        assert_eq!((d.n(), d.d_c(), d.d_p()), (1, 3, 0));
        let empty = PlantedSpec {
            relevant: vec![],
            ..spec.clone()
        };
        assert!(matches!(gen_planted(&empty, 0), Err(Error::Argument(_))));
        let outside = PlantedSpec {
            relevant: vec![3],
            ..spec
        };
        assert!(matches!(gen_planted(&outside, 0), Err(Error::Argument(_))));
    }
}
