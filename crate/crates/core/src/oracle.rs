//! Exhaustive subset search: train a fresh evaluator MLP on every size-k
//! candidate subset (preselected columns always included) and keep the best.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{split, standardize, Dataset, Task};
use crate::error::{Error, Result};
use crate::model::{metric_better, predict_metric, Mlp, EVALUATOR_HIDDEN};
use crate::rng;
use crate::tensor::Activation;
use crate::train::{train, TrainConfig};

pub const DEFAULT_BUDGET_CAP: u128 = 10_000;

/// Lexicographic k-subsets of `0..n`.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    next: Option<Vec<usize>>,
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let k = current.len();
        let mut succ = current.clone();
        // rightmost position that can still move right
        let mut i = k;
        while i > 0 {
            i -= 1;
            if succ[i] < self.n - k + i {
                succ[i] += 1;
                for j in i + 1..k {
                    succ[j] = succ[j - 1] + 1;
                }
                self.next = Some(succ);
                return Some(current);
            }
        }
        Some(current)
    }
}

pub fn enumerate_combinations(n: usize, k: usize) -> Result<Combinations> {
    if k > n {
        return Err(Error::Argument(format!("cannot choose {k} of {n}")));
    }
    Ok(Combinations {
        n,
        next: Some((0..k).collect()),
    })
}

/// `n! / (k! (n-k)!)`, or 0 when `k > n`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Everything that decides how a variable subset is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub hidden: Vec<usize>,
    pub zero_output_init: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            test_fraction: 0.25,
            split_seed: 0,
            hidden: EVALUATOR_HIDDEN.to_vec(),
            zero_output_init: false,
        }
    }
}

/// A standardized train/test split shared by every subset evaluation.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub train: Dataset,
    pub test: Dataset,
}

impl PreparedSplit {
    pub fn new(dataset: &Dataset, config: &EvalConfig) -> Result<Self> {
        let (train, test) = split(dataset, config.test_fraction, config.split_seed)?;
        let (train, test, _) = standardize(&train, &test)?;
        Ok(Self { train, test })
    }
}

/// Seed for one subset, a function of the base seed and the sorted tuple only.
pub fn combination_seed(base_seed: u64, candidates: &[usize]) -> u64 {
    let parts: Vec<u64> = candidates.iter().map(|&j| j as u64).collect();
    rng::derive_seed(base_seed, rng::TAG_COMBO, &parts)
}

/// Trains a fresh evaluator on preselected + `candidates` and returns the
/// held-out metric (MSE or accuracy).
pub fn evaluate_prepared(
    prepared: &PreparedSplit,
    candidates: &[usize],
    config: &EvalConfig,
) -> Result<f64> {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Argument(format!(
            "duplicate candidate in {candidates:?}"
        )));
    }
    let train_set = prepared.train.with_candidates(&sorted)?;
    let test_set = prepared.test.with_candidates(&sorted)?;
    let inputs = train_set.d_p() + train_set.d_c();
    if inputs == 0 {
        return Err(Error::Argument("empty variable set".into()));
    }
    let seed = combination_seed(config.train.seed, &sorted);
    let model = Mlp::new(
        inputs,
        &config.hidden,
        train_set.task(),
        Activation::Relu,
        config.zero_output_init,
        seed,
    )?;
    let train_config = TrainConfig {
        seed,
        batch_size: config.train.batch_size.min(train_set.n()),
        ..config.train.clone()
    };
    let (model, _) = train(model, &train_set, &train_config)?;
    predict_metric(&model, test_set.xp(), test_set.xc(), test_set.y())
}

pub fn evaluate_subset(
    dataset: &Dataset,
    candidates: &[usize],
    config: &EvalConfig,
) -> Result<f64> {
    if dataset.d_p() == 0 && candidates.is_empty() {
        return Err(Error::Argument("empty variable set".into()));
    }
    evaluate_prepared(&PreparedSplit::new(dataset, config)?, candidates, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboRecord {
    pub candidates: Vec<usize>,
    pub metric: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: ComboRecord,
    /// In lexicographic order of the tuples.
    pub records: Vec<ComboRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub budget_cap: u128,
    pub jobs: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget_cap: DEFAULT_BUDGET_CAP,
            jobs: 1,
        }
    }
}

/// Best by metric, ties to the lexicographically smallest tuple.
pub fn reduce_best(task: Task, records: &[ComboRecord]) -> Option<&ComboRecord> {
    let mut best: Option<&ComboRecord> = None;
    for r in records {
        best = match best {
            None => Some(r),
            Some(b) if metric_better(task, r.metric, b.metric) => Some(r),
            Some(b) if r.metric == b.metric && r.candidates < b.candidates => Some(r),
            keep => keep,
        };
    }
    best
}

pub fn exhaustive_search(
    dataset: &Dataset,
    k: usize,
    config: &EvalConfig,
    options: &SearchOptions,
) -> Result<SearchOutcome> {
    let d_c = dataset.d_c();
    if k > d_c {
        return Err(Error::Argument(format!("k = {k} exceeds D_c = {d_c}")));
    }
    let required = binomial(d_c, k);
    if required > options.budget_cap {
        return Err(Error::BudgetExceeded {
            required,
            cap: options.budget_cap,
        });
    }
    if dataset.d_p() == 0 && k == 0 {
        return Err(Error::Argument("empty variable set".into()));
    }
    let prepared = PreparedSplit::new(dataset, config)?;
    let combos: Vec<Vec<usize>> = enumerate_combinations(d_c, k)?.collect();
    let records = run_all(&prepared, &combos, config, options.jobs.max(1))?;
    let best = reduce_best(dataset.task(), &records)
        .cloned()
        .expect("at least one combination");
    Ok(SearchOutcome { best, records })
}

fn run_one(prepared: &PreparedSplit, combo: &[usize], config: &EvalConfig) -> Result<ComboRecord> {
    let start = Instant::now();
    let metric = evaluate_prepared(prepared, combo, config)?;
    Ok(ComboRecord {
        candidates: combo.to_vec(),
        metric,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_all(
    prepared: &PreparedSplit,
    combos: &[Vec<usize>],
    config: &EvalConfig,
    jobs: usize,
) -> Result<Vec<ComboRecord>> {
    if jobs == 1 {
        return combos
            .iter()
            .map(|c| run_one(prepared, c, config))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let sink: Mutex<Vec<(usize, Result<ComboRecord>)>> =
        Mutex::new(Vec::with_capacity(combos.len()));
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(combos.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= combos.len() {
                    break;
                }
                let rec = run_one(prepared, &combos[i], config);
                sink.lock().unwrap().push((i, rec));
            });
        }
    });
    let mut results = sink.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_planted, PlantedSpec};

    #[test]
    fn enumeration_examples() {
        let all: Vec<_> = enumerate_combinations(10, 4).unwrap().collect();
        assert_eq!(all.len(), 210);
        assert_eq!(
            enumerate_combinations(4, 4).unwrap().collect::<Vec<_>>(),
            vec![vec![0, 1, 2, 3]]
        );
        let five: Vec<_> = enumerate_combinations(5, 2).unwrap().collect();
        assert_eq!(five.len(), 10);
        assert_eq!(five[0], vec![0, 1]);
        assert_eq!(five[9], vec![3, 4]);
        assert!(matches!(
            enumerate_combinations(3, 4),
            Err(Error::Argument(_))
        ));
        assert_eq!(
            enumerate_combinations(3, 0).unwrap().collect::<Vec<_>>(),
            vec![Vec::<usize>::new()]
        );
    }

    /// Independent oracle: filter all bitmasks of `0..n` by popcount.
    fn by_bitmask(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
            .collect();
        out.sort();
        out
    }

    #[test]
    fn enumeration_matches_bitmask_oracle() {
        for n in 0..=12 {
            for k in 0..=n {
                let got: Vec<_> = enumerate_combinations(n, k).unwrap().collect();
                assert_eq!(got, by_bitmask(n, k), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn count_matches_closed_form() {
        for n in 0..=20usize {
            for k in 0..=n {
                let count = enumerate_combinations(n, k).unwrap().count() as u128;
                let closed = (1..=n as u128).product::<u128>()
                    / ((1..=k as u128).product::<u128>() * (1..=(n - k) as u128).product::<u128>());
                assert_eq!(count, closed, "n={n} k={k}");
                assert_eq!(binomial(n, k), closed);
            }
        }
    }

    fn quick_config() -> EvalConfig {
        EvalConfig {
            train: TrainConfig {
                epochs: 30,
                batch_size: 32,
                learning_rate: 5e-3,
                ..TrainConfig::default()
            },
            ..EvalConfig::default()
        }
    }

    fn planted(seed: u64) -> Dataset {
        gen_planted(
            &PlantedSpec {
                n: 600,
                d_c: 4,
                d_p: 1,
                relevant: vec![0, 2],
                task: Task::Regression,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn all_candidates_equals_full_training() {
        let d = planted(1);
        let cfg = quick_config();
        let all = evaluate_subset(&d, &[0, 1, 2, 3], &cfg).unwrap();
        let shuffled_order = evaluate_subset(&d, &[3, 1, 0, 2], &cfg).unwrap();
        assert_eq!(all, shuffled_order);
        let out = exhaustive_search(&d, 4, &cfg, &SearchOptions::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.best.metric, all);
    }

    #[test]
    fn zero_target_gives_zero_mse() {
        let d = planted(2);
        let zero = Dataset::new(
            d.xp().clone(),
            d.xc().clone(),
            crate::tensor::Matrix::zeros(d.n(), 1),
            d.preselected_names().to_vec(),
            d.candidate_names().to_vec(),
            "y".into(),
            Task::Regression,
            None,
        )
        .unwrap();
        let cfg = EvalConfig {
            zero_output_init: true,
            ..quick_config()
        };
        assert!(evaluate_subset(&zero, &[1], &cfg).unwrap() < 1e-12);
    }

    #[test]
    fn planted_pair_beats_decoy_pair() {
        let d = planted(3);
        let cfg = quick_config();
        let good = evaluate_subset(&d, &[0, 2], &cfg).unwrap();
        let bad = evaluate_subset(&d, &[1, 3], &cfg).unwrap();
        assert!(good < bad, "{good} vs {bad}");
    }

    #[test]
    fn empty_variable_set_rejected() {
        let spec = PlantedSpec {
            n: 40,
            d_c: 3,
            d_p: 0,
            relevant: vec![0],
            task: Task::Regression,
        };
        let d = gen_planted(&spec, 0).unwrap();
        assert!(matches!(
            evaluate_subset(&d, &[], &quick_config()),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            exhaustive_search(&d, 0, &quick_config(), &SearchOptions::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn budget_cap_refuses_with_count() {
        let d = planted(4);
        let opts = SearchOptions {
            budget_cap: 5,
            jobs: 1,
        };
        match exhaustive_search(&d, 2, &quick_config(), &opts) {
            Err(Error::BudgetExceeded { required, cap }) => assert_eq!((required, cap), (6, 5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parallel_search_matches_serial() {
        let d = planted(5);
        let cfg = EvalConfig {
            train: TrainConfig {
                epochs: 5,
                ..quick_config().train
            },
            ..quick_config()
        };
        let serial = exhaustive_search(&d, 2, &cfg, &SearchOptions::default()).unwrap();
        let parallel = exhaustive_search(
            &d,
            2,
            &cfg,
            &SearchOptions {
                jobs: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(serial.best.candidates, parallel.best.candidates);
        let metrics = |o: &SearchOutcome| {
            o.records
                .iter()
                .map(|r| (r.candidates.clone(), r.metric))
                .collect::<Vec<_>>()
        };
        assert_eq!(metrics(&serial), metrics(&parallel));
    }

    #[test]
    fn reduction_breaks_ties_lexicographically() {
        let rec = |c: Vec<usize>, m: f64| ComboRecord {
            candidates: c,
            metric: m,
            seconds: 0.0,
        };
        let records = vec![
            rec(vec![2, 3], 0.9),
            rec(vec![0, 4], 0.9),
            rec(vec![1, 2], 0.8),
        ];
        assert_eq!(
            reduce_best(Task::BinaryClassification, &records)
                .unwrap()
                .candidates,
            vec![0, 4]
        );
        assert_eq!(
            reduce_best(Task::Regression, &records).unwrap().candidates,
            vec![1, 2]
        );
    }
}
