//! From learned importance to ranked subsets, subset-size sweeps and the
//! comparison against the exhaustive baseline.
//!
//! `K` always counts *all* variables used, preselected ones included: with a
//! single preselected column, `K = 1` means that column alone and `K = 3`
//! adds the two best-ranked candidates.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::model::{Architecture, CondSelModel};
use crate::oracle::{
    evaluate_prepared, exhaustive_search, ComboRecord, EvalConfig, PreparedSplit, SearchOptions,
};
use crate::train::{train, TrainConfig, TrainHistory};

/// Indices of the `k` largest scores, descending; ties go to the lower index.
pub fn select_top_k(importance: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > importance.len() {
        return Err(Error::Argument(format!(
            "k = {k} outside [1, {}]",
            importance.len()
        )));
    }
    let mut ranking = rank(importance);
    ranking.truncate(k);
    Ok(ranking)
}

/// All indices by descending score, ties to the lower index.
pub fn rank(importance: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    idx.sort_by(|&a, &b| {
        importance[b]
            .partial_cmp(&importance[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Output of one conditional selection run.
#[derive(Debug, Clone)]
pub struct SelectionRun {
    pub model: CondSelModel,
    pub importance: Vec<f64>,
    pub history: TrainHistory,
    pub seconds: f64,
}

/// Splits and standardizes like the evaluator does, trains the conditional
/// model on the training part and scores candidates on the full training set.
pub fn run_selection(
    dataset: &Dataset,
    arch: &Architecture,
    train_config: &TrainConfig,
    eval: &EvalConfig,
) -> Result<SelectionRun> {
    let start = Instant::now();
    let prepared = PreparedSplit::new(dataset, eval)?;
    let data = &prepared.train;
    let mut arch = arch.clone();
    arch.temperature = train_config.temperature;
    let model = CondSelModel::new(data.d_p(), data.d_c(), data.task(), arch, train_config.seed)?;
    let cfg = TrainConfig {
        batch_size: train_config.batch_size.min(data.n()),
        ..train_config.clone()
    };
    let (model, history) = train(model, data, &cfg)?;
    let importance = model.importance(data.xc())?;
    Ok(SelectionRun {
        model,
        importance,
        history,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub metric: f64,
    /// Candidate indices used on top of the preselected columns.
    pub candidates: Vec<usize>,
}

fn check_ks(ks: &[usize], d_p: usize, d_c: usize) -> Result<()> {
    if ks.is_empty() {
        return Err(Error::Argument("no subset sizes given".into()));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(format!(
            "subset sizes must increase strictly: {ks:?}"
        )));
    }
    for &k in ks {
        if k < d_p {
            return Err(Error::Argument(format!(
                "K = {k} would drop preselected variables (D_p = {d_p})"
            )));
        }
        if k == 0 || k > d_p + d_c {
            return Err(Error::Argument(format!(
                "K = {k} outside [1, {}]",
                d_p + d_c
            )));
        }
    }
    Ok(())
}

/// For every `K`: preselected variables plus the top `K - D_p` candidates,
/// scored by a freshly trained evaluator.
pub fn subset_sweep(
    dataset: &Dataset,
    importance: &[f64],
    ks: &[usize],
    eval: &EvalConfig,
) -> Result<Vec<SweepPoint>> {
    let (d_p, d_c) = (dataset.d_p(), dataset.d_c());
    if importance.len() != d_c {
        return Err(Error::Shape(format!(
            "{} importance scores for {d_c} candidates",
            importance.len()
        )));
    }
    check_ks(ks, d_p, d_c)?;
    let prepared = PreparedSplit::new(dataset, eval)?;
    let ranking = rank(importance);
    ks.iter()
        .map(|&k| {
            let mut candidates = ranking[..k - d_p].to_vec();
            candidates.sort_unstable();
            let metric = evaluate_prepared(&prepared, &candidates, eval)?;
            Ok(SweepPoint {
                k,
                metric,
                candidates,
            })
        })
        .collect()
}

/// The exhaustive counterpart of [`subset_sweep`]: the best subset per `K`.
pub fn oracle_sweep(
    dataset: &Dataset,
    ks: &[usize],
    eval: &EvalConfig,
    options: &SearchOptions,
) -> Result<Vec<SweepPoint>> {
    check_ks(ks, dataset.d_p(), dataset.d_c())?;
    ks.iter()
        .map(|&k| {
            let out = exhaustive_search(dataset, k - dataset.d_p(), eval, options)?;
            Ok(SweepPoint {
                k,
                metric: out.best.metric,
                candidates: out.best.candidates,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGap {
    pub k: usize,
    pub metric_fm: f64,
    pub metric_oracle: f64,
    pub gap: f64,
}

/// Pairs the two sweeps by `K`; `gap = metric_fm - metric_oracle`.
pub fn compare_with_oracle(fm: &[SweepPoint], oracle: &[SweepPoint]) -> Result<Vec<SweepGap>> {
    let ks = |s: &[SweepPoint]| s.iter().map(|p| p.k).collect::<Vec<_>>();
    if ks(fm) != ks(oracle) {
        return Err(Error::Argument(format!(
            "sweeps cover different K: {:?} vs {:?}",
            ks(fm),
            ks(oracle)
        )));
    }
    Ok(fm
        .iter()
        .zip(oracle)
        .map(|(a, b)| SweepGap {
            k: a.k,
            metric_fm: a.metric,
            metric_oracle: b.metric,
            gap: a.metric - b.metric,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub k: usize,
    pub best: ComboRecordOut,
    pub evaluated: usize,
}

/// A combination record without its wall-clock time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboRecordOut {
    pub candidates: Vec<usize>,
    pub names: Vec<String>,
    pub metric: f64,
}

impl ComboRecordOut {
    pub fn from_record(r: &ComboRecord, names: &[String]) -> Self {
        Self {
            candidates: r.candidates.clone(),
            names: r.candidates.iter().map(|&j| names[j].clone()).collect(),
            metric: r.metric,
        }
    }
}

/// Machine-readable selection result. Deterministic for fixed inputs and
/// seeds; wall-clock timings are kept out of it on purpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub task: Task,
    pub candidate_names: Vec<String>,
    pub preselected: Vec<String>,
    pub importance: Vec<f64>,
    pub ranking: Vec<usize>,
    pub chosen: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
}

impl SelectionReport {
    pub fn new(dataset: &Dataset, importance: Vec<f64>, k: usize) -> Result<Self> {
        if importance.len() != dataset.d_c() {
            return Err(Error::Shape("importance length differs from D_c".into()));
        }
        let chosen = select_top_k(&importance, k)?;
        Ok(Self {
            task: dataset.task(),
            candidate_names: dataset.candidate_names().to_vec(),
            preselected: dataset.preselected_names().to_vec(),
            ranking: rank(&importance),
            importance,
            chosen,
            sweep: None,
            oracle: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d_c = self.importance.len();
        let mut sorted = self.ranking.clone();
        sorted.sort_unstable();
        if sorted != (0..d_c).collect::<Vec<_>>() {
            return Err(Error::Argument("ranking is not a permutation".into()));
        }
        if self.chosen.len() > d_c || self.chosen[..] != self.ranking[..self.chosen.len()] {
            return Err(Error::Argument("chosen is not a ranking prefix".into()));
        }
        if let Some(s) = &self.sweep {
            if s.windows(2).any(|w| w[0].k >= w[1].k) {
                return Err(Error::Argument("sweep K values must increase".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: SelectionReport = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// `candidate_name,importance,rank` sorted by candidate name; rank 1 is
    /// the most important.
    pub fn importance_csv(&self) -> String {
        let mut rank_of = vec![0; self.ranking.len()];
        for (pos, &j) in self.ranking.iter().enumerate() {
            rank_of[j] = pos + 1;
        }
        let mut order: Vec<usize> = (0..self.candidate_names.len()).collect();
        order.sort_by(|&a, &b| self.candidate_names[a].cmp(&self.candidate_names[b]));
        let mut out = String::from("candidate_name,importance,rank\n");
        for j in order {
            let name = &self.candidate_names[j];
            out.push_str(&format!(
                "{},{:?},{}\n",
                csv_field(name),
                self.importance[j],
                rank_of[j]
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `k,metric` rows for plotting.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("k,metric\n");
    for p in points {
        out.push_str(&format!("{},{:?}\n", p.k, p.metric));
    }
    out
}

pub fn gaps_csv(gaps: &[SweepGap]) -> String {
    let mut out = String::from("k,metric_fm,metric_oracle,gap\n");
    for g in gaps {
        out.push_str(&format!(
            "{},{:?},{:?},{:?}\n",
            g.k, g.metric_fm, g.metric_oracle, g.gap
        ));
    }
    out
}

/// One row per combination: `combination,metric,seconds`, the combination as
/// space-separated candidate names.
pub fn write_audit_csv(path: &Path, records: &[ComboRecord], names: &[String]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "combination,metric,seconds")?;
    for r in records {
        let combo: Vec<&str> = r.candidates.iter().map(|&j| names[j].as_str()).collect();
        writeln!(
            f,
            "{},{:?},{:?}",
            csv_field(&combo.join(" ")),
            r.metric,
            r.seconds
        )?;
    }
    Ok(())
}
