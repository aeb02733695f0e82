use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use condsel::checkpoint;
use condsel::gradcheck::check_model;
use condsel::oracle::{exhaustive_search, EvalConfig, SearchOptions};
use condsel::select::{
    compare_with_oracle, gaps_csv, oracle_sweep, run_selection, subset_sweep, sweep_csv,
    write_audit_csv, ComboRecordOut, SelectionReport, SweepGap, SweepPoint,
};
use condsel::synth::{gen_open_defect, gen_planted, gen_tuning, PlantedSpec};
use condsel::{load_csv, Architecture, ColumnManifest, Dataset, Task};

use crate::args::{
    DataArgs, ExhaustiveArgs, GenArgs, GradcheckArgs, Kind, SelectArgs, SweepArgs, TrainArgs,
};
use crate::UsageError;

/// Everything that shapes training and evaluation. Loadable from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub architecture: Architecture,
    pub eval: EvalConfig,
}

impl Settings {
    pub fn resolve(args: &TrainArgs) -> Result<Self> {
        let mut s = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?
            }
            None => Settings::default(),
        };
        let t = &mut s.eval.train;
        if let Some(v) = args.seed {
            t.seed = v;
        }
        if let Some(v) = args.epochs {
            t.epochs = v;
        }
        if let Some(v) = args.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = args.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = args.temperature {
            t.temperature = v;
        }
        if args.patience.is_some() {
            t.early_stop_patience = args.patience;
        }
        if let Some(v) = args.test_fraction {
            s.eval.test_fraction = v;
        }
        if let Some(v) = args.split_seed {
            s.eval.split_seed = v;
        }
        s.architecture.temperature = s.eval.train.temperature;
        if !(s.eval.test_fraction > 0.0 && s.eval.test_fraction < 1.0) {
            bail!(UsageError(format!(
                "test fraction must lie in (0, 1), got {}",
                s.eval.test_fraction
            )));
        }
        s.eval
            .train
            .validate(usize::MAX)
            .map_err(|e| UsageError(e.to_string()))?;
        Ok(s)
    }
}

struct Input {
    csv: PathBuf,
    manifest: PathBuf,
    out: PathBuf,
}

fn resolve_input(args: &DataArgs, subcommand: &str) -> Result<Input> {
    let (csv, dir) = if args.data.is_dir() {
        (args.data.join("data.csv"), args.data.clone())
    } else {
        let dir = args
            .data
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        (args.data.clone(), dir)
    };
    let manifest = args
        .manifest
        .clone()
        .unwrap_or_else(|| dir.join("manifest.json"));
    for p in [&csv, &manifest] {
        if !p.is_file() {
            bail!(UsageError(format!("{} does not exist", p.display())));
        }
    }
    let out = args.out.clone().unwrap_or_else(|| dir.join(subcommand));
    Ok(Input { csv, manifest, out })
}

fn load(input: &Input) -> Result<Dataset> {
    let manifest = ColumnManifest::load(&input.manifest)?;
    Ok(load_csv(&input.csv, &manifest)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write_run(
    out: &Path,
    command: &str,
    argv: &[String],
    settings: Option<&Settings>,
    extra: serde_json::Value,
) -> Result<()> {
    write_json(
        &out.join("run.json"),
        &json!({
            "tool": "condsel",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "argv": argv,
            "settings": settings,
            "inputs": extra,
        }),
    )
}

fn make_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

pub fn gen(args: &GenArgs, argv: &[String]) -> Result<()> {
    let dataset = match args.kind {
        Kind::Tuning => gen_tuning(args.n.unwrap_or(5000), args.seed)?,
        Kind::OpenDefect => {
            let n = args.n.unwrap_or(2000);
            if n < 2 {
                bail!(UsageError("open-defect needs at least 2 rows".into()));
            }
            gen_open_defect(n - n / 2, n / 2, args.seed)?
        }
        Kind::Planted => gen_planted(
            &PlantedSpec {
                n: args.n.unwrap_or(5000),
                d_c: args.d_c,
                d_p: args.d_p,
                relevant: args.relevant.clone(),
                task: args.task.into(),
            },
            args.seed,
        )?,
    };
    make_out(&args.out)?;
    dataset.write_csv(&args.out.join("data.csv"))?;
    dataset.manifest().save(&args.out.join("manifest.json"))?;
    write_run(&args.out, "gen", argv, None, json!({}))?;
    println!(
        "wrote {} rows ({} preselected, {} candidates) to {}",
        dataset.n(),
        dataset.d_p(),
        dataset.d_c(),
        args.out.display()
    );
    Ok(())
}

fn inputs_json(input: &Input) -> serde_json::Value {
    json!({
        "data": input.csv.display().to_string(),
        "manifest": input.manifest.display().to_string(),
    })
}

pub fn select(args: &SelectArgs, argv: &[String]) -> Result<()> {
    let settings = Settings::resolve(&args.train)?;
    let input = resolve_input(&args.data, "select")?;
    let dataset = load(&input)?;
    let k = args.k.unwrap_or(dataset.d_c());
    if k == 0 || k > dataset.d_c() {
        bail!(UsageError(format!(
            "--k {k} outside [1, {}]",
            dataset.d_c()
        )));
    }
    make_out(&input.out)?;
    let start = Instant::now();
    let run = run_selection(
        &dataset,
        &settings.architecture,
        &settings.eval.train,
        &settings.eval,
    )?;
    let report = SelectionReport::new(&dataset, run.importance.clone(), k)?;
    report.write(&input.out.join("report.json"))?;
    fs::write(input.out.join("importance.csv"), report.importance_csv())?;
    checkpoint::save(&run.model, &input.out.join("model.ckpt"))?;
    write_run(
        &input.out,
        "select",
        argv,
        Some(&settings),
        inputs_json(&input),
    )?;
    write_json(
        &input.out.join("timings.json"),
        &json!({ "train_seconds": run.seconds, "total_seconds": start.elapsed().as_secs_f64() }),
    )?;
    for (pos, &j) in report.chosen.iter().enumerate() {
        println!(
            "{:>3}  {:<16} {:.6}",
            pos + 1,
            report.candidate_names[j],
            report.importance[j]
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepReport<'a> {
    task: Task,
    candidate_names: &'a [String],
    preselected: &'a [String],
    importance: &'a [f64],
    fm: &'a [SweepPoint],
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<&'a [SweepPoint]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gaps: Option<&'a [SweepGap]>,
}

pub fn sweep(args: &SweepArgs, argv: &[String]) -> Result<()> {
    let settings = Settings::resolve(&args.train)?;
    let input = resolve_input(&args.data, "sweep")?;
    let dataset = load(&input)?;
    let (d_p, d_c) = (dataset.d_p(), dataset.d_c());
    let ks = if args.ks.is_empty() {
        (d_p.max(1)..=d_p + d_c).collect()
    } else {
        args.ks.clone()
    };
    if let Some(&bad) = ks.iter().find(|&&k| k < d_p || k == 0 || k > d_p + d_c) {
        bail!(UsageError(format!(
            "K = {bad} outside [{}, {}]",
            d_p.max(1),
            d_p + d_c
        )));
    }
    let importance = match &args.from {
        Some(path) => {
            let r = SelectionReport::read(path)?;
            if r.candidate_names != dataset.candidate_names() {
                bail!(UsageError(format!(
                    "{} ranks different candidates",
                    path.display()
                )));
            }
            r.importance
        }
        None => {
            run_selection(
                &dataset,
                &settings.architecture,
                &settings.eval.train,
                &settings.eval,
            )?
            .importance
        }
    };
    make_out(&input.out)?;
    let fm = subset_sweep(&dataset, &importance, &ks, &settings.eval)?;
    fs::write(input.out.join("sweep.csv"), sweep_csv(&fm))?;
    let (oracle, gaps) = if args.oracle {
        let opts = SearchOptions {
            budget_cap: args.budget,
            jobs: args.jobs.max(1),
        };
        let oracle = oracle_sweep(&dataset, &ks, &settings.eval, &opts)?;
        let gaps = compare_with_oracle(&fm, &oracle)?;
        fs::write(input.out.join("oracle.csv"), sweep_csv(&oracle))?;
        fs::write(input.out.join("gaps.csv"), gaps_csv(&gaps))?;
        (Some(oracle), Some(gaps))
    } else {
        (None, None)
    };
    write_json(
        &input.out.join("report.json"),
        &SweepReport {
            task: dataset.task(),
            candidate_names: dataset.candidate_names(),
            preselected: dataset.preselected_names(),
            importance: &importance,
            fm: &fm,
            oracle: oracle.as_deref(),
            gaps: gaps.as_deref(),
        },
    )?;
    write_run(
        &input.out,
        "sweep",
        argv,
        Some(&settings),
        inputs_json(&input),
    )?;
    match &gaps {
        Some(gaps) => {
            for g in gaps {
                println!(
                    "K={:<3} fm {:.6}  exhaustive {:.6}  gap {:+.6}",
                    g.k, g.metric_fm, g.metric_oracle, g.gap
                );
            }
        }
        None => {
            for p in &fm {
                println!("K={:<3} {:.6}", p.k, p.metric);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ExhaustiveReport<'a> {
    task: Task,
    k: usize,
    candidate_names: &'a [String],
    preselected: &'a [String],
    evaluated: usize,
    best: ComboRecordOut,
}

pub fn exhaustive(args: &ExhaustiveArgs, argv: &[String]) -> Result<()> {
    let settings = Settings::resolve(&args.train)?;
    let input = resolve_input(&args.data, "exhaustive")?;
    let dataset = load(&input)?;
    if args.k > dataset.d_c() {
        bail!(UsageError(format!(
            "--k {} exceeds the {} candidates",
            args.k,
            dataset.d_c()
        )));
    }
    let opts = SearchOptions {
        budget_cap: args.budget,
        jobs: args.jobs.max(1),
    };
    let start = Instant::now();
    let outcome = exhaustive_search(&dataset, args.k, &settings.eval, &opts)?;
    let seconds = start.elapsed().as_secs_f64();
    make_out(&input.out)?;
    let names = dataset.candidate_names();
    write_audit_csv(&input.out.join("audit.csv"), &outcome.records, names)?;
    let best = ComboRecordOut::from_record(&outcome.best, names);
    println!(
        "best of {}: {} -> {:.6}",
        outcome.records.len(),
        best.names.join(" "),
        best.metric
    );
    write_json(
        &input.out.join("report.json"),
        &ExhaustiveReport {
            task: dataset.task(),
            k: args.k,
            candidate_names: names,
            preselected: dataset.preselected_names(),
            evaluated: outcome.records.len(),
            best,
        },
    )?;
    write_run(
        &input.out,
        "exhaustive",
        argv,
        Some(&settings),
        inputs_json(&input),
    )?;
    write_json(
        &input.out.join("timings.json"),
        &json!({ "total_seconds": seconds, "jobs": opts.jobs }),
    )?;
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    if args.d_c == 0 || args.batch == 0 || args.seeds == 0 {
        bail!(UsageError(
            "--d-c, --batch and --seeds must be positive".into()
        ));
    }
    let tasks = match args.task {
        Some(t) => vec![t.into()],
        None => vec![Task::Regression, Task::BinaryClassification],
    };
    let mut worst = 0.0f64;
    for task in tasks {
        for seed in args.seed..args.seed + args.seeds {
            let err =
                check_model(args.d_p, args.d_c, task, args.batch, seed, args.eps).map_err(|e| {
                    match e {
                        condsel::Error::Argument(m) => UsageError(m).into(),
                        other => anyhow::Error::from(other),
                    }
                })?;
            println!("{:<22} seed {seed:<4} {err:.3e}", task.to_string());
            worst = worst.max(err);
        }
    }
    println!("max relative error: {worst:.3e}");
    if let Some(tol) = args.tolerance {
        if worst >= tol {
            bail!("max relative error {worst:.3e} is not below {tol:.1e}");
        }
    }
    Ok(())
}
