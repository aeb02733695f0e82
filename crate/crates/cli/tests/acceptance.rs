//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Everything runs inside a single test so the wall-clock limits and the
//! relative timing of criterion 7 are not distorted by tests running next
//! to each other.

use std::fs;
use std::io::Write;
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use condsel::gradcheck::check_model;
use condsel::layers::Dense;
use condsel::oracle::{enumerate_combinations, exhaustive_search, EvalConfig, SearchOptions};
use condsel::rng;
use condsel::select::{
    compare_with_oracle, oracle_sweep, run_selection, select_top_k, subset_sweep,
};
use condsel::synth::{
    gen_open_defect, gen_planted, gen_tuning, tuning_relevant_indices, PlantedSpec,
};
use condsel::{Architecture, FeatureMask, Matrix, Task, TrainConfig};

struct Outcome {
    id: u8,
    title: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
    limit: f64,
}

fn timed(
    id: u8,
    title: &'static str,
    limit: f64,
    body: impl FnOnce() -> (bool, String),
) -> Outcome {
    let start = Instant::now();
    let (ok, detail) = body();
    let seconds = start.elapsed().as_secs_f64();
    let out = Outcome {
        id,
        title,
        pass: ok && seconds < limit,
        detail,
        seconds,
        limit,
    };
    report(format!(
        "[{}] criterion {}: {} | {} | {:.1}s (limit {:.0}s)",
        if out.pass { "PASS" } else { "FAIL" },
        out.id,
        out.title,
        out.detail,
        out.seconds,
        out.limit
    ));
    out
}

/// Written straight to stderr so the lines show even when libtest captures
/// output.
fn report(line: String) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn eval_config(seed: u64) -> EvalConfig {
    EvalConfig {
        train: TrainConfig {
            seed,
            ..TrainConfig::default()
        },
        ..EvalConfig::default()
    }
}

fn combinatorics() -> (bool, String) {
    let tuples: Vec<Vec<usize>> = enumerate_combinations(10, 4).unwrap().collect();
    // independent oracle: every 4-bit mask over 10 positions, as sorted index lists
    let mut expected: Vec<Vec<usize>> = (0u32..1 << 10)
        .filter(|m| m.count_ones() == 4)
        .map(|m| (0..10).filter(|i| m >> i & 1 == 1).collect())
        .collect();
    expected.sort();
    let lexicographic = tuples.windows(2).all(|w| w[0] < w[1]);
    (
        tuples.len() == 210 && lexicographic && tuples == expected,
        format!("{} tuples, lexicographic: {lexicographic}", tuples.len()),
    )
}

fn gradient_fidelity() -> (bool, String) {
    let mut worst = 0.0f64;
    for task in [Task::Regression, Task::BinaryClassification] {
        for seed in 0..5 {
            let err = check_model(1, 10, task, 8, seed, 1e-5).unwrap();
            worst = worst.max(err);
        }
    }
    (
        worst < 1e-4,
        format!("max relative error {worst:.2e} (< 1e-4)"),
    )
}

fn mask_contract() -> (bool, String) {
    let mut r = rng::stream(2024, 0xacc, &[]);
    let mut out_of_range = 0usize;
    let mut worst_sum = 0.0f64;
    for _ in 0..1000 {
        // with one candidate the mask is the constant [1]
        let d_c = r.random_range(2..=24);
        let rows = r.random_range(1..=64);
        let scale = r.random_range(0.1..3.0);
        let w: Vec<f64> = (0..d_c * d_c).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d_c).map(|_| r.random_range(-1.0..1.0)).collect();
        let layer = Dense::from_parts(
            Matrix::new(d_c, d_c, w).unwrap(),
            Matrix::new(1, d_c, b).unwrap(),
        )
        .unwrap();
        let fm = FeatureMask::from_layer(layer, r.random_range(0.25..4.0)).unwrap();
        let xc: Vec<f64> = (0..rows * d_c)
            .map(|_| scale * r.random_range(-3.0..3.0))
            .collect();
        let m = fm
            .mask_forward(&Matrix::new(rows, d_c, xc).unwrap())
            .unwrap();
        out_of_range += m.iter().filter(|&&v| !(v > 0.0 && v < 1.0)).count();
        worst_sum = worst_sum.max((m.iter().sum::<f64>() - 1.0).abs());
    }
    (
        out_of_range == 0 && worst_sum < 1e-9,
        format!("{out_of_range} elements outside (0,1), max |sum - 1| = {worst_sum:.1e}"),
    )
}

fn conditional_recovery() -> (bool, String) {
    let relevant = tuning_relevant_indices();
    let mut hits = 0;
    let mut misses = Vec::new();
    for seed in 0..10 {
        let data = gen_tuning(20_000, seed).unwrap();
        let eval = eval_config(seed);
        let run = run_selection(&data, &Architecture::default(), &eval.train, &eval).unwrap();
        let mut top = select_top_k(&run.importance, 4).unwrap();
        top.sort_unstable();
        if top == relevant {
            hits += 1;
        } else {
            misses.push((seed, top));
        }
    }
    (
        hits >= 8,
        format!("top-4 = {{t1,t3,t4,t5}} in {hits}/10 seeds; misses {misses:?}"),
    )
}

fn oracle_agreement() -> (bool, String) {
    let planted = vec![0, 3];
    let (mut oracle_hits, mut fm_hits) = (0, 0);
    for seed in 0..10 {
        let spec = PlantedSpec {
            n: 5000,
            d_c: 6,
            d_p: 1,
            relevant: planted.clone(),
            task: Task::Regression,
        };
        let data = gen_planted(&spec, seed).unwrap();
        let eval = eval_config(seed);
        let best = exhaustive_search(&data, 2, &eval, &SearchOptions::default())
            .unwrap()
            .best;
        oracle_hits += usize::from(best.candidates == planted);
        let run = run_selection(&data, &Architecture::default(), &eval.train, &eval).unwrap();
        let mut top = select_top_k(&run.importance, 2).unwrap();
        top.sort_unstable();
        fm_hits += usize::from(top == planted);
    }
    (
        oracle_hits >= 8 && fm_hits >= 8,
        format!("exhaustive {oracle_hits}/10, FM {fm_hits}/10"),
    )
}

fn sweep_parity() -> (bool, String) {
    let data = gen_open_defect(1000, 1000, 0).unwrap();
    let eval = eval_config(0);
    let run = run_selection(&data, &Architecture::default(), &eval.train, &eval).unwrap();
    let ks = [2, 3, 4];
    let fm = subset_sweep(&data, &run.importance, &ks, &eval).unwrap();
    let oracle = oracle_sweep(&data, &ks, &eval, &SearchOptions::default()).unwrap();
    let gaps = compare_with_oracle(&fm, &oracle).unwrap();
    let worst = gaps.iter().map(|g| g.gap.abs()).fold(0.0, f64::max);
    let listing: Vec<String> = gaps
        .iter()
        .map(|g| format!("K={} {:.3} vs {:.3}", g.k, g.metric_fm, g.metric_oracle))
        .collect();
    (
        worst <= 0.05,
        format!("{}; max |gap| {worst:.3}", listing.join(", ")),
    )
}

fn relative_speed() -> (bool, String) {
    // the open-defect candidates minus the highest voltage: D_c = 10
    let data = gen_open_defect(1000, 1000, 0)
        .unwrap()
        .with_candidates(&(0..10).collect::<Vec<_>>())
        .unwrap();
    assert_eq!(data.d_c(), 10);
    let eval = eval_config(0);
    let start = Instant::now();
    run_selection(&data, &Architecture::default(), &eval.train, &eval).unwrap();
    let fm = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let outcome = exhaustive_search(&data, 4, &eval, &SearchOptions::default()).unwrap();
    let exhaustive = start.elapsed().as_secs_f64();
    let ratio = fm / exhaustive;
    (
        outcome.records.len() == 210 && ratio <= 0.10,
        format!(
            "FM {fm:.2}s vs exhaustive {exhaustive:.1}s over {} subsets: {:.2}%",
            outcome.records.len(),
            100.0 * ratio
        ),
    )
}

fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_condsel");
    let data = tmp.path().join("data");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let d = data.to_str().unwrap();
    run(&[
        "gen", "--kind", "tuning", "--n", "2000", "--seed", "0", "--out", d,
    ]);
    let mut differing = Vec::new();
    for (cmd, extra, files) in [
        (
            "select",
            vec!["--seed", "0"],
            vec!["report.json", "importance.csv"],
        ),
        ("exhaustive", vec!["--k", "2"], vec!["report.json"]),
    ] {
        let outs: Vec<_> = ["first", "second"]
            .iter()
            .map(|tag| {
                let out = tmp.path().join(format!("{cmd}-{tag}"));
                let mut args = vec![cmd, "--data", d, "--out", out.to_str().unwrap()];
                args.extend(&extra);
                run(&args);
                out
            })
            .collect();
        for f in files {
            if fs::read(outs[0].join(f)).unwrap() != fs::read(outs[1].join(f)).unwrap() {
                differing.push(format!("{cmd}/{f}"));
            }
        }
    }
    (
        differing.is_empty(),
        format!("select + exhaustive reports byte-identical; differing: {differing:?}"),
    )
}

#[test]
fn acceptance() {
    let outcomes = [
        timed(1, "combinatorics", 1.0, combinatorics),
        timed(2, "gradient fidelity", 30.0, gradient_fidelity),
        timed(3, "mask contract", 30.0, mask_contract),
        timed(4, "conditional recovery", 600.0, conditional_recovery),
        timed(5, "oracle agreement", 600.0, oracle_agreement),
        timed(6, "sweep parity", 1200.0, sweep_parity),
        timed(7, "relative speed", 1200.0, relative_speed),
        timed(8, "determinism", 300.0, determinism),
    ];
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    report(format!(
        "acceptance: {}/{} criteria passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    ));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
