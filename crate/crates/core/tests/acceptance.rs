//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass `--fast` to run only the
//! property-based criteria (1 to 7).

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snn_forge::dataio::{self, info_gain_rank, prepare, Dataset, Manifest};
use snn_forge::harness::{
    render_table, run_experiment, AggregateReport, DatasetRef, ExperimentResult, ExperimentSpec, Protocol, RunRecord,
    Split,
};
use snn_forge::metrics::{auc_roc, kpi_suite, Driver, Kpi};
use snn_forge::pdbp::{train_pdbp, PdbpConfig};
use snn_forge::snn::{dimension_count, gradients, SnnModel};
use snn_forge::training::{Algorithm, StopReason};
use snn_forge::vpso::{adaptive_inertia, constriction, mass, optimize_vpso, optimize_vpso_observed, VpsoConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn dataset_ref(name: &str) -> DatasetRef {
    DatasetRef {
        csv: data_dir().join(format!("{name}.csv")),
        manifest: data_dir().join(format!("{name}.manifest.json")),
    }
}

fn load_raw(name: &str) -> Dataset {
    let r = dataset_ref(name);
    dataio::load_csv(&r.csv, &Manifest::load(&r.manifest).unwrap()).unwrap()
}

fn and_data() -> Dataset {
    Dataset::from_rows(
        "and",
        &[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
        &[false, false, false, true],
    )
    .unwrap()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn acc_percent(report: &AggregateReport) -> f64 {
    100.0 * report.stat(Kpi::Acc).expect("accuracy is always defined").mean
}

// 1
fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;
    let cases = 25;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=5);
        let d = dimension_count(n, m).unwrap();
        let params: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let rows: Vec<Vec<f64>> = (0..rng.gen_range(1..=8))
            .map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let labels: Vec<bool> = rows.iter().map(|_| rng.gen_bool(0.5)).collect();
        let data = Dataset::from_rows("fd", &rows, &labels).unwrap();
        let model = SnnModel::from_params(n, m, params.clone()).unwrap();
        let analytic = gradients(&model, &data).unwrap();
        let error = |p: &[f64]| -> f64 {
            let net = SnnModel::from_params(n, m, p.to_vec()).unwrap();
            rows.iter()
                .zip(&labels)
                .map(|(x, &y)| {
                    let r = net.feedforward(x).unwrap() - if y { 1.0 } else { 0.0 };
                    0.5 * r * r
                })
                .sum()
        };
        for k in 0..d {
            let mut up = params.clone();
            let mut down = params.clone();
            up[k] += h;
            down[k] -= h;
            let numeric = (error(&up) - error(&down)) / (2.0 * h);
            let a = analytic.values()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Outcome::new(
        worst < 1e-5,
        format!("max relative difference {worst:.2e} over {cases} cases (limit 1e-5)"),
    )
}

// 2
fn formula_values() -> Outcome {
    let d = dimension_count(8, 4).unwrap();
    let chi = constriction(2.05, 2.05).unwrap();
    let w0 = adaptive_inertia(1e-12, 0.9, 0.4);
    let w1 = adaptive_inertia(1.0, 0.9, 0.4);
    let m = mass(0.42, 0.42, 0.42, 0.001);
    let pass = d == 41 && (chi - 0.7298).abs() <= 1e-4 && (w0 - 0.9).abs() < 1e-9 && (w1 - 0.4).abs() <= 1e-3 && m == 1.0;
    Outcome::new(
        pass,
        format!("d(8,4) = {d}, chi = {chi:.6}, inertia(0+) = {w0:.6}, inertia(1) = {w1:.6}, mass(best = worst) = {m}"),
    )
}

// 3
fn swarm_invariants() -> Outcome {
    let data = and_data();
    let d = dimension_count(2, 1).unwrap();
    let (gamma, period) = (20 * d, 10 * d);
    let mut problems = Vec::new();
    let mut stalls = 0;
    let mut reorders_seen = 0;
    for driver in [Driver::Err, Driver::Acc, Driver::F1] {
        for seed in 0..4 {
            let config = VpsoConfig {
                driver,
                seed,
                max_iterations: 3000,
                ..VpsoConfig::default()
            };
            let mut reorder_at = Vec::new();
            let mut own_best: Vec<f64> = Vec::new();
            let mut bad = 0usize;
            let result = optimize_vpso_observed(&data, 1, &config, |s| {
                let boxed = |v: &[f64]| v.iter().all(|x| (-1.0..=1.0).contains(x));
                if !boxed(s.positions()) || !boxed(s.velocities()) {
                    bad += 1;
                }
                if own_best.is_empty() {
                    own_best = vec![f64::NEG_INFINITY; s.population()];
                }
                for (i, (&f, &b)) in s.fitness().iter().zip(s.sbest_values()).enumerate() {
                    own_best[i] = own_best[i].max(f);
                    if b < own_best[i] {
                        bad += 1;
                    }
                }
                if s.reordered() {
                    reorder_at.push(s.iteration());
                }
            })
            .unwrap();
            let fitness: Vec<f64> = result.best_trace.iter().map(|&v| driver.fitness(v)).collect();
            if fitness.windows(2).any(|w| w[1] < w[0]) {
                problems.push(format!("{driver}/{seed}: gsBest trace decreased"));
            }
            if bad > 0 {
                problems.push(format!("{driver}/{seed}: {bad} box or sBest violations"));
            }
            if result.stop_reason == StopReason::Stalled {
                stalls += 1;
                if result.iterations_run - result.best_iteration > gamma + 1 {
                    problems.push(format!("{driver}/{seed}: stall stop late"));
                }
            }
            let expected: Vec<usize> = (1..result.iterations_run).filter(|t| t % period == 0).collect();
            if reorder_at != expected {
                problems.push(format!("{driver}/{seed}: reorders at {reorder_at:?}"));
            }
            reorders_seen += reorder_at.len();
        }
    }
    if stalls == 0 {
        problems.push("no run exercised the stall stop".to_owned());
    }
    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!("12 runs, {stalls} stall stops, {reorders_seen} reorders, all bounds held")
        } else {
            problems.join("; ")
        },
    )
}

// 4
fn backprop_stopping() -> Outcome {
    let wbc = prepare(&load_raw("wbc")).unwrap();
    let constant = Dataset::from_rows("ones", &[vec![0.2], vec![0.9], vec![0.5]], &[true; 3]).unwrap();
    let mut problems = Vec::new();
    let mut stalls = 0;
    let mut runs = 0;
    for (data, m) in [(&wbc, 2), (&constant, 2), (&and_data(), 1)] {
        let tau = 20 * dimension_count(data.width(), m).unwrap();
        for driver in [Driver::Err, Driver::Acc, Driver::F1] {
            let config = PdbpConfig {
                driver,
                seed: 3,
                max_iterations: 6000,
                ..PdbpConfig::default()
            };
            let r = train_pdbp(data, m, &config).unwrap();
            runs += 1;
            if r.stop_reason == StopReason::Stalled {
                stalls += 1;
                if r.iterations_run - r.best_iteration > tau + 1 {
                    problems.push(format!("{} {driver}: ran {} past I", data.name(), r.iterations_run - r.best_iteration));
                }
            }
            let monotone = r.best_trace.windows(2).all(|w| {
                if driver.minimizes() {
                    w[1] <= w[0]
                } else {
                    w[1] >= w[0]
                }
            });
            if !monotone {
                problems.push(format!("{} {driver}: best trace not monotone", data.name()));
            }
        }
    }
    if stalls == 0 {
        problems.push("no stall stop exercised".to_owned());
    }
    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{runs} runs, {stalls} stall stops within tau + 1, best traces monotone")
        } else {
            problems.join("; ")
        },
    )
}

// 5
fn determinism() -> Outcome {
    let raw = load_raw("wbc");
    let data = prepare(&raw.subset(&(0..120).collect::<Vec<_>>())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    let mut compared = 0;
    for algorithm in [Algorithm::Pdbp, Algorithm::Vpso] {
        for driver in [Driver::Err, Driver::Acc, Driver::F1] {
            let mut files = Vec::new();
            for k in 0..2 {
                let r = match algorithm {
                    Algorithm::Pdbp => train_pdbp(
                        &data,
                        3,
                        &PdbpConfig {
                            driver,
                            seed: 77,
                            max_iterations: 400,
                            ..PdbpConfig::default()
                        },
                    ),
                    Algorithm::Vpso => optimize_vpso(
                        &data,
                        3,
                        &VpsoConfig {
                            driver,
                            seed: 77,
                            max_iterations: 150,
                            ..VpsoConfig::default()
                        },
                    ),
                }
                .unwrap();
                let path = dir.path().join(format!("{algorithm}-{driver}-{k}.csv"));
                r.write_trace_csv(&path).unwrap();
                files.push(fs::read(&path).unwrap());
            }
            compared += 1;
            if files[0] != files[1] {
                problems.push(format!("{driver}-{algorithm}"));
            }
        }
    }
    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{compared} algorithm/driver pairs produced byte-identical traces")
        } else {
            format!("traces differ for {}", problems.join(", "))
        },
    )
}

// 6
fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut auc_sets = 0;
    let mut worst_auc: f64 = 0.0;
    let mut identity_failures = 0;
    while auc_sets < 200 {
        let len = rng.gen_range(2..=30);
        let labels: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.4)).collect();
        let scores: Vec<f64> = (0..len).map(|_| f64::from(rng.gen_range(0..12u32)) / 11.0).collect();
        let pos: Vec<f64> = labels.iter().zip(&scores).filter(|(l, _)| **l).map(|(_, s)| *s).collect();
        let neg: Vec<f64> = labels.iter().zip(&scores).filter(|(l, _)| !**l).map(|(_, s)| *s).collect();

        let report = kpi_suite(&labels, &scores, 0.5).unwrap();
        let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
        for (&l, &s) in labels.iter().zip(&scores) {
            match (l, s >= 0.5) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
        let c = report.counts;
        let total = len as f64;
        let tpr = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        let tnr = if tn + fp == 0 { 1.0 } else { tn as f64 / (tn + fp) as f64 };
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let f1 = if precision + tpr == 0.0 || tp == 0 {
            0.0
        } else {
            2.0 * precision * tpr / (precision + tpr)
        };
        let ok = (c.tp, c.fp, c.tn, c.fn_) == (tp, fp, tn, fn_)
            && report.acc == (tp + tn) as f64 / total
            && report.tpr == tpr
            && report.tnr == tnr
            && (report.f1 - f1).abs() <= 1e-12;
        if !ok {
            identity_failures += 1;
        }

        if pos.is_empty() || neg.is_empty() {
            if auc_roc(&labels, &scores).is_ok() || report.auc.is_some() {
                identity_failures += 1;
            }
            continue;
        }
        let mut concordant = 0.0;
        for p in &pos {
            for q in &neg {
                concordant += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let brute = concordant / (pos.len() * neg.len()) as f64;
        worst_auc = worst_auc.max((auc_roc(&labels, &scores).unwrap() - brute).abs());
        auc_sets += 1;
    }
    Outcome::new(
        worst_auc < 1e-12 && identity_failures == 0,
        format!("AUC max deviation {worst_auc:.1e} over {auc_sets} sets, {identity_failures} KPI identity failures"),
    )
}

// 7
fn leakage(raws: &[(&str, Dataset)], results: &[(&str, &ExperimentResult)]) -> Outcome {
    let mut problems = Vec::new();
    let mut checked = 0;
    for (label, result) in results {
        if !result.failures.is_empty() {
            problems.push(format!("{label}: {} failed runs", result.failures.len()));
        }
        for rec in result.records() {
            checked += 1;
            if let Some(p) = check_record(raws, rec) {
                problems.push(format!("{label} run {}: {p}", rec.index));
            }
        }
        let mut covered: Vec<Vec<usize>> = Vec::new();
        for rec in result.records() {
            if let Split::Fold { fold, k, repeat } = rec.split {
                if fold == k - 1 {
                    let mut rows: Vec<usize> = result
                        .records()
                        .filter(|r| {
                            r.algorithm == rec.algorithm
                                && r.driver == rec.driver
                                && r.dataset == rec.dataset
                                && matches!(r.split, Split::Fold { repeat: q, .. } if q == repeat)
                        })
                        .flat_map(|r| r.test_rows.clone())
                        .collect();
                    rows.sort_unstable();
                    covered.push(rows);
                }
            }
        }
        for rows in covered {
            if rows != (0..rows.len()).collect::<Vec<_>>() {
                problems.push(format!("{label}: test folds do not cover every row once"));
            }
        }
    }
    Outcome::new(
        problems.is_empty() && checked > 0,
        if problems.is_empty() {
            format!("{checked} runs: disjoint row sets, preprocessing and feature ranking fit on training rows")
        } else {
            problems.into_iter().take(5).collect::<Vec<_>>().join("; ")
        },
    )
}

fn check_record(raws: &[(&str, Dataset)], rec: &RunRecord) -> Option<String> {
    let train: HashSet<usize> = rec.train_rows.iter().copied().collect();
    if rec.test_rows.is_empty() {
        return Some("no test rows".to_owned());
    }
    if rec.test_rows.iter().any(|r| train.contains(r)) {
        return Some("train and test rows overlap".to_owned());
    }
    let raw = &raws.iter().find(|(n, _)| *n == rec.dataset)?.1;
    if train.len() + rec.test_rows.len() != raw.len() {
        return Some("split does not partition the rows".to_owned());
    }
    let fitted = prepare(&raw.subset(&rec.train_rows)).ok()?;
    let expected = fitted.normalization().cloned();
    let full = rec.selected_features.len() == raw.width();
    if full && rec.normalization != expected {
        return Some("scaling was not fit on the training rows".to_owned());
    }
    if !full {
        let ranking = info_gain_rank(&fitted, 10).ok()?;
        let names: Vec<String> = ranking[..rec.selected_features.len()]
            .iter()
            .map(|&i| fitted.feature_names()[i].clone())
            .collect();
        if names != rec.selected_features {
            return Some("feature ranking was not fit on the training rows".to_owned());
        }
    }
    None
}

// 8
fn learnability() -> Outcome {
    let wbc = prepare(&load_raw("wbc")).unwrap();
    let seeds = 0..5u64;
    let mut pdbp = Vec::new();
    let mut vpso = Vec::new();
    let mut pdbp_ms = Vec::new();
    let mut vpso_ms = Vec::new();
    for seed in seeds {
        let r = train_pdbp(&wbc, 4, &PdbpConfig { seed, ..PdbpConfig::default() }).unwrap();
        pdbp.push(r.final_report.acc);
        pdbp_ms.push(r.train_time_ms);
        let r = optimize_vpso(&wbc, 4, &VpsoConfig { seed, ..VpsoConfig::default() }).unwrap();
        vpso.push(r.final_report.acc);
        vpso_ms.push(r.train_time_ms);
    }
    let (p, v) = (mean(&pdbp), mean(&vpso));
    Outcome::new(
        p >= 0.97 && v >= 0.96,
        format!(
            "ACC-PDBP training ACC {p:.4} (>= 0.97, {:.0} ms), ACC-VPSO {v:.4} (>= 0.96, {:.0} ms), 5 seeds",
            mean(&pdbp_ms),
            mean(&vpso_ms)
        ),
    )
}

fn spec(protocol: Protocol, dataset: &str, algorithm: Algorithm, driver: Driver, hidden: Option<usize>) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(protocol, dataset_ref(dataset));
    s.algorithms = vec![algorithm];
    s.drivers = vec![driver];
    s.hidden = hidden;
    s
}

// 9
fn cross_validation() -> (Outcome, Vec<ExperimentResult>) {
    let mut acc = spec(Protocol::KfoldCv, "wbc", Algorithm::Pdbp, Driver::Acc, Some(4));
    acc.repeats = Some(5);
    let acc_result = run_experiment(acc).unwrap();
    let acc_mean = acc_percent(&acc_result.aggregate()[0]);

    let err_pdbp = run_experiment(spec(Protocol::KfoldCv, "wbc", Algorithm::Pdbp, Driver::Err, Some(4))).unwrap();
    let err_vpso = run_experiment(spec(Protocol::KfoldCv, "wbc", Algorithm::Vpso, Driver::Err, Some(4))).unwrap();
    let bp = acc_percent(&err_pdbp.aggregate()[0]);
    let ps = acc_percent(&err_vpso.aggregate()[0]);
    let gap = bp - ps;
    let in_band = (95.5..=99.5).contains(&acc_mean);
    let outcome = Outcome::new(
        in_band && gap >= 5.0,
        format!(
            "ACC-PDBP mean test ACC {acc_mean:.2}% over 5x10 folds ({}; band [95.5, 99.5]); \
             ERR-PDBP {bp:.2}% vs ERR-VPSO {ps:.2}%: gap {gap:.2} points ({}; needs >= 5)",
            if in_band { "ok" } else { "out of band" },
            if gap >= 5.0 { "ok" } else { "too small" }
        ),
    );
    (outcome, vec![acc_result, err_pdbp, err_vpso])
}

// 10
fn hidden_plateau() -> Outcome {
    let mut s = spec(Protocol::IncrementalSweep, "wbc", Algorithm::Pdbp, Driver::Acc, None);
    s.repeats = Some(5);
    let reports = run_experiment(s).unwrap().aggregate();
    let at = |m: usize| reports.iter().find(|r| r.hidden == m).expect("sweep point");
    let (four, nine) = (at(4), at(9));
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for k in Kpi::ALL {
        let (Some(a), Some(b)) = (four.stat(k), nine.stat(k)) else { continue };
        let diff = 100.0 * (a.mean - b.mean).abs();
        worst = worst.max(diff);
        parts.push(format!("{} {diff:.2}", k.name()));
    }
    let sms = data_dir().join("sms.csv");
    let sms_note = if sms.exists() {
        "SMS file present but not wired into this check"
    } else {
        "SMS 14-feature table not supplied, that half is skipped"
    };
    Outcome::new(
        worst <= 1.5,
        format!("WBC |m=4 - m=9| in points, 5 seeds: {} (limit 1.5); {sms_note}", parts.join(", ")),
    )
}

// 11
fn rate_robustness() -> (Outcome, ExperimentResult) {
    let mut s = spec(Protocol::RateSweep, "wbc", Algorithm::Pdbp, Driver::Acc, Some(5));
    s.repeats = Some(10);
    let result = run_experiment(s).unwrap();
    let means: Vec<(f64, f64)> = result
        .aggregate()
        .iter()
        .map(|r| (r.rate.expect("holdout rate"), acc_percent(r)))
        .collect();
    let hi = means.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let listed: Vec<String> = means.iter().map(|(r, a)| format!("{r}: {a:.2}")).collect();
    (
        Outcome::new(
            hi - lo <= 3.0,
            format!("mean test ACC by rate [{}], spread {:.2} points (limit 3)", listed.join(", "), hi - lo),
        ),
        result,
    )
}

// 12
fn comparison() -> (Outcome, Vec<ExperimentResult>) {
    let mut s = ExperimentSpec::new(Protocol::Compare, dataset_ref("wbc"));
    s.datasets = vec![dataset_ref("wbc"), dataset_ref("pima"), dataset_ref("wdbc")];
    s.algorithms = vec![Algorithm::Pdbp];
    s.drivers = vec![Driver::Acc];
    s.hidden = Some(4);
    let all = run_experiment(s).unwrap();
    let reports = all.aggregate();
    let table = render_table(Protocol::Compare, &reports);
    let wbc = reports.iter().find(|r| r.dataset == "wbc").expect("wbc compared");
    let wbc_acc = acc_percent(wbc);
    let wdbc = reports.iter().find(|r| r.dataset == "wdbc").expect("wdbc compared");

    let mut v = spec(Protocol::Compare, "wbc", Algorithm::Vpso, Driver::Acc, Some(4));
    v.repeats = Some(10);
    let vpso = run_experiment(v).unwrap();
    let vpso_acc = acc_percent(&vpso.aggregate()[0]);

    let rendered = table.contains("97.14±0.34")
        && table.contains("| WBC (wbc) | 9 | 699 |")
        && table.contains("Diabetes (pima)")
        && table.contains("| wdbc | 30 | 569 |");
    let reduced = wdbc.features == 12 && wdbc.hidden == 6;
    let in_band = (95.0..=99.0).contains(&wbc_acc);
    let runs_ok = all.failures.is_empty() && all.outcomes.len() == 30;
    (
        Outcome::new(
            in_band && rendered && reduced && runs_ok,
            format!(
                "ACC-PDBP WBC mean test ACC {wbc_acc:.2}% over 10 50/50 splits (band [95.0, 99.0]); \
                 wbc+pima+wdbc table rendered with published constants: {rendered}; wdbc reduced to 12 inputs, m = 6: \
                 {reduced}; ACC-VPSO WBC {vpso_acc:.2}% (informational)"
            ),
        ),
        vec![all, vpso],
    )
}

fn emit(lines: &mut Vec<(String, Outcome)>, label: &str, outcome: Outcome, started: Instant) {
    let line = format!(
        "[{}] {label}: {} ({:.1}s)",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        started.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
    lines.push((label.to_owned(), outcome));
}

fn main() -> ExitCode {
    let fast = std::env::args().any(|a| a == "--fast");
    // The libtest flags cargo passes (e.g. --quiet) are ignored.
    let mut lines: Vec<(String, Outcome)> = Vec::new();

    let t = Instant::now();
    emit(&mut lines, "1 gradient oracle", gradient_oracle(), t);
    let t = Instant::now();
    emit(&mut lines, "2 formula values", formula_values(), t);
    let t = Instant::now();
    emit(&mut lines, "3 swarm run invariants", swarm_invariants(), t);
    let t = Instant::now();
    emit(&mut lines, "4 backprop stopping semantics", backprop_stopping(), t);
    let t = Instant::now();
    emit(&mut lines, "5 determinism", determinism(), t);
    let t = Instant::now();
    emit(&mut lines, "6 metric oracles", metric_oracles(), t);

    let raws = vec![("wbc", load_raw("wbc")), ("pima", load_raw("pima")), ("wdbc", load_raw("wdbc"))];
    if fast {
        let t = Instant::now();
        let mut cv = spec(Protocol::KfoldCv, "wbc", Algorithm::Pdbp, Driver::Acc, Some(2));
        cv.pdbp.max_iterations = 50;
        let cv = run_experiment(cv).unwrap();
        let mut cmp = ExperimentSpec::new(Protocol::Compare, dataset_ref("wdbc"));
        cmp.pdbp.max_iterations = 50;
        cmp.repeats = Some(2);
        let cmp = run_experiment(cmp).unwrap();
        emit(&mut lines, "7 data hygiene", leakage(&raws, &[("kfold", &cv), ("compare", &cmp)]), t);
    } else {
        let t = Instant::now();
        emit(&mut lines, "8 WBC learnability", learnability(), t);
        let t = Instant::now();
        let (cv, cv_runs) = cross_validation();
        emit(&mut lines, "9 WBC ten-fold CV", cv, t);
        let t = Instant::now();
        emit(&mut lines, "10 hidden-neuron plateau", hidden_plateau(), t);
        let t = Instant::now();
        let (rates, rate_runs) = rate_robustness();
        emit(&mut lines, "11 training-rate robustness", rates, t);
        let t = Instant::now();
        let (cmp, cmp_runs) = comparison();
        emit(&mut lines, "12 comparison protocol", cmp, t);
        let t = Instant::now();
        let mut all: Vec<(&str, &ExperimentResult)> = cv_runs.iter().map(|r| ("kfold", r)).collect();
        all.push(("rate sweep", &rate_runs));
        all.extend(cmp_runs.iter().map(|r| ("compare", r)));
        emit(&mut lines, "7 data hygiene", leakage(&raws, &all), t);
        let substitutes = ["3 ", "4 ", "5 ", "10 ", "11 "];
        let ok = lines
            .iter()
            .filter(|(l, _)| substitutes.iter().any(|s| l.starts_with(s)))
            .all(|(_, o)| o.pass);
        emit(
            &mut lines,
            "13 desk-scale substitutes",
            Outcome::new(
                ok,
                "timing tables and exact curves are not reproduced; criteria 3, 4, 5, 10 and 11 stand in for them",
            ),
            Instant::now(),
        );
    }

    let failed: Vec<&str> = lines.iter().filter(|(_, o)| !o.pass).map(|(l, _)| l.as_str()).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        lines.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
