use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use snn_forge::dataio::{self, Dataset, Manifest};
use snn_forge::harness::{self, Experiment, ExperimentSpec, Progress};
use snn_forge::metrics::KpiReport;
use snn_forge::pdbp::{train_pdbp, PdbpConfig};
use snn_forge::training::{Algorithm, TrainedResult};
use snn_forge::vpso::{optimize_vpso, SwarmMode, VpsoConfig};
use snn_forge::{Driver, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_DATA: u8 = 4;
const EXIT_PARTIAL: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "snn-forge", version, about = "Train shallow sigmoid networks and run experiment protocols")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, impute and normalize a dataset; write a snapshot and the imputation log.
    Prepare {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one network on a whole dataset.
    Train(TrainArgs),
    /// Run an experiment spec file.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Parallel runs; 1 keeps wall-clock timings comparable.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the spec's base seed.
        #[arg(long, env = "SNN_FORGE_SEED")]
        seed: Option<u64>,
        /// Caps the iterations of every backpropagation run.
        #[arg(long)]
        pdbp_max_iterations: Option<usize>,
        /// Caps the iterations of every swarm run.
        #[arg(long)]
        vpso_max_iterations: Option<usize>,
        /// Fixes the swarm population instead of twice the dimension.
        #[arg(long)]
        vpso_population: Option<usize>,
    },
    /// Re-render report.csv and table.md from an experiment's raw rows.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Raw CSV; requires --manifest and is imputed and normalized before training.
    #[arg(long, requires = "manifest", conflicts_with = "snapshot")]
    csv: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Snapshot written by `prepare`, used as is.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// pdbp or vpso.
    #[arg(long, value_parser = parse_algorithm)]
    algo: Algorithm,
    /// KPI that drives convergence: err, acc or f1.
    #[arg(long, value_parser = parse_driver, default_value = "acc")]
    driver: Driver,
    /// Hidden neurons.
    #[arg(long)]
    hidden: usize,
    #[arg(long, env = "SNN_FORGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Stall tolerance; defaults to 20 times the parameter count.
    #[arg(long)]
    tolerance: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Backpropagation step size on the summed squared error.
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    init_range: Option<f64>,
    /// Swarm size; defaults to twice the parameter count.
    #[arg(long)]
    population: Option<usize>,
    /// Iterations between ring reshuffles; defaults to 10 times the parameter count.
    #[arg(long)]
    reorder_period: Option<usize>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    omega_max: Option<f64>,
    #[arg(long)]
    omega_min: Option<f64>,
    #[arg(long)]
    mass_epsilon: Option<f64>,
    #[arg(long)]
    init_velocity: Option<f64>,
    /// Personal/global bests without constriction instead of the ring variant.
    #[arg(long)]
    standard_swarm: bool,
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_driver(s: &str) -> std::result::Result<Driver, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Serialize)]
struct DatasetDigest {
    path: PathBuf,
    sha256: String,
}

/// Everything needed to re-run a command and get identical artifacts.
#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command_line: Vec<String>,
    command: &'static str,
    resolved_config: serde_json::Value,
    seed_scheme: String,
    datasets: Vec<DatasetDigest>,
    started_unix_ms: u128,
    finished_unix_ms: u128,
}

impl RunManifest {
    fn new(command: &'static str, resolved_config: serde_json::Value, seed_scheme: String, inputs: &[&Path]) -> Result<Self> {
        let datasets = inputs
            .iter()
            .map(|p| {
                Ok(DatasetDigest {
                    path: p.to_path_buf(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command_line: std::env::args().collect(),
            command,
            resolved_config,
            seed_scheme,
            datasets,
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        })
    }

    fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_unix_ms = now_ms();
        let path = dir.join("run_manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&self)?).with_context(|| format!("writing {}", path.display()))
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn prepare(csv: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let m = Manifest::load(manifest)?;
    let run = RunManifest::new("prepare", serde_json::to_value(&m)?, "none".to_owned(), &[csv, manifest])?;
    let raw = dataio::load_csv(csv, &m)?;
    let prepared = dataio::prepare(&raw)?;
    create_dir(out)?;
    dataio::write_snapshot(&prepared, &out.join("snapshot.csv"))?;
    dataio::write_imputation_log(&prepared, &out.join("imputation_log.csv"))?;
    let norm = out.join("normalization.json");
    fs::write(&norm, serde_json::to_string_pretty(&prepared.normalization())?)?;
    eprintln!(
        "{}: {} rows, {} features, {} imputed cells",
        prepared.name(),
        prepared.len(),
        prepared.width(),
        prepared.imputation_log().len()
    );
    run.write(out)
}

fn load_training_data(args: &TrainArgs) -> Result<(Dataset, Vec<PathBuf>)> {
    match (&args.csv, &args.manifest, &args.snapshot) {
        (Some(csv), Some(manifest), None) => {
            let raw = dataio::load_csv(csv, &Manifest::load(manifest)?)?;
            Ok((dataio::prepare(&raw)?, vec![csv.clone(), manifest.clone()]))
        }
        (None, _, Some(snapshot)) => Ok((dataio::read_snapshot(snapshot)?, vec![snapshot.clone()])),
        _ => Err(Error::InvalidConfig("give either --csv with --manifest, or --snapshot".to_owned()).into()),
    }
}

fn pdbp_config(a: &TrainArgs) -> PdbpConfig {
    let d = PdbpConfig::default();
    PdbpConfig {
        driver: a.driver,
        max_iterations: a.max_iterations.unwrap_or(d.max_iterations),
        tolerance: a.tolerance,
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        init_range: a.init_range.unwrap_or(d.init_range),
        threshold: a.threshold.unwrap_or(d.threshold),
        seed: a.seed,
    }
}

fn vpso_config(a: &TrainArgs) -> VpsoConfig {
    let d = VpsoConfig::default();
    VpsoConfig {
        driver: a.driver,
        population: a.population,
        max_iterations: a.max_iterations.unwrap_or(d.max_iterations),
        tolerance: a.tolerance,
        reorder_period: a.reorder_period,
        c1: a.c1.unwrap_or(d.c1),
        c2: a.c2.unwrap_or(d.c2),
        omega_max: a.omega_max.unwrap_or(d.omega_max),
        omega_min: a.omega_min.unwrap_or(d.omega_min),
        mass_epsilon: a.mass_epsilon.unwrap_or(d.mass_epsilon),
        threshold: a.threshold.unwrap_or(d.threshold),
        init_velocity: a.init_velocity.unwrap_or(d.init_velocity),
        mode: if a.standard_swarm { SwarmMode::Standard } else { SwarmMode::Variant },
        seed: a.seed,
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    algorithm: Algorithm,
    driver: Driver,
    hidden: usize,
    d: usize,
    best_iteration: usize,
    iterations_run: usize,
    train_time_ms: f64,
    stop_reason: snn_forge::training::StopReason,
    report: &'a KpiReport,
}

fn write_report_row(path: &Path, r: &TrainedResult) -> Result<()> {
    let mut header: Vec<String> = ["algorithm", "driver", "hidden"].iter().map(|s| (*s).to_owned()).collect();
    header.extend(KpiReport::CSV_HEADER.iter().map(|s| (*s).to_owned()));
    header.extend(["best_iteration", "iterations_run", "train_time_ms"].iter().map(|s| (*s).to_owned()));
    let mut row = vec![r.algorithm.to_string(), r.driver.to_string(), r.model.m().to_string()];
    row.extend(r.final_report.csv_record());
    row.extend([
        r.best_iteration.to_string(),
        r.iterations_run.to_string(),
        format!("{:.3}", r.train_time_ms),
    ]);
    let text = format!("{}\n{}\n", header.join(","), row.join(","));
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train(args: &TrainArgs) -> Result<()> {
    let (data, inputs) = load_training_data(args)?;
    let config = match args.algo {
        Algorithm::Pdbp => serde_json::to_value(pdbp_config(args))?,
        Algorithm::Vpso => serde_json::to_value(vpso_config(args))?,
    };
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let run = RunManifest::new("train", config, format!("single run, seed {}", args.seed), &input_refs)?;
    eprintln!(
        "training {}-{} with m = {} on {} ({} rows, {} features)",
        args.driver,
        args.algo,
        args.hidden,
        data.name(),
        data.len(),
        data.width()
    );
    let result = match args.algo {
        Algorithm::Pdbp => train_pdbp(&data, args.hidden, &pdbp_config(args))?,
        Algorithm::Vpso => optimize_vpso(&data, args.hidden, &vpso_config(args))?,
    };
    create_dir(&args.out)?;
    let model = args.out.join("model.json");
    fs::write(&model, serde_json::to_string_pretty(&result.model.to_file())?)?;
    result.write_trace_csv(&args.out.join("trace.csv"))?;
    write_report_row(&args.out.join("report.csv"), &result)?;
    let summary = TrainSummary {
        algorithm: result.algorithm,
        driver: result.driver,
        hidden: result.model.m(),
        d: result.model.dim(),
        best_iteration: result.best_iteration,
        iterations_run: result.iterations_run,
        train_time_ms: result.train_time_ms,
        stop_reason: result.stop_reason,
        report: &result.final_report,
    };
    fs::write(args.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    eprintln!(
        "ACC {:.4} F1 {:.4} ERR {:.4} after {} iterations (I = {}, {:.0} ms)",
        result.final_report.acc,
        result.final_report.f1,
        result.final_report.err,
        result.iterations_run,
        result.best_iteration,
        result.train_time_ms
    );
    run.write(&args.out)
}

#[allow(clippy::too_many_arguments)]
fn experiment(
    spec_path: &Path,
    out: &Path,
    jobs: Option<usize>,
    seed: Option<u64>,
    pdbp_max_iterations: Option<usize>,
    vpso_max_iterations: Option<usize>,
    vpso_population: Option<usize>,
) -> Result<u8> {
    let mut spec = ExperimentSpec::load(spec_path)?;
    if let Some(j) = jobs {
        spec.jobs = j;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = pdbp_max_iterations {
        spec.pdbp.max_iterations = n;
    }
    if let Some(n) = vpso_max_iterations {
        spec.vpso.max_iterations = n;
    }
    if vpso_population.is_some() {
        spec.vpso.population = vpso_population;
    }
    let experiment = Experiment::plan(spec)?;
    let mut inputs: Vec<&Path> = vec![spec_path];
    for s in &experiment.sources {
        inputs.push(&s.reference.csv);
        inputs.push(&s.reference.manifest);
    }
    let run = RunManifest::new(
        "experiment",
        serde_json::to_value(&experiment.spec)?,
        format!(
            "run i trains with seed {} + i; splits and folds use seed {} + repeat",
            experiment.spec.seed, experiment.spec.seed
        ),
        &inputs,
    )?;
    create_dir(out)?;
    eprintln!("{} runs planned", experiment.runs.len());
    let result = experiment.run(&|p| match p {
        Progress::Started { .. } => {}
        Progress::Finished { record, total } => eprintln!(
            "[{}/{}] {} {}-{} m={} {:?}: acc {:.4} ({} iterations, {:.0} ms)",
            record.index + 1,
            total,
            record.dataset,
            record.driver,
            record.algorithm,
            record.hidden,
            record.split,
            record.evaluated().acc,
            record.iterations_run,
            record.train_time_ms
        ),
        Progress::Failed { plan, error, total } => {
            eprintln!("[{}/{}] run {} failed: {error}", plan.index + 1, total, plan.index)
        }
    });
    let reports = harness::write_outputs(out, &experiment, &result)?;
    run.write(out)?;
    eprint!("{}", harness::render_table(experiment.spec.protocol, &reports));
    if result.failures.is_empty() {
        Ok(0)
    } else {
        let failed: Vec<String> = result.failures.iter().map(|(i, _)| i.to_string()).collect();
        eprintln!("failed runs: {}", failed.join(", "));
        let log: Vec<String> = result.failures.iter().map(|(i, e)| format!("{i}: {e}")).collect();
        fs::write(out.join("failures.txt"), log.join("\n") + "\n")?;
        Ok(EXIT_PARTIAL)
    }
}

fn report(dir: &Path) -> Result<()> {
    let spec: ExperimentSpec = serde_json::from_str(
        &fs::read_to_string(dir.join("spec.json")).with_context(|| format!("reading {}/spec.json", dir.display()))?,
    )?;
    let rows = harness::read_raw_rows(&dir.join("runs").join("raw.csv"))?;
    let reports = harness::aggregate(&rows);
    harness::write_report(dir, spec.protocol, &reports)?;
    print!("{}", harness::render_table(spec.protocol, &reports));
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::InvalidConfig(_)
            | Error::InvalidSpec(_)
            | Error::InvalidShape { .. }
            | Error::DimensionMismatch { .. },
        ) => EXIT_CONFIG,
        Some(Error::Diverged { .. }) => EXIT_DIVERGED,
        Some(_) => EXIT_DATA,
        None if err.downcast_ref::<std::io::Error>().is_some() || err.downcast_ref::<serde_json::Error>().is_some() => {
            EXIT_DATA
        }
        None => 1,
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Prepare { csv, manifest, out } => prepare(&csv, &manifest, &out).map(|()| 0),
        Command::Train(args) => train(&args).map(|()| 0),
        Command::Experiment {
            spec,
            out,
            jobs,
            seed,
            pdbp_max_iterations,
            vpso_max_iterations,
            vpso_population,
        } => experiment(&spec, &out, jobs, seed, pdbp_max_iterations, vpso_max_iterations, vpso_population),
        Command::Report { dir } => report(&dir).map(|()| 0),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
