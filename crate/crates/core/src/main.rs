//! Command-line surface: scenario generation, inference, joint learning,
//! evaluation, experiment sweeps, and brute-force oracle checks.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 data error,
//! 3 run failure.

use clap::{Args, Parser, Subcommand};
use crowdbp::bp::{FactorEvalConfig, FactorMode};
use crowdbp::classifier::ClassifierKind;
use crowdbp::data::{denoised_accuracy, CrowdDataset, MetricsReport};
use crowdbp::driver::{run, Algorithm, EMConfig};
use crowdbp::error::Error;
use crowdbp::io;
use crowdbp::oracle::{enumerate_posterior, OracleLimits};
use crowdbp::sweep::{run_experiment, SweepKind, SweepSpec};
use crowdbp::synth::{generate, ScenarioSpec};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "crowdbp", version, about = "Label inference and learning from noisy crowdsourced answers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario and write its CSV files.
    Gen(GenArgs),
    /// Infer labels with a featureless algorithm (mv, mf, bp).
    Infer(InferArgs),
    /// Jointly infer labels and train a classifier (deepmf, deepbp, cl, trace).
    Learn(LearnArgs),
    /// Score a posterior file against ground truth.
    Eval(EvalArgs),
    /// Run an experiment battery from a config file.
    Sweep(SweepArgs),
    /// Compare an engine against exact posterior enumeration on a small dataset.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    tasks: usize,
    #[arg(long, default_value_t = 750)]
    workers: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Workers per task (l).
    #[arg(short = 'l', long, default_value_t = 3)]
    workers_per_task: usize,
    /// Tasks per worker (r).
    #[arg(short = 'r', long, default_value_t = 4)]
    tasks_per_worker: usize,
    /// Worker prior: onecoin:a1,a2 | twocoin:a1,a2 | full:a11,...,aKK
    #[arg(long, default_value = "onecoin:2,1")]
    prior: String,
    #[arg(long, default_value_t = 0)]
    spammers: usize,
    #[arg(long, default_value_t = 2)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.0)]
    separation: f64,
    #[arg(long, default_value_t = 1000)]
    test_tasks: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_labels: PathBuf,
    #[arg(long)]
    out_features: Option<PathBuf>,
    #[arg(long)]
    out_truth: Option<PathBuf>,
    #[arg(long)]
    out_test_features: Option<PathBuf>,
    #[arg(long)]
    out_test_truth: Option<PathBuf>,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Ground truth (evaluation only; never seen by the engines).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value = "onecoin:2,1")]
    prior: String,
    /// Classifier output cap; defaults to 0.9 (1.0 for cl/trace).
    #[arg(long)]
    clip: Option<f64>,
    /// Factor evaluation: auto | exact | dp | mc
    #[arg(long, default_value = "auto")]
    mode: String,
    #[arg(long, default_value_t = 400)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    exact_degree_cap: usize,
    #[arg(long, default_value_t = 0.0)]
    damping: f64,
    #[arg(long, default_value_t = 50)]
    sweeps: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out_posterior: PathBuf,
    /// Metrics JSON output.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Directory for the marginal/diagonal histograms and sorted accuracies.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// mv | mf | bp
    #[arg(long)]
    algo: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct LearnArgs {
    /// deepmf | deepbp | cl | trace
    #[arg(long)]
    algo: String,
    #[arg(long)]
    seed: u64,
    /// logistic | mlp1:HIDDEN
    #[arg(long, default_value = "logistic")]
    classifier: String,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
    #[arg(long, default_value_t = 50)]
    rounds: usize,
    #[arg(long, default_value_t = 0.0)]
    trace_lambda: f64,
    #[arg(long, default_value_t = 2.0)]
    trace_delta: f64,
    #[arg(long)]
    out_model: Option<PathBuf>,
    #[arg(long)]
    test_features: Option<PathBuf>,
    #[arg(long)]
    test_truth: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    posterior: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value = "onecoin:2,1")]
    prior: String,
    /// Engine to compare: bp | mf
    #[arg(long, default_value = "bp")]
    algo: String,
    #[arg(long, default_value_t = 12)]
    max_tasks: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version requests are successes, everything else is
            // a usage error (exit code 1).
            use clap::error::ErrorKind;
            let _ = e.print();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::OracleCheck(a) => cmd_oracle(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_gen(a: GenArgs) -> Result<ExitCode, Error> {
    let prior = io::parse_prior(&a.prior, a.classes)?;
    let spec = ScenarioSpec {
        num_tasks: a.tasks,
        num_workers: a.workers,
        num_classes: a.classes,
        workers_per_task: a.workers_per_task,
        tasks_per_worker: a.tasks_per_worker,
        prior,
        n_spammers: a.spammers,
        feature_dim: a.feature_dim,
        feature_separation: a.separation,
        test_tasks: a.test_tasks,
        seed: a.seed,
    };
    let scenario = generate(&spec)?;
    io::atomic_write(&a.out_labels, &io::labels_csv(scenario.train.answers()))?;
    if let Some(p) = &a.out_features {
        io::atomic_write(p, &io::features_csv(scenario.train.features().unwrap()))?;
    }
    if let Some(p) = &a.out_truth {
        io::atomic_write(p, &io::truth_csv(scenario.train.truth().unwrap()))?;
    }
    if let Some(p) = &a.out_test_features {
        io::atomic_write(p, &io::features_csv(&scenario.test_features))?;
    }
    if let Some(p) = &a.out_test_truth {
        io::atomic_write(p, &io::truth_csv(&scenario.test_truth))?;
    }
    println!(
        "generated {} tasks, {} workers, {} answers",
        scenario.train.num_tasks(),
        scenario.train.num_workers(),
        scenario.train.answers().len()
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_mode(s: &str) -> Result<FactorMode, Error> {
    Ok(match s {
        "auto" => FactorMode::Auto,
        "exact" => FactorMode::ExactEnum,
        "dp" => FactorMode::OneCoinDp,
        "mc" => FactorMode::MonteCarlo,
        other => return Err(Error::Config(format!("unknown factor mode '{other}'"))),
    })
}

fn parse_classifier(s: &str) -> Result<ClassifierKind, Error> {
    if s == "logistic" {
        return Ok(ClassifierKind::Logistic);
    }
    if let Some(h) = s.strip_prefix("mlp1:") {
        let hidden: usize = h
            .parse()
            .map_err(|_| Error::Config(format!("bad hidden size '{h}'")))?;
        return Ok(ClassifierKind::Mlp1 { hidden });
    }
    Err(Error::Config(format!("unknown classifier '{s}'")))
}

fn load_engine_dataset(e: &EngineArgs) -> Result<CrowdDataset, Error> {
    io::load_dataset(
        &e.labels,
        e.features.as_deref(),
        e.truth.as_deref(),
        e.classes,
    )
}

fn engine_config(
    e: &EngineArgs,
    algorithm: Algorithm,
    num_classes: usize,
    seed: u64,
) -> Result<EMConfig, Error> {
    let prior = io::parse_prior(&e.prior, num_classes)?;
    let mut config = EMConfig::new(algorithm, prior, seed);
    if let Some(clip) = e.clip {
        config.clip = clip;
    }
    config.bp_sweeps = e.sweeps;
    config.bp_tol = e.tol;
    config.factor = FactorEvalConfig {
        mode: parse_mode(&e.mode)?,
        samples: e.samples,
        exact_degree_cap: e.exact_degree_cap,
        damping: e.damping,
    };
    Ok(config)
}

fn emit_run_outputs(
    e: &EngineArgs,
    dataset: &CrowdDataset,
    result: &crowdbp::driver::RunResult,
    test_accuracy: Option<f64>,
) -> Result<(), Error> {
    io::atomic_write(&e.out_posterior, &io::posterior_csv(&result.q))?;
    if let Some(metrics_path) = &e.metrics {
        let truth = dataset.require_truth()?;
        let report = MetricsReport::from_run(&result.q, truth, test_accuracy)?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|err| Error::Run(format!("serialize metrics: {err}")))?;
        io::atomic_write(metrics_path, &json)?;
    }
    if let Some(dir) = &e.diagnostics {
        let params = result.beta.as_deref().or(result.theta.as_deref());
        let accs: Vec<f64> = match dataset.truth() {
            Some(t) => vec![denoised_accuracy(&result.q, t)?],
            None => Vec::new(),
        };
        crowdbp::sweep::emit_diagnostics(&result.q, params, &accs, dir)?;
    }
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<ExitCode, Error> {
    let algorithm = Algorithm::parse(&a.algo)?;
    if algorithm.needs_features() {
        return Err(Error::Config(format!(
            "'{}' trains a classifier; use the learn subcommand",
            a.algo
        )));
    }
    let dataset = load_engine_dataset(&a.engine)?;
    let config = engine_config(&a.engine, algorithm, dataset.num_classes(), a.seed)?;
    let result = run(&dataset, &config)?;
    emit_run_outputs(&a.engine, &dataset, &result, None)?;
    if let Some(truth) = dataset.truth() {
        println!(
            "denoised accuracy: {:.4}",
            denoised_accuracy(&result.q, truth)?
        );
    }
    println!("wrote {}", a.engine.out_posterior.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_learn(a: LearnArgs) -> Result<ExitCode, Error> {
    let algorithm = Algorithm::parse(&a.algo)?;
    if !algorithm.needs_features() {
        return Err(Error::Config(format!(
            "'{}' does not train a classifier; use the infer subcommand",
            a.algo
        )));
    }
    if a.engine.features.is_none() {
        return Err(Error::MissingFeatures);
    }
    let dataset = load_engine_dataset(&a.engine)?;
    let mut config = engine_config(&a.engine, algorithm, dataset.num_classes(), a.seed)?;
    config.classifier.kind = parse_classifier(&a.classifier)?;
    config.classifier.epochs = a.epochs;
    config.classifier.learning_rate = a.learning_rate;
    config.classifier.l2_lambda = a.l2;
    config.classifier.init_scale = a.init_scale;
    config.outer_rounds = a.rounds;
    config.trace_lambda = a.trace_lambda;
    config.trace_init_delta = a.trace_delta;
    let result = run(&dataset, &config)?;

    let test_acc = match (&a.test_features, &a.test_truth, &result.model) {
        (Some(fp), Some(tp), Some(model)) => {
            let tf = io::load_features(fp, count_rows(fp)?)?;
            let tt = io::load_truth(tp, tf.rows(), dataset.num_classes())?;
            Some(crowdbp::classifier::test_accuracy(model, &tf, &tt)?)
        }
        _ => None,
    };

    emit_run_outputs(&a.engine, &dataset, &result, test_acc)?;
    if let (Some(path), Some(model)) = (&a.out_model, &result.model) {
        let json = serde_json::to_string_pretty(model)
            .map_err(|e| Error::Run(format!("serialize model: {e}")))?;
        io::atomic_write(path, &json)?;
    }
    if let Some(truth) = dataset.truth() {
        println!(
            "denoised accuracy: {:.4}",
            denoised_accuracy(&result.q, truth)?
        );
    }
    if let Some(t) = test_acc {
        println!("test accuracy: {t:.4}");
    }
    println!("rounds: {}", result.rounds);
    Ok(ExitCode::SUCCESS)
}

/// Number of data rows in a headered CSV.
fn count_rows(path: &Path) -> Result<usize, Error> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(text.lines().skip(1).filter(|l| !l.trim().is_empty()).count())
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode, Error> {
    let q = io::load_posterior(&a.posterior)?;
    let truth = io::load_truth(&a.truth, q.num_tasks(), q.num_classes())?;
    let report = MetricsReport::from_run(&q, &truth, None)?;
    println!("denoised accuracy: {:.6}", report.denoised_accuracy);
    if let Some(path) = &a.metrics {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Run(format!("serialize metrics: {e}")))?;
        io::atomic_write(path, &json)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn get_parse<T: std::str::FromStr>(
    map: &std::collections::HashMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, Error> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("bad value for '{key}': '{v}'"))),
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<ExitCode, Error> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Error::io(a.config.display().to_string(), e))?;
    let map = io::parse_config_text(&text)?;
    let kind = SweepKind::parse(
        map.get("kind")
            .ok_or_else(|| Error::Config("missing 'kind'".into()))?,
    )?;
    let grid: Vec<f64> = map
        .get("grid")
        .ok_or_else(|| Error::Config("missing 'grid'".into()))?
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad grid value '{v}'")))
        })
        .collect::<Result<_, Error>>()?;
    let algorithms: Vec<Algorithm> = map
        .get("algos")
        .ok_or_else(|| Error::Config("missing 'algos'".into()))?
        .split(',')
        .map(|s| Algorithm::parse(s.trim()))
        .collect::<Result<_, Error>>()?;

    let classes: usize = get_parse(&map, "classes", 2)?;
    let tasks: usize = get_parse(&map, "tasks", 1000)?;
    let l: usize = get_parse(&map, "l", 3)?;
    let r: usize = get_parse(&map, "r", 4)?;
    let workers: usize = get_parse(&map, "workers", tasks * l / r)?;
    let true_prior = io::parse_prior(
        map.get("true_prior").map(String::as_str).unwrap_or("onecoin:2,1"),
        classes,
    )?;
    let model_prior = match map.get("model_prior") {
        Some(s) => io::parse_prior(s, classes)?,
        None => true_prior.clone(),
    };

    let mut scenario = ScenarioSpec::new(tasks, workers, classes, l, r, true_prior, 0);
    scenario.n_spammers = get_parse(&map, "spammers", 0)?;
    scenario.feature_dim = get_parse(&map, "feature_dim", 2)?;
    scenario.feature_separation = get_parse(&map, "separation", 0.0)?;
    scenario.test_tasks = get_parse(&map, "test_tasks", 1000)?;

    let mut em = EMConfig::new(Algorithm::Mv, model_prior, 0);
    let clip: Option<f64> = match map.get("clip") {
        Some(v) => Some(v.parse().map_err(|_| Error::Config(format!("bad value for 'clip': '{v}'")))?),
        None => None,
    };
    em.outer_rounds = get_parse(&map, "rounds", 50)?;
    em.classifier.kind =
        parse_classifier(map.get("classifier").map(String::as_str).unwrap_or("logistic"))?;
    em.classifier.epochs = get_parse(&map, "epochs", 200)?;
    em.classifier.learning_rate = get_parse(&map, "learning_rate", 0.5)?;
    em.classifier.l2_lambda = get_parse(&map, "l2", 1e-4)?;
    em.factor.samples = get_parse(&map, "samples", 400)?;
    em.factor.mode = parse_mode(map.get("mode").map(String::as_str).unwrap_or("auto"))?;
    em.trace_lambda = get_parse(&map, "trace_lambda", 0.0)?;
    em.trace_init_delta = get_parse(&map, "trace_delta", 2.0)?;

    let spec = SweepSpec {
        kind,
        grid,
        algorithms,
        num_seeds: get_parse(&map, "seeds", 10)?,
        master_seed: get_parse(&map, "master_seed", 0)?,
        scenario,
        em,
        budget: get_parse(&map, "budget", tasks * l)?,
        clip,
        fit_featureless_classifier: get_parse(&map, "fit_featureless_classifier", true)?,
    };
    let summary = run_experiment(&spec, &a.out, a.threads)?;
    println!(
        "sweep '{}' complete: {} points, {} failures; outputs in {}",
        summary.kind,
        summary.points.len(),
        summary.failures.len(),
        a.out.display()
    );
    if summary.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &summary.failures {
            eprintln!("failed run: {f}");
        }
        Ok(ExitCode::from(3))
    }
}

fn cmd_oracle(a: OracleArgs) -> Result<ExitCode, Error> {
    let dataset = io::load_dataset(&a.labels, a.features.as_deref(), None, a.classes)?;
    let prior = io::parse_prior(&a.prior, dataset.num_classes())?;
    let graph = dataset.graph();
    let k = dataset.num_classes();
    let f = match dataset.features() {
        Some(f) => f.clone(),
        None => crowdbp::mat::Mat::filled(dataset.num_tasks(), k, 1.0 / k as f64),
    };
    let limits = OracleLimits {
        max_tasks: a.max_tasks,
        ..Default::default()
    };
    let exact = enumerate_posterior(&graph, &f, &prior, limits)?;

    let engine_q = match a.algo.as_str() {
        "bp" => {
            let (q, _) = crowdbp::bp::bp_run(
                &graph,
                &f,
                &prior,
                &FactorEvalConfig::default(),
                100,
                1e-12,
                None,
                0,
            )?;
            q
        }
        "mf" => crowdbp::meanfield::mf_infer(&graph, &f, &prior, 1e-10, 200).q,
        other => return Err(Error::Config(format!("unknown oracle-check engine '{other}'"))),
    };
    let max_err = engine_q.matrix().max_abs_diff(exact.matrix());
    println!("max |{} - enumeration| = {:.3e}", a.algo, max_err);
    Ok(ExitCode::SUCCESS)
}
