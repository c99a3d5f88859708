//! Experiment batteries: grid x algorithm x seed sweeps with reproducible
//! per-run seed derivation, 99% normal-approximation confidence intervals,
//! long-format CSV emission, and the overconfidence diagnostics.
//!
//! For featureless algorithms the harness optionally trains the configured
//! classifier on the inferred posterior afterwards so every algorithm gets
//! a test-accuracy column, mirroring how learning curves are usually
//! reported for vote-style baselines.

use crate::classifier::test_accuracy;
use crate::data::{denoised_accuracy, marginal_histogram, LabelPosterior};
use crate::driver::{run, Algorithm, EMConfig};
use crate::error::{Error, Result};
use crate::io::{atomic_write, format_f64};
use crate::mat::Mat;
use crate::priors::{posterior_mean_diagonal, WorkerPrior};
use crate::seed::{derive, derive2};
use crate::synth::{generate, ScenarioSpec};
use serde::Serialize;
use std::path::Path;

/// Two-sided 99% normal quantile.
pub const CI99_Z: f64 = 2.5758293035489004;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    PriorSweep,
    SpammerSweep,
    ClipSweep,
    BudgetSweep,
    SampleSizeSweep,
    TraceLambdaSweep,
}

impl SweepKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "prior_sweep" => SweepKind::PriorSweep,
            "spammer_sweep" => SweepKind::SpammerSweep,
            "clip_sweep" => SweepKind::ClipSweep,
            "budget_sweep" => SweepKind::BudgetSweep,
            "sample_size_sweep" => SweepKind::SampleSizeSweep,
            "trace_lambda_sweep" => SweepKind::TraceLambdaSweep,
            other => return Err(Error::Config(format!("unknown sweep kind '{other}'"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::PriorSweep => "prior_sweep",
            SweepKind::SpammerSweep => "spammer_sweep",
            SweepKind::ClipSweep => "clip_sweep",
            SweepKind::BudgetSweep => "budget_sweep",
            SweepKind::SampleSizeSweep => "sample_size_sweep",
            SweepKind::TraceLambdaSweep => "trace_lambda_sweep",
        }
    }

    /// Whether the grid value changes the generated data. Kinds that only
    /// reconfigure the algorithm reuse one dataset per seed slot across
    /// the grid, so point-to-point differences are paired.
    fn affects_scenario(self) -> bool {
        matches!(
            self,
            SweepKind::PriorSweep | SweepKind::SpammerSweep | SweepKind::BudgetSweep
        )
    }
}

/// A full sweep description: the varying grid plus the base scenario and
/// EM configuration every run starts from.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub num_seeds: usize,
    pub master_seed: u64,
    pub scenario: ScenarioSpec,
    pub em: EMConfig,
    /// Budget B = N * l, used by the budget sweep to trade tasks for
    /// workers per task.
    pub budget: usize,
    /// Explicit clip cap for every run; `None` keeps the per-algorithm
    /// default (0.9, unclipped for cl/trace). The clip sweep's grid value
    /// always wins.
    pub clip: Option<f64>,
    /// Train the configured classifier on featureless posteriors so mv/mf/bp
    /// also report test accuracy.
    pub fit_featureless_classifier: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid must be non-empty".into()));
        }
        if self.num_seeds == 0 {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("sweep needs at least one algorithm".into()));
        }
        Ok(())
    }
}

/// One run's outcome inside a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub x: f64,
    pub algo: String,
    pub seed_index: usize,
    pub denoised: Option<f64>,
    pub test: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    pub x: f64,
    pub algo: String,
    pub mean_denoised: f64,
    pub ci_lo_denoised: f64,
    pub ci_hi_denoised: f64,
    pub mean_test: Option<f64>,
    pub ci_lo_test: Option<f64>,
    pub ci_hi_test: Option<f64>,
    pub per_seed_denoised: Vec<f64>,
    pub per_seed_test: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub kind: &'static str,
    pub grid: Vec<f64>,
    pub algorithms: Vec<String>,
    pub num_seeds: usize,
    pub master_seed: u64,
    pub ci_method: &'static str,
    pub ci_z: f64,
    pub points: Vec<PointSummary>,
    pub failures: Vec<String>,
}

/// Applies grid point `x` to copies of the base scenario and EM config.
fn apply_point(spec: &SweepSpec, x: f64) -> Result<(ScenarioSpec, EMConfig)> {
    let mut sc = spec.scenario.clone();
    let mut em = spec.em.clone();
    match spec.kind {
        SweepKind::PriorSweep => {
            // x is alpha1 of the true one-coin prior, alpha2 = alpha1 / 2;
            // the models are given the true prior.
            let prior = WorkerPrior::one_coin(x, x / 2.0);
            sc.prior = prior.clone();
            em.prior = prior;
        }
        SweepKind::SpammerSweep => {
            sc.n_spammers = x.round() as usize;
        }
        SweepKind::ClipSweep => {
            em.clip = x;
        }
        SweepKind::BudgetSweep => {
            // x is l; N = round(B / l), M fixed up so N*l = M*r.
            let l = x.round() as usize;
            if l == 0 {
                return Err(Error::Config("budget sweep grid value 0".into()));
            }
            let mut n = ((spec.budget as f64) / l as f64).round() as usize;
            while n > 0 && (n * l) % sc.tasks_per_worker != 0 {
                n -= 1;
            }
            if n == 0 {
                return Err(Error::Config(format!(
                    "cannot satisfy N*l divisible by r for l = {l}"
                )));
            }
            sc.num_tasks = n;
            sc.workers_per_task = l;
            sc.num_workers = n * l / sc.tasks_per_worker;
        }
        SweepKind::SampleSizeSweep => {
            em.factor.samples = x.round() as usize;
            em.factor.mode = crate::bp::FactorMode::MonteCarlo;
        }
        SweepKind::TraceLambdaSweep => {
            em.trace_lambda = x;
        }
    }
    Ok((sc, em))
}

fn mean_and_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let half = CI99_Z * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

fn run_one(spec: &SweepSpec, x: f64, algo: Algorithm, seed_index: usize) -> RunRecord {
    let record_err = |msg: String| RunRecord {
        x,
        algo: algo.name().to_string(),
        seed_index,
        denoised: None,
        test: None,
        error: Some(msg),
    };
    let point_index = spec
        .grid
        .iter()
        .position(|&g| g == x)
        .expect("grid point present");
    let scenario_index = if spec.kind.affects_scenario() {
        point_index as u64
    } else {
        0
    };
    let data_seed = derive2(spec.master_seed, scenario_index, seed_index as u64);

    let (mut sc, mut em) = match apply_point(spec, x) {
        Ok(v) => v,
        Err(e) => return record_err(e.to_string()),
    };
    sc.seed = data_seed;
    em.algorithm = algo;
    em.seed = derive(data_seed, 0x5eed);
    if spec.kind != SweepKind::ClipSweep {
        em.clip = spec.clip.unwrap_or(match algo {
            Algorithm::Cl | Algorithm::Trace => 1.0,
            _ => 0.9,
        });
    }

    let scenario = match generate(&sc) {
        Ok(s) => s,
        Err(e) => return record_err(format!("scenario generation failed: {e}")),
    };
    let result = match run(&scenario.train, &em) {
        Ok(r) => r,
        Err(e) => return record_err(format!("run failed: {e}")),
    };
    let truth = match scenario.train.require_truth() {
        Ok(t) => t,
        Err(e) => return record_err(e.to_string()),
    };
    let denoised = match denoised_accuracy(&result.q, truth) {
        Ok(a) => a,
        Err(e) => return record_err(e.to_string()),
    };

    let test = match &result.model {
        Some(model) => test_accuracy(model, &scenario.test_features, &scenario.test_truth).ok(),
        None if spec.fit_featureless_classifier => {
            scenario.train.features().and_then(|features| {
                let mut model = crate::classifier::ClassifierModel::new(
                    em.classifier.kind,
                    features.cols(),
                    scenario.train.num_classes(),
                    em.classifier.l2_lambda,
                    em.classifier.init_scale,
                    em.seed,
                );
                let opts = crate::classifier::TrainOpts {
                    epochs: em.classifier.epochs,
                    learning_rate: em.classifier.learning_rate,
                    backtracking: em.classifier.backtracking,
                    adam: em.classifier.adam,
                };
                model
                    .fit_weighted(features, &result.q, opts)
                    .ok()
                    .and_then(|_| {
                        test_accuracy(&model, &scenario.test_features, &scenario.test_truth).ok()
                    })
            })
        }
        None => None,
    };

    RunRecord {
        x,
        algo: algo.name().to_string(),
        seed_index,
        denoised: Some(denoised),
        test,
        error: None,
    }
}

/// Thread count: explicit request, else `CROWDBP_THREADS`, else all cores.
pub fn thread_count(requested: Option<usize>) -> usize {
    requested
        .or_else(|| {
            std::env::var("CROWDBP_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Runs the whole battery and writes `<kind>_denoised.csv`,
/// `<kind>_test.csv`, and `summary.json` under `out_dir`. Individual run
/// failures are recorded and the rest of the sweep continues.
pub fn run_experiment(spec: &SweepSpec, out_dir: &Path, threads: Option<usize>) -> Result<SweepSummary> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &x in &spec.grid {
        for &algo in &spec.algorithms {
            for s in 0..spec.num_seeds {
                jobs.push((x, algo, s));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(threads))
        .build()
        .map_err(|e| Error::Run(format!("thread pool: {e}")))?;
    let records: Vec<RunRecord> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(x, algo, s)| run_one(spec, x, algo, s))
            .collect()
    });

    let mut failures = Vec::new();
    let mut points = Vec::new();
    for &x in &spec.grid {
        for &algo in &spec.algorithms {
            let mine: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.x == x && r.algo == algo.name())
                .collect();
            for r in &mine {
                if let Some(e) = &r.error {
                    failures.push(format!("x={} algo={} seed={}: {e}", r.x, r.algo, r.seed_index));
                }
            }
            let denoised: Vec<f64> = mine.iter().filter_map(|r| r.denoised).collect();
            if denoised.is_empty() {
                continue;
            }
            let (mean, lo, hi) = mean_and_ci(&denoised);
            let tests: Vec<f64> = mine.iter().filter_map(|r| r.test).collect();
            let (mean_test, ci_lo_test, ci_hi_test) = if tests.len() == mine.len() {
                let (m, l, h) = mean_and_ci(&tests);
                (Some(m), Some(l), Some(h))
            } else {
                (None, None, None)
            };
            points.push(PointSummary {
                x,
                algo: algo.name().to_string(),
                mean_denoised: mean,
                ci_lo_denoised: lo,
                ci_hi_denoised: hi,
                mean_test,
                ci_lo_test,
                ci_hi_test,
                per_seed_denoised: denoised,
                per_seed_test: tests,
            });
        }
    }

    let summary = SweepSummary {
        kind: spec.kind.name(),
        grid: spec.grid.clone(),
        algorithms: spec.algorithms.iter().map(|a| a.name().to_string()).collect(),
        num_seeds: spec.num_seeds,
        master_seed: spec.master_seed,
        ci_method: "normal-approximation",
        ci_z: CI99_Z,
        points,
        failures,
    };

    let mut denoised_csv = String::from("x,algo,mean,ci_lo,ci_hi\n");
    let mut test_csv = String::from("x,algo,mean,ci_lo,ci_hi\n");
    for p in &summary.points {
        denoised_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            format_f64(p.x),
            p.algo,
            format_f64(p.mean_denoised),
            format_f64(p.ci_lo_denoised),
            format_f64(p.ci_hi_denoised)
        ));
        if let (Some(m), Some(l), Some(h)) = (p.mean_test, p.ci_lo_test, p.ci_hi_test) {
            test_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                format_f64(p.x),
                p.algo,
                format_f64(m),
                format_f64(l),
                format_f64(h)
            ));
        }
    }
    atomic_write(
        &out_dir.join(format!("{}_denoised.csv", spec.kind.name())),
        &denoised_csv,
    )?;
    atomic_write(
        &out_dir.join(format!("{}_test.csv", spec.kind.name())),
        &test_csv,
    )?;
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Run(format!("serialize summary: {e}")))?;
    atomic_write(&out_dir.join("summary.json"), &json)?;

    Ok(summary)
}

/// Writes the three overconfidence diagnostics: a 10-bin histogram of the
/// class-0 marginal, the per-seed accuracies sorted ascending, and a
/// 10-bin histogram of the posterior-mean diagonal confusion entries.
pub fn emit_diagnostics(
    q: &LabelPosterior,
    worker_params: Option<&[Mat]>,
    per_seed_accuracies: &[f64],
    out_dir: &Path,
) -> Result<()> {
    let hist = marginal_histogram(q);
    let mut csv = String::from("bin_lo,bin_hi,count\n");
    for (b, count) in hist.iter().enumerate() {
        csv.push_str(&format!("{:.1},{:.1},{}\n", b as f64 / 10.0, (b + 1) as f64 / 10.0, count));
    }
    atomic_write(&out_dir.join("marginal_hist.csv"), &csv)?;

    let mut sorted = per_seed_accuracies.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut csv = String::from("rank,accuracy\n");
    for (i, a) in sorted.iter().enumerate() {
        csv.push_str(&format!("{i},{}\n", format_f64(*a)));
    }
    atomic_write(&out_dir.join("sorted_accuracies.csv"), &csv)?;

    if let Some(params) = worker_params {
        let mut values = Vec::new();
        for m in params {
            values.extend(posterior_mean_diagonal(m));
        }
        let mut bins = [0usize; 10];
        for v in &values {
            let b = ((v * 10.0).floor() as usize).min(9);
            bins[b] += 1;
        }
        let mut csv = String::from("bin_lo,bin_hi,count\n");
        for (b, count) in bins.iter().enumerate() {
            csv.push_str(&format!(
                "{:.1},{:.1},{}\n",
                b as f64 / 10.0,
                (b + 1) as f64 / 10.0,
                count
            ));
        }
        atomic_write(&out_dir.join("diag_mean_hist.csv"), &csv)?;
    }
    Ok(())
}
