//! Top-level inference and learning drivers: majority vote, featureless
//! mean-field and BP, the joint classifier loops (deepMF / deepBP), and
//! the point-estimate EM baselines (CL and its trace-regularized variant).
//!
//! Every driver is a deterministic function of (dataset, config); the
//! config seed feeds classifier initialization and any Monte-Carlo factor
//! evaluation. Ground truth never enters a driver, only the harness-side
//! metric functions.

use crate::bp::{bp_run, FactorEvalConfig, MessageState};
use crate::classifier::{clip_probs, ClassifierKind, ClassifierModel, ClipParam, TrainOpts};
use crate::data::{AssignmentGraph, CrowdDataset, LabelPosterior};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::meanfield::{mf_infer, MFState};
use crate::priors::WorkerPrior;
use crate::special::softmax_in_place;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mv,
    Mf,
    Bp,
    DeepMf,
    DeepBp,
    Cl,
    Trace,
}

impl Algorithm {
    pub fn needs_features(self) -> bool {
        matches!(
            self,
            Algorithm::DeepMf | Algorithm::DeepBp | Algorithm::Cl | Algorithm::Trace
        )
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "mv" => Algorithm::Mv,
            "mf" => Algorithm::Mf,
            "bp" => Algorithm::Bp,
            "deepmf" => Algorithm::DeepMf,
            "deepbp" => Algorithm::DeepBp,
            "cl" => Algorithm::Cl,
            "trace" => Algorithm::Trace,
            other => return Err(Error::Config(format!("unknown algorithm '{other}'"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mv => "mv",
            Algorithm::Mf => "mf",
            Algorithm::Bp => "bp",
            Algorithm::DeepMf => "deepmf",
            Algorithm::DeepBp => "deepbp",
            Algorithm::Cl => "cl",
            Algorithm::Trace => "trace",
        }
    }
}

/// Classifier half of the EM configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    /// Parameter init scale; 0 gives a zero (uniform-output) classifier.
    pub init_scale: f64,
    pub backtracking: bool,
    pub adam: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            kind: ClassifierKind::Logistic,
            epochs: 200,
            learning_rate: 0.5,
            l2_lambda: 1e-4,
            init_scale: 0.1,
            backtracking: false,
            adam: false,
        }
    }
}

impl ClassifierConfig {
    fn train_opts(&self) -> TrainOpts {
        TrainOpts {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            backtracking: self.backtracking,
            adam: self.adam,
        }
    }
}

/// Everything a driver needs to run one algorithm on one dataset.
#[derive(Debug, Clone)]
pub struct EMConfig {
    pub algorithm: Algorithm,
    /// Classifier output clip for the inference step; 1 disables.
    pub clip: f64,
    pub prior: WorkerPrior,
    pub outer_rounds: usize,
    /// Outer-loop stop: max absolute posterior change between rounds.
    pub outer_tol: f64,
    pub mf_tol: f64,
    pub mf_max_iters: usize,
    pub bp_sweeps: usize,
    pub bp_tol: f64,
    pub factor: FactorEvalConfig,
    pub classifier: ClassifierConfig,
    /// Trace regularizer weight (lambda >= 0; 0 reduces to CL).
    pub trace_lambda: f64,
    /// Diagonal logit used to initialize the point-estimate confusion
    /// matrices toward experts (delta > 0).
    pub trace_init_delta: f64,
    pub trace_theta_steps: usize,
    pub trace_theta_lr: f64,
    /// Reset BP messages to uniform at every outer round instead of
    /// warm-starting from the previous round.
    pub bp_cold_start: bool,
    pub seed: u64,
}

impl EMConfig {
    /// Defaults: clip at 0.9 for the variational loops; the point-estimate
    /// baselines (CL, Trace) run unclipped.
    pub fn new(algorithm: Algorithm, prior: WorkerPrior, seed: u64) -> Self {
        EMConfig {
            algorithm,
            clip: match algorithm {
                Algorithm::Cl | Algorithm::Trace => 1.0,
                _ => 0.9,
            },
            prior,
            outer_rounds: 50,
            outer_tol: 1e-4,
            mf_tol: 1e-6,
            mf_max_iters: 100,
            bp_sweeps: 50,
            bp_tol: 1e-6,
            factor: FactorEvalConfig::default(),
            classifier: ClassifierConfig::default(),
            trace_lambda: 0.0,
            trace_init_delta: 2.0,
            trace_theta_steps: 20,
            trace_theta_lr: 1e-2,
            bp_cold_start: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_rounds == 0 {
            return Err(Error::Config("outer_rounds must be at least 1".into()));
        }
        if self.trace_lambda < 0.0 {
            return Err(Error::Config("trace lambda must be nonnegative".into()));
        }
        if self.trace_init_delta <= 0.0 {
            return Err(Error::Config("trace init delta must be positive".into()));
        }
        Ok(())
    }
}

/// What a driver hands back: the posterior, the trained model when one
/// exists, worker estimates (beta for MF, point theta for CL/Trace), the
/// outer convergence trace, and wall time.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub q: LabelPosterior,
    pub model: Option<ClassifierModel>,
    pub beta: Option<Vec<Mat>>,
    pub theta: Option<Vec<Mat>>,
    pub rounds: usize,
    /// Max absolute posterior change after each outer round.
    pub convergence_trace: Vec<f64>,
    pub wall_time: std::time::Duration,
}

/// Majority vote: `q_i proportional to vote counts`; tasks without votes
/// stay uniform.
pub fn run_mv(graph: &AssignmentGraph) -> LabelPosterior {
    let n = graph.num_tasks();
    let k = graph.num_classes();
    let mut q = Mat::zeros(n, k);
    for a in graph.edges() {
        q[(a.task, a.label)] += 1.0;
    }
    for i in 0..n {
        let row = q.row_mut(i);
        if row.iter().sum::<f64>() == 0.0 {
            row.fill(1.0 / k as f64);
        } else {
            crate::mat::normalize_in_place(row);
        }
    }
    LabelPosterior::new(q)
}

/// Featureless MF or BP: the engine runs once with a uniform feature term.
pub fn run_featureless(dataset: &CrowdDataset, config: &EMConfig) -> Result<RunResult> {
    config.validate()?;
    let start = Instant::now();
    let graph = dataset.graph();
    let k = graph.num_classes();
    let uniform = Mat::filled(graph.num_tasks(), k, 1.0 / k as f64);
    let result = match config.algorithm {
        Algorithm::Mv => RunResult {
            q: run_mv(&graph),
            model: None,
            beta: None,
            theta: None,
            rounds: 1,
            convergence_trace: vec![0.0],
            wall_time: start.elapsed(),
        },
        Algorithm::Mf => {
            let state = mf_infer(&graph, &uniform, &config.prior, config.mf_tol, config.mf_max_iters);
            RunResult {
                q: state.q,
                model: None,
                beta: Some(state.beta),
                theta: None,
                rounds: 1,
                convergence_trace: vec![0.0],
                wall_time: start.elapsed(),
            }
        }
        Algorithm::Bp => {
            let (q, state) = bp_run(
                &graph,
                &uniform,
                &config.prior,
                &config.factor,
                config.bp_sweeps,
                config.bp_tol,
                None,
                config.seed,
            )?;
            RunResult {
                q,
                model: None,
                beta: None,
                theta: None,
                rounds: 1,
                convergence_trace: vec![0.0],
                wall_time: start.elapsed(),
            }
        }
        other => {
            return Err(Error::Config(format!(
                "run_featureless cannot run '{}'",
                other.name()
            )))
        }
    };
    Ok(result)
}

fn require_features(dataset: &CrowdDataset) -> Result<&Mat> {
    dataset.features().ok_or(Error::MissingFeatures)
}

fn new_model(dataset: &CrowdDataset, config: &EMConfig) -> Result<ClassifierModel> {
    let d = require_features(dataset)?.cols();
    Ok(ClassifierModel::new(
        config.classifier.kind,
        d,
        dataset.num_classes(),
        config.classifier.l2_lambda,
        config.classifier.init_scale,
        config.seed,
    ))
}

/// deepMF: alternate a clipped-classifier mean-field E-step with weighted
/// classifier training until the posterior settles.
pub fn run_deep_mf(dataset: &CrowdDataset, config: &EMConfig) -> Result<RunResult> {
    config.validate()?;
    let start = Instant::now();
    let graph = dataset.graph();
    let features = require_features(dataset)?;
    let clip = ClipParam::new(config.clip, dataset.num_classes())?;
    let mut model = new_model(dataset, config)?;
    let mut q_prev: Option<LabelPosterior> = None;
    let mut state: Option<MFState> = None;
    let mut trace = Vec::new();
    let mut rounds = 0;
    for _ in 0..config.outer_rounds {
        rounds += 1;
        let f = clip_probs(&model.predict_proba(features)?, clip);
        let mf = mf_infer(&graph, &f, &config.prior, config.mf_tol, config.mf_max_iters);
        if config.classifier.epochs > 0 {
            model.fit_weighted(features, &mf.q, config.classifier.train_opts())?;
        }
        let delta = q_prev
            .as_ref()
            .map(|p| mf.q.max_abs_diff(p))
            .unwrap_or(f64::INFINITY);
        trace.push(delta);
        q_prev = Some(mf.q.clone());
        state = Some(mf);
        if delta < config.outer_tol {
            break;
        }
    }
    let state = state.expect("outer_rounds >= 1");
    Ok(RunResult {
        q: state.q,
        model: Some(model),
        beta: Some(state.beta),
        theta: None,
        rounds,
        convergence_trace: trace,
        wall_time: start.elapsed(),
    })
}

/// deepBP: alternate a clipped-classifier BP E-step (messages warm-started
/// across rounds unless configured otherwise) with weighted classifier
/// training.
pub fn run_deep_bp(dataset: &CrowdDataset, config: &EMConfig) -> Result<RunResult> {
    config.validate()?;
    let start = Instant::now();
    let graph = dataset.graph();
    let features = require_features(dataset)?;
    let clip = ClipParam::new(config.clip, dataset.num_classes())?;
    let mut model = new_model(dataset, config)?;
    let mut warm: Option<MessageState> = None;
    let mut q_prev: Option<LabelPosterior> = None;
    let mut q_out: Option<LabelPosterior> = None;
    let mut trace = Vec::new();
    let mut rounds = 0;
    for _ in 0..config.outer_rounds {
        rounds += 1;
        let f = clip_probs(&model.predict_proba(features)?, clip);
        let (q, st) = bp_run(
            &graph,
            &f,
            &config.prior,
            &config.factor,
            config.bp_sweeps,
            config.bp_tol,
            if config.bp_cold_start { None } else { warm.take() },
            config.seed,
        )?;
        warm = Some(st);
        if config.classifier.epochs > 0 {
            model.fit_weighted(features, &q, config.classifier.train_opts())?;
        }
        let delta = q_prev
            .as_ref()
            .map(|p| q.max_abs_diff(p))
            .unwrap_or(f64::INFINITY);
        trace.push(delta);
        q_prev = Some(q.clone());
        q_out = Some(q);
        if delta < config.outer_tol {
            break;
        }
    }
    Ok(RunResult {
        q: q_out.expect("outer_rounds >= 1"),
        model: Some(model),
        beta: None,
        theta: None,
        rounds,
        convergence_trace: trace,
        wall_time: start.elapsed(),
    })
}

fn init_point_theta(k: usize, delta: f64) -> Mat {
    // Diagonal logit delta, off-diagonal 0, rows through softmax.
    let mut theta = Mat::zeros(k, k);
    for r in 0..k {
        let row = theta.row_mut(r);
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = if c == r { delta } else { 0.0 };
        }
        softmax_in_place(row);
    }
    theta
}

/// E-step shared by CL and Trace: `q_i(z) proportional to
/// f(z; x_i) prod_u theta^(u)_{z, y}` with point-estimate matrices.
fn point_estimate_q(graph: &AssignmentGraph, f: &Mat, thetas: &[Mat]) -> LabelPosterior {
    let n = graph.num_tasks();
    let k = graph.num_classes();
    let mut q = Mat::zeros(n, k);
    for i in 0..n {
        let row = q.row_mut(i);
        for z in 0..k {
            row[z] = f[(i, z)].max(1e-300).ln();
        }
        for &e in graph.edges_of_task(i) {
            let a = graph.edge(e);
            for z in 0..k {
                row[z] += thetas[a.worker][(z, a.label)].max(1e-300).ln();
            }
        }
        softmax_in_place(row);
    }
    LabelPosterior::new(q)
}

/// Soft confusion counts `counts_{k1 k2} = sum of q_i(k1) over answers k2`.
fn soft_counts(graph: &AssignmentGraph, q: &LabelPosterior, u: usize) -> Mat {
    let k = graph.num_classes();
    let mut counts = Mat::zeros(k, k);
    for &e in graph.edges_of_worker(u) {
        let a = graph.edge(e);
        for k1 in 0..k {
            counts[(k1, a.label)] += q.row(a.task)[k1];
        }
    }
    counts
}

/// CL: EM with point confusion matrices, maximum-likelihood M-step
/// (uniform prior), and a floor before row normalization.
pub fn run_cl(dataset: &CrowdDataset, config: &EMConfig) -> Result<RunResult> {
    config.validate()?;
    let start = Instant::now();
    let graph = dataset.graph();
    let features = require_features(dataset)?;
    let k = dataset.num_classes();
    let clip = ClipParam::new(config.clip, k)?;
    let mut model = new_model(dataset, config)?;
    let mut thetas = vec![init_point_theta(k, config.trace_init_delta); graph.num_workers()];
    let mut q_prev: Option<LabelPosterior> = None;
    let mut q_out: Option<LabelPosterior> = None;
    let mut trace = Vec::new();
    let mut rounds = 0;
    for _ in 0..config.outer_rounds {
        rounds += 1;
        let f = clip_probs(&model.predict_proba(features)?, clip);
        let q = point_estimate_q(&graph, &f, &thetas);
        // M-step: per-worker MLE with an additive floor.
        for (u, theta) in thetas.iter_mut().enumerate() {
            let counts = soft_counts(&graph, &q, u);
            for r in 0..k {
                let row = theta.row_mut(r);
                for (c, slot) in row.iter_mut().enumerate() {
                    *slot = counts[(r, c)] + 1e-6;
                }
                crate::mat::normalize_in_place(row);
            }
        }
        if config.classifier.epochs > 0 {
            model.fit_weighted(features, &q, config.classifier.train_opts())?;
        }
        let delta = q_prev
            .as_ref()
            .map(|p| q.max_abs_diff(p))
            .unwrap_or(f64::INFINITY);
        trace.push(delta);
        q_prev = Some(q.clone());
        q_out = Some(q);
        if delta < config.outer_tol {
            break;
        }
    }
    Ok(RunResult {
        q: q_out.expect("outer_rounds >= 1"),
        model: Some(model),
        beta: None,
        theta: Some(thetas),
        rounds,
        convergence_trace: trace,
        wall_time: start.elapsed(),
    })
}

/// Trace: CL with the M-step objective extended by
/// `-lambda sum_k ln theta_kk`, optimized by gradient steps on per-row
/// softmax logits. `lambda = 0` dispatches to [`run_cl`] exactly.
pub fn run_trace(dataset: &CrowdDataset, config: &EMConfig) -> Result<RunResult> {
    config.validate()?;
    if config.trace_lambda == 0.0 {
        return run_cl(dataset, config);
    }
    let start = Instant::now();
    let graph = dataset.graph();
    let features = require_features(dataset)?;
    let k = dataset.num_classes();
    let clip = ClipParam::new(config.clip, k)?;
    let mut model = new_model(dataset, config)?;
    // Logit parameterization: diagonal delta, off-diagonal 0.
    let mut logits = vec![
        {
            let mut m = Mat::zeros(k, k);
            for r in 0..k {
                m[(r, r)] = config.trace_init_delta;
            }
            m
        };
        graph.num_workers()
    ];
    let softmax_rows = |logits: &Mat| -> Mat {
        let mut theta = logits.clone();
        for r in 0..k {
            softmax_in_place(theta.row_mut(r));
        }
        theta
    };
    let mut q_prev: Option<LabelPosterior> = None;
    let mut q_out: Option<LabelPosterior> = None;
    let mut thetas: Vec<Mat> = logits.iter().map(&softmax_rows).collect();
    let mut trace = Vec::new();
    let mut rounds = 0;
    for _ in 0..config.outer_rounds {
        rounds += 1;
        let f = clip_probs(&model.predict_proba(features)?, clip);
        let q = point_estimate_q(&graph, &f, &thetas);
        // M-step on theta logits: ascend
        // sum counts_{k1 k2} ln theta_{k1 k2} - lambda sum_k ln theta_kk.
        for (u, logit) in logits.iter_mut().enumerate() {
            let counts = soft_counts(&graph, &q, u);
            for _ in 0..config.trace_theta_steps {
                let theta = softmax_rows(logit);
                for r in 0..k {
                    let row_counts = counts.row(r);
                    let total: f64 = row_counts.iter().sum();
                    for c in 0..k {
                        let mut grad = row_counts[c] - total * theta[(r, c)];
                        // d/d logit_c of -lambda ln theta_rr
                        let indicator = if c == r { 1.0 } else { 0.0 };
                        grad -= config.trace_lambda * (indicator - theta[(r, c)]);
                        logit[(r, c)] += config.trace_theta_lr * grad;
                    }
                }
            }
        }
        thetas = logits.iter().map(&softmax_rows).collect();
        if config.classifier.epochs > 0 {
            model.fit_weighted(features, &q, config.classifier.train_opts())?;
        }
        let delta = q_prev
            .as_ref()
            .map(|p| q.max_abs_diff(p))
            .unwrap_or(f64::INFINITY);
        trace.push(delta);
        q_prev = Some(q.clone());
        q_out = Some(q);
        if delta < config.outer_tol {
            break;
        }
    }
    Ok(RunResult {
        q: q_out.expect("outer_rounds >= 1"),
        model: Some(model),
        beta: None,
        theta: Some(thetas),
        rounds,
        convergence_trace: trace,
        wall_time: start.elapsed(),
    })
}

/// Dispatches the configured algorithm.
pub fn run(dataset: &CrowdDataset, config: &EMConfig) -> Result<RunResult> {
    match config.algorithm {
        Algorithm::Mv | Algorithm::Mf | Algorithm::Bp => run_featureless(dataset, config),
        Algorithm::DeepMf => run_deep_mf(dataset, config),
        Algorithm::DeepBp => run_deep_bp(dataset, config),
        Algorithm::Cl => run_cl(dataset, config),
        Algorithm::Trace => run_trace(dataset, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{denoised_accuracy, Answer};
    use crate::synth::{generate, ScenarioSpec};

    fn dataset(
        n: usize,
        k: usize,
        m: usize,
        answers: &[(usize, usize, usize)],
        features: Option<Mat>,
    ) -> CrowdDataset {
        CrowdDataset::new(
            n,
            k,
            m,
            answers
                .iter()
                .map(|&(task, worker, label)| Answer {
                    task,
                    worker,
                    label,
                })
                .collect(),
            features,
            None,
        )
        .unwrap()
    }

    #[test]
    fn mv_counts_votes() {
        let d = dataset(1, 2, 3, &[(0, 0, 0), (0, 1, 0), (0, 2, 1)], None);
        let q = run_mv(&d.graph());
        assert!((q.row(0)[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mv_no_votes_uniform_and_tie_break() {
        let d = dataset(2, 2, 2, &[(0, 0, 0), (0, 1, 1)], None);
        let q = run_mv(&d.graph());
        assert_eq!(q.row(0), &[0.5, 0.5]);
        assert_eq!(q.row(1), &[0.5, 0.5]);
        assert_eq!(crate::data::argmax_labels(&q), vec![0, 0]);
    }

    #[test]
    fn featureless_symmetric_prior_uniform_q() {
        let d = dataset(2, 2, 2, &[(0, 0, 0), (1, 0, 1), (0, 1, 1), (1, 1, 0)], None);
        let config = EMConfig::new(Algorithm::Bp, WorkerPrior::one_coin(1.0, 1.0), 0);
        let r = run_featureless(&d, &config).unwrap();
        for i in 0..2 {
            assert!((r.q.row(i)[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn featureless_single_perfect_worker_follows_answers() {
        let d = dataset(2, 2, 1, &[(0, 0, 1), (1, 0, 0)], None);
        let config = EMConfig::new(Algorithm::Bp, WorkerPrior::one_coin(1e6, 1.0), 0);
        let r = run_featureless(&d, &config).unwrap();
        assert!(r.q.row(0)[1] > 0.99);
        assert!(r.q.row(1)[0] > 0.99);
    }

    fn perfect_scenario(seed: u64) -> crate::synth::Scenario {
        let mut spec = ScenarioSpec::new(60, 40, 2, 2, 3, WorkerPrior::one_coin(1e6, 1.0), seed);
        spec.feature_separation = 6.0;
        spec.feature_dim = 2;
        spec.test_tasks = 300;
        generate(&spec).unwrap()
    }

    #[test]
    fn deep_mf_perfect_workers_and_separable_features() {
        let sc = perfect_scenario(5);
        let mut config = EMConfig::new(Algorithm::DeepMf, WorkerPrior::one_coin(1e6, 1.0), 5);
        config.classifier.epochs = 150;
        let r = run_deep_mf(&sc.train, &config).unwrap();
        let acc = denoised_accuracy(&r.q, sc.train.truth().unwrap()).unwrap();
        assert_eq!(acc, 1.0);
        let test_acc = crate::classifier::test_accuracy(
            r.model.as_ref().unwrap(),
            &sc.test_features,
            &sc.test_truth,
        )
        .unwrap();
        assert!(test_acc >= 0.95, "test accuracy {test_acc}");
    }

    #[test]
    fn deep_bp_perfect_workers() {
        let sc = perfect_scenario(7);
        let mut config = EMConfig::new(Algorithm::DeepBp, WorkerPrior::one_coin(1e6, 1.0), 7);
        config.classifier.epochs = 150;
        let r = run_deep_bp(&sc.train, &config).unwrap();
        assert_eq!(
            denoised_accuracy(&r.q, sc.train.truth().unwrap()).unwrap(),
            1.0
        );
    }

    #[test]
    fn deep_reduction_to_featureless_is_bitwise() {
        // Zero-init classifier + zero epochs + one round must reproduce the
        // featureless engines exactly.
        let mut spec = ScenarioSpec::new(40, 20, 2, 2, 4, WorkerPrior::one_coin(2.0, 1.0), 11);
        spec.feature_separation = 1.0;
        let sc = generate(&spec).unwrap();

        let mut config = EMConfig::new(Algorithm::DeepMf, WorkerPrior::one_coin(2.0, 1.0), 11);
        config.classifier.epochs = 0;
        config.classifier.init_scale = 0.0;
        config.outer_rounds = 1;
        let deep = run_deep_mf(&sc.train, &config).unwrap();
        let mut fl = config.clone();
        fl.algorithm = Algorithm::Mf;
        let featureless = run_featureless(&sc.train, &fl).unwrap();
        assert_eq!(deep.q.matrix().as_slice(), featureless.q.matrix().as_slice());

        config.algorithm = Algorithm::DeepBp;
        let deep = run_deep_bp(&sc.train, &config).unwrap();
        let mut fl = config.clone();
        fl.algorithm = Algorithm::Bp;
        let featureless = run_featureless(&sc.train, &fl).unwrap();
        assert_eq!(deep.q.matrix().as_slice(), featureless.q.matrix().as_slice());
    }

    #[test]
    fn cl_uniform_theta_returns_f() {
        // With clipping off, theta fixed at uniform rows carries no
        // information, so the E-step must return the classifier rows.
        let feats = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let d = dataset(2, 2, 1, &[(0, 0, 0), (1, 0, 1)], Some(feats.clone()));
        let graph = d.graph();
        let model = ClassifierModel::new(ClassifierKind::Logistic, 2, 2, 0.0, 0.1, 3);
        let f = model.predict_proba(&feats).unwrap();
        let thetas = vec![Mat::filled(2, 2, 0.5); 1];
        let q = point_estimate_q(&graph, &f, &thetas);
        assert!(q.matrix().max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn cl_recovers_truth_with_perfect_workers() {
        let sc = perfect_scenario(9);
        let mut config = EMConfig::new(Algorithm::Cl, WorkerPrior::one_coin(1e6, 1.0), 9);
        config.classifier.epochs = 150;
        let r = run_cl(&sc.train, &config).unwrap();
        assert_eq!(
            denoised_accuracy(&r.q, sc.train.truth().unwrap()).unwrap(),
            1.0
        );
    }

    #[test]
    fn trace_lambda_zero_is_cl_bitwise() {
        let sc = perfect_scenario(13);
        let mut config = EMConfig::new(Algorithm::Trace, WorkerPrior::one_coin(2.0, 1.0), 13);
        config.trace_lambda = 0.0;
        config.classifier.epochs = 40;
        config.outer_rounds = 5;
        let t = run_trace(&sc.train, &config).unwrap();
        config.algorithm = Algorithm::Cl;
        let c = run_cl(&sc.train, &config).unwrap();
        assert_eq!(t.q.matrix().as_slice(), c.q.matrix().as_slice());
        assert_eq!(
            t.model.as_ref().unwrap().params,
            c.model.as_ref().unwrap().params
        );
    }

    #[test]
    fn trace_large_lambda_pushes_diagonals_down() {
        let sc = perfect_scenario(17);
        let mut config = EMConfig::new(Algorithm::Trace, WorkerPrior::one_coin(2.0, 1.0), 17);
        config.classifier.epochs = 20;
        config.outer_rounds = 3;
        config.trace_lambda = 1e-9; // effectively CL but through the gradient path
        let lo = run_trace(&sc.train, &config).unwrap();
        config.trace_lambda = 1e3;
        let hi = run_trace(&sc.train, &config).unwrap();
        let mean_diag = |r: &RunResult| {
            let thetas = r.theta.as_ref().unwrap();
            let mut acc = 0.0;
            for t in thetas {
                for k in 0..2 {
                    acc += t[(k, k)];
                }
            }
            acc / (2.0 * thetas.len() as f64)
        };
        assert!(
            mean_diag(&hi) < mean_diag(&lo) - 0.05,
            "lambda did not push diagonals down: {} vs {}",
            mean_diag(&hi),
            mean_diag(&lo)
        );
    }

    #[test]
    fn trace_rejects_negative_lambda() {
        let sc = perfect_scenario(19);
        let mut config = EMConfig::new(Algorithm::Trace, WorkerPrior::one_coin(2.0, 1.0), 19);
        config.trace_lambda = -0.5;
        assert!(run_trace(&sc.train, &config).is_err());
    }

    #[test]
    fn drivers_are_deterministic() {
        let sc = perfect_scenario(23);
        let mut config = EMConfig::new(Algorithm::DeepBp, WorkerPrior::one_coin(2.0, 1.0), 23);
        config.classifier.epochs = 30;
        config.outer_rounds = 3;
        let a = run(&sc.train, &config).unwrap();
        let b = run(&sc.train, &config).unwrap();
        assert_eq!(a.q.matrix().as_slice(), b.q.matrix().as_slice());
        assert_eq!(
            a.model.as_ref().unwrap().params,
            b.model.as_ref().unwrap().params
        );
    }

    #[test]
    fn deep_drivers_require_features() {
        let d = dataset(2, 2, 1, &[(0, 0, 0), (1, 0, 1)], None);
        let config = EMConfig::new(Algorithm::DeepMf, WorkerPrior::one_coin(2.0, 1.0), 1);
        assert!(matches!(
            run_deep_mf(&d, &config),
            Err(Error::MissingFeatures)
        ));
        assert!(matches!(
            run_deep_bp(&d, &config),
            Err(Error::MissingFeatures)
        ));
    }
}
