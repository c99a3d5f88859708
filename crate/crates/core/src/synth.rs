//! Synthetic crowdsourcing scenarios: (l, r)-regular assignment graphs,
//! coin-model workers, uniform-spammer injection, and class-conditional
//! Gaussian features with a controllable separation knob.
//!
//! Everything is a pure function of the scenario seed; sub-streams are
//! derived per stage so regenerating a spec is bit-identical.

use crate::data::{Answer, CrowdDataset};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::priors::WorkerPrior;
use crate::seed::derive;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Full description of a synthetic scenario.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub num_tasks: usize,
    pub num_workers: usize,
    pub num_classes: usize,
    /// Workers per task (l).
    pub workers_per_task: usize,
    /// Tasks per worker (r).
    pub tasks_per_worker: usize,
    pub prior: WorkerPrior,
    pub n_spammers: usize,
    pub feature_dim: usize,
    /// Class-mean separation s; 0 collapses all classes (pure noise).
    pub feature_separation: f64,
    /// Held-out tasks for classifier evaluation.
    pub test_tasks: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(
        num_tasks: usize,
        num_workers: usize,
        num_classes: usize,
        workers_per_task: usize,
        tasks_per_worker: usize,
        prior: WorkerPrior,
        seed: u64,
    ) -> Self {
        ScenarioSpec {
            num_tasks,
            num_workers,
            num_classes,
            workers_per_task,
            tasks_per_worker,
            prior,
            n_spammers: 0,
            feature_dim: 2,
            feature_separation: 0.0,
            test_tasks: 1000,
            seed,
        }
    }
}

/// A generated scenario: the training dataset (answers, features, truth)
/// plus a held-out feature set for test accuracy.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub train: CrowdDataset,
    pub test_features: Mat,
    pub test_truth: Vec<usize>,
}

/// Samples an (l, r)-regular bipartite graph by the configuration model:
/// l task stubs against r worker stubs, shuffled, rejecting any pairing
/// that repeats a (task, worker) edge. Returns edges sorted by
/// (task, worker).
pub fn gen_bipartite(
    num_tasks: usize,
    l: usize,
    num_workers: usize,
    r: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if num_tasks * l != num_workers * r {
        return Err(Error::InfeasibleGraph(format!(
            "N*l = {} but M*r = {}",
            num_tasks * l,
            num_workers * r
        )));
    }
    if l > num_workers || r > num_tasks {
        return Err(Error::InfeasibleGraph(format!(
            "degree exceeds the opposite side: l={l} > M={num_workers} or r={r} > N={num_tasks}"
        )));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let task_stubs: Vec<usize> = (0..num_tasks)
        .flat_map(|t| std::iter::repeat(t).take(l))
        .collect();
    let mut worker_stubs: Vec<usize> = (0..num_workers)
        .flat_map(|w| std::iter::repeat(w).take(r))
        .collect();
    worker_stubs.shuffle(&mut rng);
    // Duplicate (task, worker) pairs are repaired by reshuffling the
    // offending stubs against random positions; degrees stay exact.
    let mut seen = std::collections::HashSet::with_capacity(task_stubs.len());
    for _pass in 0..10_000 {
        seen.clear();
        let mut bad: Vec<usize> = Vec::new();
        for (pos, (&t, &w)) in task_stubs.iter().zip(&worker_stubs).enumerate() {
            if !seen.insert((t, w)) {
                bad.push(pos);
            }
        }
        if bad.is_empty() {
            let mut edges: Vec<(usize, usize)> = task_stubs
                .iter()
                .zip(&worker_stubs)
                .map(|(&t, &w)| (t, w))
                .collect();
            edges.sort_unstable();
            return Ok(edges);
        }
        for pos in bad {
            let other = rng.gen_range(0..worker_stubs.len());
            worker_stubs.swap(pos, other);
        }
    }
    Err(Error::InfeasibleGraph(
        "duplicate pairs persisted through 10000 repair passes".into(),
    ))
}

/// Draws one confusion matrix per worker and then one answer per edge from
/// the matrix row of the task's true label.
pub fn sample_answers(
    edges: &[(usize, usize)],
    truth: &[usize],
    prior: &WorkerPrior,
    num_workers: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<Answer>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let thetas: Vec<Mat> = (0..num_workers)
        .map(|_| prior.sample_confusion(num_classes, &mut rng).map(|c| c.0))
        .collect::<Result<_>>()?;
    let mut answers = Vec::with_capacity(edges.len());
    for &(task, worker) in edges {
        let row = thetas[worker].row(truth[task]);
        let label = sample_categorical(row, &mut rng);
        answers.push(Answer {
            task,
            worker,
            label,
        });
    }
    Ok(answers)
}

fn sample_categorical<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Appends `n` extreme spammers: new workers answering every task
/// uniformly at random.
pub fn inject_spammers(dataset: &CrowdDataset, n: usize, seed: u64) -> Result<CrowdDataset> {
    if n == 0 {
        return Ok(dataset.clone());
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let k = dataset.num_classes();
    let m = dataset.num_workers();
    let mut answers = dataset.answers().to_vec();
    for s in 0..n {
        for task in 0..dataset.num_tasks() {
            answers.push(Answer {
                task,
                worker: m + s,
                label: rng.gen_range(0..k),
            });
        }
    }
    CrowdDataset::new(
        dataset.num_tasks(),
        k,
        m + n,
        answers,
        dataset.features().cloned(),
        dataset.truth().map(|t| t.to_vec()),
    )
}

/// Class-conditional spherical Gaussian features: class k's mean is `s`
/// times the k-th standard basis vector (pairwise mean distance
/// `s * sqrt(2)`), unit variance. `s = 0` collapses every class onto the
/// origin, making the features pure noise.
pub fn gen_features(
    truth: &[usize],
    num_classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Mat> {
    if dim == 0 {
        return Err(Error::Config("feature_dim must be at least 1".into()));
    }
    if separation > 0.0 && dim < num_classes {
        return Err(Error::Config(format!(
            "feature_dim {dim} must be >= num_classes {num_classes} when separation > 0"
        )));
    }
    if separation < 0.0 {
        return Err(Error::Config("separation must be nonnegative".into()));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut out = Mat::zeros(truth.len(), dim);
    for (i, &z) in truth.iter().enumerate() {
        let row = out.row_mut(i);
        for slot in row.iter_mut() {
            *slot = StandardNormal.sample(&mut rng);
        }
        if separation > 0.0 {
            row[z] += separation;
        }
    }
    Ok(out)
}

/// Generates the full scenario: truth, graph, answers, spammers, features,
/// and the held-out test set, each from its own derived seed stream.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.prior.validate(spec.num_classes)?;
    let truth_seed = derive(spec.seed, 0);
    let graph_seed = derive(spec.seed, 1);
    let answer_seed = derive(spec.seed, 2);
    let feature_seed = derive(spec.seed, 3);
    let spam_seed = derive(spec.seed, 4);
    let test_seed = derive(spec.seed, 5);

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(truth_seed);
    let truth: Vec<usize> = (0..spec.num_tasks)
        .map(|_| rng.gen_range(0..spec.num_classes))
        .collect();

    let edges = gen_bipartite(
        spec.num_tasks,
        spec.workers_per_task,
        spec.num_workers,
        spec.tasks_per_worker,
        graph_seed,
    )?;
    let answers = sample_answers(
        &edges,
        &truth,
        &spec.prior,
        spec.num_workers,
        spec.num_classes,
        answer_seed,
    )?;
    let features = gen_features(
        &truth,
        spec.num_classes,
        spec.feature_dim,
        spec.feature_separation,
        feature_seed,
    )?;

    let train = CrowdDataset::new(
        spec.num_tasks,
        spec.num_classes,
        spec.num_workers,
        answers,
        Some(features),
        Some(truth),
    )?;
    let train = inject_spammers(&train, spec.n_spammers, spam_seed)?;

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive(test_seed, 0));
    let test_truth: Vec<usize> = (0..spec.test_tasks)
        .map(|_| rng.gen_range(0..spec.num_classes))
        .collect();
    let test_features = gen_features(
        &test_truth,
        spec.num_classes,
        spec.feature_dim,
        spec.feature_separation,
        derive(test_seed, 1),
    )?;

    Ok(Scenario {
        train,
        test_features,
        test_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_graph_degrees_exact() {
        let edges = gen_bipartite(1000, 3, 750, 4, 7).unwrap();
        assert_eq!(edges.len(), 3000);
        let mut task_deg = vec![0usize; 1000];
        let mut worker_deg = vec![0usize; 750];
        let mut seen = std::collections::HashSet::new();
        for &(t, w) in &edges {
            task_deg[t] += 1;
            worker_deg[w] += 1;
            assert!(seen.insert((t, w)), "duplicate edge ({t}, {w})");
        }
        assert!(task_deg.iter().all(|&d| d == 3));
        assert!(worker_deg.iter().all(|&d| d == 4));
    }

    #[test]
    fn single_edge_graph() {
        assert_eq!(gen_bipartite(1, 1, 1, 1, 0).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn infeasible_degrees_rejected() {
        assert!(gen_bipartite(2, 2, 1, 3, 0).is_err());
        // Forced duplicates: one worker must take every stub of one task.
        assert!(gen_bipartite(1, 2, 1, 2, 0).is_err());
    }

    #[test]
    fn graph_deterministic_per_seed() {
        assert_eq!(
            gen_bipartite(50, 3, 30, 5, 11).unwrap(),
            gen_bipartite(50, 3, 30, 5, 11).unwrap()
        );
        assert_ne!(
            gen_bipartite(50, 3, 30, 5, 11).unwrap(),
            gen_bipartite(50, 3, 30, 5, 12).unwrap()
        );
    }

    #[test]
    fn near_perfect_workers_echo_truth() {
        let edges = gen_bipartite(100, 3, 75, 4, 3).unwrap();
        let truth: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let prior = WorkerPrior::one_coin(1e6, 1.0);
        let answers = sample_answers(&edges, &truth, &prior, 75, 2, 5).unwrap();
        let wrong = answers.iter().filter(|a| a.label != truth[a.task]).count();
        assert_eq!(wrong, 0);
    }

    #[test]
    fn uniform_prior_worker_accuracies_spread() {
        // Beta(1,1) correctness: per-worker empirical accuracies should
        // span (0,1); check the mean is near 1/2 and both tails populated.
        let n = 600;
        let m = 200;
        let edges = gen_bipartite(n, 2, m, 6, 9).unwrap();
        let truth: Vec<usize> = (0..n).map(|i| (i * 7) % 2).collect();
        let prior = WorkerPrior::one_coin(1.0, 1.0);
        let answers = sample_answers(&edges, &truth, &prior, m, 2, 13).unwrap();
        let mut hits = vec![0usize; m];
        let mut tot = vec![0usize; m];
        for a in &answers {
            tot[a.worker] += 1;
            if a.label == truth[a.task] {
                hits[a.worker] += 1;
            }
        }
        let accs: Vec<f64> = (0..m).map(|u| hits[u] as f64 / tot[u] as f64).collect();
        let mean: f64 = accs.iter().sum::<f64>() / m as f64;
        assert!((mean - 0.5).abs() < 0.06, "mean accuracy {mean}");
        let lo = accs.iter().filter(|&&a| a < 0.34).count();
        let hi = accs.iter().filter(|&&a| a > 0.66).count();
        assert!(lo > m / 8 && hi > m / 8, "spread lo={lo} hi={hi}");
    }

    #[test]
    fn answers_deterministic() {
        let edges = gen_bipartite(20, 2, 10, 4, 1).unwrap();
        let truth = vec![0usize; 20];
        let prior = WorkerPrior::one_coin(2.0, 1.0);
        let a = sample_answers(&edges, &truth, &prior, 10, 2, 77).unwrap();
        let b = sample_answers(&edges, &truth, &prior, 10, 2, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spammers_append_uniform_answers() {
        let spec = ScenarioSpec::new(200, 100, 2, 2, 4, WorkerPrior::one_coin(2.0, 1.0), 3);
        let sc = generate(&spec).unwrap();
        let base = sc.train;
        let spammed = inject_spammers(&base, 2, 99).unwrap();
        assert_eq!(spammed.num_workers(), 102);
        assert_eq!(spammed.answers().len(), base.answers().len() + 2 * 200);
        // Per-class frequency near 1/K for the spammer block.
        let spam_answers: Vec<_> = spammed
            .answers()
            .iter()
            .filter(|a| a.worker >= 100)
            .collect();
        let zeros = spam_answers.iter().filter(|a| a.label == 0).count();
        let f = zeros as f64 / spam_answers.len() as f64;
        assert!((f - 0.5).abs() < 0.08, "class-0 frequency {f}");
        // Spammer accuracy within a few points of chance.
        let truth = spammed.truth().unwrap();
        let hits = spam_answers
            .iter()
            .filter(|a| a.label == truth[a.task])
            .count();
        let acc = hits as f64 / spam_answers.len() as f64;
        assert!((acc - 0.5).abs() < 0.08, "spammer accuracy {acc}");
    }

    #[test]
    fn inject_zero_is_identity() {
        let spec = ScenarioSpec::new(10, 5, 2, 1, 2, WorkerPrior::one_coin(2.0, 1.0), 3);
        let sc = generate(&spec).unwrap();
        let same = inject_spammers(&sc.train, 0, 1).unwrap();
        assert_eq!(same.answers(), sc.train.answers());
        assert_eq!(same.num_workers(), sc.train.num_workers());
    }

    #[test]
    fn noise_features_carry_no_signal() {
        let truth: Vec<usize> = (0..500).map(|i| i % 2).collect();
        let f = gen_features(&truth, 2, 3, 0.0, 21).unwrap();
        // Class-conditional means should coincide near 0.
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        for (i, &z) in truth.iter().enumerate() {
            if z == 0 {
                m0 += f[(i, 0)];
            } else {
                m1 += f[(i, 0)];
            }
        }
        m0 /= 250.0;
        m1 /= 250.0;
        assert!(
            (m0 - m1).abs() < 0.3,
            "noise features separated: {m0} vs {m1}"
        );
    }

    #[test]
    fn separated_features_are_linearly_learnable() {
        use crate::classifier::{test_accuracy, ClassifierKind, ClassifierModel, TrainOpts};
        let truth: Vec<usize> = (0..2000).map(|i| i % 2).collect();
        let f = gen_features(&truth, 2, 2, 6.0, 33).unwrap();
        let mut onehot = Mat::zeros(2000, 2);
        for (i, &z) in truth.iter().enumerate() {
            onehot[(i, z)] = 1.0;
        }
        let q = crate::data::LabelPosterior::new(onehot);
        let mut model = ClassifierModel::new(ClassifierKind::Logistic, 2, 2, 0.0, 0.1, 5);
        model
            .fit_weighted(
                &f,
                &q,
                TrainOpts {
                    epochs: 300,
                    learning_rate: 0.5,
                    ..Default::default()
                },
            )
            .unwrap();
        let test_truth: Vec<usize> = (0..2000).map(|i| (i * 13) % 2).collect();
        let test_f = gen_features(&test_truth, 2, 2, 6.0, 34).unwrap();
        let acc = test_accuracy(&model, &test_f, &test_truth).unwrap();
        assert!(acc >= 0.98, "test accuracy {acc}");
    }

    #[test]
    fn separation_requires_enough_dims() {
        let truth = vec![0usize, 1, 2];
        assert!(gen_features(&truth, 3, 2, 1.0, 0).is_err());
        assert!(gen_features(&truth, 3, 2, 0.0, 0).is_ok());
    }

    #[test]
    fn full_pipeline_deterministic() {
        let mut spec = ScenarioSpec::new(120, 60, 2, 2, 4, WorkerPrior::one_coin(2.0, 1.0), 42);
        spec.feature_separation = 2.0;
        spec.n_spammers = 1;
        spec.test_tasks = 50;
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.train.answers(), b.train.answers());
        assert_eq!(a.train.truth(), b.train.truth());
        assert!(
            a.train
                .features()
                .unwrap()
                .max_abs_diff(b.train.features().unwrap())
                == 0.0
        );
        assert_eq!(a.test_truth, b.test_truth);
        assert!(a.test_features.max_abs_diff(&b.test_features) == 0.0);
    }
}
