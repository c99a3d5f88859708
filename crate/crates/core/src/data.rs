//! Core data model: datasets, the bipartite assignment graph, label
//! posteriors, and metric containers.
//!
//! All types are immutable after construction and safe to share across
//! threads. Ground-truth labels ride along inside [`CrowdDataset`] for
//! evaluation but the inference engines only ever see the
//! [`AssignmentGraph`] and feature matrix, so truth cannot leak into them.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// One worker answer: worker `worker` labeled task `task` with class `label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Answer {
    pub task: usize,
    pub worker: usize,
    pub label: usize,
}

/// A crowdsourced dataset: `num_tasks` tasks, `num_workers` workers, and a
/// sparse answer list over `num_classes` classes. Features and ground truth
/// are optional; truth is used only by evaluation code.
#[derive(Debug, Clone)]
pub struct CrowdDataset {
    num_tasks: usize,
    num_classes: usize,
    num_workers: usize,
    answers: Vec<Answer>,
    features: Option<Mat>,
    truth: Option<Vec<usize>>,
}

impl CrowdDataset {
    pub fn new(
        num_tasks: usize,
        num_classes: usize,
        num_workers: usize,
        answers: Vec<Answer>,
        features: Option<Mat>,
        truth: Option<Vec<usize>>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Data("num_classes must be positive".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(answers.len());
        for a in &answers {
            if a.task >= num_tasks {
                return Err(Error::Data(format!(
                    "task id {} out of range (num_tasks = {num_tasks})",
                    a.task
                )));
            }
            if a.worker >= num_workers {
                return Err(Error::Data(format!(
                    "worker id {} out of range (num_workers = {num_workers})",
                    a.worker
                )));
            }
            if a.label >= num_classes {
                return Err(Error::Data(format!(
                    "label {} out of range (num_classes = {num_classes})",
                    a.label
                )));
            }
            if !seen.insert((a.task, a.worker)) {
                return Err(Error::Data(format!(
                    "duplicate (task, worker) pair ({}, {})",
                    a.task, a.worker
                )));
            }
        }
        if let Some(f) = &features {
            if f.rows() != num_tasks {
                return Err(Error::Data(format!(
                    "feature matrix has {} rows, expected {num_tasks}",
                    f.rows()
                )));
            }
        }
        if let Some(t) = &truth {
            if t.len() != num_tasks {
                return Err(Error::Data(format!(
                    "truth vector has length {}, expected {num_tasks}",
                    t.len()
                )));
            }
            if let Some(&bad) = t.iter().find(|&&z| z >= num_classes) {
                return Err(Error::Data(format!(
                    "truth label {bad} out of range (num_classes = {num_classes})"
                )));
            }
        }
        Ok(CrowdDataset {
            num_tasks,
            num_classes,
            num_workers,
            answers,
            features,
            truth,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_workers(&self) -> usize {
        self.num_workers
    }

    pub fn answers(&self) -> &[Answer] {
        &self.answers
    }

    pub fn features(&self) -> Option<&Mat> {
        self.features.as_ref()
    }

    pub fn truth(&self) -> Option<&[usize]> {
        self.truth.as_deref()
    }

    pub fn require_truth(&self) -> Result<&[usize]> {
        self.truth.as_deref().ok_or(Error::MissingTruth)
    }

    /// Builds the bipartite assignment graph over the answer triples.
    pub fn graph(&self) -> AssignmentGraph {
        AssignmentGraph::new(
            self.num_tasks,
            self.num_classes,
            self.num_workers,
            self.answers.clone(),
        )
    }
}

/// Bipartite task-worker adjacency over the answer triples. Edge ids index
/// into `edges`; per-task and per-worker lists hold edge ids and are exact
/// transposes of each other.
#[derive(Debug, Clone)]
pub struct AssignmentGraph {
    num_tasks: usize,
    num_classes: usize,
    num_workers: usize,
    edges: Vec<Answer>,
    workers_of_task: Vec<Vec<usize>>,
    tasks_of_worker: Vec<Vec<usize>>,
}

impl AssignmentGraph {
    pub fn new(
        num_tasks: usize,
        num_classes: usize,
        num_workers: usize,
        edges: Vec<Answer>,
    ) -> Self {
        let mut workers_of_task = vec![Vec::new(); num_tasks];
        let mut tasks_of_worker = vec![Vec::new(); num_workers];
        for (e, a) in edges.iter().enumerate() {
            workers_of_task[a.task].push(e);
            tasks_of_worker[a.worker].push(e);
        }
        AssignmentGraph {
            num_tasks,
            num_classes,
            num_workers,
            edges,
            workers_of_task,
            tasks_of_worker,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_workers(&self) -> usize {
        self.num_workers
    }

    pub fn edges(&self) -> &[Answer] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> Answer {
        self.edges[e]
    }

    /// Edge ids of the workers who labeled task `i`.
    pub fn edges_of_task(&self, i: usize) -> &[usize] {
        &self.workers_of_task[i]
    }

    /// Edge ids of the tasks labeled by worker `u`.
    pub fn edges_of_worker(&self, u: usize) -> &[usize] {
        &self.tasks_of_worker[u]
    }

    pub fn worker_degree(&self, u: usize) -> usize {
        self.tasks_of_worker[u].len()
    }
}

/// Per-task categorical posterior over classes; each row lies on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPosterior {
    q: Mat,
}

impl LabelPosterior {
    /// Wraps a matrix whose rows are already normalized. Debug builds verify
    /// the simplex invariant at 1e-9.
    pub fn new(q: Mat) -> Self {
        debug_assert!(
            q.row_iter().all(|row| {
                let s: f64 = row.iter().sum();
                (s - 1.0).abs() < 1e-9 && row.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x))
            }),
            "posterior rows must lie on the simplex"
        );
        LabelPosterior { q }
    }

    pub fn uniform(num_tasks: usize, num_classes: usize) -> Self {
        LabelPosterior {
            q: Mat::filled(num_tasks, num_classes, 1.0 / num_classes as f64),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.q.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.q.cols()
    }

    pub fn matrix(&self) -> &Mat {
        &self.q
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.q.row(i)
    }

    pub fn max_abs_diff(&self, other: &LabelPosterior) -> f64 {
        self.q.max_abs_diff(&other.q)
    }
}

/// Index of the largest entry; ties break to the lowest class index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Per-task hard labels from a posterior, ties broken to the lowest class.
pub fn argmax_labels(q: &LabelPosterior) -> Vec<usize> {
    (0..q.num_tasks()).map(|i| argmax_row(q.row(i))).collect()
}

/// Fraction of tasks whose argmax label equals the ground truth.
pub fn denoised_accuracy(q: &LabelPosterior, truth: &[usize]) -> Result<f64> {
    if truth.len() != q.num_tasks() {
        return Err(Error::Data(format!(
            "truth length {} does not match {} tasks",
            truth.len(),
            q.num_tasks()
        )));
    }
    if truth.is_empty() {
        return Err(Error::MissingTruth);
    }
    let hits = argmax_labels(q)
        .iter()
        .zip(truth)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Metrics emitted by the experiment harness for one run or one battery.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MetricsReport {
    pub denoised_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub per_seed_denoised: Vec<f64>,
    pub per_seed_test: Vec<f64>,
    /// 10-bin histogram of q(z = 0); bin counts sum to the number of tasks.
    pub marginal_histogram: Vec<usize>,
    pub sorted_worst_accuracies: Vec<f64>,
}

impl MetricsReport {
    pub fn from_run(q: &LabelPosterior, truth: &[usize], test_accuracy: Option<f64>) -> Result<Self> {
        let acc = denoised_accuracy(q, truth)?;
        Ok(MetricsReport {
            denoised_accuracy: acc,
            test_accuracy,
            per_seed_denoised: vec![acc],
            per_seed_test: test_accuracy.into_iter().collect(),
            marginal_histogram: marginal_histogram(q),
            sorted_worst_accuracies: vec![acc],
        })
    }
}

/// 10-bin histogram of the class-0 marginal; the last bin is closed at 1.
pub fn marginal_histogram(q: &LabelPosterior) -> Vec<usize> {
    let mut bins = vec![0usize; 10];
    for i in 0..q.num_tasks() {
        let p0 = q.row(i)[0];
        let b = ((p0 * 10.0).floor() as usize).min(9);
        bins[b] += 1;
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;

    fn posterior(rows: &[Vec<f64>]) -> LabelPosterior {
        LabelPosterior::new(Mat::from_rows(rows))
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let q = posterior(&[vec![0.7, 0.3], vec![0.5, 0.5], vec![0.2, 0.8]]);
        assert_eq!(argmax_labels(&q), vec![0, 0, 1]);
    }

    #[test]
    fn argmax_two_rows() {
        let q = posterior(&[vec![0.2, 0.8], vec![0.9, 0.1]]);
        assert_eq!(argmax_labels(&q), vec![1, 0]);
    }

    #[test]
    fn accuracy_perfect_and_partial() {
        let q = posterior(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ]);
        assert_eq!(denoised_accuracy(&q, &[0, 1, 1, 0]).unwrap(), 1.0);
        assert_eq!(denoised_accuracy(&q, &[0, 1, 0, 0]).unwrap(), 0.75);
    }

    #[test]
    fn accuracy_uniform_tie_break() {
        let q = LabelPosterior::uniform(4, 2);
        assert_eq!(denoised_accuracy(&q, &[0, 0, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_rejects_length_mismatch() {
        let q = LabelPosterior::uniform(3, 2);
        assert!(denoised_accuracy(&q, &[0]).is_err());
    }

    #[test]
    fn dataset_validation() {
        let ans = vec![Answer {
            task: 0,
            worker: 0,
            label: 2,
        }];
        assert!(CrowdDataset::new(1, 2, 1, ans, None, None).is_err());

        let dup = vec![
            Answer {
                task: 0,
                worker: 0,
                label: 0,
            },
            Answer {
                task: 0,
                worker: 0,
                label: 1,
            },
        ];
        assert!(CrowdDataset::new(1, 2, 1, dup, None, None).is_err());
    }

    #[test]
    fn graph_is_transpose_consistent() {
        let ans = vec![
            Answer {
                task: 0,
                worker: 0,
                label: 0,
            },
            Answer {
                task: 1,
                worker: 0,
                label: 1,
            },
            Answer {
                task: 1,
                worker: 1,
                label: 0,
            },
        ];
        let g = AssignmentGraph::new(2, 2, 2, ans);
        let total_by_task: usize = (0..2).map(|i| g.edges_of_task(i).len()).sum();
        let total_by_worker: usize = (0..2).map(|u| g.edges_of_worker(u).len()).sum();
        assert_eq!(total_by_task, 3);
        assert_eq!(total_by_worker, 3);
        for i in 0..2 {
            for &e in g.edges_of_task(i) {
                assert_eq!(g.edge(e).task, i);
            }
        }
        for u in 0..2 {
            for &e in g.edges_of_worker(u) {
                assert_eq!(g.edge(e).worker, u);
            }
        }
    }

    #[test]
    fn histogram_sums_to_n() {
        let q = posterior(&[vec![0.05, 0.95], vec![0.5, 0.5], vec![1.0, 0.0]]);
        let h = marginal_histogram(&q);
        assert_eq!(h.iter().sum::<usize>(), 3);
        assert_eq!(h[0], 1);
        assert_eq!(h[5], 1);
        assert_eq!(h[9], 1);
    }
}
