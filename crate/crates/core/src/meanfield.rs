//! Mean-field coordinate ascent on the joint label / confusion-matrix
//! posterior.
//!
//! The variational family factorizes fully: a categorical `q_i` per task
//! and a Dirichlet `q_u(theta; beta)` per worker. Both coordinate updates
//! are exact maximizers, so the evidence lower bound never decreases:
//!
//! * `beta_{k1 k2} = alpha_{k1 k2} + sum of q_i(k1) over answers y = k2`
//! * `log q_i(z) = sum_u E[ln theta_{z, y}] + ln f(z; x_i) + const`
//!
//! Coin priors enter through their induced per-row concentrations
//! (diagonal `a1`, off-diagonal `a2 / (K-1)`), which preserves the prior
//! mean row-wise.

use crate::data::{AssignmentGraph, LabelPosterior};
use crate::mat::Mat;
use crate::priors::{expected_log_theta, kl_dirichlet, WorkerPrior};
use crate::special::softmax_in_place;

/// State of a mean-field run: the label posterior, per-worker Dirichlet
/// parameters, and the ELBO recorded after every full sweep.
#[derive(Debug, Clone)]
pub struct MFState {
    pub q: LabelPosterior,
    pub beta: Vec<Mat>,
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Closed-form update of every worker's Dirichlet parameters given `q`.
pub fn mf_update_beta(q: &LabelPosterior, graph: &AssignmentGraph, prior: &WorkerPrior) -> Vec<Mat> {
    let k = graph.num_classes();
    let alpha = prior.row_concentrations(k);
    (0..graph.num_workers())
        .map(|u| {
            let mut beta = alpha.clone();
            for &e in graph.edges_of_worker(u) {
                let a = graph.edge(e);
                let qi = q.row(a.task);
                for k1 in 0..k {
                    beta[(k1, a.label)] += qi[k1];
                }
            }
            beta
        })
        .collect()
}

/// Exact update of every task posterior given the worker parameters and
/// the (clipped) classifier outputs `f_values`.
pub fn mf_update_q(graph: &AssignmentGraph, f_values: &Mat, beta: &[Mat]) -> LabelPosterior {
    let n = graph.num_tasks();
    let k = graph.num_classes();
    let elts: Vec<Mat> = beta
        .iter()
        .map(|b| expected_log_theta(b).expect("beta positive by construction"))
        .collect();
    let mut q = Mat::zeros(n, k);
    for i in 0..n {
        let row = q.row_mut(i);
        for z in 0..k {
            row[z] = f_values[(i, z)].max(1e-300).ln();
        }
        for &e in graph.edges_of_task(i) {
            let a = graph.edge(e);
            let elt = &elts[a.worker];
            for z in 0..k {
                row[z] += elt[(z, a.label)];
            }
        }
        softmax_in_place(row);
    }
    LabelPosterior::new(q)
}

/// Evidence lower bound for the current variational state.
///
/// Three terms: the expected answer log-likelihood under `(q, beta)`, minus
/// `KL(q || f)`, minus the per-worker Dirichlet KL to the prior rows.
pub fn mf_elbo(
    q: &LabelPosterior,
    beta: &[Mat],
    graph: &AssignmentGraph,
    f_values: &Mat,
    prior: &WorkerPrior,
) -> f64 {
    let k = graph.num_classes();
    let alpha = prior.row_concentrations(k);
    let elts: Vec<Mat> = beta
        .iter()
        .map(|b| expected_log_theta(b).expect("beta positive by construction"))
        .collect();

    let mut elbo = 0.0;
    for a in graph.edges() {
        let qi = q.row(a.task);
        let elt = &elts[a.worker];
        for z in 0..k {
            elbo += qi[z] * elt[(z, a.label)];
        }
    }
    for i in 0..graph.num_tasks() {
        let qi = q.row(i);
        for z in 0..k {
            if qi[z] > 0.0 {
                elbo -= qi[z] * (qi[z].ln() - f_values[(i, z)].max(1e-300).ln());
            }
        }
    }
    for b in beta {
        for r in 0..k {
            elbo -= kl_dirichlet(b.row(r), alpha.row(r)).expect("positive parameters");
        }
    }
    elbo
}

/// Deterministic initialization: smoothed majority vote,
/// `q_i(z) proportional to 1 + votes_i(z)`.
pub fn smoothed_majority_vote(graph: &AssignmentGraph) -> LabelPosterior {
    let n = graph.num_tasks();
    let k = graph.num_classes();
    let mut q = Mat::filled(n, k, 1.0);
    for a in graph.edges() {
        q[(a.task, a.label)] += 1.0;
    }
    for i in 0..n {
        crate::mat::normalize_in_place(q.row_mut(i));
    }
    LabelPosterior::new(q)
}

/// Runs coordinate ascent until the posterior stops moving (max absolute
/// change < `tol`) or `max_iters` sweeps. Non-convergence is not an error;
/// the returned state records sweep count and the convergence flag.
pub fn mf_infer(
    graph: &AssignmentGraph,
    f_values: &Mat,
    prior: &WorkerPrior,
    tol: f64,
    max_iters: usize,
) -> MFState {
    let mut q = smoothed_majority_vote(graph);
    let mut beta = mf_update_beta(&q, graph, prior);
    let mut elbo_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let q_new = mf_update_q(graph, f_values, &beta);
        beta = mf_update_beta(&q_new, graph, prior);
        elbo_trace.push(mf_elbo(&q_new, &beta, graph, f_values, prior));
        let delta = q_new.max_abs_diff(&q);
        q = q_new;
        if delta < tol {
            converged = true;
            break;
        }
    }
    MFState {
        q,
        beta,
        elbo_trace,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Answer;

    fn graph(n: usize, k: usize, m: usize, answers: &[(usize, usize, usize)]) -> AssignmentGraph {
        AssignmentGraph::new(
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
        )
    }

    fn uniform_f(n: usize, k: usize) -> Mat {
        Mat::filled(n, k, 1.0 / k as f64)
    }

    #[test]
    fn beta_update_degenerate_counts() {
        let g = graph(2, 2, 1, &[(0, 0, 0), (1, 0, 0)]);
        let prior = WorkerPrior::full(Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]));
        let q = LabelPosterior::new(Mat::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]));
        let beta = mf_update_beta(&q, &g, &prior);
        assert_eq!(beta[0], Mat::from_rows(&[vec![4.0, 1.0], vec![1.0, 2.0]]));
    }

    #[test]
    fn beta_update_uniform_counts() {
        let g = graph(2, 2, 1, &[(0, 0, 0), (1, 0, 0)]);
        let prior = WorkerPrior::full(Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]));
        let q = LabelPosterior::uniform(2, 2);
        let beta = mf_update_beta(&q, &g, &prior);
        assert_eq!(beta[0], Mat::from_rows(&[vec![3.0, 1.0], vec![2.0, 2.0]]));
    }

    #[test]
    fn beta_update_idle_worker_keeps_prior() {
        let g = graph(1, 2, 2, &[(0, 0, 1)]);
        let prior = WorkerPrior::full(Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]));
        let q = LabelPosterior::uniform(1, 2);
        let beta = mf_update_beta(&q, &g, &prior);
        assert_eq!(beta[1], prior.row_concentrations(2));
    }

    #[test]
    fn beta_minus_alpha_mass_equals_answers() {
        let g = graph(3, 2, 2, &[(0, 0, 0), (1, 0, 1), (2, 1, 0), (0, 1, 1)]);
        let prior = WorkerPrior::one_coin(2.0, 1.0);
        let q = LabelPosterior::new(Mat::from_rows(&[
            vec![0.6, 0.4],
            vec![0.1, 0.9],
            vec![0.5, 0.5],
        ]));
        let beta = mf_update_beta(&q, &g, &prior);
        let alpha = prior.row_concentrations(2);
        let mut mass = 0.0;
        for b in &beta {
            for r in 0..2 {
                for c in 0..2 {
                    let d = b[(r, c)] - alpha[(r, c)];
                    assert!(d >= -1e-15);
                    mass += d;
                }
            }
        }
        assert!((mass - 4.0).abs() < 1e-12);
    }

    #[test]
    fn q_update_single_worker_logistic_value() {
        // One task, one worker with beta [[2,1],[1,2]], answer 0, uniform f:
        // q(0) = 1 / (1 + e^{-1}).
        let g = graph(1, 2, 1, &[(0, 0, 0)]);
        let beta = vec![Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]])];
        let q = mf_update_q(&g, &uniform_f(1, 2), &beta);
        let want = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((q.row(0)[0] - want).abs() < 1e-12);
    }

    #[test]
    fn q_update_no_workers_returns_f() {
        let g = graph(2, 2, 0, &[]);
        let f = Mat::from_rows(&[vec![0.8, 0.2], vec![0.3, 0.7]]);
        let q = mf_update_q(&g, &f, &[]);
        assert!(q.matrix().max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn q_update_uninformative_worker_stays_uniform() {
        let g = graph(1, 2, 1, &[(0, 0, 0)]);
        let beta = vec![Mat::from_rows(&[vec![1.5, 1.5], vec![1.5, 1.5]])];
        let q = mf_update_q(&g, &uniform_f(1, 2), &beta);
        assert!((q.row(0)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn elbo_empty_dataset_is_zero() {
        let g = graph(2, 2, 0, &[]);
        let f = Mat::from_rows(&[vec![0.8, 0.2], vec![0.3, 0.7]]);
        let q = LabelPosterior::new(f.clone());
        let prior = WorkerPrior::one_coin(2.0, 1.0);
        assert!(mf_elbo(&q, &[], &g, &f, &prior).abs() < 1e-12);
    }

    #[test]
    fn elbo_at_prior_equals_expected_log_likelihood() {
        let g = graph(1, 2, 1, &[(0, 0, 0)]);
        let prior = WorkerPrior::full(Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]));
        let alpha = prior.row_concentrations(2);
        let f = Mat::from_rows(&[vec![0.6, 0.4]]);
        let q = LabelPosterior::new(f.clone());
        let beta = vec![alpha.clone()];
        let elbo = mf_elbo(&q, &beta, &g, &f, &prior);
        let elt = expected_log_theta(&alpha).unwrap();
        let want = 0.6 * elt[(0, 0)] + 0.4 * elt[(1, 0)];
        assert!((elbo - want).abs() < 1e-12);
    }

    #[test]
    fn elbo_monotone_under_coordinate_updates() {
        let g = graph(
            4,
            2,
            3,
            &[(0, 0, 0), (1, 0, 1), (2, 1, 0), (3, 1, 0), (1, 2, 1), (2, 2, 1)],
        );
        let f = Mat::from_rows(&[
            vec![0.7, 0.3],
            vec![0.4, 0.6],
            vec![0.55, 0.45],
            vec![0.2, 0.8],
        ]);
        let prior = WorkerPrior::one_coin(2.0, 1.0);
        let mut q = smoothed_majority_vote(&g);
        let mut beta = mf_update_beta(&q, &g, &prior);
        let mut last = mf_elbo(&q, &beta, &g, &f, &prior);
        for _ in 0..15 {
            q = mf_update_q(&g, &f, &beta);
            let e1 = mf_elbo(&q, &beta, &g, &f, &prior);
            assert!(e1 >= last - 1e-9, "q update decreased ELBO: {last} -> {e1}");
            beta = mf_update_beta(&q, &g, &prior);
            let e2 = mf_elbo(&q, &beta, &g, &f, &prior);
            assert!(e2 >= e1 - 1e-9, "beta update decreased ELBO: {e1} -> {e2}");
            last = e2;
        }
    }

    #[test]
    fn infer_near_perfect_worker_concentrates() {
        let g = graph(1, 2, 1, &[(0, 0, 0)]);
        let prior = WorkerPrior::one_coin(1e6, 1.0);
        let state = mf_infer(&g, &uniform_f(1, 2), &prior, 1e-8, 100);
        assert!(state.q.row(0)[0] > 0.99, "q = {:?}", state.q.row(0));
    }

    #[test]
    fn infer_symmetric_fixed_point_stays_uniform() {
        // Both classes answered equally often by every worker: posterior
        // stays uniform under a symmetric prior.
        let g = graph(2, 2, 2, &[(0, 0, 0), (1, 0, 1), (0, 1, 1), (1, 1, 0)]);
        let prior = WorkerPrior::one_coin(1.0, 1.0);
        let state = mf_infer(&g, &uniform_f(2, 2), &prior, 1e-10, 50);
        for i in 0..2 {
            assert!((state.q.row(i)[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn infer_elbo_trace_non_decreasing() {
        let g = graph(
            5,
            2,
            3,
            &[
                (0, 0, 0),
                (1, 0, 0),
                (2, 0, 1),
                (2, 1, 1),
                (3, 1, 1),
                (4, 1, 0),
                (0, 2, 0),
                (4, 2, 1),
            ],
        );
        let prior = WorkerPrior::one_coin(2.0, 1.0);
        let state = mf_infer(&g, &uniform_f(5, 2), &prior, 1e-10, 60);
        for w in state.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn class_permutation_equivariance() {
        let edges = [(0, 0, 0), (1, 0, 1), (2, 1, 0), (0, 1, 0)];
        let g = graph(3, 2, 2, &edges);
        let f = Mat::from_rows(&[vec![0.7, 0.3], vec![0.4, 0.6], vec![0.5, 0.5]]);
        let prior = WorkerPrior::one_coin(2.0, 1.0);
        let state = mf_infer(&g, &f, &prior, 1e-10, 80);

        let swapped: Vec<(usize, usize, usize)> =
            edges.iter().map(|&(t, w, l)| (t, w, 1 - l)).collect();
        let g2 = graph(3, 2, 2, &swapped);
        let f2 = Mat::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4], vec![0.5, 0.5]]);
        let state2 = mf_infer(&g2, &f2, &prior, 1e-10, 80);
        for i in 0..3 {
            assert!((state.q.row(i)[0] - state2.q.row(i)[1]).abs() < 1e-9);
        }
    }
}
