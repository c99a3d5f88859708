//! Brute-force verification oracles.
//!
//! `enumerate_posterior` computes exact marginals by summing the joint over
//! every assignment of the latent labels, with the worker factors evaluated
//! through the prior's closed-form marginal. `moment_factor_oracle` checks
//! factor-to-variable messages by expanding the product of linear forms in
//! the confusion matrix into monomials and evaluating each with rising
//! factorials -- a deliberately separate arithmetic route from the
//! log-gamma path used by the message engines.

use crate::data::{AssignmentGraph, LabelPosterior};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::priors::{CountMatrix, WorkerPrior};
use crate::special::log_sum_exp;

#[derive(Debug, Clone, Copy)]
pub struct OracleLimits {
    pub max_tasks: usize,
    pub max_states: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_tasks: 12,
            max_states: 1_000_000,
        }
    }
}

/// Exact per-task posterior marginals by full enumeration of the joint
/// label assignment. Cost is `K^N` weighted states; guarded by `limits`.
pub fn enumerate_posterior(
    graph: &AssignmentGraph,
    f_values: &Mat,
    prior: &WorkerPrior,
    limits: OracleLimits,
) -> Result<LabelPosterior> {
    let n = graph.num_tasks();
    let k = graph.num_classes();
    let states = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if n > limits.max_tasks || states > limits.max_states as u128 {
        return Err(Error::OracleCapExceeded {
            states,
            cap: limits.max_states,
        });
    }
    prior.validate(k)?;

    let mut log_weights = Vec::with_capacity(states as usize);
    let mut assignment = vec![0usize; n];
    loop {
        let mut lw = 0.0;
        for (i, &z) in assignment.iter().enumerate() {
            lw += f_values[(i, z)].max(1e-300).ln();
        }
        for u in 0..graph.num_workers() {
            let edges = graph.edges_of_worker(u);
            if edges.is_empty() {
                continue;
            }
            let mut gamma = CountMatrix::zeros(k);
            for &e in edges {
                let a = graph.edge(e);
                gamma.0[(assignment[a.task], a.label)] += 1.0;
            }
            lw += prior.log_marginal(&gamma)?;
        }
        log_weights.push(lw);
        if !advance(&mut assignment, k) {
            break;
        }
    }

    let log_total = log_sum_exp(&log_weights);
    let mut marg = Mat::zeros(n, k);
    let mut assignment = vec![0usize; n];
    for lw in &log_weights {
        let w = (lw - log_total).exp();
        for (i, &z) in assignment.iter().enumerate() {
            marg[(i, z)] += w;
        }
        advance(&mut assignment, k);
    }
    for i in 0..n {
        crate::mat::normalize_in_place(marg.row_mut(i));
    }
    Ok(LabelPosterior::new(marg))
}

fn advance(assignment: &mut [usize], k: usize) -> bool {
    for slot in assignment.iter_mut() {
        *slot += 1;
        if *slot < k {
            return true;
        }
        *slot = 0;
    }
    false
}

/// Rising factorial x (x+1) ... (x+n-1) for integer n >= 0.
fn rising(x: f64, n: usize) -> f64 {
    let mut acc = 1.0;
    for t in 0..n {
        acc *= x + t as f64;
    }
    acc
}

/// Exact prior moment `E[prod theta_{k1 k2}^{gamma_{k1 k2}}]` for integer
/// counts, via rising-factorial ratios.
fn dirichlet_moment(prior: &WorkerPrior, gamma: &[Vec<usize>], k: usize) -> f64 {
    match prior {
        WorkerPrior::FullDirichlet { alpha } => {
            let mut acc = 1.0;
            for r in 0..k {
                let row_total: usize = gamma[r].iter().sum();
                if row_total == 0 {
                    continue;
                }
                let alpha_total: f64 = alpha.row(r).iter().sum();
                let mut num = 1.0;
                for c in 0..k {
                    num *= rising(alpha[(r, c)], gamma[r][c]);
                }
                acc *= num / rising(alpha_total, row_total);
            }
            acc
        }
        WorkerPrior::OneCoin { alpha1, alpha2 } => {
            let mut correct = 0usize;
            let mut wrong = 0usize;
            for r in 0..k {
                for c in 0..k {
                    if r == c {
                        correct += gamma[r][c];
                    } else {
                        wrong += gamma[r][c];
                    }
                }
            }
            rising(*alpha1, correct) * rising(*alpha2, wrong)
                / rising(alpha1 + alpha2, correct + wrong)
                / ((k - 1) as f64).powi(wrong as i32)
        }
        WorkerPrior::TwoCoin { alpha1, alpha2 } => {
            let mut acc = 1.0;
            for r in 0..k {
                let correct = gamma[r][r];
                let wrong: usize = (0..k).filter(|&c| c != r).map(|c| gamma[r][c]).sum();
                if correct + wrong == 0 {
                    continue;
                }
                acc *= rising(*alpha1, correct) * rising(*alpha2, wrong)
                    / rising(alpha1 + alpha2, correct + wrong)
                    / ((k - 1) as f64).powi(wrong as i32);
            }
            acc
        }
    }
}

/// Evaluates `E[theta_{z, y_t} prod_{j != t} <theta_{., y_j}, m_j>]` for one
/// target class `z` by expanding the product over neighbor assignments and
/// summing exact moments. `labels[j]` is the worker's answer on its j-th
/// task, `incoming[j]` the message from that task; `target` indexes the
/// task the message is sent to.
pub fn moment_factor_oracle(
    prior: &WorkerPrior,
    num_classes: usize,
    labels: &[usize],
    incoming: &[Vec<f64>],
    target: usize,
    z_target: usize,
) -> Result<f64> {
    let degree = labels.len();
    if degree > 12 {
        return Err(Error::DegreeAboveCap { degree, cap: 12 });
    }
    prior.validate(num_classes)?;
    let k = num_classes;
    let others: Vec<usize> = (0..degree).filter(|&j| j != target).collect();
    let mut assignment = vec![0usize; others.len()];
    let mut total = 0.0;
    loop {
        let mut coeff = 1.0;
        let mut gamma = vec![vec![0usize; k]; k];
        gamma[z_target][labels[target]] += 1;
        for (slot, &j) in others.iter().enumerate() {
            let z = assignment[slot];
            coeff *= incoming[j][z];
            gamma[z][labels[j]] += 1;
        }
        total += coeff * dirichlet_moment(prior, &gamma, k);
        if assignment.is_empty() || !advance(&mut assignment, k) {
            break;
        }
    }
    Ok(total)
}

/// Normalized factor-to-variable message from the moment oracle.
pub fn oracle_factor_message(
    prior: &WorkerPrior,
    num_classes: usize,
    labels: &[usize],
    incoming: &[Vec<f64>],
    target: usize,
) -> Result<Vec<f64>> {
    let mut msg: Vec<f64> = (0..num_classes)
        .map(|z| moment_factor_oracle(prior, num_classes, labels, incoming, target, z))
        .collect::<Result<_>>()?;
    crate::mat::normalize_in_place(&mut msg);
    Ok(msg)
}
