//! Sum-product belief propagation on the task-worker factor graph.
//!
//! Each worker u induces a factor g_u over the labels of the tasks it
//! answered, equal to the prior-integrated likelihood of its answers. The
//! factor-to-variable message marginalizes g_u over all neighbors except
//! the target, which is evaluated three ways:
//!
//! * `factor_message_exact`: direct enumeration over joint neighbor
//!   assignments, `O(K^{n-1})`; any prior, degree capped.
//! * `factor_message_onecoin_dp`: exact for one-coin priors in `O(n^2 K)`
//!   via a Poisson-binomial dynamic program over the number of correctly
//!   answered neighbors, the count being the factor's sufficient statistic.
//! * `factor_message_mc`: the integrand is a product of linear forms in
//!   theta, so averaging it over `S` prior draws estimates the message in
//!   `O(n K S)`.
//!
//! All message arithmetic runs in log space; messages are floored at
//! 1e-300 before normalization so zero-products cannot absorb a class.
//! Sweeps are synchronous: every task-to-worker message is computed from
//! the previous iterate, then every worker-to-task message.

use crate::data::{AssignmentGraph, LabelPosterior};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::priors::{CountMatrix, WorkerPrior};
use crate::seed::derive2;
use crate::special::{log_add_exp, log_sum_exp, softmax_in_place};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

const MESSAGE_FLOOR: f64 = 1e-300;

/// How worker factors are evaluated during [`bp_run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FactorMode {
    /// One-coin prior: DP. Otherwise enumeration up to the degree cap,
    /// Monte-Carlo beyond it.
    Auto,
    ExactEnum,
    OneCoinDp,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FactorEvalConfig {
    pub mode: FactorMode,
    /// Monte-Carlo sample count S.
    pub samples: usize,
    /// Largest worker degree enumerated exactly in Auto / ExactEnum mode.
    pub exact_degree_cap: usize,
    /// Damping weight on the previous worker-to-task message, in [0, 1).
    pub damping: f64,
}

impl Default for FactorEvalConfig {
    fn default() -> Self {
        FactorEvalConfig {
            mode: FactorMode::Auto,
            samples: 400,
            exact_degree_cap: 10,
            damping: 0.0,
        }
    }
}

/// Per-edge message state. Index e refers to the e-th answer triple of the
/// assignment graph.
#[derive(Debug, Clone)]
pub struct MessageState {
    pub task_to_worker: Vec<Vec<f64>>,
    pub worker_to_task: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl MessageState {
    /// Uniform worker-to-task messages, the standard cold start.
    pub fn uniform(num_edges: usize, num_classes: usize) -> Self {
        let u = vec![1.0 / num_classes as f64; num_classes];
        MessageState {
            task_to_worker: vec![u.clone(); num_edges],
            worker_to_task: vec![u; num_edges],
            iterations: 0,
            converged: false,
        }
    }
}

/// Exact factor-to-variable message by enumerating the joint assignment of
/// the worker's other tasks. `labels[j]` is the answer on the worker's j-th
/// edge, `incoming[j]` the task-to-worker message on that edge; `target`
/// indexes the edge receiving the message.
pub fn factor_message_exact(
    prior: &WorkerPrior,
    labels: &[usize],
    incoming: &[Vec<f64>],
    target: usize,
    num_classes: usize,
    degree_cap: usize,
) -> Result<Vec<f64>> {
    let n = labels.len();
    if n > degree_cap {
        return Err(Error::DegreeAboveCap {
            degree: n,
            cap: degree_cap,
        });
    }
    prior.validate(num_classes)?;
    let k = num_classes;
    let others: Vec<usize> = (0..n).filter(|&j| j != target).collect();
    let mut log_msg = vec![f64::NEG_INFINITY; k];
    let mut assignment = vec![0usize; others.len()];
    loop {
        let mut coeff_ln = 0.0;
        let mut gamma = CountMatrix::zeros(k);
        for (slot, &j) in others.iter().enumerate() {
            let z = assignment[slot];
            coeff_ln += incoming[j][z].max(MESSAGE_FLOOR).ln();
            gamma.0[(z, labels[j])] += 1.0;
        }
        for z_t in 0..k {
            gamma.0[(z_t, labels[target])] += 1.0;
            let term = coeff_ln + prior.log_marginal(&gamma)?;
            gamma.0[(z_t, labels[target])] -= 1.0;
            log_msg[z_t] = log_add_exp(log_msg[z_t], term);
        }
        if assignment.is_empty() || !advance(&mut assignment, k) {
            break;
        }
    }
    softmax_in_place(&mut log_msg);
    Ok(log_msg)
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

/// Log prior moments `ln(E[p^m (1-p)^(n-m)] / (K-1)^(n-m))` for m = 0..=n.
/// `mu[m]` is the one-coin factor value when exactly m of the worker's n
/// answers agree with the assigned labels.
fn onecoin_log_moments(a1: f64, a2: f64, n: usize, k: usize) -> Vec<f64> {
    let ln_b0 = crate::special::ln_beta(&[a1, a2]);
    let ln_km1 = ((k - 1) as f64).ln();
    (0..=n)
        .map(|m| {
            crate::special::ln_beta(&[a1 + m as f64, a2 + (n - m) as f64]) - ln_b0
                - (n - m) as f64 * ln_km1
        })
        .collect()
}

fn onecoin_params(prior: &WorkerPrior) -> Result<(f64, f64)> {
    match prior {
        WorkerPrior::OneCoin { alpha1, alpha2 } => Ok((*alpha1, *alpha2)),
        _ => Err(Error::Prior(
            "the DP factor evaluator requires a one-coin prior".into(),
        )),
    }
}

/// Exact one-coin factor message in `O(n^2 K)`: a Poisson-binomial DP over
/// the number of correct neighbors, combined with the beta moments of the
/// correctness probability. Agrees with [`factor_message_exact`] to
/// floating-point accuracy wherever both run.
pub fn factor_message_onecoin_dp(
    prior: &WorkerPrior,
    labels: &[usize],
    incoming: &[Vec<f64>],
    target: usize,
    num_classes: usize,
) -> Result<Vec<f64>> {
    let (a1, a2) = onecoin_params(prior)?;
    prior.validate(num_classes)?;
    let n = labels.len();
    let k = num_classes;
    let ln_mu = onecoin_log_moments(a1, a2, n, k);

    // Poisson-binomial over the other neighbors, in log space.
    let mut ln_pb = vec![0.0f64]; // zero items: count 0 with probability 1
    for (j, (&y, m)) in labels.iter().zip(incoming).enumerate() {
        if j == target {
            continue;
        }
        let ln_s = m[y].max(MESSAGE_FLOOR).ln();
        let wrong: f64 = m
            .iter()
            .enumerate()
            .filter(|(z, _)| *z != y)
            .map(|(_, &v)| v)
            .sum();
        let ln_w = wrong.max(MESSAGE_FLOOR).ln();
        let mut next = vec![f64::NEG_INFINITY; ln_pb.len() + 1];
        for (c, &v) in ln_pb.iter().enumerate() {
            next[c] = log_add_exp(next[c], v + ln_w);
            next[c + 1] = log_add_exp(next[c + 1], v + ln_s);
        }
        ln_pb = next;
    }

    let weight = |delta: usize| -> f64 {
        let terms: Vec<f64> = ln_pb
            .iter()
            .enumerate()
            .map(|(c, &v)| v + ln_mu[c + delta])
            .collect();
        log_sum_exp(&terms)
    };
    let a_wrong = weight(0);
    let a_right = weight(1);
    let mut log_msg: Vec<f64> = (0..k)
        .map(|z| if z == labels[target] { a_right } else { a_wrong })
        .collect();
    softmax_in_place(&mut log_msg);
    Ok(log_msg)
}

/// Monte-Carlo factor message: the marginalized factor is
/// `E[theta_{z, y_t} prod_{j != t} <theta_{., y_j}, m_j>]`, estimated with
/// `S` prior draws in `O(n K S)`. Deterministic given `seed`.
pub fn factor_message_mc(
    prior: &WorkerPrior,
    labels: &[usize],
    incoming: &[Vec<f64>],
    target: usize,
    num_classes: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    prior.validate(num_classes)?;
    let k = num_classes;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut log_msg = vec![f64::NEG_INFINITY; k];
    for _ in 0..samples.max(1) {
        let theta = prior.sample_confusion(k, &mut rng)?.0;
        let mut base = 0.0;
        for (j, (&y, m)) in labels.iter().zip(incoming).enumerate() {
            if j == target {
                continue;
            }
            let dot: f64 = (0..k).map(|z| theta[(z, y)] * m[z]).sum();
            base += dot.max(MESSAGE_FLOOR).ln();
        }
        for (z, lm) in log_msg.iter_mut().enumerate() {
            *lm = log_add_exp(
                *lm,
                base + theta[(z, labels[target])].max(MESSAGE_FLOOR).ln(),
            );
        }
    }
    softmax_in_place(&mut log_msg);
    Ok(log_msg)
}

/// All outgoing messages of one one-coin worker in `O(n^2)` total: prefix
/// Poisson-binomial DP against a suffix DP that folds in the moment vector,
/// so each leave-one-out sum is read off in `O(n)`.
fn onecoin_worker_messages(
    a1: f64,
    a2: f64,
    num_classes: usize,
    labels: &[usize],
    incoming: &[&[f64]],
) -> Vec<Vec<f64>> {
    let n = labels.len();
    let k = num_classes;
    let ln_mu = onecoin_log_moments(a1, a2, n, k);
    let mut ln_s = vec![0.0; n];
    let mut ln_w = vec![0.0; n];
    for t in 0..n {
        let y = labels[t];
        ln_s[t] = incoming[t][y].max(MESSAGE_FLOOR).ln();
        let wrong: f64 = incoming[t]
            .iter()
            .enumerate()
            .filter(|(z, _)| *z != y)
            .map(|(_, &v)| v)
            .sum();
        ln_w[t] = wrong.max(MESSAGE_FLOOR).ln();
    }

    // suffix[t][a]: log partial expectation over items t..n-1 given `a`
    // correct answers accumulated elsewhere (including the target's own);
    // a can reach t when combined with a length-t prefix plus the target.
    let mut suffix: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    suffix[n] = ln_mu;
    for t in (0..n).rev() {
        let nxt = std::mem::take(&mut suffix[t + 1]);
        let mut row = vec![f64::NEG_INFINITY; t + 1];
        for (a, slot) in row.iter_mut().enumerate() {
            *slot = log_add_exp(ln_s[t] + nxt[a + 1], ln_w[t] + nxt[a]);
        }
        suffix[t + 1] = nxt;
        suffix[t] = row;
    }

    let mut out = Vec::with_capacity(n);
    let mut prefix = vec![0.0f64]; // log PB of zero items
    for t in 0..n {
        let nxt = &suffix[t + 1];
        let mut a_wrong = f64::NEG_INFINITY;
        let mut a_right = f64::NEG_INFINITY;
        for (c, &v) in prefix.iter().enumerate() {
            a_wrong = log_add_exp(a_wrong, v + nxt[c]);
            a_right = log_add_exp(a_right, v + nxt[c + 1]);
        }
        let mut log_msg: Vec<f64> = (0..k)
            .map(|z| if z == labels[t] { a_right } else { a_wrong })
            .collect();
        softmax_in_place(&mut log_msg);
        out.push(log_msg);

        let mut next = vec![f64::NEG_INFINITY; prefix.len() + 1];
        for (c, &v) in prefix.iter().enumerate() {
            next[c] = log_add_exp(next[c], v + ln_w[t]);
            next[c + 1] = log_add_exp(next[c + 1], v + ln_s[t]);
        }
        prefix = next;
    }
    out
}

/// All outgoing messages of one worker under Monte-Carlo evaluation,
/// sharing the `S` prior draws across targets: per sample the full product
/// of linear forms is computed once and each target divides its own factor
/// back out (in log space).
fn mc_worker_messages(
    prior: &WorkerPrior,
    num_classes: usize,
    labels: &[usize],
    incoming: &[&[f64]],
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = labels.len();
    let k = num_classes;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut acc = vec![vec![f64::NEG_INFINITY; k]; n];
    let mut ln_dot = vec![0.0f64; n];
    for _ in 0..samples.max(1) {
        let theta = prior.sample_confusion(k, &mut rng)?.0;
        let mut total = 0.0;
        for t in 0..n {
            let y = labels[t];
            let dot: f64 = (0..k).map(|z| theta[(z, y)] * incoming[t][z]).sum();
            ln_dot[t] = dot.max(MESSAGE_FLOOR).ln();
            total += ln_dot[t];
        }
        for t in 0..n {
            let base = total - ln_dot[t];
            let y = labels[t];
            for z in 0..k {
                let term = base + theta[(z, y)].max(MESSAGE_FLOOR).ln();
                acc[t][z] = log_add_exp(acc[t][z], term);
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|mut row| {
            softmax_in_place(&mut row);
            row
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ResolvedMode {
    Exact,
    Dp,
    Mc,
}

fn resolve_mode(
    config: &FactorEvalConfig,
    prior: &WorkerPrior,
    degree: usize,
) -> Result<ResolvedMode> {
    match config.mode {
        FactorMode::Auto => Ok(if matches!(prior, WorkerPrior::OneCoin { .. }) {
            ResolvedMode::Dp
        } else if degree <= config.exact_degree_cap {
            ResolvedMode::Exact
        } else {
            ResolvedMode::Mc
        }),
        FactorMode::ExactEnum => {
            if degree > config.exact_degree_cap {
                Err(Error::DegreeAboveCap {
                    degree,
                    cap: config.exact_degree_cap,
                })
            } else {
                Ok(ResolvedMode::Exact)
            }
        }
        FactorMode::OneCoinDp => {
            onecoin_params(prior)?;
            Ok(ResolvedMode::Dp)
        }
        FactorMode::MonteCarlo => Ok(ResolvedMode::Mc),
    }
}

/// Runs synchronous BP sweeps until the largest message change drops below
/// `tol` or `t_max` sweeps elapse, then reads out the task beliefs
/// `q_i(z) proportional to f(z; x_i) prod_u m_{u -> i}(z)`.
///
/// `warm` continues from a previous run's messages (shape-checked);
/// `None` starts from uniform worker-to-task messages. `seed` drives the
/// Monte-Carlo factor draws, one derived stream per worker per run.
pub fn bp_run(
    graph: &AssignmentGraph,
    f_values: &Mat,
    prior: &WorkerPrior,
    config: &FactorEvalConfig,
    t_max: usize,
    tol: f64,
    warm: Option<MessageState>,
    seed: u64,
) -> Result<(LabelPosterior, MessageState)> {
    let n = graph.num_tasks();
    let k = graph.num_classes();
    let num_edges = graph.edges().len();
    prior.validate(k)?;
    if !(0.0..1.0).contains(&config.damping) {
        return Err(Error::Config(format!(
            "damping {} must lie in [0, 1)",
            config.damping
        )));
    }

    let mut state = match warm {
        Some(s) if s.worker_to_task.len() == num_edges => s,
        _ => MessageState::uniform(num_edges, k),
    };
    state.converged = false;

    // One fixed Monte-Carlo stream per worker per run, so the within-run
    // iteration has a well-defined fixed point.
    let worker_seed = |u: usize| derive2(seed, 0x4d43, u as u64);

    let mut ln_buf = vec![0.0f64; k];
    for sweep in 0..t_max {
        state.iterations = sweep + 1;
        let mut max_delta = 0.0f64;

        // Task -> worker phase.
        let mut new_t2w = state.task_to_worker.clone();
        for i in 0..n {
            for (z, slot) in ln_buf.iter_mut().enumerate() {
                *slot = f_values[(i, z)].max(MESSAGE_FLOOR).ln();
            }
            for &e in graph.edges_of_task(i) {
                for (z, slot) in ln_buf.iter_mut().enumerate() {
                    *slot += state.worker_to_task[e][z].max(MESSAGE_FLOOR).ln();
                }
            }
            for &e in graph.edges_of_task(i) {
                let msg = &mut new_t2w[e];
                for z in 0..k {
                    msg[z] = ln_buf[z] - state.worker_to_task[e][z].max(MESSAGE_FLOOR).ln();
                }
                softmax_in_place(msg);
                floor_and_renormalize(msg);
            }
        }
        for (a, b) in new_t2w.iter().zip(&state.task_to_worker) {
            max_delta = max_delta.max(max_abs(a, b));
        }
        state.task_to_worker = new_t2w;

        // Worker -> task phase. Workers own disjoint edge sets, so their
        // messages evaluate in parallel and land deterministically.
        let per_worker: Vec<Result<Vec<Vec<f64>>>> = {
            use rayon::prelude::*;
            (0..graph.num_workers())
                .into_par_iter()
                .with_max_len(4)
                .map(|u| {
                    let edges = graph.edges_of_worker(u);
                    if edges.is_empty() {
                        return Ok(Vec::new());
                    }
                    let labels: Vec<usize> =
                        edges.iter().map(|&e| graph.edge(e).label).collect();
                    let incoming: Vec<&[f64]> = edges
                        .iter()
                        .map(|&e| state.task_to_worker[e].as_slice())
                        .collect();
                    match resolve_mode(config, prior, edges.len())? {
                        ResolvedMode::Dp => {
                            let (a1, a2) = onecoin_params(prior)?;
                            Ok(onecoin_worker_messages(a1, a2, k, &labels, &incoming))
                        }
                        ResolvedMode::Mc => mc_worker_messages(
                            prior,
                            k,
                            &labels,
                            &incoming,
                            config.samples,
                            worker_seed(u),
                        ),
                        ResolvedMode::Exact => {
                            let owned: Vec<Vec<f64>> =
                                incoming.iter().map(|m| m.to_vec()).collect();
                            (0..edges.len())
                                .map(|t| {
                                    factor_message_exact(
                                        prior,
                                        &labels,
                                        &owned,
                                        t,
                                        k,
                                        config.exact_degree_cap,
                                    )
                                })
                                .collect::<Result<_>>()
                        }
                    }
                })
                .collect()
        };
        let mut new_w2t = state.worker_to_task.clone();
        for (u, messages) in per_worker.into_iter().enumerate() {
            let messages = messages?;
            for (slot, &e) in graph.edges_of_worker(u).iter().enumerate() {
                let mut msg = messages[slot].clone();
                if config.damping > 0.0 {
                    for (z, m) in msg.iter_mut().enumerate() {
                        *m = (1.0 - config.damping) * *m
                            + config.damping * state.worker_to_task[e][z];
                    }
                }
                floor_and_renormalize(&mut msg);
                new_w2t[e] = msg;
            }
        }
        for (a, b) in new_w2t.iter().zip(&state.worker_to_task) {
            max_delta = max_delta.max(max_abs(a, b));
        }
        state.worker_to_task = new_w2t;

        if max_delta < tol {
            state.converged = true;
            break;
        }
    }

    // Beliefs.
    let mut q = Mat::zeros(n, k);
    for i in 0..n {
        let row = q.row_mut(i);
        for (z, slot) in row.iter_mut().enumerate() {
            *slot = f_values[(i, z)].max(MESSAGE_FLOOR).ln();
        }
        for &e in graph.edges_of_task(i) {
            for (z, slot) in row.iter_mut().enumerate() {
                *slot += state.worker_to_task[e][z].max(MESSAGE_FLOOR).ln();
            }
        }
        softmax_in_place(row);
    }
    Ok((LabelPosterior::new(q), state))
}

fn floor_and_renormalize(msg: &mut [f64]) {
    let mut sum = 0.0;
    for x in msg.iter_mut() {
        if !(*x > MESSAGE_FLOOR) {
            *x = MESSAGE_FLOOR;
        }
        sum += *x;
    }
    for x in msg.iter_mut() {
        *x /= sum;
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
