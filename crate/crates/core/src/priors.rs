//! Dirichlet-family worker priors over confusion matrices.
//!
//! Three families are supported:
//!
//! * `FullDirichlet`: each row k of the confusion matrix is drawn from an
//!   independent Dirichlet with concentration row `alpha[k]`.
//! * `OneCoin`: a single correctness probability `p ~ Beta(a1, a2)`; the
//!   diagonal is `p` and mistakes spread uniformly over the `K - 1` wrong
//!   classes, `(1 - p) / (K - 1)`.
//! * `TwoCoin`: like one-coin but with an independent `p_k ~ Beta(a1, a2)`
//!   per true class.
//!
//! `log_marginal` integrates a (possibly fractional) count matrix against
//! the prior in closed form via log-beta ratios, which is the factor value
//! the BP engine and the enumeration oracle both consume.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::special::{digamma, ln_beta, ln_gamma};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

#[derive(Debug, Clone, PartialEq)]
pub enum WorkerPrior {
    FullDirichlet { alpha: Mat },
    OneCoin { alpha1: f64, alpha2: f64 },
    TwoCoin { alpha1: f64, alpha2: f64 },
}

/// Row-stochastic K x K confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix(pub Mat);

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.0.rows()
    }
}

/// Nonnegative K x K count matrix; entry (k1, k2) counts (possibly
/// fractionally) tasks with latent class k1 answered k2.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix(pub Mat);

impl CountMatrix {
    pub fn zeros(k: usize) -> Self {
        CountMatrix(Mat::zeros(k, k))
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.as_slice().iter().any(|&x| x < 0.0) {
            return Err(Error::Data("count matrix has a negative entry".into()));
        }
        Ok(())
    }
}

impl WorkerPrior {
    pub fn one_coin(alpha1: f64, alpha2: f64) -> Self {
        WorkerPrior::OneCoin { alpha1, alpha2 }
    }

    pub fn two_coin(alpha1: f64, alpha2: f64) -> Self {
        WorkerPrior::TwoCoin { alpha1, alpha2 }
    }

    pub fn full(alpha: Mat) -> Self {
        WorkerPrior::FullDirichlet { alpha }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self {
            WorkerPrior::FullDirichlet { alpha } => {
                if alpha.rows() != num_classes || alpha.cols() != num_classes {
                    return Err(Error::Prior(format!(
                        "alpha must be {num_classes}x{num_classes}, got {}x{}",
                        alpha.rows(),
                        alpha.cols()
                    )));
                }
                if alpha.as_slice().iter().any(|&a| a <= 0.0) {
                    return Err(Error::Prior("concentrations must be positive".into()));
                }
            }
            WorkerPrior::OneCoin { alpha1, alpha2 } | WorkerPrior::TwoCoin { alpha1, alpha2 } => {
                if *alpha1 <= 0.0 || *alpha2 <= 0.0 {
                    return Err(Error::Prior("concentrations must be positive".into()));
                }
                if num_classes < 2 {
                    return Err(Error::Prior("coin priors need at least two classes".into()));
                }
            }
        }
        Ok(())
    }

    /// Per-row Dirichlet concentrations induced by the prior: the identity
    /// for the full family; diagonal `a1` with off-diagonal `a2 / (K - 1)`
    /// for the coin families. This is the expansion the mean-field beta
    /// update operates on.
    pub fn row_concentrations(&self, num_classes: usize) -> Mat {
        match self {
            WorkerPrior::FullDirichlet { alpha } => alpha.clone(),
            WorkerPrior::OneCoin { alpha1, alpha2 } | WorkerPrior::TwoCoin { alpha1, alpha2 } => {
                let off = alpha2 / (num_classes as f64 - 1.0);
                let mut m = Mat::filled(num_classes, num_classes, off);
                for k in 0..num_classes {
                    m[(k, k)] = *alpha1;
                }
                m
            }
        }
    }

    /// Draws one confusion matrix. Deterministic given the RNG state.
    pub fn sample_confusion<R: Rng>(&self, num_classes: usize, rng: &mut R) -> Result<ConfusionMatrix> {
        self.validate(num_classes)?;
        let k = num_classes;
        let mut theta = Mat::zeros(k, k);
        match self {
            WorkerPrior::FullDirichlet { alpha } => {
                for r in 0..k {
                    let row = sample_dirichlet(alpha.row(r), rng);
                    theta.row_mut(r).copy_from_slice(&row);
                }
            }
            WorkerPrior::OneCoin { alpha1, alpha2 } => {
                let p = sample_beta(*alpha1, *alpha2, rng);
                fill_coin_rows(&mut theta, &vec![p; k]);
            }
            WorkerPrior::TwoCoin { alpha1, alpha2 } => {
                let ps: Vec<f64> = (0..k).map(|_| sample_beta(*alpha1, *alpha2, rng)).collect();
                fill_coin_rows(&mut theta, &ps);
            }
        }
        Ok(ConfusionMatrix(theta))
    }

    /// Log of the prior-integrated likelihood of a count matrix:
    /// `log Int p(theta | alpha) prod theta_{k1 k2}^{gamma_{k1 k2}} dtheta`.
    ///
    /// Fractional counts are fine; the beta ratios continue through
    /// log-gamma. An all-zero count matrix integrates to exactly 0.
    pub fn log_marginal(&self, gamma: &CountMatrix) -> Result<f64> {
        gamma.validate()?;
        let k = gamma.0.rows();
        self.validate(k)?;
        if gamma.0.as_slice().iter().all(|&x| x == 0.0) {
            return Ok(0.0);
        }
        match self {
            WorkerPrior::FullDirichlet { alpha } => {
                let mut total = 0.0;
                for r in 0..k {
                    let a = alpha.row(r);
                    let g = gamma.0.row(r);
                    if g.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let shifted: Vec<f64> = a.iter().zip(g).map(|(x, y)| x + y).collect();
                    total += ln_beta(&shifted) - ln_beta(a);
                }
                Ok(total)
            }
            WorkerPrior::OneCoin { alpha1, alpha2 } => {
                let (correct, wrong) = diag_offdiag_counts(&gamma.0);
                Ok(log_beta_moment(*alpha1, *alpha2, correct, wrong)
                    - wrong * ((k - 1) as f64).ln())
            }
            WorkerPrior::TwoCoin { alpha1, alpha2 } => {
                let mut total = 0.0;
                let mut wrong_total = 0.0;
                for r in 0..k {
                    let g = gamma.0.row(r);
                    let c = g[r];
                    let w: f64 = g.iter().enumerate().filter(|(j, _)| *j != r).map(|(_, &x)| x).sum();
                    wrong_total += w;
                    if c != 0.0 || w != 0.0 {
                        total += log_beta_moment(*alpha1, *alpha2, c, w);
                    }
                }
                Ok(total - wrong_total * ((k - 1) as f64).ln())
            }
        }
    }
}

fn fill_coin_rows(theta: &mut Mat, ps: &[f64]) {
    let k = theta.rows();
    for (r, &p) in ps.iter().enumerate() {
        let off = (1.0 - p) / (k as f64 - 1.0);
        for c in 0..k {
            theta[(r, c)] = if r == c { p } else { off };
        }
    }
}

/// `log E[p^c (1-p)^w]` under `p ~ Beta(a1, a2)`.
fn log_beta_moment(a1: f64, a2: f64, c: f64, w: f64) -> f64 {
    ln_beta(&[a1 + c, a2 + w]) - ln_beta(&[a1, a2])
}

fn diag_offdiag_counts(gamma: &Mat) -> (f64, f64) {
    let k = gamma.rows();
    let mut diag = 0.0;
    let mut off = 0.0;
    for r in 0..k {
        for c in 0..k {
            if r == c {
                diag += gamma[(r, c)];
            } else {
                off += gamma[(r, c)];
            }
        }
    }
    (diag, off)
}

/// Dirichlet draw via normalized gamma variates.
pub fn sample_dirichlet<R: Rng>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let s: f64 = v.iter().sum();
    if s == 0.0 {
        // All-underflow corner (tiny concentrations): fall back to a point
        // mass on the argmax-shape coordinate, the distribution's limit.
        let mut best = 0;
        for (i, a) in alpha.iter().enumerate() {
            if *a > alpha[best] {
                best = i;
            }
        }
        v.iter_mut().for_each(|x| *x = 0.0);
        v[best] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub fn sample_beta<R: Rng>(a1: f64, a2: f64, rng: &mut R) -> f64 {
    let v = sample_dirichlet(&[a1, a2], rng);
    v[0]
}

/// `E[ln theta_{k k'}]` under independent Dirichlet rows with parameters
/// `beta`: `psi(beta_{kk'}) - psi(sum_k'' beta_{kk''})`.
pub fn expected_log_theta(beta: &Mat) -> Result<Mat> {
    if beta.as_slice().iter().any(|&b| b <= 0.0) {
        return Err(Error::Prior("beta entries must be positive".into()));
    }
    let mut out = Mat::zeros(beta.rows(), beta.cols());
    for r in 0..beta.rows() {
        let row = beta.row(r);
        let psi_sum = digamma(row.iter().sum());
        for c in 0..beta.cols() {
            out[(r, c)] = digamma(row[c]) - psi_sum;
        }
    }
    Ok(out)
}

/// KL divergence between two Dirichlet distributions with parameter rows
/// `beta` and `alpha`. Nonnegative, zero iff the parameters coincide.
pub fn kl_dirichlet(beta: &[f64], alpha: &[f64]) -> Result<f64> {
    if beta.len() != alpha.len() {
        return Err(Error::Prior(format!(
            "dimension mismatch: {} vs {}",
            beta.len(),
            alpha.len()
        )));
    }
    if beta.iter().chain(alpha).any(|&x| x <= 0.0) {
        return Err(Error::Prior("parameters must be positive".into()));
    }
    let sb: f64 = beta.iter().sum();
    let sa: f64 = alpha.iter().sum();
    let psi_sb = digamma(sb);
    let mut kl = ln_gamma(sb) - ln_gamma(sa);
    for (&b, &a) in beta.iter().zip(alpha) {
        kl += ln_gamma(a) - ln_gamma(b) + (b - a) * (digamma(b) - psi_sb);
    }
    Ok(kl.max(0.0))
}

/// Posterior mean of each diagonal confusion entry under Dirichlet rows
/// `beta`: `beta_kk / sum_k' beta_kk'`. Feeds the overconfidence histogram.
pub fn posterior_mean_diagonal(beta: &Mat) -> Vec<f64> {
    (0..beta.rows())
        .map(|r| {
            let s: f64 = beta.row(r).iter().sum();
            beta[(r, r)] / s
        })
        .collect()
}
