//! Feature-based probabilistic classifiers trained on soft labels.
//!
//! Two desk-scale architectures: multinomial logistic regression and a
//! single-hidden-layer tanh network. Training maximizes the soft-label
//! log-likelihood `sum_i sum_k q_ik ln f(k; x_i)` minus an L2 penalty by
//! full-batch gradient descent, which is the M-step of the joint EM loops.
//! Everything is deterministic given the construction seed: parameters are
//! a flat vector, gradients are reduced in sample order.

use crate::data::LabelPosterior;
use crate::error::{Error, Result};
use crate::mat::Mat;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[default]
    Logistic,
    Mlp1 { hidden: usize },
}

/// Upper cap on any class probability fed to the inference step. Must
/// exceed `1/K` (at which the output would be forced uniform); `c = 1`
/// disables clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipParam {
    c: f64,
}

impl ClipParam {
    pub fn new(c: f64, num_classes: usize) -> Result<Self> {
        if c <= 1.0 / num_classes as f64 || c > 1.0 {
            return Err(Error::Config(format!(
                "clip parameter {c} must lie in (1/K, 1] with K = {num_classes}"
            )));
        }
        Ok(ClipParam { c })
    }

    pub fn value(&self) -> f64 {
        self.c
    }
}

/// Caps every entry at `c` and spreads the removed mass evenly over the
/// classes still below the cap, repeating until the row is a fixed point.
pub fn clip_probs(rows: &Mat, clip: ClipParam) -> Mat {
    let c = clip.value();
    let mut out = rows.clone();
    if c >= 1.0 {
        return out;
    }
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        loop {
            let mut excess = 0.0;
            let mut receivers = 0usize;
            for x in row.iter_mut() {
                if *x > c {
                    excess += *x - c;
                    *x = c;
                } else if *x < c {
                    receivers += 1;
                }
            }
            if excess <= 0.0 || receivers == 0 {
                break;
            }
            let share = excess / receivers as f64;
            for x in row.iter_mut() {
                if *x < c {
                    *x += share;
                }
            }
        }
    }
    out
}

/// Training options for [`ClassifierModel::fit_weighted`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOpts {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Halve the step until the loss stops increasing (guarantees a
    /// monotone loss trajectory).
    pub backtracking: bool,
    /// Adam-style adaptive moments instead of plain gradient steps.
    pub adam: bool,
}

impl Default for TrainOpts {
    fn default() -> Self {
        TrainOpts {
            epochs: 200,
            learning_rate: 0.5,
            backtracking: false,
            adam: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub kind: ClassifierKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub l2_lambda: f64,
    /// Flat parameter vector. Logistic: `[W (K*d), b (K)]`. Mlp1:
    /// `[W1 (H*d), b1 (H), W2 (K*H), b2 (K)]`, all row-major.
    pub params: Vec<f64>,
}

impl ClassifierModel {
    /// Hidden-layer parameters start uniform in `[-init_scale, init_scale]`
    /// from the seed; the output layer starts at zero, so an untrained
    /// model predicts exactly uniformly and the first EM inference step is
    /// not biased by an arbitrary random decision boundary.
    pub fn new(
        kind: ClassifierKind,
        input_dim: usize,
        num_classes: usize,
        l2_lambda: f64,
        init_scale: f64,
        seed: u64,
    ) -> Self {
        let n = param_count(kind, input_dim, num_classes);
        let mut params = vec![0.0; n];
        if let ClassifierKind::Mlp1 { hidden } = kind {
            if init_scale != 0.0 {
                let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
                for slot in params.iter_mut().take(hidden * input_dim + hidden) {
                    *slot = rng.gen_range(-init_scale..init_scale);
                }
            }
        }
        ClassifierModel {
            kind,
            input_dim,
            num_classes,
            l2_lambda,
            params,
        }
    }

    /// Randomizes every parameter uniformly in `[-scale, scale]`; used by
    /// gradient checks that need a generic point in parameter space.
    pub fn randomize_params(&mut self, scale: f64, seed: u64) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        for slot in &mut self.params {
            *slot = rng.gen_range(-scale..scale);
        }
    }

    /// Class probabilities for every feature row; rows sum to one.
    pub fn predict_proba(&self, features: &Mat) -> Result<Mat> {
        if features.cols() != self.input_dim {
            return Err(Error::Data(format!(
                "feature width {} does not match model input dim {}",
                features.cols(),
                self.input_dim
            )));
        }
        let n = features.rows();
        let k = self.num_classes;
        let mut out = Mat::zeros(n, k);
        let mut hidden_buf = vec![0.0; self.hidden_size()];
        for i in 0..n {
            self.logits(features.row(i), &mut hidden_buf, out.row_mut(i));
            crate::special::softmax_in_place(out.row_mut(i));
        }
        Ok(out)
    }

    /// Negative soft-label log-likelihood plus the L2 penalty.
    pub fn loss_weighted(&self, features: &Mat, q: &LabelPosterior) -> f64 {
        let probs = self
            .predict_proba(features)
            .expect("shape checked by caller");
        let mut loss = 0.0;
        for i in 0..features.rows() {
            let qi = q.row(i);
            let fi = probs.row(i);
            for k in 0..self.num_classes {
                if qi[k] > 0.0 {
                    loss -= qi[k] * fi[k].max(1e-300).ln();
                }
            }
        }
        loss + self.l2_lambda * self.params.iter().map(|p| p * p).sum::<f64>()
    }

    /// Analytic gradient of [`Self::loss_weighted`] with respect to the
    /// flat parameter vector, reduced in sample order.
    pub fn grad(&self, features: &Mat, q: &LabelPosterior) -> Vec<f64> {
        let n = features.rows();
        let k = self.num_classes;
        let d = self.input_dim;
        let mut g = vec![0.0; self.params.len()];
        let mut hidden = vec![0.0; self.hidden_size()];
        let mut logits = vec![0.0; k];
        for i in 0..n {
            let x = features.row(i);
            self.logits(x, &mut hidden, &mut logits);
            crate::special::softmax_in_place(&mut logits);
            let qi = q.row(i);
            // d loss / d logit = f - q
            match self.kind {
                ClassifierKind::Logistic => {
                    for kk in 0..k {
                        let delta = logits[kk] - qi[kk];
                        let row = &mut g[kk * d..(kk + 1) * d];
                        for (gj, &xj) in row.iter_mut().zip(x) {
                            *gj += delta * xj;
                        }
                        g[k * d + kk] += delta;
                    }
                }
                ClassifierKind::Mlp1 { hidden: h } => {
                    let (w2_off, b2_off) = (h * d + h, h * d + h + k * h);
                    // output layer
                    let mut dh = vec![0.0; h];
                    for kk in 0..k {
                        let delta = logits[kk] - qi[kk];
                        for j in 0..h {
                            g[w2_off + kk * h + j] += delta * hidden[j];
                            dh[j] += delta * self.params[w2_off + kk * h + j];
                        }
                        g[b2_off + kk] += delta;
                    }
                    // hidden layer through tanh
                    for j in 0..h {
                        let dz = dh[j] * (1.0 - hidden[j] * hidden[j]);
                        for (gj, &xj) in g[j * d..(j + 1) * d].iter_mut().zip(x) {
                            *gj += dz * xj;
                        }
                        g[h * d + j] += dz;
                    }
                }
            }
        }
        for (gi, pi) in g.iter_mut().zip(&self.params) {
            *gi += 2.0 * self.l2_lambda * pi;
        }
        g
    }

    /// Full-batch gradient descent on the weighted loss. The step uses the
    /// sample-mean gradient so the learning rate is independent of the
    /// dataset size. Deterministic; errors out if the loss goes non-finite.
    pub fn fit_weighted(
        &mut self,
        features: &Mat,
        q: &LabelPosterior,
        opts: TrainOpts,
    ) -> Result<FitReport> {
        if features.cols() != self.input_dim {
            return Err(Error::Data(format!(
                "feature width {} does not match model input dim {}",
                features.cols(),
                self.input_dim
            )));
        }
        let scale = 1.0 / features.rows().max(1) as f64;
        let mut loss = self.loss_weighted(features, q);
        let initial_loss = loss;
        let mut adam_m = vec![0.0; self.params.len()];
        let mut adam_v = vec![0.0; self.params.len()];
        for epoch in 0..opts.epochs {
            let mut g = self.grad(features, q);
            g.iter_mut().for_each(|x| *x *= scale);
            if opts.adam {
                let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                let t = (epoch + 1) as i32;
                for j in 0..self.params.len() {
                    adam_m[j] = b1 * adam_m[j] + (1.0 - b1) * g[j];
                    adam_v[j] = b2 * adam_v[j] + (1.0 - b2) * g[j] * g[j];
                    let mhat = adam_m[j] / (1.0 - b1.powi(t));
                    let vhat = adam_v[j] / (1.0 - b2.powi(t));
                    self.params[j] -= opts.learning_rate * mhat / (vhat.sqrt() + eps);
                }
                loss = self.loss_weighted(features, q);
            } else if opts.backtracking {
                let saved = self.params.clone();
                let mut step = opts.learning_rate;
                let mut accepted = false;
                for _ in 0..40 {
                    for j in 0..self.params.len() {
                        self.params[j] = saved[j] - step * g[j];
                    }
                    let new_loss = self.loss_weighted(features, q);
                    if new_loss.is_finite() && new_loss <= loss {
                        loss = new_loss;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    self.params = saved;
                    break; // at a (numerical) stationary point
                }
            } else {
                for j in 0..self.params.len() {
                    self.params[j] -= opts.learning_rate * g[j];
                }
                loss = self.loss_weighted(features, q);
            }
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch} (lr = {}); lower the learning rate",
                    opts.learning_rate
                )));
            }
        }
        Ok(FitReport {
            initial_loss,
            final_loss: loss,
        })
    }

    fn hidden_size(&self) -> usize {
        match self.kind {
            ClassifierKind::Logistic => 0,
            ClassifierKind::Mlp1 { hidden } => hidden,
        }
    }

    fn logits(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let d = self.input_dim;
        let k = self.num_classes;
        match self.kind {
            ClassifierKind::Logistic => {
                for kk in 0..k {
                    let w = &self.params[kk * d..(kk + 1) * d];
                    let b = self.params[k * d + kk];
                    out[kk] = b + dot(w, x);
                }
            }
            ClassifierKind::Mlp1 { hidden: h } => {
                let (b1_off, w2_off, b2_off) = (h * d, h * d + h, h * d + h + k * h);
                for j in 0..h {
                    let w = &self.params[j * d..(j + 1) * d];
                    hidden[j] = (self.params[b1_off + j] + dot(w, x)).tanh();
                }
                for kk in 0..k {
                    let w = &self.params[w2_off + kk * h..w2_off + (kk + 1) * h];
                    out[kk] = self.params[b2_off + kk] + dot(w, hidden);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitReport {
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn param_count(kind: ClassifierKind, d: usize, k: usize) -> usize {
    match kind {
        ClassifierKind::Logistic => k * d + k,
        ClassifierKind::Mlp1 { hidden } => hidden * d + hidden + k * hidden + k,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hard-label accuracy of the model on a labeled feature set.
pub fn test_accuracy(model: &ClassifierModel, features: &Mat, truth: &[usize]) -> Result<f64> {
    let probs = model.predict_proba(features)?;
    let hits = (0..features.rows())
        .filter(|&i| crate::data::argmax_row(probs.row(i)) == truth[i])
        .count();
    Ok(hits as f64 / truth.len().max(1) as f64)
}
