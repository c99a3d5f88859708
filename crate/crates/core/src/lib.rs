//! Inference and learning from noisy crowdsourced labels.
//!
//! The crate models a crowdsourcing system as a bipartite graph between
//! tasks and workers, with Dirichlet-family priors over each worker's
//! confusion matrix and an optional feature-based classifier over tasks.
//! Two EM engines estimate the latent true labels:
//!
//! * mean-field coordinate ascent with a closed-form Dirichlet update for
//!   the worker posteriors ([`meanfield`]), and
//! * sum-product belief propagation on the task-worker factor graph with
//!   exact, dynamic-programming, and Monte-Carlo factor evaluation
//!   ([`bp`]).
//!
//! Both run featureless or jointly with a classifier trained on the soft
//! labels ([`driver`]). [`synth`] generates controlled synthetic scenarios
//! (regular assignment graphs, coin-model workers, spammer injection,
//! Gaussian class features), [`oracle`] provides brute-force posteriors for
//! verification, and [`sweep`] plus the `crowdbp` binary drive experiment
//! batteries with reproducible seeds.

pub mod bp;
pub mod classifier;
pub mod data;
pub mod driver;
pub mod error;
pub mod io;
pub mod mat;
pub mod meanfield;
pub mod oracle;
pub mod priors;
pub mod seed;
pub mod special;
pub mod sweep;
pub mod synth;

pub use data::{
    argmax_labels, denoised_accuracy, Answer, AssignmentGraph, CrowdDataset, LabelPosterior,
    MetricsReport,
};
pub use error::{Error, Result};
pub use mat::Mat;
pub use priors::{ConfusionMatrix, CountMatrix, WorkerPrior};
