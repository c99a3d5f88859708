//! C ABI for the crowdbp inference library.
//!
//! The surface is handle-based: datasets and run results are opaque
//! pointers created and freed here, every call returns a [`CbpStatus`],
//! and failure details are retrievable per thread through
//! [`cbp_last_error_message`]. All entry points catch panics, so no
//! unwinding crosses the boundary.
//!
//! The generated header lives at `include/crowdbp.h`.
//!
//! Pointer contract for every function: handle and output pointers must
//! be non-null (checked, yielding `CBP_NULL_POINTER`), array pointers
//! must reference at least the documented number of elements, and string
//! pointers must be NUL-terminated. Handles are freed exactly once by
//! their `_free` function.
#![allow(clippy::missing_safety_doc)]

use crowdbp::bp::{FactorEvalConfig, FactorMode};
use crowdbp::classifier::ClassifierKind;
use crowdbp::data::{argmax_labels, denoised_accuracy, CrowdDataset};
use crowdbp::driver::{run, Algorithm, EMConfig, RunResult};
use crowdbp::mat::Mat;
use crowdbp::priors::WorkerPrior;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbpStatus {
    CbpOk = 0,
    CbpUsageError = 1,
    CbpDataError = 2,
    CbpRunError = 3,
    CbpNullPointer = 4,
    CbpBufferTooSmall = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbpAlgorithm {
    CbpAlgMv = 0,
    CbpAlgMf = 1,
    CbpAlgBp = 2,
    CbpAlgDeepMf = 3,
    CbpAlgDeepBp = 4,
    CbpAlgCl = 5,
    CbpAlgTrace = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbpPriorFamily {
    CbpPriorOneCoin = 0,
    CbpPriorTwoCoin = 1,
    CbpPriorFullDirichlet = 2,
}

/// Flat run configuration. `prior_alpha_full` is consulted only for the
/// full-Dirichlet family and must then point at `K*K` row-major
/// concentrations; it may be null otherwise.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CbpConfig {
    pub algorithm: CbpAlgorithm,
    pub prior_family: CbpPriorFamily,
    pub prior_alpha1: f64,
    pub prior_alpha2: f64,
    pub prior_alpha_full: *const f64,
    /// Classifier output cap in (1/K, 1]; 1 disables clipping.
    pub clip: f64,
    pub seed: u64,
    pub outer_rounds: u32,
    pub classifier_epochs: u32,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    /// One-hidden-layer size; 0 selects plain logistic regression.
    pub mlp_hidden: u32,
    pub mc_samples: u32,
    pub damping: f64,
    pub trace_lambda: f64,
    pub trace_init_delta: f64,
}

/// Opaque dataset handle.
pub struct CbpDataset {
    inner: CrowdDataset,
}

/// Opaque run-result handle.
pub struct CbpResult {
    inner: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl AsRef<str>) {
    let sanitized: String = msg.as_ref().chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &crowdbp::error::Error) -> CbpStatus {
    match err.exit_code() {
        1 => CbpStatus::CbpUsageError,
        2 => CbpStatus::CbpDataError,
        _ => CbpStatus::CbpRunError,
    }
}

fn guard<F: FnOnce() -> CbpStatus>(f: F) -> CbpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".to_string());
            set_error(format!("panic: {msg}"));
            CbpStatus::CbpRunError
        }
    }
}

/// Copies the calling thread's last error message into `buffer` (NUL
/// terminated, truncated to fit) and returns the full length in bytes
/// including the terminator. A null or empty buffer just reports the
/// required length.
#[no_mangle]
pub unsafe extern "C" fn cbp_last_error_message(buffer: *mut c_char, buffer_len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buffer.is_null() && buffer_len > 0 {
            let n = bytes.len().min(buffer_len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buffer, n);
            *buffer.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Fills `out` with the default configuration: featureless BP under a
/// OneCoin(2, 1) prior.
#[no_mangle]
pub unsafe extern "C" fn cbp_config_default(out: *mut CbpConfig) -> CbpStatus {
    if out.is_null() {
        return CbpStatus::CbpNullPointer;
    }
    *out = CbpConfig {
        algorithm: CbpAlgorithm::CbpAlgBp,
        prior_family: CbpPriorFamily::CbpPriorOneCoin,
        prior_alpha1: 2.0,
        prior_alpha2: 1.0,
        prior_alpha_full: std::ptr::null(),
        clip: 0.9,
        seed: 0,
        outer_rounds: 50,
        classifier_epochs: 200,
        learning_rate: 0.5,
        l2_lambda: 1e-4,
        mlp_hidden: 0,
        mc_samples: 400,
        damping: 0.0,
        trace_lambda: 0.0,
        trace_init_delta: 2.0,
    };
    CbpStatus::CbpOk
}

/// Builds a dataset from parallel answer arrays. Labels and ids are
/// validated; duplicates and range violations yield `CBP_DATA_ERROR`.
#[no_mangle]
pub unsafe extern "C" fn cbp_dataset_from_answers(
    num_tasks: usize,
    num_classes: usize,
    num_workers: usize,
    num_answers: usize,
    tasks: *const usize,
    workers: *const usize,
    labels: *const usize,
    out: *mut *mut CbpDataset,
) -> CbpStatus {
    if out.is_null() || (num_answers > 0 && (tasks.is_null() || workers.is_null() || labels.is_null())) {
        return CbpStatus::CbpNullPointer;
    }
    guard(|| {
        let answers: Vec<crowdbp::data::Answer> = (0..num_answers)
            .map(|i| crowdbp::data::Answer {
                task: *tasks.add(i),
                worker: *workers.add(i),
                label: *labels.add(i),
            })
            .collect();
        match CrowdDataset::new(num_tasks, num_classes, num_workers, answers, None, None) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CbpDataset { inner }));
                CbpStatus::CbpOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Loads a dataset from the CSV formats used by the CLI. `features_path`
/// and `truth_path` may be null.
#[no_mangle]
pub unsafe extern "C" fn cbp_dataset_load(
    labels_path: *const c_char,
    features_path: *const c_char,
    truth_path: *const c_char,
    out: *mut *mut CbpDataset,
) -> CbpStatus {
    if labels_path.is_null() || out.is_null() {
        return CbpStatus::CbpNullPointer;
    }
    guard(|| {
        let to_path = |p: *const c_char| -> Option<std::path::PathBuf> {
            if p.is_null() {
                None
            } else {
                Some(Path::new(CStr::from_ptr(p).to_string_lossy().as_ref()).to_path_buf())
            }
        };
        let labels = to_path(labels_path).unwrap();
        let features = to_path(features_path);
        let truth = to_path(truth_path);
        match crowdbp::io::load_dataset(&labels, features.as_deref(), truth.as_deref(), None) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CbpDataset { inner }));
                CbpStatus::CbpOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Attaches an `num_tasks x dim` row-major feature matrix to the dataset.
#[no_mangle]
pub unsafe extern "C" fn cbp_dataset_set_features(
    dataset: *mut CbpDataset,
    dim: usize,
    row_major: *const f64,
) -> CbpStatus {
    if dataset.is_null() || row_major.is_null() {
        return CbpStatus::CbpNullPointer;
    }
    guard(|| {
        let ds = &mut (*dataset).inner;
        let n = ds.num_tasks();
        let data = std::slice::from_raw_parts(row_major, n * dim).to_vec();
        let rebuilt = CrowdDataset::new(
            n,
            ds.num_classes(),
            ds.num_workers(),
            ds.answers().to_vec(),
            Some(Mat::from_vec(n, dim, data)),
            ds.truth().map(|t| t.to_vec()),
        );
        match rebuilt {
            Ok(inner) => {
                (*dataset).inner = inner;
                CbpStatus::CbpOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cbp_dataset_num_tasks(dataset: *const CbpDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.num_tasks()
}

#[no_mangle]
pub unsafe extern "C" fn cbp_dataset_num_classes(dataset: *const CbpDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.num_classes()
}

#[no_mangle]
pub unsafe extern "C" fn cbp_dataset_num_workers(dataset: *const CbpDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.num_workers()
}

#[no_mangle]
pub unsafe extern "C" fn cbp_dataset_free(dataset: *mut CbpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

fn build_config(config: &CbpConfig, num_classes: usize) -> Result<EMConfig, crowdbp::error::Error> {
    let algorithm = match config.algorithm {
        CbpAlgorithm::CbpAlgMv => Algorithm::Mv,
        CbpAlgorithm::CbpAlgMf => Algorithm::Mf,
        CbpAlgorithm::CbpAlgBp => Algorithm::Bp,
        CbpAlgorithm::CbpAlgDeepMf => Algorithm::DeepMf,
        CbpAlgorithm::CbpAlgDeepBp => Algorithm::DeepBp,
        CbpAlgorithm::CbpAlgCl => Algorithm::Cl,
        CbpAlgorithm::CbpAlgTrace => Algorithm::Trace,
    };
    let prior = match config.prior_family {
        CbpPriorFamily::CbpPriorOneCoin => {
            WorkerPrior::one_coin(config.prior_alpha1, config.prior_alpha2)
        }
        CbpPriorFamily::CbpPriorTwoCoin => {
            WorkerPrior::two_coin(config.prior_alpha1, config.prior_alpha2)
        }
        CbpPriorFamily::CbpPriorFullDirichlet => {
            if config.prior_alpha_full.is_null() {
                return Err(crowdbp::error::Error::Config(
                    "full-Dirichlet prior requires prior_alpha_full".into(),
                ));
            }
            let data = unsafe {
                std::slice::from_raw_parts(config.prior_alpha_full, num_classes * num_classes)
            };
            WorkerPrior::full(Mat::from_vec(num_classes, num_classes, data.to_vec()))
        }
    };
    prior.validate(num_classes)?;
    let mut em = EMConfig::new(algorithm, prior, config.seed);
    em.clip = config.clip;
    em.outer_rounds = config.outer_rounds.max(1) as usize;
    em.classifier.epochs = config.classifier_epochs as usize;
    em.classifier.learning_rate = config.learning_rate;
    em.classifier.l2_lambda = config.l2_lambda;
    em.classifier.kind = if config.mlp_hidden > 0 {
        ClassifierKind::Mlp1 {
            hidden: config.mlp_hidden as usize,
        }
    } else {
        ClassifierKind::Logistic
    };
    em.factor = FactorEvalConfig {
        mode: FactorMode::Auto,
        samples: config.mc_samples.max(1) as usize,
        exact_degree_cap: 10,
        damping: config.damping,
    };
    em.trace_lambda = config.trace_lambda;
    em.trace_init_delta = config.trace_init_delta;
    Ok(em)
}

/// Runs the configured algorithm, producing a result handle.
#[no_mangle]
pub unsafe extern "C" fn cbp_run(
    dataset: *const CbpDataset,
    config: *const CbpConfig,
    out: *mut *mut CbpResult,
) -> CbpStatus {
    if dataset.is_null() || config.is_null() || out.is_null() {
        return CbpStatus::CbpNullPointer;
    }
    guard(|| {
        let ds = &(*dataset).inner;
        let em = match build_config(&*config, ds.num_classes()) {
            Ok(em) => em,
            Err(e) => {
                set_error(e.to_string());
                return status_of(&e);
            }
        };
        match run(ds, &em) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CbpResult { inner }));
                CbpStatus::CbpOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cbp_result_num_tasks(result: *const CbpResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.q.num_tasks()
}

#[no_mangle]
pub unsafe extern "C" fn cbp_result_num_classes(result: *const CbpResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.q.num_classes()
}

#[no_mangle]
pub unsafe extern "C" fn cbp_result_rounds(result: *const CbpResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.rounds
}

/// Copies the `num_tasks x num_classes` posterior, row-major, into
/// `buffer`.
#[no_mangle]
pub unsafe extern "C" fn cbp_result_posterior(
    result: *const CbpResult,
    buffer: *mut f64,
    buffer_len: usize,
) -> CbpStatus {
    if result.is_null() || buffer.is_null() {
        return CbpStatus::CbpNullPointer;
    }
    let q = (*result).inner.q.matrix();
    let needed = q.rows() * q.cols();
    if buffer_len < needed {
        set_error(format!("posterior needs {needed} doubles, buffer has {buffer_len}"));
        return CbpStatus::CbpBufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(q.as_slice().as_ptr(), buffer, needed);
    CbpStatus::CbpOk
}

/// Copies the argmax labels (ties to the lowest class) into `buffer`.
#[no_mangle]
pub unsafe extern "C" fn cbp_result_labels(
    result: *const CbpResult,
    buffer: *mut usize,
    buffer_len: usize,
) -> CbpStatus {
    if result.is_null() || buffer.is_null() {
        return CbpStatus::CbpNullPointer;
    }
    let labels = argmax_labels(&(*result).inner.q);
    if buffer_len < labels.len() {
        set_error(format!(
            "labels need {} slots, buffer has {buffer_len}",
            labels.len()
        ));
        return CbpStatus::CbpBufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(labels.as_ptr(), buffer, labels.len());
    CbpStatus::CbpOk
}

/// Accuracy of the result's argmax labels against the dataset's ground
/// truth; fails with `CBP_DATA_ERROR` when the dataset has no truth.
#[no_mangle]
pub unsafe extern "C" fn cbp_result_denoised_accuracy(
    result: *const CbpResult,
    dataset: *const CbpDataset,
    out: *mut f64,
) -> CbpStatus {
    if result.is_null() || dataset.is_null() || out.is_null() {
        return CbpStatus::CbpNullPointer;
    }
    guard(|| {
        let truth = match (*dataset).inner.require_truth() {
            Ok(t) => t,
            Err(e) => {
                set_error(e.to_string());
                return status_of(&e);
            }
        };
        match denoised_accuracy(&(*result).inner.q, truth) {
            Ok(acc) => {
                *out = acc;
                CbpStatus::CbpOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cbp_result_free(result: *mut CbpResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_dataset() -> *mut CbpDataset {
        // Three tasks, two workers; worker 0 is consistent, worker 1 flips
        // task 2.
        let tasks = [0usize, 1, 2, 0, 2];
        let workers = [0usize, 0, 0, 1, 1];
        let labels = [0usize, 1, 0, 0, 1];
        let mut handle: *mut CbpDataset = std::ptr::null_mut();
        let status = unsafe {
            cbp_dataset_from_answers(
                3,
                2,
                2,
                5,
                tasks.as_ptr(),
                workers.as_ptr(),
                labels.as_ptr(),
                &mut handle,
            )
        };
        assert_eq!(status, CbpStatus::CbpOk);
        handle
    }

    #[test]
    fn run_bp_through_the_c_surface() {
        let ds = sample_dataset();
        let mut config = unsafe { std::mem::zeroed::<CbpConfig>() };
        assert_eq!(unsafe { cbp_config_default(&mut config) }, CbpStatus::CbpOk);
        config.prior_alpha1 = 2.0;
        config.prior_alpha2 = 1.0;

        let mut result: *mut CbpResult = std::ptr::null_mut();
        assert_eq!(
            unsafe { cbp_run(ds, &config, &mut result) },
            CbpStatus::CbpOk
        );
        assert_eq!(unsafe { cbp_result_num_tasks(result) }, 3);
        assert_eq!(unsafe { cbp_result_num_classes(result) }, 2);

        let mut posterior = [0.0f64; 6];
        assert_eq!(
            unsafe { cbp_result_posterior(result, posterior.as_mut_ptr(), 6) },
            CbpStatus::CbpOk
        );
        for row in posterior.chunks(2) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let mut labels = [0usize; 3];
        assert_eq!(
            unsafe { cbp_result_labels(result, labels.as_mut_ptr(), 3) },
            CbpStatus::CbpOk
        );
        assert_eq!(labels[0], 0);
        assert_eq!(labels[1], 1);

        // Too-small buffer is reported, with a readable message.
        assert_eq!(
            unsafe { cbp_result_posterior(result, posterior.as_mut_ptr(), 2) },
            CbpStatus::CbpBufferTooSmall
        );
        let mut msg = [0 as c_char; 128];
        let len = unsafe { cbp_last_error_message(msg.as_mut_ptr(), msg.len()) };
        assert!(len > 1);

        unsafe {
            cbp_result_free(result);
            cbp_dataset_free(ds);
        }
    }

    #[test]
    fn invalid_inputs_surface_as_status_codes() {
        // Duplicate pair.
        let tasks = [0usize, 0];
        let workers = [0usize, 0];
        let labels = [0usize, 1];
        let mut handle: *mut CbpDataset = std::ptr::null_mut();
        let status = unsafe {
            cbp_dataset_from_answers(
                1,
                2,
                1,
                2,
                tasks.as_ptr(),
                workers.as_ptr(),
                labels.as_ptr(),
                &mut handle,
            )
        };
        assert_eq!(status, CbpStatus::CbpDataError);
        let mut msg = vec![0 as c_char; 256];
        let len = unsafe { cbp_last_error_message(msg.as_mut_ptr(), msg.len()) };
        let text = unsafe { CStr::from_ptr(msg.as_ptr()) }.to_string_lossy();
        assert!(len > 1 && text.contains("duplicate"), "{text}");

        // Null pointers.
        assert_eq!(
            unsafe { cbp_run(std::ptr::null(), std::ptr::null(), std::ptr::null_mut()) },
            CbpStatus::CbpNullPointer
        );

        // Bad prior.
        let ds = sample_dataset();
        let mut config = unsafe { std::mem::zeroed::<CbpConfig>() };
        unsafe { cbp_config_default(&mut config) };
        config.prior_alpha1 = -1.0;
        let mut result: *mut CbpResult = std::ptr::null_mut();
        assert_eq!(
            unsafe { cbp_run(ds, &config, &mut result) },
            CbpStatus::CbpUsageError
        );
        config.prior_alpha1 = 2.0;
        // Full prior without the matrix pointer.
        config.prior_family = CbpPriorFamily::CbpPriorFullDirichlet;
        assert_eq!(
            unsafe { cbp_run(ds, &config, &mut result) },
            CbpStatus::CbpUsageError
        );
        unsafe { cbp_dataset_free(ds) };
    }

    #[test]
    fn deep_run_with_features() {
        let ds = sample_dataset();
        let features = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(
            unsafe { cbp_dataset_set_features(ds, 2, features.as_ptr()) },
            CbpStatus::CbpOk
        );
        let mut config = unsafe { std::mem::zeroed::<CbpConfig>() };
        unsafe { cbp_config_default(&mut config) };
        config.algorithm = CbpAlgorithm::CbpAlgDeepBp;
        config.seed = 3;
        config.outer_rounds = 3;
        config.classifier_epochs = 20;
        let mut result: *mut CbpResult = std::ptr::null_mut();
        assert_eq!(
            unsafe { cbp_run(ds, &config, &mut result) },
            CbpStatus::CbpOk
        );
        assert!(unsafe { cbp_result_rounds(result) } >= 1);

        // Determinism through the ABI.
        let mut q1 = [0.0f64; 6];
        unsafe { cbp_result_posterior(result, q1.as_mut_ptr(), 6) };
        let mut result2: *mut CbpResult = std::ptr::null_mut();
        assert_eq!(
            unsafe { cbp_run(ds, &config, &mut result2) },
            CbpStatus::CbpOk
        );
        let mut q2 = [0.0f64; 6];
        unsafe { cbp_result_posterior(result2, q2.as_mut_ptr(), 6) };
        assert_eq!(q1, q2);

        unsafe {
            cbp_result_free(result);
            cbp_result_free(result2);
            cbp_dataset_free(ds);
        }
    }
}
