//! Dataset, posterior, and model file formats.
//!
//! All files are plain CSV with fixed headers and 0-based integer ids:
//!
//! * labels:    `task_id,worker_id,label`
//! * features:  `task_id,f0,...,f{d-1}`
//! * truth:     `task_id,label`
//! * posterior: `task_id,q0,...,q{K-1}`
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which round-trips every f64 bit-exactly. Writes go through a temp file
//! and an atomic rename. Loaders report malformed rows, out-of-range ids,
//! and duplicate (task, worker) pairs with their line numbers.

use crate::data::{Answer, CrowdDataset};
use crate::error::{Error, Result};
use crate::mat::Mat;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

/// 17-significant-digit decimal encoding; round-trips f64 exactly.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes `content` to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    {
        let mut f =
            std::fs::File::create(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.write_all(content.as_bytes())
            .map_err(|e| Error::io(tmp.display().to_string(), e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_usize(field: &str, path: &Path, line: usize, what: &'static str) -> Result<usize> {
    field.trim().parse().map_err(|_| Error::MalformedRow {
        path: path.display().to_string(),
        line,
        msg: format!("cannot parse {what} from '{field}'"),
    })
}

fn parse_f64(field: &str, path: &Path, line: usize) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::MalformedRow {
        path: path.display().to_string(),
        line,
        msg: format!("cannot parse float from '{field}'"),
    })
}

/// Reads an answer-triple CSV. Dimensions are inferred as max id + 1
/// unless explicit bounds are given.
pub fn load_labels(path: &Path) -> Result<Vec<(usize, usize, usize, usize)>> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != "task_id,worker_id,label" {
                return Err(Error::MalformedRow {
                    path: path.display().to_string(),
                    line: lineno,
                    msg: format!("expected header 'task_id,worker_id,label', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedRow {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let task = parse_usize(fields[0], path, lineno, "task_id")?;
        let worker = parse_usize(fields[1], path, lineno, "worker_id")?;
        let label = parse_usize(fields[2], path, lineno, "label")?;
        rows.push((task, worker, label, lineno));
    }
    Ok(rows)
}

/// Loads a dataset from a labels CSV plus optional feature and truth CSVs.
/// `num_classes` bounds the label alphabet; pass `None` to infer it.
pub fn load_dataset(
    labels_path: &Path,
    features_path: Option<&Path>,
    truth_path: Option<&Path>,
    num_classes: Option<usize>,
) -> Result<CrowdDataset> {
    let rows = load_labels(labels_path)?;
    let num_tasks = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let num_workers = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let k = num_classes.unwrap_or_else(|| rows.iter().map(|r| r.2 + 1).max().unwrap_or(2).max(2));

    let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(rows.len());
    let mut answers = Vec::with_capacity(rows.len());
    for &(task, worker, label, lineno) in &rows {
        if label >= k {
            return Err(Error::OutOfRange {
                path: labels_path.display().to_string(),
                line: lineno,
                what: "label",
                value: label,
                bound: k,
            });
        }
        if let Some(&first) = seen.get(&(task, worker)) {
            return Err(Error::DuplicatePair {
                path: labels_path.display().to_string(),
                task,
                worker,
                first_line: first,
                second_line: lineno,
            });
        }
        seen.insert((task, worker), lineno);
        answers.push(Answer {
            task,
            worker,
            label,
        });
    }

    let features = match features_path {
        Some(p) => Some(load_features(p, num_tasks)?),
        None => None,
    };
    let truth = match truth_path {
        Some(p) => Some(load_truth(p, num_tasks, k)?),
        None => None,
    };
    CrowdDataset::new(num_tasks, k, num_workers, answers, features, truth)
}

/// Reads a feature CSV; rows may arrive in any order but every task in
/// `0..num_tasks` must appear exactly once.
pub fn load_features(path: &Path, num_tasks: usize) -> Result<Mat> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::MalformedRow {
        path: path.display().to_string(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"task_id") || cols.len() < 2 {
        return Err(Error::MalformedRow {
            path: path.display().to_string(),
            line: 1,
            msg: format!("expected header 'task_id,f0,...', got '{header}'"),
        });
    }
    let dim = cols.len() - 1;
    let mut mat = Mat::zeros(num_tasks, dim);
    let mut filled = vec![false; num_tasks];
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::MalformedRow {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("expected {} fields, got {}", dim + 1, fields.len()),
            });
        }
        let task = parse_usize(fields[0], path, lineno, "task_id")?;
        if task >= num_tasks {
            return Err(Error::OutOfRange {
                path: path.display().to_string(),
                line: lineno,
                what: "task_id",
                value: task,
                bound: num_tasks,
            });
        }
        for (j, field) in fields[1..].iter().enumerate() {
            mat[(task, j)] = parse_f64(field, path, lineno)?;
        }
        filled[task] = true;
    }
    if let Some(missing) = filled.iter().position(|&f| !f) {
        return Err(Error::Data(format!(
            "{}: no feature row for task {missing}",
            path.display()
        )));
    }
    Ok(mat)
}

pub fn load_truth(path: &Path, num_tasks: usize, num_classes: usize) -> Result<Vec<usize>> {
    let text = read_to_string(path)?;
    let mut truth = vec![usize::MAX; num_tasks];
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != "task_id,label" {
                return Err(Error::MalformedRow {
                    path: path.display().to_string(),
                    line: lineno,
                    msg: format!("expected header 'task_id,label', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(Error::MalformedRow {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("expected 2 fields, got {}", fields.len()),
            });
        }
        let task = parse_usize(fields[0], path, lineno, "task_id")?;
        let label = parse_usize(fields[1], path, lineno, "label")?;
        if task >= num_tasks {
            return Err(Error::OutOfRange {
                path: path.display().to_string(),
                line: lineno,
                what: "task_id",
                value: task,
                bound: num_tasks,
            });
        }
        if label >= num_classes {
            return Err(Error::OutOfRange {
                path: path.display().to_string(),
                line: lineno,
                what: "label",
                value: label,
                bound: num_classes,
            });
        }
        truth[task] = label;
    }
    if let Some(missing) = truth.iter().position(|&t| t == usize::MAX) {
        return Err(Error::Data(format!(
            "{}: no truth row for task {missing}",
            path.display()
        )));
    }
    Ok(truth)
}

pub fn labels_csv(answers: &[Answer]) -> String {
    let mut out = String::from("task_id,worker_id,label\n");
    for a in answers {
        out.push_str(&format!("{},{},{}\n", a.task, a.worker, a.label));
    }
    out
}

pub fn features_csv(features: &Mat) -> String {
    let mut out = String::from("task_id");
    for j in 0..features.cols() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for i in 0..features.rows() {
        out.push_str(&i.to_string());
        for v in features.row(i) {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn truth_csv(truth: &[usize]) -> String {
    let mut out = String::from("task_id,label\n");
    for (i, &z) in truth.iter().enumerate() {
        out.push_str(&format!("{i},{z}\n"));
    }
    out
}

pub fn posterior_csv(q: &crate::data::LabelPosterior) -> String {
    let mut out = String::from("task_id");
    for z in 0..q.num_classes() {
        out.push_str(&format!(",q{z}"));
    }
    out.push('\n');
    for i in 0..q.num_tasks() {
        out.push_str(&i.to_string());
        for v in q.row(i) {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn load_posterior(path: &Path) -> Result<crate::data::LabelPosterior> {
    let text = read_to_string(path)?;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut k = 0;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if idx == 0 {
            k = line.split(',').count().saturating_sub(1);
            if k == 0 || !line.starts_with("task_id,q0") {
                return Err(Error::MalformedRow {
                    path: path.display().to_string(),
                    line: lineno,
                    msg: format!("expected header 'task_id,q0,...', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k + 1 {
            return Err(Error::MalformedRow {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("expected {} fields, got {}", k + 1, fields.len()),
            });
        }
        let task = parse_usize(fields[0], path, lineno, "task_id")?;
        let mut q = Vec::with_capacity(k);
        for f in &fields[1..] {
            q.push(parse_f64(f, path, lineno)?);
        }
        rows.push((task, q));
    }
    rows.sort_by_key(|r| r.0);
    let mat = Mat::from_rows(&rows.into_iter().map(|r| r.1).collect::<Vec<_>>());
    Ok(crate::data::LabelPosterior::new(mat))
}

/// Parses a flat `key = value` config file. Blank lines and `#` comments
/// are skipped; later keys override earlier ones.
pub fn parse_config_text(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value', got '{line}'", idx + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Parses a prior spec string: `onecoin:a1,a2`, `twocoin:a1,a2`, or
/// `full:a11,a12,...,aKK` (row-major, length K*K).
pub fn parse_prior(s: &str, num_classes: usize) -> Result<crate::priors::WorkerPrior> {
    let (family, params) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("prior '{s}' must look like 'family:params'")))?;
    let values: Vec<f64> = params
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad prior parameter '{p}'")))
        })
        .collect::<Result<_>>()?;
    let prior = match family {
        "onecoin" | "dir" => {
            if values.len() != 2 {
                return Err(Error::Config("onecoin prior needs exactly 2 parameters".into()));
            }
            crate::priors::WorkerPrior::one_coin(values[0], values[1])
        }
        "twocoin" => {
            if values.len() != 2 {
                return Err(Error::Config("twocoin prior needs exactly 2 parameters".into()));
            }
            crate::priors::WorkerPrior::two_coin(values[0], values[1])
        }
        "full" => {
            if values.len() != num_classes * num_classes {
                return Err(Error::Config(format!(
                    "full prior needs K*K = {} parameters, got {}",
                    num_classes * num_classes,
                    values.len()
                )));
            }
            crate::priors::WorkerPrior::full(Mat::from_vec(num_classes, num_classes, values))
        }
        other => return Err(Error::Config(format!("unknown prior family '{other}'"))),
    };
    prior.validate(num_classes)?;
    Ok(prior)
}
