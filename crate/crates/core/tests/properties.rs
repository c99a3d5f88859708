//! Property tests for the structural invariants: graph transposes, file
//! round trips, clipping fixed points, and message normalization.

use crowdbp::classifier::{clip_probs, ClipParam};
use crowdbp::data::{Answer, AssignmentGraph, CrowdDataset};
use crowdbp::io;
use crowdbp::mat::Mat;
use crowdbp::priors::WorkerPrior;
use proptest::prelude::*;

fn answer_strategy(
    num_tasks: usize,
    num_workers: usize,
    num_classes: usize,
) -> impl Strategy<Value = Vec<Answer>> {
    proptest::collection::btree_set((0..num_tasks, 0..num_workers), 0..40).prop_flat_map(
        move |pairs| {
            let pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
            let len = pairs.len();
            proptest::collection::vec(0..num_classes, len).prop_map(move |labels| {
                pairs
                    .iter()
                    .zip(&labels)
                    .map(|(&(task, worker), &label)| Answer {
                        task,
                        worker,
                        label,
                    })
                    .collect()
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_transpose_consistency(answers in answer_strategy(9, 7, 3)) {
        let g = AssignmentGraph::new(9, 3, 7, answers.clone());
        let by_task: usize = (0..9).map(|i| g.edges_of_task(i).len()).sum();
        let by_worker: usize = (0..7).map(|u| g.edges_of_worker(u).len()).sum();
        prop_assert_eq!(by_task, answers.len());
        prop_assert_eq!(by_worker, answers.len());
        for i in 0..9 {
            for &e in g.edges_of_task(i) {
                prop_assert_eq!(g.edge(e).task, i);
            }
        }
        for u in 0..7 {
            for &e in g.edges_of_worker(u) {
                prop_assert_eq!(g.edge(e).worker, u);
            }
        }
        // Every edge id appears exactly once on each side.
        let mut seen_t = vec![false; answers.len()];
        for i in 0..9 {
            for &e in g.edges_of_task(i) {
                prop_assert!(!seen_t[e]);
                seen_t[e] = true;
            }
        }
        prop_assert!(seen_t.iter().all(|&b| b));
    }

    #[test]
    fn dataset_file_round_trip(
        answers in answer_strategy(6, 5, 2),
        raw in proptest::collection::vec(-1e6f64..1e6, 18),
    ) {
        let dir = std::env::temp_dir().join(format!(
            "crowdbp-prop-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        // Loading infers the task count from the labels, so the feature
        // file must cover exactly that many rows.
        let n = answers.iter().map(|a| a.task + 1).max().unwrap_or(0);
        let features = Mat::from_vec(n, 3, raw[..n * 3].to_vec());
        let labels_path = dir.join("labels.csv");
        io::atomic_write(&labels_path, &io::labels_csv(&answers)).unwrap();
        let features_path = if n > 0 {
            let p = dir.join("features.csv");
            io::atomic_write(&p, &io::features_csv(&features)).unwrap();
            Some(p)
        } else {
            None
        };
        let loaded =
            io::load_dataset(&labels_path, features_path.as_deref(), None, Some(2)).unwrap();
        prop_assert_eq!(loaded.answers(), answers.as_slice());
        if n > 0 {
            prop_assert_eq!(loaded.features().unwrap().as_slice(), features.as_slice());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn clip_is_bounded_normalized_idempotent(
        raw in proptest::collection::vec(0.001f64..1.0, 4),
        c in 0.3f64..1.0,
    ) {
        let k = raw.len();
        prop_assume!(c > 1.0 / k as f64);
        let mut row = raw;
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
        let rows = Mat::from_rows(&[row]);
        let clip = ClipParam::new(c, k).unwrap();
        let once = clip_probs(&rows, clip);
        for &x in once.row(0) {
            prop_assert!(x <= c + 1e-12);
            prop_assert!(x >= 0.0);
        }
        prop_assert!((once.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let twice = clip_probs(&once, clip);
        prop_assert!(once.max_abs_diff(&twice) < 1e-12);
    }

    #[test]
    fn scenario_generation_is_pure(seed in any::<u64>()) {
        let mut spec = crowdbp::synth::ScenarioSpec::new(
            24, 12, 2, 2, 4, WorkerPrior::one_coin(1.5, 0.7), seed,
        );
        spec.feature_separation = 1.0;
        spec.test_tasks = 8;
        let a = crowdbp::synth::generate(&spec).unwrap();
        let b = crowdbp::synth::generate(&spec).unwrap();
        prop_assert_eq!(a.train.answers(), b.train.answers());
        prop_assert_eq!(a.train.truth(), b.train.truth());
        prop_assert_eq!(
            a.train.features().unwrap().as_slice(),
            b.train.features().unwrap().as_slice()
        );
    }

    #[test]
    fn bp_beliefs_and_messages_normalized(
        answers in answer_strategy(6, 4, 2),
        a1 in 0.3f64..3.0,
        a2 in 0.3f64..3.0,
    ) {
        let graph = AssignmentGraph::new(6, 2, 4, answers);
        let f = Mat::filled(6, 2, 0.5);
        let prior = WorkerPrior::one_coin(a1, a2);
        let (q, state) = crowdbp::bp::bp_run(
            &graph,
            &f,
            &prior,
            &crowdbp::bp::FactorEvalConfig::default(),
            30,
            1e-8,
            None,
            0,
        )
        .unwrap();
        for i in 0..6 {
            let s: f64 = q.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
        for msg in state.worker_to_task.iter().chain(&state.task_to_worker) {
            let s: f64 = msg.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(msg.iter().all(|&x| x.is_finite()));
        }
    }
}

#[test]
fn truth_is_invisible_to_engines() {
    // The dataset carries truth, but the graph handed to engines does not
    // expose it; the engine output must be identical with and without it.
    let answers = vec![
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
    ];
    let with_truth =
        CrowdDataset::new(2, 2, 1, answers.clone(), None, Some(vec![1, 0])).unwrap();
    let without = CrowdDataset::new(2, 2, 1, answers, None, None).unwrap();
    let config = crowdbp::driver::EMConfig::new(
        crowdbp::driver::Algorithm::Bp,
        WorkerPrior::one_coin(2.0, 1.0),
        0,
    );
    let a = crowdbp::driver::run_featureless(&with_truth, &config).unwrap();
    let b = crowdbp::driver::run_featureless(&without, &config).unwrap();
    assert_eq!(a.q.matrix().as_slice(), b.q.matrix().as_slice());
}
