use noisykit::dataset::{inject_noise, split, synthesize, LabeledDataset, SyntheticSpec};
use noisykit::estimator::{estimate_transition, fit_noisy_posterior, pick_anchors};
use noisykit::trainer::{compare_methods, evaluate_top1, run_trials, train_once, train_revision};
use noisykit::transition::sum_average_error;
use noisykit::{KnownMatrix, Method, TSource, TrainConfig, TransitionMatrix};

fn blobs(dim: usize, per_class: usize, sep: f64, seed: u64) -> LabeledDataset {
    synthesize(&SyntheticSpec {
        num_classes: 3,
        dim,
        samples_per_class: per_class,
        class_separation: sep,
        noise_sigma: 1.0,
        seed,
    })
    .unwrap()
}

#[test]
fn probe_class_averages_match_transition_rows() {
    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    let clean = blobs(8, 6000, 10.0, 1);
    let noisy = inject_noise(&clean, &t, 3).unwrap();
    let probe = fit_noisy_posterior(&noisy, &TrainConfig::default()).unwrap();
    let p = probe.predict_proba(noisy.features().view()).unwrap();
    for class in 0..3 {
        let rows: Vec<usize> = (0..clean.len()).filter(|&i| clean.labels()[i] == class).collect();
        for j in 0..3 {
            let avg = rows.iter().map(|&i| p[[i, j]]).sum::<f64>() / rows.len() as f64;
            assert!((avg - t.get(class, j)).abs() <= 0.05, "class {class} col {j}: {avg}");
        }
    }
}

#[test]
fn anchors_come_from_their_own_class() {
    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    let clean = blobs(8, 2000, 10.0, 4);
    let noisy = inject_noise(&clean, &t, 5).unwrap();
    let probe = fit_noisy_posterior(&noisy, &TrainConfig::default()).unwrap();
    let anchors = pick_anchors(&probe, &noisy, 5).unwrap();
    for (class, picked) in anchors.classes.iter().enumerate() {
        assert_eq!(picked.len(), 5);
        for a in picked {
            assert_eq!(clean.labels()[a.row], class);
        }
    }
}

#[test]
fn clean_labels_estimate_near_identity() {
    let clean = blobs(8, 2000, 10.0, 2);
    let (est, _) = estimate_transition(&clean, &TrainConfig::default(), 1).unwrap();
    let err = sum_average_error(&TransitionMatrix::identity(3), &est.matrix).unwrap();
    assert!(err <= 0.05, "{err}");
    assert!(!est.validity.near_singular);
}

#[test]
fn estimation_is_deterministic() {
    let t = TransitionMatrix::known(KnownMatrix::Fashion06);
    let noisy = inject_noise(&blobs(4, 300, 5.0, 1), &t, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let (a, _) = estimate_transition(&noisy, &cfg, 3).unwrap();
    let (b, _) = estimate_transition(&noisy, &cfg, 3).unwrap();
    assert_eq!(a.matrix, b.matrix);
}

/// Forward correction on noisy labels against cross-entropy on the clean
/// labels, averaged over 10 seeds. The claim concerns minimizers, so both
/// runs get a budget long enough to converge.
#[test]
fn forward_correction_approaches_clean_training() {
    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    let test = blobs(8, 1000, 3.0, 99);
    let (mut clean_acc, mut fwd_acc) = (0.0, 0.0);
    for seed in 0..10u64 {
        let clean = blobs(8, 2000, 3.0, 100 + seed);
        let noisy = inject_noise(&clean, &t, 200 + seed).unwrap();
        let cfg = TrainConfig {
            seed,
            epochs: 40,
            ..TrainConfig::default()
        };
        let c = split(&clean, 0.8, seed).unwrap();
        let model = train_once(&c.train, &c.validation, &cfg, None).unwrap().params;
        clean_acc += evaluate_top1(&model, &test).unwrap() / 10.0;

        let n = split(&noisy, 0.8, seed).unwrap();
        let cfg = TrainConfig {
            method: Method::Forward,
            ..cfg
        };
        let model = train_once(&n.train, &n.validation, &cfg, Some(&t)).unwrap().params;
        fwd_acc += evaluate_top1(&model, &test).unwrap() / 10.0;
    }
    assert!((clean_acc - fwd_acc).abs() <= 0.02, "clean {clean_acc:.4} forward {fwd_acc:.4}");
}

#[test]
fn identity_noise_leaves_methods_indistinguishable() {
    let pool = blobs(4, 300, 3.0, 1);
    let test = blobs(4, 300, 3.0, 2);
    let cfg = TrainConfig {
        trials: 5,
        epochs: 5,
        revision_epochs: 5,
        t_source: TSource::Provided(TransitionMatrix::identity(3)),
        ..TrainConfig::default()
    };
    let cmp = compare_methods(&pool, &test, &TransitionMatrix::identity(3), &cfg, 2).unwrap();
    for s in &cmp.summary {
        assert_eq!(s.trials, 5);
        assert_eq!(s.failed_trials, 0);
    }
    for a in &cmp.summary {
        for b in &cmp.summary {
            let gap = (a.mean_accuracy.unwrap() - b.mean_accuracy.unwrap()).abs();
            let spread = 2.0 * a.std_accuracy.unwrap().max(b.std_accuracy.unwrap());
            assert!(gap < spread.max(1e-12) || gap == 0.0, "{:?} vs {:?}", a, b);
        }
    }
}

#[test]
fn learned_slack_stays_small() {
    let t = TransitionMatrix::known(KnownMatrix::Fashion06);
    let noisy = inject_noise(&blobs(8, 2000, 3.0, 1), &t, 3).unwrap();
    let parts = split(&noisy, 0.8, 0).unwrap();
    let cfg = TrainConfig {
        method: Method::Revision,
        ..TrainConfig::default()
    };
    let out = train_revision(&parts.train, &parts.validation, &cfg, &t, None).unwrap();
    assert!(out.delta.max_abs() < 0.2, "{}", out.delta.max_abs());
    assert!(out.delta.max_abs() > 0.0);
}

#[test]
fn report_mean_lies_within_trial_range() {
    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    let pool = inject_noise(&blobs(4, 200, 3.0, 1), &t, 2).unwrap();
    let test = blobs(4, 100, 3.0, 3);
    let cfg = TrainConfig {
        method: Method::Reweight,
        trials: 4,
        epochs: 2,
        t_source: TSource::Known(KnownMatrix::Fashion05),
        ..TrainConfig::default()
    };
    let r = run_trials(&pool, &test, Some(&t), &cfg).unwrap();
    let accs = r.accuracies();
    let lo = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = r.mean_accuracy.unwrap();
    assert!(lo <= mean && mean <= hi);
    assert!(accs.iter().all(|a| (0.0..=1.0).contains(a)));
    for (k, trial) in r.trials.iter().enumerate() {
        assert_eq!(trial.seed_used, cfg.seed + k as u64);
    }
}
