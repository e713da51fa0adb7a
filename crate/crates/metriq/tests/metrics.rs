use histocad_core::{ClassLabel, LogMeta, PatchPrediction, PredictionLog, NUM_CLASSES};
use histocad_metriq::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn label(i: usize) -> ClassLabel {
    ClassLabel::from_index(i).unwrap()
}

fn random_log(rng: &mut ChaCha8Rng, n: usize, patients: usize) -> PredictionLog {
    let mut records = Vec::new();
    let truths: Vec<usize> = (0..patients).map(|_| rng.gen_range(0..NUM_CLASSES)).collect();
    for i in 0..n {
        let p = rng.gen_range(0..patients);
        let t = truths[p];
        let mut probs: Vec<f64> = (0..NUM_CLASSES).map(|_| rng.gen_range(0.0..1.0)).collect();
        if rng.gen_bool(0.7) {
            probs[t] += 3.0;
        }
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|v| *v /= s);
        records.push(
            PatchPrediction::from_probabilities(format!("s{p}"), format!("p{p}"), i, 0, Some(label(t)), probs, 0.0)
                .unwrap(),
        );
    }
    PredictionLog { meta: LogMeta::default(), records }
}

/// One-vs-rest metrics straight from (truth, prediction) pairs, no matrix.
fn direct_macro(pairs: &[(usize, usize)], k: usize) -> (f64, f64, f64, f64) {
    let n = pairs.len() as f64;
    let (mut acc, mut sens, mut spec, mut f1) = (vec![], vec![], vec![], vec![]);
    for c in 0..k {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
        let tn = n - tp - fn_ - fp;
        acc.push((tp + tn) / n);
        if tp + fn_ > 0.0 {
            sens.push(tp / (tp + fn_));
            f1.push(2.0 * tp / (2.0 * tp + fp + fn_));
        }
        if tn + fp > 0.0 {
            spec.push(tn / (tn + fp));
        }
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&acc), mean(&sens), mean(&spec), mean(&f1))
}

#[test]
fn two_class_hand_example() {
    let cm = ConfusionMatrix::from_rows(&[vec![8, 2], vec![1, 9]]).unwrap();
    let m = macro_metrics(&cm, Level::Tile).unwrap();
    assert!((m.per_class[0].sensitivity.unwrap() - 0.8).abs() < 1e-12);
    assert!((m.per_class[1].sensitivity.unwrap() - 0.9).abs() < 1e-12);
    assert!((m.sensitivity - 0.85).abs() < 1e-12);
    assert!((m.specificity - 0.85).abs() < 1e-12);
    assert!((m.accuracy - 17.0 / 20.0).abs() < 1e-12);
    assert!((m.f1 - (16.0 / 19.0 + 18.0 / 21.0) / 2.0).abs() < 1e-12);
}

#[test]
fn three_unit_tally_and_perfect_predictions() {
    let (a, b) = (label(0), label(5));
    let cm = ConfusionMatrix::from_labels(&[(a, a), (a, b), (b, b)]);
    assert_eq!(cm.restrict(&[0, 5]).rows(), vec![vec![1, 1], vec![0, 1]]);

    let pairs: Vec<_> = (0..33).map(|i| (label(i % 11), label(i % 11))).collect();
    let cm = ConfusionMatrix::from_labels(&pairs);
    assert_eq!(cm.trace(), 33);
    let m = macro_metrics(&cm, Level::Tile).unwrap();
    assert_eq!((m.accuracy, m.sensitivity, m.specificity, m.f1), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn errors() {
    assert!(matches!(macro_metrics(&ConfusionMatrix::new(11), Level::Tile), Err(MetricError::EmptyInput)));
    assert!(matches!(ConfusionMatrix::new(2).add(2, 0), Err(MetricError::Label { index: 2, k: 2 })));
    let mut log = random_log(&mut ChaCha8Rng::seed_from_u64(0), 5, 2);
    log.records[0].true_label = None;
    assert!(matches!(ConfusionMatrix::from_log(&log), Err(MetricError::MissingTruth { .. })));
    let mut log = random_log(&mut ChaCha8Rng::seed_from_u64(0), 5, 2);
    log.records[1].probabilities[0] += 0.01;
    assert!(matches!(brier_score(&log), Err(MetricError::Validation(_))));
}

#[test]
fn classes_without_instances_are_excluded_and_noted() {
    let cm = ConfusionMatrix::from_labels(&[(label(0), label(0)), (label(1), label(0))]);
    let m = macro_metrics(&cm, Level::Tile).unwrap();
    assert_eq!(m.excluded_classes, (2..11).collect::<Vec<_>>());
    assert!((m.sensitivity - 0.5).abs() < 1e-12);
}

#[test]
fn brier_closed_forms() {
    let uniform = vec![1.0 / 11.0; 11];
    for t in 0..11 {
        assert!((brier_one(&uniform, t).unwrap() - 110.0 / 121.0).abs() < 1e-12);
    }
    let mut onehot = vec![0.0; 11];
    onehot[4] = 1.0;
    assert_eq!(brier_one(&onehot, 4).unwrap(), 0.0);
    assert_eq!(brier_one(&onehot, 5).unwrap(), 2.0);
}

#[test]
fn calibration_bins_partition_and_extremes() {
    let pts = vec![(1.0, true); 7];
    let bins = calibration_bins(&pts, 10);
    assert_eq!(bins.len(), 10);
    assert_eq!(bins.iter().filter(|b| b.count > 0).count(), 1);
    assert_eq!((bins[9].mean_confidence, bins[9].accuracy), (Some(1.0), Some(1.0)));
    assert!(bins[0].mean_confidence.is_none());
    assert_eq!(bin_index(0.1, 10), 1);
    assert_eq!(bin_index(0.0999, 10), 0);
}

#[test]
fn perfectly_calibrated_generator() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pts: Vec<(f64, bool)> = (0..100_000)
        .map(|_| {
            let p: f64 = rng.gen_range(0.0..1.0);
            (p, rng.gen_bool(p))
        })
        .collect();
    let bins = calibration_bins(&pts, 10);
    assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 100_000);
    for b in bins {
        assert!((b.accuracy.unwrap() - b.mean_confidence.unwrap()).abs() < 0.02, "{b:?}");
    }
}

#[test]
fn bootstrap_contract() {
    let data: Vec<f64> = (0..50).map(|i| (i % 7) as f64 / 7.0).collect();
    let mean = |s: &[&f64]| s.iter().copied().sum::<f64>() / s.len() as f64;
    let cfg = BootstrapConfig { seed: 5, ..BootstrapConfig::default() };
    let a = bootstrap_ci(&data, mean, &cfg).unwrap();
    let b = bootstrap_ci(&data, mean, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.contains(a.point) && a.lower >= 0.0 && a.upper <= 1.0 && a.width() > 0.0);
    let c = bootstrap_ci(&data, mean, &BootstrapConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a, c);

    let constant = vec![0.4; 30];
    let z = bootstrap_ci(&constant, mean, &cfg).unwrap();
    assert_eq!(z.width(), 0.0);
    assert!(!z.degenerate);

    let single = bootstrap_ci(&[0.3], mean, &cfg).unwrap();
    assert!(single.degenerate);
    assert!(bootstrap_ci::<f64, _>(&[], mean, &cfg).is_err());
}

#[test]
fn bootstrap_coverage_on_bernoulli_data() {
    let p = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let trials = 500;
    let mut covered = 0;
    for t in 0..trials {
        let data: Vec<f64> = (0..200).map(|_| if rng.gen_bool(p) { 1.0 } else { 0.0 }).collect();
        let cfg = BootstrapConfig { seed: t, ..BootstrapConfig::default() };
        let ci = bootstrap_ci(&data, |s| s.iter().copied().sum::<f64>() / s.len() as f64, &cfg).unwrap();
        covered += ci.contains(p) as usize;
    }
    let coverage = covered as f64 / trials as f64;
    assert!((coverage - 0.95).abs() <= 0.02, "coverage {coverage}");
}

#[test]
fn patient_level_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let log = random_log(&mut rng, 2000, 60);
    let outcomes = patient_outcomes(&log, &histocad_verdict::VoteConfig::default()).unwrap();

    let mut pairs = Vec::new();
    let mut ids: Vec<&str> = log.records.iter().map(|r| r.patient_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    for id in ids {
        let recs: Vec<_> = log.records.iter().filter(|r| r.patient_id == id).collect();
        let mut counts = [0usize; NUM_CLASSES];
        for r in &recs {
            counts[r.predicted_label.index()] += 1;
        }
        let top = *counts.iter().max().unwrap();
        let pred = counts.iter().position(|&c| c == top).unwrap();
        pairs.push((recs[0].true_label.unwrap().index(), pred));
    }
    assert_eq!(outcomes.len(), pairs.len());
    let cm = patient_confusion(&outcomes);
    let m = macro_metrics(&cm, Level::Patient).unwrap();
    let (acc, sens, spec, f1) = direct_macro(&pairs, NUM_CLASSES);
    assert_eq!((m.accuracy, m.sensitivity, m.specificity, m.f1), (acc, sens, spec, f1));
}

#[test]
fn inconsistent_patient_truth_is_rejected() {
    let mut log = random_log(&mut ChaCha8Rng::seed_from_u64(3), 10, 1);
    log.records[3].true_label = Some(label((log.records[0].true_label.unwrap().index() + 1) % 11));
    assert!(matches!(
        patient_outcomes(&log, &histocad_verdict::VoteConfig::default()),
        Err(MetricError::InconsistentTruth(_))
    ));
}

#[test]
fn reports_write_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let log = random_log(&mut ChaCha8Rng::seed_from_u64(8), 300, 30);
    let boot = BootstrapConfig { n_resamples: 200, ..BootstrapConfig::default() };
    for level in [Level::Tile, Level::Patient] {
        let report = build_report(&log, level, &boot).unwrap();
        let (json, csv) = write_report(&report, &dir.path().join(format!("{level:?}"))).unwrap();
        let back: Report = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(back.metrics, report.metrics);
        let mut rdr = csv::Reader::from_path(csv).unwrap();
        assert_eq!(rdr.records().count(), 11);
        for ci in report.intervals.values() {
            assert!(ci.contains(ci.point));
        }
        assert_eq!(report.calibration.is_some(), level == Level::Tile);
        if let Some(cal) = &report.calibration {
            assert_eq!(cal.bins.iter().map(|b| b.count).sum::<usize>(), 300);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_and_direct_paths_agree(seed in any::<u64>(), n in 1usize..400) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let log = random_log(&mut rng, n, 20);
        let cm = ConfusionMatrix::from_log(&log).unwrap();
        prop_assert_eq!(cm.total(), n as u64);
        let pairs: Vec<_> = log.records.iter().map(|r| (r.true_label.unwrap().index(), r.predicted_label.index())).collect();
        for c in 0..NUM_CLASSES {
            prop_assert_eq!(cm.row_sum(c), pairs.iter().filter(|p| p.0 == c).count() as u64);
            prop_assert_eq!(cm.col_sum(c), pairs.iter().filter(|p| p.1 == c).count() as u64);
        }
        let m = macro_metrics(&cm, Level::Tile).unwrap();
        let (acc, sens, spec, f1) = direct_macro(&pairs, NUM_CLASSES);
        prop_assert_eq!((m.accuracy, m.sensitivity, m.specificity, m.f1), (acc, sens, spec, f1));
        for v in [m.accuracy, m.sensitivity, m.specificity, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }

        let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let p = macro_metrics(&cm.permuted(&order), Level::Tile).unwrap();
        for (x, y) in [(m.accuracy, p.accuracy), (m.sensitivity, p.sensitivity), (m.specificity, p.specificity), (m.f1, p.f1)] {
            prop_assert!((x - y).abs() < 1e-12);
        }

        let b = brier_score(&log).unwrap();
        prop_assert!((0.0..=2.0).contains(&b));
        let bins = calibration_curve(&log, 10).unwrap();
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), n);
    }
}
