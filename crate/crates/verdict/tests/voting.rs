use std::collections::HashMap;

use histocad_core::{ClassLabel, LogMeta, PatchPrediction, PredictionLog, NUM_CLASSES};
use histocad_verdict::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn label(i: usize) -> ClassLabel {
    ClassLabel::from_index(i).unwrap()
}

fn record(slide: &str, patient: &str, i: usize, l: ClassLabel) -> PatchPrediction {
    let mut p = vec![0.05 / 10.0; NUM_CLASSES];
    p[l.index()] = 0.95;
    PatchPrediction::from_probabilities(slide, patient, i / 100, i % 100, None, p, 0.0).unwrap()
}

fn log_of(labels: &[ClassLabel]) -> PredictionLog {
    PredictionLog {
        meta: LogMeta::default(),
        records: labels.iter().enumerate().map(|(i, &l)| record("s1", "p1", i, l)).collect(),
    }
}

/// Most frequent label by direct counting in a hash map; `None` on a tie.
fn brute_mode(labels: &[ClassLabel]) -> Option<ClassLabel> {
    let mut counts: HashMap<ClassLabel, usize> = HashMap::new();
    for l in labels {
        *counts.entry(*l).or_default() += 1;
    }
    let top = *counts.values().max()?;
    let winners: Vec<_> = counts.iter().filter(|(_, &c)| c == top).map(|(l, _)| *l).collect();
    (winners.len() == 1).then(|| winners[0])
}

#[test]
fn unanimous_and_hand_counted() {
    let bc = ClassLabel::BreastCarcinoma;
    let p = class_proportions(&vec![bc; 100]).unwrap();
    assert_eq!(p[bc.index()], 1.0);
    assert_eq!(p.iter().sum::<f64>(), 1.0);

    let (a, b) = (label(3), label(7));
    let p = class_proportions(&[a, a, b]).unwrap();
    assert_eq!(p[a.index()], 2.0 / 3.0);
    assert_eq!(p[b.index()], 1.0 / 3.0);
    assert_eq!(class_proportions(&[]), Err(VerdictError::EmptyEvidence("an empty label set".into())));
}

#[test]
fn ten_thousand_labels_match_counter() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<_> = (0..10_000).map(|_| label(rng.gen_range(0..NUM_CLASSES))).collect();
    let p = class_proportions(&labels).unwrap();
    for c in ClassLabel::ALL {
        let count = labels.iter().filter(|&&l| l == c).count();
        assert_eq!(p[c.index()], count as f64 / 10_000.0);
    }
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn breast_carcinoma_example() {
    let bc = ClassLabel::BreastCarcinoma;
    let mut labels = vec![bc; 9531];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    labels.extend((0..469).map(|_| label(rng.gen_range(1..NUM_CLASSES))));
    labels.shuffle(&mut rng);
    let d = diagnose(&log_of(&labels), &Scope::Slide("s1".into()), &VoteConfig::default()).unwrap();
    assert_eq!(d.final_label, bc);
    assert_eq!(d.certainty, 0.9531);
    assert_eq!(d.n, 10_000);
    assert!(!d.is_tie());
    assert_eq!(d.table()[0].label, bc);
}

#[test]
fn tie_goes_to_canonical_order_and_is_flagged() {
    let (a, b) = (label(2), label(9));
    let d = diagnose_labels(&[b, a, b, a]).unwrap();
    assert_eq!(d.final_label, a);
    assert!(d.is_tie());
    assert_eq!(d.tied_labels, vec![a, b]);
    assert_eq!(d.certainty, 0.5);
}

#[test]
fn scopes_and_padding() {
    let mut log = log_of(&[label(0), label(0), label(1)]);
    log.records.push(record("s2", "p1", 0, label(5)));
    log.records.push(record("s3", "p2", 0, label(4)));
    let mut padded = record("s3", "p2", 1, label(6));
    padded.pad_fraction = 0.75;
    log.records.push(padded);
    let cfg = VoteConfig::default();

    assert_eq!(diagnose(&log, &Scope::Slide("s1".into()), &cfg).unwrap().final_label, label(0));
    assert_eq!(diagnose(&log, &Scope::Patient("p1".into()), &cfg).unwrap().n, 4);
    let p2 = diagnose(&log, &Scope::Patient("p2".into()), &cfg).unwrap();
    assert_eq!((p2.n, p2.final_label), (1, label(4)));
    let keep_all = VoteConfig { max_pad_fraction: None };
    assert_eq!(diagnose(&log, &Scope::Patient("p2".into()), &keep_all).unwrap().n, 2);
    let roi = Scope::Roi { slide_id: "s1".into(), rows: 0..1, cols: 2..3 };
    assert_eq!(diagnose(&log, &roi, &cfg).unwrap().final_label, label(1));
    assert!(matches!(diagnose(&log, &Scope::Slide("nope".into()), &cfg), Err(VerdictError::EmptyEvidence(_))));
    assert_eq!(diagnose(&log, &Scope::All, &cfg).unwrap().n, 5);

    let by_patient = diagnose_patients(&log, &cfg);
    assert_eq!(by_patient.len(), 2);
    assert_eq!(diagnose_slides(&log, &cfg).len(), 3);
}

#[test]
fn serialization_lists_non_zero_classes_descending() {
    let (a, b, c) = (label(1), label(4), label(8));
    let d = diagnose_labels(&[b, a, b, c, b, a]).unwrap();
    let json = serde_json::to_value(&d).unwrap();
    let table = json["table"].as_array().unwrap();
    assert_eq!(table.len(), 3);
    let labels: Vec<&str> = table.iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(labels, vec![b.name(), a.name(), c.name()]);
    assert_eq!(json["final_label"], b.name());
    assert_eq!(json["tie"], false);
    let back: DiagnosisResult = serde_json::from_value(json).unwrap();
    assert_eq!(back, d);
}

#[test]
fn oracle_over_random_logs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..60);
        let k = rng.gen_range(1..=NUM_CLASSES);
        let labels: Vec<_> = (0..n).map(|_| label(rng.gen_range(0..k))).collect();
        let d = diagnose_labels(&labels).unwrap();
        assert!(d.certainty >= 1.0 / NUM_CLASSES as f64);
        if let Some(mode) = brute_mode(&labels) {
            assert_eq!(d.final_label, mode);
            assert!(!d.is_tie());
            checked += 1;
        } else {
            assert!(d.is_tie());
        }
    }
    assert!(checked > 5_000);
}

proptest! {
    #[test]
    fn permutation_duplication_and_increment(
        idx in prop::collection::vec(0usize..NUM_CLASSES, 1..200),
        extra in 0usize..NUM_CLASSES,
        seed in any::<u64>(),
    ) {
        let labels: Vec<_> = idx.iter().map(|&i| label(i)).collect();
        let base = diagnose_labels(&labels).unwrap();
        prop_assert!((base.proportions().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(base.certainty, base.proportion(base.final_label));

        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&diagnose_labels(&shuffled).unwrap(), &base);

        let doubled: Vec<_> = labels.iter().chain(&labels).copied().collect();
        let d = diagnose_labels(&doubled).unwrap();
        prop_assert_eq!(d.proportions(), base.proportions());
        prop_assert_eq!(d.final_label, base.final_label);

        let mut more = labels.clone();
        more.push(label(extra));
        let m = diagnose_labels(&more).unwrap();
        let bound = 1.0 / (labels.len() + 1) as f64 + 1e-12;
        for c in ClassLabel::ALL {
            prop_assert!((m.proportion(c) - base.proportion(c)).abs() <= bound);
        }
    }
}
