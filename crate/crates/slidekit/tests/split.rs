use std::path::PathBuf;

use histocad_core::{ClassLabel, Modality};
use histocad_slidekit::*;
use proptest::prelude::*;

/// Patients per class in the reference cohort.
const COHORT: [usize; 11] = [120, 130, 101, 120, 102, 109, 98, 134, 131, 134, 104];

fn cohort(per_class: &[usize]) -> Vec<SlideManifest> {
    let mut out = Vec::new();
    for (ci, &n) in per_class.iter().enumerate() {
        for p in 0..n {
            for s in 0..(1 + p % 2) {
                out.push(SlideManifest {
                    slide_id: format!("c{ci}-p{p}-s{s}"),
                    patient_id: format!("c{ci}-p{p}"),
                    class_label: ClassLabel::from_index(ci).unwrap(),
                    modality: if p % 3 == 0 { Modality::Biopsy } else { Modality::Surgical },
                    width_px: 1024,
                    height_px: 1024,
                    tile_source: PathBuf::from(format!("slides/c{ci}-p{p}-s{s}.png")),
                });
            }
        }
    }
    out
}

#[test]
fn reference_cohort_split_sizes() {
    let slides = cohort(&COHORT);
    let ratios = [0.678, 0.108, 0.214];
    let split = split_patients(&slides, ratios, 7).unwrap();
    assert_eq!(split.len(), 1283);
    assert!(split.is_disjoint());
    let classes = patient_classes(&slides);
    for (ci, &n) in COHORT.iter().enumerate() {
        let class = ClassLabel::from_index(ci).unwrap();
        for (p, r) in Partition::ALL.into_iter().zip(ratios) {
            let got = split.get(p).iter().filter(|id| classes[*id] == class).count();
            assert!((got as f64 - r * n as f64).abs() <= 1.0, "{class} {p:?}: {got} vs {}", r * n as f64);
        }
    }
    for (size, target) in [(split.train.len(), 869), (split.val.len(), 139), (split.test.len(), 275)] {
        assert!(size.abs_diff(target) <= 11, "{size} vs {target}");
    }
}

#[test]
fn single_patient_goes_to_train() {
    let slides = cohort(&[1]);
    let split = split_patients(&slides, [1.0, 0.0, 0.0], 0).unwrap();
    assert_eq!(split.train.len(), 1);
    assert!(split.val.is_empty() && split.test.is_empty());
}

#[test]
fn tiny_class_is_a_stratification_error() {
    let slides = cohort(&[5, 2]);
    match split_patients(&slides, [0.6, 0.2, 0.2], 0) {
        Err(SlideError::Stratification { class, patients: 2, needed: 3 }) => assert_eq!(class, "Colon Adenocarcinoma"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(split_patients(&slides, [0.5, 0.2, 0.2], 0).is_err());
}

#[test]
fn largest_remainder_sums_to_n() {
    assert_eq!(largest_remainder(10, [0.678, 0.108, 0.214]), [7, 1, 2]);
    assert_eq!(largest_remainder(1, [1.0, 0.0, 0.0]), [1, 0, 0]);
    assert_eq!(parse_ratios("0.678, 0.108,0.214").unwrap(), [0.678, 0.108, 0.214]);
    assert!(parse_ratios("0.5,0.5").is_err());
}

#[test]
fn manifest_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    write_manifest(&path, &[]).unwrap();
    assert!(read_manifest(&path).unwrap().is_empty());
    let three: Vec<_> = cohort(&[2, 1]).into_iter().take(3).collect();
    write_manifest(&path, &three).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), three);

    let bad = std::fs::read_to_string(&path).unwrap().replacen("Breast Carcinoma", "Osteosarcoma", 1);
    let err = parse_manifest(&bad).unwrap_err();
    assert!(matches!(err, SlideError::Parse { line, .. } if line > 1));
    assert!(err.to_string().contains("Osteosarcoma"));

    let mut dup = three.clone();
    dup[1].slide_id = dup[0].slide_id.clone();
    assert!(matches!(write_manifest(&path, &dup), Err(SlideError::DuplicateSlide(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn splits_never_leak_patients(
        sizes in prop::collection::vec(3usize..30, 1..11),
        a in 1u32..10, b in 1u32..10, c in 1u32..10,
        seed in any::<u64>(),
    ) {
        let total = (a + b + c) as f64;
        let ratios = [a as f64 / total, b as f64 / total, 1.0 - (a + b) as f64 / total];
        let slides = cohort(&sizes);
        let split = split_patients(&slides, ratios, seed).unwrap();
        prop_assert!(split.is_disjoint());
        prop_assert_eq!(split.len(), sizes.iter().sum::<usize>());
        for m in &slides {
            prop_assert!(split.partition_of(&m.patient_id).is_some());
        }
        prop_assert_eq!(split_patients(&slides, ratios, seed).unwrap(), split);
    }
}
