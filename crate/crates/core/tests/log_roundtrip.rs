use histocad_core::{ClassLabel, LogMeta, PatchPrediction, PredictionLog, NUM_CLASSES};
use proptest::prelude::*;

fn record_strategy() -> impl Strategy<Value = PatchPrediction> {
    (
        "[a-z0-9-]{1,12}",
        "[a-z0-9]{1,8}",
        0usize..500,
        0usize..500,
        proptest::option::of(0usize..NUM_CLASSES),
        prop::collection::vec(1e-9f64..1.0, NUM_CLASSES),
        0.0f64..1.0,
    )
        .prop_map(|(slide, patient, row, col, truth, raw, pad)| {
            let s: f64 = raw.iter().sum();
            let probs = raw.iter().map(|v| v / s).collect();
            PatchPrediction::from_probabilities(slide, patient, row, col, truth.and_then(ClassLabel::from_index), probs, pad)
                .unwrap()
        })
}

proptest! {
    #[test]
    fn log_write_read_is_identity(records in prop::collection::vec(record_strategy(), 0..40), ts in any::<u64>()) {
        let log = PredictionLog {
            meta: LogMeta { checkpoint_id: "0123abcd".into(), split: "test".into(), timestamp: ts, seconds_per_patch: Some(0.0183) },
            records,
        };
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        prop_assert_eq!(PredictionLog::read_from(buf.as_slice()).unwrap(), log);
    }
}

#[test]
fn file_round_trip_and_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("preds.jsonl");
    let empty = PredictionLog::new(LogMeta { split: "val".into(), ..LogMeta::default() });
    empty.save(&path).unwrap();
    assert_eq!(PredictionLog::load(&path).unwrap(), empty);

    std::fs::write(&path, "{\"meta\":{\"checkpoint_id\":\"x\",\"split\":\"t\",\"timestamp\":1}}\n{not json}\n").unwrap();
    let err = PredictionLog::load(&path).unwrap_err();
    assert!(err.to_string().starts_with("line 2"), "{err}");
}
