use histocad_mavit::{read_header, Ablation, Mavit32, Mavit64, ModelConfig, Tensor};
use proptest::prelude::*;

fn patch(size: usize, seed: usize) -> Tensor<f32> {
    let data = (0..size * size * 3).map(|i| ((i * 31 + seed * 7) % 256) as f32 / 255.0).collect();
    Tensor::new(vec![size, size, 3], data).unwrap()
}

/// Parameter count of `ModelConfig::toy()` (full variant), frozen on first run.
const TOY_PARAMETER_COUNT: usize = 2_445_899;

#[test]
fn toy_parameter_count_is_stable() {
    let a = Mavit32::new(ModelConfig::toy(), 1).unwrap();
    let b = Mavit32::new(ModelConfig::toy(), 99).unwrap();
    assert_eq!(a.parameter_count(), b.parameter_count());
    assert_eq!(a.parameter_count(), TOY_PARAMETER_COUNT);
}

#[test]
fn ablation_parameter_audit() {
    let cfg = ModelConfig::toy();
    let names = |ab: Ablation| Mavit32::new(cfg.clone().with_ablation(ab), 1).unwrap().parameter_names();
    let baseline = names(Ablation::BASELINE);
    let with_vtm = names(Ablation::WITH_VTM);
    let full = names(Ablation::FULL);
    assert!(baseline.iter().all(|n| !n.starts_with("vtm.") && !n.starts_with("fusion.")));
    assert!(with_vtm.iter().any(|n| n.contains(".attn.")));
    assert!(with_vtm.iter().all(|n| !n.starts_with("fusion.")));
    assert!(full.iter().any(|n| n.starts_with("fusion.")));
    let no_vtm = names(Ablation { use_vtm: false, use_dfs: true });
    assert!(no_vtm.iter().all(|n| !n.starts_with("vtm.") && !n.contains("attn")));

    let count = |ab: Ablation| Mavit32::new(cfg.clone().with_ablation(ab), 1).unwrap().parameter_count();
    assert!(count(Ablation::BASELINE) < count(Ablation::WITH_VTM));
    assert!(count(Ablation::WITH_VTM) < count(Ablation::FULL));
}

#[test]
fn disabled_vtm_is_identity() {
    let model = Mavit32::new(ModelConfig::micro().with_ablation(Ablation::BASELINE), 2).unwrap();
    let (_, last) = model.backbone_forward(&patch(16, 0)).unwrap();
    assert_eq!(model.vtm_forward(&last).unwrap(), last);
    assert_eq!(model.late_fusion(&last, &last).unwrap(), last);
}

#[test]
fn zero_input_with_zeroed_affine_layers_gives_zero_output() {
    let cfg = ModelConfig::micro();
    let mut model = Mavit64::new(cfg.clone(), 4).unwrap();
    let names = model.parameter_names();
    for (i, name) in names.iter().enumerate() {
        let affine = name.starts_with("vtm.tblock.attn.w") || name.starts_with("vtm.tblock.ffn.");
        if affine {
            model.params_mut().tensors_mut()[i].data_mut().fill(0.0);
        }
    }
    let zeros = Tensor::zeros(vec![cfg.tokens(), cfg.vtm_channels]);
    let out = model.tblock_forward(&zeros).unwrap();
    assert!(out.data().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn tblock_preserves_full_size_token_shape() {
    let cfg = ModelConfig::paper();
    let model = Mavit32::new(cfg, 1).unwrap();
    let x = Tensor::filled(vec![1024, 128], 0.25);
    assert_eq!(model.tblock_forward(&x).unwrap().shape(), &[1024, 128]);
    assert!(model.tblock_forward(&Tensor::zeros(vec![1000, 128])).is_err());
}

#[test]
fn config_validation_errors() {
    let bad_heads = ModelConfig { heads: 3, ..ModelConfig::toy() };
    assert!(Mavit32::new(bad_heads, 1).is_err());
    let bad_rank = ModelConfig { proj_dim: 10_000, ..ModelConfig::toy() };
    assert!(Mavit32::new(bad_rank, 1).is_err());
    let bad_classes = ModelConfig { num_classes: 1, ..ModelConfig::toy() };
    assert!(Mavit32::new(bad_classes, 1).is_err());
}

#[test]
fn inference_is_deterministic_and_normalized() {
    let model = Mavit32::new(ModelConfig::micro(), 8).unwrap();
    let p = patch(16, 1);
    let a = model.forward(&p).unwrap();
    let b = model.forward(&p).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 11);
    let sum: f64 = a.iter().map(|&v| v as f64).sum();
    assert!((sum - 1.0).abs() < 1e-6);
    let same_seed = Mavit32::new(ModelConfig::micro(), 8).unwrap();
    assert_eq!(same_seed.forward(&p).unwrap(), a);
}

#[test]
fn equal_logits_give_uniform_probabilities() {
    let p = histocad_mavit::softmax(&[0.7f64; 11]);
    for v in p {
        assert!((v - 1.0 / 11.0).abs() < 1e-15);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = Mavit32::new(ModelConfig::micro(), 13).unwrap();
    let id = model.save(&path).unwrap();
    let loaded = Mavit32::load(&path).unwrap();
    assert_eq!(loaded.params().tensors(), model.params().tensors());
    assert_eq!(loaded.config(), model.config());
    assert_eq!(loaded.classes(), model.classes());
    let p = patch(16, 2);
    let a: Vec<u32> = model.forward(&p).unwrap().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u32> = loaded.forward(&p).unwrap().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
    let second = dir.path().join("again.ckpt");
    assert_eq!(loaded.save(&second).unwrap(), id);
    let header = read_header(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(header.parameter_count, model.parameter_count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn probabilities_are_a_distribution(seed in 0usize..1000, model_seed in 0u64..50) {
        let model = Mavit32::new(ModelConfig::micro(), model_seed).unwrap();
        let probs = model.forward(&patch(16, seed)).unwrap();
        prop_assert!(probs.iter().all(|&v| v >= 0.0));
        let sum: f64 = probs.iter().map(|&v| v as f64).sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
    }
}
