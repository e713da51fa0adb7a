use histocad_mavit::{infer_shapes, Ablation, FeatureMap, Mavit32, ModelConfig, Tensor};

fn patch(size: usize) -> Tensor<f32> {
    let data = (0..size * size * 3).map(|i| ((i * 37) % 255) as f32 / 255.0).collect();
    Tensor::new(vec![size, size, 3], data).unwrap()
}

#[test]
fn paper_geometry_shapes() {
    let cfg = ModelConfig::paper();
    let model = Mavit32::new(cfg.clone(), 1).unwrap();
    let (probs, trace) = model.forward_traced(&patch(512)).unwrap();
    assert_eq!(probs.len(), 11);
    assert_eq!(trace.get("backbone.shallow"), Some(&[32, 32, 64][..]));
    assert_eq!(trace.get("backbone.intermediate"), Some(&[18, 18, 64][..]));
    assert_eq!(trace.get("backbone.deep"), Some(&[10, 10, 64][..]));
    assert_eq!(trace.get("backbone.final"), Some(&[32, 32, 128][..]));
    assert_eq!(trace.get("vtm.tokens"), Some(&[1024, 128][..]));
    assert_eq!(trace.get("vtm.tblock"), Some(&[1024, 128][..]));
    assert_eq!(trace.get("vtm.out"), Some(&[32, 32, 128][..]));
    assert_eq!(trace.get("early.concat"), Some(&[18, 18, 192][..]));
    assert_eq!(trace.get("late.out"), Some(&[32, 32, 320][..]));
    assert_eq!(trace, infer_shapes(&cfg));
}

#[test]
fn toy_geometry_shapes() {
    let model = Mavit32::new(ModelConfig::toy(), 1).unwrap();
    let (pyramid, last) = model.backbone_forward(&patch(64)).unwrap();
    assert_eq!(pyramid.shallow.dims(), (16, 16, 64));
    assert_eq!(pyramid.intermediate.dims(), (9, 9, 64));
    assert_eq!(pyramid.deep.dims(), (5, 5, 64));
    assert_eq!(last.dims(), (16, 16, 128));
}

#[test]
fn executed_shapes_match_calculator_for_toy_geometries() {
    let geometries = [
        ModelConfig::toy(),
        ModelConfig::tiny(),
        ModelConfig::micro(),
        ModelConfig { input_size: 48, stem_stride: 2, fusion_resolution: Some(7), early_out_channels: Some(40), ..ModelConfig::tiny() },
    ];
    for cfg in geometries {
        for ablation in [Ablation::BASELINE, Ablation::WITH_VTM, Ablation::FULL, Ablation { use_vtm: false, use_dfs: true }] {
            let cfg = cfg.clone().with_ablation(ablation);
            cfg.validate().unwrap();
            let model = Mavit32::new(cfg.clone(), 3).unwrap();
            let (_, trace) = model.forward_traced(&patch(cfg.input_size)).unwrap();
            assert_eq!(trace, infer_shapes(&cfg), "{cfg:?}");
        }
    }
}

#[test]
fn wrong_input_size_is_a_shape_error() {
    let model = Mavit32::new(ModelConfig::micro(), 1).unwrap();
    assert!(model.forward(&patch(20)).is_err());
    assert!(model.forward(&Tensor::zeros(vec![16, 16, 4])).is_err());
}

#[test]
fn stage_composition_equals_forward() {
    let model = Mavit32::new(ModelConfig::micro(), 5).unwrap();
    let p = patch(16);
    let (pyramid, last) = model.backbone_forward(&p).unwrap();
    let early = model.early_fusion(&pyramid).unwrap();
    let vtm = model.vtm_forward(&last).unwrap();
    let late = model.late_fusion(&early, &vtm).unwrap();
    let staged = model.predict_head(&late).unwrap();
    let direct = model.forward(&p).unwrap();
    for (a, b) in staged.iter().zip(&direct) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn late_fusion_of_equal_resolutions_is_concatenation() {
    let a = FeatureMap::new(3, 3, 2, (0..18).map(|v| v as f64).collect()).unwrap();
    let b = FeatureMap::new(3, 3, 1, (0..9).map(|v| -(v as f64)).collect()).unwrap();
    let out = histocad_mavit::late_fusion(&a, &b).unwrap();
    assert_eq!(out.dims(), (3, 3, 3));
    for p in 0..9 {
        assert_eq!(&out.values()[p * 3..p * 3 + 3], &[(2 * p) as f64, (2 * p + 1) as f64, -(p as f64)]);
    }
}
