use camanim_core::nn::{held_out_set, train_fixture, Conv2d, Layer, OpNode, Sequential};
use camanim_core::pipeline::{is_spatial, normalize_global, normalize_local, LayerwiseRun, SaliencyMap};
use camanim_core::{run_layerwise, Backend, CamVariant, Error, LayerKind, Map2, SkipReason, Tensor4};
use proptest::prelude::*;

fn map(h: usize, w: usize, data: &[f64]) -> Map2 {
    Map2::from_vec(h, w, data.to_vec()).unwrap()
}

fn fixture() -> Sequential {
    train_fixture(7, 3, 0.05).unwrap()
}

#[test]
fn fixture_sequence_keeps_five_spatial_layers() {
    let model = fixture();
    let input = held_out_set(7)[0].model_input();
    for v in CamVariant::ALL {
        let seq = run_layerwise(&model, &input, 0, v, 11).unwrap();
        assert_eq!(seq.maps.len(), 8);
        assert_eq!(seq.retained_count(), 5, "{v}");
        for m in &seq.maps[5..] {
            assert_eq!(m.flag, Some(SkipReason::NonSpatial));
            assert!(matches!(m.layer.kind, LayerKind::Gap | LayerKind::Dense | LayerKind::Softmax));
        }
        for m in &seq.maps {
            assert_eq!((m.raw.height, m.raw.width), (32, 32));
        }
        seq.check_invariants().unwrap_or_else(|e| panic!("{v}: {e}"));
    }
}

#[test]
fn single_conv_model_has_equal_normalizations() {
    let conv = OpNode::Conv(Conv2d {
        weight: Tensor4::from_vec([2, 1, 3, 3], (0..18).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap(),
        bias: vec![0.1, -0.1],
        stride: 1,
        padding: 0,
    });
    let model = Sequential::new([1, 1, 6, 6], vec![Layer::new("conv", conv)]).unwrap();
    let input = Tensor4::from_vec([1, 1, 6, 6], (0..36).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
    let seq = run_layerwise(&model, &input, 0, CamVariant::EigenCam, 0).unwrap();
    assert_eq!(seq.retained_count(), 1);
    let m = &seq.maps[0];
    assert!(m.local_norm.data.iter().zip(&m.global_norm.data).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn random_cam_is_deterministic_in_seed() {
    let model = fixture();
    let input = held_out_set(7)[2].model_input();
    let a = run_layerwise(&model, &input, 1, CamVariant::RandomCam, 5).unwrap();
    let b = run_layerwise(&model, &input, 1, CamVariant::RandomCam, 5).unwrap();
    assert_eq!(a, b);
    let c = run_layerwise(&model, &input, 1, CamVariant::RandomCam, 6).unwrap();
    assert_ne!(a, c);
}

#[test]
fn layer_by_layer_matches_run_layerwise() {
    let model = fixture();
    let input = held_out_set(7)[3].model_input();
    let run = LayerwiseRun::prepare(&model, &input, 0, CamVariant::GradCam, 0).unwrap();
    // any evaluation order gives the same sequence once sorted back
    let mut maps: Vec<SaliencyMap> = run.layers.iter().rev().map(|l| run.layer(l).unwrap()).collect();
    maps.reverse();
    let seq = LayerwiseRun::<Sequential>::finish(maps).unwrap();
    assert_eq!(seq, run_layerwise(&model, &input, 0, CamVariant::GradCam, 0).unwrap());
}

#[test]
fn class_out_of_range_propagates() {
    let model = fixture();
    let input = held_out_set(7)[0].model_input();
    assert!(matches!(run_layerwise(&model, &input, 2, CamVariant::GradCam, 0), Err(Error::ClassRange { .. })));
}

#[test]
fn all_layers_skipped_is_an_empty_sequence() {
    let model = Sequential::new([1, 3, 1, 1], vec![Layer::new("softmax", OpNode::Softmax)]).unwrap();
    let err = run_layerwise(&model, &Tensor4::filled([1, 3, 1, 1], 0.5), 0, CamVariant::EigenCam, 0).unwrap_err();
    assert!(matches!(err, Error::EmptySequence));
    assert_eq!(model.list_layers().unwrap().len(), 1);
}

#[test]
fn spatial_rule_examples() {
    let model = fixture();
    let layers = model.list_layers().unwrap();
    let flags: Vec<bool> = layers.iter().map(is_spatial).collect();
    assert_eq!(flags, [true, true, true, true, true, false, false, false]);
}

#[test]
fn local_normalization_examples() {
    assert_eq!(normalize_local(&map(2, 2, &[0.0, 2.0, 4.0, 8.0])).data, vec![0.0, 0.25, 0.5, 1.0]);
    assert_eq!(normalize_local(&map(2, 2, &[3.0; 4])).data, vec![0.0; 4]);
    let unit = map(1, 4, &[0.0, 0.3, 1.0, 0.7]);
    assert_eq!(normalize_local(&unit), unit);
}

fn saliency(name_index: usize, raw: Map2) -> SaliencyMap {
    let model = fixture_layers();
    let local = normalize_local(&raw);
    SaliencyMap { layer: model[name_index].clone(), raw, global_norm: local.clone(), local_norm: local, flag: None }
}

fn fixture_layers() -> Vec<camanim_core::LayerDescriptor> {
    camanim_core::nn::fixture_architecture(0).list_layers().unwrap()
}

#[test]
fn global_normalization_shares_extrema() {
    let a = saliency(0, map(1, 2, &[0.0, 1.0]));
    let b = saliency(1, map(1, 2, &[0.0, 10.0]));
    let seq = normalize_global(vec![a, b]).unwrap();
    assert_eq!((seq.g_min, seq.g_max), (0.0, 10.0));
    assert_eq!(seq.maps[0].global_norm.data, vec![0.0, 0.1]);
    assert_eq!(seq.maps[1].global_norm.data, vec![0.0, 1.0]);
    seq.check_invariants().unwrap();

    let single = normalize_global(vec![saliency(0, map(1, 3, &[1.0, 4.0, 2.0]))]).unwrap();
    assert_eq!(single.maps[0].global_norm, single.maps[0].local_norm);
}

#[test]
fn skipped_layers_do_not_set_extrema() {
    let kept = saliency(0, map(1, 2, &[0.0, 2.0]));
    let mut skipped = saliency(5, map(1, 2, &[0.0, 50.0]));
    skipped.flag = Some(SkipReason::NonSpatial);
    let seq = normalize_global(vec![kept, skipped]).unwrap();
    assert_eq!(seq.g_max, 2.0);
    assert!(seq.maps[1].global_norm.data.iter().all(|v| (0.0..=1.0).contains(v)));
}

proptest! {
    #[test]
    fn normalization_invariants(raws in prop::collection::vec(prop::collection::vec(0.0f64..100.0, 9), 1..6)) {
        let maps: Vec<SaliencyMap> = raws.iter().enumerate().map(|(i, r)| saliency(i, map(3, 3, r))).collect();
        let seq = normalize_global(maps).unwrap();
        prop_assert!(seq.check_invariants().is_ok(), "{:?}", seq.check_invariants());
        for m in &seq.maps {
            prop_assert!(m.local_norm.data.iter().chain(&m.global_norm.data).all(|v| (0.0..=1.0).contains(v)));
            let (lo, hi) = m.raw.min_max();
            if seq.g_min == lo && lo == 0.0 && seq.g_max >= hi {
                for (g, l) in m.global_norm.data.iter().zip(&m.local_norm.data) {
                    prop_assert!(*g <= *l + 1e-15);
                }
            }
        }
    }
}

#[test]
fn elementwise_maps_coincide_across_a_relu() {
    // g_conv = g_relu on A > 0 and 0 elsewhere, so g ⊙ A is the same map on either side
    let model = fixture();
    for s in held_out_set(7).iter().take(3) {
        let x = s.model_input();
        for v in [CamVariant::HiResCam, CamVariant::GradCamElementWise, CamVariant::LayerCam, CamVariant::EigenGradCam] {
            let seq = run_layerwise(&model, &x, s.label, v, 0).unwrap();
            assert_eq!(seq.maps[0].raw, seq.maps[1].raw, "{v} conv1/relu1");
            assert_eq!(seq.maps[3].raw, seq.maps[4].raw, "{v} conv2/relu2");
        }
        let grad = run_layerwise(&model, &x, s.label, CamVariant::GradCam, 0).unwrap();
        assert_ne!(grad.maps[3].raw, grad.maps[4].raw);
    }
}
