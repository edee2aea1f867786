use camanim_core::cam::{
    cam_assemble, eigen_weighted_maps, elementwise_weighted_maps, gradient_channel_weights, perturbation_channel_weights,
    random_channel_weights, CamContext, CamInput, EPSILON,
};
use camanim_core::nn::train::fixture_architecture;
use camanim_core::nn::{op_forward, train_fixture, Sequential};
use camanim_core::pipeline::normalize_local;
use camanim_core::resize::{bilinear_resize, upsample_to_input};
use camanim_core::{Backend, CamVariant, Error, LayerId, Map2, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    Tensor4::from_vec(shape, (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Written straight from the formulas, looping over indices.
fn literal_weights(variant: CamVariant, act: &Tensor4, grad: &Tensor4) -> Vec<f64> {
    let [_, k, h, w] = act.shape();
    (0..k)
        .map(|c| {
            let a = |i: usize, j: usize| act.get(0, c, i, j);
            let g = |i: usize, j: usize| grad.get(0, c, i, j);
            let mut alpha = 0.0;
            match variant {
                CamVariant::GradCam => {
                    for i in 0..h {
                        for j in 0..w {
                            alpha += g(i, j) / (h * w) as f64;
                        }
                    }
                }
                CamVariant::GradCamPlusPlus => {
                    let mut sum_a = 0.0;
                    for i in 0..h {
                        for j in 0..w {
                            sum_a += a(i, j);
                        }
                    }
                    for i in 0..h {
                        for j in 0..w {
                            let gij = g(i, j);
                            if gij == 0.0 {
                                continue;
                            }
                            let weight = gij.powi(2) / (2.0 * gij.powi(2) + sum_a * gij.powi(3) + EPSILON);
                            alpha += weight * gij.max(0.0);
                        }
                    }
                }
                CamVariant::XGradCam => {
                    let (mut num, mut den) = (0.0, 0.0);
                    for i in 0..h {
                        for j in 0..w {
                            num += g(i, j) * a(i, j);
                            den += a(i, j);
                        }
                    }
                    alpha = num / (den + EPSILON);
                }
                _ => unreachable!(),
            }
            alpha
        })
        .collect()
}

#[test]
fn channel_weights_match_literal_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let act = random_tensor(&mut rng, [1, 2, 3, 3]).map(f64::abs);
        let grad = random_tensor(&mut rng, [1, 2, 3, 3]);
        for v in [CamVariant::GradCam, CamVariant::GradCamPlusPlus, CamVariant::XGradCam] {
            let got = gradient_channel_weights(v, &act, &grad).unwrap();
            assert!(close(&got, &literal_weights(v, &act, &grad), 1e-12), "{v}");
        }
    }
}

#[test]
fn zero_gradient_gives_zero_weights() {
    let act = Tensor4::filled([1, 3, 4, 4], 0.7);
    let grad = Tensor4::zeros([1, 3, 4, 4]);
    for v in [CamVariant::GradCam, CamVariant::GradCamPlusPlus, CamVariant::XGradCam] {
        assert_eq!(gradient_channel_weights(v, &act, &grad).unwrap(), vec![0.0; 3]);
    }
}

#[test]
fn gradcam_of_constant_gradient_is_that_constant() {
    let act = Tensor4::filled([1, 1, 5, 3], 2.0);
    let grad = Tensor4::filled([1, 1, 5, 3], -0.375);
    assert_eq!(gradient_channel_weights(CamVariant::GradCam, &act, &grad).unwrap(), vec![-0.375]);
}

#[test]
fn mismatched_shapes_are_shape_errors() {
    let act = Tensor4::zeros([1, 2, 3, 3]);
    let grad = Tensor4::zeros([1, 2, 3, 4]);
    assert!(matches!(gradient_channel_weights(CamVariant::GradCam, &act, &grad), Err(Error::Shape(_))));
    assert!(matches!(elementwise_weighted_maps(CamVariant::LayerCam, &act, &grad, LayerId(0)), Err(Error::Shape(_))));
    assert!(matches!(cam_assemble(CamInput::Weights { alpha: &[1.0], act: &act }), Err(Error::Shape(_))));
}

#[test]
fn elementwise_stacks_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let act = random_tensor(&mut rng, [1, 3, 3, 3]);
    let grad = random_tensor(&mut rng, [1, 3, 3, 3]);
    let oracle = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        act.data().iter().zip(grad.data()).map(|(&a, &g)| f(a, g)).collect()
    };
    let cases: [(CamVariant, &dyn Fn(f64, f64) -> f64); 3] = [
        (CamVariant::HiResCam, &|a, g| a * g),
        (CamVariant::GradCamElementWise, &|a, g| if a * g > 0.0 { a * g } else { 0.0 }),
        (CamVariant::LayerCam, &|a, g| if g > 0.0 { g * a } else { 0.0 }),
    ];
    for (v, f) in cases {
        let stack = elementwise_weighted_maps(v, &act, &grad, LayerId(4)).unwrap();
        assert_eq!(stack.maps.shape(), act.shape());
        assert_eq!(stack.layer_id, LayerId(4));
        assert!(close(stack.maps.data(), &oracle(f), 0.0), "{v}");
    }
    let ones = Tensor4::filled(act.shape(), 1.0);
    let hires = elementwise_weighted_maps(CamVariant::HiResCam, &act, &ones, LayerId(0)).unwrap();
    assert_eq!(hires.maps, act);
}

#[test]
fn assemble_hand_example() {
    let act = Tensor4::from_vec([1, 2, 2, 2], vec![1.0, -2.0, 0.0, 3.0, -1.0, 1.0, 2.0, -1.0]).unwrap();
    let map = cam_assemble(CamInput::Weights { alpha: &[0.5, 2.0], act: &act }).unwrap();
    assert_eq!(map.data, vec![0.0, 1.0, 4.0, 0.0]);
    let one_hot = cam_assemble(CamInput::Weights { alpha: &[1.0, 0.0], act: &act }).unwrap();
    assert_eq!(one_hot.data, vec![1.0, 0.0, 0.0, 3.0]);
    let zero = cam_assemble(CamInput::Weights { alpha: &[0.0, 0.0], act: &act }).unwrap();
    assert!(zero.data.iter().all(|&v| v == 0.0));
}

/// First principal direction by power iteration on the centred Gram matrix.
fn power_iteration_projection(act: &Tensor4) -> Vec<f64> {
    let [_, k, h, w] = act.shape();
    let n = h * w;
    let mut m = vec![vec![0.0; k]; n];
    for c in 0..k {
        let col = act.channel(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        for r in 0..n {
            m[r][c] = col[r] - mean;
        }
    }
    let mut v = vec![1.0; k];
    for _ in 0..100_000 {
        let mv: Vec<f64> = m.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let mut next = vec![0.0; k];
        for (row, s) in m.iter().zip(&mv) {
            for c in 0..k {
                next[c] += row[c] * s;
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        next.iter_mut().for_each(|x| *x /= norm);
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if delta < 1e-10 {
            break;
        }
    }
    m.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect()
}

#[test]
fn eigencam_matches_power_iteration_up_to_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let act = random_tensor(&mut rng, [1, 4, 5, 5]);
        let got = eigen_weighted_maps(CamVariant::EigenCam, &act, None).unwrap();
        let oracle = power_iteration_projection(&act);
        let flipped: Vec<f64> = oracle.iter().map(|v| -v).collect();
        assert!(close(&got.data, &oracle, 1e-7) || close(&got.data, &flipped, 1e-7));
    }
}

#[test]
fn single_channel_eigencam_is_positively_scaled_centred_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let act = random_tensor(&mut rng, [1, 1, 4, 4]).map(|v| v + 2.0);
    let got = eigen_weighted_maps(CamVariant::EigenCam, &act, None).unwrap();
    let mean = act.data().iter().sum::<f64>() / 16.0;
    let centred: Vec<f64> = act.data().iter().map(|v| v - mean).collect();
    let scale = got.data[0] / centred[0];
    assert!(scale > 0.0);
    assert!(close(&got.data, &centred.iter().map(|v| v * scale).collect::<Vec<_>>(), 1e-12));
}

#[test]
fn eigengradcam_requires_gradients() {
    let act = Tensor4::filled([1, 2, 3, 3], 1.0);
    assert!(eigen_weighted_maps(CamVariant::EigenGradCam, &act, None).is_err());
}

#[test]
fn random_weights_have_uniform_moments() {
    let a = random_channel_weights(100_000, 17).unwrap();
    assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64;
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 1.0 / 3.0).abs() < 0.02, "variance {var}");
    assert_eq!(random_channel_weights(8, 5).unwrap(), random_channel_weights(8, 5).unwrap());
    assert!(random_channel_weights(0, 5).is_err());
}

fn fixture() -> Sequential {
    train_fixture(7, 3, 0.05).unwrap()
}

fn sample_input() -> Tensor4 {
    camanim_core::nn::held_out_set(7)[1].model_input()
}

/// Independent half-pixel bilinear upsampling of one channel.
fn upsample_oracle(src: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let coord = |i: usize, s: usize, t: usize| ((i as f64 + 0.5) * s as f64 / t as f64 - 0.5).clamp(0.0, (s - 1) as f64);
    let mut out = Vec::with_capacity(th * tw);
    for i in 0..th {
        for j in 0..tw {
            let (y, x) = (coord(i, h, th), coord(j, w, tw));
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            let v = |a: usize, b: usize| src[a * w + b];
            out.push(
                v(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + v(y0, x1) * (1.0 - fy) * fx
                    + v(y1, x0) * fy * (1.0 - fx)
                    + v(y1, x1) * fy * fx,
            );
        }
    }
    out
}

/// Runs the layers one by one, zeroing `channel` of layer `at`'s output.
fn ablated_logits(model: &Sequential, input: &Tensor4, at: usize, channel: usize) -> Vec<f64> {
    let mut x = input.clone();
    let logit_layer = model.layers().len() - 2;
    for (i, layer) in model.layers().iter().enumerate().take(logit_layer + 1) {
        x = op_forward(&layer.op, &x).unwrap().0;
        if i == at {
            x.channel_mut(channel).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    x.into_vec()
}

#[test]
fn perturbation_weights_match_brute_force() {
    let model = fixture();
    let input = sample_input();
    let conv2 = LayerId(3);
    let act = model.forward_trace(&input, &[conv2]).unwrap().activations.remove(&conv2).unwrap();
    for target in 0..2 {
        let ablation = perturbation_channel_weights(CamVariant::AblationCam, &model, &input, target, &act, conv2).unwrap();
        let score = perturbation_channel_weights(CamVariant::ScoreCam, &model, &input, target, &act, conv2).unwrap();
        assert_eq!(ablation.len(), 8);
        let base = ablated_logits(&model, &input, usize::MAX, 0)[target];
        let mut raw_scores = Vec::new();
        for k in 0..8 {
            let ablated = ablated_logits(&model, &input, 3, k)[target];
            let expected = (base - ablated) / (base.abs() + EPSILON);
            assert!((ablation[k] - expected).abs() < 1e-12, "ablation channel {k}");

            let up = upsample_oracle(act.channel(k), 16, 16, 32, 32);
            let (lo, hi) = up.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            let mask: Vec<f64> = up.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect();
            let masked = Tensor4::from_vec([1, 1, 32, 32], input.data().iter().zip(&mask).map(|(a, m)| a * m).collect()).unwrap();
            raw_scores.push(ablated_logits(&model, &masked, usize::MAX, 0)[target]);
        }
        let max = raw_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = raw_scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let expected: Vec<f64> = exps.iter().map(|e| e / total).collect();
        assert!(close(&score, &expected, 1e-12));
        assert!((score.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn perturbation_edge_cases() {
    let model = fixture();
    let input = sample_input();
    let act = Tensor4::filled([1, 1, 16, 16], 1.0);
    let single = perturbation_channel_weights(CamVariant::ScoreCam, &model, &input, 0, &act, LayerId(3)).unwrap();
    assert_eq!(single, vec![1.0]);
    assert!(matches!(
        perturbation_channel_weights(CamVariant::AblationCam, &model, &input, 0, &act, LayerId(42)),
        Err(Error::UnknownLayer(42))
    ));
    // zeroing an already-zero channel changes nothing
    let relu1 = LayerId(1);
    let zero_input = Tensor4::zeros([1, 1, 32, 32]);
    let act = model.forward_trace(&zero_input, &[relu1]).unwrap().activations.remove(&relu1).unwrap();
    let alpha = perturbation_channel_weights(CamVariant::AblationCam, &model, &zero_input, 1, &act, relu1).unwrap();
    for (k, a) in alpha.iter().enumerate() {
        if act.channel(k).iter().all(|&v| v == 0.0) {
            assert_eq!(*a, 0.0);
        }
    }
}

#[test]
fn gradcam_equals_hirescam_on_gap_output() {
    let model = fixture();
    let input = sample_input();
    let layers = model.list_layers().unwrap();
    let ids: Vec<LayerId> = layers.iter().map(|d| d.id).collect();
    let fwd = model.forward_trace(&input, &ids).unwrap();
    for target in 0..2 {
        let bwd = model.backward_trace(&fwd, target).unwrap();
        let ctx = CamContext { backend: &model, input: &input, target_class: target, forward: &fwd, backward: Some(&bwd), seed: 0 };
        let gap = &layers[5];
        let a = ctx.layer_map(gap, CamVariant::GradCam).unwrap();
        let b = ctx.layer_map(gap, CamVariant::HiResCam).unwrap();
        assert_eq!((a.height, a.width), (1, 1));
        assert!((a.data[0] - b.data[0]).abs() < 1e-15);
    }
}

#[test]
fn upsample_examples() {
    let src = Map2::from_vec(2, 2, vec![0.0, 1.0, 1.0, 2.0]).unwrap();
    let up = upsample_to_input(&src, 4, 4).unwrap();
    // half-pixel centres land at -0.25, 0.25, 0.75, 1.25; clamped to the source grid
    let c = [0.0, 0.25, 0.75, 1.0];
    let expected: Vec<f64> = (0..16).map(|i| c[i / 4] + c[i % 4]).collect();
    assert!(close(&up.data, &expected, 1e-15));
    assert!(close(&up.data, &upsample_oracle(&src.data, 2, 2, 4, 4), 1e-15));
    assert_eq!(upsample_to_input(&src, 2, 2).unwrap(), src);
    let constant = Map2::from_vec(3, 2, vec![0.4; 6]).unwrap();
    assert!(upsample_to_input(&constant, 9, 7).unwrap().data.iter().all(|&v| (v - 0.4).abs() < 1e-15));
    assert!(matches!(upsample_to_input(&src, 0, 4), Err(Error::Dimension(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<f64> = (0..12).map(|_| rng.gen()).collect();
    let up = bilinear_resize(&Map2::from_vec(3, 4, data.clone()).unwrap(), 7, 9).unwrap();
    assert!(close(&up.data, &upsample_oracle(&data, 3, 4, 7, 9), 1e-14));
}

#[test]
fn every_variant_runs_on_every_fixture_layer() {
    let model = fixture_architecture(5);
    let input = sample_input();
    let layers = model.list_layers().unwrap();
    let ids: Vec<LayerId> = layers.iter().map(|d| d.id).collect();
    let fwd = model.forward_trace(&input, &ids).unwrap();
    let bwd = model.backward_trace(&fwd, 0).unwrap();
    let ctx = CamContext { backend: &model, input: &input, target_class: 0, forward: &fwd, backward: Some(&bwd), seed: 3 };
    for layer in layers.iter().filter(|l| l.out_shape.len() == 4) {
        for v in CamVariant::ALL {
            let map = ctx.layer_map(layer, v).unwrap();
            assert!(map.data.iter().all(|&x| x >= 0.0 && x.is_finite()), "{v} at {}", layer.name);
        }
    }
}

fn act_grad() -> impl Strategy<Value = (Tensor4, Tensor4)> {
    (1usize..=8, 1usize..=7, 1usize..=7, any::<u64>()).prop_map(|(k, h, w, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = random_tensor(&mut rng, [1, k, h, w]).map(|v| v.abs() * 3.0);
        let grad = random_tensor(&mut rng, [1, k, h, w]);
        (act, grad)
    })
}

fn gradient_map(v: CamVariant, act: &Tensor4, grad: &Tensor4) -> Map2 {
    match v {
        CamVariant::GradCam | CamVariant::GradCamPlusPlus | CamVariant::XGradCam => {
            let alpha = gradient_channel_weights(v, act, grad).unwrap();
            cam_assemble(CamInput::Weights { alpha: &alpha, act }).unwrap()
        }
        CamVariant::EigenGradCam => cam_assemble(CamInput::Projection(eigen_weighted_maps(v, act, Some(grad)).unwrap())).unwrap(),
        _ => cam_assemble(CamInput::Stack(&elementwise_weighted_maps(v, act, grad, LayerId(0)).unwrap())).unwrap(),
    }
}

proptest! {
    #[test]
    fn maps_are_nonnegative((act, grad) in act_grad()) {
        for v in [
            CamVariant::GradCam, CamVariant::GradCamPlusPlus, CamVariant::XGradCam, CamVariant::HiResCam,
            CamVariant::GradCamElementWise, CamVariant::LayerCam, CamVariant::EigenGradCam,
        ] {
            prop_assert!(gradient_map(v, &act, &grad).data.iter().all(|&x| x >= 0.0));
        }
        let eigen = cam_assemble(CamInput::Projection(eigen_weighted_maps(CamVariant::EigenCam, &act, None).unwrap())).unwrap();
        prop_assert!(eigen.mean() >= 0.0);
    }

    #[test]
    fn positive_gradient_scaling_is_covariant((act, grad) in act_grad(), s in 0.01f64..100.0) {
        let scaled = grad.map(|g| g * s);
        for v in [CamVariant::GradCam, CamVariant::HiResCam, CamVariant::XGradCam, CamVariant::LayerCam] {
            let a = gradient_map(v, &act, &grad);
            let b = gradient_map(v, &act, &scaled);
            let scale = a.data.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((x * s - y).abs() <= 1e-9 * scale * s.max(1.0));
            }
            let (na, nb) = (normalize_local(&a), normalize_local(&b));
            prop_assert!(close(&na.data, &nb.data, 1e-9));
        }
    }

    #[test]
    fn assemble_matches_weighted_sum_oracle((act, _grad) in act_grad(), seed in any::<u64>()) {
        let k = act.channels();
        let alpha = random_channel_weights(k, seed).unwrap();
        let got = cam_assemble(CamInput::Weights { alpha: &alpha, act: &act }).unwrap();
        let (h, w) = act.hw();
        for i in 0..h {
            for j in 0..w {
                let s: f64 = (0..k).map(|c| alpha[c] * act.get(0, c, i, j)).sum();
                prop_assert!((got.get(i, j) - s.max(0.0)).abs() <= 1e-9);
            }
        }
    }
}
