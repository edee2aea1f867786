use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_same_shape, planes, CamVariant, WeightedStack, EPSILON};
use crate::backend::{Backend, LayerId};
use crate::error::{Error, Result};
use crate::nn::ops::softmax;
use crate::resize::bilinear_resize;
use crate::tensor::{Map2, Tensor4};

/// Channel weights from gradients: GradCAM, GradCAM++ and XGradCAM.
pub fn gradient_channel_weights(variant: CamVariant, act: &Tensor4, grad: &Tensor4) -> Result<Vec<f64>> {
    check_same_shape(act, grad)?;
    let pairs = planes(act).zip(planes(grad));
    let alpha = match variant {
        CamVariant::GradCam => pairs.map(|(_, g)| g.iter().sum::<f64>() / g.len() as f64).collect(),
        CamVariant::GradCamPlusPlus => pairs
            .map(|(a, g)| {
                let sum_a: f64 = a.iter().sum();
                g.iter()
                    .map(|&gv| {
                        if gv == 0.0 {
                            return 0.0;
                        }
                        let g2 = gv * gv;
                        let w = g2 / (2.0 * g2 + sum_a * g2 * gv + EPSILON);
                        w * gv.max(0.0)
                    })
                    .sum()
            })
            .collect(),
        CamVariant::XGradCam => pairs
            .map(|(a, g)| {
                let num: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
                num / (a.iter().sum::<f64>() + EPSILON)
            })
            .collect(),
        other => {
            return Err(Error::Config(alloc::format!("{other} does not use gradient channel weights")));
        }
    };
    Ok(alpha)
}

/// Element-wise weighted maps: HiResCAM, GradCAMElementWise and LayerCAM.
pub fn elementwise_weighted_maps(
    variant: CamVariant,
    act: &Tensor4,
    grad: &Tensor4,
    layer_id: LayerId,
) -> Result<WeightedStack> {
    check_same_shape(act, grad)?;
    let maps = match variant {
        CamVariant::HiResCam => act.zip_map(grad, |a, g| g * a)?,
        CamVariant::GradCamElementWise => act.zip_map(grad, |a, g| (g * a).max(0.0))?,
        CamVariant::LayerCam => act.zip_map(grad, |a, g| g.max(0.0) * a)?,
        other => {
            return Err(Error::Config(alloc::format!("{other} is not an element-wise variant")));
        }
    };
    Ok(WeightedStack { maps, layer_id, variant })
}

fn min_max_normalize(map: &mut Map2) {
    let (lo, hi) = map.min_max();
    if hi > lo {
        for v in &mut map.data {
            *v = (*v - lo) / (hi - lo);
        }
    } else {
        map.data.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Channel weights from re-running the model: ScoreCAM and AblationCAM.
pub fn perturbation_channel_weights<B: Backend + ?Sized>(
    variant: CamVariant,
    model: &B,
    input: &Tensor4,
    target_class: usize,
    act: &Tensor4,
    layer_id: LayerId,
) -> Result<Vec<f64>> {
    let known = model.list_layers()?.iter().any(|l| l.id == layer_id);
    if !known {
        return Err(Error::UnknownLayer(layer_id.0));
    }
    let num_classes = model.num_classes();
    if target_class >= num_classes {
        return Err(Error::ClassRange { class: target_class, num_classes });
    }
    let [_, k, h, w] = act.shape();
    let [_, c_in, in_h, in_w] = input.shape();
    match variant {
        CamVariant::ScoreCam => {
            let mut scores = Vec::with_capacity(k);
            for plane in planes(act) {
                let mut mask = bilinear_resize(&Map2::from_vec(h, w, plane.to_vec())?, in_h, in_w)?;
                min_max_normalize(&mut mask);
                let mut masked = input.clone();
                for c in 0..c_in {
                    for (v, m) in masked.channel_mut(c).iter_mut().zip(&mask.data) {
                        *v *= m;
                    }
                }
                scores.push(model.logits(&masked)?[target_class]);
            }
            Ok(softmax(&scores))
        }
        CamVariant::AblationCam => {
            let base = model.logits(input)?[target_class];
            let mut alpha = Vec::with_capacity(k);
            for ch in 0..k {
                let zero_channel = move |t: &mut Tensor4| t.channel_mut(ch).iter_mut().for_each(|v| *v = 0.0);
                let ablated = model.forward_patched(input, layer_id, &zero_channel)?[target_class];
                alpha.push((base - ablated) / (libm::fabs(base) + super::EPSILON));
            }
            Ok(alpha)
        }
        other => Err(Error::Config(alloc::format!("{other} is not a perturbation variant"))),
    }
}

/// RandomCAM weights: i.i.d. uniform on `[-1, 1]`.
pub fn random_channel_weights(k: usize, seed: u64) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Precondition("RandomCAM needs at least one channel".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k).map(|_| rng.gen_range(-1.0..=1.0)).collect())
}
