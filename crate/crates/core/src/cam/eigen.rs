//! First-principal-component projections (EigenCAM, EigenGradCAM).

use alloc::vec;
use alloc::vec::Vec;

use super::{check_same_shape, collect_planes, CamVariant};
use crate::error::{Error, Result};
use crate::tensor::{Map2, Tensor4};

/// Eigen-decomposition of a symmetric `n×n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues (descending) and the matching unit
/// eigenvectors as rows.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j] * a[i * n + j]).sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = libm::copysign(1.0, theta) / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}

/// Projection of the column-centred `(H·W) × k` source matrix onto its first
/// right singular vector, reshaped to `H×W` (before ReLU).
///
/// The sign of the singular vector is chosen so that the projection of the
/// uncentred source has non-negative mean; the centred projection itself
/// always has zero mean.
pub fn eigen_weighted_maps(variant: CamVariant, act: &Tensor4, grad: Option<&Tensor4>) -> Result<Map2> {
    let source = match (variant, grad) {
        (CamVariant::EigenCam, _) => act.clone(),
        (CamVariant::EigenGradCam, Some(g)) => {
            check_same_shape(act, g)?;
            act.zip_map(g, |a, b| a * b)?
        }
        (CamVariant::EigenGradCam, None) => return Err(Error::Cache("EigenGradCAM needs gradients")),
        (other, _) => return Err(Error::Config(alloc::format!("{other} is not an eigen variant"))),
    };
    let (h, w) = source.hw();
    let cols = collect_planes(&source);
    let k = cols.len();
    let rows = h * w;
    if source.data().iter().all(|&v| v == 0.0) || rows == 0 {
        return Ok(Map2::zeros(h, w));
    }
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / rows as f64).collect();
    let centred: Vec<Vec<f64>> = cols.iter().zip(&means).map(|(c, m)| c.iter().map(|v| v - m).collect()).collect();
    let mut gram = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let d: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            gram[i * k + j] = d;
            gram[j * k + i] = d;
        }
    }
    let (values, vectors) = symmetric_eigen(&gram, k);
    if values[0] <= 0.0 {
        // rank-0 after centring: every column is constant
        return Ok(Map2::zeros(h, w));
    }
    let mut v1 = vectors[0].clone();
    let mut proj: Vec<f64> =
        (0..rows).map(|r| centred.iter().zip(&v1).map(|(col, vk)| col[r] * vk).sum()).collect();
    let mean_dir: f64 = means.iter().zip(&v1).map(|(m, v)| m * v).sum();
    let flip = if libm::fabs(mean_dir) > 1e-12 * means.iter().map(|m| libm::fabs(*m)).sum::<f64>().max(1e-300) {
        mean_dir < 0.0
    } else {
        // fall back to making the largest-magnitude entry positive
        let peak = proj.iter().copied().fold(0.0f64, |acc, p| if libm::fabs(p) > libm::fabs(acc) { p } else { acc });
        peak < 0.0
    };
    if flip {
        v1.iter_mut().for_each(|v| *v = -*v);
        proj.iter_mut().for_each(|p| *p = -*p);
    }
    Map2::from_vec(h, w, proj)
}
