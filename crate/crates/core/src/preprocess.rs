use crate::tensor::Tensor4;

/// Per-channel `(x - mean) / std`. A single mean/std is broadcast to all
/// channels.
pub fn standardize(image: &Tensor4, means: &[f64], stds: &[f64]) -> Tensor4 {
    let mut out = image.clone();
    let [n, c, _, _] = image.shape();
    for b in 0..n {
        for ch in 0..c {
            let m = means[ch.min(means.len() - 1)];
            let s = stds[ch.min(stds.len() - 1)];
            let plane = out.channel_mut(b * c + ch);
            for v in plane {
                *v = (*v - m) / s;
            }
        }
    }
    out
}
