use super::LatentSequence;

/// Sampled Gaussian truncated at `ceil(3 sigma)` and normalized to sum 1.
/// `sigma == 0` gives the identity kernel `[1]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be non-negative, got {sigma}");
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Half-sample symmetric boundary: `d c b a | a b c d | d c b a`.
fn reflect_index(i: i64, n: i64) -> usize {
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Convolution with an odd-length symmetric kernel and reflected boundaries.
pub fn convolve_reflect(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    if kernel.len() == 1 {
        return signal.iter().map(|v| v * kernel[0]).collect();
    }
    let n = signal.len() as i64;
    let r = (kernel.len() / 2) as i64;
    (0..n).map(|t| kernel.iter().enumerate().map(|(j, w)| w * signal[reflect_index(t + j as i64 - r, n)]).sum()).collect()
}

/// Channel-wise Gaussian smoothing of a latent sequence.
pub fn smooth_latent(gamma: &LatentSequence, sigma: f64) -> LatentSequence {
    if sigma == 0.0 {
        return gamma.clone();
    }
    let k = gaussian_kernel(sigma);
    LatentSequence { phi: convolve_reflect(&gamma.phi, &k), theta: convolve_reflect(&gamma.theta, &k), u: convolve_reflect(&gamma.u, &k) }
}
