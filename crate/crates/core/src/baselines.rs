//! Univariate comparators: modified James–Stein and the kernel-density
//! Tweedie rule.

use crate::error::{invalid, Result};

/// Lower clip for the density estimate.
pub const KDE_DENSITY_FLOOR: f64 = 1e-30;
/// `|f̂'/f̂|` is clipped at this multiple of `1 / bandwidth`.
pub const KDE_RATIO_CAP: f64 = 10.0;

/// Positive-part James–Stein shrinkage toward the precision-weighted mean.
pub fn james_stein(y: &[f64], sigmas: &[f64]) -> Result<Vec<f64>> {
    let (center, factor) = james_stein_parts(y, sigmas)?;
    Ok(y.iter().map(|v| center + factor * (v - center)).collect())
}

/// Center `ĴS = Σ σ_i⁻² y_i / Σ σ_i⁻²` and factor `[1 - (n - 3) / Σ σ_i⁻² (y_i - ĴS)²]₊`.
pub fn james_stein_parts(y: &[f64], sigmas: &[f64]) -> Result<(f64, f64)> {
    let n = y.len();
    if n < 4 {
        return invalid(format!("James-Stein needs at least 4 observations, got {n}"));
    }
    if sigmas.len() != n {
        return invalid("one noise level per observation is required");
    }
    if sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return invalid("noise levels must be positive");
    }
    let prec: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
    let center = y.iter().zip(&prec).map(|(v, w)| v * w).sum::<f64>() / prec.iter().sum::<f64>();
    let spread: f64 = y.iter().zip(&prec).map(|(v, w)| w * (v - center) * (v - center)).sum();
    let factor = if spread > 0.0 { (1.0 - (n as f64 - 3.0) / spread).max(0.0) } else { 0.0 };
    Ok((center, factor))
}

/// Rule-of-thumb bandwidth `1.06 · sd · n^{-1/5}`.
pub fn silverman_bandwidth(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    1.06 * sd * n.powf(-0.2)
}

/// Tweedie rule `y_i + σ² f̂'(y_i)/f̂(y_i)` with a Gaussian kernel density.
pub fn tweedie_kde(y: &[f64], sigma: f64, bandwidth: f64) -> Result<Vec<f64>> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return invalid(format!("bandwidth must be positive, got {bandwidth}"));
    }
    if !(sigma > 0.0) {
        return invalid("sigma must be positive");
    }
    let h2 = bandwidth * bandwidth;
    let cap = KDE_RATIO_CAP / bandwidth;
    let s2 = sigma * sigma;
    Ok(y.iter()
        .map(|&yi| {
            // Common factors (2π)^{-1/2} / (n h) cancel in the ratio.
            let (mut f, mut df) = (0.0, 0.0);
            for &yj in y {
                let d = yi - yj;
                let k = (-0.5 * d * d / h2).exp();
                f += k;
                df -= k * d / h2;
            }
            let ratio = (df / f.max(KDE_DENSITY_FLOOR)).clamp(-cap, cap);
            yi + s2 * ratio
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_observations_are_unchanged() {
        let y = vec![1.5; 6];
        assert_eq!(james_stein(&y, &[1.0; 6]).unwrap(), y);
        assert_eq!(tweedie_kde(&y, 1.0, 0.3).unwrap(), y);
    }

    #[test]
    fn james_stein_needs_four_points() {
        assert!(james_stein(&[1.0, 2.0, 3.0], &[1.0; 3]).is_err());
    }

    #[test]
    fn heteroskedastic_transcription() {
        let y = [0.4, -1.2, 2.2, 0.9, 3.1, -0.5];
        let s = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let w: Vec<f64> = s.iter().map(|v| 1.0 / (v * v)).collect();
        let js = (0..6).map(|i| w[i] * y[i]).sum::<f64>() / w.iter().sum::<f64>();
        let q: f64 = (0..6).map(|i| w[i] * (y[i] - js).powi(2)).sum();
        let b = (1.0 - 3.0 / q).max(0.0);
        let got = james_stein(&y, &s).unwrap();
        for i in 0..6 {
            assert!((got[i] - (js + b * (y[i] - js))).abs() < 1e-14);
        }
    }

    #[test]
    fn kde_ratio_is_clipped() {
        let y = [0.0, 100.0, 100.1];
        let d = tweedie_kde(&y, 1.0, 0.01).unwrap();
        assert!((d[0] - 0.0).abs() < 1e-12);
        assert!((d[1] - 100.0).abs() <= KDE_RATIO_CAP / 0.01 + 1e-9);
    }
}
