//! Product Gaussian kernel and Silverman's bandwidth rule.

use nalgebra::DVector;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Standard normal density at `u`.
pub fn gaussian_kernel_scalar(u: f64) -> f64 {
    (-0.5 * u * u - LN_SQRT_2PI).exp()
}

/// Product of standard normal densities over the coordinates of `u`.
pub fn gaussian_kernel(u: &DVector<f64>) -> f64 {
    log_gaussian_kernel(u.as_slice()).exp()
}

/// Log of the product Gaussian kernel; the hot paths stay in log domain so
/// far-away points keep a usable (finite, very negative) value.
pub fn log_gaussian_kernel(u: &[f64]) -> f64 {
    let mut ss = 0.0;
    for &v in u {
        ss += v * v;
    }
    -0.5 * ss - LN_SQRT_2PI * u.len() as f64
}

/// Per-coordinate bandwidths together with degeneracy flags.
#[derive(Debug, Clone)]
pub struct Bandwidth {
    pub values: Vec<f64>,
    /// Set when a coordinate had zero spread and the fallback rule was used.
    pub degenerate: Vec<bool>,
}

impl Bandwidth {
    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    // Linear interpolation between order statistics (R type 7).
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule of thumb, one bandwidth per coordinate:
/// `1.06 * min(sd, IQR / 1.34) * m^(-1/5)`.
///
/// A coordinate with zero spread falls back to `1.06 * |mean| * m^(-1/5) + eps`
/// and is flagged.
pub fn silverman_bandwidth(coordinates: &[Vec<f64>]) -> Bandwidth {
    let mut values = Vec::with_capacity(coordinates.len());
    let mut degenerate = Vec::with_capacity(coordinates.len());
    for col in coordinates {
        let m = col.len();
        assert!(m >= 2, "bandwidth needs at least two observations");
        let mf = m as f64;
        let mean = col.iter().sum::<f64>() / mf;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (mf - 1.0);
        let sd = var.sqrt();
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let spread = sd.min(iqr / 1.34);
        let rate = mf.powf(-0.2);
        if spread > 0.0 {
            values.push(1.06 * spread * rate);
            degenerate.push(false);
        } else {
            values.push(1.06 * mean.abs() * rate + 1e-6);
            degenerate.push(true);
        }
    }
    Bandwidth { values, degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn kernel_at_zero() {
        assert_abs_diff_eq!(
            gaussian_kernel_scalar(0.0),
            (2.0 * std::f64::consts::PI).powf(-0.5),
            epsilon = 1e-14
        );
        let u = DVector::from_vec(vec![0.0, 0.0]);
        assert_abs_diff_eq!(
            gaussian_kernel(&u),
            (2.0 * std::f64::consts::PI).powi(-1),
            epsilon = 1e-14
        );
    }

    #[test]
    fn kernel_is_symmetric() {
        let a = DVector::from_vec(vec![1.0, -0.3]);
        let b = DVector::from_vec(vec![-1.0, 0.3]);
        assert_eq!(gaussian_kernel(&a), gaussian_kernel(&b));
    }

    #[test]
    fn bandwidth_matches_formula_on_unit_spread_sample() {
        // Rescale a normal sample so min(sd, IQR/1.34) is exactly one; the
        // rule then reduces to 1.06 * m^(-1/5) ~ 0.367 at m = 200.
        let mut rng = crate::numerics::seeded_rng(11, 0);
        let m = 200;
        let raw: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let bw_raw = silverman_bandwidth(&[raw.clone()]);
        let scale = bw_raw.values[0] / (1.06 * (m as f64).powf(-0.2));
        let scaled: Vec<f64> = raw.iter().map(|x| x / scale).collect();
        let bw = silverman_bandwidth(&[scaled]);
        assert_abs_diff_eq!(bw.values[0], 1.06 * (m as f64).powf(-0.2), epsilon = 1e-10);
        assert_abs_diff_eq!(bw.values[0], 0.3669, epsilon = 5e-4);
    }

    #[test]
    fn bandwidth_is_scale_equivariant() {
        let mut rng = crate::numerics::seeded_rng(12, 0);
        let sample: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
        let doubled: Vec<f64> = sample.iter().map(|x| 2.0 * x).collect();
        let a = silverman_bandwidth(&[sample]);
        let b = silverman_bandwidth(&[doubled]);
        assert_abs_diff_eq!(b.values[0], 2.0 * a.values[0], epsilon = 1e-12);
    }

    #[test]
    fn constant_sample_takes_degenerate_path() {
        let bw = silverman_bandwidth(&[vec![3.0; 10]]);
        assert!(bw.degenerate[0]);
        assert!(bw.values[0] > 0.0);
        assert_abs_diff_eq!(
            bw.values[0],
            1.06 * 3.0 * 10f64.powf(-0.2) + 1e-6,
            epsilon = 1e-12
        );
    }
}
