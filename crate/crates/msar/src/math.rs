//! Log-domain helpers shared by the decoding and fitting code.

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Numerically stable `log(exp(a) + exp(b))`.
#[inline]
pub fn log_sum_exp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-sum-exp over a slice; returns `-inf` for an empty slice.
#[inline]
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Log density of a Gaussian with mean `mu` and standard deviation `sd > 0`.
#[inline]
pub fn gaussian_logpdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive_on_small_values() {
        let xs = [0.5, 2.0, -1.0];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-13);
        assert!((log_sum_exp2(0.5, 2.0) - (0.5f64.exp() + 2.0f64.exp()).ln()).abs() < 1e-13);
    }

    #[test]
    fn log_sum_exp_survives_large_magnitudes() {
        // naive exp overflows here
        let v = log_sum_exp(&[1234.0, 1232.0]);
        assert!((v - (1234.0 + (1.0 + (-2.0f64).exp()).ln())).abs() < 1e-10);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp2(f64::NEG_INFINITY, 3.0), 3.0);
    }

    #[test]
    fn gaussian_logpdf_peak_and_one_sigma() {
        let sd = 2.0;
        let peak = gaussian_logpdf(5.0, 5.0, sd);
        assert!((peak - (-(sd.ln()) - 0.5 * LN_2PI)).abs() < 1e-14);
        let one_sigma = gaussian_logpdf(5.0 + sd, 5.0, sd);
        assert!((peak - one_sigma - 0.5).abs() < 1e-14);
    }
}
