use super::{sigmoid, Real};

/// `ln σ(x)` without cancellation.
pub fn log_sigmoid<T: Real>(x: T) -> T {
    // -softplus(-x)
    if x >= T::zero() {
        -((-x).exp().ln_1p())
    } else {
        x - x.exp().ln_1p()
    }
}

/// Log probability mass a discretized logistic puts on one level, with
/// partial derivatives with respect to the mean and the log-scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogMass<T> {
    pub value: T,
    pub d_mean: T,
    pub d_log_scale: T,
}

/// Level `k` owns the bucket `(k - 1/2, k + 1/2)` in level units; the first
/// and last buckets extend to -inf and +inf respectively. Means are in level
/// units as well.
pub fn discretized_logistic_log_mass<T: Real>(
    mean: T,
    log_scale: T,
    level: usize,
    levels: usize,
) -> LogMass<T> {
    let half = T::lit(0.5);
    let inv = (-log_scale).exp();
    let k = T::from_usize(level).unwrap();
    let upper = (k + half - mean) * inv;
    let lower = (k - half - mean) * inv;
    let first = level == 0;
    let last = level + 1 >= levels;

    if first && last {
        return LogMass {
            value: T::zero(),
            d_mean: T::zero(),
            d_log_scale: T::zero(),
        };
    }
    if first {
        // ln σ(upper)
        let g = sigmoid(-upper);
        return LogMass {
            value: log_sigmoid(upper),
            d_mean: -g * inv,
            d_log_scale: -g * upper,
        };
    }
    if last {
        // ln(1 - σ(lower)) = ln σ(-lower)
        let g = -sigmoid(lower);
        return LogMass {
            value: log_sigmoid(-lower),
            d_mean: -g * inv,
            d_log_scale: -g * lower,
        };
    }

    // σ(a) - σ(b) = σ(a) σ(-b) (1 - e^{b-a}), with b - a = -inv.
    let value = log_sigmoid(upper) + log_sigmoid(-lower) + (-(-inv).exp_m1()).ln();
    let sa = sigmoid(-upper);
    let sb = sigmoid(lower);
    // ∂/∂a + ∂/∂b, the 1/expm1 terms cancel
    let d_mean = -(sa - sb) * inv;
    let d_log_scale = -upper * sa + lower * sb - inv / inv.exp_m1();
    LogMass {
        value,
        d_mean,
        d_log_scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mass(mean: f64, log_scale: f64, level: usize, levels: usize) -> f64 {
        let s = log_scale.exp();
        let cdf = |x: f64| 1.0 / (1.0 + (-(x - mean) / s).exp());
        let hi = if level + 1 == levels {
            1.0
        } else {
            cdf(level as f64 + 0.5)
        };
        let lo = if level == 0 {
            0.0
        } else {
            cdf(level as f64 - 0.5)
        };
        hi - lo
    }

    #[test]
    fn matches_naive_cdf_difference() {
        for &(m, ls) in &[(0.3f64, 0.0f64), (2.7, -1.0), (5.0, 1.5), (1.0, -3.0)] {
            for k in 0..6 {
                let got = discretized_logistic_log_mass(m, ls, k, 6).value.exp();
                let want = naive_mass(m, ls, k, 6);
                assert!(
                    (got - want).abs() < 1e-12,
                    "m={m} ls={ls} k={k}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn masses_sum_to_one() {
        for &(m, ls) in &[(0.0f64, -5.0f64), (3.3, 0.4), (-2.0, 2.0), (9.0, -0.2)] {
            let total: f64 = (0..10)
                .map(|k| discretized_logistic_log_mass(m, ls, k, 10).value.exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_scale_at_bucket_centre_has_unit_mass() {
        let lm = discretized_logistic_log_mass(2.0f64, -12.0, 2, 5);
        assert!(lm.value.abs() < 1e-9);
        assert!(lm.value.is_finite() && lm.d_mean.is_finite() && lm.d_log_scale.is_finite());
    }

    #[test]
    fn partials_match_finite_differences() {
        let h = 1e-6;
        for &(m, ls) in &[(0.3f64, 0.0f64), (2.7, -1.0), (4.2, 0.8)] {
            for k in 0..5 {
                let f = |m: f64, ls: f64| discretized_logistic_log_mass(m, ls, k, 5).value;
                let lm = discretized_logistic_log_mass(m, ls, k, 5);
                let dm = (f(m + h, ls) - f(m - h, ls)) / (2.0 * h);
                let ds = (f(m, ls + h) - f(m, ls - h)) / (2.0 * h);
                assert!(
                    (dm - lm.d_mean).abs() < 1e-6,
                    "k={k}: {dm} vs {}",
                    lm.d_mean
                );
                assert!(
                    (ds - lm.d_log_scale).abs() < 1e-6,
                    "k={k}: {ds} vs {}",
                    lm.d_log_scale
                );
            }
        }
    }
}
