//! Significance tests for comparing decoding orders on the same sequences.

use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTestResult {
    pub mean_difference: f64,
    pub t: f64,
    pub p_value: f64,
}

/// Two-sided paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid(
            "paired t-test needs two equal-length samples of size >= 2",
        ));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let (t, p_value) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (var / n).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| invalid(e.to_string()))?;
        (t, 2.0 * (1.0 - dist.cdf(t.abs())))
    };
    Ok(TTestResult {
        mean_difference: mean,
        t,
        p_value,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnovaResult {
    pub f: f64,
    pub df_effect: f64,
    pub df_error: f64,
    pub p_value: f64,
}

/// One-way repeated-measures ANOVA. `rows[i][j]` is subject `i` under
/// condition `j`; subject offsets are removed before testing conditions.
pub fn repeated_measures_anova(rows: &[Vec<f64>]) -> Result<AnovaResult> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if n < 2 || k < 2 || rows.iter().any(|r| r.len() != k) {
        return Err(invalid(
            "repeated-measures ANOVA needs >= 2 subjects × >= 2 conditions",
        ));
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = rows.iter().flatten().sum::<f64>() / (nf * kf);
    let cond_means: Vec<f64> = (0..k)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let subj_means: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let ss_total: f64 = rows.iter().flatten().map(|x| (x - grand).powi(2)).sum();
    let ss_cond = nf * cond_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_subj = kf * subj_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_err = (ss_total - ss_cond - ss_subj).max(0.0);
    let df_effect = kf - 1.0;
    let df_error = (nf - 1.0) * (kf - 1.0);
    // Relative floor so rounding residue in a perfectly additive table does
    // not register as an effect.
    let tiny = 1e-12 * ss_total.max(f64::MIN_POSITIVE);
    let (f, p_value) = if ss_err <= tiny {
        if ss_cond <= tiny {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = (ss_cond / df_effect) / (ss_err / df_error);
        let dist = FisherSnedecor::new(df_effect, df_error).map_err(|e| invalid(e.to_string()))?;
        (f, 1.0 - dist.cdf(f))
    };
    Ok(AnovaResult {
        f,
        df_effect,
        df_error,
        p_value,
    })
}
