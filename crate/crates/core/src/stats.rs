//! Replicate-run statistics.
//!
//! Student's t distribution is evaluated through the regularized incomplete
//! beta function; confidence intervals invert it by bisection. Comparisons
//! use the pooled-variance two-sample t-test (two-sided) and Holm's
//! step-down procedure for the family-wise error rate.

use crate::error::{Error, Result};

/// One accuracy per replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub label: String,
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let s = SampleSet {
            label: label.into(),
            values,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::invalid(format!(
                "sample `{}` has {} value(s), need at least 2",
                self.label,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample `{}`", self.label)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean and unbiased (n − 1) variance, Welford's update.
pub fn mean_var(s: &SampleSet) -> Result<(f64, f64)> {
    s.check()?;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in s.values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    Ok((mean, m2 / (s.len() - 1) as f64))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// P(|T| ≥ |t|) for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Student's t cumulative distribution.
pub fn t_cdf(x: f64, df: f64) -> f64 {
    let tail = 0.5 * t_two_sided_p(x, df);
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse of [`t_cdf`] by bisection.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level {p} outside (0, 1)")));
    }
    if df <= 0.0 {
        return Err(Error::invalid("degrees of freedom must be positive"));
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while t_cdf(lo, df) > p {
        lo *= 2.0;
    }
    while t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `mean ± t(0.975, n−1) · sd / √n`.
pub fn confidence_interval_95(s: &SampleSet) -> Result<(f64, f64)> {
    let (mean, var) = mean_var(s)?;
    let n = s.len() as f64;
    let half = t_quantile(0.975, n - 1.0)? * var.sqrt() / n.sqrt();
    Ok((mean - half, mean + half))
}

/// Sample standard deviation implied by a reported 95% interval over `n`
/// replicates.
pub fn implied_sd_from_ci95(low: f64, high: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("need n >= 2"));
    }
    let t = t_quantile(0.975, (n - 1) as f64)?;
    Ok((high - low) / 2.0 * (n as f64).sqrt() / t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
}

/// Two-sample, two-sided, pooled-variance Student's t-test.
pub fn students_t_test(a: &SampleSet, b: &SampleSet) -> Result<TTest> {
    let (ma, va) = mean_var(a)?;
    let (mb, vb) = mean_var(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = a.len() + b.len() - 2;
    let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df as f64;
    if pooled == 0.0 {
        let (t, p) = if ma == mb { (0.0, 1.0) } else { ((ma - mb).signum() * f64::INFINITY, 0.0) };
        return Ok(TTest { t, df, p });
    }
    let t = (ma - mb) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TTest {
        t,
        df,
        p: t_two_sided_p(t, df as f64),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolmResult {
    /// `alpha / (m − k + 1)` for k = 1..m, ascending.
    pub thresholds: Vec<f64>,
    /// Per input position.
    pub significant: Vec<bool>,
}

/// Holm–Bonferroni step-down procedure.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<HolmResult> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1]")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let thresholds: Vec<f64> = (1..=m).map(|k| alpha / (m - k + 1) as f64).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut significant = vec![false; m];
    for (rank, &i) in order.iter().enumerate() {
        if p_values[i] < thresholds[rank] {
            significant[i] = true;
        } else {
            break;
        }
    }
    Ok(HolmResult {
        thresholds,
        significant,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairComparison {
    pub label_a: String,
    pub label_b: String,
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub pairs: Vec<PairComparison>,
    pub alpha: f64,
    pub holm_thresholds: Vec<f64>,
    pub significant: Vec<bool>,
}

/// t-tests for `pairs` (indices into `samples`) with one Holm family.
pub fn compare_pairs(
    samples: &[SampleSet],
    pairs: &[(usize, usize)],
    alpha: f64,
) -> Result<ComparisonReport> {
    let mut out = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        let (a, b) = (
            samples.get(i).ok_or_else(|| Error::invalid("pair index out of range"))?,
            samples.get(j).ok_or_else(|| Error::invalid("pair index out of range"))?,
        );
        let test = students_t_test(a, b)?;
        out.push(PairComparison {
            label_a: a.label.clone(),
            label_b: b.label.clone(),
            t_statistic: test.t,
            degrees_of_freedom: test.df,
            p_value: test.p,
        });
    }
    let p: Vec<f64> = out.iter().map(|c| c.p_value).collect();
    let holm = holm_bonferroni(&p, alpha)?;
    Ok(ComparisonReport {
        pairs: out,
        alpha,
        holm_thresholds: holm.thresholds,
        significant: holm.significant,
    })
}

/// All unordered pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}
