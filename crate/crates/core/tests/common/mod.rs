//! Shared statistical test helpers.

#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// One-sample Kolmogorov-Smirnov statistic against an exact CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    d
}

/// KS critical value at significance `alpha` (asymptotic).
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    ((-(alpha / 2.0).ln()) / 2.0).sqrt() / (n as f64).sqrt()
}

/// Assert that `samples` are consistent with `cdf` at alpha = 0.001.
pub fn assert_ks(samples: &mut [f64], cdf: impl Fn(f64) -> f64, what: &str) {
    let n = samples.len();
    let d = ks_statistic(samples, cdf);
    let crit = ks_critical(n, 0.001);
    assert!(d < crit, "{what}: KS D = {d:.4} >= {crit:.4} (n = {n})");
}

/// Chi-square goodness-of-fit p-value for observed counts against cell
/// probabilities (which must sum to ~1).
pub fn chi2_gof_pvalue(observed: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0f64;
    let mut df = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        let expected = p * n as f64;
        if expected < 1e-12 {
            assert_eq!(o, 0, "observed count in a zero-probability cell");
            continue;
        }
        stat += (o as f64 - expected) * (o as f64 - expected) / expected;
        df += 1;
    }
    let df = df.saturating_sub(1);
    if df == 0 {
        return 1.0;
    }
    1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat)
}

/// Simple mean helper.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
