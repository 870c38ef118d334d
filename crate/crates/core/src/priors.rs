//! Prior and hyperprior log-densities, prior samplers, and empirical-Bayes
//! fitting of the Beta hyperparameters from observed ratings.
//!
//! Gamma densities use the shape/rate parameterization throughout (mean
//! `shape / rate`), so `Gamma(10, 0.5)` puts its mass around 20. A rate of
//! zero stands for the flat improper prior: log-density 0 on the positive
//! half-line.

use rand::Rng;

use crate::data::PreferenceDataset;
use crate::model::ClassParams;
use crate::num::{ln_beta_fn, ln_gamma, Real};
use crate::rng::{draw_beta, draw_gamma_shape_rate};
use crate::{Error, Result};

/// All prior settings of the mixture model.
///
/// `lambda` is the shifted-Poisson rate for the number of classes
/// (`K - 1 ~ Poisson(lambda)`); `(xi1, xi2)` the Gamma hyperprior on the
/// Dirichlet concentration; `(a, b)` the Beta prior on each object quality;
/// `(gamma1, gamma2)` the Gamma prior on each consensus scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams<F> {
    pub lambda: F,
    pub xi1: F,
    pub xi2: F,
    pub a: F,
    pub b: F,
    pub gamma1: F,
    pub gamma2: F,
}

impl<F: Real> Hyperparams<F> {
    /// The flat bundle that turns MAP estimation into maximum likelihood:
    /// uniform `p` priors and improper flat priors on `theta` and `gamma`.
    pub fn flat() -> Self {
        Hyperparams {
            lambda: F::one(),
            xi1: F::one(),
            xi2: F::zero(),
            a: F::one(),
            b: F::one(),
            gamma1: F::one(),
            gamma2: F::zero(),
        }
    }

    /// Rates may be zero (improper flat priors); everything else must be
    /// strictly positive.
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("lambda", self.lambda),
            ("xi1", self.xi1),
            ("a", self.a),
            ("b", self.b),
            ("gamma1", self.gamma1),
        ];
        for (name, v) in pos {
            if !(v > F::zero()) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "hyperparameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        for (name, v) in [("xi2", self.xi2), ("gamma2", self.gamma2)] {
            if !(v >= F::zero()) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "hyperparameter {name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Shifted-Poisson log-pmf for the number of classes: `K - 1 ~ Poisson(lambda)`.
pub fn log_prior_k<F: Real>(k: usize, lambda: F) -> F {
    assert!(k >= 1, "K must be at least 1");
    let km1 = F::of_usize(k - 1);
    km1 * lambda.ln() - lambda - ln_gamma(F::of_usize(k))
}

/// Gamma(shape, rate) log-density; `rate == 0` denotes the flat improper
/// prior (0 on the positive half-line, `-inf` elsewhere).
pub fn log_gamma_pdf<F: Real>(x: F, shape: F, rate: F) -> F {
    if x <= F::zero() {
        return F::neg_infinity();
    }
    if rate == F::zero() {
        return F::zero();
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - F::one()) * x.ln() - rate * x
}

/// Beta(a, b) log-density on `[0, 1]`, with the usual boundary conventions
/// (`-inf` where the density vanishes, `+inf` where it diverges).
pub fn log_beta_pdf<F: Real>(x: F, a: F, b: F) -> F {
    if x < F::zero() || x > F::one() {
        return F::neg_infinity();
    }
    let mut out = -ln_beta_fn(a, b);
    if a != F::one() {
        out += (a - F::one()) * x.ln();
    }
    if b != F::one() {
        out += (b - F::one()) * (F::one() - x).ln();
    }
    out
}

/// Symmetric `Dirichlet_K(gamma, ..., gamma)` log-density at a point of the
/// simplex; identically 0 for `K = 1` (the degenerate one-point simplex).
pub fn log_dirichlet_pdf<F: Real>(weights: &[F], gamma: F) -> F {
    let k = F::of_usize(weights.len());
    let mut lp = ln_gamma(gamma * k) - k * ln_gamma(gamma);
    if gamma != F::one() {
        for &w in weights {
            lp += (gamma - F::one()) * w.ln();
        }
    }
    lp
}

/// Hyperprior on the Dirichlet concentration.
pub fn log_prior_gamma<F: Real>(gamma: F, xi1: F, xi2: F) -> F {
    log_gamma_pdf(gamma, xi1, xi2)
}

/// Prior on a consensus scale parameter.
pub fn log_prior_theta<F: Real>(theta: F, gamma1: F, gamma2: F) -> F {
    log_gamma_pdf(theta, gamma1, gamma2)
}

/// Prior on a single object-quality entry.
pub fn log_prior_p<F: Real>(p: F, a: F, b: F) -> F {
    log_beta_pdf(p, a, b)
}

/// Method-of-moments fit of `Beta(a, b)` to the observed ratings normalized
/// to the unit interval.
///
/// With sample mean `m` and variance `v` of `x / M`, returns
/// `a = m (m(1-m)/v - 1)` and `b = (1-m)(m(1-m)/v - 1)`. Errors when the
/// moments are infeasible (`v == 0` or `v >= m(1-m)`); callers typically fall
/// back to `Beta(1, 1)`.
pub fn empirical_bayes_beta<F: Real>(ds: &PreferenceDataset) -> Result<(F, F)> {
    let m_scale = ds.max_rating as f64;
    let values: Vec<f64> = ds
        .judges
        .iter()
        .flat_map(|rec| rec.ratings.values().map(|&x| x as f64 / m_scale))
        .collect();
    if values.len() < 2 {
        return Err(Error::MomentFit(format!(
            "need at least two observed ratings, found {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(Error::MomentFit(
            "observed ratings have zero variance".into(),
        ));
    }
    let bound = mean * (1.0 - mean);
    if var >= bound {
        return Err(Error::MomentFit(format!(
            "normalized variance {var:.4} is not below m(1-m) = {bound:.4}"
        )));
    }
    let scale = bound / var - 1.0;
    Ok((F::of(mean * scale), F::of((1.0 - mean) * scale)))
}

/// Draw class parameters from their prior: `p_j ~ Beta(a, b)` i.i.d. and
/// `theta ~ Gamma(gamma1, gamma2)`. Requires a proper `theta` prior.
pub fn sample_class_params_prior<F: Real, R: Rng>(
    hyper: &Hyperparams<F>,
    n_objects: usize,
    rng: &mut R,
) -> Result<ClassParams<F>> {
    if hyper.gamma2 == F::zero() {
        return Err(Error::ImproperPrior);
    }
    let p: Vec<F> = (0..n_objects)
        .map(|_| draw_beta(hyper.a, hyper.b, rng))
        .collect();
    let theta = draw_gamma_shape_rate(hyper.gamma1, hyper.gamma2, rng);
    Ok(ClassParams::new(p, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::JudgeRecord;
    use crate::rng::named_stream;
    use std::collections::BTreeMap;

    fn hyper(a: f64, b: f64, g1: f64, g2: f64) -> Hyperparams<f64> {
        Hyperparams {
            lambda: 1.0,
            xi1: 2.0,
            xi2: 3.0,
            a,
            b,
            gamma1: g1,
            gamma2: g2,
        }
    }

    #[test]
    fn shifted_poisson_at_one_class() {
        assert!((log_prior_k(1usize, 1.0f64) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn shifted_poisson_normalizes_and_has_mean_lambda_plus_one() {
        let lambda = 7.0f64;
        let mut total = 0.0;
        let mut mean = 0.0;
        for k in 1..=200usize {
            let p = log_prior_k(k, lambda).exp();
            total += p;
            mean += k as f64 * p;
        }
        assert!((total - 1.0).abs() < 1e-10);
        assert!((mean - (lambda + 1.0)).abs() < 1e-8);
    }

    #[test]
    fn flat_priors_evaluate_to_zero() {
        assert_eq!(log_beta_pdf(0.37, 1.0, 1.0), 0.0);
        for theta in [0.01, 1.0, 250.0] {
            assert_eq!(log_prior_theta(theta, 1.0, 0.0), 0.0);
        }
        assert_eq!(log_prior_theta(-0.5, 1.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(log_prior_gamma(2.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn beta_density_integrates_to_one_by_quadrature() {
        // Simpson's rule on a fine grid; a, b > 1 so the integrand vanishes
        // at both endpoints.
        let (a, b) = (2.50, 3.77);
        let n = 20_000usize;
        let h = 1.0 / n as f64;
        let f = |x: f64| log_beta_pdf(x, a, b).exp();
        let mut total = f(0.0) + f(1.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * f(i as f64 * h);
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-6, "integral = {total}");
    }

    #[test]
    fn gamma_density_integrates_to_one_by_quadrature() {
        let (shape, rate) = (10.0, 0.5);
        let n = 40_000usize;
        let hi = 120.0;
        let h = hi / n as f64;
        let f = |x: f64| log_gamma_pdf(x, shape, rate).exp();
        let mut total = f(1e-12) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * f(i as f64 * h);
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-6, "integral = {total}");
    }

    #[test]
    fn outside_support_is_neg_inf() {
        assert_eq!(log_beta_pdf(-0.1, 2.0, 2.0), f64::NEG_INFINITY);
        assert_eq!(log_beta_pdf(1.1, 2.0, 2.0), f64::NEG_INFINITY);
        assert_eq!(log_gamma_pdf(0.0, 2.0, 1.0), f64::NEG_INFINITY);
        assert_eq!(log_gamma_pdf(-3.0, 2.0, 1.0), f64::NEG_INFINITY);
    }

    fn binomial_dataset(m: u32, p: f64, n: usize) -> PreferenceDataset {
        let mut rng = named_stream(99, "eb");
        let judges: Vec<JudgeRecord> = (0..n)
            .map(|i| {
                let mut ratings = BTreeMap::new();
                ratings.insert(0usize, crate::rng::draw_binomial(m, p, &mut rng));
                JudgeRecord::new(i, vec![0], vec![], ratings)
            })
            .collect();
        PreferenceDataset::from_records(1, m, judges)
    }

    #[test]
    fn empirical_bayes_recovers_binomial_mean() {
        let ds = binomial_dataset(10, 0.5, 20_000);
        let (a, b): (f64, f64) = empirical_bayes_beta(&ds).unwrap();
        assert!(a > 0.0 && b > 0.0);
        let fitted_mean = a / (a + b);
        assert!((fitted_mean - 0.5).abs() < 0.02, "mean = {fitted_mean}");
    }

    #[test]
    fn empirical_bayes_rejects_degenerate_ratings() {
        let judges: Vec<JudgeRecord> = (0..5)
            .map(|i| {
                let mut ratings = BTreeMap::new();
                ratings.insert(0usize, 2u32);
                JudgeRecord::new(i, vec![0], vec![], ratings)
            })
            .collect();
        let ds = PreferenceDataset::from_records(1, 4, judges);
        assert!(matches!(
            empirical_bayes_beta::<f64>(&ds),
            Err(Error::MomentFit(_))
        ));
    }

    #[test]
    fn prior_sampler_rejects_improper_prior_and_handles_empty_p() {
        let mut rng = named_stream(7, "prior");
        assert!(matches!(
            sample_class_params_prior::<f64, _>(&hyper(1.0, 1.0, 1.0, 0.0), 3, &mut rng),
            Err(Error::ImproperPrior)
        ));
        let empty = sample_class_params_prior::<f64, _>(&hyper(1.0, 1.0, 2.0, 1.0), 0, &mut rng)
            .unwrap();
        assert!(empty.p.is_empty());
        assert!(empty.theta > 0.0);
    }

    #[test]
    fn prior_sampler_theta_mean_matches_shape_over_rate() {
        let mut rng = named_stream(8, "prior-theta");
        let h = hyper(1.0, 1.0, 10.0, 0.5);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| {
                sample_class_params_prior::<f64, _>(&h, 0, &mut rng)
                    .unwrap()
                    .theta
            })
            .sum::<f64>()
            / n as f64;
        let se = (10.0 / 0.25 / n as f64).sqrt();
        assert!((mean - 20.0).abs() < 3.0 * se, "mean = {mean}");
    }

    #[test]
    fn uniform_prior_p_draws_pass_a_ks_test() {
        let mut rng = named_stream(9, "prior-p");
        let h = hyper(1.0, 1.0, 2.0, 1.0);
        let n = 10_000usize;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| {
                sample_class_params_prior::<f64, _>(&h, 1, &mut rng)
                    .unwrap()
                    .p[0]
            })
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0f64;
        for (i, &x) in draws.iter().enumerate() {
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d = d.max((x - lo).abs()).max((x - hi).abs());
        }
        // KS critical value at alpha = 0.001.
        let crit = 1.949 / (n as f64).sqrt();
        assert!(d < crit, "D = {d}, crit = {crit}");
    }
}
