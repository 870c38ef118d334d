//! Seeded random-number streams and the generic draw helpers built on them.
//!
//! All randomness flows from one root seed through named sub-streams so that
//! adding a consumer never perturbs the draws of another. Underlying draws
//! are performed in `f64` and converted to the caller's scalar type, which
//! keeps the stream contents identical across instantiations.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma as GammaDist, StandardNormal};

use crate::num::Real;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    h
}

/// A reproducible generator for the sub-stream `name` of `root`.
pub fn named_stream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fnv1a(root, name.as_bytes()))
}

/// Like [`named_stream`] but additionally keyed by an index, for
/// embarrassingly parallel work units (simulation cells, restarts, chains).
pub fn indexed_stream(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut bytes = Vec::with_capacity(name.len() + 9);
    bytes.extend_from_slice(name.as_bytes());
    bytes.push(b'#');
    bytes.extend_from_slice(&index.to_le_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a(root, &bytes))
}

/// Uniform draw on (0, 1).
pub fn draw_uniform_01<F: Real, R: Rng>(rng: &mut R) -> F {
    F::of(rng.random::<f64>())
}

/// Standard normal scaled to `mean + sd * Z`.
pub fn draw_normal<F: Real, R: Rng>(mean: F, sd: F, rng: &mut R) -> F {
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * F::of(z)
}

/// Gamma draw in the shape/rate parameterization (mean `shape / rate`).
pub fn draw_gamma_shape_rate<F: Real, R: Rng>(shape: F, rate: F, rng: &mut R) -> F {
    let g = GammaDist::new(shape.as_f64(), 1.0 / rate.as_f64()).expect("invalid Gamma parameters");
    F::of(g.sample(rng))
}

/// Beta draw.
pub fn draw_beta<F: Real, R: Rng>(a: F, b: F, rng: &mut R) -> F {
    let d = BetaDist::new(a.as_f64(), b.as_f64()).expect("invalid Beta parameters");
    F::of(d.sample(rng))
}

/// Symmetric-or-not Dirichlet draw via normalized Gamma variables.
pub fn draw_dirichlet<F: Real, R: Rng>(alphas: &[F], rng: &mut R) -> Vec<F> {
    let mut out: Vec<F> = alphas
        .iter()
        .map(|&a| draw_gamma_shape_rate(a, F::one(), rng))
        .collect();
    let total: F = out.iter().copied().sum();
    if total <= F::zero() {
        // All draws underflowed (only possible when every alpha is tiny);
        // fall back to a point mass on the largest alpha.
        let argmax = alphas
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        out.iter_mut().for_each(|w| *w = F::zero());
        out[argmax] = F::one();
        return out;
    }
    out.iter_mut().for_each(|w| *w /= total);
    out
}

/// Binomial(n, p) via n Bernoulli draws; exact and cheap for rating scales.
pub fn draw_binomial<R: Rng>(n: u32, p: f64, rng: &mut R) -> u32 {
    let p = p.clamp(0.0, 1.0);
    (0..n).filter(|_| rng.random_bool(p)).count() as u32
}

/// Draw an index from the categorical distribution with unnormalized log
/// weights; `None` when every weight is `-inf`.
pub fn categorical_from_log_weights<F: Real, R: Rng>(logw: &[F], rng: &mut R) -> Option<usize> {
    let mut max = F::neg_infinity();
    for &w in logw {
        if w > max {
            max = w;
        }
    }
    if !max.is_finite() {
        return None;
    }
    let mut total = F::zero();
    for &w in logw {
        total += (w - max).exp();
    }
    let target = draw_uniform_01::<F, _>(rng) * total;
    let mut acc = F::zero();
    for (i, &w) in logw.iter().enumerate() {
        acc += (w - max).exp();
        if acc >= target {
            return Some(i);
        }
    }
    // Rounding can leave acc a hair below target at the end; take the last
    // index with positive mass.
    logw.iter().rposition(|&w| w.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_streams_are_reproducible_and_distinct() {
        let mut a1 = named_stream(7, "labels");
        let mut a2 = named_stream(7, "labels");
        let mut b = named_stream(7, "mh-p");
        let xs: Vec<u64> = (0..4).map(|_| a1.random()).collect();
        let ys: Vec<u64> = (0..4).map(|_| a2.random()).collect();
        let zs: Vec<u64> = (0..4).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn indexed_streams_differ_by_index() {
        let mut a = indexed_stream(0, "sim", 0);
        let mut b = indexed_stream(0, "sim", 1);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn categorical_respects_log_weights() {
        let mut rng = named_stream(3, "test");
        let logw = [0.0f64, f64::NEG_INFINITY, 2.0f64.ln()];
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[categorical_from_log_weights(&logw, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[1], 0);
        let frac = counts[2] as f64 / 30_000.0;
        assert!((frac - 2.0 / 3.0).abs() < 0.02, "frac = {frac}");
    }

    #[test]
    fn categorical_all_neg_inf_is_none() {
        let mut rng = named_stream(3, "test");
        let logw = [f64::NEG_INFINITY; 4];
        assert_eq!(categorical_from_log_weights(&logw, &mut rng), None);
    }

    #[test]
    fn gamma_shape_rate_mean() {
        let mut rng = named_stream(11, "gamma");
        let n = 40_000;
        let mean = (0..n)
            .map(|_| draw_gamma_shape_rate::<f64, _>(10.0, 0.5, &mut rng))
            .sum::<f64>()
            / n as f64;
        // mean 20, sd of the mean = sqrt(40)/sqrt(n)
        assert!((mean - 20.0).abs() < 3.0 * (40.0f64 / n as f64).sqrt());
    }

    #[test]
    fn dirichlet_sums_to_one() {
        let mut rng = named_stream(5, "dir");
        let w = draw_dirichlet(&[0.5f64, 1.5, 3.0], &mut rng);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x >= 0.0));
    }
}
