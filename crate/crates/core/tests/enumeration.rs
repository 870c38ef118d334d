//! Exhaustive-enumeration oracles for the joint ranking-and-ratings density:
//! normalization over the full outcome space, the identifiability witness,
//! and Monte-Carlo agreement of the exact sampler with the pmf.

mod common;

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use btlb::data::JudgeRecord;
use btlb::model::{log_btl_binomial, log_btl_ranking, sample_judge, ClassParams};

/// All rankings of length `r` over objects `0..j` paired with all full
/// rating vectors on `{0..m}^j`, with their joint log-densities summed.
fn total_probability(params: &ClassParams<f64>, j: usize, m: u32, r: usize) -> f64 {
    let assessed: Vec<usize> = (0..j).collect();
    let mut total = 0.0f64;
    for ranking in (0..j).permutations(r) {
        for ratings in std::iter::repeat_n(0..=m, j).multi_cartesian_product() {
            let map: BTreeMap<usize, u32> = ratings.into_iter().enumerate().collect();
            let rec = JudgeRecord::new(0, assessed.clone(), ranking.clone(), map);
            total += log_btl_binomial(&rec, params, m).exp();
        }
    }
    total
}

#[test]
fn pmf_sums_to_one_over_the_full_outcome_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    use rand::Rng;
    for (j, m, r) in [(2usize, 1u32, 2usize), (3, 2, 3), (3, 2, 2)] {
        for _ in 0..50 {
            let p: Vec<f64> = (0..j).map(|_| rng.random()).collect();
            let theta = 0.1 + 50.0 * rng.random::<f64>();
            let params = ClassParams::new(p, theta);
            let total = total_probability(&params, j, m, r);
            assert!(
                (total - 1.0).abs() < 1e-10,
                "(J={j}, M={m}, R={r}): total = {total}"
            );
        }
    }
}

#[test]
fn distinct_consensus_scales_are_distinguishable() {
    // Same (non-constant) quality vector, different theta: at least one
    // complete-ranking outcome must differ in probability, which is the
    // observable footprint of identifiability.
    let p: Vec<f64> = vec![0.2, 0.5, 0.8];
    let assessed = [0usize, 1, 2];
    let sharp = ClassParams::new(p.clone(), 12.0);
    let blunt = ClassParams::new(p, 3.0);
    let max_gap = (0..3)
        .permutations(3)
        .map(|ranking| {
            let a = log_btl_ranking(&ranking, &assessed, &sharp).exp();
            let b = log_btl_ranking(&ranking, &assessed, &blunt).exp();
            (a - b).abs()
        })
        .fold(0.0f64, f64::max);
    assert!(max_gap > 1e-9, "max gap = {max_gap}");
}

#[test]
fn sampler_frequencies_match_the_pmf() {
    // J = 3 complete rankings: Monte-Carlo frequencies within 3 standard
    // errors of the exact probabilities over 100k draws.
    let params: ClassParams<f64> = ClassParams::new(vec![0.15, 0.45, 0.8], 6.0);
    let assessed = [0usize, 1, 2];
    let n = 100_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..n {
        let rec = sample_judge(0, &assessed, 3, &[], &params, 1, &mut rng);
        *counts.entry(rec.ranking).or_default() += 1;
    }
    for ranking in (0..3).permutations(3) {
        let exact = log_btl_ranking(&ranking, &assessed, &params).exp();
        let got = *counts.get(&ranking).unwrap_or(&0) as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!(
            (got - exact).abs() < 3.0 * se + 1e-9,
            "{ranking:?}: {got} vs {exact}"
        );
    }
}

#[test]
fn two_object_binary_rating_space_is_normalized() {
    // J = 2, M = 1: every (complete ranking, full ratings) outcome
    // enumerated; the joint pmf must sum to one.
    let params: ClassParams<f64> = ClassParams::new(vec![0.31, 0.64], 9.0);
    let total = total_probability(&params, 2, 1, 2);
    assert!((total - 1.0).abs() < 1e-12, "total = {total}");
}

#[test]
fn sampled_ratings_match_binomial_marginals() {
    let params: ClassParams<f64> = ClassParams::new(vec![0.35], 1.0);
    let m = 4u32;
    let n = 50_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = vec![0u64; (m + 1) as usize];
    for _ in 0..n {
        let rec = sample_judge(0, &[0], 0, &[0], &params, m, &mut rng);
        counts[rec.ratings[&0] as usize] += 1;
    }
    let probs: Vec<f64> = (0..=m)
        .map(|x| {
            let c: f64 = btlb::num::ln_choose(m, x);
            (c + x as f64 * 0.35f64.ln() + (m - x) as f64 * 0.65f64.ln()).exp()
        })
        .collect();
    let p_value = common::chi2_gof_pvalue(&counts, &probs);
    assert!(p_value > 0.001, "chi2 p = {p_value}");
}
