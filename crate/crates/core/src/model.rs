//! The BTL-Binomial distribution: joint log-density of one judge's ranking
//! and ratings, pairwise-choice probabilities, consensus-ranking extraction,
//! and exact sampling.
//!
//! A ranking of length `R` over the assessed set `S` has probability
//!
//! ```text
//! prod_{r=1}^{R} w(pi(r)) / ( sum_{j in S} w(j) - sum_{s<r} w(pi(s)) )
//! ```
//!
//! with worths `w(j) = exp(-theta * p_j)`, i.e. sequential selection without
//! replacement where low `p` (high quality) means high selection weight.
//! Each observed rating is `Binomial(M, p_j)`; missing ratings contribute
//! nothing. The two parts share the object-quality vector `p`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::data::JudgeRecord;
use crate::num::{ln_choose, Real};
use crate::rng::{draw_binomial, draw_uniform_01};

/// One preference ideology: object qualities `p` in `[0,1]^J` (0 best) and
/// consensus scale `theta > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassParams<F> {
    pub p: Vec<F>,
    pub theta: F,
}

impl<F: Real> ClassParams<F> {
    pub fn new(p: Vec<F>, theta: F) -> Self {
        debug_assert!(theta > F::zero(), "theta must be positive");
        debug_assert!(p.iter().all(|&x| x >= F::zero() && x <= F::one()));
        ClassParams { p, theta }
    }

    pub fn n_objects(&self) -> usize {
        self.p.len()
    }
}

/// Objects ordered by ascending quality parameter: the modal ranking.
pub type ConsensusRanking = Vec<usize>;

/// Order the objects by ascending `p`, ties broken by ascending index.
pub fn consensus_ranking<F: Real>(params: &ClassParams<F>) -> ConsensusRanking {
    let mut order: Vec<usize> = (0..params.p.len()).collect();
    order.sort_by(|&a, &b| {
        params.p[a]
            .partial_cmp(&params.p[b])
            .expect("non-comparable quality value")
            .then(a.cmp(&b))
    });
    order
}

/// Reusable per-class evaluation tables: worths (shifted so the largest is
/// 1, which keeps denominators well away from underflow even for huge
/// `theta`), their logs, and the Binomial log-pmf pieces.
pub(crate) struct JudgeEvaluator<F> {
    ln_w: Vec<F>,
    w: Vec<F>,
    ln_p: Vec<F>,
    ln_q: Vec<F>,
    ln_choose: Vec<F>,
    max_rating: u32,
}

impl<F: Real> JudgeEvaluator<F> {
    pub fn new(params: &ClassParams<F>, max_rating: u32) -> Self {
        let n = params.p.len();
        let mut ev = JudgeEvaluator {
            ln_w: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
            ln_p: Vec::with_capacity(n),
            ln_q: Vec::with_capacity(n),
            ln_choose: (0..=max_rating).map(|x| ln_choose(max_rating, x)).collect(),
            max_rating,
        };
        ev.set_params(params);
        ev
    }

    pub fn set_params(&mut self, params: &ClassParams<F>) {
        let shift = params
            .p
            .iter()
            .copied()
            .fold(F::infinity(), F::min)
            .min(F::one());
        self.ln_w.clear();
        self.w.clear();
        self.ln_p.clear();
        self.ln_q.clear();
        for &pj in &params.p {
            let lw = -params.theta * (pj - shift);
            self.ln_w.push(lw);
            self.w.push(lw.exp());
            self.ln_p.push(pj.ln());
            self.ln_q.push((F::one() - pj).ln());
        }
    }

    pub fn log_ranking(&self, ranking: &[usize], assessed: &[usize]) -> F {
        if ranking.is_empty() {
            return F::zero();
        }
        let mut total = F::zero();
        for &j in assessed {
            total += self.w[j];
        }
        // Below this the running difference has lost too many leading digits
        // (or underflowed outright); finish the ranking on the exact path.
        let threshold = total * F::of(1e-3);
        let mut out = F::zero();
        for (stage, &obj) in ranking.iter().enumerate() {
            if total <= threshold {
                return out + self.log_ranking_tail(ranking, assessed, stage);
            }
            assert!(
                total > F::zero(),
                "BTL denominator must stay positive for valid inputs"
            );
            out += self.ln_w[obj] - total.ln();
            total -= self.w[obj];
        }
        out
    }

    /// Exact continuation for the concentrated-worth regime: each remaining
    /// stage normalizes by a log-sum-exp over the objects still unranked,
    /// which neither cancels nor underflows for any `theta`.
    fn log_ranking_tail(&self, ranking: &[usize], assessed: &[usize], stage: usize) -> F {
        let mut remaining: Vec<usize> = assessed
            .iter()
            .copied()
            .filter(|j| !ranking[..stage].contains(j))
            .collect();
        let mut out = F::zero();
        for &obj in &ranking[stage..] {
            let mut max = F::neg_infinity();
            for &j in &remaining {
                if self.ln_w[j] > max {
                    max = self.ln_w[j];
                }
            }
            let mut denom = F::zero();
            for &j in &remaining {
                denom += (self.ln_w[j] - max).exp();
            }
            out += self.ln_w[obj] - max - denom.ln();
            let pos = remaining
                .iter()
                .position(|&j| j == obj)
                .expect("ranked object must be unranked so far");
            remaining.swap_remove(pos);
        }
        out
    }

    pub fn log_ratings<'a>(&self, ratings: impl IntoIterator<Item = (&'a usize, &'a u32)>) -> F {
        let m = self.max_rating;
        let mut out = F::zero();
        for (&j, &x) in ratings {
            debug_assert!(x <= m);
            out += self.ln_choose[x as usize];
            // Guard the 0 * ln(0) corner so degenerate Binomials have
            // probability one rather than NaN.
            if x > 0 {
                out += F::of(x as f64) * self.ln_p[j];
            }
            if x < m {
                out += F::of((m - x) as f64) * self.ln_q[j];
            }
        }
        out
    }

    pub fn log_judge(&self, rec: &JudgeRecord) -> F {
        self.log_ranking(&rec.ranking, &rec.assessed) + self.log_ratings(&rec.ratings)
    }
}

/// Log-probability of drawing `ranking` (most preferred first) from the
/// assessed set under sequential BTL selection; 0 for an empty ranking.
pub fn log_btl_ranking<F: Real>(ranking: &[usize], assessed: &[usize], params: &ClassParams<F>) -> F {
    JudgeEvaluator::new(params, 1).log_ranking(ranking, assessed)
}

/// Sum of `Binomial(M, p_j)` log-pmfs over the observed ratings only.
///
/// `p_j` exactly 0 or 1 yields `-inf` whenever the observation is off the
/// boundary; that is a valid density value, not a failure.
pub fn log_binomial_ratings<F: Real>(
    ratings: &BTreeMap<usize, u32>,
    params: &ClassParams<F>,
    max_rating: u32,
) -> F {
    JudgeEvaluator::new(params, max_rating).log_ratings(ratings)
}

/// Joint BTL-Binomial log-density of one judge's ranking and ratings.
pub fn log_btl_binomial<F: Real>(rec: &JudgeRecord, params: &ClassParams<F>, max_rating: u32) -> F {
    JudgeEvaluator::new(params, max_rating).log_judge(rec)
}

/// Probability that object A precedes object B in a pairwise contest:
/// `1 / (1 + exp(-theta (p_b - p_a)))`.
///
/// Evaluated through the same shifted-worth arithmetic as the sequential
/// ranking density, so it agrees bit-for-bit with the two-object ranking
/// probability.
pub fn pairwise_prob<F: Real>(p_a: F, p_b: F, theta: F) -> F {
    if p_a == p_b {
        return F::of(0.5);
    }
    let shift = p_a.min(p_b);
    let ln_wa = -theta * (p_a - shift);
    let ln_wb = -theta * (p_b - shift);
    let total = ln_wa.exp() + ln_wb.exp();
    (ln_wa - total.ln()).exp()
}

/// Draw one judge's data: a length-`ranking_length` ranking of `assessed` by
/// sequential selection without replacement, and a `Binomial(M, p_j)` rating
/// for every object in `rated`.
pub fn sample_judge<F: Real, R: Rng>(
    judge: usize,
    assessed: &[usize],
    ranking_length: usize,
    rated: &[usize],
    params: &ClassParams<F>,
    max_rating: u32,
    rng: &mut R,
) -> JudgeRecord {
    assert!(ranking_length <= assessed.len());
    debug_assert!(rated.iter().all(|j| assessed.contains(j)));

    let shift = params
        .p
        .iter()
        .copied()
        .fold(F::infinity(), F::min)
        .min(F::one());
    let mut remaining: Vec<(usize, F)> = assessed
        .iter()
        .map(|&j| (j, (-params.theta * (params.p[j] - shift)).exp()))
        .collect();
    let mut ranking = Vec::with_capacity(ranking_length);
    for _ in 0..ranking_length {
        let total: F = remaining.iter().map(|&(_, w)| w).sum();
        let target = draw_uniform_01::<F, _>(rng) * total;
        let mut acc = F::zero();
        let mut chosen = remaining.len() - 1;
        for (idx, &(_, w)) in remaining.iter().enumerate() {
            acc += w;
            if acc >= target {
                chosen = idx;
                break;
            }
        }
        ranking.push(remaining.remove(chosen).0);
    }

    let ratings: BTreeMap<usize, u32> = rated
        .iter()
        .map(|&j| (j, draw_binomial(max_rating, params.p[j].as_f64(), rng)))
        .collect();

    JudgeRecord::new(judge, assessed.to_vec(), ranking, ratings)
}
