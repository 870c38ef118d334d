//! Telescoping Gibbs sampler for the BTL-Binomial mixture of finite
//! mixtures.
//!
//! Each sweep performs, in order:
//!
//! 1. label update `z_i ~ P[Z_i = k | pi, p, theta, data_i]` over all `K`
//!    classes, followed by a stable relabeling that moves the occupied
//!    classes to the front;
//! 2. random-walk Metropolis-Hastings on every occupied class's `p_jk`
//!    coordinates (ascending `j`) and then `theta_k`, repeated `B_mh` times;
//! 3. a direct draw of `K | K+, gamma` from its discrete conditional
//!    `f_K(K) * K!/(K-K+)! * Gamma(gamma K)/Gamma(I + gamma K)` and one
//!    random-walk step on `gamma | z, K`;
//! 4. a prior refresh of the empty classes and a Dirichlet draw of the
//!    weights with parameters `gamma + N_k`.
//!
//! The number of occupied classes `K+` is therefore decoupled from the total
//! `K`, which is what lets the class count vary without reversible-jump
//! moves.

use log::{info, warn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::PreferenceDataset;
use crate::model::{ClassParams, JudgeEvaluator};
use crate::num::{ln_gamma, tiny_floor, Real};
use crate::priors::{
    log_beta_pdf, log_dirichlet_pdf, log_gamma_pdf, log_prior_gamma, log_prior_k,
    sample_class_params_prior, Hyperparams,
};
use crate::rng::{
    categorical_from_log_weights, draw_beta, draw_dirichlet, draw_gamma_shape_rate, draw_normal,
    draw_uniform_01, named_stream,
};
use crate::samples::{PosteriorSamples, SampleRecord};
use crate::{Error, Result};

/// Algorithmic parameters of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig<F> {
    /// Outer Gibbs sweeps.
    pub b_gibbs: usize,
    /// Metropolis-Hastings sweeps per class per Gibbs sweep.
    pub b_mh: usize,
    /// Initial number of classes (ignored by the fixed-K sampler).
    pub k_start: usize,
    /// Random-walk proposal variances.
    pub sigma2_p: F,
    pub sigma2_theta: F,
    pub sigma2_gamma: F,
    pub seed: u64,
    /// Sweeps discarded from the front of the chain.
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in sweep.
    pub thin: usize,
    pub init: Initialization<F>,
}

impl<F: Real> ChainConfig<F> {
    /// Defaults: half the chain as burn-in, no thinning, one MH sweep, and
    /// proposal variances that mix well on rating scales up to a few dozen.
    pub fn new(b_gibbs: usize, seed: u64) -> Self {
        ChainConfig {
            b_gibbs,
            b_mh: 1,
            k_start: 1,
            sigma2_p: F::of(0.05),
            sigma2_theta: F::of(3.0),
            sigma2_gamma: F::of(0.5),
            seed,
            burn_in: b_gibbs / 2,
            thin: 1,
            init: Initialization::Prior,
        }
    }

    pub fn validate(&self, n_judges: usize) -> Result<()> {
        if self.b_gibbs < 1 {
            return Err(Error::InvalidConfig("b_gibbs must be >= 1".into()));
        }
        if self.k_start < 1 || self.k_start > n_judges {
            return Err(Error::InvalidConfig(format!(
                "k_start must lie in [1, I] = [1, {n_judges}], got {}",
                self.k_start
            )));
        }
        if self.b_mh < 1 {
            return Err(Error::InvalidConfig("b_mh must be >= 1".into()));
        }
        if self.thin < 1 {
            return Err(Error::InvalidConfig("thin must be >= 1".into()));
        }
        if self.burn_in >= self.b_gibbs {
            return Err(Error::InvalidConfig(format!(
                "burn_in = {} leaves no retained sweeps out of {}",
                self.burn_in, self.b_gibbs
            )));
        }
        for (name, v) in [
            ("sigma2_p", self.sigma2_p),
            ("sigma2_theta", self.sigma2_theta),
            ("sigma2_gamma", self.sigma2_gamma),
        ] {
            if !(v > F::zero()) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be strictly positive"
                )));
            }
        }
        Ok(())
    }
}

/// How the chain state is initialized.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Initialization<F> {
    /// Draw `gamma`, the weights, and all class parameters from their
    /// priors; labels start uniform.
    #[default]
    Prior,
    /// Warm start, e.g. from a MAP fit.
    Given {
        gamma: F,
        weights: Vec<F>,
        classes: Vec<ClassParams<F>>,
        labels: Option<Vec<usize>>,
    },
}

/// Full sampler state at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState<F> {
    /// Total number of classes, occupied or not.
    pub k: usize,
    /// Number of occupied classes; after relabeling these are classes
    /// `0..kplus`.
    pub kplus: usize,
    pub gamma: F,
    /// Mixture weights over all `k` classes.
    pub weights: Vec<F>,
    /// Class label per judge.
    pub z: Vec<usize>,
    pub classes: Vec<ClassParams<F>>,
    /// Occupancy `N_k` per class.
    pub counts: Vec<usize>,
}

impl<F: Real> MixtureState<F> {
    pub fn n_judges(&self) -> usize {
        self.z.len()
    }

    pub(crate) fn recount(&mut self) {
        self.counts.clear();
        self.counts.resize(self.k, 0);
        for &zi in &self.z {
            self.counts[zi] += 1;
        }
        self.kplus = self.counts.iter().filter(|&&n| n > 0).count();
    }

    /// Judge indices per class.
    pub(crate) fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &zi) in self.z.iter().enumerate() {
            out[zi].push(i);
        }
        out
    }

    /// Verify every structural invariant, returning a description of the
    /// first failure.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        self.check_invariants_with(true)
    }

    /// Invariant check with the occupied-first ordering optional; the
    /// fixed-K sampler never relabels, so its states satisfy everything but
    /// that ordering.
    pub fn check_invariants_with(
        &self,
        occupied_first: bool,
    ) -> std::result::Result<(), String> {
        if self.weights.len() != self.k
            || self.classes.len() != self.k
            || self.counts.len() != self.k
        {
            return Err(format!(
                "state vectors disagree with K = {}: |weights| = {}, |classes| = {}, |counts| = {}",
                self.k,
                self.weights.len(),
                self.classes.len(),
                self.counts.len()
            ));
        }
        let tol = F::of(1e-12).max(F::epsilon() * F::of(16.0));
        let sum: F = self.weights.iter().copied().sum();
        if (sum - F::one()).abs() > tol {
            return Err(format!("weights sum to {sum}"));
        }
        let mut counts = vec![0usize; self.k];
        for &zi in &self.z {
            if zi >= self.k {
                return Err(format!("label {zi} out of range for K = {}", self.k));
            }
            counts[zi] += 1;
        }
        if counts != self.counts {
            return Err("stored counts do not match labels".into());
        }
        let occupied = counts.iter().filter(|&&n| n > 0).count();
        if occupied != self.kplus {
            return Err(format!(
                "kplus = {} but {} classes are occupied",
                self.kplus, occupied
            ));
        }
        if occupied_first {
            for (k, &n) in counts.iter().enumerate() {
                if (k < self.kplus) != (n > 0) {
                    return Err(format!(
                        "class {k} breaks the occupied-first ordering (N = {n}, K+ = {})",
                        self.kplus
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Metropolis-Hastings acceptance tallies for the three proposal blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AcceptanceRates {
    pub p_accepted: u64,
    pub p_proposed: u64,
    pub theta_accepted: u64,
    pub theta_proposed: u64,
    pub gamma_accepted: u64,
    pub gamma_proposed: u64,
}

impl AcceptanceRates {
    fn rate(acc: u64, prop: u64) -> Option<f64> {
        (prop > 0).then(|| acc as f64 / prop as f64)
    }

    pub fn p_rate(&self) -> Option<f64> {
        Self::rate(self.p_accepted, self.p_proposed)
    }

    pub fn theta_rate(&self) -> Option<f64> {
        Self::rate(self.theta_accepted, self.theta_proposed)
    }

    pub fn gamma_rate(&self) -> Option<f64> {
        Self::rate(self.gamma_accepted, self.gamma_proposed)
    }

    pub(crate) fn warn_if_extreme(&self) {
        for (name, rate) in [
            ("p", self.p_rate()),
            ("theta", self.theta_rate()),
            ("gamma", self.gamma_rate()),
        ] {
            if let Some(r) = rate {
                if !(0.1..=0.6).contains(&r) {
                    warn!(
                        "{name} acceptance rate {r:.3} outside [0.1, 0.6]; \
                         consider retuning the proposal variance"
                    );
                }
            }
        }
    }
}

/// `I x K` row-major matrix of per-judge, per-class BTL-Binomial
/// log-likelihoods.
pub fn loglik_matrix<F: Real>(data: &PreferenceDataset, classes: &[ClassParams<F>]) -> Vec<F> {
    let n = data.n_judges();
    let k = classes.len();
    let mut out = vec![F::neg_infinity(); n * k];
    for (c, class) in classes.iter().enumerate() {
        let ev = JudgeEvaluator::new(class, data.max_rating);
        for (i, rec) in data.judges.iter().enumerate() {
            out[i * k + c] = ev.log_judge(rec);
        }
    }
    out
}

/// Unnormalized label log-posterior `ln pi_k + ln P[data_i | class k]` for
/// one judge. Both the Gibbs label draw and the EM responsibilities are
/// computed from this same row.
pub(crate) fn label_log_weights<F: Real>(ll_row: &[F], weights: &[F], out: &mut Vec<F>) {
    out.clear();
    out.extend(
        ll_row
            .iter()
            .zip(weights)
            .map(|(&ll, &w)| ll + w.ln()),
    );
}

/// Draw new labels for every judge and refresh the occupancy counts, without
/// relabeling.
pub(crate) fn draw_labels<F: Real, R: Rng>(
    state: &mut MixtureState<F>,
    data: &PreferenceDataset,
    rng: &mut R,
) -> Result<()> {
    let k = state.k;
    let ll = loglik_matrix(data, &state.classes);
    let mut logw = Vec::with_capacity(k);
    for i in 0..data.n_judges() {
        label_log_weights(&ll[i * k..(i + 1) * k], &state.weights, &mut logw);
        state.z[i] =
            categorical_from_log_weights(&logw, rng).ok_or(Error::JudgeInconsistent(i))?;
    }
    state.recount();
    Ok(())
}

/// Stable relabeling: occupied classes move to the front preserving their
/// relative order; labels, weights, and counts are permuted consistently.
pub(crate) fn relabel_occupied_first<F: Real>(state: &mut MixtureState<F>) {
    let k = state.k;
    let mut order: Vec<usize> = Vec::with_capacity(k);
    order.extend((0..k).filter(|&c| state.counts[c] > 0));
    order.extend((0..k).filter(|&c| state.counts[c] == 0));
    let mut new_index = vec![0usize; k];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let reorder_f = |v: &[F]| order.iter().map(|&c| v[c]).collect::<Vec<F>>();
    state.weights = reorder_f(&state.weights);
    state.counts = order.iter().map(|&c| state.counts[c]).collect();
    let mut classes = Vec::with_capacity(k);
    for &c in &order {
        classes.push(state.classes[c].clone());
    }
    state.classes = classes;
    for zi in &mut state.z {
        *zi = new_index[*zi];
    }
}

/// Step 2(a): redraw labels, recount, and move occupied classes to the front.
pub fn update_labels<F: Real, R: Rng>(
    state: &mut MixtureState<F>,
    data: &PreferenceDataset,
    rng: &mut R,
) -> Result<()> {
    draw_labels(state, data, rng)?;
    relabel_occupied_first(state);
    Ok(())
}

/// Step 2(b): random-walk Metropolis-Hastings on the class parameters.
///
/// For each updated class, `b_mh` sweeps propose every `p_jk` in ascending
/// `j` and then `theta_k`. Proposals outside `(0, 1)` (for `p`) or at or
/// below zero (for `theta`) are rejected outright. The MFM sampler updates
/// only the occupied classes; the fixed-K sampler passes
/// `occupied_only = false` so empty classes keep moving under their prior.
#[allow(clippy::too_many_arguments)]
pub fn update_class_params<F: Real, R: Rng>(
    state: &mut MixtureState<F>,
    data: &PreferenceDataset,
    hyper: &Hyperparams<F>,
    config: &ChainConfig<F>,
    rng_p: &mut R,
    rng_theta: &mut R,
    occupied_only: bool,
    rates: &mut AcceptanceRates,
) {
    let members = state.members();
    let sd_p = config.sigma2_p.sqrt();
    let sd_theta = config.sigma2_theta.sqrt();
    let n_update = if occupied_only { state.kplus } else { state.k };
    let n_objects = data.n_objects;

    for c in 0..n_update {
        let mine = &members[c];
        let mut ev = JudgeEvaluator::new(&state.classes[c], data.max_rating);
        let mut curr_ll: F = mine.iter().map(|&i| ev.log_judge(&data.judges[i])).sum();

        for _ in 0..config.b_mh {
            for j in 0..n_objects {
                rates.p_proposed += 1;
                let old = state.classes[c].p[j];
                let proposal = draw_normal(old, sd_p, rng_p);
                if proposal <= F::zero() || proposal >= F::one() {
                    continue;
                }
                let prior_delta = log_beta_pdf(proposal, hyper.a, hyper.b)
                    - log_beta_pdf(old, hyper.a, hyper.b);
                state.classes[c].p[j] = proposal;
                ev.set_params(&state.classes[c]);
                let prop_ll: F = mine.iter().map(|&i| ev.log_judge(&data.judges[i])).sum();
                let delta = prior_delta + prop_ll - curr_ll;
                if accept(delta, rng_p) {
                    rates.p_accepted += 1;
                    curr_ll = prop_ll;
                } else {
                    state.classes[c].p[j] = old;
                    ev.set_params(&state.classes[c]);
                }
            }

            rates.theta_proposed += 1;
            let old = state.classes[c].theta;
            let proposal = draw_normal(old, sd_theta, rng_theta);
            if proposal > F::zero() {
                let prior_delta = log_gamma_pdf(proposal, hyper.gamma1, hyper.gamma2)
                    - log_gamma_pdf(old, hyper.gamma1, hyper.gamma2);
                state.classes[c].theta = proposal;
                ev.set_params(&state.classes[c]);
                let prop_ll: F = mine.iter().map(|&i| ev.log_judge(&data.judges[i])).sum();
                let delta = prior_delta + prop_ll - curr_ll;
                if accept(delta, rng_theta) {
                    rates.theta_accepted += 1;
                    curr_ll = prop_ll;
                } else {
                    state.classes[c].theta = old;
                    ev.set_params(&state.classes[c]);
                }
            }
        }
    }
}

fn accept<F: Real, R: Rng>(log_ratio: F, rng: &mut R) -> bool {
    if log_ratio >= F::zero() {
        return true;
    }
    if log_ratio == F::neg_infinity() || log_ratio.is_nan() {
        return false;
    }
    draw_uniform_01::<F, _>(rng).ln() < log_ratio
}

/// Log of the unnormalized conditional `P[K | K+, gamma]` at a given `K`.
fn log_k_conditional<F: Real>(
    k: usize,
    kplus: usize,
    gamma: F,
    n_judges: usize,
    lambda: F,
) -> F {
    let kf = F::of_usize(k);
    log_prior_k(k, lambda) + ln_gamma(kf + F::one()) - ln_gamma(F::of_usize(k - kplus) + F::one())
        + ln_gamma(gamma * kf)
        - ln_gamma(F::of_usize(n_judges) + gamma * kf)
}

/// Step 2(c)(i): draw `K` directly from its conditional on
/// `{K+, K+ + 1, ...}`.
///
/// The support is truncated adaptively where the log unnormalized mass has
/// fallen 27 nats below the running maximum (relative tail mass below
/// 1e-12), and never before `K+ + 200`.
pub fn update_k<F: Real, R: Rng>(state: &mut MixtureState<F>, hyper: &Hyperparams<F>, rng: &mut R) {
    let kplus = state.kplus;
    let n = state.n_judges();
    let mut logw: Vec<F> = Vec::with_capacity(256);
    let mut best = F::neg_infinity();
    let cutoff = F::of(27.0);
    let mut k = kplus;
    loop {
        let lw = log_k_conditional(k, kplus, state.gamma, n, hyper.lambda);
        if lw > best {
            best = lw;
        }
        logw.push(lw);
        if k - kplus >= 200 && lw < best - cutoff {
            break;
        }
        k += 1;
    }
    let idx = categorical_from_log_weights(&logw, rng)
        .expect("K conditional has positive mass at K = K+");
    state.k = kplus + idx;
}

/// Log of the unnormalized conditional `P[gamma | z, K]`. Empty classes
/// contribute `ln Gamma(gamma) - ln Gamma(gamma) = 0`, so summing over the
/// occupied classes serves both samplers.
pub(crate) fn log_gamma_conditional<F: Real>(
    gamma: F,
    k: usize,
    counts: &[usize],
    n_judges: usize,
    hyper: &Hyperparams<F>,
) -> F {
    if gamma <= F::zero() {
        return F::neg_infinity();
    }
    let kf = F::of_usize(k);
    let mut lp = log_prior_gamma(gamma, hyper.xi1, hyper.xi2) + ln_gamma(gamma * kf)
        - ln_gamma(F::of_usize(n_judges) + gamma * kf);
    for &n in counts.iter().filter(|&&n| n > 0) {
        lp += ln_gamma(F::of_usize(n) + gamma) - ln_gamma(gamma);
    }
    lp
}

/// Step 2(c)(ii): one random-walk Metropolis-Hastings step on `gamma`.
pub fn update_gamma<F: Real, R: Rng>(
    state: &mut MixtureState<F>,
    hyper: &Hyperparams<F>,
    config: &ChainConfig<F>,
    rng: &mut R,
    rates: &mut AcceptanceRates,
) {
    rates.gamma_proposed += 1;
    let sd = config.sigma2_gamma.sqrt();
    let proposal = draw_normal(state.gamma, sd, rng);
    if proposal <= F::zero() {
        return;
    }
    let n = state.n_judges();
    let delta = log_gamma_conditional(proposal, state.k, &state.counts, n, hyper)
        - log_gamma_conditional(state.gamma, state.k, &state.counts, n, hyper);
    if accept(delta, rng) {
        rates.gamma_accepted += 1;
        state.gamma = proposal;
    }
}

/// Redraw the weights from `Dirichlet(gamma + N_1, ..., gamma + N_K)`.
pub(crate) fn draw_weights<F: Real, R: Rng>(state: &mut MixtureState<F>, rng: &mut R) {
    let alphas: Vec<F> = state
        .counts
        .iter()
        .map(|&n| state.gamma + F::of_usize(n))
        .collect();
    state.weights = draw_dirichlet(&alphas, rng);
    // Keep the weights bounded away from zero so log densities of the state
    // stay finite; the floor is far below statistical resolution.
    let floor = tiny_floor::<F>();
    if state.weights.iter().any(|&w| w < floor) {
        for w in &mut state.weights {
            *w = w.max(floor);
        }
        let total: F = state.weights.iter().copied().sum();
        for w in &mut state.weights {
            *w /= total;
        }
    }
}

/// Step 2(d): refresh the empty classes from the prior and redraw the
/// weights from `Dirichlet(gamma + N_1, ..., gamma + N_K)`.
pub fn augment_and_update_weights<F: Real, R: Rng>(
    state: &mut MixtureState<F>,
    hyper: &Hyperparams<F>,
    n_objects: usize,
    rng_augment: &mut R,
    rng_weights: &mut R,
) -> Result<()> {
    debug_assert!(state.k >= state.kplus);
    state.classes.truncate(state.kplus);
    for _ in state.kplus..state.k {
        state
            .classes
            .push(sample_class_params_prior(hyper, n_objects, rng_augment)?);
    }
    state.counts.resize(state.k, 0);
    draw_weights(state, rng_weights);
    Ok(())
}

/// Log joint density of the state and data under the full generative model;
/// the `K` prior term is skipped for the fixed-K model.
pub fn log_joint<F: Real>(
    state: &MixtureState<F>,
    data: &PreferenceDataset,
    hyper: &Hyperparams<F>,
    include_k_prior: bool,
) -> F {
    let mut lp = if include_k_prior {
        log_prior_k(state.k, hyper.lambda)
    } else {
        F::zero()
    };
    lp += log_prior_gamma(state.gamma, hyper.xi1, hyper.xi2);
    lp += log_dirichlet_pdf(&state.weights, state.gamma);
    for class in &state.classes {
        for &pj in &class.p {
            lp += log_beta_pdf(pj, hyper.a, hyper.b);
        }
        lp += log_gamma_pdf(class.theta, hyper.gamma1, hyper.gamma2);
    }
    for (c, mine) in state.members().into_iter().enumerate() {
        if mine.is_empty() {
            continue;
        }
        let ev = JudgeEvaluator::new(&state.classes[c], data.max_rating);
        let lw = state.weights[c].ln();
        for i in mine {
            lp += lw + ev.log_judge(&data.judges[i]);
        }
    }
    lp
}

pub(crate) struct ChainStreams {
    pub labels: ChaCha8Rng,
    pub mh_p: ChaCha8Rng,
    pub mh_theta: ChaCha8Rng,
    pub gamma: ChaCha8Rng,
    pub k: ChaCha8Rng,
    pub weights: ChaCha8Rng,
    pub augment: ChaCha8Rng,
    pub init: ChaCha8Rng,
}

impl ChainStreams {
    pub fn new(seed: u64) -> Self {
        ChainStreams {
            labels: named_stream(seed, "labels"),
            mh_p: named_stream(seed, "mh-p"),
            mh_theta: named_stream(seed, "mh-theta"),
            gamma: named_stream(seed, "gamma"),
            k: named_stream(seed, "k"),
            weights: named_stream(seed, "weights"),
            augment: named_stream(seed, "augment"),
            init: named_stream(seed, "init"),
        }
    }
}

/// Prior draw of class parameters with a usable fallback when the `theta`
/// prior is improper: `p ~ Beta(a, b)` as usual and `theta` uniform on a
/// wide consensus band.
pub(crate) fn sample_class_params_init<F: Real, R: Rng>(
    hyper: &Hyperparams<F>,
    n_objects: usize,
    rng: &mut R,
) -> ClassParams<F> {
    if hyper.gamma2 > F::zero() {
        if let Ok(params) = sample_class_params_prior(hyper, n_objects, rng) {
            return params;
        }
    }
    let p: Vec<F> = (0..n_objects)
        .map(|_| draw_beta(hyper.a, hyper.b, rng))
        .collect();
    let theta = F::one() + draw_uniform_01::<F, _>(rng) * F::of(34.0);
    ClassParams::new(p, theta)
}

pub(crate) fn init_state<F: Real, R: Rng>(
    data: &PreferenceDataset,
    hyper: &Hyperparams<F>,
    config: &ChainConfig<F>,
    k_init: usize,
    rng: &mut R,
) -> Result<MixtureState<F>> {
    let n = data.n_judges();
    let mut state = match &config.init {
        Initialization::Prior => {
            let gamma = if hyper.xi2 > F::zero() {
                draw_gamma_shape_rate(hyper.xi1, hyper.xi2, rng).max(tiny_floor())
            } else {
                F::one()
            };
            let classes: Vec<ClassParams<F>> = (0..k_init)
                .map(|_| sample_class_params_init(hyper, data.n_objects, rng))
                .collect();
            let weights = draw_dirichlet(&vec![gamma; k_init], rng);
            let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..k_init)).collect();
            MixtureState {
                k: k_init,
                kplus: 0,
                gamma,
                weights,
                z,
                classes,
                counts: vec![0; k_init],
            }
        }
        Initialization::Given {
            gamma,
            weights,
            classes,
            labels,
        } => {
            let k = classes.len();
            if weights.len() != k || k == 0 {
                return Err(Error::InvalidConfig(
                    "warm start weights and classes disagree".into(),
                ));
            }
            let z = match labels {
                Some(z) => {
                    if z.len() != n || z.iter().any(|&zi| zi >= k) {
                        return Err(Error::InvalidConfig("warm start labels invalid".into()));
                    }
                    z.clone()
                }
                None => (0..n).map(|_| rng.random_range(0..k)).collect(),
            };
            MixtureState {
                k,
                kplus: 0,
                gamma: *gamma,
                weights: weights.clone(),
                z,
                classes: classes.clone(),
                counts: vec![0; k],
            }
        }
    };
    state.recount();
    relabel_occupied_first(&mut state);
    Ok(state)
}

/// Run the telescoping sampler and return the retained draws.
///
/// Fully deterministic given the seed: all randomness flows through named
/// sub-streams of `config.seed`.
pub fn run_mfm<F: Real>(
    data: &PreferenceDataset,
    hyper: &Hyperparams<F>,
    config: &ChainConfig<F>,
) -> Result<PosteriorSamples<F>> {
    hyper.validate()?;
    config.validate(data.n_judges())?;
    let violations = crate::data::validate(data);
    if !violations.is_empty() {
        return Err(Error::Invalid(
            violations.iter().map(|v| v.to_string()).collect(),
        ));
    }

    let mut streams = ChainStreams::new(config.seed);
    let mut state = init_state(data, hyper, config, config.k_start, &mut streams.init)?;
    let mut rates = AcceptanceRates::default();
    let mut records = Vec::new();
    let progress_every = (config.b_gibbs / 10).max(1);

    for sweep in 1..=config.b_gibbs {
        update_labels(&mut state, data, &mut streams.labels)?;
        update_class_params(
            &mut state,
            data,
            hyper,
            config,
            &mut streams.mh_p,
            &mut streams.mh_theta,
            true,
            &mut rates,
        );
        update_k(&mut state, hyper, &mut streams.k);
        update_gamma(&mut state, hyper, config, &mut streams.gamma, &mut rates);
        augment_and_update_weights(
            &mut state,
            hyper,
            data.n_objects,
            &mut streams.augment,
            &mut streams.weights,
        )?;

        if let Err(msg) = state.check_invariants() {
            panic!("sampler invariant violated after sweep {sweep}: {msg}");
        }

        if sweep > config.burn_in && (sweep - config.burn_in) % config.thin == 0 {
            let log_post = log_joint(&state, data, hyper, true);
            assert!(
                log_post.is_finite(),
                "log joint density not finite at sweep {sweep}"
            );
            records.push(SampleRecord {
                iter: sweep,
                k: state.k,
                kplus: state.kplus,
                gamma: state.gamma,
                log_post,
                weights: state.weights.clone(),
                labels: state.z.clone(),
                classes: state.classes.clone(),
            });
        }
        if sweep % progress_every == 0 {
            info!(
                "sweep {sweep}/{}: K = {}, K+ = {}, gamma = {:.3}",
                config.b_gibbs, state.k, state.kplus, state.gamma
            );
        }
    }

    rates.warn_if_extreme();
    Ok(PosteriorSamples {
        n_judges: data.n_judges(),
        n_objects: data.n_objects,
        max_rating: data.max_rating,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::JudgeRecord;
    use std::collections::BTreeMap;

    fn two_class_state(weights: [f64; 2], params: [ClassParams<f64>; 2]) -> MixtureState<f64> {
        let [c0, c1] = params;
        let mut state = MixtureState {
            k: 2,
            kplus: 0,
            gamma: 1.0,
            weights: weights.to_vec(),
            z: vec![0, 1, 0],
            classes: vec![c0, c1],
            counts: vec![0; 2],
        };
        state.recount();
        state
    }

    fn tiny_dataset() -> PreferenceDataset {
        let judges = vec![
            JudgeRecord::new(0, vec![0, 1], vec![0], BTreeMap::from([(0, 0), (1, 3)])),
            JudgeRecord::new(1, vec![0, 1], vec![1], BTreeMap::from([(0, 4), (1, 1)])),
            JudgeRecord::new(2, vec![0, 1], vec![0], BTreeMap::from([(1, 2)])),
        ];
        PreferenceDataset::from_records(2, 4, judges)
    }

    fn hyper() -> Hyperparams<f64> {
        Hyperparams {
            lambda: 1.0,
            xi1: 2.0,
            xi2: 3.0,
            a: 2.0,
            b: 2.0,
            gamma1: 2.0,
            gamma2: 0.5,
        }
    }

    #[test]
    fn single_class_label_update_is_identity() {
        let data = tiny_dataset();
        let mut state = MixtureState {
            k: 1,
            kplus: 0,
            gamma: 1.0,
            weights: vec![1.0],
            z: vec![0; 3],
            classes: vec![ClassParams::new(vec![0.3, 0.7], 5.0)],
            counts: vec![0],
        };
        state.recount();
        let mut rng = named_stream(0, "t");
        update_labels(&mut state, &data, &mut rng).unwrap();
        assert_eq!(state.z, vec![0, 0, 0]);
        assert_eq!(state.kplus, 1);
        assert!(state.check_invariants().is_ok());
    }

    #[test]
    fn identical_classes_give_uniform_labels() {
        let data = tiny_dataset();
        let params = ClassParams::new(vec![0.3, 0.7], 5.0);
        let mut state = two_class_state([0.5, 0.5], [params.clone(), params]);
        let mut rng = named_stream(1, "t");
        let trials = 4000;
        let mut first_class = 0usize;
        for _ in 0..trials {
            draw_labels(&mut state, &data, &mut rng).unwrap();
            first_class += (state.z[0] == 0) as usize;
        }
        let frac = first_class as f64 / trials as f64;
        let se = 0.5 / (trials as f64).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * se, "frac = {frac}");
    }

    #[test]
    fn label_posterior_matches_direct_formula() {
        let data = tiny_dataset();
        let classes: [ClassParams<f64>; 2] = [
            ClassParams::new(vec![0.2, 0.8], 10.0),
            ClassParams::new(vec![0.7, 0.1], 4.0),
        ];
        let weights = [0.3f64, 0.7];
        let ll = loglik_matrix(&data, &classes);
        let mut logw = Vec::new();
        for i in 0..3 {
            label_log_weights(&ll[i * 2..i * 2 + 2], &weights, &mut logw);
            let direct: Vec<f64> = (0..2)
                .map(|k| {
                    weights[k]
                        * crate::model::log_btl_binomial(&data.judges[i], &classes[k], 4).exp()
                })
                .collect();
            let direct_norm = direct[0] + direct[1];
            let ours_norm: f64 = logw.iter().map(|w| w.exp()).sum();
            for k in 0..2 {
                let ours = logw[k].exp() / ours_norm;
                let want = direct[k] / direct_norm;
                assert!((ours - want).abs() < 1e-12, "judge {i} class {k}");
            }
        }
    }

    #[test]
    fn relabel_moves_occupied_classes_to_front() {
        let c0 = ClassParams::new(vec![0.1, 0.2], 1.0);
        let c1 = ClassParams::new(vec![0.3, 0.4], 2.0);
        let c2 = ClassParams::new(vec![0.5, 0.6], 3.0);
        let mut state = MixtureState {
            k: 3,
            kplus: 0,
            gamma: 1.0,
            weights: vec![0.2, 0.3, 0.5],
            z: vec![1, 1, 2],
            classes: vec![c0.clone(), c1.clone(), c2.clone()],
            counts: vec![0; 3],
        };
        state.recount();
        relabel_occupied_first(&mut state);
        assert_eq!(state.kplus, 2);
        assert_eq!(state.z, vec![0, 0, 1]);
        assert_eq!(state.counts, vec![2, 1, 0]);
        assert_eq!(state.classes, vec![c1, c2, c0]);
        assert_eq!(state.weights, vec![0.3, 0.5, 0.2]);
        assert!(state.check_invariants().is_ok());
    }

    #[test]
    fn out_of_support_proposals_are_always_rejected() {
        // sigma so large that essentially every proposal leaves (0, 1); the
        // parameters must never move outside the support.
        let data = tiny_dataset();
        let mut state = MixtureState {
            k: 1,
            kplus: 0,
            gamma: 1.0,
            weights: vec![1.0],
            z: vec![0; 3],
            classes: vec![ClassParams::new(vec![0.5, 0.5], 10.0)],
            counts: vec![0],
        };
        state.recount();
        let config = ChainConfig {
            sigma2_p: 1e6,
            sigma2_theta: 1e8,
            ..ChainConfig::new(10, 0)
        };
        let mut rates = AcceptanceRates::default();
        let mut rng_p = named_stream(2, "p");
        let mut rng_t = named_stream(2, "t");
        for _ in 0..200 {
            update_class_params(
                &mut state,
                &data,
                &hyper(),
                &config,
                &mut rng_p,
                &mut rng_t,
                true,
                &mut rates,
            );
            let c = &state.classes[0];
            assert!(c.p.iter().all(|&p| p > 0.0 && p < 1.0));
            assert!(c.theta > 0.0);
        }
    }

    #[test]
    fn k_update_respects_support_and_prior_forcing() {
        let mut state = two_class_state(
            [0.5, 0.5],
            [
                ClassParams::new(vec![0.5], 1.0),
                ClassParams::new(vec![0.5], 1.0),
            ],
        );
        // All three judges occupied across two classes: kplus = 2.
        let mut rng = named_stream(3, "k");
        let mut h = hyper();
        for _ in 0..3000 {
            update_k(&mut state, &h, &mut rng);
            assert!(state.k >= state.kplus);
            state.k = 2;
        }
        // lambda -> 0 forces K = K+.
        h.lambda = 1e-12;
        for _ in 0..300 {
            update_k(&mut state, &h, &mut rng);
            assert_eq!(state.k, state.kplus);
            state.k = 2;
        }
    }

    #[test]
    fn k_conditional_matches_direct_normalization() {
        // Total variation between the sampler's weights and an independent
        // normalization over a large support.
        let kplus = 2usize;
        let n_judges = 17usize;
        let gamma = 1.0f64;
        let lambda = 1.0f64;
        let support = 2000usize;
        let direct: Vec<f64> = (0..support)
            .map(|d| log_k_conditional(kplus + d, kplus, gamma, n_judges, lambda))
            .collect();
        let max = direct.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = direct.iter().map(|lw| (lw - max).exp()).sum();

        // Reproduce the truncation rule used by update_k.
        let mut logw = Vec::new();
        let mut best = f64::NEG_INFINITY;
        let mut k = kplus;
        loop {
            let lw = log_k_conditional(k, kplus, gamma, n_judges, lambda);
            best = best.max(lw);
            logw.push(lw);
            if k - kplus >= 200 && lw < best - 27.0 {
                break;
            }
            k += 1;
        }
        let trunc_total: f64 = logw.iter().map(|lw| (lw - max).exp()).sum();
        let mut tv = 0.0f64;
        for (d, &lw) in direct.iter().enumerate() {
            let p_direct = (lw - max).exp() / total;
            let p_trunc = logw
                .get(d)
                .map(|&l| (l - max).exp() / trunc_total)
                .unwrap_or(0.0);
            tv += (p_direct - p_trunc).abs();
        }
        assert!(tv / 2.0 < 1e-9, "TV = {}", tv / 2.0);
    }

    #[test]
    fn gamma_conditional_matches_hand_formula() {
        let h = hyper();
        let counts = [3usize, 2, 0, 1];
        let (k, n) = (4usize, 6usize);
        let gamma = 0.8f64;
        let got = log_gamma_conditional(gamma, k, &counts, n, &h);
        let lg = |x: f64| statrs::function::gamma::ln_gamma(x);
        let want = crate::priors::log_prior_gamma(gamma, h.xi1, h.xi2)
            + lg(gamma * 4.0)
            - lg(6.0 + gamma * 4.0)
            + (lg(3.0 + gamma) - lg(gamma))
            + (lg(2.0 + gamma) - lg(gamma))
            + (lg(1.0 + gamma) - lg(gamma));
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn augmentation_refreshes_empty_classes_and_weights() {
        let mut state = two_class_state(
            [0.5, 0.5],
            [
                ClassParams::new(vec![0.5, 0.5], 1.0),
                ClassParams::new(vec![0.5, 0.5], 1.0),
            ],
        );
        state.k = 5;
        let mut rng_a = named_stream(4, "aug");
        let mut rng_w = named_stream(4, "w");
        augment_and_update_weights(&mut state, &hyper(), 2, &mut rng_a, &mut rng_w).unwrap();
        assert_eq!(state.classes.len(), 5);
        assert_eq!(state.weights.len(), 5);
        assert!((state.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(state.check_invariants().is_ok());

        // Improper theta prior cannot augment.
        let mut h = hyper();
        h.gamma2 = 0.0;
        state.k = 6;
        let err =
            augment_and_update_weights(&mut state, &h, 2, &mut rng_a, &mut rng_w).unwrap_err();
        assert!(matches!(err, Error::ImproperPrior));
    }

    #[test]
    fn dirichlet_weight_means_match_theory() {
        let mut state = two_class_state(
            [0.5, 0.5],
            [
                ClassParams::new(vec![0.5], 1.0),
                ClassParams::new(vec![0.5], 1.0),
            ],
        );
        state.gamma = 1.5;
        let mut rng_a = named_stream(5, "aug");
        let mut rng_w = named_stream(5, "w");
        let reps = 10_000;
        let mut mean = [0.0f64; 2];
        for _ in 0..reps {
            augment_and_update_weights(&mut state, &hyper(), 1, &mut rng_a, &mut rng_w).unwrap();
            mean[0] += state.weights[0];
            mean[1] += state.weights[1];
        }
        // alpha = (gamma + 2, gamma + 1), total = 2 gamma + 3.
        let total = 2.0 * state.gamma + 3.0;
        for (k, &n) in state.counts.iter().enumerate() {
            let want = (state.gamma + n as f64) / total;
            let got = mean[k] / reps as f64;
            let var = want * (1.0 - want) / (total + 1.0);
            let se = (var / reps as f64).sqrt();
            assert!((got - want).abs() < 3.0 * se, "class {k}: {got} vs {want}");
        }
    }

    #[test]
    fn run_mfm_is_deterministic_given_seed() {
        let data = tiny_dataset();
        let config = ChainConfig {
            b_gibbs: 40,
            burn_in: 20,
            k_start: 2,
            b_mh: 2,
            ..ChainConfig::new(40, 123)
        };
        let a = run_mfm(&data, &hyper(), &config).unwrap();
        let b = run_mfm(&data, &hyper(), &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(a.records.iter().all(|r| r.log_post.is_finite()));
    }
}
