//! Estimation under a fixed number of classes: a Gibbs sampler sharing the
//! mixture machinery (minus the `K` moves), and a Bayesian EM algorithm for
//! MAP estimation with a maximum-likelihood mode under flat priors.

use log::warn;
use rayon::prelude::*;

use crate::data::PreferenceDataset;
use crate::mfm::{
    draw_labels, label_log_weights, log_joint, loglik_matrix, update_class_params, update_gamma,
    AcceptanceRates, ChainConfig, ChainStreams, Initialization,
};
use crate::model::{ClassParams, JudgeEvaluator};
use crate::num::{golden_section_max, ln_gamma, log_sum_exp, Real};
use crate::priors::{
    log_beta_pdf, log_dirichlet_pdf, log_gamma_pdf, log_prior_gamma, Hyperparams,
};
use crate::rng::{draw_dirichlet, indexed_stream};
use crate::samples::{PosteriorSamples, SampleRecord};
use crate::{Error, Result};

/// Gibbs sampler for the latent class mixture with `K` fixed.
///
/// Identical to the telescoping sampler with `K` frozen: label draws (no
/// relabeling), Metropolis-Hastings over all `K` classes so empty classes
/// keep moving under their priors, the `gamma` update, and the Dirichlet
/// weight draw. There is no `K` move and no empty-class augmentation.
pub fn run_fixed_k<F: Real>(
    data: &PreferenceDataset,
    k: usize,
    hyper: &Hyperparams<F>,
    config: &ChainConfig<F>,
) -> Result<PosteriorSamples<F>> {
    if k < 1 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    hyper.validate()?;
    // k_start is irrelevant here; validate the rest against a compatible
    // stand-in.
    ChainConfig {
        k_start: 1,
        init: Initialization::Prior,
        ..config.clone()
    }
    .validate(data.n_judges().max(1))?;
    let violations = crate::data::validate(data);
    if !violations.is_empty() {
        return Err(Error::Invalid(
            violations.iter().map(|v| v.to_string()).collect(),
        ));
    }

    let mut streams = ChainStreams::new(config.seed);
    let mut state = crate::mfm::init_state(data, hyper, config, k, &mut streams.init)?;
    let mut rates = AcceptanceRates::default();
    let mut records = Vec::new();

    for sweep in 1..=config.b_gibbs {
        draw_labels(&mut state, data, &mut streams.labels)?;
        update_class_params(
            &mut state,
            data,
            hyper,
            config,
            &mut streams.mh_p,
            &mut streams.mh_theta,
            false,
            &mut rates,
        );
        update_gamma(&mut state, hyper, config, &mut streams.gamma, &mut rates);
        crate::mfm::draw_weights(&mut state, &mut streams.weights);

        if let Err(msg) = state.check_invariants_with(false) {
            panic!("sampler invariant violated after sweep {sweep}: {msg}");
        }

        if sweep > config.burn_in && (sweep - config.burn_in) % config.thin == 0 {
            let log_post = log_joint(&state, data, hyper, false);
            assert!(
                log_post.is_finite(),
                "log joint density not finite at sweep {sweep}"
            );
            records.push(SampleRecord {
                iter: sweep,
                k,
                kplus: state.kplus,
                gamma: state.gamma,
                log_post,
                weights: state.weights.clone(),
                labels: state.z.clone(),
                classes: state.classes.clone(),
            });
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

/// EM state: mixture weights, concentration, class parameters, and the
/// posterior responsibilities of the final E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EMState<F> {
    pub weights: Vec<F>,
    pub gamma: F,
    pub classes: Vec<ClassParams<F>>,
    /// `I x K` row-major; each row sums to one.
    pub responsibilities: Vec<F>,
    /// Observed-data log-posterior at the final parameters.
    pub objective: F,
    pub iterations: usize,
    /// Objective after initialization and after every EM iteration.
    pub objective_trace: Vec<F>,
}

impl<F: Real> EMState<F> {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Explicit EM starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct EMInit<F> {
    pub gamma: F,
    pub weights: Vec<F>,
    pub classes: Vec<ClassParams<F>>,
}

/// Knobs for [`run_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct MapOptions<F> {
    /// Stop when the absolute objective change falls below this.
    pub tol: F,
    pub max_iters: usize,
    /// Independent prior-drawn restarts; the best objective wins.
    pub restarts: usize,
    pub seed: u64,
    /// Freeze `gamma` and skip its M-step (the ML mode sets this to 1).
    pub fix_gamma: Option<F>,
    /// Explicit initialization; forces a single run.
    pub init: Option<EMInit<F>>,
    /// Projected-gradient tolerance of the inner `(p, theta)` ascent.
    pub inner_gtol: F,
    pub inner_max_iters: usize,
}

impl<F: Real> Default for MapOptions<F> {
    fn default() -> Self {
        MapOptions {
            tol: F::of(1e-6),
            max_iters: 500,
            restarts: 5,
            seed: 0,
            fix_gamma: None,
            init: None,
            inner_gtol: F::of(1e-6),
            inner_max_iters: 300,
        }
    }
}

// Box constraints of the per-class M-step.
const P_LO: f64 = 1e-6;
const P_HI: f64 = 1.0 - 1e-6;
const THETA_LO: f64 = 1e-6;
const THETA_HI: f64 = 1e3;
const FD_STEP: f64 = 1e-6;
const PI_FLOOR: f64 = 1e-8;

/// Bayesian EM for MAP estimates of the fixed-K mixture.
///
/// Each iteration computes responsibilities from the current parameters and
/// then maximizes sequentially: the weights in closed form, `gamma` by
/// golden-section search on `[1e-4, 50]`, and each `(p_k, theta_k)` by a
/// bounded quasi-Newton ascent with central finite-difference gradients. The
/// monitored objective is the observed-data log-posterior, which is
/// non-decreasing across iterations up to optimizer tolerance.
pub fn run_map<F: Real>(
    data: &PreferenceDataset,
    k: usize,
    hyper: &Hyperparams<F>,
    opts: &MapOptions<F>,
) -> Result<EMState<F>> {
    if k < 1 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    if !(opts.tol > F::zero()) {
        return Err(Error::InvalidConfig("tol must be positive".into()));
    }
    hyper.validate()?;
    let violations = crate::data::validate(data);
    if !violations.is_empty() {
        return Err(Error::Invalid(
            violations.iter().map(|v| v.to_string()).collect(),
        ));
    }

    if let Some(init) = &opts.init {
        return em_run(data, k, hyper, opts, init.clone());
    }

    let restarts = opts.restarts.max(1);
    let inits: Vec<EMInit<F>> = (0..restarts)
        .map(|r| {
            let mut rng = indexed_stream(opts.seed, "map-init", r as u64);
            let gamma = opts.fix_gamma.unwrap_or_else(|| {
                if hyper.xi2 > F::zero() {
                    hyper.xi1 / hyper.xi2
                } else {
                    F::one()
                }
            });
            let classes: Vec<ClassParams<F>> = (0..k)
                .map(|_| crate::mfm::sample_class_params_init(hyper, data.n_objects, &mut rng))
                .collect();
            let weights = draw_dirichlet(&vec![gamma.max(F::of(0.5)); k], &mut rng);
            EMInit {
                gamma,
                weights,
                classes,
            }
        })
        .collect();

    let runs: Vec<Result<EMState<F>>> = inits
        .into_par_iter()
        .map(|init| em_run(data, k, hyper, opts, init))
        .collect();

    let mut best: Option<EMState<F>> = None;
    for run in runs {
        let state = run?;
        best = match best {
            Some(b) if b.objective >= state.objective => Some(b),
            _ => Some(state),
        };
    }
    Ok(best.unwrap())
}

/// MAP estimation under the flat-prior bundle, which yields maximum
/// likelihood estimates; `gamma` is fixed at 1 and its M-step skipped.
pub fn mle_mode<F: Real>(
    data: &PreferenceDataset,
    k: usize,
    opts: &MapOptions<F>,
) -> Result<EMState<F>> {
    let hyper = Hyperparams::flat();
    let opts = MapOptions {
        fix_gamma: Some(F::one()),
        ..opts.clone()
    };
    run_map(data, k, &hyper, &opts)
}

/// Observed-data log-posterior: `sum_i ln sum_k pi_k P[data_i | class k]`
/// plus the log-priors on `gamma`, the weights, and every class parameter.
pub fn em_objective<F: Real>(
    data: &PreferenceDataset,
    state: &EMState<F>,
    hyper: &Hyperparams<F>,
) -> F {
    let ll = loglik_matrix(data, &state.classes);
    objective_from_ll(&ll, data, state.gamma, &state.weights, &state.classes, hyper)
}

fn objective_from_ll<F: Real>(
    ll: &[F],
    data: &PreferenceDataset,
    gamma: F,
    weights: &[F],
    classes: &[ClassParams<F>],
    hyper: &Hyperparams<F>,
) -> F {
    let k = classes.len();
    let mut row = Vec::with_capacity(k);
    let mut obj = F::zero();
    for i in 0..data.n_judges() {
        label_log_weights(&ll[i * k..(i + 1) * k], weights, &mut row);
        obj += log_sum_exp(&row);
    }
    obj += log_prior_gamma(gamma, hyper.xi1, hyper.xi2);
    obj += log_dirichlet_pdf(weights, gamma);
    for class in classes {
        for &pj in &class.p {
            obj += log_beta_pdf(pj, hyper.a, hyper.b);
        }
        obj += log_gamma_pdf(class.theta, hyper.gamma1, hyper.gamma2);
    }
    obj
}

/// E-step responsibilities from a log-likelihood matrix; shares
/// [`label_log_weights`] with the Gibbs label draw.
fn e_step<F: Real>(ll: &[F], weights: &[F], n_judges: usize) -> Result<Vec<F>> {
    let k = weights.len();
    let mut resp = vec![F::zero(); n_judges * k];
    let mut row = Vec::with_capacity(k);
    for i in 0..n_judges {
        label_log_weights(&ll[i * k..(i + 1) * k], weights, &mut row);
        let lse = log_sum_exp(&row);
        if !lse.is_finite() {
            return Err(Error::JudgeInconsistent(i));
        }
        for c in 0..k {
            resp[i * k + c] = (row[c] - lse).exp();
        }
    }
    Ok(resp)
}

fn em_run<F: Real>(
    data: &PreferenceDataset,
    k: usize,
    hyper: &Hyperparams<F>,
    opts: &MapOptions<F>,
    init: EMInit<F>,
) -> Result<EMState<F>> {
    if init.classes.len() != k || init.weights.len() != k {
        return Err(Error::InvalidConfig(
            "EM initialization does not match K".into(),
        ));
    }
    let n = data.n_judges();
    let kf = F::of_usize(k);
    let n_f = F::of_usize(n);

    let mut gamma = opts.fix_gamma.unwrap_or(init.gamma);
    let mut weights = init.weights;
    normalize(&mut weights);
    let mut classes = init.classes;
    clamp_classes(&mut classes);

    let mut ll = loglik_matrix(data, &classes);
    let mut obj = objective_from_ll(&ll, data, gamma, &weights, &classes, hyper);
    let mut trace = vec![obj];
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        iterations += 1;
        let resp = e_step(&ll, &weights, n)?;

        // M-step (i): weights in closed form, floored if the formula leaves
        // the simplex interior (possible when gamma < 1 and a class is
        // nearly empty).
        let denom = kf * gamma - kf + n_f;
        let mut candidate: Vec<F> = (0..k)
            .map(|c| {
                let sum: F = (0..n).map(|i| resp[i * k + c]).sum();
                (gamma - F::one() + sum) / denom
            })
            .collect();
        if candidate.iter().any(|&w| w < F::of(PI_FLOOR)) {
            warn!("EM weight update left the simplex interior; flooring at {PI_FLOOR}");
            for w in &mut candidate {
                *w = w.max(F::of(PI_FLOOR));
            }
            normalize(&mut candidate);
            // Keep whichever weight vector scores better on the terms that
            // depend on the weights.
            if weight_block(&resp, &candidate, gamma, n, k)
                >= weight_block(&resp, &weights, gamma, n, k)
            {
                weights = candidate;
            }
        } else {
            weights = candidate;
        }

        // M-step (ii): gamma by univariate search, keeping the better of the
        // search result and the incumbent.
        if opts.fix_gamma.is_none() {
            let log_pi_sum: F = weights.iter().map(|&w| w.ln()).sum();
            let g = |x: F| {
                ln_gamma(x * kf) - kf * ln_gamma(x) + (hyper.xi1 - F::one()) * x.ln()
                    + x * (log_pi_sum - hyper.xi2)
            };
            let (cand, f_cand) = golden_section_max(&g, F::of(1e-4), F::of(50.0), F::of(1e-9), 200);
            if f_cand > g(gamma) {
                gamma = cand;
            }
        }

        // M-step (iii): bounded ascent on each class's (p, theta).
        for c in 0..k {
            let mut x: Vec<F> = classes[c].p.clone();
            x.push(classes[c].theta);
            let (lo, hi) = class_box::<F>(data.n_objects);
            let phi = |x: &[F]| class_objective(data, &resp, c, k, x, hyper);
            let (x_new, _) = bounded_ascent(
                phi,
                x,
                &lo,
                &hi,
                opts.inner_gtol,
                opts.inner_max_iters,
                F::of(FD_STEP),
            );
            classes[c].p = x_new[..data.n_objects].to_vec();
            classes[c].theta = x_new[data.n_objects];
        }

        ll = loglik_matrix(data, &classes);
        let new_obj = objective_from_ll(&ll, data, gamma, &weights, &classes, hyper);
        trace.push(new_obj);
        if new_obj < obj - opts.tol * F::of(10.0) {
            return Err(Error::EmRegression((obj - new_obj).as_f64()));
        }
        let done = (new_obj - obj).abs() < opts.tol;
        obj = new_obj;
        if done {
            break;
        }
    }

    let resp = e_step(&ll, &weights, n)?;
    Ok(EMState {
        weights,
        gamma,
        classes,
        responsibilities: resp,
        objective: obj,
        iterations,
        objective_trace: trace,
    })
}

/// Terms of the complete-data objective that involve the weights.
fn weight_block<F: Real>(resp: &[F], weights: &[F], gamma: F, n: usize, k: usize) -> F {
    let mut out = F::zero();
    for (c, &w) in weights.iter().enumerate() {
        let sum: F = (0..n).map(|i| resp[i * k + c]).sum();
        out += (sum + gamma - F::one()) * w.ln();
    }
    out
}

fn class_objective<F: Real>(
    data: &PreferenceDataset,
    resp: &[F],
    class: usize,
    k: usize,
    x: &[F],
    hyper: &Hyperparams<F>,
) -> F {
    let n_objects = data.n_objects;
    let params = ClassParams {
        p: x[..n_objects].to_vec(),
        theta: x[n_objects],
    };
    let mut lp = log_gamma_pdf(params.theta, hyper.gamma1, hyper.gamma2);
    for &pj in &params.p {
        lp += log_beta_pdf(pj, hyper.a, hyper.b);
    }
    let ev = JudgeEvaluator::new(&params, data.max_rating);
    for (i, rec) in data.judges.iter().enumerate() {
        let w = resp[i * k + class];
        if w > F::zero() {
            lp += w * ev.log_judge(rec);
        }
    }
    lp
}

fn class_box<F: Real>(n_objects: usize) -> (Vec<F>, Vec<F>) {
    let mut lo = vec![F::of(P_LO); n_objects];
    let mut hi = vec![F::of(P_HI); n_objects];
    lo.push(F::of(THETA_LO));
    hi.push(F::of(THETA_HI));
    (lo, hi)
}

fn clamp_classes<F: Real>(classes: &mut [ClassParams<F>]) {
    for class in classes {
        for p in &mut class.p {
            *p = p.max(F::of(P_LO)).min(F::of(P_HI));
        }
        class.theta = class.theta.max(F::of(THETA_LO)).min(F::of(THETA_HI));
    }
}

fn normalize<F: Real>(weights: &mut [F]) {
    let total: F = weights.iter().copied().sum();
    assert!(total > F::zero(), "weights must have positive mass");
    for w in weights.iter_mut() {
        *w /= total;
    }
}

/// Central finite-difference gradient with evaluation points kept inside the
/// box.
fn fd_gradient<F: Real>(
    f: &impl Fn(&[F]) -> F,
    x: &[F],
    lo: &[F],
    hi: &[F],
    step: F,
    buf: &mut Vec<F>,
) -> Vec<F> {
    let n = x.len();
    let mut g = vec![F::zero(); n];
    buf.clear();
    buf.extend_from_slice(x);
    for d in 0..n {
        let up = (x[d] + step).min(hi[d]);
        let down = (x[d] - step).max(lo[d]);
        if up <= down {
            continue;
        }
        buf[d] = up;
        let f_up = f(buf);
        buf[d] = down;
        let f_down = f(buf);
        buf[d] = x[d];
        g[d] = (f_up - f_down) / (up - down);
    }
    g
}

/// Projected-gradient ascent with Barzilai-Borwein step sizes and a monotone
/// Armijo backtracking line search; the objective never decreases.
fn bounded_ascent<F: Real>(
    f: impl Fn(&[F]) -> F,
    mut x: Vec<F>,
    lo: &[F],
    hi: &[F],
    gtol: F,
    max_iter: usize,
    fd_step: F,
) -> (Vec<F>, F) {
    let n = x.len();
    for d in 0..n {
        x[d] = x[d].max(lo[d]).min(hi[d]);
    }
    let mut fx = f(&x);
    let mut buf = Vec::with_capacity(n);
    let mut g = fd_gradient(&f, &x, lo, hi, fd_step, &mut buf);
    let mut alpha = F::of(0.1);

    for _ in 0..max_iter {
        // Converged when the projected gradient is small.
        let pg_norm = (0..n)
            .map(|d| ((x[d] + g[d]).max(lo[d]).min(hi[d]) - x[d]).abs())
            .fold(F::zero(), F::max);
        if pg_norm < gtol {
            break;
        }

        let mut direction = vec![F::zero(); n];
        let mut slope = F::zero();
        for d in 0..n {
            direction[d] = (x[d] + alpha * g[d]).max(lo[d]).min(hi[d]) - x[d];
            slope += direction[d] * g[d];
        }
        if slope <= F::zero() {
            alpha *= F::of(0.1);
            if alpha < F::of(1e-12) {
                break;
            }
            continue;
        }

        let mut t = F::one();
        let c1 = F::of(1e-4);
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = fx;
        for _ in 0..40 {
            for d in 0..n {
                x_new[d] = (x[d] + t * direction[d]).max(lo[d]).min(hi[d]);
            }
            f_new = f(&x_new);
            if f_new >= fx + c1 * t * slope {
                accepted = true;
                break;
            }
            t *= F::of(0.5);
        }
        if !accepted {
            alpha *= F::of(0.1);
            if alpha < F::of(1e-12) {
                break;
            }
            continue;
        }

        let g_new = fd_gradient(&f, &x_new, lo, hi, fd_step, &mut buf);
        let mut ss = F::zero();
        let mut sy = F::zero();
        for d in 0..n {
            let s = x_new[d] - x[d];
            let y = g_new[d] - g[d];
            ss += s * s;
            sy += s * y;
        }
        // Barzilai-Borwein step for ascent: positive only in concave
        // stretches; otherwise grow the previous step.
        alpha = if sy < F::zero() {
            (ss / -sy).max(F::of(1e-10)).min(F::of(1e4))
        } else {
            (alpha * F::of(2.0)).min(F::of(1e4))
        };
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    (x, fx)
}
