//! Scalar abstraction and the handful of special functions the samplers need.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the whole crate is generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Shorthand for converting an `f64` literal or intermediate.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 not representable in this scalar type")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in this scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not convertible to f64")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum<T>
        + Display
        + Debug
        + Send
        + Sync
        + 'static
{
}

/// A positive floor comfortably above the subnormal range of `F`, used to
/// keep sampled positive quantities (weights, scales) representable in log
/// space. Far below any statistical resolution.
pub fn tiny_floor<F: Real>() -> F {
    F::min_positive_value() * F::of(1e6)
}

// Lanczos approximation with g = 7, n = 9 (double precision accuracy).
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

/// Natural log of the Gamma function for positive arguments.
///
/// Accurate to roughly 1e-13 relative error in `f64`; arguments `<= 0` yield
/// `+inf` (the callers only ever evaluate on the positive half-line).
pub fn ln_gamma<F: Real>(x: F) -> F {
    if x <= F::zero() {
        return F::infinity();
    }
    if x == F::one() || x == F::of(2.0) {
        return F::zero();
    }
    let pi = F::of(std::f64::consts::PI);
    if x < F::of(0.5) {
        // Reflection formula keeps the series argument >= 0.5.
        return (pi / (pi * x).sin()).ln() - ln_gamma(F::one() - x);
    }
    let x = x - F::one();
    let mut acc = F::of(LANCZOS[0]);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += F::of(c) / (x + F::of_usize(i));
    }
    let t = x + F::of(7.5);
    let half = F::of(0.5);
    let ln_sqrt_two_pi = F::of(0.918_938_533_204_672_7);
    ln_sqrt_two_pi + (x + half) * t.ln() - t + acc.ln()
}

/// Log of the Beta function, `ln B(a, b)`.
pub fn ln_beta_fn<F: Real>(a: F, b: F) -> F {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Log binomial coefficient `ln C(n, k)`.
///
/// Computed by an exact product for the small `n` that rating scales use, so
/// that enumeration-based normalization checks hold to near machine
/// precision.
pub fn ln_choose<F: Real>(n: u32, k: u32) -> F {
    assert!(k <= n, "ln_choose: k = {k} > n = {n}");
    let k = k.min(n - k);
    if n <= 1000 {
        let mut c = 1.0f64;
        for i in 1..=k as u64 {
            c = c * (n as u64 - k as u64 + i) as f64 / i as f64;
        }
        F::of(c.ln())
    } else {
        let nf = F::of(n as f64);
        let kf = F::of(k as f64);
        ln_gamma(nf + F::one()) - ln_gamma(kf + F::one()) - ln_gamma(nf - kf + F::one())
    }
}

/// `ln sum_i exp(x_i)` with the usual max subtraction; `-inf` for an empty or
/// all-`-inf` input.
pub fn log_sum_exp<F: Real>(xs: &[F]) -> F {
    let mut max = F::neg_infinity();
    for &x in xs {
        if x > max {
            max = x;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let mut sum = F::zero();
    for &x in xs {
        sum += (x - max).exp();
    }
    max + sum.ln()
}

/// Golden-section search for the maximum of a unimodal function on `[lo, hi]`.
///
/// Returns `(argmax, max)`. On non-unimodal inputs it still returns a point
/// no worse than both bracket ends, which is all the callers rely on.
pub fn golden_section_max<F: Real>(
    f: impl Fn(F) -> F,
    lo: F,
    hi: F,
    tol: F,
    max_iter: usize,
) -> (F, F) {
    let inv_phi = F::of(0.618_033_988_749_894_8);
    let mut a = lo;
    let mut b = hi;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (b - a).abs() < tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = (a + b) * F::of(0.5);
    let fx = f(x);
    // Report the best point actually evaluated.
    let mut best = (x, fx);
    if fc > best.1 {
        best = (c, fc);
    }
    if fd > best.1 {
        best = (d, fd);
    }
    best
}
