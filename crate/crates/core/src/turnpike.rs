//! Turnpike certification for sampled cost or energy series.
//!
//! The machinery turns two measurable hypotheses on a nonnegative series
//! `E(t)`:
//!
//! 1. `∫_a^T E(t) dt ≤ C₀ E(a)` for every `a`, and
//! 2. `E(t₂) ≤ C₁ E(t₁)` for every `t₁ ≤ t₂`,
//!
//! into an explicit exponential envelope `E(t) ≤ C e^{-αt} E(0)` with
//! `τ > C₀C₁`, `C₂ = τ/(C₀C₁)`, `α = ln(C₂)/τ` and `C = C₁C₂`.

use crate::error::{Error, Result};
use crate::particle::trapezoid;
use crate::scalar::Scalar;

/// A nonnegative series sampled at strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSeries<T> {
    times: Vec<T>,
    values: Vec<T>,
}

impl<T: Scalar> CostSeries<T> {
    pub fn new(times: Vec<T>, values: Vec<T>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::invalid("cost series is empty"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("series times must be strictly increasing"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
            return Err(Error::invalid(format!(
                "series values must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { times, values })
    }

    /// Samples `f` at `n` equispaced points of `[t0, t1]`.
    pub fn sample(t0: T, t1: T, n: usize, f: impl Fn(T) -> T) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("need at least two samples"));
        }
        let h = (t1 - t0) / T::from_count(n - 1);
        let times: Vec<T> = (0..n)
            .map(|k| if k + 1 == n { t1 } else { t0 + T::from_count(k) * h })
            .collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values)
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Same series with every value multiplied by `k`.
    pub fn scaled(&self, k: T) -> Result<Self> {
        Self::new(self.times.clone(), self.values.iter().map(|&v| v * k).collect())
    }
}

/// Outcome of comparing a series against `c·e^{-α(t - t₀)}·E(t₀)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck<T> {
    pub satisfied: bool,
    /// Largest relative excess over the tolerated envelope; `≤ 0` when satisfied.
    pub max_violation: T,
}

/// Least-squares exponential fit of a series over a time window.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport<T> {
    pub alpha_hat: T,
    /// Fitted prefactor relative to the first sample of the series.
    pub c_hat: T,
    pub window: (T, T),
    pub r_squared: T,
    pub samples_used: usize,
    pub bound: Option<BoundCheck<T>>,
}

impl<T: Scalar> DecayReport<T> {
    /// Fitted slope of `ln E(t)`.
    pub fn slope(&self) -> T {
        -self.alpha_hat
    }

    /// Attaches an envelope check to the report.
    pub fn with_bound(mut self, series: &CostSeries<T>, c: T, alpha: T, tol: T) -> Self {
        self.bound = Some(check_bound(series, c, alpha, tol));
        self
    }

    /// `key = value` lines with the fields consumed by downstream tooling.
    pub fn to_key_values(&self) -> String {
        let (sat, viol) = match self.bound {
            Some(b) => (b.satisfied.to_string(), format!("{:e}", b.max_violation.as_f64())),
            None => ("na".to_string(), "na".to_string()),
        };
        format!(
            "alpha_hat = {:.12e}\nc_hat = {:.12e}\nr_squared = {:.12}\nbound_satisfied = {sat}\nmax_violation = {viol}\nwindow = {}, {}\nsamples_used = {}\n",
            self.alpha_hat.as_f64(),
            self.c_hat.as_f64(),
            self.r_squared.as_f64(),
            self.window.0.as_f64(),
            self.window.1.as_f64(),
            self.samples_used,
        )
    }
}

/// Fits `ln E(t) ≈ ln(c) - α t` over samples in `[t_lo, t_hi]` whose value
/// exceeds `floor`.
pub fn fit_exponential<T: Scalar>(series: &CostSeries<T>, window: (T, T), floor: T) -> Result<DecayReport<T>> {
    let (t_lo, t_hi) = window;
    if !(t_hi > t_lo) {
        return Err(Error::Fit(format!("empty window [{t_lo}, {t_hi}]")));
    }
    let pts: Vec<(T, T)> = series
        .times
        .iter()
        .zip(&series.values)
        .filter(|(&t, &v)| t >= t_lo && t <= t_hi && v > floor && v > T::zero())
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Fit(format!(
            "only {} usable samples in [{t_lo}, {t_hi}] above floor {floor}",
            pts.len()
        )));
    }
    let n = T::from_count(pts.len());
    let t_mean = pts.iter().map(|p| p.0).fold(T::zero(), |a, b| a + b) / n;
    let y_mean = pts.iter().map(|p| p.1).fold(T::zero(), |a, b| a + b) / n;
    let mut stt = T::zero();
    let mut sty = T::zero();
    let mut syy = T::zero();
    for &(t, y) in &pts {
        let dt = t - t_mean;
        let dy = y - y_mean;
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    let slope = sty / stt;
    let intercept = y_mean - slope * t_mean;
    let ss_res = pts
        .iter()
        .map(|&(t, y)| {
            let r = y - (intercept + slope * t);
            r * r
        })
        .fold(T::zero(), |a, b| a + b);
    let r_squared = if syy > T::zero() {
        (T::one() - ss_res / syy).max(T::zero()).min(T::one())
    } else {
        T::one()
    };
    let first = series.values[0];
    let c_hat = if first > T::zero() {
        intercept.exp() / first
    } else {
        T::infinity()
    };
    Ok(DecayReport {
        alpha_hat: -slope,
        c_hat,
        window,
        r_squared,
        samples_used: pts.len(),
        bound: None,
    })
}

/// Checks `E(t_k) ≤ c·e^{-α(t_k - t_0)}·E(t_0)·(1 + tol)` at every sample.
pub fn check_bound<T: Scalar>(series: &CostSeries<T>, c: T, alpha: T, tol: T) -> BoundCheck<T> {
    let t0 = series.times[0];
    let e0 = series.values[0];
    let mut worst = T::neg_infinity();
    for (&t, &v) in series.times.iter().zip(&series.values) {
        let env = c * (-alpha * (t - t0)).exp() * e0;
        let excess = if env > T::zero() {
            v / env - (T::one() + tol)
        } else if v > T::zero() {
            T::infinity()
        } else {
            -tol
        };
        worst = worst.max(excess);
    }
    BoundCheck {
        satisfied: worst <= T::zero(),
        max_violation: worst,
    }
}

/// `total ≤ √λ · initial · (1 + tol)`.
pub fn cheap_control_check<T: Scalar>(total_cost: T, initial_value: T, lambda: T, tol: T) -> bool {
    total_cost <= lambda.sqrt() * initial_value * (T::one() + tol)
}

/// Upper bound `(1 + λβ²)/(2β)` on the running cost per unit initial state
/// cost achieved by a feedback of gain `β`; equals `√λ` at `β = 1/√λ`.
pub fn feedback_cost_factor<T: Scalar>(lambda: T, beta: T) -> T {
    (T::one() + lambda * beta * beta) / (T::lit(2.0) * beta)
}

/// Explicit constants of the exponential envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbstractConstants<T> {
    pub c: T,
    pub alpha: T,
    pub tau: T,
    pub c2: T,
}

/// Envelope constants built from the hypothesis constants `(C₀, C₁)` with the
/// rate-maximizing choice `τ = e·C₀C₁`, which gives `C₂ = e`, `α = 1/(e·C₀C₁)`
/// and `C = e·C₁`.
pub fn abstract_constants<T: Scalar>(c0: T, c1: T) -> Result<AbstractConstants<T>> {
    if !(c0 > T::zero() && c0.is_finite() && c1 > T::zero() && c1.is_finite()) {
        return Err(Error::invalid(format!(
            "constants must be positive, got c0={c0}, c1={c1}"
        )));
    }
    let e = T::one().exp();
    Ok(constants_for_tau(c0, c1, e * c0 * c1))
}

/// Envelope constants for an arbitrary `τ > C₀C₁`.
pub fn constants_for_tau<T: Scalar>(c0: T, c1: T, tau: T) -> AbstractConstants<T> {
    let c2 = tau / (c0 * c1);
    AbstractConstants {
        c: c1 * c2,
        alpha: c2.ln() / tau,
        tau,
        c2,
    }
}

/// Detailed outcome of checking both envelope hypotheses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisCheck<T> {
    pub integral_ok: bool,
    pub growth_ok: bool,
    /// `max_a ∫_a^T E / E(a)` over samples with `E(a) > 0`.
    pub worst_integral_ratio: T,
    /// `max_{t₁ ≤ t₂} E(t₂) / E(t₁)` over samples with `E(t₁) > 0`.
    pub worst_growth_ratio: T,
}

impl<T> HypothesisCheck<T> {
    pub fn holds(&self) -> bool {
        self.integral_ok && self.growth_ok
    }
}

/// Checks hypothesis (1) at every sample with trapezoidal tail integrals and
/// hypothesis (2) for every ordered pair of samples, both within `tol`.
pub fn check_hypotheses<T: Scalar>(series: &CostSeries<T>, c0: T, c1: T, tol: T) -> HypothesisCheck<T> {
    let n = series.len();
    let t = &series.times;
    let v = &series.values;
    let half = T::lit(0.5);
    let slack = T::one() + tol;

    // Tail integrals accumulated from the right.
    let mut tail = vec![T::zero(); n];
    for k in (0..n.saturating_sub(1)).rev() {
        tail[k] = tail[k + 1] + half * (t[k + 1] - t[k]) * (v[k] + v[k + 1]);
    }
    let mut integral_ok = true;
    let mut worst_integral = T::zero();
    for k in 0..n {
        if tail[k] > c0 * v[k] * slack {
            integral_ok = false;
        }
        if v[k] > T::zero() {
            worst_integral = worst_integral.max(tail[k] / v[k]);
        } else if tail[k] > T::zero() {
            worst_integral = T::infinity();
        }
    }

    let (growth_ok, worst_growth) = growth_scan(v, c1, tol);
    HypothesisCheck {
        integral_ok,
        growth_ok,
        worst_integral_ratio: worst_integral,
        worst_growth_ratio: worst_growth,
    }
}

/// Returns whether `v[k₂] ≤ c1·v[k₁]·(1+tol)` for all `k₁ ≤ k₂`, plus the worst ratio.
fn growth_scan<T: Scalar>(v: &[T], c1: T, tol: T) -> (bool, T) {
    let slack = T::one() + tol;
    let mut ok = true;
    let mut worst = T::zero();
    let mut suffix_max = T::neg_infinity();
    for k in (0..v.len()).rev() {
        suffix_max = suffix_max.max(v[k]);
        if suffix_max > c1 * v[k] * slack {
            ok = false;
        }
        if v[k] > T::zero() {
            worst = worst.max(suffix_max / v[k]);
        } else if suffix_max > T::zero() {
            worst = T::infinity();
        }
    }
    (ok, worst)
}

/// Both envelope hypotheses hold within `tol`.
pub fn hypotheses_hold<T: Scalar>(series: &CostSeries<T>, c0: T, c1: T, tol: T) -> bool {
    check_hypotheses(series, c0, c1, tol).holds()
}

/// Growth constant `C_λ = 1 + λ^{-1/2}` for `λ ≤ 1` and `1 + λ^{1/2}` otherwise.
pub fn c_lambda<T: Scalar>(lambda: T) -> Result<T> {
    if !(lambda > T::zero() && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok(if lambda <= T::one() {
        T::one() + T::one() / lambda.sqrt()
    } else {
        T::one() + lambda.sqrt()
    })
}

/// `values[k₂] ≤ c1 · values[k₁] · (1 + tol)` for all `k₁ ≤ k₂`.
pub fn monotone_bound_check<T: Scalar>(series: &CostSeries<T>, c1: T, tol: T) -> bool {
    growth_scan(&series.values, c1, tol).0
}

/// Certifies the exponential envelope of a series from hypothesis constants:
/// checks both hypotheses, then the envelope from [`abstract_constants`].
#[derive(Debug, Clone, Copy)]
pub struct Certificate<T> {
    pub hypotheses: HypothesisCheck<T>,
    pub constants: AbstractConstants<T>,
    pub envelope: BoundCheck<T>,
}

impl<T> Certificate<T> {
    pub fn certified(&self) -> bool {
        self.hypotheses.holds() && self.envelope.satisfied
    }
}

pub fn certify<T: Scalar>(series: &CostSeries<T>, c0: T, c1: T, tol: T) -> Result<Certificate<T>> {
    let hypotheses = check_hypotheses(series, c0, c1, tol);
    let constants = abstract_constants(c0, c1)?;
    let envelope = check_bound(series, constants.c, constants.alpha, tol);
    Ok(Certificate {
        hypotheses,
        constants,
        envelope,
    })
}

/// Trapezoidal integral of the whole series.
pub fn integral<T: Scalar>(series: &CostSeries<T>) -> T {
    trapezoid(&series.times, &series.values)
}
