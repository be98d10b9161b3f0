//! Controlled Cucker–Smale particle system.
//!
//! ```text
//! dx_i/dt = v_i
//! dv_i/dt = (1/N) Σ_j Ψ(x_i, x_j)(v_j - v_i) + f_i
//! ```
//!
//! integrated with fixed-step classical RK4. The running cost
//! `‖v - v̄‖²_N + λ‖f‖²_N` is recorded at every step and integrated with the
//! trapezoidal rule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::InteractionKernel;
use crate::scalar::Scalar;

/// Positions and velocities of `n` particles in `d` dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState<T> {
    pub t: T,
    n: usize,
    d: usize,
    x: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> ParticleState<T> {
    /// Builds a state from flat row-major `n × d` arrays.
    pub fn new(t: T, d: usize, x: Vec<T>, v: Vec<T>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("particle dimension must be >= 1"));
        }
        if x.is_empty() || !x.len().is_multiple_of(d) {
            return Err(Error::invalid(format!(
                "position array of length {} is not a nonempty multiple of d = {d}",
                x.len()
            )));
        }
        if x.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: v.len(),
            });
        }
        let state = Self {
            t,
            n: x.len() / d,
            d,
            x,
            v,
        };
        if !state.is_finite() {
            return Err(Error::NonFinite("particle state"));
        }
        Ok(state)
    }

    /// One-dimensional convenience constructor.
    pub fn from_1d(t: T, x: Vec<T>, v: Vec<T>) -> Result<Self> {
        Self::new(t, 1, x, v)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn positions(&self) -> &[T] {
        &self.x
    }

    pub fn velocities(&self) -> &[T] {
        &self.v
    }

    pub fn position(&self, i: usize) -> &[T] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn velocity(&self, i: usize) -> &[T] {
        &self.v[i * self.d..(i + 1) * self.d]
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().chain(&self.v).all(|a| a.is_finite())
    }

    /// Mean velocity `(1/N) Σ v_i`.
    pub fn mean_velocity(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.d];
        for row in self.v.chunks_exact(self.d) {
            for (acc, &vi) in m.iter_mut().zip(row) {
                *acc += vi;
            }
        }
        let n = T::from_count(self.n);
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// Feedback parameters for the particle controls.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlLaw<T> {
    /// `f_i = 0`.
    None,
    /// `f_i = -β (v_i - v̄)`.
    VelocityFeedback { beta: T, v_bar: Vec<T> },
}

impl<T: Scalar> ControlLaw<T> {
    pub fn feedback(beta: T, v_bar: Vec<T>) -> Result<Self> {
        if !(beta.is_finite() && beta >= T::zero()) {
            return Err(Error::invalid(format!("feedback gain must be nonnegative, got {beta}")));
        }
        if v_bar.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("target velocity"));
        }
        Ok(ControlLaw::VelocityFeedback { beta, v_bar })
    }

    /// The gain `β = 1/√λ` that turns the feedback bound into the cheap-control bound.
    pub fn cheap_control(lambda: T, v_bar: Vec<T>) -> Result<Self> {
        if !(lambda > T::zero()) {
            return Err(Error::invalid("lambda must be positive"));
        }
        Self::feedback(T::one() / lambda.sqrt(), v_bar)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            ControlLaw::VelocityFeedback { v_bar, .. } if v_bar.len() != d => Err(Error::DimensionMismatch {
                expected: d,
                got: v_bar.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Control values for every particle, row-major like the velocities.
    pub fn evaluate(&self, state: &ParticleState<T>) -> Vec<T> {
        let mut f = vec![T::zero(); state.v.len()];
        self.add_to(&state.v, state.d, &mut f);
        f
    }

    fn add_to(&self, v: &[T], d: usize, out: &mut [T]) {
        if let ControlLaw::VelocityFeedback { beta, v_bar } = self {
            for (vrow, orow) in v.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                for c in 0..d {
                    orow[c] += -*beta * (vrow[c] - v_bar[c]);
                }
            }
        }
    }
}

/// Adds `Σ_j Ψ(x_i,x_j)(v_j - v_i)` into `acc`, visiting each unordered pair
/// once in fixed `i < j` order so the pair contributions cancel exactly.
fn pair_alignment<T: Scalar, K: InteractionKernel<T>>(x: &[T], v: &[T], d: usize, kernel: &K, acc: &mut [T]) {
    let n = x.len() / d;
    if d == 1 {
        for i in 0..n {
            let xi = &x[i..i + 1];
            let vi = v[i];
            let mut acc_i = T::zero();
            for j in (i + 1)..n {
                let w = kernel.psi(xi, &x[j..j + 1]);
                let t = w * (v[j] - vi);
                acc_i += t;
                acc[j] -= t;
            }
            acc[i] += acc_i;
        }
        return;
    }
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            let w = kernel.psi(xi, &x[j * d..(j + 1) * d]);
            for c in 0..d {
                let t = w * (v[j * d + c] - v[i * d + c]);
                acc[i * d + c] += t;
                acc[j * d + c] -= t;
            }
        }
    }
}

fn derivative<T: Scalar, K: InteractionKernel<T>>(
    x: &[T],
    v: &[T],
    d: usize,
    kernel: &K,
    law: &ControlLaw<T>,
) -> (Vec<T>, Vec<T>) {
    let n = T::from_count(x.len() / d);
    let mut dv = vec![T::zero(); v.len()];
    pair_alignment(x, v, d, kernel, &mut dv);
    dv.iter_mut().for_each(|a| *a /= n);
    law.add_to(v, d, &mut dv);
    (v.to_vec(), dv)
}

/// Right-hand side `(dx, dv)` of the controlled system.
pub fn rhs<T: Scalar, K: InteractionKernel<T>>(
    state: &ParticleState<T>,
    kernel: &K,
    law: &ControlLaw<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    if !state.is_finite() {
        return Err(Error::NonFinite("particle state"));
    }
    law.check_dim(state.d)?;
    Ok(derivative(&state.x, &state.v, state.d, kernel, law))
}

fn axpy<T: Scalar>(base: &[T], h: T, k: &[T]) -> Vec<T> {
    base.iter().zip(k).map(|(&b, &k)| b + h * k).collect()
}

/// One classical RK4 step of size `dt`.
pub fn step_rk4<T: Scalar, K: InteractionKernel<T>>(
    state: &ParticleState<T>,
    dt: T,
    kernel: &K,
    law: &ControlLaw<T>,
) -> Result<ParticleState<T>> {
    if !(dt > T::zero() && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite("particle state"));
    }
    law.check_dim(state.d)?;
    Ok(rk4_unchecked(state, dt, kernel, law))
}

fn rk4_unchecked<T: Scalar, K: InteractionKernel<T>>(
    state: &ParticleState<T>,
    dt: T,
    kernel: &K,
    law: &ControlLaw<T>,
) -> ParticleState<T> {
    let d = state.d;
    let half = T::lit(0.5) * dt;
    let (k1x, k1v) = derivative(&state.x, &state.v, d, kernel, law);
    let (k2x, k2v) = derivative(&axpy(&state.x, half, &k1x), &axpy(&state.v, half, &k1v), d, kernel, law);
    let (k3x, k3v) = derivative(&axpy(&state.x, half, &k2x), &axpy(&state.v, half, &k2v), d, kernel, law);
    let (k4x, k4v) = derivative(&axpy(&state.x, dt, &k3x), &axpy(&state.v, dt, &k3v), d, kernel, law);
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let combine = |base: &[T], a: &[T], b: &[T], c: &[T], e: &[T]| -> Vec<T> {
        (0..base.len())
            .map(|k| base[k] + sixth * (a[k] + two * b[k] + two * c[k] + e[k]))
            .collect()
    };
    ParticleState {
        t: state.t + dt,
        n: state.n,
        d,
        x: combine(&state.x, &k1x, &k2x, &k3x, &k4x),
        v: combine(&state.v, &k1v, &k2v, &k3v, &k4v),
    }
}

/// `(1/N) Σ_i |v_i - v̄|²`.
pub fn velocity_cost<T: Scalar>(state: &ParticleState<T>, v_bar: &[T]) -> T {
    assert_eq!(v_bar.len(), state.d, "target velocity dimension");
    second_moment_rows(&state.v, state.d, 0, state.d, v_bar) / T::from_count(state.n)
}

/// Sum over rows of `|row[offset..offset+d] - center|²`, in row order.
pub(crate) fn second_moment_rows<T: Scalar>(data: &[T], stride: usize, offset: usize, d: usize, center: &[T]) -> T {
    let mut acc = T::zero();
    for row in data.chunks_exact(stride) {
        for c in 0..d {
            let e = row[offset + c] - center[c];
            acc += e * e;
        }
    }
    acc
}

/// `(1/N) Σ_i |f_i|²` for the law evaluated at `state`.
pub fn control_cost<T: Scalar>(state: &ParticleState<T>, law: &ControlLaw<T>) -> T {
    match law {
        ControlLaw::None => T::zero(),
        ControlLaw::VelocityFeedback { .. } => {
            let f = law.evaluate(state);
            f.iter().map(|&a| a * a).fold(T::zero(), |a, b| a + b) / T::from_count(state.n)
        }
    }
}

/// I.i.d. normal positions and velocities from a seeded ChaCha8 stream.
///
/// Positions of all particles are drawn first, then velocities, each as
/// `mean + sigma * z` with `z` standard normal.
pub fn sample_initial<T: Scalar>(
    n: usize,
    d: usize,
    mean_x: &[T],
    mean_v: &[T],
    sigma: T,
    seed: u64,
) -> Result<ParticleState<T>> {
    if n == 0 || d == 0 {
        return Err(Error::invalid("need n >= 1 and d >= 1"));
    }
    if mean_x.len() != d || mean_v.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if mean_x.len() != d { mean_x.len() } else { mean_v.len() },
        });
    }
    if !(sigma >= T::zero() && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be nonnegative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |mean: &[T]| -> Vec<T> {
        (0..n * d)
            .map(|k| {
                let z: f64 = StandardNormal.sample(&mut rng);
                mean[k % d] + sigma * T::lit(z)
            })
            .collect()
    };
    let x = draw(mean_x);
    let v = draw(mean_v);
    ParticleState::new(T::zero(), d, x, v)
}

/// Sampled trajectory together with the two halves of the running cost.
#[derive(Debug, Clone)]
pub struct ParticleTrajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<ParticleState<T>>,
    /// `‖v - v̄‖²_N` at each sample.
    pub state_cost: Vec<T>,
    /// `‖f‖²_N` at each sample.
    pub control_cost: Vec<T>,
    pub lambda: T,
}

impl<T: Scalar> ParticleTrajectory<T> {
    /// `‖v - v̄‖²_N + λ‖f‖²_N` at each sample.
    pub fn total_integrand(&self) -> Vec<T> {
        self.state_cost
            .iter()
            .zip(&self.control_cost)
            .map(|(&s, &c)| s + self.lambda * c)
            .collect()
    }

    /// Trapezoidal integral of the running cost over the whole trajectory.
    pub fn total_cost(&self) -> T {
        trapezoid(&self.times, &self.total_integrand())
    }

    pub fn final_state(&self) -> &ParticleState<T> {
        self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// Trapezoidal rule on a (possibly nonuniform) sample grid.
pub fn trapezoid<T: Scalar>(times: &[T], values: &[T]) -> T {
    let half = T::lit(0.5);
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| half * (t[1] - t[0]) * (v[0] + v[1]))
        .fold(T::zero(), |a, b| a + b)
}

/// Integrates from `init.t` to `t_end` with step `dt`, recording every step.
///
/// `dt` must divide the horizon up to a relative mismatch of 1e-6; the
/// sample times are `t0 + k·dt` with the last one pinned to `t_end`.
pub fn simulate<T: Scalar, K: InteractionKernel<T>>(
    init: &ParticleState<T>,
    kernel: &K,
    law: &ControlLaw<T>,
    dt: T,
    t_end: T,
    lambda: T,
    v_bar: &[T],
) -> Result<ParticleTrajectory<T>> {
    if !(dt > T::zero() && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !(t_end > init.t) {
        return Err(Error::invalid(format!(
            "t_end = {t_end} must exceed the initial time {}",
            init.t
        )));
    }
    if !(lambda >= T::zero()) {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    if v_bar.len() != init.d {
        return Err(Error::DimensionMismatch {
            expected: init.d,
            got: v_bar.len(),
        });
    }
    if !init.is_finite() {
        return Err(Error::NonFinite("initial particle state"));
    }
    law.check_dim(init.d)?;

    let horizon = t_end - init.t;
    let steps_f = (horizon / dt).round();
    let steps = steps_f.to_usize().unwrap_or(0).max(1);
    if ((T::from_count(steps) * dt - horizon) / horizon).abs() > T::lit(1e-6) {
        return Err(Error::invalid(format!(
            "dt = {dt} does not divide the horizon {horizon}"
        )));
    }

    let t0 = init.t;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut state_cost = Vec::with_capacity(steps + 1);
    let mut ctrl_cost = Vec::with_capacity(steps + 1);

    let mut record = |s: ParticleState<T>| {
        times.push(s.t);
        state_cost.push(velocity_cost(&s, v_bar));
        ctrl_cost.push(control_cost(&s, law));
        states.push(s);
    };

    record(init.clone());
    let mut current = init.clone();
    for k in 1..=steps {
        let mut next = rk4_unchecked(&current, dt, kernel, law);
        next.t = if k == steps { t_end } else { t0 + T::from_count(k) * dt };
        if !next.is_finite() {
            return Err(Error::Blowup {
                time: next.t.as_f64(),
                detail: "non-finite particle state".into(),
            });
        }
        record(next.clone());
        current = next;
    }

    Ok(ParticleTrajectory {
        times,
        states,
        state_cost,
        control_cost: ctrl_cost,
        lambda,
    })
}
