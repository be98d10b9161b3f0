//! Full Euler with nonlocal alignment and two controls (D = 1):
//!
//! ```text
//! ρ_t + (ρu)_x = 0
//! (ρu)_t + (ρu² + p)_x = Q₁ + ρF₁
//! (ρE)_t + ((ρE + p)u)_x = Q₂ + ρF₂
//! ```
//!
//! closed by `E = e + u²/2`, `θ = 2e`, `p = ρθ = 2ρe`. The sound speed uses
//! the adiabatic exponent 3 of the one-dimensional monatomic gas.

use super::{
    cell_integral, check_cfl, flux_divergence, next_stop, q1_with, q2_moment_with, q2_with, Grid1D, PairWeights,
    Q2Form, SolverParams, SolverStats,
};
use crate::error::{Error, Result};
use crate::kernel::InteractionKernel;
use crate::scalar::Scalar;

pub const GAMMA_GAS: f64 = 3.0;
pub const DEFAULT_E_FLOOR: f64 = 1e-10;

/// Cell averages of density, momentum and total energy `ρE`.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerState<T> {
    pub t: T,
    rho: Vec<T>,
    mom: Vec<T>,
    ener: Vec<T>,
}

/// Per-cell primitive variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitives<T> {
    pub u: Vec<T>,
    pub e: Vec<T>,
    pub p: Vec<T>,
    pub theta: Vec<T>,
}

impl<T: Scalar> EulerState<T> {
    pub fn new(t: T, rho: Vec<T>, mom: Vec<T>, ener: Vec<T>) -> Result<Self> {
        if rho.len() < 2 {
            return Err(Error::invalid("Euler state needs at least 2 cells"));
        }
        for other in [&mom, &ener] {
            if other.len() != rho.len() {
                return Err(Error::DimensionMismatch {
                    expected: rho.len(),
                    got: other.len(),
                });
            }
        }
        if rho.iter().chain(&mom).chain(&ener).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Euler state"));
        }
        if let Some(i) = rho.iter().position(|&r| r <= T::zero()) {
            return Err(Error::invalid(format!(
                "density must be positive, cell {i} has {}",
                rho[i]
            )));
        }
        Ok(Self { t, rho, mom, ener })
    }

    /// Builds the state from `ρ`, `u` and `p`.
    pub fn from_primitive(t: T, rho: Vec<T>, u: &[T], p: &[T]) -> Result<Self> {
        if u.len() != rho.len() || p.len() != rho.len() {
            return Err(Error::DimensionMismatch {
                expected: rho.len(),
                got: u.len().min(p.len()),
            });
        }
        let half = T::lit(0.5);
        let mom = rho.iter().zip(u).map(|(&r, &v)| r * v).collect();
        let ener = rho
            .iter()
            .zip(u)
            .zip(p)
            .map(|((&r, &v), &pi)| half * pi + half * r * v * v)
            .collect();
        Self::new(t, rho, mom, ener)
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn rho(&self) -> &[T] {
        &self.rho
    }

    pub fn mom(&self) -> &[T] {
        &self.mom
    }

    pub fn ener(&self) -> &[T] {
        &self.ener
    }

    pub fn mass(&self, dx: T) -> T {
        cell_integral(&self.rho, dx)
    }

    fn velocity_and_internal(&self) -> (Vec<T>, Vec<T>) {
        split_cells(&self.rho, &self.mom, &self.ener)
    }
}

fn split_cells<T: Scalar>(rho: &[T], mom: &[T], ener: &[T]) -> (Vec<T>, Vec<T>) {
    let half = T::lit(0.5);
    let u: Vec<T> = rho.iter().zip(mom).map(|(&r, &m)| m / r).collect();
    let e = (0..rho.len()).map(|i| ener[i] / rho[i] - half * u[i] * u[i]).collect();
    (u, e)
}

fn check_floor<T: Scalar>(e: &[T], floor: T) -> Result<()> {
    match e.iter().position(|&v| !(v >= floor)) {
        Some(cell) => Err(Error::DegenerateState {
            cell,
            e: e[cell].as_f64(),
            floor: floor.as_f64(),
        }),
        None => Ok(()),
    }
}

/// `u`, `e`, `p = 2ρe` and `θ = 2e`, requiring `e ≥ 1e-10` in every cell.
pub fn primitives<T: Scalar>(state: &EulerState<T>) -> Result<Primitives<T>> {
    primitives_with_floor(state, T::lit(DEFAULT_E_FLOOR))
}

pub fn primitives_with_floor<T: Scalar>(state: &EulerState<T>, e_floor: T) -> Result<Primitives<T>> {
    let (u, e) = state.velocity_and_internal();
    check_floor(&e, e_floor)?;
    let two = T::lit(2.0);
    let theta: Vec<T> = e.iter().map(|&v| two * v).collect();
    let p = state.rho.iter().zip(&theta).map(|(&r, &th)| r * th).collect();
    Ok(Primitives { u, e, p, theta })
}

/// Nonlocal energy source `Q₂(x_i) = Σ_j Ψ_ij ρ_i ρ_j (u_i u_j - E_i - E_j) dx`.
pub fn q2_source<T: Scalar, K: InteractionKernel<T> + ?Sized>(
    grid: &Grid1D<T>,
    state: &EulerState<T>,
    kernel: &K,
) -> Result<Vec<T>> {
    q2_source_with(grid, state, kernel, Q2Form::Symmetrized)
}

/// `Q₂` in the requested pointwise form.
pub fn q2_source_with<T: Scalar, K: InteractionKernel<T> + ?Sized>(
    grid: &Grid1D<T>,
    state: &EulerState<T>,
    kernel: &K,
    form: Q2Form,
) -> Result<Vec<T>> {
    check_len(grid, state.len())?;
    let (u, e) = state.velocity_and_internal();
    let w = PairWeights::new(grid, kernel);
    Ok(match form {
        Q2Form::Symmetrized => q2_with(&w, &state.rho, &u, &e, grid.dx()),
        Q2Form::Moment => q2_moment_with(&w, &state.rho, &u, &e, grid.dx()),
    })
}

/// Nonlocal momentum source `Q₁` on the grid centers.
pub fn q1_source_euler<T: Scalar, K: InteractionKernel<T> + ?Sized>(
    grid: &Grid1D<T>,
    state: &EulerState<T>,
    kernel: &K,
) -> Result<Vec<T>> {
    check_len(grid, state.len())?;
    let (u, _) = state.velocity_and_internal();
    let w = PairWeights::new(grid, kernel);
    Ok(q1_with(&w, &state.rho, &u, grid.dx()))
}

/// Control pair `(F₁, F₂)` for the momentum and energy equations.
pub trait EulerControl<T: Scalar> {
    #[allow(clippy::too_many_arguments)]
    fn controls(&self, t: T, x: &[T], rho: &[T], u: &[T], e: &[T], f1: &mut [T], f2: &mut [T]);

    /// Upper bound on how fast the controls relax velocity and internal energy.
    fn rate(&self) -> T;
}

/// `F₁ = -β(u - v̄)`, `F₂ = -β(2e + u(u - v̄))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerFeedback<T> {
    beta: T,
    v_bar: T,
}

impl<T: Scalar> EulerFeedback<T> {
    pub fn new(beta: T, v_bar: T) -> Result<Self> {
        if !(beta.is_finite() && beta >= T::zero()) {
            return Err(Error::invalid(format!(
                "feedback gain beta must be nonnegative, got {beta}"
            )));
        }
        if !v_bar.is_finite() {
            return Err(Error::NonFinite("v_bar"));
        }
        Ok(Self { beta, v_bar })
    }

    pub fn cheap_control(lambda: T, v_bar: T) -> Result<Self> {
        if !(lambda.is_finite() && lambda > T::zero()) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        Self::new(T::one() / lambda.sqrt(), v_bar)
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn v_bar(&self) -> T {
        self.v_bar
    }

    #[inline]
    fn pair(&self, u: T, e: T) -> (T, T) {
        let w = u - self.v_bar;
        (-self.beta * w, -self.beta * (T::lit(2.0) * e + u * w))
    }
}

impl<T: Scalar> EulerControl<T> for EulerFeedback<T> {
    fn controls(&self, _t: T, _x: &[T], _rho: &[T], u: &[T], e: &[T], f1: &mut [T], f2: &mut [T]) {
        for i in 0..u.len() {
            let (a, b) = self.pair(u[i], e[i]);
            f1[i] = a;
            f2[i] = b;
        }
    }

    fn rate(&self) -> T {
        T::lit(2.0) * self.beta
    }
}

/// Controls given by a closure `(t, x, u, e) -> (F₁, F₂)` with a declared rate bound.
pub struct FnEulerControl<F, T> {
    f: F,
    rate: T,
}

impl<F: Fn(T, T, T, T) -> (T, T), T: Scalar> FnEulerControl<F, T> {
    pub fn new(f: F, rate: T) -> Self {
        Self { f, rate }
    }
}

impl<F: Fn(T, T, T, T) -> (T, T), T: Scalar> EulerControl<T> for FnEulerControl<F, T> {
    fn controls(&self, t: T, x: &[T], _rho: &[T], u: &[T], e: &[T], f1: &mut [T], f2: &mut [T]) {
        for i in 0..u.len() {
            let (a, b) = (self.f)(t, x[i], u[i], e[i]);
            f1[i] = a;
            f2[i] = b;
        }
    }

    fn rate(&self) -> T {
        self.rate
    }
}

/// Feedback controls evaluated on `state`.
pub fn feedback_controls<T: Scalar>(state: &EulerState<T>, fb: &EulerFeedback<T>) -> (Vec<T>, Vec<T>) {
    let (u, e) = state.velocity_and_internal();
    u.iter().zip(&e).map(|(&ui, &ei)| fb.pair(ui, ei)).unzip()
}

/// Modified control cost `G = ρF₁² + (ρ/2e)(F₂ - uF₁)²` per cell.
pub fn cost_g<T: Scalar>(state: &EulerState<T>, f1: &[T], f2: &[T]) -> Result<Vec<T>> {
    if f1.len() != state.len() || f2.len() != state.len() {
        return Err(Error::DimensionMismatch {
            expected: state.len(),
            got: f1.len().min(f2.len()),
        });
    }
    let (u, e) = state.velocity_and_internal();
    check_floor(&e, T::lit(DEFAULT_E_FLOOR))?;
    Ok(g_cells(&state.rho, &u, &e, f1, f2))
}

fn g_cells<T: Scalar>(rho: &[T], u: &[T], e: &[T], f1: &[T], f2: &[T]) -> Vec<T> {
    let two = T::lit(2.0);
    (0..rho.len())
        .map(|i| {
            let w = f2[i] - u[i] * f1[i];
            rho[i] * f1[i] * f1[i] + rho[i] / (two * e[i]) * w * w
        })
        .collect()
}

fn pressure_and_speed<T: Scalar>(rho: T, mom: T, ener: T) -> (T, T, T) {
    let u = mom / rho;
    let e = ener / rho - T::lit(0.5) * u * u;
    let p = T::lit(2.0) * rho * e;
    let c = (T::lit(GAMMA_GAS) * p.max(T::zero()) / rho).sqrt();
    (u, p, c)
}

/// Rusanov flux for `(ρ, m, ρE)` with wave speed `max(|u| + c)`.
pub fn flux_rusanov_euler<T: Scalar>(left: (T, T, T), right: (T, T, T)) -> (T, T, T) {
    let (rl, ml, el) = left;
    let (rr, mr, er) = right;
    let (ul, pl, cl) = pressure_and_speed(rl, ml, el);
    let (ur, pr, cr) = pressure_and_speed(rr, mr, er);
    let s = (ul.abs() + cl).max(ur.abs() + cr);
    let half = T::lit(0.5);
    (
        half * (ml + mr) - half * s * (rr - rl),
        half * (ml * ul + pl + mr * ur + pr) - half * s * (mr - ml),
        half * ((el + pl) * ul + (er + pr) * ur) - half * s * (er - el),
    )
}

/// `ℋ = Σ (ρ_i e_i + ½ρ_i(u_i - v̄)²) dx`.
pub fn h_functional<T: Scalar>(grid: &Grid1D<T>, state: &EulerState<T>, v_bar: T) -> T {
    let (u, e) = state.velocity_and_internal();
    let half = T::lit(0.5);
    let density: Vec<T> = (0..state.len())
        .map(|i| {
            let w = u[i] - v_bar;
            state.rho[i] * e[i] + half * state.rho[i] * w * w
        })
        .collect();
    cell_integral(&density, grid.dx())
}

fn check_len<T: Scalar>(grid: &Grid1D<T>, cells: usize) -> Result<()> {
    if grid.len() != cells {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: cells,
        });
    }
    Ok(())
}

/// Finite-volume solver bound to a grid and kernel.
pub struct EulerSolver<T> {
    grid: Grid1D<T>,
    centers: Vec<T>,
    weights: PairWeights<T>,
    params: SolverParams<T>,
    stats: SolverStats<T>,
    work: (T, T),
}

impl<T: Scalar> EulerSolver<T> {
    pub fn new<K: InteractionKernel<T> + ?Sized>(grid: Grid1D<T>, kernel: &K, params: SolverParams<T>) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            centers: grid.centers(),
            weights: PairWeights::new(&grid, kernel),
            grid,
            params,
            stats: SolverStats::default(),
            work: (T::zero(), T::zero()),
        })
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn stats(&self) -> &SolverStats<T> {
        &self.stats
    }

    /// Time integrals of `∫ρF₁ dx` and `∫ρF₂ dx` accumulated with the same
    /// stage weights as the state update.
    pub fn control_work(&self) -> (T, T) {
        self.work
    }

    pub fn max_dt(&self, state: &EulerState<T>, control: &dyn EulerControl<T>) -> T {
        let mut speed = T::zero();
        for i in 0..state.len() {
            let (u, _, c) = pressure_and_speed(state.rho[i], state.mom[i], state.ener[i]);
            speed = speed.max(u.abs() + c);
        }
        let two = T::lit(2.0);
        let rate = control.rate() + two * self.weights.bound() * state.mass(self.grid.dx());
        self.params.max_dt(self.grid.dx(), speed, rate)
    }

    /// Returns the stage derivative and the control work rates `(∫ρF₁, ∫ρF₂)`.
    fn rhs(&mut self, t: T, rho: &[T], mom: &[T], ener: &[T], control: &dyn EulerControl<T>) -> ([Vec<T>; 3], (T, T)) {
        let m = rho.len();
        let dx = self.grid.dx();
        let (u, e) = split_cells(rho, mom, ener);
        let mut faces = [vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); m]];
        for i in 0..m {
            let j = (i + 1) % m;
            let (a, b, c) = flux_rusanov_euler((rho[i], mom[i], ener[i]), (rho[j], mom[j], ener[j]));
            faces[0][i] = a;
            faces[1][i] = b;
            faces[2][i] = c;
        }
        let mut d = [vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); m]];
        for k in 0..3 {
            flux_divergence(&faces[k], dx, &mut d[k]);
        }

        let q1 = q1_with(&self.weights, rho, &u, dx);
        let q2 = match self.params.q2_form {
            Q2Form::Symmetrized => q2_with(&self.weights, rho, &u, &e, dx),
            Q2Form::Moment => q2_moment_with(&self.weights, rho, &u, &e, dx),
        };
        let q1_int = cell_integral(&q1, dx).abs();
        let q2_int = cell_integral(&q2, dx);
        self.stats.max_abs_q1_integral = self.stats.max_abs_q1_integral.max(q1_int);
        self.stats.max_q2_integral = self.stats.max_q2_integral.max(q2_int);
        self.stats.stages += 1;

        let mut f1 = vec![T::zero(); m];
        let mut f2 = vec![T::zero(); m];
        control.controls(t, &self.centers, rho, &u, &e, &mut f1, &mut f2);
        let mut w1 = vec![T::zero(); m];
        let mut w2 = vec![T::zero(); m];
        for i in 0..m {
            w1[i] = rho[i] * f1[i];
            w2[i] = rho[i] * f2[i];
            d[1][i] += q1[i] + w1[i];
            d[2][i] += q2[i] + w2[i];
        }
        (d, (cell_integral(&w1, dx), cell_integral(&w2, dx)))
    }

    fn apply_floors(&mut self, rho: &mut [T], mom: &mut [T], ener: &mut [T]) {
        let half = T::lit(0.5);
        for i in 0..rho.len() {
            if rho[i] < self.params.rho_floor {
                let scale = if rho[i] > T::zero() {
                    self.params.rho_floor / rho[i]
                } else {
                    T::zero()
                };
                mom[i] *= scale;
                ener[i] *= scale;
                rho[i] = self.params.rho_floor;
                self.stats.floor_events += 1;
            }
            let u = mom[i] / rho[i];
            let e = ener[i] / rho[i] - half * u * u;
            if !(e >= self.params.e_floor) {
                let mut fixed = rho[i] * (self.params.e_floor + half * u * u);
                while fixed / rho[i] - half * u * u < self.params.e_floor {
                    fixed *= T::one() + T::epsilon();
                }
                ener[i] = fixed;
                self.stats.floor_events += 1;
            }
        }
    }

    /// One SSP-RK2 (Heun) step.
    pub fn step(&mut self, state: &EulerState<T>, dt: T, control: &dyn EulerControl<T>) -> Result<EulerState<T>> {
        check_len(&self.grid, state.len())?;
        check_cfl(dt, self.max_dt(state, control))?;
        let m = state.len();
        let half = T::lit(0.5);
        let u0 = [&state.rho, &state.mom, &state.ener];

        let (k, w_a) = self.rhs(state.t, &state.rho, &state.mom, &state.ener, control);
        let mut s1: [Vec<T>; 3] = std::array::from_fn(|c| (0..m).map(|i| u0[c][i] + dt * k[c][i]).collect());
        {
            let [r, p, e] = &mut s1;
            self.apply_floors(r, p, e);
        }

        let (k, w_b) = self.rhs(state.t + dt, &s1[0], &s1[1], &s1[2], control);
        let mut s2: [Vec<T>; 3] = std::array::from_fn(|c| {
            (0..m)
                .map(|i| half * u0[c][i] + half * (s1[c][i] + dt * k[c][i]))
                .collect()
        });
        {
            let [r, p, e] = &mut s2;
            self.apply_floors(r, p, e);
        }
        self.stats.steps += 1;
        self.work.0 += half * dt * (w_a.0 + w_b.0);
        self.work.1 += half * dt * (w_a.1 + w_b.1);

        let t = state.t + dt;
        let [rho, mom, ener] = s2;
        if rho.iter().chain(&mom).chain(&ener).any(|v| !v.is_finite()) {
            return Err(Error::Blowup {
                time: t.as_f64(),
                detail: "non-finite Euler state".into(),
            });
        }
        Ok(EulerState { t, rho, mom, ener })
    }
}

/// One step with default solver parameters.
pub fn step_euler<T: Scalar, K: InteractionKernel<T> + ?Sized>(
    state: &EulerState<T>,
    grid: &Grid1D<T>,
    dt: T,
    kernel: &K,
    fb: &EulerFeedback<T>,
) -> Result<EulerState<T>> {
    EulerSolver::new(*grid, kernel, SolverParams::default())?.step(state, dt, fb)
}

/// Initial data for a full Euler run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EulerInitial<T> {
    /// `ρ = rho0`, `u = exp(-2x²)`, `p = p0`.
    Bump {
        rho0: T,
        p0: T,
    },
    Uniform {
        rho0: T,
        u0: T,
        p0: T,
    },
}

impl<T: Scalar> EulerInitial<T> {
    pub fn state(&self, grid: &Grid1D<T>) -> Result<EulerState<T>> {
        let x = grid.centers();
        let m = x.len();
        let (rho0, p0, u): (T, T, Vec<T>) = match *self {
            EulerInitial::Bump { rho0, p0 } => (rho0, p0, x.iter().map(|&xi| (-T::lit(2.0) * xi * xi).exp()).collect()),
            EulerInitial::Uniform { rho0, u0, p0 } => (rho0, p0, vec![u0; m]),
        };
        EulerState::from_primitive(T::zero(), vec![rho0; m], &u, &vec![p0; m])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EulerConfig<T> {
    pub x_min: T,
    pub x_max: T,
    pub m_cells: usize,
    pub params: SolverParams<T>,
    pub beta: T,
    pub v_bar: T,
    pub lambda: T,
    pub t_end: T,
    pub initial: EulerInitial<T>,
    pub snapshot_times: Vec<T>,
}

impl<T: Scalar> EulerConfig<T> {
    /// The reference run: `ρ₀ = 0.1`, `u₀ = exp(-2x²)`, `p₀ = 0.01`, `β = 2`,
    /// `v̄ = 0.1`, `λ = 1` on `[-5, 5]` with 200 cells up to `T = 4`.
    pub fn reference() -> Self {
        Self {
            x_min: T::lit(-5.0),
            x_max: T::lit(5.0),
            m_cells: 200,
            params: SolverParams::default(),
            beta: T::lit(2.0),
            v_bar: T::lit(0.1),
            lambda: T::one(),
            t_end: T::lit(4.0),
            initial: EulerInitial::Bump {
                rho0: T::lit(0.1),
                p0: T::lit(0.01),
            },
            snapshot_times: Vec::new(),
        }
    }

    pub fn grid(&self) -> Result<Grid1D<T>> {
        Grid1D::new(self.x_min, self.x_max, self.m_cells)
    }

    pub fn feedback(&self) -> Result<EulerFeedback<T>> {
        EulerFeedback::new(self.beta, self.v_bar)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.feedback()?;
        self.params.validate()?;
        if !(self.lambda.is_finite() && self.lambda > T::zero()) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.t_end.is_finite() && self.t_end > T::zero()) {
            return Err(Error::invalid(format!("t_end must be positive, got {}", self.t_end)));
        }
        Ok(())
    }
}

/// Recorded history of a full Euler run, sampled after every step.
#[derive(Debug, Clone)]
pub struct EulerRun<T> {
    pub grid: Grid1D<T>,
    pub lambda: T,
    pub times: Vec<T>,
    pub h: Vec<T>,
    /// `∫ ρ|u - v̄|² + 2ρe dx`.
    pub state_cost: Vec<T>,
    /// `∫ G dx`.
    pub g_cost: Vec<T>,
    pub mass: Vec<T>,
    pub snapshots: Vec<EulerState<T>>,
    pub stats: SolverStats<T>,
}

impl<T: Scalar> EulerRun<T> {
    pub fn total_integrand(&self) -> Vec<T> {
        self.state_cost
            .iter()
            .zip(&self.g_cost)
            .map(|(&s, &g)| s + self.lambda * g)
            .collect()
    }

    pub fn total_cost(&self) -> T {
        crate::particle::trapezoid(&self.times, &self.total_integrand())
    }

    pub fn final_state(&self) -> &EulerState<T> {
        self.snapshots.last().expect("run keeps its final state")
    }

    pub fn mass_drift(&self) -> T {
        let m0 = self.mass[0];
        self.mass.iter().fold(T::zero(), |d, &m| d.max(((m - m0) / m0).abs()))
    }
}

/// `∫ ρ|u - v̄|² + 2ρe dx`, twice ℋ.
pub fn euler_state_cost<T: Scalar>(grid: &Grid1D<T>, state: &EulerState<T>, v_bar: T) -> T {
    T::lit(2.0) * h_functional(grid, state, v_bar)
}

fn record<T: Scalar>(run: &mut EulerRun<T>, state: &EulerState<T>, fb: &EulerFeedback<T>) -> Result<()> {
    let dx = run.grid.dx();
    let (f1, f2) = feedback_controls(state, fb);
    let g = cost_g(state, &f1, &f2)?;
    let h = h_functional(&run.grid, state, fb.v_bar);
    run.times.push(state.t);
    run.h.push(h);
    run.state_cost.push(T::lit(2.0) * h);
    run.g_cost.push(cell_integral(&g, dx));
    run.mass.push(state.mass(dx));
    Ok(())
}

/// Runs the feedback-controlled system to `cfg.t_end` with adaptive steps.
pub fn simulate_euler<T: Scalar, K: InteractionKernel<T> + ?Sized>(
    cfg: &EulerConfig<T>,
    kernel: &K,
) -> Result<EulerRun<T>> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let fb = cfg.feedback()?;
    let mut solver = EulerSolver::new(grid, kernel, cfg.params)?;
    let mut state = cfg.initial.state(&grid)?;
    primitives_with_floor(&state, cfg.params.e_floor)?;
    let mut run = EulerRun {
        grid,
        lambda: cfg.lambda,
        times: Vec::new(),
        h: Vec::new(),
        state_cost: Vec::new(),
        g_cost: Vec::new(),
        mass: Vec::new(),
        snapshots: Vec::new(),
        stats: SolverStats::default(),
    };
    record(&mut run, &state, &fb)?;
    if cfg.snapshot_times.iter().any(|&s| s == T::zero()) {
        run.snapshots.push(state.clone());
    }
    while state.t < cfg.t_end {
        let stop = next_stop(state.t, &cfg.snapshot_times, cfg.t_end);
        let dt = solver.max_dt(&state, &fb).min(stop - state.t);
        let mut next = solver.step(&state, dt, &fb)?;
        if stop - next.t <= stop * T::epsilon() * T::lit(4.0) {
            next.t = stop;
            if stop < cfg.t_end {
                run.snapshots.push(next.clone());
            }
        }
        state = next;
        record(&mut run, &state, &fb)?;
    }
    run.snapshots.push(state);
    run.stats = *solver.stats();
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelSpec, Uncoupled};
    use proptest::prelude::*;

    #[test]
    fn primitive_examples() {
        let s = EulerState::new(0.0, vec![1.0, 2.0], vec![0.0, 2.0], vec![0.5, 3.0]).unwrap();
        let p = primitives(&s).unwrap();
        assert_eq!(p.u, vec![0.0, 1.0]);
        // ρE = 3 with ρ = 2, u = 1 leaves ρe = 3 - 1 = 2.
        assert_eq!(p.e, vec![0.5, 1.0]);
        assert_eq!(p.p, vec![1.0, 4.0]);
        assert_eq!(p.theta, vec![1.0, 2.0]);
        let s = EulerState::new(0.0, vec![2.0, 1.0], vec![2.0, 0.0], vec![2.0, 0.5]).unwrap();
        let p = primitives(&s).unwrap();
        assert_eq!((p.u[0], p.e[0], p.p[0]), (1.0, 0.5, 2.0));
    }

    #[test]
    fn reference_initial_data_conversion() {
        let cfg = EulerConfig::<f64>::reference();
        let g = cfg.grid().unwrap();
        let s = cfg.initial.state(&g).unwrap();
        let p = primitives(&s).unwrap();
        for (i, &x) in g.centers().iter().enumerate() {
            assert!((p.theta[i] - 0.1).abs() < 1e-14);
            assert!((p.e[i] - 0.05).abs() < 1e-14);
            assert!((s.ener()[i] - (0.005 + 0.05 * (-4.0 * x * x).exp())).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_internal_energy_is_reported() {
        let s = EulerState::new(0.0, vec![1.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]).unwrap();
        assert!(matches!(primitives(&s), Err(Error::DegenerateState { cell: 0, .. })));
        assert!(cost_g(&s, &[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn q2_examples() {
        let g = Grid1D::new(0.0, 2.0, 2).unwrap();
        let s = EulerState::new(0.0, vec![1.0, 1.0], vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let q = q2_source(&g, &s, &KernelSpec::constant(1.0).unwrap()).unwrap();
        assert_eq!(q, vec![0.0, 0.0]);
        let s = EulerState::new(0.0, vec![1.0, 3.0], vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let q = q2_source(&g, &s, &KernelSpec::reference()).unwrap();
        assert_eq!(q, vec![0.0, 0.0]);
    }

    #[test]
    fn q2_matches_the_raw_formula() {
        let g = Grid1D::new(-1.0, 1.0, 5).unwrap();
        let rho = [0.3, 0.7, 1.1, 0.2, 0.5];
        let u = [0.1, -0.4, 0.9, 0.0, 0.3];
        let p = [0.2, 0.1, 0.4, 0.05, 0.3];
        let s = EulerState::from_primitive(0.0, rho.to_vec(), &u, &p).unwrap();
        let k = KernelSpec::reference();
        let q = q2_source(&g, &s, &k).unwrap();
        let c = g.centers();
        for i in 0..5 {
            let ei = s.ener()[i] / rho[i];
            let raw: f64 = (0..5)
                .map(|j| {
                    let ej = s.ener()[j] / rho[j];
                    k.psi(&[c[i]], &[c[j]]) * rho[i] * rho[j] * (u[i] * u[j] - ei - ej) * g.dx()
                })
                .sum();
            assert!((q[i] - raw).abs() < 1e-14, "{} vs {raw}", q[i]);
        }
    }

    #[test]
    fn q2_forms_share_their_integral() {
        let g = Grid1D::<f64>::new(-2.0, 2.0, 7).unwrap();
        let rho = [0.3, 0.7, 1.1, 0.2, 0.5, 0.9, 0.4];
        let u = [0.1, -0.4, 0.9, 0.0, 0.3, -1.2, 0.6];
        let p = [0.2, 0.1, 0.4, 0.05, 0.3, 0.01, 0.6];
        let s = EulerState::from_primitive(0.0, rho.to_vec(), &u, &p).unwrap();
        let k = KernelSpec::new(1.3, 0.8).unwrap();
        let a = q2_source_with(&g, &s, &k, Q2Form::Symmetrized).unwrap();
        let b = q2_source_with(&g, &s, &k, Q2Form::Moment).unwrap();
        let (ia, ib) = (cell_integral(&a, g.dx()), cell_integral(&b, g.dx()));
        assert!(ia < 0.0);
        assert!((ia - ib).abs() < 1e-14 * ia.abs());
        assert_ne!(a, b);
    }

    #[test]
    fn moment_form_energy_source_vanishes_with_internal_energy() {
        let g = Grid1D::<f64>::new(-1.0, 1.0, 3).unwrap();
        let k = KernelSpec::reference();
        let rho = vec![1.0, 1.0, 1.0];
        let u = [0.0, 1.0, -1.0];
        // e = 0: u_i Q₁_i is all that remains of the moment form.
        let s = EulerState::from_primitive(0.0, rho.clone(), &u, &[0.0; 3]).unwrap();
        let q1 = q1_source_euler(&g, &s, &k).unwrap();
        let q2 = q2_source_with(&g, &s, &k, Q2Form::Moment).unwrap();
        for i in 0..3 {
            assert!((q2[i] - u[i] * q1[i]).abs() < 1e-15);
        }
        let sym = q2_source(&g, &s, &k).unwrap();
        assert!(sym[0] - u[0] * q1[0] < 0.0);
    }

    #[test]
    fn feedback_examples() {
        let fb = EulerFeedback::new(2.0, 0.1).unwrap();
        assert_eq!(fb.pair(0.1, 0.05), (-0.0, -0.2));
        let fb = EulerFeedback::new(1.0, 0.0).unwrap();
        assert_eq!(fb.pair(1.0, 0.5), (-1.0, -2.0));
        let fb = EulerFeedback::new(3.0, 0.4).unwrap();
        assert_eq!(fb.pair(0.4, 0.0), (-0.0, -0.0));
    }

    #[test]
    fn cost_g_examples() {
        let s = EulerState::new(0.0, vec![1.0, 1.0], vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(cost_g(&s, &[1.0, 0.0], &[1.0, 0.0]).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn flux_examples() {
        let state = (0.4, 0.2, 0.3);
        let (a, b, c) = flux_rusanov_euler(state, state);
        let (u, p, _) = pressure_and_speed(0.4f64, 0.2, 0.3);
        assert_eq!(a, 0.2);
        assert!((b - (0.2 * u + p)).abs() < 1e-15);
        assert!((c - (0.3 + p) * u).abs() < 1e-15);

        assert_eq!(flux_rusanov_euler((1.0, 0.0, 1.0), (1.0, 0.0, 1.0)), (0.0, 2.0, 0.0));

        let l = (0.5, 0.3, 0.4);
        let r = (0.5, -0.3, 0.4);
        assert_eq!(flux_rusanov_euler(l, r).0, 0.0);
    }

    #[test]
    fn h_functional_examples() {
        let g = Grid1D::new(0.0, 1.0, 4).unwrap();
        let s = EulerState::from_primitive(0.0, vec![1.0; 4], &[0.2; 4], &[1.0; 4]).unwrap();
        assert_eq!(h_functional(&g, &s, 0.2), 0.5);
    }

    #[test]
    fn uncoupled_uniform_state_is_steady_without_control() {
        let g = Grid1D::new(-1.0, 1.0, 16).unwrap();
        let fb = EulerFeedback::new(0.0, 0.0).unwrap();
        let mut s = EulerState::from_primitive(0.0, vec![0.3; 16], &[0.4; 16], &[0.02; 16]).unwrap();
        let s0 = s.clone();
        let mut solver = EulerSolver::new(g, &Uncoupled, SolverParams::default()).unwrap();
        for _ in 0..50 {
            let dt = solver.max_dt(&s, &fb);
            s = solver.step(&s, dt, &fb).unwrap();
        }
        assert_eq!(s.rho(), s0.rho());
        assert_eq!(s.mom(), s0.mom());
        assert_eq!(s.ener(), s0.ener());
    }

    #[test]
    fn uniform_internal_energy_relaxes_under_feedback() {
        let g = Grid1D::new(-1.0, 1.0, 8).unwrap();
        let (beta, v_bar, e0) = (2.0, 0.1, 0.05);
        let fb = EulerFeedback::new(beta, v_bar).unwrap();
        let err_for = |dt: f64| {
            let mut s = EulerState::from_primitive(0.0, vec![0.1; 8], &[v_bar; 8], &[2.0 * 0.1 * e0; 8]).unwrap();
            let mut solver = EulerSolver::new(g, &Uncoupled, SolverParams::default()).unwrap();
            for _ in 0..(1.0 / dt).round() as usize {
                s = solver.step(&s, dt, &fb).unwrap();
            }
            assert!(s.rho().iter().all(|&r| r == 0.1));
            let exact = e0 * (-2.0 * beta * s.t).exp();
            primitives(&s)
                .unwrap()
                .e
                .iter()
                .fold(0.0f64, |m, &e| m.max((e - exact).abs()))
        };
        let coarse = err_for(0.02);
        let fine = err_for(0.01);
        assert!(coarse < 1e-4 * e0, "{coarse}");
        assert!((coarse / fine).log2() > 1.9);
    }

    #[test]
    fn coupled_uniform_state_decays_at_least_as_fast() {
        let mut cfg = EulerConfig::<f64>::reference();
        cfg.m_cells = 20;
        cfg.t_end = 1.0;
        cfg.initial = EulerInitial::Uniform {
            rho0: 0.1,
            u0: 0.3,
            p0: 0.01,
        };
        let run = simulate_euler(&cfg, &KernelSpec::reference()).unwrap();
        let h0 = run.h[0];
        for (&t, &h) in run.times.iter().zip(&run.h) {
            assert!(h <= h0 * (-4.0 * t).exp() * (1.0 + 1e-3));
        }
        assert!(run.stats.max_q2_integral < 0.0);
        assert_eq!(run.stats.max_abs_q1_integral, 0.0);
    }

    #[test]
    fn reference_setup_one_step_is_admissible() {
        let cfg = EulerConfig::<f64>::reference();
        let g = cfg.grid().unwrap();
        let s = cfg.initial.state(&g).unwrap();
        let fb = cfg.feedback().unwrap();
        let mut solver = EulerSolver::new(g, &KernelSpec::reference(), cfg.params).unwrap();
        let dt = solver.max_dt(&s, &fb);
        let next = solver.step(&s, dt, &fb).unwrap();
        assert!(primitives(&next).is_ok());
        assert!(next.rho().iter().all(|&r| r >= 1e-12));
        assert_eq!(solver.stats().floor_events, 0);
    }

    #[test]
    fn stationary_target_has_near_zero_cost() {
        let mut cfg = EulerConfig::<f64>::reference();
        cfg.m_cells = 20;
        cfg.t_end = 0.5;
        cfg.initial = EulerInitial::Uniform {
            rho0: 0.1,
            u0: 0.1,
            p0: 2.0 * 0.1 * 1e-9,
        };
        let run = simulate_euler(&cfg, &KernelSpec::reference()).unwrap();
        assert!(run.total_cost() < 1e-8);
    }

    #[test]
    fn energy_inequality_for_open_loop_controls() {
        let mut cfg = EulerConfig::<f64>::reference();
        cfg.m_cells = 100;
        let grid = cfg.grid().unwrap();
        let v_bar = 0.1;
        let control = FnEulerControl::new(
            |t: f64, x: f64, u: f64, e: f64| {
                let f1 = 0.5 * (x - t).sin();
                (f1, u * f1 + 0.2 * e * (2.0 * x).cos())
            },
            1.0,
        );
        let mut solver = EulerSolver::new(grid, &KernelSpec::reference(), cfg.params).unwrap();
        let mut s = cfg.initial.state(&grid).unwrap();
        let h0 = h_functional(&grid, &s, v_bar);
        while s.t < 1.0 {
            let dt = solver.max_dt(&s, &control).min(1.0 - s.t);
            s = solver.step(&s, dt, &control).unwrap();
        }
        let (w1, w2) = solver.control_work();
        let lhs = h_functional(&grid, &s, v_bar) - h0;
        assert!(lhs <= w2 - v_bar * w1 + 1e-3 * h0, "{lhs} vs {}", w2 - v_bar * w1);
        assert_eq!(solver.stats().floor_events, 0);
    }

    proptest! {
        #[test]
        fn feedback_cost_identity(
            rho in 1e-3f64..5.0,
            u in -2.0f64..2.0,
            e in 1e-2f64..2.0,
            beta in 0.0f64..5.0,
            v_bar in -2.0f64..2.0,
        ) {
            let s = EulerState::new(0.0, vec![rho, rho], vec![rho * u, rho * u], vec![rho * (e + 0.5 * u * u); 2]).unwrap();
            let fb = EulerFeedback::new(beta, v_bar).unwrap();
            let (f1, f2) = feedback_controls(&s, &fb);
            let g = cost_g(&s, &f1, &f2).unwrap();
            let p = primitives(&s).unwrap();
            let w = p.u[0] - v_bar;
            let expected = beta * beta * rho * w * w + 2.0 * beta * beta * rho * p.e[0];
            prop_assert!((g[0] - expected).abs() <= 1e-12 * expected.max(1e-300));
        }

        #[test]
        fn q2_integral_is_nonpositive(
            cells in prop::collection::vec((0.01f64..2.0, -3.0f64..3.0, 0.0f64..1.0), 2..30),
            gamma in 0.0f64..3.0,
        ) {
            let m = cells.len();
            let g = Grid1D::new(-3.0, 3.0, m).unwrap();
            let rho: Vec<f64> = cells.iter().map(|c| c.0).collect();
            let u: Vec<f64> = cells.iter().map(|c| c.1).collect();
            let p: Vec<f64> = cells.iter().map(|c| 2.0 * c.0 * c.2).collect();
            let s = EulerState::from_primitive(0.0, rho, &u, &p).unwrap();
            let (_, e) = s.velocity_and_internal();
            prop_assume!(e.iter().all(|&v| v >= 0.0));
            let q = q2_source(&g, &s, &KernelSpec::new(1.0, gamma).unwrap()).unwrap();
            prop_assert!(cell_integral(&q, g.dx()) <= 0.0);
        }
    }
}
