//! Pressureless Euler with nonlocal alignment and a momentum control:
//!
//! ```text
//! ρ_t + (ρu)_x = 0
//! (ρu)_t + (ρu²)_x = Q₁ + ρ f_H
//! ```

use super::{
    cell_integral, check_cfl, flux_divergence, next_stop, q1_with, Grid1D, PairWeights, SolverParams, SolverStats,
};
use crate::error::{Error, Result};
use crate::kernel::InteractionKernel;
use crate::scalar::Scalar;

/// Cell averages of density and momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct PressurelessState<T> {
    pub t: T,
    rho: Vec<T>,
    mom: Vec<T>,
}

impl<T: Scalar> PressurelessState<T> {
    pub fn new(t: T, rho: Vec<T>, mom: Vec<T>) -> Result<Self> {
        if rho.len() < 2 {
            return Err(Error::invalid("pressureless state needs at least 2 cells"));
        }
        if rho.len() != mom.len() {
            return Err(Error::DimensionMismatch {
                expected: rho.len(),
                got: mom.len(),
            });
        }
        if rho.iter().chain(&mom).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pressureless state"));
        }
        if let Some(i) = rho.iter().position(|&r| r <= T::zero()) {
            return Err(Error::invalid(format!(
                "density must be positive, cell {i} has {}",
                rho[i]
            )));
        }
        Ok(Self { t, rho, mom })
    }

    /// Builds the state from density and velocity.
    pub fn from_primitive(t: T, rho: Vec<T>, u: &[T]) -> Result<Self> {
        if rho.len() != u.len() {
            return Err(Error::DimensionMismatch {
                expected: rho.len(),
                got: u.len(),
            });
        }
        let mom = rho.iter().zip(u).map(|(&r, &v)| r * v).collect();
        Self::new(t, rho, mom)
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

    pub fn velocity(&self) -> Vec<T> {
        self.rho.iter().zip(&self.mom).map(|(&r, &m)| m / r).collect()
    }

    pub fn mass(&self, dx: T) -> T {
        cell_integral(&self.rho, dx)
    }
}

/// A momentum control field `f_H(t, x)` that may depend on the current state.
pub trait MomentumControl<T: Scalar> {
    /// Writes `f_H` for every cell into `out`.
    fn force(&self, t: T, x: &[T], rho: &[T], u: &[T], out: &mut [T]);

    /// Upper bound on how fast the control relaxes the velocity; enters the
    /// source time-step limit.
    fn rate(&self) -> T;
}

/// `f_H = -β(u - v̄)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HydroFeedback<T> {
    beta: T,
    v_bar: T,
}

impl<T: Scalar> HydroFeedback<T> {
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

    /// The gain `β = 1/√λ`.
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
}

impl<T: Scalar> MomentumControl<T> for HydroFeedback<T> {
    fn force(&self, _t: T, _x: &[T], _rho: &[T], u: &[T], out: &mut [T]) {
        for (o, &ui) in out.iter_mut().zip(u) {
            *o = -self.beta * (ui - self.v_bar);
        }
    }

    fn rate(&self) -> T {
        self.beta
    }
}

/// A control given by a closure `(t, x, u) -> f_H` with a declared rate bound.
pub struct FnMomentumControl<F, T> {
    f: F,
    rate: T,
}

impl<F: Fn(T, T, T) -> T, T: Scalar> FnMomentumControl<F, T> {
    pub fn new(f: F, rate: T) -> Self {
        Self { f, rate }
    }
}

impl<F: Fn(T, T, T) -> T, T: Scalar> MomentumControl<T> for FnMomentumControl<F, T> {
    fn force(&self, t: T, x: &[T], _rho: &[T], u: &[T], out: &mut [T]) {
        for ((o, &xi), &ui) in out.iter_mut().zip(x).zip(u) {
            *o = (self.f)(t, xi, ui);
        }
    }

    fn rate(&self) -> T {
        self.rate
    }
}

/// Nonlocal momentum source `Q₁` on the grid centers.
pub fn q1_source<T: Scalar, K: InteractionKernel<T> + ?Sized>(
    grid: &Grid1D<T>,
    state: &PressurelessState<T>,
    kernel: &K,
) -> Result<Vec<T>> {
    check_len(grid, state.len())?;
    let w = PairWeights::new(grid, kernel);
    Ok(q1_with(&w, &state.rho, &state.velocity(), grid.dx()))
}

/// Rusanov flux for `(ρ, m)` with wave speed `max(|u_L|, |u_R|)`.
pub fn flux_rusanov_pless<T: Scalar>(left: (T, T), right: (T, T)) -> (T, T) {
    let (rl, ml) = left;
    let (rr, mr) = right;
    let ul = ml / rl;
    let ur = mr / rr;
    let s = ul.abs().max(ur.abs());
    let half = T::lit(0.5);
    (
        half * (ml + mr) - half * s * (rr - rl),
        half * (ml * ul + mr * ur) - half * s * (mr - ml),
    )
}

/// `ℰ = ½ Σ ρ_i (u_i - v̄)² dx`.
pub fn energy_e<T: Scalar>(grid: &Grid1D<T>, state: &PressurelessState<T>, v_bar: T) -> T {
    let half = T::lit(0.5);
    let density: Vec<T> = state
        .rho
        .iter()
        .zip(&state.mom)
        .map(|(&r, &m)| {
            let w = m / r - v_bar;
            half * r * w * w
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
pub struct PressurelessSolver<T> {
    grid: Grid1D<T>,
    centers: Vec<T>,
    weights: PairWeights<T>,
    params: SolverParams<T>,
    stats: SolverStats<T>,
}

impl<T: Scalar> PressurelessSolver<T> {
    pub fn new<K: InteractionKernel<T> + ?Sized>(grid: Grid1D<T>, kernel: &K, params: SolverParams<T>) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            centers: grid.centers(),
            weights: PairWeights::new(&grid, kernel),
            grid,
            params,
            stats: SolverStats::default(),
        })
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn stats(&self) -> &SolverStats<T> {
        &self.stats
    }

    /// Largest step allowed by the transport and source limits.
    pub fn max_dt(&self, state: &PressurelessState<T>, control: &dyn MomentumControl<T>) -> T {
        let speed = state
            .rho
            .iter()
            .zip(&state.mom)
            .fold(T::zero(), |s, (&r, &m)| s.max((m / r).abs()));
        let rate = control.rate() + self.weights.bound() * state.mass(self.grid.dx());
        self.params.max_dt(self.grid.dx(), speed, rate)
    }

    fn rhs(&mut self, t: T, rho: &[T], mom: &[T], control: &dyn MomentumControl<T>) -> (Vec<T>, Vec<T>) {
        let m = rho.len();
        let dx = self.grid.dx();
        let u: Vec<T> = rho.iter().zip(mom).map(|(&r, &p)| p / r).collect();
        let mut f_rho = vec![T::zero(); m];
        let mut f_mom = vec![T::zero(); m];
        for i in 0..m {
            let j = (i + 1) % m;
            let (a, b) = flux_rusanov_pless((rho[i], mom[i]), (rho[j], mom[j]));
            f_rho[i] = a;
            f_mom[i] = b;
        }
        let mut d_rho = vec![T::zero(); m];
        let mut d_mom = vec![T::zero(); m];
        flux_divergence(&f_rho, dx, &mut d_rho);
        flux_divergence(&f_mom, dx, &mut d_mom);

        let q1 = q1_with(&self.weights, rho, &u, dx);
        let q1_int = cell_integral(&q1, dx).abs();
        self.stats.max_abs_q1_integral = self.stats.max_abs_q1_integral.max(q1_int);
        self.stats.stages += 1;

        let mut force = vec![T::zero(); m];
        control.force(t, &self.centers, rho, &u, &mut force);
        for i in 0..m {
            d_mom[i] += q1[i] + rho[i] * force[i];
        }
        (d_rho, d_mom)
    }

    fn apply_floor(&mut self, rho: &mut [T], mom: &mut [T]) {
        let floor = self.params.rho_floor;
        for (r, m) in rho.iter_mut().zip(mom.iter_mut()) {
            if *r < floor {
                *m = if *r > T::zero() { *m * (floor / *r) } else { T::zero() };
                *r = floor;
                self.stats.floor_events += 1;
            }
        }
    }

    /// One SSP-RK2 (Heun) step.
    pub fn step(
        &mut self,
        state: &PressurelessState<T>,
        dt: T,
        control: &dyn MomentumControl<T>,
    ) -> Result<PressurelessState<T>> {
        check_len(&self.grid, state.len())?;
        check_cfl(dt, self.max_dt(state, control))?;
        let m = state.len();
        let half = T::lit(0.5);

        let (k_rho, k_mom) = self.rhs(state.t, &state.rho, &state.mom, control);
        let mut rho1: Vec<T> = (0..m).map(|i| state.rho[i] + dt * k_rho[i]).collect();
        let mut mom1: Vec<T> = (0..m).map(|i| state.mom[i] + dt * k_mom[i]).collect();
        self.apply_floor(&mut rho1, &mut mom1);

        let (k_rho, k_mom) = self.rhs(state.t + dt, &rho1, &mom1, control);
        let mut rho: Vec<T> = (0..m)
            .map(|i| half * state.rho[i] + half * (rho1[i] + dt * k_rho[i]))
            .collect();
        let mut mom: Vec<T> = (0..m)
            .map(|i| half * state.mom[i] + half * (mom1[i] + dt * k_mom[i]))
            .collect();
        self.apply_floor(&mut rho, &mut mom);
        self.stats.steps += 1;

        let t = state.t + dt;
        if rho.iter().chain(&mom).any(|v| !v.is_finite()) {
            return Err(Error::Blowup {
                time: t.as_f64(),
                detail: "non-finite density or momentum".into(),
            });
        }
        Ok(PressurelessState { t, rho, mom })
    }
}

/// One step with default solver parameters.
pub fn step<T: Scalar, K: InteractionKernel<T> + ?Sized>(
    state: &PressurelessState<T>,
    grid: &Grid1D<T>,
    dt: T,
    kernel: &K,
    fb: &HydroFeedback<T>,
) -> Result<PressurelessState<T>> {
    PressurelessSolver::new(*grid, kernel, SolverParams::default())?.step(state, dt, fb)
}

/// Initial data for a pressureless run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlessInitial<T> {
    /// `ρ = rho0`, `u = exp(-2x²)`.
    Bump { rho0: T },
    /// `ρ = rho0`, `u = u0`.
    Uniform { rho0: T, u0: T },
}

impl<T: Scalar> PlessInitial<T> {
    pub fn state(&self, grid: &Grid1D<T>) -> Result<PressurelessState<T>> {
        let x = grid.centers();
        let (rho0, u): (T, Vec<T>) = match *self {
            PlessInitial::Bump { rho0 } => (rho0, x.iter().map(|&xi| (-T::lit(2.0) * xi * xi).exp()).collect()),
            PlessInitial::Uniform { rho0, u0 } => (rho0, vec![u0; x.len()]),
        };
        PressurelessState::from_primitive(T::zero(), vec![rho0; x.len()], &u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlessConfig<T> {
    pub x_min: T,
    pub x_max: T,
    pub m_cells: usize,
    pub params: SolverParams<T>,
    pub beta: T,
    pub v_bar: T,
    pub lambda: T,
    pub t_end: T,
    pub initial: PlessInitial<T>,
    /// Times at which the state is stored; the final state is always kept.
    pub snapshot_times: Vec<T>,
}

impl<T: Scalar> PlessConfig<T> {
    /// The reference run: `ρ₀ = 0.1`, `u₀ = exp(-2x²)`, `β = 2`, `v̄ = -0.1`,
    /// `λ = 1` on `[-5, 5]` with 200 cells up to `T = 4`.
    pub fn reference() -> Self {
        Self {
            x_min: T::lit(-5.0),
            x_max: T::lit(5.0),
            m_cells: 200,
            params: SolverParams::default(),
            beta: T::lit(2.0),
            v_bar: T::lit(-0.1),
            lambda: T::one(),
            t_end: T::lit(4.0),
            initial: PlessInitial::Bump { rho0: T::lit(0.1) },
            snapshot_times: Vec::new(),
        }
    }

    pub fn grid(&self) -> Result<Grid1D<T>> {
        Grid1D::new(self.x_min, self.x_max, self.m_cells)
    }

    pub fn feedback(&self) -> Result<HydroFeedback<T>> {
        HydroFeedback::new(self.beta, self.v_bar)
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

/// Recorded history of a pressureless run, sampled after every step.
#[derive(Debug, Clone)]
pub struct PlessRun<T> {
    pub grid: Grid1D<T>,
    pub lambda: T,
    pub times: Vec<T>,
    pub energy: Vec<T>,
    /// `∫ ρ|u - v̄|² dx`.
    pub state_cost: Vec<T>,
    /// `∫ ρ|f_H|² dx`.
    pub control_cost: Vec<T>,
    pub mass: Vec<T>,
    pub snapshots: Vec<PressurelessState<T>>,
    pub stats: SolverStats<T>,
}

impl<T: Scalar> PlessRun<T> {
    /// `state_cost + λ·control_cost` at every sample.
    pub fn total_integrand(&self) -> Vec<T> {
        self.state_cost
            .iter()
            .zip(&self.control_cost)
            .map(|(&s, &c)| s + self.lambda * c)
            .collect()
    }

    pub fn total_cost(&self) -> T {
        crate::particle::trapezoid(&self.times, &self.total_integrand())
    }

    pub fn final_state(&self) -> &PressurelessState<T> {
        self.snapshots.last().expect("run keeps its final state")
    }

    /// Largest `|mass(t) - mass(0)| / mass(0)`.
    pub fn mass_drift(&self) -> T {
        let m0 = self.mass[0];
        self.mass.iter().fold(T::zero(), |d, &m| d.max(((m - m0) / m0).abs()))
    }
}

fn record<T: Scalar>(run: &mut PlessRun<T>, state: &PressurelessState<T>, fb: &HydroFeedback<T>) {
    let dx = run.grid.dx();
    let e = energy_e(&run.grid, state, fb.v_bar);
    let state_cost = T::lit(2.0) * e;
    run.times.push(state.t);
    run.energy.push(e);
    run.state_cost.push(state_cost);
    run.control_cost.push(fb.beta * fb.beta * state_cost);
    run.mass.push(state.mass(dx));
}

/// Runs the feedback-controlled system to `cfg.t_end` with adaptive steps.
pub fn simulate_pless<T: Scalar, K: InteractionKernel<T> + ?Sized>(
    cfg: &PlessConfig<T>,
    kernel: &K,
) -> Result<PlessRun<T>> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let fb = cfg.feedback()?;
    let mut solver = PressurelessSolver::new(grid, kernel, cfg.params)?;
    let mut state = cfg.initial.state(&grid)?;
    let mut run = PlessRun {
        grid,
        lambda: cfg.lambda,
        times: Vec::new(),
        energy: Vec::new(),
        state_cost: Vec::new(),
        control_cost: Vec::new(),
        mass: Vec::new(),
        snapshots: Vec::new(),
        stats: SolverStats::default(),
    };
    record(&mut run, &state, &fb);
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
        record(&mut run, &state, &fb);
    }
    run.snapshots.push(state);
    run.stats = *solver.stats();
    Ok(run)
}
