//! One-dimensional finite-volume solvers for the two moment closures:
//! pressureless Euler ([`pressureless`]) and full Euler ([`euler`]).
//!
//! Both use a uniform periodic grid, Rusanov fluxes, SSP-RK2 (Heun) time
//! stepping with the nonlocal alignment and control sources evaluated inside
//! every stage, and midpoint quadrature over cell centers for the nonlocal
//! integrals. Distances inside Ψ are plain Euclidean distances between
//! centers, not periodic ones.

pub mod euler;
pub mod pressureless;

use crate::error::{Error, Result};
use crate::kernel::InteractionKernel;
use crate::scalar::{ordered_sum, Scalar};

/// Uniform grid of `m_cells` cells on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D<T> {
    x_min: T,
    x_max: T,
    m_cells: usize,
}

impl<T: Scalar> Grid1D<T> {
    pub fn new(x_min: T, x_max: T, m_cells: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(Error::invalid(format!(
                "grid needs x_max > x_min, got [{x_min}, {x_max}]"
            )));
        }
        if m_cells < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 cells, got {m_cells}")));
        }
        Ok(Self { x_min, x_max, m_cells })
    }

    pub fn x_min(&self) -> T {
        self.x_min
    }

    pub fn x_max(&self) -> T {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.m_cells
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> T {
        (self.x_max - self.x_min) / T::from_count(self.m_cells)
    }

    pub fn center(&self, i: usize) -> T {
        self.x_min + (T::from_count(i) + T::lit(0.5)) * self.dx()
    }

    pub fn centers(&self) -> Vec<T> {
        (0..self.m_cells).map(|i| self.center(i)).collect()
    }
}

/// Discrete integral `(Σ_i values_i) · dx` with the sum taken in cell order.
pub fn cell_integral<T: Scalar>(values: &[T], dx: T) -> T {
    ordered_sum(values) * dx
}

/// Symmetric matrix `Ψ(x_i, x_j)` over cell centers.
#[derive(Debug, Clone)]
pub struct PairWeights<T> {
    m: usize,
    w: Vec<T>,
    bound: T,
}

impl<T: Scalar> PairWeights<T> {
    pub fn new<K: InteractionKernel<T> + ?Sized>(grid: &Grid1D<T>, kernel: &K) -> Self {
        let m = grid.len();
        let c = grid.centers();
        let mut w = vec![T::zero(); m * m];
        for i in 0..m {
            for j in i..m {
                let v = kernel.psi(&c[i..i + 1], &c[j..j + 1]);
                w[i * m + j] = v;
                w[j * m + i] = v;
            }
        }
        Self {
            m,
            w,
            bound: kernel.bound(),
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.w[i * self.m..(i + 1) * self.m]
    }

    pub fn bound(&self) -> T {
        self.bound
    }
}

/// `Q₁(x_i) = ρ_i Σ_j Ψ_ij ρ_j (u_j - u_i) dx`.
///
/// The last cell takes the negated ordered sum of the others, so its value
/// differs from the formula only by accumulated rounding and the discrete
/// integral [`cell_integral`] of the result is exactly zero.
pub(crate) fn q1_with<T: Scalar>(weights: &PairWeights<T>, rho: &[T], u: &[T], dx: T) -> Vec<T> {
    let m = rho.len();
    let mut q = Vec::with_capacity(m);
    for i in 0..m.saturating_sub(1) {
        let row = weights.row(i);
        let ui = u[i];
        let mut acc = T::zero();
        for j in 0..m {
            acc += row[j] * rho[j] * (u[j] - ui);
        }
        q.push(rho[i] * acc * dx);
    }
    let closing = -ordered_sum(&q);
    q.push(closing);
    q
}

/// `Q₂(x_i) = ρ_i Σ_j Ψ_ij ρ_j (u_i u_j - E_i - E_j) dx`, evaluated through the
/// pointwise-equal form `-(e_i + e_j + ½(u_i - u_j)²)` so that every term is
/// nonpositive whenever the internal energies are.
pub(crate) fn q2_with<T: Scalar>(weights: &PairWeights<T>, rho: &[T], u: &[T], e: &[T], dx: T) -> Vec<T> {
    let m = rho.len();
    let half = T::lit(0.5);
    (0..m)
        .map(|i| {
            let row = weights.row(i);
            let mut acc = T::zero();
            for j in 0..m {
                let du = u[i] - u[j];
                acc += row[j] * rho[j] * (e[i] + e[j] + half * du * du);
            }
            -(rho[i] * acc * dx)
        })
        .collect()
}

/// Time step and positivity parameters shared by both solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams<T> {
    /// Courant number for the transport part: `dt ≤ cfl·dx / max wave speed`.
    pub cfl: T,
    /// Bound on `dt · rate` for the stiffest source mode.
    pub source_cfl: T,
    pub rho_floor: T,
    pub e_floor: T,
    pub q2_form: Q2Form,
}

impl<T: Scalar> Default for SolverParams<T> {
    fn default() -> Self {
        Self {
            cfl: T::lit(0.4),
            source_cfl: T::lit(0.1),
            rho_floor: T::lit(1e-12),
            e_floor: T::lit(1e-10),
            q2_form: Q2Form::Moment,
        }
    }
}

impl<T: Scalar> SolverParams<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: T| v.is_finite() && v > T::zero();
        if !positive(self.cfl) || self.cfl > T::one() {
            return Err(Error::invalid(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !positive(self.source_cfl) || self.source_cfl > T::one() {
            return Err(Error::invalid(format!(
                "source_cfl must lie in (0, 1], got {}",
                self.source_cfl
            )));
        }
        if !positive(self.rho_floor) {
            return Err(Error::invalid(format!(
                "rho_floor must be positive, got {}",
                self.rho_floor
            )));
        }
        if !positive(self.e_floor) {
            return Err(Error::invalid(format!(
                "e_floor must be positive, got {}",
                self.e_floor
            )));
        }
        Ok(())
    }

    /// Largest admissible step for the given wave speed and source rate.
    pub(crate) fn max_dt(&self, dx: T, speed: T, rate: T) -> T {
        let flux = if speed > T::zero() {
            self.cfl * dx / speed
        } else {
            T::infinity()
        };
        let source = if rate > T::zero() {
            self.source_cfl / rate
        } else {
            T::infinity()
        };
        flux.min(source)
    }
}

/// Rejects `dt` above `limit` beyond round-off.
pub(crate) fn check_cfl<T: Scalar>(dt: T, limit: T) -> Result<()> {
    if !(dt.is_finite() && dt > T::zero()) {
        return Err(Error::invalid(format!(
            "time step must be positive and finite, got {dt}"
        )));
    }
    if dt > limit * (T::one() + T::lit(1e-9)) {
        return Err(Error::CflViolation {
            dt: dt.as_f64(),
            limit: limit.as_f64(),
        });
    }
    Ok(())
}

/// Pointwise form of the nonlocal energy source `Q₂`.
///
/// Both forms have the same integral over the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Q2Form {
    /// `ρ_i Σ_j Ψ_ij ρ_j (u_i u_j - E_i - E_j) dx`, symmetric in `(i, j)`.
    ///
    /// Its internal-energy part contains `-½ρ_i Σ_j Ψ_ij ρ_j (u_j² - u_i²) dx`,
    /// which does not vanish with `e` and can drive slow cells to `e ≤ 0`.
    Symmetrized,
    /// `ρ_i Σ_j Ψ_ij ρ_j (u_i u_j - 2E_i) dx`, the energy moment of the
    /// kinetic alignment operator. Its internal-energy part is
    /// `-2 e_i ρ_i Σ_j Ψ_ij ρ_j dx`, so it never drives `e` negative.
    #[default]
    Moment,
}

/// `Q₂` in [`Q2Form::Moment`] form, evaluated as
/// `-ρ_i Σ_j Ψ_ij ρ_j (2e_i + u_i(u_i - u_j)) dx`.
pub(crate) fn q2_moment_with<T: Scalar>(weights: &PairWeights<T>, rho: &[T], u: &[T], e: &[T], dx: T) -> Vec<T> {
    let m = rho.len();
    let two = T::lit(2.0);
    (0..m)
        .map(|i| {
            let row = weights.row(i);
            let mut acc = T::zero();
            for j in 0..m {
                acc += row[j] * rho[j] * (two * e[i] + u[i] * (u[i] - u[j]));
            }
            -(rho[i] * acc * dx)
        })
        .collect()
}

/// Counters accumulated by a solver over its lifetime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverStats<T> {
    pub steps: usize,
    pub stages: usize,
    /// Cells raised to a density or internal-energy floor.
    pub floor_events: usize,
    /// Largest `|Σ Q₁ dx|` seen at any stage.
    pub max_abs_q1_integral: T,
    /// Largest `Σ Q₂ dx` seen at any stage (full Euler only).
    pub max_q2_integral: T,
}

impl<T: Scalar> Default for SolverStats<T> {
    fn default() -> Self {
        Self {
            steps: 0,
            stages: 0,
            floor_events: 0,
            max_abs_q1_integral: T::zero(),
            max_q2_integral: T::neg_infinity(),
        }
    }
}

/// Snapshot schedule helper: the next requested time strictly after `t`.
pub(crate) fn next_stop<T: Scalar>(t: T, stops: &[T], t_end: T) -> T {
    stops
        .iter()
        .copied()
        .filter(|&s| s > t && s < t_end)
        .fold(t_end, T::min)
}

/// Periodic conservative update `-(F_{i+1/2} - F_{i-1/2})/dx` for one component.
pub(crate) fn flux_divergence<T: Scalar>(face_flux: &[T], dx: T, out: &mut [T]) {
    let m = face_flux.len();
    for i in 0..m {
        let left = if i == 0 { face_flux[m - 1] } else { face_flux[i - 1] };
        out[i] = -(face_flux[i] - left) / dx;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;

    #[test]
    fn grid_geometry() {
        let g = Grid1D::<f64>::new(-5.0, 5.0, 200).unwrap();
        assert!((g.dx() - 0.05).abs() < 1e-15);
        assert!((g.center(0) + 4.975).abs() < 1e-12);
        assert!((g.center(199) - 4.975).abs() < 1e-12);
        assert!(Grid1D::new(1.0, 1.0, 10).is_err());
        assert!(Grid1D::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn q1_two_cells() {
        let g = Grid1D::new(0.0, 2.0, 2).unwrap();
        let w = PairWeights::new(&g, &KernelSpec::constant(1.0).unwrap());
        let q = q1_with(&w, &[1.0, 1.0], &[0.0, 2.0], g.dx());
        assert_eq!(q, vec![2.0, -2.0]);
    }

    #[test]
    fn weights_are_symmetric() {
        let g = Grid1D::<f64>::new(-3.0, 4.0, 17).unwrap();
        let w = PairWeights::new(&g, &KernelSpec::reference());
        for i in 0..17 {
            for j in 0..17 {
                assert_eq!(w.row(i)[j].to_bits(), w.row(j)[i].to_bits());
            }
        }
    }

    #[test]
    fn stop_schedule() {
        assert_eq!(next_stop(0.0, &[0.5, 4.0], 4.0), 0.5);
        assert_eq!(next_stop(0.5, &[0.5, 4.0], 4.0), 4.0);
        assert_eq!(next_stop(0.0, &[], 2.0), 2.0);
    }
}
