//! Empirical-measure view of particle ensembles and an N-scaling study of the
//! mean-field limit.

use num_integer::Integer;

use crate::error::{Error, Result};
use crate::kernel::InteractionKernel;
use crate::particle::{sample_initial, second_moment_rows, simulate, ControlLaw, ParticleState};
use crate::scalar::Scalar;
use crate::turnpike::{c_lambda, certify, cheap_control_check, CostSeries};

/// Uniform atomic measure `(1/N) Σ δ_{x_i} ⊗ δ_{v_i}` on phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure<T> {
    d: usize,
    /// `N × 2d` rows `(x, v)`.
    atoms: Vec<T>,
}

impl<T: Scalar> EmpiricalMeasure<T> {
    pub fn from_state(state: &ParticleState<T>) -> Self {
        let d = state.dim();
        let mut atoms = Vec::with_capacity(2 * d * state.n());
        for i in 0..state.n() {
            atoms.extend_from_slice(state.position(i));
            atoms.extend_from_slice(state.velocity(i));
        }
        Self { d, atoms }
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / (2 * self.d)
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Weight of each atom.
    pub fn weight(&self) -> T {
        T::one() / T::from_count(self.len())
    }

    /// Samples of the `c`-th position coordinate.
    pub fn position_marginal(&self, c: usize) -> Vec<T> {
        self.atoms.chunks_exact(2 * self.d).map(|r| r[c]).collect()
    }

    /// Samples of the `c`-th velocity coordinate.
    pub fn velocity_marginal(&self, c: usize) -> Vec<T> {
        self.atoms.chunks_exact(2 * self.d).map(|r| r[self.d + c]).collect()
    }
}

/// `∫ |v - v̄|² dμ_N`; agrees bit for bit with
/// [`velocity_cost`](crate::particle::velocity_cost) of the underlying state.
pub fn moment2_velocity<T: Scalar>(m: &EmpiricalMeasure<T>, v_bar: &[T]) -> T {
    assert_eq!(v_bar.len(), m.d, "target velocity dimension");
    second_moment_rows(&m.atoms, 2 * m.d, m.d, m.d, v_bar) / T::from_count(m.len())
}

fn sorted<T: Scalar>(a: &[T]) -> Vec<T> {
    let mut s = a.to_vec();
    s.sort_by(|p, q| p.partial_cmp(q).expect("finite samples"));
    s
}

/// Exact W₁ between two uniform empirical measures of the same size on the line:
/// the mean absolute gap between order statistics.
pub fn wasserstein1_1d<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.is_empty() {
        return Err(Error::invalid("samples must be nonempty"));
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.iter().chain(b).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("wasserstein samples"));
    }
    let sa = sorted(a);
    let sb = sorted(b);
    let total = sa
        .iter()
        .zip(&sb)
        .map(|(&p, &q)| (p - q).abs())
        .fold(T::zero(), |x, y| x + y);
    Ok(total / T::from_count(a.len()))
}

/// W₁ between uniform empirical measures of different sizes, computed exactly by
/// replicating each sample so that both sides have `lcm(|a|, |b|)` atoms.
pub fn wasserstein1_1d_uneven<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("samples must be nonempty"));
    }
    if a.len() == b.len() {
        return wasserstein1_1d(a, b);
    }
    let l = a.len().lcm(&b.len());
    if l > 50_000_000 {
        return Err(Error::invalid(format!(
            "common refinement of sizes {} and {} is too large",
            a.len(),
            b.len()
        )));
    }
    let expand = |s: &[T]| -> Vec<T> {
        let k = l / s.len();
        sorted(s).into_iter().flat_map(|v| std::iter::repeat_n(v, k)).collect()
    };
    wasserstein1_1d(&expand(a), &expand(b))
}

/// Parameters shared by every run of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig<T> {
    pub d: usize,
    pub dt: T,
    pub t_end: T,
    pub lambda: T,
    pub sigma: T,
    pub mean_x: Vec<T>,
    pub mean_v: Vec<T>,
    pub v_bar: Vec<T>,
    /// Relative tolerance of the cheap-control and turnpike checks.
    pub tol: T,
}

impl<T: Scalar> StudyConfig<T> {
    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d must be >= 1"));
        }
        for (name, v) in [
            ("mean_x", &self.mean_x),
            ("mean_v", &self.mean_v),
            ("v_bar", &self.v_bar),
        ] {
            if v.len() != self.d {
                return Err(Error::invalid(format!(
                    "{name} has {} entries, expected d = {}",
                    v.len(),
                    self.d
                )));
            }
        }
        if !(self.lambda > T::zero()) {
            return Err(Error::invalid("lambda must be positive"));
        }
        Ok(())
    }
}

/// One row per particle count.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow<T> {
    pub n: usize,
    pub seed: u64,
    pub moment2_t0: T,
    pub moment2_tend: T,
    /// Largest per-coordinate W₁ of the position marginals to the largest-N run at `t_end`.
    pub w1_x: T,
    /// Same for the velocity marginals.
    pub w1_v: T,
    pub cost_total: T,
    pub cheap_control_ok: bool,
    /// Exponential envelope certified from `C₀ = √λ`, `C₁ = C_λ`.
    pub turnpike_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable<T> {
    pub rows: Vec<ConvergenceRow<T>>,
}

impl<T: Scalar> ConvergenceTable<T> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,moment2_t0,moment2_tend,w1_x,w1_v,cost_total\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e}\n",
                r.n,
                r.moment2_t0.as_f64(),
                r.moment2_tend.as_f64(),
                r.w1_x.as_f64(),
                r.w1_v.as_f64(),
                r.cost_total.as_f64()
            ));
        }
        out
    }
}

/// Per-run seed derived from the master seed and the particle count.
pub fn derive_seed(master: u64, n: usize) -> u64 {
    master.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (n as u64).rotate_left(32)
}

struct RunOutcome<T> {
    row: ConvergenceRow<T>,
    final_state: ParticleState<T>,
}

fn run_one<T: Scalar, K: InteractionKernel<T>>(
    n: usize,
    cfg: &StudyConfig<T>,
    kernel: &K,
    master_seed: u64,
) -> Result<RunOutcome<T>> {
    let seed = derive_seed(master_seed, n);
    let init = sample_initial(n, cfg.d, &cfg.mean_x, &cfg.mean_v, cfg.sigma, seed)?;
    let law = ControlLaw::cheap_control(cfg.lambda, cfg.v_bar.clone())?;
    let traj = simulate(&init, kernel, &law, cfg.dt, cfg.t_end, cfg.lambda, &cfg.v_bar)?;

    let m0 = moment2_velocity(&EmpiricalMeasure::from_state(&init), &cfg.v_bar);
    let final_state = traj.final_state().clone();
    let mt = moment2_velocity(&EmpiricalMeasure::from_state(&final_state), &cfg.v_bar);
    let cost_total = traj.total_cost();

    let series = CostSeries::new(traj.times.clone(), traj.state_cost.clone())?;
    let cert = certify(&series, cfg.lambda.sqrt(), c_lambda(cfg.lambda)?, cfg.tol)?;

    Ok(RunOutcome {
        row: ConvergenceRow {
            n,
            seed,
            moment2_t0: m0,
            moment2_tend: mt,
            w1_x: T::zero(),
            w1_v: T::zero(),
            cost_total,
            cheap_control_ok: cheap_control_check(cost_total, m0, cfg.lambda, cfg.tol),
            turnpike_ok: cert.certified(),
        },
        final_state,
    })
}

/// Runs the feedback-controlled system with `β = 1/√λ` for every `N` in
/// `n_list`, each from its own i.i.d. draw, and compares marginals at `t_end`
/// with the largest-`N` run.
///
/// Up to `threads` runs execute concurrently; the table does not depend on
/// the thread count.
pub fn convergence_study<T: Scalar, K: InteractionKernel<T>>(
    n_list: &[usize],
    cfg: &StudyConfig<T>,
    kernel: &K,
    seed: u64,
    threads: usize,
) -> Result<ConvergenceTable<T>> {
    if n_list.len() < 2 {
        return Err(Error::invalid("convergence study needs at least two particle counts"));
    }
    if n_list[0] == 0 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("n_list must be positive and strictly increasing"));
    }
    cfg.validate()?;

    let threads = threads.max(1).min(n_list.len());
    let mut outcomes: Vec<Option<Result<RunOutcome<T>>>> = (0..n_list.len()).map(|_| None).collect();
    if threads == 1 {
        for (slot, &n) in outcomes.iter_mut().zip(n_list) {
            *slot = Some(run_one(n, cfg, kernel, seed));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    scope.spawn(move || {
                        (w..n_list.len())
                            .step_by(threads)
                            .map(|k| (k, run_one(n_list[k], cfg, kernel, seed)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (k, r) in h.join().expect("convergence worker panicked") {
                    outcomes[k] = Some(r);
                }
            }
        });
    }
    let outcomes: Vec<RunOutcome<T>> = outcomes
        .into_iter()
        .map(|o| o.expect("every run scheduled"))
        .collect::<Result<_>>()?;

    let reference = EmpiricalMeasure::from_state(&outcomes.last().expect("nonempty").final_state);
    let mut rows = Vec::with_capacity(outcomes.len());
    for out in outcomes {
        let m = EmpiricalMeasure::from_state(&out.final_state);
        let mut row = out.row;
        for c in 0..cfg.d {
            row.w1_x = row.w1_x.max(wasserstein1_1d_uneven(
                &m.position_marginal(c),
                &reference.position_marginal(c),
            )?);
            row.w1_v = row.w1_v.max(wasserstein1_1d_uneven(
                &m.velocity_marginal(c),
                &reference.velocity_marginal(c),
            )?);
        }
        rows.push(row);
    }
    Ok(ConvergenceTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::particle::velocity_cost;
    use proptest::prelude::*;

    /// Minimum over all n! matchings; the independent oracle for the sorted formula.
    fn brute_force_w1(a: &[f64], b: &[f64]) -> f64 {
        fn permute(k: usize, perm: &mut Vec<usize>, a: &[f64], b: &[f64], best: &mut f64) {
            if k == perm.len() {
                let cost: f64 = perm.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum();
                *best = best.min(cost);
                return;
            }
            for s in k..perm.len() {
                perm.swap(k, s);
                permute(k + 1, perm, a, b, best);
                perm.swap(k, s);
            }
        }
        let mut perm: Vec<usize> = (0..a.len()).collect();
        let mut best = f64::INFINITY;
        permute(0, &mut perm, a, b, &mut best);
        best / a.len() as f64
    }

    #[test]
    fn w1_examples() {
        assert_eq!(wasserstein1_1d(&[0.3, 0.1], &[0.1, 0.3]).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        let w = wasserstein1_1d::<f64>(&[0.0, 5.0, 9.0], &[1.0, 2.0, 12.0]).unwrap();
        assert!((w - 7.0 / 3.0).abs() < 1e-15);
        assert!((brute_force_w1(&[0.0, 5.0, 9.0], &[1.0, 2.0, 12.0]) - 7.0 / 3.0).abs() < 1e-15);
        assert!(wasserstein1_1d(&[0.0], &[0.0, 1.0]).is_err());
        assert!(wasserstein1_1d::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn uneven_sizes_by_replication() {
        let a = [0.0, 1.0];
        let b = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(wasserstein1_1d_uneven(&a, &b).unwrap(), 0.0);
        // Point mass at 0 against uniform on {0, 1, 2}: mean distance 1.
        assert!((wasserstein1_1d_uneven::<f64>(&[0.0], &[0.0, 1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        // sizes 2 and 3 refine to 6 atoms
        let w = wasserstein1_1d_uneven(&[0.0, 3.0], &[0.0, 1.0, 2.0]).unwrap();
        let oracle = brute_force_w1(&[0.0, 0.0, 0.0, 3.0, 3.0, 3.0], &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
        assert!((w - oracle).abs() < 1e-15);
    }

    #[test]
    fn moment2_matches_velocity_cost() {
        let s = sample_initial::<f64>(257, 3, &[1.0, 0.0, -1.0], &[0.2, 0.0, 0.1], 0.8, 99).unwrap();
        let vb = [0.5, -0.25, 0.0];
        let m = EmpiricalMeasure::from_state(&s);
        assert_eq!(moment2_velocity(&m, &vb).to_bits(), velocity_cost(&s, &vb).to_bits());
        assert_eq!(m.len(), 257);
        assert_eq!(m.weight() * 257.0, 1.0);
        let one = ParticleState::from_1d(0.0, vec![3.0], vec![2.0]).unwrap();
        assert_eq!(moment2_velocity(&EmpiricalMeasure::from_state(&one), &[0.0]), 4.0);
        let still = ParticleState::from_1d(0.0, vec![3.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(moment2_velocity(&EmpiricalMeasure::from_state(&still), &[0.5]), 0.0);
    }

    fn study_config(sigma: f64) -> StudyConfig<f64> {
        StudyConfig {
            d: 1,
            dt: 0.1,
            t_end: 2.0,
            lambda: 0.25,
            sigma,
            mean_x: vec![1.0],
            mean_v: vec![0.0],
            v_bar: vec![0.5],
            tol: 1e-3,
        }
    }

    #[test]
    fn point_mass_study_has_no_sampling_noise() {
        let cfg = study_config(0.0);
        let t = convergence_study(&[100, 1000, 10_000], &cfg, &KernelSpec::reference(), 1, 1).unwrap();
        assert_eq!(t.rows.len(), 3);
        for r in &t.rows {
            assert_eq!(r.w1_x, 0.0);
            assert_eq!(r.w1_v, 0.0);
            // Identical atoms; only the N-term summation order differs.
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
            assert!(close(r.moment2_t0, t.rows[0].moment2_t0));
            assert!(close(r.moment2_tend, t.rows[0].moment2_tend));
            assert!(close(r.cost_total, t.rows[0].cost_total));
        }
    }

    #[test]
    fn study_is_thread_count_independent() {
        let cfg = study_config(1.0);
        let k = KernelSpec::reference();
        let a = convergence_study(&[10, 20, 40], &cfg, &k, 5, 1).unwrap();
        let b = convergence_study(&[10, 20, 40], &cfg, &k, 5, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.rows.iter().all(|r| r.cheap_control_ok && r.turnpike_ok));
        assert!(a
            .to_csv()
            .starts_with("N,moment2_t0,moment2_tend,w1_x,w1_v,cost_total\n"));
    }

    #[test]
    fn study_rejects_bad_lists() {
        let cfg = study_config(1.0);
        let k = KernelSpec::reference();
        assert!(convergence_study(&[10], &cfg, &k, 1, 1).is_err());
        assert!(convergence_study(&[20, 10], &cfg, &k, 1, 1).is_err());
        assert!(convergence_study(&[0, 10], &cfg, &k, 1, 1).is_err());
    }

    fn sample_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn sorted_matching_is_optimal(
            (a, b) in (1usize..=6).prop_flat_map(|n| (sample_vec(n), sample_vec(n)))
        ) {
            let w = wasserstein1_1d(&a, &b).unwrap();
            let oracle = brute_force_w1(&a, &b);
            prop_assert!((w - oracle).abs() <= 1e-12 * (1.0 + oracle));
        }

        #[test]
        fn metric_axioms(
            (a, b, c) in (1usize..40).prop_flat_map(|n| (sample_vec(n), sample_vec(n), sample_vec(n)))
        ) {
            let ab = wasserstein1_1d(&a, &b).unwrap();
            let ba = wasserstein1_1d(&b, &a).unwrap();
            let bc = wasserstein1_1d(&b, &c).unwrap();
            let ac = wasserstein1_1d(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
