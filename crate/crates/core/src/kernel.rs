//! Interaction kernels Ψ(x, y).
//!
//! Every level of the hierarchy (particles, empirical measures, both
//! hydrodynamic closures) weighs pairwise alignment with the same symmetric,
//! bounded kernel. The built-in family is `C / (1 + |x - y|²)^γ`; other kernels
//! can be plugged in through [`InteractionKernel`] after passing
//! [`ValidatedKernel::register`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A symmetric, bounded, positive pairwise weight.
pub trait InteractionKernel<T: Scalar>: Send + Sync {
    /// Ψ(x, y). Callers guarantee `x.len() == y.len()`.
    fn psi(&self, x: &[T], y: &[T]) -> T;

    /// Upper bound C_Ψ with `Ψ ≤ C_Ψ` everywhere.
    fn bound(&self) -> T;
}

impl<T: Scalar, K: InteractionKernel<T> + ?Sized> InteractionKernel<T> for &K {
    #[inline]
    fn psi(&self, x: &[T], y: &[T]) -> T {
        (**self).psi(x, y)
    }

    #[inline]
    fn bound(&self) -> T {
        (**self).bound()
    }
}

/// Parameters of the prototype kernel `c_psi / (1 + |x - y|²)^gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<T> {
    c_psi: T,
    gamma: T,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn new(c_psi: T, gamma: T) -> Result<Self> {
        if !(c_psi.is_finite() && c_psi > T::zero()) {
            return Err(Error::invalid(format!(
                "kernel.c_psi must be positive and finite, got {c_psi}"
            )));
        }
        if !(gamma.is_finite() && gamma >= T::zero()) {
            return Err(Error::invalid(format!(
                "kernel.gamma must be nonnegative and finite, got {gamma}"
            )));
        }
        Ok(Self { c_psi, gamma })
    }

    /// The kernel used throughout the reference experiments: `C_Ψ = 1`, `γ = 1`.
    pub fn reference() -> Self {
        Self {
            c_psi: T::one(),
            gamma: T::one(),
        }
    }

    /// Ψ ≡ c: the `gamma = 0` member of the family.
    pub fn constant(c: T) -> Result<Self> {
        Self::new(c, T::zero())
    }

    pub fn c_psi(&self) -> T {
        self.c_psi
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// Evaluates the kernel from a squared distance.
    ///
    /// Both arguments of Ψ enter only through `|x - y|²`, which makes
    /// `Ψ(x, y)` and `Ψ(y, x)` bit-identical.
    #[inline]
    pub fn from_dist_sq(&self, r2: T) -> T {
        let base = T::one() + r2;
        let g = self.gamma;
        let denom = if g == T::zero() {
            T::one()
        } else if g == T::one() {
            base
        } else if g == T::lit(2.0) {
            base * base
        } else {
            base.powf(g)
        };
        self.c_psi / denom
    }
}

impl<T: Scalar> InteractionKernel<T> for KernelSpec<T> {
    #[inline]
    fn psi(&self, x: &[T], y: &[T]) -> T {
        self.from_dist_sq(dist_sq(x, y))
    }

    #[inline]
    fn bound(&self) -> T {
        self.c_psi
    }
}

/// Ψ ≡ 0. Not a valid interaction kernel (it violates positivity); it exists
/// to switch the nonlocal alignment off when isolating transport or control.
#[derive(Debug, Clone, Copy, Default)]
pub struct Uncoupled;

impl<T: Scalar> InteractionKernel<T> for Uncoupled {
    #[inline]
    fn psi(&self, _x: &[T], _y: &[T]) -> T {
        T::zero()
    }

    #[inline]
    fn bound(&self) -> T {
        T::zero()
    }
}

/// A user kernel given as a closure plus its declared bound.
pub struct FnKernel<F, T> {
    f: F,
    bound: T,
}

impl<F, T> FnKernel<F, T>
where
    T: Scalar,
    F: Fn(&[T], &[T]) -> T + Send + Sync,
{
    pub fn new(f: F, bound: T) -> Self {
        Self { f, bound }
    }
}

impl<F, T> InteractionKernel<T> for FnKernel<F, T>
where
    T: Scalar,
    F: Fn(&[T], &[T]) -> T + Send + Sync,
{
    #[inline]
    fn psi(&self, x: &[T], y: &[T]) -> T {
        (self.f)(x, y)
    }

    #[inline]
    fn bound(&self) -> T {
        self.bound
    }
}

/// A kernel that survived a randomized check of symmetry, positivity and boundedness.
#[derive(Debug, Clone)]
pub struct ValidatedKernel<K> {
    inner: K,
}

impl<K> ValidatedKernel<K> {
    /// Probes `kernel` on `samples` random point pairs in `dim` dimensions
    /// (coordinates uniform in [-10, 10], plus coincident pairs) and accepts it
    /// only if every probe satisfies `0 < Ψ(x,y) ≤ bound` and
    /// `Ψ(x,y) == Ψ(y,x)` bit for bit.
    pub fn register<T: Scalar>(kernel: K, dim: usize, samples: usize, seed: u64) -> Result<Self>
    where
        K: InteractionKernel<T>,
    {
        if dim == 0 {
            return Err(Error::invalid("kernel validation needs dim >= 1"));
        }
        let bound = kernel.bound();
        if !(bound.is_finite() && bound > T::zero()) {
            return Err(Error::invalid(format!(
                "declared kernel bound {bound} is not positive and finite"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![T::zero(); dim];
        let mut y = vec![T::zero(); dim];
        for k in 0..samples {
            for c in 0..dim {
                x[c] = T::lit(rng.gen_range(-10.0..10.0));
                y[c] = if k % 16 == 0 {
                    x[c]
                } else {
                    T::lit(rng.gen_range(-10.0..10.0))
                };
            }
            let a = kernel.psi(&x, &y);
            let b = kernel.psi(&y, &x);
            if !a.is_finite() || a <= T::zero() || a > bound {
                return Err(Error::invalid(format!(
                    "kernel value {a} at probe {k} violates 0 < psi <= {bound}"
                )));
            }
            if a.as_f64().to_bits() != b.as_f64().to_bits() {
                return Err(Error::invalid(format!(
                    "kernel is not symmetric at probe {k}: {a} vs {b}"
                )));
            }
        }
        Ok(Self { inner: kernel })
    }

    pub fn into_inner(self) -> K {
        self.inner
    }
}

impl<T: Scalar, K: InteractionKernel<T>> InteractionKernel<T> for ValidatedKernel<K> {
    #[inline]
    fn psi(&self, x: &[T], y: &[T]) -> T {
        self.inner.psi(x, y)
    }

    #[inline]
    fn bound(&self) -> T {
        self.inner.bound()
    }
}

#[inline]
pub(crate) fn dist_sq<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut r2 = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        let d = a - b;
        r2 += d * d;
    }
    r2
}

/// Checked evaluation of Ψ(x, y) for a point pair of matching dimension.
pub fn psi_eval<T: Scalar, K: InteractionKernel<T> + ?Sized>(kernel: &K, x: &[T], y: &[T]) -> Result<T> {
    if x.is_empty() {
        return Err(Error::invalid("points must have dimension >= 1"));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(kernel.psi(x, y))
}
