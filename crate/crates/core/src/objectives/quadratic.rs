use rand_distr::{Distribution, Normal};

use super::{Objective, ObjectiveKind};
use crate::error::{Error, Result};
use crate::linalg::{mat_vec, solve, symmetric_eigenvalues};
use crate::rng::Stream;
use crate::scalar::{dot, Scalar};

/// Client objectives `F_i(w) = 1/2 (w - c_i)^T A_i (w - c_i)` with
/// positive-definite `A_i`.
///
/// Stochastic gradients add isotropic Gaussian noise with total variance
/// `noise_variance` (each coordinate gets `noise_variance / d`), independent
/// of the batch size.
#[derive(Clone, Debug)]
pub struct QuadraticObjective<T> {
    dim: usize,
    hessians: Vec<Vec<T>>,
    centers: Vec<Vec<T>>,
    noise_variance: T,
    smoothness: T,
    optimum: Vec<T>,
    optimum_value: T,
}

impl<T: Scalar> QuadraticObjective<T> {
    /// `hessians[i]` is the row-major `d x d` matrix of client `i`.
    pub fn new(hessians: Vec<Vec<T>>, centers: Vec<Vec<T>>, noise_variance: T) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::invalid(
                "quadratic objective needs at least one client",
            ));
        }
        if hessians.len() != centers.len() {
            return Err(Error::invalid(format!(
                "{} hessians for {} centers",
                hessians.len(),
                centers.len()
            )));
        }
        if !(noise_variance >= T::zero() && noise_variance.is_finite()) {
            return Err(Error::invalid(
                "noise variance must be finite and non-negative",
            ));
        }
        let dim = centers[0].len();
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let mut smoothness = T::zero();
        for (i, (a, c)) in hessians.iter().zip(&centers).enumerate() {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.len(),
                });
            }
            if a.len() != dim * dim {
                return Err(Error::DimensionMismatch {
                    expected: dim * dim,
                    got: a.len(),
                });
            }
            if a.iter().chain(c).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("quadratic client {i}"),
                });
            }
            for r in 0..dim {
                for s in r + 1..dim {
                    if a[r * dim + s] != a[s * dim + r] {
                        return Err(Error::invalid(format!(
                            "hessian of client {i} is not symmetric"
                        )));
                    }
                }
            }
            let eig = symmetric_eigenvalues(a, dim);
            if eig[0] <= T::zero() {
                return Err(Error::invalid(format!(
                    "hessian of client {i} is not positive definite"
                )));
            }
            smoothness = smoothness.max(eig[dim - 1]);
        }

        // Global minimizer solves (sum A_i) w = sum A_i c_i.
        let mut a_sum = vec![T::zero(); dim * dim];
        let mut rhs = vec![T::zero(); dim];
        for (a, c) in hessians.iter().zip(&centers) {
            a_sum.iter_mut().zip(a).for_each(|(s, &v)| *s += v);
            rhs.iter_mut().zip(mat_vec(a, c)).for_each(|(s, v)| *s += v);
        }
        let optimum = solve(&a_sum, &rhs)?;

        let mut obj = Self {
            dim,
            hessians,
            centers,
            noise_variance,
            smoothness,
            optimum,
            optimum_value: T::zero(),
        };
        obj.optimum_value = super::global_loss(&obj, &obj.optimum.clone());
        Ok(obj)
    }

    /// Identity Hessians: `F_i(w) = 1/2 ||w - c_i||^2`.
    pub fn isotropic(centers: Vec<Vec<T>>, noise_variance: T) -> Result<Self> {
        let dim = centers.first().map_or(0, Vec::len);
        let eye: Vec<T> = (0..dim * dim)
            .map(|k| {
                if k / dim == k % dim {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        Self::new(vec![eye; centers.len()], centers, noise_variance)
    }

    /// Two clients in the plane whose anisotropic curvatures pull the global
    /// optimum `(1, 1)` away from the midpoint `(2, 2)` of the local optima.
    pub fn two_client_example(noise_variance: T) -> Self {
        let f = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        Self::new(
            vec![f(&[1.0, 0.0, 0.0, 3.0]), f(&[3.0, 0.0, 0.0, 1.0])],
            vec![f(&[4.0, 0.0]), f(&[0.0, 4.0])],
            noise_variance,
        )
        .expect("example quadratic is well formed")
    }

    pub fn center(&self, client: usize) -> &[T] {
        &self.centers[client]
    }

    pub fn hessian(&self, client: usize) -> &[T] {
        &self.hessians[client]
    }

    pub fn noise_variance(&self) -> T {
        self.noise_variance
    }

    fn offset(&self, client: usize, w: &[T]) -> Vec<T> {
        w.iter()
            .zip(&self.centers[client])
            .map(|(&a, &b)| a - b)
            .collect()
    }
}

impl<T: Scalar> Objective<T> for QuadraticObjective<T> {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Quadratic
    }

    fn n_clients(&self) -> usize {
        self.centers.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn client_loss(&self, client: usize, w: &[T]) -> T {
        let r = self.offset(client, w);
        T::of(0.5) * dot(&r, &mat_vec(&self.hessians[client], &r))
    }

    fn client_gradient(&self, client: usize, w: &[T]) -> Vec<T> {
        mat_vec(&self.hessians[client], &self.offset(client, w))
    }

    fn client_stochastic_gradient(
        &self,
        client: usize,
        w: &[T],
        _batch_size: usize,
        rng: &mut Stream,
    ) -> Result<Vec<T>> {
        let mut g = self.client_gradient(client, w);
        if self.noise_variance > T::zero() {
            let sd = (self.noise_variance.as_f64() / self.dim as f64).sqrt();
            let normal = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
            for v in &mut g {
                *v += T::of(normal.sample(rng));
            }
        }
        Ok(g)
    }

    fn gradient_variance(&self, _client: usize, _w: &[T], _batch_size: usize) -> Result<T> {
        Ok(self.noise_variance)
    }

    fn exact_smoothness(&self) -> Option<T> {
        Some(self.smoothness)
    }

    fn optimum(&self) -> Option<(Vec<T>, T)> {
        Some((self.optimum.clone(), self.optimum_value))
    }
}
