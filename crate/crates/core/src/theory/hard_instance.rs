use rand::Rng;

use crate::error::{Error, Result};
use crate::objectives::{global_loss, Objective, ObjectiveKind};
use crate::rng::{stream, Purpose, Stream};
use crate::scalar::Scalar;

/// Worst-case smooth quadratic split between two clients.
///
/// With `m = 2 * horizon + 1` active coordinates (1-based in the formulas),
///
/// ```text
/// F(w) = L/8 [ w_1^2 + sum_{j<m} (w_j - w_{j+1})^2 + w_m^2 - 2 w_1 ]
/// ```
///
/// Client `i0` holds `w_1^2 - 2 w_1` and the pairs `(w_{2j}, w_{2j+1})`,
/// client `i1` the pairs `(w_{2j-1}, w_{2j})` and `w_m^2`, each scaled by
/// `N`; every other client is identically zero. Starting from the origin,
/// `i0` can only unlock even-indexed frontiers and `i1` odd-indexed ones.
#[derive(Clone, Debug, PartialEq)]
pub struct HardInstance {
    dim: usize,
    horizon: usize,
    smoothness: f64,
    n_clients: usize,
    i0: usize,
    i1: usize,
}

const IDENTITY_PROBES: usize = 16;
const IDENTITY_TOL: f64 = 1e-10;

impl HardInstance {
    /// Uses clients 0 and 1 as `i0` and `i1`.
    pub fn new(dim: usize, horizon: usize, smoothness: f64, n_clients: usize) -> Result<Self> {
        Self::with_clients(dim, horizon, smoothness, n_clients, 0, 1)
    }

    pub fn with_clients(
        dim: usize,
        horizon: usize,
        smoothness: f64,
        n_clients: usize,
        i0: usize,
        i1: usize,
    ) -> Result<Self> {
        if horizon == 0 || 2 * horizon + 1 > dim {
            return Err(Error::invalid(format!(
                "horizon {horizon} needs 1 <= horizon <= (dim - 1) / 2 with dim = {dim}"
            )));
        }
        if n_clients < 2 {
            return Err(Error::invalid(
                "the hard instance needs at least two clients",
            ));
        }
        if i0 >= n_clients || i1 >= n_clients || i0 == i1 {
            return Err(Error::invalid(format!(
                "active clients {i0}, {i1} invalid for N = {n_clients}"
            )));
        }
        if !(smoothness.is_finite() && smoothness > 0.0) {
            return Err(Error::invalid("smoothness must be finite and positive"));
        }
        let inst = Self {
            dim,
            horizon,
            smoothness,
            n_clients,
            i0,
            i1,
        };
        inst.verify_split(IDENTITY_PROBES, 0)?;
        Ok(inst)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn active_clients(&self) -> (usize, usize) {
        (self.i0, self.i1)
    }

    /// Number of coordinates the objective touches, `2 * horizon + 1`.
    pub fn active_dim(&self) -> usize {
        2 * self.horizon + 1
    }

    /// Tridiagonal matrix with 2 on the diagonal and -1 beside it, so that
    /// `F(w) = L/8 (w' A w - 2 w_1)`.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let m = self.active_dim();
        let mut a = vec![vec![0.0; m]; m];
        for i in 0..m {
            a[i][i] = 2.0;
            if i + 1 < m {
                a[i][i + 1] = -1.0;
                a[i + 1][i] = -1.0;
            }
        }
        a
    }

    /// The unsplit objective.
    pub fn global_value(&self, w: &[f64]) -> f64 {
        let m = self.active_dim();
        let mut s = w[0] * w[0] + w[m - 1] * w[m - 1] - 2.0 * w[0];
        for j in 0..m - 1 {
            let d = w[j] - w[j + 1];
            s += d * d;
        }
        self.smoothness / 8.0 * s
    }

    /// The unsplit gradient.
    pub fn global_grad(&self, w: &[f64]) -> Vec<f64> {
        let m = self.active_dim();
        let c = self.smoothness / 4.0;
        let mut g = vec![0.0; self.dim];
        for i in 0..m {
            let left = if i > 0 { w[i - 1] } else { 0.0 };
            let right = if i + 1 < m { w[i + 1] } else { 0.0 };
            g[i] = c * (2.0 * w[i] - left - right);
        }
        g[0] -= c;
        g
    }

    /// `F* = -(L/8) (1 - 1/(m + 1))`.
    pub fn optimal_value(&self) -> f64 {
        -self.smoothness / 8.0 * (1.0 - 1.0 / (self.active_dim() as f64 + 1.0))
    }

    /// Minimizer `w_i = 1 - i/(m + 1)` on the active coordinates.
    pub fn minimizer(&self) -> Vec<f64> {
        let m = self.active_dim();
        let mut w = vec![0.0; self.dim];
        for (i, wi) in w.iter_mut().enumerate().take(m) {
            *wi = 1.0 - (i as f64 + 1.0) / (m as f64 + 1.0);
        }
        w
    }

    /// `F(0) - F*`.
    pub fn initial_gap(&self) -> f64 {
        -self.optimal_value()
    }

    /// Checks `(1/N) sum_i F_i = F` and the matching gradient identity at
    /// random probes.
    pub fn verify_split(&self, probes: usize, seed: u64) -> Result<()> {
        let mut rng = stream(seed, Purpose::Probe, 0, 0);
        for _ in 0..probes {
            let w: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let split = global_loss(self, &w);
            let whole = self.global_value(&w);
            if (split - whole).abs() > IDENTITY_TOL * whole.abs().max(1.0) {
                return Err(Error::invalid(format!(
                    "split mismatch: {split} vs {whole}"
                )));
            }
            let gs = crate::objectives::global_gradient(self, &w);
            let gw = self.global_grad(&w);
            if gs
                .iter()
                .zip(&gw)
                .any(|(a, b)| (a - b).abs() > IDENTITY_TOL * b.abs().max(1.0))
            {
                return Err(Error::invalid("split gradient mismatch"));
            }
        }
        Ok(())
    }

    // pairs starting at 0-based index `first`, stepping by 2
    fn pairs(&self, first: usize) -> impl Iterator<Item = usize> + '_ {
        (first..self.active_dim() - 1).step_by(2)
    }
}

impl<T: Scalar> Objective<T> for HardInstance {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::HardInstanceSplit
    }

    fn n_clients(&self) -> usize {
        self.n_clients
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn client_loss(&self, client: usize, w: &[T]) -> T {
        let scale = T::of(self.n_clients as f64 * self.smoothness / 8.0);
        let two = T::of(2.0);
        let m = self.active_dim();
        if client == self.i0 {
            let mut s = w[0] * w[0] - two * w[0];
            for j in self.pairs(1) {
                let d = w[j] - w[j + 1];
                s += d * d;
            }
            scale * s
        } else if client == self.i1 {
            let mut s = w[m - 1] * w[m - 1];
            for j in self.pairs(0) {
                let d = w[j] - w[j + 1];
                s += d * d;
            }
            scale * s
        } else {
            T::zero()
        }
    }

    fn client_gradient(&self, client: usize, w: &[T]) -> Vec<T> {
        let scale = T::of(self.n_clients as f64 * self.smoothness / 4.0);
        let m = self.active_dim();
        let mut g = vec![T::zero(); self.dim];
        let first = if client == self.i0 {
            g[0] = scale * (w[0] - T::one());
            1
        } else if client == self.i1 {
            g[m - 1] = scale * w[m - 1];
            0
        } else {
            return g;
        };
        for j in self.pairs(first) {
            let d = scale * (w[j] - w[j + 1]);
            g[j] += d;
            g[j + 1] -= d;
        }
        g
    }

    /// Exact gradients: the lower bound is about deterministic first-order access.
    fn client_stochastic_gradient(
        &self,
        client: usize,
        w: &[T],
        _batch_size: usize,
        _rng: &mut Stream,
    ) -> Result<Vec<T>> {
        Ok(self.client_gradient(client, w))
    }

    fn gradient_variance(&self, _client: usize, _w: &[T], _batch_size: usize) -> Result<T> {
        Ok(T::zero())
    }

    /// Largest client Hessian eigenvalue, `N L / 2`.
    fn exact_smoothness(&self) -> Option<T> {
        Some(T::of(self.n_clients as f64 * self.smoothness / 2.0))
    }

    fn optimum(&self) -> Option<(Vec<T>, T)> {
        Some((
            self.minimizer().into_iter().map(T::of).collect(),
            T::of(self.optimal_value()),
        ))
    }
}

/// Smallest `||grad F||^2` over `span{e_1, ..., e_{k-1}}`,
/// `3 L^2 / (8 k (k+1) (2k+1))`, and the point attaining it.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientFloor {
    pub k: usize,
    pub value: f64,
    pub minimizer: Vec<f64>,
}

pub fn frontier_gradient_floor(instance: &HardInstance, k: usize) -> Result<GradientFloor> {
    if k == 0 || k > instance.horizon {
        return Err(Error::invalid(format!(
            "frontier index {k} outside 1..={}",
            instance.horizon
        )));
    }
    let kf = k as f64;
    let denom = kf * (kf + 1.0) * (2.0 * kf + 1.0);
    let l = instance.smoothness;
    let mut minimizer = vec![0.0; instance.dim];
    for (idx, slot) in minimizer.iter_mut().enumerate().take(k - 1) {
        let i = idx as f64 + 1.0;
        *slot = (2.0 * kf.powi(3) - 3.0 * (i - 1.0) * kf * kf - (3.0 * i - 1.0) * kf + i.powi(3)
            - i)
            / denom;
    }
    Ok(GradientFloor {
        k,
        value: 3.0 * l * l / (8.0 * denom),
        minimizer,
    })
}
