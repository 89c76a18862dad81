//! Finite-sum federated objectives and their gradient oracles.
//!
//! The global objective is always the unweighted client mean
//! `F(w) = (1/N) * sum_i F_i(w)`. Implementations provide per-client values;
//! the free functions in this module add argument validation and the global
//! reductions, which are summed in ascending client order.

mod dataset;
mod quadratic;
mod softmax;

pub use dataset::{build_label_swap_dataset, ClientData, LabelSwapConfig, SyntheticDataset};
pub use quadratic::QuadraticObjective;
pub use softmax::SoftmaxObjective;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scalar::{dist_sq, Param, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    Quadratic,
    SyntheticSoftmax,
    HardInstanceSplit,
}

/// Which loss to evaluate: one client's, or the global mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Client(usize),
    Global,
}

pub const GLOBAL: Target = Target::Global;

/// Per-client oracle interface. Callers go through [`eval_loss`],
/// [`full_gradient`] and [`stochastic_gradient`], which validate inputs
/// before reaching these methods.
pub trait Objective<T: Scalar>: Send + Sync {
    fn kind(&self) -> ObjectiveKind;

    fn n_clients(&self) -> usize;

    fn dim(&self) -> usize;

    fn client_loss(&self, client: usize, w: &[T]) -> T;

    fn client_gradient(&self, client: usize, w: &[T]) -> Vec<T>;

    /// Unbiased estimate of `client_gradient` from a minibatch of `batch_size`.
    fn client_stochastic_gradient(
        &self,
        client: usize,
        w: &[T],
        batch_size: usize,
        rng: &mut Stream,
    ) -> Result<Vec<T>>;

    /// `E ||g - grad F_i(w)||^2` for a stochastic gradient `g` of the given batch size.
    fn gradient_variance(&self, client: usize, w: &[T], batch_size: usize) -> Result<T>;

    /// Smoothness constant when it is known in closed form.
    fn exact_smoothness(&self) -> Option<T> {
        None
    }

    /// Minimizer and minimum of the global objective, when known in closed form.
    fn optimum(&self) -> Option<(Vec<T>, T)> {
        None
    }

    /// Held-out accuracy for classification objectives.
    fn test_accuracy(&self, _w: &[T]) -> Option<T> {
        None
    }
}

/// Empirical constants of the smoothness and variance assumptions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveStats<T> {
    pub smoothness: T,
    /// Data-heterogeneity variance bound.
    pub sg_sq: T,
    /// Stochastic-gradient variance bound.
    pub sigma_sq: T,
}

fn validate<T: Scalar, O: Objective<T> + ?Sized>(obj: &O, target: Target, w: &[T]) -> Result<()> {
    if w.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: w.len(),
        });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "evaluation point".into(),
        });
    }
    if let Target::Client(client) = target {
        if client >= obj.n_clients() {
            return Err(Error::ClientOutOfRange {
                client,
                n_clients: obj.n_clients(),
            });
        }
    }
    Ok(())
}

/// `F_i(w)` or `F(w)`.
pub fn eval_loss<T: Scalar, O: Objective<T> + ?Sized>(
    obj: &O,
    target: Target,
    w: &[T],
) -> Result<T> {
    validate(obj, target, w)?;
    Ok(match target {
        Target::Client(i) => obj.client_loss(i, w),
        Target::Global => global_loss(obj, w),
    })
}

/// `grad F_i(w)` or `grad F(w)`, exact.
pub fn full_gradient<T: Scalar, O: Objective<T> + ?Sized>(
    obj: &O,
    target: Target,
    w: &[T],
) -> Result<Param<T>> {
    validate(obj, target, w)?;
    let g = match target {
        Target::Client(i) => obj.client_gradient(i, w),
        Target::Global => global_gradient(obj, w),
    };
    Param::new(g)
}

pub fn stochastic_gradient<T: Scalar, O: Objective<T> + ?Sized>(
    obj: &O,
    client: usize,
    w: &[T],
    batch_size: usize,
    rng: &mut Stream,
) -> Result<Param<T>> {
    validate(obj, Target::Client(client), w)?;
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    Param::new(obj.client_stochastic_gradient(client, w, batch_size, rng)?)
}

pub fn global_loss<T: Scalar, O: Objective<T> + ?Sized>(obj: &O, w: &[T]) -> T {
    let n = obj.n_clients();
    let total: T = (0..n).map(|i| obj.client_loss(i, w)).sum();
    total / T::of(n as f64)
}

pub fn global_gradient<T: Scalar, O: Objective<T> + ?Sized>(obj: &O, w: &[T]) -> Vec<T> {
    let n = obj.n_clients();
    let mut acc = vec![T::zero(); obj.dim()];
    for i in 0..n {
        for (a, g) in acc.iter_mut().zip(obj.client_gradient(i, w)) {
            *a += g;
        }
    }
    let inv = T::one() / T::of(n as f64);
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// `center` followed by `count - 1` points at unit-Gaussian offsets from it.
pub fn probe_points<T: Scalar>(
    center: &Param<T>,
    count: usize,
    seed: u64,
) -> Result<Vec<Param<T>>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = crate::rng::stream(seed, crate::rng::Purpose::Probe, 0, 0);
    let mut out = vec![center.clone()];
    for _ in 1..count {
        let p: Vec<T> = center
            .iter()
            .map(|&x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x + T::of(z)
            })
            .collect();
        out.push(Param::new(p)?);
    }
    Ok(out)
}

/// Estimates smoothness and the two variance bounds from probe points.
///
/// Smoothness is the largest observed gradient-difference ratio unless the
/// objective knows it exactly. Both variances are maxima over probes and
/// clients.
pub fn estimate_stats<T: Scalar, O: Objective<T> + ?Sized>(
    obj: &O,
    probes: &[Param<T>],
    batch_size: usize,
) -> Result<ObjectiveStats<T>> {
    if probes.len() < 2 {
        return Err(Error::invalid(
            "estimate_stats needs at least two probe points",
        ));
    }
    for p in probes {
        validate(obj, GLOBAL, p)?;
    }
    let n = obj.n_clients();
    let grads: Vec<Vec<Vec<T>>> = probes
        .iter()
        .map(|p| (0..n).map(|i| obj.client_gradient(i, p)).collect())
        .collect();

    let smoothness = match obj.exact_smoothness() {
        Some(l) => l,
        None => {
            let mut best = T::zero();
            for a in 0..probes.len() {
                for b in a + 1..probes.len() {
                    let step = dist_sq(&probes[a], &probes[b]).sqrt();
                    if step.is_zero() {
                        continue;
                    }
                    for i in 0..n {
                        let ratio = dist_sq(&grads[a][i], &grads[b][i]).sqrt() / step;
                        best = best.max(ratio);
                    }
                }
            }
            best
        }
    };

    let mut sg_sq = T::zero();
    let mut sigma_sq = T::zero();
    for (p, client_grads) in probes.iter().zip(&grads) {
        let global = global_gradient(obj, p);
        for (i, g) in client_grads.iter().enumerate() {
            sg_sq = sg_sq.max(dist_sq(g, &global));
            sigma_sq = sigma_sq.max(obj.gradient_variance(i, p, batch_size)?);
        }
    }
    Ok(ObjectiveStats {
        smoothness,
        sg_sq,
        sigma_sq,
    })
}
