//! K local SGD steps on one client.

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::rng::Stream;
use crate::scalar::{Param, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalConfig<T> {
    pub local_steps: usize,
    pub client_lr: T,
    pub batch_size: usize,
}

impl<T: Scalar> LocalConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 {
            return Err(Error::invalid("local_steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.client_lr > T::zero() && self.client_lr.is_finite()) {
            return Err(Error::invalid(format!(
                "client learning rate {} must be finite and positive",
                self.client_lr
            )));
        }
        Ok(())
    }
}

/// `delta = w_global - w_local_after_K_steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate<T> {
    pub client: usize,
    pub round: usize,
    pub delta: Param<T>,
    /// Largest stochastic-gradient norm seen along the local path.
    pub max_grad_norm: T,
}

impl<T: Scalar> ClientUpdate<T> {
    /// `||delta|| <= client_lr * K * max_grad_norm`, up to rounding.
    pub fn within_step_bound(&self, cfg: &LocalConfig<T>) -> bool {
        let bound = cfg.client_lr * T::of(cfg.local_steps as f64) * self.max_grad_norm;
        self.delta.norm() <= bound * (T::one() + T::of(1e3) * T::epsilon()) + T::epsilon()
    }
}

/// Runs local training, also returning each step's stochastic gradient.
pub fn local_train_traced<T: Scalar, O: Objective<T> + ?Sized>(
    obj: &O,
    client: usize,
    round: usize,
    w_global: &Param<T>,
    cfg: &LocalConfig<T>,
    rng: &mut Stream,
) -> Result<(ClientUpdate<T>, Vec<Param<T>>)> {
    cfg.validate()?;
    if client >= obj.n_clients() {
        return Err(Error::ClientOutOfRange {
            client,
            n_clients: obj.n_clients(),
        });
    }
    w_global.check_dim(obj.dim())?;
    let divergence = |step| Error::Divergence {
        client,
        round,
        step,
    };
    let mut w = w_global.as_slice().to_vec();
    let mut grads = Vec::with_capacity(cfg.local_steps);
    let mut max_grad_norm = T::zero();
    for step in 0..cfg.local_steps {
        let g = obj.client_stochastic_gradient(client, &w, cfg.batch_size, rng)?;
        let g = Param::new(g).map_err(|_| divergence(step))?;
        max_grad_norm = max_grad_norm.max(g.norm());
        for (wk, &gk) in w.iter_mut().zip(g.iter()) {
            *wk -= cfg.client_lr * gk;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(divergence(step));
        }
        grads.push(g);
    }
    let delta: Vec<T> = w_global.iter().zip(&w).map(|(&a, &b)| a - b).collect();
    let delta = Param::new(delta).map_err(|_| divergence(cfg.local_steps))?;
    Ok((
        ClientUpdate {
            client,
            round,
            delta,
            max_grad_norm,
        },
        grads,
    ))
}

/// Initializes at `w_global`, applies `K` stochastic-gradient steps and
/// returns the client update. Deterministic for a given stream state.
pub fn local_train<T: Scalar, O: Objective<T> + ?Sized>(
    obj: &O,
    client: usize,
    round: usize,
    w_global: &Param<T>,
    cfg: &LocalConfig<T>,
    rng: &mut Stream,
) -> Result<ClientUpdate<T>> {
    local_train_traced(obj, client, round, w_global, cfg, rng).map(|(u, _)| u)
}

/// `delta / (client_lr * K)`: the mean of the local stochastic gradients.
pub fn pseudo_gradient<T: Scalar>(update: &ClientUpdate<T>, cfg: &LocalConfig<T>) -> Param<T> {
    let scale = T::one() / (cfg.client_lr * T::of(cfg.local_steps as f64));
    update
        .delta
        .scaled(scale)
        .expect("scaling a finite update by a finite positive factor stays finite")
}
