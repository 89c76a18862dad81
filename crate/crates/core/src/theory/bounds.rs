use std::io::Write;

use crate::engine::fmt_real;
use crate::error::{Error, Result};
use crate::participation::ParticipationStats;

/// Everything the upper bound and the optimal staleness weight depend on.
///
/// `a1` and `a2` weight the stochastic and drift terms of `beta_star`; both
/// default to 1, the same unit constants [`theorem1_bound`] uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    pub smoothness: f64,
    pub sigma_sq: f64,
    pub sg_sq: f64,
    pub stats: ParticipationStats<f64>,
    pub n_clients: usize,
    pub local_steps: usize,
    pub client_lr: f64,
    pub server_lr: f64,
    pub rounds: usize,
    pub beta: f64,
    /// `F(w^(1)) - F*`.
    pub f_init_gap: f64,
    /// `H^(1)`.
    pub h_init: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("smoothness", self.smoothness),
            ("sigma_sq", self.sigma_sq),
            ("sg_sq", self.sg_sq),
            ("client_lr", self.client_lr),
            ("server_lr", self.server_lr),
            ("f_init_gap", self.f_init_gap),
            ("h_init", self.h_init),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        for (name, v) in [("a1", self.a1), ("a2", self.a2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if self.n_clients == 0 || self.local_steps == 0 || self.rounds == 0 {
            return Err(Error::invalid(
                "n_clients, local_steps and rounds must be at least 1",
            ));
        }
        let s = self.stats;
        if !(s.p_min > 0.0
            && s.p_min <= 1.0
            && s.p_avg >= s.p_min
            && s.p_avg <= 1.0
            && s.p_var > 0.0)
        {
            return Err(Error::invalid(format!(
                "inconsistent participation statistics {s:?}"
            )));
        }
        Ok(())
    }

    pub fn unit_constants(&self) -> bool {
        self.a1 == 1.0 && self.a2 == 1.0
    }

    fn ratio(&self) -> f64 {
        self.stats.p_avg / self.stats.p_min
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrConstraint {
    /// `client_lr <= 1 / (8 L K)`.
    ClientRate,
    /// `server_lr <= N p_var / (12 (1 - beta)^2)`.
    ServerRateFresh,
    /// `server_lr <= p_var p_min / (3 beta^2 p_avg)`.
    ServerRateStale,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrCheck {
    pub client_limit: f64,
    /// `+inf` when vacuous.
    pub server_limit_fresh: f64,
    pub server_limit_stale: f64,
    pub violated: Vec<LrConstraint>,
}

impl LrCheck {
    pub fn ok(&self) -> bool {
        self.violated.is_empty()
    }

    pub fn server_limit(&self) -> f64 {
        self.server_limit_fresh.min(self.server_limit_stale)
    }
}

/// Checks the learning-rate conditions of the upper bound.
pub fn check_lr_constraints(inp: &BoundInputs) -> LrCheck {
    let l = inp.smoothness;
    let k = inp.local_steps as f64;
    let client_limit = if l > 0.0 {
        1.0 / (8.0 * l * k)
    } else {
        f64::INFINITY
    };
    let p_var = inp.stats.p_var;
    let n = inp.n_clients as f64;
    let one_minus = (1.0 - inp.beta).powi(2);
    let server_limit_fresh = if p_var.is_infinite() || one_minus == 0.0 {
        f64::INFINITY
    } else {
        n * p_var / (12.0 * one_minus)
    };
    let beta_sq = inp.beta * inp.beta;
    let server_limit_stale = if p_var.is_infinite() || beta_sq == 0.0 {
        f64::INFINITY
    } else {
        p_var * inp.stats.p_min / (3.0 * beta_sq * inp.stats.p_avg)
    };
    let mut violated = Vec::new();
    if inp.client_lr > client_limit {
        violated.push(LrConstraint::ClientRate);
    }
    if inp.server_lr > server_limit_fresh {
        violated.push(LrConstraint::ServerRateFresh);
    }
    if inp.server_lr > server_limit_stale {
        violated.push(LrConstraint::ServerRateStale);
    }
    LrCheck {
        client_limit,
        server_limit_fresh,
        server_limit_stale,
        violated,
    }
}

/// The four terms of the upper bound, each with its hidden constant set to 1.
/// Values are for trends and comparisons, not absolute guarantees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundBreakdown {
    pub iterate_init_term: f64,
    pub memory_init_term: f64,
    pub stochastic_term: f64,
    pub heterogeneity_term: f64,
    pub total: f64,
    /// Evaluated despite violated rate conditions.
    pub constraints_violated: bool,
    pub unit_constants: bool,
}

/// Evaluates the bound on `min_t E ||grad F(w^(t))||^2`. Violated rate
/// conditions are an error unless `allow_violation` is set, in which case
/// the result is flagged.
pub fn theorem1_bound(inp: &BoundInputs, allow_violation: bool) -> Result<BoundBreakdown> {
    inp.validate()?;
    let check = check_lr_constraints(inp);
    if !check.ok() && !allow_violation {
        return Err(Error::ConstraintViolation(format!(
            "learning rates violate {:?} (client limit {}, server limit {})",
            check.violated,
            check.client_limit,
            check.server_limit()
        )));
    }
    let l = inp.smoothness;
    let k = inp.local_steps as f64;
    let t = inp.rounds as f64;
    let n = inp.n_clients as f64;
    let beta_sq = inp.beta * inp.beta;
    let step = inp.server_lr * inp.client_lr;
    let inv_p_var = 1.0 / inp.stats.p_var;

    let iterate_init_term = if step > 0.0 {
        inp.f_init_gap / (step * k * t)
    } else {
        f64::INFINITY
    };
    let memory_init_term = beta_sq * step * l * k * inp.h_init * inv_p_var / (inp.stats.p_min * t);
    let stochastic_term = (1.0 / n + beta_sq * inp.ratio()) * step * l * inp.sigma_sq * inv_p_var;
    let drift = inp.client_lr * inp.client_lr * l * l * k * (k - 1.0);
    let heterogeneity_term = ((1.0 - inp.beta).powi(2) / n + beta_sq * drift * inp.ratio())
        * step
        * l
        * k
        * inp.sg_sq
        * inv_p_var;
    Ok(BoundBreakdown {
        iterate_init_term,
        memory_init_term,
        stochastic_term,
        heterogeneity_term,
        total: iterate_init_term + memory_init_term + stochastic_term + heterogeneity_term,
        constraints_violated: !check.ok(),
        unit_constants: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaStar {
    /// Clamped to `[0, 1]`.
    pub beta: f64,
    pub unclamped: f64,
    /// True when `a1 = a2 = 1`, the convention also used by [`theorem1_bound`].
    pub unit_constants: bool,
}

/// Staleness weight minimizing the beta-dependent part of the bound
/// (memory initialization aside).
pub fn beta_star(inp: &BoundInputs) -> Result<BetaStar> {
    inp.validate()?;
    let n = inp.n_clients as f64;
    let k = inp.local_steps as f64;
    let l = inp.smoothness;
    let drift = inp.client_lr * inp.client_lr * l * l * k * (k - 1.0);
    let numer = inp.sg_sq / n;
    let denom = inp.a1 * inp.ratio() * inp.sigma_sq / k
        + (1.0 / n + inp.a2 * inp.ratio() * drift) * inp.sg_sq;
    if denom <= 0.0 {
        return Err(Error::invalid(
            "beta_star is undefined when both sigma_sq and sg_sq are zero",
        ));
    }
    let unclamped = numer / denom;
    Ok(BetaStar {
        beta: unclamped.clamp(0.0, 1.0),
        unclamped,
        unit_constants: inp.unit_constants(),
    })
}

/// Writes one bound breakdown per beta, with `beta_star` flagged.
pub fn write_bound_table<W: Write>(inp: &BoundInputs, betas: &[f64], out: W) -> Result<()> {
    let star = beta_star(inp).ok();
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    wtr.write_record([
        "beta",
        "iterate_init",
        "memory_init",
        "stochastic",
        "heterogeneity",
        "total",
        "constraints_violated",
        "beta_star",
        "unit_constants",
    ])?;
    for &beta in betas {
        let b = theorem1_bound(&BoundInputs { beta, ..*inp }, true)?;
        wtr.write_record([
            fmt_real(beta),
            fmt_real(b.iterate_init_term),
            fmt_real(b.memory_init_term),
            fmt_real(b.stochastic_term),
            fmt_real(b.heterogeneity_term),
            fmt_real(b.total),
            u8::from(b.constraints_violated).to_string(),
            star.map_or_else(|| "nan".into(), |s| fmt_real(s.beta)),
            u8::from(inp.unit_constants()).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
