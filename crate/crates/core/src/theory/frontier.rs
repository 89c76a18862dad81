use std::io::Write;

use rand::Rng;

use super::HardInstance;
use crate::aggregation::{AggregatorConfig, Rule};
use crate::engine::{fmt_real, run, TrainConfig};
use crate::error::{Error, Result};
use crate::local_solver::LocalConfig;
use crate::objectives::{global_gradient, Objective};
use crate::participation::{ParticipationProfile, RoundParticipation};
use crate::rng::{stream, Purpose};
use crate::scalar::{norm_sq, Param};

/// Largest coordinate any span-restricted method can have made nonzero
/// after the round labelled `round`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoordinateFrontier {
    pub round: usize,
    pub k: usize,
}

/// Runs the discovery automaton over `schedule`.
///
/// A round advances the frontier by one when a participating active client
/// owns the next coordinate: `i0` when the frontier is even (including 0),
/// `i1` when it is odd. The frontier never exceeds the active dimension.
pub fn track_frontier(
    instance: &HardInstance,
    schedule: &[RoundParticipation],
) -> Result<Vec<CoordinateFrontier>> {
    let (i0, i1) = instance.active_clients();
    let cap = instance.active_dim();
    let mut k = 0usize;
    schedule
        .iter()
        .map(|rp| {
            if rp.present.len() <= i0.max(i1) {
                return Err(Error::invalid(format!(
                    "round {} does not cover the active clients",
                    rp.round
                )));
            }
            let owner = if k % 2 == 0 { i0 } else { i1 };
            if rp.present[owner] && k < cap {
                k += 1;
            }
            Ok(CoordinateFrontier { round: rp.round, k })
        })
        .collect()
}

/// `i0` every round, `i1` in rounds `t` with `t mod tau == 1`, other clients
/// never; rounds are labelled `0..rounds`.
pub fn deterministic_schedule(
    instance: &HardInstance,
    tau: usize,
    rounds: usize,
) -> Result<Vec<RoundParticipation>> {
    if tau == 0 {
        return Err(Error::invalid("period tau must be at least 1"));
    }
    let (i0, i1) = instance.active_clients();
    let n = Objective::<f64>::n_clients(instance);
    Ok((0..rounds)
        .map(|t| {
            let mut present = vec![false; n];
            present[i0] = true;
            present[i1] = t % tau == 1 % tau;
            RoundParticipation { round: t, present }
        })
        .collect())
}

/// `i0` every round and `i1` independently with probability `p`.
pub fn bernoulli_schedule(
    instance: &HardInstance,
    p: f64,
    rounds: usize,
    seed: u64,
) -> Result<Vec<RoundParticipation>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!(
            "participation probability {p} outside (0, 1]"
        )));
    }
    let (i0, i1) = instance.active_clients();
    let n = Objective::<f64>::n_clients(instance);
    let mut rng = stream(seed, Purpose::Participation, i1 as u64, 0);
    Ok((0..rounds)
        .map(|t| {
            let mut present = vec![false; n];
            present[i0] = true;
            present[i1] = rng.random::<f64>() < p;
            RoundParticipation { round: t, present }
        })
        .collect())
}

/// `1 + floor((t + tau - 2)/tau) + floor((t + tau - 1)/tau)`, evaluated in
/// integers (so it can dip below 1 when `tau = 1`).
pub fn frontier_bound(t: usize, tau: usize) -> i64 {
    let (t, tau) = (t as i64, tau as i64);
    1 + (t + tau - 2).div_euclid(tau) + (t + tau - 1).div_euclid(tau)
}

/// Lower-bound envelope `3 L F_gap / ((p t + 2)(4 p t + 9)^2)` on the
/// expected smallest squared gradient norm after `t` rounds.
pub fn lower_bound_curve(
    p_min: f64,
    rounds: usize,
    f_gap: f64,
    smoothness: f64,
) -> Result<Vec<f64>> {
    if !(p_min > 0.0 && p_min <= 1.0) {
        return Err(Error::invalid(format!("p_min {p_min} outside (0, 1]")));
    }
    if !(f_gap >= 0.0 && smoothness > 0.0) {
        return Err(Error::invalid(
            "f_gap must be nonnegative and smoothness positive",
        ));
    }
    Ok((0..=rounds)
        .map(|t| {
            let pt = p_min * t as f64;
            3.0 * smoothness * f_gap / ((pt + 2.0) * (4.0 * pt + 9.0).powi(2))
        })
        .collect())
}

/// Mean over seeds of `min_{s <= t} ||grad F(w^(s+1))||^2` for FedStale on
/// the hard instance, `t = 0..=rounds`: entry `t` covers the iterates
/// reachable after `t` rounds. Participation is `(1, p_min, ..., p_min)`
/// with `i0 = 0`, `i1 = 1`, and each seed draws its own participation.
pub fn dominance_curve(
    instance: &HardInstance,
    p_min: f64,
    beta: f64,
    local: &LocalConfig<f64>,
    server_lr: f64,
    rounds: usize,
    seeds: &[u64],
) -> Result<Vec<f64>> {
    if instance.active_clients() != (0, 1) {
        return Err(Error::invalid("dominance runs expect i0 = 0 and i1 = 1"));
    }
    let n = Objective::<f64>::n_clients(instance);
    let mut probs = vec![p_min; n];
    probs[0] = 1.0;
    let dim = Objective::<f64>::dim(instance);
    let base = TrainConfig {
        rounds,
        server_lr,
        local: *local,
        aggregator: AggregatorConfig::new(Rule::FedStale, beta)?,
        profile: ParticipationProfile::new(probs)?,
        master_seed: 0,
        participation_seed: None,
        init_point: Param::zeros(dim),
        weight_cap: None,
        threads: 1,
        record_trajectory: false,
        record_wall_time: false,
    };
    let mut acc = vec![0.0; rounds + 1];
    for &seed in seeds {
        let cfg = TrainConfig {
            master_seed: seed,
            ..base.clone()
        };
        let res = run(&cfg, instance)?;
        let last = norm_sq(&global_gradient(instance, &res.final_w));
        let mut best = f64::INFINITY;
        for (t, slot) in acc.iter_mut().enumerate() {
            let g = res.records.get(t + 1).map_or(last, |r| r.grad_norm_sq);
            best = best.min(res.records[0].grad_norm_sq.min(g));
            *slot += best;
        }
    }
    let count = seeds.len().max(1) as f64;
    Ok(acc.into_iter().map(|v| v / count).collect())
}

/// One row per `(tau, t)`: automaton frontier, closed-form bound and whether
/// the two disagree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrontierRow {
    pub tau: usize,
    pub t: usize,
    pub k: usize,
    pub bound: i64,
}

impl FrontierRow {
    pub fn matches(&self) -> bool {
        self.k as i64 == self.bound
    }
}

/// Sweeps the deterministic schedule over each period for rounds `0..=max_t`.
pub fn frontier_sweep(
    instance: &HardInstance,
    taus: &[usize],
    max_t: usize,
) -> Result<Vec<FrontierRow>> {
    let mut rows = Vec::new();
    for &tau in taus {
        let schedule = deterministic_schedule(instance, tau, max_t + 1)?;
        for f in track_frontier(instance, &schedule)? {
            rows.push(FrontierRow {
                tau,
                t: f.round,
                k: f.k,
                bound: frontier_bound(f.round, tau),
            });
        }
    }
    Ok(rows)
}

/// Writes `tau,t,k,bound,mismatch`.
pub fn write_frontier_table<W: Write>(rows: &[FrontierRow], out: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    wtr.write_record(["tau", "t", "k", "bound", "mismatch"])?;
    for r in rows {
        wtr.write_record([
            r.tau.to_string(),
            r.t.to_string(),
            r.k.to_string(),
            r.bound.to_string(),
            u8::from(!r.matches()).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `t,envelope,empirical` (empirical may be empty).
pub fn write_envelope_table<W: Write>(envelope: &[f64], empirical: &[f64], out: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    wtr.write_record(["t", "envelope", "empirical", "violation"])?;
    for (t, &e) in envelope.iter().enumerate() {
        let emp = empirical.get(t).copied();
        wtr.write_record([
            t.to_string(),
            fmt_real(e),
            emp.map_or_else(String::new, fmt_real),
            emp.map_or_else(String::new, |v| u8::from(v < e).to_string()),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
