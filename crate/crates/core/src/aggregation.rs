//! Server update rules and the memory bank of stale client updates.
//!
//! Every unbiased rule is an instance of
//!
//! ```text
//! delta = (beta / N) * sum_i h_i + (1 / N) * sum_{i in S} w_i * (delta_i - beta * h_i)
//! ```
//!
//! with `w_i = 1 / p_i` (or an estimated substitute), `beta = 0` for
//! U-FedAvg and `beta = 1` for U-FedVARP. Sums run in ascending client order
//! regardless of the order updates are passed in.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::local_solver::ClientUpdate;
use crate::objectives::Objective;
use crate::scalar::{add_scaled, norm_sq, Param, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    /// Plain mean over participants; biased under heterogeneous participation.
    FedAvgBiased,
    UFedAvg,
    UFedVarp,
    FedStale,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::FedAvgBiased => "fedavg_biased",
            Rule::UFedAvg => "u_fedavg",
            Rule::UFedVarp => "u_fedvarp",
            Rule::FedStale => "fedstale",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fedavg_biased" => Some(Rule::FedAvgBiased),
            "u_fedavg" | "fedavg" => Some(Rule::UFedAvg),
            "u_fedvarp" | "fedvarp" => Some(Rule::UFedVarp),
            "fedstale" => Some(Rule::FedStale),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightsSource {
    ExactProbs,
    Estimator,
}

impl WeightsSource {
    pub fn name(self) -> &'static str {
        match self {
            WeightsSource::ExactProbs => "exact",
            WeightsSource::Estimator => "estimator",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregatorConfig<T> {
    pub rule: Rule,
    /// Only read by [`Rule::FedStale`].
    pub beta: T,
    pub weights_source: WeightsSource,
}

impl<T: Scalar> AggregatorConfig<T> {
    pub fn new(rule: Rule, beta: T) -> Result<Self> {
        let cfg = Self {
            rule,
            beta,
            weights_source: WeightsSource::ExactProbs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)
    }

    /// Stale-update weight actually used by the rule.
    pub fn effective_beta(&self) -> T {
        match self.rule {
            Rule::FedStale => self.beta,
            Rule::UFedVarp => T::one(),
            Rule::UFedAvg | Rule::FedAvgBiased => T::zero(),
        }
    }
}

fn check_beta<T: Scalar>(beta: T) -> Result<()> {
    if !(beta >= T::zero() && beta <= T::one()) {
        return Err(Error::invalid(format!("beta {beta} outside [0, 1]")));
    }
    Ok(())
}

/// Server-side global update with the norms of its two components.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalUpdate<T> {
    pub round: usize,
    pub delta: Param<T>,
    /// Norm of `(1/N) sum_{i in S} w_i (delta_i - beta h_i)`.
    pub fresh_norm: T,
    /// Norm of `(beta/N) sum_i h_i`.
    pub stale_norm: T,
}

/// `1 / p_i` for each client.
pub fn inverse_probabilities<T: Scalar>(probs: &[T]) -> Vec<T> {
    probs.iter().map(|&p| T::one() / p).collect()
}

/// Per-client stale updates `h_i`, all zero at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank<T> {
    slots: Vec<Param<T>>,
    /// Round of the last refresh; 0 if the client never participated.
    last_refresh_round: Vec<usize>,
}

impl<T: Scalar> MemoryBank<T> {
    pub fn new(n_clients: usize, dim: usize) -> Self {
        Self {
            slots: vec![Param::zeros(dim); n_clients],
            last_refresh_round: vec![0; n_clients],
        }
    }

    pub fn n_clients(&self) -> usize {
        self.slots.len()
    }

    pub fn dim(&self) -> usize {
        self.slots.first().map_or(0, Param::dim)
    }

    pub fn slot(&self, client: usize) -> &Param<T> {
        &self.slots[client]
    }

    pub fn slots(&self) -> &[Param<T>] {
        &self.slots
    }

    pub fn last_refresh_round(&self, client: usize) -> usize {
        self.last_refresh_round[client]
    }

    /// Overwrites the participants' slots with their fresh updates.
    pub fn refresh(&mut self, updates: &[ClientUpdate<T>], round: usize) -> Result<()> {
        let ordered = ordered_updates(updates, self.n_clients(), self.dim(), round)?;
        for u in ordered {
            self.slots[u.client] = u.delta.clone();
            self.last_refresh_round[u.client] = round;
        }
        Ok(())
    }

    /// Writes `client_id,last_refresh_round,h_0..h_{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["client_id".to_string(), "last_refresh_round".to_string()];
        header.extend((0..self.dim()).map(|k| format!("h_{k}")));
        wtr.write_record(&header)?;
        for (i, slot) in self.slots.iter().enumerate() {
            let mut row = vec![i.to_string(), self.last_refresh_round[i].to_string()];
            row.extend(slot.iter().map(|v| format!("{:.16e}", v.as_f64())));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let dim = rdr.headers()?.len().saturating_sub(2);
        let mut slots = Vec::new();
        let mut last = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let bad = || Error::Parse(format!("memory bank row {}", row + 2));
            let client: usize = record.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if client != slots.len() {
                return Err(bad());
            }
            last.push(record.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
            let values = (0..dim)
                .map(|k| {
                    record
                        .get(k + 2)
                        .and_then(|s| s.parse::<f64>().ok())
                        .map(T::of)
                        .ok_or_else(bad)
                })
                .collect::<Result<Vec<T>>>()?;
            slots.push(Param::new(values)?);
        }
        Ok(Self {
            slots,
            last_refresh_round: last,
        })
    }
}

/// Validates and sorts updates by client index.
fn ordered_updates<'a, T: Scalar>(
    updates: &'a [ClientUpdate<T>],
    n_clients: usize,
    dim: usize,
    round: usize,
) -> Result<Vec<&'a ClientUpdate<T>>> {
    let mut ordered: Vec<&ClientUpdate<T>> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client);
    for pair in ordered.windows(2) {
        if pair[0].client == pair[1].client {
            return Err(Error::DuplicateClient {
                client: pair[0].client,
                round,
            });
        }
    }
    for u in &ordered {
        if u.client >= n_clients {
            return Err(Error::ClientOutOfRange {
                client: u.client,
                n_clients,
            });
        }
        u.delta.check_dim(dim)?;
    }
    Ok(ordered)
}

fn round_of<T>(updates: &[ClientUpdate<T>]) -> usize {
    updates.first().map_or(0, |u| u.round)
}

fn finish<T: Scalar>(round: usize, fresh: Vec<T>, stale: Vec<T>) -> Result<GlobalUpdate<T>> {
    let fresh_norm = norm_sq(&fresh).sqrt();
    let stale_norm = norm_sq(&stale).sqrt();
    let delta: Vec<T> = stale.iter().zip(&fresh).map(|(&s, &f)| s + f).collect();
    Ok(GlobalUpdate {
        round,
        delta: Param::new(delta)?,
        fresh_norm,
        stale_norm,
    })
}

/// Shared kernel of the unbiased rules. `bank = None` means all `h_i = 0`.
fn combine<T: Scalar>(
    updates: &[ClientUpdate<T>],
    bank: Option<&MemoryBank<T>>,
    weights: &[T],
    n_clients: usize,
    dim: usize,
    beta: T,
) -> Result<GlobalUpdate<T>> {
    check_beta(beta)?;
    if n_clients == 0 {
        return Err(Error::invalid("aggregation needs at least one client"));
    }
    let round = round_of(updates);
    if let Some(bank) = bank {
        if bank.n_clients() != n_clients {
            return Err(Error::DimensionMismatch {
                expected: n_clients,
                got: bank.n_clients(),
            });
        }
        if bank.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bank.dim(),
            });
        }
    }
    let ordered = ordered_updates(updates, n_clients, dim, round)?;
    let inv_n = T::one() / T::of(n_clients as f64);

    let mut fresh = vec![T::zero(); dim];
    for u in &ordered {
        let w = *weights
            .get(u.client)
            .ok_or(Error::MissingWeight { client: u.client })?;
        if !w.is_finite() || w <= T::zero() {
            return Err(Error::MissingWeight { client: u.client });
        }
        match bank {
            Some(bank) => {
                let h = bank.slot(u.client);
                for ((acc, &d), &hv) in fresh.iter_mut().zip(u.delta.iter()).zip(h.iter()) {
                    *acc += w * (d - beta * hv);
                }
            }
            None => add_scaled(&mut fresh, w, &u.delta),
        }
    }
    fresh.iter_mut().for_each(|v| *v *= inv_n);

    let mut stale = vec![T::zero(); dim];
    if let Some(bank) = bank {
        for h in bank.slots() {
            add_scaled(&mut stale, T::one(), h);
        }
        let scale = beta * inv_n;
        stale.iter_mut().for_each(|v| *v *= scale);
    }
    finish(round, fresh, stale)
}

/// `(1/|S|) sum_{i in S} delta_i`.
pub fn fedavg_biased<T: Scalar>(
    updates: &[ClientUpdate<T>],
    round: usize,
) -> Result<GlobalUpdate<T>> {
    if updates.is_empty() {
        return Err(Error::NoParticipants { round });
    }
    let dim = updates[0].delta.dim();
    let ordered = ordered_updates(updates, usize::MAX, dim, round)?;
    let mut acc = vec![T::zero(); dim];
    for u in &ordered {
        add_scaled(&mut acc, T::one(), &u.delta);
    }
    let inv = T::one() / T::of(ordered.len() as f64);
    acc.iter_mut().for_each(|v| *v *= inv);
    finish(round, acc, vec![T::zero(); dim])
}

/// `(1/N) sum_{i in S} w_i delta_i`; zero when nobody participates.
pub fn u_fedavg<T: Scalar>(
    updates: &[ClientUpdate<T>],
    weights: &[T],
    n_clients: usize,
    dim: usize,
) -> Result<GlobalUpdate<T>> {
    combine(updates, None, weights, n_clients, dim, T::zero())
}

/// `(beta/N) sum_i h_i + (1/N) sum_{i in S} w_i (delta_i - beta h_i)`.
/// The bank is read, never modified.
pub fn fedstale<T: Scalar>(
    updates: &[ClientUpdate<T>],
    bank: &MemoryBank<T>,
    weights: &[T],
    n_clients: usize,
    beta: T,
) -> Result<GlobalUpdate<T>> {
    combine(updates, Some(bank), weights, n_clients, bank.dim(), beta)
}

/// [`fedstale`] with `beta = 1`.
pub fn u_fedvarp<T: Scalar>(
    updates: &[ClientUpdate<T>],
    bank: &MemoryBank<T>,
    weights: &[T],
    n_clients: usize,
) -> Result<GlobalUpdate<T>> {
    fedstale(updates, bank, weights, n_clients, T::one())
}

/// Dispatches on the configured rule.
pub fn aggregate<T: Scalar>(
    cfg: &AggregatorConfig<T>,
    updates: &[ClientUpdate<T>],
    bank: &MemoryBank<T>,
    weights: &[T],
    round: usize,
) -> Result<GlobalUpdate<T>> {
    let n = bank.n_clients();
    match cfg.rule {
        Rule::FedAvgBiased => fedavg_biased(updates, round),
        Rule::UFedAvg => u_fedavg(updates, weights, n, bank.dim()),
        Rule::UFedVarp => u_fedvarp(updates, bank, weights, n),
        Rule::FedStale => fedstale(updates, bank, weights, n, cfg.beta),
    }
    .map(|mut g| {
        g.round = round;
        g
    })
}

/// `H = (1/N) sum_i ||grad F_i(w) - h_i||^2`.
pub fn memory_error<T: Scalar, O: Objective<T> + ?Sized>(
    bank: &MemoryBank<T>,
    obj: &O,
    w: &[T],
) -> Result<T> {
    memory_error_scaled(bank, obj, w, T::one())
}

/// [`memory_error`] with every slot multiplied by `slot_scale` first.
/// With `1 / (client_lr * K)` the stored updates become pseudo-gradients,
/// which is the scale on which they approximate local gradients.
pub fn memory_error_scaled<T: Scalar, O: Objective<T> + ?Sized>(
    bank: &MemoryBank<T>,
    obj: &O,
    w: &[T],
    slot_scale: T,
) -> Result<T> {
    if bank.n_clients() != obj.n_clients() {
        return Err(Error::DimensionMismatch {
            expected: obj.n_clients(),
            got: bank.n_clients(),
        });
    }
    let total: T = bank
        .slots()
        .iter()
        .enumerate()
        .map(|(i, h)| {
            obj.client_gradient(i, w)
                .iter()
                .zip(h.iter())
                .map(|(&g, &hv)| {
                    let d = g - slot_scale * hv;
                    d * d
                })
                .sum::<T>()
        })
        .sum();
    Ok(total / T::of(bank.n_clients() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::QuadraticObjective;

    fn upd(client: usize, v: &[f64]) -> ClientUpdate<f64> {
        ClientUpdate {
            client,
            round: 1,
            delta: Param::from_f64(v).unwrap(),
            max_grad_norm: 0.0,
        }
    }

    fn bank_with(slots: &[&[f64]]) -> MemoryBank<f64> {
        let mut bank = MemoryBank::new(slots.len(), slots[0].len());
        let updates: Vec<_> = slots.iter().enumerate().map(|(i, s)| upd(i, s)).collect();
        bank.refresh(&updates, 1).unwrap();
        bank
    }

    #[test]
    fn biased_mean_examples() {
        let g = fedavg_biased(&[upd(0, &[2.0, 0.0]), upd(3, &[0.0, 2.0])], 1).unwrap();
        assert_eq!(g.delta.as_slice(), &[1.0, 1.0]);
        let single = fedavg_biased(&[upd(1, &[0.5, -1.0])], 1).unwrap();
        assert_eq!(single.delta.as_slice(), &[0.5, -1.0]);
        assert!(matches!(
            fedavg_biased::<f64>(&[], 9),
            Err(Error::NoParticipants { round: 9 })
        ));
    }

    #[test]
    fn u_fedavg_examples() {
        let g = u_fedavg(&[upd(0, &[1.0, 0.0])], &[2.0, 1.0], 2, 2).unwrap();
        assert_eq!(g.delta.as_slice(), &[1.0, 0.0]);
        let empty = u_fedavg::<f64>(&[], &[2.0, 1.0], 2, 2).unwrap();
        assert!(empty.delta.is_zero());
        // uniform participation p = |S|/N reduces to the plain mean
        let ups = [upd(0, &[1.0, 2.0]), upd(1, &[3.0, -2.0])];
        let a = u_fedavg(&ups, &[1.0, 1.0], 2, 2).unwrap();
        let b = fedavg_biased(&ups, 1).unwrap();
        assert_eq!(a.delta, b.delta);
        assert!(matches!(
            u_fedavg(&[upd(2, &[1.0, 0.0])], &[1.0, 1.0], 3, 2),
            Err(Error::MissingWeight { client: 2 })
        ));
    }

    #[test]
    fn fedstale_hand_example() {
        let bank = bank_with(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let w = inverse_probabilities(&[1.0, 0.5]);
        let g = fedstale(&[upd(0, &[2.0, 0.0])], &bank, &w, 2, 0.5).unwrap();
        assert!((g.delta[0] - 1.25).abs() < 1e-15 && (g.delta[1] - 0.25).abs() < 1e-15);
        assert!(fedstale(&[upd(0, &[2.0, 0.0])], &bank, &w, 2, 1.5).is_err());
    }

    #[test]
    fn fedstale_endpoints() {
        let bank = bank_with(&[&[0.3, -1.0], &[2.0, 0.7], &[-0.4, 0.1]]);
        let w = inverse_probabilities(&[1.0, 0.25, 0.6]);
        let ups = [upd(2, &[1.0, 1.5]), upd(0, &[-0.2, 0.9])];
        let zero = fedstale(&ups, &bank, &w, 3, 0.0).unwrap();
        assert_eq!(zero.delta, u_fedavg(&ups, &w, 3, 2).unwrap().delta);
        let one = fedstale(&ups, &bank, &w, 3, 1.0).unwrap();
        assert_eq!(one.delta, u_fedvarp(&ups, &bank, &w, 3).unwrap().delta);
    }

    #[test]
    fn fedvarp_special_cases() {
        let bank = bank_with(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let w = [1.0, 1.0];
        let nobody = u_fedvarp(&[], &bank, &w, 2).unwrap();
        assert_eq!(nobody.delta.as_slice(), &[2.0, 3.0]);
        assert_eq!(nobody.fresh_norm, 0.0);
        // fresh updates equal to memory: corrections cancel
        let ups = [upd(0, &[1.0, 2.0]), upd(1, &[3.0, 4.0])];
        let full = u_fedvarp(&ups, &bank, &w, 2).unwrap();
        assert_eq!(full.delta.as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn refresh_semantics() {
        let mut bank = MemoryBank::<f64>::new(3, 2);
        assert!(bank.slots().iter().all(Param::is_zero));
        bank.refresh(&[upd(1, &[1.0, 1.0])], 1).unwrap();
        for round in 2..=101 {
            bank.refresh(&[upd(0, &[round as f64, 0.0])], round)
                .unwrap();
        }
        assert_eq!(bank.slot(1).as_slice(), &[1.0, 1.0]);
        assert_eq!(bank.last_refresh_round(1), 1);
        assert_eq!(bank.slot(0).as_slice(), &[101.0, 0.0]);
        assert_eq!(bank.last_refresh_round(2), 0);
        let before = bank.clone();
        bank.refresh(&[], 102).unwrap();
        assert_eq!(bank, before);
        assert!(matches!(
            bank.refresh(&[upd(1, &[0.0, 0.0]), upd(1, &[1.0, 0.0])], 103),
            Err(Error::DuplicateClient { client: 1, .. })
        ));
    }

    #[test]
    fn bank_csv_round_trip() {
        let bank = bank_with(&[&[0.1, -2.5e-7], &[3.0, 1e300]]);
        let mut buf = Vec::new();
        bank.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("client_id,last_refresh_round,h_0,h_1\n"));
        assert_eq!(MemoryBank::<f64>::read_csv(buf.as_slice()).unwrap(), bank);
    }

    #[test]
    fn memory_error_examples() {
        let obj =
            QuadraticObjective::isotropic(vec![vec![1.0, 0.0], vec![0.0, -2.0]], 0.0).unwrap();
        let w = [0.0, 0.0];
        // grads: (-1, 0), (0, 2)
        let zero = MemoryBank::new(2, 2);
        assert_eq!(memory_error(&zero, &obj, &w).unwrap(), 2.5);
        let exact = bank_with(&[&[-1.0, 0.0], &[0.0, 2.0]]);
        assert_eq!(memory_error(&exact, &obj, &w).unwrap(), 0.0);
        let off = bank_with(&[&[0.0, 0.0], &[1.0, 1.0]]);
        // (1 + (1 + 1)) / 2
        assert_eq!(memory_error(&off, &obj, &w).unwrap(), 1.5);
    }
}
