//! Bernoulli client participation: profiles, schedules, statistics and the
//! online probability estimator.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;

/// Participation group of a client.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// Group 1: participates every round.
    Always,
    /// Group 2: participates with the reduced probability.
    Intermittent,
}

impl Group {
    pub fn number(self) -> u8 {
        match self {
            Group::Always => 1,
            Group::Intermittent => 2,
        }
    }
}

/// Shuffles clients with a seeded stream and puts the first `group2_size`
/// of them in group 2.
pub fn assign_groups(n_clients: usize, group2_size: usize, seed: u64) -> Vec<Group> {
    let mut order: Vec<usize> = (0..n_clients).collect();
    order.shuffle(&mut stream(seed, Purpose::GroupAssignment, 0, 0));
    let mut groups = vec![Group::Always; n_clients];
    for &i in order.iter().take(group2_size) {
        groups[i] = Group::Intermittent;
    }
    groups
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticipationProfile<T> {
    probs: Vec<T>,
    groups: Vec<Group>,
}

impl<T: Scalar> ParticipationProfile<T> {
    /// Explicit probabilities; clients with `p < 1` are reported as group 2.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        let groups = probs
            .iter()
            .map(|&p| {
                if p < T::one() {
                    Group::Intermittent
                } else {
                    Group::Always
                }
            })
            .collect();
        Self::with_groups(probs, groups)
    }

    pub fn with_groups(probs: Vec<T>, groups: Vec<Group>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid(
                "participation profile needs at least one client",
            ));
        }
        if groups.len() != probs.len() {
            return Err(Error::DimensionMismatch {
                expected: probs.len(),
                got: groups.len(),
            });
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, &p)| !(p > T::zero() && p <= T::one()))
        {
            return Err(Error::invalid(format!(
                "participation probability of client {i} is {p}, expected (0, 1]"
            )));
        }
        Ok(Self { probs, groups })
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn n_clients(&self) -> usize {
        self.probs.len()
    }
}

/// Group 1 always participates; `group2_size` clients chosen by a seeded
/// shuffle participate with probability `p_min_group`.
pub fn make_two_group_profile<T: Scalar>(
    n_clients: usize,
    p_min_group: T,
    group2_size: usize,
    seed: u64,
) -> Result<ParticipationProfile<T>> {
    if !(p_min_group > T::zero() && p_min_group <= T::one()) {
        return Err(Error::invalid(format!(
            "group-2 probability {p_min_group} outside (0, 1]"
        )));
    }
    if group2_size == 0 || group2_size >= n_clients {
        return Err(Error::invalid(format!(
            "group-2 size {group2_size} must be in 1..{n_clients}"
        )));
    }
    let groups = assign_groups(n_clients, group2_size, seed);
    let probs = groups
        .iter()
        .map(|g| match g {
            Group::Always => T::one(),
            Group::Intermittent => p_min_group,
        })
        .collect();
    ParticipationProfile::with_groups(probs, groups)
}

/// Group-2 probability giving `p_avg / p_min = ratio` for two groups of the
/// given sizes.
pub fn p_min_for_ratio(n_clients: usize, group2_size: usize, ratio: f64) -> Result<f64> {
    if ratio < 1.0 || group2_size == 0 || group2_size >= n_clients {
        return Err(Error::invalid(format!(
            "ratio {ratio} with group sizes {}/{group2_size} is not achievable",
            n_clients - group2_size
        )));
    }
    // p_avg = (n1 + n2 p) / n = ratio * p
    let n1 = (n_clients - group2_size) as f64;
    let n = n_clients as f64;
    Ok(n1 / (ratio * n - group2_size as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParticipationStats<T> {
    /// `(1/N sum_i (1 - p_i) / p_i)^-1`; `+inf` under full participation.
    pub p_var: T,
    pub p_avg: T,
    pub p_min: T,
}

impl<T: Scalar> ParticipationStats<T> {
    pub fn heterogeneity_ratio(&self) -> T {
        self.p_avg / self.p_min
    }
}

pub fn stats<T: Scalar>(profile: &ParticipationProfile<T>) -> ParticipationStats<T> {
    let n = T::of(profile.n_clients() as f64);
    let spread: T = profile.probs.iter().map(|&p| (T::one() - p) / p).sum::<T>() / n;
    let p_var = if spread.is_zero() {
        T::infinity()
    } else {
        T::one() / spread
    };
    ParticipationStats {
        p_var,
        p_avg: profile.probs.iter().copied().sum::<T>() / n,
        p_min: profile.probs.iter().copied().fold(T::one(), T::min),
    }
}

/// Which clients took part in one round (rounds are numbered from 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundParticipation {
    pub round: usize,
    pub present: Vec<bool>,
}

impl RoundParticipation {
    /// Ascending indices of the participating clients.
    pub fn participants(&self) -> Vec<usize> {
        self.present
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| p.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }
}

/// Draws every client's indicator from its own `(seed, client, round)` stream.
pub fn sample_round<T: Scalar>(
    profile: &ParticipationProfile<T>,
    round: usize,
    master_seed: u64,
) -> RoundParticipation {
    let present = profile
        .probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let u: f64 =
                stream(master_seed, Purpose::Participation, i as u64, round as u64).random();
            u < p.as_f64()
        })
        .collect();
    RoundParticipation { round, present }
}

/// Writes a trace as `round,client_id,present` with `present` in {0, 1}.
pub fn write_trace<W: Write>(trace: &[RoundParticipation], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["round", "client_id", "present"])?;
    for rp in trace {
        for (client, &p) in rp.present.iter().enumerate() {
            wtr.write_record([
                rp.round.to_string(),
                client.to_string(),
                u8::from(p).to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace`]. Rounds must be contiguous from 1
/// and every round must list clients `0..n` in order.
pub fn read_trace<R: Read>(input: R) -> Result<Vec<RoundParticipation>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["round", "client_id", "present"] {
        return Err(Error::Parse(format!("unexpected trace header {headers:?}")));
    }
    let mut trace: Vec<RoundParticipation> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |k: usize| -> Result<usize> {
            record
                .get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("trace row {}: bad field {k}", line + 2)))
        };
        let (round, client, present) = (field(0)?, field(1)?, field(2)?);
        if present > 1 {
            return Err(Error::Parse(format!(
                "trace row {}: present must be 0 or 1",
                line + 2
            )));
        }
        match trace.last_mut() {
            Some(last) if last.round == round => {
                if client != last.present.len() {
                    return Err(Error::Parse(format!(
                        "trace row {}: client out of order",
                        line + 2
                    )));
                }
                last.present.push(present == 1);
            }
            _ => {
                if round != trace.len() + 1 || client != 0 {
                    return Err(Error::Parse(format!(
                        "trace row {}: round out of order",
                        line + 2
                    )));
                }
                trace.push(RoundParticipation {
                    round,
                    present: vec![present == 1],
                });
            }
        }
    }
    if let Some(first) = trace.first() {
        let n = first.present.len();
        if trace.iter().any(|rp| rp.present.len() != n) {
            return Err(Error::Parse(
                "trace rounds list different client counts".into(),
            ));
        }
    }
    Ok(trace)
}

/// Online participation-frequency estimator with a floor on the count and a
/// cap on the resulting weight.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityEstimator<T> {
    counts: Vec<usize>,
    rounds_seen: usize,
    weight_cap: T,
}

impl<T: Scalar> ProbabilityEstimator<T> {
    pub fn new(n_clients: usize, weight_cap: T) -> Result<Self> {
        if !(weight_cap > T::one()) || !weight_cap.is_finite() {
            return Err(Error::invalid(format!(
                "weight cap {weight_cap} must be finite and > 1"
            )));
        }
        Ok(Self {
            counts: vec![0; n_clients],
            rounds_seen: 0,
            weight_cap,
        })
    }

    /// Cap of `2 * rounds / expected_participations`, floored just above 1.
    pub fn default_weight_cap(rounds: usize, expected_participations: f64) -> T {
        let cap = 2.0 * rounds as f64 / expected_participations;
        T::of(cap.max(1.0 + 1e-9))
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn rounds_seen(&self) -> usize {
        self.rounds_seen
    }

    pub fn weight_cap(&self) -> T {
        self.weight_cap
    }

    pub fn update(&mut self, rp: &RoundParticipation) -> Result<()> {
        if rp.round != self.rounds_seen + 1 {
            return Err(Error::OutOfOrderRound {
                expected: self.rounds_seen + 1,
                got: rp.round,
            });
        }
        if rp.present.len() != self.counts.len() {
            return Err(Error::DimensionMismatch {
                expected: self.counts.len(),
                got: rp.present.len(),
            });
        }
        for (c, &p) in self.counts.iter_mut().zip(&rp.present) {
            *c += usize::from(p);
        }
        self.rounds_seen += 1;
        Ok(())
    }

    /// `max(c_i, 1) / t`.
    pub fn estimated_probability(&self, client: usize) -> Result<T> {
        if self.rounds_seen == 0 {
            return Err(Error::invalid("estimator has not seen any round"));
        }
        let c = *self.counts.get(client).ok_or(Error::ClientOutOfRange {
            client,
            n_clients: self.counts.len(),
        })?;
        Ok(T::of(c.max(1) as f64 / self.rounds_seen as f64))
    }

    /// `min(1 / p_hat_i, weight_cap)`.
    pub fn estimated_weight(&self, client: usize) -> Result<T> {
        Ok((T::one() / self.estimated_probability(client)?).min(self.weight_cap))
    }
}
