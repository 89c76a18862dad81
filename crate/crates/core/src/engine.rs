//! The federated round loop, repeated runs and heterogeneity grids.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::aggregation::{
    aggregate, inverse_probabilities, memory_error_scaled, AggregatorConfig, GlobalUpdate,
    MemoryBank, WeightsSource,
};
use crate::error::{Error, Result};
use crate::local_solver::{local_train, ClientUpdate, LocalConfig};
use crate::objectives::{global_gradient, global_loss, Objective, ObjectiveKind};
use crate::participation::{
    sample_round, ParticipationProfile, ProbabilityEstimator, RoundParticipation,
};
use crate::rng::{label_tag, mix, stream, Purpose};
use crate::scalar::{norm_sq, Param, Scalar};

/// Participations expected from the rarest client over the default horizon.
pub const HORIZON_PARTICIPATIONS: f64 = 10.0;

/// `ceil(10 / p_min)`: on average ten participations of the rarest client.
pub fn default_horizon(p_min: f64) -> usize {
    (HORIZON_PARTICIPATIONS / p_min - 1e-9).ceil().max(1.0) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    pub rounds: usize,
    pub server_lr: T,
    pub local: LocalConfig<T>,
    pub aggregator: AggregatorConfig<T>,
    pub profile: ParticipationProfile<T>,
    /// Seeds local SGD; also participation unless `participation_seed` is set.
    pub master_seed: u64,
    pub participation_seed: Option<u64>,
    pub init_point: Param<T>,
    /// Estimator weight cap; defaults to `2 T / 10`.
    pub weight_cap: Option<T>,
    /// Worker threads for per-client local training; 0 uses rayon's default.
    pub threads: usize,
    /// Keep every iterate in [`RunResult::trajectory`].
    pub record_trajectory: bool,
    /// Fill `wall_ns`; off by default so metrics stay byte-reproducible.
    pub record_wall_time: bool,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self, obj: &(impl Objective<T> + ?Sized)) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        if !(self.server_lr > T::zero() && self.server_lr.is_finite()) {
            return Err(Error::invalid(
                "server learning rate must be finite and positive",
            ));
        }
        self.local.validate()?;
        self.aggregator.validate()?;
        if self.profile.n_clients() != obj.n_clients() {
            return Err(Error::invalid(format!(
                "participation profile has {} clients, objective has {}",
                self.profile.n_clients(),
                obj.n_clients()
            )));
        }
        self.init_point.check_dim(obj.dim())
    }

    pub fn participation_key(&self) -> u64 {
        self.participation_seed.unwrap_or(self.master_seed)
    }

    fn resolved_weight_cap(&self) -> T {
        self.weight_cap.unwrap_or_else(|| {
            ProbabilityEstimator::<T>::default_weight_cap(self.rounds, HORIZON_PARTICIPATIONS)
        })
    }
}

/// Metrics of round `t`, evaluated at the iterate `w^(t)` the round starts from.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord<T> {
    pub round: usize,
    pub global_loss: T,
    pub grad_norm_sq: T,
    /// `H^(t)` with memory slots read as pseudo-gradients.
    pub memory_error: T,
    pub participants: Vec<usize>,
    /// `||Delta^(t)||`.
    pub update_norm: T,
    pub fresh_norm: T,
    pub stale_norm: T,
    pub wall_ns: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult<T> {
    pub records: Vec<RoundRecord<T>>,
    pub final_w: Param<T>,
    pub final_loss: T,
    pub min_grad_norm_sq: T,
    pub test_accuracy: Option<T>,
    pub trace: Vec<RoundParticipation>,
    /// `w^(1), ..., w^(T+1)` when requested.
    pub trajectory: Vec<Param<T>>,
    pub estimator: ProbabilityEstimator<T>,
    pub bank: MemoryBank<T>,
}

/// Runs `cfg.rounds` rounds with participation sampled from the profile.
pub fn run<T: Scalar, O: Objective<T> + ?Sized>(
    cfg: &TrainConfig<T>,
    obj: &O,
) -> Result<RunResult<T>> {
    run_with_schedule(cfg, obj, None)
}

/// Like [`run`], replaying a recorded participation trace instead of sampling.
pub fn replay<T: Scalar, O: Objective<T> + ?Sized>(
    cfg: &TrainConfig<T>,
    obj: &O,
    trace: &[RoundParticipation],
) -> Result<RunResult<T>> {
    if trace.len() < cfg.rounds {
        return Err(Error::invalid(format!(
            "trace covers {} rounds, config asks for {}",
            trace.len(),
            cfg.rounds
        )));
    }
    if let Some(rp) = trace.iter().find(|rp| rp.present.len() != obj.n_clients()) {
        return Err(Error::invalid(format!(
            "trace round {} lists {} clients, objective has {}",
            rp.round,
            rp.present.len(),
            obj.n_clients()
        )));
    }
    run_with_schedule(cfg, obj, Some(trace))
}

fn run_with_schedule<T: Scalar, O: Objective<T> + ?Sized>(
    cfg: &TrainConfig<T>,
    obj: &O,
    schedule: Option<&[RoundParticipation]>,
) -> Result<RunResult<T>> {
    cfg.validate(obj)?;
    let pool = if cfg.threads == 1 {
        None
    } else {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?,
        )
    };

    let n = obj.n_clients();
    let dim = obj.dim();
    let exact_weights = inverse_probabilities(cfg.profile.probs());
    let mut estimator = ProbabilityEstimator::new(n, cfg.resolved_weight_cap())?;
    let mut bank = MemoryBank::new(n, dim);
    let mut w = cfg.init_point.clone();
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut trace = Vec::with_capacity(cfg.rounds);
    let mut trajectory = Vec::new();
    let slot_scale = T::one() / (cfg.local.client_lr * T::of(cfg.local.local_steps as f64));

    for round in 1..=cfg.rounds {
        let started = cfg.record_wall_time.then(Instant::now);
        let rp = match schedule {
            Some(s) => RoundParticipation {
                round,
                present: s[round - 1].present.clone(),
            },
            None => sample_round(&cfg.profile, round, cfg.participation_key()),
        };
        estimator.update(&rp)?;
        if cfg.record_trajectory {
            trajectory.push(w.clone());
        }

        let loss = global_loss(obj, &w);
        let grad_norm_sq = norm_sq(&global_gradient(obj, &w));
        let h_err = memory_error_scaled(&bank, obj, &w, slot_scale)?;

        let participants = rp.participants();
        let updates = train_participants(
            obj,
            &participants,
            round,
            &w,
            &cfg.local,
            cfg.master_seed,
            pool.as_ref(),
        )?;

        let weights = match cfg.aggregator.weights_source {
            WeightsSource::ExactProbs => exact_weights.clone(),
            WeightsSource::Estimator => (0..n)
                .map(|i| estimator.estimated_weight(i))
                .collect::<Result<Vec<T>>>()?,
        };
        let global = match aggregate(&cfg.aggregator, &updates, &bank, &weights, round) {
            Ok(g) => g,
            Err(Error::NoParticipants { .. }) => GlobalUpdate {
                round,
                delta: Param::zeros(dim),
                fresh_norm: T::zero(),
                stale_norm: T::zero(),
            },
            Err(e) => return Err(e),
        };

        w = w
            .axpy(-cfg.server_lr, &global.delta)
            .map_err(|_| Error::NonFinite {
                context: format!("server step of round {round}"),
            })?;
        bank.refresh(&updates, round)?;

        records.push(RoundRecord {
            round,
            global_loss: loss,
            grad_norm_sq,
            memory_error: h_err,
            participants,
            update_norm: global.delta.norm(),
            fresh_norm: global.fresh_norm,
            stale_norm: global.stale_norm,
            wall_ns: started.map_or(0, |s| s.elapsed().as_nanos() as u64),
        });
        trace.push(rp);
    }
    if cfg.record_trajectory {
        trajectory.push(w.clone());
    }

    let min_grad_norm_sq = records
        .iter()
        .map(|r| r.grad_norm_sq)
        .fold(T::infinity(), T::min);
    Ok(RunResult {
        final_loss: global_loss(obj, &w),
        test_accuracy: obj.test_accuracy(&w),
        final_w: w,
        records,
        min_grad_norm_sq,
        trace,
        trajectory,
        estimator,
        bank,
    })
}

fn train_participants<T: Scalar, O: Objective<T> + ?Sized>(
    obj: &O,
    participants: &[usize],
    round: usize,
    w: &Param<T>,
    local: &LocalConfig<T>,
    seed: u64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<ClientUpdate<T>>> {
    let one = |&client: &usize| {
        let mut rng = stream(seed, Purpose::LocalSgd, client as u64, round as u64);
        local_train(obj, client, round, w, local, &mut rng)
    };
    match pool {
        // collect keeps ascending client order, so the reduction is thread-count independent
        Some(pool) if participants.len() > 1 => {
            pool.install(|| participants.par_iter().map(one).collect())
        }
        _ => participants.iter().map(one).collect(),
    }
}

/// Writes `round,loss,grad_norm_sq,H,participants,update_norm,wall_ns`.
pub fn write_metrics_csv<T: Scalar, W: Write>(records: &[RoundRecord<T>], out: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    wtr.write_record([
        "round",
        "loss",
        "grad_norm_sq",
        "H",
        "participants",
        "update_norm",
        "wall_ns",
    ])?;
    for r in records {
        wtr.write_record([
            r.round.to_string(),
            fmt_real(r.global_loss),
            fmt_real(r.grad_norm_sq),
            fmt_real(r.memory_error),
            r.participants.len().to_string(),
            fmt_real(r.update_norm),
            r.wall_ns.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// 17 significant digits, enough to round-trip an f64.
pub fn fmt_real<T: Scalar>(v: T) -> String {
    let x = v.as_f64();
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Per-seed runs plus per-round mean and standard-error curves.
#[derive(Clone, Debug)]
pub struct RepeatedResult<T> {
    pub seeds: Vec<u64>,
    pub runs: Vec<RunResult<T>>,
    pub mean_loss: Vec<T>,
    pub stderr_loss: Vec<T>,
    pub mean_grad_norm_sq: Vec<T>,
    pub stderr_grad_norm_sq: Vec<T>,
}

impl<T: Scalar> RepeatedResult<T> {
    pub fn final_losses(&self) -> Vec<T> {
        self.runs.iter().map(|r| r.final_loss).collect()
    }
}

/// Mean and standard error (sample standard deviation over sqrt(n)).
pub fn mean_stderr<T: Scalar>(values: &[T]) -> (T, T) {
    let n = values.len();
    if n == 0 {
        return (T::nan(), T::nan());
    }
    let nf = T::of(n as f64);
    let mean = values.iter().copied().sum::<T>() / nf;
    if n == 1 {
        return (mean, T::zero());
    }
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::of((n - 1) as f64);
    (mean, (var / nf).sqrt())
}

/// Participation sub-seed of one variant. With `comparability` every variant
/// shares the seed's participation realization.
pub fn participation_seed_for<T: Scalar>(
    seed: u64,
    aggregator: &AggregatorConfig<T>,
    comparability: bool,
) -> u64 {
    if comparability {
        seed
    } else {
        let label = format!("{}:{}", aggregator.rule.name(), aggregator.effective_beta());
        mix(seed, label_tag(&label))
    }
}

/// Runs `cfg` once per seed. Seed `s` sets the master seed; the participation
/// sub-seed follows [`participation_seed_for`].
pub fn run_repeated<T: Scalar, O: Objective<T> + ?Sized>(
    cfg: &TrainConfig<T>,
    obj: &O,
    seeds: &[u64],
    comparability: bool,
) -> Result<RepeatedResult<T>> {
    run_repeated_with(cfg, seeds, comparability, |_| Ok(obj))
}

/// [`run_repeated`] with an objective rebuilt per seed.
pub fn run_repeated_with<'o, T, O, F>(
    cfg: &TrainConfig<T>,
    seeds: &[u64],
    comparability: bool,
    objective_for_seed: F,
) -> Result<RepeatedResult<T>>
where
    T: Scalar,
    O: Objective<T> + ?Sized + 'o,
    F: Fn(u64) -> Result<&'o O>,
{
    if seeds.is_empty() {
        return Err(Error::invalid("run_repeated needs at least one seed"));
    }
    let runs = seeds
        .iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.master_seed = seed;
            c.participation_seed =
                Some(participation_seed_for(seed, &cfg.aggregator, comparability));
            run(&c, objective_for_seed(seed)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(seeds.to_vec(), runs))
}

pub(crate) fn summarize<T: Scalar>(seeds: Vec<u64>, runs: Vec<RunResult<T>>) -> RepeatedResult<T> {
    let rounds = runs[0].records.len();
    let curve = |f: &dyn Fn(&RoundRecord<T>) -> T| -> (Vec<T>, Vec<T>) {
        (0..rounds)
            .map(|t| mean_stderr(&runs.iter().map(|r| f(&r.records[t])).collect::<Vec<_>>()))
            .unzip()
    };
    let (mean_loss, stderr_loss) = curve(&|r| r.global_loss);
    let (mean_grad_norm_sq, stderr_grad_norm_sq) = curve(&|r| r.grad_norm_sq);
    RepeatedResult {
        seeds,
        runs,
        mean_loss,
        stderr_loss,
        mean_grad_norm_sq,
        stderr_grad_norm_sq,
    }
}

/// How a grid cell scores a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Final global loss; lower is better.
    FinalLoss,
    /// Held-out accuracy; higher is better.
    TestAccuracy,
}

impl Metric {
    pub fn for_kind(kind: ObjectiveKind) -> Self {
        match kind {
            ObjectiveKind::SyntheticSoftmax => Metric::TestAccuracy,
            _ => Metric::FinalLoss,
        }
    }

    pub fn score<T: Scalar>(self, run: &RunResult<T>) -> T {
        match self {
            Metric::FinalLoss => run.final_loss,
            Metric::TestAccuracy => run.test_accuracy.unwrap_or_else(T::nan),
        }
    }

    /// Whether `a` beats `b` by more than the tie tolerance.
    pub fn strictly_better<T: Scalar>(self, a: T, b: T) -> bool {
        let tol = T::of(TIE_TOLERANCE) * T::one().max(a.abs()).max(b.abs());
        match self {
            Metric::FinalLoss => a < b - tol,
            Metric::TestAccuracy => a > b + tol,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::FinalLoss => "final_loss",
            Metric::TestAccuracy => "test_accuracy",
        }
    }
}

/// Relative tolerance below which two cell metrics count as a tie.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Grid axes and per-cell settings.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    /// Participation heterogeneity `p_avg / p_min`.
    pub ratios: Vec<f64>,
    pub swap_fractions: Vec<f64>,
    pub betas: Vec<f64>,
    /// Client learning rates tried for every `(cell, beta)`; the best is kept.
    pub client_lrs: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_clients: usize,
    pub group2_size: usize,
    /// Rounds per cell; `None` uses `ceil(10 / p_min)`.
    pub rounds: Option<usize>,
    pub comparability: bool,
    /// Seeds the group assignment, shared by every cell.
    pub group_seed: u64,
    /// Worker threads across runs; 0 uses rayon's default.
    pub threads: usize,
}

/// One `(ratio, swap_fraction, beta)` row of the grid summary.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub ratio: f64,
    pub swap_fraction: f64,
    pub beta: f64,
    pub client_lr: f64,
    pub rounds: usize,
    pub metric_mean: f64,
    pub metric_stderr: f64,
    pub beta_opt: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub metric: Metric,
    pub rows: Vec<GridRow>,
}

impl GridResult {
    /// `(ratio, swap_fraction, beta_opt)` per cell in grid order.
    pub fn beta_opt(&self) -> Vec<(f64, f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.beta_opt)
            .map(|r| (r.ratio, r.swap_fraction, r.beta))
            .collect()
    }

    /// Writes `ratio,swap_fraction,beta,metric_mean,metric_stderr,beta_opt_flag`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        wtr.write_record([
            "ratio",
            "swap_fraction",
            "beta",
            "metric_mean",
            "metric_stderr",
            "beta_opt_flag",
        ])?;
        for r in &self.rows {
            wtr.write_record([
                fmt_real(r.ratio),
                fmt_real(r.swap_fraction),
                fmt_real(r.beta),
                fmt_real(r.metric_mean),
                fmt_real(r.metric_stderr),
                u8::from(r.beta_opt).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Picks the best entry; ties within [`TIE_TOLERANCE`] go to the earliest,
/// so callers pass candidates in ascending beta (or learning-rate) order.
pub fn select_best(metric: Metric, scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) if metric.strictly_better(s, scores[b]) => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Objective for one grid cell and seed.
pub type ObjectiveFactory<'a> =
    dyn Fn(f64, &ParticipationProfile<f64>, u64) -> Result<Box<dyn Objective<f64>>> + Sync + 'a;

/// Evaluates every `(ratio, swap_fraction)` cell for every beta, tuning the
/// client learning rate per `(cell, beta)`, and flags `beta_opt` per cell.
///
/// `base` provides the fixed settings (server rate, local steps, batch size,
/// weights source); its rule is replaced by FedStale with each beta. Cells,
/// betas and learning rates run in parallel; results are deterministic.
pub fn run_grid(
    base: &TrainConfig<f64>,
    spec: &GridSpec,
    factory: &ObjectiveFactory<'_>,
) -> Result<GridResult> {
    if spec.ratios.is_empty() || spec.swap_fractions.is_empty() || spec.betas.is_empty() {
        return Err(Error::invalid("grid axes must be nonempty"));
    }
    if spec.client_lrs.is_empty() || spec.seeds.is_empty() {
        return Err(Error::invalid(
            "grid needs at least one client learning rate and seed",
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| grid_in_pool(base, spec, factory))
}

fn grid_in_pool(
    base: &TrainConfig<f64>,
    spec: &GridSpec,
    factory: &ObjectiveFactory<'_>,
) -> Result<GridResult> {
    let mut betas = spec.betas.clone();
    betas.sort_by(f64::total_cmp);
    betas.dedup();

    struct Job {
        cell: usize,
        beta_idx: usize,
        lr_idx: usize,
        seed: u64,
    }
    let cells: Vec<(f64, f64)> = spec
        .ratios
        .iter()
        .flat_map(|&r| spec.swap_fractions.iter().map(move |&s| (r, s)))
        .collect();
    let mut profiles = Vec::with_capacity(cells.len());
    for &(ratio, _) in &cells {
        let p_min = crate::participation::p_min_for_ratio(spec.n_clients, spec.group2_size, ratio)?;
        profiles.push(crate::participation::make_two_group_profile(
            spec.n_clients,
            p_min,
            spec.group2_size,
            spec.group_seed,
        )?);
    }

    // Objectives are built once per (cell, seed) and shared by all betas and rates.
    let objectives: Vec<Vec<Box<dyn Objective<f64>>>> = cells
        .par_iter()
        .zip(&profiles)
        .map(|(&(_, swap), profile)| {
            spec.seeds
                .iter()
                .map(|&seed| factory(swap, profile, seed))
                .collect()
        })
        .collect::<Result<_>>()?;
    let metric = Metric::for_kind(objectives[0][0].kind());

    let jobs: Vec<Job> = (0..cells.len())
        .flat_map(|cell| {
            (0..betas.len()).flat_map(move |beta_idx| {
                (0..spec.client_lrs.len()).flat_map(move |lr_idx| {
                    spec.seeds.iter().map(move |&seed| Job {
                        cell,
                        beta_idx,
                        lr_idx,
                        seed,
                    })
                })
            })
        })
        .collect();

    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|job| {
            let profile = &profiles[job.cell];
            let p_min = crate::participation::stats(profile).p_min;
            let mut cfg = base.clone();
            cfg.rounds = spec.rounds.unwrap_or_else(|| default_horizon(p_min));
            cfg.profile = profile.clone();
            cfg.aggregator = AggregatorConfig {
                rule: crate::aggregation::Rule::FedStale,
                beta: betas[job.beta_idx],
                weights_source: base.aggregator.weights_source,
            };
            cfg.local.client_lr = spec.client_lrs[job.lr_idx];
            cfg.master_seed = job.seed;
            cfg.participation_seed = Some(participation_seed_for(
                job.seed,
                &cfg.aggregator,
                spec.comparability,
            ));
            cfg.threads = 1;
            cfg.record_trajectory = false;
            cfg.record_wall_time = false;
            let seed_idx = spec.seeds.iter().position(|&s| s == job.seed).unwrap_or(0);
            let obj = &objectives[job.cell][seed_idx];
            match run(&cfg, obj.as_ref()) {
                Ok(result) => Ok(metric.score(&result)),
                // a diverging learning rate simply loses the tuning
                Err(Error::Divergence { .. }) | Err(Error::NonFinite { .. }) => Ok(f64::NAN),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let n_seeds = spec.seeds.len();
    let n_lrs = spec.client_lrs.len();
    let mut rows = Vec::new();
    for (cell, &(ratio, swap)) in cells.iter().enumerate() {
        let p_min = crate::participation::stats(&profiles[cell]).p_min;
        let rounds = spec.rounds.unwrap_or_else(|| default_horizon(p_min));
        let mut cell_rows = Vec::new();
        for (beta_idx, &beta) in betas.iter().enumerate() {
            let per_lr: Vec<(f64, f64)> = (0..n_lrs)
                .map(|lr_idx| {
                    let start = ((cell * betas.len() + beta_idx) * n_lrs + lr_idx) * n_seeds;
                    let vals = &scores[start..start + n_seeds];
                    if vals.iter().any(|v| v.is_nan()) {
                        (f64::NAN, f64::NAN)
                    } else {
                        mean_stderr(vals)
                    }
                })
                .collect();
            let means: Vec<f64> = per_lr.iter().map(|p| p.0).collect();
            let lr_idx = select_best(metric, &means).unwrap_or(0);
            cell_rows.push(GridRow {
                ratio,
                swap_fraction: swap,
                beta,
                client_lr: spec.client_lrs[lr_idx],
                rounds,
                metric_mean: per_lr[lr_idx].0,
                metric_stderr: per_lr[lr_idx].1,
                beta_opt: false,
            });
        }
        let means: Vec<f64> = cell_rows.iter().map(|r| r.metric_mean).collect();
        if let Some(best) = select_best(metric, &means) {
            cell_rows[best].beta_opt = true;
        }
        rows.extend(cell_rows);
    }
    Ok(GridResult { metric, rows })
}
