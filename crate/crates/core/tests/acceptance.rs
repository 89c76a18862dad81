//! Acceptance suite. Each test prints one `PASS`/`FAIL` line and then asserts
//! on the same condition. Reference values are computed here, independently
//! of the library code under test.

use std::io::Write;
use std::time::{Duration, Instant};

use fedstale::aggregation::{
    fedavg_biased, fedstale, u_fedavg, u_fedvarp, AggregatorConfig, Rule, WeightsSource,
};
use fedstale::engine::{mean_stderr, run, run_grid, GridSpec, TrainConfig};
use fedstale::objectives::{LabelSwapConfig, Objective, QuadraticObjective, SoftmaxObjective};
use fedstale::participation::{
    make_two_group_profile, p_min_for_ratio, stats, Group, ParticipationProfile,
};
use fedstale::theory::{
    bernoulli_schedule, beta_star, dominance_curve, frontier_gradient_floor, frontier_sweep,
    lower_bound_curve, track_frontier, BoundInputs, HardInstance,
};
use fedstale::{ClientUpdate, LocalConfig, MemoryBank, Param};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Written straight to the stderr handle so the line survives output capture.
fn report(id: u32, pass: bool, elapsed: Duration, detail: &str) {
    let _ = writeln!(
        std::io::stderr(),
        "{} criterion {id}: {detail} ({:.2}s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
}

fn finish(id: u32, start: Instant, limit: Duration, ok: bool, detail: String) {
    let elapsed = start.elapsed();
    let in_time = elapsed < limit;
    let detail = if in_time {
        detail
    } else {
        format!("{detail}; over the {:.0}s budget", limit.as_secs_f64())
    };
    report(id, ok && in_time, elapsed, &detail);
    assert!(ok && in_time, "criterion {id}: {detail}");
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn updates_for(present: &[bool], deltas: &[Vec<f64>]) -> Vec<ClientUpdate> {
    present
        .iter()
        .enumerate()
        .filter(|(_, &p)| p)
        .map(|(i, _)| ClientUpdate {
            client: i,
            round: 1,
            delta: Param::new(deltas[i].clone()).unwrap(),
            max_grad_norm: 0.0,
        })
        .collect()
}

fn bank_with(slots: &[Vec<f64>]) -> MemoryBank {
    let mut bank = MemoryBank::new(slots.len(), slots[0].len());
    let ups: Vec<ClientUpdate> = slots
        .iter()
        .enumerate()
        .map(|(i, h)| ClientUpdate {
            client: i,
            round: 1,
            delta: Param::new(h.clone()).unwrap(),
            max_grad_norm: 0.0,
        })
        .collect();
    bank.refresh(&ups, 1).unwrap();
    bank
}

/// All `2^N` participation outcomes with their probabilities.
fn outcomes(p: &[f64]) -> Vec<(Vec<bool>, f64)> {
    let n = p.len();
    (0..1u32 << n)
        .map(|mask| {
            let present: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let prob = present
                .iter()
                .zip(p)
                .map(|(&s, &pi)| if s { pi } else { 1.0 - pi })
                .product();
            (present, prob)
        })
        .collect()
}

#[test]
fn criterion_01_unbiasedness_by_enumeration() {
    let start = Instant::now();
    let p = [1.0, 0.5, 0.2];
    let n = p.len();
    let dim = 4;
    let weights: Vec<f64> = p.iter().map(|&q| 1.0 / q).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let deltas: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, dim)).collect();
        let slots: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, dim)).collect();
        let bank = bank_with(&slots);
        let target: Vec<f64> = (0..dim)
            .map(|j| deltas.iter().map(|d| d[j]).sum::<f64>() / n as f64)
            .collect();

        type RuleFn<'a> = Box<dyn Fn(&[ClientUpdate]) -> Vec<f64> + 'a>;
        let mut rules: Vec<RuleFn> = vec![
            Box::new(|u| u_fedavg(u, &weights, n, dim).unwrap().delta.into_vec()),
            Box::new(|u| u_fedvarp(u, &bank, &weights, n).unwrap().delta.into_vec()),
        ];
        for beta in [0.0, 0.3, 0.7, 1.0] {
            let bank = &bank;
            let weights = &weights;
            rules.push(Box::new(move |u| {
                fedstale(u, bank, weights, n, beta)
                    .unwrap()
                    .delta
                    .into_vec()
            }));
        }
        for rule in &rules {
            let mut mean = vec![0.0; dim];
            for (present, prob) in outcomes(&p) {
                let out = rule(&updates_for(&present, &deltas));
                for (m, v) in mean.iter_mut().zip(out) {
                    *m += prob * v;
                }
            }
            for (m, t) in mean.iter().zip(&target) {
                worst = worst.max((m - t).abs());
            }
        }
    }

    // the rare client holds the only nonzero update, so averaging over the
    // participants alone overweights it
    let deltas = vec![vec![0.0; dim], vec![0.0; dim], vec![1.0; dim]];
    let mut biased = vec![0.0; dim];
    for (present, prob) in outcomes(&p) {
        if prob == 0.0 {
            continue;
        }
        let out = fedavg_biased(&updates_for(&present, &deltas), 1)
            .unwrap()
            .delta
            .into_vec();
        for (m, v) in biased.iter_mut().zip(out) {
            *m += prob * v;
        }
    }
    let bias = (biased[0] - 1.0 / 3.0).abs();

    let ok = worst <= 1e-12 && bias > 1e-3;
    finish(
        1,
        start,
        Duration::from_secs(1),
        ok,
        format!("max unbiased-rule deviation {worst:.2e} (tol 1e-12), biased FedAvg deviation {bias:.3e} (> 1e-3)"),
    );
}

#[test]
fn criterion_02_interpolation_identity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let dim = rng.random_range(1..=5);
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..=1.0)).collect();
        let weights: Vec<f64> = probs.iter().map(|&q| 1.0 / q).collect();
        let present: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let deltas: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, dim)).collect();
        let slots: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, dim)).collect();
        let bank = bank_with(&slots);
        let beta: f64 = rng.random_range(0.0..=1.0);
        let ups = updates_for(&present, &deltas);
        let stale = fedstale(&ups, &bank, &weights, n, beta).unwrap().delta;
        let fresh = u_fedavg(&ups, &weights, n, dim).unwrap().delta;
        let varp = u_fedvarp(&ups, &bank, &weights, n).unwrap().delta;
        for j in 0..dim {
            let mix = (1.0 - beta) * fresh[j] + beta * varp[j];
            worst = worst.max((stale[j] - mix).abs());
        }
    }
    finish(
        2,
        start,
        Duration::from_secs(1),
        worst <= 1e-14,
        format!("max |fedstale - interpolation| = {worst:.2e} over 1000 inputs (tol 1e-14)"),
    );
}

const QUAD_ROUNDS: usize = 4000;
const QUAD_SEEDS: u64 = 10;
const QUAD_LRS: [f64; 7] = [1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 8e-3];

/// Mean final loss over seeds for one rule and client rate; `None` if any seed diverges.
fn quad_mean_final_loss(
    obj: &QuadraticObjective<f64>,
    rule: Rule,
    beta: f64,
    client_lr: f64,
) -> Option<f64> {
    let cfg = TrainConfig {
        rounds: QUAD_ROUNDS,
        server_lr: 1.0,
        local: LocalConfig {
            local_steps: 5,
            client_lr,
            batch_size: 1,
        },
        aggregator: AggregatorConfig::new(rule, beta).unwrap(),
        profile: ParticipationProfile::new(vec![1.0, 0.01]).unwrap(),
        master_seed: 0,
        participation_seed: None,
        init_point: Param::new(vec![-10.0, -10.0]).unwrap(),
        weight_cap: None,
        threads: 1,
        record_trajectory: false,
        record_wall_time: false,
    };
    let mut losses = Vec::new();
    for seed in 0..QUAD_SEEDS {
        let res = run(
            &TrainConfig {
                master_seed: seed,
                ..cfg.clone()
            },
            obj,
        )
        .ok()?;
        losses.push(res.final_loss);
    }
    Some(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[test]
fn criterion_03_two_client_quadratic() {
    let start = Instant::now();
    let obj = QuadraticObjective::two_client_example(0.0);
    // minimizer and minimum of 0.5 * sum_i (w - c_i)' A_i (w - c_i) / N, solved here
    let n = obj.n_clients();
    let mut a_sum = DMatrix::<f64>::zeros(2, 2);
    let mut b_sum = DVector::<f64>::zeros(2);
    for i in 0..n {
        let a = DMatrix::from_row_slice(2, 2, obj.hessian(i));
        let c = DVector::from_column_slice(obj.center(i));
        b_sum += &a * &c;
        a_sum += a;
    }
    let w_star = a_sum.lu().solve(&b_sum).unwrap();
    let loss = |w: &DVector<f64>| -> f64 {
        (0..n)
            .map(|i| {
                let a = DMatrix::from_row_slice(2, 2, obj.hessian(i));
                let d = w - DVector::from_column_slice(obj.center(i));
                0.5 * d.dot(&(&a * &d))
            })
            .sum::<f64>()
            / n as f64
    };
    let f_star = loss(&w_star);
    let init_gap = loss(&DVector::from_vec(vec![-10.0, -10.0])) - f_star;

    // per-rule tuning of the client rate inside 1 / (8 L K)
    let l_max = obj.exact_smoothness().unwrap();
    let lr_limit = 1.0 / (8.0 * l_max * 5.0);
    let tune = |rule: Rule, beta: f64| -> (f64, f64) {
        QUAD_LRS
            .iter()
            .filter(|&&lr| lr <= lr_limit)
            .filter_map(|&lr| quad_mean_final_loss(&obj, rule, beta, lr).map(|l| (lr, l)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("every rate diverged")
    };
    let (lr_avg, loss_avg) = tune(Rule::UFedAvg, 0.0);
    let (lr_varp, loss_varp) = tune(Rule::UFedVarp, 1.0);
    let (lr_stale, loss_stale) = tune(Rule::FedStale, 0.8);

    let gaps = [loss_avg - f_star, loss_varp - f_star, loss_stale - f_star];
    let converged = gaps.iter().all(|&g| g < 0.1 * init_gap);
    let better = loss_avg.min(loss_varp);
    let faster = loss_stale <= 1.1 * better;
    let gap_ratio = gaps[2] / gaps[0].min(gaps[1]);
    finish(
        3,
        start,
        Duration::from_secs(30),
        converged && faster,
        format!(
            "(a) final gaps U-FedAvg {:.3e} (lr {lr_avg}), FedVARP {:.3e} (lr {lr_varp}), FedStale(0.8) {:.3e} \
             (lr {lr_stale}) vs 0.1 * initial gap {:.3e}; (b) FedStale final loss {loss_stale:.6} vs 1.1 x {better:.6}; \
             gap ratio {gap_ratio:.3}",
            gaps[0],
            gaps[1],
            gaps[2],
            0.1 * init_gap
        ),
    );
}

/// `1 + floor((t + tau - 2)/tau) + floor((t + tau - 1)/tau)` in signed integers.
fn closed_form_frontier(t: i64, tau: i64) -> i64 {
    1 + (t + tau - 2).div_euclid(tau) + (t + tau - 1).div_euclid(tau)
}

#[test]
fn criterion_04_frontier_bound() {
    let start = Instant::now();
    let max_t = 500;
    let inst = HardInstance::new(2 * (max_t + 2) + 1, max_t + 2, 1.0, 2).unwrap();
    let taus: Vec<usize> = (1..=10).collect();
    let rows = frontier_sweep(&inst, &taus, max_t).unwrap();
    let mut mismatched_taus: Vec<usize> = Vec::new();
    let mut mismatches = 0;
    for r in &rows {
        if r.k as i64 != closed_form_frontier(r.t as i64, r.tau as i64) {
            mismatches += 1;
            if !mismatched_taus.contains(&r.tau) {
                mismatched_taus.push(r.tau);
            }
        }
    }
    let spot = rows.iter().find(|r| r.tau == 4 && r.t == 10).map(|r| r.k);
    let first_bad = rows
        .iter()
        .find(|r| r.k as i64 != closed_form_frontier(r.t as i64, r.tau as i64))
        .map(|r| {
            format!(
                "; first mismatch tau={} t={}: automaton {} vs formula {}",
                r.tau,
                r.t,
                r.k,
                closed_form_frontier(r.t as i64, r.tau as i64)
            )
        })
        .unwrap_or_default();
    finish(
        4,
        start,
        Duration::from_secs(1),
        mismatches == 0 && spot == Some(7),
        format!(
            "{mismatches} mismatches over {} (tau, t) pairs, taus {mismatched_taus:?}; k(10) at tau=4 is {spot:?}{first_bad}",
            rows.len()
        ),
    );
}

#[test]
fn criterion_05_gradient_floor() {
    let start = Instant::now();
    let horizon = 20;
    let mut worst = 0.0f64;
    for l in [1.0, 10.0] {
        let inst = HardInstance::new(2 * horizon + 1, horizon, l, 2).unwrap();
        let dim = Objective::<f64>::dim(&inst);
        // grad F is affine: grad F(w) = G w + g0, with columns read off unit probes
        let g0 = DVector::from_vec(inst.global_grad(&vec![0.0; dim]));
        let mut g = DMatrix::<f64>::zeros(dim, dim);
        for j in 0..dim {
            let mut e = vec![0.0; dim];
            e[j] = 1.0;
            let col = DVector::from_vec(inst.global_grad(&e)) - &g0;
            g.set_column(j, &col);
        }
        for k in 1..=horizon {
            let reference = if k == 1 {
                g0.norm_squared()
            } else {
                let sub = g.columns(0, k - 1).into_owned();
                let x = sub.clone().svd(true, true).solve(&(-&g0), 1e-14).unwrap();
                (&sub * x + &g0).norm_squared()
            };
            let floor = frontier_gradient_floor(&inst, k).unwrap();
            worst = worst.max((floor.value - reference).abs());
        }
    }
    finish(
        5,
        start,
        Duration::from_secs(5),
        worst <= 1e-8,
        format!("max |closed form - least squares| = {worst:.2e} for k <= 20, L in {{1, 10}} (tol 1e-8)"),
    );
}

#[test]
fn criterion_06_stochastic_frontier() {
    let start = Instant::now();
    let schedules = 10_000u64;
    let checkpoints = [50usize, 200];
    let max_t = *checkpoints.iter().max().unwrap();
    let inst = HardInstance::new(2 * (max_t + 10) + 1, max_t + 10, 1.0, 2).unwrap();
    let mut ok = true;
    let mut details = Vec::new();
    for p in [0.1, 0.25] {
        let mut samples = vec![Vec::with_capacity(schedules as usize); checkpoints.len()];
        for seed in 0..schedules {
            let sched = bernoulli_schedule(&inst, p, max_t + 1, seed).unwrap();
            let front = track_frontier(&inst, &sched).unwrap();
            for (slot, &t) in samples.iter_mut().zip(&checkpoints) {
                slot.push(front[t].k as f64);
            }
        }
        for (vals, &t) in samples.iter().zip(&checkpoints) {
            let (mean, se) = mean_stderr(vals);
            let bound = 3.0 + 2.0 * p * t as f64;
            let pass = mean <= bound + 3.0 * se;
            ok &= pass;
            details.push(format!("p={p} t={t}: E[k]={mean:.3}+-{se:.3} vs {bound}"));
        }
    }
    finish(6, start, Duration::from_secs(30), ok, details.join(", "));
}

#[test]
fn criterion_07_lower_bound_dominance() {
    let start = Instant::now();
    let rounds = 100;
    let p_min = 0.1;
    let l = 1.0;
    let n = 2;
    let inst = HardInstance::new(2 * (rounds + 2) + 1, rounds + 2, l, n).unwrap();
    // client smoothness is N L / 2, so the client rate limit is 1 / (8 (N L / 2) K)
    let local = LocalConfig {
        local_steps: 5,
        client_lr: 1.0 / (8.0 * (n as f64 * l / 2.0) * 5.0),
        batch_size: 1,
    };
    let envelope = lower_bound_curve(p_min, rounds, inst.initial_gap(), l).unwrap();
    let seeds: Vec<u64> = (0..100).collect();
    let mut ok = true;
    let mut details = Vec::new();
    for beta in [0.0, 1.0] {
        let curve = dominance_curve(&inst, p_min, beta, &local, 1.0, rounds, &seeds).unwrap();
        let violations = curve.iter().zip(&envelope).filter(|(c, e)| c < e).count();
        let margin = curve
            .iter()
            .zip(&envelope)
            .map(|(c, e)| c / e)
            .fold(f64::INFINITY, f64::min);
        ok &= violations == 0 && curve.len() == rounds + 1;
        details.push(format!(
            "beta={beta}: {violations} violations, min ratio {margin:.2}"
        ));
    }
    finish(7, start, Duration::from_secs(120), ok, details.join(", "));
}

fn bound_inputs(stats: fedstale::ParticipationStats, sg_sq: f64) -> BoundInputs {
    BoundInputs {
        smoothness: 1.0,
        sigma_sq: 1.0,
        sg_sq,
        stats,
        n_clients: 24,
        local_steps: 5,
        client_lr: 0.01,
        server_lr: 0.01,
        rounds: 100,
        beta: 0.5,
        f_init_gap: 1.0,
        h_init: 1.0,
        a1: 1.0,
        a2: 1.0,
    }
}

#[test]
fn criterion_08_beta_star_directions() {
    let start = Instant::now();
    let base_stats = stats(&make_two_group_profile(24, 0.2, 12, 0).unwrap());
    let zero = beta_star(&bound_inputs(base_stats, 0.0)).unwrap().beta;

    let ratio_sweep: Vec<f64> = [1.0, 3.0, 10.0, 50.0]
        .iter()
        .map(|&r| {
            let p = p_min_for_ratio(24, 12, r).unwrap();
            let mut s = stats(&make_two_group_profile(24, p, 12, 0).unwrap());
            // p = 1 makes p_var infinite; beta* does not depend on p_var
            if s.p_var.is_infinite() {
                s.p_var = f64::MAX;
            }
            beta_star(&bound_inputs(s, 1.0)).unwrap().beta
        })
        .collect();
    let decreasing = ratio_sweep.windows(2).all(|w| w[1] < w[0]);

    let sg_sweep: Vec<f64> = [0.0, 0.1, 1.0, 10.0, 100.0]
        .iter()
        .map(|&sg| beta_star(&bound_inputs(base_stats, sg)).unwrap().beta)
        .collect();
    let nondecreasing = sg_sweep.windows(2).all(|w| w[1] >= w[0]);

    finish(
        8,
        start,
        Duration::from_secs(1),
        zero == 0.0 && decreasing && nondecreasing,
        format!("beta*(sg=0)={zero}, ratio sweep {ratio_sweep:.4?}, sg sweep {sg_sweep:.4?}"),
    );
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation of the ranks; 0 when either side is constant.
fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

const GRID_CLIENT_LRS: [f64; 2] = [0.01, 0.05];

fn softmax_factory(
    swap: f64,
    profile: &ParticipationProfile<f64>,
    seed: u64,
) -> fedstale::Result<Box<dyn Objective<f64>>> {
    let cfg = LabelSwapConfig {
        swap_fraction: swap,
        ..LabelSwapConfig::default()
    };
    Ok(Box::new(SoftmaxObjective::generate(
        &cfg,
        profile.groups(),
        seed,
        30,
    )?))
}

fn softmax_base(dim: usize) -> TrainConfig<f64> {
    TrainConfig {
        rounds: 1,
        server_lr: 1.0,
        local: LocalConfig {
            local_steps: 5,
            client_lr: GRID_CLIENT_LRS[0],
            batch_size: 1,
        },
        aggregator: AggregatorConfig::new(Rule::FedStale, 0.5).unwrap(),
        profile: ParticipationProfile::new(vec![1.0; 24]).unwrap(),
        master_seed: 0,
        participation_seed: None,
        init_point: Param::zeros(dim),
        weight_cap: None,
        threads: 1,
        record_trajectory: false,
        record_wall_time: false,
    }
}

#[test]
fn criterion_09_regime_grid() {
    let start = Instant::now();
    let probe = make_two_group_profile(24, 0.5, 12, 0).unwrap();
    let dim = softmax_factory(0.0, &probe, 0).unwrap().dim();
    let spec = GridSpec {
        ratios: vec![1.0, 3.0, 10.0, 50.0],
        swap_fractions: vec![0.0, 0.33, 0.66, 1.0],
        betas: vec![0.0, 0.2, 0.5, 0.8, 1.0],
        client_lrs: GRID_CLIENT_LRS.to_vec(),
        seeds: vec![0, 1, 2],
        n_clients: 24,
        group2_size: 12,
        rounds: None,
        comparability: true,
        group_seed: 0,
        threads: 0,
    };
    let grid = run_grid(&softmax_base(dim), &spec, &softmax_factory).unwrap();
    let opt = grid.beta_opt();
    let betas: Vec<f64> = opt.iter().map(|c| c.2).collect();
    let swaps: Vec<f64> = opt.iter().map(|c| c.1).collect();
    let ratios: Vec<f64> = opt.iter().map(|c| c.0).collect();
    let rho_swap = spearman(&betas, &swaps);
    let rho_ratio = spearman(&betas, &ratios);
    let cells: Vec<String> = opt
        .iter()
        .map(|(r, s, b)| format!("({r},{s})={b}"))
        .collect();
    finish(
        9,
        start,
        Duration::from_secs(600),
        opt.len() == 16 && rho_swap >= 0.0 && rho_ratio <= 0.0,
        format!(
            "spearman(beta_opt, swap) = {rho_swap:.3} (>= 0), spearman(beta_opt, ratio) = {rho_ratio:.3} (<= 0); {}",
            cells.join(" ")
        ),
    );
}

#[test]
fn criterion_10_online_estimation() {
    let start = Instant::now();
    let ratio = 3.0;
    let p_min = p_min_for_ratio(24, 12, ratio).unwrap();
    let profile = make_two_group_profile(24, p_min, 12, 0).unwrap();
    let rounds = (10.0 / p_min - 1e-9).ceil() as usize;
    let seeds = [0u64, 1, 2];
    let objectives: Vec<Box<dyn Objective<f64>>> = seeds
        .iter()
        .map(|&s| softmax_factory(0.66, &profile, s).unwrap())
        .collect();
    let dim = objectives[0].dim();

    let mut ok = true;
    let mut details = Vec::new();
    let mut p_hat_error = 0.0f64;
    for (rule, beta) in [
        (Rule::UFedAvg, 0.0),
        (Rule::FedStale, 0.5),
        (Rule::UFedVarp, 1.0),
    ] {
        let mut mean_loss = [0.0; 2];
        for (slot, source) in [WeightsSource::ExactProbs, WeightsSource::Estimator]
            .into_iter()
            .enumerate()
        {
            for (obj, &seed) in objectives.iter().zip(&seeds) {
                let mut cfg = softmax_base(dim);
                cfg.rounds = rounds;
                cfg.profile = profile.clone();
                cfg.aggregator = AggregatorConfig {
                    rule,
                    beta,
                    weights_source: source,
                };
                cfg.master_seed = seed;
                let res = run(&cfg, obj.as_ref()).unwrap();
                mean_loss[slot] += res.final_loss / seeds.len() as f64;
                if source == WeightsSource::Estimator {
                    let rare: Vec<f64> = profile
                        .groups()
                        .iter()
                        .enumerate()
                        .filter(|(_, g)| **g == Group::Intermittent)
                        .map(|(i, _)| res.estimator.estimated_probability(i).unwrap())
                        .collect();
                    let group_mean = rare.iter().sum::<f64>() / rare.len() as f64;
                    p_hat_error = p_hat_error.max((group_mean - p_min).abs());
                }
            }
        }
        let within = mean_loss[1] <= 2.0 * mean_loss[0];
        ok &= within;
        details.push(format!(
            "{} loss estimated {:.4} vs exact {:.4}",
            rule.name(),
            mean_loss[1],
            mean_loss[0]
        ));
    }
    ok &= p_hat_error <= 0.05;
    finish(
        10,
        start,
        Duration::from_secs(120),
        ok,
        format!(
            "{}; max |group-mean p_hat - {p_min}| = {p_hat_error:.4} (tol 0.05) after {rounds} rounds",
            details.join(", ")
        ),
    );
}

#[test]
fn criterion_11_reproducibility() {
    let start = Instant::now();
    let manifest = "[objective]\nobjective = \"softmax\"\nswap_fraction = 0.66\n\
                    [participation]\nratio = 3.0\n\
                    [training]\nrounds = 30\nseed = 5\n\
                    [aggregation]\nrule = \"fedstale\"\nbeta = 0.5\n";
    let metrics = |threads: usize| -> Vec<u8> {
        let cfg = fedstale::config::parse_config(manifest, &[]).unwrap();
        let mut tc = cfg.train_config().unwrap();
        tc.threads = threads;
        let obj = cfg.build_objective(None, &tc.profile, cfg.seed).unwrap();
        let res = run(&tc, obj.as_ref()).unwrap();
        let mut buf = Vec::new();
        fedstale::engine::write_metrics_csv(&res.records, &mut buf).unwrap();
        buf
    };
    let one = metrics(1);
    let eight = metrics(8);
    let again = metrics(8);
    finish(
        11,
        start,
        Duration::from_secs(60),
        one == eight && eight == again && !one.is_empty(),
        format!(
            "metrics CSV of {} bytes identical across threads 1 and 8: {}",
            one.len(),
            one == eight && eight == again
        ),
    );
}
