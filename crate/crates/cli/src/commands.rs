use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use fedstale::aggregation::memory_error;
use fedstale::config::{parse_config, ExperimentConfig, ParticipationSpec};
use fedstale::engine::{self, fmt_real, GridSpec, RepeatedResult};
use fedstale::objectives::{estimate_stats, global_loss, probe_points};
use fedstale::participation::{read_trace, stats, write_trace};
use fedstale::theory::{self, BoundInputs, HardInstance};
use fedstale::{Error, MemoryBank, Param};

use crate::output::OutputDir;
use crate::Common;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_IO: u8 = 4;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Divergence { .. } | Error::NonFinite { .. } => EXIT_DIVERGENCE,
                Error::Io(_) | Error::Csv(_) => EXIT_IO,
                _ => EXIT_CONFIG,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_IO
}

struct Ctx {
    cfg: ExperimentConfig,
    out: OutputDir,
    threads: usize,
    wall_time: bool,
}

pub fn dispatch(name: &str, common: &Common, trace: Option<&Path>) -> Result<String> {
    let cfg = load_config(common)?;
    let root = common
        .out
        .clone()
        .unwrap_or_else(|| common.out_root.join(name));
    let out = OutputDir::create(&root, common.force)?;
    let threads = common
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let ctx = Ctx {
        cfg,
        out,
        threads,
        wall_time: common.wall_time,
    };
    let result = match name {
        "run" => cmd_run(&ctx, None),
        "replay" => {
            let path = trace.context("replay needs --trace")?;
            cmd_run(&ctx, Some(path))
        }
        "repeat" => cmd_repeat(&ctx),
        "grid" => cmd_grid(&ctx),
        "theory" => cmd_theory(&ctx),
        "lowerbound" => cmd_lowerbound(&ctx),
        other => unreachable!("unknown command {other}"),
    };
    match result {
        Ok(summary) => {
            ctx.out
                .write_bytes("manifest.toml", ctx.cfg.to_manifest(name).as_bytes())?;
            Ok(summary)
        }
        Err(e) => {
            ctx.out.mark_failed(&format!("{e:#}"));
            Err(e)
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => String::new(),
    };
    let mut overrides = common.set.clone();
    if !common.seeds.is_empty() {
        let list: Vec<String> = common.seeds.iter().map(u64::to_string).collect();
        overrides.push(format!("seeds=[{}]", list.join(",")));
        overrides.push(format!("seed={}", common.seeds[0]));
    }
    if common.comparability {
        overrides.push("comparability=true".into());
    }
    Ok(parse_config(&text, &overrides)?)
}

fn cmd_run(ctx: &Ctx, trace_path: Option<&Path>) -> Result<String> {
    let cfg = &ctx.cfg;
    let mut tc = cfg.train_config()?;
    tc.threads = ctx.threads;
    tc.record_wall_time = ctx.wall_time;
    let obj = cfg.build_objective(None, &tc.profile, cfg.seed)?;
    let result = match trace_path {
        Some(path) => {
            let file = fs::File::open(path)
                .with_context(|| format!("opening trace {}", path.display()))?;
            let trace = read_trace(file)?;
            engine::replay(&tc, obj.as_ref(), &trace)?
        }
        None => engine::run(&tc, obj.as_ref())?,
    };
    ctx.out.write_with("metrics.csv", |b| {
        engine::write_metrics_csv(&result.records, b)
    })?;
    ctx.out
        .write_with("trace.csv", |b| write_trace(&result.trace, b))?;
    ctx.out
        .write_with("memory.csv", |b| result.bank.write_csv(b))?;
    ctx.out
        .write_bytes("final_w.csv", param_csv(&result.final_w).as_bytes())?;
    let mut summary = format!(
        "rounds={} final_loss={} min_grad_norm_sq={}",
        result.records.len(),
        fmt_real(result.final_loss),
        fmt_real(result.min_grad_norm_sq)
    );
    if let Some(acc) = result.test_accuracy {
        summary += &format!(" test_accuracy={}", fmt_real(acc));
    }
    Ok(summary)
}

fn param_csv(w: &Param<f64>) -> String {
    let mut s = String::from("coord,value\n");
    for (i, v) in w.iter().enumerate() {
        s += &format!("{i},{}\n", fmt_real(*v));
    }
    s
}

fn cmd_repeat(ctx: &Ctx) -> Result<String> {
    let cfg = &ctx.cfg;
    let mut tc = cfg.train_config()?;
    tc.threads = ctx.threads;
    tc.record_wall_time = ctx.wall_time;
    let objectives = cfg
        .seeds
        .iter()
        .map(|&s| cfg.build_objective(None, &tc.profile, s))
        .collect::<fedstale::Result<Vec<_>>>()?;
    let seeds = cfg.seeds.clone();
    let rep = engine::run_repeated_with(&tc, &seeds, cfg.comparability, |seed| {
        let idx = seeds.iter().position(|&s| s == seed).unwrap_or(0);
        Ok(objectives[idx].as_ref())
    })?;
    for (seed, run) in rep.seeds.iter().zip(&rep.runs) {
        ctx.out
            .write_with(&format!("metrics_seed{seed}.csv"), |b| {
                engine::write_metrics_csv(&run.records, b)
            })?;
        ctx.out.write_with(&format!("trace_seed{seed}.csv"), |b| {
            write_trace(&run.trace, b)
        })?;
    }
    ctx.out
        .write_bytes("curves.csv", curves_csv(&rep).as_bytes())?;
    let (mean, se) = engine::mean_stderr(&rep.final_losses());
    Ok(format!(
        "seeds={} final_loss_mean={} final_loss_stderr={}",
        rep.seeds.len(),
        fmt_real(mean),
        fmt_real(se)
    ))
}

fn curves_csv(rep: &RepeatedResult<f64>) -> String {
    let mut s = String::from("round,loss_mean,loss_stderr,grad_norm_sq_mean,grad_norm_sq_stderr\n");
    for t in 0..rep.mean_loss.len() {
        s += &format!(
            "{},{},{},{},{}\n",
            t + 1,
            fmt_real(rep.mean_loss[t]),
            fmt_real(rep.stderr_loss[t]),
            fmt_real(rep.mean_grad_norm_sq[t]),
            fmt_real(rep.stderr_grad_norm_sq[t])
        );
    }
    s
}

fn cmd_grid(ctx: &Ctx) -> Result<String> {
    let cfg = &ctx.cfg;
    let group2_size = match cfg.participation {
        ParticipationSpec::TwoGroup { group2_size, .. } => group2_size,
        ParticipationSpec::Explicit(_) => cfg.n_clients / 2,
    };
    let spec = GridSpec {
        ratios: cfg.grid.ratios.clone(),
        swap_fractions: cfg.grid.swap_fractions.clone(),
        betas: cfg.grid.betas.clone(),
        client_lrs: cfg.grid.client_lrs.clone(),
        seeds: cfg.seeds.clone(),
        n_clients: cfg.n_clients,
        group2_size,
        rounds: cfg.rounds,
        comparability: cfg.comparability,
        group_seed: cfg.group_seed,
        threads: ctx.threads,
    };
    let base = cfg.train_config()?;
    let factory = |swap: f64, profile: &fedstale::ParticipationProfile, seed: u64| {
        cfg.build_objective(Some(swap), profile, seed)
    };
    let grid = engine::run_grid(&base, &spec, &factory)?;
    ctx.out.write_with("grid.csv", |b| grid.write_csv(b))?;
    let cells: Vec<String> = grid
        .beta_opt()
        .iter()
        .map(|(r, s, b)| format!("({r},{s})->{b}"))
        .collect();
    Ok(format!(
        "metric={} beta_opt {}",
        grid.metric.name(),
        cells.join(" ")
    ))
}

fn cmd_theory(ctx: &Ctx) -> Result<String> {
    let cfg = &ctx.cfg;
    let tc = cfg.train_config()?;
    let obj = cfg.build_objective(None, &tc.profile, cfg.seed)?;
    let w1 = tc.init_point.clone();
    let probes = probe_points(&w1, cfg.theory.probe_count.max(2), cfg.seed)?;
    let obj_stats = estimate_stats(obj.as_ref(), &probes, cfg.local.batch_size)?;
    let f1 = global_loss(obj.as_ref(), &w1);
    // without a known optimum, F >= 0 makes F(w1) an upper estimate of the gap
    let (f_gap, gap_exact) = match obj.optimum() {
        Some((_, f_star)) => (f1 - f_star, true),
        None => (f1, false),
    };
    let h_init = memory_error(
        &MemoryBank::new(obj.n_clients(), obj.dim()),
        obj.as_ref(),
        &w1,
    )?;
    let inp = BoundInputs {
        smoothness: obj_stats.smoothness,
        sigma_sq: obj_stats.sigma_sq,
        sg_sq: obj_stats.sg_sq,
        stats: stats(&tc.profile),
        n_clients: obj.n_clients(),
        local_steps: cfg.local.local_steps,
        client_lr: cfg.local.client_lr,
        server_lr: cfg.server_lr,
        rounds: tc.rounds,
        beta: cfg.beta,
        f_init_gap: f_gap,
        h_init,
        a1: cfg.theory.a1,
        a2: cfg.theory.a2,
    };
    let check = theory::check_lr_constraints(&inp);
    let bound = theory::theorem1_bound(&inp, cfg.theory.allow_violation)?;
    let mut betas = cfg.grid.betas.clone();
    if !betas.contains(&cfg.beta) {
        betas.push(cfg.beta);
    }
    betas.sort_by(f64::total_cmp);
    ctx.out
        .write_with("bounds.csv", |b| theory::write_bound_table(&inp, &betas, b))?;
    let star = theory::beta_star(&inp);
    let mut info = format!(
        "key,value\nsmoothness,{}\nsigma_sq,{}\nsg_sq,{}\np_var,{}\np_avg,{}\np_min,{}\nf_init_gap,{}\nf_gap_exact,{}\n\
         h_init,{}\nclient_lr_limit,{}\nserver_lr_limit,{}\nconstraints_ok,{}\nunit_constants,{}\n",
        fmt_real(inp.smoothness),
        fmt_real(inp.sigma_sq),
        fmt_real(inp.sg_sq),
        fmt_real(inp.stats.p_var),
        fmt_real(inp.stats.p_avg),
        fmt_real(inp.stats.p_min),
        fmt_real(f_gap),
        u8::from(gap_exact),
        fmt_real(h_init),
        fmt_real(check.client_limit),
        fmt_real(check.server_limit()),
        u8::from(check.ok()),
        u8::from(inp.unit_constants()),
    );
    match &star {
        Ok(s) => info += &format!("beta_star,{}\n", fmt_real(s.beta)),
        Err(_) => info += "beta_star,nan\n",
    }
    ctx.out.write_bytes("theory.csv", info.as_bytes())?;
    Ok(format!(
        "bound_total={} beta_star={} constraints_ok={} (unit constants)",
        fmt_real(bound.total),
        star.map_or_else(|_| "undefined".to_string(), |s| fmt_real(s.beta)),
        check.ok()
    ))
}

fn cmd_lowerbound(ctx: &Ctx) -> Result<String> {
    let cfg = &ctx.cfg;
    let lb = &cfg.lowerbound;
    let n = cfg.n_clients.max(2);
    let (smoothness, horizon) = match cfg.objective {
        fedstale::config::ObjectiveSpec::HardInstance {
            horizon,
            smoothness,
            ..
        } => (smoothness, horizon.max(lb.rounds + 2)),
        _ => (1.0, lb.rounds + 2),
    };

    let sweep_inst = HardInstance::new(2 * (lb.max_t + 2) + 1, lb.max_t + 2, smoothness, n)?;
    let rows = theory::frontier_sweep(&sweep_inst, &lb.taus, lb.max_t)?;
    let mismatches = rows.iter().filter(|r| !r.matches()).count();
    ctx.out
        .write_with("frontier.csv", |b| theory::write_frontier_table(&rows, b))?;

    let inst = HardInstance::new(2 * horizon + 1, horizon, smoothness, n)?;
    let envelope = theory::lower_bound_curve(lb.p_min, lb.rounds, inst.initial_gap(), smoothness)?;
    let seeds: Vec<u64> = (0..lb.seeds as u64).collect();
    let mut violations = 0;
    for &beta in &lb.betas {
        let curve = theory::dominance_curve(
            &inst,
            lb.p_min,
            beta,
            &cfg.local,
            cfg.server_lr,
            lb.rounds,
            &seeds,
        )?;
        violations += curve.iter().zip(&envelope).filter(|(e, b)| e < b).count();
        let name = format!("envelope_beta{}.csv", beta_label(beta));
        ctx.out.write_with(&name, |b| {
            theory::write_envelope_table(&envelope, &curve, b)
        })?;
    }
    Ok(format!(
        "frontier_mismatches={mismatches} envelope_violations={violations} taus={} seeds={}",
        lb.taus.len(),
        lb.seeds
    ))
}

fn beta_label(beta: f64) -> String {
    format!("{beta}").replace('.', "p")
}
