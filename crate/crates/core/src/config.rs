//! Experiment configuration: sectioned key/value text (TOML) or JSON with the
//! same schema, command-line overrides, and the manifest echo.
//!
//! Every key name is unique across sections, so a key may be written bare
//! at the top level, inside its section, or as `section.key` in an override.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::aggregation::{AggregatorConfig, Rule, WeightsSource};
use crate::engine::{default_horizon, TrainConfig};
use crate::error::{Error, Result};
use crate::local_solver::LocalConfig;
use crate::objectives::{LabelSwapConfig, Objective, QuadraticObjective, SoftmaxObjective};
use crate::participation::{p_min_for_ratio, stats, ParticipationProfile};
use crate::scalar::Param;
use crate::theory::HardInstance;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Str,
    IntList,
    FloatList,
}

// (section, key, kind)
const SCHEMA: &[(&str, &str, Kind)] = &[
    ("objective", "objective", Kind::Str),
    ("objective", "noise_variance", Kind::Float),
    ("objective", "samples_per_client", Kind::Int),
    ("objective", "test_samples_per_client", Kind::Int),
    ("objective", "features", Kind::Int),
    ("objective", "class_count", Kind::Int),
    ("objective", "swap_fraction", Kind::Float),
    ("objective", "center_scale", Kind::Float),
    ("objective", "dim", Kind::Int),
    ("objective", "horizon", Kind::Int),
    ("objective", "smoothness", Kind::Float),
    ("participation", "n_clients", Kind::Int),
    ("participation", "probs", Kind::FloatList),
    ("participation", "ratio", Kind::Float),
    ("participation", "group2_size", Kind::Int),
    ("participation", "group_seed", Kind::Int),
    ("participation", "weights", Kind::Str),
    ("participation", "weight_cap", Kind::Float),
    ("participation", "comparability", Kind::Bool),
    ("training", "rounds", Kind::Int),
    ("training", "server_lr", Kind::Float),
    ("training", "client_lr", Kind::Float),
    ("training", "local_steps", Kind::Int),
    ("training", "batch_size", Kind::Int),
    ("training", "init", Kind::FloatList),
    ("training", "seed", Kind::Int),
    ("training", "seeds", Kind::IntList),
    ("aggregation", "rule", Kind::Str),
    ("aggregation", "beta", Kind::Float),
    ("grid", "ratios", Kind::FloatList),
    ("grid", "swap_fractions", Kind::FloatList),
    ("grid", "betas", Kind::FloatList),
    ("grid", "client_lrs", Kind::FloatList),
    ("theory", "a1", Kind::Float),
    ("theory", "a2", Kind::Float),
    ("theory", "allow_violation", Kind::Bool),
    ("theory", "probe_count", Kind::Int),
    ("lowerbound", "taus", Kind::IntList),
    ("lowerbound", "max_t", Kind::Int),
    ("lowerbound", "lb_p_min", Kind::Float),
    ("lowerbound", "lb_rounds", Kind::Int),
    ("lowerbound", "lb_seeds", Kind::Int),
    ("lowerbound", "lb_betas", Kind::FloatList),
    ("manifest", "version", Kind::Str),
    ("manifest", "command", Kind::Str),
];

fn lookup(key: &str) -> Option<(&'static str, &'static str, Kind)> {
    SCHEMA.iter().copied().find(|&(_, k, _)| k == key)
}

/// Which objective the experiment trains.
#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveSpec {
    /// The two-client 2-D quadratic.
    Quadratic2d { noise_variance: f64 },
    /// Synthetic softmax classification with label swapping.
    Softmax {
        data: LabelSwapConfig,
        test_samples_per_client: usize,
    },
    /// The lower-bound construction split across clients 0 and 1.
    HardInstance {
        dim: usize,
        horizon: usize,
        smoothness: f64,
    },
}

impl ObjectiveSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveSpec::Quadratic2d { .. } => "quadratic2d",
            ObjectiveSpec::Softmax { .. } => "softmax",
            ObjectiveSpec::HardInstance { .. } => "hard_instance",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParticipationSpec {
    /// One probability per client.
    Explicit(Vec<f64>),
    /// Always-on group plus an intermittent group sized for `p_avg / p_min = ratio`.
    TwoGroup { ratio: f64, group2_size: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridAxes {
    pub ratios: Vec<f64>,
    pub swap_fractions: Vec<f64>,
    pub betas: Vec<f64>,
    pub client_lrs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheorySettings {
    pub a1: f64,
    pub a2: f64,
    pub allow_violation: bool,
    pub probe_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundSettings {
    pub taus: Vec<usize>,
    pub max_t: usize,
    pub p_min: f64,
    pub rounds: usize,
    pub seeds: usize,
    pub betas: Vec<f64>,
}

/// A fully resolved experiment: every field carries its final value.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub objective: ObjectiveSpec,
    pub n_clients: usize,
    pub participation: ParticipationSpec,
    pub group_seed: u64,
    pub weights_source: WeightsSource,
    pub weight_cap: Option<f64>,
    pub comparability: bool,
    /// `None` means `ceil(10 / p_min)`.
    pub rounds: Option<usize>,
    pub server_lr: f64,
    pub local: LocalConfig<f64>,
    pub init: Option<Vec<f64>>,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub rule: Rule,
    pub beta: f64,
    pub grid: GridAxes,
    pub theory: TheorySettings,
    pub lowerbound: LowerBoundSettings,
}

type Entries = BTreeMap<&'static str, (toml::Value, String)>;

/// Parses TOML (or JSON when the text starts with `{`) and applies
/// `overrides` of the form `key=value` or `section.key=value`.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let table = if text.trim_start().starts_with('{') {
        let json: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| config_err(format!("line {}", e.line()), e.to_string()))?;
        match json_to_toml(&json, "")? {
            toml::Value::Table(t) => t,
            _ => return Err(config_err("document", "top level must be an object")),
        }
    } else {
        text.parse::<toml::Table>().map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            config_err(
                line.map_or_else(|| "document".to_string(), |l| format!("line {l}")),
                e.message().to_string(),
            )
        })?
    };

    let mut entries = Entries::new();
    for (name, value) in &table {
        match value {
            toml::Value::Table(inner) if SCHEMA.iter().any(|&(s, _, _)| s == name) => {
                for (key, v) in inner {
                    let loc = locate(text, key);
                    let (section, k, _) = lookup(key)
                        .ok_or_else(|| config_err(&loc, format!("unknown key `{name}.{key}`")))?;
                    if section != name {
                        return Err(config_err(
                            &loc,
                            format!("key `{key}` belongs to section [{section}], not [{name}]"),
                        ));
                    }
                    insert(&mut entries, k, v.clone(), loc)?;
                }
            }
            _ => {
                let loc = locate(text, name);
                let (_, k, _) = lookup(name)
                    .ok_or_else(|| config_err(&loc, format!("unknown key `{name}`")))?;
                insert(&mut entries, k, value.clone(), loc)?;
            }
        }
    }
    for ov in overrides {
        let (lhs, rhs) = ov
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set {ov}"), "expected KEY=VALUE"))?;
        let lhs = lhs.trim();
        let key = match lhs.split_once('.') {
            Some((section, key)) => match lookup(key) {
                Some((s, _, _)) if s == section => key,
                _ => {
                    return Err(config_err(
                        format!("--set {ov}"),
                        format!("unknown key `{lhs}`"),
                    ))
                }
            },
            None => lhs,
        };
        let (_, k, _) = lookup(key)
            .ok_or_else(|| config_err(format!("--set {ov}"), format!("unknown key `{key}`")))?;
        let value = parse_override_value(rhs.trim());
        entries.insert(k, (value, format!("--set {ov}")));
    }
    build(&entries)
}

fn insert(entries: &mut Entries, key: &'static str, value: toml::Value, loc: String) -> Result<()> {
    if entries.contains_key(key) {
        return Err(config_err(&loc, format!("key `{key}` given twice")));
    }
    entries.insert(key, (value, loc));
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn config_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        location: location.into(),
        message: message.into(),
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

// `key (line N)` for the first line assigning `key`, in TOML or JSON form.
fn locate(text: &str, key: &str) -> String {
    for (idx, line) in text.lines().enumerate() {
        let t = line.trim_start();
        let rest = t
            .strip_prefix(key)
            .or_else(|| t.strip_prefix(&format!("\"{key}\"")));
        if let Some(rest) = rest {
            let rest = rest.trim_start();
            if rest.starts_with('=') || rest.starts_with(':') {
                return format!("{key} (line {})", idx + 1);
            }
        }
    }
    key.to_string()
}

fn json_to_toml(v: &serde_json::Value, path: &str) -> Result<toml::Value> {
    use serde_json::Value as J;
    Ok(match v {
        J::Null => return Err(config_err(path, "null is not a valid value")),
        J::Bool(b) => toml::Value::Boolean(*b),
        J::Number(n) => match n.as_i64() {
            Some(i) => toml::Value::Integer(i),
            None => toml::Value::Float(
                n.as_f64()
                    .ok_or_else(|| config_err(path, "number out of range"))?,
            ),
        },
        J::String(s) => toml::Value::String(s.clone()),
        J::Array(items) => toml::Value::Array(
            items
                .iter()
                .map(|x| json_to_toml(x, path))
                .collect::<Result<_>>()?,
        ),
        J::Object(map) => {
            let mut t = toml::Table::new();
            for (k, x) in map {
                t.insert(k.clone(), json_to_toml(x, k)?);
            }
            toml::Value::Table(t)
        }
    })
}

struct Reader<'a> {
    entries: &'a Entries,
}

impl Reader<'_> {
    fn get(&self, key: &'static str) -> Option<&(toml::Value, String)> {
        debug_assert!(lookup(key).is_some(), "{key} missing from schema");
        self.entries.get(key)
    }

    fn loc(&self, key: &'static str) -> String {
        self.get(key)
            .map_or_else(|| key.to_string(), |(_, l)| l.clone())
    }

    fn err(&self, key: &'static str, msg: impl Into<String>) -> Error {
        config_err(self.loc(key), msg)
    }

    fn float(&self, key: &'static str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some((v, loc)) => {
                as_float(v).ok_or_else(|| config_err(loc, format!("`{key}` expects a number")))
            }
        }
    }

    fn opt_float(&self, key: &'static str) -> Result<Option<f64>> {
        self.get(key).map(|_| self.float(key, 0.0)).transpose()
    }

    fn int(&self, key: &'static str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some((v, loc)) => match v {
                toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                _ => Err(config_err(
                    loc,
                    format!("`{key}` expects a nonnegative integer"),
                )),
            },
        }
    }

    fn usize(&self, key: &'static str, default: usize) -> Result<usize> {
        self.int(key, default as u64).map(|v| v as usize)
    }

    fn opt_usize(&self, key: &'static str) -> Result<Option<usize>> {
        self.get(key).map(|_| self.usize(key, 0)).transpose()
    }

    fn boolean(&self, key: &'static str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some((toml::Value::Boolean(b), _)) => Ok(*b),
            Some((_, loc)) => Err(config_err(loc, format!("`{key}` expects true or false"))),
        }
    }

    fn string(&self, key: &'static str, default: &str) -> Result<String> {
        match self.get(key) {
            None => Ok(default.to_string()),
            Some((toml::Value::String(s), _)) => Ok(s.clone()),
            Some((_, loc)) => Err(config_err(loc, format!("`{key}` expects a string"))),
        }
    }

    fn floats(&self, key: &'static str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some((toml::Value::Array(items), loc)) => items
                .iter()
                .map(|x| {
                    as_float(x).ok_or_else(|| {
                        config_err(loc, format!("`{key}` expects a list of numbers"))
                    })
                })
                .collect(),
            Some((v, loc)) => as_float(v)
                .map(|x| vec![x])
                .ok_or_else(|| config_err(loc, format!("`{key}` expects a list of numbers"))),
        }
    }

    fn ints(&self, key: &'static str, default: &[u64]) -> Result<Vec<u64>> {
        let bad = |loc: &String| {
            config_err(
                loc,
                format!("`{key}` expects a list of nonnegative integers"),
            )
        };
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some((toml::Value::Array(items), loc)) => items
                .iter()
                .map(|x| match x {
                    toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                    _ => Err(bad(loc)),
                })
                .collect(),
            Some((toml::Value::Integer(i), _)) if *i >= 0 => Ok(vec![*i as u64]),
            Some((_, loc)) => Err(bad(loc)),
        }
    }
}

fn as_float(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(f) => Some(*f),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn build(entries: &Entries) -> Result<ExperimentConfig> {
    let r = Reader { entries };
    let kind = r.string("objective", "quadratic2d")?;
    let default_clients = match kind.as_str() {
        "softmax" => 24,
        _ => 2,
    };
    let n_clients = r.usize("n_clients", default_clients)?;
    if n_clients == 0 {
        return Err(r.err("n_clients", "`n_clients` must be at least 1"));
    }

    let objective =
        match kind.as_str() {
            "quadratic2d" => {
                if n_clients != 2 {
                    return Err(r.err("n_clients", "quadratic2d has exactly 2 clients"));
                }
                let noise_variance = r.float("noise_variance", 0.0)?;
                if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
                    return Err(r.err(
                        "noise_variance",
                        "`noise_variance` must be finite and nonnegative",
                    ));
                }
                ObjectiveSpec::Quadratic2d { noise_variance }
            }
            "softmax" => {
                let base = LabelSwapConfig::default();
                let swap_fraction = r.float("swap_fraction", 0.0)?;
                if !(0.0..=1.0).contains(&swap_fraction) {
                    return Err(r.err(
                        "swap_fraction",
                        format!("`swap_fraction` = {swap_fraction} must lie in [0, 1]"),
                    ));
                }
                let data = LabelSwapConfig {
                    samples_per_client: r.usize("samples_per_client", base.samples_per_client)?,
                    features: r.usize("features", base.features)?,
                    class_count: r.usize("class_count", base.class_count)?,
                    swap_fraction,
                    center_scale: r.float("center_scale", base.center_scale)?,
                    ..base
                };
                if data.samples_per_client == 0 || data.features == 0 || data.class_count < 2 {
                    return Err(r.err(
                        "samples_per_client",
                        "softmax needs samples_per_client >= 1, features >= 1 and class_count >= 2",
                    ));
                }
                ObjectiveSpec::Softmax {
                    data,
                    test_samples_per_client: r.usize("test_samples_per_client", 30)?,
                }
            }
            "hard_instance" => {
                let horizon = r.usize("horizon", 100)?;
                let dim = r.usize("dim", 2 * horizon + 1)?;
                let smoothness = r.float("smoothness", 1.0)?;
                if horizon == 0 || 2 * horizon + 1 > dim {
                    return Err(r.err(
                        "horizon",
                        "`horizon` must satisfy 1 <= horizon <= (dim - 1) / 2",
                    ));
                }
                if !(smoothness > 0.0 && smoothness.is_finite()) {
                    return Err(r.err("smoothness", "`smoothness` must be finite and positive"));
                }
                if n_clients < 2 {
                    return Err(r.err("n_clients", "hard_instance needs at least 2 clients"));
                }
                ObjectiveSpec::HardInstance {
                    dim,
                    horizon,
                    smoothness,
                }
            }
            other => return Err(r.err(
                "objective",
                format!(
                    "unknown objective `{other}` (expected quadratic2d, softmax or hard_instance)"
                ),
            )),
        };

    let participation = match (r.get("probs"), r.get("ratio")) {
        (Some(_), Some(_)) => {
            return Err(r.err("ratio", "give either `probs` or `ratio`, not both"))
        }
        (Some(_), None) => {
            let probs = r.floats("probs", &[])?;
            if probs.len() != n_clients {
                return Err(r.err(
                    "probs",
                    format!(
                        "`probs` has {} entries for {n_clients} clients",
                        probs.len()
                    ),
                ));
            }
            if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
                return Err(r.err("probs", format!("probability {p} outside (0, 1]")));
            }
            ParticipationSpec::Explicit(probs)
        }
        (None, Some(_)) => {
            let ratio = r.float("ratio", 1.0)?;
            let group2_size = r.usize("group2_size", n_clients / 2)?;
            p_min_for_ratio(n_clients, group2_size, ratio)
                .map_err(|e| r.err("ratio", e.to_string()))?;
            ParticipationSpec::TwoGroup { ratio, group2_size }
        }
        (None, None) => ParticipationSpec::Explicit(vec![1.0; n_clients]),
    };

    let weights_source = match r.string("weights", "exact")?.as_str() {
        "exact" => WeightsSource::ExactProbs,
        "estimator" => WeightsSource::Estimator,
        other => {
            return Err(r.err(
                "weights",
                format!("unknown weights source `{other}` (exact or estimator)"),
            ))
        }
    };
    let weight_cap = r.opt_float("weight_cap")?;
    if let Some(c) = weight_cap {
        if !(c > 1.0 && c.is_finite()) {
            return Err(r.err("weight_cap", "`weight_cap` must be finite and above 1"));
        }
    }

    let rounds = r.opt_usize("rounds")?;
    if rounds == Some(0) {
        return Err(r.err("rounds", "`rounds` must be at least 1"));
    }
    let server_lr = r.float("server_lr", 1.0)?;
    if !(server_lr > 0.0 && server_lr.is_finite()) {
        return Err(r.err("server_lr", "`server_lr` must be finite and positive"));
    }
    let local = LocalConfig {
        local_steps: r.usize("local_steps", 5)?,
        client_lr: r.float("client_lr", 0.01)?,
        batch_size: r.usize("batch_size", 1)?,
    };
    if !(local.client_lr > 0.0 && local.client_lr.is_finite()) {
        return Err(r.err("client_lr", "`client_lr` must be finite and positive"));
    }
    if local.local_steps == 0 {
        return Err(r.err("local_steps", "`local_steps` must be at least 1"));
    }
    if local.batch_size == 0 {
        return Err(r.err("batch_size", "`batch_size` must be at least 1"));
    }

    let init = match r.get("init") {
        None => None,
        Some(_) => Some(r.floats("init", &[])?),
    };
    let seed = r.int("seed", 0)?;
    let seeds = r.ints("seeds", &[seed])?;
    if seeds.is_empty() {
        return Err(r.err("seeds", "`seeds` must not be empty"));
    }

    let rule_name = r.string("rule", "fedstale")?;
    let rule = Rule::parse(&rule_name).ok_or_else(|| {
        r.err(
            "rule",
            format!("unknown rule `{rule_name}` (fedavg_biased, u_fedavg, u_fedvarp or fedstale)"),
        )
    })?;
    let beta = r.float("beta", 0.5)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(r.err("beta", format!("`beta` = {beta} must lie in [0, 1]")));
    }

    let grid = GridAxes {
        ratios: r.floats("ratios", &[1.0, 3.0, 10.0, 50.0])?,
        swap_fractions: r.floats("swap_fractions", &[0.0, 0.33, 0.66, 1.0])?,
        betas: r.floats("betas", &[0.0, 0.2, 0.5, 0.8, 1.0])?,
        client_lrs: r.floats("client_lrs", &[local.client_lr])?,
    };
    if let Some(b) = grid.betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(r.err("betas", format!("grid beta {b} must lie in [0, 1]")));
    }
    if let Some(s) = grid
        .swap_fractions
        .iter()
        .find(|s| !(0.0..=1.0).contains(*s))
    {
        return Err(r.err(
            "swap_fractions",
            format!("swap fraction {s} must lie in [0, 1]"),
        ));
    }
    if let Some(x) = grid.ratios.iter().find(|x| !(**x >= 1.0 && x.is_finite())) {
        return Err(r.err(
            "ratios",
            format!("participation ratio {x} must be at least 1"),
        ));
    }
    if let Some(x) = grid
        .client_lrs
        .iter()
        .find(|x| !(**x > 0.0 && x.is_finite()))
    {
        return Err(r.err(
            "client_lrs",
            format!("client learning rate {x} must be positive"),
        ));
    }
    if grid.ratios.is_empty()
        || grid.swap_fractions.is_empty()
        || grid.betas.is_empty()
        || grid.client_lrs.is_empty()
    {
        return Err(r.err("ratios", "grid axes must be nonempty"));
    }

    let theory = TheorySettings {
        a1: r.float("a1", 1.0)?,
        a2: r.float("a2", 1.0)?,
        allow_violation: r.boolean("allow_violation", false)?,
        probe_count: r.usize("probe_count", 8)?,
    };
    if !(theory.a1 > 0.0 && theory.a2 > 0.0) {
        return Err(r.err("a1", "`a1` and `a2` must be positive"));
    }
    if theory.probe_count < 2 {
        return Err(r.err("probe_count", "`probe_count` must be at least 2"));
    }

    let lowerbound = LowerBoundSettings {
        taus: r
            .ints("taus", &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10])?
            .into_iter()
            .map(|t| t as usize)
            .collect(),
        max_t: r.usize("max_t", 500)?,
        p_min: r.float("lb_p_min", 0.1)?,
        rounds: r.usize("lb_rounds", 100)?,
        seeds: r.usize("lb_seeds", 100)?,
        betas: r.floats("lb_betas", &[0.0, 1.0])?,
    };
    if lowerbound.taus.contains(&0) {
        return Err(r.err("taus", "periods must be at least 1"));
    }
    if !(lowerbound.p_min > 0.0 && lowerbound.p_min <= 1.0) {
        return Err(r.err("lb_p_min", "`lb_p_min` must lie in (0, 1]"));
    }
    if lowerbound.seeds == 0 || lowerbound.rounds == 0 {
        return Err(r.err("lb_seeds", "`lb_seeds` and `lb_rounds` must be at least 1"));
    }
    if let Some(b) = lowerbound.betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(r.err("lb_betas", format!("beta {b} must lie in [0, 1]")));
    }

    // manifest keys are informational
    r.string("version", crate::VERSION)?;
    r.string("command", "")?;

    let cfg = ExperimentConfig {
        objective,
        n_clients,
        participation,
        group_seed: r.int("group_seed", 0)?,
        weights_source,
        weight_cap,
        comparability: r.boolean("comparability", false)?,
        rounds,
        server_lr,
        local,
        init,
        seed,
        seeds,
        rule,
        beta,
        grid,
        theory,
        lowerbound,
    };
    if let Some(init) = &cfg.init {
        if init.len() != cfg.dim() {
            return Err(r.err(
                "init",
                format!(
                    "`init` has {} entries, objective dimension is {}",
                    init.len(),
                    cfg.dim()
                ),
            ));
        }
    }
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        match &self.objective {
            ObjectiveSpec::Quadratic2d { .. } => 2,
            ObjectiveSpec::Softmax { data, .. } => data.class_count * (data.features + 1),
            ObjectiveSpec::HardInstance { dim, .. } => *dim,
        }
    }

    pub fn profile(&self) -> Result<ParticipationProfile<f64>> {
        match &self.participation {
            ParticipationSpec::Explicit(probs) => {
                let groups = probs
                    .iter()
                    .map(|&p| {
                        if p < 1.0 {
                            crate::participation::Group::Intermittent
                        } else {
                            crate::participation::Group::Always
                        }
                    })
                    .collect();
                ParticipationProfile::with_groups(probs.clone(), groups)
            }
            ParticipationSpec::TwoGroup { ratio, group2_size } => {
                let p_min = p_min_for_ratio(self.n_clients, *group2_size, *ratio)?;
                crate::participation::make_two_group_profile(
                    self.n_clients,
                    p_min,
                    *group2_size,
                    self.group_seed,
                )
            }
        }
    }

    /// Rounds after resolving the `ceil(10 / p_min)` default.
    pub fn resolved_rounds(&self) -> Result<usize> {
        match self.rounds {
            Some(t) => Ok(t),
            None => Ok(default_horizon(stats(&self.profile()?).p_min)),
        }
    }

    /// Builds the objective; synthetic data depends on `seed` and the
    /// profile's group assignment.
    pub fn build_objective(
        &self,
        swap_fraction: Option<f64>,
        profile: &ParticipationProfile<f64>,
        seed: u64,
    ) -> Result<Box<dyn Objective<f64>>> {
        Ok(match &self.objective {
            ObjectiveSpec::Quadratic2d { noise_variance } => {
                Box::new(QuadraticObjective::two_client_example(*noise_variance))
            }
            ObjectiveSpec::Softmax {
                data,
                test_samples_per_client,
            } => {
                let data = LabelSwapConfig {
                    swap_fraction: swap_fraction.unwrap_or(data.swap_fraction),
                    ..data.clone()
                };
                Box::new(SoftmaxObjective::generate(
                    &data,
                    profile.groups(),
                    seed,
                    *test_samples_per_client,
                )?)
            }
            ObjectiveSpec::HardInstance {
                dim,
                horizon,
                smoothness,
            } => Box::new(HardInstance::new(
                *dim,
                *horizon,
                *smoothness,
                self.n_clients,
            )?),
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig<f64>> {
        let init = match &self.init {
            Some(v) => Param::from_f64(v)?,
            None => Param::zeros(self.dim()),
        };
        Ok(TrainConfig {
            rounds: self.resolved_rounds()?,
            server_lr: self.server_lr,
            local: self.local,
            aggregator: AggregatorConfig {
                rule: self.rule,
                beta: self.beta,
                weights_source: self.weights_source,
            },
            profile: self.profile()?,
            master_seed: self.seed,
            participation_seed: None,
            init_point: init,
            weight_cap: self.weight_cap,
            threads: 0,
            record_trajectory: false,
            record_wall_time: false,
        })
    }

    /// Resolved configuration as TOML, readable back by [`parse_config`].
    /// Floats carry 17 significant digits.
    pub fn to_manifest(&self, command: &str) -> String {
        let mut out = String::new();
        let f = |x: f64| format!("{x:.16e}");
        let fl = |xs: &[f64]| {
            format!(
                "[{}]",
                xs.iter().map(|&x| f(x)).collect::<Vec<_>>().join(", ")
            )
        };
        let il = |xs: &[u64]| {
            format!(
                "[{}]",
                xs.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
            )
        };
        let _ = writeln!(
            out,
            "[manifest]\nversion = \"{}\"\ncommand = \"{command}\"\n",
            crate::VERSION
        );

        let _ = writeln!(
            out,
            "[objective]\nobjective = \"{}\"",
            self.objective.name()
        );
        match &self.objective {
            ObjectiveSpec::Quadratic2d { noise_variance } => {
                let _ = writeln!(out, "noise_variance = {}", f(*noise_variance));
            }
            ObjectiveSpec::Softmax {
                data,
                test_samples_per_client,
            } => {
                let _ = writeln!(
                    out,
                    "samples_per_client = {}\ntest_samples_per_client = {test_samples_per_client}\nfeatures = {}\n\
                     class_count = {}\nswap_fraction = {}\ncenter_scale = {}",
                    data.samples_per_client,
                    data.features,
                    data.class_count,
                    f(data.swap_fraction),
                    f(data.center_scale)
                );
            }
            ObjectiveSpec::HardInstance {
                dim,
                horizon,
                smoothness,
            } => {
                let _ = writeln!(
                    out,
                    "dim = {dim}\nhorizon = {horizon}\nsmoothness = {}",
                    f(*smoothness)
                );
            }
        }

        let _ = writeln!(out, "\n[participation]\nn_clients = {}", self.n_clients);
        match &self.participation {
            ParticipationSpec::Explicit(p) => {
                let _ = writeln!(out, "probs = {}", fl(p));
            }
            ParticipationSpec::TwoGroup { ratio, group2_size } => {
                let _ = writeln!(out, "ratio = {}\ngroup2_size = {group2_size}", f(*ratio));
            }
        }
        let _ = writeln!(
            out,
            "group_seed = {}\nweights = \"{}\"\ncomparability = {}",
            self.group_seed,
            self.weights_source.name(),
            self.comparability
        );
        if let Some(c) = self.weight_cap {
            let _ = writeln!(out, "weight_cap = {}", f(c));
        }

        let _ = writeln!(out, "\n[training]");
        if let Some(t) = self.rounds {
            let _ = writeln!(out, "rounds = {t}");
        }
        let _ = writeln!(
            out,
            "server_lr = {}\nclient_lr = {}\nlocal_steps = {}\nbatch_size = {}",
            f(self.server_lr),
            f(self.local.client_lr),
            self.local.local_steps,
            self.local.batch_size
        );
        if let Some(init) = &self.init {
            let _ = writeln!(out, "init = {}", fl(init));
        }
        let _ = writeln!(out, "seed = {}\nseeds = {}", self.seed, il(&self.seeds));

        let _ = writeln!(
            out,
            "\n[aggregation]\nrule = \"{}\"\nbeta = {}",
            self.rule.name(),
            f(self.beta)
        );
        let _ = writeln!(
            out,
            "\n[grid]\nratios = {}\nswap_fractions = {}\nbetas = {}\nclient_lrs = {}",
            fl(&self.grid.ratios),
            fl(&self.grid.swap_fractions),
            fl(&self.grid.betas),
            fl(&self.grid.client_lrs)
        );
        let _ = writeln!(
            out,
            "\n[theory]\na1 = {}\na2 = {}\nallow_violation = {}\nprobe_count = {}",
            f(self.theory.a1),
            f(self.theory.a2),
            self.theory.allow_violation,
            self.theory.probe_count
        );
        let lb = &self.lowerbound;
        let taus: Vec<u64> = lb.taus.iter().map(|&t| t as u64).collect();
        let _ = writeln!(
            out,
            "\n[lowerbound]\ntaus = {}\nmax_t = {}\nlb_p_min = {}\nlb_rounds = {}\nlb_seeds = {}\nlb_betas = {}",
            il(&taus),
            lb.max_t,
            f(lb.p_min),
            lb.rounds,
            lb.seeds,
            fl(&lb.betas)
        );
        out
    }
}
