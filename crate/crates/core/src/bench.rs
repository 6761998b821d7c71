//! Seeded experiment runner, INI-style configs and CSV output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agents::{
    self, Agent, AgentConfig, AgentError, LsviUcbAgent, MnlVqlAgent, OptimalAgent, PolicySnapshot, RandomAgent,
};
use crate::envs::{self, DpSolution, EnvError, HardConfig, ShoppingConfig, TabularEnv};
use crate::values::SigmaMode;

pub const CSV_HEADER: &str = "agent,seed,episode,return,cum_regret_realized,cum_regret_expected,episode_ms";
/// Episodes excluded from runtime aggregates.
pub const WARMUP_EPISODES: usize = 5;
/// Expected-regret gaps below this are rounding noise between the DP
/// solution and exact policy evaluation.
pub const REGRET_TOL: f64 = 1e-9;
pub const AGENT_KINDS: [&str; 5] = ["mnl_vql", "myopic", "lsvi_ucb", "optimal", "random"];
pub const ENV_KINDS: [&str; 3] = ["shopping", "hard", "custom"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BenchError {
    fn config(field: &str, message: impl Into<String>) -> Self {
        Self::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Shopping,
    Hard,
    Custom,
}

impl std::str::FromStr for EnvKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "shopping" => Ok(Self::Shopping),
            "hard" => Ok(Self::Hard),
            "custom" => Ok(Self::Custom),
            other => Err(format!(
                "unknown env '{other}' (expected one of {})",
                ENV_KINDS.join(", ")
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    MnlVql,
    Myopic,
    LsviUcb,
    Optimal,
    Random,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MnlVql => "mnl_vql",
            Self::Myopic => "myopic",
            Self::LsviUcb => "lsvi_ucb",
            Self::Optimal => "optimal",
            Self::Random => "random",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mnl_vql" => Ok(Self::MnlVql),
            "myopic" => Ok(Self::Myopic),
            "lsvi_ucb" => Ok(Self::LsviUcb),
            "optimal" => Ok(Self::Optimal),
            "random" => Ok(Self::Random),
            other => Err(format!(
                "unknown agent '{other}' (expected one of {})",
                AGENT_KINDS.join(", ")
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub n_items: usize,
    pub n_states: usize,
    pub horizon: usize,
    pub max_assortment: usize,
    pub dim: usize,
    pub dim_lin: usize,
    pub mnl_bound: f64,
    pub c_const: f64,
    /// Fixed instance seed; when unset each replication draws its own.
    pub seed: Option<u64>,
    pub path: Option<PathBuf>,
}

impl Default for EnvSpec {
    fn default() -> Self {
        let shop = ShoppingConfig::default();
        let hard = HardConfig::default();
        Self {
            kind: EnvKind::Shopping,
            n_items: shop.n_items,
            n_states: shop.n_states,
            horizon: shop.horizon,
            max_assortment: shop.max_assortment,
            dim: shop.dim,
            dim_lin: hard.dim_lin,
            mnl_bound: shop.mnl_bound,
            c_const: hard.c_const,
            seed: None,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub kinds: Vec<AgentKind>,
    pub delta: f64,
    pub radius_scale: f64,
    pub beta_scale: f64,
    pub u_scale: f64,
    pub sigma_mode: SigmaMode,
}

impl Default for AgentSpec {
    fn default() -> Self {
        let d = AgentConfig::default();
        Self {
            kinds: Vec::new(),
            delta: d.delta,
            radius_scale: d.radius_scale,
            beta_scale: d.beta_scale,
            u_scale: d.u_scale,
            sigma_mode: d.sigma_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub agent: AgentSpec,
    pub episodes: usize,
    pub replications: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// When false, `episode_ms` is written as zero so output is byte-stable.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::default(),
            agent: AgentSpec::default(),
            episodes: 0,
            replications: 1,
            seed: 0,
            out: None,
            record_timing: true,
        }
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, value: &str) -> Result<T, BenchError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| BenchError::config(field, format!("cannot parse '{value}': {e}")))
}

fn parse_bool(field: &str, value: &str) -> Result<bool, BenchError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(BenchError::config(field, format!("expected a boolean, got '{value}'"))),
    }
}

/// Parses a comma-separated agent list.
pub fn parse_agents(field: &str, value: &str) -> Result<Vec<AgentKind>, BenchError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_field(field, s))
        .collect()
}

/// Splits INI text into `section.key -> value`.
pub fn parse_ini(text: &str) -> Result<BTreeMap<String, String>, BenchError> {
    let opt = ini::ParseOption {
        enabled_escape: false,
        ..ini::ParseOption::default()
    };
    let doc = ini::Ini::load_from_str_opt(text, opt)
        .map_err(|e| BenchError::config(&format!("line {}", e.line), e.msg.to_string()))?;
    let mut out = BTreeMap::new();
    for (section, props) in doc.iter() {
        for (key, value) in props.iter() {
            if let Some((first, _)) = key.split_once('\n') {
                return Err(BenchError::config(first.trim(), "expected `key = value`"));
            }
            let Some(section) = section else {
                return Err(BenchError::config(key, "key outside of a section"));
            };
            out.insert(format!("{}.{key}", section.trim()), value.to_string());
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Applies `section.key = value` entries on top of `self`.
    pub fn apply(&mut self, entries: &BTreeMap<String, String>) -> Result<(), BenchError> {
        for (field, v) in entries {
            let f = field.as_str();
            match f {
                "env.kind" => self.env.kind = parse_field(f, v)?,
                "env.n_items" => self.env.n_items = parse_field(f, v)?,
                "env.n_states" => self.env.n_states = parse_field(f, v)?,
                "env.horizon" => self.env.horizon = parse_field(f, v)?,
                "env.max_assortment" => self.env.max_assortment = parse_field(f, v)?,
                "env.dim" => self.env.dim = parse_field(f, v)?,
                "env.dim_lin" => self.env.dim_lin = parse_field(f, v)?,
                "env.mnl_bound" => self.env.mnl_bound = parse_field(f, v)?,
                "env.c_const" => self.env.c_const = parse_field(f, v)?,
                "env.seed" => self.env.seed = Some(parse_field(f, v)?),
                "env.path" => self.env.path = Some(PathBuf::from(v)),
                "agent.kind" => self.agent.kinds = parse_agents(f, v)?,
                "agent.delta" => self.agent.delta = parse_field(f, v)?,
                "agent.radius_scale" => self.agent.radius_scale = parse_field(f, v)?,
                "agent.beta_scale" => self.agent.beta_scale = parse_field(f, v)?,
                "agent.u_scale" => self.agent.u_scale = parse_field(f, v)?,
                "agent.sigma_mode" => self.agent.sigma_mode = parse_field(f, v)?,
                "run.episodes" => self.episodes = parse_field(f, v)?,
                "run.replications" => self.replications = parse_field(f, v)?,
                "run.seed" => self.seed = parse_field(f, v)?,
                "run.out" => self.out = Some(PathBuf::from(v)),
                "run.timing" => self.record_timing = parse_bool(f, v)?,
                _ => return Err(BenchError::config(f, "unknown key")),
            }
        }
        Ok(())
    }

    pub fn from_ini(text: &str) -> Result<Self, BenchError> {
        let mut cfg = Self::default();
        cfg.apply(&parse_ini(text)?)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_ini(&text)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.agent.kinds.is_empty() {
            return Err(BenchError::config("agent.kind", "missing; name at least one agent"));
        }
        if self.episodes < 1 {
            return Err(BenchError::config(
                "run.episodes",
                "missing or zero; must be at least 1",
            ));
        }
        if self.replications < 1 {
            return Err(BenchError::config("run.replications", "must be at least 1"));
        }
        for (field, v) in [
            ("agent.radius_scale", self.agent.radius_scale),
            ("agent.beta_scale", self.agent.beta_scale),
            ("agent.u_scale", self.agent.u_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(BenchError::config(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.agent.delta > 0.0 && self.agent.delta < 1.0) {
            return Err(BenchError::config("agent.delta", "must lie in (0, 1)"));
        }
        let e = &self.env;
        match e.kind {
            EnvKind::Shopping => {
                for (field, v, min) in [
                    ("env.n_items", e.n_items, 2),
                    ("env.n_states", e.n_states, 2),
                    ("env.horizon", e.horizon, 1),
                    ("env.max_assortment", e.max_assortment, 2),
                    ("env.dim", e.dim, 1),
                ] {
                    if v < min {
                        return Err(BenchError::config(field, format!("must be at least {min}, got {v}")));
                    }
                }
                if !(e.mnl_bound.is_finite() && e.mnl_bound > 0.0) {
                    return Err(BenchError::config("env.mnl_bound", "must be positive"));
                }
            }
            EnvKind::Hard => {
                if e.dim < 5 || (e.dim - 1) % 4 != 0 {
                    return Err(BenchError::config("env.dim", "must be 1 mod 4 and at least 5"));
                }
                if e.dim_lin < 7 {
                    return Err(BenchError::config("env.dim_lin", "must be at least 7"));
                }
                if e.horizon < 1 {
                    return Err(BenchError::config("env.horizon", "must be at least 1"));
                }
                if !(e.c_const.is_finite() && e.c_const > 0.0) {
                    return Err(BenchError::config("env.c_const", "must be positive"));
                }
            }
            EnvKind::Custom => {
                if e.path.is_none() {
                    return Err(BenchError::config("env.path", "missing; required for custom envs"));
                }
            }
        }
        Ok(())
    }

    /// Builds the environment for one replication seed.
    pub fn build_env(&self, replication_seed: u64) -> Result<TabularEnv, BenchError> {
        let e = &self.env;
        let seed = e.seed.unwrap_or(replication_seed);
        let env = match e.kind {
            EnvKind::Shopping => envs::online_shopping_env(&ShoppingConfig {
                n_items: e.n_items,
                n_states: e.n_states,
                horizon: e.horizon,
                max_assortment: e.max_assortment,
                dim: e.dim,
                mnl_bound: e.mnl_bound,
                seed,
            })?,
            EnvKind::Hard => {
                envs::hard_instance_env(&HardConfig {
                    dim: e.dim,
                    dim_lin: e.dim_lin,
                    horizon: e.horizon,
                    episodes: self.episodes,
                    c_const: e.c_const,
                    seed,
                })?
                .0
            }
            EnvKind::Custom => envs::load_custom_env(e.path.as_deref().expect("validated"))?,
        };
        Ok(env)
    }

    pub fn agent_config(&self, seed: u64) -> AgentConfig {
        AgentConfig {
            episodes: self.episodes,
            delta: self.agent.delta,
            radius_scale: self.agent.radius_scale,
            beta_scale: self.agent.beta_scale,
            u_scale: self.agent.u_scale,
            sigma_mode: self.agent.sigma_mode,
            seed,
            ..AgentConfig::default()
        }
    }
}

/// One row of benchmark output.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub agent: String,
    pub seed: u64,
    pub episode: usize,
    pub ret: f64,
    pub cum_regret_realized: f64,
    pub cum_regret_expected: f64,
    pub episode_ms: f64,
}

/// Builds an agent of the given kind.
pub fn make_agent(
    kind: AgentKind,
    env: &Arc<TabularEnv>,
    dp: &DpSolution,
    cfg: AgentConfig,
) -> Result<Box<dyn Agent>, BenchError> {
    Ok(match kind {
        AgentKind::MnlVql => Box::new(MnlVqlAgent::new(Arc::clone(env), cfg)),
        AgentKind::Myopic => Box::new(agents::myopic_agent(Arc::clone(env), cfg)),
        AgentKind::LsviUcb => Box::new(LsviUcbAgent::new(Arc::clone(env), cfg)?),
        AgentKind::Optimal => Box::new(OptimalAgent::new(dp)),
        AgentKind::Random => Box::new(RandomAgent::new(env, cfg.seed)),
    })
}

/// Environment randomness for a replication seed.
pub fn env_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    rng
}

/// Runs one agent episode by episode against an environment, keeping the
/// regret totals between calls.
pub struct EpisodeRunner<'a> {
    env: &'a TabularEnv,
    rng: ChaCha8Rng,
    seed: u64,
    v_star: f64,
    cum_real: f64,
    cum_exp: f64,
    random_value: Option<f64>,
    record_timing: bool,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(env: &'a TabularEnv, dp: &DpSolution, seed: u64, record_timing: bool) -> Self {
        Self {
            env,
            rng: env_rng(seed),
            seed,
            v_star: dp.initial_value(env),
            cum_real: 0.0,
            cum_exp: 0.0,
            random_value: None,
            record_timing,
        }
    }

    /// Plays episode `k`. `on_episode(k, agent)` runs after `begin_episode(k)`
    /// and before acting, outside the timed region.
    pub fn run_episode(
        &mut self,
        agent: &mut dyn Agent,
        k: usize,
        on_episode: impl FnOnce(usize, &dyn Agent),
    ) -> Result<RunRecord, BenchError> {
        let env = self.env;
        let s0 = env.initial_state;
        let start = Instant::now();
        agent.begin_episode(k)?;
        let mut elapsed = start.elapsed();
        on_episode(k, agent);
        let resume = Instant::now();
        let mut s = s0;
        let mut ret = 0.0;
        for h in 0..env.horizon {
            let a = agent.act(h, s);
            let out = env.step(h, s, &a, &mut self.rng);
            agent.observe(h, s, &a, &out)?;
            ret += out.reward;
            s = out.next_state;
        }
        elapsed += resume.elapsed();
        let policy_value = match agent.policy() {
            PolicySnapshot::Deterministic(table) => envs::evaluate_policy(env, &table)[0][s0],
            PolicySnapshot::UniformRandom => match self.random_value {
                Some(v) => v,
                None => {
                    let v = agents::evaluate_snapshot(env, &PolicySnapshot::UniformRandom)?[0][s0];
                    self.random_value = Some(v);
                    v
                }
            },
        };
        self.cum_real += self.v_star - ret;
        let gap = self.v_star - policy_value;
        if gap > REGRET_TOL {
            self.cum_exp += gap;
        }
        Ok(RunRecord {
            agent: agent.name().to_string(),
            seed: self.seed,
            episode: k,
            ret,
            cum_regret_realized: self.cum_real,
            cum_regret_expected: self.cum_exp,
            episode_ms: if self.record_timing {
                elapsed.as_secs_f64() * 1e3
            } else {
                0.0
            },
        })
    }
}

/// Runs one agent for `episodes` episodes and returns its records.
///
/// `on_episode(k, agent)` runs after `begin_episode(k)` and before acting.
pub fn run_agent(
    env: &TabularEnv,
    dp: &DpSolution,
    agent: &mut dyn Agent,
    episodes: usize,
    seed: u64,
    record_timing: bool,
    mut on_episode: impl FnMut(usize, &dyn Agent),
) -> Result<Vec<RunRecord>, BenchError> {
    let mut runner = EpisodeRunner::new(env, dp, seed, record_timing);
    (1..=episodes)
        .map(|k| runner.run_episode(agent, k, &mut on_episode))
        .collect()
}

/// Runs every configured agent on every replication, in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, BenchError> {
    cfg.validate()?;
    let mut records = Vec::new();
    for r in 0..cfg.replications {
        let seed = cfg.seed.wrapping_add(r as u64);
        let env = Arc::new(cfg.build_env(seed)?);
        let dp = envs::dp_optimal_values(&env)?;
        for &kind in &cfg.agent.kinds {
            let mut agent = make_agent(kind, &env, &dp, cfg.agent_config(seed))?;
            records.extend(run_agent(
                &env,
                &dp,
                agent.as_mut(),
                cfg.episodes,
                seed,
                cfg.record_timing,
                |_, _| {},
            )?);
        }
    }
    Ok(records)
}

/// C-style `%.{sig}g` formatting.
pub fn format_sig(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= sig as i32 {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Renders records as CSV text.
pub fn to_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.agent,
            r.seed,
            r.episode,
            format_sig(r.ret, 9),
            format_sig(r.cum_regret_realized, 9),
            format_sig(r.cum_regret_expected, 9),
            format_sig(r.episode_ms, 9),
        );
    }
    out
}

pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<(), BenchError> {
    std::fs::write(path, to_csv(records))?;
    Ok(())
}

/// Parses CSV produced by [`to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<RunRecord>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(format!("bad header: {other:?}")),
    }
    lines
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(format!("expected 7 columns: {line}"));
            }
            let num = |i: usize| cols[i].parse::<f64>().map_err(|e| format!("{line}: {e}"));
            Ok(RunRecord {
                agent: cols[0].to_string(),
                seed: cols[1].parse().map_err(|e| format!("{line}: {e}"))?,
                episode: cols[2].parse().map_err(|e| format!("{line}: {e}"))?,
                ret: num(3)?,
                cum_regret_realized: num(4)?,
                cum_regret_expected: num(5)?,
                episode_ms: num(6)?,
            })
        })
        .collect()
}

/// Mean per-episode wall time after the warm-up episodes.
pub fn mean_episode_ms(records: &[RunRecord]) -> f64 {
    let times: Vec<f64> = records
        .iter()
        .filter(|r| r.episode > WARMUP_EPISODES)
        .map(|r| r.episode_ms)
        .collect();
    if times.is_empty() {
        0.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    }
}

/// Mean return per agent over episodes `> from_episode`, across seeds.
pub fn final_mean_returns(records: &[RunRecord], from_episode: usize) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.episode > from_episode) {
        let e = acc.entry(r.agent.clone()).or_default();
        e.0 += r.ret;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}
