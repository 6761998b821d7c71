//! Agents: MNL-VQL, its myopic variant, atomic LSVI-UCB, the DP-optimal
//! policy and a uniform-random policy.
//!
//! Agents read only the feature maps of an environment (`phi`, `psi`) and its
//! sizes; transitions, rewards and the true MNL parameter are reserved for
//! the simulator and the oracle.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::assort::{self, AssortError, AssortmentInstance};
use crate::envs::{DpSolution, StepOutcome, TabularEnv, OUTSIDE};
use crate::mnl::{self, ChoiceObservation, MnlConfig, MnlParameterState, UtilityOracle};
use crate::numerics::{dot, NumericsError};
use crate::values::{self, RegressionStats, Schedule, SigmaMode};

/// Largest action space the atomic LSVI-UCB baseline will enumerate.
pub const MAX_ATOMIC_ASSORTMENTS: usize = 2_000_000;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Assort(#[from] AssortError),
    #[error("{count} assortments exceed the limit of {limit}")]
    TooManyAssortments { count: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, AgentError>;

/// The policy an agent would follow if it stopped learning now.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySnapshot {
    /// `table[h][s]` is the offered assortment.
    Deterministic(Vec<Vec<Vec<usize>>>),
    /// Uniform size in `1..=max_items`, then a uniform subset of that size.
    UniformRandom,
}

pub trait Agent {
    fn name(&self) -> &str;
    /// Called before episode `k` (1-based).
    fn begin_episode(&mut self, k: usize) -> Result<()>;
    fn act(&mut self, h: usize, s: usize) -> Vec<usize>;
    fn observe(&mut self, h: usize, s: usize, assortment: &[usize], outcome: &StepOutcome) -> Result<()>;
    fn policy(&self) -> PolicySnapshot;
    /// The agent's own estimate of the initial-state value, if it keeps one.
    fn value_estimate(&self, _s: usize) -> Option<f64> {
        None
    }
}

/// Tunable knobs shared by the learning agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub episodes: usize,
    pub delta: f64,
    pub radius_scale: f64,
    pub beta_scale: f64,
    pub u_scale: f64,
    pub sigma_mode: SigmaMode,
    /// Replaces the threshold schedule with a constant when set.
    pub u_override: Option<f64>,
    /// Keeps every transition, for inspection in tests.
    pub keep_replay: bool,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            delta: 0.1,
            radius_scale: 1.0,
            beta_scale: 1.0,
            u_scale: 1.0,
            sigma_mode: SigmaMode::Simple,
            u_override: None,
            keep_replay: false,
            seed: 0,
        }
    }
}

/// One stored interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub h: usize,
    pub s: usize,
    pub chosen: usize,
    pub reward: f64,
    pub next_state: usize,
    pub sigma: f64,
    pub sigma_bar: f64,
}

/// Agent randomness uses its own ChaCha stream so it never aliases the
/// environment's stream for the same seed.
pub fn agent_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Draws a uniform size in `1..=max_items`, then a uniform subset.
pub fn random_assortment<R: Rng + ?Sized>(n_items: usize, max_items: usize, rng: &mut R) -> Vec<usize> {
    let size = rng.gen_range(1..=max_items.min(n_items));
    let mut set: Vec<usize> = index::sample(rng, n_items, size).into_iter().map(|i| i + 1).collect();
    set.sort_unstable();
    set
}

/// Copies `src` into a recycled buffer.
fn reuse_choice(mut buf: Vec<usize>, src: &[usize]) -> Vec<usize> {
    buf.clear();
    buf.extend_from_slice(src);
    buf
}

/// `V_{h,j}` and `A_{h,j}` tables for one step.
#[derive(Debug, Clone, Default)]
struct StepPlan {
    /// `f[j][s][a]` for `j` in optimistic, over-optimistic, over-pessimistic.
    f: [Vec<Vec<f64>>; 3],
    choice: [Vec<Vec<usize>>; 3],
    value: [Vec<f64>; 3],
    models: Option<StepModels>,
}

/// Fitted models kept for variance computations during the episode.
#[derive(Debug, Clone)]
struct StepModels {
    weighted: crate::numerics::Cholesky,
    unweighted: crate::numerics::Cholesky,
    w_over_neg: Vec<f64>,
    w_second: Vec<f64>,
}

/// Which backups the planner runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlanMode {
    /// Full backward pass over the horizon.
    Lookahead,
    /// One-step rewards only; transitions ignored.
    Myopic,
}

/// MNL-VQL, and with [`myopic_agent`] its one-step variant.
pub struct MnlVqlAgent {
    name: String,
    env: Arc<TabularEnv>,
    cfg: AgentConfig,
    mode: PlanMode,
    schedule: Schedule,
    mnl: Vec<MnlParameterState>,
    weighted: Vec<RegressionStats>,
    unweighted: Vec<RegressionStats>,
    plans: Vec<StepPlan>,
    rng: ChaCha8Rng,
    episode: usize,
    u_k: f64,
    switched: bool,
    /// 1-based switch step of the current episode; `horizon + 1` if none.
    pub switch_step: usize,
    pub replay: Vec<Transition>,
    pub transitions_seen: usize,
    // constants
    beta1: f64,
    beta2: f64,
    beta_bar: f64,
    o: f64,
    iota: f64,
}

impl MnlVqlAgent {
    pub fn new(env: Arc<TabularEnv>, cfg: AgentConfig) -> Self {
        Self::build(env, cfg, PlanMode::Lookahead, "mnl_vql")
    }

    fn build(env: Arc<TabularEnv>, cfg: AgentConfig, mode: PlanMode, name: &str) -> Self {
        let hz = env.horizon;
        let eff_h = if mode == PlanMode::Myopic { 1 } else { hz };
        let mut schedule = Schedule::new(cfg.episodes, eff_h, env.dim_lin, env.dim, env.max_assortment, cfg.delta);
        schedule.beta_scale = cfg.beta_scale;
        schedule.u_scale = cfg.u_scale;
        let mnl_cfg =
            MnlConfig::new(env.dim, env.max_assortment, env.mnl_bound, cfg.delta).with_radius_scale(cfg.radius_scale);
        let rho = schedule.rho;
        Self {
            name: name.to_string(),
            mnl: vec![MnlParameterState::new(mnl_cfg); hz],
            weighted: vec![RegressionStats::new(env.dim_lin, env.n_states, rho); hz],
            unweighted: vec![RegressionStats::new(env.dim_lin, env.n_states, rho); hz],
            plans: vec![StepPlan::default(); hz],
            rng: agent_rng(cfg.seed),
            episode: 0,
            u_k: f64::INFINITY,
            switched: false,
            switch_step: hz + 1,
            replay: Vec::new(),
            transitions_seen: 0,
            beta1: schedule.beta1(),
            beta2: schedule.beta2(),
            beta_bar: schedule.beta_bar(),
            o: schedule.o(),
            iota: schedule.iota(),
            schedule,
            mode,
            env,
            cfg,
        }
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn mnl_state(&self, h: usize) -> &MnlParameterState {
        &self.mnl[h]
    }

    /// Current threshold `u_k`.
    pub fn threshold(&self) -> f64 {
        self.u_k
    }

    /// `f_j(s, a)` at step `h` from the latest plan; `j` is 0, 1, 2 for the
    /// optimistic, over-optimistic and over-pessimistic estimates.
    pub fn item_value(&self, j: usize, h: usize, s: usize, a: usize) -> Option<f64> {
        self.plans[h].f[j].get(s).map(|row| row[a])
    }

    /// `V_{h,j}(s)` from the latest plan.
    pub fn state_value(&self, j: usize, h: usize, s: usize) -> Option<f64> {
        self.plans[h].value[j].get(s).copied()
    }

    /// `A_{h,j}(s)` from the latest plan.
    pub fn planned_assortment(&self, j: usize, h: usize, s: usize) -> Option<&[usize]> {
        self.plans[h].choice[j].get(s).map(Vec::as_slice)
    }

    fn random_phase(&self) -> bool {
        self.episode <= 1
    }

    /// Backward pass of value estimation and assortment selection.
    pub fn plan(&mut self) -> Result<()> {
        let env = Arc::clone(&self.env);
        let (hz, ns, na) = (env.horizon, env.n_states, env.n_actions());
        let rho = self.schedule.rho;
        let scale1 = (self.beta1 * self.beta1 + rho).sqrt();
        let scale2 = (self.beta2 * self.beta2 + rho).sqrt();
        let zeros = vec![0.0; ns];
        let mut next: [Vec<f64>; 3] = [zeros.clone(), zeros.clone(), zeros.clone()];
        let lookahead = self.mode == PlanMode::Lookahead;
        let n_idx = if lookahead { 3 } else { 1 };
        let mut utils = vec![(0.0, 0.0); env.n_items];
        let mut exp_utils = [vec![0.0; env.n_items], vec![0.0; env.n_items]];
        let mut inst = AssortmentInstance {
            outside_weight: 1.0,
            outside_value: 0.0,
            weights: vec![0.0; env.n_items],
            values: vec![0.0; env.n_items],
            max_items: env.max_items(),
        };
        let mut workspace = assort::ParametricWorkspace::default();
        for h in (0..hz).rev() {
            let targets: &[Vec<f64>; 3] = if lookahead {
                &next
            } else {
                &[zeros.clone(), zeros.clone(), zeros.clone()]
            };
            let chol_w = self.weighted[h].design.cholesky()?;
            let chol_u = self.unweighted[h].design.cholesky()?;
            let w1 = chol_w.solve(&self.weighted[h].rhs_value(&targets[0]))?;
            let w2 = chol_u.solve(&self.unweighted[h].rhs_value(&targets[1]))?;
            let wm2 = chol_u.solve(&self.unweighted[h].rhs_value(&targets[2]))?;
            let wg = chol_u.solve(&self.unweighted[h].rhs_second_moment(&targets[0]))?;
            let white_w = chol_w.whitener();
            let white_u = chol_u.whitener();
            let oracle: UtilityOracle = self.mnl[h].utility_oracle()?;

            let mut plan = std::mem::take(&mut self.plans[h]);
            let fresh = plan.value[0].len() != ns;
            if fresh {
                for j in 0..3 {
                    plan.f[j] = vec![vec![0.0; na]; ns];
                    plan.value[j] = vec![0.0; ns];
                    plan.choice[j] = if j < 2 || lookahead {
                        vec![Vec::new(); ns]
                    } else {
                        Vec::new()
                    };
                }
            }
            for s in 0..ns {
                let f = &mut plan.f;
                for a in 0..na {
                    let psi = env.psi(h, s, a);
                    let b1 = white_w.inverse_norm(psi) * scale1;
                    f[0][s][a] = values::value_f1(dot(&w1, psi), b1);
                    if lookahead {
                        let b2 = white_u.inverse_norm(psi) * scale2;
                        f[1][s][a] = values::value_f2(dot(&w2, psi), b1, b2);
                        f[2][s][a] = values::value_f_neg2(dot(&wm2, psi), b2);
                    }
                }
                for a in 1..na {
                    utils[a - 1] = oracle.utilities(env.phi(h, s, a));
                }
                let mut weights_ready = [false; 2];
                let mut branches = [0usize; 3];
                for j in 0..n_idx {
                    let f = &plan.f[j][s];
                    let branch = if mnl::optimism_indicator(&f[1..], f[0]) { 0 } else { 1 };
                    branches[j] = branch;
                    // Identical instances share a solution.
                    if let Some(p) = (0..j).find(|&p| branches[p] == branch && plan.f[p][s] == plan.f[j][s]) {
                        let chosen = std::mem::take(&mut plan.choice[j][s]);
                        plan.choice[j][s] = reuse_choice(chosen, &plan.choice[p][s]);
                        plan.value[j][s] = plan.value[p][s];
                        continue;
                    }
                    if !weights_ready[branch] {
                        for (w, u) in exp_utils[branch].iter_mut().zip(&utils) {
                            let u = if branch == 0 { u.0 } else { u.1 };
                            *w = u.clamp(-mnl::UTILITY_CLAMP, mnl::UTILITY_CLAMP).exp();
                        }
                        weights_ready[branch] = true;
                    }
                    inst.weights.copy_from_slice(&exp_utils[branch]);
                    inst.values.copy_from_slice(&f[1..]);
                    inst.outside_value = f[0];
                    let start = if fresh {
                        inst.values.iter().copied().fold(inst.outside_value, f64::min)
                    } else {
                        plan.value[j][s]
                    };
                    plan.value[j][s] = assort::solve_parametric_in(&inst, start, &mut workspace);
                    let chosen = &mut plan.choice[j][s];
                    chosen.clear();
                    chosen.extend(workspace.chosen().iter().map(|&a| a + 1));
                }
                if !lookahead {
                    let chosen = std::mem::take(&mut plan.choice[1][s]);
                    plan.choice[1][s] = reuse_choice(chosen, &plan.choice[0][s]);
                    plan.value[1][s] = plan.value[0][s];
                }
            }
            plan.models = Some(StepModels {
                weighted: chol_w,
                unweighted: chol_u,
                w_over_neg: wm2,
                w_second: wg,
            });
            for (n, v) in next.iter_mut().zip(&plan.value) {
                n.copy_from_slice(v);
            }
            self.plans[h] = plan;
        }
        Ok(())
    }

    fn sigma_pair(&self, h: usize, s: usize, chosen: usize) -> (f64, f64) {
        if self.random_phase() {
            return (2.0, 2.0);
        }
        if self.cfg.sigma_mode == SigmaMode::Simple {
            return (1.0, 1.0);
        }
        let plan = &self.plans[h];
        let Some(m) = plan.models.as_ref() else {
            return (2.0, 2.0);
        };
        let psi = self.env.psi(h, s, chosen);
        let nu = self.schedule.nu();
        let rho = self.schedule.rho;
        let d_unit = m.unweighted.inverse_norm(psi);
        let d_weighted = m.weighted.inverse_norm(psi);
        let sigma = values::sigma_schedule(
            dot(&m.w_second, psi),
            dot(&m.w_over_neg, psi),
            d_unit,
            self.beta_bar,
            self.beta2,
            rho,
            nu,
        );
        let sigma_bar = values::sigma_bar_schedule(
            SigmaMode::Full,
            sigma,
            nu,
            plan.f[1][s][chosen],
            plan.f[2][s][chosen],
            d_weighted,
            self.o,
            self.iota,
        );
        (sigma, sigma_bar)
    }
}

/// One-step variant: same MNL estimator and optimistic reward fits, but
/// values ignore transitions.
pub fn myopic_agent(env: Arc<TabularEnv>, cfg: AgentConfig) -> MnlVqlAgent {
    MnlVqlAgent::build(env, cfg, PlanMode::Myopic, "myopic")
}

impl Agent for MnlVqlAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn begin_episode(&mut self, k: usize) -> Result<()> {
        self.episode = k;
        self.switched = false;
        self.switch_step = self.env.horizon + 1;
        self.u_k = self.cfg.u_override.unwrap_or_else(|| self.schedule.u(k));
        if !self.random_phase() {
            self.plan()?;
        }
        Ok(())
    }

    fn act(&mut self, h: usize, s: usize) -> Vec<usize> {
        if self.random_phase() {
            return random_assortment(self.env.n_items, self.env.max_items(), &mut self.rng);
        }
        let plan = &self.plans[h];
        if self.mode == PlanMode::Lookahead && !self.switched {
            let f1 = &plan.f[0][s];
            let f2 = &plan.f[1][s];
            let ok = std::iter::once(OUTSIDE)
                .chain(plan.choice[0][s].iter().copied())
                .all(|a| f1[a] >= f2[a] - self.u_k);
            if !ok {
                self.switched = true;
                self.switch_step = h + 1;
            }
        }
        let j = if self.switched { 1 } else { 0 };
        plan.choice[j][s].clone()
    }

    fn observe(&mut self, h: usize, s: usize, assortment: &[usize], outcome: &StepOutcome) -> Result<()> {
        let (sigma, sigma_bar) = self.sigma_pair(h, s, outcome.chosen);
        let psi = self.env.psi(h, s, outcome.chosen);
        self.weighted[h].push(psi, outcome.reward, outcome.next_state, sigma_bar);
        self.unweighted[h].push(psi, outcome.reward, outcome.next_state, 1.0);
        let items: Vec<Vec<f64>> = assortment.iter().map(|&a| self.env.phi(h, s, a).to_vec()).collect();
        let chosen = assortment.iter().position(|&a| a == outcome.chosen);
        self.mnl[h].update(&ChoiceObservation::new(items, chosen))?;
        self.transitions_seen += 1;
        if self.cfg.keep_replay {
            self.replay.push(Transition {
                h,
                s,
                chosen: outcome.chosen,
                reward: outcome.reward,
                next_state: outcome.next_state,
                sigma,
                sigma_bar,
            });
        }
        Ok(())
    }

    fn policy(&self) -> PolicySnapshot {
        if self.random_phase() {
            PolicySnapshot::UniformRandom
        } else {
            PolicySnapshot::Deterministic(self.plans.iter().map(|p| p.choice[0].clone()).collect())
        }
    }

    fn value_estimate(&self, s: usize) -> Option<f64> {
        if self.random_phase() {
            None
        } else {
            self.state_value(0, 0, s)
        }
    }
}

/// All nonempty subsets of `1..=n_items` with at most `max_items` elements.
pub fn enumerate_assortments(n_items: usize, max_items: usize) -> Result<Vec<Vec<usize>>> {
    let cap = max_items.min(n_items);
    let mut count: usize = 0;
    let mut binom: usize = 1;
    for m in 1..=cap {
        binom = binom * (n_items - m + 1) / m;
        count = count.saturating_add(binom);
        if count > MAX_ATOMIC_ASSORTMENTS {
            return Err(AgentError::TooManyAssortments {
                count,
                limit: MAX_ATOMIC_ASSORTMENTS,
            });
        }
    }
    let mut out = Vec::with_capacity(count);
    let mut cur = Vec::with_capacity(cap);
    fn rec(start: usize, n: usize, cap: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for a in start..=n {
            cur.push(a);
            out.push(cur.clone());
            if cur.len() < cap {
                rec(a + 1, n, cap, cur, out);
            }
            cur.pop();
        }
    }
    rec(1, n_items, cap, &mut cur, &mut out);
    Ok(out)
}

/// Least-squares value iteration with UCB over whole assortments.
///
/// An assortment's feature is the choice-probability-weighted mean of
/// `psi(s, a)` under the agent's own MNL estimate, frozen when a sample is
/// recorded.
pub struct LsviUcbAgent {
    env: Arc<TabularEnv>,
    assortments: Vec<Vec<usize>>,
    mnl: Vec<MnlParameterState>,
    stats: Vec<RegressionStats>,
    beta: f64,
    greedy: Vec<Vec<Vec<usize>>>,
    values: Vec<Vec<f64>>,
}

impl LsviUcbAgent {
    pub fn new(env: Arc<TabularEnv>, cfg: AgentConfig) -> Result<Self> {
        let assortments = enumerate_assortments(env.n_items, env.max_items())?;
        let hz = env.horizon;
        let dl = env.dim_lin as f64;
        let beta = cfg.beta_scale
            * dl
            * (2.0 * dl * cfg.episodes.max(1) as f64 * hz as f64 / cfg.delta)
                .ln()
                .sqrt();
        let mnl_cfg =
            MnlConfig::new(env.dim, env.max_assortment, env.mnl_bound, cfg.delta).with_radius_scale(cfg.radius_scale);
        Ok(Self {
            mnl: vec![MnlParameterState::new(mnl_cfg); hz],
            stats: vec![RegressionStats::with_lambda(env.dim_lin, env.n_states, 1.0); hz],
            beta,
            greedy: vec![vec![vec![1]; env.n_states]; hz],
            values: vec![vec![0.0; env.n_states]; hz],
            assortments,
            env,
        })
    }

    pub fn n_assortments(&self) -> usize {
        self.assortments.len()
    }

    fn feature(&self, h: usize, s: usize, set: &[usize]) -> Vec<f64> {
        let p = mnl::choice_probs(
            &self.mnl[h].theta,
            &set.iter().map(|&a| self.env.phi(h, s, a)).collect::<Vec<_>>(),
        );
        let mut x: Vec<f64> = self.env.psi(h, s, OUTSIDE).iter().map(|v| p[0] * v).collect();
        for (&a, &pa) in set.iter().zip(&p[1..]) {
            for (xi, &v) in x.iter_mut().zip(self.env.psi(h, s, a)) {
                *xi += pa * v;
            }
        }
        x
    }

    fn plan(&mut self) -> Result<()> {
        let env = Arc::clone(&self.env);
        let (hz, ns, na, dl) = (env.horizon, env.n_states, env.n_actions(), env.dim_lin);
        let mut next = vec![0.0; ns];
        let mut inv = vec![0.0; dl * dl];
        for h in (0..hz).rev() {
            let chol = self.stats[h].design.cholesky()?;
            let w = chol.solve(&self.stats[h].rhs_value(&next))?;
            for c in 0..dl {
                let mut e = vec![0.0; dl];
                e[c] = 1.0;
                let col = chol.solve(&e)?;
                for r in 0..dl {
                    inv[r * dl + c] = col[r];
                }
            }
            let theta = &self.mnl[h].theta;
            let mut cur = vec![0.0; ns];
            let mut x = vec![0.0; dl];
            for s in 0..ns {
                let expu: Vec<f64> = (0..na)
                    .map(|a| {
                        if a == OUTSIDE {
                            1.0
                        } else {
                            dot(env.phi(h, s, a), theta)
                                .clamp(-mnl::UTILITY_CLAMP, mnl::UTILITY_CLAMP)
                                .exp()
                        }
                    })
                    .collect();
                let pred: Vec<f64> = (0..na).map(|a| dot(env.psi(h, s, a), &w)).collect();
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for (idx, set) in self.assortments.iter().enumerate() {
                    let total: f64 = 1.0 + set.iter().map(|&a| expu[a]).sum::<f64>();
                    let p0 = 1.0 / total;
                    let mut mean = p0 * pred[OUTSIDE];
                    for (xi, &v) in x.iter_mut().zip(env.psi(h, s, OUTSIDE)) {
                        *xi = p0 * v;
                    }
                    for &a in set {
                        let pa = expu[a] / total;
                        mean += pa * pred[a];
                        for (xi, &v) in x.iter_mut().zip(env.psi(h, s, a)) {
                            *xi += pa * v;
                        }
                    }
                    let mut quad = 0.0;
                    for r in 0..dl {
                        let row = &inv[r * dl..(r + 1) * dl];
                        quad += x[r] * dot(row, &x);
                    }
                    let q = (mean + self.beta * quad.max(0.0).sqrt()).min(1.0);
                    if q > best + assort::TIE_TOL {
                        best = q;
                        best_idx = idx;
                    }
                }
                cur[s] = best;
                self.greedy[h][s] = self.assortments[best_idx].clone();
            }
            self.values[h] = cur.clone();
            next = cur;
        }
        Ok(())
    }
}

impl Agent for LsviUcbAgent {
    fn name(&self) -> &str {
        "lsvi_ucb"
    }

    fn begin_episode(&mut self, _k: usize) -> Result<()> {
        self.plan()
    }

    fn act(&mut self, h: usize, s: usize) -> Vec<usize> {
        self.greedy[h][s].clone()
    }

    fn observe(&mut self, h: usize, s: usize, assortment: &[usize], outcome: &StepOutcome) -> Result<()> {
        let x = self.feature(h, s, assortment);
        self.stats[h].push(&x, outcome.reward, outcome.next_state, 1.0);
        let items: Vec<Vec<f64>> = assortment.iter().map(|&a| self.env.phi(h, s, a).to_vec()).collect();
        let chosen = assortment.iter().position(|&a| a == outcome.chosen);
        self.mnl[h].update(&ChoiceObservation::new(items, chosen))?;
        Ok(())
    }

    fn policy(&self) -> PolicySnapshot {
        PolicySnapshot::Deterministic(self.greedy.clone())
    }

    fn value_estimate(&self, s: usize) -> Option<f64> {
        Some(self.values[0][s])
    }
}

/// Follows the DP-optimal assortments.
pub struct OptimalAgent {
    policy: Vec<Vec<Vec<usize>>>,
    value: Vec<f64>,
}

impl OptimalAgent {
    pub fn new(dp: &DpSolution) -> Self {
        Self {
            policy: dp.policy.clone(),
            value: dp.values[0].clone(),
        }
    }
}

impl Agent for OptimalAgent {
    fn name(&self) -> &str {
        "optimal"
    }

    fn begin_episode(&mut self, _k: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, h: usize, s: usize) -> Vec<usize> {
        self.policy[h][s].clone()
    }

    fn observe(&mut self, _h: usize, _s: usize, _a: &[usize], _o: &StepOutcome) -> Result<()> {
        Ok(())
    }

    fn policy(&self) -> PolicySnapshot {
        PolicySnapshot::Deterministic(self.policy.clone())
    }

    fn value_estimate(&self, s: usize) -> Option<f64> {
        Some(self.value[s])
    }
}

/// Offers a fresh uniformly random assortment at every step.
pub struct RandomAgent {
    n_items: usize,
    max_items: usize,
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(env: &TabularEnv, seed: u64) -> Self {
        Self {
            n_items: env.n_items,
            max_items: env.max_items(),
            rng: agent_rng(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn begin_episode(&mut self, _k: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _h: usize, _s: usize) -> Vec<usize> {
        random_assortment(self.n_items, self.max_items, &mut self.rng)
    }

    fn observe(&mut self, _h: usize, _s: usize, _a: &[usize], _o: &StepOutcome) -> Result<()> {
        Ok(())
    }

    fn policy(&self) -> PolicySnapshot {
        PolicySnapshot::UniformRandom
    }
}

/// Exact value of a policy snapshot, `values[h][s]`.
pub fn evaluate_snapshot(env: &TabularEnv, snapshot: &PolicySnapshot) -> Result<Vec<Vec<f64>>> {
    match snapshot {
        PolicySnapshot::Deterministic(table) => Ok(crate::envs::evaluate_policy(env, table)),
        PolicySnapshot::UniformRandom => {
            let sets = enumerate_assortments(env.n_items, env.max_items())?;
            let cap = env.max_items();
            let mut by_size = vec![0usize; cap + 1];
            for set in &sets {
                by_size[set.len()] += 1;
            }
            let (hz, ns) = (env.horizon, env.n_states);
            let mut values = vec![vec![0.0; ns]; hz + 1];
            for h in (0..hz).rev() {
                for s in 0..ns {
                    let qs = env.item_values(h, s, &values[h + 1]);
                    values[h][s] = sets
                        .iter()
                        .map(|set| env.assortment_value(h, s, set, &qs) / (cap as f64 * by_size[set.len()] as f64))
                        .sum();
                }
            }
            Ok(values)
        }
    }
}
