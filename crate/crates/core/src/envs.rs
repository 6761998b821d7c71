//! Tabular episodic MDPs with MNL preference feedback.
//!
//! Conventions used throughout the crate:
//! - horizon steps are 0-based, `h in 0..horizon`;
//! - action `OUTSIDE = 0` is the outside option and items are `1..=n_items`;
//! - an assortment is a sorted list of item indices, the outside option is
//!   always implicitly offered;
//! - rewards depend on `(h, s, a)` only, not on the next state.

use crate::assort::{self, AssortmentInstance};
use crate::mnl;
use crate::numerics::dot;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OUTSIDE: usize = 0;
/// Row-sum tolerance for transition kernels.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Tolerance on feature-norm bounds.
pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("dimension constraint violated: {0}")]
    DimensionConstraint(String),
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Assort(#[from] assort::AssortError),
}

/// Linear-MDP factors: `P_h(s'|s,a) = <psi_h(s,a), mu[h][group(s)][s']>` and
/// `r_h(s,a) = <psi_h(s,a), w[h]>`.
///
/// `group` lets a construction define `mu` relative to a partition of source
/// states; a single group is the usual global factorization.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinearFactors {
    pub group: Vec<usize>,
    /// Indexed `[h][group][s']`.
    pub mu: Vec<Vec<Vec<Vec<f64>>>>,
    pub w: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TabularEnv {
    pub name: String,
    pub n_states: usize,
    pub n_items: usize,
    pub horizon: usize,
    /// Assortment cap `M`, counting the outside option.
    pub max_assortment: usize,
    /// MNL feature dimension `d`.
    pub dim: usize,
    /// Linear-MDP feature dimension `d_lin`.
    pub dim_lin: usize,
    /// Norm bound `B` on the MNL parameter.
    pub mnl_bound: f64,
    /// Flattened `[h][s][a][s']`.
    pub transition: Vec<f64>,
    /// Flattened `[h][s][a]`.
    pub reward: Vec<f64>,
    /// Flattened `[h][s][a][..dim]`.
    pub phi: Vec<f64>,
    /// Flattened `[h][s][a][..dim_lin]`.
    pub psi: Vec<f64>,
    /// `theta*_h` per step.
    pub theta: Vec<Vec<f64>>,
    pub initial_state: usize,
    #[serde(default)]
    pub factors: Option<LinearFactors>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Chosen action; `OUTSIDE` when the user picks nothing.
    pub chosen: usize,
    pub reward: f64,
    pub next_state: usize,
}

impl TabularEnv {
    pub fn n_actions(&self) -> usize {
        self.n_items + 1
    }

    /// Largest number of real items per assortment, `M - 1` capped by `N`.
    pub fn max_items(&self) -> usize {
        (self.max_assortment - 1).min(self.n_items)
    }

    #[inline]
    fn sa(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.n_states + s) * self.n_actions() + a
    }

    #[inline]
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let i = self.sa(h, s, a) * self.n_states;
        &self.transition[i..i + self.n_states]
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.reward[self.sa(h, s, a)]
    }

    #[inline]
    pub fn phi(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let i = self.sa(h, s, a) * self.dim;
        &self.phi[i..i + self.dim]
    }

    #[inline]
    pub fn psi(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let i = self.sa(h, s, a) * self.dim_lin;
        &self.psi[i..i + self.dim_lin]
    }

    /// True MNL utility `phi^T theta*_h` of an action.
    pub fn utility(&self, h: usize, s: usize, a: usize) -> f64 {
        dot(self.phi(h, s, a), &self.theta[h])
    }

    /// True choice probabilities over `[outside, assortment...]`.
    pub fn choice_probs(&self, h: usize, s: usize, assortment: &[usize]) -> Vec<f64> {
        let u: Vec<f64> = assortment.iter().map(|&a| self.utility(h, s, a)).collect();
        mnl::probs_from_utilities(&u)
    }

    /// Simulates one interaction step.
    pub fn step<R: Rng + ?Sized>(&self, h: usize, s: usize, assortment: &[usize], rng: &mut R) -> StepOutcome {
        let p = self.choice_probs(h, s, assortment);
        let k = sample_index(&p, rng.gen::<f64>());
        let chosen = if k == 0 { OUTSIDE } else { assortment[k - 1] };
        let next_state = sample_index(self.transition_row(h, s, chosen), rng.gen::<f64>());
        StepOutcome {
            chosen,
            reward: self.reward(h, s, chosen),
            next_state,
        }
    }

    /// Checks shapes, stochasticity, reward range and feature bounds.
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Invalid(m));
        let (h, s, a) = (self.horizon, self.n_states, self.n_actions());
        if h == 0 || s == 0 || self.n_items == 0 {
            return bad("horizon, states and items must be positive".into());
        }
        if self.max_assortment < 2 {
            return bad("max_assortment must be at least 2".into());
        }
        if self.initial_state >= s {
            return bad("initial state out of range".into());
        }
        let checks = [
            ("transition", self.transition.len(), h * s * a * s),
            ("reward", self.reward.len(), h * s * a),
            ("phi", self.phi.len(), h * s * a * self.dim),
            ("psi", self.psi.len(), h * s * a * self.dim_lin),
            ("theta", self.theta.len(), h),
        ];
        for (name, got, want) in checks {
            if got != want {
                return bad(format!("{name} has length {got}, expected {want}"));
            }
        }
        for hh in 0..h {
            if self.theta[hh].len() != self.dim {
                return bad(format!("theta[{hh}] has wrong dimension"));
            }
            if crate::numerics::norm2(&self.theta[hh]) > self.mnl_bound + NORM_TOL {
                return bad(format!("theta[{hh}] exceeds the norm bound"));
            }
            for ss in 0..s {
                if crate::numerics::norm2(self.phi(hh, ss, OUTSIDE)) != 0.0 {
                    return bad("outside option must have a zero MNL feature".into());
                }
                for aa in 0..a {
                    let row = self.transition_row(hh, ss, aa);
                    if row.iter().any(|&p| !(p >= 0.0)) {
                        return bad(format!("negative transition at ({hh},{ss},{aa})"));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > STOCHASTIC_TOL {
                        return bad(format!("row ({hh},{ss},{aa}) sums to {total}"));
                    }
                    let r = self.reward(hh, ss, aa);
                    if !(0.0..=1.0).contains(&r) {
                        return bad(format!("reward out of range at ({hh},{ss},{aa})"));
                    }
                    if crate::numerics::norm2(self.phi(hh, ss, aa)) > 1.0 + NORM_TOL {
                        return bad(format!("phi too large at ({hh},{ss},{aa})"));
                    }
                    if crate::numerics::norm2(self.psi(hh, ss, aa)) > 1.0 + NORM_TOL {
                        return bad(format!("psi too large at ({hh},{ss},{aa})"));
                    }
                }
            }
        }
        let top = self.max_return();
        if top > 1.0 + 1e-12 {
            return bad(format!("a reachable trajectory earns {top} > 1"));
        }
        Ok(())
    }

    /// Largest total reward over trajectories reachable from the initial state.
    pub fn max_return(&self) -> f64 {
        let s_n = self.n_states;
        let mut next = vec![0.0; s_n];
        for h in (0..self.horizon).rev() {
            let mut cur = vec![f64::NEG_INFINITY; s_n];
            for s in 0..s_n {
                for a in 0..self.n_actions() {
                    let row = self.transition_row(h, s, a);
                    let cont = (0..s_n)
                        .filter(|&t| row[t] > 0.0)
                        .map(|t| next[t])
                        .fold(f64::NEG_INFINITY, f64::max);
                    cur[s] = cur[s].max(self.reward(h, s, a) + cont);
                }
            }
            next = cur;
        }
        next[self.initial_state]
    }

    /// Largest linear-MDP reconstruction error of transitions and rewards.
    pub fn factorization_residual(&self) -> Option<f64> {
        let f = self.factors.as_ref()?;
        let mut worst = 0.0f64;
        for h in 0..self.horizon {
            for s in 0..self.n_states {
                let g = f.group[s];
                for a in 0..self.n_actions() {
                    let psi = self.psi(h, s, a);
                    let row = self.transition_row(h, s, a);
                    for (t, &p) in row.iter().enumerate() {
                        worst = worst.max((dot(psi, &f.mu[h][g][t]) - p).abs());
                    }
                    worst = worst.max((dot(psi, &f.w[h]) - self.reward(h, s, a)).abs());
                }
            }
        }
        Some(worst)
    }

    /// Assortment instance at `(h, s)` with true MNL weights and the given
    /// per-action values (`values[0]` is the outside option).
    pub fn true_instance(&self, h: usize, s: usize, values: &[f64]) -> AssortmentInstance {
        let weights: Vec<f64> = (1..=self.n_items)
            .map(|a| {
                self.utility(h, s, a)
                    .clamp(-mnl::UTILITY_CLAMP, mnl::UTILITY_CLAMP)
                    .exp()
            })
            .collect();
        AssortmentInstance {
            outside_weight: 1.0,
            outside_value: values[0],
            weights,
            values: values[1..].to_vec(),
            max_items: self.max_items(),
        }
    }

    /// Expected immediate value `sum_a p(a|s,A) values[a]` of an assortment.
    pub fn assortment_value(&self, h: usize, s: usize, assortment: &[usize], values: &[f64]) -> f64 {
        let p = self.choice_probs(h, s, assortment);
        p[0] * values[0]
            + assortment
                .iter()
                .zip(&p[1..])
                .map(|(&a, &pa)| pa * values[a])
                .sum::<f64>()
    }

    /// Expected next-step backup `r(s,a) + sum_s' P(s'|s,a) next[s']` for every action.
    pub fn item_values(&self, h: usize, s: usize, next: &[f64]) -> Vec<f64> {
        (0..self.n_actions())
            .map(|a| self.reward(h, s, a) + dot(self.transition_row(h, s, a), next))
            .collect()
    }
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Parameters of the online-shopping-with-budget environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ShoppingConfig {
    pub n_items: usize,
    pub n_states: usize,
    pub horizon: usize,
    pub max_assortment: usize,
    pub dim: usize,
    pub mnl_bound: f64,
    pub seed: u64,
}

impl Default for ShoppingConfig {
    fn default() -> Self {
        Self {
            n_items: 10,
            n_states: 5,
            horizon: 5,
            max_assortment: 6,
            dim: 5,
            mnl_bound: 1.0,
            seed: 0,
        }
    }
}

/// Budget levels `s_1..s_S`; buying item `i` in `s_j` pays
/// `(i / (100 N) + j / S) / H` and moves the budget down with probability
/// `i / N`, otherwise up. Declining every item pays nothing and moves up.
///
/// `theta*` and `phi` are drawn from `U[-1, 1]^d`; `phi` is scaled so the
/// largest feature has unit norm and `theta*` is scaled to norm `B`.
/// `psi` comes from a thin SVD of the stacked transition matrix plus one
/// reward coordinate, so `d_lin = S + 1`.
pub fn online_shopping_env(cfg: &ShoppingConfig) -> Result<TabularEnv, EnvError> {
    if cfg.n_items < 2 || cfg.n_states < 2 {
        return Err(EnvError::DimensionConstraint(
            "shopping env needs at least 2 items and 2 states".into(),
        ));
    }
    if cfg.horizon == 0 || cfg.dim == 0 || cfg.max_assortment < 2 {
        return Err(EnvError::DimensionConstraint(
            "horizon and dim must be positive and max_assortment at least 2".into(),
        ));
    }
    let (n, ns, hz, d) = (cfg.n_items, cfg.n_states, cfg.horizon, cfg.dim);
    let na = n + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // one time-homogeneous layer
    let mut p1 = vec![0.0; ns * na * ns];
    let mut r1 = vec![0.0; ns * na];
    for s in 0..ns {
        let up = (s + 1).min(ns - 1);
        let down = s.saturating_sub(1);
        p1[(s * na) * ns + up] = 1.0;
        for i in 1..=n {
            let q = i as f64 / n as f64;
            let row = (s * na + i) * ns;
            p1[row + up] += 1.0 - q;
            p1[row + down] += q;
            let j = (s + 1) as f64;
            r1[s * na + i] = (i as f64 / (100.0 * n as f64) + j / ns as f64) / hz as f64;
        }
    }

    let mut phi1 = vec![0.0; ns * na * d];
    for s in 0..ns {
        for a in 1..na {
            for k in 0..d {
                phi1[(s * na + a) * d + k] = rng.gen_range(-1.0..=1.0);
            }
        }
    }
    let max_norm = phi1.chunks(d).map(crate::numerics::norm2).fold(0.0f64, f64::max);
    if max_norm > 0.0 {
        phi1.iter_mut().for_each(|x| *x /= max_norm);
    }
    let mut theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let tn = crate::numerics::norm2(&theta);
    if tn > 0.0 {
        theta.iter_mut().for_each(|x| *x *= cfg.mnl_bound / tn);
    }

    let pm = DMatrix::from_row_slice(ns * na, ns, &p1);
    let svd = pm.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let rank = svd.singular_values.len();
    let d_lin = rank + 1;
    let mut psi1 = vec![0.0; ns * na * d_lin];
    for row in 0..ns * na {
        for k in 0..rank {
            psi1[row * d_lin + k] = u[(row, k)] * svd.singular_values[k];
        }
        psi1[row * d_lin + rank] = r1[row];
    }
    let scale = psi1.chunks(d_lin).map(crate::numerics::norm2).fold(0.0f64, f64::max);
    psi1.iter_mut().for_each(|x| *x /= scale);
    let mu1: Vec<Vec<f64>> = (0..ns)
        .map(|t| {
            let mut m: Vec<f64> = (0..rank).map(|k| v_t[(k, t)] * scale).collect();
            m.push(0.0);
            m
        })
        .collect();
    let mut w1 = vec![0.0; d_lin];
    w1[rank] = scale;

    let env = TabularEnv {
        name: "shopping".into(),
        n_states: ns,
        n_items: n,
        horizon: hz,
        max_assortment: cfg.max_assortment,
        dim: d,
        dim_lin: d_lin,
        mnl_bound: cfg.mnl_bound,
        transition: p1.repeat(hz),
        reward: r1.repeat(hz),
        phi: phi1.repeat(hz),
        psi: psi1.repeat(hz),
        theta: vec![theta; hz],
        initial_state: ns.div_ceil(2) - 1,
        factors: Some(LinearFactors {
            group: vec![0; ns],
            mu: vec![vec![mu1]; hz],
            w: vec![w1; hz],
        }),
    };
    env.validate()?;
    Ok(env)
}

/// Parameters of the hard linear MDP with MNL preferences.
#[derive(Debug, Clone, PartialEq)]
pub struct HardConfig {
    pub dim: usize,
    pub dim_lin: usize,
    pub horizon: usize,
    pub episodes: usize,
    /// Constant `C` in the utility gap `epsilon`.
    pub c_const: f64,
    pub seed: u64,
}

impl Default for HardConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            dim_lin: 8,
            horizon: 4,
            episodes: 10_000,
            c_const: 1.0,
            seed: 0,
        }
    }
}

/// Layout of the hard instance's state space.
#[derive(Debug, Clone, PartialEq)]
pub struct HardLayout {
    pub horizon: usize,
    /// `layer[i - 1][h - i]` is the state `x^(i)_h`, `i in 1..=H+1`, `h in i..=H+1`.
    pub layer: Vec<Vec<usize>>,
    /// `absorbing[i - 1]` is `x^(i)_{H+2}`, `i in 1..=H+2`.
    pub absorbing: Vec<usize>,
    pub global_absorbing: usize,
    /// Optimal item per step (1-based item index).
    pub best_item: Vec<usize>,
    /// Item sign vectors, `items[a - 1]`.
    pub items: Vec<Vec<f64>>,
}

impl HardLayout {
    fn new(horizon: usize) -> Self {
        let mut next = 1;
        let mut layer = Vec::new();
        for i in 1..=horizon + 1 {
            let row: Vec<usize> = (i..=horizon + 1)
                .map(|_| {
                    next += 1;
                    next - 1
                })
                .collect();
            layer.push(row);
        }
        let absorbing = (0..horizon + 2)
            .map(|_| {
                next += 1;
                next - 1
            })
            .collect();
        Self {
            horizon,
            layer,
            absorbing,
            global_absorbing: 0,
            best_item: Vec::new(),
            items: Vec::new(),
        }
    }

    pub fn n_states(&self) -> usize {
        1 + self.layer.iter().map(Vec::len).sum::<usize>() + self.absorbing.len()
    }

    /// `x^(i)_h` with 1-based `i` and `h`.
    pub fn layer_state(&self, i: usize, h: usize) -> usize {
        self.layer[i - 1][h - i]
    }
}

/// Hard instance in which the single best item must be identified at every
/// step.
///
/// Items are the sign vectors `{-1, 1}^n` with `n = floor((d_lin - 5) / 2)`;
/// an odd `d_lin - 5` adds one zero padding coordinate to `psi`. The linear
/// factorization of the transitions is exact relative to the source state's
/// layer. MNL features are shifted so the outside option's feature is zero:
/// `phi(a) = (z_U(a), -1) / sqrt(1.25)`, which leaves all utility differences
/// unchanged.
pub fn hard_instance_env(cfg: &HardConfig) -> Result<(TabularEnv, HardLayout), EnvError> {
    let (d, d_lin, hz) = (cfg.dim, cfg.dim_lin, cfg.horizon);
    if d < 2 || (d - 1) % 4 != 0 {
        return Err(EnvError::DimensionConstraint(format!(
            "d = {d} must be at least 2 with d - 1 divisible by 4"
        )));
    }
    if d_lin < 7 {
        return Err(EnvError::DimensionConstraint(format!(
            "d_lin = {d_lin} leaves no item coordinates (need d_lin >= 7)"
        )));
    }
    if hz < 1 || cfg.episodes < 1 {
        return Err(EnvError::DimensionConstraint(
            "horizon and episodes must be positive".into(),
        ));
    }
    let n = (d_lin - 5) / 2;
    let n_items = 1usize << n;
    let support = (d - 1) / 4;
    let supports = combinations(d - 1, support);
    if n_items > supports.len() {
        return Err(EnvError::DimensionConstraint(format!(
            "{n_items} items need distinct supports but only {} exist for d = {d}",
            supports.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (hf, kf) = (hz as f64, cfg.episodes as f64);
    let gamma = hf / (hf + 1.0);
    let delta = 1.0 / hf;
    let big_delta = (delta / kf).sqrt() / (4.0 * std::f64::consts::SQRT_2);
    let spread = 2.0 + big_delta * (d_lin as f64 - 5.0);
    let alpha = (1.0 / spread).sqrt();
    let beta = (big_delta / spread).sqrt();
    let s2 = std::f64::consts::SQRT_2;

    let mut layout = HardLayout::new(hz);
    layout.items = (0..n_items)
        .map(|j| (0..n).map(|b| if (j >> b) & 1 == 1 { 1.0 } else { -1.0 }).collect())
        .collect();
    let mu_vecs: Vec<Vec<f64>> = (0..hz)
        .map(|_| {
            (0..n)
                .map(|_| if rng.gen::<bool>() { big_delta } else { -big_delta })
                .collect()
        })
        .collect();
    layout.best_item = mu_vecs
        .iter()
        .map(|m| {
            let j: usize = m
                .iter()
                .enumerate()
                .map(|(b, &v)| if v > 0.0 { 1 << b } else { 0 })
                .sum();
            j + 1
        })
        .collect();

    let ns = layout.n_states();
    let na = n_items + 1;
    // psi coordinates
    let same = 0;
    let next_blk = 1 + n;
    let abs_c = 2 + 2 * n;
    let out_c = 3 + 2 * n;
    let rew_c = 4 + 2 * n;

    let mut group = vec![0usize; ns];
    for i in 1..=hz + 1 {
        for h in i..=hz + 1 {
            group[layout.layer_state(i, h)] = i;
        }
    }
    for i in 1..=hz + 2 {
        group[layout.absorbing[i - 1]] = i;
    }
    let n_groups = hz + 3;

    let mut transition = vec![0.0; hz * ns * na * ns];
    let mut reward = vec![0.0; hz * ns * na];
    let mut psi = vec![0.0; hz * ns * na * d_lin];
    let mut mu = vec![vec![vec![vec![0.0; d_lin]; ns]; n_groups]; hz];
    let mut w = vec![vec![0.0; d_lin]; hz];
    let idx = |t: usize, s: usize, a: usize| (t * ns + s) * na + a;

    for t in 0..hz {
        w[t][rew_c] = s2 / hf;
        let mu_h = &mu_vecs[t];
        let best = layout.best_item[t];
        let step_next = (t + 2).min(hz + 1);
        for g in 0..n_groups {
            mu[t][g][layout.global_absorbing][out_c] = 1.0;
        }
        for i in 1..=hz + 2 {
            mu[t][i][layout.absorbing[i - 1]][abs_c] = s2;
        }
        for i in 1..=hz + 1 {
            let same_next = layout.layer_state(i, step_next.max(i));
            let up_layer = (i + 1).min(hz + 1);
            let up_next = layout.layer_state(up_layer, step_next.max(up_layer));
            let abs_same = layout.absorbing[i - 1];
            let abs_up = layout.absorbing[(i + 2).min(hz + 2) - 1];
            let m = &mut mu[t][i];
            m[same_next][same] += (1.0 - delta) / alpha;
            m[abs_same][same] += delta / alpha;
            m[up_next][next_blk] += (1.0 - delta) / alpha;
            m[abs_up][next_blk] += delta / alpha;
            for b in 0..n {
                m[same_next][same + 1 + b] -= mu_h[b] / beta;
                m[abs_same][same + 1 + b] += mu_h[b] / beta;
                m[up_next][next_blk + 1 + b] -= mu_h[b] / beta;
                m[abs_up][next_blk + 1 + b] += mu_h[b] / beta;
            }

            for h in i..=hz + 1 {
                let s = layout.layer_state(i, h);
                for a in 0..na {
                    let k = idx(t, s, a);
                    let f = &mut psi[k * d_lin..(k + 1) * d_lin];
                    let row = &mut transition[k * ns..(k + 1) * ns];
                    if a == OUTSIDE {
                        f[out_c] = 1.0;
                        row[layout.global_absorbing] = 1.0;
                        continue;
                    }
                    let item = &layout.items[a - 1];
                    let lean = delta + dot(mu_h, item);
                    let (blk, exp, stay, fall) = if a == best {
                        (same, i - 1, same_next, abs_same)
                    } else {
                        (next_blk, i, up_next, abs_up)
                    };
                    f[blk] = alpha;
                    for b in 0..n {
                        f[blk + 1 + b] = beta * item[b];
                    }
                    f[rew_c] = gamma.powi(exp as i32) / s2;
                    reward[k] = gamma.powi(exp as i32) / hf;
                    row[stay] += 1.0 - lean;
                    row[fall] += lean;
                }
            }
        }
        for i in 1..=hz + 2 {
            let s = layout.absorbing[i - 1];
            for a in 0..na {
                let k = idx(t, s, a);
                let f = &mut psi[k * d_lin..(k + 1) * d_lin];
                f[abs_c] = 1.0 / s2;
                f[rew_c] = gamma.powi(i as i32 - 1) / s2;
                reward[k] = gamma.powi(i as i32 - 1) / hf;
                transition[k * ns + s] = 1.0;
            }
        }
        let x0 = layout.global_absorbing;
        for a in 0..na {
            let k = idx(t, x0, a);
            psi[k * d_lin + out_c] = 1.0;
            transition[k * ns + x0] = 1.0;
        }
    }

    // MNL part
    let eps = ((d as f64 - 1.0) / (144.0 * cfg.c_const * kf) * (hf + 1.0).powi(2) / hf).sqrt();
    let zval = 1.0 / ((d - 1) as f64).sqrt();
    let shift = (1.0 + support as f64 / (d - 1) as f64).sqrt();
    let mut phi_items = vec![vec![0.0; d]; na];
    for a in 1..na {
        for &j in &supports[a - 1] {
            phi_items[a][j] = zval / shift;
        }
        phi_items[a][d - 1] = -1.0 / shift;
    }
    let ln_h = hf.ln();
    let theta: Vec<Vec<f64>> = (0..hz)
        .map(|t| {
            let mut th = vec![0.0; d];
            for &j in &supports[layout.best_item[t] - 1] {
                th[j] = eps * shift;
            }
            th[d - 1] = -ln_h * shift;
            th
        })
        .collect();
    let mnl_bound = shift * (support as f64 * eps * eps + ln_h * ln_h).sqrt();
    let mut phi = vec![0.0; hz * ns * na * d];
    for t in 0..hz {
        for s in 0..ns {
            for a in 0..na {
                let k = idx(t, s, a);
                phi[k * d..(k + 1) * d].copy_from_slice(&phi_items[a]);
            }
        }
    }

    let env = TabularEnv {
        name: "hard".into(),
        n_states: ns,
        n_items,
        horizon: hz,
        max_assortment: n_items + 1,
        dim: d,
        dim_lin: d_lin,
        mnl_bound,
        transition,
        reward,
        phi,
        psi,
        theta,
        initial_state: layout.layer_state(1, 1),
        factors: Some(LinearFactors { group, mu, w }),
    };
    env.validate()?;
    Ok((env, layout))
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Loads a custom environment from its JSON serialization.
pub fn load_custom_env(path: &std::path::Path) -> Result<TabularEnv, EnvError> {
    let text = std::fs::read_to_string(path).map_err(|e| EnvError::Invalid(format!("{}: {e}", path.display())))?;
    let env: TabularEnv =
        serde_json::from_str(&text).map_err(|e| EnvError::Invalid(format!("{}: {e}", path.display())))?;
    env.validate()?;
    Ok(env)
}

/// Optimal values and assortments of a tabular environment.
#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    /// `values[h][s]`, with `values[horizon]` all zero.
    pub values: Vec<Vec<f64>>,
    /// Item-level values `q[h][s][a]`, outside option at `a = 0`.
    pub q: Vec<Vec<Vec<f64>>>,
    /// Optimal assortment per `(h, s)`.
    pub policy: Vec<Vec<Vec<usize>>>,
}

impl DpSolution {
    pub fn initial_value(&self, env: &TabularEnv) -> f64 {
        self.values[0][env.initial_state]
    }
}

/// Solves one assortment problem, exactly by enumeration for small ground
/// sets and by the parametric method otherwise. Returns 1-based items.
pub fn best_assortment(inst: &AssortmentInstance) -> Result<(Vec<usize>, f64), EnvError> {
    let sol = if inst.len() <= assort::BRUTEFORCE_MAX_ITEMS {
        assort::solve_bruteforce(inst)?
    } else {
        assort::solve_parametric(inst)
    };
    Ok((sol.chosen.iter().map(|&a| a + 1).collect(), sol.value))
}

/// Backward induction with the true MNL model.
pub fn dp_optimal_values(env: &TabularEnv) -> Result<DpSolution, EnvError> {
    let (hz, ns) = (env.horizon, env.n_states);
    let mut values = vec![vec![0.0; ns]; hz + 1];
    let mut q = vec![Vec::new(); hz];
    let mut policy = vec![Vec::new(); hz];
    for h in (0..hz).rev() {
        for s in 0..ns {
            let qs = env.item_values(h, s, &values[h + 1]);
            let inst = env.true_instance(h, s, &qs);
            let (set, v) = best_assortment(&inst)?;
            values[h][s] = v;
            q[h].push(qs);
            policy[h].push(set);
        }
    }
    Ok(DpSolution { values, q, policy })
}

/// Exact value of a deterministic assortment policy `policy[h][s]`.
pub fn evaluate_policy(env: &TabularEnv, policy: &[Vec<Vec<usize>>]) -> Vec<Vec<f64>> {
    let (hz, ns) = (env.horizon, env.n_states);
    let mut values = vec![vec![0.0; ns]; hz + 1];
    for h in (0..hz).rev() {
        for s in 0..ns {
            let qs = env.item_values(h, s, &values[h + 1]);
            values[h][s] = env.assortment_value(h, s, &policy[h][s], &qs);
        }
    }
    values
}
