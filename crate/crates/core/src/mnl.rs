//! Multinomial-logit preference model.
//!
//! Items are described by feature vectors; the outside option always has the
//! zero feature, so its utility is 0. Probability vectors returned here put
//! the outside option at index 0 and the offered items at `1..=n`.

use crate::numerics::{self, dot, NumericsError, SymMatrix, Whitener};

/// Utilities are clamped to `[-UTILITY_CLAMP, UTILITY_CLAMP]` before exponentiation.
pub const UTILITY_CLAMP: f64 = 30.0;

/// Choice probabilities from raw utilities of the offered items.
///
/// Returns `len + 1` entries: outside option first.
pub fn probs_from_utilities(utilities: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(utilities.len() + 1);
    probs_from_utilities_into(utilities, &mut out);
    out
}

pub fn probs_from_utilities_into(utilities: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let shift = utilities
        .iter()
        .map(|u| u.clamp(-UTILITY_CLAMP, UTILITY_CLAMP))
        .fold(0.0f64, f64::max);
    let e0 = (-shift).exp();
    out.push(e0);
    let mut total = e0;
    for &u in utilities {
        let e = (u.clamp(-UTILITY_CLAMP, UTILITY_CLAMP) - shift).exp();
        out.push(e);
        total += e;
    }
    for p in out.iter_mut() {
        *p /= total;
    }
}

/// MNL choice probabilities of the offered items under `theta`.
pub fn choice_probs<V: AsRef<[f64]>>(theta: &[f64], items: &[V]) -> Vec<f64> {
    let u: Vec<f64> = items.iter().map(|phi| dot(phi.as_ref(), theta)).collect();
    probs_from_utilities(&u)
}

/// One round of preference feedback: the offered items' features and the
/// user's pick (`None` is the outside option).
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceObservation {
    pub items: Vec<Vec<f64>>,
    pub chosen: Option<usize>,
}

impl ChoiceObservation {
    pub fn new(items: Vec<Vec<f64>>, chosen: Option<usize>) -> Self {
        debug_assert!(chosen.map_or(true, |c| c < items.len()));
        Self { items, chosen }
    }

    fn dim(&self) -> usize {
        self.items.first().map_or(0, Vec::len)
    }
}

/// Negative log-likelihood of the observed choice.
pub fn mnl_loss(theta: &[f64], obs: &ChoiceObservation) -> f64 {
    let u: Vec<f64> = obs.items.iter().map(|phi| dot(phi, theta)).collect();
    let chosen_u = obs.chosen.map_or(0.0, |c| u[c]);
    // log(1 + sum exp u) - u_chosen, evaluated stably
    let m = u.iter().copied().fold(0.0f64, f64::max);
    let lse = m + ((-m).exp() + u.iter().map(|x| (x - m).exp()).sum::<f64>()).ln();
    (lse - chosen_u).max(0.0)
}

/// Gradient of [`mnl_loss`]: `sum_a (p_a - y_a) phi_a`.
pub fn mnl_grad(theta: &[f64], obs: &ChoiceObservation) -> Vec<f64> {
    let p = choice_probs(theta, &obs.items);
    let mut g = vec![0.0; theta.len()];
    for (i, phi) in obs.items.iter().enumerate() {
        let y = if obs.chosen == Some(i) { 1.0 } else { 0.0 };
        let c = p[i + 1] - y;
        for (gj, &fj) in g.iter_mut().zip(phi) {
            *gj += c * fj;
        }
    }
    g
}

/// Hessian of [`mnl_loss`]: `sum_a p_a phi_a phi_a^T - m m^T` with `m = sum_a p_a phi_a`.
pub fn mnl_hessian(theta: &[f64], obs: &ChoiceObservation) -> SymMatrix {
    let p = choice_probs(theta, &obs.items);
    hessian_from_probs(&p, &obs.items, theta.len())
}

fn hessian_from_probs(p: &[f64], items: &[Vec<f64>], d: usize) -> SymMatrix {
    let mut h = SymMatrix::zeros(d);
    let mut mean = vec![0.0; d];
    for (i, phi) in items.iter().enumerate() {
        h.add_outer(phi, p[i + 1]);
        for (m, &f) in mean.iter_mut().zip(phi) {
            *m += p[i + 1] * f;
        }
    }
    h.add_outer(&mean, -1.0);
    h
}

/// Fixed hyperparameters of the online estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct MnlConfig {
    /// Feature dimension `d`.
    pub dim: usize,
    /// Assortment size cap `M`, counting the outside option.
    pub max_assortment: usize,
    /// Norm bound `B` on the parameter.
    pub bound: f64,
    pub delta: f64,
    pub eta: f64,
    pub lambda: f64,
    pub radius_scale: f64,
}

impl MnlConfig {
    /// Uses `eta = ln(M + 1) / 2 + B + 1` and `lambda = 84 sqrt(2) d eta`.
    pub fn new(dim: usize, max_assortment: usize, bound: f64, delta: f64) -> Self {
        let eta = 0.5 * ((max_assortment + 1) as f64).ln() + bound + 1.0;
        let lambda = 84.0 * std::f64::consts::SQRT_2 * dim as f64 * eta;
        Self {
            dim,
            max_assortment,
            bound,
            delta,
            eta,
            lambda,
            radius_scale: 1.0,
        }
    }

    pub fn with_radius_scale(mut self, scale: f64) -> Self {
        self.radius_scale = scale;
        self
    }

    /// Unscaled confidence radius after `k` rounds.
    pub fn raw_radius(&self, k: usize) -> f64 {
        let k = k.max(1) as f64;
        let m = self.max_assortment as f64;
        let d = self.dim as f64;
        let (eta, lambda, b) = (self.eta, self.lambda, self.bound);
        let first =
            11.0 * (3.0 * (1.0 + (m + 1.0) * k).ln() + b + 2.0) * (2.0 * (1.0 + 2.0 * k).sqrt() / self.delta).ln();
        let second = 7.0 * 6f64.sqrt() / 6.0 * d * eta * (1.0 + (k + 1.0) / (2.0 * lambda)).ln();
        (2.0 * eta * (first + 2.0 + second + 2.0) + 4.0 * lambda * b * b).sqrt()
    }

    /// Confidence radius used for utilities, including `radius_scale`.
    pub fn radius(&self, k: usize) -> f64 {
        self.radius_scale * self.raw_radius(k)
    }
}

/// Online estimate for one horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct MnlParameterState {
    pub theta: Vec<f64>,
    /// `lambda I` plus the Hessians accumulated at post-update parameters.
    pub hessian: SymMatrix,
    pub episode_count: usize,
    pub config: MnlConfig,
}

impl MnlParameterState {
    pub fn new(config: MnlConfig) -> Self {
        Self {
            theta: vec![0.0; config.dim],
            hessian: SymMatrix::scaled_identity(config.dim, config.lambda),
            episode_count: 0,
            config,
        }
    }

    /// Returns the state after one mirror-descent step on `obs`.
    pub fn omd_update(&self, obs: &ChoiceObservation) -> Result<Self, NumericsError> {
        let mut next = self.clone();
        next.update(obs)?;
        Ok(next)
    }

    /// In-place version of [`Self::omd_update`].
    pub fn update(&mut self, obs: &ChoiceObservation) -> Result<(), NumericsError> {
        let eta = self.config.eta;
        let d = self.config.dim;
        if obs.items.is_empty() {
            self.episode_count += 1;
            return Ok(());
        }
        if obs.dim() != d {
            return Err(NumericsError::DimensionMismatch {
                expected: d,
                got: obs.dim(),
            });
        }
        let p = choice_probs(&self.theta, &obs.items);
        let grad = {
            let mut g = vec![0.0; d];
            for (i, phi) in obs.items.iter().enumerate() {
                let y = if obs.chosen == Some(i) { 1.0 } else { 0.0 };
                let c = p[i + 1] - y;
                for (gj, &fj) in g.iter_mut().zip(phi) {
                    *gj += c * fj;
                }
            }
            g
        };
        let mut tilde = self.hessian.clone();
        tilde.add_scaled(&hessian_from_probs(&p, &obs.items, d), eta);
        let step = tilde.cholesky()?.solve(&grad)?;
        let center: Vec<f64> = self.theta.iter().zip(&step).map(|(t, s)| t - eta * s).collect();
        self.theta = numerics::project_to_ball_in_metric(&center, &tilde, self.config.bound)?;
        let p_new = choice_probs(&self.theta, &obs.items);
        self.hessian.add_scaled(&hessian_from_probs(&p_new, &obs.items, d), 1.0);
        self.episode_count += 1;
        Ok(())
    }

    /// Confidence radius for the current number of observations.
    pub fn confidence_radius(&self) -> f64 {
        self.config.radius(self.episode_count)
    }

    /// `||theta - self.theta||` in the accumulated-Hessian metric.
    pub fn distance(&self, theta: &[f64]) -> f64 {
        let diff: Vec<f64> = theta.iter().zip(&self.theta).map(|(a, b)| a - b).collect();
        self.hessian.quad_form(&diff).max(0.0).sqrt()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.distance(theta) <= self.confidence_radius()
    }

    /// Freezes the state into a cheap evaluator of utilities.
    pub fn utility_oracle(&self) -> Result<UtilityOracle, NumericsError> {
        Ok(UtilityOracle {
            theta: self.theta.clone(),
            whitener: self.hessian.cholesky()?.whitener(),
            alpha: self.confidence_radius(),
        })
    }

    /// `(optimistic, pessimistic)` utilities of a feature vector.
    pub fn utilities(&self, phi: &[f64]) -> Result<(f64, f64), NumericsError> {
        Ok(self.utility_oracle()?.utilities(phi))
    }

    pub fn optimistic_choice_probs(
        &self,
        items: &[(Vec<f64>, f64)],
        f_outside: f64,
    ) -> Result<Vec<f64>, NumericsError> {
        let oracle = self.utility_oracle()?;
        let utils: Vec<(f64, f64)> = items.iter().map(|(phi, _)| oracle.utilities(phi)).collect();
        let values: Vec<f64> = items.iter().map(|(_, f)| *f).collect();
        Ok(optimistic_choice_probs(&utils, &values, f_outside))
    }
}

/// Utility evaluator with a factored Hessian and fixed radius.
#[derive(Debug, Clone)]
pub struct UtilityOracle {
    pub theta: Vec<f64>,
    pub whitener: Whitener,
    pub alpha: f64,
}

impl UtilityOracle {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn mean_utility(&self, phi: &[f64]) -> f64 {
        dot(phi, &self.theta)
    }

    pub fn utilities(&self, phi: &[f64]) -> (f64, f64) {
        let mean = dot(phi, &self.theta);
        let width = if self.alpha == 0.0 {
            0.0
        } else {
            self.alpha * self.whitener.inverse_norm(phi)
        };
        (mean + width, mean - width)
    }
}

/// True when some item's value is at least the outside option's.
pub fn optimism_indicator(values: &[f64], f_outside: f64) -> bool {
    values.iter().any(|&f| f >= f_outside)
}

/// Picks optimistic or pessimistic utilities per the indicator.
pub fn select_utilities(utils: &[(f64, f64)], values: &[f64], f_outside: f64) -> Vec<f64> {
    if optimism_indicator(values, f_outside) {
        utils.iter().map(|u| u.0).collect()
    } else {
        utils.iter().map(|u| u.1).collect()
    }
}

/// Choice probabilities built from the selected branch of utilities.
///
/// `utils` holds `(optimistic, pessimistic)` per item and `values` the item
/// values used by the indicator.
pub fn optimistic_choice_probs(utils: &[(f64, f64)], values: &[f64], f_outside: f64) -> Vec<f64> {
    probs_from_utilities(&select_utilities(utils, values, f_outside))
}
