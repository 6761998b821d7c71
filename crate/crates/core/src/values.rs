//! Item-level value estimation for the linear function class.
//!
//! Values are linear in the state-item feature `psi`. Fits are ridge
//! regressions with regularizer `rho / (16 d_lin)`; uncertainty is the
//! elliptical bonus `||psi||_{Sigma^-1} sqrt(beta^2 + rho)`.

use crate::numerics::{dot, Cholesky, NumericsError, SymMatrix};

/// Upper bound on the item-level value range used by the schedules.
pub const VALUE_BOUND: f64 = 1.0;
/// Cap on the fitted second moment and on the variance estimate.
pub const SECOND_MOMENT_CAP: f64 = 4.0;

pub fn ridge_lambda(rho: f64, d_lin: usize) -> f64 {
    rho / (16.0 * d_lin as f64)
}

/// Which estimate a model backs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueIndex {
    Optimistic,
    OverOptimistic,
    OverPessimistic,
    SecondMoment,
}

/// A fitted ridge model with its factored design.
#[derive(Debug, Clone)]
pub struct LinearValueModel {
    pub weights: Vec<f64>,
    pub design: SymMatrix,
    pub chol: Cholesky,
    pub beta: f64,
    pub rho: f64,
}

impl LinearValueModel {
    pub fn from_design(design: SymMatrix, rhs: &[f64], beta: f64, rho: f64) -> Result<Self, NumericsError> {
        let chol = design.cholesky()?;
        let weights = chol.solve(rhs)?;
        Ok(Self {
            weights,
            design,
            chol,
            beta,
            rho,
        })
    }

    pub fn predict(&self, psi: &[f64]) -> f64 {
        dot(&self.weights, psi)
    }

    /// `||psi||` in the inverse design metric.
    pub fn width(&self, psi: &[f64]) -> f64 {
        self.chol.inverse_norm(psi)
    }

    pub fn bonus(&self, psi: &[f64]) -> f64 {
        elliptical_bonus(self, psi)
    }

    pub fn bonus_scale(&self) -> f64 {
        (self.beta * self.beta + self.rho).sqrt()
    }
}

/// Solves `min_w sum_t (w.psi_t - y_t)^2 / sigma_bar_t^2 + rho/(16 d_lin) ||w||^2`.
pub fn weighted_ridge_fit(
    features: &[Vec<f64>],
    targets: &[f64],
    sigma_bar_sq: &[f64],
    rho: f64,
    d_lin: usize,
    beta: f64,
) -> Result<LinearValueModel, NumericsError> {
    if features.len() != targets.len() || features.len() != sigma_bar_sq.len() {
        return Err(NumericsError::DimensionMismatch {
            expected: features.len(),
            got: targets.len().min(sigma_bar_sq.len()),
        });
    }
    let mut design = SymMatrix::scaled_identity(d_lin, ridge_lambda(rho, d_lin));
    let mut rhs = vec![0.0; d_lin];
    for ((psi, &y), &s2) in features.iter().zip(targets).zip(sigma_bar_sq) {
        let w = 1.0 / s2;
        design.add_outer(psi, w);
        for (r, &p) in rhs.iter_mut().zip(psi) {
            *r += w * y * p;
        }
    }
    LinearValueModel::from_design(design, &rhs, beta, rho)
}

/// Unit-weight ridge fit.
pub fn ridge_fit(
    features: &[Vec<f64>],
    targets: &[f64],
    rho: f64,
    d_lin: usize,
    beta: f64,
) -> Result<LinearValueModel, NumericsError> {
    weighted_ridge_fit(features, targets, &vec![1.0; features.len()], rho, d_lin, beta)
}

pub fn elliptical_bonus(model: &LinearValueModel, psi: &[f64]) -> f64 {
    model.width(psi) * model.bonus_scale()
}

pub fn value_f1(f1_hat: f64, bonus1: f64) -> f64 {
    (f1_hat + bonus1).min(1.0).max(0.0)
}

pub fn value_f2(f2_hat: f64, bonus1: f64, bonus2: f64) -> f64 {
    (f2_hat + 2.0 * bonus1 + bonus2).min(1.0).max(0.0)
}

pub fn value_f_neg2(f_neg2_hat: f64, bonus2: f64) -> f64 {
    (f_neg2_hat - bonus2).max(0.0).min(1.0)
}

/// How regression weights are chosen for new samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMode {
    /// `sigma_bar = 1` for every sample.
    Simple,
    /// The full variance-aware schedule.
    Full,
}

impl std::str::FromStr for SigmaMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(Self::Simple),
            "full" => Ok(Self::Full),
            other => Err(format!("unknown sigma mode '{other}' (expected simple|full)")),
        }
    }
}

impl std::fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Simple => "simple",
            Self::Full => "full",
        })
    }
}

/// Variance estimate `sigma` from the second-moment and pessimistic fits.
///
/// `d_unit` is `||psi||` under the inverse unweighted design.
pub fn sigma_schedule(ghat: f64, f_neg2_hat: f64, d_unit: f64, beta_bar: f64, beta2: f64, rho: f64, nu: f64) -> f64 {
    let g = ghat.clamp(0.0, SECOND_MOMENT_CAP);
    let spread = (g - f_neg2_hat * f_neg2_hat).max(0.0);
    let widen = d_unit * ((beta_bar * beta_bar + rho).sqrt() + (beta2 * beta2 + rho).sqrt());
    let var = (spread + widen).min(SECOND_MOMENT_CAP);
    var.clamp(nu * nu, SECOND_MOMENT_CAP).sqrt()
}

/// Regression weight `sigma_bar`; `d_weighted` is `||psi||` under the
/// inverse weighted design.
#[allow(clippy::too_many_arguments)]
pub fn sigma_bar_schedule(
    mode: SigmaMode,
    sigma: f64,
    nu: f64,
    f2: f64,
    f_neg2: f64,
    d_weighted: f64,
    o: f64,
    iota: f64,
) -> f64 {
    match mode {
        SigmaMode::Simple => 1.0,
        SigmaMode::Full => {
            let gap = (f2 - f_neg2).max(0.0);
            sigma
                .max(nu)
                .max(std::f64::consts::SQRT_2 * iota * gap.sqrt())
                .max(2.0 * (o.sqrt() + iota) * d_weighted.sqrt())
        }
    }
}

/// Confidence-radius and threshold schedules instantiated with linear-class
/// covering numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub episodes: usize,
    pub horizon: usize,
    pub d_lin: usize,
    /// MNL feature dimension.
    pub d: usize,
    /// Assortment cap `M`, counting the outside option.
    pub max_assortment: usize,
    pub delta: f64,
    pub rho: f64,
    pub beta_scale: f64,
    pub u_scale: f64,
}

impl Schedule {
    pub fn new(episodes: usize, horizon: usize, d_lin: usize, d: usize, max_assortment: usize, delta: f64) -> Self {
        Self {
            episodes,
            horizon,
            d_lin,
            d,
            max_assortment,
            delta,
            rho: 1.0,
            beta_scale: 1.0,
            u_scale: 1.0,
        }
    }

    fn kf(&self) -> f64 {
        self.episodes.max(1) as f64
    }

    fn hf(&self) -> f64 {
        self.horizon.max(1) as f64
    }

    pub fn nu(&self) -> f64 {
        (1.0 / (self.kf() * self.hf())).sqrt()
    }

    /// `delta / ((K + 1)(H + 1))`.
    pub fn delta_kh(&self) -> f64 {
        self.delta / ((self.kf() + 1.0) * (self.hf() + 1.0))
    }

    /// Cover resolution `1 / (8 H K)`.
    pub fn eps_cover(&self) -> f64 {
        1.0 / (8.0 * self.hf() * self.kf())
    }

    /// `log N = d_lin ln(B_lin / eps_c)` with weight bound `B_lin = 2 sqrt(d_lin)`.
    pub fn log_cover(&self) -> f64 {
        let dl = self.d_lin as f64;
        dl * (2.0 * dl.sqrt() / self.eps_cover()).ln()
    }

    /// Cover of the bonus class, parametrized by `d_lin x d_lin` matrices.
    pub fn log_cover_bonus(&self) -> f64 {
        let dl = self.d_lin as f64;
        let e = self.eps_cover();
        dl * dl * (1.0 + dl.powf(1.5) * self.raw_beta1() / (self.rho * e * e)).ln()
    }

    fn peeling(&self) -> f64 {
        let l = VALUE_BOUND;
        let nu = self.nu();
        (2.0 * (4.0 * l * self.kf() / nu).ln() + 2.0).ln() + ((8.0 * l / (nu * nu)).ln() + 2.0).ln()
    }

    fn raw_beta1(&self) -> f64 {
        let log_term =
            2.0 * self.log_cover() + (self.kf() + 1.0).ln() + (self.hf() + 1.0).ln() + self.peeling() - self.delta.ln();
        ((6.0 * self.rho.sqrt() + 156.0) * log_term).sqrt()
    }

    pub fn beta1(&self) -> f64 {
        self.beta_scale * self.raw_beta1()
    }

    pub fn o(&self) -> f64 {
        (2.0 * self.log_cover() + self.peeling() - self.delta_kh().ln()).sqrt()
    }

    pub fn iota(&self) -> f64 {
        3.0 * (self.log_cover() + self.log_cover_bonus() + self.peeling() - self.delta_kh().ln()).sqrt()
    }

    fn iota_c(&self, c: f64) -> f64 {
        let l = VALUE_BOUND;
        let t = (2.0 * (c * l * self.kf()).ln() + 2.0).ln() + ((c * l).ln() + 2.0).ln();
        (2.0 * (self.log_cover() + self.log_cover_bonus() + t - self.delta_kh().ln())).sqrt()
    }

    pub fn beta2(&self) -> f64 {
        let l = VALUE_BOUND;
        self.beta_scale * (2.0 * (24.0 * l + 21.0)).sqrt() * self.iota_c(18.0)
    }

    pub fn beta_bar(&self) -> f64 {
        let l = VALUE_BOUND;
        self.beta_scale * (8.0 * (11.0 * l + 9.0)).sqrt() * self.iota_c(32.0)
    }

    /// Linear-class information gain proxy `d_lin ln(1 + K / (nu^2 rho))`.
    pub fn d_nu(&self) -> f64 {
        let nu = self.nu();
        self.d_lin as f64 * (1.0 + self.kf() / (nu * nu * self.rho)).ln()
    }

    /// Exploration switch threshold for episode `k`.
    pub fn u(&self, k: usize) -> f64 {
        let k = k.max(1) as f64;
        let (kf, hf) = (self.kf(), self.hf());
        let nu = self.nu();
        let log_n = self.log_cover();
        let log_nb = self.log_cover_bonus();
        let base = (kf * hf / (nu * self.delta)).ln();
        let a = log_n + base;
        let b = log_n + log_nb + base;
        let eps_b = 0.0;
        let h52 = hf.powf(2.5);
        let m = (self.max_assortment as f64).ln();
        let value = a.sqrt() * (b * h52 * self.d_nu().sqrt() + k.sqrt() * hf * eps_b)
            + self.d as f64 * h52 * kf.ln() * m * b.sqrt();
        self.u_scale * value / k.sqrt()
    }
}

/// Sufficient statistics for ridge regressions whose targets are
/// `r + V(s')` or `(r + V(s'))^2` for a value table `V` known only at fit time.
#[derive(Debug, Clone)]
pub struct RegressionStats {
    pub design: SymMatrix,
    sum_r: Vec<f64>,
    sum_r2: Vec<f64>,
    /// Per next state: weighted sum of features.
    sum_next: Vec<Vec<f64>>,
    /// Per next state: weighted sum of `r psi`.
    sum_next_r: Vec<Vec<f64>>,
    pub count: usize,
}

impl RegressionStats {
    pub fn new(d_lin: usize, n_states: usize, rho: f64) -> Self {
        Self::with_lambda(d_lin, n_states, ridge_lambda(rho, d_lin))
    }

    /// Statistics with an explicit ridge regularizer.
    pub fn with_lambda(d_lin: usize, n_states: usize, lambda: f64) -> Self {
        Self {
            design: SymMatrix::scaled_identity(d_lin, lambda),
            sum_r: vec![0.0; d_lin],
            sum_r2: vec![0.0; d_lin],
            sum_next: vec![vec![0.0; d_lin]; n_states],
            sum_next_r: vec![vec![0.0; d_lin]; n_states],
            count: 0,
        }
    }

    /// Adds one sample with regression weight `1 / sigma_bar^2`.
    pub fn push(&mut self, psi: &[f64], reward: f64, next_state: usize, sigma_bar: f64) {
        let w = 1.0 / (sigma_bar * sigma_bar);
        self.design.add_outer(psi, w);
        for (i, &p) in psi.iter().enumerate() {
            self.sum_r[i] += w * reward * p;
            self.sum_r2[i] += w * reward * reward * p;
            self.sum_next[next_state][i] += w * p;
            self.sum_next_r[next_state][i] += w * reward * p;
        }
        self.count += 1;
    }

    /// Right-hand side for targets `r + V(s')`.
    pub fn rhs_value(&self, next_values: &[f64]) -> Vec<f64> {
        let mut rhs = self.sum_r.clone();
        for (s, c) in self.sum_next.iter().enumerate() {
            let v = next_values[s];
            if v != 0.0 {
                for (r, &ci) in rhs.iter_mut().zip(c) {
                    *r += v * ci;
                }
            }
        }
        rhs
    }

    /// Right-hand side for targets `(r + V(s'))^2`.
    pub fn rhs_second_moment(&self, next_values: &[f64]) -> Vec<f64> {
        let mut rhs = self.sum_r2.clone();
        for s in 0..self.sum_next.len() {
            let v = next_values[s];
            if v != 0.0 {
                for i in 0..rhs.len() {
                    rhs[i] += 2.0 * v * self.sum_next_r[s][i] + v * v * self.sum_next[s][i];
                }
            }
        }
        rhs
    }

    pub fn fit_value(&self, next_values: &[f64], beta: f64, rho: f64) -> Result<LinearValueModel, NumericsError> {
        LinearValueModel::from_design(self.design.clone(), &self.rhs_value(next_values), beta, rho)
    }

    pub fn fit_second_moment(
        &self,
        next_values: &[f64],
        beta: f64,
        rho: f64,
    ) -> Result<LinearValueModel, NumericsError> {
        LinearValueModel::from_design(self.design.clone(), &self.rhs_second_moment(next_values), beta, rho)
    }
}

/// Running elliptical-potential sum `sum_k min(1, ||psi_k||^2_{Sigma_{k-1}^-1} / sigma_bar_k^2)`.
#[derive(Debug, Clone)]
pub struct InformationGain {
    design: SymMatrix,
    pub total: f64,
    pub steps: usize,
}

impl InformationGain {
    pub fn new(d_lin: usize, lambda0: f64) -> Self {
        Self {
            design: SymMatrix::scaled_identity(d_lin, lambda0),
            total: 0.0,
            steps: 0,
        }
    }

    /// Adds one step and returns its term.
    pub fn push(&mut self, psi: &[f64], sigma_bar: f64) -> Result<f64, NumericsError> {
        let s2 = sigma_bar * sigma_bar;
        let q = self.design.cholesky()?.inv_quad(psi);
        let term = (q / s2).min(1.0);
        self.design.add_outer(psi, 1.0 / s2);
        self.total += term;
        self.steps += 1;
        Ok(term)
    }
}

/// Information gain of a whole `(psi, sigma_bar)` history.
pub fn information_gain(history: &[(Vec<f64>, f64)], d_lin: usize, lambda0: f64) -> Result<f64, NumericsError> {
    let mut ig = InformationGain::new(d_lin, lambda0);
    for (psi, sb) in history {
        ig.push(psi, *sb)?;
    }
    Ok(ig.total)
}

/// `2 d_lin ln(1 + K / (d_lin rho'))`.
pub fn elliptical_potential_bound(d_lin: usize, steps: usize, rho_prime: f64) -> f64 {
    let d = d_lin as f64;
    2.0 * d * (1.0 + steps as f64 / (d * rho_prime)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_fit_is_zero() {
        let m = ridge_fit(&[], &[], 1.0, 3, 1.0).unwrap();
        assert_eq!(m.weights, vec![0.0; 3]);
    }

    #[test]
    fn single_sample_limit() {
        let m = weighted_ridge_fit(&[vec![1.0, 0.0]], &[1.0], &[1.0], 1e-9, 2, 0.0).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-9 && m.weights[1].abs() < 1e-12);
    }

    #[test]
    fn bonus_analytic() {
        let m = LinearValueModel::from_design(SymMatrix::identity(2), &[0.0, 0.0], 3f64.sqrt(), 1.0).unwrap();
        assert!((m.bonus(&[1.0, 0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn bonus_shrinks_with_data() {
        let psi = vec![0.6, 0.8];
        let a = weighted_ridge_fit(&[vec![1.0, 0.0]], &[0.5], &[1.0], 1.0, 2, 1.0).unwrap();
        let b = weighted_ridge_fit(&[vec![1.0, 0.0], psi.clone()], &[0.5, 0.5], &[1.0, 1.0], 1.0, 2, 1.0).unwrap();
        assert!(b.bonus(&psi) < a.bonus(&psi));
    }

    #[test]
    fn clipping() {
        assert_eq!(value_f1(0.9, 0.3), 1.0);
        assert_eq!(value_f_neg2(0.1, 0.3), 0.0);
        assert_eq!(value_f1(0.4, 0.0), 0.4);
        assert_eq!(value_f2(0.2, 0.1, 0.1), 0.2 + 0.2 + 0.1);
    }

    #[test]
    fn sigma_cases() {
        // negative spread with a tiny width floors at the width term
        let s = sigma_schedule(0.0, 0.5, 1e-3, 1.0, 1.0, 0.0, 1e-6);
        assert!((s * s - 2e-3).abs() < 1e-12);
        assert_eq!(
            sigma_bar_schedule(SigmaMode::Simple, 3.0, 0.1, 1.0, 0.0, 1.0, 5.0, 5.0),
            1.0
        );
        let sb = sigma_bar_schedule(SigmaMode::Full, 0.01, 0.1, 0.5, 0.5, 0.0, 1.0, 1.0);
        assert_eq!(sb, 0.1);
    }

    #[test]
    fn schedule_is_finite_and_ordered() {
        let s = Schedule::new(2000, 5, 6, 5, 6, 0.1);
        for v in [s.beta1(), s.beta2(), s.beta_bar(), s.o(), s.iota(), s.u(1), s.u(100)] {
            assert!(v.is_finite() && v > 0.0);
        }
        assert!(s.u(100) < s.u(1));
        let mut scaled = s.clone();
        scaled.beta_scale = 0.5;
        assert!((scaled.beta1() - 0.5 * s.beta1()).abs() < 1e-12);
    }

    #[test]
    fn stats_match_direct_fit() {
        let mut st = RegressionStats::new(2, 3, 1.0);
        let data = [
            (vec![1.0, 0.0], 0.1, 0usize, 1.0),
            (vec![0.5, 0.5], 0.2, 2, 2.0),
            (vec![0.0, 1.0], 0.0, 1, 0.5),
        ];
        for (p, r, s, sb) in &data {
            st.push(p, *r, *s, *sb);
        }
        let v = [0.3, 0.7, 0.2];
        let feats: Vec<Vec<f64>> = data.iter().map(|d| d.0.clone()).collect();
        let y: Vec<f64> = data.iter().map(|d| d.1 + v[d.2]).collect();
        let w: Vec<f64> = data.iter().map(|d| d.3 * d.3).collect();
        let direct = weighted_ridge_fit(&feats, &y, &w, 1.0, 2, 0.0).unwrap();
        let fast = st.fit_value(&v, 0.0, 1.0).unwrap();
        for i in 0..2 {
            assert!((direct.weights[i] - fast.weights[i]).abs() < 1e-12);
        }
        let y2: Vec<f64> = y.iter().map(|t| t * t).collect();
        let direct = weighted_ridge_fit(&feats, &y2, &w, 1.0, 2, 0.0).unwrap();
        let fast = st.fit_second_moment(&v, 0.0, 1.0).unwrap();
        for i in 0..2 {
            assert!((direct.weights[i] - fast.weights[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn information_gain_cases() {
        assert_eq!(information_gain(&[], 2, 1.0).unwrap(), 0.0);
        let hist: Vec<(Vec<f64>, f64)> = (0..50).map(|_| (vec![1.0, 0.0], 1.0)).collect();
        let mut ig = InformationGain::new(2, 1.0);
        let terms: Vec<f64> = hist.iter().map(|(p, s)| ig.push(p, *s).unwrap()).collect();
        // term k is 1 / (1 + k) for a unit regularizer
        for (k, t) in terms.iter().enumerate() {
            assert!((t - 1.0 / (1.0 + k as f64)).abs() < 1e-12);
        }
    }
}
