//! Size-capped assortment optimization under MNL choice.
//!
//! The objective of an offered set `S` is
//! `(w0 f0 + sum_{a in S} w_a f_a) / (w0 + sum_{a in S} w_a)`,
//! with `1 <= |S| <= max_items`. Item indices are 0-based positions in
//! [`AssortmentInstance::weights`].

use crate::numerics::{self, NumericsError};
use thiserror::Error;

/// Largest ground set [`solve_bruteforce`] accepts.
pub const BRUTEFORCE_MAX_ITEMS: usize = 20;
/// Largest ground set [`solve_charnes_cooper`] accepts.
pub const LP_MAX_ITEMS: usize = 64;
/// Value ties closer than this keep the lexicographically earlier set.
pub const TIE_TOL: f64 = 1e-12;
pub const BISECTION_TOL: f64 = 1e-10;
/// LP variables above this are read as selected items.
pub const LP_SELECT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssortError {
    #[error("{n} items exceed the limit of {limit}")]
    TooManyItems { n: usize, limit: usize },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("linear program is infeasible")]
    Infeasible,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssortmentInstance {
    pub outside_weight: f64,
    pub outside_value: f64,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    /// Largest number of non-outside items that may be offered.
    pub max_items: usize,
}

impl AssortmentInstance {
    pub fn new(
        outside_weight: f64,
        outside_value: f64,
        weights: Vec<f64>,
        values: Vec<f64>,
        max_items: usize,
    ) -> Result<Self, AssortError> {
        let inst = Self {
            outside_weight,
            outside_value,
            weights,
            values,
            max_items,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), AssortError> {
        let bad = |m: &str| Err(AssortError::InvalidInstance(m.to_string()));
        if self.weights.len() != self.values.len() {
            return bad("weights and values differ in length");
        }
        if self.weights.is_empty() {
            return bad("no items");
        }
        if self.max_items == 0 {
            return bad("max_items must be at least 1");
        }
        let ok_w = |w: f64| w.is_finite() && w > 0.0;
        if !ok_w(self.outside_weight) || !self.weights.iter().all(|&w| ok_w(w)) {
            return bad("weights must be positive and finite");
        }
        if !self.outside_value.is_finite() || !self.values.iter().all(|v| v.is_finite()) {
            return bad("values must be finite");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn cap(&self) -> usize {
        self.max_items.min(self.len())
    }

    /// Objective value of offering `set`.
    pub fn objective(&self, set: &[usize]) -> f64 {
        let mut num = self.outside_weight * self.outside_value;
        let mut den = self.outside_weight;
        for &a in set {
            num += self.weights[a] * self.values[a];
            den += self.weights[a];
        }
        num / den
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssortmentSolution {
    /// Sorted item indices.
    pub chosen: Vec<usize>,
    pub value: f64,
}

impl AssortmentSolution {
    fn from_set(inst: &AssortmentInstance, mut chosen: Vec<usize>) -> Self {
        chosen.sort_unstable();
        let value = inst.objective(&chosen);
        Self { chosen, value }
    }
}

/// Exact optimum by enumerating every admissible set in lexicographic order.
pub fn solve_bruteforce(inst: &AssortmentInstance) -> Result<AssortmentSolution, AssortError> {
    inst.validate()?;
    if inst.len() > BRUTEFORCE_MAX_ITEMS {
        return Err(AssortError::TooManyItems {
            n: inst.len(),
            limit: BRUTEFORCE_MAX_ITEMS,
        });
    }
    struct Search<'a> {
        inst: &'a AssortmentInstance,
        cap: usize,
        stack: Vec<usize>,
        best: Vec<usize>,
        best_value: f64,
    }
    impl Search<'_> {
        fn visit(&mut self, start: usize, num: f64, den: f64) {
            for a in start..self.inst.len() {
                let n = num + self.inst.weights[a] * self.inst.values[a];
                let d = den + self.inst.weights[a];
                self.stack.push(a);
                let v = n / d;
                if v > self.best_value + TIE_TOL {
                    self.best_value = v;
                    self.best.clone_from(&self.stack);
                }
                if self.stack.len() < self.cap {
                    self.visit(a + 1, n, d);
                }
                self.stack.pop();
            }
        }
    }
    let mut search = Search {
        inst,
        cap: inst.cap(),
        stack: Vec::new(),
        best: Vec::new(),
        best_value: f64::NEG_INFINITY,
    };
    search.visit(0, inst.outside_weight * inst.outside_value, inst.outside_weight);
    Ok(AssortmentSolution::from_set(inst, search.best))
}

/// Reusable buffers for [`solve_parametric_in`].
#[derive(Debug, Clone, Default)]
pub struct ParametricWorkspace {
    top: Vec<(f64, usize)>,
    set: Vec<usize>,
    next: Vec<usize>,
}

impl ParametricWorkspace {
    /// Sorted optimal set from the last solve.
    pub fn chosen(&self) -> &[usize] {
        &self.set
    }
}

/// Best admissible set for the parametric problem `max_S sum_{a in S} w_a (f_a - t)`.
///
/// Takes the top `max_items` positive scores, and always at least the single
/// best item. Writes the set into `set` and returns its parametric score.
fn parametric_set(inst: &AssortmentInstance, t: f64, top: &mut Vec<(f64, usize)>, set: &mut Vec<usize>) -> f64 {
    // Linear top-k scan; ties keep the smaller index first.
    let cap = inst.cap();
    top.clear();
    for a in 0..inst.len() {
        let s = inst.weights[a] * (inst.values[a] - t);
        if top.len() == cap && s <= top[cap - 1].0 {
            continue;
        }
        let pos = top.iter().position(|&(q, _)| s > q).unwrap_or(top.len());
        top.insert(pos, (s, a));
        top.truncate(cap);
    }
    set.clear();
    let mut total = 0.0;
    for (rank, &(s, a)) in top.iter().enumerate() {
        if rank > 0 && s <= 0.0 {
            break;
        }
        set.push(a);
        total += s;
    }
    total
}

/// `g(t) = w0 (f0 - t) + max_S sum_{a in S} w_a (f_a - t)`; nonincreasing, root at the optimum.
pub fn parametric_gap(inst: &AssortmentInstance, t: f64) -> f64 {
    let (mut top, mut set) = (Vec::new(), Vec::new());
    inst.outside_weight * (inst.outside_value - t) + parametric_set(inst, t, &mut top, &mut set)
}

/// Dinkelbach iterations from the set in `ws` until the parametric set stops improving.
fn polish(inst: &AssortmentInstance, ws: &mut ParametricWorkspace) {
    let mut value = inst.objective(&ws.set);
    for _ in 0..inst.len() + 2 {
        parametric_set(inst, value, &mut ws.top, &mut ws.next);
        let next_value = inst.objective(&ws.next);
        if next_value > value + TIE_TOL {
            std::mem::swap(&mut ws.set, &mut ws.next);
            value = next_value;
        } else {
            break;
        }
    }
}

/// Bisection on the parametric gap, followed by a Dinkelbach polish.
pub fn solve_bisection(inst: &AssortmentInstance) -> Result<AssortmentSolution, AssortError> {
    inst.validate()?;
    let lo = inst.values.iter().copied().fold(inst.outside_value, f64::min);
    let hi = inst.values.iter().copied().fold(inst.outside_value, f64::max);
    let t = if hi - lo <= BISECTION_TOL {
        lo
    } else {
        numerics::bisect(|t| parametric_gap(inst, t), lo, hi, BISECTION_TOL)?
    };
    let mut ws = ParametricWorkspace::default();
    parametric_set(inst, t, &mut ws.top, &mut ws.set);
    polish(inst, &mut ws);
    Ok(AssortmentSolution::from_set(inst, ws.set))
}

/// Dinkelbach's method from `t = min value`; a handful of sorts in practice.
pub fn solve_parametric(inst: &AssortmentInstance) -> AssortmentSolution {
    let t0 = inst.values.iter().copied().fold(inst.outside_value, f64::min);
    solve_parametric_from(inst, t0)
}

/// Dinkelbach iterations started from the parametric set at `t_start`.
///
/// Any finite start converges to the optimum; a start near the optimal
/// value usually needs only two scans.
pub fn solve_parametric_from(inst: &AssortmentInstance, t_start: f64) -> AssortmentSolution {
    let mut ws = ParametricWorkspace::default();
    let value = solve_parametric_in(inst, t_start, &mut ws);
    AssortmentSolution { chosen: ws.set, value }
}

/// [`solve_parametric_from`] without allocating once `ws` has grown; the
/// set is left in [`ParametricWorkspace::chosen`] and its value returned.
pub fn solve_parametric_in(inst: &AssortmentInstance, t_start: f64, ws: &mut ParametricWorkspace) -> f64 {
    parametric_set(inst, t_start, &mut ws.top, &mut ws.set);
    polish(inst, ws);
    ws.set.sort_unstable();
    inst.objective(&ws.set)
}

/// Charnes–Cooper linear program solved by a dense simplex.
///
/// Variables are `y_a = x_a / D` and `t = 1 / D`, where `D` is the choice
/// denominator. Maximizes `sum w_a f_a y_a + w0 f0 t` subject to
/// `sum w_a y_a + w0 t = 1`, `sum y_a <= max_items t`, `sum y_a >= t` and
/// `y_a <= t`.
pub fn solve_charnes_cooper(inst: &AssortmentInstance) -> Result<AssortmentSolution, AssortError> {
    inst.validate()?;
    let n = inst.len();
    if n > LP_MAX_ITEMS {
        return Err(AssortError::TooManyItems { n, limit: LP_MAX_ITEMS });
    }
    let nv = n + 1;
    let t_idx = n;
    let mut c = vec![0.0; nv];
    for a in 0..n {
        c[a] = inst.weights[a] * inst.values[a];
    }
    c[t_idx] = inst.outside_weight * inst.outside_value;

    let mut rows = Vec::with_capacity(n + 3);
    let mut norm = inst.weights.clone();
    norm.push(inst.outside_weight);
    rows.push(Row::eq(norm, 1.0));
    let mut size = vec![1.0; nv];
    size[t_idx] = -(inst.cap() as f64);
    rows.push(Row::le(size, 0.0));
    let mut nonempty = vec![-1.0; nv];
    nonempty[t_idx] = 1.0;
    rows.push(Row::le(nonempty, 0.0));
    for a in 0..n {
        let mut r = vec![0.0; nv];
        r[a] = 1.0;
        r[t_idx] = -1.0;
        rows.push(Row::le(r, 0.0));
    }
    let x = simplex::maximize(&c, &rows)?;
    let chosen: Vec<usize> = (0..n).filter(|&a| x[a] > LP_SELECT_TOL).collect();
    if chosen.is_empty() {
        return Err(AssortError::Infeasible);
    }
    Ok(AssortmentSolution::from_set(inst, chosen))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Sense {
    Le,
    Eq,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<f64>,
    sense: Sense,
    rhs: f64,
}

impl Row {
    fn le(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self {
            coeffs,
            sense: Sense::Le,
            rhs,
        }
    }
    fn eq(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self {
            coeffs,
            sense: Sense::Eq,
            rhs,
        }
    }
}

/// Dense two-phase tableau simplex with Bland's rule. Requires `rhs >= 0`.
mod simplex {
    use super::{AssortError, Row, Sense};

    const EPS: f64 = 1e-12;

    struct Tableau {
        // rows of [coeffs | rhs]; last row is the objective (reduced costs)
        a: Vec<Vec<f64>>,
        basis: Vec<usize>,
        cols: usize,
    }

    impl Tableau {
        fn pivot(&mut self, r: usize, c: usize) {
            let p = self.a[r][c];
            for v in self.a[r].iter_mut() {
                *v /= p;
            }
            let pivot_row = self.a[r].clone();
            for (i, row) in self.a.iter_mut().enumerate() {
                if i == r {
                    continue;
                }
                let f = row[c];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
            self.basis[r] = c;
        }

        /// Runs to optimality over columns `< allowed`; objective row holds
        /// `z - c` so a negative entry means the column improves.
        fn run(&mut self, allowed: usize) -> Result<(), AssortError> {
            let m = self.basis.len();
            let rhs = self.cols;
            loop {
                let obj = &self.a[m];
                let Some(enter) = (0..allowed).find(|&j| obj[j] < -EPS) else {
                    return Ok(());
                };
                let mut leave: Option<(usize, f64)> = None;
                for i in 0..m {
                    let aij = self.a[i][enter];
                    if aij > EPS {
                        let ratio = self.a[i][rhs] / aij;
                        leave = match leave {
                            None => Some((i, ratio)),
                            Some((li, lr)) => {
                                if ratio < lr - EPS || (ratio <= lr + EPS && self.basis[i] < self.basis[li]) {
                                    Some((i, ratio))
                                } else {
                                    Some((li, lr))
                                }
                            }
                        };
                    }
                }
                let Some((r, _)) = leave else {
                    return Err(AssortError::Unbounded);
                };
                self.pivot(r, enter);
            }
        }
    }

    pub(super) fn maximize(c: &[f64], rows: &[Row]) -> Result<Vec<f64>, AssortError> {
        let nv = c.len();
        let m = rows.len();
        let n_slack = rows.iter().filter(|r| r.sense == Sense::Le).count();
        let n_art = m - n_slack;
        let cols = nv + n_slack + n_art;
        let mut a = vec![vec![0.0; cols + 1]; m + 1];
        let mut basis = vec![0; m];
        let (mut s, mut t) = (nv, nv + n_slack);
        for (i, row) in rows.iter().enumerate() {
            debug_assert!(row.rhs >= 0.0);
            a[i][..nv].copy_from_slice(&row.coeffs);
            a[i][cols] = row.rhs;
            match row.sense {
                Sense::Le => {
                    a[i][s] = 1.0;
                    basis[i] = s;
                    s += 1;
                }
                Sense::Eq => {
                    a[i][t] = 1.0;
                    basis[i] = t;
                    t += 1;
                }
            }
        }
        let mut tab = Tableau { a, basis, cols };

        if n_art > 0 {
            // phase 1: maximize -sum(artificials)
            for j in nv + n_slack..cols {
                tab.a[m][j] = 1.0;
            }
            for i in 0..m {
                if tab.basis[i] >= nv + n_slack {
                    for j in 0..=cols {
                        tab.a[m][j] -= tab.a[i][j];
                    }
                }
            }
            tab.run(cols)?;
            if tab.a[m][cols].abs() > 1e-9 {
                return Err(AssortError::Infeasible);
            }
            // drive remaining artificials out of the basis
            for i in 0..m {
                if tab.basis[i] >= nv + n_slack {
                    if let Some(j) = (0..nv + n_slack).find(|&j| tab.a[i][j].abs() > EPS) {
                        tab.pivot(i, j);
                    }
                }
            }
        }

        // phase 2
        for v in tab.a[m].iter_mut() {
            *v = 0.0;
        }
        for (j, &cj) in c.iter().enumerate() {
            tab.a[m][j] = -cj;
        }
        for i in 0..m {
            let b = tab.basis[i];
            let cb = if b < nv { c[b] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..=cols {
                    tab.a[m][j] += cb * tab.a[i][j];
                }
            }
        }
        tab.run(nv + n_slack)?;
        let mut x = vec![0.0; nv];
        for i in 0..m {
            if tab.basis[i] < nv {
                x[tab.basis[i]] = tab.a[i][cols];
            }
        }
        Ok(x)
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        #[test]
        fn textbook_lp() {
            // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
            let rows = vec![
                Row::le(vec![1.0, 0.0], 4.0),
                Row::le(vec![0.0, 2.0], 12.0),
                Row::le(vec![3.0, 2.0], 18.0),
            ];
            let x = maximize(&[3.0, 5.0], &rows).unwrap();
            assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
        }

        #[test]
        fn equality_and_unbounded() {
            let rows = vec![Row::eq(vec![1.0, 1.0], 1.0)];
            let x = maximize(&[1.0, 2.0], &rows).unwrap();
            assert!((x[1] - 1.0).abs() < 1e-12);
            let rows = vec![Row::le(vec![1.0, -1.0], 1.0)];
            assert_eq!(maximize(&[0.0, 1.0], &rows), Err(AssortError::Unbounded));
        }
    }
}
