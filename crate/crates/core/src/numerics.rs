//! Dense symmetric linear algebra and scalar root finding.
//!
//! Every matrix in this crate is small (dimension well below 100), so
//! matrices are stored densely and refactored on each use.

use thiserror::Error;

/// Relative symmetry tolerance accepted by [`SymMatrix::from_rows`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Target accuracy of the ball projection: `| ||theta|| - radius | <= PROJECTION_TOL`.
pub const PROJECTION_TOL: f64 = 1e-9;
/// Iteration cap for the projection multiplier search.
pub const PROJECTION_MAX_ITER: usize = 200;
/// Iteration cap for [`bisect`].
pub const BISECT_MAX_ITER: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("bracket [{lo}, {hi}] does not contain a sign change")]
    BadBracket { lo: f64, hi: f64 },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Square symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = scale;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from rows, checking squareness and symmetry.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(NumericsError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        let m = Self { dim, data };
        for i in 0..dim {
            for j in (i + 1)..dim {
                let (a, b) = (m.get(i, j), m.get(j, i));
                let scale = a.abs().max(b.abs()).max(1.0);
                if (a - b).abs() > SYMMETRY_TOL * scale {
                    return Err(NumericsError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `self += scale * x x^T`.
    pub fn add_outer(&mut self, x: &[f64], scale: f64) {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.dim;
        for i in 0..n {
            let xi = scale * x[i];
            if xi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * n..(i + 1) * n];
            for (r, &xj) in row.iter_mut().zip(x) {
                *r += xi * xj;
            }
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &SymMatrix, scale: f64) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += value;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n).map(|i| dot(&self.data[i * n..(i + 1) * n], x)).collect()
    }

    /// `x^T self y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(&self.mul_vec(y), x)
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::factor(self)
    }
}

/// Lower-triangular Cholesky factor `m = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(m: &SymMatrix) -> Result<Self> {
        let n = m.dim;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = m.get(j, j);
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(NumericsError::NotPositiveDefinite { pivot: j, value: diag });
            }
            let ljj = diag.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(Self { dim: n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `L y = b` in place.
    fn forward(&self, y: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
    }

    /// Solves `L^T x = y` in place.
    fn backward(&self, x: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.lower[k * n + i] * x[k];
            }
            x[i] = s / self.lower[i * n + i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, b.len())?;
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        Ok(x)
    }

    /// `x^T m^{-1} x`, computed as `||L^{-1} x||^2`.
    pub fn inv_quad(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.dim;
        let mut acc = 0.0;
        // Forward substitution without allocating for the common small case.
        let mut buf = [0.0f64; 32];
        let mut heap;
        let y: &mut [f64] = if n <= 32 {
            &mut buf[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap[..]
        };
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * y[k];
            }
            let v = s / self.lower[i * n + i];
            y[i] = v;
            acc += v * v;
        }
        acc
    }

    pub fn inverse_norm(&self, x: &[f64]) -> f64 {
        self.inv_quad(x).max(0.0).sqrt()
    }
}

impl Cholesky {
    /// Explicit `L^{-1}`, for many inverse norms against one factor.
    pub fn whitener(&self) -> Whitener {
        let n = self.dim;
        let mut inv = vec![0.0; n * n];
        for j in 0..n {
            inv[j * n + j] = 1.0 / self.lower[j * n + j];
            for i in j + 1..n {
                let mut s = 0.0;
                for k in j..i {
                    s -= self.lower[i * n + k] * inv[k * n + j];
                }
                inv[i * n + j] = s / self.lower[i * n + i];
            }
        }
        Whitener { dim: n, inv }
    }
}

/// Lower-triangular `L^{-1}` of a Cholesky factor.
#[derive(Debug, Clone)]
pub struct Whitener {
    dim: usize,
    inv: Vec<f64>,
}

impl Whitener {
    /// `x^T m^{-1} x`; rows of `L^{-1}` are independent dot products.
    pub fn inv_quad(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match self.dim {
            2 => tri_quad::<2>(&self.inv, x),
            3 => tri_quad::<3>(&self.inv, x),
            4 => tri_quad::<4>(&self.inv, x),
            5 => tri_quad::<5>(&self.inv, x),
            6 => tri_quad::<6>(&self.inv, x),
            7 => tri_quad::<7>(&self.inv, x),
            8 => tri_quad::<8>(&self.inv, x),
            n => {
                let mut acc = 0.0;
                for i in 0..n {
                    let y = dot(&self.inv[i * n..i * n + i + 1], &x[..=i]);
                    acc += y * y;
                }
                acc
            }
        }
    }

    pub fn inverse_norm(&self, x: &[f64]) -> f64 {
        self.inv_quad(x).max(0.0).sqrt()
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(NumericsError::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// `||L^{-1} x||^2` with the dimension fixed at compile time, so the
/// triangular loops unroll.
#[inline]
fn tri_quad<const N: usize>(inv: &[f64], x: &[f64]) -> f64 {
    let inv = &inv[..N * N];
    let x = &x[..N];
    let mut acc = 0.0;
    for i in 0..N {
        let mut y = 0.0;
        for j in 0..=i {
            y += inv[i * N + j] * x[j];
        }
        acc += y * y;
    }
    acc
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    match a.len().min(b.len()) {
        5 => dot_fixed::<5>(a, b),
        6 => dot_fixed::<6>(a, b),
        8 => dot_fixed::<8>(a, b),
        _ => a.iter().zip(b).map(|(x, y)| x * y).sum(),
    }
}

#[inline]
fn dot_fixed<const N: usize>(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (&a[..N], &b[..N]);
    let mut acc = 0.0;
    for i in 0..N {
        acc += a[i] * b[i];
    }
    acc
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn cholesky_solve(m: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_dim(m.dim(), b.len())?;
    m.cholesky()?.solve(b)
}

/// `sqrt(x^T m x)`; fails when `m` is not positive definite.
pub fn metric_norm(m: &SymMatrix, x: &[f64]) -> Result<f64> {
    check_dim(m.dim(), x.len())?;
    m.cholesky()?;
    Ok(m.quad_form(x).max(0.0).sqrt())
}

/// `sqrt(x^T m^{-1} x)`.
pub fn inverse_metric_norm(m: &SymMatrix, x: &[f64]) -> Result<f64> {
    check_dim(m.dim(), x.len())?;
    Ok(m.cholesky()?.inverse_norm(x))
}

/// Projects `center` onto the Euclidean ball of `radius`, measuring distance
/// in the `metric` norm.
///
/// Outside the ball the minimizer is `(metric + mu I)^{-1} metric center` for
/// the multiplier `mu >= 0` that puts it on the sphere; `mu` is found by
/// bisection.
pub fn project_to_ball_in_metric(center: &[f64], metric: &SymMatrix, radius: f64) -> Result<Vec<f64>> {
    check_dim(metric.dim(), center.len())?;
    if norm2(center) <= radius {
        return Ok(center.to_vec());
    }
    let target = metric.mul_vec(center);
    let point = |mu: f64| -> Result<Vec<f64>> {
        let mut shifted = metric.clone();
        shifted.add_diagonal(mu);
        cholesky_solve(&shifted, &target)
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut hi_point = point(hi)?;
    let mut iterations = 0;
    while norm2(&hi_point) > radius {
        lo = hi;
        hi *= 2.0;
        hi_point = point(hi)?;
        iterations += 1;
        if iterations > PROJECTION_MAX_ITER {
            return Err(NumericsError::NoConvergence { iterations });
        }
    }
    // `hi_point` is always feasible; shrink the bracket until it is on the sphere.
    for _ in 0..PROJECTION_MAX_ITER {
        if radius - norm2(&hi_point) <= PROJECTION_TOL {
            return Ok(hi_point);
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(hi_point);
        }
        let p = point(mid)?;
        if norm2(&p) > radius {
            lo = mid;
        } else {
            hi = mid;
            hi_point = p;
        }
    }
    Err(NumericsError::NoConvergence {
        iterations: PROJECTION_MAX_ITER,
    })
}

/// Finds a sign change of a monotone `f` inside `[lo, hi]`.
///
/// Returns the midpoint of a bracket of width at most `tol` that contains the
/// crossing. An endpoint with `f == 0` is returned immediately.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(NumericsError::BadBracket { lo, hi });
    }
    let lo_sign = f_lo.signum();
    for _ in 0..BISECT_MAX_ITER {
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(NumericsError::NoConvergence {
        iterations: BISECT_MAX_ITER,
    })
}
