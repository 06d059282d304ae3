//! Natural cubic spline interpolation in one and two dimensions.
//!
//! A natural cubic spline on knots x₀ < … < x_{m−1} is a linear function of
//! the knot values, so besides the usual value-based [`SplineCurve`] this
//! module exposes the cardinal basis ([`NaturalSplineBasis`]): B_l is the
//! spline interpolating the l-th unit vector. The tensor-product surface of a
//! covariance matrix is then Σ_lk C_lk B_l(s) B_k(t), with the grid values
//! themselves serving as coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thomas algorithm for a tridiagonal system. `sub[0]` and `sup[n-1]` are unused.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn check_knots(knots: &[f64]) -> Result<()> {
    if knots.len() < 2 {
        return Err(Error::TooFewKnots(knots.len()));
    }
    if knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotoneKnots);
    }
    Ok(())
}

/// Second derivatives at the knots of the natural spline through `values`.
fn natural_second_derivatives(knots: &[f64], values: &[f64]) -> Vec<f64> {
    let m = knots.len();
    let mut second = vec![0.0; m];
    if m < 3 {
        return second;
    }
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let k = m - 2;
    let mut sub = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut sup = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for r in 0..k {
        let i = r + 1;
        sub[r] = h[i - 1];
        diag[r] = 2.0 * (h[i - 1] + h[i]);
        sup[r] = h[i];
        rhs[r] = 6.0 * ((values[i + 1] - values[i]) / h[i] - (values[i] - values[i - 1]) / h[i - 1]);
    }
    let interior = solve_tridiagonal(&sub, &diag, &sup, &rhs);
    second[1..m - 1].copy_from_slice(&interior);
    second
}

/// Locates `t` in the knot vector: returns the interval index and the
/// (possibly nudged) evaluation point. Points within rounding slack of the
/// domain edges are accepted; anything further out is an error.
fn locate(knots: &[f64], t: f64) -> Result<(usize, f64)> {
    let lo = knots[0];
    let hi = *knots.last().unwrap();
    let slack = 1e-10 * (hi - lo).abs().max(1.0);
    if !(t >= lo - slack && t <= hi + slack) {
        return Err(Error::OutOfDomain { t, lo, hi });
    }
    let t = t.clamp(lo, hi);
    let k = match knots.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => i.min(knots.len() - 2),
        Err(i) => i - 1,
    };
    Ok((k, t))
}

/// Natural cubic spline interpolant of (knot, value) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineCurve {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivative at each knot; zero at both ends.
    second: Vec<f64>,
}

/// Fits the natural cubic spline through `(knots[i], values[i])`.
pub fn natural_cubic_fit(knots: &[f64], values: &[f64]) -> Result<SplineCurve> {
    check_knots(knots)?;
    if values.len() != knots.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} knots but {} values",
            knots.len(),
            values.len()
        )));
    }
    Ok(SplineCurve {
        knots: knots.to_vec(),
        values: values.to_vec(),
        second: natural_second_derivatives(knots, values),
    })
}

impl SplineCurve {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    fn piece(&self, t: f64) -> Result<(usize, f64, f64, f64)> {
        let (k, t) = locate(&self.knots, t)?;
        let h = self.knots[k + 1] - self.knots[k];
        let a = (self.knots[k + 1] - t) / h;
        let b = (t - self.knots[k]) / h;
        Ok((k, h, a, b))
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let (k, h, a, b) = self.piece(t)?;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.second[k], self.second[k + 1]);
        Ok(a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0)
    }

    pub fn deriv(&self, t: f64) -> Result<f64> {
        let (k, h, a, b) = self.piece(t)?;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.second[k], self.second[k + 1]);
        Ok((y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0 + (3.0 * b * b - 1.0) / 6.0 * h * m1)
    }

    pub fn deriv2(&self, t: f64) -> Result<f64> {
        let (k, _, a, b) = self.piece(t)?;
        Ok(a * self.second[k] + b * self.second[k + 1])
    }

    /// Evaluates at every point of `grid`.
    pub fn eval_many(&self, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter().map(|&t| self.eval(t)).collect()
    }

    /// ∫_a^b |s'(t)| dt, computed exactly per piece: s' is quadratic on each
    /// knot interval, so the interval is split at the roots of s' and the
    /// antiderivative (the spline itself) is differenced on each sign-constant
    /// segment.
    pub fn abs_deriv_integral(&self, a: f64, b: f64) -> Result<f64> {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        locate(&self.knots, a)?;
        locate(&self.knots, b)?;
        let mut cuts = vec![a];
        for w in self.knots.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            if x1 <= a || x0 >= b {
                continue;
            }
            for r in self.deriv_roots(x0, x1)? {
                if r > a && r < b {
                    cuts.push(r);
                }
            }
            if x1 > a && x1 < b {
                cuts.push(x1);
            }
        }
        cuts.push(b);
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut total = 0.0;
        for w in cuts.windows(2) {
            total += (self.eval(w[1])? - self.eval(w[0])?).abs();
        }
        Ok(total)
    }

    /// Roots of s' strictly inside (x0, x1), a single knot interval.
    fn deriv_roots(&self, x0: f64, x1: f64) -> Result<Vec<f64>> {
        // s' restricted to the interval is a quadratic; recover its coefficients
        // in u = t − x0 from three evaluations.
        let h = x1 - x0;
        let mid = 0.5 * (x0 + x1);
        let p0 = self.deriv(x0 + 1e-12 * h)?;
        let pm = self.deriv(mid)?;
        let p1 = self.deriv(x1 - 1e-12 * h)?;
        let c = p0;
        let qa = 2.0 * (p1 - 2.0 * pm + p0) / (h * h);
        let qb = (4.0 * pm - 3.0 * p0 - p1) / h;
        let mut roots = Vec::new();
        if qa.abs() < 1e-14 * (qb.abs() + c.abs() + 1.0) {
            if qb.abs() > 0.0 {
                roots.push(-c / qb);
            }
        } else {
            let disc = qb * qb - 4.0 * qa * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                let q = -0.5 * (qb + qb.signum() * sq);
                if q != 0.0 {
                    roots.push(q / qa);
                    roots.push(c / q);
                }
            }
        }
        Ok(roots
            .into_iter()
            .filter(|u| *u > 0.0 && *u < h)
            .map(|u| x0 + u)
            .collect())
    }
}

/// Cardinal basis of natural cubic splines on a fixed knot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSplineBasis {
    knots: Vec<f64>,
    /// Column l holds the knot second derivatives of the basis spline B_l.
    second: DMatrix<f64>,
}

impl NaturalSplineBasis {
    pub fn new(knots: &[f64]) -> Result<Self> {
        check_knots(knots)?;
        let m = knots.len();
        let mut second = DMatrix::zeros(m, m);
        let mut unit = vec![0.0; m];
        for l in 0..m {
            unit[l] = 1.0;
            let s = natural_second_derivatives(knots, &unit);
            second.set_column(l, &DVector::from_vec(s));
            unit[l] = 0.0;
        }
        Ok(Self {
            knots: knots.to_vec(),
            second,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    /// Values of B_0..B_{m−1} (order 0), their first (1) or second (2)
    /// derivatives at `t`.
    pub fn weights(&self, t: f64, order: u8) -> Result<DVector<f64>> {
        let (k, t) = locate(&self.knots, t)?;
        let h = self.knots[k + 1] - self.knots[k];
        let a = (self.knots[k + 1] - t) / h;
        let b = (t - self.knots[k]) / h;
        let (lin0, lin1, c0, c1) = match order {
            0 => (a, b, (a * a * a - a) * h * h / 6.0, (b * b * b - b) * h * h / 6.0),
            1 => (
                -1.0 / h,
                1.0 / h,
                -(3.0 * a * a - 1.0) / 6.0 * h,
                (3.0 * b * b - 1.0) / 6.0 * h,
            ),
            2 => (0.0, 0.0, a, b),
            _ => return Err(Error::InvalidArgument(format!("derivative order {order}"))),
        };
        let mut w = DVector::zeros(self.len());
        w[k] += lin0;
        w[k + 1] += lin1;
        w.axpy(c0, &self.second.row(k).transpose(), 1.0);
        w.axpy(c1, &self.second.row(k + 1).transpose(), 1.0);
        Ok(w)
    }

    /// Matrix whose row j is `weights(grid[j], order)`ᵀ.
    pub fn weight_matrix(&self, grid: &[f64], order: u8) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(grid.len(), self.len());
        for (j, &t) in grid.iter().enumerate() {
            out.set_row(j, &self.weights(t, order)?.transpose());
        }
        Ok(out)
    }
}

/// Tensor-product natural cubic spline interpolant of a matrix on a square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CovSurface {
    basis: NaturalSplineBasis,
    /// Coefficients c_lk in the cardinal basis (= the interpolated grid values).
    coef: DMatrix<f64>,
}

/// Fits the tensor-product natural spline through `matrix` on `grid × grid`.
pub fn tensor_fit(grid: &[f64], matrix: &DMatrix<f64>) -> Result<CovSurface> {
    let basis = NaturalSplineBasis::new(grid)?;
    if matrix.nrows() != grid.len() || matrix.ncols() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}, grid has {} points",
            matrix.nrows(),
            matrix.ncols(),
            grid.len()
        )));
    }
    Ok(CovSurface {
        basis,
        coef: matrix.clone(),
    })
}

impl CovSurface {
    pub fn basis(&self) -> &NaturalSplineBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coef
    }

    pub fn domain(&self) -> (f64, f64) {
        self.basis.domain()
    }

    /// ∂^{ds}_s ∂^{dt}_t of the surface at (s, t).
    pub fn eval_deriv(&self, s: f64, t: f64, ds: u8, dt: u8) -> Result<f64> {
        let ws = self.basis.weights(s, ds)?;
        let wt = self.basis.weights(t, dt)?;
        Ok((ws.transpose() * &self.coef * wt)[(0, 0)])
    }

    pub fn surf_eval(&self, s: f64, t: f64) -> Result<f64> {
        self.eval_deriv(s, t, 0, 0)
    }

    /// Diagonal Ĉ̂(t, t).
    pub fn variance(&self, t: f64) -> Result<f64> {
        self.surf_eval(t, t)
    }

    /// Largest diagonal value at the knots.
    pub fn max_knot_variance(&self) -> f64 {
        self.coef.diagonal().iter().cloned().fold(0.0, f64::max)
    }

    /// Default variance floor: 1e−10 × the largest knot variance.
    pub fn default_ridge(&self) -> f64 {
        1e-10 * self.max_knot_variance()
    }
}

/// Roughness τ(t) = (∂²Corr(s,t)/∂s∂t |_{s=t})^{1/2} of the correlation
/// implied by a covariance surface.
///
/// With v(t) = C(t,t), C₁ = ∂_s C and C₁₂ = ∂_s∂_t C at (t,t), the mixed
/// partial of C(s,t)/√(v(s)v(t)) on the diagonal is C₁₂/v − C₁²/v².
pub fn corr_roughness(surface: &CovSurface, t: f64, ridge: f64) -> Result<f64> {
    let w0 = surface.basis.weights(t, 0)?;
    let w1 = surface.basis.weights(t, 1)?;
    let c = &surface.coef;
    let cw0 = c * &w0;
    let v = w0.dot(&cw0);
    if !(v > ridge) {
        return Err(Error::DegenerateVariance {
            t,
            variance: v,
            ridge,
        });
    }
    let c1 = w1.dot(&cw0);
    let c12 = w1.dot(&(c * &w1));
    let radicand = c12 / v - (c1 * c1) / (v * v);
    Ok(radicand.max(0.0).sqrt())
}
