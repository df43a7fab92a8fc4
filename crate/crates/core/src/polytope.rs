//! The marginal operator `A(X) = [X e_n; X^T e_m]`, its adjoint, and the
//! rounding map onto the transportation polytope.

use ndarray::{s, Array1, Array2, ArrayView1};

use crate::error::{check_shape, OtError, Result};
use crate::numeric::{col_sums, norm1, row_sums, sum};
use crate::problem::TransportPlan;

/// Below this the deficit correction is skipped.
const DEFICIT_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarginalOperator {
    pub m: usize,
    pub n: usize,
}

impl MarginalOperator {
    pub fn new(m: usize, n: usize) -> Self {
        Self { m, n }
    }

    /// `[X e_n; X^T e_m]`.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        check_shape((self.m, self.n), x.dim())?;
        let mut out = Array1::zeros(self.m + self.n);
        out.slice_mut(s![..self.m]).assign(&row_sums(x));
        out.slice_mut(s![self.m..]).assign(&col_sums(x));
        Ok(out)
    }

    /// `y_f e_n^T + e_m y_g^T`.
    pub fn adjoint(&self, y: &Array1<f64>) -> Result<Array2<f64>> {
        if y.len() != self.m + self.n {
            return Err(OtError::DimensionMismatch {
                expected: (self.m + self.n, 1),
                found: (y.len(), 1),
            });
        }
        let (yf, yg) = self.split(y.view());
        Ok(Array2::from_shape_fn((self.m, self.n), |(i, j)| yf[i] + yg[j]))
    }

    pub fn split<'a>(&self, y: ArrayView1<'a, f64>) -> (ArrayView1<'a, f64>, ArrayView1<'a, f64>) {
        y.split_at(ndarray::Axis(0), self.m)
    }

    /// Unit vector spanning the kernel of the adjoint, `[e_m; -e_n] / sqrt(m+n)`.
    pub fn null_vector(&self) -> Array1<f64> {
        let scale = 1.0 / ((self.m + self.n) as f64).sqrt();
        Array1::from_shape_fn(self.m + self.n, |k| if k < self.m { scale } else { -scale })
    }

    /// Removes the component of `y` along [`Self::null_vector`], placing it in `Ran(A)`.
    pub fn project_range(&self, y: &mut Array1<f64>) {
        let nv = self.null_vector();
        let along = sum(y.iter().zip(nv.iter()).map(|(a, b)| a * b));
        y.scaled_add(-along, &nv);
    }
}

/// Rounds a nonnegative matrix onto `{X >= 0 : X e = a, X^T e = b}`.
///
/// Rows are scaled down to at most `a`, then columns to at most `b`, and the
/// remaining deficits are filled by the rank-one term `err_a err_b^T / ‖err_a‖₁`.
/// A plan whose marginals already match to `1e-15` is returned unchanged.
pub fn round_to_polytope(x: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> Result<TransportPlan> {
    let (m, n) = x.dim();
    check_shape((m, n), (a.len(), b.len()))?;
    if x.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(OtError::Domain("rounding needs a finite nonnegative matrix".into()));
    }

    let r = row_sums(x);
    let c = col_sums(x);
    let already = r.iter().zip(a.iter()).all(|(ri, ai)| (ri - ai).abs() <= DEFICIT_EPS)
        && c.iter().zip(b.iter()).all(|(cj, bj)| (cj - bj).abs() <= DEFICIT_EPS);
    if already {
        return Ok(TransportPlan::new(x.clone()));
    }

    let mut out = x.clone();
    for (mut row, (&ri, &ai)) in out.rows_mut().into_iter().zip(r.iter().zip(a.iter())) {
        if ri > ai {
            let f = ai / ri;
            row.mapv_inplace(|v| v * f);
        }
    }
    let c = col_sums(&out);
    for (mut col, (&cj, &bj)) in out.columns_mut().into_iter().zip(c.iter().zip(b.iter())) {
        if cj > bj {
            let f = bj / cj;
            col.mapv_inplace(|v| v * f);
        }
    }

    let err_a = (a - &row_sums(&out)).mapv(|v| v.max(0.0));
    let err_b = (b - &col_sums(&out)).mapv(|v| v.max(0.0));
    let mass = norm1(&err_a);
    if mass > DEFICIT_EPS || norm1(&err_b) > DEFICIT_EPS {
        for ((i, j), v) in out.indexed_iter_mut() {
            *v += err_a[i] * err_b[j] / mass;
        }
    }
    Ok(TransportPlan::new(out))
}
