//! Problem data, objective and the relative KKT residual.

use std::ops::Deref;

use ndarray::{Array1, Array2};

use crate::error::{check_shape, OtError, Result};
use crate::numeric::{col_sums, dot, norm, row_sums, sum};

/// Tolerance on `sum(a) = 1` and `sum(b) = 1`.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// One discrete optimal transport problem `min <C, X>` over the
/// transportation polytope `{X >= 0 : X e = a, X^T e = b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OtInstance {
    cost: Array2<f64>,
    a: Array1<f64>,
    b: Array1<f64>,
}

impl OtInstance {
    pub fn new(cost: Array2<f64>, a: Array1<f64>, b: Array1<f64>) -> Result<Self> {
        let (m, n) = cost.dim();
        if m == 0 || n == 0 {
            return Err(OtError::InvalidInstance("empty cost matrix".into()));
        }
        check_shape((m, n), (a.len(), b.len()))?;
        if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(OtError::InvalidInstance(
                "cost entries must be finite and nonnegative".into(),
            ));
        }
        for (name, w) in [("a", &a), ("b", &b)] {
            if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(OtError::InvalidInstance(format!(
                    "marginal {name} must be strictly positive"
                )));
            }
            let mass = sum(w.iter().copied());
            if (mass - 1.0).abs() > MASS_TOLERANCE {
                return Err(OtError::InvalidInstance(format!(
                    "marginal {name} sums to {mass}, expected 1"
                )));
            }
        }
        Ok(Self { cost, a, b })
    }

    pub fn cost(&self) -> &Array2<f64> {
        &self.cost
    }

    pub fn a(&self) -> &Array1<f64> {
        &self.a
    }

    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn dim(&self) -> (usize, usize) {
        self.cost.dim()
    }

    /// The product coupling `a b^T`, the common starting point of every method.
    pub fn product_coupling(&self) -> Array2<f64> {
        let (m, n) = self.dim();
        Array2::from_shape_fn((m, n), |(i, j)| self.a[i] * self.b[j])
    }

    /// `(C^T, b, a)`.
    pub fn transposed(&self) -> Self {
        Self {
            cost: self.cost.t().to_owned(),
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }
}

/// An `m x n` primal iterate. Not necessarily feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan(Array2<f64>);

impl TransportPlan {
    pub fn new(x: Array2<f64>) -> Self {
        Self(x)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

impl Deref for TransportPlan {
    type Target = Array2<f64>;

    fn deref(&self) -> &Array2<f64> {
        &self.0
    }
}

impl From<Array2<f64>> for TransportPlan {
    fn from(x: Array2<f64>) -> Self {
        Self(x)
    }
}

/// Dual multipliers `(f, g)` of the marginal constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPair {
    pub f: Array1<f64>,
    pub g: Array1<f64>,
}

impl DualPair {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            f: Array1::zeros(m),
            g: Array1::zeros(n),
        }
    }

    /// Reduced cost `Z(f, g) = C - f e^T - e g^T`.
    pub fn reduced_cost(&self, cost: &Array2<f64>) -> Array2<f64> {
        let mut z = cost.clone();
        for ((i, j), zij) in z.indexed_iter_mut() {
            *zij -= self.f[i] + self.g[j];
        }
        z
    }
}

/// Relative KKT residual components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub delta_p: f64,
    pub delta_d: f64,
    pub delta_c: f64,
    pub delta_kkt: f64,
}

/// `<C, X>`.
pub fn objective(inst: &OtInstance, x: &Array2<f64>) -> Result<f64> {
    check_shape(inst.dim(), x.dim())?;
    Ok(dot(inst.cost(), x))
}

/// `max(Δ_p, Δ_d, Δ_c)` with Euclidean vector norms and Frobenius matrix norms.
pub fn kkt_residual(inst: &OtInstance, x: &Array2<f64>, duals: &DualPair) -> Result<KktResidual> {
    let (m, n) = inst.dim();
    check_shape((m, n), x.dim())?;
    check_shape((m, n), (duals.f.len(), duals.g.len()))?;

    let row_res = norm(&(row_sums(x) - inst.a()));
    let col_res = norm(&(col_sums(x) - inst.b()));
    let neg_x = norm(&x.mapv(|v| v.min(0.0)));
    let delta_p = (row_res / (1.0 + norm(inst.a())))
        .max(col_res / (1.0 + norm(inst.b())))
        .max(neg_x / (1.0 + norm(x)));

    let z = duals.reduced_cost(inst.cost());
    let scale = 1.0 + norm(inst.cost());
    let delta_d = norm(&z.mapv(|v| v.min(0.0))) / scale;
    let delta_c = dot(x, &z).abs() / scale;

    Ok(KktResidual {
        delta_p,
        delta_d,
        delta_c,
        delta_kkt: delta_p.max(delta_d).max(delta_c),
    })
}

/// `||X e_n - a|| + ||X^T e_m - b||`.
///
/// Panics if the plan shape does not match the instance.
pub fn marginal_residual(inst: &OtInstance, x: &Array2<f64>) -> f64 {
    assert_eq!(inst.dim(), x.dim(), "plan shape does not match instance");
    norm(&(row_sums(x) - inst.a())) + norm(&(col_sums(x) - inst.b()))
}

/// Relative objective gap `|<C, X> - f*| / |f*|`; absolute gap when `f* = 0`.
pub fn normalized_gap(value: f64, reference: f64) -> f64 {
    let gap = (value - reference).abs();
    if reference == 0.0 {
        gap
    } else {
        gap / reference.abs()
    }
}

/// One outer iteration of a solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub outer_iter: usize,
    pub cum_inner_iters: usize,
    /// `<C, G(x^{k+1})>` on the rounded plan.
    pub objective: f64,
    /// Normalized gap against a supplied reference value, when there is one.
    pub nfval: Option<f64>,
    pub kkt: f64,
    pub theta: Option<f64>,
    pub gamma: f64,
    pub wall_time_s: f64,
}

/// Per-iteration record of a solver run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    rows: Vec<TraceRow>,
}

impl SolveTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row. Outer indices must strictly increase and inner counts
    /// must not decrease.
    pub fn push(&mut self, row: TraceRow) {
        if let Some(last) = self.rows.last() {
            assert!(row.outer_iter > last.outer_iter, "outer_iter must increase");
            assert!(
                row.cum_inner_iters >= last.cum_inner_iters,
                "cum_inner_iters must not decrease"
            );
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}
