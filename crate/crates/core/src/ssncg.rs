//! Semismooth Newton-CG for the Euclidean projection of `G = S - C/γ` onto the
//! transportation polytope, through its dual
//!
//! ```text
//! min_y Ψ(y) = ½‖Π₊(A*(y) + G)‖² - <y, c> - ½‖G‖²,   y ∈ Ran(A),
//! ```
//!
//! where `c = [a; b]`. The primal candidate is `X(y) = Π₊(A*(y) + G)` and
//! `∇Ψ(y) = A(X(y)) - c` is exactly its marginal residual.

use ndarray::{s, Array1, Array2, Zip};

use crate::error::{check_shape, OtError, Result};
use crate::numeric::{dot, norm, sum, Accumulator};
use crate::polytope::MarginalOperator;
use crate::problem::{DualPair, OtInstance};

/// Default Newton iteration cap per solve.
pub const DEFAULT_MAX_NEWTON: usize = 1000;

#[derive(Debug, Clone)]
pub struct DualProjectionProblem {
    g: Array2<f64>,
    c: Array1<f64>,
    gamma: f64,
    op: MarginalOperator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsncgOptions {
    pub max_newton: usize,
    pub armijo_slope: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for SsncgOptions {
    fn default() -> Self {
        Self {
            max_newton: DEFAULT_MAX_NEWTON,
            armijo_slope: 1e-4,
            backtrack: 0.5,
            max_backtracks: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SsncgSolution {
    /// `Π₊(A*(y) + G)`.
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// Newton steps taken.
    pub iterations: usize,
    pub grad_norm: f64,
    /// The stop rule did not fire before the iteration cap (or the line search stalled).
    pub truncated: bool,
}

/// A search direction and how it was obtained.
#[derive(Debug, Clone)]
pub struct NewtonDirection {
    pub d: Array1<f64>,
    pub cg_iterations: usize,
    /// CG broke down or produced a non-descent direction; `d = -∇Ψ`.
    pub steepest_descent: bool,
}

impl DualProjectionProblem {
    /// Projection subproblem of the quadratic prox step at center `S`.
    pub fn new(inst: &OtInstance, s: &Array2<f64>, gamma: f64) -> Result<Self> {
        check_shape(inst.dim(), s.dim())?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(OtError::InvalidConfig(format!("gamma must be positive, got {gamma}")));
        }
        let mut g = s.clone();
        Zip::from(&mut g).and(inst.cost()).for_each(|gij, &c| *gij -= c / gamma);
        Self::from_parts(g, inst.a(), inst.b(), gamma)
    }

    /// Projection of an arbitrary `G` onto `{X >= 0 : X e = a, X^T e = b}`.
    pub fn from_parts(g: Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, gamma: f64) -> Result<Self> {
        let (m, n) = g.dim();
        check_shape((m, n), (a.len(), b.len()))?;
        let mut c = Array1::zeros(m + n);
        c.slice_mut(s![..m]).assign(a);
        c.slice_mut(s![m..]).assign(b);
        Ok(Self {
            g,
            c,
            gamma,
            op: MarginalOperator::new(m, n),
        })
    }

    pub fn g(&self) -> &Array2<f64> {
        &self.g
    }

    pub fn c(&self) -> &Array1<f64> {
        &self.c
    }

    pub fn operator(&self) -> MarginalOperator {
        self.op
    }

    fn shifted(&self, y: &Array1<f64>) -> Array2<f64> {
        let (yf, yg) = self.op.split(y.view());
        let mut w = self.g.clone();
        for ((i, j), v) in w.indexed_iter_mut() {
            *v += yf[i] + yg[j];
        }
        w
    }

    /// `A*(y) + G`.
    pub fn shifted_point(&self, y: &Array1<f64>) -> Array2<f64> {
        self.shifted(y)
    }

    /// `X(y) = Π₊(A*(y) + G)`.
    pub fn primal(&self, y: &Array1<f64>) -> Array2<f64> {
        self.shifted(y).mapv(|v| v.max(0.0))
    }

    fn grad_from_primal(&self, x: &Array2<f64>) -> Array1<f64> {
        let mut grad = self.op.apply(x).expect("shape checked at construction");
        grad -= &self.c;
        grad
    }

    /// `(Ψ(y), ∇Ψ(y))`.
    pub fn psi_and_grad(&self, y: &Array1<f64>) -> (f64, Array1<f64>) {
        let x = self.primal(y);
        let psi = 0.5 * sum(x.iter().map(|v| v * v)) - dot(y, &self.c) - 0.5 * sum(self.g.iter().map(|v| v * v));
        (psi, self.grad_from_primal(&x))
    }

    /// OT multipliers recovered from the dual iterate: `(f, g) = γ (y_f, y_g)`.
    pub fn duals(&self, y: &Array1<f64>) -> DualPair {
        let (yf, yg) = self.op.split(y.view());
        DualPair {
            f: yf.mapv(|v| self.gamma * v),
            g: yg.mapv(|v| self.gamma * v),
        }
    }

    /// `Ψ(y + t d) - Ψ(y)`, evaluated from elementwise differences so that
    /// decreases far below `ulp(Ψ)` are still resolved.
    fn psi_change(&self, w: &Array2<f64>, x: &Array2<f64>, grad: &Array1<f64>, d: &Array1<f64>, t: f64) -> f64 {
        let (df, dg) = self.op.split(d.view());
        let mut acc = Accumulator::default();
        for ((i, j), &wij) in w.indexed_iter() {
            let e = t * (df[i] + dg[j]);
            let p = x[[i, j]];
            let delta = (wij + e).max(0.0) - p;
            acc.add(p * (delta - e) + 0.5 * delta * delta);
        }
        t * dot(grad, d) + acc.value()
    }

    /// `H d = A(σ ⊙ A*(d)) + ε d` on `Ran(A)`, `σ` the positive mask of `w`.
    fn hessian_apply(&self, mask: &Array2<f64>, d: &Array1<f64>, eps: f64) -> Array1<f64> {
        let (m, n) = self.g.dim();
        let (df, dg) = self.op.split(d.view());
        let mut rows = vec![Accumulator::default(); m];
        let mut cols = vec![Accumulator::default(); n];
        for ((i, j), &s) in mask.indexed_iter() {
            if s > 0.0 {
                let v = df[i] + dg[j];
                rows[i].add(v);
                cols[j].add(v);
            }
        }
        let mut out = Array1::zeros(m + n);
        for (i, r) in rows.iter().enumerate() {
            out[i] = r.value();
        }
        for (j, c) in cols.iter().enumerate() {
            out[m + j] = c.value();
        }
        out.scaled_add(eps, d);
        self.op.project_range(&mut out);
        out
    }

    fn direction(&self, w: &Array2<f64>, grad: &Array1<f64>) -> NewtonDirection {
        let gnorm = norm(grad);
        let eps = 1e-12 * (1.0 + gnorm);
        let forcing = 0.5f64.min(gnorm.sqrt());
        let mask = w.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let max_cg = (self.c.len()).max(50);

        let mut rhs = -grad;
        self.op.project_range(&mut rhs);
        let rhs_norm = norm(&rhs);
        let mut d = Array1::zeros(rhs.len());
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rs = dot(&r, &r);
        let mut iters = 0;
        let mut breakdown = false;
        while iters < max_cg && rs.sqrt() > forcing * rhs_norm {
            let hp = self.hessian_apply(&mask, &p, eps);
            let curv = dot(&p, &hp);
            if !(curv > 0.0) || !curv.is_finite() {
                breakdown = true;
                break;
            }
            let step = rs / curv;
            d.scaled_add(step, &p);
            r.scaled_add(-step, &hp);
            self.op.project_range(&mut r);
            let rs_new = dot(&r, &r);
            p = &r + &(&p * (rs_new / rs));
            rs = rs_new;
            iters += 1;
        }
        self.op.project_range(&mut d);
        let descent = dot(&d, grad) < 0.0;
        if (breakdown && iters == 0) || !descent || d.iter().any(|v| !v.is_finite()) {
            return NewtonDirection {
                d: -grad,
                cg_iterations: iters,
                steepest_descent: true,
            };
        }
        NewtonDirection {
            d,
            cg_iterations: iters,
            steepest_descent: false,
        }
    }

    fn line_search(
        &self,
        w: &Array2<f64>,
        x: &Array2<f64>,
        grad: &Array1<f64>,
        d: &Array1<f64>,
        opts: &SsncgOptions,
    ) -> Option<f64> {
        let slope = dot(grad, d);
        if !(slope < 0.0) {
            return None;
        }
        let mut t = 1.0;
        for _ in 0..=opts.max_backtracks {
            let change = self.psi_change(w, x, grad, d, t);
            if change <= opts.armijo_slope * t * slope && change < 0.0 {
                return Some(t);
            }
            t *= opts.backtrack;
        }
        None
    }
}

/// Inexact Newton direction at `y`: CG on the regularized generalized Hessian
/// with forcing term `min(0.5, ‖∇Ψ‖^½)`, kept in `Ran(A)`.
pub fn newton_step(prob: &DualProjectionProblem, y: &Array1<f64>) -> NewtonDirection {
    let w = prob.shifted(y);
    let x = w.mapv(|v| v.max(0.0));
    let grad = prob.grad_from_primal(&x);
    prob.direction(&w, &grad)
}

/// Solves until `‖∇Ψ(y)‖ <= tol`.
pub fn solve_projection(prob: &DualProjectionProblem, y0: &Array1<f64>, tol: f64) -> Result<SsncgSolution> {
    solve_projection_with(prob, y0, &SsncgOptions::default(), |_, gnorm| gnorm <= tol)
}

/// Solves until `stop(X(y), ‖∇Ψ(y)‖)` holds. The test is evaluated before
/// every Newton step, including at `y0`.
pub fn solve_projection_with<F>(
    prob: &DualProjectionProblem,
    y0: &Array1<f64>,
    opts: &SsncgOptions,
    mut stop: F,
) -> Result<SsncgSolution>
where
    F: FnMut(&Array2<f64>, f64) -> bool,
{
    if y0.len() != prob.c.len() {
        return Err(OtError::DimensionMismatch {
            expected: (prob.c.len(), 1),
            found: (y0.len(), 1),
        });
    }
    let mut y = y0.clone();
    prob.op.project_range(&mut y);
    let mut iterations = 0;
    loop {
        let w = prob.shifted(&y);
        let x = w.mapv(|v| v.max(0.0));
        let grad = prob.grad_from_primal(&x);
        let gnorm = norm(&grad);
        if stop(&x, gnorm) {
            return Ok(SsncgSolution {
                x,
                y,
                iterations,
                grad_norm: gnorm,
                truncated: false,
            });
        }
        if iterations >= opts.max_newton {
            return Ok(SsncgSolution {
                x,
                y,
                iterations,
                grad_norm: gnorm,
                truncated: true,
            });
        }
        let dir = prob.direction(&w, &grad);
        let mut accepted = prob
            .line_search(&w, &x, &grad, &dir.d, opts)
            .map(|t| (t, dir.d.clone()));
        if accepted.is_none() && !dir.steepest_descent {
            let sd = -&grad;
            accepted = prob.line_search(&w, &x, &grad, &sd, opts).map(|t| (t, sd));
        }
        let Some((t, d)) = accepted else {
            return Ok(SsncgSolution {
                x,
                y,
                iterations,
                grad_norm: gnorm,
                truncated: true,
            });
        };
        y.scaled_add(t, &d);
        prob.op.project_range(&mut y);
        iterations += 1;
    }
}
