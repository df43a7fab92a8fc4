//! Bregman kernels: the quadratic `½‖x‖²` and the Boltzmann-Shannon entropy
//! `Σ x (log x - 1)`.
//!
//! Outer solvers keep their prox centers in mirror coordinates `∇φ(x)`
//! (the iterate itself for the quadratic kernel, `log x` for the entropic
//! one). Working there keeps entropic iterates representable long after
//! their smallest entries would underflow in the primal.

use ndarray::{Array, ArrayBase, Data, Dimension, Zip};

use crate::error::{OtError, Result};
use crate::numeric::{log_add_exp, sum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Quadratic,
    Entropic,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Quadratic => "quadratic",
            KernelKind::Entropic => "entropic",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = OtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" | "quad" => Ok(KernelKind::Quadratic),
            "entropic" | "entropy" => Ok(KernelKind::Entropic),
            other => Err(OtError::InvalidConfig(format!("unknown kernel `{other}`"))),
        }
    }
}

/// A kernel together with its quadrangle scaling parameters.
///
/// `qsc_tau1` is the initial value; when `adaptive_tau1` is set the
/// accelerated solver doubles its own copy whenever `τ1 θ_k < 0.1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BregmanKernel {
    pub kind: KernelKind,
    pub qse_lambda: f64,
    pub qsc_tau1: f64,
    pub qsc_tau2: f64,
    pub adaptive_tau1: bool,
}

impl BregmanKernel {
    /// `λ = 2`, `τ1 = τ2 = 2`.
    pub fn quadratic() -> Self {
        Self {
            kind: KernelKind::Quadratic,
            qse_lambda: 2.0,
            qsc_tau1: 2.0,
            qsc_tau2: 2.0,
            adaptive_tau1: false,
        }
    }

    /// `λ = 2` with `τ1` starting at 1 and doubled on demand. Experimental:
    /// the scaling inequality is only guaranteed for `θ` bounded away from 0.
    pub fn entropic() -> Self {
        Self {
            kind: KernelKind::Entropic,
            qse_lambda: 2.0,
            qsc_tau1: 1.0,
            qsc_tau2: 1.0,
            adaptive_tau1: true,
        }
    }

    /// `λ = τ1 = τ2 = 1`, which follows from joint convexity of the KL divergence.
    pub fn entropic_conservative() -> Self {
        Self {
            kind: KernelKind::Entropic,
            qse_lambda: 1.0,
            qsc_tau1: 1.0,
            qsc_tau2: 1.0,
            adaptive_tau1: false,
        }
    }

    pub fn for_kind(kind: KernelKind) -> Self {
        match kind {
            KernelKind::Quadratic => Self::quadratic(),
            KernelKind::Entropic => Self::entropic(),
        }
    }

    /// Kernel value. Entropic uses `0 (log 0 - 1) = 0`.
    pub fn phi<S, D>(&self, x: &ArrayBase<S, D>) -> Result<f64>
    where
        S: Data<Elem = f64>,
        D: Dimension,
    {
        match self.kind {
            KernelKind::Quadratic => Ok(0.5 * sum(x.iter().map(|v| v * v))),
            KernelKind::Entropic => {
                check_nonnegative(x)?;
                Ok(sum(x.iter().map(|&v| xlogx_minus_x(v))))
            }
        }
    }

    /// `D_φ(x, y) = φ(x) - φ(y) - <∇φ(y), x - y>`.
    ///
    /// The entropic form is evaluated as `Σ x log(x/y) - x + y`, dropping
    /// `x = 0` terms from the logarithm.
    pub fn bregman_div<S1, S2, D>(&self, x: &ArrayBase<S1, D>, y: &ArrayBase<S2, D>) -> Result<f64>
    where
        S1: Data<Elem = f64>,
        S2: Data<Elem = f64>,
        D: Dimension,
    {
        check_same_shape(x.shape(), y.shape())?;
        match self.kind {
            KernelKind::Quadratic => Ok(0.5 * sum(x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)))),
            KernelKind::Entropic => {
                check_nonnegative(x)?;
                check_positive(y)?;
                Ok(sum(x.iter().zip(y.iter()).map(|(&xi, &yi)| kl_term(xi, yi.ln(), yi))))
            }
        }
    }

    /// `D_φ(x, y)` with `y` given through its mirror image `∇φ(y)`.
    pub fn bregman_div_mirror<S1, S2, D>(&self, x: &ArrayBase<S1, D>, grad_y: &ArrayBase<S2, D>) -> Result<f64>
    where
        S1: Data<Elem = f64>,
        S2: Data<Elem = f64>,
        D: Dimension,
    {
        check_same_shape(x.shape(), grad_y.shape())?;
        match self.kind {
            KernelKind::Quadratic => self.bregman_div(x, grad_y),
            KernelKind::Entropic => {
                check_nonnegative(x)?;
                if grad_y.iter().any(|g| !g.is_finite()) {
                    return Err(OtError::Domain("log of prox center must be finite".into()));
                }
                Ok(sum(x
                    .iter()
                    .zip(grad_y.iter())
                    .map(|(&xi, &ly)| kl_term(xi, ly, ly.exp()))))
            }
        }
    }

    /// `∇φ(y)`: identity or elementwise `log`.
    pub fn grad<S, D>(&self, y: &ArrayBase<S, D>) -> Result<Array<f64, D>>
    where
        S: Data<Elem = f64>,
        D: Dimension,
    {
        match self.kind {
            KernelKind::Quadratic => Ok(y.to_owned()),
            KernelKind::Entropic => {
                check_positive(y)?;
                Ok(y.mapv(f64::ln))
            }
        }
    }

    /// `∇φ*(g)`: identity or elementwise `exp`. Overflow is reported rather
    /// than returned as `inf`.
    pub fn mirror_inverse<S, D>(&self, g: &ArrayBase<S, D>) -> Result<Array<f64, D>>
    where
        S: Data<Elem = f64>,
        D: Dimension,
    {
        match self.kind {
            KernelKind::Quadratic => Ok(g.to_owned()),
            KernelKind::Entropic => {
                let out = g.mapv(f64::exp);
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(OtError::Numerical(
                        "exp overflow in mirror inverse; stay in log coordinates".into(),
                    ));
                }
                Ok(out)
            }
        }
    }

    /// Mirror image of the primal convex combination `θ z + (1 - θ) x`,
    /// given `∇φ(z)` and `∇φ(x)`.
    pub fn combine_mirror<S1, S2, D>(
        &self,
        theta: f64,
        grad_z: &ArrayBase<S1, D>,
        grad_x: &ArrayBase<S2, D>,
    ) -> Array<f64, D>
    where
        S1: Data<Elem = f64>,
        S2: Data<Elem = f64>,
        D: Dimension,
    {
        let mut out = grad_x.to_owned();
        match self.kind {
            KernelKind::Quadratic => {
                Zip::from(&mut out)
                    .and(grad_z)
                    .for_each(|x, &z| *x = theta * z + (1.0 - theta) * *x);
            }
            KernelKind::Entropic => {
                let lt = theta.ln();
                let l1t = (1.0 - theta).ln();
                Zip::from(&mut out)
                    .and(grad_z)
                    .for_each(|x, &z| *x = log_add_exp(lt + z, l1t + *x));
            }
        }
        out
    }
}

fn xlogx_minus_x(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v * (v.ln() - 1.0)
    }
}

/// `x log x - x log y - x + y`, with the `x = 0` terms dropped.
fn kl_term(x: f64, log_y: f64, y: f64) -> f64 {
    if x == 0.0 {
        y
    } else {
        x * (x.ln() - log_y) - x + y
    }
}

fn check_same_shape(a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        let dims = |s: &[usize]| (s.first().copied().unwrap_or(1), s.get(1).copied().unwrap_or(1));
        Err(OtError::DimensionMismatch {
            expected: dims(a),
            found: dims(b),
        })
    }
}

fn check_nonnegative<S: Data<Elem = f64>, D: Dimension>(x: &ArrayBase<S, D>) -> Result<()> {
    if x.iter().all(|v| *v >= 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(OtError::Domain("entropic kernel needs nonnegative entries".into()))
    }
}

fn check_positive<S: Data<Elem = f64>, D: Dimension>(y: &ArrayBase<S, D>) -> Result<()> {
    if y.iter().all(|v| *v > 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(OtError::Domain(
            "point lies on the boundary of the entropic domain".into(),
        ))
    }
}
