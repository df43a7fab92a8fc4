use ndarray::{Array1, Array2};

use super::theta::AcceleratorState;
use super::OuterConfig;
use crate::error::{OtError, Result};
use crate::kernels::{BregmanKernel, KernelKind};
use crate::numeric::dot;
use crate::polytope::round_to_polytope;
use crate::problem::{kkt_residual, DualPair, KktResidual, OtInstance, TransportPlan};
use crate::sinkhorn::{DomainMode, SinkhornState, SinkhornStop, StopMode};
use crate::ssncg::{solve_projection_with, DualProjectionProblem, SsncgOptions};

/// Iterate, multipliers and inner warm starts carried between outer steps.
///
/// The iterate is stored in mirror coordinates `∇φ(x)`: the plan itself for
/// the quadratic kernel and `log x` for the entropic one, so entropic entries
/// that decay below the smallest double stay representable.
#[derive(Debug, Clone)]
pub struct OuterState {
    kernel: BregmanKernel,
    x_mirror: Array2<f64>,
    duals: DualPair,
    newton_warm: Array1<f64>,
    sinkhorn_warm: Option<(Array1<f64>, Array1<f64>)>,
    cum_inner: usize,
}

/// What one outer step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub inner_iters: usize,
    pub truncated: bool,
    /// Last value of the inner stopping quantity.
    pub inner_measure: f64,
    /// Inner tolerance in force (the floor for the relative-error methods).
    pub tol: f64,
    pub theta: Option<f64>,
}

enum InnerTest {
    /// Scheduled tolerance.
    Absolute(f64),
    /// Quadratic: `‖∇Ψ‖ <= σ² ‖G(X) - S‖²`. Entropic: `D(G(X), X) <= σ² D(G(X), S)`.
    Relative(f64),
}

impl OuterState {
    /// Starts from the product coupling `a bᵀ`.
    pub fn new(inst: &OtInstance, kernel: BregmanKernel) -> Result<Self> {
        Self::from_plan(inst, kernel, &inst.product_coupling())
    }

    pub fn from_plan(inst: &OtInstance, kernel: BregmanKernel, x: &Array2<f64>) -> Result<Self> {
        crate::error::check_shape(inst.dim(), x.dim())?;
        let (m, n) = inst.dim();
        Ok(Self {
            kernel,
            x_mirror: kernel.grad(x)?,
            duals: DualPair::zeros(m, n),
            newton_warm: Array1::zeros(m + n),
            sinkhorn_warm: None,
            cum_inner: 0,
        })
    }

    pub fn kernel(&self) -> &BregmanKernel {
        &self.kernel
    }

    /// `∇φ(x^k)`.
    pub fn x_mirror(&self) -> &Array2<f64> {
        &self.x_mirror
    }

    /// The raw iterate `x^k`.
    pub fn plan(&self) -> Result<Array2<f64>> {
        self.kernel.mirror_inverse(&self.x_mirror)
    }

    pub fn duals(&self) -> &DualPair {
        &self.duals
    }

    pub fn cum_inner(&self) -> usize {
        self.cum_inner
    }

    /// Fresh accelerator with `z⁰ = x⁰` and the kernel's scaling constants.
    pub fn accelerator(&self) -> AcceleratorState {
        AcceleratorState::new(
            self.x_mirror.clone(),
            self.kernel.qsc_tau1,
            self.kernel.qse_lambda,
            self.kernel.adaptive_tau1,
        )
    }

    /// `G(x^k)`.
    pub fn rounded(&self, inst: &OtInstance) -> Result<TransportPlan> {
        round_to_polytope(&self.plan()?, inst.a(), inst.b())
    }

    /// `Δ_kkt` of the raw iterate and current multipliers.
    pub fn kkt(&self, inst: &OtInstance) -> Result<KktResidual> {
        kkt_residual(inst, &self.plan()?, &self.duals)
    }

    fn budget(&self, cfg: &OuterConfig) -> usize {
        cfg.max_inner_total.saturating_sub(self.cum_inner)
    }

    /// Approximately minimizes `<C, X> + γ D(X, S)` with `∇φ(S) = center`,
    /// replacing the iterate and multipliers.
    fn prox(
        &mut self,
        inst: &OtInstance,
        cfg: &OuterConfig,
        center: &Array2<f64>,
        test: InnerTest,
    ) -> Result<StepReport> {
        let budget = self.budget(cfg);
        match self.kernel.kind {
            KernelKind::Quadratic => self.quadratic_prox(inst, cfg, center, test, budget),
            KernelKind::Entropic => self.entropic_prox(inst, cfg, center, test, budget),
        }
    }

    fn quadratic_prox(
        &mut self,
        inst: &OtInstance,
        cfg: &OuterConfig,
        s: &Array2<f64>,
        test: InnerTest,
        budget: usize,
    ) -> Result<StepReport> {
        let prob = DualProjectionProblem::new(inst, s, cfg.gamma)?;
        let opts = SsncgOptions {
            max_newton: budget,
            ..SsncgOptions::default()
        };
        let floor = cfg.relative_floor;
        let (a, b) = (inst.a(), inst.b());
        let mut failure = None;
        let (sol, tol) = match test {
            InnerTest::Absolute(tol) => (
                solve_projection_with(&prob, &self.newton_warm, &opts, |_, g| g <= tol)?,
                tol,
            ),
            InnerTest::Relative(sigma) => {
                let sol = solve_projection_with(&prob, &self.newton_warm, &opts, |x, gnorm| {
                    match round_to_polytope(x, a, b) {
                        Ok(g) => gnorm <= (sigma * sigma * sq_dist(&g, s)).max(floor),
                        Err(e) => {
                            failure = Some(e);
                            true
                        }
                    }
                })?;
                (sol, floor)
            }
        };
        if let Some(e) = failure {
            return Err(e);
        }
        self.duals = prob.duals(&sol.y);
        self.x_mirror = sol.x;
        self.newton_warm = sol.y;
        self.cum_inner += sol.iterations;
        Ok(StepReport {
            inner_iters: sol.iterations,
            truncated: sol.truncated,
            inner_measure: sol.grad_norm,
            tol,
            theta: None,
        })
    }

    fn entropic_prox(
        &mut self,
        inst: &OtInstance,
        cfg: &OuterConfig,
        log_s: &Array2<f64>,
        test: InnerTest,
        budget: usize,
    ) -> Result<StepReport> {
        let warm = self.sinkhorn_warm.as_ref().map(|(al, be)| (al, be));
        let mut state = SinkhornState::from_log_center(inst, log_s.clone(), cfg.gamma, warm, DomainMode::Auto)?;
        let (mode, tol) = match test {
            InnerTest::Absolute(tol) => (cfg.entropic_stop, tol),
            InnerTest::Relative(sigma) => (StopMode::RelativeBregman { sigma }, cfg.divergence_floor),
        };
        let stop = SinkhornStop::new(mode, tol)
            .with_max_inner(budget)
            .with_check_every(cfg.check_every);
        let sol = state.solve_inner(&stop)?;
        if sol.log_plan.iter().any(|v| !v.is_finite()) {
            return Err(OtError::Numerical("Sinkhorn produced a non-finite plan".into()));
        }
        // Subproblem optimality: C + γ (log X - log S) = α eᵀ + e βᵀ.
        self.duals = DualPair {
            f: sol.alpha.clone(),
            g: sol.beta.clone(),
        };
        self.x_mirror = sol.log_plan;
        self.sinkhorn_warm = Some((sol.alpha, sol.beta));
        self.cum_inner += sol.iterations;
        Ok(StepReport {
            inner_iters: sol.iterations,
            truncated: sol.truncated,
            inner_measure: sol.measure,
            tol,
            theta: None,
        })
    }
}

fn sq_dist(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let d = x - y;
    dot(&d, &d)
}

/// Proximal step at the current iterate with tolerance `tol(k)`; the raw
/// inner output becomes the next prox center.
pub fn ibppa_step(state: &mut OuterState, inst: &OtInstance, cfg: &OuterConfig, k: usize) -> Result<StepReport> {
    let center = state.x_mirror.clone();
    state.prox(inst, cfg, &center, InnerTest::Absolute(cfg.schedule.tol(k)))
}

/// Accelerated step: prox at `y = θ z + (1-θ) x`, then the mirror update of `z`.
pub fn vibppa_step(
    state: &mut OuterState,
    acc: &mut AcceleratorState,
    inst: &OtInstance,
    cfg: &OuterConfig,
    k: usize,
) -> Result<StepReport> {
    crate::error::check_shape(state.x_mirror.dim(), acc.z_mirror.dim())?;
    let theta = acc.next_theta(cfg.gamma, cfg.pi());
    let y_mirror = state.kernel.combine_mirror(theta, &acc.z_mirror, &state.x_mirror);
    let mut report = state.prox(inst, cfg, &y_mirror, InnerTest::Absolute(cfg.schedule.tol(k)))?;
    acc.advance(theta, &state.x_mirror, &y_mirror)?;
    report.theta = Some(theta);
    Ok(report)
}

/// Hybrid proximal extragradient step with the relative-error test of the
/// state's kernel: `‖∇Ψ‖ <= max(σ² ‖G(X) - S‖², floor)` for the quadratic
/// kernel, `D(G(X), X) <= max(σ² D(G(X), S), floor)` for the entropic one.
/// The extragradient point equals `X`, which becomes the next center.
pub fn hpe_step(state: &mut OuterState, inst: &OtInstance, cfg: &OuterConfig, _k: usize) -> Result<StepReport> {
    let center = state.x_mirror.clone();
    state.prox(inst, cfg, &center, InnerTest::Relative(cfg.sigma))
}

/// The Bregman form of [`hpe_step`]; with the quadratic kernel the two coincide.
pub fn bhpe_step(state: &mut OuterState, inst: &OtInstance, cfg: &OuterConfig, k: usize) -> Result<StepReport> {
    hpe_step(state, inst, cfg, k)
}
