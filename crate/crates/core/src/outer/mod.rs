//! Outer proximal loops: the inexact Bregman proximal point method, its
//! accelerated variant, and the relative-error (hybrid extragradient)
//! baselines, all driven by [`run`].

mod step;
pub mod theta;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;

use crate::error::{OtError, Result};
use crate::kernels::{BregmanKernel, KernelKind};
use crate::polytope::round_to_polytope;
use crate::problem::{
    kkt_residual, normalized_gap, objective, DualPair, KktResidual, OtInstance, SolveTrace, TraceRow, TransportPlan,
};
use crate::sinkhorn::StopMode;

pub use step::{bhpe_step, hpe_step, ibppa_step, vibppa_step, OuterState, StepReport};
pub use theta::{solve_theta, theta_residual, AcceleratorState};

/// Lower bound on every inner tolerance.
pub const SCHEDULE_FLOOR: f64 = 1e-10;

/// Default floor of the divergence relative test.
pub const DIVERGENCE_FLOOR: f64 = 1e-16;

/// `tol(k) = max(Υ / (k+1)^p, floor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSchedule {
    pub upsilon: f64,
    pub p: f64,
    pub floor: f64,
}

impl ToleranceSchedule {
    pub fn new(upsilon: f64, p: f64) -> Result<Self> {
        let s = Self {
            upsilon,
            p,
            floor: SCHEDULE_FLOOR,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.upsilon > 0.0 && self.upsilon.is_finite()) {
            return Err(OtError::InvalidConfig(format!(
                "upsilon must be positive, got {}",
                self.upsilon
            )));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(OtError::InvalidConfig(format!("p must exceed 1, got {}", self.p)));
        }
        if !(self.floor >= 0.0) {
            return Err(OtError::InvalidConfig("tolerance floor must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn tol(&self, k: usize) -> f64 {
        (self.upsilon / ((k + 1) as f64).powf(self.p)).max(self.floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ibppa,
    Vibppa,
    Hpe,
    Bhpe,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ibppa, Method::Vibppa, Method::Hpe, Method::Bhpe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ibppa => "ibppa",
            Method::Vibppa => "vibppa",
            Method::Hpe => "hpe",
            Method::Bhpe => "bhpe",
        }
    }

    /// Uses the `σ` relative-error test instead of the tolerance schedule.
    pub fn is_relative_error(self) -> bool {
        matches!(self, Method::Hpe | Method::Bhpe)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = OtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "ibppa" | "ippa" | "ieppa" => Ok(Method::Ibppa),
            "vibppa" | "vippa" | "vieppa" => Ok(Method::Vibppa),
            "hpe" => Ok(Method::Hpe),
            "bhpe" => Ok(Method::Bhpe),
            other => Err(OtError::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    /// The cumulative inner-iteration cap was reached.
    InnerCap,
    OuterCap,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::InnerCap => "inner_cap",
            RunStatus::OuterCap => "outer_cap",
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterConfig {
    /// Constant proximal parameter.
    pub gamma: f64,
    pub schedule: ToleranceSchedule,
    pub kkt_tol: f64,
    pub max_outer: usize,
    /// Cap on Newton steps or Sinkhorn sweeps summed over the run.
    pub max_inner_total: usize,
    /// Estimate-sequence weight; `None` means `gamma`.
    pub pi: Option<f64>,
    /// Relative-error constant of the hybrid baselines.
    pub sigma: f64,
    /// Floor of the gradient-norm relative test.
    pub relative_floor: f64,
    /// Floor of the divergence relative test, in squared-distance units.
    pub divergence_floor: f64,
    /// Inner test of the scheduled entropic methods: `MarginalL2` or `BregmanToRounded`.
    pub entropic_stop: StopMode,
    /// Sweeps between rounding-based Sinkhorn tests.
    pub check_every: usize,
    /// Optimal value used for the normalized gap column of the trace.
    pub reference_value: Option<f64>,
}

impl OuterConfig {
    /// Quadratic-kernel defaults: tolerance `1e-7`, 1000 Newton steps.
    pub fn quadratic(gamma: f64) -> Self {
        Self {
            gamma,
            schedule: ToleranceSchedule {
                upsilon: 1e-3,
                p: 2.1,
                floor: SCHEDULE_FLOOR,
            },
            kkt_tol: 1e-7,
            max_outer: 100_000,
            max_inner_total: crate::ssncg::DEFAULT_MAX_NEWTON,
            pi: None,
            sigma: 0.5,
            relative_floor: SCHEDULE_FLOOR,
            divergence_floor: DIVERGENCE_FLOOR,
            entropic_stop: StopMode::MarginalL2,
            check_every: 10,
            reference_value: None,
        }
    }

    /// Entropic-kernel defaults: tolerance `1e-5`, 10000 sweeps.
    pub fn entropic(gamma: f64) -> Self {
        Self {
            kkt_tol: 1e-5,
            max_inner_total: crate::sinkhorn::DEFAULT_MAX_INNER,
            ..Self::quadratic(gamma)
        }
    }

    pub fn for_kind(kind: KernelKind, gamma: f64) -> Self {
        match kind {
            KernelKind::Quadratic => Self::quadratic(gamma),
            KernelKind::Entropic => Self::entropic(gamma),
        }
    }

    pub fn with_schedule(mut self, upsilon: f64, p: f64) -> Self {
        self.schedule.upsilon = upsilon;
        self.schedule.p = p;
        self
    }

    pub fn pi(&self) -> f64 {
        self.pi.unwrap_or(self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(OtError::InvalidConfig(msg));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        self.schedule.validate()?;
        if !(self.kkt_tol > 0.0) {
            return bad(format!("kkt_tol must be positive, got {}", self.kkt_tol));
        }
        if self.max_outer == 0 || self.max_inner_total == 0 {
            return bad("iteration caps must be positive".into());
        }
        if !(self.pi() > 0.0 && self.pi().is_finite()) {
            return bad(format!("pi must be positive, got {}", self.pi()));
        }
        if !(0.0..1.0).contains(&self.sigma) {
            return bad(format!("sigma must lie in [0, 1), got {}", self.sigma));
        }
        if !(self.relative_floor >= 0.0 && self.divergence_floor >= 0.0) {
            return bad("relative-test floors must be nonnegative".into());
        }
        if matches!(self.entropic_stop, StopMode::RelativeBregman { .. }) {
            return bad("entropic_stop must be MarginalL2 or BregmanToRounded".into());
        }
        if self.check_every == 0 {
            return bad("check_every must be positive".into());
        }
        Ok(())
    }
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Rounded final plan, feasible to rounding precision.
    pub plan: TransportPlan,
    /// Last inner-solver iterate, possibly infeasible.
    pub raw_plan: Array2<f64>,
    pub duals: DualPair,
    /// KKT residual of `(raw_plan, duals)`, the termination measure.
    pub kkt: KktResidual,
    pub trace: SolveTrace,
    pub status: RunStatus,
    pub outer_iters: usize,
    pub inner_iters: usize,
}

impl RunResult {
    pub fn objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.objective)
    }
}

/// Runs `method` from `X⁰ = a bᵀ` until `Δ_kkt < kkt_tol` or a cap is hit.
pub fn run(inst: &OtInstance, method: Method, kernel: BregmanKernel, cfg: &OuterConfig) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut state = OuterState::new(inst, kernel)?;
    let mut accel = (method == Method::Vibppa).then(|| state.accelerator());
    let mut trace = SolveTrace::new();
    let mut k = 0;
    let (status, x, rounded, kkt) = loop {
        let report = match method {
            Method::Ibppa => ibppa_step(&mut state, inst, cfg, k)?,
            Method::Vibppa => vibppa_step(&mut state, accel.as_mut().expect("accelerator"), inst, cfg, k)?,
            Method::Hpe => hpe_step(&mut state, inst, cfg, k)?,
            Method::Bhpe => bhpe_step(&mut state, inst, cfg, k)?,
        };
        k += 1;
        let x = state.plan()?;
        let rounded = round_to_polytope(&x, inst.a(), inst.b())?;
        let obj = objective(inst, &rounded)?;
        let kkt = kkt_residual(inst, &x, state.duals())?;
        trace.push(TraceRow {
            outer_iter: k,
            cum_inner_iters: state.cum_inner(),
            objective: obj,
            nfval: cfg.reference_value.map(|r| normalized_gap(obj, r)),
            kkt: kkt.delta_kkt,
            theta: report.theta,
            gamma: cfg.gamma,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        let status = if kkt.delta_kkt < cfg.kkt_tol {
            Some(RunStatus::Converged)
        } else if state.cum_inner() >= cfg.max_inner_total {
            Some(RunStatus::InnerCap)
        } else if k >= cfg.max_outer {
            Some(RunStatus::OuterCap)
        } else {
            None
        };
        if let Some(status) = status {
            break (status, x, rounded, kkt);
        }
    };
    Ok(RunResult {
        plan: rounded,
        raw_plan: x,
        duals: state.duals().clone(),
        kkt,
        trace,
        status,
        outer_iters: k,
        inner_iters: state.cum_inner(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn schedule_values() {
        let s = ToleranceSchedule::new(1.0, 2.0).unwrap();
        assert_eq!(s.tol(0), 1.0);
        assert_eq!(s.tol(1), 0.25);
        assert_eq!(s.tol(1_000_000), SCHEDULE_FLOOR);
        assert!(ToleranceSchedule::new(1.0, 1.0).is_err());
        assert!(ToleranceSchedule::new(0.0, 2.0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("V-iPPA".parse::<Method>().unwrap(), Method::Vibppa);
        assert!("ahpe".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = OuterConfig::entropic(0.1);
        assert!(cfg.validate().is_ok());
        cfg.sigma = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = OuterConfig::quadratic(1.0);
        cfg.entropic_stop = StopMode::RelativeBregman { sigma: 0.5 };
        assert!(cfg.validate().is_err());
    }

    fn one_by_one(c: f64) -> OtInstance {
        OtInstance::new(array![[c]], array![1.0], array![1.0]).unwrap()
    }

    #[test]
    fn single_cell_converges_in_one_step() {
        let inst = one_by_one(0.7);
        for kernel in [BregmanKernel::quadratic(), BregmanKernel::entropic()] {
            for method in Method::ALL {
                let cfg = OuterConfig::for_kind(kernel.kind, 1.0);
                let res = run(&inst, method, kernel, &cfg).unwrap();
                assert_eq!(res.status, RunStatus::Converged, "{method} {:?}", kernel.kind);
                assert_eq!(res.outer_iters, 1);
                assert!(
                    res.kkt.delta_kkt < 1e-12,
                    "{method} {:?} {:?} {:?}",
                    kernel.kind,
                    res.kkt,
                    res.duals
                );
                assert!((res.objective() - 0.7).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn huge_tolerance_stops_after_one_step() {
        let inst = OtInstance::new(array![[0.0, 1.0], [1.0, 0.0]], array![0.5, 0.5], array![0.5, 0.5]).unwrap();
        let mut cfg = OuterConfig::quadratic(1.0);
        cfg.kkt_tol = 1e300;
        let res = run(&inst, Method::Ibppa, BregmanKernel::quadratic(), &cfg).unwrap();
        assert_eq!(
            (res.status, res.outer_iters, res.trace.len()),
            (RunStatus::Converged, 1, 1)
        );
    }

    #[test]
    fn outer_cap_is_reported() {
        let inst = OtInstance::new(array![[0.0, 1.0], [1.0, 0.3]], array![0.4, 0.6], array![0.5, 0.5]).unwrap();
        let mut cfg = OuterConfig::entropic(1.0);
        cfg.max_outer = 2;
        cfg.kkt_tol = 1e-300;
        let res = run(&inst, Method::Ibppa, BregmanKernel::entropic(), &cfg).unwrap();
        assert_eq!((res.status, res.outer_iters), (RunStatus::OuterCap, 2));
    }
}
