//! Sinkhorn scaling for the entropic proximal subproblem
//!
//! ```text
//! min <M, X> + γ Σ x_ij (log x_ij - 1)   s.t.  X e = a, X^T e = b,
//! ```
//!
//! with `M = C - γ log S` for a positive prox center `S`. The Gibbs kernel is
//! `K = exp(-M/γ) = S ⊙ exp(-C/γ)` and iterates are `X = Diag(u) K Diag(v)`.
//!
//! Two representations are kept behind one state: plain scalings `(u, v)`
//! while `|M|/γ` stays within [`STANDARD_EXP_LIMIT`], and dual potentials
//! `(α, β) = γ (log u, log v)` with log-sum-exp reductions otherwise.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{check_shape, OtError, Result};
use crate::kernels::BregmanKernel;
use crate::numeric::{col_sums, log_sum_exp, matvec, matvec_t, norm};
use crate::polytope::round_to_polytope;
use crate::problem::OtInstance;

/// Largest `|log K_ij|` (and `|log u_i|`, `|log v_j|`) handled without the log domain.
pub const STANDARD_EXP_LIMIT: f64 = 300.0;

/// Default cumulative sweep cap.
pub const DEFAULT_MAX_INNER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DomainMode {
    #[default]
    Auto,
    Standard,
    Log,
}

#[derive(Debug, Clone)]
enum Scaling {
    Standard {
        kernel: Array2<f64>,
        u: Array1<f64>,
        v: Array1<f64>,
        /// `K v` for the current `v`.
        kv: Array1<f64>,
    },
    Log {
        alpha: Array1<f64>,
        beta: Array1<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct SinkhornState {
    a: Array1<f64>,
    b: Array1<f64>,
    gamma: f64,
    log_center: Array2<f64>,
    log_kernel: Array2<f64>,
    scaling: Scaling,
}

/// Which quantity decides that the subproblem is solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopMode {
    /// `D_φ(G(X), X) <= tol`, where `G` is the rounding map.
    BregmanToRounded,
    /// `‖u ⊙ K v - a‖ <= tol` (the column marginals are exact after a sweep).
    MarginalL2,
    /// `D_φ(G(X), X) <= max(σ² D_φ(G(X), S), tol)`, the relative-error test.
    RelativeBregman { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornStop {
    pub mode: StopMode,
    pub tol: f64,
    pub max_inner: usize,
    /// Rounding-based tests run at sweep 1 and then every `check_every` sweeps.
    pub check_every: usize,
}

impl SinkhornStop {
    pub fn new(mode: StopMode, tol: f64) -> Self {
        Self {
            mode,
            tol,
            max_inner: DEFAULT_MAX_INNER,
            check_every: 10,
        }
    }

    pub fn with_max_inner(mut self, max_inner: usize) -> Self {
        self.max_inner = max_inner;
        self
    }

    pub fn with_check_every(mut self, check_every: usize) -> Self {
        self.check_every = check_every.max(1);
        self
    }
}

/// Result of [`SinkhornState::solve_inner`].
#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    /// `log X` for `X = Diag(u) K Diag(v)`.
    pub log_plan: Array2<f64>,
    /// `γ log u`.
    pub alpha: Array1<f64>,
    /// `γ log v`.
    pub beta: Array1<f64>,
    pub iterations: usize,
    pub truncated: bool,
    /// Last evaluated stopping quantity.
    pub measure: f64,
}

impl SinkhornSolution {
    pub fn plan(&self) -> Array2<f64> {
        self.log_plan.mapv(f64::exp)
    }
}

impl SinkhornState {
    /// Subproblem at prox center `S > 0`, cold-started from `u = v = e`.
    pub fn build_subproblem(inst: &OtInstance, s: &Array2<f64>, gamma: f64) -> Result<Self> {
        check_shape(inst.dim(), s.dim())?;
        if s.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
            return Err(OtError::Domain("entropic prox center must be strictly positive".into()));
        }
        Self::from_log_center(inst, s.mapv(f64::ln), gamma, None, DomainMode::Auto)
    }

    /// Subproblem at prox center `exp(log_center)`, optionally warm-started
    /// from potentials `(α, β) = γ (log u, log v)`.
    pub fn from_log_center(
        inst: &OtInstance,
        log_center: Array2<f64>,
        gamma: f64,
        warm: Option<(&Array1<f64>, &Array1<f64>)>,
        mode: DomainMode,
    ) -> Result<Self> {
        let (m, n) = inst.dim();
        check_shape((m, n), log_center.dim())?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(OtError::InvalidConfig(format!("gamma must be positive, got {gamma}")));
        }
        if log_center.iter().any(|v| !v.is_finite()) {
            return Err(OtError::Domain("log prox center must be finite".into()));
        }
        let (alpha, beta) = match warm {
            Some((al, be)) => {
                check_shape((m, n), (al.len(), be.len()))?;
                (al.clone(), be.clone())
            }
            None => (Array1::zeros(m), Array1::zeros(n)),
        };
        let mut log_kernel = log_center.clone();
        Zip::from(&mut log_kernel)
            .and(inst.cost())
            .for_each(|lk, &c| *lk -= c / gamma);

        let representable = |v: &Array1<f64>| v.iter().all(|x| (x / gamma).abs() <= STANDARD_EXP_LIMIT);
        let standard_ok =
            log_kernel.iter().all(|v| v.abs() <= STANDARD_EXP_LIMIT) && representable(&alpha) && representable(&beta);
        let use_standard = match mode {
            DomainMode::Standard => true,
            DomainMode::Log => false,
            DomainMode::Auto => standard_ok,
        };
        let scaling = if use_standard {
            let kernel = log_kernel.mapv(f64::exp);
            let u = alpha.mapv(|x| (x / gamma).exp());
            let v = beta.mapv(|x| (x / gamma).exp());
            let kv = matvec(&kernel, &v);
            Scaling::Standard { kernel, u, v, kv }
        } else {
            Scaling::Log { alpha, beta }
        };
        Ok(Self {
            a: inst.a().clone(),
            b: inst.b().clone(),
            gamma,
            log_center,
            log_kernel,
            scaling,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_log_domain(&self) -> bool {
        matches!(self.scaling, Scaling::Log { .. })
    }

    /// `log K = log S - C/γ`.
    pub fn log_kernel(&self) -> &Array2<f64> {
        &self.log_kernel
    }

    /// `M = C - γ log S`.
    pub fn shifted_cost(&self) -> Array2<f64> {
        self.log_kernel.mapv(|lk| -self.gamma * lk)
    }

    /// `K`, materialized. Entries may underflow when the state is in the log domain.
    pub fn kernel(&self) -> Array2<f64> {
        match &self.scaling {
            Scaling::Standard { kernel, .. } => kernel.clone(),
            Scaling::Log { .. } => self.log_kernel.mapv(f64::exp),
        }
    }

    /// `γ log u`.
    pub fn alpha(&self) -> Array1<f64> {
        match &self.scaling {
            Scaling::Standard { u, .. } => u.mapv(|x| self.gamma * x.ln()),
            Scaling::Log { alpha, .. } => alpha.clone(),
        }
    }

    /// `γ log v`.
    pub fn beta(&self) -> Array1<f64> {
        match &self.scaling {
            Scaling::Standard { v, .. } => v.mapv(|x| self.gamma * x.ln()),
            Scaling::Log { beta, .. } => beta.clone(),
        }
    }

    pub fn u(&self) -> Array1<f64> {
        match &self.scaling {
            Scaling::Standard { u, .. } => u.clone(),
            Scaling::Log { alpha, .. } => alpha.mapv(|x| (x / self.gamma).exp()),
        }
    }

    pub fn v(&self) -> Array1<f64> {
        match &self.scaling {
            Scaling::Standard { v, .. } => v.clone(),
            Scaling::Log { beta, .. } => beta.mapv(|x| (x / self.gamma).exp()),
        }
    }

    /// `log X = log u e^T + log K + e (log v)^T`.
    pub fn log_plan(&self) -> Array2<f64> {
        let lu = self.alpha() / self.gamma;
        let lv = self.beta() / self.gamma;
        let mut out = self.log_kernel.clone();
        for ((i, j), x) in out.indexed_iter_mut() {
            *x += lu[i] + lv[j];
        }
        out
    }

    pub fn plan(&self) -> Array2<f64> {
        self.log_plan().mapv(f64::exp)
    }

    /// Row marginals `u ⊙ K v` of the current plan.
    pub fn row_marginals(&self) -> Array1<f64> {
        match &self.scaling {
            Scaling::Standard { u, kv, .. } => u * kv,
            Scaling::Log { alpha, beta } => {
                let g = self.gamma;
                self.log_kernel
                    .axis_iter(Axis(0))
                    .zip(alpha.iter())
                    .map(|(row, &al)| {
                        (al / g + log_sum_exp(row.iter().zip(beta.iter()).map(|(lk, be)| lk + be / g))).exp()
                    })
                    .collect()
            }
        }
    }

    /// `‖u ⊙ K v - a‖`.
    pub fn row_residual(&self) -> f64 {
        norm(&(self.row_marginals() - &self.a))
    }

    /// `‖X^T e - b‖`; zero up to rounding right after a sweep.
    pub fn col_residual(&self) -> f64 {
        norm(&(col_sums(&self.plan()) - &self.b))
    }

    /// `u = a ./ K v`, `v = b ./ K^T u` on plain scalings.
    pub fn sweep(&mut self) -> Result<()> {
        let Scaling::Standard { kernel, u, v, kv } = &mut self.scaling else {
            return Err(OtError::InvalidConfig("sweep called on a log-domain state".into()));
        };
        let new_u = &self.a / &*kv;
        let ktu = matvec_t(kernel, &new_u);
        let new_v = &self.b / &ktu;
        let new_kv = matvec(kernel, &new_v);
        let healthy = |x: &Array1<f64>| x.iter().all(|t| t.is_finite() && *t > 0.0);
        if !(healthy(&new_u) && healthy(&new_v) && healthy(&new_kv)) {
            return Err(OtError::Numerical(
                "Sinkhorn scaling left the representable range; use the log domain".into(),
            ));
        }
        *u = new_u;
        *v = new_v;
        *kv = new_kv;
        Ok(())
    }

    /// The same update as [`Self::sweep`] on potentials, via log-sum-exp.
    pub fn log_domain_sweep(&mut self) -> Result<()> {
        let g = self.gamma;
        let lk = &self.log_kernel;
        let Scaling::Log { alpha, beta } = &mut self.scaling else {
            return Err(OtError::InvalidConfig(
                "log_domain_sweep called on a standard state".into(),
            ));
        };
        for (i, row) in lk.axis_iter(Axis(0)).enumerate() {
            let lse = log_sum_exp(row.iter().zip(beta.iter()).map(|(l, be)| l + be / g));
            alpha[i] = g * (self.a[i].ln() - lse);
        }
        for (j, col) in lk.axis_iter(Axis(1)).enumerate() {
            let lse = log_sum_exp(col.iter().zip(alpha.iter()).map(|(l, al)| l + al / g));
            beta[j] = g * (self.b[j].ln() - lse);
        }
        Ok(())
    }

    /// Moves the state to the log domain, keeping the current scalings.
    pub fn into_log_domain(&mut self) {
        if !self.is_log_domain() {
            let (alpha, beta) = (self.alpha(), self.beta());
            self.scaling = Scaling::Log { alpha, beta };
        }
    }

    /// One sweep in whichever representation is active, switching to the
    /// log domain if plain scalings break down.
    pub fn step(&mut self) -> Result<()> {
        if self.is_log_domain() {
            return self.log_domain_sweep();
        }
        match self.sweep() {
            Ok(()) => Ok(()),
            Err(OtError::Numerical(_)) => {
                self.into_log_domain();
                self.log_domain_sweep()
            }
            Err(e) => Err(e),
        }
    }

    /// `D_φ(G(X), X)` for the current plan.
    pub fn bregman_to_rounded(&self) -> Result<f64> {
        let lx = self.log_plan();
        let rounded = round_to_polytope(&lx.mapv(f64::exp), &self.a, &self.b)?;
        entropic().bregman_div_mirror(&*rounded, &lx)
    }

    fn measure(&self, mode: StopMode, tol: f64) -> Result<(f64, bool)> {
        Ok(match mode {
            StopMode::MarginalL2 => {
                let r = self.row_residual();
                (r, r <= tol)
            }
            StopMode::BregmanToRounded => {
                let d = self.bregman_to_rounded()?;
                (d, d <= tol)
            }
            StopMode::RelativeBregman { sigma } => {
                let lx = self.log_plan();
                let rounded = round_to_polytope(&lx.mapv(f64::exp), &self.a, &self.b)?;
                let k = entropic();
                let d = k.bregman_div_mirror(&*rounded, &lx)?;
                let to_center = k.bregman_div_mirror(&*rounded, &self.log_center)?;
                (d, d <= (sigma * sigma * to_center).max(tol))
            }
        })
    }

    /// Sweeps until the stop rule holds or `max_inner` sweeps were spent. At
    /// least one sweep is always taken.
    pub fn solve_inner(&mut self, stop: &SinkhornStop) -> Result<SinkhornSolution> {
        let every = stop.check_every.max(1);
        let mut iterations = 0;
        let mut measure = f64::INFINITY;
        let mut done = false;
        while iterations < stop.max_inner {
            self.step()?;
            iterations += 1;
            let due = match stop.mode {
                StopMode::MarginalL2 => true,
                _ => (iterations - 1) % every == 0 || iterations == stop.max_inner,
            };
            if due {
                let (value, ok) = self.measure(stop.mode, stop.tol)?;
                measure = value;
                if ok {
                    done = true;
                    break;
                }
            }
        }
        Ok(SinkhornSolution {
            log_plan: self.log_plan(),
            alpha: self.alpha(),
            beta: self.beta(),
            iterations,
            truncated: !done,
            measure,
        })
    }
}

fn entropic() -> BregmanKernel {
    BregmanKernel::entropic()
}
