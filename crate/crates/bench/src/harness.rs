//! Run specifications, single experiments and parameter sweeps.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use bregman_ot::{
    generate, run, BregmanKernel, GenConfig, KernelKind, Method, OtInstance, OuterConfig, RunResult, RunStatus,
};
use serde::Serialize;

use crate::io::write_trace_file;

pub const THREADS_ENV: &str = "BREGMAN_OT_THREADS";

/// One solver run. `upsilon`/`p` belong to the scheduled methods and `sigma`
/// to the relative-error ones; unset values take the solver defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub method: Method,
    pub kernel: KernelKind,
    pub gamma: f64,
    pub upsilon: Option<f64>,
    pub p: Option<f64>,
    pub sigma: Option<f64>,
    pub kkt_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    /// Optimal value for the `nfval` column.
    pub reference: Option<f64>,
    /// Directory receiving `trace.csv` and `summary.json`.
    pub out: Option<PathBuf>,
    /// Write zeros in the time fields so repeated runs give identical files.
    pub deterministic: bool,
}

impl RunSpec {
    pub fn new(m: usize, n: usize, seed: u64, method: Method, kernel: KernelKind, gamma: f64) -> Self {
        Self {
            m,
            n,
            seed,
            method,
            kernel,
            gamma,
            upsilon: None,
            p: None,
            sigma: None,
            kkt_tol: None,
            max_outer: None,
            max_inner: None,
            reference: None,
            out: None,
            deterministic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            bail!("m and n must be positive");
        }
        if self.method.is_relative_error() {
            if self.upsilon.is_some() || self.p.is_some() {
                bail!("upsilon and p do not apply to {}", self.method);
            }
        } else if self.sigma.is_some() {
            bail!("sigma only applies to hpe and bhpe, not {}", self.method);
        }
        self.config().validate()?;
        Ok(())
    }

    pub fn config(&self) -> OuterConfig {
        let mut cfg = OuterConfig::for_kind(self.kernel, self.gamma);
        if let Some(u) = self.upsilon {
            cfg.schedule.upsilon = u;
        }
        if let Some(p) = self.p {
            cfg.schedule.p = p;
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        if let Some(t) = self.kkt_tol {
            cfg.kkt_tol = t;
        }
        if let Some(k) = self.max_outer {
            cfg.max_outer = k;
        }
        if let Some(k) = self.max_inner {
            cfg.max_inner_total = k;
        }
        cfg.reference_value = self.reference;
        cfg
    }

    pub fn instance(&self) -> Result<OtInstance> {
        Ok(generate(&GenConfig::new(self.m, self.n, self.seed))?)
    }

    /// Directory name unique within a sweep grid.
    pub fn label(&self) -> String {
        let mut s = format!("{}_{}_g{}", self.method, self.kernel.name(), self.gamma);
        if self.method.is_relative_error() {
            s += &format!("_s{}", self.config().sigma);
        } else {
            let cfg = self.config();
            s += &format!("_u{}_p{}", cfg.schedule.upsilon, cfg.schedule.p);
        }
        s + &format!("_seed{}", self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub method: String,
    pub kernel: String,
    pub gamma: f64,
    pub upsilon: Option<f64>,
    pub p: Option<f64>,
    pub sigma: Option<f64>,
    pub status: String,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub kkt_final: f64,
    pub objective_final: f64,
    pub time_s: f64,
    pub kkt_tol: f64,
}

impl Summary {
    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged.name()
    }
}

pub struct Experiment {
    pub summary: Summary,
    pub result: RunResult,
}

/// Solves `inst` under `spec` and, when `spec.out` is set, writes
/// `trace.csv` and `summary.json` there.
pub fn run_experiment(spec: &RunSpec, inst: &OtInstance) -> Result<Experiment> {
    spec.validate()?;
    let cfg = spec.config();
    let start = Instant::now();
    let result = run(inst, spec.method, BregmanKernel::for_kind(spec.kernel), &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let scheduled = !spec.method.is_relative_error();
    let summary = Summary {
        method: spec.method.name().to_string(),
        kernel: spec.kernel.name().to_string(),
        gamma: cfg.gamma,
        upsilon: scheduled.then_some(cfg.schedule.upsilon),
        p: scheduled.then_some(cfg.schedule.p),
        sigma: (!scheduled).then_some(cfg.sigma),
        status: result.status.name().to_string(),
        outer_iters: result.outer_iters,
        inner_iters: result.inner_iters,
        kkt_final: result.kkt.delta_kkt,
        objective_final: result.objective(),
        time_s: if spec.deterministic { 0.0 } else { elapsed },
        kkt_tol: cfg.kkt_tol,
    };
    if let Some(dir) = &spec.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_trace_file(&dir.join("trace.csv"), &result.trace, spec.deterministic)?;
        let json = serde_json::to_string_pretty(&summary)?;
        fs::write(dir.join("summary.json"), json + "\n").context("writing summary.json")?;
    }
    Ok(Experiment { summary, result })
}

/// Worker count: `BREGMAN_OT_THREADS` if set, otherwise the machine's parallelism.
pub fn worker_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}={v} is not a count"))?;
            Ok(n.max(1))
        }
        Err(_) => Ok(thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs every spec on its generated instance with at most `threads` workers.
/// Summaries come back in spec order.
pub fn sweep(specs: &[RunSpec], threads: usize) -> Result<Vec<Summary>> {
    for s in specs {
        s.validate().with_context(|| format!("invalid spec {}", s.label()))?;
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Summary>>>> = Mutex::new((0..specs.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..threads.clamp(1, specs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = specs.get(i) else { break };
                let outcome = spec
                    .instance()
                    .and_then(|inst| run_experiment(spec, &inst))
                    .map(|e| e.summary);
                slots.lock().expect("result slots")[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .zip(specs)
        .map(|(slot, spec)| {
            slot.expect("every spec is visited")
                .with_context(|| format!("run {}", spec.label()))
        })
        .collect()
}
