use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use bregman_ot::{generate, kkt_residual, lp_oracle_with, GenConfig, KernelKind, Method, OracleLimits, OtInstance};
use bregman_ot_bench::{
    load_config, read_instance, run_experiment, sweep, worker_threads, write_instance, write_trace, ConfigMap,
    InstanceFile, RunSpec, Summary,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Inexact Bregman proximal point solvers for discrete optimal transport.
#[derive(Parser)]
#[command(name = "bregman-ot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-mixture instance and write it as JSON.
    Gen(Params),
    /// Solve one instance; exits 0 when converged and 2 when a cap was hit.
    Solve(Params),
    /// Solve every combination of comma-separated parameter lists.
    Sweep(Params),
    /// Exact LP optimum of a small instance.
    Oracle(Params),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Every value flag may also be given in the `--config` file; flags win.
/// In `sweep`, method, kernel, gamma, upsilon, p, sigma and seed take
/// comma-separated lists.
#[derive(Args, Clone)]
struct Params {
    /// Flat `key = value` file with defaults for the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Read the instance from a JSON file instead of generating one.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// ibppa, vibppa, hpe or bhpe.
    #[arg(long)]
    method: Option<String>,
    /// quadratic or entropic.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    upsilon: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    kkt_tol: Option<String>,
    #[arg(long)]
    max_outer: Option<String>,
    #[arg(long)]
    max_inner: Option<String>,
    /// Known optimal value; fills the nfval column.
    #[arg(long)]
    reference: Option<String>,
    /// Largest m + n the oracle's simplex path accepts.
    #[arg(long)]
    oracle_nodes: Option<String>,
    /// Output file (gen, oracle) or directory (solve, sweep).
    #[arg(long)]
    out: Option<String>,
    /// What goes to stdout: the trace (csv) or the summary (json).
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write zero times so repeated runs produce identical files.
    #[arg(long)]
    deterministic: bool,
}

/// Flag values layered over the config file.
struct Settings {
    values: ConfigMap,
    instance: Option<PathBuf>,
    format: Format,
    deterministic: bool,
}

impl Settings {
    fn resolve(p: &Params) -> Result<Self> {
        let mut values = match &p.config {
            Some(path) => load_config(path)?,
            None => ConfigMap::new(),
        };
        let flags = [
            ("m", &p.m),
            ("n", &p.n),
            ("seed", &p.seed),
            ("method", &p.method),
            ("kernel", &p.kernel),
            ("gamma", &p.gamma),
            ("upsilon", &p.upsilon),
            ("p", &p.p),
            ("sigma", &p.sigma),
            ("kkt_tol", &p.kkt_tol),
            ("max_outer", &p.max_outer),
            ("max_inner", &p.max_inner),
            ("reference", &p.reference),
            ("oracle_nodes", &p.oracle_nodes),
            ("out", &p.out),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                values.insert(key.to_string(), v.clone());
            }
        }
        let format = match (p.format, values.get("format")) {
            (Some(f), _) => f,
            (None, Some(v)) => Format::from_str(v, true).map_err(|e| anyhow!("format: {e}"))?,
            (None, None) => Format::Json,
        };
        let deterministic = p.deterministic || values.get("deterministic").is_some_and(|v| v == "true");
        let instance = p.instance.clone().or_else(|| values.get("instance").map(PathBuf::from));
        Ok(Self {
            values,
            instance,
            format,
            deterministic,
        })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("--{}: {e}", key.replace('_', "-"))))
            .transpose()
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|item| item.trim().parse::<T>().map_err(|e| anyhow!("--{key}: {e}")))
                    .collect()
            })
            .transpose()
    }

    fn out(&self) -> Option<PathBuf> {
        self.raw("out").map(PathBuf::from)
    }

    fn instance(&self) -> Result<OtInstance> {
        match &self.instance {
            Some(path) => read_instance(path),
            None => {
                let (m, n, seed) = (self.get_or("m", 100)?, self.get_or("n", 100)?, self.get_or("seed", 0)?);
                Ok(generate(&GenConfig::new(m, n, seed))?)
            }
        }
    }

    fn spec(&self, inst: &OtInstance) -> Result<RunSpec> {
        let (m, n) = inst.dim();
        let mut spec = RunSpec::new(
            m,
            n,
            self.get_or("seed", 0)?,
            self.get_or("method", Method::Vibppa)?,
            self.get_or("kernel", KernelKind::Quadratic)?,
            self.get_or("gamma", 1.0)?,
        );
        spec.upsilon = self.get("upsilon")?;
        spec.p = self.get("p")?;
        spec.sigma = self.get("sigma")?;
        spec.kkt_tol = self.get("kkt_tol")?;
        spec.max_outer = self.get("max_outer")?;
        spec.max_inner = self.get("max_inner")?;
        spec.reference = self.get("reference")?;
        spec.out = self.out();
        spec.deterministic = self.deterministic;
        Ok(spec)
    }
}

fn cmd_gen(s: &Settings) -> Result<ExitCode> {
    if s.format == Format::Csv {
        bail!("instances are written as json");
    }
    let seed = s.get_or("seed", 0)?;
    let inst = generate(&GenConfig::new(s.get_or("m", 100)?, s.get_or("n", 100)?, seed))?;
    let file = InstanceFile::from_instance(&inst, Some(seed));
    match s.out() {
        Some(path) => write_instance(&path, &file)?,
        None => println!("{}", serde_json::to_string(&file)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(s: &Settings, summary: &Summary, trace: &bregman_ot::SolveTrace) -> Result<()> {
    let stdout = io::stdout();
    match s.format {
        Format::Json => writeln!(stdout.lock(), "{}", serde_json::to_string_pretty(summary)?)?,
        Format::Csv => write_trace(stdout.lock(), trace, s.deterministic)?,
    }
    Ok(())
}

fn status_code(converged: bool) -> ExitCode {
    if converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn cmd_solve(s: &Settings) -> Result<ExitCode> {
    let inst = s.instance()?;
    let spec = s.spec(&inst)?;
    let exp = run_experiment(&spec, &inst)?;
    print_summary(s, &exp.summary, &exp.result.trace)?;
    Ok(status_code(exp.summary.converged()))
}

fn cmd_sweep(s: &Settings) -> Result<ExitCode> {
    if s.instance.is_some() {
        bail!("sweep generates its instances; use --m, --n and --seed");
    }
    let out = s.out().context("sweep needs --out DIR")?;
    let methods = s
        .list::<Method>("method")?
        .unwrap_or_else(|| vec![Method::Ibppa, Method::Vibppa]);
    let kernels = s
        .list::<KernelKind>("kernel")?
        .unwrap_or_else(|| vec![KernelKind::Quadratic]);
    let gammas = s.list::<f64>("gamma")?.unwrap_or_else(|| vec![1.0]);
    let seeds = s.list::<u64>("seed")?.unwrap_or_else(|| vec![0]);
    let opt = |v: Option<Vec<f64>>| v.map_or(vec![None], |v| v.into_iter().map(Some).collect::<Vec<_>>());
    let upsilons = opt(s.list("upsilon")?);
    let ps = opt(s.list("p")?);
    let sigmas = opt(s.list("sigma")?);
    let (m, n) = (s.get_or("m", 100)?, s.get_or("n", 100)?);

    let mut specs = Vec::new();
    for &seed in &seeds {
        for &kernel in &kernels {
            for &method in &methods {
                for &gamma in &gammas {
                    let mut base = RunSpec::new(m, n, seed, method, kernel, gamma);
                    base.kkt_tol = s.get("kkt_tol")?;
                    base.max_outer = s.get("max_outer")?;
                    base.max_inner = s.get("max_inner")?;
                    base.deterministic = s.deterministic;
                    if method.is_relative_error() {
                        for &sigma in &sigmas {
                            specs.push(RunSpec { sigma, ..base.clone() });
                        }
                    } else {
                        for &upsilon in &upsilons {
                            for &p in &ps {
                                specs.push(RunSpec {
                                    upsilon,
                                    p,
                                    ..base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    for spec in &mut specs {
        spec.out = Some(out.join(spec.label()));
    }
    let summaries = sweep(&specs, worker_threads()?)?;
    write_sweep_table(&out.join("sweep.csv"), &specs, &summaries)?;
    match s.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&summaries)?),
        Format::Csv => print!("{}", std::fs::read_to_string(out.join("sweep.csv"))?),
    }
    Ok(status_code(summaries.iter().all(Summary::converged)))
}

fn write_sweep_table(path: &Path, specs: &[RunSpec], summaries: &[Summary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "run",
        "seed",
        "method",
        "kernel",
        "gamma",
        "upsilon",
        "p",
        "sigma",
        "status",
        "outer_iters",
        "inner_iters",
        "kkt_final",
        "objective_final",
        "time_s",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (spec, s) in specs.iter().zip(summaries) {
        w.write_record([
            spec.label(),
            spec.seed.to_string(),
            s.method.clone(),
            s.kernel.clone(),
            s.gamma.to_string(),
            opt(s.upsilon),
            opt(s.p),
            opt(s.sigma),
            s.status.clone(),
            s.outer_iters.to_string(),
            s.inner_iters.to_string(),
            s.kkt_final.to_string(),
            s.objective_final.to_string(),
            s.time_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(serde::Serialize)]
struct OracleReport {
    value: f64,
    kkt: f64,
    plan: Vec<Vec<f64>>,
    f: Vec<f64>,
    g: Vec<f64>,
}

fn cmd_oracle(s: &Settings) -> Result<ExitCode> {
    let inst = s.instance()?;
    let limits = OracleLimits {
        simplex_nodes: s.get_or("oracle_nodes", OracleLimits::default().simplex_nodes)?,
        ..OracleLimits::default()
    };
    let sol = lp_oracle_with(&inst, limits)?;
    let kkt = kkt_residual(&inst, &sol.plan, &sol.duals)?.delta_kkt;
    let text = match s.format {
        Format::Json => {
            let report = OracleReport {
                value: sol.value,
                kkt,
                plan: sol.plan.outer_iter().map(|r| r.to_vec()).collect(),
                f: sol.duals.f.to_vec(),
                g: sol.duals.g.to_vec(),
            };
            serde_json::to_string_pretty(&report)? + "\n"
        }
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            for row in sol.plan.outer_iter() {
                w.serialize(row.to_vec())?;
            }
            String::from_utf8(w.into_inner()?)?
        }
    };
    match s.out() {
        Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (params, handler): (&Params, fn(&Settings) -> Result<ExitCode>) = match &cli.command {
        Command::Gen(p) => (p, cmd_gen),
        Command::Solve(p) => (p, cmd_solve),
        Command::Sweep(p) => (p, cmd_sweep),
        Command::Oracle(p) => (p, cmd_oracle),
    };
    match Settings::resolve(params).and_then(|s| handler(&s)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
