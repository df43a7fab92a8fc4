//! Experiment harness around the `bregman-ot` solvers: instance files,
//! run specifications, trace/summary output and parameter sweeps.

pub mod config;
pub mod harness;
pub mod io;

pub use config::{load_config, parse_config, ConfigMap};
pub use harness::{run_experiment, sweep, worker_threads, Experiment, RunSpec, Summary, THREADS_ENV};
pub use io::{read_instance, write_instance, write_trace, InstanceFile};
