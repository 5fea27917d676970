//! Experiment runner: JSON configs in, trace CSVs and summary JSONs out.
//!
//! Three commands share the config format:
//!
//! - `run`: one (problem, graph, algorithm) execution; writes
//!   `trace.csv` and `summary.json`.
//! - `tune`: golden-section search over the algorithm's scalar parameter;
//!   writes a run config with the tuned value filled in.
//! - `sweep`: either a step-size sensitivity grid or a resource-weighted
//!   cost sweep over problem sizes and lambda; writes a CSV report.
//!
//! Exit codes for `run`: 0 converged, 2 iteration cap, 3 divergence,
//! 1 configuration or I/O errors.
//!
//! The `cum_seconds` trace column is modeled compute time
//! (`cum_ops x sec_per_op`), so identical configs produce byte-identical
//! trace files; measured wall-clock totals go to the summary JSON instead.

use distopt::bench;
use distopt::exec::{Network, StopRule, Termination};
use distopt::graph::WeightMatrix;
use distopt::method::{tune_method, MethodSpec};
use distopt::problems::{GraphConfig, ProblemConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CAP: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

fn default_sec_per_op() -> f64 {
    1e-9
}

fn default_float_cost() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StopConfig {
    #[serde(default = "default_tol")]
    pub tol_mse: f64,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default = "default_blowup")]
    pub blowup: f64,
}

fn default_tol() -> f64 {
    1e-6
}
fn default_cap() -> usize {
    10_000
}
fn default_blowup() -> f64 {
    1e12
}

impl Default for StopConfig {
    fn default() -> Self {
        Self {
            tol_mse: default_tol(),
            cap: default_cap(),
            blowup: default_blowup(),
        }
    }
}

impl StopConfig {
    fn rule(&self) -> StopRule {
        StopRule {
            tol_mse: self.tol_mse,
            cap: self.cap,
            blowup: self.blowup,
        }
    }
}

/// Golden-section bounds for `tune` (log10 scale over [lo, hi]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneConfig {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_tune_iterations")]
    pub iterations: usize,
}

fn default_tune_iterations() -> usize {
    13
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    pub algorithm: MethodSpec,
    /// When present, the algorithm's scalar is tuned before running.
    #[serde(default)]
    pub tune: Option<TuneConfig>,
    #[serde(default)]
    pub stop: StopConfig,
    /// Normalize trace MSE by the squared reference norm.
    #[serde(default)]
    pub normalize_mse: bool,
    /// Modeled seconds per flop for the deterministic trace time column.
    #[serde(default = "default_sec_per_op")]
    pub sec_per_op: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SweepKind {
    /// Final MSE over a parameter grid at a fixed instance.
    Stepsize {
        algorithm: MethodSpec,
        /// Explicit parameter grid.
        grid: Vec<f64>,
    },
    /// Tuned RWC cells over problem sizes (tracking horizon) and lambdas.
    Rwc {
        algorithms: Vec<MethodSpec>,
        /// Tracking horizon lengths (n = 4T each).
        sizes: Vec<usize>,
        lambdas: Vec<f64>,
        #[serde(default = "default_tune_iterations")]
        tune_iterations: usize,
        #[serde(default = "default_float_cost")]
        float_cost: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(flatten)]
    pub kind: SweepKind,
    #[serde(default)]
    pub stop: StopConfig,
    #[serde(default)]
    pub normalize_mse: bool,
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    problem: &'a str,
    algorithm: &'a MethodSpec,
    termination: &'a str,
    iterations: usize,
    final_mse: f64,
    cum_floats: u64,
    cum_ops: u64,
    /// Measured processor time, network-wide (not deterministic).
    wall_seconds: f64,
    tuned_parameter: Option<f64>,
    gss_evaluations: Option<usize>,
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
}

fn write_out(dir: &Path, name: &str, content: &str) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("create {}: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| format!("write {}: {e}", path.display()))
}

fn trace_csv(trace: &distopt::RunTrace, sec_per_op: f64) -> String {
    let mut out = String::from("iteration,mse,cum_floats,cum_ops,cum_seconds\n");
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iteration,
            bench::fmt_float(r.mse),
            r.cum_floats,
            r.cum_ops,
            bench::fmt_float(r.cum_ops as f64 * sec_per_op),
        ));
    }
    out
}

/// Executes a run config: builds the instance and graph, optionally tunes,
/// runs, and writes `trace.csv` / `summary.json` into `out_dir`.
pub fn cmd_run(config_path: &Path, out_dir: &Path, seed: Option<u64>, quiet: bool) -> i32 {
    let mut config: RunConfig = match read_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.problem.set_seed(config.seed);
    match run_inner(&config, out_dir, quiet) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
    }
}

fn run_inner(config: &RunConfig, out_dir: &Path, quiet: bool) -> Result<i32, String> {
    let instance = config.problem.build().map_err(|e| e.to_string())?;
    let graph = config.graph.build(&instance).map_err(|e| e.to_string())?;
    let weights = WeightMatrix::metropolis(&graph);
    let net = Network {
        graph: &graph,
        weights: &weights,
    };
    let stop = config.stop.rule();
    let mut mse = instance.mse_spec();
    mse.normalize = config.normalize_mse;

    let (spec, gss) = match &config.tune {
        Some(t) => {
            let (tuned, result) = tune_method(
                &config.algorithm,
                t.lo,
                t.hi,
                t.iterations,
                &stop,
                |s| s.run(&net, &instance.objectives(), &instance.zero_init(), &mse, &stop),
            )
            .map_err(|e| e.to_string())?;
            (tuned, Some(result))
        }
        None => (config.algorithm.clone(), None),
    };

    let trace = spec
        .run(&net, &instance.objectives(), &instance.zero_init(), &mse, &stop)
        .map_err(|e| e.to_string())?;

    write_out(out_dir, "trace.csv", &trace_csv(&trace, config.sec_per_op))?;
    let summary = RunSummary {
        problem: instance.name(),
        algorithm: &spec,
        termination: trace.termination.label(),
        iterations: trace.iterations(),
        final_mse: trace.final_mse(),
        cum_floats: trace.final_record().cum_floats,
        cum_ops: trace.final_record().cum_ops,
        wall_seconds: trace.final_record().cum_seconds,
        tuned_parameter: gss.map(|g| g.best),
        gss_evaluations: gss.map(|g| g.evaluations),
    };
    write_out(
        out_dir,
        "summary.json",
        &serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?,
    )?;
    write_out(
        out_dir,
        "instance.json",
        &instance.to_json().map_err(|e| e.to_string())?,
    )?;
    if !quiet {
        println!(
            "{}: {} after {} iterations, final MSE {:.3e}",
            spec.name(),
            trace.termination.label(),
            trace.iterations(),
            trace.final_mse()
        );
    }
    Ok(match trace.termination {
        Termination::Converged { .. } => EXIT_OK,
        Termination::IterationCap { .. } => EXIT_CAP,
        Termination::Diverged { .. } => EXIT_DIVERGED,
    })
}

/// Tunes the algorithm's scalar parameter and writes a run config with the
/// tuned value (directly usable by `run`).
pub fn cmd_tune(config_path: &Path, out_dir: &Path, seed: Option<u64>, quiet: bool) -> i32 {
    let mut config: RunConfig = match read_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.problem.set_seed(config.seed);
    let Some(tune) = config.tune.clone() else {
        eprintln!("tune command needs a `tune` block with GSS bounds");
        return EXIT_CONFIG;
    };
    let result = (|| -> Result<(), String> {
        let instance = config.problem.build().map_err(|e| e.to_string())?;
        let graph = config.graph.build(&instance).map_err(|e| e.to_string())?;
        let weights = WeightMatrix::metropolis(&graph);
        let net = Network {
            graph: &graph,
            weights: &weights,
        };
        let stop = config.stop.rule();
        let mut mse = instance.mse_spec();
        mse.normalize = config.normalize_mse;
        let (tuned, gss) = tune_method(
            &config.algorithm,
            tune.lo,
            tune.hi,
            tune.iterations,
            &stop,
            |s| s.run(&net, &instance.objectives(), &instance.zero_init(), &mse, &stop),
        )
        .map_err(|e| e.to_string())?;
        let mut out = config.clone();
        out.algorithm = tuned.clone();
        out.tune = None;
        write_out(
            out_dir,
            "tuned.json",
            &serde_json::to_string_pretty(&out).map_err(|e| e.to_string())?,
        )?;
        if !quiet {
            println!(
                "tuned {} parameter to {:.6e} ({} evaluations, best score {:.3})",
                tuned.name(),
                tuned.tuned_parameter(),
                gss.evaluations,
                gss.best_score
            );
        }
        Ok(())
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
    }
}

/// Runs a sweep config and writes `sweep.csv`.
pub fn cmd_sweep(config_path: &Path, out_dir: &Path, seed: Option<u64>, quiet: bool) -> i32 {
    let mut config: SweepConfig = match read_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.problem.set_seed(config.seed);
    match sweep_inner(&config, out_dir, quiet) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
    }
}

fn sweep_inner(config: &SweepConfig, out_dir: &Path, quiet: bool) -> Result<(), String> {
    let stop = config.stop.rule();
    match &config.kind {
        SweepKind::Stepsize { algorithm, grid } => {
            if grid.is_empty() {
                return Err("step-size grid is empty".into());
            }
            let instance = config.problem.build().map_err(|e| e.to_string())?;
            let graph = config.graph.build(&instance).map_err(|e| e.to_string())?;
            let weights = WeightMatrix::metropolis(&graph);
            let net = Network {
                graph: &graph,
                weights: &weights,
            };
            let mut mse = instance.mse_spec();
            mse.normalize = config.normalize_mse;
            let cells = bench::stepsize_sensitivity(grid, |p| {
                algorithm.with_parameter(p).run(
                    &net,
                    &instance.objectives(),
                    &instance.zero_init(),
                    &mse,
                    &stop,
                )
            });
            let mut csv =
                String::from("algorithm,parameter,final_mse,iterations,diverged,converged\n");
            for c in &cells {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    algorithm.name(),
                    bench::fmt_float(c.parameter),
                    bench::fmt_float(c.final_mse),
                    c.iterations,
                    c.diverged,
                    c.converged
                ));
            }
            write_out(out_dir, "sweep.csv", &csv)?;
            if !quiet {
                let divergent = cells.iter().filter(|c| c.diverged).count();
                println!("{} grid points, {divergent} divergent", cells.len());
            }
        }
        SweepKind::Rwc {
            algorithms,
            sizes,
            lambdas,
            tune_iterations,
            float_cost,
        } => {
            let ProblemConfig::Tracking(base) = &config.problem else {
                return Err("rwc sweeps run on the tracking problem".into());
            };
            let report = bench::sweep_rwc(
                base,
                &config.graph,
                algorithms,
                sizes,
                lambdas,
                &stop,
                *tune_iterations,
                config.normalize_mse,
                *float_cost,
            )
            .map_err(|e| e.to_string())?;
            write_out(out_dir, "sweep.csv", &report.to_csv())?;
            if !quiet {
                let capped = report.cells.iter().filter(|c| !c.converged).count();
                println!("{} cells, {capped} unconverged", report.cells.len());
            }
        }
    }
    Ok(())
}
