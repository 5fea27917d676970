//! Metrics, golden-section parameter tuning, and the sweep experiments.
//!
//! Runs are compared on MSE to the centralized solution and on the
//! resource-weighted cost
//!
//! ```text
//! RWC_lambda = (t_cp + lambda * t_cm) / (1 + lambda)
//! ```
//!
//! where `t_cp` sums the compute spent by all robots until convergence and
//! `t_cm` is the number of floats passed over the network (times a
//! configurable per-float cost). `lambda` sweeps over network regimes: 0
//! weighs compute only, large values weigh communication only. The compute
//! side is reported twice: measured processor seconds, and the deterministic
//! flop count used by the hardware-independent checks.

use crate::error::{Error, Result};
use crate::exec::{RunTrace, StopRule, Termination};
use nalgebra::DVector;

/// Golden ratio constant `(sqrt 5 - 1)/2` of the section search.
pub const PHI: f64 = 0.618_033_988_749_894_9;

/// Mean squared error of per-node solutions against a joint reference:
/// `(1/N) sum_i ||Z_i - Z*||^2`.
pub fn mse(solutions: &[DVector<f64>], reference: &DVector<f64>) -> Result<f64> {
    if solutions.is_empty() {
        return Err(Error::Argument("mse needs at least one solution".into()));
    }
    let mut sum = 0.0;
    for s in solutions {
        if s.len() != reference.len() {
            return Err(Error::Argument(format!(
                "mse dimension mismatch: {} vs {}",
                s.len(),
                reference.len()
            )));
        }
        sum += (s - reference).norm_squared();
    }
    Ok(sum / solutions.len() as f64)
}

/// Resource-weighted cost `(t_cp + lambda t_cm) / (1 + lambda)`.
pub fn rwc(t_cp: f64, t_cm: f64, lambda: f64) -> f64 {
    (t_cp + lambda * t_cm) / (1.0 + lambda)
}

// ---------------------------------------------------------------------------
// Golden section search
// ---------------------------------------------------------------------------

/// Four-candidate bracket `a0 < a1 < a2 < a3` with `a1 = a0 + phi^2 h`,
/// `a2 = a0 + phi h`, `h = a3 - a0`.
#[derive(Debug, Clone, Copy)]
pub struct GssBracket {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub h: f64,
}

impl GssBracket {
    pub fn new(a0: f64, a3: f64) -> Self {
        let h = a3 - a0;
        Self {
            a0,
            a1: a0 + PHI * PHI * h,
            a2: a0 + PHI * h,
            a3,
            h,
        }
    }

    /// Keeps the left triple (when `f(a1) < f(a2)`).
    fn shrink_left(&mut self) {
        self.a3 = self.a2;
        self.a2 = self.a1;
        self.h *= PHI;
        self.a1 = self.a0 + PHI * PHI * self.h;
    }

    /// Keeps the right triple.
    fn shrink_right(&mut self) {
        self.a0 = self.a1;
        self.a1 = self.a2;
        self.h *= PHI;
        self.a2 = self.a0 + PHI * self.h;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GssResult {
    pub best: f64,
    pub best_score: f64,
    pub evaluations: usize,
    pub final_width: f64,
}

/// Golden section search over `[a0, a3]`: refines the bracket by the
/// interior-candidate comparison, one fresh evaluation per iteration
/// (`iterations + 2` evaluations total), and returns the best evaluated
/// candidate. Unimodality is assumed; a non-unimodal score still yields the
/// best point seen.
pub fn gss_tune<F>(mut score: F, a0: f64, a3: f64, iterations: usize) -> Result<GssResult>
where
    F: FnMut(f64) -> f64,
{
    if !a0.is_finite() || !a3.is_finite() || a0 > a3 {
        return Err(Error::Argument(format!("bad GSS bracket [{a0}, {a3}]")));
    }
    if a0 == a3 {
        let s = score(a0);
        return Ok(GssResult {
            best: a0,
            best_score: s,
            evaluations: 1,
            final_width: 0.0,
        });
    }
    let mut bracket = GssBracket::new(a0, a3);
    let mut f1 = score(bracket.a1);
    let mut f2 = score(bracket.a2);
    let mut evaluations = 2;
    let mut best = if f1 <= f2 {
        (bracket.a1, f1)
    } else {
        (bracket.a2, f2)
    };
    for _ in 0..iterations {
        // Divergent runs score +inf, and they sit on the large-parameter side
        // of the stability threshold; when both interior candidates are
        // infinite the minimum can only be to the left.
        let keep_left = f1 < f2 || (f1 == f2 && f1.is_infinite());
        if keep_left {
            bracket.shrink_left();
            f2 = f1;
            f1 = score(bracket.a1);
            evaluations += 1;
            if f1 < best.1 {
                best = (bracket.a1, f1);
            }
        } else {
            bracket.shrink_right();
            f1 = f2;
            f2 = score(bracket.a2);
            evaluations += 1;
            if f2 < best.1 {
                best = (bracket.a2, f2);
            }
        }
    }
    Ok(GssResult {
        best: best.0,
        best_score: best.1,
        evaluations,
        final_width: bracket.h,
    })
}

/// GSS on `log10(a)`: scores `10^a` over `[log10(lo), log10(hi)]`.
pub fn gss_tune_log10<F>(mut score: F, lo: f64, hi: f64, iterations: usize) -> Result<GssResult>
where
    F: FnMut(f64) -> f64,
{
    if lo <= 0.0 || hi <= 0.0 {
        return Err(Error::Argument("log-scale GSS needs positive bounds".into()));
    }
    let r = gss_tune(|a| score(10f64.powf(a)), lo.log10(), hi.log10(), iterations)?;
    Ok(GssResult {
        best: 10f64.powf(r.best),
        ..r
    })
}

/// Scalar score of a run for parameter tuning: converged runs order by
/// iterations (final MSE as a fractional tie-break), capped runs order after
/// every converged run by how far above tolerance they ended, divergent runs
/// are +inf.
pub fn convergence_score(outcome: &Result<RunTrace>, stop: &StopRule) -> f64 {
    match outcome {
        Err(_) => f64::INFINITY,
        Ok(trace) => match trace.termination {
            Termination::Diverged { .. } => f64::INFINITY,
            Termination::Converged { iteration } => {
                iteration as f64 + (trace.final_mse() / stop.tol_mse).clamp(0.0, 1.0)
            }
            Termination::IterationCap { .. } => {
                let excess = (trace.final_mse() / stop.tol_mse).log10().clamp(0.0, 300.0);
                stop.cap as f64 + 1.0 + excess
            }
        },
    }
}

// ---------------------------------------------------------------------------
// Step-size sensitivity sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SensitivityCell {
    pub parameter: f64,
    pub final_mse: f64,
    pub iterations: usize,
    pub diverged: bool,
    pub converged: bool,
}

/// Runs `run(parameter)` over a grid and tabulates final MSE after the cap,
/// flagging diverged grid points.
pub fn stepsize_sensitivity<F>(grid: &[f64], mut run: F) -> Vec<SensitivityCell>
where
    F: FnMut(f64) -> Result<RunTrace>,
{
    grid.iter()
        .map(|&parameter| match run(parameter) {
            Err(_) => SensitivityCell {
                parameter,
                final_mse: f64::INFINITY,
                iterations: 0,
                diverged: true,
                converged: false,
            },
            Ok(trace) => SensitivityCell {
                parameter,
                final_mse: trace.final_mse(),
                iterations: trace.iterations(),
                diverged: matches!(trace.termination, Termination::Diverged { .. }),
                converged: trace.converged(),
            },
        })
        .collect()
}

/// Logarithmic grid with `points` values spanning `decades` decades centered
/// on `center`.
pub fn log_grid(center: f64, decades: f64, points: usize) -> Vec<f64> {
    let lo = center.log10() - decades / 2.0;
    let hi = center.log10() + decades / 2.0;
    (0..points)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (points - 1) as f64))
        .collect()
}

// ---------------------------------------------------------------------------
// Resource-weighted cost report
// ---------------------------------------------------------------------------

/// One (algorithm, size, lambda) cell of an RWC sweep.
#[derive(Debug, Clone)]
pub struct RwcCell {
    pub algorithm: String,
    pub nodes: usize,
    pub dim: usize,
    pub lambda: f64,
    pub t_cp_seconds: f64,
    pub t_cp_ops: u64,
    pub t_cm_floats: u64,
    /// RWC with the op-count compute proxy and float-count communication.
    pub rwc: f64,
    pub converged: bool,
    pub iterations: usize,
    pub tuned_parameter: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RwcReport {
    pub cells: Vec<RwcCell>,
    /// Per-float communication cost applied to the float counts.
    pub float_cost: f64,
}

impl RwcReport {
    pub fn new(float_cost: f64) -> Self {
        Self {
            cells: Vec::new(),
            float_cost,
        }
    }

    /// Adds one tuned run, expanded over the lambda grid.
    pub fn push_run(
        &mut self,
        algorithm: &str,
        nodes: usize,
        dim: usize,
        tuned_parameter: f64,
        trace: &RunTrace,
        lambdas: &[f64],
    ) {
        let rec = trace.final_record();
        for &lambda in lambdas {
            self.cells.push(RwcCell {
                algorithm: algorithm.to_string(),
                nodes,
                dim,
                lambda,
                t_cp_seconds: rec.cum_seconds,
                t_cp_ops: rec.cum_ops,
                t_cm_floats: rec.cum_floats,
                rwc: rwc(
                    rec.cum_ops as f64,
                    rec.cum_floats as f64 * self.float_cost,
                    lambda,
                ),
                converged: trace.converged(),
                iterations: trace.iterations(),
                tuned_parameter,
            });
        }
    }

    /// CSV with one row per cell. Floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "algorithm,N,n,lambda,t_cp_seconds,t_cp_ops,t_cm_floats,rwc,converged,iterations\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                c.algorithm,
                c.nodes,
                c.dim,
                fmt_float(c.lambda),
                fmt_float(c.t_cp_seconds),
                c.t_cp_ops,
                c.t_cm_floats,
                fmt_float(c.rwc),
                c.converged,
                c.iterations
            ));
        }
        out
    }
}

/// 17 significant digits, locale-independent: round-trips f64 exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Sweeps the tracking problem across sizes (horizon lengths, n = 4T) and
/// the lambda grid. Each (method, size) cell is GSS-tuned before its final
/// run; cells that hit the cap are flagged, never dropped.
#[allow(clippy::too_many_arguments)]
pub fn sweep_rwc(
    base: &crate::problems::tracking::TrackingConfig,
    graph_config: &crate::problems::GraphConfig,
    methods: &[crate::method::MethodSpec],
    sizes_steps: &[usize],
    lambdas: &[f64],
    stop: &StopRule,
    tune_iterations: usize,
    normalize_mse: bool,
    float_cost: f64,
) -> Result<RwcReport> {
    if sizes_steps.is_empty() || lambdas.is_empty() {
        return Err(Error::Argument("sweep grids must be nonempty".into()));
    }
    let mut report = RwcReport::new(float_cost);
    for &steps in sizes_steps {
        let config = crate::problems::tracking::TrackingConfig {
            steps,
            ..base.clone()
        };
        let instance =
            crate::problems::ProblemInstance::Tracking(crate::problems::tracking::build_tracking_instance(&config)?);
        let graph = graph_config.build(&instance)?;
        let weights = crate::graph::WeightMatrix::metropolis(&graph);
        let net = crate::exec::Network {
            graph: &graph,
            weights: &weights,
        };
        let mut mse = instance.mse_spec();
        mse.normalize = normalize_mse;
        for spec in methods {
            let (lo, hi) = spec.tuning_bounds();
            let (tuned, _) =
                crate::method::tune_method(spec, lo, hi, tune_iterations, stop, |s| {
                    s.run(&net, &instance.objectives(), &instance.zero_init(), &mse, stop)
                })?;
            let trace = tuned.run(&net, &instance.objectives(), &instance.zero_init(), &mse, stop)?;
            report.push_run(
                tuned.name(),
                instance.nodes(),
                instance.dim(),
                tuned.tuned_parameter(),
                &trace,
                lambdas,
            );
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mse_formula() {
        let r = DVector::from_element(1, 1.0);
        let sols = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 3.0)];
        assert_abs_diff_eq!(mse(&sols, &r).unwrap(), 2.0);
        // All equal the reference: zero.
        let same = vec![r.clone(), r.clone()];
        assert_abs_diff_eq!(mse(&same, &r).unwrap(), 0.0);
        // Translation invariance.
        let t = DVector::from_element(1, 5.0);
        let shifted: Vec<DVector<f64>> = sols.iter().map(|s| s + &t).collect();
        assert_abs_diff_eq!(mse(&shifted, &(r + t)).unwrap(), 2.0);
    }

    #[test]
    fn mse_dimension_mismatch() {
        let r = DVector::zeros(2);
        let sols = vec![DVector::zeros(3)];
        assert!(mse(&sols, &r).is_err());
    }

    #[test]
    fn rwc_endpoints_and_mean() {
        assert_abs_diff_eq!(rwc(2.0, 4.0, 0.0), 2.0);
        assert_abs_diff_eq!(rwc(2.0, 4.0, 1.0), 3.0);
        let near_cm = rwc(2.0, 4.0, 1e9);
        assert!((near_cm - 4.0).abs() / 4.0 < 1e-6);
    }

    #[test]
    fn rwc_monotone_toward_t_cm() {
        let mut last = rwc(1.0, 10.0, 0.0);
        for i in 1..40 {
            let lambda = 10f64.powf(i as f64 / 4.0 - 3.0);
            let v = rwc(1.0, 10.0, lambda);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn gss_finds_parabola_minimum() {
        let r = gss_tune(|a| (a - 2.0) * (a - 2.0), 0.0, 5.0, 30).unwrap();
        assert!((r.best - 2.0).abs() < 1e-4, "got {}", r.best);
        assert_eq!(r.evaluations, 32);
    }

    #[test]
    fn gss_bracket_width_contracts_exactly() {
        // Width after k iterations is phi^k h, via the same repeated product.
        let iters = 17;
        let r = gss_tune(|a| a * a, -1.0, 3.0, iters).unwrap();
        let mut h = 4.0;
        for _ in 0..iters {
            h *= PHI;
        }
        assert_eq!(r.final_width, h);
    }

    #[test]
    fn gss_zero_width_returns_single_point() {
        let r = gss_tune(|a| a, 2.0, 2.0, 10).unwrap();
        assert_eq!(r.best, 2.0);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn gss_log_scale() {
        // score(a) = (log10 a - 1)^2: minimum at a = 10.
        let r = gss_tune_log10(|a| (a.log10() - 1.0) * (a.log10() - 1.0), 1e-3, 1e3, 40).unwrap();
        assert!((r.best - 10.0).abs() / 10.0 < 1e-3);
    }

    #[test]
    fn bracket_invariants() {
        let b = GssBracket::new(0.0, 1.0);
        assert!(b.a0 < b.a1 && b.a1 < b.a2 && b.a2 < b.a3);
        assert_abs_diff_eq!(b.a1, PHI * PHI, epsilon = 1e-15);
        assert_abs_diff_eq!(b.a2, PHI, epsilon = 1e-15);
    }
}
