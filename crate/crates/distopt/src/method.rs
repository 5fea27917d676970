//! Algorithm selection by name and hyperparameters; the bridge between
//! config files / sweep drivers and the typed algorithm implementations.

use crate::admm::Cadmm;
use crate::error::Result;
use crate::exec::{run_rounds_with, ExecOptions, MseSpec, Network, RunTrace, StopRule};
use crate::gradient::{Canonical, Dda, Dgd, Diging, Extra};
use crate::newton::{NetworkNewton, Next, Surrogate};
use crate::objective::LocalObjective;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

fn default_epsilon() -> f64 {
    1.0
}

fn default_k_inner() -> usize {
    1
}

fn default_mu() -> f64 {
    0.12
}

/// A runnable method: algorithm family plus hyperparameters. Serializes as a
/// tagged JSON object, e.g. `{"kind": "extra", "alpha": 0.05}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    /// Decreasing-step distributed gradient descent.
    Dgd { alpha0: f64 },
    /// Constant-step DGD (converges only to a neighborhood).
    DgdConstant { alpha0: f64 },
    Extra { alpha: f64 },
    Dda { alpha0: f64 },
    /// Canonical fixed-step form with explicit zeta parameters.
    Canonical { alpha: f64, zeta: [f64; 4] },
    /// Canonical form at the EXTRA parameter point (1/2, 1, 0, 0).
    CanonicalExtra { alpha: f64 },
    Diging { alpha: f64 },
    NetworkNewton {
        alpha: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_k_inner")]
        k_inner: usize,
    },
    /// NEXT with the quadratic surrogate and step alpha0 / (1 + mu k).
    NextQ {
        alpha0: f64,
        #[serde(default = "default_mu")]
        mu: f64,
    },
    Cadmm { rho: f64 },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Dgd { .. } => "dgd",
            MethodSpec::DgdConstant { .. } => "dgd_constant",
            MethodSpec::Extra { .. } => "extra",
            MethodSpec::Dda { .. } => "dda",
            MethodSpec::Canonical { .. } => "canonical",
            MethodSpec::CanonicalExtra { .. } => "canonical_extra",
            MethodSpec::Diging { .. } => "diging",
            MethodSpec::NetworkNewton { .. } => "nn-k",
            MethodSpec::NextQ { .. } => "next_q",
            MethodSpec::Cadmm { .. } => "cadmm",
        }
    }

    /// The scalar hyperparameter that golden-section tuning adjusts.
    pub fn tuned_parameter(&self) -> f64 {
        match *self {
            MethodSpec::Dgd { alpha0 }
            | MethodSpec::DgdConstant { alpha0 }
            | MethodSpec::Dda { alpha0 }
            | MethodSpec::NextQ { alpha0, .. } => alpha0,
            MethodSpec::Extra { alpha }
            | MethodSpec::Canonical { alpha, .. }
            | MethodSpec::CanonicalExtra { alpha }
            | MethodSpec::Diging { alpha }
            | MethodSpec::NetworkNewton { alpha, .. } => alpha,
            MethodSpec::Cadmm { rho } => rho,
        }
    }

    /// Same method with the tuned scalar replaced.
    pub fn with_parameter(&self, value: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            MethodSpec::Dgd { alpha0 }
            | MethodSpec::DgdConstant { alpha0 }
            | MethodSpec::Dda { alpha0 }
            | MethodSpec::NextQ { alpha0, .. } => *alpha0 = value,
            MethodSpec::Extra { alpha }
            | MethodSpec::Canonical { alpha, .. }
            | MethodSpec::CanonicalExtra { alpha }
            | MethodSpec::Diging { alpha }
            | MethodSpec::NetworkNewton { alpha, .. } => *alpha = value,
            MethodSpec::Cadmm { rho } => *rho = value,
        }
        out
    }

    /// Public floats a node sends per communication round at decision
    /// dimension `n` (NN-K sends n in each of its K+1 rounds).
    pub fn floats_per_round(&self, n: usize) -> usize {
        match self {
            MethodSpec::Dgd { .. } | MethodSpec::DgdConstant { .. } | MethodSpec::Cadmm { .. } => n,
            MethodSpec::NetworkNewton { .. } => n,
            _ => 2 * n,
        }
    }

    /// Log-scale bounds for golden-section tuning of the scalar parameter.
    /// NEXT's combination weight must stay in (0, 1]; the ADMM penalty has a
    /// wider useful range than the gradient steps.
    pub fn tuning_bounds(&self) -> (f64, f64) {
        match self {
            MethodSpec::NextQ { .. } => (1e-6, 1.0),
            MethodSpec::Cadmm { .. } => (1e-3, 1e3),
            _ => (1e-6, 10.0),
        }
    }

    /// Communication rounds per iteration.
    pub fn rounds_per_iteration(&self) -> usize {
        match self {
            MethodSpec::NetworkNewton { k_inner, .. } => k_inner + 1,
            _ => 1,
        }
    }

    pub fn run(
        &self,
        net: &Network,
        objectives: &[Box<dyn LocalObjective>],
        x0: &[DVector<f64>],
        mse: &MseSpec,
        stop: &StopRule,
    ) -> Result<RunTrace> {
        self.run_with(net, objectives, x0, mse, stop, &ExecOptions::default())
    }

    pub fn run_with(
        &self,
        net: &Network,
        objectives: &[Box<dyn LocalObjective>],
        x0: &[DVector<f64>],
        mse: &MseSpec,
        stop: &StopRule,
        opts: &ExecOptions,
    ) -> Result<RunTrace> {
        match *self {
            MethodSpec::Dgd { alpha0 } => run_rounds_with(
                &Dgd::decreasing(alpha0),
                net,
                objectives,
                x0,
                mse,
                stop,
                opts,
            ),
            MethodSpec::DgdConstant { alpha0 } => run_rounds_with(
                &Dgd::constant(alpha0),
                net,
                objectives,
                x0,
                mse,
                stop,
                opts,
            ),
            MethodSpec::Extra { alpha } => {
                run_rounds_with(&Extra { alpha }, net, objectives, x0, mse, stop, opts)
            }
            MethodSpec::Dda { alpha0 } => {
                run_rounds_with(&Dda { alpha0 }, net, objectives, x0, mse, stop, opts)
            }
            MethodSpec::Canonical { alpha, zeta } => {
                run_rounds_with(&Canonical { alpha, zeta }, net, objectives, x0, mse, stop, opts)
            }
            MethodSpec::CanonicalExtra { alpha } => run_rounds_with(
                &Canonical::extra_params(alpha),
                net,
                objectives,
                x0,
                mse,
                stop,
                opts,
            ),
            MethodSpec::Diging { alpha } => {
                run_rounds_with(&Diging { alpha }, net, objectives, x0, mse, stop, opts)
            }
            MethodSpec::NetworkNewton {
                alpha,
                epsilon,
                k_inner,
            } => run_rounds_with(
                &NetworkNewton {
                    alpha,
                    epsilon,
                    k_inner,
                },
                net,
                objectives,
                x0,
                mse,
                stop,
                opts,
            ),
            MethodSpec::NextQ { alpha0, mu } => run_rounds_with(
                &Next {
                    alpha0,
                    mu,
                    surrogate: Surrogate::Quadratic { tau: None },
                },
                net,
                objectives,
                x0,
                mse,
                stop,
                opts,
            ),
            MethodSpec::Cadmm { rho } => {
                run_rounds_with(&Cadmm { rho }, net, objectives, x0, mse, stop, opts)
            }
        }
    }
}

/// Golden-section tunes the method's scalar on a log10 grid over
/// `[lo, hi]`, scoring by iterations-to-convergence under `stop` (see
/// [`crate::bench::convergence_score`]). Returns the tuned spec and the
/// search result.
pub fn tune_method<F>(
    spec: &MethodSpec,
    lo: f64,
    hi: f64,
    iterations: usize,
    stop: &StopRule,
    mut run: F,
) -> Result<(MethodSpec, crate::bench::GssResult)>
where
    F: FnMut(&MethodSpec) -> Result<RunTrace>,
{
    let result = crate::bench::gss_tune_log10(
        |v| {
            let outcome = run(&spec.with_parameter(v));
            crate::bench::convergence_score(&outcome, stop)
        },
        lo,
        hi,
        iterations,
    )?;
    Ok((spec.with_parameter(result.best), result))
}
