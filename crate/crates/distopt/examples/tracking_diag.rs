//! Diagnostic: conditioning of the default tracking instance and tuned
//! iteration counts per method. Useful when picking instance defaults.

use distopt::bench;
use distopt::exec::{Network, StopRule};
use distopt::graph::WeightMatrix;
use distopt::method::{tune_method, MethodSpec};
use distopt::problems::tracking::{build_tracking_instance, TrackingConfig};
use nalgebra::DMatrix;

fn main() {
    let config = TrackingConfig::default();
    let inst = build_tracking_instance(&config).unwrap();
    println!(
        "instance: N={} T={} n={} degenerate={:?}",
        config.robots,
        config.steps,
        inst.dim(),
        inst.degenerate_robots
    );
    for (i, o) in inst.observations.iter().enumerate() {
        print!("{}:{} ", i, o.len());
    }
    println!();

    // Global normal-matrix conditioning.
    let objectives = inst.objectives();
    let n = inst.dim();
    let mut normal = DMatrix::zeros(n, n);
    for o in &objectives {
        let h = o
            .hess(&inst.solution, &mut distopt::Flops::new())
            .expect("hessian");
        normal += h;
    }
    let eigs = normal.symmetric_eigen().eigenvalues;
    let lmax = eigs.iter().cloned().fold(f64::MIN, f64::max);
    let lmin = eigs.iter().cloned().fold(f64::MAX, f64::min);
    println!("global curvature: lmin={lmin:.4e} lmax={lmax:.4e} kappa={:.2e}", lmax / lmin);

    // Local gradient heterogeneity at the solution.
    let gnorms: Vec<f64> = objectives
        .iter()
        .map(|o| o.grad(&inst.solution, &mut distopt::Flops::new()).norm())
        .collect();
    println!("grad norms at x*: {gnorms:.3?}");
    println!("mse at x0=0: {:.4e}", inst.solution.norm_squared());

    let use_range = std::env::args().any(|a| a == "range");
    let graph = if use_range { inst.range_graph(1.1).unwrap() } else { inst.chain_graph().unwrap() };
    println!("graph: {} edges={} fiedler={:.3}", if use_range { "range" } else { "chain" }, graph.edge_count(), graph.fiedler_value());
    let weights = WeightMatrix::metropolis(&graph);
    let net = Network {
        graph: &graph,
        weights: &weights,
    };
    let stop = StopRule::new(1e-6, 10_000);
    let methods = [
        MethodSpec::Dgd { alpha0: 0.01 },
        MethodSpec::Extra { alpha: 0.01 },
        MethodSpec::Diging { alpha: 0.01 },
        MethodSpec::CanonicalExtra { alpha: 0.01 },
        MethodSpec::Dda { alpha0: 0.01 },
        MethodSpec::NetworkNewton {
            alpha: 0.01,
            epsilon: 1.0,
            k_inner: 1,
        },
        MethodSpec::NextQ { alpha0: 0.5, mu: 0.01 },
        MethodSpec::Cadmm { rho: 1.0 },
    ];
    for spec in &methods {
        let t0 = std::time::Instant::now();
        let tuned = tune_method(spec, 1e-6, 10.0, 13, &stop, |s| {
            s.run(&net, &inst.objectives(), &inst.zero_init(), &inst.mse_spec(), &stop)
        });
        match tuned {
            Ok((tuned_spec, gss)) => {
                let trace = tuned_spec
                    .run(&net, &inst.objectives(), &inst.zero_init(), &inst.mse_spec(), &stop)
                    .unwrap();
                println!(
                    "{:<16} tuned={:.4e} iters={:>6} mse={:.3e} ops={:.3e} floats={:.3e} {:?} evals={} [{:.1}s]",
                    tuned_spec.name(),
                    tuned_spec.tuned_parameter(),
                    trace.iterations(),
                    trace.final_mse(),
                    trace.final_record().cum_ops as f64,
                    trace.final_record().cum_floats as f64,
                    trace.termination,
                    gss.evaluations,
                    t0.elapsed().as_secs_f64(),
                );
                let _ = bench::rwc(1.0, 1.0, 1.0);
            }
            Err(e) => println!("{:<16} tuning failed: {e}", spec.name()),
        }
    }

    // Manual grids for the floor-limited methods.
    for (name, mk) in [
        ("dgd", &(|a: f64| MethodSpec::Dgd { alpha0: a }) as &dyn Fn(f64) -> MethodSpec),
        ("dda", &|a| MethodSpec::Dda { alpha0: a }),
        ("diging", &|a| MethodSpec::Diging { alpha: a }),
        ("nn-1", &|a| MethodSpec::NetworkNewton { alpha: a, epsilon: 1.0, k_inner: 1 }),
        ("next_q", &|a| MethodSpec::NextQ { alpha0: a, mu: 0.01 }),
    ] {
        print!("{name:<8}");
        for exp in [-5.0f64, -4.5, -4.0, -3.5, -3.0, -2.5, -2.0, -1.5, -1.0, -0.5, 0.0] {
            let spec = mk(10f64.powf(exp));
            let trace = spec.run(&net, &inst.objectives(), &inst.zero_init(), &inst.mse_spec(), &stop);
            match trace {
                Ok(t) => {
                    let tag = match t.termination {
                        distopt::Termination::Converged { iteration } => format!("c@{iteration}"),
                        distopt::Termination::IterationCap { .. } => format!("{:.0e}", t.final_mse()),
                        distopt::Termination::Diverged { .. } => "DIV".to_string(),
                    };
                    print!(" 1e{exp}:{tag}");
                }
                Err(_) => print!(" 1e{exp}:ERR"),
            }
        }
        println!();
    }
}
