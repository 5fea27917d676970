//! Scratch: criterion-style sweep over (N, graph) cells and NEXT-Q mu probe.

use distopt::exec::{MseSpec, Network, StopRule};
use distopt::graph::WeightMatrix;
use distopt::method::{tune_method, MethodSpec};
use distopt::problems::tracking::{build_tracking_instance, TrackingConfig};

fn main() {
    let tol = 1e-6; // on normalized MSE
    for robots in [4usize, 10] {
        let inst = build_tracking_instance(&TrackingConfig {
            robots,
            ..TrackingConfig::default()
        })
        .unwrap();
        for graph_kind in ["chain", "range"] {
            let graph = if graph_kind == "range" {
                inst.range_graph(1.1).unwrap()
            } else {
                inst.chain_graph().unwrap()
            };
            let weights = WeightMatrix::metropolis(&graph);
            let net = Network {
                graph: &graph,
                weights: &weights,
            };
            let mut mse = inst.mse_spec();
            mse.normalize = true;
            let stop = StopRule::new(tol, 10_000);
            println!("=== N={robots} {graph_kind} (edges={}) ===", graph.edge_count());
            let methods = [
                MethodSpec::Dgd { alpha0: 0.01 },
                MethodSpec::Extra { alpha: 0.01 },
                MethodSpec::Diging { alpha: 0.01 },
                MethodSpec::CanonicalExtra { alpha: 0.01 },
                MethodSpec::Dda { alpha0: 0.01 },
                MethodSpec::NetworkNewton { alpha: 0.01, epsilon: 1.0, k_inner: 1 },
                MethodSpec::NextQ { alpha0: 0.5, mu: 0.12 },
                MethodSpec::Cadmm { rho: 1.0 },
            ];
            for spec in &methods {
                let (lo, hi) = spec.tuning_bounds();
                let (tuned, _) = tune_method(spec, lo, hi, 13, &stop, |s| {
                    s.run(&net, &inst.objectives(), &inst.zero_init(), &mse, &stop)
                })
                .unwrap();
                let t = tuned
                    .run(&net, &inst.objectives(), &inst.zero_init(), &mse, &stop)
                    .unwrap();
                println!(
                    "  {:<16} tuned={:.3e} iters={:>6} nmse={:.2e} {:?}",
                    tuned.name(),
                    tuned.tuned_parameter(),
                    t.iterations(),
                    t.final_mse(),
                    t.termination
                );
            }
        }
    }

    // NEXT-Q mu probe on the N=10 range cell.
    let inst = build_tracking_instance(&TrackingConfig::default()).unwrap();
    let graph = inst.range_graph(1.1).unwrap();
    let weights = WeightMatrix::metropolis(&graph);
    let net = Network {
        graph: &graph,
        weights: &weights,
    };
    let mut mse = inst.mse_spec();
    mse.normalize = true;
    let stop = StopRule::new(tol, 10_000);
    let (extra, _) = tune_method(&MethodSpec::Extra { alpha: 0.01 }, 1e-6, 10.0, 13, &stop, |s| {
        s.run(&net, &inst.objectives(), &inst.zero_init(), &mse, &stop)
    })
    .unwrap();
    let extra_iters = extra
        .run(&net, &inst.objectives(), &inst.zero_init(), &mse, &stop)
        .unwrap()
        .iterations();
    println!("extra iters: {extra_iters}");
    for mu in [0.08, 0.1, 0.12, 0.14, 0.16] {
        let (tuned, _) = tune_method(
            &MethodSpec::NextQ { alpha0: 0.5, mu },
            1e-6,
            1.0,
            13,
            &stop,
            |s| s.run(&net, &inst.objectives(), &inst.zero_init(), &mse, &stop),
        )
        .unwrap();
        let t = tuned
            .run(&net, &inst.objectives(), &inst.zero_init(), &mse, &stop)
            .unwrap();
        println!(
            "  next-q mu={mu}: tuned={:.3e} iters={} ratio={:.1} {:?}",
            tuned.tuned_parameter(),
            t.iterations(),
            t.iterations() as f64 / extra_iters as f64,
            t.termination
        );
    }
}
