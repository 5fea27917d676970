//! Scratch: DIGing/NEXT trajectories on the default tracking instance.

use distopt::exec::{Network, StopRule};
use distopt::graph::WeightMatrix;
use distopt::method::MethodSpec;
use distopt::problems::tracking::{build_tracking_instance, TrackingConfig};

fn main() {
    let inst = build_tracking_instance(&TrackingConfig::default()).unwrap();
    let graph = inst.chain_graph().unwrap();
    let weights = WeightMatrix::metropolis(&graph);
    let eigs = weights.eigenvalues();
    println!("W eigs: min={:.4} max={:.4} second={:.4}", eigs[0], eigs[eigs.len()-1], eigs[eigs.len()-2]);
    let net = Network { graph: &graph, weights: &weights };

    for alpha in [1e-5, 1e-4, 1e-3, 1e-2] {
        let stop = StopRule::new(1e-6, 400);
        let spec = MethodSpec::Diging { alpha };
        let trace = spec.run(&net, &inst.objectives(), &inst.zero_init(), &inst.mse_spec(), &stop);
        match trace {
            Ok(t) => {
                let head: Vec<String> = t.records.iter().step_by(40).map(|r| format!("{:.2e}", r.mse)).collect();
                println!("diging a={alpha:.1e}: {:?} -> {:?}", t.termination, head);
            }
            Err(e) => println!("diging a={alpha:.1e}: error {e}"),
        }
        let spec = MethodSpec::NextQ { alpha0: alpha * 100.0, mu: 0.01 };
        let trace = spec.run(&net, &inst.objectives(), &inst.zero_init(), &inst.mse_spec(), &stop);
        match trace {
            Ok(t) => {
                let head: Vec<String> = t.records.iter().step_by(40).map(|r| format!("{:.2e}", r.mse)).collect();
                println!("next-q a0={:.1e}: {:?} -> {:?}", alpha * 100.0, t.termination, head);
            }
            Err(e) => println!("next-q a0={:.1e}: error {e}", alpha * 100.0),
        }
    }
}
