//! Scratch: delivery and mapping benchmark behavior for the distributed
//! methods (convergence, iteration counts, runtimes).

use distopt::exec::{Network, StopRule};
use distopt::graph::WeightMatrix;
use distopt::method::{tune_method, MethodSpec};
use distopt::problems::delivery::{build_delivery_instance, DeliveryConfig};
use distopt::problems::mapping::{build_mapping_instance, MappingConfig};

fn main() {
    // ---- delivery ----
    let inst = build_delivery_instance(&DeliveryConfig::default()).unwrap();
    println!(
        "delivery: dim={} nodes={} ||Z*||^2={:.3e} cost*={:.4}",
        inst.dim,
        inst.nodes(),
        inst.solution.norm_squared(),
        inst.global_cost(&inst.solution)
    );
    let graph = inst.range_graph(1.1).unwrap();
    println!("delivery graph edges: {}", graph.edge_count());
    let weights = WeightMatrix::metropolis(&graph);
    let net = Network {
        graph: &graph,
        weights: &weights,
    };
    let mut mse = inst.mse_spec();
    mse.normalize = true;
    let stop = StopRule::new(1e-6, 10_000);

    for spec in [
        MethodSpec::Cadmm { rho: 1.0 },
        MethodSpec::NextQ { alpha0: 0.5, mu: 0.12 },
        MethodSpec::Dda { alpha0: 0.01 },
    ] {
        let t0 = std::time::Instant::now();
        let (lo, hi) = spec.tuning_bounds();
        match tune_method(&spec, lo, hi, 13, &stop, |s| {
            s.run(&net, &inst.objectives(), &inst.zero_init(), &mse, &stop)
        }) {
            Ok((tuned, _)) => {
                let trace = tuned
                    .run(&net, &inst.objectives(), &inst.zero_init(), &mse, &stop)
                    .unwrap();
                let first_rel = trace.records[0].mse;
                println!(
                    "{:<8} tuned={:.3e} iters={:>6} nmse={:.2e} (start {:.2e}) to1e-3rel={:?} ops={:.2e} floats={:.2e} {:?} [{:.1}s]",
                    tuned.name(),
                    tuned.tuned_parameter(),
                    trace.iterations(),
                    trace.final_mse(),
                    first_rel,
                    trace.first_below(first_rel * 1e-3),
                    trace.final_record().cum_ops as f64,
                    trace.final_record().cum_floats as f64,
                    trace.termination,
                    t0.elapsed().as_secs_f64()
                );
            }
            Err(e) => println!("{:<8} tuning failed: {e}", spec.name()),
        }
    }

    // ---- mapping ----
    let inst = build_mapping_instance(&MappingConfig::default()).unwrap();
    println!(
        "\nmapping: dim={} nodes={} ||x*||^2={:.3e} cost*={:.4e} terms/node={:?}",
        inst.dim(),
        inst.nodes(),
        inst.solution.norm_squared(),
        inst.solution_cost,
        inst.measurements.iter().map(|m| m.len()).collect::<Vec<_>>()
    );
    let graph = inst.range_graph(1.1).unwrap();
    println!("mapping graph edges: {}", graph.edge_count());
    let weights = WeightMatrix::metropolis(&graph);
    let net = Network {
        graph: &graph,
        weights: &weights,
    };
    let mut mse = inst.mse_spec();
    mse.normalize = true;
    let stop = StopRule::new(1e-10, 10_000); // run deep; look at 1e-4 crossing
    for spec in [MethodSpec::Extra { alpha: 0.01 }, MethodSpec::Cadmm { rho: 1.0 }] {
        let t0 = std::time::Instant::now();
        let (lo, hi) = spec.tuning_bounds();
        match tune_method(&spec, lo, hi, 13, &stop, |s| {
            s.run(&net, &inst.objectives(), &inst.zero_init(), &mse, &stop)
        }) {
            Ok((tuned, _)) => {
                let trace = tuned
                    .run(&net, &inst.objectives(), &inst.zero_init(), &mse, &stop)
                    .unwrap();
                println!(
                    "{:<8} tuned={:.3e} iters={:>6} nmse={:.2e} to1e-4={:?} {:?} [{:.1}s]",
                    tuned.name(),
                    tuned.tuned_parameter(),
                    trace.iterations(),
                    trace.final_mse(),
                    trace.first_below(1e-4),
                    trace.termination,
                    t0.elapsed().as_secs_f64()
                );
            }
            Err(e) => println!("{:<8} tuning failed: {e}", spec.name()),
        }
    }

    // sigma = 0 recovery
    let inst0 = build_mapping_instance(&MappingConfig {
        sigma: 0.0,
        ..MappingConfig::default()
    })
    .unwrap();
    println!(
        "sigma=0: |solution-truth|_inf = {:.2e}, cost* = {:.2e}",
        (&inst0.solution - inst0.truth()).abs().max(),
        inst0.solution_cost
    );
}
