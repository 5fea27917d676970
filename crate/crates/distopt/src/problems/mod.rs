//! Benchmark problem generators with centralized oracles: multi-drone
//! target tracking (linear least squares), coordinated package delivery
//! (constrained QP), and range-only cooperative mapping (nonconvex NLS).

pub mod delivery;
pub mod ipm;
pub mod mapping;
pub mod serialize;
pub mod tracking;

use crate::error::{Error, Result};
use crate::exec::MseSpec;
use crate::graph::CommGraph;
use crate::objective::LocalObjective;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Problem selector plus parameters, as it appears in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Tracking(tracking::TrackingConfig),
    Delivery(delivery::DeliveryConfig),
    Mapping(mapping::MappingConfig),
}

impl ProblemConfig {
    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ProblemConfig::Tracking(c) => c.seed = seed,
            ProblemConfig::Delivery(c) => c.seed = seed,
            ProblemConfig::Mapping(c) => c.seed = seed,
        }
    }

    pub fn build(&self) -> Result<ProblemInstance> {
        Ok(match self {
            ProblemConfig::Tracking(c) => {
                ProblemInstance::Tracking(tracking::build_tracking_instance(c)?)
            }
            ProblemConfig::Delivery(c) => {
                ProblemInstance::Delivery(delivery::build_delivery_instance(c)?)
            }
            ProblemConfig::Mapping(c) => {
                ProblemInstance::Mapping(mapping::build_mapping_instance(c)?)
            }
        })
    }
}

/// Assembled benchmark: local objectives, centralized-oracle solution, and
/// the node geometry. Serializes to a JSON document so runs are replayable
/// without the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemInstance {
    Tracking(tracking::TrackingInstance),
    Delivery(delivery::DeliveryInstance),
    Mapping(mapping::MappingInstance),
}

impl ProblemInstance {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemInstance::Tracking(_) => "tracking",
            ProblemInstance::Delivery(_) => "delivery",
            ProblemInstance::Mapping(_) => "mapping",
        }
    }

    pub fn nodes(&self) -> usize {
        match self {
            ProblemInstance::Tracking(i) => i.robots(),
            ProblemInstance::Delivery(i) => i.nodes(),
            ProblemInstance::Mapping(i) => i.nodes(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemInstance::Tracking(i) => i.dim(),
            ProblemInstance::Delivery(i) => i.dim,
            ProblemInstance::Mapping(i) => i.dim(),
        }
    }

    pub fn objectives(&self) -> Vec<Box<dyn LocalObjective>> {
        match self {
            ProblemInstance::Tracking(i) => i.objectives(),
            ProblemInstance::Delivery(i) => i.objectives(),
            ProblemInstance::Mapping(i) => i.objectives(),
        }
    }

    pub fn zero_init(&self) -> Vec<DVector<f64>> {
        vec![DVector::zeros(self.dim()); self.nodes()]
    }

    pub fn solution(&self) -> &DVector<f64> {
        match self {
            ProblemInstance::Tracking(i) => &i.solution,
            ProblemInstance::Delivery(i) => &i.solution,
            ProblemInstance::Mapping(i) => &i.solution,
        }
    }

    pub fn mse_spec(&self) -> MseSpec {
        MseSpec::shared(self.solution().clone())
    }

    pub fn chain_graph(&self) -> Result<CommGraph> {
        CommGraph::chain(self.nodes())
    }

    /// Range-limited graph over the problem's node positions; the radius is
    /// the connectivity threshold scaled by `margin`.
    pub fn range_graph(&self, margin: f64) -> Result<CommGraph> {
        match self {
            ProblemInstance::Tracking(i) => i.range_graph(margin),
            ProblemInstance::Delivery(i) => i.range_graph(margin),
            ProblemInstance::Mapping(i) => i.range_graph(margin),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Argument(format!("serialize: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Argument(format!("parse instance: {e}")))
    }
}

/// Graph selector in config files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphConfig {
    Chain,
    /// Range-limited over the instance's node positions. `margin` scales the
    /// smallest connectivity-preserving radius (default 1.1); an explicit
    /// `radius` overrides it.
    RangeLimited {
        #[serde(default)]
        margin: Option<f64>,
        #[serde(default)]
        radius: Option<f64>,
    },
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig::Chain
    }
}

impl GraphConfig {
    pub fn build(&self, instance: &ProblemInstance) -> Result<CommGraph> {
        match self {
            GraphConfig::Chain => instance.chain_graph(),
            GraphConfig::RangeLimited { margin, radius } => match radius {
                Some(r) => {
                    let positions = match instance {
                        ProblemInstance::Tracking(i) => i.robot_positions.clone(),
                        ProblemInstance::Delivery(i) => i.positions(),
                        ProblemInstance::Mapping(i) => i
                            .tracks
                            .iter()
                            .map(|tr| tr[0])
                            .collect(),
                    };
                    CommGraph::range_limited(&positions, *r)
                }
                None => instance.range_graph(margin.unwrap_or(1.1)),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_json_round_trip_preserves_solution() {
        let config = ProblemConfig::Tracking(tracking::TrackingConfig {
            robots: 3,
            steps: 4,
            seed: 8,
            ..tracking::TrackingConfig::default()
        });
        let inst = config.build().unwrap();
        let json = inst.to_json().unwrap();
        let back = ProblemInstance::from_json(&json).unwrap();
        assert_eq!(back.solution(), inst.solution());
        assert_eq!(back.nodes(), inst.nodes());
    }
}
