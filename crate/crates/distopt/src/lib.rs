//! Distributed consensus optimization toolkit for multi-robot benchmarks.
//!
//! The crate simulates a network of robots that cooperatively minimize a
//! separable cost `f(x) = Σ_i f_i(x)` by exchanging messages over an
//! undirected communication graph, one synchronous round per iteration.
//! Three algorithm families are provided:
//!
//! - distributed gradient descent: DGD, EXTRA, DDA, DIGing and a canonical
//!   fixed-step form covering them ([`gradient`]),
//! - distributed sequential convex programming: Network Newton-K and NEXT
//!   with linear/quadratic surrogates ([`newton`]),
//! - consensus ADMM and its separable-variable variant SOVA ([`admm`]).
//!
//! The [`problems`] module builds the three benchmark scenarios (multi-drone
//! target tracking, coordinated package delivery, range-only cooperative
//! mapping) together with centralized oracle solutions, and [`bench`]
//! provides MSE / resource-weighted-cost metrics, golden section parameter
//! tuning, and the sweep experiments.

pub mod admm;
pub mod bench;
pub mod error;
pub mod exec;
pub mod flops;
pub mod gradient;
pub mod graph;
pub mod method;
pub mod newton;
pub mod objective;
pub mod problems;

pub use error::{Error, Result};
pub use exec::{run_rounds, NodeEnvelope, RunTrace, StopRule, Termination};
pub use flops::Flops;
pub use graph::{CommGraph, WeightMatrix};
pub use objective::{ConstraintSet, LocalObjective};
