//! Range-only cooperative mapping: nonconvex nonlinear least squares.
//!
//! n robots move along known tracks and record noisy range measurements to m
//! unknown landmarks. The robots cooperatively estimate the stacked landmark
//! positions x (dimension 2m) by minimizing
//!
//! ```text
//! sum_i sum_k sum_{t in T_ik} (w_ik^2 / 2) (||p_i(t) - x_k|| - d_ik(t))^2 ,
//! ```
//!
//! each robot owning its own measurement terms. The cost is smooth but
//! nonconvex; the centralized oracle is the best stationary point found by
//! damped Gauss-Newton from multiple seeded starts.

use crate::error::{Error, Result};
use crate::exec::MseSpec;
use crate::flops::Flops;
use crate::graph::CommGraph;
use crate::objective::{Capabilities, ConstraintSet, LocalObjective, QuadPenalty};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

/// Guard radius below which the range gradient direction is zeroed.
pub const RANGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MappingConfig {
    pub robots: usize,
    pub landmarks: usize,
    pub steps: usize,
    /// Range-noise standard deviation.
    pub sigma: f64,
    /// Robots, tracks and landmarks live in [-arena, arena]^2.
    pub arena: f64,
    /// Robots measure landmarks within this range.
    pub sensing_range: f64,
    /// Term weights w_ik (the paper leaves them unset; 1 by default).
    pub weight: f64,
    pub seed: u64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            robots: 6,
            landmarks: 4,
            steps: 8,
            sigma: 0.05,
            arena: 4.0,
            sensing_range: 12.0,
            weight: 1.0,
            seed: 0,
        }
    }
}

/// One range measurement: robot at `pos` saw landmark `landmark` at range
/// `range` (timestep kept for bookkeeping).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub t: usize,
    pub landmark: usize,
    pub pos: [f64; 2],
    pub range: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MappingInstance {
    pub config: MappingConfig,
    /// Robot tracks: positions per timestep.
    pub tracks: Vec<Vec<[f64; 2]>>,
    pub landmarks: Vec<[f64; 2]>,
    /// Per-robot measurement sets.
    pub measurements: Vec<Vec<RangeMeasurement>>,
    /// Best stationary point found by the multi-start oracle (2m).
    #[serde(with = "super::serialize::dvector")]
    pub solution: DVector<f64>,
    pub solution_cost: f64,
}

pub fn build_mapping_instance(config: &MappingConfig) -> Result<MappingInstance> {
    if config.robots < 1 || config.landmarks < 1 {
        return Err(Error::Argument("mapping needs robots and landmarks".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::Argument(e.to_string()))?;

    let landmarks: Vec<[f64; 2]> = (0..config.landmarks)
        .map(|_| {
            [
                rng.gen_range(-config.arena..config.arena),
                rng.gen_range(-config.arena..config.arena),
            ]
        })
        .collect();

    // Waypoint walks.
    let tracks: Vec<Vec<[f64; 2]>> = (0..config.robots)
        .map(|_| {
            let mut p = [
                rng.gen_range(-config.arena..config.arena),
                rng.gen_range(-config.arena..config.arena),
            ];
            let mut goal = [
                rng.gen_range(-config.arena..config.arena),
                rng.gen_range(-config.arena..config.arena),
            ];
            let speed = 0.25 * config.arena;
            let mut out = Vec::with_capacity(config.steps);
            for t in 0..config.steps {
                out.push(p);
                if t % 3 == 2 {
                    goal = [
                        rng.gen_range(-config.arena..config.arena),
                        rng.gen_range(-config.arena..config.arena),
                    ];
                }
                let d = [goal[0] - p[0], goal[1] - p[1]];
                let norm = (d[0] * d[0] + d[1] * d[1]).sqrt().max(1e-9);
                let step = speed.min(norm);
                p = [p[0] + step * d[0] / norm, p[1] + step * d[1] / norm];
            }
            out
        })
        .collect();

    let mut measurements: Vec<Vec<RangeMeasurement>> = vec![Vec::new(); config.robots];
    for (i, track) in tracks.iter().enumerate() {
        for (t, pos) in track.iter().enumerate() {
            for (k, lm) in landmarks.iter().enumerate() {
                let true_range =
                    ((pos[0] - lm[0]).powi(2) + (pos[1] - lm[1]).powi(2)).sqrt();
                if true_range <= config.sensing_range {
                    let range = (true_range + config.sigma * noise.sample(&mut rng)).max(0.0);
                    measurements[i].push(RangeMeasurement {
                        t,
                        landmark: k,
                        pos: *pos,
                        range,
                    });
                }
            }
        }
    }

    // Geometric diversity: every landmark needs >= 3 observation positions,
    // not all collinear, network-wide.
    for k in 0..config.landmarks {
        let pts: Vec<[f64; 2]> = measurements
            .iter()
            .flatten()
            .filter(|m| m.landmark == k)
            .map(|m| m.pos)
            .collect();
        if pts.len() < 3 {
            return Err(Error::Construction(format!(
                "landmark {k} is observed from only {} positions",
                pts.len()
            )));
        }
        let cx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
        let cy = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in &pts {
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        // Second eigenvalue of the 2x2 scatter matrix.
        let tr = sxx + syy;
        let det = sxx * syy - sxy * sxy;
        let lam2 = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
        if lam2 < 1e-6 {
            return Err(Error::Construction(format!(
                "landmark {k}'s observers are collinear"
            )));
        }
    }

    let mut instance = MappingInstance {
        config: config.clone(),
        tracks,
        landmarks,
        measurements,
        solution: DVector::zeros(2 * config.landmarks),
        solution_cost: f64::INFINITY,
    };
    let oracle = centralized_mapping_solve(&instance, 12)?;
    instance.solution = oracle.0;
    instance.solution_cost = oracle.1;
    Ok(instance)
}

impl MappingInstance {
    pub fn dim(&self) -> usize {
        2 * self.config.landmarks
    }

    pub fn nodes(&self) -> usize {
        self.config.robots
    }

    pub fn objectives(&self) -> Vec<Box<dyn LocalObjective>> {
        (0..self.config.robots)
            .map(|i| {
                Box::new(MappingObjective::new(
                    self.measurements[i].clone(),
                    self.config.landmarks,
                    self.config.weight,
                )) as Box<dyn LocalObjective>
            })
            .collect()
    }

    pub fn zero_init(&self) -> Vec<DVector<f64>> {
        vec![DVector::zeros(self.dim()); self.config.robots]
    }

    pub fn mse_spec(&self) -> MseSpec {
        MseSpec::shared(self.solution.clone())
    }

    /// Stacked true landmark positions.
    pub fn truth(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        for (k, lm) in self.landmarks.iter().enumerate() {
            v[2 * k] = lm[0];
            v[2 * k + 1] = lm[1];
        }
        v
    }

    /// Global cost at x.
    pub fn global_cost(&self, x: &DVector<f64>) -> f64 {
        self.objectives()
            .iter()
            .map(|o| o.eval(x, &mut Flops::new()))
            .sum()
    }

    /// Norm of the global gradient at x.
    pub fn global_grad_norm(&self, x: &DVector<f64>) -> f64 {
        let mut g = DVector::zeros(self.dim());
        for o in self.objectives() {
            g += o.grad(x, &mut Flops::new());
        }
        g.abs().max()
    }

    /// Chain graph over the robots.
    pub fn chain_graph(&self) -> Result<CommGraph> {
        CommGraph::chain(self.config.robots)
    }

    /// Range-limited graph over the robots' mean track positions.
    pub fn range_graph(&self, margin: f64) -> Result<CommGraph> {
        let positions: Vec<[f64; 2]> = self
            .tracks
            .iter()
            .map(|tr| {
                let n = tr.len() as f64;
                [
                    tr.iter().map(|p| p[0]).sum::<f64>() / n,
                    tr.iter().map(|p| p[1]).sum::<f64>() / n,
                ]
            })
            .collect();
        let radius = CommGraph::connectivity_radius(&positions) * margin;
        CommGraph::range_limited(&positions, radius)
    }
}

// ---------------------------------------------------------------------------
// Local objective
// ---------------------------------------------------------------------------

/// One robot's share of the mapping cost.
pub struct MappingObjective {
    terms: Vec<RangeMeasurement>,
    landmarks: usize,
    weight: f64,
    /// Warm start for the penalized argmin (previous outer iterate).
    warm: RefCell<Option<DVector<f64>>>,
}

impl MappingObjective {
    pub fn new(terms: Vec<RangeMeasurement>, landmarks: usize, weight: f64) -> Self {
        Self {
            terms,
            landmarks,
            weight,
            warm: RefCell::new(None),
        }
    }
}

impl LocalObjective for MappingObjective {
    fn dim(&self) -> usize {
        2 * self.landmarks
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            hess: true,
            argmin: true,
            prox: true,
        }
    }

    fn eval(&self, x: &DVector<f64>, flops: &mut Flops) -> f64 {
        let w2 = self.weight * self.weight;
        let mut total = 0.0;
        for m in &self.terms {
            let dx = x[2 * m.landmark] - m.pos[0];
            let dy = x[2 * m.landmark + 1] - m.pos[1];
            let r = (dx * dx + dy * dy).sqrt();
            total += 0.5 * w2 * (r - m.range) * (r - m.range);
        }
        flops.add(9 * self.terms.len() as u64);
        total
    }

    fn grad(&self, x: &DVector<f64>, flops: &mut Flops) -> DVector<f64> {
        // d/dx of (w^2/2)(||x - p|| - d)^2 = w^2 (||x-p|| - d) (x-p)/||x-p||,
        // with the unit direction replaced by zero inside the guard radius.
        let w2 = self.weight * self.weight;
        let mut g = DVector::zeros(self.dim());
        for m in &self.terms {
            let dx = x[2 * m.landmark] - m.pos[0];
            let dy = x[2 * m.landmark + 1] - m.pos[1];
            let r = (dx * dx + dy * dy).sqrt();
            if r < RANGE_EPS {
                continue;
            }
            let scale = w2 * (r - m.range) / r;
            g[2 * m.landmark] += scale * dx;
            g[2 * m.landmark + 1] += scale * dy;
        }
        flops.add(10 * self.terms.len() as u64);
        g
    }

    fn hess(&self, x: &DVector<f64>, flops: &mut Flops) -> Result<DMatrix<f64>> {
        // Exact Hessian per term: w^2 [ (d/r) uu' + (1 - d/r)(I) ] on the
        // landmark's 2x2 block, written as (1 - d/r) I + (d/r) uu'.
        let w2 = self.weight * self.weight;
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for m in &self.terms {
            let k = m.landmark;
            let dx = x[2 * k] - m.pos[0];
            let dy = x[2 * k + 1] - m.pos[1];
            let r2 = dx * dx + dy * dy;
            let r = r2.sqrt();
            if r < RANGE_EPS {
                h[(2 * k, 2 * k)] += w2;
                h[(2 * k + 1, 2 * k + 1)] += w2;
                continue;
            }
            let dr = m.range / r;
            let (ux, uy) = (dx / r, dy / r);
            h[(2 * k, 2 * k)] += w2 * ((1.0 - dr) + dr * ux * ux);
            h[(2 * k + 1, 2 * k + 1)] += w2 * ((1.0 - dr) + dr * uy * uy);
            h[(2 * k, 2 * k + 1)] += w2 * dr * ux * uy;
            h[(2 * k + 1, 2 * k)] += w2 * dr * ux * uy;
        }
        flops.add(16 * self.terms.len() as u64);
        Ok(h)
    }

    fn constraint(&self) -> &ConstraintSet {
        &ConstraintSet::Free
    }

    fn penalized_argmin(
        &self,
        lin: &DVector<f64>,
        penalties: &[QuadPenalty],
        flops: &mut Flops,
    ) -> Result<DVector<f64>> {
        // Solved to completion by damped Newton, warm-started from the
        // previous outer iterate.
        let start = self
            .warm
            .borrow()
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.dim()));
        let out = crate::admm::inner::damped_newton_argmin(self, lin, penalties, &start, flops)?;
        *self.warm.borrow_mut() = Some(out.clone());
        Ok(out)
    }

    fn prox_project(&self, target: &DVector<f64>, _flops: &mut Flops) -> Result<DVector<f64>> {
        Ok(target.clone())
    }
}

// ---------------------------------------------------------------------------
// Multi-start centralized oracle
// ---------------------------------------------------------------------------

/// Damped Gauss-Newton (Levenberg damping) on the stacked residuals
/// `r_j = w (||p_j - x_k|| - d_j)` from one start.
fn gauss_newton_from(
    instance: &MappingInstance,
    start: &DVector<f64>,
) -> Option<(DVector<f64>, f64, f64)> {
    let n = instance.dim();
    let w = instance.config.weight;
    let terms: Vec<&RangeMeasurement> = instance.measurements.iter().flatten().collect();
    let residuals = |x: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(
            terms.len(),
            terms.iter().map(|m| {
                let dx = x[2 * m.landmark] - m.pos[0];
                let dy = x[2 * m.landmark + 1] - m.pos[1];
                w * ((dx * dx + dy * dy).sqrt() - m.range)
            }),
        )
    };
    let jacobian = |x: &DVector<f64>| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(terms.len(), n);
        for (row, m) in terms.iter().enumerate() {
            let dx = x[2 * m.landmark] - m.pos[0];
            let dy = x[2 * m.landmark + 1] - m.pos[1];
            let r = (dx * dx + dy * dy).sqrt();
            if r < RANGE_EPS {
                continue;
            }
            j[(row, 2 * m.landmark)] = w * dx / r;
            j[(row, 2 * m.landmark + 1)] = w * dy / r;
        }
        j
    };

    let mut x = start.clone();
    let mut cost = 0.5 * residuals(&x).norm_squared();
    let mut damping = 1e-4;
    for _ in 0..300 {
        let r = residuals(&x);
        let j = jacobian(&x);
        let g = j.transpose() * &r;
        if g.abs().max() <= 1e-9 {
            return Some((x, cost, g.abs().max()));
        }
        let jtj = j.transpose() * &j;
        let mut accepted = false;
        for _ in 0..40 {
            let mut lhs = jtj.clone();
            for i in 0..n {
                lhs[(i, i)] += damping;
            }
            if let Some(ch) = nalgebra::Cholesky::new(lhs) {
                let step = ch.solve(&(-&g));
                let cand = &x + step;
                let c = 0.5 * residuals(&cand).norm_squared();
                if c <= cost {
                    x = cand;
                    cost = c;
                    damping = (damping * 0.25).max(1e-14);
                    accepted = true;
                    break;
                }
            }
            damping *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let g = jacobian(&x).transpose() * residuals(&x);
    let gnorm = g.abs().max();
    if gnorm <= 1e-8 {
        Some((x, cost, gnorm))
    } else {
        None
    }
}

/// Runs damped Gauss-Newton from `starts` seeded initializations and keeps
/// the lowest-cost stationary point (gradient max-norm below 1e-8).
pub fn centralized_mapping_solve(
    instance: &MappingInstance,
    starts: usize,
) -> Result<(DVector<f64>, f64)> {
    if starts < 8 {
        return Err(Error::Argument("mapping oracle needs at least 8 starts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(instance.config.seed ^ 0x0bac1e);
    let arena = instance.config.arena;
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut best_residual = f64::INFINITY;
    for s in 0..starts {
        // First start at the measurement centroid-ish origin, the rest
        // uniform over the arena.
        let start = if s == 0 {
            DVector::zeros(instance.dim())
        } else {
            DVector::from_fn(instance.dim(), |_, _| rng.gen_range(-arena..arena))
        };
        if let Some((x, cost, gnorm)) = gauss_newton_from(instance, &start) {
            best_residual = best_residual.min(gnorm);
            if best.as_ref().map_or(true, |(_, c)| cost < *c) {
                best = Some((x, cost));
            }
        }
    }
    best.ok_or(Error::InnerSolver {
        message: "no multi-start run reached stationarity".into(),
        residual: best_residual,
        best: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::central_difference_gradient;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_noise_trilateration_recovers_landmark() {
        // Three non-collinear observers, exact ranges: the oracle finds the
        // true landmark and the cost vanishes.
        let config = MappingConfig {
            robots: 3,
            landmarks: 1,
            steps: 1,
            sigma: 0.0,
            seed: 5,
            ..MappingConfig::default()
        };
        let inst = build_mapping_instance(&config).unwrap();
        let truth = inst.truth();
        assert_abs_diff_eq!((&inst.solution - &truth).abs().max(), 0.0, epsilon = 1e-6);
        assert!(inst.solution_cost < 1e-12);
    }

    #[test]
    fn unobserved_landmark_block_has_zero_gradient() {
        let obj = MappingObjective::new(
            vec![RangeMeasurement {
                t: 0,
                landmark: 0,
                pos: [1.0, 0.0],
                range: 2.0,
            }],
            2,
            1.0,
        );
        let x = DVector::from_vec(vec![0.3, -0.4, 5.0, 5.0]);
        let g = obj.grad(&x, &mut Flops::new());
        assert_abs_diff_eq!(g[2], 0.0);
        assert_abs_diff_eq!(g[3], 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let config = MappingConfig {
            robots: 4,
            landmarks: 3,
            steps: 5,
            sigma: 0.05,
            seed: 9,
            ..MappingConfig::default()
        };
        let inst = build_mapping_instance(&config).unwrap();
        let x = DVector::from_fn(inst.dim(), |i, _| (i as f64 * 0.7).cos() * 2.0);
        for obj in inst.objectives() {
            let g = obj.grad(&x, &mut Flops::new());
            let fd = central_difference_gradient(|y| obj.eval(y, &mut Flops::new()), &x, 1e-6);
            for i in 0..x.len() {
                assert_abs_diff_eq!(g[i], fd[i], epsilon = 1e-5 * (1.0 + fd[i].abs()));
            }
        }
    }

    #[test]
    fn hessian_symmetric_and_guard_keeps_cost_finite() {
        let obj = MappingObjective::new(
            vec![RangeMeasurement {
                t: 0,
                landmark: 0,
                pos: [1.0, 1.0],
                range: 0.5,
            }],
            1,
            1.0,
        );
        // Exactly at the singular point.
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let v = obj.eval(&x, &mut Flops::new());
        assert!(v.is_finite());
        let g = obj.grad(&x, &mut Flops::new());
        assert_abs_diff_eq!(g.abs().max(), 0.0);
        let h = obj.hess(&x, &mut Flops::new()).unwrap();
        assert_abs_diff_eq!((&h - h.transpose()).abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_solution_is_stationary_and_monotone_in_starts() {
        let inst = build_mapping_instance(&MappingConfig {
            seed: 3,
            ..MappingConfig::default()
        })
        .unwrap();
        assert!(inst.global_grad_norm(&inst.solution) < 1e-8);
        let (_, cost8) = centralized_mapping_solve(&inst, 8).unwrap();
        let (_, cost16) = centralized_mapping_solve(&inst, 16).unwrap();
        assert!(cost16 <= cost8 + 1e-12);
    }

    #[test]
    fn diversity_check_rejects_single_observer() {
        let config = MappingConfig {
            robots: 1,
            landmarks: 1,
            steps: 1,
            sigma: 0.0,
            seed: 1,
            ..MappingConfig::default()
        };
        assert!(matches!(
            build_mapping_instance(&config),
            Err(Error::Construction(_))
        ));
    }
}
