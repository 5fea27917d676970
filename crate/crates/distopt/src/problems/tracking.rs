//! Multi-drone target tracking: distributed linear least squares.
//!
//! N drones observe a moving target when it comes within sensing range and
//! cooperatively estimate its whole trajectory. Each drone models the target
//! as a linear system
//!
//! ```text
//! x_{t+1} = A x_t + w_t,      w ~ N(0, Q),
//! y_{i,t} = C x_t + v_{i,t},  v ~ N(0, R),   t in T_i,
//! ```
//!
//! with a Gaussian prior N(mu0, Sigma0) on the initial state. Stacking the
//! T states (position and velocity, 4 per step) gives a weighted linear
//! least-squares problem per robot,
//!
//! ```text
//! f_i(x) = || z_i - H_i x ||^2_{W_i^{-1}},
//! H_i = [P_i; G_i (x) C],   W_i = diag(N Sigma0, N Q, ..., R, ...),
//! ```
//!
//! where P_i is the unit lower block-bidiagonal dynamics chain (prior row
//! plus -A sub-diagonal) and G_i one-hot selects the observed timesteps. The
//! shared prior/dynamics terms carry the 1/N factor (folded into W_i) so the
//! local costs sum exactly to the global cost. The centralized oracle solves
//! the stacked normal equations.

use crate::error::{Error, Result};
use crate::exec::MseSpec;
use crate::graph::CommGraph;
use crate::objective::{LocalObjective, QuadraticObjective};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const STATE_DIM: usize = 4;
pub const MEAS_DIM: usize = 2;

/// How the ground-truth trajectory is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    /// Waypoint-steered unicycle at constant speed; the robots' linear model
    /// is only an approximation of it.
    Unicycle { speed: f64, turn_rate: f64 },
    /// Exact propagation of the linear model from an initial state (used by
    /// the zero-noise consistency checks).
    Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub robots: usize,
    pub steps: usize,
    pub dt: f64,
    pub sensing_range: f64,
    /// Robots and waypoints are placed in [-arena, arena]^2.
    pub arena: f64,
    /// Standard deviation of the measurement noise actually drawn (the cost
    /// keeps R fixed).
    pub meas_noise: f64,
    /// Standard deviation of the prior-mean perturbation.
    pub prior_noise: f64,
    pub ground_truth: GroundTruth,
    pub seed: u64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        // Defaults shaped after the paper's N = 10, T = 16 (n = 64) instance.
        Self {
            robots: 10,
            steps: 16,
            dt: 1.0,
            sensing_range: 14.0,
            arena: 8.0,
            meas_noise: 0.05,
            prior_noise: 0.05,
            ground_truth: GroundTruth::Unicycle {
                speed: 1.0,
                turn_rate: 0.5,
            },
            seed: 0,
        }
    }
}

/// One measurement taken at timestep `t` (0-based).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observation {
    pub t: usize,
    pub y: [f64; MEAS_DIM],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackingInstance {
    pub config: TrackingConfig,
    #[serde(with = "super::serialize::dmatrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "super::serialize::dmatrix")]
    pub c: DMatrix<f64>,
    #[serde(with = "super::serialize::dmatrix")]
    pub q: DMatrix<f64>,
    #[serde(with = "super::serialize::dmatrix")]
    pub r: DMatrix<f64>,
    #[serde(with = "super::serialize::dmatrix")]
    pub sigma0: DMatrix<f64>,
    #[serde(with = "super::serialize::dvector")]
    pub mu0: DVector<f64>,
    pub robot_positions: Vec<[f64; 2]>,
    /// Per-robot observations, sorted by timestep.
    pub observations: Vec<Vec<Observation>>,
    /// True stacked trajectory (4T).
    #[serde(with = "super::serialize::dvector")]
    pub truth: DVector<f64>,
    /// Centralized normal-equations solution (4T).
    #[serde(with = "super::serialize::dvector")]
    pub solution: DVector<f64>,
    /// Robots whose observation set came out empty (instance stays valid:
    /// the prior and dynamics terms are shared).
    pub degenerate_robots: Vec<usize>,
}

/// `A(dt)`: constant-velocity integrator on (px, py, vx, vy).
pub fn dynamics_matrix(dt: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        STATE_DIM,
        STATE_DIM,
        &[
            1.0, 0.0, dt, 0.0, //
            0.0, 1.0, 0.0, dt, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    )
}

/// `C`: positions observed directly.
pub fn observation_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(MEAS_DIM, STATE_DIM, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
}

fn simulate_truth(config: &TrackingConfig, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let t_steps = config.steps;
    let mut states = Vec::with_capacity(t_steps);
    match config.ground_truth {
        GroundTruth::Linear => {
            let a = dynamics_matrix(config.dt);
            let mut x = DVector::from_vec(vec![
                -0.6 * config.arena,
                rng.gen_range(-0.5..0.5) * config.arena,
                config.arena / (config.dt * t_steps as f64),
                rng.gen_range(-0.2..0.2),
            ]);
            for _ in 0..t_steps {
                states.push(x.clone());
                x = &a * &x;
            }
        }
        GroundTruth::Unicycle { speed, turn_rate } => {
            // Constant speed, bounded turn rate, steering toward 3 random
            // waypoints visited in sequence.
            let waypoints: Vec<[f64; 2]> = (0..3)
                .map(|_| {
                    [
                        rng.gen_range(-config.arena..config.arena),
                        rng.gen_range(-config.arena..config.arena),
                    ]
                })
                .collect();
            let mut px = -0.7 * config.arena;
            let mut py = rng.gen_range(-0.5..0.5) * config.arena;
            let mut theta: f64 = rng.gen_range(-0.5..0.5);
            let mut wp = 0usize;
            let switch_every = t_steps.div_ceil(waypoints.len());
            for t in 0..t_steps {
                if t > 0 && t % switch_every == 0 && wp + 1 < waypoints.len() {
                    wp += 1;
                }
                let (gx, gy) = (waypoints[wp][0], waypoints[wp][1]);
                let desired = (gy - py).atan2(gx - px);
                let mut dtheta = desired - theta;
                while dtheta > std::f64::consts::PI {
                    dtheta -= 2.0 * std::f64::consts::PI;
                }
                while dtheta < -std::f64::consts::PI {
                    dtheta += 2.0 * std::f64::consts::PI;
                }
                theta += dtheta.clamp(-turn_rate * config.dt, turn_rate * config.dt);
                let vx = speed * theta.cos();
                let vy = speed * theta.sin();
                states.push(DVector::from_vec(vec![px, py, vx, vy]));
                px += vx * config.dt;
                py += vy * config.dt;
            }
        }
    }
    let mut out = DVector::zeros(STATE_DIM * t_steps);
    for (t, s) in states.iter().enumerate() {
        out.rows_mut(STATE_DIM * t, STATE_DIM).copy_from(s);
    }
    out
}

/// Builds a tracking instance: simulated truth, range-limited observations,
/// per-robot least-squares blocks, and the centralized solution.
pub fn build_tracking_instance(config: &TrackingConfig) -> Result<TrackingInstance> {
    let (n_robots, t_steps) = (config.robots, config.steps);
    if n_robots < 2 || t_steps < 2 {
        return Err(Error::Argument("tracking needs N >= 2 and T >= 2".into()));
    }
    if config.dt <= 0.0 {
        return Err(Error::Argument("tracking needs dt > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let truth = simulate_truth(config, &mut rng);

    let robot_positions: Vec<[f64; 2]> = (0..n_robots)
        .map(|_| {
            [
                rng.gen_range(-config.arena..config.arena),
                rng.gen_range(-config.arena..config.arena),
            ]
        })
        .collect();

    let c = observation_matrix();
    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::Argument(e.to_string()))?;
    let mut observations = vec![Vec::new(); n_robots];
    let mut degenerate_robots = Vec::new();
    for (i, pos) in robot_positions.iter().enumerate() {
        for t in 0..t_steps {
            let px = truth[STATE_DIM * t];
            let py = truth[STATE_DIM * t + 1];
            let dist = ((px - pos[0]).powi(2) + (py - pos[1]).powi(2)).sqrt();
            if dist <= config.sensing_range {
                let y = [
                    px + config.meas_noise * noise.sample(&mut rng),
                    py + config.meas_noise * noise.sample(&mut rng),
                ];
                observations[i].push(Observation { t, y });
            }
        }
        if observations[i].is_empty() {
            degenerate_robots.push(i);
        }
    }

    let mu0 = {
        let mut m = truth.rows(0, STATE_DIM).into_owned();
        for v in m.iter_mut() {
            *v += config.prior_noise * noise.sample(&mut rng);
        }
        m
    };

    let mut instance = TrackingInstance {
        config: config.clone(),
        a: dynamics_matrix(config.dt),
        c,
        q: DMatrix::identity(STATE_DIM, STATE_DIM) * 0.05,
        r: DMatrix::identity(MEAS_DIM, MEAS_DIM) * 0.1,
        sigma0: DMatrix::identity(STATE_DIM, STATE_DIM),
        mu0,
        robot_positions,
        observations,
        truth,
        solution: DVector::zeros(STATE_DIM * t_steps),
        degenerate_robots,
    };
    instance.solution = centralized_lls_solve(&instance)?;
    Ok(instance)
}

impl TrackingInstance {
    pub fn dim(&self) -> usize {
        STATE_DIM * self.config.steps
    }

    pub fn robots(&self) -> usize {
        self.config.robots
    }

    /// `(H_i, W_i^{-1}, z_i)` blocks for robot `i` over the full variable.
    pub fn robot_blocks(&self, robot: usize) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        self.window_blocks(robot, 0, self.config.steps, true, true)
    }

    /// Least-squares blocks restricted to timesteps `[start, start + len)`.
    /// `with_prior` includes the prior row (only meaningful when start = 0),
    /// `scaled` applies the 1/N sharing factor to the prior/dynamics rows.
    pub(crate) fn window_blocks(
        &self,
        robot: usize,
        start: usize,
        len: usize,
        with_prior: bool,
        scaled: bool,
    ) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let n_robots = self.config.robots as f64;
        let share = if scaled { n_robots } else { 1.0 };
        let obs: Vec<&Observation> = self.observations[robot]
            .iter()
            .filter(|o| o.t >= start && o.t < start + len)
            .collect();
        let prior_rows = if with_prior && start == 0 { STATE_DIM } else { 0 };
        let dyn_rows = STATE_DIM * (len - 1);
        let meas_rows = MEAS_DIM * obs.len();
        let rows = prior_rows + dyn_rows + meas_rows;
        let cols = STATE_DIM * len;

        let mut h = DMatrix::zeros(rows, cols);
        let mut w_inv = DMatrix::zeros(rows, rows);
        let mut z = DVector::zeros(rows);

        let sigma0_inv = self
            .sigma0
            .clone()
            .try_inverse()
            .expect("prior covariance invertible");
        let q_inv = self.q.clone().try_inverse().expect("Q invertible");
        let r_inv = self.r.clone().try_inverse().expect("R invertible");

        let mut row = 0;
        if prior_rows > 0 {
            h.view_mut((row, 0), (STATE_DIM, STATE_DIM))
                .copy_from(&DMatrix::identity(STATE_DIM, STATE_DIM));
            w_inv
                .view_mut((row, row), (STATE_DIM, STATE_DIM))
                .copy_from(&(&sigma0_inv / share));
            z.rows_mut(row, STATE_DIM).copy_from(&self.mu0);
            row += STATE_DIM;
        }
        for t in 0..len - 1 {
            h.view_mut((row, STATE_DIM * t), (STATE_DIM, STATE_DIM))
                .copy_from(&(-&self.a));
            h.view_mut((row, STATE_DIM * (t + 1)), (STATE_DIM, STATE_DIM))
                .copy_from(&DMatrix::identity(STATE_DIM, STATE_DIM));
            w_inv
                .view_mut((row, row), (STATE_DIM, STATE_DIM))
                .copy_from(&(&q_inv / share));
            row += STATE_DIM;
        }
        for o in obs {
            let local_t = o.t - start;
            h.view_mut((row, STATE_DIM * local_t), (MEAS_DIM, STATE_DIM))
                .copy_from(&self.c);
            w_inv
                .view_mut((row, row), (MEAS_DIM, MEAS_DIM))
                .copy_from(&r_inv);
            z.rows_mut(row, MEAS_DIM)
                .copy_from(&DVector::from_row_slice(&o.y));
            row += MEAS_DIM;
        }
        debug_assert_eq!(row, rows);
        (h, w_inv, z)
    }

    /// Per-robot local objectives over the full stacked variable.
    pub fn objectives(&self) -> Vec<Box<dyn LocalObjective>> {
        (0..self.config.robots)
            .map(|i| {
                let (h, w_inv, z) = self.robot_blocks(i);
                Box::new(QuadraticObjective::from_weighted_lls(&h, &w_inv, &z))
                    as Box<dyn LocalObjective>
            })
            .collect()
    }

    /// Zero initial iterates, one per robot.
    pub fn zero_init(&self) -> Vec<DVector<f64>> {
        vec![DVector::zeros(self.dim()); self.config.robots]
    }

    pub fn mse_spec(&self) -> MseSpec {
        MseSpec::shared(self.solution.clone())
    }

    /// Chain communication graph in robot-id order.
    pub fn chain_graph(&self) -> Result<CommGraph> {
        CommGraph::chain(self.config.robots)
    }

    /// Range-limited communication graph; the radius is the smallest
    /// connectivity-preserving distance scaled by `margin` (> 1).
    pub fn range_graph(&self, margin: f64) -> Result<CommGraph> {
        let radius = CommGraph::connectivity_radius(&self.robot_positions) * margin;
        CommGraph::range_limited(&self.robot_positions, radius)
    }
}

/// Solves the stacked normal equations `(sum_i H_i' Winv_i H_i) x =
/// sum_i H_i' Winv_i z_i` and asserts the gradient residual.
pub fn centralized_lls_solve(instance: &TrackingInstance) -> Result<DVector<f64>> {
    let n = instance.dim();
    let mut normal = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for i in 0..instance.config.robots {
        let (h, w_inv, z) = instance.robot_blocks(i);
        let ht_winv = h.transpose() * &w_inv;
        normal += &ht_winv * &h;
        rhs += &ht_winv * &z;
    }
    let chol = nalgebra::Cholesky::new(normal.clone())
        .ok_or_else(|| Error::Numerical("tracking normal matrix not positive definite".into()))?;
    let x = chol.solve(&rhs);
    let residual = (&normal * &x - &rhs).abs().max();
    if residual >= 1e-9 * (1.0 + rhs.abs().max()) {
        return Err(Error::Numerical(format!(
            "normal equations residual {residual:.3e}"
        )));
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// SOVA time-window decomposition
// ---------------------------------------------------------------------------

/// Tracking problem partitioned into contiguous time windows with a
/// one-timestep overlap per neighboring pair; robot i owns the states of its
/// window only. Feeds SOVA with 0/1 coordinate-selector maps.
pub struct SovaTracking {
    pub windows: Vec<(usize, usize)>,
    pub dims: Vec<usize>,
    pub maps: Vec<Vec<(usize, crate::admm::EdgeMaps)>>,
    pub objectives: Vec<Box<dyn LocalObjective>>,
    /// Oracle solution restricted to each window.
    pub references: Vec<DVector<f64>>,
    pub graph: CommGraph,
}

/// Splits `0..T` into one window per robot (contiguous, one-step overlap)
/// and checks every robot's observations fall inside its window. Each
/// dynamics pair is owned by exactly one window, so the reduced local costs
/// still sum to the global cost.
pub fn sova_time_windows(instance: &TrackingInstance) -> Result<SovaTracking> {
    let n_robots = instance.config.robots;
    let t_steps = instance.config.steps;
    if t_steps < 2 * n_robots {
        return Err(Error::Argument(format!(
            "need at least 2 timesteps per robot, got T={t_steps}, N={n_robots}"
        )));
    }
    // Boundaries: window i = [b_i, b_{i+1}] inclusive of the shared state.
    let mut bounds = vec![0usize];
    for i in 1..n_robots {
        bounds.push(i * (t_steps - 1) / n_robots);
    }
    bounds.push(t_steps - 1);
    let windows: Vec<(usize, usize)> = (0..n_robots)
        .map(|i| (bounds[i], bounds[i + 1] - bounds[i] + 1))
        .collect();

    for (i, obs) in instance.observations.iter().enumerate() {
        let (start, len) = windows[i];
        for o in obs {
            if o.t < start || o.t >= start + len {
                return Err(Error::Construction(format!(
                    "robot {i} observes t={} outside its window [{start}, {})",
                    o.t,
                    start + len
                )));
            }
        }
    }

    let mut objectives: Vec<Box<dyn LocalObjective>> = Vec::new();
    for i in 0..n_robots {
        let (start, len) = windows[i];
        let (h, w_inv, z) = instance.window_blocks(i, start, len, start == 0, false);
        objectives.push(Box::new(QuadraticObjective::from_weighted_lls(&h, &w_inv, &z)));
    }

    let graph = CommGraph::chain(n_robots)?;
    let dims: Vec<usize> = windows.iter().map(|(_, len)| STATE_DIM * len).collect();
    let mut maps: Vec<Vec<(usize, crate::admm::EdgeMaps)>> = vec![Vec::new(); n_robots];
    for i in 0..n_robots - 1 {
        // Shared state: last step of window i = first step of window i+1.
        let last: Vec<usize> = (0..STATE_DIM).map(|k| dims[i] - STATE_DIM + k).collect();
        let first: Vec<usize> = (0..STATE_DIM).collect();
        maps[i].push((
            i + 1,
            crate::admm::EdgeMaps {
                own: crate::objective::PenaltyMap::Select(last.clone()),
                theirs: crate::objective::PenaltyMap::Select(first.clone()),
            },
        ));
        maps[i + 1].push((
            i,
            crate::admm::EdgeMaps {
                own: crate::objective::PenaltyMap::Select(first),
                theirs: crate::objective::PenaltyMap::Select(last),
            },
        ));
    }

    let references: Vec<DVector<f64>> = windows
        .iter()
        .map(|&(start, len)| {
            instance
                .solution
                .rows(STATE_DIM * start, STATE_DIM * len)
                .into_owned()
        })
        .collect();

    Ok(SovaTracking {
        windows,
        dims,
        maps,
        objectives,
        references,
        graph,
    })
}

/// Rebuilds an instance with robots pinned along the trajectory so robot i
/// observes exactly its time window (the SOVA benchmark geometry).
pub fn pin_robots_to_windows(inst: &TrackingInstance) -> Result<TrackingInstance> {
    let mut out = inst.clone();
    let n_robots = inst.config.robots;
    let t_steps = inst.config.steps;
    let mut bounds = vec![0usize];
    for i in 1..n_robots {
        bounds.push(i * (t_steps - 1) / n_robots);
    }
    bounds.push(t_steps - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(inst.config.seed ^ 0x5eed);
    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::Argument(e.to_string()))?;
    out.observations = vec![Vec::new(); n_robots];
    for i in 0..n_robots {
        let (s, e) = (bounds[i], bounds[i + 1]);
        let mid = (s + e) / 2;
        out.robot_positions[i] = [
            inst.truth[STATE_DIM * mid],
            inst.truth[STATE_DIM * mid + 1] + 0.2,
        ];
        for t in s..=e {
            let y = [
                inst.truth[STATE_DIM * t] + inst.config.meas_noise * noise.sample(&mut rng),
                inst.truth[STATE_DIM * t + 1] + inst.config.meas_noise * noise.sample(&mut rng),
            ];
            out.observations[i].push(Observation { t, y });
        }
    }
    out.degenerate_robots.clear();
    out.solution = centralized_lls_solve(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flops::Flops;
    use crate::objective::central_difference_gradient;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dynamics_matrix_shape() {
        let a = dynamics_matrix(0.1);
        let expect = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 0.1, 0.0, //
                0.0, 1.0, 0.0, 0.1, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        assert_eq!(a, expect);
    }

    #[test]
    fn q_and_r_defaults() {
        let inst = build_tracking_instance(&TrackingConfig {
            robots: 3,
            steps: 4,
            ..TrackingConfig::default()
        })
        .unwrap();
        assert_eq!(inst.q, DMatrix::identity(4, 4) * 0.05);
        assert_eq!(inst.r, DMatrix::identity(2, 2) * 0.1);
    }

    #[test]
    fn one_hot_observation_block() {
        // T = 3, T_i = {t index 1}: the measurement block row is [0 | C | 0].
        let config = TrackingConfig {
            robots: 2,
            steps: 3,
            sensing_range: 1e9,
            seed: 3,
            ..TrackingConfig::default()
        };
        let mut inst = build_tracking_instance(&config).unwrap();
        inst.observations[0] = vec![Observation { t: 1, y: [0.5, -0.5] }];
        let (h, _, _) = inst.robot_blocks(0);
        // Rows: 4 prior + 8 dynamics + 2 measurement = 14; cols 12.
        assert_eq!(h.nrows(), 14);
        assert_eq!(h.ncols(), 12);
        let meas = h.view((12, 0), (2, 12));
        for c in 0..4 {
            assert_abs_diff_eq!(meas[(0, c)], 0.0);
            assert_abs_diff_eq!(meas[(1, c)], 0.0);
            assert_abs_diff_eq!(meas[(0, 8 + c)], 0.0);
            assert_abs_diff_eq!(meas[(1, 8 + c)], 0.0);
        }
        assert_abs_diff_eq!(meas[(0, 4)], 1.0);
        assert_abs_diff_eq!(meas[(1, 5)], 1.0);
    }

    #[test]
    fn zero_noise_linear_truth_recovers_exactly() {
        let config = TrackingConfig {
            robots: 4,
            steps: 8,
            meas_noise: 0.0,
            prior_noise: 0.0,
            ground_truth: GroundTruth::Linear,
            sensing_range: 1e9,
            seed: 7,
            ..TrackingConfig::default()
        };
        let inst = build_tracking_instance(&config).unwrap();
        assert_abs_diff_eq!((&inst.solution - &inst.truth).abs().max(), 0.0, epsilon = 1e-8);
    }

    fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
        m.clone().try_inverse().unwrap()
    }

    #[test]
    fn local_costs_sum_to_global() {
        // sum_i f_i(x) equals the printed global cost at random points.
        let config = TrackingConfig {
            robots: 5,
            steps: 6,
            seed: 11,
            ..TrackingConfig::default()
        };
        let inst = build_tracking_instance(&config).unwrap();
        let objectives = inst.objectives();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = DVector::from_fn(inst.dim(), |_, _| rng.gen_range(-3.0..3.0));
            let local_sum: f64 = objectives
                .iter()
                .map(|o| o.eval(&x, &mut Flops::new()))
                .sum();
            // Global cost assembled independently from the model matrices.
            let mut global = {
                let d = x.rows(0, 4).into_owned() - &inst.mu0;
                (inverse(&inst.sigma0) * &d).dot(&d)
            };
            for t in 0..inst.config.steps - 1 {
                let xt = x.rows(4 * t, 4).into_owned();
                let xt1 = x.rows(4 * (t + 1), 4).into_owned();
                let d = xt1 - &inst.a * xt;
                global += (inverse(&inst.q) * &d).dot(&d);
            }
            for obs in inst.observations.iter().flatten() {
                let xt = x.rows(4 * obs.t, 4).into_owned();
                let d = DVector::from_row_slice(&obs.y) - &inst.c * xt;
                global += (inverse(&inst.r) * &d).dot(&d);
            }
            assert_abs_diff_eq!(local_sum, global, epsilon = 1e-10 * (1.0 + global.abs()));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let config = TrackingConfig {
            robots: 3,
            steps: 4,
            seed: 2,
            ..TrackingConfig::default()
        };
        let inst = build_tracking_instance(&config).unwrap();
        for obj in inst.objectives() {
            let x = DVector::from_fn(inst.dim(), |i, _| (i as f64 * 0.37).sin());
            let g = obj.grad(&x, &mut Flops::new());
            let fd = central_difference_gradient(|y| obj.eval(y, &mut Flops::new()), &x, 1e-6);
            for i in 0..x.len() {
                assert_abs_diff_eq!(g[i], fd[i], epsilon = 1e-5 * (1.0 + fd[i].abs()));
            }
        }
    }

    #[test]
    fn solution_is_global_stationary_point() {
        let inst = build_tracking_instance(&TrackingConfig {
            robots: 4,
            steps: 8,
            seed: 1,
            ..TrackingConfig::default()
        })
        .unwrap();
        let objectives = inst.objectives();
        let mut g = DVector::zeros(inst.dim());
        for o in &objectives {
            g += o.grad(&inst.solution, &mut Flops::new());
        }
        assert!(g.abs().max() < 1e-8, "gradient residual {}", g.abs().max());
    }

    #[test]
    fn sova_windows_partition_dynamics_and_match_shapes() {
        let config = TrackingConfig {
            robots: 3,
            steps: 12,
            meas_noise: 0.05,
            prior_noise: 0.05,
            ground_truth: GroundTruth::Linear,
            seed: 21,
            ..TrackingConfig::default()
        };
        let inst = build_tracking_instance(&config).unwrap();
        let inst = pin_robots_to_windows(&inst).unwrap();
        let sova = sova_time_windows(&inst).unwrap();
        assert_eq!(sova.dims.len(), 3);
        // Dynamics pairs partition 0..T-1.
        let total: usize = sova.windows.iter().map(|(_, l)| l - 1).sum();
        assert_eq!(total, config.steps - 1);
        for (i, list) in sova.maps.iter().enumerate() {
            for (j, em) in list {
                assert_eq!(
                    em.own.output_dim(sova.dims[i]),
                    em.theirs.output_dim(sova.dims[*j])
                );
            }
        }
        // The reduced costs sum to the same total as the full split at the
        // oracle solution (window restriction of the global cost).
        let full = inst.objectives();
        let full_sum: f64 = full
            .iter()
            .map(|o| o.eval(&inst.solution, &mut Flops::new()))
            .sum();
        let reduced_sum: f64 = sova
            .objectives
            .iter()
            .zip(&sova.references)
            .map(|(o, r)| o.eval(r, &mut Flops::new()))
            .sum();
        assert_abs_diff_eq!(full_sum, reduced_sum, epsilon = 1e-9 * (1.0 + full_sum));
    }
}
