//! Coordinated package delivery: constrained convex QP over the joint
//! trajectories of N aerial and M ground robots.
//!
//! The decision variable Z stacks every robot's states and controls over a
//! horizon of T steps. Each robot minimizes its control energy
//! `sum_t u_t' Q u_t` subject to affine dynamics, start/end stations, box
//! bounds on the ground robots' states and controls, and rendezvous
//! constraints: aerial robot i must be at ground robot j's planar position
//! (at zero altitude) at every meeting time in T_ij.
//!
//! Aerial robots are 3-D double integrators and ground robots 2-D double
//! integrators (state: position, velocity; control: acceleration), so the
//! ground robots' positions and velocities can be box-constrained.
//!
//! The centralized oracle solves the assembled QP with an interior-point
//! method ([`super::ipm`]); the distributed algorithms see per-robot local
//! objectives holding the robot's own energy term and the constraints that
//! touch its own variables (meetings are held by both parties).

use crate::error::{Error, Result};
use crate::exec::MseSpec;
use crate::graph::CommGraph;
use crate::objective::{ConstraintSet, LocalObjective, QuadraticObjective};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const AERIAL_STATE: usize = 6;
pub const AERIAL_CONTROL: usize = 3;
pub const GROUND_STATE: usize = 4;
pub const GROUND_CONTROL: usize = 2;

/// One rendezvous: aerial robot meets ground robot at timestep `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meeting {
    pub aerial: usize,
    pub ground: usize,
    pub t: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeliveryConfig {
    pub aerial: usize,
    pub ground: usize,
    pub steps: usize,
    pub dt: f64,
    /// Control-cost weights (Q = q I).
    pub q_aerial: f64,
    pub q_ground: f64,
    /// Ground positions stay within [-zone_half, zone_half]^2.
    pub zone_half: f64,
    /// Ground velocity / control bounds.
    pub vmax: f64,
    pub umax: f64,
    /// Explicit meeting schedule; `None` spreads one meeting per aerial
    /// robot over the horizon.
    pub meetings: Option<Vec<Meeting>>,
    pub seed: u64,
}

impl Default for DeliveryConfig {
    fn default() -> Self {
        Self {
            aerial: 3,
            ground: 2,
            steps: 8,
            dt: 1.0,
            q_aerial: 1.0,
            q_ground: 1.0,
            zone_half: 4.0,
            vmax: 4.0,
            umax: 4.0,
            meetings: None,
            seed: 0,
        }
    }
}

/// Where a robot's states and controls live inside Z.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RobotLayout {
    pub offset: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub steps: usize,
}

impl RobotLayout {
    pub fn len(&self) -> usize {
        self.state_dim * (self.steps + 1) + self.control_dim * self.steps
    }

    /// Index of state coordinate `c` at timestep `t` (t in 0..=T).
    pub fn state(&self, t: usize, c: usize) -> usize {
        self.offset + self.state_dim * t + c
    }

    /// Index of control coordinate `c` at timestep `t` (t in 0..T).
    pub fn control(&self, t: usize, c: usize) -> usize {
        self.offset + self.state_dim * (self.steps + 1) + self.control_dim * t + c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeliveryInstance {
    pub config: DeliveryConfig,
    pub meetings: Vec<Meeting>,
    /// Aerial layouts first, then ground.
    pub layouts: Vec<RobotLayout>,
    pub dim: usize,
    /// Aerial start/end stations (3-D positions).
    pub aerial_stations: Vec<([f64; 3], [f64; 3])>,
    /// Ground start/end stations (2-D positions).
    pub ground_stations: Vec<([f64; 2], [f64; 2])>,
    /// Global equality system and bounds.
    #[serde(with = "super::serialize::dmatrix")]
    pub aeq: DMatrix<f64>,
    #[serde(with = "super::serialize::dvector")]
    pub beq: DVector<f64>,
    #[serde(with = "super::serialize::dvector")]
    pub lower: DVector<f64>,
    #[serde(with = "super::serialize::dvector")]
    pub upper: DVector<f64>,
    /// Explicit feasible trajectory (the construction certificate).
    #[serde(with = "super::serialize::dvector")]
    pub feasible: DVector<f64>,
    /// Centralized interior-point solution.
    #[serde(with = "super::serialize::dvector")]
    pub solution: DVector<f64>,
}

struct EqBuilder {
    rows: Vec<(Vec<(usize, f64)>, f64)>,
    dim: usize,
}

impl EqBuilder {
    fn new(dim: usize) -> Self {
        Self { rows: Vec::new(), dim }
    }

    fn row(&mut self, entries: &[(usize, f64)], rhs: f64) {
        self.rows.push((entries.to_vec(), rhs));
    }

    fn assemble(&self) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.rows.len();
        let mut a = DMatrix::zeros(m, self.dim);
        let mut b = DVector::zeros(m);
        for (r, (entries, rhs)) in self.rows.iter().enumerate() {
            for &(c, v) in entries {
                a[(r, c)] += v;
            }
            b[r] = *rhs;
        }
        (a, b)
    }
}

fn node_count(config: &DeliveryConfig) -> usize {
    config.aerial + config.ground
}

/// Dynamics + station rows of one robot into the builder.
fn robot_equalities(
    builder: &mut EqBuilder,
    layout: &RobotLayout,
    dt: f64,
    is_aerial: bool,
    start: &[f64],
    end: &[f64],
) {
    let t_steps = layout.steps;
    let half_dt2 = 0.5 * dt * dt;
    let pos_dim = if is_aerial { 3 } else { 2 };
    for t in 0..t_steps {
        for c in 0..pos_dim {
            // p' = p + dt v + dt^2/2 u
            builder.row(
                &[
                    (layout.state(t + 1, c), 1.0),
                    (layout.state(t, c), -1.0),
                    (layout.state(t, pos_dim + c), -dt),
                    (layout.control(t, c), -half_dt2),
                ],
                0.0,
            );
            // v' = v + dt u
            builder.row(
                &[
                    (layout.state(t + 1, pos_dim + c), 1.0),
                    (layout.state(t, pos_dim + c), -1.0),
                    (layout.control(t, c), -dt),
                ],
                0.0,
            );
        }
    }
    for c in 0..layout.state_dim {
        let v0 = if c < pos_dim { start[c] } else { 0.0 };
        let vt = if c < pos_dim { end[c] } else { 0.0 };
        builder.row(&[(layout.state(0, c), 1.0)], v0);
        builder.row(&[(layout.state(t_steps, c), 1.0)], vt);
    }
}

fn meeting_rows(builder: &mut EqBuilder, a: &RobotLayout, g: &RobotLayout, t: usize) {
    builder.row(&[(a.state(t, 0), 1.0), (g.state(t, 0), -1.0)], 0.0);
    builder.row(&[(a.state(t, 1), 1.0), (g.state(t, 1), -1.0)], 0.0);
    // The aerial robot descends to ground level.
    builder.row(&[(a.state(t, 2), 1.0)], 0.0);
}

/// Fills one robot's certificate trajectory through `waypoints` (sorted by
/// timestep, first at 0, last at T) with a triangular velocity profile per
/// leg; exact under the trapezoidal double-integrator rows. Returns the
/// position sequence.
fn fill_legs(
    z: &mut DVector<f64>,
    layout: &RobotLayout,
    pos_dim: usize,
    dt: f64,
    waypoints: &[(usize, Vec<f64>)],
    who: &str,
) -> Result<Vec<Vec<f64>>> {
    let mut positions = vec![vec![0.0; pos_dim]; layout.steps + 1];
    for w in waypoints.windows(2) {
        let (a, ref pa) = w[0];
        let (b, ref pb) = w[1];
        if b <= a {
            return Err(Error::Construction(format!(
                "{who} has conflicting waypoints at t={a} and t={b}"
            )));
        }
        let k = b - a;
        let d: Vec<f64> = (0..pos_dim).map(|c| pb[c] - pa[c]).collect();
        let moved = d.iter().any(|v| v.abs() > 1e-12);
        if k < 2 && moved {
            return Err(Error::Construction(format!(
                "{who} cannot reach its waypoint at t={b} from t={a} (meeting pair too tight)"
            )));
        }
        // Triangular velocity weights with w_a = w_b = 0.
        let weights: Vec<f64> = (0..=k).map(|t| t.min(k - t) as f64).collect();
        let s_w: f64 = (0..k).map(|t| 0.5 * (weights[t] + weights[t + 1])).sum();
        let kappa = if moved { 1.0 / (dt * s_w) } else { 0.0 };
        for (idx, wt) in weights.iter().enumerate() {
            let t = a + idx;
            for c in 0..pos_dim {
                z[layout.state(t, pos_dim + c)] = kappa * wt * d[c];
            }
        }
        let mut pos = pa.clone();
        for t in a..b {
            for c in 0..pos_dim {
                z[layout.state(t, c)] = pos[c];
                positions[t][c] = pos[c];
                let v0 = z[layout.state(t, pos_dim + c)];
                let v1 = z[layout.state(t + 1, pos_dim + c)];
                z[layout.control(t, c)] = (v1 - v0) / dt;
                pos[c] += dt * 0.5 * (v0 + v1);
            }
        }
        for c in 0..pos_dim {
            z[layout.state(b, c)] = pos[c];
            positions[b][c] = pos[c];
            if (pos[c] - pb[c]).abs() > 1e-9 {
                return Err(Error::Construction(format!(
                    "{who} certificate misses its waypoint at t={b}"
                )));
            }
        }
    }
    Ok(positions)
}

pub fn build_delivery_instance(config: &DeliveryConfig) -> Result<DeliveryInstance> {
    let (n_a, m_g, t_steps) = (config.aerial, config.ground, config.steps);
    if n_a < 1 || m_g < 1 {
        return Err(Error::Argument("delivery needs at least one robot of each kind".into()));
    }
    if t_steps < 4 {
        return Err(Error::Argument("delivery needs at least 4 timesteps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Meeting schedule: default puts one meeting per aerial robot, spread
    // over the interior of the horizon.
    let meetings: Vec<Meeting> = match &config.meetings {
        Some(list) => list.clone(),
        None => (0..n_a)
            .map(|i| Meeting {
                aerial: i,
                ground: i % m_g,
                t: (((i + 1) * t_steps) / (n_a + 1)).clamp(2, t_steps - 2),
            })
            .collect(),
    };
    for m in &meetings {
        if m.aerial >= n_a || m.ground >= m_g {
            return Err(Error::Construction(format!(
                "meeting names robots ({}, {}) outside the fleet",
                m.aerial, m.ground
            )));
        }
        if m.t < 1 || m.t > t_steps - 2 {
            return Err(Error::Construction(format!(
                "meeting of aerial {} and ground {} at t={} is not schedulable within the horizon",
                m.aerial, m.ground, m.t
            )));
        }
    }

    // Layouts: aerials then grounds.
    let mut layouts = Vec::with_capacity(n_a + m_g);
    let mut offset = 0;
    for _ in 0..n_a {
        let l = RobotLayout {
            offset,
            state_dim: AERIAL_STATE,
            control_dim: AERIAL_CONTROL,
            steps: t_steps,
        };
        offset += l.len();
        layouts.push(l);
    }
    for _ in 0..m_g {
        let l = RobotLayout {
            offset,
            state_dim: GROUND_STATE,
            control_dim: GROUND_CONTROL,
            steps: t_steps,
        };
        offset += l.len();
        layouts.push(l);
    }
    let dim = offset;

    // Stations: aerial robots cross the arena left to right, ground robots
    // shuttle inside their zone.
    let spread = |i: usize, count: usize| -> f64 {
        if count == 1 {
            0.0
        } else {
            -2.5 + 5.0 * i as f64 / (count - 1) as f64
        }
    };
    let aerial_stations: Vec<([f64; 3], [f64; 3])> = (0..n_a)
        .map(|i| {
            let y = spread(i, n_a) + rng.gen_range(-0.3..0.3);
            ([-5.0, y, 0.0], [5.0, y + rng.gen_range(-0.3..0.3), 0.0])
        })
        .collect();
    let ground_stations: Vec<([f64; 2], [f64; 2])> = (0..m_g)
        .map(|j| {
            let y = spread(j, m_g) + rng.gen_range(-0.3..0.3);
            ([-2.5, y], [2.5, y + rng.gen_range(-0.3..0.3)])
        })
        .collect();

    // Global equality system.
    let mut builder = EqBuilder::new(dim);
    for i in 0..n_a {
        let (s, e) = aerial_stations[i];
        robot_equalities(&mut builder, &layouts[i], config.dt, true, &s, &e);
    }
    for j in 0..m_g {
        let (s, e) = ground_stations[j];
        robot_equalities(&mut builder, &layouts[n_a + j], config.dt, false, &s, &e);
    }
    for m in &meetings {
        meeting_rows(&mut builder, &layouts[m.aerial], &layouts[n_a + m.ground], m.t);
    }
    let (aeq, beq) = builder.assemble();

    // Bounds: ground robots only.
    let mut lower = DVector::from_element(dim, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(dim, f64::INFINITY);
    for j in 0..m_g {
        let l = &layouts[n_a + j];
        for t in 0..=t_steps {
            for c in 0..2 {
                lower[l.state(t, c)] = -config.zone_half;
                upper[l.state(t, c)] = config.zone_half;
                lower[l.state(t, 2 + c)] = -config.vmax;
                upper[l.state(t, 2 + c)] = config.vmax;
            }
        }
        for t in 0..t_steps {
            for c in 0..2 {
                lower[l.control(t, c)] = -config.umax;
                upper[l.control(t, c)] = config.umax;
            }
        }
    }

    let feasible = feasible_certificate(
        config,
        &meetings,
        &layouts,
        &aerial_stations,
        &ground_stations,
    )?;
    // The certificate must satisfy every constraint; otherwise the schedule
    // is infeasible for this geometry.
    let eq_err = (&aeq * &feasible - &beq).abs().max();
    if eq_err > 1e-8 {
        return Err(Error::Construction(format!(
            "feasibility certificate violates the equalities by {eq_err:.3e}"
        )));
    }
    for i in 0..dim {
        if feasible[i] < lower[i] - 1e-9 || feasible[i] > upper[i] + 1e-9 {
            return Err(Error::Construction(format!(
                "feasibility certificate leaves the bounds at coordinate {i}"
            )));
        }
    }

    let p = global_quadratic(config, &layouts);
    let q = DVector::zeros(dim);
    let sol = super::ipm::solve_qp(&p, &q, &aeq, &beq, &lower, &upper)?;
    if sol.kkt_residual > 1e-8 {
        return Err(Error::Numerical(format!(
            "delivery oracle KKT residual {:.3e}",
            sol.kkt_residual
        )));
    }

    Ok(DeliveryInstance {
        config: config.clone(),
        meetings,
        layouts,
        dim,
        aerial_stations,
        ground_stations,
        aeq,
        beq,
        lower,
        upper,
        feasible,
        solution: sol.x,
    })
}

/// Piecewise trajectory through the meeting points with triangular velocity
/// profiles per leg (exact under the trapezoidal double-integrator rows).
fn feasible_certificate(
    config: &DeliveryConfig,
    meetings: &[Meeting],
    layouts: &[RobotLayout],
    aerial_stations: &[([f64; 3], [f64; 3])],
    ground_stations: &[([f64; 2], [f64; 2])],
) -> Result<DVector<f64>> {
    let (n_a, m_g, t_steps, dt) = (config.aerial, config.ground, config.steps, config.dt);
    let dim: usize = layouts.iter().map(|l| l.len()).sum();
    let mut z = DVector::zeros(dim);

    // Ground robots: one straight leg; meeting points are defined on these
    // certificate paths, so the ground robots never deviate.
    let mut ground_paths = Vec::with_capacity(m_g);
    for j in 0..m_g {
        let l = layouts[n_a + j];
        let (s, e) = ground_stations[j];
        let waypoints = vec![(0usize, s.to_vec()), (t_steps, e.to_vec())];
        let path = fill_legs(&mut z, &l, 2, dt, &waypoints, &format!("ground robot {j}"))?;
        // Bound check with the robot named.
        for t in 0..=t_steps {
            for c in 0..2 {
                let v = z[l.state(t, 2 + c)].abs();
                if v > config.vmax + 1e-12 {
                    return Err(Error::Construction(format!(
                        "ground robot {j} needs speed {v:.3} beyond vmax to reach its station"
                    )));
                }
            }
        }
        for t in 0..t_steps {
            for c in 0..2 {
                let u = z[l.control(t, c)].abs();
                if u > config.umax + 1e-12 {
                    return Err(Error::Construction(format!(
                        "ground robot {j} needs acceleration {u:.3} beyond umax"
                    )));
                }
            }
        }
        ground_paths.push(path);
    }

    // Aerial robots: waypoints at their meetings (on the ground certificate
    // path, altitude zero).
    for i in 0..n_a {
        let l = layouts[i];
        let (s, e) = aerial_stations[i];
        let mut waypoints: Vec<(usize, Vec<f64>)> = vec![(0, s.to_vec())];
        let mut own: Vec<&Meeting> = meetings.iter().filter(|m| m.aerial == i).collect();
        own.sort_by_key(|m| m.t);
        for m in own {
            let p = &ground_paths[m.ground][m.t];
            waypoints.push((m.t, vec![p[0], p[1], 0.0]));
        }
        waypoints.push((t_steps, e.to_vec()));
        fill_legs(
            &mut z,
            &l,
            3,
            dt,
            &waypoints,
            &format!("aerial {i} (meeting pair aerial {i} / schedule)"),
        )?;
    }
    Ok(z)
}

fn global_quadratic(config: &DeliveryConfig, layouts: &[RobotLayout]) -> DMatrix<f64> {
    let dim: usize = layouts.iter().map(|l| l.len()).sum();
    let mut p = DMatrix::zeros(dim, dim);
    for (r, l) in layouts.iter().enumerate() {
        let weight = if r < config.aerial {
            config.q_aerial
        } else {
            config.q_ground
        };
        for t in 0..l.steps {
            for c in 0..l.control_dim {
                p[(l.control(t, c), l.control(t, c))] = 2.0 * weight;
            }
        }
    }
    p
}

impl DeliveryInstance {
    pub fn nodes(&self) -> usize {
        node_count(&self.config)
    }

    /// Global control-energy cost at Z.
    pub fn global_cost(&self, z: &DVector<f64>) -> f64 {
        let p = global_quadratic(&self.config, &self.layouts);
        0.5 * (&p * z).dot(z)
    }

    /// Per-node objectives over the full copy of Z: own energy term plus the
    /// constraints touching the robot's own variables (both meeting parties
    /// hold the meeting rows).
    pub fn objectives(&self) -> Vec<Box<dyn LocalObjective>> {
        let n_a = self.config.aerial;
        (0..self.nodes())
            .map(|node| {
                let mut p = DMatrix::zeros(self.dim, self.dim);
                let l = &self.layouts[node];
                let weight = if node < n_a {
                    self.config.q_aerial
                } else {
                    self.config.q_ground
                };
                for t in 0..l.steps {
                    for c in 0..l.control_dim {
                        p[(l.control(t, c), l.control(t, c))] = 2.0 * weight;
                    }
                }

                let mut builder = EqBuilder::new(self.dim);
                if node < n_a {
                    let (s, e) = self.aerial_stations[node];
                    robot_equalities(&mut builder, l, self.config.dt, true, &s, &e);
                } else {
                    let (s, e) = self.ground_stations[node - n_a];
                    robot_equalities(&mut builder, l, self.config.dt, false, &s, &e);
                }
                for m in &self.meetings {
                    if m.aerial == node || n_a + m.ground == node {
                        meeting_rows(
                            &mut builder,
                            &self.layouts[m.aerial],
                            &self.layouts[n_a + m.ground],
                            m.t,
                        );
                    }
                }
                let (a, b) = builder.assemble();

                // Bounds the node knows: its own robot's, when it has any.
                let constraint = if node < n_a {
                    ConstraintSet::Affine { a, b }
                } else {
                    let mut lower = DVector::from_element(self.dim, f64::NEG_INFINITY);
                    let mut upper = DVector::from_element(self.dim, f64::INFINITY);
                    for i in 0..self.dim {
                        if i >= l.offset && i < l.offset + l.len() {
                            lower[i] = self.lower[i];
                            upper[i] = self.upper[i];
                        }
                    }
                    ConstraintSet::Composite { a, b, lower, upper }
                };
                Box::new(
                    QuadraticObjective::new(p, DVector::zeros(self.dim), 0.0, constraint)
                        .with_qp_seed(self.feasible.clone()),
                ) as Box<dyn LocalObjective>
            })
            .collect()
    }

    pub fn zero_init(&self) -> Vec<DVector<f64>> {
        vec![DVector::zeros(self.dim); self.nodes()]
    }

    pub fn mse_spec(&self) -> MseSpec {
        MseSpec::shared(self.solution.clone())
    }

    /// Node positions (station midpoints) for range-limited graphs.
    pub fn positions(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.nodes());
        for (s, e) in &self.aerial_stations {
            out.push([0.5 * (s[0] + e[0]), 0.5 * (s[1] + e[1])]);
        }
        for (s, e) in &self.ground_stations {
            out.push([0.5 * (s[0] + e[0]), 0.5 * (s[1] + e[1])]);
        }
        out
    }

    pub fn range_graph(&self, margin: f64) -> Result<CommGraph> {
        let positions = self.positions();
        let radius = CommGraph::connectivity_radius(&positions) * margin;
        CommGraph::range_limited(&positions, radius)
    }

    /// Largest violation of the full constraint set at Z.
    pub fn constraint_violation(&self, z: &DVector<f64>) -> f64 {
        let mut v = (&self.aeq * z - &self.beq).abs().max();
        for i in 0..self.dim {
            v = v.max(self.lower[i] - z[i]).max(z[i] - self.upper[i]);
        }
        v
    }

    /// Largest meeting residual at Z: planar distance between the parties
    /// plus the aerial altitude at each meeting time.
    pub fn meeting_residual(&self, z: &DVector<f64>) -> f64 {
        let n_a = self.config.aerial;
        let mut worst: f64 = 0.0;
        for m in &self.meetings {
            let a = &self.layouts[m.aerial];
            let g = &self.layouts[n_a + m.ground];
            let dx = z[a.state(m.t, 0)] - z[g.state(m.t, 0)];
            let dy = z[a.state(m.t, 1)] - z[g.state(m.t, 1)];
            let alt = z[a.state(m.t, 2)];
            worst = worst.max((dx * dx + dy * dy).sqrt()).max(alt.abs());
        }
        worst
    }
}

/// Re-solves the instance's QP with the interior-point oracle.
pub fn centralized_qp_solve(instance: &DeliveryInstance) -> Result<super::ipm::IpmSolution> {
    let p = global_quadratic(&instance.config, &instance.layouts);
    let q = DVector::zeros(instance.dim);
    super::ipm::solve_qp(&p, &q, &instance.aeq, &instance.beq, &instance.lower, &instance.upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flops::Flops;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_instance_builds_and_is_feasible() {
        let inst = build_delivery_instance(&DeliveryConfig::default()).unwrap();
        assert_eq!(inst.nodes(), 5);
        assert_eq!(inst.dim, 3 * (6 * 9 + 3 * 8) + 2 * (4 * 9 + 2 * 8));
        assert!(inst.constraint_violation(&inst.feasible) <= 1e-8);
        assert!(inst.constraint_violation(&inst.solution) <= 1e-6);
        assert!(inst.meeting_residual(&inst.solution) <= 1e-7);
        // The oracle can only improve on the certificate.
        assert!(inst.global_cost(&inst.solution) <= inst.global_cost(&inst.feasible) + 1e-9);
    }

    #[test]
    fn zero_meetings_decouples_into_independent_trajectories() {
        let config = DeliveryConfig {
            meetings: Some(vec![]),
            zone_half: 1e6,
            vmax: 1e6,
            umax: 1e6,
            ..DeliveryConfig::default()
        };
        let inst = build_delivery_instance(&config).unwrap();
        // Solve each robot's minimum-energy trajectory independently via its
        // own equality-constrained KKT system and compare.
        let p = global_quadratic(&config, &inst.layouts);
        for (r, l) in inst.layouts.iter().enumerate() {
            let mut builder = EqBuilder::new(inst.dim);
            if r < config.aerial {
                let (s, e) = inst.aerial_stations[r];
                robot_equalities(&mut builder, l, config.dt, true, &s, &e);
            } else {
                let (s, e) = inst.ground_stations[r - config.aerial];
                robot_equalities(&mut builder, l, config.dt, false, &s, &e);
            }
            let (a, b) = builder.assemble();
            // KKT: [P A'; A 0][x; nu] = [0; b] restricted to this robot's block.
            let cols: Vec<usize> = (l.offset..l.offset + l.len()).collect();
            let me = a.nrows();
            let nb = cols.len();
            let mut kkt = DMatrix::zeros(nb + me, nb + me);
            for (ci, &c) in cols.iter().enumerate() {
                for (cj, &c2) in cols.iter().enumerate() {
                    kkt[(ci, cj)] = p[(c, c2)];
                }
                for r2 in 0..me {
                    kkt[(nb + r2, ci)] = a[(r2, c)];
                    kkt[(ci, nb + r2)] = a[(r2, c)];
                }
            }
            let mut rhs = DVector::zeros(nb + me);
            rhs.rows_mut(nb, me).copy_from(&b);
            let sol = kkt.lu().solve(&rhs).unwrap();
            for (ci, &c) in cols.iter().enumerate() {
                assert_abs_diff_eq!(inst.solution[c], sol[ci], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn symmetric_meeting_lands_at_midpoint() {
        // One aerial, one ground, meeting halfway through symmetric stations:
        // the rendezvous happens at the geometric midpoint.
        let steps = 8;
        let config = DeliveryConfig {
            aerial: 1,
            ground: 1,
            steps,
            meetings: Some(vec![Meeting {
                aerial: 0,
                ground: 0,
                t: steps / 2,
            }]),
            seed: 99,
            ..DeliveryConfig::default()
        };
        // Symmetrize the stations exactly, then rebuild the system.
        let mut inst = build_delivery_instance(&config).unwrap();
        inst.aerial_stations = vec![([-5.0, 0.0, 0.0], [5.0, 0.0, 0.0])];
        inst.ground_stations = vec![([-2.5, 0.0], [2.5, 0.0])];
        rebuild(&mut inst);
        let l = &inst.layouts[0];
        let t = steps / 2;
        // Time reversal plus x-negation maps the problem to itself, so the
        // unique optimum meets at the geometric midpoint.
        assert_abs_diff_eq!(inst.solution[l.state(t, 0)], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(inst.solution[l.state(t, 1)], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(inst.solution[l.state(t, 2)], 0.0, epsilon = 1e-8);
        assert!(inst.meeting_residual(&inst.solution) <= 1e-7);
    }

    fn rebuild(inst: &mut DeliveryInstance) {
        let mut builder = EqBuilder::new(inst.dim);
        for i in 0..inst.config.aerial {
            let (s, e) = inst.aerial_stations[i];
            robot_equalities(&mut builder, &inst.layouts[i], inst.config.dt, true, &s, &e);
        }
        for j in 0..inst.config.ground {
            let (s, e) = inst.ground_stations[j];
            robot_equalities(
                &mut builder,
                &inst.layouts[inst.config.aerial + j],
                inst.config.dt,
                false,
                &s,
                &e,
            );
        }
        for m in &inst.meetings {
            meeting_rows(
                &mut builder,
                &inst.layouts[m.aerial],
                &inst.layouts[inst.config.aerial + m.ground],
                m.t,
            );
        }
        let (aeq, beq) = builder.assemble();
        inst.aeq = aeq;
        inst.beq = beq;
        inst.feasible = feasible_certificate(
            &inst.config,
            &inst.meetings,
            &inst.layouts,
            &inst.aerial_stations,
            &inst.ground_stations,
        )
        .unwrap();
        inst.solution = centralized_qp_solve(inst).unwrap().x;
    }

    #[test]
    fn local_costs_sum_to_global() {
        let inst = build_delivery_instance(&DeliveryConfig::default()).unwrap();
        let objectives = inst.objectives();
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let z = DVector::from_fn(inst.dim, |_, _| rng.gen_range(-2.0..2.0));
            let local: f64 = objectives.iter().map(|o| o.eval(&z, &mut Flops::new())).sum();
            assert_abs_diff_eq!(local, inst.global_cost(&z), epsilon = 1e-9 * (1.0 + local.abs()));
        }
    }

    #[test]
    fn infeasible_schedule_is_rejected_with_the_pair() {
        // Meeting too late to be schedulable.
        let config = DeliveryConfig {
            meetings: Some(vec![Meeting {
                aerial: 0,
                ground: 0,
                t: 7,
            }]),
            ..DeliveryConfig::default()
        };
        let err = build_delivery_instance(&config).unwrap_err();
        match err {
            Error::Construction(msg) => {
                assert!(msg.contains("aerial 0") && msg.contains("ground 0"), "{msg}");
            }
            other => panic!("expected Construction, got {other:?}"),
        }

        // Speed bound too tight for the ground robot to reach its station.
        let config = DeliveryConfig {
            vmax: 0.1,
            umax: 0.1,
            ..DeliveryConfig::default()
        };
        let err = build_delivery_instance(&config).unwrap_err();
        assert!(matches!(err, Error::Construction(_)));
    }
}
