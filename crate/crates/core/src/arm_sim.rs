//! Planar three-link arm with a single motor on the middle joint.
//!
//! Angles are measured counter-clockwise; `joint_angles[0]` is the absolute
//! angle of the first link from straight down and the other two are relative.
//! Each link is a massless rod with a point mass at its far end. Only the
//! second joint is driven; the first and third are passive, held near their
//! rest angles by torsional springs and viscous damping. The driven joint has
//! a symmetric travel limit. The dart sits at the tip of the third link.
//!
//! The arm hangs from the centre of the back wall of a `room_width` ×
//! `room_height` room. Targets live on the left wall, the ceiling, or the right
//! wall above base height and are addressed by their bearing from the base.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dmp::{DmpConstants, DmpIntegrator, PolicyVector};
use crate::error::{Error, Result};

/// Tolerance for "on the boundary" checks, in metres.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmConfig {
    pub link_lengths: [f64; 3],
    pub link_masses: [f64; 3],
    /// Downward gravitational acceleration (m/s²).
    pub gravity: f64,
    pub joint_damping: [f64; 3],
    /// Torsional springs pulling each joint back to its initial angle (N·m/rad).
    pub joint_stiffness: [f64; 3],
    /// Symmetric travel limit of each joint (rad), enforced by a stiff
    /// one-sided spring and damper. Infinite means unlimited.
    pub joint_limits: [f64; 3],
    pub limit_stiffness: f64,
    pub limit_damping: f64,
    pub torque_limit: f64,
    pub dt: f64,
    pub room_width: f64,
    pub room_height: f64,
    pub base_position: [f64; 2],
    /// Simulated time per throw (s).
    pub horizon: f64,
    /// Distance charged when the dart is never released (m).
    pub no_release_penalty: f64,
    pub initial_angles: [f64; 3],
}

impl Default for ArmConfig {
    fn default() -> Self {
        ArmConfig {
            link_lengths: [0.5, 0.4, 0.3],
            link_masses: [3.0, 0.3, 0.15],
            gravity: 9.81,
            joint_damping: [1.0, 0.0, 0.5],
            joint_stiffness: [50.0, 0.0, 60.0],
            joint_limits: [f64::INFINITY, 1.8, f64::INFINITY],
            limit_stiffness: 2000.0,
            limit_damping: 20.0,
            torque_limit: 20.0,
            dt: 1e-3,
            room_width: 4.0,
            room_height: 3.0,
            base_position: [2.0, 1.5],
            horizon: 2.0,
            no_release_penalty: 10.0,
            initial_angles: [0.0; 3],
        }
    }
}

impl ArmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::ParameterDomain(format!("arm config: {what}")));
        if self.link_lengths.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return bad("link lengths must be positive");
        }
        if self.link_masses.iter().any(|&m| !(m.is_finite() && m > 0.0)) {
            return bad("link masses must be positive");
        }
        if self.joint_damping.iter().any(|&d| !(d.is_finite() && d >= 0.0)) {
            return bad("joint damping must be nonnegative");
        }
        if self.joint_stiffness.iter().any(|&k| !(k.is_finite() && k >= 0.0)) {
            return bad("joint stiffness must be nonnegative");
        }
        if self.joint_limits.iter().any(|&l| !(l > 0.0)) {
            return bad("joint limits must be positive");
        }
        if !(self.limit_stiffness.is_finite() && self.limit_stiffness >= 0.0)
            || !(self.limit_damping.is_finite() && self.limit_damping >= 0.0)
        {
            return bad("limit stiffness and damping must be nonnegative");
        }
        if !(self.torque_limit.is_finite() && self.torque_limit > 0.0) {
            return bad("torque limit must be positive");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad("horizon must be positive");
        }
        if !(self.gravity.is_finite() && self.gravity >= 0.0) {
            return bad("gravity must be a nonnegative magnitude");
        }
        if !(self.room_width > 0.0 && self.room_height > 0.0) {
            return bad("room dimensions must be positive");
        }
        let [bx, by] = self.base_position;
        if !(bx > 0.0 && bx < self.room_width && by > 0.0 && by < self.room_height) {
            return bad("base must be strictly inside the room");
        }
        if self.initial_angles.iter().any(|a| !a.is_finite()) {
            return bad("initial angles must be finite");
        }
        Ok(())
    }

    pub fn initial_state(&self) -> ArmState {
        ArmState {
            joint_angles: self.initial_angles,
            joint_velocities: [0.0; 3],
            dart_held: true,
        }
    }

    fn strictly_inside(&self, p: [f64; 2]) -> bool {
        p[0] > 0.0 && p[0] < self.room_width && p[1] > 0.0 && p[1] < self.room_height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub joint_angles: [f64; 3],
    pub joint_velocities: [f64; 3],
    pub dart_held: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 60.0,
            ki: 0.0,
            kd: 8.0,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp.is_finite() && self.kp > 0.0) || !(self.ki >= 0.0) || !(self.kd >= 0.0) {
            return Err(Error::ParameterDomain(format!(
                "PID gains need kp > 0 and ki, kd >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A target on the room boundary, addressed by its bearing from the arm base.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    /// Bearing in `[0, π]`: 0 points at the right wall, π at the left wall.
    pub angle: f64,
    pub surface_point: [f64; 2],
}

impl Task {
    /// Intersects the ray from the base at `angle` with the walls and ceiling.
    pub fn from_angle(angle: f64, cfg: &ArmConfig) -> Result<Task> {
        if !(0.0..=std::f64::consts::PI).contains(&angle) {
            return Err(Error::ParameterDomain(format!("task angle {angle} outside [0, π]")));
        }
        let [bx, by] = cfg.base_position;
        let (sin, cos) = angle.sin_cos();
        let mut best = (f64::INFINITY, Surface::Ceiling);
        if sin > 0.0 {
            best = ((cfg.room_height - by) / sin, Surface::Ceiling);
        }
        if cos > 0.0 {
            let t = (cfg.room_width - bx) / cos;
            if t < best.0 {
                best = (t, Surface::RightWall);
            }
        } else if cos < 0.0 {
            let t = -bx / cos;
            if t < best.0 {
                best = (t, Surface::LeftWall);
            }
        }
        let (t, surface) = best;
        let mut p = [bx + t * cos, by + t * sin];
        match surface {
            Surface::Ceiling => p[1] = cfg.room_height,
            Surface::RightWall => p[0] = cfg.room_width,
            Surface::LeftWall => p[0] = 0.0,
        }
        Ok(Task {
            angle,
            surface_point: p,
        })
    }

    /// The angle mapped to `[0, 1]`, the feature used by the skill.
    pub fn normalized(&self) -> f64 {
        self.angle / std::f64::consts::PI
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Surface {
    Ceiling,
    RightWall,
    LeftWall,
}

/// Position and velocity of the dart at the instant it leaves the hand.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReleaseState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSample {
    pub time: f64,
    pub state: ArmState,
    pub desired_angle: f64,
    pub torque: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThrowOutcome {
    pub landing_point: [f64; 2],
    pub distance_to_target: f64,
    pub released: bool,
    pub release_state: Option<ReleaseState>,
    pub release_time: Option<f64>,
    /// Sampled arm states; empty unless tracing was requested.
    pub trajectory: Vec<ArmSample>,
}

/// Everything a throw needs besides the policy and the task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimContext {
    pub arm: ArmConfig,
    pub gains: PidGains,
    pub dmp: DmpConstants,
}

impl SimContext {
    pub fn validate(&self) -> Result<()> {
        self.arm.validate()?;
        self.gains.validate()?;
        self.dmp.validate()
    }
}

/// Terminal reward for a throw landing `distance` metres from its target.
pub fn terminal_reward(distance: f64) -> f64 {
    (-3.0 * distance).exp()
}

#[inline]
fn link_angles(q: &[f64; 3]) -> [f64; 3] {
    [q[0], q[0] + q[1], q[0] + q[1] + q[2]]
}

/// Positions of the three point masses relative to the base.
pub fn mass_positions(q: &[f64; 3], cfg: &ArmConfig) -> [[f64; 2]; 3] {
    let phi = link_angles(q);
    let mut p = [0.0, 0.0];
    let mut out = [[0.0; 2]; 3];
    for k in 0..3 {
        let l = cfg.link_lengths[k];
        p[0] += l * phi[k].sin();
        p[1] -= l * phi[k].cos();
        out[k] = p;
    }
    out
}

/// World-frame position and velocity of the arm tip.
pub fn tip_state(state: &ArmState, cfg: &ArmConfig) -> ReleaseState {
    let phi = link_angles(&state.joint_angles);
    let qd = &state.joint_velocities;
    let omega = [qd[0], qd[0] + qd[1], qd[0] + qd[1] + qd[2]];
    let [mut x, mut y] = cfg.base_position;
    let (mut vx, mut vy) = (0.0, 0.0);
    for k in 0..3 {
        let l = cfg.link_lengths[k];
        let (s, c) = phi[k].sin_cos();
        x += l * s;
        y -= l * c;
        vx += l * c * omega[k];
        vy += l * s * omega[k];
    }
    ReleaseState {
        position: [x, y],
        velocity: [vx, vy],
    }
}

/// Kinetic plus gravitational and spring potential energy; gravity is
/// measured from the base height.
pub fn mechanical_energy(state: &ArmState, cfg: &ArmConfig) -> f64 {
    let phi = link_angles(&state.joint_angles);
    let qd = &state.joint_velocities;
    let omega = [qd[0], qd[0] + qd[1], qd[0] + qd[1] + qd[2]];
    let (mut x, mut y, mut vx, mut vy) = (0.0, 0.0, 0.0, 0.0);
    let mut energy = 0.0;
    for k in 0..3 {
        let l = cfg.link_lengths[k];
        let (s, c) = phi[k].sin_cos();
        x += l * s;
        y -= l * c;
        vx += l * c * omega[k];
        vy += l * s * omega[k];
        let m = cfg.link_masses[k];
        energy += 0.5 * m * (vx * vx + vy * vy) + m * cfg.gravity * y;
    }
    let _ = x;
    for j in 0..3 {
        let d = state.joint_angles[j] - cfg.initial_angles[j];
        energy += 0.5 * cfg.joint_stiffness[j] * d * d;
    }
    energy
}

/// Joint accelerations from the rigid-body equations `M q̈ + h + G = τ − D q̇`.
fn accelerations(q: &[f64; 3], qd: &[f64; 3], torque: f64, cfg: &ArmConfig) -> Result<[f64; 3]> {
    let phi = link_angles(q);
    let omega = [qd[0], qd[0] + qd[1], qd[0] + qd[1] + qd[2]];
    let mut trig = [(0.0, 0.0); 3];
    for k in 0..3 {
        trig[k] = phi[k].sin_cos();
    }

    let mut mass = Matrix3::zeros();
    let spring = |j: usize| cfg.joint_stiffness[j] * (q[j] - cfg.initial_angles[j]);
    let stop = |j: usize| {
        let over = q[j] - q[j].clamp(-cfg.joint_limits[j], cfg.joint_limits[j]);
        if over != 0.0 {
            -cfg.limit_stiffness * over - cfg.limit_damping * qd[j]
        } else {
            0.0
        }
    };
    let mut rhs = Vector3::new(
        stop(0) - cfg.joint_damping[0] * qd[0] - spring(0),
        torque + stop(1) - cfg.joint_damping[1] * qd[1] - spring(1),
        stop(2) - cfg.joint_damping[2] * qd[2] - spring(2),
    );
    for i in 0..3 {
        let m = cfg.link_masses[i];
        // Jacobian columns of point mass i, and its velocity-product acceleration.
        let mut jac = [[0.0; 2]; 3];
        let mut bias = [0.0; 2];
        for k in 0..=i {
            let l = cfg.link_lengths[k];
            let (s, c) = trig[k];
            for col in jac.iter_mut().take(k + 1) {
                col[0] += l * c;
                col[1] += l * s;
            }
            let w2 = omega[k] * omega[k];
            bias[0] -= l * s * w2;
            bias[1] += l * c * w2;
        }
        for a in 0..3 {
            for b in 0..3 {
                mass[(a, b)] += m * (jac[a][0] * jac[b][0] + jac[a][1] * jac[b][1]);
            }
            rhs[a] -= m * (jac[a][0] * bias[0] + jac[a][1] * bias[1]);
            rhs[a] -= m * cfg.gravity * jac[a][1];
        }
    }
    let chol = mass
        .cholesky()
        .ok_or_else(|| Error::NumericDomain("arm mass matrix is not positive definite".into()))?;
    let acc = chol.solve(&rhs);
    Ok([acc[0], acc[1], acc[2]])
}

fn check_finite(state: &ArmState) -> Result<()> {
    let finite = state
        .joint_angles
        .iter()
        .chain(state.joint_velocities.iter())
        .all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::NumericDomain(format!("non-finite arm state {state:?}")))
    }
}

/// Advances the arm by one `dt` with RK4, holding the (clamped) motor torque.
pub fn step(state: &ArmState, torque: f64, cfg: &ArmConfig) -> Result<ArmState> {
    check_finite(state)?;
    if torque.is_nan() {
        return Err(Error::NumericDomain("torque is NaN".into()));
    }
    let tau = torque.clamp(-cfg.torque_limit, cfg.torque_limit);
    let h = cfg.dt;
    let q0 = state.joint_angles;
    let v0 = state.joint_velocities;
    let add = |a: &[f64; 3], b: &[f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];

    let a1 = accelerations(&q0, &v0, tau, cfg)?;
    let q2 = add(&q0, &v0, 0.5 * h);
    let v2 = add(&v0, &a1, 0.5 * h);
    let a2 = accelerations(&q2, &v2, tau, cfg)?;
    let q3 = add(&q0, &v2, 0.5 * h);
    let v3 = add(&v0, &a2, 0.5 * h);
    let a3 = accelerations(&q3, &v3, tau, cfg)?;
    let q4 = add(&q0, &v3, h);
    let v4 = add(&v0, &a3, h);
    let a4 = accelerations(&q4, &v4, tau, cfg)?;

    let mut next = *state;
    for j in 0..3 {
        next.joint_angles[j] = q0[j] + h / 6.0 * (v0[j] + 2.0 * v2[j] + 2.0 * v3[j] + v4[j]);
        next.joint_velocities[j] = v0[j] + h / 6.0 * (a1[j] + 2.0 * a2[j] + 2.0 * a3[j] + a4[j]);
    }
    check_finite(&next)?;
    Ok(next)
}

/// PID torque for the actuated joint; returns the torque and the updated integral.
///
/// The integral accumulates `e·dt` before it is used.
pub fn pid_torque(
    desired_angle: f64,
    desired_velocity: f64,
    state: &ArmState,
    gains: &PidGains,
    integrator: f64,
    dt: f64,
) -> (f64, f64) {
    let error = desired_angle - state.joint_angles[1];
    let integral = integrator + error * dt;
    let torque =
        gains.kp * error + gains.ki * integral + gains.kd * (desired_velocity - state.joint_velocities[1]);
    (torque, integral)
}

/// Smallest positive root of `a t² + b t + c = 0`, if any.
fn first_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if a == 0.0 {
        if b == 0.0 {
            return None;
        }
        let t = -c / b;
        return (t > 0.0).then_some(t);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // numerically stable pair of roots
    let qq = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if qq == 0.0 {
        (0.0, 0.0)
    } else {
        (qq / a, c / qq)
    };
    let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
    if lo > 0.0 {
        Some(lo)
    } else if hi > 0.0 {
        Some(hi)
    } else {
        None
    }
}

/// Where a drag-free dart released at `release` first meets the room boundary.
pub fn ballistic_impact(release: &ReleaseState, cfg: &ArmConfig) -> Result<[f64; 2]> {
    let [px, py] = release.position;
    let [vx, vy] = release.velocity;
    if !(px.is_finite() && py.is_finite() && vx.is_finite() && vy.is_finite()) {
        return Err(Error::NumericDomain("non-finite release state".into()));
    }
    if !cfg.strictly_inside(release.position) {
        return Err(Error::Geometry(format!(
            "release point ({px}, {py}) is not strictly inside the room"
        )));
    }
    let g = cfg.gravity;
    let (w, h) = (cfg.room_width, cfg.room_height);

    #[derive(Clone, Copy)]
    enum Hit {
        Left,
        Right,
        Floor,
        Ceiling,
    }
    let mut best: Option<(f64, Hit)> = None;
    let mut consider = |t: Option<f64>, hit: Hit| {
        if let Some(t) = t {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, hit));
            }
        }
    };
    if vx > 0.0 {
        consider(Some((w - px) / vx), Hit::Right);
    } else if vx < 0.0 {
        consider(Some(-px / vx), Hit::Left);
    }
    // y(t) = py + vy t − g t² / 2
    consider(first_positive_root(0.5 * g, -vy, h - py), Hit::Ceiling);
    consider(first_positive_root(0.5 * g, -vy, -py), Hit::Floor);

    let (t, hit) = best.ok_or_else(|| Error::Geometry("dart never reaches the room boundary".into()))?;
    let mut p = [px + vx * t, py + vy * t - 0.5 * g * t * t];
    match hit {
        Hit::Left => p[0] = 0.0,
        Hit::Right => p[0] = w,
        Hit::Floor => p[1] = 0.0,
        Hit::Ceiling => p[1] = h,
    }
    p[0] = p[0].clamp(0.0, w);
    p[1] = p[1].clamp(0.0, h);
    Ok(p)
}

/// Distance from `p` to the nearest of the four room walls.
pub fn boundary_gap(p: [f64; 2], cfg: &ArmConfig) -> f64 {
    let inside = p[0] >= 0.0 && p[0] <= cfg.room_width && p[1] >= 0.0 && p[1] <= cfg.room_height;
    let gap = p[0]
        .abs()
        .min((cfg.room_width - p[0]).abs())
        .min(p[1].abs())
        .min((cfg.room_height - p[1]).abs());
    if inside {
        gap
    } else {
        f64::INFINITY
    }
}

/// Options for [`simulate_throw`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TraceOptions {
    /// Record every `n`-th arm state; `None` records nothing.
    pub record_stride: Option<usize>,
}

/// Executes one throw: the primitive drives joint 2 through the PID loop and
/// the dart leaves the hand at the first sample where the phase is `≤ λ`.
///
/// Simulation stops at release; flight is resolved in closed form.
pub fn simulate_throw(
    theta: &PolicyVector,
    task: &Task,
    ctx: &SimContext,
    trace: TraceOptions,
) -> Result<ThrowOutcome> {
    theta.validate()?;
    let cfg = &ctx.arm;
    let lambda = theta.lambda_release();
    let mut state = cfg.initial_state();
    let mut dmp = DmpIntegrator::new(theta, state.joint_angles[1], &ctx.dmp, cfg.dt)?;
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let mut integral = 0.0;
    let mut trajectory = Vec::new();

    for n in 0..=steps {
        let desired = dmp.sample();
        if desired.phase <= lambda {
            state.dart_held = false;
            let release = tip_state(&state, cfg);
            let landing = ballistic_impact(&release, cfg)?;
            if trace.record_stride.is_some() {
                trajectory.push(ArmSample {
                    time: desired.time,
                    state,
                    desired_angle: desired.angle,
                    torque: 0.0,
                });
            }
            return Ok(ThrowOutcome {
                landing_point: landing,
                distance_to_target: euclid(landing, task.surface_point),
                released: true,
                release_state: Some(release),
                release_time: Some(desired.time),
                trajectory,
            });
        }
        if n == steps {
            break;
        }
        let (torque, next_integral) =
            pid_torque(desired.angle, desired.velocity, &state, &ctx.gains, integral, cfg.dt);
        integral = next_integral;
        if let Some(stride) = trace.record_stride {
            if n % stride.max(1) == 0 {
                trajectory.push(ArmSample {
                    time: desired.time,
                    state,
                    desired_angle: desired.angle,
                    torque: torque.clamp(-cfg.torque_limit, cfg.torque_limit),
                });
            }
        }
        state = step(&state, torque, cfg)?;
        dmp.step();
    }

    // Never let go: the held dart drops straight down from the hand.
    let tip = tip_state(&state, cfg);
    Ok(ThrowOutcome {
        landing_point: [tip.position[0].clamp(0.0, cfg.room_width), 0.0],
        distance_to_target: cfg.no_release_penalty,
        released: false,
        release_state: None,
        release_time: None,
        trajectory,
    })
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
