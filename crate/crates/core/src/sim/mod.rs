//! Planar floating-base biped simulator with penalty ground contact and PD actuation.
//!
//! The generalized mass matrix comes from a composite-rigid-body pass over the link
//! tree. Ground contact is a one-sided spring-damper in the normal direction and a
//! tangential damper capped by Coulomb friction, both linearly implicit in the new
//! velocity so that light links touching the ground stay stable. Integration is
//! semi-implicit Euler. After each floating-base step the base velocity is adjusted so
//! that linear momentum and angular momentum about the center of mass match their
//! impulse-integrated values; without this, the velocity-product terms that the
//! explicit bias force leaves behind make free flight drift. Joint limits are not
//! enforced by the simulator; they bound the PD targets instead.

mod kinematics;
mod linalg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::RobotModel;
use crate::scalar::Real;
use kinematics::{add, cross, dot, perp, scale, sub, Frames, Tree, V2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundConfig {
    pub stiffness: f64,
    pub damping: f64,
    pub friction: f64,
    /// Tangential damping of sticking contacts, N·s/m.
    pub tangential_damping: f64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        GroundConfig {
            stiffness: 2e4,
            damping: 1e2,
            friction: 1.0,
            tangential_damping: 5e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt_physics: f64,
    pub control_decimation: usize,
    pub gravity: f64,
    pub ground: GroundConfig,
    pub pd_lower: PdGains,
    pub pd_upper: PdGains,
    /// Per-joint gains overriding `pd_lower` / `pd_upper` when present.
    pub pd_gains: Option<Vec<PdGains>>,
    /// Per-joint torque limits overriding the robot model when present.
    pub torque_limits: Option<Vec<f64>>,
    pub contact_enabled: bool,
    /// Pins the base in place; used for bench tests of the joint dynamics.
    pub fixed_base: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_physics: 1.0 / 200.0,
            control_decimation: 4,
            gravity: 9.81,
            ground: GroundConfig::default(),
            pd_lower: PdGains { kp: 80.0, kd: 2.0 },
            pd_upper: PdGains { kp: 40.0, kd: 1.0 },
            pd_gains: None,
            torque_limits: None,
            contact_enabled: true,
            fixed_base: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, robot: &RobotModel) -> Result<()> {
        if !(self.dt_physics > 0.0) || self.control_decimation < 1 {
            return Err(Error::Argument(
                "dt_physics must be positive and control_decimation at least 1".into(),
            ));
        }
        let n = robot.n_joints();
        if self.pd_gains.as_ref().is_some_and(|g| g.len() != n)
            || self.torque_limits.as_ref().is_some_and(|t| t.len() != n)
        {
            return Err(Error::Argument(format!(
                "per-joint gain and torque-limit overrides need {n} entries"
            )));
        }
        Ok(())
    }

    pub fn dt_control(&self) -> f64 {
        self.dt_physics * self.control_decimation as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasePose<T> {
    pub x: T,
    pub z: T,
    pub pitch: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseVel<T> {
    pub vx: T,
    pub vz: T,
    pub pitch_rate: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState<T> {
    pub base: BasePose<T>,
    pub base_vel: BaseVel<T>,
    pub q: Vec<T>,
    pub qdot: Vec<T>,
    pub foot_contact: Vec<bool>,
    pub time: f64,
}

impl<T: Real> SimState<T> {
    pub fn is_finite(&self) -> bool {
        [self.base.x, self.base.z, self.base.pitch]
            .iter()
            .chain([self.base_vel.vx, self.base_vel.vz, self.base_vel.pitch_rate].iter())
            .chain(self.q.iter())
            .chain(self.qdot.iter())
            .all(|v| v.is_finite())
    }
}

/// Ground reaction at one contact point during the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactForce {
    pub point: [f64; 2],
    pub penetration: f64,
    pub normal: f64,
    pub tangential: f64,
}

/// `clamp(kp (target - q) - kd qdot, ±limit)` per joint.
pub fn pd_torque<T: Real>(target: &[T], q: &[T], qdot: &[T], gains: &[PdGains], limits: &[f64]) -> Vec<T> {
    let mut out = vec![T::zero(); q.len()];
    pd_torque_into(target, q, qdot, gains, limits, &mut out);
    out
}

pub fn pd_torque_into<T: Real>(
    target: &[T],
    q: &[T],
    qdot: &[T],
    gains: &[PdGains],
    limits: &[f64],
    out: &mut [T],
) {
    debug_assert!(target.len() == q.len() && qdot.len() == q.len() && gains.len() == q.len());
    for i in 0..q.len() {
        let tau = T::of(gains[i].kp) * (target[i] - q[i]) - T::of(gains[i].kd) * qdot[i];
        let lim = T::of(limits[i]);
        out[i] = tau.max(-lim).min(lim);
    }
}

/// Unit gravity in the base frame.
pub fn projected_gravity<T: Real>(pitch: T) -> [T; 2] {
    [-pitch.sin(), -pitch.cos()]
}

/// Sets the base forward velocity; everything else is untouched.
pub fn apply_push<T: Real>(state: &mut SimState<T>, push_vel: T) {
    state.base_vel.vx = push_vel;
}

/// World positions of the robot's keypoints.
pub fn forward_kinematics(robot: &RobotModel, base: &BasePose<f64>, q: &[f64]) -> Vec<[f64; 2]> {
    let tree = Tree::<f64>::new(robot);
    let mut u = vec![base.x, base.z, base.pitch];
    u.extend_from_slice(q);
    let ud = vec![0.0; u.len()];
    let mut frames = Frames::with_bodies(tree.n_bodies());
    frames.compute(&tree, &u, &ud);
    tree.keypoints
        .iter()
        .map(|k| frames.point(k.body, k.local).0)
        .collect()
}

const MAX_SPEED: f64 = 1e3;

pub struct Simulator<T: Real> {
    robot: RobotModel,
    config: SimConfig,
    tree: Tree<T>,
    gains: Vec<PdGains>,
    torque_limits: Vec<f64>,
    armature: Vec<T>,
    lower: Vec<usize>,
    upper: Vec<usize>,
    frames: Frames<T>,
    u: Vec<T>,
    ud: Vec<T>,
    mass: Vec<T>,
    lhs: Vec<T>,
    rhs: Vec<T>,
    gen: Vec<T>,
    tau: Vec<T>,
    contacts: Vec<ContactForce>,
}

struct ActiveContact<T> {
    point: V2<T>,
    depth: T,
    jt: Vec<T>,
    jn: Vec<T>,
    pressing: bool,
    /// Normal force from the latest solve; sliding friction is capped against it.
    normal: T,
    /// Direction of the capped sliding force.
    slide: Option<T>,
}

fn row_dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// `m += w * a a^T` for a sparse row `a`.
fn add_outer<T: Real>(m: &mut [T], n: usize, w: T, a: &[T]) {
    for i in 0..n {
        if a[i] == T::zero() {
            continue;
        }
        let wi = w * a[i];
        for j in 0..n {
            m[i * n + j] += wi * a[j];
        }
    }
}

impl<T: Real> Simulator<T> {
    pub fn new(robot: &RobotModel, config: SimConfig) -> Result<Self> {
        robot.validate()?;
        config.validate(robot)?;
        let tree = Tree::new(robot);
        let n = tree.n_dof();
        let gains = config.pd_gains.clone().unwrap_or_else(|| {
            robot
                .joints
                .iter()
                .map(|j| if j.is_upper { config.pd_upper } else { config.pd_lower })
                .collect()
        });
        let torque_limits = config
            .torque_limits
            .clone()
            .unwrap_or_else(|| robot.joints.iter().map(|j| j.torque_limit).collect());
        Ok(Simulator {
            frames: Frames::with_bodies(tree.n_bodies()),
            armature: robot.joints.iter().map(|j| T::of(j.armature)).collect(),
            lower: robot.lower_indices(),
            upper: robot.upper_indices(),
            robot: robot.clone(),
            config,
            tree,
            gains,
            torque_limits,
            u: vec![T::zero(); n],
            ud: vec![T::zero(); n],
            mass: vec![T::zero(); n * n],
            lhs: vec![T::zero(); n * n],
            rhs: vec![T::zero(); n],
            gen: vec![T::zero(); n],
            tau: vec![T::zero(); robot.n_joints()],
            contacts: Vec::new(),
        })
    }

    pub fn robot(&self) -> &RobotModel {
        &self.robot
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn gains(&self) -> &[PdGains] {
        &self.gains
    }

    pub fn torque_limits(&self) -> &[f64] {
        &self.torque_limits
    }

    pub fn lower_indices(&self) -> &[usize] {
        &self.lower
    }

    pub fn upper_indices(&self) -> &[usize] {
        &self.upper
    }

    pub fn n_dof(&self) -> usize {
        self.tree.n_dof()
    }

    /// Contact forces applied during the most recent step.
    pub fn last_contacts(&self) -> &[ContactForce] {
        &self.contacts
    }

    /// Joint torques applied by the last [`step`](Self::step), indexed by joint.
    pub fn last_torques(&self) -> &[T] {
        &self.tau
    }

    /// Standing at the default pose with the soles on the ground.
    pub fn initial_state(&self) -> SimState<T> {
        let z = T::of(self.robot.base.nominal_height);
        self.state_at(BasePose { x: T::zero(), z, pitch: T::zero() }, self.robot.q0().into_iter().map(T::of).collect())
    }

    pub fn state_at(&self, base: BasePose<T>, q: Vec<T>) -> SimState<T> {
        let n = q.len();
        let mut s = SimState {
            base,
            base_vel: BaseVel { vx: T::zero(), vz: T::zero(), pitch_rate: T::zero() },
            q,
            qdot: vec![T::zero(); n],
            foot_contact: vec![false; self.tree.feet.len()],
            time: 0.0,
        };
        self.pack(&s);
        let mut frames = Frames::with_bodies(self.tree.n_bodies());
        frames.compute(&self.tree, &self.u, &self.ud);
        s.foot_contact = self.foot_flags(&frames);
        s
    }

    fn pack(&self, s: &SimState<T>) -> (Vec<T>, Vec<T>) {
        let mut u = Vec::with_capacity(self.n_dof());
        u.extend([s.base.x, s.base.z, s.base.pitch]);
        u.extend_from_slice(&s.q);
        let mut ud = Vec::with_capacity(self.n_dof());
        ud.extend([s.base_vel.vx, s.base_vel.vz, s.base_vel.pitch_rate]);
        ud.extend_from_slice(&s.qdot);
        (u, ud)
    }

    fn load(&mut self, s: &SimState<T>) {
        self.u[0] = s.base.x;
        self.u[1] = s.base.z;
        self.u[2] = s.base.pitch;
        self.u[3..].copy_from_slice(&s.q);
        self.ud[0] = s.base_vel.vx;
        self.ud[1] = s.base_vel.vz;
        self.ud[2] = s.base_vel.pitch_rate;
        self.ud[3..].copy_from_slice(&s.qdot);
    }

    fn store(&self, s: &mut SimState<T>) {
        s.base = BasePose { x: self.u[0], z: self.u[1], pitch: self.u[2] };
        s.base_vel = BaseVel { vx: self.ud[0], vz: self.ud[1], pitch_rate: self.ud[2] };
        s.q.copy_from_slice(&self.u[3..]);
        s.qdot.copy_from_slice(&self.ud[3..]);
    }

    fn foot_flags(&self, frames: &Frames<T>) -> Vec<bool> {
        self.tree
            .feet
            .iter()
            .map(|&f| {
                self.tree
                    .contacts
                    .iter()
                    .filter(|c| c.body == f)
                    .any(|c| frames.point(c.body, c.local).0[1] < T::zero())
            })
            .collect()
    }

    fn check_state(&self, state: &SimState<T>) -> Result<()> {
        if state.q.len() != self.robot.n_joints() || state.qdot.len() != self.robot.n_joints() {
            return Err(Error::shape(format!(
                "state has {} joint positions and {} velocities, robot has {} joints",
                state.q.len(),
                state.qdot.len(),
                self.robot.n_joints()
            )));
        }
        Ok(())
    }

    /// Composite-rigid-body mass matrix at the configuration held in `self.frames`.
    fn build_mass_matrix(&mut self) {
        let nb = self.tree.n_bodies();
        let n = self.tree.n_dof();
        let f = &self.frames;
        // composite mass, first moment and second moment about the world origin
        let mut cm = vec![T::zero(); nb];
        let mut ch = vec![[T::zero(); 2]; nb];
        let mut cj = vec![T::zero(); nb];
        for b in 0..nb {
            let body = &self.tree.bodies[b];
            let c = f.point(b, body.com).0;
            cm[b] = body.mass;
            ch[b] = scale(body.mass, c);
            cj[b] = body.mass * dot(c, c) + body.inertia;
        }
        for b in (1..nb).rev() {
            let p = self.tree.bodies[b].parent.expect("links have a parent");
            cm[p] = cm[p] + cm[b];
            ch[p] = add(ch[p], ch[b]);
            cj[p] = cj[p] + cj[b];
        }
        let m = &mut self.mass;
        m.iter_mut().for_each(|v| *v = T::zero());
        m[0] = cm[0];
        m[n + 1] = cm[0];
        for l in 0..nb {
            let dl = 2 + l;
            let pl = f.p[l];
            let (ms, hs, js) = (cm[l], ch[l], cj[l]);
            let lever = sub(hs, scale(ms, pl));
            let tx = -lever[1];
            let tz = lever[0];
            m[dl] = tx;
            m[dl * n] = tx;
            m[n + dl] = tz;
            m[dl * n + 1] = tz;
            for &k in &self.tree.bodies[l].chain {
                let dk = 2 + k;
                let pk = f.p[k];
                let v = js - dot(add(pk, pl), hs) + ms * dot(pk, pl);
                m[dk * n + dl] = v;
                m[dl * n + dk] = v;
            }
        }
        for (i, a) in self.armature.iter().enumerate() {
            m[(3 + i) * n + 3 + i] += *a;
        }
    }

    /// Linear momentum and angular momentum about the COM, plus the COM, from `self.frames`.
    fn momentum_from_frames(&self) -> (V2<T>, T, V2<T>) {
        let mut p = [T::zero(); 2];
        let mut h = [T::zero(); 2];
        for (b, body) in self.tree.bodies.iter().enumerate() {
            let (c, v, _) = self.frames.point(b, body.com);
            p = add(p, scale(body.mass, v));
            h = add(h, scale(body.mass, c));
        }
        let com = scale(T::one() / self.tree.total_mass, h);
        let mut l = T::zero();
        for (b, body) in self.tree.bodies.iter().enumerate() {
            let (c, v, _) = self.frames.point(b, body.com);
            l += body.mass * cross(sub(c, com), v) + body.inertia * self.frames.omega[b];
        }
        (p, l, com)
    }

    /// Advances one physics step with the given joint torques (clamped to the torque limits).
    pub fn step_with_torques(&mut self, state: &mut SimState<T>, torques: &[T]) -> Result<()> {
        self.check_state(state)?;
        if torques.len() != self.robot.n_joints() {
            return Err(Error::shape(format!(
                "expected {} joint torques, got {}",
                self.robot.n_joints(),
                torques.len()
            )));
        }
        let n = self.tree.n_dof();
        let dt = T::of(self.config.dt_physics);
        let g = T::of(self.config.gravity);
        let gvec = [T::zero(), -g];
        let ground = self.config.ground;
        let fixed = self.config.fixed_base;

        self.load(state);
        self.frames.compute(&self.tree, &self.u, &self.ud);
        self.build_mass_matrix();

        // generalized forces: actuation, gravity and velocity-product terms
        let gen = &mut self.gen;
        gen.iter_mut().for_each(|v| *v = T::zero());
        for (i, &t) in torques.iter().enumerate() {
            let lim = T::of(self.torque_limits[i]);
            gen[3 + i] = t.max(-lim).min(lim);
        }
        for (b, body) in self.tree.bodies.iter().enumerate() {
            let (c, _, ab) = self.frames.point(b, body.com);
            let f = scale(body.mass, sub(gvec, ab));
            self.frames.apply_force(&self.tree, b, c, f, gen);
        }

        // contact: linearly implicit spring-damper normal, implicit tangential damping,
        // resolved over an active set (separating normals drop out, over-cap friction slides)
        let mut active: Vec<ActiveContact<T>> = Vec::new();
        self.contacts.clear();
        if self.config.contact_enabled {
            for cp in &self.tree.contacts {
                let pt = self.frames.point(cp.body, cp.local).0;
                let depth = -pt[1];
                if depth > T::zero() {
                    let mut jt = vec![T::zero(); n];
                    let mut jn = vec![T::zero(); n];
                    self.frames.point_jacobian_row(&self.tree, cp.body, pt, 0, &mut jt);
                    self.frames.point_jacobian_row(&self.tree, cp.body, pt, 1, &mut jn);
                    active.push(ActiveContact {
                        point: pt,
                        depth,
                        jt,
                        jn,
                        pressing: true,
                        normal: T::zero(),
                        slide: None,
                    });
                }
            }
        }
        let k = T::of(ground.stiffness);
        let cn = T::of(ground.damping) + k * dt;
        let ct = T::of(ground.tangential_damping);
        let mu = T::of(ground.friction);
        let mut ud_new = vec![T::zero(); n];
        let max_iter = 2 * active.len() + 8;
        for iter in 0..max_iter {
            self.lhs.copy_from_slice(&self.mass);
            for i in 0..n {
                let mut s = T::zero();
                for j in 0..n {
                    s += self.mass[i * n + j] * self.ud[j];
                }
                self.rhs[i] = s + dt * self.gen[i];
            }
            for c in active.iter().filter(|c| c.pressing) {
                add_outer(&mut self.lhs, n, dt * cn, &c.jn);
                for i in 0..n {
                    self.rhs[i] += dt * k * c.depth * c.jn[i];
                }
                match c.slide {
                    None => add_outer(&mut self.lhs, n, dt * ct, &c.jt),
                    Some(sign) => {
                        let f = sign * mu * c.normal;
                        for i in 0..n {
                            self.rhs[i] += dt * f * c.jt[i];
                        }
                    }
                }
            }
            if fixed {
                for i in 0..3 {
                    for j in 0..n {
                        self.lhs[i * n + j] = T::zero();
                        self.lhs[j * n + i] = T::zero();
                    }
                    self.lhs[i * n + i] = T::one();
                    self.rhs[i] = T::zero();
                }
            }
            if !linalg::cholesky(&mut self.lhs, n) {
                return Err(Error::Divergence { time: state.time });
            }
            ud_new.copy_from_slice(&self.rhs);
            linalg::cholesky_solve(&self.lhs, n, &mut ud_new);
            if iter + 1 == max_iter {
                break;
            }
            let mut changed = false;
            for c in active.iter_mut().filter(|c| c.pressing) {
                let fnorm = k * c.depth - cn * row_dot(&c.jn, &ud_new);
                if fnorm < T::zero() {
                    c.pressing = false;
                    changed = true;
                    continue;
                }
                match c.slide {
                    None => {
                        let ft = -ct * row_dot(&c.jt, &ud_new);
                        if ft.abs() > mu * fnorm {
                            c.slide = Some(if ft > T::zero() { T::one() } else { -T::one() });
                            changed = true;
                        }
                    }
                    Some(_) => {
                        if (fnorm - c.normal).abs() > T::of(1e-9) * (T::one() + fnorm) {
                            changed = true;
                        }
                    }
                }
                c.normal = fnorm;
            }
            if !changed {
                break;
            }
        }

        // impulse-integrated momentum targets
        let (mut p_target, mut l_target, com) = self.momentum_from_frames();
        let mut fsum = scale(self.tree.total_mass, gvec);
        let mut tsum = T::zero();
        for c in active.iter().filter(|c| c.pressing) {
            let fnorm = k * c.depth - cn * row_dot(&c.jn, &ud_new);
            let ft = match c.slide {
                None => -ct * row_dot(&c.jt, &ud_new),
                Some(sign) => sign * mu * c.normal,
            };
            let f = [ft, fnorm];
            fsum = add(fsum, f);
            tsum += cross(sub(c.point, com), f);
            self.contacts.push(ContactForce {
                point: [c.point[0].f64(), c.point[1].f64()],
                penetration: c.depth.f64(),
                normal: fnorm.f64(),
                tangential: ft.f64(),
            });
        }
        p_target = add(p_target, scale(dt, fsum));
        l_target += dt * tsum;

        for i in 0..n {
            self.ud[i] = ud_new[i];
            self.u[i] += dt * ud_new[i];
        }
        self.frames.compute(&self.tree, &self.u, &self.ud);
        if !fixed {
            let (p, l, com) = self.momentum_from_frames();
            let mut ic = T::zero();
            for (b, body) in self.tree.bodies.iter().enumerate() {
                let c = self.frames.point(b, body.com).0;
                let r = sub(c, com);
                ic += body.mass * dot(r, r) + body.inertia;
            }
            let dw = (l_target - l) / ic;
            let m = self.tree.total_mass;
            let dp = sub(sub(p_target, p), scale(m * dw, perp(sub(com, self.frames.p[0]))));
            self.ud[0] += dp[0] / m;
            self.ud[1] += dp[1] / m;
            self.ud[2] += dw;
            self.frames.compute(&self.tree, &self.u, &self.ud);
        }

        self.store(state);
        state.time += self.config.dt_physics;
        state.foot_contact = self.foot_flags(&self.frames);
        let limit = T::of(MAX_SPEED);
        if !state.is_finite() || self.ud.iter().any(|v| v.abs() > limit) {
            return Err(Error::Divergence { time: state.time });
        }
        Ok(())
    }

    /// One physics step: caller-supplied lower-body torques, PD on the upper-body targets.
    pub fn step(&mut self, state: &mut SimState<T>, lower_torques: &[T], upper_target: &[T]) -> Result<()> {
        self.check_state(state)?;
        if lower_torques.len() != self.lower.len() || upper_target.len() != self.upper.len() {
            return Err(Error::shape(format!(
                "expected {} lower torques and {} upper targets, got {} and {}",
                self.lower.len(),
                self.upper.len(),
                lower_torques.len(),
                upper_target.len()
            )));
        }
        let mut tau = std::mem::take(&mut self.tau);
        for (k, &j) in self.lower.iter().enumerate() {
            tau[j] = lower_torques[k];
        }
        self.upper_pd(state, upper_target, &mut tau);
        let r = self.step_with_torques(state, &tau);
        self.tau = tau;
        r
    }

    fn upper_pd(&self, state: &SimState<T>, upper_target: &[T], tau: &mut [T]) {
        for (k, &j) in self.upper.iter().enumerate() {
            let mut out = [T::zero()];
            pd_torque_into(
                &upper_target[k..k + 1],
                &state.q[j..j + 1],
                &state.qdot[j..j + 1],
                &self.gains[j..j + 1],
                &self.torque_limits[j..j + 1],
                &mut out,
            );
            tau[j] = out[0];
        }
    }

    /// PD on both halves with targets held for `control_decimation` physics steps.
    pub fn control_step(&mut self, state: &mut SimState<T>, lower_targets: &[T], upper_target: &[T]) -> Result<()> {
        if lower_targets.len() != self.lower.len() {
            return Err(Error::shape(format!(
                "expected {} lower targets, got {}",
                self.lower.len(),
                lower_targets.len()
            )));
        }
        let mut lower_tau = vec![T::zero(); self.lower.len()];
        for _ in 0..self.config.control_decimation {
            for (k, &j) in self.lower.iter().enumerate() {
                let mut out = [T::zero()];
                pd_torque_into(
                    &lower_targets[k..k + 1],
                    &state.q[j..j + 1],
                    &state.qdot[j..j + 1],
                    &self.gains[j..j + 1],
                    &self.torque_limits[j..j + 1],
                    &mut out,
                );
                lower_tau[k] = out[0];
            }
            self.step(state, &lower_tau, upper_target)?;
        }
        Ok(())
    }

    /// Kinetic, gravitational and contact-spring energy.
    pub fn energy(&self, state: &SimState<T>) -> f64 {
        let (u, ud) = self.pack(state);
        let mut frames = Frames::with_bodies(self.tree.n_bodies());
        frames.compute(&self.tree, &u, &ud);
        let g = self.config.gravity;
        let mut e = 0.0;
        for (b, body) in self.tree.bodies.iter().enumerate() {
            let (c, v, _) = frames.point(b, body.com);
            let (m, i, w) = (body.mass.f64(), body.inertia.f64(), frames.omega[b].f64());
            e += 0.5 * m * dot(v, v).f64() + 0.5 * i * w * w + m * g * c[1].f64();
        }
        for (a, qd) in self.armature.iter().zip(&state.qdot) {
            e += 0.5 * a.f64() * qd.f64() * qd.f64();
        }
        if self.config.contact_enabled {
            for cp in &self.tree.contacts {
                let d = -frames.point(cp.body, cp.local).0[1].f64();
                if d > 0.0 {
                    e += 0.5 * self.config.ground.stiffness * d * d;
                }
            }
        }
        e
    }

    /// Linear momentum, angular momentum about the COM, and the COM position.
    pub fn momentum(&mut self, state: &SimState<T>) -> ([T; 2], T, [T; 2]) {
        self.load(state);
        self.frames.compute(&self.tree, &self.u, &self.ud);
        self.momentum_from_frames()
    }

    /// Lowest contact-point height; negative when penetrating.
    pub fn min_contact_height(&self, state: &SimState<T>) -> f64 {
        let (u, ud) = self.pack(state);
        let mut frames = Frames::with_bodies(self.tree.n_bodies());
        frames.compute(&self.tree, &u, &ud);
        self.tree
            .contacts
            .iter()
            .map(|c| frames.point(c.body, c.local).0[1].f64())
            .fold(f64::INFINITY, f64::min)
    }

    /// The generalized mass matrix at `state`, row-major.
    pub fn mass_matrix(&mut self, state: &SimState<T>) -> Vec<T> {
        self.load(state);
        self.frames.compute(&self.tree, &self.u, &self.ud);
        self.build_mass_matrix();
        self.mass.clone()
    }

    /// Mass matrix assembled from per-body Jacobians, `sum m J^T J + I w^T w`.
    #[doc(hidden)]
    pub fn mass_matrix_from_jacobians(&mut self, state: &SimState<T>) -> Vec<T> {
        self.load(state);
        self.frames.compute(&self.tree, &self.u, &self.ud);
        let n = self.tree.n_dof();
        let mut m = vec![T::zero(); n * n];
        let mut jx = vec![T::zero(); n];
        let mut jz = vec![T::zero(); n];
        for (b, body) in self.tree.bodies.iter().enumerate() {
            let c = self.frames.point(b, body.com).0;
            self.frames.point_jacobian_row(&self.tree, b, c, 0, &mut jx);
            self.frames.point_jacobian_row(&self.tree, b, c, 1, &mut jz);
            let mut jw = vec![T::zero(); n];
            for &k in &body.chain {
                jw[2 + k] = T::one();
            }
            for i in 0..n {
                for j in 0..n {
                    m[i * n + j] += body.mass * (jx[i] * jx[j] + jz[i] * jz[j]) + body.inertia * jw[i] * jw[j];
                }
            }
        }
        for (i, a) in self.armature.iter().enumerate() {
            m[(3 + i) * n + 3 + i] += *a;
        }
        m
    }
}
