//! Planar tree kinematics over the base and the joint-driven links.
//!
//! Body 0 is the base; body `1 + i` is link `i`. Generalized velocities are ordered
//! `[vx, vz, pitch_rate, qdot...]`, so the rotational dof of body `b` is `2 + b`.

use crate::motion::RobotModel;
use crate::scalar::Real;

pub(crate) type V2<T> = [T; 2];

#[inline]
pub(crate) fn rot<T: Real>(theta: T, v: V2<T>) -> V2<T> {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Counter-clockwise quarter turn.
#[inline]
pub(crate) fn perp<T: Real>(v: V2<T>) -> V2<T> {
    [-v[1], v[0]]
}

#[inline]
pub(crate) fn dot<T: Real>(a: V2<T>, b: V2<T>) -> T {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn cross<T: Real>(a: V2<T>, b: V2<T>) -> T {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub(crate) fn sub<T: Real>(a: V2<T>, b: V2<T>) -> V2<T> {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn add<T: Real>(a: V2<T>, b: V2<T>) -> V2<T> {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub(crate) fn scale<T: Real>(s: T, a: V2<T>) -> V2<T> {
    [s * a[0], s * a[1]]
}

fn v2<T: Real>(a: [f64; 2]) -> V2<T> {
    [T::of(a[0]), T::of(a[1])]
}

#[derive(Debug, Clone)]
pub(crate) struct Body<T> {
    pub parent: Option<usize>,
    pub origin: V2<T>,
    pub mass: T,
    pub inertia: T,
    pub com: V2<T>,
    /// Bodies from the base down to and including this one.
    pub chain: Vec<usize>,
}

/// Contact or keypoint location on a body.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BodyPoint<T> {
    pub body: usize,
    pub local: V2<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct Tree<T> {
    pub bodies: Vec<Body<T>>,
    pub contacts: Vec<BodyPoint<T>>,
    pub keypoints: Vec<BodyPoint<T>>,
    /// Foot link bodies, in `RobotModel::feet` order.
    pub feet: Vec<usize>,
    pub total_mass: T,
}

impl<T: Real> Tree<T> {
    pub fn new(robot: &RobotModel) -> Self {
        let mut bodies = vec![Body {
            parent: None,
            origin: [T::zero(); 2],
            mass: T::of(robot.base.mass),
            inertia: T::of(robot.base.inertia),
            com: v2(robot.base.com_offset),
            chain: vec![0],
        }];
        for l in &robot.links {
            let parent = l.parent.map_or(0, |p| p + 1);
            let mut chain = bodies[parent].chain.clone();
            chain.push(bodies.len());
            bodies.push(Body {
                parent: Some(parent),
                origin: v2(l.origin),
                mass: T::of(l.mass),
                inertia: T::of(l.inertia),
                com: v2(l.com_offset),
                chain,
            });
        }
        let mut contacts: Vec<_> = robot
            .base
            .contact_points
            .iter()
            .map(|&p| BodyPoint { body: 0, local: v2(p) })
            .collect();
        for (i, l) in robot.links.iter().enumerate() {
            contacts.extend(l.contact_points.iter().map(|&p| BodyPoint {
                body: i + 1,
                local: v2(p),
            }));
        }
        let keypoints = robot
            .keypoints
            .iter()
            .map(|k| BodyPoint {
                body: k.link + 1,
                local: v2(k.point),
            })
            .collect();
        Tree {
            total_mass: T::of(robot.total_mass()),
            bodies,
            contacts,
            keypoints,
            feet: robot.feet.iter().map(|f| f + 1).collect(),
        }
    }

    pub fn n_bodies(&self) -> usize {
        self.bodies.len()
    }

    pub fn n_dof(&self) -> usize {
        self.bodies.len() + 2
    }
}

/// Per-body world-frame kinematic quantities.
#[derive(Debug, Clone, Default)]
pub(crate) struct Frames<T> {
    pub theta: Vec<T>,
    pub omega: Vec<T>,
    /// Frame origin (the body's pivot).
    pub p: Vec<V2<T>>,
    pub v: Vec<V2<T>>,
    /// Origin acceleration with zero generalized acceleration.
    pub ab: Vec<V2<T>>,
}

impl<T: Real> Frames<T> {
    pub fn with_bodies(n: usize) -> Self {
        Frames {
            theta: vec![T::zero(); n],
            omega: vec![T::zero(); n],
            p: vec![[T::zero(); 2]; n],
            v: vec![[T::zero(); 2]; n],
            ab: vec![[T::zero(); 2]; n],
        }
    }

    /// `u = [x, z, pitch, q...]`, `ud = [vx, vz, pitch_rate, qdot...]`.
    pub fn compute(&mut self, tree: &Tree<T>, u: &[T], ud: &[T]) {
        self.theta[0] = u[2];
        self.omega[0] = ud[2];
        self.p[0] = [u[0], u[1]];
        self.v[0] = [ud[0], ud[1]];
        self.ab[0] = [T::zero(); 2];
        for b in 1..tree.n_bodies() {
            let pb = tree.bodies[b].parent.expect("links have a parent");
            let r = rot(self.theta[pb], tree.bodies[b].origin);
            let w = self.omega[pb];
            self.p[b] = add(self.p[pb], r);
            self.v[b] = add(self.v[pb], scale(w, perp(r)));
            self.ab[b] = sub(self.ab[pb], scale(w * w, r));
            self.theta[b] = self.theta[pb] + u[2 + b];
            self.omega[b] = w + ud[2 + b];
        }
    }

    /// World position, velocity and bias acceleration of a body-fixed point.
    #[inline]
    pub fn point(&self, body: usize, local: V2<T>) -> (V2<T>, V2<T>, V2<T>) {
        let r = rot(self.theta[body], local);
        let w = self.omega[body];
        (
            add(self.p[body], r),
            add(self.v[body], scale(w, perp(r))),
            sub(self.ab[body], scale(w * w, r)),
        )
    }

    /// Adds the generalized force of a world force `f` applied at world point `pt` on `body`.
    #[inline]
    pub fn apply_force(&self, tree: &Tree<T>, body: usize, pt: V2<T>, f: V2<T>, gen: &mut [T]) {
        gen[0] += f[0];
        gen[1] += f[1];
        for &k in &tree.bodies[body].chain {
            gen[2 + k] += cross(sub(pt, self.p[k]), f);
        }
    }

    /// Fills `row` with the Jacobian of component `axis` of a world point on `body`.
    pub fn point_jacobian_row(&self, tree: &Tree<T>, body: usize, pt: V2<T>, axis: usize, row: &mut [T]) {
        row.iter_mut().for_each(|v| *v = T::zero());
        row[axis] = T::one();
        for &k in &tree.bodies[body].chain {
            row[2 + k] = perp(sub(pt, self.p[k]))[axis];
        }
    }
}
