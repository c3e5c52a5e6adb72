//! Rigid-rod dynamics under gravity and tension-only spring-damper cables.
//!
//! Each rod is a uniform solid cylinder. Its body frame coincides with its
//! initial world frame, so every rod starts at identity orientation. A rod with
//! one pinned endpoint pivots spherically about it; a rod with both pinned is
//! static. Integration is semi-implicit Euler (velocity, then position).

use nalgebra::{Matrix3, UnitQuaternion};
use thiserror::Error;

use crate::structure::{CableSpec, End, Structure};
use crate::Vec3;

/// Anchor separations at or below this are treated as coincident.
pub const MIN_CABLE_LENGTH: f64 = 1e-12;

/// Speeds above this are treated as numerical blow-up.
const DIVERGENCE_SPEED: f64 = 1e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("cable `{0}` has coincident anchors")]
    CoincidentAnchors(String),
    #[error("simulation diverged at t = {time:.6} s: {culprit}")]
    Divergence { time: f64, culprit: String },
    #[error("cable `{cable}` references unknown rod `{rod}`")]
    UnresolvedAnchor { cable: String, rod: String },
    #[error("invalid time step {0}")]
    InvalidStep(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub gravity: Vec3,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            gravity: Vec3::new(0.0, 0.0, -9.81),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RodState {
    /// Centre of mass (m).
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
    pub linear_velocity: Vec3,
    /// World-frame angular velocity (rad/s).
    pub angular_velocity: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub time: f64,
    /// In structure rod order.
    pub rods: Vec<RodState>,
    /// In structure cable order.
    pub rest_lengths: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CableState {
    pub length: f64,
    /// X = L − rest.
    pub extension: f64,
    /// V = dL/dt.
    pub extension_rate: f64,
    /// Pull magnitude, ≥ 0.
    pub tension: f64,
}

/// Forces on the two anchors of a cable; `on_b == -on_a` exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CableForce {
    pub on_a: Vec3,
    pub on_b: Vec3,
    pub state: CableState,
}

/// A constant external force applied at a rod endpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointLoad {
    pub rod: usize,
    pub end: End,
    pub force: Vec3,
}

fn tension_law(k: f64, b: f64, extension: f64, rate: f64) -> f64 {
    if extension <= 0.0 {
        0.0
    } else {
        (k * extension + b * rate).max(0.0)
    }
}

fn evaluate(
    name: &str,
    k: f64,
    b: f64,
    rest: f64,
    pa: &Vec3,
    pb: &Vec3,
    va: &Vec3,
    vb: &Vec3,
) -> Result<CableForce, DynamicsError> {
    let d = pb - pa;
    let length = d.norm();
    if !(length > MIN_CABLE_LENGTH) {
        return Err(DynamicsError::CoincidentAnchors(name.to_string()));
    }
    let u = d / length;
    let extension = length - rest;
    let extension_rate = u.dot(&(vb - va));
    let tension = tension_law(k, b, extension, extension_rate);
    let on_a = u * tension;
    Ok(CableForce {
        on_a,
        on_b: -on_a,
        state: CableState {
            length,
            extension,
            extension_rate,
            tension,
        },
    })
}

/// Force pair of one cable given its anchor kinematics and current rest length.
pub fn cable_force(
    spec: &CableSpec,
    rest_length: f64,
    pa: &Vec3,
    pb: &Vec3,
    va: &Vec3,
    vb: &Vec3,
) -> Result<CableForce, DynamicsError> {
    evaluate(
        &spec.name,
        spec.stiffness,
        spec.damping,
        rest_length,
        pa,
        pb,
        va,
        vb,
    )
}

#[derive(Clone, Debug)]
enum Support {
    Free,
    /// Spherical joint at the pinned end; `offset` is the pinned end relative
    /// to the centre of mass in the body frame, `inertia` is about the pivot.
    Pivot {
        point: Vec3,
        offset: Vec3,
        inertia: Matrix3<f64>,
    },
    Static,
}

#[derive(Clone, Debug)]
struct RodModel {
    name: String,
    mass: f64,
    radius: f64,
    inertia: Matrix3<f64>,
    local_a: Vec3,
    local_b: Vec3,
    support: Support,
}

#[derive(Clone, Debug)]
struct CableModel {
    name: String,
    rod_a: usize,
    end_a: End,
    rod_b: usize,
    end_b: End,
    k: f64,
    b: f64,
}

/// A structure compiled for simulation. Indices follow structure order.
#[derive(Clone, Debug)]
pub struct Model {
    rods: Vec<RodModel>,
    cables: Vec<CableModel>,
    initial: SimState,
}

/// Solid-cylinder inertia tensor about the centre for a rod along unit `u`.
fn cylinder_inertia(mass: f64, radius: f64, length: f64, u: &Vec3) -> Matrix3<f64> {
    let transverse = mass * (3.0 * radius * radius + length * length) / 12.0;
    let axial = 0.5 * mass * radius * radius;
    Matrix3::identity() * transverse + (u * u.transpose()) * (axial - transverse)
}

impl Model {
    pub fn new(structure: &Structure) -> Result<Self, DynamicsError> {
        let mut rods = Vec::with_capacity(structure.rods().len());
        let mut states = Vec::with_capacity(structure.rods().len());
        for spec in structure.rods() {
            let centre = spec.center();
            let axis = (spec.endpoint_b - spec.endpoint_a) / spec.length();
            let inertia = cylinder_inertia(spec.mass, spec.radius, spec.length(), &axis);
            let local_a = spec.endpoint_a - centre;
            let local_b = spec.endpoint_b - centre;
            let fixed_a = structure.is_fixed(&crate::Anchor::new(spec.name.clone(), End::A));
            let fixed_b = structure.is_fixed(&crate::Anchor::new(spec.name.clone(), End::B));
            let support = match (fixed_a, fixed_b) {
                (true, true) => Support::Static,
                (false, false) => Support::Free,
                (pin_a, _) => {
                    let offset = if pin_a { local_a } else { local_b };
                    let parallel_axis = (Matrix3::identity() * offset.norm_squared()
                        - offset * offset.transpose())
                        * spec.mass;
                    Support::Pivot {
                        point: centre + offset,
                        offset,
                        inertia: inertia + parallel_axis,
                    }
                }
            };
            rods.push(RodModel {
                name: spec.name.clone(),
                mass: spec.mass,
                radius: spec.radius,
                inertia,
                local_a,
                local_b,
                support,
            });
            states.push(RodState {
                position: centre,
                orientation: UnitQuaternion::identity(),
                linear_velocity: Vec3::zeros(),
                angular_velocity: Vec3::zeros(),
            });
        }
        let mut cables = Vec::with_capacity(structure.cables().len());
        for c in structure.cables() {
            let resolve = |rod: &str| {
                structure
                    .rod_index(rod)
                    .ok_or_else(|| DynamicsError::UnresolvedAnchor {
                        cable: c.name.clone(),
                        rod: rod.to_string(),
                    })
            };
            cables.push(CableModel {
                name: c.name.clone(),
                rod_a: resolve(&c.anchor_a.rod)?,
                end_a: c.anchor_a.end,
                rod_b: resolve(&c.anchor_b.rod)?,
                end_b: c.anchor_b.end,
                k: c.stiffness,
                b: c.damping,
            });
        }
        let initial = SimState {
            time: 0.0,
            rods: states,
            rest_lengths: structure.cables().iter().map(|c| c.rest_length).collect(),
        };
        Ok(Self {
            rods,
            cables,
            initial,
        })
    }

    /// Declared geometry at rest, with nominal rest lengths.
    pub fn initial_state(&self) -> SimState {
        self.initial.clone()
    }

    pub fn rod_count(&self) -> usize {
        self.rods.len()
    }

    pub fn cable_count(&self) -> usize {
        self.cables.len()
    }

    pub fn rod_name(&self, i: usize) -> &str {
        &self.rods[i].name
    }

    pub fn rod_radius(&self, i: usize) -> f64 {
        self.rods[i].radius
    }

    pub fn rod_mass(&self, i: usize) -> f64 {
        self.rods[i].mass
    }

    pub fn is_static(&self, i: usize) -> bool {
        matches!(self.rods[i].support, Support::Static)
    }

    fn local(&self, i: usize, end: End) -> &Vec3 {
        match end {
            End::A => &self.rods[i].local_a,
            End::B => &self.rods[i].local_b,
        }
    }

    pub fn endpoint(&self, state: &SimState, rod: usize, end: End) -> Vec3 {
        let s = &state.rods[rod];
        s.position + s.orientation * self.local(rod, end)
    }

    pub fn endpoint_velocity(&self, state: &SimState, rod: usize, end: End) -> Vec3 {
        let s = &state.rods[rod];
        s.linear_velocity
            + s.angular_velocity
                .cross(&(s.orientation * self.local(rod, end)))
    }

    /// Both endpoints of every rod.
    pub fn segments(&self, state: &SimState) -> Vec<(Vec3, Vec3)> {
        (0..self.rods.len())
            .map(|i| {
                (
                    self.endpoint(state, i, End::A),
                    self.endpoint(state, i, End::B),
                )
            })
            .collect()
    }

    pub fn max_endpoint_speed(&self, state: &SimState) -> f64 {
        let mut max: f64 = 0.0;
        for i in 0..self.rods.len() {
            for end in [End::A, End::B] {
                max = max.max(self.endpoint_velocity(state, i, end).norm());
            }
        }
        max
    }

    fn cable_eval(&self, state: &SimState, j: usize) -> Result<CableForce, DynamicsError> {
        let c = &self.cables[j];
        evaluate(
            &c.name,
            c.k,
            c.b,
            state.rest_lengths[j],
            &self.endpoint(state, c.rod_a, c.end_a),
            &self.endpoint(state, c.rod_b, c.end_b),
            &self.endpoint_velocity(state, c.rod_a, c.end_a),
            &self.endpoint_velocity(state, c.rod_b, c.end_b),
        )
    }

    pub fn cable_states(&self, state: &SimState) -> Result<Vec<CableState>, DynamicsError> {
        (0..self.cables.len())
            .map(|j| self.cable_eval(state, j).map(|f| f.state))
            .collect()
    }

    /// One semi-implicit Euler step using `state.rest_lengths` as the cable
    /// rest lengths for this step.
    pub fn step(
        &self,
        state: &SimState,
        config: &SimConfig,
        loads: &[PointLoad],
    ) -> Result<SimState, DynamicsError> {
        let dt = config.dt;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DynamicsError::InvalidStep(dt));
        }
        let n = self.rods.len();
        // Net force, and torque about the centre of mass, per rod.
        let mut force = vec![Vec3::zeros(); n];
        let mut torque = vec![Vec3::zeros(); n];
        let mut apply = |rod: usize, end: End, f: Vec3, state: &SimState| {
            let arm = state.rods[rod].orientation * self.local(rod, end);
            force[rod] += f;
            torque[rod] += arm.cross(&f);
        };
        for j in 0..self.cables.len() {
            let c = &self.cables[j];
            let cf = self.cable_eval(state, j)?;
            if !cf.state.tension.is_finite() {
                return Err(DynamicsError::Divergence {
                    time: state.time,
                    culprit: format!("cable `{}` tension is not finite", c.name),
                });
            }
            apply(c.rod_a, c.end_a, cf.on_a, state);
            apply(c.rod_b, c.end_b, cf.on_b, state);
        }
        for load in loads {
            apply(load.rod, load.end, load.force, state);
        }

        let mut next = state.clone();
        next.time = state.time + dt;
        for (i, rod) in self.rods.iter().enumerate() {
            let s = &state.rods[i];
            let r = s.orientation.to_rotation_matrix();
            let weight = config.gravity * rod.mass;
            let out = &mut next.rods[i];
            match &rod.support {
                Support::Static => {}
                Support::Free => {
                    let lin = s.linear_velocity + (force[i] + weight) * (dt / rod.mass);
                    let iw = r * rod.inertia * r.transpose();
                    let w = s.angular_velocity;
                    let gyro = w.cross(&(iw * w));
                    let alpha = solve3(&iw, &(torque[i] - gyro));
                    let ang = w + alpha * dt;
                    out.linear_velocity = lin;
                    out.angular_velocity = ang;
                    out.position = s.position + lin * dt;
                    out.orientation = advance(&s.orientation, &ang, dt);
                }
                Support::Pivot {
                    point,
                    offset,
                    inertia,
                } => {
                    // Torque about the pivot: τ_c + (c − P) × F_total.
                    let com_arm = -(r * offset);
                    let tau = torque[i] + com_arm.cross(&(force[i] + weight));
                    let ip = r * inertia * r.transpose();
                    let w = s.angular_velocity;
                    let gyro = w.cross(&(ip * w));
                    let ang = w + solve3(&ip, &(tau - gyro)) * dt;
                    let q = advance(&s.orientation, &ang, dt);
                    let arm = -(q * offset);
                    out.angular_velocity = ang;
                    out.orientation = q;
                    out.position = point + arm;
                    out.linear_velocity = ang.cross(&arm);
                }
            }
            let o = &next.rods[i];
            let finite = o
                .position
                .iter()
                .chain(o.linear_velocity.iter())
                .chain(o.angular_velocity.iter())
                .all(|v| v.is_finite());
            if !finite || o.linear_velocity.norm() > DIVERGENCE_SPEED {
                return Err(DynamicsError::Divergence {
                    time: next.time,
                    culprit: format!("rod `{}` state blew up", rod.name),
                });
            }
        }
        Ok(next)
    }

    pub fn kinetic_energy(&self, state: &SimState) -> f64 {
        let mut e = 0.0;
        for (i, rod) in self.rods.iter().enumerate() {
            let s = &state.rods[i];
            let r = s.orientation.to_rotation_matrix();
            let iw = r * rod.inertia * r.transpose();
            e += 0.5 * rod.mass * s.linear_velocity.norm_squared()
                + 0.5 * s.angular_velocity.dot(&(iw * s.angular_velocity));
        }
        e
    }

    pub fn potential_energy(&self, state: &SimState, gravity: &Vec3) -> f64 {
        let mut e = 0.0;
        for (i, rod) in self.rods.iter().enumerate() {
            e -= rod.mass * gravity.dot(&state.rods[i].position);
        }
        for j in 0..self.cables.len() {
            let c = &self.cables[j];
            let d = self.endpoint(state, c.rod_b, c.end_b) - self.endpoint(state, c.rod_a, c.end_a);
            let x = d.norm() - state.rest_lengths[j];
            if x > 0.0 {
                e += 0.5 * c.k * x * x;
            }
        }
        e
    }

    /// Kinetic + gravitational + elastic energy (J). Gravitational energy is
    /// zero at the world origin.
    pub fn total_energy(&self, state: &SimState, gravity: &Vec3) -> f64 {
        self.kinetic_energy(state) + self.potential_energy(state, gravity)
    }

    pub fn linear_momentum(&self, state: &SimState) -> Vec3 {
        self.rods
            .iter()
            .zip(&state.rods)
            .fold(Vec3::zeros(), |acc, (m, s)| {
                acc + s.linear_velocity * m.mass
            })
    }
}

fn advance(q: &UnitQuaternion<f64>, w: &Vec3, dt: f64) -> UnitQuaternion<f64> {
    let next = UnitQuaternion::from_scaled_axis(w * dt) * q;
    UnitQuaternion::new_normalize(next.into_inner())
}

fn solve3(m: &Matrix3<f64>, rhs: &Vec3) -> Vec3 {
    m.cholesky().map(|c| c.solve(rhs)).unwrap_or_else(|| {
        m.try_inverse()
            .map(|inv| inv * rhs)
            .unwrap_or_else(Vec3::zeros)
    })
}
