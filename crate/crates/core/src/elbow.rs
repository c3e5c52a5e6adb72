//! Reference two-axis tensegrity elbow and its joint-angle measurement.
//!
//! World frame: z up, x forward, y to the left. The humerus hangs from the
//! shoulder along −z; a static chassis rod just behind and below the elbow
//! carries the motor-side anchors. The olecranon is a short lateral rod
//! suspended in front of the humerus tip, and the forearm's distal end is the
//! end-effector.
//!
//! Rest lengths are not tabulated: they come from form-finding, which projects
//! a target tension set onto the static-equilibrium subspace of the declared
//! pose and sets `rest = L − T/k`.

use nalgebra::{DMatrix, DVector, UnitQuaternion};
use thiserror::Error;

use crate::dynamics::{Model, SimState};
use crate::structure::{
    Anchor, AntagonisticPair, CableSpec, End, MotorLimits, RodSpec, Structure, StructureError,
};
use crate::Vec3;

pub const HUMERUS: &str = "humerus";
pub const CHASSIS: &str = "chassis";
pub const OLECRANON: &str = "olecranon";
pub const FOREARM: &str = "forearm";

pub const PITCH_PAIR: &str = "pitch";
/// Pitch flexor (shortening raises the forearm) and extensor.
pub const BICEPS: &str = "biceps";
pub const TRICEPS: &str = "triceps";
pub const YAW_PAIR: &str = "yaw";

/// Left/right passive pairs, `(pair, left cable, right cable)`.
pub const PASSIVE_PAIRS: [(&str, &str, &str); 5] = [
    ("collateral", "collateral_l", "collateral_r"),
    ("cruciate", "cruciate_l", "cruciate_r"),
    ("anterior", "anterior_l", "anterior_r"),
    ("interosseous", "interosseous_l", "interosseous_r"),
    ("posterior", "posterior_l", "posterior_r"),
];

/// Chassis hub position (left side; the right hub mirrors y).
const CHASSIS_HUB: [f64; 3] = [0.013, 0.047, -0.086];
/// Olecranon centre in the sagittal plane (x, z).
const OLECRANON_CENTRE: [f64; 2] = [0.032, -0.075];
/// Forearm proximal hub (x, z).
const FOREARM_PROXIMAL: [f64; 2] = [-0.070, -0.031];
/// Forearm elevation at the build pose (rad, negative = pointing down).
const FOREARM_TILT: f64 = -0.238;

#[derive(Debug, Error)]
pub enum ElbowError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    Param {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("form-finding failed: {0}")]
    FormFinding(String),
    #[error("generated elbow fails validation:\n{0}")]
    Invalid(String),
    #[error("forearm is parallel to the humerus at the reference pose")]
    DegenerateReference,
    #[error("structure has no rod named `{0}`")]
    MissingRod(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElbowParams {
    pub humerus_length: f64,
    pub olecranon_length: f64,
    pub forearm_length: f64,
    pub humerus_mass: f64,
    pub olecranon_mass: f64,
    pub forearm_mass: f64,
    pub rod_radius: f64,
    pub active_stiffness: f64,
    pub passive_stiffness: f64,
    pub damping: f64,
    /// Co-contraction applied to both cables of each active pair (m).
    pub pretension_offset: f64,
    /// Half-range of the pitch pair's rest length around nominal (m).
    pub stroke: f64,
    /// Half-range of the yaw pair's rest length around nominal (m).
    pub yaw_stroke: f64,
    /// How far the pitch pair may drive toward extension (m), at most
    /// `stroke`. Acts as the joint's hyperextension stop: past it the forearm
    /// would swing into the olecranon.
    pub extension_stop: f64,
    pub motor_max_velocity: f64,
    pub motor_max_acceleration: f64,
    /// Reflect the assembly across the sagittal (x–z) plane.
    pub mirrored: bool,
    pub mount_rotation: UnitQuaternion<f64>,
    pub mount_translation: Vec3,
}

impl Default for ElbowParams {
    fn default() -> Self {
        Self {
            humerus_length: 0.30,
            olecranon_length: 0.06,
            forearm_length: 0.25,
            humerus_mass: 0.02,
            olecranon_mass: 0.005,
            forearm_mass: 0.015,
            rod_radius: 0.004,
            active_stiffness: 300.0,
            passive_stiffness: 150.0,
            damping: 0.5,
            pretension_offset: 0.0,
            stroke: 0.04,
            yaw_stroke: 0.04,
            extension_stop: 0.025,
            motor_max_velocity: 0.1,
            motor_max_acceleration: 1.0,
            mirrored: false,
            mount_rotation: UnitQuaternion::identity(),
            mount_translation: Vec3::zeros(),
        }
    }
}

impl ElbowParams {
    fn check(&self) -> Result<(), ElbowError> {
        let positive = [
            ("humerus_length", self.humerus_length),
            ("olecranon_length", self.olecranon_length),
            ("forearm_length", self.forearm_length),
            ("humerus_mass", self.humerus_mass),
            ("olecranon_mass", self.olecranon_mass),
            ("forearm_mass", self.forearm_mass),
            ("rod_radius", self.rod_radius),
            ("active_stiffness", self.active_stiffness),
            ("passive_stiffness", self.passive_stiffness),
            ("stroke", self.stroke),
            ("yaw_stroke", self.yaw_stroke),
            ("extension_stop", self.extension_stop),
            ("motor_max_velocity", self.motor_max_velocity),
            ("motor_max_acceleration", self.motor_max_acceleration),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || value.is_nan() {
                return Err(ElbowError::Param {
                    name,
                    value,
                    reason: "must be positive",
                });
            }
        }
        for (name, value) in [
            ("damping", self.damping),
            ("pretension_offset", self.pretension_offset),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ElbowError::Param {
                    name,
                    value,
                    reason: "must be non-negative",
                });
            }
        }
        Ok(())
    }
}

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

/// Cable table entries: name, anchors, active flag, design tension (N) used as
/// the form-finding target.
type CableDraft = (String, Anchor, Anchor, bool, f64);

/// The declared pose (no cables yet) and the cable table.
fn skeleton(p: &ElbowParams) -> Result<(Structure, Vec<CableDraft>), ElbowError> {
    let [cx, cy, cz] = CHASSIS_HUB;
    let [ox, oz] = OLECRANON_CENTRE;
    let [fx, fz] = FOREARM_PROXIMAL;
    let half = 0.5 * p.olecranon_length;
    let forearm_a = v(fx, 0.0, fz);
    let forearm_b = forearm_a + v(FOREARM_TILT.cos(), 0.0, FOREARM_TILT.sin()) * p.forearm_length;
    let r = p.rod_radius;

    let mut s = Structure::new();
    s.add_rod(RodSpec::new(
        HUMERUS,
        v(0., 0., p.humerus_length),
        v(0., 0., 0.),
        p.humerus_mass,
        r,
    ))?;
    s.add_rod(RodSpec::new(
        CHASSIS,
        v(cx, cy, cz),
        v(cx, -cy, cz),
        p.humerus_mass,
        r,
    ))?;
    s.add_rod(RodSpec::new(
        OLECRANON,
        v(ox, half, oz),
        v(ox, -half, oz),
        p.olecranon_mass,
        r,
    ))?;
    s.add_rod(RodSpec::new(
        FOREARM,
        forearm_a,
        forearm_b,
        p.forearm_mass,
        r,
    ))?;
    for rod in [HUMERUS, CHASSIS] {
        s.fix(Anchor::new(rod, End::A))?;
        s.fix(Anchor::new(rod, End::B))?;
    }

    let a = |rod: &str, end: End| Anchor::new(rod, end);
    // Left-side hubs carry End::A on the chassis and olecranon.
    let cables = vec![
        (BICEPS, a(HUMERUS, End::B), a(FOREARM, End::B), true, 14.03),
        (TRICEPS, a(HUMERUS, End::B), a(FOREARM, End::A), true, 13.16),
        ("yaw_r", a(CHASSIS, End::B), a(FOREARM, End::A), true, 9.49),
        ("yaw_l", a(CHASSIS, End::A), a(FOREARM, End::A), true, 9.49),
        (
            "collateral_l",
            a(CHASSIS, End::A),
            a(OLECRANON, End::A),
            false,
            2.96,
        ),
        (
            "collateral_r",
            a(CHASSIS, End::B),
            a(OLECRANON, End::B),
            false,
            2.96,
        ),
        (
            "cruciate_l",
            a(CHASSIS, End::A),
            a(OLECRANON, End::B),
            false,
            8.26,
        ),
        (
            "cruciate_r",
            a(CHASSIS, End::B),
            a(OLECRANON, End::A),
            false,
            8.26,
        ),
        (
            "anterior_l",
            a(CHASSIS, End::A),
            a(FOREARM, End::B),
            false,
            2.96,
        ),
        (
            "anterior_r",
            a(CHASSIS, End::B),
            a(FOREARM, End::B),
            false,
            2.96,
        ),
        (
            "interosseous_l",
            a(OLECRANON, End::A),
            a(FOREARM, End::B),
            false,
            4.33,
        ),
        (
            "interosseous_r",
            a(OLECRANON, End::B),
            a(FOREARM, End::B),
            false,
            4.33,
        ),
        (
            "posterior_l",
            a(HUMERUS, End::A),
            a(OLECRANON, End::A),
            false,
            2.96,
        ),
        (
            "posterior_r",
            a(HUMERUS, End::A),
            a(OLECRANON, End::B),
            false,
            2.96,
        ),
    ]
    .into_iter()
    .map(|(n, x, y, act, t)| (n.to_string(), x, y, act, t))
    .collect();
    Ok((s, cables))
}

/// Equilibrium-consistent tensions closest (least squares) to `target`.
///
/// Rows per free rod: net force (3) and moment about the centre (2, the
/// components normal to the rod axis; endpoint forces have no axial moment).
pub fn form_find(
    structure: &Structure,
    cables: &[(Anchor, Anchor)],
    target: &[f64],
    gravity: &Vec3,
) -> Result<Vec<f64>, String> {
    let free: Vec<usize> = (0..structure.rods().len())
        .filter(|&i| {
            let name = &structure.rods()[i].name;
            !(structure.is_fixed(&Anchor::new(name.clone(), End::A))
                && structure.is_fixed(&Anchor::new(name.clone(), End::B)))
        })
        .collect();
    if free.iter().any(|&i| {
        let name = &structure.rods()[i].name;
        structure.is_fixed(&Anchor::new(name.clone(), End::A))
            || structure.is_fixed(&Anchor::new(name.clone(), End::B))
    }) {
        return Err("pivoting rods are not supported".to_string());
    }
    let rows = 5 * free.len();
    let m = cables.len();
    let mut a = DMatrix::<f64>::zeros(rows, m);
    let mut g = DVector::<f64>::zeros(rows);
    let mut frames = Vec::new();
    for (k, &i) in free.iter().enumerate() {
        let rod = &structure.rods()[i];
        let axis = (rod.endpoint_b - rod.endpoint_a).normalize();
        let seed = if axis.z.abs() < 0.9 {
            Vec3::z()
        } else {
            Vec3::x()
        };
        let t1 = axis.cross(&seed).normalize();
        let t2 = axis.cross(&t1);
        let weight = gravity * rod.mass;
        for d in 0..3 {
            g[5 * k + d] = weight[d];
        }
        frames.push((i, rod.center(), t1, t2));
    }
    for (j, (pa, pb)) in cables.iter().enumerate() {
        let xa = structure.anchor_position(pa).ok_or("unresolved anchor")?;
        let xb = structure.anchor_position(pb).ok_or("unresolved anchor")?;
        for (here, there, anchor) in [(xa, xb, pa), (xb, xa, pb)] {
            let Some(k) = frames
                .iter()
                .position(|f| structure.rods()[f.0].name == anchor.rod)
            else {
                continue;
            };
            let (_, c, t1, t2) = frames[k];
            let u = (there - here).normalize();
            let moment = (here - c).cross(&u);
            for d in 0..3 {
                a[(5 * k + d, j)] += u[d];
            }
            a[(5 * k + 3, j)] += moment.dot(&t1);
            a[(5 * k + 4, j)] += moment.dot(&t2);
        }
    }
    let t_star = DVector::from_column_slice(target);
    let residual = &a * &t_star + &g;
    let gram = &a * a.transpose();
    let correction = gram
        .cholesky()
        .ok_or("equilibrium matrix is rank deficient")?
        .solve(&residual);
    let t = t_star - a.transpose() * correction;
    Ok(t.iter().copied().collect())
}

/// Builds, form-finds and validates the reference elbow.
pub fn build_elbow(p: &ElbowParams) -> Result<Structure, ElbowError> {
    p.check()?;
    let (mut posed, cables) = skeleton(p)?;
    if p.mirrored {
        posed = posed.reflect(&Vec3::y());
    }
    posed = posed.transform(p.mount_rotation.quaternion(), &p.mount_translation)?;

    let gravity = crate::dynamics::SimConfig::default().gravity;
    let ends: Vec<(Anchor, Anchor)> = cables
        .iter()
        .map(|(_, a, b, ..)| (a.clone(), b.clone()))
        .collect();
    let target: Vec<f64> = cables.iter().map(|c| c.4).collect();
    let tensions = form_find(&posed, &ends, &target, &gravity).map_err(ElbowError::FormFinding)?;

    let mut s = posed.clone();
    for ((name, a, b, active, _), t) in cables.iter().zip(&tensions) {
        let k = if *active {
            p.active_stiffness
        } else {
            p.passive_stiffness
        };
        let length = (posed.anchor_position(b).unwrap() - posed.anchor_position(a).unwrap()).norm();
        if !(*t > 0.0) {
            return Err(ElbowError::FormFinding(format!(
                "cable `{name}` would need tension {t:.4} N"
            )));
        }
        let mut rest = length - t / k;
        if *active {
            rest -= p.pretension_offset;
        }
        if !(rest > 0.0) {
            return Err(ElbowError::FormFinding(format!(
                "cable `{name}` would need non-positive rest length {rest:.5} m"
            )));
        }
        let cable = if *active {
            // Extension lengthens the flexor and shortens the extensor.
            let stroke = if name == BICEPS || name == TRICEPS {
                p.stroke
            } else {
                p.yaw_stroke
            };
            let stop = stroke.min(p.extension_stop);
            let lengthen = if name == BICEPS { stop } else { stroke };
            let shorten = if name == TRICEPS { stop } else { stroke };
            let max_length = rest + lengthen;
            let min_length = (rest - shorten).max(0.2 * rest);
            CableSpec::active(
                name.clone(),
                a.clone(),
                b.clone(),
                k,
                p.damping,
                rest,
                MotorLimits {
                    min_length,
                    max_length,
                    max_velocity: p.motor_max_velocity,
                    max_acceleration: p.motor_max_acceleration,
                },
            )
        } else {
            CableSpec::passive(name.clone(), a.clone(), b.clone(), k, p.damping, rest)
        };
        s.add_cable(cable)?;
    }
    s.add_pair(AntagonisticPair::new(PITCH_PAIR, BICEPS, TRICEPS))?;
    s.add_pair(AntagonisticPair::new(YAW_PAIR, "yaw_r", "yaw_l"))?;

    let report = s.validate();
    if !report.is_pass() {
        return Err(ElbowError::Invalid(report.to_string()));
    }
    Ok(s)
}

/// Finds a rod by exact name or as the last component of a prefixed name.
pub fn find_rod(structure: &Structure, name: &str) -> Option<usize> {
    let suffix = format!(".{name}");
    structure
        .rods()
        .iter()
        .position(|r| r.name == name)
        .or_else(|| {
            structure
                .rods()
                .iter()
                .position(|r| r.name.ends_with(&suffix))
        })
}

/// The end-effector: distal end of the forearm, or of the last rod when the
/// structure has no forearm.
pub fn end_effector(structure: &Structure) -> Option<(usize, End)> {
    find_rod(structure, FOREARM)
        .or_else(|| structure.rods().len().checked_sub(1))
        .map(|i| (i, End::B))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JointAngles {
    pub pitch: f64,
    pub yaw: f64,
    /// Set when a projection was degenerate and the previous value was held.
    pub degenerate: bool,
}

/// Anatomical frame fixed to the humerus, calibrated at a reference pose.
///
/// `up` runs along the humerus toward the shoulder; `forward` is the
/// reference forearm direction with its `up` component removed; `lateral =
/// up × forward`. Pitch is the forearm elevation in the up/forward plane and
/// yaw its heading in the forward/lateral plane, both relative to the
/// reference pose.
#[derive(Clone, Debug)]
pub struct ElbowFrame {
    humerus: usize,
    forearm: usize,
    up_body: Vec3,
    forward_body: Vec3,
    reference: (f64, f64),
    last: JointAngles,
}

const DEGENERATE_NORM: f64 = 1e-9;

impl ElbowFrame {
    pub fn calibrate(
        structure: &Structure,
        model: &Model,
        reference: &SimState,
    ) -> Result<Self, ElbowError> {
        let humerus = find_rod(structure, HUMERUS).ok_or(ElbowError::MissingRod(HUMERUS))?;
        let forearm = find_rod(structure, FOREARM).ok_or(ElbowError::MissingRod(FOREARM))?;
        let q = reference.rods[humerus].orientation;
        let up = (model.endpoint(reference, humerus, End::A)
            - model.endpoint(reference, humerus, End::B))
        .normalize();
        let f = forearm_direction(model, reference, forearm);
        let forward = f - up * f.dot(&up);
        if forward.norm() < DEGENERATE_NORM {
            return Err(ElbowError::DegenerateReference);
        }
        let mut frame = Self {
            humerus,
            forearm,
            up_body: q.inverse() * up,
            forward_body: q.inverse() * forward.normalize(),
            reference: (0.0, 0.0),
            last: JointAngles::default(),
        };
        let raw = frame.raw(model, reference);
        frame.reference = (raw.0.unwrap_or(0.0), raw.1.unwrap_or(0.0));
        Ok(frame)
    }

    fn raw(&self, model: &Model, state: &SimState) -> (Option<f64>, Option<f64>) {
        let q = state.rods[self.humerus].orientation;
        let up = q * self.up_body;
        let forward = q * self.forward_body;
        let lateral = up.cross(&forward);
        let f = forearm_direction(model, state, self.forearm);
        let (fu, ff, fl) = (f.dot(&up), f.dot(&forward), f.dot(&lateral));
        let pitch = (fu.hypot(ff) >= DEGENERATE_NORM).then(|| fu.atan2(ff));
        let yaw = (fl.hypot(ff) >= DEGENERATE_NORM).then(|| fl.atan2(ff));
        (pitch, yaw)
    }

    /// Angles at `state`; degenerate projections hold the previous sample.
    pub fn measure(&mut self, model: &Model, state: &SimState) -> JointAngles {
        let (pitch, yaw) = self.raw(model, state);
        let angles = JointAngles {
            pitch: pitch.map_or(self.last.pitch, |p| wrap(p - self.reference.0)),
            yaw: yaw.map_or(self.last.yaw, |y| wrap(y - self.reference.1)),
            degenerate: pitch.is_none() || yaw.is_none(),
        };
        self.last = angles;
        angles
    }
}

fn forearm_direction(model: &Model, state: &SimState, forearm: usize) -> Vec3 {
    (model.endpoint(state, forearm, End::B) - model.endpoint(state, forearm, End::A)).normalize()
}

fn wrap(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}
