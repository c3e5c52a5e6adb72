//! Tensegrity structure declaration: rods, cables, world anchors and
//! antagonistic pairs, plus the builder operations and the validator.
//!
//! Cables attach only at rod endpoints. All quantities are SI.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion};
use thiserror::Error;

use crate::geometry::segment_distance;
use crate::Vec3;

/// Tolerance on `|q| - 1` accepted by [`Structure::transform`].
pub const UNIT_QUATERNION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StructureError {
    #[error("invalid name `{0}`: names must match [A-Za-z0-9_.-]+")]
    InvalidName(String),
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("rod `{name}` is degenerate: {reason}")]
    DegenerateRod { name: String, reason: String },
    #[error("cable `{cable}` references unknown rod `{rod}`")]
    DanglingAnchor { cable: String, rod: String },
    #[error("cable `{0}` connects a rod to itself")]
    SelfLoop(String),
    #[error("cable `{name}` has invalid parameters: {reason}")]
    InvalidCable { name: String, reason: String },
    #[error("fixed anchor references unknown rod `{0}`")]
    UnknownRod(String),
    #[error("pair `{label}` is invalid: {reason}")]
    InvalidPair { label: String, reason: String },
    #[error("rotation quaternion is not unit-norm (|q| = {0})")]
    NonUnitRotation(f64),
    #[error("malformed anchor `{0}` (expected <rod>.<A|B>)")]
    MalformedAnchor(String),
}

/// Which endpoint of a rod.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum End {
    A,
    B,
}

impl fmt::Display for End {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            End::A => "A",
            End::B => "B",
        })
    }
}

/// A rod endpoint, written `<rod>.<A|B>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Anchor {
    pub rod: String,
    pub end: End,
}

impl Anchor {
    pub fn new(rod: impl Into<String>, end: End) -> Self {
        Self {
            rod: rod.into(),
            end,
        }
    }

    fn renamed(&self, rod: String) -> Self {
        Self { rod, end: self.end }
    }
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.rod, self.end)
    }
}

impl FromStr for Anchor {
    type Err = StructureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || StructureError::MalformedAnchor(s.to_string());
        let (rod, tag) = s.rsplit_once('.').ok_or_else(malformed)?;
        let end = match tag {
            "A" => End::A,
            "B" => End::B,
            _ => return Err(malformed()),
        };
        if !is_valid_name(rod) {
            return Err(malformed());
        }
        Ok(Anchor::new(rod, end))
    }
}

pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

fn check_name(name: &str) -> Result<(), StructureError> {
    if is_valid_name(name) {
        Ok(())
    } else {
        Err(StructureError::InvalidName(name.to_string()))
    }
}

/// Rigid compression element.
#[derive(Clone, Debug, PartialEq)]
pub struct RodSpec {
    pub name: String,
    pub endpoint_a: Vec3,
    pub endpoint_b: Vec3,
    pub mass: f64,
    pub radius: f64,
}

impl RodSpec {
    pub fn new(name: impl Into<String>, a: Vec3, b: Vec3, mass: f64, radius: f64) -> Self {
        Self {
            name: name.into(),
            endpoint_a: a,
            endpoint_b: b,
            mass,
            radius,
        }
    }

    pub fn length(&self) -> f64 {
        (self.endpoint_b - self.endpoint_a).norm()
    }

    pub fn center(&self) -> Vec3 {
        (self.endpoint_a + self.endpoint_b) * 0.5
    }

    pub fn endpoint(&self, end: End) -> Vec3 {
        match end {
            End::A => self.endpoint_a,
            End::B => self.endpoint_b,
        }
    }

    pub fn check(&self) -> Result<(), StructureError> {
        check_name(&self.name)?;
        let degenerate = |reason: &str| StructureError::DegenerateRod {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        let finite = [self.endpoint_a, self.endpoint_b]
            .iter()
            .all(|p| p.iter().all(|c| c.is_finite()));
        if !finite {
            return Err(degenerate("non-finite endpoint"));
        }
        if !(self.length() > 0.0) {
            return Err(degenerate("zero length"));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(degenerate("mass must be positive"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(degenerate("radius must be positive"));
        }
        Ok(())
    }
}

/// Actuation limits of a motor-driven cable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotorLimits {
    /// Rest-length floor (m).
    pub min_length: f64,
    /// Rest-length ceiling (m).
    pub max_length: f64,
    /// Maximum rest-length rate (m/s).
    pub max_velocity: f64,
    /// Maximum rest-length acceleration (m/s²); may be infinite.
    pub max_acceleration: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CableRole {
    Active(MotorLimits),
    Passive,
}

/// Tension element obeying `F = k·X + b·V` while taut.
#[derive(Clone, Debug, PartialEq)]
pub struct CableSpec {
    pub name: String,
    pub anchor_a: Anchor,
    pub anchor_b: Anchor,
    /// Stiffness k (N/m).
    pub stiffness: f64,
    /// Damping b (N·s/m).
    pub damping: f64,
    /// Rest length (m).
    pub rest_length: f64,
    pub role: CableRole,
}

impl CableSpec {
    pub fn passive(
        name: impl Into<String>,
        anchor_a: Anchor,
        anchor_b: Anchor,
        stiffness: f64,
        damping: f64,
        rest_length: f64,
    ) -> Self {
        Self {
            name: name.into(),
            anchor_a,
            anchor_b,
            stiffness,
            damping,
            rest_length,
            role: CableRole::Passive,
        }
    }

    pub fn active(
        name: impl Into<String>,
        anchor_a: Anchor,
        anchor_b: Anchor,
        stiffness: f64,
        damping: f64,
        rest_length: f64,
        limits: MotorLimits,
    ) -> Self {
        Self {
            role: CableRole::Active(limits),
            ..Self::passive(name, anchor_a, anchor_b, stiffness, damping, rest_length)
        }
    }

    pub fn is_active(&self) -> bool {
        matches!(self.role, CableRole::Active(_))
    }

    pub fn limits(&self) -> Option<&MotorLimits> {
        match &self.role {
            CableRole::Active(l) => Some(l),
            CableRole::Passive => None,
        }
    }

    /// Checks the parameter invariants that do not depend on other items.
    pub fn check(&self) -> Result<(), StructureError> {
        check_name(&self.name)?;
        let invalid = |reason: String| StructureError::InvalidCable {
            name: self.name.clone(),
            reason,
        };
        if self.anchor_a.rod == self.anchor_b.rod {
            return Err(StructureError::SelfLoop(self.name.clone()));
        }
        if !(self.stiffness > 0.0 && self.stiffness.is_finite()) {
            return Err(invalid(format!("stiffness {} must be > 0", self.stiffness)));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(invalid(format!("damping {} must be >= 0", self.damping)));
        }
        if !(self.rest_length > 0.0 && self.rest_length.is_finite()) {
            return Err(invalid(format!(
                "rest length {} must be > 0",
                self.rest_length
            )));
        }
        if let CableRole::Active(l) = &self.role {
            if !(l.min_length > 0.0) {
                return Err(invalid(format!("min length {} must be > 0", l.min_length)));
            }
            if !(l.min_length <= l.max_length) {
                return Err(invalid(format!(
                    "min length {} exceeds max length {}",
                    l.min_length, l.max_length
                )));
            }
            if !(l.min_length <= self.rest_length && self.rest_length <= l.max_length) {
                return Err(invalid(format!(
                    "rest length {} outside [{}, {}]",
                    self.rest_length, l.min_length, l.max_length
                )));
            }
            if !(l.max_velocity > 0.0) || !(l.max_acceleration > 0.0) {
                return Err(invalid("motor rate limits must be > 0".to_string()));
            }
        }
        Ok(())
    }
}

/// Two active cables driven in opposition: `delta` shortens the flexor and
/// lengthens the extensor by `ratio·delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct AntagonisticPair {
    pub label: String,
    pub flexor: String,
    pub extensor: String,
    pub ratio: f64,
}

impl AntagonisticPair {
    pub fn new(
        label: impl Into<String>,
        flexor: impl Into<String>,
        extensor: impl Into<String>,
    ) -> Self {
        Self {
            label: label.into(),
            flexor: flexor.into(),
            extensor: extensor.into(),
            ratio: 1.0,
        }
    }
}

/// A single invariant violation found by [`Structure::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DanglingAnchor {
        cable: String,
        rod: String,
    },
    UnknownFixedRod {
        rod: String,
    },
    CompressionContact {
        rod_a: String,
        rod_b: String,
        clearance: f64,
    },
    Disconnected {
        components: Vec<Vec<String>>,
    },
    BadPair {
        label: String,
        reason: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingAnchor { cable, rod } => {
                write!(
                    f,
                    "dangling anchor: cable `{cable}` references unknown rod `{rod}`"
                )
            }
            Violation::UnknownFixedRod { rod } => {
                write!(f, "dangling anchor: fixed anchor on unknown rod `{rod}`")
            }
            Violation::CompressionContact {
                rod_a,
                rod_b,
                clearance,
            } => write!(
                f,
                "compression contact: rods `{rod_a}` and `{rod_b}` (clearance {clearance:.6} m)"
            ),
            Violation::Disconnected { components } => {
                let groups: Vec<String> = components
                    .iter()
                    .map(|c| format!("{{{}}}", c.join(", ")))
                    .collect();
                write!(
                    f,
                    "disconnected: {} components {}",
                    components.len(),
                    groups.join(" ")
                )
            }
            Violation::BadPair { label, reason } => {
                write!(f, "bad pair wiring `{label}`: {reason}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pass() {
            return f.write_str("pass");
        }
        writeln!(f, "{} violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// A tensegrity structure. Builder operations keep each item's own
/// invariants; cross-item checks live in [`Structure::validate`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Structure {
    rods: Vec<RodSpec>,
    cables: Vec<CableSpec>,
    fixed_anchors: Vec<Anchor>,
    pairs: Vec<AntagonisticPair>,
}

impl Structure {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rods(&self) -> &[RodSpec] {
        &self.rods
    }

    pub fn cables(&self) -> &[CableSpec] {
        &self.cables
    }

    pub fn fixed_anchors(&self) -> &[Anchor] {
        &self.fixed_anchors
    }

    pub fn pairs(&self) -> &[AntagonisticPair] {
        &self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.rods.is_empty() && self.cables.is_empty()
    }

    pub fn rod(&self, name: &str) -> Option<&RodSpec> {
        self.rods.iter().find(|r| r.name == name)
    }

    pub fn rod_index(&self, name: &str) -> Option<usize> {
        self.rods.iter().position(|r| r.name == name)
    }

    pub fn cable(&self, name: &str) -> Option<&CableSpec> {
        self.cables.iter().find(|c| c.name == name)
    }

    pub fn cable_index(&self, name: &str) -> Option<usize> {
        self.cables.iter().position(|c| c.name == name)
    }

    pub fn pair(&self, label: &str) -> Option<&AntagonisticPair> {
        self.pairs.iter().find(|p| p.label == label)
    }

    pub fn is_fixed(&self, anchor: &Anchor) -> bool {
        self.fixed_anchors.contains(anchor)
    }

    /// World position of a rod endpoint in the declared geometry.
    pub fn anchor_position(&self, anchor: &Anchor) -> Option<Vec3> {
        self.rod(&anchor.rod).map(|r| r.endpoint(anchor.end))
    }

    /// Distance between a cable's anchors in the declared geometry.
    pub fn anchor_separation(&self, cable: &CableSpec) -> Option<f64> {
        let a = self.anchor_position(&cable.anchor_a)?;
        let b = self.anchor_position(&cable.anchor_b)?;
        Some((b - a).norm())
    }

    pub fn add_rod(&mut self, rod: RodSpec) -> Result<(), StructureError> {
        rod.check()?;
        if self.rod(&rod.name).is_some() {
            return Err(StructureError::Duplicate(rod.name));
        }
        self.rods.push(rod);
        Ok(())
    }

    pub fn add_cable(&mut self, cable: CableSpec) -> Result<(), StructureError> {
        cable.check()?;
        if self.cable(&cable.name).is_some() {
            return Err(StructureError::Duplicate(cable.name));
        }
        for anchor in [&cable.anchor_a, &cable.anchor_b] {
            if self.rod(&anchor.rod).is_none() {
                return Err(StructureError::DanglingAnchor {
                    cable: cable.name.clone(),
                    rod: anchor.rod.clone(),
                });
            }
        }
        self.cables.push(cable);
        Ok(())
    }

    pub fn fix(&mut self, anchor: Anchor) -> Result<(), StructureError> {
        if self.rod(&anchor.rod).is_none() {
            return Err(StructureError::UnknownRod(anchor.rod));
        }
        if self.is_fixed(&anchor) {
            return Err(StructureError::Duplicate(anchor.to_string()));
        }
        self.fixed_anchors.push(anchor);
        Ok(())
    }

    pub fn add_pair(&mut self, pair: AntagonisticPair) -> Result<(), StructureError> {
        check_name(&pair.label)?;
        if self.pair(&pair.label).is_some() {
            return Err(StructureError::Duplicate(pair.label));
        }
        if let Some(reason) = self.pair_problem(&pair) {
            return Err(StructureError::InvalidPair {
                label: pair.label,
                reason,
            });
        }
        self.pairs.push(pair);
        Ok(())
    }

    pub fn with_rod(mut self, rod: RodSpec) -> Result<Self, StructureError> {
        self.add_rod(rod)?;
        Ok(self)
    }

    pub fn with_cable(mut self, cable: CableSpec) -> Result<Self, StructureError> {
        self.add_cable(cable)?;
        Ok(self)
    }

    /// Inserts items without cross-reference checks; the parser uses this so
    /// that dangling references surface as validation violations.
    pub(crate) fn push_unchecked(
        &mut self,
        rods: Vec<RodSpec>,
        cables: Vec<CableSpec>,
        fixed: Vec<Anchor>,
        pairs: Vec<AntagonisticPair>,
    ) {
        self.rods.extend(rods);
        self.cables.extend(cables);
        self.fixed_anchors.extend(fixed);
        self.pairs.extend(pairs);
    }

    fn pair_problem(&self, pair: &AntagonisticPair) -> Option<String> {
        if pair.flexor == pair.extensor {
            return Some("flexor and extensor are the same cable".to_string());
        }
        if !(pair.ratio > 0.0 && pair.ratio.is_finite()) {
            return Some(format!("coupling ratio {} must be > 0", pair.ratio));
        }
        for name in [&pair.flexor, &pair.extensor] {
            match self.cable(name) {
                None => return Some(format!("unknown cable `{name}`")),
                Some(c) if !c.is_active() => return Some(format!("cable `{name}` is passive")),
                Some(_) => {}
            }
        }
        None
    }

    /// Applies the rigid transform `p ↦ R·p + t` to every rod endpoint.
    pub fn transform(
        &self,
        rotation: &Quaternion<f64>,
        translation: &Vec3,
    ) -> Result<Self, StructureError> {
        let norm = rotation.norm();
        if !((norm - 1.0).abs() <= UNIT_QUATERNION_TOL) {
            return Err(StructureError::NonUnitRotation(norm));
        }
        let identity = *rotation == Quaternion::identity();
        let unit = UnitQuaternion::from_quaternion(*rotation);
        let map = |p: &Vec3| {
            let r = if identity { *p } else { unit * p };
            if translation.iter().all(|c| *c == 0.0) {
                r
            } else {
                r + translation
            }
        };
        let mut out = self.clone();
        for rod in &mut out.rods {
            rod.endpoint_a = map(&rod.endpoint_a);
            rod.endpoint_b = map(&rod.endpoint_b);
        }
        Ok(out)
    }

    /// Mirror image across the plane through the origin with unit normal `normal`.
    pub fn reflect(&self, normal: &Vec3) -> Self {
        let n = normal.normalize();
        let mut out = self.clone();
        for rod in &mut out.rods {
            for p in [&mut rod.endpoint_a, &mut rod.endpoint_b] {
                *p -= n * (2.0 * p.dot(&n));
            }
        }
        out
    }

    /// Union of `self` and `child`, with every child name prefixed `prefix.`.
    pub fn compose(&self, child: &Structure, prefix: &str) -> Result<Self, StructureError> {
        check_name(prefix)?;
        let p = |name: &str| format!("{prefix}.{name}");
        let mut out = self.clone();
        for rod in &child.rods {
            let name = p(&rod.name);
            if out.rod(&name).is_some() {
                return Err(StructureError::Duplicate(name));
            }
            out.rods.push(RodSpec {
                name,
                ..rod.clone()
            });
        }
        for cable in &child.cables {
            let name = p(&cable.name);
            if out.cable(&name).is_some() {
                return Err(StructureError::Duplicate(name));
            }
            out.cables.push(CableSpec {
                name,
                anchor_a: cable.anchor_a.renamed(p(&cable.anchor_a.rod)),
                anchor_b: cable.anchor_b.renamed(p(&cable.anchor_b.rod)),
                ..cable.clone()
            });
        }
        for anchor in &child.fixed_anchors {
            out.fixed_anchors.push(anchor.renamed(p(&anchor.rod)));
        }
        for pair in &child.pairs {
            let label = p(&pair.label);
            if out.pair(&label).is_some() {
                return Err(StructureError::Duplicate(label));
            }
            out.pairs.push(AntagonisticPair {
                label,
                flexor: p(&pair.flexor),
                extensor: p(&pair.extensor),
                ratio: pair.ratio,
            });
        }
        Ok(out)
    }

    /// Items whose names carry `prefix.`, with the prefix stripped. Inverse of
    /// [`Structure::compose`] for the composed child.
    pub fn extract_prefix(&self, prefix: &str) -> Self {
        let head = format!("{prefix}.");
        let strip = |name: &str| name.strip_prefix(&head).map(str::to_string);
        let mut out = Structure::new();
        for rod in &self.rods {
            if let Some(name) = strip(&rod.name) {
                out.rods.push(RodSpec {
                    name,
                    ..rod.clone()
                });
            }
        }
        for cable in &self.cables {
            if let (Some(name), Some(ra), Some(rb)) = (
                strip(&cable.name),
                strip(&cable.anchor_a.rod),
                strip(&cable.anchor_b.rod),
            ) {
                out.cables.push(CableSpec {
                    name,
                    anchor_a: cable.anchor_a.renamed(ra),
                    anchor_b: cable.anchor_b.renamed(rb),
                    ..cable.clone()
                });
            }
        }
        for anchor in &self.fixed_anchors {
            if let Some(rod) = strip(&anchor.rod) {
                out.fixed_anchors.push(anchor.renamed(rod));
            }
        }
        for pair in &self.pairs {
            if let (Some(label), Some(flexor), Some(extensor)) = (
                strip(&pair.label),
                strip(&pair.flexor),
                strip(&pair.extensor),
            ) {
                out.pairs.push(AntagonisticPair {
                    label,
                    flexor,
                    extensor,
                    ratio: pair.ratio,
                });
            }
        }
        out
    }

    /// Copy with every list sorted by name; two structures built from the
    /// same items in different orders have equal canonical forms.
    pub fn canonical(&self) -> Self {
        let mut out = self.clone();
        out.rods.sort_by(|a, b| a.name.cmp(&b.name));
        out.cables.sort_by(|a, b| a.name.cmp(&b.name));
        out.fixed_anchors.sort();
        out.pairs.sort_by(|a, b| a.label.cmp(&b.label));
        out
    }

    pub fn set_eq(&self, other: &Structure) -> bool {
        self.canonical() == other.canonical()
    }

    /// Smallest surface clearance between any two rods (axis distance minus
    /// radii), with the offending pair. `None` for fewer than two rods.
    pub fn min_rod_clearance(&self) -> Option<(f64, usize, usize)> {
        let ends: Vec<(Vec3, Vec3)> = self
            .rods
            .iter()
            .map(|r| (r.endpoint_a, r.endpoint_b))
            .collect();
        let radii: Vec<f64> = self.rods.iter().map(|r| r.radius).collect();
        min_clearance(&ends, &radii)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();

        for cable in &self.cables {
            for anchor in [&cable.anchor_a, &cable.anchor_b] {
                if self.rod(&anchor.rod).is_none() {
                    violations.push(Violation::DanglingAnchor {
                        cable: cable.name.clone(),
                        rod: anchor.rod.clone(),
                    });
                }
            }
        }
        for anchor in &self.fixed_anchors {
            if self.rod(&anchor.rod).is_none() {
                violations.push(Violation::UnknownFixedRod {
                    rod: anchor.rod.clone(),
                });
            }
        }

        for (i, a) in self.rods.iter().enumerate() {
            for b in &self.rods[i + 1..] {
                let d =
                    segment_distance(&a.endpoint_a, &a.endpoint_b, &b.endpoint_a, &b.endpoint_b);
                let clearance = d - (a.radius + b.radius);
                if !(clearance > 0.0) {
                    violations.push(Violation::CompressionContact {
                        rod_a: a.name.clone(),
                        rod_b: b.name.clone(),
                        clearance,
                    });
                }
            }
        }

        let components = self.components();
        if components.len() > 1 {
            violations.push(Violation::Disconnected { components });
        }

        let mut seen = BTreeSet::new();
        for pair in &self.pairs {
            if !seen.insert(pair.label.as_str()) {
                violations.push(Violation::BadPair {
                    label: pair.label.clone(),
                    reason: "duplicate label".to_string(),
                });
            }
            if let Some(reason) = self.pair_problem(pair) {
                violations.push(Violation::BadPair {
                    label: pair.label.clone(),
                    reason,
                });
            }
        }

        ValidationReport { violations }
    }

    /// Connected components of the rod graph (edges = cables), each sorted,
    /// in order of first rod appearance.
    fn components(&self) -> Vec<Vec<String>> {
        let n = self.rods.len();
        let index: BTreeMap<&str, usize> = self
            .rods
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.as_str(), i))
            .collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for cable in &self.cables {
            if let (Some(&a), Some(&b)) = (
                index.get(cable.anchor_a.rod.as_str()),
                index.get(cable.anchor_b.rod.as_str()),
            ) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            groups
                .entry(root)
                .or_default()
                .push(self.rods[i].name.clone());
        }
        groups
            .into_values()
            .map(|mut g| {
                g.sort();
                g
            })
            .collect()
    }
}

/// Minimum pairwise clearance between rods given as endpoint pairs.
pub(crate) fn min_clearance(ends: &[(Vec3, Vec3)], radii: &[f64]) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..ends.len() {
        for j in i + 1..ends.len() {
            let d = segment_distance(&ends[i].0, &ends[i].1, &ends[j].0, &ends[j].1)
                - radii[i]
                - radii[j];
            if best.is_none_or(|(b, _, _)| d < b) {
                best = Some((d, i, j));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn limits() -> MotorLimits {
        MotorLimits {
            min_length: 0.05,
            max_length: 0.15,
            max_velocity: 0.1,
            max_acceleration: 1.0,
        }
    }

    fn arm() -> Structure {
        let mut s = Structure::new();
        s.add_rod(RodSpec::new(
            "humerus",
            v(0., 0., 0.),
            v(0., 0., 0.3),
            0.05,
            0.005,
        ))
        .unwrap();
        s.add_rod(RodSpec::new(
            "forearm",
            v(0.05, 0., 0.35),
            v(0.3, 0., 0.35),
            0.05,
            0.005,
        ))
        .unwrap();
        s.add_cable(CableSpec::active(
            "bicep",
            Anchor::new("humerus", End::B),
            Anchor::new("forearm", End::A),
            200.0,
            2.0,
            0.10,
            limits(),
        ))
        .unwrap();
        s.add_cable(CableSpec::active(
            "tricep",
            Anchor::new("humerus", End::A),
            Anchor::new("forearm", End::A),
            200.0,
            2.0,
            0.10,
            limits(),
        ))
        .unwrap();
        s
    }

    #[test]
    fn add_rod_cases() {
        let mut s = Structure::new();
        s.add_rod(RodSpec::new(
            "humerus",
            v(0., 0., 0.),
            v(0., 0., 0.3),
            0.05,
            0.005,
        ))
        .unwrap();
        assert_eq!(s.rods().len(), 1);

        let err = s
            .add_rod(RodSpec::new("x", v(1., 1., 1.), v(1., 1., 1.), 0.05, 0.005))
            .unwrap_err();
        assert!(matches!(err, StructureError::DegenerateRod { .. }));

        let err = s
            .add_rod(RodSpec::new(
                "humerus",
                v(1., 0., 0.),
                v(2., 0., 0.),
                0.05,
                0.005,
            ))
            .unwrap_err();
        assert_eq!(err, StructureError::Duplicate("humerus".into()));

        for (m, r) in [(0.0, 0.01), (-1.0, 0.01), (1.0, 0.0)] {
            assert!(s
                .add_rod(RodSpec::new("y", v(0., 0., 0.), v(1., 0., 0.), m, r))
                .is_err());
        }
        assert!(matches!(
            s.add_rod(RodSpec::new(
                "bad name",
                v(0., 0., 0.),
                v(1., 0., 0.),
                1.0,
                0.1
            )),
            Err(StructureError::InvalidName(_))
        ));
    }

    #[test]
    fn add_cable_cases() {
        let s = arm();
        assert_eq!(s.cables().len(), 2);

        let mut t = s.clone();
        let err = t
            .add_cable(CableSpec::passive(
                "c",
                Anchor::new("radius", End::A),
                Anchor::new("forearm", End::B),
                100.0,
                1.0,
                0.1,
            ))
            .unwrap_err();
        assert_eq!(
            err,
            StructureError::DanglingAnchor {
                cable: "c".into(),
                rod: "radius".into()
            }
        );

        let bad = MotorLimits {
            min_length: 0.2,
            max_length: 0.1,
            ..limits()
        };
        let err = t
            .add_cable(CableSpec::active(
                "c",
                Anchor::new("humerus", End::A),
                Anchor::new("forearm", End::B),
                100.0,
                1.0,
                0.15,
                bad,
            ))
            .unwrap_err();
        assert!(matches!(err, StructureError::InvalidCable { .. }));

        let err = t
            .add_cable(CableSpec::passive(
                "c",
                Anchor::new("humerus", End::A),
                Anchor::new("forearm", End::B),
                0.0,
                1.0,
                0.1,
            ))
            .unwrap_err();
        assert!(matches!(err, StructureError::InvalidCable { .. }));
    }

    #[test]
    fn anchor_parsing() {
        let a: Anchor = "g.palm.B".parse().unwrap();
        assert_eq!(a, Anchor::new("g.palm", End::B));
        assert_eq!(a.to_string(), "g.palm.B");
        assert!("palm".parse::<Anchor>().is_err());
        assert!("palm.C".parse::<Anchor>().is_err());
        assert!(".A".parse::<Anchor>().is_err());
    }

    #[test]
    fn quarter_turn_about_z() {
        let mut s = Structure::new();
        s.add_rod(RodSpec::new("r", v(1., 0., 0.), v(0., 0., 0.), 1.0, 0.01))
            .unwrap();
        let q = *UnitQuaternion::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2).quaternion();
        let t = s.transform(&q, &Vec3::zeros()).unwrap();
        let rod = &t.rods()[0];
        assert_relative_eq!(rod.endpoint_a, v(0., 1., 0.), epsilon = 1e-15);
        assert_relative_eq!(rod.endpoint_b, v(0., 0., 0.), epsilon = 1e-15);
    }

    #[test]
    fn identity_transform_is_bit_identical() {
        let s = arm();
        let t = s
            .transform(&Quaternion::identity(), &Vec3::zeros())
            .unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn translation_shifts_z_and_keeps_separations() {
        let s = arm();
        let t = s
            .transform(&Quaternion::identity(), &v(0., 0., 1.))
            .unwrap();
        for (a, b) in s.rods().iter().zip(t.rods()) {
            assert_eq!(b.endpoint_a.z, a.endpoint_a.z + 1.0);
            assert_eq!(b.endpoint_b.z, a.endpoint_b.z + 1.0);
        }
        for c in s.cables() {
            assert_relative_eq!(
                s.anchor_separation(c).unwrap(),
                t.anchor_separation(c).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn non_unit_rotation_rejected() {
        let q = Quaternion::new(1.0, 0.1, 0.0, 0.0);
        assert!(matches!(
            arm().transform(&q, &Vec3::zeros()),
            Err(StructureError::NonUnitRotation(_))
        ));
    }

    #[test]
    fn compose_prefixes_names() {
        let mut gripper = Structure::new();
        gripper
            .add_rod(RodSpec::new(
                "palm",
                v(1., 1., 1.),
                v(1.1, 1., 1.),
                0.01,
                0.003,
            ))
            .unwrap();
        let s = arm().compose(&gripper, "g").unwrap();
        assert!(s.rod("g.palm").is_some());
        assert_eq!(s.rods().len(), 3);

        let err = s.compose(&gripper, "g").unwrap_err();
        assert_eq!(err, StructureError::Duplicate("g.palm".into()));

        let e = Structure::new().compose(&arm(), "e").unwrap();
        assert!(e.rod("e.humerus").is_some());
        assert_eq!(
            e.cable("e.bicep").unwrap().anchor_a,
            Anchor::new("e.humerus", End::B)
        );
        assert_eq!(e.extract_prefix("e"), arm());
    }

    #[test]
    fn validate_reference_cases() {
        assert!(arm().validate().is_pass());

        let mut contact = Structure::new();
        contact
            .add_rod(RodSpec::new("a", v(0., 0., 0.), v(1., 0., 0.), 1.0, 0.01))
            .unwrap();
        contact
            .add_rod(RodSpec::new("b", v(1., 0., 0.), v(1., 1., 0.), 1.0, 0.01))
            .unwrap();
        contact
            .add_cable(CableSpec::passive(
                "c",
                Anchor::new("a", End::A),
                Anchor::new("b", End::B),
                10.0,
                0.1,
                1.0,
            ))
            .unwrap();
        let report = contact.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::CompressionContact { .. }
        ));
        assert!(report.to_string().contains("compression contact"));

        let mut loose = Structure::new();
        loose
            .add_rod(RodSpec::new("a", v(0., 0., 0.), v(1., 0., 0.), 1.0, 0.01))
            .unwrap();
        loose
            .add_rod(RodSpec::new("b", v(0., 1., 0.), v(1., 1., 0.), 1.0, 0.01))
            .unwrap();
        let report = loose.validate();
        assert!(matches!(
            report.violations[..],
            [Violation::Disconnected { .. }]
        ));
        assert!(report.to_string().contains("disconnected"));
    }

    #[test]
    fn validate_reports_unchecked_items() {
        let mut s = arm();
        s.push_unchecked(
            vec![],
            vec![CableSpec::passive(
                "stray",
                Anchor::new("radius", End::A),
                Anchor::new("humerus", End::A),
                1.0,
                0.0,
                0.1,
            )],
            vec![Anchor::new("ghost", End::A)],
            vec![AntagonisticPair::new("pitch", "bicep", "stray")],
        );
        let text = s.validate().to_string();
        assert!(text.contains("stray"), "{text}");
        assert!(text.contains("ghost"), "{text}");
        assert!(text.contains("bad pair wiring `pitch`"), "{text}");
    }

    #[test]
    fn pair_wiring_is_checked() {
        let mut s = arm();
        assert!(s
            .add_pair(AntagonisticPair::new("pitch", "bicep", "bicep"))
            .is_err());
        assert!(s
            .add_pair(AntagonisticPair::new("pitch", "bicep", "nope"))
            .is_err());
        s.add_pair(AntagonisticPair::new("pitch", "bicep", "tricep"))
            .unwrap();
        assert!(s
            .add_pair(AntagonisticPair::new("pitch", "tricep", "bicep"))
            .is_err());
        assert!(s.validate().is_pass());
    }
}
