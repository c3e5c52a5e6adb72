//! Motor-limited rest-length actuation and antagonistic coupling.

use thiserror::Error;

use crate::structure::{AntagonisticPair, CableSpec, MotorLimits, Structure};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActuationError {
    #[error("cable `{0}` is passive and cannot be actuated")]
    Passive(String),
    #[error("unknown cable `{0}`")]
    UnknownCable(String),
    #[error("no antagonistic pair labelled `{0}`")]
    UnknownPair(String),
    #[error("cables `{0}` and `{1}` are not an antagonistic pair")]
    Unpaired(String, String),
    #[error("invalid time step {0}")]
    InvalidStep(f64),
}

/// Realised state of one motor-driven rest length.
#[derive(Clone, Debug, PartialEq)]
pub struct MotorState {
    pub cable: String,
    pub rest_length: f64,
    pub velocity: f64,
}

impl MotorState {
    pub fn at_rest(spec: &CableSpec) -> Self {
        Self {
            cable: spec.name.clone(),
            rest_length: spec.rest_length,
            velocity: 0.0,
        }
    }
}

/// Largest speed `v` for this step such that, decelerating by `a·dt` per
/// step afterwards, the motor covers no more than `distance`.
///
/// With `m` further braking steps the distance is
/// `dt·((m+1)·v − a·dt·m(m+1)/2)`; `m` is the smallest count whose
/// capacity `a·dt²·(m+1)(m+2)/2` reaches `distance`.
fn braking_speed(distance: f64, a: f64, dt: f64) -> f64 {
    let unit = a * dt * dt;
    let u = distance / unit;
    let mut m = ((((1.0 + 8.0 * u).sqrt() - 3.0) / 2.0).ceil()).max(0.0);
    while m > 0.0 && m * (m + 1.0) / 2.0 >= u {
        m -= 1.0;
    }
    while (m + 1.0) * (m + 2.0) / 2.0 < u {
        m += 1.0;
    }
    (distance / dt + a * dt * m * (m + 1.0) / 2.0) / (m + 1.0)
}

/// Advances a motor by one step toward `desired`.
///
/// The desired value is clamped into `[min, max]`; the velocity aims at the
/// fastest approach that can still brake in time, then is limited by the
/// acceleration bound and the velocity bound before integrating.
pub fn filter_command(
    spec: &CableSpec,
    motor: &MotorState,
    desired: f64,
    dt: f64,
) -> Result<MotorState, ActuationError> {
    let limits = spec
        .limits()
        .ok_or_else(|| ActuationError::Passive(spec.name.clone()))?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ActuationError::InvalidStep(dt));
    }
    Ok(filter_with_limits(limits, motor, desired, dt))
}

pub(crate) fn filter_with_limits(
    l: &MotorLimits,
    motor: &MotorState,
    desired: f64,
    dt: f64,
) -> MotorState {
    let target = desired.clamp(l.min_length, l.max_length);
    let error = target - motor.rest_length;
    let a = l.max_acceleration;

    let reach = error / dt;
    let wanted = if a.is_finite() {
        reach
            .abs()
            .min(braking_speed(error.abs(), a, dt))
            .copysign(error)
    } else {
        reach
    };
    let mut v = wanted;
    if a.is_finite() {
        v = v.clamp(motor.velocity - a * dt, motor.velocity + a * dt);
    }
    v = v.clamp(-l.max_velocity, l.max_velocity);

    let mut rest = if v == reach {
        target
    } else {
        motor.rest_length + v * dt
    };
    if rest < l.min_length || rest > l.max_length {
        // Only reachable through rounding at the end of a braking run; keep
        // the realised rate so the next step's acceleration stays bounded.
        rest = rest.clamp(l.min_length, l.max_length);
        v = (rest - motor.rest_length) / dt;
    }
    if error == 0.0 && v == 0.0 {
        rest = motor.rest_length;
    }
    MotorState {
        cable: motor.cable.clone(),
        rest_length: rest,
        velocity: v,
    }
}

/// Desired rest lengths for one antagonistic pair.
///
/// Deltas accumulate: `apply(d)` followed by `apply(-d)` restores the
/// previous desired values. Positive delta shortens the flexor.
#[derive(Clone, Debug, PartialEq)]
pub struct AntagonisticDrive {
    pub label: String,
    pub flexor: usize,
    pub extensor: usize,
    nominal_flexor: f64,
    nominal_extensor: f64,
    ratio: f64,
    delta: f64,
    cocontraction: f64,
}

impl AntagonisticDrive {
    pub fn new(structure: &Structure, label: &str) -> Result<Self, ActuationError> {
        let pair = structure
            .pair(label)
            .ok_or_else(|| ActuationError::UnknownPair(label.to_string()))?;
        Self::from_pair(structure, pair)
    }

    /// Drive for the pair wiring `flexor` against `extensor`, in that order.
    pub fn for_cables(
        structure: &Structure,
        flexor: &str,
        extensor: &str,
    ) -> Result<Self, ActuationError> {
        let pair = structure
            .pairs()
            .iter()
            .find(|p| p.flexor == flexor && p.extensor == extensor)
            .ok_or_else(|| ActuationError::Unpaired(flexor.to_string(), extensor.to_string()))?;
        Self::from_pair(structure, pair)
    }

    fn from_pair(structure: &Structure, pair: &AntagonisticPair) -> Result<Self, ActuationError> {
        let index = |name: &str| -> Result<usize, ActuationError> {
            let i = structure
                .cable_index(name)
                .ok_or_else(|| ActuationError::UnknownCable(name.to_string()))?;
            if !structure.cables()[i].is_active() {
                return Err(ActuationError::Passive(name.to_string()));
            }
            Ok(i)
        };
        let flexor = index(&pair.flexor)?;
        let extensor = index(&pair.extensor)?;
        Ok(Self {
            label: pair.label.clone(),
            flexor,
            extensor,
            nominal_flexor: structure.cables()[flexor].rest_length,
            nominal_extensor: structure.cables()[extensor].rest_length,
            ratio: pair.ratio,
            delta: 0.0,
            cocontraction: 0.0,
        })
    }

    /// Adds `delta` to the accumulated pair offset and returns the new
    /// (flexor, extensor) desired rest lengths.
    pub fn apply(&mut self, delta: f64) -> (f64, f64) {
        self.delta += delta;
        self.desired()
    }

    pub fn set_delta(&mut self, delta: f64) -> (f64, f64) {
        self.delta = delta;
        self.desired()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Shortens both desired rests by `offset`, raising pretension.
    pub fn set_cocontraction(&mut self, offset: f64) {
        self.cocontraction = offset;
    }

    /// Desired rest lengths for an absolute offset, independent of the
    /// accumulated state.
    pub fn targets(&self, delta: f64) -> (f64, f64) {
        (
            self.nominal_flexor - delta - self.cocontraction,
            self.nominal_extensor + self.ratio * delta - self.cocontraction,
        )
    }

    pub fn desired(&self) -> (f64, f64) {
        self.targets(self.delta)
    }
}
