//! Per-tick control policies and the closed loop that drives them.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use thiserror::Error;

use crate::actuation::{filter_with_limits, ActuationError, AntagonisticDrive, MotorState};
use crate::dynamics::{DynamicsError, Model, SimConfig, SimState};
use crate::structure::Structure;
use crate::telemetry::{Recorder, TelemetryRecord};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Actuation(#[from] ActuationError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(
        "amplitude {amplitude} m exceeds the feasible half-range {limit} m of cable `{cable}`"
    )]
    AmplitudeTooLarge {
        amplitude: f64,
        limit: f64,
        cable: String,
    },
    #[error("period must be positive, got {0}")]
    BadPeriod(f64),
    #[error("schedule entry {index}: {reason}")]
    Schedule { index: usize, reason: String },
    #[error("duration must be positive, got {0}")]
    BadDuration(f64),
    #[error("policy output names non-active cable index {0}")]
    NotActive(usize),
}

/// What a policy sees each tick.
#[derive(Clone, Debug)]
pub struct PolicyInput<'a> {
    pub time: f64,
    /// Current anchor-to-anchor length of every cable, in structure order.
    pub cable_lengths: &'a [f64],
    pub end_effector: Vec3,
}

/// Desired rest lengths keyed by cable index. Active cables not named
/// return toward their nominal rest length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyOutput {
    pub desired_rest: BTreeMap<usize, f64>,
}

pub trait Policy {
    fn evaluate(&self, input: &PolicyInput) -> PolicyOutput;

    /// One-line description stored in run metadata.
    fn describe(&self) -> String;
}

/// Holds every active cable at its nominal rest length.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullPolicy;

impl Policy for NullPolicy {
    fn evaluate(&self, _input: &PolicyInput) -> PolicyOutput {
        PolicyOutput::default()
    }

    fn describe(&self) -> String {
        "none".to_string()
    }
}

/// `delta(t) = A·sin(2πt/T)` applied antagonistically to one pair.
#[derive(Clone, Debug)]
pub struct PeriodicPairPolicy {
    drive: AntagonisticDrive,
    amplitude: f64,
    period: f64,
}

impl PeriodicPairPolicy {
    pub fn new(
        structure: &Structure,
        label: &str,
        amplitude: f64,
        period: f64,
    ) -> Result<Self, ControlError> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(ControlError::BadPeriod(period));
        }
        let drive = AntagonisticDrive::new(structure, label)?;
        let ratio = structure.pair(label).map_or(1.0, |p| p.ratio);
        for (idx, scale) in [(drive.flexor, 1.0), (drive.extensor, ratio)] {
            let cable = &structure.cables()[idx];
            let l = cable.limits().expect("drive cables are active");
            let limit = 0.5 * (l.max_length - l.min_length);
            if !(amplitude.abs() * scale <= limit) {
                return Err(ControlError::AmplitudeTooLarge {
                    amplitude,
                    limit: limit / scale,
                    cable: cable.name.clone(),
                });
            }
        }
        Ok(Self {
            drive,
            amplitude,
            period,
        })
    }

    pub fn delta(&self, t: f64) -> f64 {
        self.amplitude * (TAU * t / self.period).sin()
    }
}

impl Policy for PeriodicPairPolicy {
    fn evaluate(&self, input: &PolicyInput) -> PolicyOutput {
        let (f, e) = self.drive.targets(self.delta(input.time));
        PolicyOutput {
            desired_rest: BTreeMap::from([(self.drive.flexor, f), (self.drive.extensor, e)]),
        }
    }

    fn describe(&self) -> String {
        format!(
            "{}:amp={},period={}",
            self.drive.label, self.amplitude, self.period
        )
    }
}

/// Step-and-hold playback of `(time, cable, desired rest)` events.
#[derive(Clone, Debug)]
pub struct ScriptPolicy {
    /// Per cable index: events sorted by time.
    events: BTreeMap<usize, Vec<(f64, f64)>>,
    label: String,
}

impl ScriptPolicy {
    pub fn new(
        structure: &Structure,
        schedule: &[(f64, String, f64)],
    ) -> Result<Self, ControlError> {
        let mut events: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        let mut last = f64::NEG_INFINITY;
        for (index, (t, cable, rest)) in schedule.iter().enumerate() {
            let bad = |reason: String| ControlError::Schedule { index, reason };
            if !t.is_finite() || *t < last {
                return Err(bad(format!("time {t} breaks sorted order")));
            }
            last = *t;
            let idx = structure
                .cable_index(cable)
                .ok_or_else(|| bad(format!("unknown cable `{cable}`")))?;
            if !structure.cables()[idx].is_active() {
                return Err(bad(format!("cable `{cable}` is passive")));
            }
            if !(rest.is_finite() && *rest > 0.0) {
                return Err(bad(format!("desired rest {rest} must be positive")));
            }
            events.entry(idx).or_default().push((*t, *rest));
        }
        Ok(Self {
            events,
            label: format!("script({} events)", schedule.len()),
        })
    }

    /// Parses `time_s,cable,desired_rest_m` CSV (header required).
    pub fn from_csv(structure: &Structure, text: &str) -> Result<Self, ControlError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header_ok = reader
            .headers()
            .map(|h| h.iter().collect::<Vec<_>>() == ["time_s", "cable", "desired_rest_m"])
            .unwrap_or(false);
        if !header_ok {
            return Err(ControlError::Schedule {
                index: 0,
                reason: "expected header `time_s,cable,desired_rest_m`".to_string(),
            });
        }
        let mut schedule = Vec::new();
        for (index, row) in reader.records().enumerate() {
            let bad = |reason: String| ControlError::Schedule { index, reason };
            let row = row.map_err(|e| bad(e.to_string()))?;
            let num = |i: usize| -> Result<f64, ControlError> {
                row.get(i)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| bad(format!("malformed number `{}`", row.get(i).unwrap_or(""))))
            };
            schedule.push((num(0)?, row.get(1).unwrap_or("").to_string(), num(2)?));
        }
        Self::new(structure, &schedule)
    }
}

impl Policy for ScriptPolicy {
    fn evaluate(&self, input: &PolicyInput) -> PolicyOutput {
        let mut out = PolicyOutput::default();
        for (&idx, events) in &self.events {
            let n = events.partition_point(|(t, _)| *t <= input.time);
            if n > 0 {
                out.desired_rest.insert(idx, events[n - 1].1);
            }
        }
        out
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Number of steps for a run of `duration` at `dt`; tolerant of the
/// rounding in ratios such as 8 / 0.001.
pub fn step_count(duration: f64, dt: f64) -> usize {
    (duration / dt + 1e-9).floor() as usize
}

/// Closed loop: policy → motor filter → physics step, recording every tick.
/// Returns `step_count + 1` samples including the initial state.
pub fn run_policy(
    structure: &Structure,
    initial: &SimState,
    policy: &dyn Policy,
    config: &SimConfig,
    duration: f64,
) -> Result<TelemetryRecord, ControlError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(ControlError::BadDuration(duration));
    }
    let model = Model::new(structure)?;
    let mut state = initial.clone();
    let start = state.time;
    let active: Vec<usize> = (0..structure.cables().len())
        .filter(|&j| structure.cables()[j].is_active())
        .collect();
    let mut motors: BTreeMap<usize, MotorState> = active
        .iter()
        .map(|&j| {
            let c = &structure.cables()[j];
            (
                j,
                MotorState {
                    cable: c.name.clone(),
                    rest_length: state.rest_lengths[j],
                    velocity: 0.0,
                },
            )
        })
        .collect();

    let mut recorder = Recorder::new(
        structure,
        &model,
        &state,
        config,
        duration,
        &policy.describe(),
    );
    recorder.push(&model, &state)?;
    for k in 1..=step_count(duration, config.dt) {
        let output = {
            let last = recorder.last_sample();
            let lengths: Vec<f64> = last.cables.iter().map(|c| c.length).collect();
            policy.evaluate(&PolicyInput {
                time: state.time,
                cable_lengths: &lengths,
                end_effector: last.end_effector,
            })
        };
        if let Some((&bad, _)) = output
            .desired_rest
            .iter()
            .find(|(j, _)| !motors.contains_key(j))
        {
            return Err(ControlError::NotActive(bad));
        }
        for (&j, motor) in motors.iter_mut() {
            let spec = &structure.cables()[j];
            let desired = output
                .desired_rest
                .get(&j)
                .copied()
                .unwrap_or(spec.rest_length);
            let limits = spec.limits().expect("active cable");
            *motor = filter_with_limits(limits, motor, desired, config.dt);
            state.rest_lengths[j] = motor.rest_length;
        }
        state = model.step(&state, config, &[])?;
        state.time = start + k as f64 * config.dt;
        recorder.push(&model, &state)?;
    }
    Ok(recorder.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{Anchor, AntagonisticPair, CableSpec, End, MotorLimits, RodSpec};

    fn structure() -> Structure {
        let mut s = Structure::new();
        s.add_rod(RodSpec::new(
            "top",
            Vec3::new(-0.2, 0., 0.),
            Vec3::new(0.2, 0., 0.),
            1.0,
            0.01,
        ))
        .unwrap();
        s.add_rod(RodSpec::new(
            "bob",
            Vec3::new(0., 0., -0.3),
            Vec3::new(0., 0., -0.5),
            0.2,
            0.01,
        ))
        .unwrap();
        s.fix(Anchor::new("top", End::A)).unwrap();
        s.fix(Anchor::new("top", End::B)).unwrap();
        let limits = MotorLimits {
            min_length: 0.2,
            max_length: 0.5,
            max_velocity: 0.1,
            max_acceleration: 1.0,
        };
        for (name, end) in [("bicep", End::A), ("tricep", End::B)] {
            s.add_cable(CableSpec::active(
                name,
                Anchor::new("top", end),
                Anchor::new("bob", End::A),
                200.0,
                1.0,
                0.35,
                limits,
            ))
            .unwrap();
        }
        s.add_pair(AntagonisticPair::new("pitch", "bicep", "tricep"))
            .unwrap();
        s
    }

    fn input(t: f64) -> PolicyInput<'static> {
        PolicyInput {
            time: t,
            cable_lengths: &[],
            end_effector: Vec3::zeros(),
        }
    }

    #[test]
    fn periodic_reference_points() {
        let s = structure();
        let p = PeriodicPairPolicy::new(&s, "pitch", 0.03, 4.0).unwrap();
        let out = p.evaluate(&input(0.0));
        assert_eq!(out.desired_rest[&0], 0.35);
        assert_eq!(out.desired_rest[&1], 0.35);
        assert_eq!(p.delta(1.0), 0.03);
        let out = p.evaluate(&input(1.0));
        assert!((out.desired_rest[&0] - 0.32).abs() < 1e-15);
        assert!((out.desired_rest[&1] - 0.38).abs() < 1e-15);
        assert!(matches!(
            PeriodicPairPolicy::new(&s, "pitch", 0.2, 4.0),
            Err(ControlError::AmplitudeTooLarge { .. })
        ));
        assert!(PeriodicPairPolicy::new(&s, "yaw", 0.01, 4.0).is_err());
    }

    #[test]
    fn script_step_and_hold() {
        let s = structure();
        let empty = ScriptPolicy::new(&s, &[]).unwrap();
        assert!(empty.evaluate(&input(3.0)).desired_rest.is_empty());
        let p = ScriptPolicy::new(&s, &[(1.0, "bicep".into(), 0.3)]).unwrap();
        assert!(p.evaluate(&input(0.5)).desired_rest.is_empty());
        assert_eq!(p.evaluate(&input(2.0)).desired_rest[&0], 0.3);
        assert!(matches!(
            ScriptPolicy::new(&s, &[(1.0, "deltoid".into(), 0.3)]),
            Err(ControlError::Schedule { .. })
        ));
        assert!(ScriptPolicy::new(
            &s,
            &[(2.0, "bicep".into(), 0.3), (1.0, "bicep".into(), 0.3)]
        )
        .is_err());
    }

    #[test]
    fn script_from_csv() {
        let s = structure();
        let p = ScriptPolicy::from_csv(
            &s,
            "time_s,cable,desired_rest_m\n0.5,tricep,0.4\n1.5,tricep,0.3\n",
        )
        .unwrap();
        assert_eq!(p.evaluate(&input(1.0)).desired_rest[&1], 0.4);
        assert_eq!(p.evaluate(&input(1.5)).desired_rest[&1], 0.3);
        assert!(ScriptPolicy::from_csv(&s, "t,c,r\n").is_err());
        assert!(ScriptPolicy::from_csv(&s, "time_s,cable,desired_rest_m\nx,tricep,0.4\n").is_err());
    }

    #[test]
    fn run_length_and_time_column() {
        let s = structure();
        let model = Model::new(&s).unwrap();
        let cfg = SimConfig::default();
        let rec = run_policy(&s, &model.initial_state(), &NullPolicy, &cfg, 0.25).unwrap();
        assert_eq!(rec.rows.len(), 251);
        for (k, row) in rec.rows.iter().enumerate() {
            assert_eq!(row.time, k as f64 * cfg.dt);
        }
        assert_eq!(step_count(8.0, 0.001), 8000);
    }

    #[test]
    fn replaying_a_policy_reproduces_outputs() {
        let s = structure();
        let p = PeriodicPairPolicy::new(&s, "pitch", 0.05, 1.3).unwrap();
        for i in 0..50 {
            let t = i as f64 * 0.037;
            assert_eq!(p.evaluate(&input(t)), p.evaluate(&input(t)));
        }
    }
}
