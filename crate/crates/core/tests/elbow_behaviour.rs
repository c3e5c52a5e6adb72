//! Behaviour of the reference elbow under settling, actuation and probing.

use tenjoint::controllers::{run_policy, NullPolicy, PeriodicPairPolicy, ScriptPolicy};
use tenjoint::elbow::{end_effector, BICEPS, PITCH_PAIR, TRICEPS, YAW_PAIR};
use tenjoint::telemetry::{estimate_period, probe_compliance, settle, DEFAULT_SETTLE_TOLERANCE};
use tenjoint::{
    build_elbow, Anchor, AntagonisticDrive, CableSpec, ElbowFrame, ElbowParams, End, Model,
    RodSpec, SimConfig, SimState, Structure, Vec3,
};

fn elbow_settled_to(tolerance: f64) -> (Structure, Model, SimState) {
    let s = build_elbow(&ElbowParams::default()).unwrap();
    let m = Model::new(&s).unwrap();
    let (mut st, ok) = settle(
        &m,
        &m.initial_state(),
        &SimConfig::default(),
        tolerance,
        10.0,
    )
    .unwrap();
    assert!(
        ok,
        "reference elbow should settle within 10 s at {tolerance} m/s"
    );
    st.time = 0.0;
    (s, m, st)
}

fn elbow() -> (Structure, Model, SimState) {
    elbow_settled_to(DEFAULT_SETTLE_TOLERANCE)
}

fn tip(s: &Structure) -> (usize, End) {
    end_effector(s).unwrap()
}

#[test]
fn settles_from_the_build_pose_within_ten_seconds() {
    let (_, m, st) = elbow();
    assert!(m.max_endpoint_speed(&st) < DEFAULT_SETTLE_TOLERANCE);
}

#[test]
fn nominal_pose_has_no_yaw() {
    let s = build_elbow(&ElbowParams::default()).unwrap();
    let m = Model::new(&s).unwrap();
    let build = m.initial_state();
    let (settled, _) = settle(&m, &build, &SimConfig::default(), 1e-6, 30.0).unwrap();
    let mut frame = ElbowFrame::calibrate(&s, &m, &build).unwrap();
    let angles = frame.measure(&m, &settled);
    assert!(
        angles.yaw.to_degrees().abs() < 0.5,
        "yaw {}",
        angles.yaw.to_degrees()
    );
    let (rod, end) = tip(&s);
    assert!(m.endpoint(&settled, rod, end).y.abs() < 1e-9);
}

#[test]
fn settle_is_idempotent() {
    let (s, m, st) = elbow();
    let cfg = SimConfig::default();
    let (again, ok) = settle(&m, &st, &cfg, DEFAULT_SETTLE_TOLERANCE, 30.0).unwrap();
    assert!(ok);
    let steps = ((again.time - st.time) / cfg.dt).round();
    let (rod, end) = tip(&s);
    let moved = (m.endpoint(&again, rod, end) - m.endpoint(&st, rod, end)).norm();
    assert!(
        moved < DEFAULT_SETTLE_TOLERANCE * cfg.dt * steps.max(1.0),
        "moved {moved}"
    );
    // An already quiet state only needs the dwell to confirm.
    assert!(again.time - st.time <= 0.02 + 1e-9);
}

#[test]
fn undamped_oscillation_never_settles() {
    let mut s = Structure::new();
    s.add_rod(RodSpec::new(
        "beam",
        Vec3::new(-0.2, 0.0, 0.0),
        Vec3::new(0.2, 0.0, 0.0),
        1.0,
        0.01,
    ))
    .unwrap();
    s.add_rod(RodSpec::new(
        "bob",
        Vec3::new(-0.2, 0.0, -0.5),
        Vec3::new(-0.2, 0.0, -0.7),
        0.5,
        0.01,
    ))
    .unwrap();
    s.fix(Anchor::new("beam", End::A)).unwrap();
    s.fix(Anchor::new("beam", End::B)).unwrap();
    s.add_cable(CableSpec::passive(
        "line",
        Anchor::new("beam", End::A),
        Anchor::new("bob", End::A),
        400.0,
        0.0,
        0.48,
    ))
    .unwrap();
    let m = Model::new(&s).unwrap();
    let (_, ok) = settle(&m, &m.initial_state(), &SimConfig::default(), 1e-6, 5.0).unwrap();
    assert!(!ok);
}

#[test]
fn settled_pitch_is_monotone_in_delta() {
    let (s, m, st) = elbow_settled_to(1e-6);
    let drive = AntagonisticDrive::new(&s, PITCH_PAIR).unwrap();
    let mut frame = ElbowFrame::calibrate(&s, &m, &st).unwrap();
    let cfg = SimConfig::default();
    let mut last = f64::NEG_INFINITY;
    let mut state = st.clone();
    for i in 0..=5 {
        let delta = 0.004 * i as f64;
        let (flexor, extensor) = drive.targets(delta);
        state.rest_lengths[drive.flexor] = flexor;
        state.rest_lengths[drive.extensor] = extensor;
        let (next, ok) = settle(&m, &state, &cfg, 1e-6, 30.0).unwrap();
        assert!(ok);
        let pitch = frame.measure(&m, &next).pitch;
        assert!(pitch > last, "delta {delta}: pitch {pitch} after {last}");
        last = pitch;
        state = next;
    }
    assert!(last > 0.0);
}

#[test]
fn shortening_the_flexor_raises_pitch() {
    let (s, _, st) = elbow();
    let policy = PeriodicPairPolicy::new(&s, PITCH_PAIR, 0.002, 4.0).unwrap();
    let record = run_policy(&s, &st, &policy, &SimConfig::default(), 1.0).unwrap();
    // First quarter period: delta > 0, flexor short of nominal.
    let last = record.rows.last().unwrap();
    assert!(last.pitch > 0.0, "pitch {}", last.pitch);
    assert!(last.cables[drive_index(&s, true)].rest < s.cable("biceps").unwrap().rest_length);
}

fn drive_index(s: &Structure, flexor: bool) -> usize {
    let d = AntagonisticDrive::new(s, PITCH_PAIR).unwrap();
    if flexor {
        d.flexor
    } else {
        d.extensor
    }
}

#[test]
fn larger_pitch_amplitude_keeps_the_period() {
    let (s, _, st) = elbow();
    let policy = PeriodicPairPolicy::new(&s, PITCH_PAIR, 0.03, 4.0).unwrap();
    let record = run_policy(&s, &st, &policy, &SimConfig::default(), 12.0).unwrap();
    let times: Vec<f64> = record.rows.iter().map(|r| r.time).collect();
    let pitch: Vec<f64> = record.rows.iter().map(|r| r.pitch).collect();
    let period = estimate_period(&times, &pitch).unwrap();
    assert!((period - 4.0).abs() <= 0.08, "period {period}");
    assert!(record.min_rod_clearance.unwrap() > 0.0);
}

#[test]
fn every_accepted_pitch_amplitude_keeps_rods_apart() {
    let (s, _, st) = elbow();
    for amp in [0.03, 0.0325] {
        let policy = PeriodicPairPolicy::new(&s, PITCH_PAIR, amp, 4.0).unwrap();
        let record = run_policy(&s, &st, &policy, &SimConfig::default(), 8.0).unwrap();
        assert!(record.min_rod_clearance.unwrap() > 0.0, "amplitude {amp}");
        assert!(record.events.is_empty(), "{:?}", record.events);
    }
    assert!(PeriodicPairPolicy::new(&s, PITCH_PAIR, 0.033, 4.0).is_err());
}

/// Bang-bang commands between one pair's motor limits at full motor speed.
fn slam(s: &Structure, st: &SimState, flexor: &str, extensor: &str) -> f64 {
    let limits = |name: &str| *s.cable(name).unwrap().limits().unwrap();
    let (f, e) = (limits(flexor), limits(extensor));
    let mut schedule = Vec::new();
    for (i, t) in [0.0, 1.5, 3.0, 4.5].into_iter().enumerate() {
        let (fv, ev) = if i % 2 == 0 {
            (f.max_length, e.min_length)
        } else {
            (f.min_length, e.max_length)
        };
        schedule.push((t, flexor.to_string(), fv));
        schedule.push((t, extensor.to_string(), ev));
    }
    let policy = ScriptPolicy::new(s, &schedule).unwrap();
    let record = run_policy(s, st, &policy, &SimConfig::default(), 6.0).unwrap();
    record.min_rod_clearance.unwrap()
}

#[test]
fn slamming_either_pair_between_its_limits_keeps_rods_apart() {
    let (s, _, st) = elbow();
    let pitch = slam(&s, &st, BICEPS, TRICEPS);
    assert!(pitch > 0.0, "pitch clearance {pitch}");
    let yaw = slam(&s, &st, "yaw_r", "yaw_l");
    assert!(yaw > 0.0, "yaw clearance {yaw}");
}

#[test]
fn pitch_drive_leaves_yaw_alone_and_yaw_drive_leaves_pitch() {
    let (s, _, st) = elbow();
    let cfg = SimConfig::default();
    let range = |xs: Vec<f64>| {
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - xs.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let pitch_run = run_policy(
        &s,
        &st,
        &PeriodicPairPolicy::new(&s, PITCH_PAIR, 0.02, 4.0).unwrap(),
        &cfg,
        4.0,
    )
    .unwrap();
    let dp = range(pitch_run.rows.iter().map(|r| r.pitch).collect());
    let dy = range(pitch_run.rows.iter().map(|r| r.yaw).collect());
    assert!(dy < 0.2 * dp, "pitch {dp}, yaw {dy}");

    let yaw_run = run_policy(
        &s,
        &st,
        &PeriodicPairPolicy::new(&s, YAW_PAIR, 0.02, 4.0).unwrap(),
        &cfg,
        4.0,
    )
    .unwrap();
    let dp = range(yaw_run.rows.iter().map(|r| r.pitch).collect());
    let dy = range(yaw_run.rows.iter().map(|r| r.yaw).collect());
    assert!(dp < 0.2 * dy, "pitch {dp}, yaw {dy}");
}

#[test]
fn null_policy_holds_a_settled_pose() {
    let (s, m, st) = elbow_settled_to(1e-8);
    let record = run_policy(&s, &st, &NullPolicy, &SimConfig::default(), 1.0).unwrap();
    let (rod, end) = tip(&s);
    let origin = m.endpoint(&st, rod, end);
    let drift = record
        .rows
        .iter()
        .map(|r| (r.end_effector - origin).norm())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-6, "drift {drift}");
    let pitch_range = record
        .rows
        .iter()
        .map(|r| r.pitch.abs())
        .fold(0.0, f64::max);
    assert!(pitch_range < 1e-4);
}

#[test]
fn zero_probe_force_gives_zero_displacement() {
    let (s, m, st) = elbow();
    let p = probe_compliance(&m, &st, tip(&s), &Vec3::zeros(), &SimConfig::default()).unwrap();
    assert_eq!(p.displacement, Vec3::zeros());
    assert_eq!(p.restoration_error, 0.0);
}

#[test]
fn every_axis_is_compliant_and_restores() {
    let (s, m, st) = elbow();
    for f in [
        Vec3::x(),
        Vec3::y(),
        Vec3::z(),
        -Vec3::x(),
        -Vec3::y(),
        -Vec3::z(),
    ] {
        let p = probe_compliance(&m, &st, tip(&s), &f, &SimConfig::default()).unwrap();
        assert!(p.displacement.norm() > 5e-4, "{f:?}: {:?}", p.displacement);
        assert!(p.restoration_error <= 1e-3);
        // The tip gives way along the push, not against it.
        assert!(p.displacement.dot(&f) > 0.0);
    }
}

fn x_asymmetry(force: f64) -> f64 {
    let (s, m, st) = elbow();
    let cfg = SimConfig::default();
    let plus = probe_compliance(&m, &st, tip(&s), &(Vec3::x() * force), &cfg)
        .unwrap()
        .displacement
        .norm();
    let minus = probe_compliance(&m, &st, tip(&s), &(-Vec3::x() * force), &cfg)
        .unwrap()
        .displacement
        .norm();
    (plus - minus).abs() / plus.max(minus)
}

#[test]
fn small_x_probes_are_symmetric() {
    let a = x_asymmetry(0.1);
    assert!(a <= 0.1, "asymmetry {a}");
}

#[test]
#[ignore = "reference geometry is 24% asymmetric at 1 N (short moment arm of an x push about the elbow); see README"]
fn unit_x_probes_are_symmetric() {
    let a = x_asymmetry(1.0);
    assert!(a <= 0.1, "asymmetry {a}");
}

#[test]
fn mirrored_elbow_moves_the_same_way() {
    let p = ElbowParams {
        mirrored: true,
        ..ElbowParams::default()
    };
    let s = build_elbow(&p).unwrap();
    let m = Model::new(&s).unwrap();
    let (mut st, ok) = settle(&m, &m.initial_state(), &SimConfig::default(), 1e-4, 10.0).unwrap();
    assert!(ok);
    st.time = 0.0;
    let (_, _, base) = elbow();
    let policy = PeriodicPairPolicy::new(&s, PITCH_PAIR, 0.02, 4.0).unwrap();
    let mirrored = run_policy(&s, &st, &policy, &SimConfig::default(), 2.0).unwrap();
    let (bs, _, _) = elbow();
    let plain = run_policy(
        &bs,
        &base,
        &PeriodicPairPolicy::new(&bs, PITCH_PAIR, 0.02, 4.0).unwrap(),
        &SimConfig::default(),
        2.0,
    )
    .unwrap();
    for (a, b) in mirrored.rows.iter().zip(&plain.rows) {
        assert!((a.pitch - b.pitch).abs() < 1e-6);
        assert!((a.end_effector.x - b.end_effector.x).abs() < 1e-6);
        assert!((a.end_effector.y + b.end_effector.y).abs() < 1e-6);
    }
}
