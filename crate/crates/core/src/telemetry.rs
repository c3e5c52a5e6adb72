//! Run recording, settling, compliance probing and CSV/JSON/SVG output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::controllers::step_count;
use crate::dynamics::{DynamicsError, Model, PointLoad, SimConfig, SimState};
use crate::elbow::{end_effector, ElbowFrame};
use crate::structure::{min_clearance, End, Structure};
use crate::tsg::structure_hash;
use crate::Vec3;

pub const DEFAULT_SETTLE_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SETTLE_TIMEOUT: f64 = 30.0;
/// Speeds must stay under tolerance for this long to count as settled, so a
/// turning point of an oscillation is not mistaken for rest.
pub const SETTLE_DWELL: f64 = 0.02;
/// Probe release must return the end-effector this close (m).
pub const RESTORATION_LIMIT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("record has no samples")]
    Empty,
    #[error("input state is not settled (max endpoint speed {0:.3e} m/s)")]
    NotSettled(f64),
    #[error("structure did not settle within {0} s")]
    SettleTimeout(f64),
    #[error("end-effector failed to return after release (off by {0:.3e} m)")]
    NotRestored(f64),
    #[error("structure has no rods")]
    NoRods,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CableSample {
    pub length: f64,
    pub rest: f64,
    pub tension: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub end_effector: Vec3,
    pub pitch: f64,
    pub yaw: f64,
    pub cables: Vec<CableSample>,
    pub energy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunMetadata {
    pub structure_hash: String,
    pub dt: f64,
    pub gravity: [f64; 3],
    pub duration: f64,
    pub policy: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TelemetryRecord {
    pub cable_names: Vec<String>,
    pub rows: Vec<Sample>,
    /// Smallest rod surface clearance over all samples (m); unknown for
    /// records read back from CSV.
    pub min_rod_clearance: Option<f64>,
    /// Warnings raised during the run (rod proximity, degenerate angles).
    pub events: Vec<String>,
    pub metadata: RunMetadata,
}

/// Accumulates samples for one run.
pub struct Recorder {
    effector: Option<(usize, End)>,
    frame: Option<ElbowFrame>,
    radii: Vec<f64>,
    rod_names: Vec<String>,
    gravity: Vec3,
    record: TelemetryRecord,
    in_contact: bool,
}

impl Recorder {
    /// Angles are zero at `reference`.
    pub fn new(
        structure: &Structure,
        model: &Model,
        reference: &SimState,
        config: &SimConfig,
        duration: f64,
        policy: &str,
    ) -> Self {
        Self {
            effector: end_effector(structure),
            frame: ElbowFrame::calibrate(structure, model, reference).ok(),
            radii: (0..model.rod_count())
                .map(|i| model.rod_radius(i))
                .collect(),
            rod_names: (0..model.rod_count())
                .map(|i| model.rod_name(i).to_string())
                .collect(),
            gravity: config.gravity,
            record: TelemetryRecord {
                cable_names: structure.cables().iter().map(|c| c.name.clone()).collect(),
                rows: Vec::new(),
                min_rod_clearance: None,
                events: Vec::new(),
                metadata: RunMetadata {
                    structure_hash: format!("{:016x}", structure_hash(structure)),
                    dt: config.dt,
                    gravity: [config.gravity.x, config.gravity.y, config.gravity.z],
                    duration,
                    policy: policy.to_string(),
                },
            },
            in_contact: false,
        }
    }

    pub fn push(&mut self, model: &Model, state: &SimState) -> Result<(), DynamicsError> {
        let cables = model
            .cable_states(state)?
            .iter()
            .zip(&state.rest_lengths)
            .map(|(c, &rest)| CableSample {
                length: c.length,
                rest,
                tension: c.tension,
            })
            .collect();
        let end_effector = self
            .effector
            .map_or(Vec3::zeros(), |(rod, end)| model.endpoint(state, rod, end));
        let angles = self
            .frame
            .as_mut()
            .map(|f| f.measure(model, state))
            .unwrap_or_default();
        if angles.degenerate {
            self.record.events.push(format!(
                "t={:.6}: degenerate angle projection, previous value held",
                state.time
            ));
        }
        if let Some((gap, i, j)) = min_clearance(&model.segments(state), &self.radii) {
            let best = self.record.min_rod_clearance.map_or(gap, |m| m.min(gap));
            self.record.min_rod_clearance = Some(best);
            let contact = gap <= 0.0;
            if contact && !self.in_contact {
                self.record.events.push(format!(
                    "t={:.6}: rods `{}` and `{}` in contact (clearance {gap:.3e} m)",
                    state.time, self.rod_names[i], self.rod_names[j]
                ));
            }
            self.in_contact = contact;
        }
        self.record.rows.push(Sample {
            time: state.time,
            end_effector,
            pitch: angles.pitch,
            yaw: angles.yaw,
            cables,
            energy: model.total_energy(state, &self.gravity),
        });
        Ok(())
    }

    /// Most recent sample. Panics before the first push.
    pub fn last_sample(&self) -> &Sample {
        self.record.rows.last().expect("recorder has samples")
    }

    pub fn finish(self) -> TelemetryRecord {
        self.record
    }
}

fn settle_with(
    model: &Model,
    state: &SimState,
    config: &SimConfig,
    loads: &[PointLoad],
    tolerance: f64,
    timeout: f64,
) -> Result<(SimState, bool), DynamicsError> {
    let dwell = ((SETTLE_DWELL / config.dt).ceil() as usize).max(1);
    let mut s = state.clone();
    let mut quiet = 0usize;
    for _ in 0..step_count(timeout, config.dt) {
        if quiet >= dwell {
            return Ok((s, true));
        }
        s = model.step(&s, config, loads)?;
        if model.max_endpoint_speed(&s) < tolerance {
            quiet += 1;
        } else {
            quiet = 0;
        }
    }
    Ok((s, quiet >= dwell))
}

/// Passive simulation until every rod endpoint moves slower than
/// `tolerance` (m/s) for [`SETTLE_DWELL`] seconds, or `timeout` elapses.
pub fn settle(
    model: &Model,
    state: &SimState,
    config: &SimConfig,
    tolerance: f64,
    timeout: f64,
) -> Result<(SimState, bool), DynamicsError> {
    settle_with(model, state, config, &[], tolerance, timeout)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    /// End-effector displacement under the load (m).
    pub displacement: Vec3,
    /// Distance from the pre-probe position after release and re-settling (m).
    pub restoration_error: f64,
}

/// Applies a constant `force` at `point`, re-settles, measures the
/// displacement, then releases and checks that the point returns.
pub fn probe_compliance(
    model: &Model,
    settled: &SimState,
    point: (usize, End),
    force: &Vec3,
    config: &SimConfig,
) -> Result<ProbeResult, TelemetryError> {
    let speed = model.max_endpoint_speed(settled);
    if !(speed < DEFAULT_SETTLE_TOLERANCE) {
        return Err(TelemetryError::NotSettled(speed));
    }
    if *force == Vec3::zeros() {
        return Ok(ProbeResult {
            displacement: Vec3::zeros(),
            restoration_error: 0.0,
        });
    }
    let (rod, end) = point;
    let before = model.endpoint(settled, rod, end);
    let load = [PointLoad {
        rod,
        end,
        force: *force,
    }];
    let tol = DEFAULT_SETTLE_TOLERANCE;
    let (loaded, ok) = settle_with(model, settled, config, &load, tol, DEFAULT_SETTLE_TIMEOUT)?;
    if !ok {
        return Err(TelemetryError::SettleTimeout(DEFAULT_SETTLE_TIMEOUT));
    }
    let displacement = model.endpoint(&loaded, rod, end) - before;
    let (released, ok) = settle_with(model, &loaded, config, &[], tol, DEFAULT_SETTLE_TIMEOUT)?;
    if !ok {
        return Err(TelemetryError::SettleTimeout(DEFAULT_SETTLE_TIMEOUT));
    }
    let restoration_error = (model.endpoint(&released, rod, end) - before).norm();
    if restoration_error > RESTORATION_LIMIT {
        return Err(TelemetryError::NotRestored(restoration_error));
    }
    Ok(ProbeResult {
        displacement,
        restoration_error,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recovery {
    /// Largest distance from the start position while loaded or after (m).
    pub peak_displacement: f64,
    /// Distance from the start position at the end of the window (m).
    pub final_error: f64,
    /// Time after release from which the point stays within
    /// [`RESTORATION_LIMIT`]; `None` if it never does within the window.
    pub return_time: Option<f64>,
}

/// Pushes `point` with `force` for `hold` seconds, releases it, and follows
/// the free response for `window` seconds.
pub fn perturb_and_release(
    model: &Model,
    start: &SimState,
    point: (usize, End),
    force: &Vec3,
    hold: f64,
    window: f64,
    config: &SimConfig,
) -> Result<Recovery, DynamicsError> {
    let (rod, end) = point;
    let origin = model.endpoint(start, rod, end);
    let load = [PointLoad {
        rod,
        end,
        force: *force,
    }];
    let mut s = start.clone();
    let mut peak: f64 = 0.0;
    for _ in 0..step_count(hold, config.dt) {
        s = model.step(&s, config, &load)?;
        peak = peak.max((model.endpoint(&s, rod, end) - origin).norm());
    }
    let mut return_time = Some(0.0);
    let n = step_count(window, config.dt);
    let mut err = (model.endpoint(&s, rod, end) - origin).norm();
    if err > RESTORATION_LIMIT {
        return_time = None;
    }
    for k in 1..=n {
        s = model.step(&s, config, &[])?;
        err = (model.endpoint(&s, rod, end) - origin).norm();
        peak = peak.max(err);
        if err > RESTORATION_LIMIT {
            return_time = None;
        } else if return_time.is_none() {
            return_time = Some(k as f64 * config.dt);
        }
    }
    Ok(Recovery {
        peak_displacement: peak,
        final_error: err,
        return_time,
    })
}

/// Decimal text with 9 significant digits, trailing zeros removed.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let point = exp + 1;
    let mut out = String::from(sign);
    if point <= 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-point) as usize));
        out.push_str(&digits);
    } else if point as usize >= digits.len() {
        out.push_str(&digits);
        out.extend(std::iter::repeat_n('0', point as usize - digits.len()));
    } else {
        out.push_str(&digits[..point as usize]);
        out.push('.');
        out.push_str(&digits[point as usize..]);
    }
    if out.contains('.') {
        while out.ends_with('0') {
            out.pop();
        }
        if out.ends_with('.') {
            out.pop();
        }
    }
    out
}

fn header(record: &TelemetryRecord) -> Vec<String> {
    let mut h: Vec<String> = ["time", "ee_x", "ee_y", "ee_z", "pitch", "yaw"]
        .map(String::from)
        .into();
    for name in &record.cable_names {
        for suffix in ["length", "rest", "tension"] {
            h.push(format!("{name}_{suffix}"));
        }
    }
    h.push("energy".to_string());
    h
}

pub fn write_csv<W: std::io::Write>(
    record: &TelemetryRecord,
    out: W,
) -> Result<(), TelemetryError> {
    if record.rows.is_empty() {
        return Err(TelemetryError::Empty);
    }
    let csv_err = |e: csv::Error| TelemetryError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(record)).map_err(csv_err)?;
    let mut fields = Vec::new();
    for row in &record.rows {
        fields.clear();
        let ee = row.end_effector;
        for x in [row.time, ee.x, ee.y, ee.z, row.pitch, row.yaw] {
            fields.push(format_sig9(x));
        }
        for c in &row.cables {
            for x in [c.length, c.rest, c.tension] {
                fields.push(format_sig9(x));
            }
        }
        fields.push(format_sig9(row.energy));
        w.write_record(&fields).map_err(csv_err)?;
    }
    w.flush().map_err(|e| TelemetryError::Csv(e.to_string()))?;
    Ok(())
}

pub fn export_csv(record: &TelemetryRecord, path: &Path) -> Result<(), TelemetryError> {
    if record.rows.is_empty() {
        return Err(TelemetryError::Empty);
    }
    let io = |source| TelemetryError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    write_csv(record, std::io::BufWriter::new(file))
}

/// Reads a CSV written by [`export_csv`]. Metadata is not stored in the CSV
/// and comes back empty.
pub fn parse_csv(text: &str) -> Result<TelemetryRecord, TelemetryError> {
    let bad = |m: String| TelemetryError::Csv(m);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let head: Vec<String> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let fixed = ["time", "ee_x", "ee_y", "ee_z", "pitch", "yaw"];
    if head.len() < 7
        || head[..6] != fixed
        || head.last().map(String::as_str) != Some("energy")
        || !(head.len() - 7).is_multiple_of(3)
    {
        return Err(bad("unexpected header".to_string()));
    }
    let mut cable_names = Vec::new();
    for triplet in head[6..head.len() - 1].chunks(3) {
        let name = triplet[0]
            .strip_suffix("_length")
            .ok_or_else(|| bad(format!("unexpected column `{}`", triplet[0])))?;
        if triplet[1] != format!("{name}_rest") || triplet[2] != format!("{name}_tension") {
            return Err(bad(format!("columns for cable `{name}` out of order")));
        }
        cable_names.push(name.to_string());
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| bad(format!("row {}: malformed number `{f}`", i + 1)))
            })
            .collect::<Result<_, _>>()?;
        if v.len() != head.len() {
            return Err(bad(format!(
                "row {}: expected {} fields",
                i + 1,
                head.len()
            )));
        }
        rows.push(Sample {
            time: v[0],
            end_effector: Vec3::new(v[1], v[2], v[3]),
            pitch: v[4],
            yaw: v[5],
            cables: v[6..v.len() - 1]
                .chunks(3)
                .map(|c| CableSample {
                    length: c[0],
                    rest: c[1],
                    tension: c[2],
                })
                .collect(),
            energy: v[v.len() - 1],
        });
    }
    if rows.is_empty() {
        return Err(TelemetryError::Empty);
    }
    Ok(TelemetryRecord {
        cable_names,
        rows,
        ..Default::default()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub samples: usize,
    pub duration: f64,
    pub pitch_min: f64,
    pub pitch_max: f64,
    pub pitch_range: f64,
    pub yaw_min: f64,
    pub yaw_max: f64,
    pub yaw_range: f64,
    pub max_tension: BTreeMap<String, f64>,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub energy_drift: f64,
    pub min_rod_clearance: Option<f64>,
    pub events: usize,
    pub metadata: RunMetadata,
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    })
}

pub fn summarize(record: &TelemetryRecord) -> Result<Summary, TelemetryError> {
    let (first, last) = match (record.rows.first(), record.rows.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(TelemetryError::Empty),
    };
    let (pitch_min, pitch_max) = min_max(record.rows.iter().map(|r| r.pitch));
    let (yaw_min, yaw_max) = min_max(record.rows.iter().map(|r| r.yaw));
    let max_tension = record
        .cable_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (_, hi) = min_max(record.rows.iter().map(|r| r.cables[j].tension));
            (name.clone(), hi)
        })
        .collect();
    Ok(Summary {
        samples: record.rows.len(),
        duration: last.time - first.time,
        pitch_min,
        pitch_max,
        pitch_range: pitch_max - pitch_min,
        yaw_min,
        yaw_max,
        yaw_range: yaw_max - yaw_min,
        max_tension,
        energy_initial: first.energy,
        energy_final: last.energy,
        energy_drift: last.energy - first.energy,
        min_rod_clearance: record.min_rod_clearance,
        events: record.events.len(),
        metadata: record.metadata.clone(),
    })
}

/// Mean interval between successive upward crossings of the signal mean,
/// with linear interpolation between samples.
pub fn estimate_period(times: &[f64], values: &[f64]) -> Option<f64> {
    if times.len() != values.len() || values.len() < 3 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut crossings = Vec::new();
    for i in 1..values.len() {
        let (a, b) = (values[i - 1] - mean, values[i] - mean);
        if a < 0.0 && b >= 0.0 {
            let frac = -a / (b - a);
            crossings.push(times[i - 1] + frac * (times[i] - times[i - 1]));
        }
    }
    if crossings.len() < 2 {
        return None;
    }
    Some((crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64)
}

fn polyline(points: &[(f64, f64)], x0: f64, y0: f64, w: f64, h: f64, colour: &str) -> String {
    let (xmin, xmax) = min_max(points.iter().map(|p| p.0));
    let (ymin, ymax) = min_max(points.iter().map(|p| p.1));
    let sx = if xmax > xmin { w / (xmax - xmin) } else { 0.0 };
    let sy = if ymax > ymin { h / (ymax - ymin) } else { 0.0 };
    let mut d = String::new();
    for (x, y) in points {
        let _ = write!(
            d,
            "{:.2},{:.2} ",
            x0 + (x - xmin) * sx,
            y0 + h - (y - ymin) * sy
        );
    }
    format!(
        "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1\" points=\"{}\"/>\n",
        d.trim_end()
    )
}

/// Two panels: end-effector path in the x–z plane, and pitch/yaw over time.
pub fn render_svg(record: &TelemetryRecord) -> Result<String, TelemetryError> {
    if record.rows.is_empty() {
        return Err(TelemetryError::Empty);
    }
    let stride = (record.rows.len() / 2000).max(1);
    let rows: Vec<&Sample> = record.rows.iter().step_by(stride).collect();
    let path: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.end_effector.x, r.end_effector.z))
        .collect();
    let pitch: Vec<(f64, f64)> = rows.iter().map(|r| (r.time, r.pitch)).collect();
    let yaw: Vec<(f64, f64)> = rows.iter().map(|r| (r.time, r.yaw)).collect();
    let mut svg = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"840\" height=\"320\">\n\
         <rect width=\"840\" height=\"320\" fill=\"white\"/>\n\
         <text x=\"20\" y=\"20\" font-size=\"12\">end-effector x-z</text>\n\
         <text x=\"440\" y=\"20\" font-size=\"12\">pitch (blue), yaw (red) vs time</text>\n",
    );
    svg.push_str(&polyline(&path, 20.0, 30.0, 380.0, 270.0, "black"));
    svg.push_str(&polyline(&pitch, 440.0, 30.0, 380.0, 270.0, "steelblue"));
    svg.push_str(&polyline(&yaw, 440.0, 30.0, 380.0, 270.0, "firebrick"));
    svg.push_str("</svg>\n");
    Ok(svg)
}
