//! The `tenjoint` command line.
//!
//! Exit codes: 0 success, 1 validation or physics failure, 2 usage or file
//! error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::controllers::{run_policy, NullPolicy, PeriodicPairPolicy, Policy, ScriptPolicy};
use crate::dynamics::{Model, SimConfig};
use crate::elbow::{build_elbow, end_effector, ElbowError, ElbowParams};
use crate::structure::Structure;
use crate::telemetry::{
    export_csv, probe_compliance, render_svg, settle, summarize, DEFAULT_SETTLE_TIMEOUT,
    DEFAULT_SETTLE_TOLERANCE,
};
use crate::tsg::{self, TsgError};
use crate::Vec3;

#[derive(Debug, Parser)]
#[command(name = "tenjoint", version, about = "Tensegrity joint simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a .tsg file and check the structural invariants.
    Validate { structure: PathBuf },
    /// Settle a structure, run a policy, and write telemetry.
    Run(RunArgs),
    /// Settle, push the end-effector with a constant force, report displacement.
    Probe(ProbeArgs),
    /// Write the reference elbow as a .tsg file.
    EmitElbow(EmitArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub structure: PathBuf,
    /// `none`, `<pair>:amp=<m>,period=<s>`, or `script:<csv path>`.
    #[arg(long, default_value = "none")]
    pub policy: String,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 8.0)]
    pub duration: f64,
    #[arg(long, num_args = 3, allow_negative_numbers = true, value_names = ["GX", "GY", "GZ"])]
    pub gravity: Option<Vec<f64>>,
    /// Output directory for telemetry.csv and summary.json.
    #[arg(long, env = "TENJOINT_OUT", default_value = ".")]
    pub out: PathBuf,
    /// Also write plot.svg.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    pub structure: PathBuf,
    #[arg(long, num_args = 3, allow_negative_numbers = true, value_names = ["FX", "FY", "FZ"], required = true)]
    pub force: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub humerus_length: Option<f64>,
    #[arg(long)]
    pub olecranon_length: Option<f64>,
    #[arg(long)]
    pub forearm_length: Option<f64>,
    #[arg(long)]
    pub rod_radius: Option<f64>,
    #[arg(long)]
    pub active_k: Option<f64>,
    #[arg(long)]
    pub passive_k: Option<f64>,
    #[arg(long)]
    pub damping: Option<f64>,
    /// Co-contraction of both active pairs (m).
    #[arg(long)]
    pub pretension: Option<f64>,
    /// Half-range of the pitch motors (m).
    #[arg(long)]
    pub stroke: Option<f64>,
    #[arg(long)]
    pub yaw_stroke: Option<f64>,
    /// Hyperextension stop: how far the pitch pair may drive toward extension (m).
    #[arg(long)]
    pub extension_stop: Option<f64>,
    #[arg(long)]
    pub mirrored: bool,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn physics(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn load(path: &Path) -> Result<Structure, Failure> {
    tsg::read(path).map_err(|e| match e {
        TsgError::Io { .. } => usage(e.to_string()),
        _ => usage(format!("{}: {e}", path.display())),
    })
}

fn load_valid(path: &Path) -> Result<Structure, Failure> {
    let s = load(path)?;
    let report = s.validate();
    if !report.is_pass() {
        return Err(physics(format!("{}: {report}", path.display())));
    }
    Ok(s)
}

fn config(dt: f64, gravity: Option<&[f64]>) -> Result<SimConfig, Failure> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(usage(format!("--dt must be positive, got {dt}")));
    }
    let mut c = SimConfig {
        dt,
        ..SimConfig::default()
    };
    if let Some(g) = gravity {
        c.gravity = Vec3::new(g[0], g[1], g[2]);
    }
    Ok(c)
}

/// Parses the policy mini-language.
pub fn parse_policy(structure: &Structure, spec: &str) -> Result<Box<dyn Policy>, Failure> {
    if spec == "none" {
        return Ok(Box::new(NullPolicy));
    }
    let (name, rest) = spec.split_once(':').ok_or_else(|| {
        usage(format!(
            "policy `{spec}`: expected none, <pair>:amp=..,period=.., or script:<path>"
        ))
    })?;
    if name == "script" {
        let text = std::fs::read_to_string(rest).map_err(|e| usage(format!("{rest}: {e}")))?;
        return ScriptPolicy::from_csv(structure, &text)
            .map(|p| Box::new(p) as Box<dyn Policy>)
            .map_err(|e| usage(format!("{rest}: {e}")));
    }
    let (mut amp, mut period) = (None, None);
    for kv in rest.split(',') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("policy `{spec}`: expected key=value, got `{kv}`")))?;
        let x: f64 = v
            .parse()
            .map_err(|_| usage(format!("policy `{spec}`: malformed number `{v}`")))?;
        match k {
            "amp" => amp = Some(x),
            "period" => period = Some(x),
            _ => return Err(usage(format!("policy `{spec}`: unknown key `{k}`"))),
        }
    }
    let (Some(amp), Some(period)) = (amp, period) else {
        return Err(usage(format!(
            "policy `{spec}`: both amp and period are required"
        )));
    };
    PeriodicPairPolicy::new(structure, name, amp, period)
        .map(|p| Box::new(p) as Box<dyn Policy>)
        .map_err(|e| usage(format!("policy `{spec}`: {e}")))
}

fn cmd_validate(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let s = load(path)?;
    let report = s.validate();
    if report.is_pass() {
        let _ = writeln!(
            out,
            "{}: pass ({} rods, {} cables, {} pairs)",
            path.display(),
            s.rods().len(),
            s.cables().len(),
            s.pairs().len()
        );
        Ok(())
    } else {
        Err(physics(format!("{}: {report}", path.display())))
    }
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let s = load_valid(&args.structure)?;
    let cfg = config(args.dt, args.gravity.as_deref())?;
    if !(args.duration > 0.0 && args.duration.is_finite()) {
        return Err(usage(format!(
            "--duration must be positive, got {}",
            args.duration
        )));
    }
    let policy = parse_policy(&s, &args.policy)?;
    let model = Model::new(&s).map_err(|e| physics(e.to_string()))?;
    let (mut start, settled) = settle(
        &model,
        &model.initial_state(),
        &cfg,
        DEFAULT_SETTLE_TOLERANCE,
        DEFAULT_SETTLE_TIMEOUT,
    )
    .map_err(|e| physics(e.to_string()))?;
    if !settled {
        let _ = writeln!(
            err,
            "warning: structure did not settle within {DEFAULT_SETTLE_TIMEOUT} s"
        );
    }
    start.time = 0.0;
    let record = run_policy(&s, &start, policy.as_ref(), &cfg, args.duration)
        .map_err(|e| physics(e.to_string()))?;
    for event in &record.events {
        let _ = writeln!(err, "warning: {event}");
    }

    std::fs::create_dir_all(&args.out)
        .map_err(|e| usage(format!("{}: {e}", args.out.display())))?;
    let csv_path = args.out.join("telemetry.csv");
    export_csv(&record, &csv_path).map_err(|e| usage(e.to_string()))?;
    let summary = summarize(&record).map_err(|e| physics(e.to_string()))?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    let json_path = args.out.join("summary.json");
    std::fs::write(&json_path, format!("{json}\n"))
        .map_err(|e| usage(format!("{}: {e}", json_path.display())))?;
    if args.svg {
        let svg_path = args.out.join("plot.svg");
        let svg = render_svg(&record).map_err(|e| physics(e.to_string()))?;
        std::fs::write(&svg_path, svg)
            .map_err(|e| usage(format!("{}: {e}", svg_path.display())))?;
    }
    let _ = writeln!(out, "{json}");
    Ok(())
}

fn cmd_probe(args: &ProbeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let s = load_valid(&args.structure)?;
    let cfg = config(args.dt, None)?;
    let force = Vec3::new(args.force[0], args.force[1], args.force[2]);
    let model = Model::new(&s).map_err(|e| physics(e.to_string()))?;
    let point = end_effector(&s).ok_or_else(|| physics("structure has no rods"))?;
    let (settled, ok) = settle(
        &model,
        &model.initial_state(),
        &cfg,
        DEFAULT_SETTLE_TOLERANCE,
        DEFAULT_SETTLE_TIMEOUT,
    )
    .map_err(|e| physics(e.to_string()))?;
    if !ok {
        return Err(physics(format!(
            "structure did not settle within {DEFAULT_SETTLE_TIMEOUT} s"
        )));
    }
    let probe = probe_compliance(&model, &settled, point, &force, &cfg)
        .map_err(|e| physics(e.to_string()))?;
    let d = probe.displacement;
    let _ = writeln!(out, "force_N: {} {} {}", force.x, force.y, force.z);
    let _ = writeln!(out, "displacement_m: {:.9} {:.9} {:.9}", d.x, d.y, d.z);
    let _ = writeln!(out, "magnitude_mm: {:.6}", d.norm() * 1e3);
    let _ = writeln!(
        out,
        "restoration_error_mm: {:.6}",
        probe.restoration_error * 1e3
    );
    Ok(())
}

fn cmd_emit(args: &EmitArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut p = ElbowParams::default();
    let overrides = [
        (args.humerus_length, &mut p.humerus_length),
        (args.olecranon_length, &mut p.olecranon_length),
        (args.forearm_length, &mut p.forearm_length),
        (args.rod_radius, &mut p.rod_radius),
        (args.active_k, &mut p.active_stiffness),
        (args.passive_k, &mut p.passive_stiffness),
        (args.damping, &mut p.damping),
        (args.pretension, &mut p.pretension_offset),
        (args.stroke, &mut p.stroke),
        (args.yaw_stroke, &mut p.yaw_stroke),
        (args.extension_stop, &mut p.extension_stop),
    ];
    for (value, slot) in overrides {
        if let Some(v) = value {
            *slot = v;
        }
    }
    p.mirrored = args.mirrored;
    let s = build_elbow(&p).map_err(|e| match e {
        ElbowError::Param { .. } => usage(e.to_string()),
        other => physics(other.to_string()),
    })?;
    let text = format!("# reference elbow, geometry v1\n{}", tsg::write(&s));
    std::fs::write(&args.out, text).map_err(|e| usage(format!("{}: {e}", args.out.display())))?;
    let _ = writeln!(out, "wrote {}", args.out.display());
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Validate { structure } => cmd_validate(structure, out),
        Command::Run(args) => cmd_run(args, out, err),
        Command::Probe(args) => cmd_probe(args, out),
        Command::EmitElbow(args) => cmd_emit(args, out),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
