//! The `.tsg` plaintext structure format.
//!
//! ```text
//! rod   <name> <ax> <ay> <az> <bx> <by> <bz> <mass> <radius>
//! cable <name> <rod>.<A|B> <rod>.<A|B> <k> <b> <rest> active|passive [<min> <max> <vmax> <amax>]
//! fix   <rod>.<A|B>
//! pair  <label> <flexor> <extensor> [<ratio>]
//! ```
//!
//! `#` starts a comment. Item-local problems (bad numbers, non-positive
//! stiffness, …) are parse errors; cross-references (unknown rods, pair
//! wiring) are left for [`Structure::validate`].

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::fnv1a64;
use crate::structure::{
    is_valid_name, Anchor, AntagonisticPair, CableRole, CableSpec, MotorLimits, RodSpec, Structure,
};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum TsgError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn err(line: usize, message: impl Into<String>) -> TsgError {
    TsgError::Parse {
        line,
        message: message.into(),
    }
}

fn number(line: usize, what: &str, tok: &str) -> Result<f64, TsgError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| err(line, format!("malformed number `{tok}` for {what}")))?;
    if v.is_nan() {
        return Err(err(line, format!("NaN is not allowed for {what}")));
    }
    Ok(v)
}

fn name(line: usize, tok: &str) -> Result<String, TsgError> {
    if is_valid_name(tok) {
        Ok(tok.to_string())
    } else {
        Err(err(line, format!("invalid name `{tok}`")))
    }
}

fn anchor(line: usize, tok: &str) -> Result<Anchor, TsgError> {
    tok.parse().map_err(|e| err(line, format!("{e}")))
}

pub fn parse(text: &str) -> Result<Structure, TsgError> {
    let mut rods = Vec::new();
    let mut cables = Vec::new();
    let mut fixed = Vec::new();
    let mut pairs = Vec::new();
    let mut rod_names = BTreeSet::new();
    let mut cable_names = BTreeSet::new();
    let mut pair_labels = BTreeSet::new();
    let mut fixed_set = BTreeSet::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = content.split_whitespace().collect();
        let Some((&kind, args)) = toks.split_first() else {
            continue;
        };
        let arity = |lo: usize, hi: usize| -> Result<(), TsgError> {
            if args.len() < lo || args.len() > hi {
                let expected = if lo == hi {
                    format!("{lo}")
                } else {
                    format!("{lo}..{hi}")
                };
                Err(err(
                    line,
                    format!("`{kind}` expects {expected} fields, found {}", args.len()),
                ))
            } else {
                Ok(())
            }
        };
        match kind {
            "rod" => {
                arity(9, 9)?;
                let n = name(line, args[0])?;
                let f: Vec<f64> = args[1..]
                    .iter()
                    .zip(["ax", "ay", "az", "bx", "by", "bz", "mass", "radius"])
                    .map(|(t, w)| number(line, w, t))
                    .collect::<Result<_, _>>()?;
                let rod = RodSpec::new(
                    n,
                    Vec3::new(f[0], f[1], f[2]),
                    Vec3::new(f[3], f[4], f[5]),
                    f[6],
                    f[7],
                );
                rod.check().map_err(|e| err(line, e.to_string()))?;
                if !rod_names.insert(rod.name.clone()) {
                    return Err(err(line, format!("duplicate rod `{}`", rod.name)));
                }
                rods.push(rod);
            }
            "cable" => {
                if args.len() != 7 && args.len() != 11 {
                    return Err(err(
                        line,
                        format!("`cable` expects 7 or 11 fields, found {}", args.len()),
                    ));
                }
                let n = name(line, args[0])?;
                let a = anchor(line, args[1])?;
                let b = anchor(line, args[2])?;
                let k = number(line, "stiffness", args[3])?;
                let damping = number(line, "damping", args[4])?;
                let rest = number(line, "rest length", args[5])?;
                let role = match (args[6], args.len()) {
                    ("passive", 7) => CableRole::Passive,
                    ("passive", _) => return Err(err(line, "passive cable takes no motor limits")),
                    ("active", 11) => CableRole::Active(MotorLimits {
                        min_length: number(line, "min length", args[7])?,
                        max_length: number(line, "max length", args[8])?,
                        max_velocity: number(line, "max velocity", args[9])?,
                        max_acceleration: number(line, "max acceleration", args[10])?,
                    }),
                    ("active", _) => {
                        return Err(err(line, "active cable needs <min> <max> <vmax> <amax>"))
                    }
                    (other, _) => {
                        return Err(err(line, format!("unknown cable role `{other}`")));
                    }
                };
                let cable = CableSpec {
                    name: n,
                    anchor_a: a,
                    anchor_b: b,
                    stiffness: k,
                    damping,
                    rest_length: rest,
                    role,
                };
                cable.check().map_err(|e| err(line, e.to_string()))?;
                if !cable_names.insert(cable.name.clone()) {
                    return Err(err(line, format!("duplicate cable `{}`", cable.name)));
                }
                cables.push(cable);
            }
            "fix" => {
                arity(1, 1)?;
                let a = anchor(line, args[0])?;
                if !fixed_set.insert(a.clone()) {
                    return Err(err(line, format!("duplicate fix `{a}`")));
                }
                fixed.push(a);
            }
            "pair" => {
                arity(3, 4)?;
                let mut pair = AntagonisticPair::new(
                    name(line, args[0])?,
                    name(line, args[1])?,
                    name(line, args[2])?,
                );
                if let Some(tok) = args.get(3) {
                    pair.ratio = number(line, "ratio", tok)?;
                }
                if !pair_labels.insert(pair.label.clone()) {
                    return Err(err(line, format!("duplicate pair `{}`", pair.label)));
                }
                pairs.push(pair);
            }
            other => return Err(err(line, format!("unknown directive `{other}`"))),
        }
    }

    let mut s = Structure::new();
    s.push_unchecked(rods, cables, fixed, pairs);
    Ok(s)
}

pub fn read(path: &Path) -> Result<Structure, TsgError> {
    let text = std::fs::read_to_string(path).map_err(|source| TsgError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text)
}

/// Canonical text form. Floats use the shortest round-trip representation,
/// so `parse(write(s)) == s`.
pub fn write(s: &Structure) -> String {
    let mut out = String::new();
    for r in s.rods() {
        let (a, b) = (r.endpoint_a, r.endpoint_b);
        let _ = writeln!(
            out,
            "rod {} {} {} {} {} {} {} {} {}",
            r.name, a.x, a.y, a.z, b.x, b.y, b.z, r.mass, r.radius
        );
    }
    for c in s.cables() {
        let _ = write!(
            out,
            "cable {} {} {} {} {} {}",
            c.name, c.anchor_a, c.anchor_b, c.stiffness, c.damping, c.rest_length
        );
        match &c.role {
            CableRole::Passive => out.push_str(" passive\n"),
            CableRole::Active(l) => {
                let _ = writeln!(
                    out,
                    " active {} {} {} {}",
                    l.min_length, l.max_length, l.max_velocity, l.max_acceleration
                );
            }
        }
    }
    for a in s.fixed_anchors() {
        let _ = writeln!(out, "fix {a}");
    }
    for p in s.pairs() {
        if p.ratio == 1.0 {
            let _ = writeln!(out, "pair {} {} {}", p.label, p.flexor, p.extensor);
        } else {
            let _ = writeln!(
                out,
                "pair {} {} {} {}",
                p.label, p.flexor, p.extensor, p.ratio
            );
        }
    }
    out
}

/// Stable content hash of a structure (FNV-1a over the canonical text).
pub fn structure_hash(s: &Structure) -> u64 {
    fnv1a64(write(s).as_bytes())
}
