//! INI-style run configuration.
//!
//! ```text
//! # comment
//! [system]
//! name = chaplygin
//! inertia = 2/3, 2/3, 2/3
//!
//! [integrator]
//! name = chaplygin_gni
//!
//! [run]
//! h = 0.1
//! N = 10000
//! ```
//!
//! Numbers may be written as fractions `a/b`. Unknown sections and keys are
//! rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::analysis::checks::Suite;
use crate::gni_flat::Quadrature;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    None,
    Harmonic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemConfig {
    NonholonomicParticle { potential: Potential, affine_rate: f64 },
    Constrained2d { affine_rate: f64 },
    Chaplygin { mass: f64, radius: f64, table_rate: f64, inertia: [f64; 3] },
}

impl SystemConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::NonholonomicParticle { .. } => "nonholonomic_particle",
            Self::Constrained2d { .. } => "constrained_2d",
            Self::Chaplygin { .. } => "chaplygin",
        }
    }

    pub fn is_flat(&self) -> bool {
        !matches!(self, Self::Chaplygin { .. })
    }

    pub fn is_affine(&self) -> bool {
        match self {
            Self::NonholonomicParticle { affine_rate, .. } | Self::Constrained2d { affine_rate } => *affine_rate != 0.0,
            Self::Chaplygin { table_rate, .. } => *table_rate != 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegratorKind {
    EulerA,
    EulerB,
    Rattle,
    RattleAffine,
    EulerAB,
    GniGeneric,
    ReducedRattle,
    ChaplyginGni,
}

impl IntegratorKind {
    pub const ALL: [IntegratorKind; 8] = [
        Self::EulerA,
        Self::EulerB,
        Self::Rattle,
        Self::RattleAffine,
        Self::EulerAB,
        Self::GniGeneric,
        Self::ReducedRattle,
        Self::ChaplyginGni,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::EulerA => "euler_a",
            Self::EulerB => "euler_b",
            Self::Rattle => "rattle",
            Self::RattleAffine => "rattle_affine",
            Self::EulerAB => "euler_ab",
            Self::GniGeneric => "gni_generic",
            Self::ReducedRattle => "reduced_rattle",
            Self::ChaplyginGni => "chaplygin_gni",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_flat(&self) -> bool {
        !matches!(self, Self::ReducedRattle | Self::ChaplyginGni)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetractionKind {
    Cayley,
    Exp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub kind: IntegratorKind,
    /// Discrete Lagrangian of `gni_generic`.
    pub lagrangian: Quadrature,
    /// Retraction of `reduced_rattle`.
    pub retraction: RetractionKind,
    pub newton_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepSpec {
    Single(f64),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Time(f64),
    Steps(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// Same scheme at `min(h) / reference_factor`.
    SameScheme,
    /// RK4 on the continuous equations at `min(h) / reference_factor`.
    Rk4,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitialConfig {
    pub q0: Option<Vec<f64>>,
    pub p0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
    pub w0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub integrator: IntegratorConfig,
    pub step: StepSpec,
    pub horizon: Horizon,
    pub initial: InitialConfig,
    pub reference: ReferenceKind,
    pub reference_factor: f64,
    pub out: Option<String>,
    pub suite: Option<Suite>,
    pub seed: u64,
}

pub const DEFAULT_REFERENCE_FACTOR: f64 = 30.0;

type Section = BTreeMap<String, (usize, String)>;

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let (a, b) = (a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?);
        return Some(a / b);
    }
    s.parse::<f64>().ok()
}

struct Reader {
    sections: BTreeMap<String, Section>,
}

impl Reader {
    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.sections.get_mut(section).and_then(|s| s.remove(key))
    }

    fn number(&mut self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(section, key) {
            None => Ok(None),
            Some((line, v)) => parse_number(&v)
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or(ConfigError::Parse { line, message: format!("`{key}` is not a number: {v}") }),
        }
    }

    fn list(&mut self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.take(section, key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|t| parse_number(t).filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .map(Some)
                .ok_or(ConfigError::Parse { line, message: format!("`{key}` is not a list of numbers: {v}") }),
        }
    }

    fn text(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.take(section, key)
    }

    fn leftover(&self) -> Option<ConfigError> {
        self.sections.iter().find_map(|(sec, keys)| {
            keys.iter().next().map(|(k, (line, _))| ConfigError::Parse {
                line: *line,
                message: format!("unknown key `{k}` in [{sec}]"),
            })
        })
    }
}

const SECTIONS: [&str; 3] = ["system", "integrator", "run"];

fn tokenize(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut sections: BTreeMap<String, Section> = SECTIONS.iter().map(|s| (s.to_string(), Section::new())).collect();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::Parse { line, message: format!("unknown section [{name}]") });
            }
            current = Some(name.to_string());
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(ConfigError::Parse { line, message: format!("expected `key = value`, got `{body}`") });
        };
        let Some(sec) = &current else {
            return Err(ConfigError::Parse { line, message: "key outside of a section".into() });
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() || v.is_empty() {
            return Err(ConfigError::Parse { line, message: "empty key or value".into() });
        }
        let map = sections.get_mut(sec).expect("known section");
        if map.contains_key(&k) {
            return Err(ConfigError::Parse { line, message: format!("duplicate key `{k}`") });
        }
        map.insert(k, (line, v));
    }
    Ok(sections)
}

fn affine_rate(r: &mut Reader) -> Result<f64, ConfigError> {
    Ok(r.number("system", "affine_rate")?.unwrap_or(0.0))
}

fn parse_system(r: &mut Reader) -> Result<SystemConfig, ConfigError> {
    let (line, name) = r.text("system", "name").ok_or_else(|| invalid("system.name", "missing"))?;
    match name.as_str() {
        "nonholonomic_particle" => {
            let potential = match r.text("system", "potential") {
                None => Potential::None,
                Some((_, v)) if v == "none" => Potential::None,
                Some((_, v)) if v == "harmonic" => Potential::Harmonic,
                Some((_, v)) => return Err(invalid("system.potential", format!("expected none or harmonic, got {v}"))),
            };
            Ok(SystemConfig::NonholonomicParticle { potential, affine_rate: affine_rate(r)? })
        }
        "constrained_2d" => Ok(SystemConfig::Constrained2d { affine_rate: affine_rate(r)? }),
        "chaplygin" => {
            let mass = r.number("system", "mass")?.unwrap_or(1.0);
            let radius = r.number("system", "radius")?.unwrap_or(1.0);
            let table_rate = r.number("system", "table_rate")?.unwrap_or(0.0);
            let inertia = match r.list("system", "inertia")? {
                None => [2.0 / 3.0; 3],
                Some(v) if v.len() == 1 => [v[0]; 3],
                Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
                Some(_) => return Err(invalid("system.inertia", "expected one or three values")),
            };
            if !(mass > 0.0) {
                return Err(invalid("system.mass", "must be positive"));
            }
            if !(radius > 0.0) {
                return Err(invalid("system.radius", "must be positive"));
            }
            if inertia.iter().any(|&i| !(i > 0.0)) {
                return Err(invalid("system.inertia", "must be positive"));
            }
            Ok(SystemConfig::Chaplygin { mass, radius, table_rate, inertia })
        }
        other => Err(ConfigError::Parse { line, message: format!("unknown system `{other}`") }),
    }
}

fn parse_integrator(r: &mut Reader) -> Result<IntegratorConfig, ConfigError> {
    let (line, name) = r.text("integrator", "name").ok_or_else(|| invalid("integrator.name", "missing"))?;
    let kind = IntegratorKind::parse(&name)
        .ok_or(ConfigError::Parse { line, message: format!("unknown integrator `{name}`") })?;
    let lagrangian = match r.text("integrator", "lagrangian") {
        None => Quadrature::Verlet,
        Some((line, v)) => {
            if kind != IntegratorKind::GniGeneric {
                return Err(ConfigError::Parse { line, message: "`lagrangian` applies to gni_generic only".into() });
            }
            Quadrature::parse(&v).ok_or_else(|| invalid("integrator.lagrangian", format!("unknown rule {v}")))?
        }
    };
    let retraction = match r.text("integrator", "retraction") {
        None => RetractionKind::Cayley,
        Some((line, v)) => {
            if kind != IntegratorKind::ReducedRattle {
                return Err(ConfigError::Parse { line, message: "`retraction` applies to reduced_rattle only".into() });
            }
            match v.as_str() {
                "cayley" => RetractionKind::Cayley,
                "exp" => RetractionKind::Exp,
                _ => return Err(invalid("integrator.retraction", format!("expected cayley or exp, got {v}"))),
            }
        }
    };
    let newton_tol = r.number("integrator", "newton_tol")?;
    if let Some(t) = newton_tol {
        if !(t > 0.0) {
            return Err(invalid("integrator.newton_tol", "must be positive"));
        }
    }
    Ok(IntegratorConfig { kind, lagrangian, retraction, newton_tol })
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut r = Reader { sections: tokenize(text)? };
    let system = parse_system(&mut r)?;
    let integrator = parse_integrator(&mut r)?;

    let step = match (r.number("run", "h")?, r.list("run", "h_list")?) {
        (Some(_), Some(_)) => return Err(invalid("run.h", "give either h or h_list, not both")),
        (None, None) => return Err(invalid("run.h", "missing h or h_list")),
        (Some(h), None) => {
            if !(h > 0.0) {
                return Err(invalid("run.h", "must be positive"));
            }
            StepSpec::Single(h)
        }
        (None, Some(list)) => {
            if list.len() < 3 {
                return Err(invalid("run.h_list", "needs at least three values"));
            }
            if list.iter().any(|&h| !(h > 0.0)) || list.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(invalid("run.h_list", "must be positive and strictly decreasing"));
            }
            StepSpec::List(list)
        }
    };
    let horizon = match (r.number("run", "T")?, r.take("run", "N")) {
        (Some(_), Some(_)) => return Err(invalid("run.T", "give either T or N, not both")),
        (None, None) => return Err(invalid("run.T", "missing T or N")),
        (Some(t), None) => {
            if !(t > 0.0) {
                return Err(invalid("run.T", "must be positive"));
            }
            Horizon::Time(t)
        }
        (None, Some((line, v))) => Horizon::Steps(
            v.parse::<usize>().map_err(|_| ConfigError::Parse { line, message: format!("`N` is not a count: {v}") })?,
        ),
    };
    let initial = InitialConfig {
        q0: r.list("run", "q0")?,
        p0: r.list("run", "p0")?,
        v0: r.list("run", "v0")?,
        w0: r.list("run", "w0")?,
    };
    let reference = match r.text("run", "reference") {
        None => ReferenceKind::SameScheme,
        Some((_, v)) if v == "self" => ReferenceKind::SameScheme,
        Some((_, v)) if v == "rk4" => ReferenceKind::Rk4,
        Some((_, v)) => return Err(invalid("run.reference", format!("expected self or rk4, got {v}"))),
    };
    let reference_factor = r.number("run", "reference_factor")?.unwrap_or(DEFAULT_REFERENCE_FACTOR);
    if reference_factor < DEFAULT_REFERENCE_FACTOR {
        return Err(invalid("run.reference_factor", "must be at least 30"));
    }
    let out = r.text("run", "out").map(|(_, v)| v);
    let suite = match r.text("run", "suite") {
        None => None,
        Some((_, v)) => Some(Suite::parse(&v).ok_or_else(|| invalid("run.suite", format!("unknown suite {v}")))?),
    };
    let seed = match r.take("run", "seed") {
        None => 0,
        Some((line, v)) => {
            v.parse::<u64>().map_err(|_| ConfigError::Parse { line, message: format!("`seed` is not a count: {v}") })?
        }
    };
    if let Some(e) = r.leftover() {
        return Err(e);
    }

    let cfg = RunConfig { system, integrator, step, horizon, initial, reference, reference_factor, out, suite, seed };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    let kind = cfg.integrator.kind;
    if kind.is_flat() != cfg.system.is_flat() {
        return Err(invalid(
            "integrator.name",
            format!("{} cannot integrate the {} system", kind.name(), cfg.system.name()),
        ));
    }
    if kind == IntegratorKind::RattleAffine && !cfg.system.is_affine() {
        return Err(invalid("integrator.name", "rattle_affine needs a nonzero system.affine_rate"));
    }
    if cfg.reference == ReferenceKind::Rk4 && !cfg.system.is_flat() {
        return Err(invalid("run.reference", "rk4 references exist for flat systems only"));
    }
    let dims = |field: &str, v: &Option<Vec<f64>>, n: usize| -> Result<(), ConfigError> {
        match v {
            Some(v) if v.len() != n => Err(invalid(field, format!("expected {n} components, got {}", v.len()))),
            _ => Ok(()),
        }
    };
    let i = &cfg.initial;
    match cfg.system {
        SystemConfig::NonholonomicParticle { .. } | SystemConfig::Constrained2d { .. } => {
            let n = if matches!(cfg.system, SystemConfig::Constrained2d { .. }) { 2 } else { 3 };
            dims("run.q0", &i.q0, n)?;
            dims("run.p0", &i.p0, n)?;
            if i.v0.is_some() || i.w0.is_some() {
                return Err(invalid("run.v0", "flat systems take q0 and p0"));
            }
        }
        SystemConfig::Chaplygin { .. } => {
            dims("run.q0", &i.q0, 2)?;
            dims("run.v0", &i.v0, 2)?;
            dims("run.w0", &i.w0, 3)?;
            if i.p0.is_some() {
                return Err(invalid("run.p0", "the sphere takes q0, w0 and optionally v0"));
            }
        }
    }
    Ok(())
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Writes a configuration that parses back to `cfg`.
pub fn emit_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[system]\nname = {}", cfg.system.name());
    match &cfg.system {
        SystemConfig::NonholonomicParticle { potential, affine_rate } => {
            let p = match potential {
                Potential::None => "none",
                Potential::Harmonic => "harmonic",
            };
            let _ = writeln!(s, "potential = {p}\naffine_rate = {affine_rate}");
        }
        SystemConfig::Constrained2d { affine_rate } => {
            let _ = writeln!(s, "affine_rate = {affine_rate}");
        }
        SystemConfig::Chaplygin { mass, radius, table_rate, inertia } => {
            let _ = writeln!(
                s,
                "mass = {mass}\nradius = {radius}\ntable_rate = {table_rate}\ninertia = {}",
                list(inertia)
            );
        }
    }
    let _ = writeln!(s, "\n[integrator]\nname = {}", cfg.integrator.kind.name());
    if cfg.integrator.kind == IntegratorKind::GniGeneric {
        let _ = writeln!(s, "lagrangian = {}", cfg.integrator.lagrangian.name());
    }
    if cfg.integrator.kind == IntegratorKind::ReducedRattle {
        let r = match cfg.integrator.retraction {
            RetractionKind::Cayley => "cayley",
            RetractionKind::Exp => "exp",
        };
        let _ = writeln!(s, "retraction = {r}");
    }
    if let Some(t) = cfg.integrator.newton_tol {
        let _ = writeln!(s, "newton_tol = {t}");
    }
    let _ = writeln!(s, "\n[run]");
    match &cfg.step {
        StepSpec::Single(h) => {
            let _ = writeln!(s, "h = {h}");
        }
        StepSpec::List(l) => {
            let _ = writeln!(s, "h_list = {}", list(l));
        }
    }
    match cfg.horizon {
        Horizon::Time(t) => {
            let _ = writeln!(s, "T = {t}");
        }
        Horizon::Steps(n) => {
            let _ = writeln!(s, "N = {n}");
        }
    }
    for (k, v) in [("q0", &cfg.initial.q0), ("p0", &cfg.initial.p0), ("v0", &cfg.initial.v0), ("w0", &cfg.initial.w0)] {
        if let Some(v) = v {
            let _ = writeln!(s, "{k} = {}", list(v));
        }
    }
    let r = match cfg.reference {
        ReferenceKind::SameScheme => "self",
        ReferenceKind::Rk4 => "rk4",
    };
    let _ = writeln!(s, "reference = {r}\nreference_factor = {}", cfg.reference_factor);
    if let Some(o) = &cfg.out {
        let _ = writeln!(s, "out = {o}");
    }
    if let Some(suite) = cfg.suite {
        let name = match suite {
            Suite::Lie => "lie",
            Suite::Projectors => "projectors",
            Suite::Steppers => "steppers",
            Suite::Adjoint => "adjoint",
            Suite::All => "all",
        };
        let _ = writeln!(s, "suite = {name}");
    }
    let _ = writeln!(s, "seed = {}", cfg.seed);
    s
}
