//! Run configuration: a strict `key = value` format.
//!
//! ```text
//! # comment
//! command = simulate
//! domain = torus 1
//! kernel = coulomb
//! grid_shape = 256
//!
//! [jko]
//! tau = 1e-3
//! ```
//!
//! A `[section]` header prefixes the keys below it with `section.`; dotted keys
//! may also be written directly. Unknown and repeated keys are errors. Command
//! line overrides are applied after the file with the same key names.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::kernels::KernelFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Jko,
    Probe,
    Diagnose,
    Green,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Lagrangian,
    Eulerian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Exact,
    Entropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    Scan,
    Exponent,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    Include,
    Exclude,
}

/// Initial or target profile.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Uniform,
    /// `1 + amplitude · cos(2π · frequency · x_1)`.
    Cosine {
        amplitude: f64,
        frequency: u32,
    },
    /// Isotropic, centred at `(mean, 0, …, 0)`.
    Gaussian {
        mean: f64,
        std: f64,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JkoConfig {
    pub tau: f64,
    pub steps: usize,
    pub solver: Solver,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub mode: ProbeMode,
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
    pub pairing: Pairing,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub domain: Domain,
    pub kernel: KernelFamily,
    pub scheme: Scheme,
    pub n_particles: usize,
    pub grid_shape: Vec<usize>,
    /// `None`: chosen from the initial velocity gradient.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub record_every: usize,
    pub gamma: f64,
    pub seed: u64,
    pub init: Profile,
    pub target: Profile,
    pub output_dir: PathBuf,
    pub jko: JkoConfig,
    pub probe: ProbeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::Simulate,
            domain: Domain::Torus(1),
            kernel: KernelFamily::Coulomb,
            scheme: Scheme::Lagrangian,
            n_particles: 256,
            grid_shape: vec![256],
            dt: None,
            t_end: 1.0,
            record_every: 10,
            gamma: 0.5,
            seed: 0,
            init: Profile::Cosine { amplitude: 0.5, frequency: 1 },
            target: Profile::Cosine { amplitude: 0.5, frequency: 2 },
            output_dir: PathBuf::from("out"),
            jko: JkoConfig { tau: 1e-3, steps: 10, solver: Solver::Exact, epsilon: 1e-2 },
            probe: ProbeConfig {
                mode: ProbeMode::Scan,
                t_min: 1e-4,
                t_max: 1e-2,
                t_points: 9,
                pairing: Pairing::Include,
                tol: 1e-6,
            },
        }
    }
}

/// Every accepted key with its default, for `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("command", "simulate | jko | probe | diagnose | green  [simulate]"),
    ("domain", "euclidean <d> | torus <d>  [torus 1]"),
    ("kernel", "coulomb | energy_distance | log | riesz <s>  [coulomb]"),
    ("scheme", "lagrangian | eulerian  [lagrangian]"),
    ("n_particles", "atoms per Euclidean cloud  [256]"),
    ("grid_shape", "torus nodes per axis, e.g. `64 64`; alias `grid`  [256]"),
    ("dt", "time step, or `auto` for 0.25 / sup|dv|  [auto]"),
    ("t_end", "final time  [1]"),
    ("record_every", "steps between records  [10]"),
    ("gamma", "Hölder exponent of the monitor  [0.5]"),
    ("seed", "seed of the single random generator  [0]"),
    ("init", "uniform | cosine <a> <k> | gaussian <m> <s> | file=<path>  [cosine 0.5 1]"),
    ("target", "same forms as init  [cosine 0.5 2]"),
    ("output_dir", "directory for results  [out]"),
    ("jko.tau", "proximal step  [1e-3]"),
    ("jko.steps", "number of JKO steps  [10]"),
    ("jko.solver", "exact | entropic  [exact]"),
    ("jko.epsilon", "entropic regularization  [1e-2]"),
    ("probe.mode", "scan | exponent | critical  [scan]"),
    ("probe.t_min", "smallest heat time  [1e-4]"),
    ("probe.t_max", "largest heat time  [1e-2]"),
    ("probe.t_points", "log-spaced heat times  [9]"),
    ("probe.pairing", "include | exclude self-interaction of atoms  [include]"),
    ("probe.tol", "criticality residual tolerance  [1e-6]"),
];

fn canonical(key: &str) -> Option<&'static str> {
    let key = if key == "grid" { "grid_shape" } else { key };
    KEYS.iter().map(|(k, _)| *k).find(|k| *k == key)
}

fn bad(field: &str, message: impl Into<String>) -> Error {
    Error::Validation { field: field.to_string(), message: message.into() }
}

fn keyword<T: Copy>(field: &str, v: &str, table: &[(&str, T)]) -> Result<T> {
    table.iter().find(|(name, _)| *name == v).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
        bad(field, format!("expected {}, got `{v}`", names.join(" | ")))
    })
}

fn number<T: FromStr>(field: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(field, format!("not a number: `{v}`")))
}

fn positive(field: &str, v: &str) -> Result<f64> {
    let x: f64 = number(field, v)?;
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(bad(field, format!("must be positive and finite, got `{v}`")))
    }
}

fn count(field: &str, v: &str) -> Result<usize> {
    let n: usize = number(field, v)?;
    if n == 0 {
        return Err(bad(field, "must be at least 1"));
    }
    Ok(n)
}

const COMMANDS: &[(&str, Command)] = &[
    ("simulate", Command::Simulate),
    ("jko", Command::Jko),
    ("probe", Command::Probe),
    ("diagnose", Command::Diagnose),
    ("green", Command::Green),
];
const SCHEMES: &[(&str, Scheme)] = &[("lagrangian", Scheme::Lagrangian), ("eulerian", Scheme::Eulerian)];
const SOLVERS: &[(&str, Solver)] = &[("exact", Solver::Exact), ("entropic", Solver::Entropic)];
const MODES: &[(&str, ProbeMode)] =
    &[("scan", ProbeMode::Scan), ("exponent", ProbeMode::Exponent), ("critical", ProbeMode::Critical)];
const PAIRINGS: &[(&str, Pairing)] = &[("include", Pairing::Include), ("exclude", Pairing::Exclude)];

fn name_of<T: PartialEq + Copy>(table: &[(&'static str, T)], t: T) -> &'static str {
    table.iter().find(|(_, x)| *x == t).map(|(n, _)| *n).unwrap()
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        keyword("command", s, COMMANDS)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(name_of(COMMANDS, *self))
    }
}

fn parse_profile(field: &str, v: &str) -> Result<Profile> {
    if let Some(path) = v.strip_prefix("file=") {
        if path.trim().is_empty() {
            return Err(bad(field, "empty file path"));
        }
        return Ok(Profile::File(PathBuf::from(path.trim())));
    }
    let parts: Vec<&str> = v.split_whitespace().collect();
    match parts.as_slice() {
        ["uniform"] => Ok(Profile::Uniform),
        ["cosine"] => Ok(Profile::Cosine { amplitude: 0.5, frequency: 1 }),
        ["cosine", a, k] => {
            let amplitude: f64 = number(field, a)?;
            if !(amplitude.abs() < 1.0) {
                return Err(bad(field, "cosine amplitude must lie in (-1, 1) to keep the density positive"));
            }
            Ok(Profile::Cosine { amplitude, frequency: count(field, k)? as u32 })
        }
        ["gaussian"] => Ok(Profile::Gaussian { mean: 0.0, std: 1.0 }),
        ["gaussian", m, s] => {
            let mean: f64 = number(field, m)?;
            if !mean.is_finite() {
                return Err(bad(field, "mean must be finite"));
            }
            Ok(Profile::Gaussian { mean, std: positive(field, s)? })
        }
        _ => Err(bad(field, format!("expected uniform | cosine <a> <k> | gaussian <m> <s> | file=<path>, got `{v}`"))),
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Uniform => write!(f, "uniform"),
            Profile::Cosine { amplitude, frequency } => write!(f, "cosine {amplitude} {frequency}"),
            Profile::Gaussian { mean, std } => write!(f, "gaussian {mean} {std}"),
            Profile::File(p) => write!(f, "file={}", p.display()),
        }
    }
}

impl RunConfig {
    /// Set one canonical key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "command" => self.command = v.parse()?,
            "domain" => self.domain = v.parse()?,
            "kernel" => self.kernel = v.parse()?,
            "scheme" => self.scheme = keyword(key, v, SCHEMES)?,
            "n_particles" => self.n_particles = count(key, v)?,
            "grid_shape" => {
                let shape = v.split_whitespace().map(|p| count(key, p)).collect::<Result<Vec<usize>>>()?;
                if shape.is_empty() {
                    return Err(bad(key, "empty shape"));
                }
                self.grid_shape = shape;
            }
            "dt" => self.dt = if v == "auto" { None } else { Some(positive(key, v)?) },
            "t_end" => self.t_end = positive(key, v)?,
            "record_every" => self.record_every = count(key, v)?,
            "gamma" => {
                let g = positive(key, v)?;
                if g >= 1.0 {
                    return Err(bad(key, "must lie in (0, 1)"));
                }
                self.gamma = g;
            }
            "seed" => self.seed = number(key, v)?,
            "init" => self.init = parse_profile(key, v)?,
            "target" => self.target = parse_profile(key, v)?,
            "output_dir" => {
                if v.is_empty() {
                    return Err(bad(key, "empty path"));
                }
                self.output_dir = PathBuf::from(v);
            }
            "jko.tau" => self.jko.tau = positive(key, v)?,
            "jko.steps" => self.jko.steps = count(key, v)?,
            "jko.solver" => self.jko.solver = keyword(key, v, SOLVERS)?,
            "jko.epsilon" => self.jko.epsilon = positive(key, v)?,
            "probe.mode" => self.probe.mode = keyword(key, v, MODES)?,
            "probe.t_min" => self.probe.t_min = positive(key, v)?,
            "probe.t_max" => self.probe.t_max = positive(key, v)?,
            "probe.t_points" => self.probe.t_points = count(key, v)?,
            "probe.pairing" => self.probe.pairing = keyword(key, v, PAIRINGS)?,
            "probe.tol" => self.probe.tol = positive(key, v)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    /// Cross-field checks after all keys are set.
    pub fn validate(&self) -> Result<()> {
        let d = self.domain.dim();
        if self.domain.is_torus() && self.grid_shape.len() != d {
            return Err(bad("grid_shape", format!("{} axes given for a {d}-dimensional torus", self.grid_shape.len())));
        }
        if self.probe.t_min >= self.probe.t_max {
            return Err(bad("probe.t_min", "must be smaller than probe.t_max"));
        }
        if self.probe.t_points < 2 {
            return Err(bad("probe.t_points", "need at least two heat times for a fit"));
        }
        if self.scheme == Scheme::Eulerian && !self.domain.is_torus() {
            return Err(bad("scheme", "the eulerian scheme runs on the torus only"));
        }
        Ok(())
    }

    /// Canonical text form; [`parse_config`] inverts it exactly.
    pub fn serialize(&self) -> String {
        let shape: Vec<String> = self.grid_shape.iter().map(|n| n.to_string()).collect();
        let dt = self.dt.map_or_else(|| "auto".to_string(), |d| d.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("command", self.command.to_string());
        kv("domain", self.domain.to_string());
        kv("kernel", self.kernel.to_string());
        kv("scheme", name_of(SCHEMES, self.scheme).into());
        kv("n_particles", self.n_particles.to_string());
        kv("grid_shape", shape.join(" "));
        kv("dt", dt);
        kv("t_end", self.t_end.to_string());
        kv("record_every", self.record_every.to_string());
        kv("gamma", self.gamma.to_string());
        kv("seed", self.seed.to_string());
        kv("init", self.init.to_string());
        kv("target", self.target.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("jko.tau", self.jko.tau.to_string());
        kv("jko.steps", self.jko.steps.to_string());
        kv("jko.solver", name_of(SOLVERS, self.jko.solver).into());
        kv("jko.epsilon", self.jko.epsilon.to_string());
        kv("probe.mode", name_of(MODES, self.probe.mode).into());
        kv("probe.t_min", self.probe.t_min.to_string());
        kv("probe.t_max", self.probe.t_max.to_string());
        kv("probe.t_points", self.probe.t_points.to_string());
        kv("probe.pairing", name_of(PAIRINGS, self.probe.pairing).into());
        kv("probe.tol", self.probe.tol.to_string());
        s
    }

    /// Log-spaced heat times of the probe section.
    pub fn probe_times(&self) -> Vec<f64> {
        crate::jko::log_grid(self.probe.t_min, self.probe.t_max, self.probe.t_points)
    }
}

/// One `key = value` entry with its source line (0 for overrides).
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

fn parse_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, column, message: message.into() }
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.split('.').all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

/// Split a document into entries without interpreting keys.
pub fn tokenize(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        // A comment starts at `#` at line start or after whitespace.
        let mut end = raw.len();
        let bytes = raw.as_bytes();
        for (j, &b) in bytes.iter().enumerate() {
            if b == b'#' && (j == 0 || bytes[j - 1].is_ascii_whitespace()) {
                end = j;
                break;
            }
        }
        let body = &raw[..end];
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = body.len() - body.trim_start().len();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_error(line, indent + trimmed.len(), "unterminated section header"))?
                .trim();
            if !valid_key(name) || name.contains('.') {
                return Err(parse_error(line, indent + 2, format!("invalid section name `{name}`")));
            }
            section = name.to_string();
            continue;
        }
        let eq = body.find('=').ok_or_else(|| parse_error(line, indent + 1, "expected `key = value`"))?;
        let key = body[..eq].trim();
        if !valid_key(key) {
            return Err(parse_error(line, indent + 1, format!("invalid key `{key}`")));
        }
        let value = body[eq + 1..].trim();
        if value.is_empty() {
            return Err(parse_error(line, eq + 2, format!("missing value for `{key}`")));
        }
        let key = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        out.push(Entry { key, value: value.to_string(), line });
    }
    Ok(out)
}

fn apply(cfg: &mut RunConfig, e: &Entry) -> Result<()> {
    let at = if e.line > 0 { format!("line {}", e.line) } else { "command line".to_string() };
    let key = canonical(&e.key).ok_or_else(|| bad(&e.key, format!("unknown key ({at})")))?;
    cfg.set(key, &e.value).map_err(|err| match err {
        Error::Validation { field, message } => Error::Validation { field, message: format!("{message} ({at})") },
        other => other,
    })
}

/// Parse a document with no overrides.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_with_overrides(text, &[])
}

/// Parse a document, then apply `(key, value)` overrides in order.
pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let entries = tokenize(text)?;
    let mut cfg = RunConfig::default();
    let mut seen: Vec<(&'static str, usize)> = Vec::new();
    for e in &entries {
        if let Some(k) = canonical(&e.key) {
            if let Some((_, first)) = seen.iter().find(|(s, _)| *s == k) {
                return Err(parse_error(e.line, 1, format!("`{k}` already set on line {first}")));
            }
            seen.push((k, e.line));
        }
        apply(&mut cfg, e)?;
    }
    for (k, v) in overrides {
        apply(&mut cfg, &Entry { key: k.clone(), value: v.clone(), line: 0 })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_document_fills_defaults() {
        let c = parse_config("command=simulate\ndomain=torus 1\nkernel=coulomb\ngrid=256\n").unwrap();
        assert_eq!(c.grid_shape, vec![256]);
        assert_eq!(c.dt, None);
        assert_eq!(c.record_every, 10);
        assert_eq!(c.jko.solver, Solver::Exact);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("command = simulate\nkernal = coulomb\n").unwrap_err();
        match err {
            Error::Validation { field, message } => {
                assert_eq!(field, "kernal");
                assert!(message.contains("line 2"), "{message}");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn override_beats_file() {
        let o = vec![("dt".to_string(), "1e-3".to_string())];
        let c = parse_with_overrides("dt = 0.1\n", &o).unwrap();
        assert_eq!(c.dt, Some(1e-3));
    }

    #[test]
    fn sections_prefix_keys() {
        let c = parse_config("[jko]\ntau = 0.01  # inline\nsolver = entropic\n[probe]\nmode = exponent\n").unwrap();
        assert_eq!(c.jko.tau, 0.01);
        assert_eq!(c.jko.solver, Solver::Entropic);
        assert_eq!(c.probe.mode, ProbeMode::Exponent);
    }

    #[test]
    fn syntax_errors_carry_position() {
        assert_eq!(
            parse_config("seed = 1\n  dt 0.1\n").unwrap_err(),
            Error::Parse { line: 2, column: 3, message: "expected `key = value`".into() }
        );
        assert!(matches!(parse_config("[jko\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_config("seed = 1\nseed = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("t_end =\n"), Err(Error::Parse { line: 1, column: 8, .. })));
    }

    #[test]
    fn values_are_validated() {
        let field = |t: &str| match parse_config(t).unwrap_err() {
            Error::Validation { field, .. } => field,
            e => panic!("{e:?}"),
        };
        assert_eq!(field("dt = -1\n"), "dt");
        assert_eq!(field("kernel = riesz\n"), "kernel");
        assert_eq!(field("domain = torus 2\n"), "grid_shape");
        assert_eq!(field("init = cosine 1.5 1\n"), "init");
        assert_eq!(field("[probe]\nt_min = 1\nt_max = 0.1\n"), "probe.t_min");
    }

    #[test]
    fn file_profiles_keep_the_path() {
        let c = parse_config("init = file=data/cloud 1.csv\n").unwrap();
        assert_eq!(c.init, Profile::File(PathBuf::from("data/cloud 1.csv")));
    }

    fn finite() -> impl Strategy<Value = f64> {
        (1e-8f64..1e3).prop_map(|x| x)
    }

    fn profile(torus: bool) -> BoxedStrategy<Profile> {
        let g = (-5.0f64..5.0, finite()).prop_map(|(mean, std)| Profile::Gaussian { mean, std });
        let f = "[a-z]{1,8}(/[a-z0-9_]{1,8}){0,2}\\.(csv|bin)".prop_map(|p| Profile::File(PathBuf::from(p)));
        if torus {
            prop_oneof![
                Just(Profile::Uniform),
                (-0.99f64..0.99, 1u32..8).prop_map(|(amplitude, frequency)| Profile::Cosine { amplitude, frequency }),
                g,
                f,
            ]
            .boxed()
        } else {
            prop_oneof![g, f].boxed()
        }
    }

    prop_compose! {
        fn config()(
            torus in any::<bool>(),
            d in 1usize..4,
            shape_seed in proptest::collection::vec(2usize..512, 3),
            command in 0usize..5,
            kernel in prop_oneof![
                Just(KernelFamily::Coulomb),
                Just(KernelFamily::EnergyDistance),
                Just(KernelFamily::Log),
                (-1.0f64..2.9).prop_map(KernelFamily::Riesz),
            ],
            eulerian in any::<bool>(),
            n_particles in 1usize..100_000,
            dt in proptest::option::of(finite()),
            t_end in finite(),
            record_every in 1usize..1000,
            gamma in 0.01f64..0.99,
            seed in any::<u64>(),
            profiles in (profile(true), profile(true), profile(false), profile(false)),
            out in "[a-z]{1,10}(/[a-z_]{1,6})?",
            tau in finite(),
            steps in 1usize..500,
            entropic in any::<bool>(),
            epsilon in finite(),
            mode in 0usize..3,
            t_min in 1e-9f64..1e-3,
            t_span in 1.5f64..1e3,
            t_points in 2usize..64,
            exclude in any::<bool>(),
            tol in finite(),
        ) -> RunConfig {
            let (it, tt, ie, te) = profiles;
            RunConfig {
                command: COMMANDS[command].1,
                domain: if torus { Domain::Torus(d) } else { Domain::Euclidean(d) },
                kernel,
                scheme: if eulerian && torus { Scheme::Eulerian } else { Scheme::Lagrangian },
                n_particles,
                grid_shape: if torus { shape_seed[..d].to_vec() } else { shape_seed[..1].to_vec() },
                dt,
                t_end,
                record_every,
                gamma,
                seed,
                init: if torus { it } else { ie },
                target: if torus { tt } else { te },
                output_dir: PathBuf::from(out),
                jko: JkoConfig { tau, steps, solver: if entropic { Solver::Entropic } else { Solver::Exact }, epsilon },
                probe: ProbeConfig {
                    mode: MODES[mode].1,
                    t_min,
                    t_max: t_min * t_span,
                    t_points,
                    pairing: if exclude { Pairing::Exclude } else { Pairing::Include },
                    tol,
                },
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn serialize_round_trips(c in config()) {
            prop_assert!(c.validate().is_ok());
            let back = parse_config(&c.serialize()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
