//! Scenario configuration (JSON), tensor cache resolution, run orchestration
//! and CSV output.

use std::fmt;
use std::fs;
use std::hash::Hasher;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision_tensor::{
    build, load_matching, save, Ansatz, BuildOptions, CacheError, CollisionTensor, TensorError, TensorMeta,
};
use crate::diagnostics::{
    equilibrium_rate_fit, mean_collision_frequency, DiagError, Diagnostics, DiagnosticsRecord, MomentSpec, RateFit,
};
use crate::haar_basis::{BasisError, FilteredBasis, MAX_LEVEL};
use crate::kernel::{KernelError, KernelSpec};
use crate::spectral_solver::{
    init_from_ic, run, Bump, InitialCondition, Method, SolverConfig, SolverError, SpectralState, TimeStep,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalized {
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// `"normalized"` or an explicit amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum B0 {
    Named(Normalized),
    Value(f64),
}

/// `"auto"` or a fixed step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dt {
    Named(Auto),
    Fixed(f64),
}

/// Absolute end time, or a multiple of the initial collision time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TEnd {
    Time(f64),
    Collisions { collision_times: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub gamma: f64,
    pub theta_b: f64,
    pub b0: B0,
    pub lambda: Option<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            theta_b: std::f64::consts::FRAC_PI_6,
            b0: B0::Named(Normalized::Normalized),
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub samples_per_pair: u64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples_per_pair: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub method: Method,
    pub dt: Dt,
    pub t_end: TEnd,
    pub output_stride: usize,
    pub positivity_tol: f64,
    pub halve_on_negative: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            dt: Dt::Named(Auto::Auto),
            t_end: TEnd::Collisions { collision_times: 5.0 },
            output_stride: 1,
            positivity_tol: 1e-10,
            halve_on_negative: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub tensor_cache: Option<PathBuf>,
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlagsConfig {
    /// Drop every `<v>^±2` weight.
    pub unweighted_variant: bool,
    /// Trial functions without the Jacobian weight.
    pub plain_trial: bool,
}

/// Parameters of the basis verifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub samples: usize,
    pub seed: u64,
    pub s: Vec<f64>,
    pub n: Vec<u32>,
    pub a: f64,
    pub q: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0,
            s: vec![-4.0, 4.0, 6.0],
            n: vec![1],
            a: 0.05,
            q: 0.25,
        }
    }
}

/// Hot dilute halo around a cold dense core; relaxes with decreasing moments.
pub fn default_initial() -> Vec<Bump> {
    vec![
        Bump {
            rho: 0.1,
            u: [0.0; 3],
            temperature: 2.0,
        },
        Bump {
            rho: 0.9,
            u: [0.0; 3],
            temperature: 0.01,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub level: u32,
    pub delta: f64,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default = "default_initial")]
    pub initial: Vec<Bump>,
    #[serde(default)]
    pub moments: MomentSpec,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub flags: FlagsConfig,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid config:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

impl ConfigError {
    /// Field paths named by the error.
    pub fn paths(&self) -> Vec<&str> {
        match self {
            Self::Syntax { .. } => vec![],
            Self::Schema { path, .. } => vec![path.as_str()],
            Self::Invalid(v) => v.iter().map(|x| x.path.as_str()).collect(),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Schema {
            path: if path == "." { "<root>".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical pretty JSON with every default spelled out.
pub fn emit_config(cfg: &ScenarioConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serialises");
    s.push('\n');
    s
}

fn finite_in(x: f64, lo: f64, hi: f64) -> bool {
    x.is_finite() && x > lo && x < hi
}

impl ScenarioConfig {
    pub fn minimal(level: u32, delta: f64) -> Self {
        Self {
            level,
            delta,
            kernel: KernelConfig::default(),
            mc: McConfig::default(),
            solver: SolverSection::default(),
            initial: default_initial(),
            moments: MomentSpec::default(),
            paths: PathsConfig::default(),
            flags: FlagsConfig::default(),
            verify: VerifySection::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut bad = Vec::new();
        let mut push = |path: String, message: String| bad.push(Violation { path, message });
        if self.level == 0 || self.level > MAX_LEVEL {
            push(
                "level".into(),
                format!("must be in 1..={MAX_LEVEL}, got {}", self.level),
            );
        } else if !finite_in(self.delta, 0.0, 1.0) {
            push("delta".into(), format!("must lie in (0, 1), got {}", self.delta));
        } else if let Err(e) = FilteredBasis::new(self.level, self.delta) {
            let path = if matches!(e, BasisError::Level(_)) {
                "level"
            } else {
                "delta"
            };
            push(path.into(), e.to_string());
        }
        if let Err(e) = self.kernel_spec() {
            let field = match e {
                KernelError::Gamma(_) => "gamma",
                KernelError::Theta(_) => "theta_b",
                KernelError::Amplitude(_) => "b0",
                KernelError::Lambda(_) => "lambda",
            };
            push(format!("kernel.{field}"), e.to_string());
        }
        if self.mc.samples_per_pair == 0 {
            push("mc.samples_per_pair".into(), "must be at least 1".into());
        }
        let s = &self.solver;
        if let Dt::Fixed(dt) = s.dt {
            if !(dt.is_finite() && dt > 0.0) {
                push("solver.dt".into(), format!("must be positive or \"auto\", got {dt}"));
            }
        }
        match s.t_end {
            TEnd::Time(t) if !(t.is_finite() && t >= 0.0) => push(
                "solver.t_end".into(),
                format!("must be finite and nonnegative, got {t}"),
            ),
            TEnd::Collisions { collision_times: c } if !(c.is_finite() && c >= 0.0) => push(
                "solver.t_end.collision_times".into(),
                format!("must be finite and nonnegative, got {c}"),
            ),
            _ => {}
        }
        if s.output_stride == 0 {
            push("solver.output_stride".into(), "must be at least 1".into());
        }
        if !(s.positivity_tol.is_finite() && s.positivity_tol >= 0.0) {
            push(
                "solver.positivity_tol".into(),
                format!("must be finite and nonnegative, got {}", s.positivity_tol),
            );
        }
        if self.initial.is_empty() {
            push("initial".into(), "needs at least one bump".into());
        }
        for (i, b) in self.initial.iter().enumerate() {
            if !(b.rho.is_finite() && b.rho >= 0.0) {
                push(
                    format!("initial[{i}].rho"),
                    format!("must be finite and nonnegative, got {}", b.rho),
                );
            }
            if !(b.temperature.is_finite() && b.temperature > 0.0) {
                push(
                    format!("initial[{i}].temperature"),
                    format!("must be positive, got {}", b.temperature),
                );
            }
            if b.u.iter().any(|x| !x.is_finite()) {
                push(format!("initial[{i}].u"), "must be finite".into());
            }
        }
        for (i, &x) in self.moments.s.iter().enumerate() {
            if !(x.is_finite() && x > 0.0) {
                push(format!("moments.s[{i}]"), format!("must be positive, got {x}"));
            }
        }
        if !(self.moments.exp_a.is_finite() && self.moments.exp_a >= 0.0) {
            push(
                "moments.exp_a".into(),
                format!("must be finite and nonnegative, got {}", self.moments.exp_a),
            );
        }
        if !finite_in(self.moments.exp_s, 0.0, 2.0) {
            push(
                "moments.exp_s".into(),
                format!("must lie in (0, 2), got {}", self.moments.exp_s),
            );
        }
        let v = &self.verify;
        for (i, &x) in v.s.iter().enumerate() {
            if !x.is_finite() {
                push(format!("verify.s[{i}]"), "must be finite".into());
            }
        }
        for (i, &n) in v.n.iter().enumerate() {
            if n == 0 {
                push(format!("verify.n[{i}]"), "must be at least 1".into());
            }
        }
        if !(v.a.is_finite() && v.a >= 0.0) {
            push(
                "verify.a".into(),
                format!("must be finite and nonnegative, got {}", v.a),
            );
        }
        if !finite_in(v.q, 0.0, 1.0) {
            push("verify.q".into(), format!("must lie in (0, 1), got {}", v.q));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(bad))
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, KernelError> {
        let k = &self.kernel;
        match k.b0 {
            B0::Named(_) => KernelSpec::normalized(k.gamma, k.theta_b, k.lambda),
            B0::Value(b0) => KernelSpec::with_b0(k.gamma, k.theta_b, b0, k.lambda),
        }
    }

    pub fn basis(&self) -> Result<FilteredBasis, BasisError> {
        FilteredBasis::new(self.level, self.delta)
    }

    pub fn ansatz(&self) -> Ansatz {
        Ansatz {
            weighted: !self.flags.unweighted_variant,
            jacobian: !self.flags.plain_trial,
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            samples_per_pair: self.mc.samples_per_pair,
            seed: self.mc.seed,
            ansatz: self.ansatz(),
            ..Default::default()
        }
    }

    pub fn initial_condition(&self) -> Result<InitialCondition, SolverError> {
        InitialCondition::new(self.initial.clone())
    }

    /// The tensor metadata a build of this config would carry (dropped mass 0).
    pub fn tensor_request(&self) -> Result<TensorMeta, KernelError> {
        Ok(TensorMeta {
            level: self.level,
            delta: self.delta,
            kernel: self.kernel_spec()?,
            seed: self.mc.seed,
            samples_per_pair: self.mc.samples_per_pair,
            ansatz: self.ansatz(),
            dropped_mass: 0.0,
        })
    }

    /// Solver settings once the collision time is known.
    pub fn solver_config(&self, collision_time: f64) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            dt: match s.dt {
                Dt::Named(_) => TimeStep::Auto,
                Dt::Fixed(dt) => TimeStep::Fixed(dt),
            },
            t_end: match s.t_end {
                TEnd::Time(t) => t,
                TEnd::Collisions { collision_times } => collision_times * collision_time,
            },
            method: s.method,
            positivity_tol: s.positivity_tol,
            output_stride: s.output_stride,
            halve_on_negative: s.halve_on_negative,
        }
    }
}

/// File name for the cache of a build request; stable across runs.
pub fn cache_file_name(meta: &TensorMeta) -> String {
    let mut h = FnvHasher::default();
    let k = &meta.kernel;
    for x in [meta.delta, k.gamma(), k.theta_b(), k.b0(), k.lambda().unwrap_or(-1.0)] {
        h.write_u64(x.to_bits());
    }
    h.write_u64(meta.seed);
    h.write_u64(meta.samples_per_pair);
    h.write_u8(meta.ansatz.weighted as u8);
    h.write_u8(meta.ansatz.jacobian as u8);
    format!(
        "tensor-N{}-S{}-{:016x}.bwt",
        meta.level,
        meta.samples_per_pair,
        h.finish()
    )
}

/// Where the tensor cache lives: `cache_dir` (when given) replaces the
/// directory; the file name comes from the config or [`cache_file_name`].
/// Relative config paths are taken relative to `base`.
pub fn resolve_cache_path(cfg: &ScenarioConfig, base: &Path, cache_dir: Option<&Path>) -> Result<PathBuf, KernelError> {
    let name = match &cfg.paths.tensor_cache {
        Some(p) => p.file_name().map(PathBuf::from).unwrap_or_else(|| p.clone()),
        None => PathBuf::from(cache_file_name(&cfg.tensor_request()?)),
    };
    Ok(match (cache_dir, &cfg.paths.tensor_cache) {
        (Some(dir), _) => dir.join(name),
        (None, Some(p)) => base.join(p),
        (None, None) => base.join("cache").join(name),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Built,
}

#[derive(Debug, Error)]
pub enum TensorSourceError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Build(#[from] TensorError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Loads the cache when it matches the request, otherwise builds and saves.
/// A cache with different parameters is an error unless `force` is set.
pub fn obtain_tensor(
    cfg: &ScenarioConfig,
    basis: &FilteredBasis,
    path: &Path,
    force: bool,
) -> Result<(CollisionTensor, CacheStatus), TensorSourceError> {
    let request = cfg.tensor_request()?;
    if !force && path.exists() {
        return Ok((load_matching(path, &request)?, CacheStatus::Hit));
    }
    let t = build(basis, &request.kernel, &cfg.build_options())?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CacheError::from)?;
    }
    save(&t, path)?;
    Ok((t, CacheStatus::Built))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Diagnostics(#[from] DiagError),
    #[error("the initial state has no collisions, so the collision time is undefined")]
    NoCollisions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub collision_time: f64,
    pub t_end: f64,
    pub dt: f64,
    pub steps: usize,
    pub halvings: u32,
    pub negative_events: u32,
    pub initial: DiagnosticsRecord,
    pub last: DiagnosticsRecord,
    /// Decrease of `∫ f (1 + |v|^2)` over the run.
    pub theta_moment_drop: f64,
    /// Fit of the distance series from its peak on; `None` with too few samples.
    pub rate_fit: Option<RateFit>,
}

/// Projects the datum, runs the solver and records diagnostics at every
/// output time; `on_record` sees each state with its record.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    basis: &FilteredBasis,
    tensor: &CollisionTensor,
    mut on_record: impl FnMut(&SpectralState, &DiagnosticsRecord),
) -> Result<ScenarioSummary, ScenarioError> {
    let ansatz = tensor.meta.ansatz;
    let ic = cfg.initial_condition()?;
    let state = init_from_ic(&ic, basis, &ansatz);
    let diag = Diagnostics::new(basis, &ansatz, cfg.moments.clone(), tensor.meta.dropped_mass);
    let nu = mean_collision_frequency(tensor, &state.a, &diag);
    let tau = if nu > 0.0 && nu.is_finite() {
        1.0 / nu
    } else {
        f64::INFINITY
    };
    if matches!(cfg.solver.t_end, TEnd::Collisions { collision_times } if collision_times > 0.0) && !tau.is_finite() {
        return Err(ScenarioError::NoCollisions);
    }
    let solver = cfg.solver_config(if tau.is_finite() { tau } else { 0.0 });
    let mut records = Vec::new();
    let mut err = None;
    let out = run(state, tensor, &solver, |s| match diag.record(s) {
        Ok(r) => {
            on_record(s, &r);
            records.push(r);
        }
        Err(e) => {
            err.get_or_insert(e);
        }
    })?;
    if let Some(e) = err {
        return Err(e.into());
    }
    let initial = records.first().cloned().expect("run reports the initial state");
    let last = records.last().cloned().expect("run reports the final state");
    let peak = records.iter().enumerate().fold(
        0,
        |best, (i, r)| if r.dist_eq > records[best].dist_eq { i } else { best },
    );
    let series: Vec<(f64, f64)> = records[peak..].iter().map(|r| (r.t, r.dist_eq)).collect();
    Ok(ScenarioSummary {
        collision_time: tau,
        t_end: solver.t_end,
        dt: out.dt,
        steps: out.steps,
        halvings: out.halvings,
        negative_events: out.negative_events,
        theta_moment_drop: (initial.mass + initial.energy) - (last.mass + last.energy),
        initial,
        last,
        rate_fit: equilibrium_rate_fit(&series).ok(),
    })
}

/// CSV header for a moment set.
pub fn csv_header(moments: &MomentSpec) -> String {
    let mut cols: Vec<String> = ["t", "mass", "mom_x", "mom_y", "mom_z", "energy"]
        .map(String::from)
        .to_vec();
    cols.extend(moments.s.iter().map(|s| format!("m{}", 2.0 * s)));
    cols.extend(["expmom", "l2", "entropy", "dist_eq", "min_cell", "dropped_mass"].map(String::from));
    cols.join(",")
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_row(r: &DiagnosticsRecord) -> String {
    let mut v = vec![r.t, r.mass, r.momentum[0], r.momentum[1], r.momentum[2], r.energy];
    v.extend_from_slice(&r.moments);
    v.extend([r.expmom, r.l2, r.entropy, r.dist_eq, r.min_cell, r.dropped_mass]);
    v.into_iter().map(num).collect::<Vec<_>>().join(",")
}

/// Streams records as CSV rows after writing the header.
pub struct CsvWriter<W: Write> {
    out: W,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, moments: &MomentSpec) -> io::Result<Self> {
        writeln!(out, "{}", csv_header(moments))?;
        Ok(Self { out })
    }

    pub fn write(&mut self, r: &DiagnosticsRecord) -> io::Result<()> {
        writeln!(self.out, "{}", csv_row(r))
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn emit_csv<'a>(
    records: impl IntoIterator<Item = &'a DiagnosticsRecord>,
    moments: &MomentSpec,
    path: &Path,
) -> io::Result<()> {
    let mut w = CsvWriter::new(io::BufWriter::new(fs::File::create(path)?), moments)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(r#"{"level": 3, "delta": 0.9}"#).unwrap();
        assert_eq!(c, ScenarioConfig::minimal(3, 0.9));
        assert_eq!(c.solver.method, Method::Rk4);
        assert_eq!(c.solver.t_end, TEnd::Collisions { collision_times: 5.0 });
        assert_eq!(c.ansatz(), Ansatz::default());
        assert_eq!(c.initial.len(), 2);
    }

    #[test]
    fn range_violations_name_fields() {
        let e = parse_config(r#"{"level": 3, "delta": 1.2}"#).unwrap_err();
        assert_eq!(e.paths(), vec!["delta"]);
        let e = parse_config(
            r#"{"level": 3, "delta": 0.9, "kernel": {"gamma": 2.0}, "mc": {"samples_per_pair": 0},
                "initial": [{"rho": 1, "u": [0,0,0], "temperature": -1}], "solver": {"dt": -0.1}}"#,
        )
        .unwrap_err();
        let p = e.paths();
        for want in [
            "kernel.gamma",
            "mc.samples_per_pair",
            "initial[0].temperature",
            "solver.dt",
        ] {
            assert!(p.contains(&want), "{p:?} lacks {want}");
        }
        let e = parse_config(r#"{"level": 3, "delta": 0.9, "solver": {"method": "rk5"}}"#).unwrap_err();
        assert!(
            matches!(&e, ConfigError::Schema { path, .. } if path == "solver.method"),
            "{e}"
        );
        let e = parse_config(r#"{"level": 3, "delta": 0.9, "kernal": {}}"#).unwrap_err();
        assert!(e.to_string().contains("kernal"));
        let e = parse_config(r#"{"delta": 0.9}"#).unwrap_err();
        assert!(e.to_string().contains("level"));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse_config("{\n  \"level\": 3,\n  \"delta\": ,\n}").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 3, .. }), "{e:?}");
    }

    #[test]
    fn normalized_kernel_amplitude() {
        let c = parse_config(
            r#"{"level": 3, "delta": 0.9, "kernel": {"gamma": 0.5, "theta_b": 0.5236, "b0": "normalized"}}"#,
        )
        .unwrap();
        let b0 = c.kernel_spec().unwrap().b0();
        let want = 1.0 / (4.0 * std::f64::consts::PI * 0.5236f64.cos());
        assert!((b0 - want).abs() < 1e-15);
        assert!((b0 - 0.091888).abs() < 1e-6);
        let c = parse_config(r#"{"level": 3, "delta": 0.9, "kernel": {"b0": 0.25}}"#).unwrap();
        assert_eq!(c.kernel_spec().unwrap().b0(), 0.25);
        assert!(parse_config(r#"{"level": 3, "delta": 0.9, "kernel": {"b0": "big"}}"#).is_err());
    }

    #[test]
    fn forms_of_dt_and_t_end() {
        let c = parse_config(r#"{"level": 2, "delta": 0.75, "solver": {"dt": 0.05, "t_end": 2.5, "method": "euler"}}"#)
            .unwrap();
        let s = c.solver_config(7.0);
        assert_eq!((s.dt, s.t_end, s.method), (TimeStep::Fixed(0.05), 2.5, Method::Euler));
        let c =
            parse_config(r#"{"level": 2, "delta": 0.75, "solver": {"dt": "auto", "t_end": {"collision_times": 2}}}"#)
                .unwrap();
        let s = c.solver_config(1.5);
        assert_eq!((s.dt, s.t_end), (TimeStep::Auto, 3.0));
    }

    #[test]
    fn emit_then_parse_is_identity() {
        let mut c = ScenarioConfig::minimal(4, 0.9);
        c.kernel.lambda = Some(3.5);
        c.kernel.b0 = B0::Value(0.3);
        c.solver.dt = Dt::Fixed(0.125);
        c.solver.t_end = TEnd::Time(1.0 / 3.0);
        c.paths.csv_out = Some("out/run.csv".into());
        c.flags.plain_trial = true;
        c.moments.s = vec![2.0, 3.0, 4.5];
        for cfg in [ScenarioConfig::minimal(3, 0.9), c] {
            let text = emit_config(&cfg);
            assert_eq!(parse_config(&text).unwrap(), cfg);
            assert_eq!(emit_config(&parse_config(&text).unwrap()), text);
        }
    }

    #[test]
    fn cache_paths() {
        let c = ScenarioConfig::minimal(3, 0.9);
        let name = cache_file_name(&c.tensor_request().unwrap());
        assert!(name.starts_with("tensor-N3-S16-") && name.ends_with(".bwt"));
        let mut d = c.clone();
        d.mc.seed = 1;
        assert_ne!(cache_file_name(&d.tensor_request().unwrap()), name);
        let base = Path::new("/work");
        assert_eq!(
            resolve_cache_path(&c, base, None).unwrap(),
            base.join("cache").join(&name)
        );
        assert_eq!(
            resolve_cache_path(&c, base, Some(Path::new("/env"))).unwrap(),
            Path::new("/env").join(&name)
        );
        d.paths.tensor_cache = Some("t/my.bwt".into());
        assert_eq!(resolve_cache_path(&d, base, None).unwrap(), Path::new("/work/t/my.bwt"));
        assert_eq!(
            resolve_cache_path(&d, base, Some(Path::new("/env"))).unwrap(),
            Path::new("/env/my.bwt")
        );
    }

    fn record(t: f64) -> DiagnosticsRecord {
        DiagnosticsRecord {
            t,
            mass: 1.0,
            momentum: [0.0, -0.0, 1e-300],
            energy: 1.0 / 3.0,
            moments: vec![2.0, 3.0],
            expmom: 1.5,
            l2: 0.25,
            entropy: -2.0,
            dist_eq: 0.1,
            min_cell: 0.0,
            dropped_mass: 1e-5,
        }
    }

    #[test]
    fn csv_layout() {
        let m = MomentSpec::default();
        assert_eq!(
            csv_header(&m),
            "t,mass,mom_x,mom_y,mom_z,energy,m4,m6,expmom,l2,entropy,dist_eq,min_cell,dropped_mass"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        emit_csv([], &m, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 1);
        let r = record(0.5);
        emit_csv([&r], &m, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row.len(), 14);
        assert_eq!(row[5], "3.3333333333333331e-1");
        // 17 significant digits survive a round trip
        for (cell, want) in row.iter().zip(csv_row(&r).split(',')) {
            assert_eq!(*cell, want);
            let x: f64 = cell.parse().unwrap();
            assert_eq!(format!("{x:.16e}"), *cell);
        }
    }
}
