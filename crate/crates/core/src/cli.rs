//! Declarative run front end: TOML configuration, dependency-ordered
//! execution of the requested analyses, artifacts and `summary.json`.
//!
//! Exit codes: 0 all verdicts pass, 1 some verdict fails, 2 an analysis
//! raised a numerical error (`PreconditionFailed`, `NoConvergence`, …),
//! 3 the configuration is invalid.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::discrete_am::{
    calibrated_from_barrier, calibration_residuals, default_k_max, mane_table, min_mean_cycle, nonwandering_set,
    representation_check, separating_subaction, ManeMatrix, PathGraph, SeparatingWeights,
};
use crate::ep_solver::{perron_eigenvalue, solve_pair_from, EpSolution, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::{Grids, TorusGrid, VelocityGrid};
use crate::io::{self, fmt_f64};
use crate::ldp::{ldp_away, ldp_fixed_h, ldp_joint, varadhan_check, JointLimit, LdpOptions, PhaseBox, PhaseSet, Regime};
use crate::limits::{free_energy, rate_i, summarize};
use crate::measure::{build_density, marginal_theta, MeasureReport, DEFAULT_HOLONOMY_MODES};
use crate::plot::{emit_plot, field_svg};
use crate::problem::{
    LagrangianKind, LagrangianSpec, Potential, ProbeSamples, TabulatedPotential, VelocityProfile,
};

/// Environment variable overriding `output.directory`.
pub const OUTPUT_DIR_ENV: &str = "MATHER_EP_OUTPUT_DIR";
pub const SUMMARY_SCHEMA: &str = "mather-ep.summary";
pub const SUMMARY_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT_FAILED: i32 = 1;
pub const EXIT_ANALYSIS_ERROR: i32 = 2;
pub const EXIT_CONFIG_ERROR: i32 = 3;

/// One experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grids: GridsConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, rename = "analysis")]
    pub analyses: Vec<AnalysisConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    Quadratic {
        #[serde(default = "one")]
        dimension: usize,
    },
    ShiftedQuadratic {
        omega: Vec<f64>,
    },
    Pendulum,
    Cosine {
        #[serde(default = "one")]
        dimension: usize,
        amplitude: f64,
        #[serde(default)]
        quartic: f64,
    },
    /// Potential sampled on `{i/M}^N` in a single-column CSV.
    Tabulated {
        #[serde(default = "one")]
        dimension: usize,
        csv: PathBuf,
        #[serde(default)]
        quartic: f64,
    },
}

fn one() -> usize {
    1
}

fn kinetic(quartic: f64) -> VelocityProfile {
    if quartic == 0.0 {
        VelocityProfile::Quadratic
    } else {
        VelocityProfile::QuadraticQuartic { quartic }
    }
}

impl ProblemConfig {
    /// Relative paths are resolved against `base`.
    pub fn spec(&self, base: &Path) -> Result<LagrangianSpec> {
        match self {
            Self::Quadratic { dimension } => LagrangianSpec::new(*dimension, LagrangianKind::Quadratic),
            Self::ShiftedQuadratic { omega } => LagrangianSpec::new(
                omega.len(),
                LagrangianKind::ShiftedQuadratic { omega: omega.clone() },
            ),
            Self::Pendulum => Ok(LagrangianSpec::pendulum()),
            Self::Cosine {
                dimension,
                amplitude,
                quartic,
            } => LagrangianSpec::new(
                *dimension,
                LagrangianKind::Separable {
                    kinetic: kinetic(*quartic),
                    potential: Potential::Cosine { amplitude: *amplitude },
                },
            ),
            Self::Tabulated { dimension, csv, quartic } => {
                let table = TabulatedPotential::from_csv(&base.join(csv), *dimension)?;
                LagrangianSpec::new(
                    *dimension,
                    LagrangianKind::Separable {
                        kinetic: kinetic(*quartic),
                        potential: Potential::Tabulated(table),
                    },
                )
            }
        }
    }
}

/// A positive number or the keyword `"auto"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cutoff {
    Value(f64),
    Keyword(String),
}

impl Default for Cutoff {
    fn default() -> Self {
        Self::Keyword("auto".into())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridsConfig {
    pub m: usize,
    /// Velocity nodes per axis; ignored when `aligned`.
    pub mv: Option<usize>,
    #[serde(default)]
    pub cutoff: Cutoff,
    /// Velocity spacing `Δx/h`, so that `x + hv` is always a node.
    #[serde(default)]
    pub aligned: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// Fixed time step for every `ε`.
    pub h: Option<f64>,
    /// `h = 2ε` for every `ε`.
    #[serde(default)]
    pub coupled: bool,
    /// Explicit `(ε, h)` pairs.
    pub pairs: Option<Vec<(f64, f64)>>,
}

impl ScheduleConfig {
    pub fn points(&self) -> Result<Vec<(f64, f64)>> {
        let pts: Vec<(f64, f64)> = match (&self.pairs, self.h, self.coupled) {
            (Some(p), None, false) if self.epsilons.is_empty() => p.clone(),
            (None, Some(h), false) => self.epsilons.iter().map(|&e| (e, h)).collect(),
            (None, None, true) => self.epsilons.iter().map(|&e| (e, 2.0 * e)).collect(),
            _ => {
                return Err(Error::Config(
                    "schedule needs exactly one of `h`, `coupled = true` or `pairs`".into(),
                ))
            }
        };
        if pts.is_empty() {
            return Err(Error::Config("schedule is empty".into()));
        }
        if pts.iter().any(|&(e, h)| !(e > 0.0 && h > 0.0 && e.is_finite() && h.is_finite())) {
            return Err(Error::Config("schedule values must be positive".into()));
        }
        if pts.windows(2).any(|w| w[1].0 >= w[0].0) {
            return Err(Error::Config("schedule must decrease".into()));
        }
        if self.h.is_none() && pts.iter().any(|&(e, h)| h < e) {
            return Err(Error::Config("coupled schedule needs h >= epsilon".into()));
        }
        Ok(pts)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub fixed_point: f64,
    pub max_iterations: usize,
    pub lambda: f64,
    pub ldp: f64,
    pub aubry: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let s = SolverConfig::default();
        let l = LdpOptions::default();
        Self {
            fixed_point: s.tolerance,
            max_iterations: s.max_iterations,
            lambda: s.lambda_tolerance,
            ldp: l.tolerance,
            aubry: l.aubry_tolerance,
        }
    }
}

impl Tolerances {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            tolerance: self.fixed_point,
            max_iterations: self.max_iterations,
            lambda_tolerance: self.lambda,
            ..SolverConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json, Format::Svg],
        }
    }
}

/// Requested reports. Every variant carries a unique `id` that names its files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnalysisConfig {
    /// One solve with measure diagnostics and the Perron cross-check.
    Eigen {
        id: String,
        epsilon: Option<f64>,
        h: Option<f64>,
        expect_lambda: Option<f64>,
        #[serde(default = "rel_1e3")]
        lambda_tolerance: f64,
        #[serde(default = "default_true")]
        perron: bool,
        #[serde(default = "rel_1e4")]
        perron_tolerance: f64,
        #[serde(default = "rel_1e3")]
        holonomy_tolerance: f64,
        identity_tolerance: Option<f64>,
        expect_entropy: Option<f64>,
        #[serde(default = "abs_1e2")]
        entropy_tolerance: f64,
    },
    /// `λ/h` along the whole schedule and its `ε → 0` extrapolation.
    Continuation {
        id: String,
        expect: Option<f64>,
        #[serde(default = "abs_5e2")]
        tolerance: f64,
    },
    /// Minimum mean cycle of the path graph.
    CriticalValue {
        id: String,
        h: Option<f64>,
        cutoff: Option<f64>,
        expect: Option<f64>,
        /// Id of a continuation analysis to compare against.
        compare: Option<String>,
        #[serde(default = "abs_5e2")]
        tolerance: f64,
    },
    /// Rate function at listed phase points from the schedule's terminal fields.
    Rate {
        id: String,
        points: Vec<(Vec<f64>, Vec<f64>)>,
        expect: Option<Vec<f64>>,
        #[serde(default = "abs_5e2")]
        tolerance: f64,
    },
    Ldp {
        id: String,
        regime: Regime,
        boxes: Vec<PhaseBox>,
        expect: Option<f64>,
        #[serde(default = "abs_1e2")]
        tolerance: f64,
    },
    /// Mañé potential, Ω, calibrated and separating subactions.
    Discrete {
        id: String,
        h: Option<f64>,
        cutoff: Option<f64>,
        #[serde(default)]
        source: usize,
        #[serde(default = "abs_1e6")]
        omega_tolerance: f64,
        #[serde(default = "abs_1e6")]
        calibration_tolerance: f64,
        #[serde(default = "abs_1e2")]
        representation_tolerance: f64,
        k_max: Option<usize>,
        window: Option<usize>,
        #[serde(default)]
        weights: SeparatingWeights,
    },
    Varadhan {
        id: String,
        tilt: Vec<f64>,
        #[serde(default = "abs_1e2")]
        tolerance: f64,
    },
    FreeEnergy {
        id: String,
        covector: Vec<f64>,
        #[serde(default)]
        node: usize,
        expect: Option<f64>,
        #[serde(default = "abs_1e2")]
        tolerance: f64,
    },
}

fn default_true() -> bool {
    true
}
fn rel_1e3() -> f64 {
    1e-3
}
fn rel_1e4() -> f64 {
    1e-4
}
fn abs_1e2() -> f64 {
    1e-2
}
fn abs_5e2() -> f64 {
    5e-2
}
fn abs_1e6() -> f64 {
    1e-6
}

impl AnalysisConfig {
    pub fn id(&self) -> &str {
        match self {
            Self::Eigen { id, .. }
            | Self::Continuation { id, .. }
            | Self::CriticalValue { id, .. }
            | Self::Rate { id, .. }
            | Self::Ldp { id, .. }
            | Self::Discrete { id, .. }
            | Self::Varadhan { id, .. }
            | Self::FreeEnergy { id, .. } => id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Eigen { .. } => "eigen",
            Self::Continuation { .. } => "continuation",
            Self::CriticalValue { .. } => "critical-value",
            Self::Rate { .. } => "rate",
            Self::Ldp { .. } => "ldp",
            Self::Discrete { .. } => "discrete",
            Self::Varadhan { .. } => "varadhan",
            Self::FreeEnergy { .. } => "free-energy",
        }
    }

    /// Solve-only analyses first, then limits, then LDP and discrete.
    fn stage(&self) -> u8 {
        match self {
            Self::Eigen { .. } => 0,
            Self::Continuation { .. } | Self::Rate { .. } | Self::Varadhan { .. } | Self::FreeEnergy { .. } => 1,
            Self::Ldp { .. } | Self::Discrete { .. } | Self::CriticalValue { .. } => 2,
        }
    }
}

/// A configuration checked and resolved against its problem.
#[derive(Clone, Debug)]
pub struct Validated {
    pub config: RunConfig,
    pub spec: LagrangianSpec,
    pub schedule: Vec<(f64, f64)>,
    pub cutoff: f64,
    pub semiconcavity_bound: f64,
    pub hash: String,
}

/// Parses and validates a configuration file.
pub fn load(path: &Path) -> Result<Validated> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    validate_str(&text, base)
}

/// Validates configuration text; relative paths resolve against `base`.
pub fn validate_str(text: &str, base: &Path) -> Result<Validated> {
    let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let spec = config.problem.spec(base).map_err(as_config)?;
    let schedule = config.schedule.points()?;
    let probe = spec.probe_hypotheses(&ProbeSamples::default()).map_err(as_config)?;
    let cutoff = match &config.grids.cutoff {
        Cutoff::Value(r) if *r > 0.0 => *r,
        Cutoff::Value(r) => return Err(Error::Config(format!("cutoff must be positive, got {r}"))),
        Cutoff::Keyword(k) if k == "auto" => Grids::auto_cutoff(probe.velocity_bound, schedule[0].0),
        Cutoff::Keyword(k) => return Err(Error::Config(format!("cutoff must be a number or \"auto\", got {k:?}"))),
    };
    TorusGrid::new(spec.dimension(), config.grids.m).map_err(as_config)?;
    if !config.grids.aligned {
        let mv = config
            .grids
            .mv
            .ok_or_else(|| Error::Config("grids.mv is required unless grids.aligned = true".into()))?;
        VelocityGrid::new(spec.dimension(), cutoff, mv).map_err(as_config)?;
    }
    let mut ids = HashSet::new();
    for a in &config.analyses {
        if !ids.insert(a.id().to_string()) {
            return Err(Error::Config(format!("duplicate analysis id `{}`", a.id())));
        }
        if a.id().is_empty() || !a.id().chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::Config(format!("analysis id `{}` must be [A-Za-z0-9_-]+", a.id())));
        }
    }
    for a in &config.analyses {
        if let AnalysisConfig::CriticalValue { compare: Some(c), .. } = a {
            let ok = config
                .analyses
                .iter()
                .any(|b| b.id() == c && matches!(b, AnalysisConfig::Continuation { .. }));
            if !ok {
                return Err(Error::Config(format!("`compare = {c:?}` does not name a continuation analysis")));
            }
        }
        if let AnalysisConfig::Ldp { boxes, .. } = a {
            if boxes.is_empty() {
                return Err(Error::Config(format!("ldp analysis `{}` has no boxes", a.id())));
            }
            for b in boxes {
                PhaseBox::new(b.x.clone(), b.v.clone(), b.closed).map_err(as_config)?;
            }
        }
    }
    let hash = hex(&Sha256::digest(text.as_bytes()));
    Ok(Validated {
        config,
        spec,
        schedule,
        cutoff,
        semiconcavity_bound: probe.semiconcavity_bound(),
        hash,
    })
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Pass/fail comparison of one reported number.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Verdict {
    fn absolute(name: &str, value: f64, expected: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            expected,
            tolerance,
            pass: (value - expected).abs() <= tolerance,
        }
    }

    fn relative(name: &str, value: f64, expected: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            expected,
            tolerance,
            pass: (value - expected).abs() <= tolerance * expected.abs(),
        }
    }

    /// `value ≤ bound`.
    fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            expected: 0.0,
            tolerance: bound,
            pass: value <= bound,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorRecord {
    #[serde(rename = "type")]
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub id: String,
    pub kind: String,
    /// `pass`, `fail` or `error`.
    pub status: String,
    pub verdicts: Vec<Verdict>,
    pub report: Option<Value>,
    pub error: Option<ErrorRecord>,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub version: u32,
    pub config_sha256: String,
    pub problem: LagrangianSpec,
    pub schedule: Vec<(f64, f64)>,
    pub velocity_cutoff: f64,
    pub analyses: Vec<AnalysisRecord>,
    pub exit_code: i32,
}

/// Outcome of [`run`].
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: Summary,
    pub output_dir: PathBuf,
}

/// Output directory: the override, else `$MATHER_EP_OUTPUT_DIR`, else the
/// config's `output.directory` (relative to the config file).
pub fn output_dir(config: &RunConfig, base: &Path, override_dir: Option<&Path>) -> PathBuf {
    if let Some(d) = override_dir {
        return d.to_path_buf();
    }
    if let Some(d) = std::env::var_os(OUTPUT_DIR_ENV) {
        return PathBuf::from(d);
    }
    base.join(&config.output.directory)
}

/// Loads, validates and executes a configuration file.
pub fn run(path: &Path, override_dir: Option<&Path>) -> Result<RunOutcome> {
    let validated = load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let dir = output_dir(&validated.config, base, override_dir);
    run_validated(&validated, &dir)
}

/// Executes an already validated configuration into `dir`.
pub fn run_validated(v: &Validated, dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(dir)?;
    let mut ctx = Context::new(v, dir);
    let mut order: Vec<usize> = (0..v.config.analyses.len()).collect();
    order.sort_by_key(|&i| v.config.analyses[i].stage());
    let mut records: BTreeMap<usize, AnalysisRecord> = BTreeMap::new();
    for i in order {
        let a = &v.config.analyses[i];
        eprintln!("[mather-ep] {} `{}`", a.kind(), a.id());
        let mut out = Artifacts::default();
        let record = match ctx.analysis(a, &mut out) {
            Ok((report, verdicts)) => {
                let pass = verdicts.iter().all(|v| v.pass);
                AnalysisRecord {
                    id: a.id().into(),
                    kind: a.kind().into(),
                    status: if pass { "pass" } else { "fail" }.into(),
                    verdicts,
                    report: Some(report),
                    error: None,
                    artifacts: out.names,
                }
            }
            Err(e) => {
                eprintln!("[mather-ep]   error: {e}");
                AnalysisRecord {
                    id: a.id().into(),
                    kind: a.kind().into(),
                    status: "error".into(),
                    verdicts: Vec::new(),
                    report: None,
                    error: Some(ErrorRecord::from(&e)),
                    artifacts: out.names,
                }
            }
        };
        records.insert(i, record);
    }
    let analyses: Vec<AnalysisRecord> = records.into_values().collect();
    let exit_code = if analyses.iter().any(|a| a.status == "error") {
        EXIT_ANALYSIS_ERROR
    } else if analyses.iter().any(|a| a.status == "fail") {
        EXIT_VERDICT_FAILED
    } else {
        EXIT_OK
    };
    let summary = Summary {
        schema: SUMMARY_SCHEMA.into(),
        version: SUMMARY_VERSION,
        config_sha256: v.hash.clone(),
        problem: v.spec.clone(),
        schedule: v.schedule.clone(),
        velocity_cutoff: v.cutoff,
        analyses,
        exit_code,
    };
    io::write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunOutcome {
        exit_code,
        summary,
        output_dir: dir.to_path_buf(),
    })
}

#[derive(Default)]
struct Artifacts {
    names: Vec<String>,
}

impl Artifacts {
    fn add(&mut self, name: String) -> String {
        self.names.push(name.clone());
        name
    }
}

struct Context<'a> {
    v: &'a Validated,
    dir: PathBuf,
    solver: SolverConfig,
    cache: BTreeMap<String, EpSolution>,
    continuation_limits: BTreeMap<String, f64>,
}

impl<'a> Context<'a> {
    fn new(v: &'a Validated, dir: &Path) -> Self {
        Self {
            v,
            dir: dir.to_path_buf(),
            solver: v.config.tolerances.solver(),
            cache: BTreeMap::new(),
            continuation_limits: BTreeMap::new(),
        }
    }

    fn wants(&self, f: Format) -> bool {
        self.v.config.output.formats.contains(&f)
    }

    fn grids(&self, h: f64) -> Result<Grids> {
        let g = &self.v.config.grids;
        let torus = TorusGrid::new(self.v.spec.dimension(), g.m)?;
        let velocity = if g.aligned {
            VelocityGrid::node_aligned(torus.dim(), &torus, h, 1, self.v.cutoff)?
        } else {
            VelocityGrid::new(torus.dim(), self.v.cutoff, g.mv.unwrap_or(0))?
        };
        Grids::new(torus, velocity)
    }

    /// Content hash of everything that determines a solution.
    fn key(&self, eps: f64, h: f64, grids: &Grids) -> Result<String> {
        let material = json!({
            "problem": self.v.spec,
            "torus": grids.torus,
            "velocity": grids.velocity,
            "epsilon": eps,
            "h": h,
            "solver": self.solver,
        });
        Ok(hex(&Sha256::digest(serde_json::to_vec(&material)?)))
    }

    /// Solves the points in order, reusing cached solutions and warm-starting
    /// from the previous point when the grids agree.
    fn solve(&mut self, points: &[(f64, f64)]) -> Result<(Vec<EpSolution>, Grids)> {
        let mut out: Vec<EpSolution> = Vec::with_capacity(points.len());
        let mut last_grids = None;
        for &(eps, h) in points {
            let grids = self.grids(h)?;
            let key = self.key(eps, h, &grids)?;
            let sol = match self.cache.get(&key) {
                Some(s) => s.clone(),
                None => {
                    let warm = out
                        .last()
                        .filter(|_| last_grids.as_ref() == Some(&grids))
                        .map(|s| (&s.phi, &s.phibar));
                    let s = solve_pair_from(&self.v.spec, eps, h, &grids, &self.solver, warm)?;
                    self.cache.insert(key, s.clone());
                    s
                }
            };
            out.push(sol);
            last_grids = Some(grids);
        }
        let grids = last_grids.expect("nonempty schedule");
        Ok((out, grids))
    }

    fn fixed_grids(&self) -> Result<Grids> {
        let h = self.v.schedule[0].1;
        if self.v.config.grids.aligned && self.v.schedule.iter().any(|p| p.1 != h) {
            return Err(Error::PreconditionFailed(
                "aligned velocity grids differ along a varying-h schedule".into(),
            ));
        }
        self.grids(h)
    }

    fn ldp_options(&self) -> LdpOptions {
        LdpOptions {
            tolerance: self.v.config.tolerances.ldp,
            aubry_tolerance: self.v.config.tolerances.aubry,
            semiconcavity_bound: self.v.semiconcavity_bound,
        }
    }

    fn write_json(&self, out: &mut Artifacts, name: &str, value: &Value) -> Result<()> {
        if self.wants(Format::Json) {
            io::write_json(&self.dir.join(out.add(name.into())), value)?;
        }
        Ok(())
    }

    fn write_svg(&self, out: &mut Artifacts, name: &str, svg: Result<String>) -> Result<()> {
        if self.wants(Format::Svg) {
            fs::write(self.dir.join(out.add(name.into())), svg?)?;
        }
        Ok(())
    }

    fn write_schedule_csv(&self, out: &mut Artifacts, name: &str, column: &str, pts: &[(f64, f64)], ys: &[f64]) -> Result<()> {
        if self.wants(Format::Csv) {
            let rows = pts
                .iter()
                .zip(ys)
                .map(|(p, y)| vec![fmt_f64(p.0), fmt_f64(p.1), fmt_f64(*y)]);
            io::write_table(&self.dir.join(out.add(name.into())), &["epsilon", "h", column], rows)?;
        }
        Ok(())
    }

    fn analysis(&mut self, a: &AnalysisConfig, out: &mut Artifacts) -> Result<(Value, Vec<Verdict>)> {
        match a {
            AnalysisConfig::Eigen {
                id,
                epsilon,
                h,
                expect_lambda,
                lambda_tolerance,
                perron,
                perron_tolerance,
                holonomy_tolerance,
                identity_tolerance,
                expect_entropy,
                entropy_tolerance,
            } => {
                let last = *self.v.schedule.last().expect("nonempty");
                let point = (epsilon.unwrap_or(last.0), h.unwrap_or(last.1));
                let (sols, grids) = self.solve(&[point])?;
                let sol = &sols[0];
                let measure = MeasureReport::build(sol, &self.v.spec, &grids, DEFAULT_HOLONOMY_MODES)?;
                let theta = marginal_theta(sol);
                let mut verdicts = Vec::new();
                if let Some(e) = expect_lambda {
                    verdicts.push(Verdict::relative("lambda", sol.lambda, *e, *lambda_tolerance));
                }
                verdicts.push(Verdict::at_most("mass_deviation", (measure.mass - 1.0).abs(), 1e-3));
                verdicts.push(Verdict::at_most("max_holonomy", measure.max_holonomy(), *holonomy_tolerance));
                if let Some(t) = identity_tolerance {
                    verdicts.push(Verdict::at_most("identity_gap", measure.identity_gap(point.0), *t));
                }
                if let Some(e) = expect_entropy {
                    verdicts.push(Verdict::absolute("entropy", measure.entropy, *e, *entropy_tolerance));
                }
                let perron_report = if *perron && grids.torus.dim() == 1 {
                    let p = perron_eigenvalue(&self.v.spec, point.0, point.1, &grids)?;
                    let rel = (p.lambda - sol.lambda).abs() / sol.lambda.abs().max(f64::MIN_POSITIVE);
                    let ratio = (-(sol.lambda) / (point.0 * point.1) - p.log_eigenvalue).exp() - 1.0;
                    verdicts.push(Verdict::at_most("perron_eigenvalue_relative", ratio.abs(), *perron_tolerance));
                    json!({"lambda": p.lambda, "log_eigenvalue": p.log_eigenvalue, "iterations": p.iterations, "lambda_relative_difference": rel})
                } else {
                    Value::Null
                };
                io::write_solution(&self.dir, &format!("{id}_solution"), sol)?;
                for s in ["_solution_phi.bin", "_solution_phibar.bin", "_solution.json"] {
                    out.add(format!("{id}{s}"));
                }
                let density = build_density(sol, &self.v.spec, &grids)?;
                io::write_bytes(&self.dir.join(out.add(format!("{id}_density.bin"))), &io::density_to_bytes(&density))?;
                if self.wants(Format::Csv) {
                    io::write_field_csv(&self.dir.join(out.add(format!("{id}_phi.csv"))), &sol.phi)?;
                    io::write_field_csv(&self.dir.join(out.add(format!("{id}_phibar.csv"))), &sol.phibar)?;
                    io::write_field_csv(&self.dir.join(out.add(format!("{id}_theta.csv"))), &theta)?;
                }
                self.write_svg(out, &format!("{id}_phi.svg"), field_svg(&sol.phi, "phi"))?;
                let report = json!({
                    "epsilon": point.0,
                    "h": point.1,
                    "lambda": sol.lambda,
                    "lambda_backward": sol.lambda_backward,
                    "effective_hamiltonian": sol.effective_hamiltonian(),
                    "iterations": sol.iterations,
                    "final_residual": sol.final_residual,
                    "theta_min": theta.min(),
                    "theta_max": theta.max(),
                    "measure": measure,
                    "identity_gap": measure.identity_gap(point.0),
                    "perron": perron_report,
                });
                self.write_json(out, &format!("{id}.json"), &report)?;
                Ok((report, verdicts))
            }
            AnalysisConfig::Continuation { id, expect, tolerance } => {
                let pts = self.v.schedule.clone();
                let (sols, grids) = self.solve(&pts)?;
                let cont = summarize(&pts, sols)?;
                self.continuation_limits.insert(id.clone(), cont.limit);
                let report = json!({
                    "schedule": cont.schedule,
                    "effective_h": cont.effective_h,
                    "gaps": cont.gaps,
                    "fit": cont.fit,
                    "limit": cont.limit,
                    "velocity_cutoff": grids.velocity.cutoff(),
                });
                let mut verdicts = Vec::new();
                if let Some(e) = expect {
                    verdicts.push(Verdict::absolute("limit", cont.limit, *e, *tolerance));
                }
                self.write_schedule_csv(out, &format!("{id}.csv"), "effective_hamiltonian", &pts, &cont.effective_h)?;
                io::write_solution(&self.dir, &format!("{id}_terminal"), &cont.terminal)?;
                for s in ["_terminal_phi.bin", "_terminal_phibar.bin", "_terminal.json"] {
                    out.add(format!("{id}{s}"));
                }
                self.write_json(out, &format!("{id}.json"), &report)?;
                self.write_svg(out, &format!("{id}.svg"), emit_plot(&report, "continuation"))?;
                Ok((report, verdicts))
            }
            AnalysisConfig::CriticalValue {
                id,
                h,
                cutoff,
                expect,
                compare,
                tolerance,
            } => {
                let h = h.unwrap_or(self.v.schedule[0].1);
                let torus = TorusGrid::new(self.v.spec.dimension(), self.v.config.grids.m)?;
                let graph = PathGraph::new(&self.v.spec, torus, h, cutoff.unwrap_or(self.v.cutoff))?;
                let crit = min_mean_cycle(&graph)?;
                let mut verdicts = Vec::new();
                if let Some(e) = expect {
                    verdicts.push(Verdict::absolute("hbar", crit.hbar, *e, 1e-12));
                }
                let mut comparison = Value::Null;
                if let Some(c) = compare {
                    let limit = *self.continuation_limits.get(c).ok_or_else(|| {
                        Error::PreconditionFailed(format!("continuation `{c}` did not produce a limit"))
                    })?;
                    verdicts.push(Verdict::absolute("continuation_limit", limit, crit.hbar, *tolerance));
                    comparison = json!({"id": c, "limit": limit, "difference": limit - crit.hbar});
                }
                let report = json!({
                    "h": h,
                    "max_step": graph.max_step(),
                    "hbar": crit.hbar,
                    "cycle": crit.cycle,
                    "comparison": comparison,
                });
                self.write_json(out, &format!("{id}.json"), &report)?;
                Ok((report, verdicts))
            }
            AnalysisConfig::Rate {
                id,
                points,
                expect,
                tolerance,
            } => {
                self.fixed_grids()?;
                let pts = self.v.schedule.clone();
                let (sols, _) = self.solve(&pts)?;
                let lim = JointLimit::from_solutions(&sols, &self.ldp_options())?;
                let values: Vec<f64> = points
                    .iter()
                    .map(|(x, v)| rate_i(&self.v.spec, &lim.gradient, lim.hbar0, x, v))
                    .collect();
                let mut verdicts = Vec::new();
                if let Some(e) = expect {
                    if e.len() != values.len() {
                        return Err(Error::Config(format!("rate `{id}`: expect has {} entries", e.len())));
                    }
                    for (k, (val, ex)) in values.iter().zip(e).enumerate() {
                        verdicts.push(Verdict::absolute(&format!("rate[{k}]"), *val, *ex, *tolerance));
                    }
                }
                if self.wants(Format::Csv) {
                    let g = &lim.gradient;
                    let dim = g.grid.dim();
                    let mut header: Vec<String> = (0..dim).map(|a| format!("i{a}")).collect();
                    header.extend((0..dim).map(|a| format!("grad{a}")));
                    header.push("kink".into());
                    let header: Vec<&str> = header.iter().map(String::as_str).collect();
                    let rows = (0..g.grid.len()).map(|n| {
                        let mut row: Vec<String> = g.grid.multi_index(n).iter().map(|i| i.to_string()).collect();
                        row.extend(g.at(n).iter().map(|d| fmt_f64(*d)));
                        row.push(g.is_kink(n).to_string());
                        row
                    });
                    io::write_table(&self.dir.join(out.add(format!("{id}_gradient.csv"))), &header, rows)?;
                }
                let report = json!({
                    "hbar0": lim.hbar0,
                    "aubry_nodes": lim.aubry,
                    "points": points,
                    "values": values.iter().map(|v| if v.is_finite() { json!(v) } else { json!(fmt_f64(*v)) }).collect::<Vec<_>>(),
                });
                self.write_json(out, &format!("{id}.json"), &report)?;
                Ok((report, verdicts))
            }
            AnalysisConfig::Ldp {
                id,
                regime,
                boxes,
                expect,
                tolerance,
            } => {
                self.fixed_grids()?;
                let pts = self.v.schedule.clone();
                let (sols, grids) = self.solve(&pts)?;
                let set = PhaseSet { boxes: boxes.clone() };
                let options = self.ldp_options();
                let rep = match regime {
                    Regime::FixedH => ldp_fixed_h(&self.v.spec, &grids, &sols, &set, &options)?,
                    Regime::Joint => ldp_joint(&self.v.spec, &grids, &sols, &set, &options)?,
                    Regime::AwayFromAubry => ldp_away(&self.v.spec, &grids, &sols, &set, &options)?,
                };
                let mut verdicts = vec![Verdict {
                    name: "bound".into(),
                    value: rep.limit,
                    expected: rep.bound,
                    tolerance: rep.slack,
                    pass: rep.pass,
                }];
                if let Some(e) = expect {
                    verdicts.push(Verdict::absolute("limit", rep.limit, *e, *tolerance));
                }
                let report = serde_json::to_value(&rep)?;
                let kept: Vec<(f64, f64)> = rep.schedule.clone();
                self.write_schedule_csv(out, &format!("{id}.csv"), "scaled_log_mass", &kept, &rep.scaled_log_masses)?;
                self.write_json(out, &format!("{id}.json"), &report)?;
                self.write_svg(out, &format!("{id}.svg"), emit_plot(&report, "ldp"))?;
                Ok((report, verdicts))
            }
            AnalysisConfig::Discrete {
                id,
                h,
                cutoff,
                source,
                omega_tolerance,
                calibration_tolerance,
                representation_tolerance,
                k_max,
                window,
                weights,
            } => {
                let h = h.unwrap_or(self.v.schedule[0].1);
                let torus = TorusGrid::new(self.v.spec.dimension(), self.v.config.grids.m)?;
                if *source >= torus.len() {
                    return Err(Error::Config(format!("discrete `{id}`: source node {source} out of range")));
                }
                let graph = PathGraph::new(&self.v.spec, torus, h, cutoff.unwrap_or(self.v.cutoff))?;
                let crit = min_mean_cycle(&graph)?;
                let matrix = ManeMatrix::build(&graph, crit.hbar)?;
                let omega = nonwandering_set(&matrix, *omega_tolerance);
                let k_max = k_max.unwrap_or_else(|| default_k_max(&torus));
                let window = window.unwrap_or(k_max / 4);
                let table = mane_table(&graph, *source, crit.hbar, k_max, window)?;
                let z = if omega.contains(source) { *source } else { omega[0] };
                let u = calibrated_from_barrier(&graph, z, crit.hbar, k_max, window, *calibration_tolerance)?;
                let calib = calibration_residuals(&graph, u.values(), crit.hbar)
                    .into_iter()
                    .map(f64::abs)
                    .fold(0.0, f64::max);
                let representation = representation_check(&u, &matrix, &omega);
                let sep = separating_subaction(&graph, &matrix, &omega, *omega_tolerance, *weights)?;
                let min_return = matrix.diagonal().into_iter().fold(f64::INFINITY, f64::min);
                let verdicts = vec![
                    Verdict::at_most("calibration_residual", calib, *calibration_tolerance),
                    Verdict::at_most("representation_deviation", representation, *representation_tolerance),
                    Verdict::absolute("min_return_cost", min_return, 0.0, 1e-9),
                ];
                if self.wants(Format::Csv) {
                    let rows = (0..torus.len()).map(|n| {
                        vec![
                            n.to_string(),
                            fmt_f64(table.to_source[n]),
                            fmt_f64(table.from_source[n]),
                            fmt_f64(table.peierls[n]),
                        ]
                    });
                    io::write_table(
                        &self.dir.join(out.add(format!("{id}_mane.csv"))),
                        &["node", "s_to_source", "s_from_source", "peierls"],
                        rows,
                    )?;
                }
                io::write_bytes(&self.dir.join(out.add(format!("{id}_calibrated.bin"))), &io::field_to_bytes(&u))?;
                io::write_bytes(
                    &self.dir.join(out.add(format!("{id}_separating.bin"))),
                    &io::field_to_bytes(&sep.field),
                )?;
                self.write_json(out, &format!("{id}_omega.json"), &json!(omega))?;
                let report = json!({
                    "h": h,
                    "max_step": graph.max_step(),
                    "hbar": crit.hbar,
                    "omega": omega,
                    "source": source,
                    "k_max": k_max,
                    "window": window,
                    "calibrated_source": z,
                    "calibration_residual": calib,
                    "representation_deviation": representation,
                    "min_return_cost": min_return,
                    "separating": {
                        "omega_is_everything": sep.omega_is_everything,
                        "max_residual_on_omega": sep.max_residual_on_omega,
                        "min_gap_off_omega": if sep.min_gap_off_omega.is_finite() { json!(sep.min_gap_off_omega) } else { Value::Null },
                        "lipschitz": sep.lipschitz,
                        "weights": weights,
                    },
                });
                self.write_json(out, &format!("{id}.json"), &report)?;
                Ok((report, verdicts))
            }
            AnalysisConfig::Varadhan { id, tilt, tolerance } => {
                self.fixed_grids()?;
                let pts = self.v.schedule.clone();
                let (sols, grids) = self.solve(&pts)?;
                let rep = varadhan_check(&self.v.spec, &grids, &sols, tilt)?;
                let verdicts = vec![Verdict::absolute("limit", rep.fit.limit, rep.target, *tolerance)];
                let report = serde_json::to_value(&rep)?;
                self.write_json(out, &format!("{id}.json"), &report)?;
                Ok((report, verdicts))
            }
            AnalysisConfig::FreeEnergy {
                id,
                covector,
                node,
                expect,
                tolerance,
            } => {
                self.fixed_grids()?;
                let pts = self.v.schedule.clone();
                let (sols, grids) = self.solve(&pts)?;
                if *node >= grids.torus.len() {
                    return Err(Error::Config(format!("free-energy `{id}`: node {node} out of range")));
                }
                let fe = free_energy(&self.v.spec, &sols, &grids, covector, *node)?;
                let mut verdicts = Vec::new();
                if let Some(e) = expect {
                    verdicts.push(Verdict::absolute("limit", fe.fit.limit, *e, *tolerance));
                }
                let report = serde_json::to_value(&fe)?;
                self.write_json(out, &format!("{id}.json"), &report)?;
                Ok((report, verdicts))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[problem]
kind = "quadratic"

[grids]
m = 16
mv = 41
cutoff = 2.0

[schedule]
epsilons = [0.2, 0.1]
h = 0.2
"#;

    #[test]
    fn increasing_schedule_is_a_config_error() {
        let text = BASE.replace("[0.2, 0.1]", "[0.1, 0.2]");
        let e = validate_str(&text, Path::new(".")).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("schedule must decrease")), "{e}");
    }

    #[test]
    fn auto_cutoff_resolves() {
        let text = BASE.replace("cutoff = 2.0", "cutoff = \"auto\"");
        let v = validate_str(&text, Path::new(".")).unwrap();
        assert!(v.cutoff > 8.0 * 0.2f64.sqrt());
        let bad = BASE.replace("cutoff = 2.0", "cutoff = \"big\"");
        assert!(validate_str(&bad, Path::new(".")).is_err());
    }

    #[test]
    fn schedule_modes_are_exclusive() {
        let text = BASE.replace("h = 0.2", "h = 0.2\ncoupled = true");
        assert!(validate_str(&text, Path::new(".")).is_err());
        let coupled = BASE.replace("h = 0.2", "coupled = true");
        let v = validate_str(&coupled, Path::new(".")).unwrap();
        assert_eq!(v.schedule, vec![(0.2, 0.4), (0.1, 0.2)]);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = format!("{BASE}\n[[analysis]]\nkind = \"continuation\"\nid = \"a\"\n[[analysis]]\nkind = \"continuation\"\nid = \"a\"\n");
        assert!(validate_str(&text, Path::new(".")).is_err());
    }
}
