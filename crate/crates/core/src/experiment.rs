//! Configuration, dispatch and persistence of the experiment families.
//!
//! A run validates the whole configuration first; each family then either
//! writes all of its tables or is marked failed in the manifest, and the
//! remaining families still run.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::beams::{bbm_beam_sweep, bzk_beam_sweep, BeamReport, BzkBeamParams, CorrectorConvention, WkbBeamParams};
use crate::carleman::{
    decomposition_identity_check, claim_lambda_threshold, energy_identity_check, run_suite, CarlemanSides, Inequality,
    SuiteSetup,
};
use crate::control::{dichotomy_diagnostic, ControlRegion, DiagnosticCurve, HumProblem};
use crate::csv::{write_atomic, Cell, CsvTable};
use crate::error::{LabError, Result};
use crate::flow::{check_assumption, FlowMap, RegionAssumptionReport, RegionShape, Sweep1d, VelocitySpec};
use crate::grid::{Point, SpatialGrid, TimeGrid};
use crate::pde::{AdvectionSpec, BbmCoefficients, Equation, Evolution};
use crate::weights::{check_weight_properties, EtaSweep1d, WeightPropertyReport};

/// Smallest admissible spatial node count and time step count.
pub const MIN_NODES: usize = 8;
pub const MIN_STEPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    BeamBzk,
    BeamBbm,
    Hum,
    Dichotomy,
    Carleman,
    FlowCheck,
    WeightsCheck,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::BeamBzk,
        Family::BeamBbm,
        Family::Hum,
        Family::Dichotomy,
        Family::Carleman,
        Family::FlowCheck,
        Family::WeightsCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Family::BeamBzk => "beam-bzk",
            Family::BeamBbm => "beam-bbm",
            Family::Hum => "hum",
            Family::Dichotomy => "dichotomy",
            Family::Carleman => "carleman",
            Family::FlowCheck => "flow-check",
            Family::WeightsCheck => "weights-check",
        }
    }
}

impl FromStr for Family {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| LabError::Config {
            field: "family".into(),
            message: format!(
                "unknown family `{s}`; expected one of {}",
                Family::ALL.map(|f| f.name()).join(", ")
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamBzkConfig {
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    pub epsilon_max: f64,
    pub k: u32,
    pub xi_bar: f64,
    pub x0: f64,
    pub delta: f64,
    pub omega: [f64; 2],
}

impl Default for BeamBzkConfig {
    fn default() -> Self {
        Self {
            nodes: 1999,
            steps: 100,
            horizon: 1.0,
            epsilons: vec![0.02, 0.01, 0.005, 0.0025],
            epsilon_max: 0.05,
            k: 1,
            xi_bar: 1.0,
            x0: 0.65,
            delta: 0.2,
            omega: [0.1, 0.35],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamBbmConfig {
    /// `Ω = (0, length)`.
    pub length: f64,
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    /// Strictly decreasing.
    pub hs: Vec<f64>,
    pub xi0: f64,
    pub x0: f64,
    pub delta: f64,
    pub omega: [f64; 2],
    pub advection: AdvectionSpec,
    pub convention: CorrectorConvention,
}

impl Default for BeamBbmConfig {
    fn default() -> Self {
        Self {
            length: 2.0,
            nodes: 3999,
            steps: 100,
            horizon: 1.0,
            hs: vec![0.04, 0.02, 0.01, 0.005],
            xi0: 1.0,
            x0: 1.4,
            delta: 0.5,
            omega: [0.2, 0.8],
            advection: AdvectionSpec::Constant { a: [1.0, 0.0] },
            convention: CorrectorConvention::Printed,
        }
    }
}

/// Control region on `Ω = (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum RegionConfig {
    /// The standard sweep of `(−a, a)` across `Ω` over `[0, T]`.
    Sweep { halfwidth: f64 },
    Fixed { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumConfig {
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    pub beta: f64,
    pub region: RegionConfig,
    /// Mollification radius of `χ`.
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// `z0 = sin(kπx)`.
    pub z0_mode: u32,
    pub advection: AdvectionSpec,
}

impl Default for HumConfig {
    fn default() -> Self {
        Self {
            nodes: 199,
            steps: 400,
            horizon: 1.0,
            beta: 1e-8,
            region: RegionConfig::Sweep { halfwidth: 0.15 },
            rho: 0.05,
            tol: crate::control::CG_TOL,
            max_iter: crate::control::CG_MAX_ITER,
            z0_mode: 1,
            advection: AdvectionSpec::Constant { a: [1.0, 0.0] },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DichotomyConfig {
    pub equations: Vec<Equation>,
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    /// Strictly decreasing.
    pub betas: Vec<f64>,
    pub fixed: [f64; 2],
    pub halfwidth: f64,
    pub rho: f64,
    pub z0_mode: u32,
    pub advection: AdvectionSpec,
}

impl Default for DichotomyConfig {
    fn default() -> Self {
        Self {
            equations: vec![Equation::Bzk, Equation::Bbm],
            nodes: 199,
            steps: 400,
            horizon: 1.0,
            betas: vec![1e-4, 1e-5, 1e-6, 1e-7, 1e-8],
            fixed: [0.3, 0.5],
            halfwidth: 0.15,
            rho: 0.05,
            z0_mode: 1,
            advection: AdvectionSpec::Constant { a: [1.0, 0.0] },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlemanConfig {
    pub nodes: usize,
    pub steps: usize,
    pub lambda: f64,
    pub s0: f64,
    pub tau0: f64,
    pub samples: usize,
    pub modes: usize,
    /// Allowed growth of the suite max ratio when the parameter doubles.
    pub stability_factor: f64,
    /// Strictly increasing.
    pub claim_lambdas: Vec<f64>,
    pub claim_tau: f64,
    pub identity_nodes: usize,
    pub identity_levels: usize,
    pub identity_lambda: f64,
    pub identity_tau: f64,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        Self {
            nodes: 99,
            steps: 100,
            lambda: 1.0,
            s0: 4.0,
            tau0: 16.0,
            samples: 20,
            modes: 6,
            stability_factor: 1.1,
            claim_lambdas: vec![4.0, 8.0, 16.0, 32.0, 64.0, 128.0],
            claim_tau: 10.0,
            identity_nodes: 159,
            identity_levels: 2,
            identity_lambda: 3.0,
            identity_tau: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowCheckConfig {
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    /// Defaults to the sweep velocity `F ≡ 1/T`.
    pub velocity: Option<VelocitySpec>,
    pub halfwidth: f64,
    pub dt_flow: f64,
}

impl Default for FlowCheckConfig {
    fn default() -> Self {
        Self { nodes: 99, steps: 100, horizon: 1.0, velocity: None, halfwidth: 0.15, dt_flow: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsCheckConfig {
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    pub halfwidth: f64,
    pub tau_margin: f64,
    pub omega1_margin: f64,
    /// Span of `η` below its peak.
    pub span: f64,
    pub dt_flow: f64,
}

impl Default for WeightsCheckConfig {
    fn default() -> Self {
        Self { nodes: 99, steps: 100, horizon: 1.0, halfwidth: 0.15, tau_margin: 0.15, omega1_margin: 0.03, span: 0.2, dt_flow: 1e-3 }
    }
}

/// The whole run as one JSON document; every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Equation of the `hum` family.
    pub equation: Equation,
    /// Families run without `--only`.
    pub experiments: Vec<Family>,
    pub beam_bzk: BeamBzkConfig,
    pub beam_bbm: BeamBbmConfig,
    pub hum: HumConfig,
    pub dichotomy: DichotomyConfig,
    pub carleman: CarlemanConfig,
    pub flow_check: FlowCheckConfig,
    pub weights_check: WeightsCheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("lab-output"),
            equation: Equation::Bzk,
            experiments: Family::ALL.to_vec(),
            beam_bzk: BeamBzkConfig::default(),
            beam_bbm: BeamBbmConfig::default(),
            hum: HumConfig::default(),
            dichotomy: DichotomyConfig::default(),
            carleman: CarlemanConfig::default(),
            flow_check: FlowCheckConfig::default(),
            weights_check: WeightsCheckConfig::default(),
        }
    }
}

fn field_err(field: &str, message: impl Into<String>) -> LabError {
    LabError::Config { field: field.into(), message: message.into() }
}

struct Checker<'a> {
    section: &'a str,
}

impl Checker<'_> {
    fn path(&self, f: &str) -> String {
        format!("{}.{f}", self.section)
    }

    fn nodes(&self, f: &str, v: usize) -> Result<()> {
        if v < MIN_NODES {
            return Err(field_err(&self.path(f), format!("must be at least {MIN_NODES}, got {v}")));
        }
        Ok(())
    }

    fn steps(&self, f: &str, v: usize) -> Result<()> {
        if v < MIN_STEPS {
            return Err(field_err(&self.path(f), format!("must be at least {MIN_STEPS}, got {v}")));
        }
        Ok(())
    }

    fn positive(&self, f: &str, v: f64) -> Result<()> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(field_err(&self.path(f), format!("must be positive and finite, got {v}")));
        }
        Ok(())
    }

    fn interval(&self, f: &str, v: [f64; 2], lo: f64, hi: f64) -> Result<()> {
        if !(v[0] < v[1] && v[0] >= lo && v[1] <= hi) {
            return Err(field_err(&self.path(f), format!("must satisfy {lo} ≤ lo < hi ≤ {hi}, got {v:?}")));
        }
        Ok(())
    }

    fn decreasing(&self, f: &str, v: &[f64]) -> Result<()> {
        if v.is_empty() {
            return Err(field_err(&self.path(f), "must be nonempty"));
        }
        if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(field_err(&self.path(f), "entries must be positive and finite"));
        }
        if v.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(field_err(&self.path(f), "must be strictly decreasing"));
        }
        Ok(())
    }

    fn increasing(&self, f: &str, v: &[f64]) -> Result<()> {
        if v.is_empty() {
            return Err(field_err(&self.path(f), "must be nonempty"));
        }
        if v.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(field_err(&self.path(f), "must be strictly increasing"));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Parse and validate.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| field_err("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| field_err("<path>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Field-level checks; the first violation is returned.
    pub fn validate(&self) -> Result<()> {
        if self.output_dir.as_os_str().is_empty() {
            return Err(field_err("output_dir", "must be nonempty"));
        }
        if self.experiments.is_empty() {
            return Err(field_err("experiments", "must be nonempty"));
        }
        let c = Checker { section: "beam_bzk" };
        let b = &self.beam_bzk;
        c.nodes("nodes", b.nodes)?;
        c.steps("steps", b.steps)?;
        c.positive("horizon", b.horizon)?;
        c.decreasing("epsilons", &b.epsilons)?;
        c.positive("epsilon_max", b.epsilon_max)?;
        if b.epsilons[0] > b.epsilon_max {
            return Err(field_err("beam_bzk.epsilons", "entries must not exceed epsilon_max"));
        }
        c.positive("delta", b.delta)?;
        c.interval("omega", b.omega, 0.0, 1.0)?;
        if b.xi_bar == 0.0 {
            return Err(field_err("beam_bzk.xi_bar", "must be nonzero"));
        }

        let c = Checker { section: "beam_bbm" };
        let b = &self.beam_bbm;
        c.positive("length", b.length)?;
        c.nodes("nodes", b.nodes)?;
        c.steps("steps", b.steps)?;
        c.positive("horizon", b.horizon)?;
        c.decreasing("hs", &b.hs)?;
        c.positive("delta", b.delta)?;
        c.interval("omega", b.omega, 0.0, b.length)?;
        if b.xi0 == 0.0 {
            return Err(field_err("beam_bbm.xi0", "must be nonzero"));
        }

        let c = Checker { section: "hum" };
        let h = &self.hum;
        c.nodes("nodes", h.nodes)?;
        c.steps("steps", h.steps)?;
        c.positive("horizon", h.horizon)?;
        c.positive("beta", h.beta)?;
        c.positive("rho", h.rho)?;
        c.positive("tol", h.tol)?;
        if h.max_iter == 0 {
            return Err(field_err("hum.max_iter", "must be positive"));
        }
        if h.z0_mode == 0 {
            return Err(field_err("hum.z0_mode", "must be positive"));
        }
        match h.region {
            RegionConfig::Sweep { halfwidth } => c.positive("region.halfwidth", halfwidth)?,
            RegionConfig::Fixed { lo, hi } => c.interval("region", [lo, hi], f64::NEG_INFINITY, f64::INFINITY)?,
        }

        let c = Checker { section: "dichotomy" };
        let d = &self.dichotomy;
        if d.equations.is_empty() {
            return Err(field_err("dichotomy.equations", "must be nonempty"));
        }
        c.nodes("nodes", d.nodes)?;
        c.steps("steps", d.steps)?;
        c.positive("horizon", d.horizon)?;
        c.decreasing("betas", &d.betas)?;
        c.interval("fixed", d.fixed, 0.0, 1.0)?;
        c.positive("halfwidth", d.halfwidth)?;
        c.positive("rho", d.rho)?;
        if d.z0_mode == 0 {
            return Err(field_err("dichotomy.z0_mode", "must be positive"));
        }

        let c = Checker { section: "carleman" };
        let k = &self.carleman;
        c.nodes("nodes", k.nodes)?;
        c.steps("steps", k.steps)?;
        c.positive("lambda", k.lambda)?;
        c.positive("s0", k.s0)?;
        c.positive("tau0", k.tau0)?;
        if k.samples == 0 {
            return Err(field_err("carleman.samples", "must be positive"));
        }
        if k.modes == 0 {
            return Err(field_err("carleman.modes", "must be positive"));
        }
        c.positive("stability_factor", k.stability_factor)?;
        c.increasing("claim_lambdas", &k.claim_lambdas)?;
        c.positive("claim_tau", k.claim_tau)?;
        c.nodes("identity_nodes", k.identity_nodes)?;
        if k.identity_levels == 0 {
            return Err(field_err("carleman.identity_levels", "must be positive"));
        }

        let c = Checker { section: "flow_check" };
        let f = &self.flow_check;
        c.nodes("nodes", f.nodes)?;
        c.steps("steps", f.steps)?;
        c.positive("horizon", f.horizon)?;
        c.positive("halfwidth", f.halfwidth)?;
        c.positive("dt_flow", f.dt_flow)?;

        let c = Checker { section: "weights_check" };
        let w = &self.weights_check;
        c.nodes("nodes", w.nodes)?;
        c.steps("steps", w.steps)?;
        c.positive("horizon", w.horizon)?;
        c.positive("halfwidth", w.halfwidth)?;
        c.positive("omega1_margin", w.omega1_margin)?;
        c.positive("span", w.span)?;
        c.positive("dt_flow", w.dt_flow)?;
        if !(w.tau_margin > 0.0 && w.tau_margin < 1.0f64.min(0.5 * w.horizon)) {
            return Err(field_err("weights_check.tau_margin", "must lie in (0, min(1, T/2))"));
        }
        Ok(())
    }
}

/// One family's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub family: Family,
    pub ok: bool,
    pub error: Option<String>,
    pub outputs: Vec<PathBuf>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub experiments: Vec<ExperimentRecord>,
    pub seconds: f64,
}

impl RunManifest {
    pub fn all_ok(&self) -> bool {
        self.experiments.iter().all(|e| e.ok)
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Run the families of `config` (or only `only`) and write the manifest.
pub fn run(config: &ExperimentConfig, only: Option<Family>) -> Result<RunManifest> {
    config.validate()?;
    let start = Instant::now();
    let families = match only {
        Some(f) => vec![f],
        None => config.experiments.clone(),
    };
    std::fs::create_dir_all(&config.output_dir)?;
    let mut records = Vec::new();
    for family in families {
        let t0 = Instant::now();
        let outcome = run_family(config, family).and_then(|tables| {
            let mut paths = Vec::new();
            for (name, table) in tables {
                let p = config.output_dir.join(name);
                write_atomic(&p, table.render().as_bytes())?;
                paths.push(p);
            }
            Ok(paths)
        });
        let seconds = t0.elapsed().as_secs_f64();
        records.push(match outcome {
            Ok(outputs) => ExperimentRecord { family, ok: true, error: None, outputs, seconds },
            Err(e) => ExperimentRecord { family, ok: false, error: Some(e.to_string()), outputs: Vec::new(), seconds },
        });
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        experiments: records,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_atomic(&config.output_dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// The tables of one family, not yet written.
pub fn run_family(config: &ExperimentConfig, family: Family) -> Result<Vec<(String, CsvTable)>> {
    match family {
        Family::BeamBzk => {
            let r = beam_bzk(&config.beam_bzk)?;
            Ok(vec![("beam_bzk.csv".into(), beam_table(&r, "epsilon", "parseval_norm")?)])
        }
        Family::BeamBbm => {
            let r = beam_bbm(&config.beam_bbm)?;
            Ok(vec![("beam_bbm.csv".into(), beam_table(&r, "h", "residual_norm")?)])
        }
        Family::Hum => hum(config),
        Family::Dichotomy => {
            let mut out = Vec::new();
            let mut summary = CsvTable::new(["equation", "growth_fixed", "growth_moving"]);
            for &eq in &config.dichotomy.equations {
                let curve = dichotomy(&config.dichotomy, eq)?;
                summary.push(vec![eq.name().into(), curve.growth_fixed.into(), curve.growth_moving.into()])?;
                out.push((format!("dichotomy_{}.csv", eq.name()), curve_table(&curve)?));
            }
            out.push(("dichotomy_summary.csv".into(), summary));
            Ok(out)
        }
        Family::Carleman => carleman(&config.carleman, config.seed),
        Family::FlowCheck => {
            let r = flow_check(&config.flow_check)?;
            Ok(vec![("flow_check.csv".into(), assumption_table(&r)?)])
        }
        Family::WeightsCheck => {
            let r = weights_check(&config.weights_check)?;
            Ok(vec![("weights_check.csv".into(), weights_table(&r)?)])
        }
    }
}

pub fn beam_bzk(c: &BeamBzkConfig) -> Result<BeamReport> {
    let grid = SpatialGrid::new_1d(0.0, 1.0, c.nodes)?;
    let time = TimeGrid::new(c.horizon, c.steps)?;
    let base = BzkBeamParams {
        epsilon: c.epsilons[0],
        xi_bar: [c.xi_bar, 0.0],
        x0: [c.x0, 0.0],
        k: c.k,
        delta: c.delta,
        dim: 1,
    };
    let omega = RegionShape::Interval { lo: c.omega[0], hi: c.omega[1] };
    bzk_beam_sweep(&c.epsilons, &base, &omega, &grid, &time, c.epsilon_max)
}

pub fn beam_bbm(c: &BeamBbmConfig) -> Result<BeamReport> {
    let grid = SpatialGrid::new_1d(0.0, c.length, c.nodes)?;
    let time = TimeGrid::new(c.horizon, c.steps)?;
    let a = BbmCoefficients::from_spec(&c.advection, grid, time)?;
    let base = WkbBeamParams {
        h: c.hs[0],
        xi0: [c.xi0, 0.0],
        x0: [c.x0, 0.0],
        delta: c.delta,
        dim: 1,
        convention: c.convention,
    };
    let omega = RegionShape::Interval { lo: c.omega[0], hi: c.omega[1] };
    bbm_beam_sweep(&c.hs, &base, &omega, &a)
}

/// Rows per sweep member and, with enough members, a `slope` footer.
pub fn beam_table(r: &BeamReport, param: &str, aux: &str) -> Result<CsvTable> {
    let mut t = CsvTable::new([param, "norm_initial", "norm_localized", "norm_correction", "ratio", aux]);
    for row in &r.rows {
        t.push(vec![
            row.param.into(),
            row.norm_initial.into(),
            row.norm_localized.into(),
            row.norm_correction.into(),
            row.ratio.into(),
            row.norm_aux.into(),
        ])?;
    }
    if let Some(s) = r.slopes {
        t.push(vec!["slope".into(), s.initial.into(), s.localized.into(), s.correction.into(), s.ratio.into(), s.aux.into()])?;
    }
    Ok(t)
}

fn evolution(eq: Equation, grid: SpatialGrid, time: TimeGrid, advection: &AdvectionSpec) -> Result<Evolution> {
    match eq {
        Equation::Bzk => Evolution::bzk(grid, time),
        Equation::Bbm => Evolution::bbm(grid, time, BbmCoefficients::from_spec(advection, grid, time)?),
    }
}

fn sine(grid: &SpatialGrid, mode: u32) -> Vec<f64> {
    grid.points().map(|p: Point| (mode as f64 * PI * p[0]).sin()).collect()
}

fn hum(config: &ExperimentConfig) -> Result<Vec<(String, CsvTable)>> {
    let c = &config.hum;
    let grid = SpatialGrid::new_1d(0.0, 1.0, c.nodes)?;
    let time = TimeGrid::new(c.horizon, c.steps)?;
    let ev = evolution(config.equation, grid, time, &c.advection)?;
    let (region, kind) = match c.region {
        RegionConfig::Sweep { halfwidth } => {
            (ControlRegion::sweep(&Sweep1d { halfwidth, horizon: c.horizon }, grid, time, c.rho)?, "moving")
        }
        RegionConfig::Fixed { lo, hi } => (ControlRegion::fixed(RegionShape::Interval { lo, hi }, grid, time, c.rho)?, "fixed"),
    };
    let mut problem: HumProblem = region.problem(&ev, &sine(&grid, c.z0_mode), c.beta)?;
    problem.tol = c.tol;
    problem.max_iter = c.max_iter;
    let s = problem.solve()?;
    let mut summary = CsvTable::new([
        "equation",
        "region_kind",
        "beta",
        "cost",
        "final_norm",
        "relative_final",
        "cg_iters",
        "converged",
        "j_opt",
        "penalty_bound",
    ]);
    summary.push(vec![
        config.equation.name().into(),
        kind.into(),
        c.beta.into(),
        s.cost.into(),
        s.final_norm.into(),
        s.relative_final().into(),
        s.cg_iterations.into(),
        (s.status == crate::control::CgStatus::Converged).into(),
        s.j_opt.into(),
        s.penalty_bound_holds(c.beta).into(),
    ])?;
    let mut history = CsvTable::new(["iteration", "relative_residual", "value"]);
    for (i, (r, v)) in s.residual_history.iter().zip(&s.value_history).enumerate() {
        history.push(vec![i.into(), (*r).into(), (*v).into()])?;
    }
    Ok(vec![("hum.csv".into(), summary), ("hum_history.csv".into(), history)])
}

pub fn dichotomy(c: &DichotomyConfig, eq: Equation) -> Result<DiagnosticCurve> {
    let grid = SpatialGrid::new_1d(0.0, 1.0, c.nodes)?;
    let time = TimeGrid::new(c.horizon, c.steps)?;
    let ev = evolution(eq, grid, time, &c.advection)?;
    let fixed = ControlRegion::fixed(RegionShape::Interval { lo: c.fixed[0], hi: c.fixed[1] }, grid, time, c.rho)?;
    let moving = ControlRegion::sweep(&Sweep1d { halfwidth: c.halfwidth, horizon: c.horizon }, grid, time, c.rho)?;
    dichotomy_diagnostic(&ev, &sine(&grid, c.z0_mode), &fixed, &moving, &c.betas)
}

pub fn curve_table(curve: &DiagnosticCurve) -> Result<CsvTable> {
    let mut t = CsvTable::new(["beta", "region_kind", "cost", "final_norm", "cg_iters"]);
    for p in curve.fixed.iter().chain(&curve.moving) {
        t.push(vec![p.beta.into(), p.region_kind.name().into(), p.cost.into(), p.final_norm.into(), p.cg_iters.into()])?;
    }
    Ok(t)
}

/// One row per sample and parameter, one column per term.
pub fn sides_table(sides: &[(f64, usize, &CarlemanSides)]) -> Result<CsvTable> {
    let names: Vec<String> = match sides.first() {
        Some((_, _, s)) => s.lhs_terms.iter().chain(&s.rhs_terms).map(|t| t.name.clone()).collect(),
        None => Vec::new(),
    };
    let mut header = vec!["parameter".to_string(), "sample".into()];
    header.extend(names.iter().cloned());
    header.extend(["lhs", "rhs", "ratio", "log_scale"].map(String::from));
    let mut t = CsvTable::new(header);
    for &(param, i, s) in sides {
        let mut row: Vec<Cell> = vec![param.into(), i.into()];
        row.extend(s.lhs_terms.iter().chain(&s.rhs_terms).map(|t| Cell::from(t.value)));
        row.extend([s.lhs, s.rhs, s.ratio, s.log_scale].map(Cell::from));
        t.push(row)?;
    }
    Ok(t)
}

fn carleman(c: &CarlemanConfig, seed: u64) -> Result<Vec<(String, CsvTable)>> {
    let mut setup = SuiteSetup::standard_sweep(c.nodes, c.steps, c.lambda, c.s0, c.tau0, seed)?;
    setup.samples = c.samples;
    setup.modes = c.modes;
    let mut out = Vec::new();
    let mut summary = CsvTable::new(["inequality", "parameter", "max_ratio", "max_ratio_doubled", "stable"]);
    for which in Inequality::ALL {
        let r = run_suite(&setup, which)?;
        summary.push(vec![
            which.name().into(),
            r.parameter.into(),
            r.max_ratio.into(),
            r.max_ratio_doubled.into(),
            r.stable(c.stability_factor).into(),
        ])?;
        let mut rows: Vec<(f64, usize, &CarlemanSides)> = r.sides.iter().enumerate().map(|(i, s)| (r.parameter, i, s)).collect();
        rows.extend(r.sides_doubled.iter().enumerate().map(|(i, s)| (2.0 * r.parameter, i, s)));
        out.push((format!("carleman_{}.csv", which.name()), sides_table(&rows)?));
    }
    out.insert(0, ("carleman_suites.csv".into(), summary));

    let sweep = Sweep1d::standard(1.0);
    let eta = EtaSweep1d::for_sweep(&sweep, 0.2);
    let t_mid = 0.5;
    let mut decomp = CsvTable::new(["nodes", "weighted_laplacian", "m1", "m2", "cross", "residual", "order"]);
    let mut energy = CsvTable::new(["nodes", "gradient", "potential", "source", "flux", "residual", "order"]);
    let z = |p: Point| (PI * p[0]).sin() * (2.0 * p[0]).exp();
    let g = |p: Point| (3.0 * p[0]).cos() + p[0];
    let big = |p: Point| (PI * p[0]).sin() * (1.0 - 0.5 * p[0]);
    let mut n = c.identity_nodes;
    let (mut prev_d, mut prev_e) = (f64::NAN, f64::NAN);
    for _ in 0..=c.identity_levels {
        let grid = SpatialGrid::new_1d(0.0, 1.0, n)?;
        let zs: Vec<f64> = grid.points().map(z).collect();
        let d = decomposition_identity_check(&grid, &zs, &eta, t_mid, c.identity_lambda, c.identity_tau)?;
        let e = energy_identity_check(&grid, &g, &big, &eta, t_mid, c.identity_lambda, c.identity_tau)?;
        decomp.push(vec![
            n.into(),
            d.weighted_laplacian.into(),
            d.m1.into(),
            d.m2.into(),
            d.cross.into(),
            d.residual.into(),
            (prev_d / d.residual).log2().into(),
        ])?;
        energy.push(vec![
            n.into(),
            e.gradient.into(),
            e.potential.into(),
            e.source.into(),
            e.flux.into(),
            e.residual.into(),
            (prev_e / e.residual).log2().into(),
        ])?;
        prev_d = d.residual;
        prev_e = e.residual;
        n = 2 * n + 1;
    }
    out.push(("decomposition.csv".into(), decomp));
    out.push(("energy_identity.csv".into(), energy));

    let grid = *setup.weights.eta.grid();
    let time = *setup.weights.eta.time();
    let omega1 = crate::flow::rasterize_region(&sweep.flow(1e-3)?, sweep.omega0().dilate(0.03), &grid, &time)?;
    let (_, reports) = claim_lambda_threshold(&eta, &omega1, &c.claim_lambdas, c.claim_tau)?;
    let mut claim = CsvTable::new(["lambda", "tau", "worst_margin", "implied_a", "on_region_max", "holds"]);
    for r in reports {
        claim.push(vec![r.lambda.into(), r.tau.into(), r.worst_margin.into(), r.implied_a.into(), r.on_region_max.into(), r.holds().into()])?;
    }
    out.push(("claim.csv".into(), claim));
    Ok(out)
}

pub fn flow_check(c: &FlowCheckConfig) -> Result<RegionAssumptionReport> {
    let sweep = Sweep1d { halfwidth: c.halfwidth, horizon: c.horizon };
    let grid = SpatialGrid::new_1d(0.0, 1.0, c.nodes)?;
    let time = TimeGrid::new(c.horizon, c.steps)?;
    let velocity = c.velocity.clone().unwrap_or_else(|| sweep.velocity());
    let flow = FlowMap::new(velocity, 1, c.dt_flow)?;
    check_assumption(&flow, sweep.omega0(), &grid, &time, |t| sweep.gamma(t))
}

pub fn assumption_table(r: &RegionAssumptionReport) -> Result<CsvTable> {
    let mut t = CsvTable::new(["property", "holds", "detail"]);
    let opt = |v: Option<f64>| v.map_or("none".to_string(), crate::csv::format_g12);
    t.push(vec!["A3a".into(), r.a3a.into(), format!("first_failure={}", opt(r.a3a_first_failure)).into()])?;
    t.push(vec!["A3b".into(), r.a3b.into(), format!("uncovered={}", r.a3b_uncovered).into()])?;
    t.push(vec!["A3c".into(), r.a3c.into(), format!("t1={};t2={}", opt(r.t1), opt(r.t2)).into()])?;
    let max_components = r.component_counts.iter().copied().max().unwrap_or(0);
    t.push(vec!["A3d".into(), r.a3d.into(), format!("max_components={max_components}").into()])?;
    t.push(vec![
        "A3e".into(),
        r.a3e.into(),
        format!("survivors={};refined={}", r.a3e_survivors, r.a3e_survivors_refined).into(),
    ])?;
    Ok(t)
}

pub fn weights_check(c: &WeightsCheckConfig) -> Result<WeightPropertyReport> {
    let sweep = Sweep1d { halfwidth: c.halfwidth, horizon: c.horizon };
    let grid = SpatialGrid::new_1d(0.0, 1.0, c.nodes)?;
    let time = TimeGrid::new(c.horizon, c.steps)?;
    let eta = EtaSweep1d::for_sweep(&sweep, c.span);
    let flow = sweep.flow(c.dt_flow)?;
    check_weight_properties(&eta, &flow, sweep.omega0().dilate(c.omega1_margin), &grid, &time, c.tau_margin)
}

pub fn weights_table(r: &WeightPropertyReport) -> Result<CsvTable> {
    let mut t = CsvTable::new(["property", "margin", "holds"]);
    let margins = [r.p1_margin, r.p2_margin, r.p3_margin, r.p4_margin, r.p5_margin, r.p6_margin];
    for (i, (m, ok)) in margins.iter().zip(r.passes()).enumerate() {
        t.push(vec![format!("P{}", i + 1).into(), (*m).into(), ok.into()])?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = c.to_json().unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn field_level_errors() {
        let cases = [
            (r#"{"beam_bzk": {"epsilons": []}}"#, "beam_bzk.epsilons"),
            (r#"{"beam_bbm": {"hs": [0.01, 0.02]}}"#, "beam_bbm.hs"),
            (r#"{"hum": {"beta": 0}}"#, "hum.beta"),
            (r#"{"dichotomy": {"nodes": 3}}"#, "dichotomy.nodes"),
            (r#"{"carleman": {"claim_lambdas": [2, 1]}}"#, "carleman.claim_lambdas"),
            (r#"{"weights_check": {"tau_margin": 0.7}}"#, "weights_check.tau_margin"),
            (r#"{"hum": {"bogus": 1}}"#, "<document>"),
        ];
        for (text, field) in cases {
            match ExperimentConfig::from_json(text) {
                Err(LabError::Config { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn family_names_parse() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.name()));
        }
        assert!("beams".parse::<Family>().is_err());
    }

    #[test]
    fn zero_flow_fails_cover() {
        let c = FlowCheckConfig { velocity: Some(VelocitySpec::Zero), ..Default::default() };
        let r = flow_check(&c).unwrap();
        assert!(!r.a3b && !r.a3e);
        let t = assumption_table(&r).unwrap();
        assert!(t.render().contains("A3b,false"));
        assert!(flow_check(&FlowCheckConfig::default()).unwrap().all_hold());
    }

    #[test]
    fn fast_families_run_and_repeat() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig { output_dir: dir.path().to_path_buf(), ..Default::default() };
        cfg.experiments = vec![Family::FlowCheck, Family::WeightsCheck, Family::Hum];
        cfg.hum.nodes = 63;
        cfg.hum.steps = 40;
        cfg.hum.beta = 1e-4;
        let m = run(&cfg, None).unwrap();
        assert!(m.all_ok(), "{m:?}");
        let read = |m: &RunManifest| -> Vec<Vec<u8>> {
            m.experiments.iter().flat_map(|e| e.outputs.iter().map(|p| std::fs::read(p).unwrap())).collect()
        };
        let first = read(&m);
        assert_eq!(first.len(), 4);
        let again = run(&cfg, None).unwrap();
        assert_eq!(first, read(&again));
        assert!(dir.path().join(MANIFEST_NAME).exists());
    }

    #[test]
    fn failure_is_recorded_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig { output_dir: dir.path().to_path_buf(), ..Default::default() };
        cfg.experiments = vec![Family::Hum, Family::FlowCheck];
        // χ needs ρ ≥ 2h; the Hum family fails at run time, flow-check still runs.
        cfg.hum.nodes = 31;
        cfg.hum.steps = 10;
        cfg.hum.rho = 0.01;
        let m = run(&cfg, None).unwrap();
        assert!(!m.experiments[0].ok && m.experiments[0].error.is_some());
        assert!(m.experiments[1].ok);
        assert!(!m.all_ok());
    }
}
