//! Experiment configuration, single runs, convergence studies and reports.

use crate::contour::{quadrature_nodes, wood_breakpoints, ContourKind, ContourPlan};
use crate::geometry::{Bump, Harmonic, SurfaceProfile, Variant};
use crate::incident::IncidentField;
use crate::linalg::GmresConfig;
use crate::mesh::{build_cell_mesh, PeriodicCellMesh};
use crate::solver::{default_j_cutoff, solve_bloch_system, BlochSolution, CellOperator, RhsMode, SolverOptions, Strategy};
use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    /// `1.9 + sin(t)/3 - cos(2t)/4`.
    Default,
    Flat,
    Harmonic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub kind: SurfaceKind,
    #[serde(default)]
    pub perturbed: bool,
    /// Flat surface height.
    #[serde(default)]
    pub height: Option<f64>,
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default)]
    pub harmonics: Option<Vec<Harmonic>>,
    /// Perturbation; the unit bump at the origin when omitted.
    #[serde(default)]
    pub bump: Option<Bump>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncidentKindConfig {
    Green,
    HerglotzUp,
    HerglotzDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidentConfig {
    pub kind: IncidentKindConfig,
    pub k: f64,
    #[serde(default)]
    pub source: Option<[f64; 2]>,
}

fn default_roof() -> f64 {
    4.0
}

fn default_period() -> f64 {
    TAU
}

fn default_contour() -> ContourKind {
    ContourKind::G2
}

fn default_strategy() -> Strategy {
    Strategy::Schur
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub surface: SurfaceConfig,
    pub incident: IncidentConfig,
    #[serde(default = "default_contour")]
    pub contour: ContourKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub mesh_width: f64,
    #[serde(rename = "J", default)]
    pub j: Option<usize>,
    #[serde(default)]
    pub rhs_mode: RhsMode,
    #[serde(default = "default_strategy")]
    pub solver: Strategy,
    #[serde(default)]
    pub gmres_tol: Option<f64>,
    #[serde(default)]
    pub gmres_restart: Option<usize>,
    #[serde(default)]
    pub gmres_max_iter: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(rename = "H", default = "default_roof")]
    pub roof: f64,
    #[serde(default = "default_period")]
    pub period: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let path = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
                .unwrap_or("$")
                .to_string();
            Error::config(path, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn k(&self) -> f64 {
        self.incident.k
    }

    pub fn profile(&self) -> Result<SurfaceProfile> {
        let s = &self.surface;
        let mut p = match s.kind {
            SurfaceKind::Default => SurfaceProfile {
                period: self.period,
                roof: self.roof,
                ..SurfaceProfile::default_base()
            },
            SurfaceKind::Flat => {
                let h = s
                    .height
                    .ok_or_else(|| Error::config("surface.height", "flat surface needs a height"))?;
                SurfaceProfile::flat(h, self.roof, self.period)
            }
            SurfaceKind::Harmonic => SurfaceProfile {
                period: self.period,
                c0: s.c0.ok_or_else(|| Error::config("surface.c0", "harmonic surface needs c0"))?,
                harmonics: s.harmonics.clone().unwrap_or_default(),
                bump: None,
                roof: self.roof,
            },
        };
        if s.perturbed {
            p.bump = Some(s.bump.unwrap_or_default());
        } else if s.bump.is_some() {
            return Err(Error::config("surface.bump", "bump given for an unperturbed surface"));
        }
        p.validate().map_err(|e| Error::config("surface", e.to_string()))?;
        Ok(p)
    }

    pub fn incident_field(&self) -> Result<IncidentField> {
        let k = self.incident.k;
        let f = match self.incident.kind {
            IncidentKindConfig::Green => {
                let y = self
                    .incident
                    .source
                    .ok_or_else(|| Error::config("incident.source", "green incidence needs a source"))?;
                IncidentField::green(k, y)
            }
            IncidentKindConfig::HerglotzUp => IncidentField::herglotz_up(k),
            IncidentKindConfig::HerglotzDown => IncidentField::herglotz_down(k),
        };
        f.validate(self.roof)?;
        Ok(f)
    }

    pub fn j_cutoff(&self) -> usize {
        self.j.unwrap_or_else(|| default_j_cutoff(self.incident.k, self.period))
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut o = SolverOptions::new(self.incident.k, self.period);
        o.strategy = self.solver;
        o.rhs_mode = self.rhs_mode;
        o.j_cutoff = self.j_cutoff();
        let d = GmresConfig::default();
        o.gmres = GmresConfig {
            tol: self.gmres_tol.unwrap_or(d.tol),
            restart: self.gmres_restart.unwrap_or(d.restart),
            max_iter: self.gmres_max_iter.unwrap_or(d.max_iter),
        };
        if let Some(t) = self.gmres_tol {
            o.schur_tol = o.schur_tol.min(t);
        }
        o
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.incident.k > 0.0) || !self.incident.k.is_finite() {
            return Err(Error::config("incident.k", "wavenumber must be positive"));
        }
        if self.n < 4 || self.n % 2 != 0 {
            return Err(Error::config("N", format!("N must be even and at least 4, got {}", self.n)));
        }
        if !(self.period > 0.0) {
            return Err(Error::config("period", "period must be positive"));
        }
        if !(self.mesh_width > 0.0) {
            return Err(Error::config("mesh_width", "mesh width must be positive"));
        }
        if let Some(t) = self.gmres_tol {
            if !(t > 0.0) {
                return Err(Error::config("gmres_tol", "tolerance must be positive"));
            }
        }
        if self.gmres_restart == Some(0) {
            return Err(Error::config("gmres_restart", "restart length must be positive"));
        }
        let profile = self.profile()?;
        let (_, zmax) = profile.height_range(Variant::Base);
        if self.mesh_width >= self.roof - zmax {
            return Err(Error::config(
                "mesh_width",
                format!("mesh width must be below H - max ζ = {}", self.roof - zmax),
            ));
        }
        self.incident_field()?;
        Ok(())
    }

    pub fn with_n(&self, n: usize) -> Self {
        ExperimentConfig { n, ..self.clone() }
    }
}

/// Composite-trapezoid `L²` error on the roof, relative to `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceError {
    pub value: f64,
    /// False when `b` vanishes and `value` is the absolute error.
    pub relative: bool,
}

/// `‖a - b‖ / ‖b‖` with composite trapezoid weights on a uniform grid of
/// spacing `dx` (endpoints carry half weight).
pub fn relative_l2_error(a: &[C64], b: &[C64], dx: f64) -> Result<TraceError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!("traces of length {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    let w = |i: usize| if i == 0 || i == n - 1 { 0.5 * dx } else { dx };
    let num: f64 = (0..n).map(|i| w(i) * (a[i] - b[i]).norm_sqr()).sum();
    let den: f64 = (0..n).map(|i| w(i) * b[i].norm_sqr()).sum();
    if den == 0.0 {
        return Ok(TraceError {
            value: num.sqrt(),
            relative: false,
        });
    }
    Ok(TraceError {
        value: (num / den).sqrt(),
        relative: true,
    })
}

/// Exact `u^s = -u^i` on the roof when the incident field is upward in the
/// whole domain.
pub fn exact_roof_scattered(mesh: &PeriodicCellMesh, profile: &SurfaceProfile, incident: &IncidentField) -> Result<Option<Vec<C64>>> {
    let (zmin, _) = profile.height_range(Variant::Perturbed);
    if !incident.is_upward_above(zmin) {
        return Ok(None);
    }
    mesh.top_nodes()
        .iter()
        .map(|&n| Ok(-crate::incident::incident_field_eval(incident, mesh.nodes[n])?))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Reusable pieces of one configuration family (fixed mesh and k).
pub struct CaseSetup {
    pub profile: SurfaceProfile,
    pub incident: IncidentField,
    pub operator: Arc<CellOperator>,
}

impl CaseSetup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let profile = config.profile()?;
        let incident = config.incident_field()?;
        let mesh = build_cell_mesh(&profile, Variant::Base, config.mesh_width)?;
        let operator = Arc::new(CellOperator::new(&profile, mesh, config.k())?);
        Ok(CaseSetup {
            profile,
            incident,
            operator,
        })
    }

    pub fn plan(&self, config: &ExperimentConfig, n: usize) -> Result<ContourPlan> {
        let bps = wood_breakpoints(config.k(), config.period)?;
        quadrature_nodes(&bps, config.contour, n)
    }

    pub fn solve(&self, config: &ExperimentConfig, n: usize) -> Result<BlochSolution> {
        let plan = self.plan(config, n)?;
        solve_bloch_system(&self.operator, &plan, &self.incident, &config.solver_options())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseSummary {
    pub n: usize,
    pub nodes: usize,
    pub nx: usize,
    pub ny: usize,
    pub h_mesh: f64,
    pub j_cutoff: usize,
    pub strategy: String,
    pub iterations: usize,
    pub residual: f64,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    /// Error against `-u^i` when that is the exact answer.
    pub exact_error: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

fn fmt_num(v: f64) -> String {
    format!("{v:e}")
}

/// Node table `x1,x2,re_u,im_u,re_us,im_us` (physical coordinates).
pub fn solution_csv(solution: &BlochSolution) -> Result<String> {
    let pts = solution.physical_nodes();
    let u = solution.nodal_total()?;
    let us = solution.nodal_scattered()?;
    let mut s = String::from("x1,x2,re_u,im_u,re_us,im_us\n");
    for ((x, a), b) in pts.iter().zip(&u).zip(&us) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_num(x[0]),
            fmt_num(x[1]),
            fmt_num(a.re),
            fmt_num(a.im),
            fmt_num(b.re),
            fmt_num(b.im)
        );
    }
    Ok(s)
}

/// Solves one configuration and writes `solution.csv` and `meta.json` to its
/// output directory, if one is set.
pub fn run_case(config: &ExperimentConfig) -> Result<CaseSummary> {
    let setup = CaseSetup::new(config)?;
    run_case_with(config, &setup)
}

pub fn run_case_with(config: &ExperimentConfig, setup: &CaseSetup) -> Result<CaseSummary> {
    let solution = setup.solve(config, config.n)?;
    let mesh = &setup.operator.mesh;
    let exact = exact_roof_scattered(mesh, &setup.profile, &setup.incident)?;
    let exact_error = match &exact {
        Some(ex) => Some(relative_l2_error(&solution.roof_scattered()?, ex, mesh.dx())?.value),
        None => None,
    };
    let summary = CaseSummary {
        n: config.n,
        nodes: solution.nodes.len(),
        nx: mesh.nx,
        ny: mesh.ny,
        h_mesh: mesh.h_mesh,
        j_cutoff: solution.j_cutoff,
        strategy: solution.stats.strategy.clone(),
        iterations: solution.stats.iterations,
        residual: solution.stats.residual,
        setup_seconds: setup.operator.setup_seconds,
        solve_seconds: solution.stats.seconds,
        exact_error,
        output_dir: config.output_dir.clone(),
    };
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("solution.csv"), solution_csv(&solution)?)?;
        let meta = serde_json::json!({
            "config": config,
            "summary": summary,
            "stats": solution.stats,
            "breakpoints": solution.plan.breakpoints,
        });
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Reference {
    /// `u^s = -u^i`.
    Exact,
    /// Solution at a larger N on the same mesh.
    SelfRef(usize),
}

impl std::str::FromStr for Reference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(Reference::Exact);
        }
        if let Some(n) = s.strip_prefix("self:") {
            let n: usize = n
                .parse()
                .map_err(|_| Error::config("reference", format!("bad reference N in {s:?}")))?;
            return Ok(Reference::SelfRef(n));
        }
        Err(Error::config("reference", format!("expected exact or self:<N>, got {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub rel_err: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log err` against `log N` before any plateau.
    pub slope: Option<f64>,
    pub reference: String,
}

impl ConvergenceReport {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rel_err).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,rel_err,seconds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.3}", r.n, fmt_num(r.rel_err), r.seconds);
        }
        s
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Slope over the leading rows whose error ratio to the previous row stays
/// at or below 0.7.
pub fn pre_plateau_slope(ns: &[usize], errs: &[f64]) -> Option<f64> {
    let mut end = 1;
    while end < errs.len() && errs[end] <= 0.7 * errs[end - 1] {
        end += 1;
    }
    let x: Vec<f64> = ns[..end].iter().map(|&n| n as f64).collect();
    loglog_slope(&x, &errs[..end])
}

/// Solves for each N on one fixed mesh and reports roof errors.
pub fn convergence_study(config: &ExperimentConfig, ns: &[usize], reference: Reference) -> Result<ConvergenceReport> {
    let setup = CaseSetup::new(config)?;
    convergence_study_with(config, &setup, ns, reference)
}

pub fn convergence_study_with(config: &ExperimentConfig, setup: &CaseSetup, ns: &[usize], reference: Reference) -> Result<ConvergenceReport> {
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("N", "N list must be strictly ascending"));
    }
    for &n in ns {
        config.with_n(n).validate()?;
    }
    let mesh = &setup.operator.mesh;
    let (reference_trace, label) = match reference {
        Reference::Exact => {
            let ex = exact_roof_scattered(mesh, &setup.profile, &setup.incident)?.ok_or_else(|| {
                Error::config("reference", "no exact solution: the incident field is not upward in the domain")
            })?;
            (ex, "exact".to_string())
        }
        Reference::SelfRef(nref) => {
            if ns.last().is_some_and(|&m| nref <= m) {
                return Err(Error::config("reference", "reference N must exceed every N in the list"));
            }
            let sol = setup.solve(config, nref)?;
            (sol.roof_scattered()?, format!("self:{nref}"))
        }
    };
    let mut rows = Vec::new();
    for &n in ns {
        let t0 = Instant::now();
        let sol = setup.solve(config, n)?;
        let e = relative_l2_error(&sol.roof_scattered()?, &reference_trace, mesh.dx())?;
        let seconds = t0.elapsed().as_secs_f64();
        log::info!("N = {n}: rel err {:.3e} ({seconds:.1}s)", e.value);
        rows.push(ConvergenceRow {
            n,
            rel_err: e.value,
            seconds,
        });
    }
    let errs: Vec<f64> = rows.iter().map(|r| r.rel_err).collect();
    let report = ConvergenceReport {
        slope: pre_plateau_slope(ns, &errs),
        rows,
        reference: label,
    };
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("convergence.csv"), report.to_csv())?;
    }
    Ok(report)
}

/// Mesh summary of a configuration.
pub fn mesh_info(config: &ExperimentConfig) -> Result<serde_json::Value> {
    let profile = config.profile()?;
    let mesh = build_cell_mesh(&profile, Variant::Base, config.mesh_width)?;
    let bps = wood_breakpoints(config.k(), config.period)?;
    Ok(serde_json::json!({
        "nx": mesh.nx,
        "ny": mesh.ny,
        "nodes": mesh.n_nodes(),
        "triangles": mesh.triangles.len(),
        "unknowns_per_node": mesh.m_free(),
        "h_mesh": mesh.h_mesh,
        "min_edge": mesh.min_edge,
        "roof": mesh.roof,
        "J": config.j_cutoff(),
        "breakpoints": bps,
    }))
}
