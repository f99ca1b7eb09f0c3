//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.

use periscat::contour::*;
use periscat::fem::*;
use periscat::geometry::{Bump, SurfaceProfile, Variant};
use periscat::harness::*;
use periscat::incident::IncidentField;
use periscat::linalg::GmresConfig;
use periscat::mesh::{build_cell_mesh, trace_fourier_matrix};
use periscat::solver::*;
use periscat::C64;
use std::f64::consts::TAU;
use std::sync::Arc;
use std::time::Instant;

struct Check {
    what: String,
    ok: bool,
}

fn check(what: impl Into<String>, ok: bool) -> Check {
    Check { what: what.into(), ok }
}

fn report(id: u32, title: &str, checks: &[Check], t0: Instant) -> bool {
    for c in checks {
        eprintln!("    [{}] {}", if c.ok { "ok" } else { "FAIL" }, c.what);
    }
    let ok = checks.iter().all(|c| c.ok);
    println!(
        "criterion {id} ({title}): {} in {:.1}s",
        if ok { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    ok
}

fn config(surface: &str, incident: &str, contour: &str, rhs: &str, h: f64) -> ExperimentConfig {
    let text = format!(
        r#"{{"surface": {surface}, "incident": {incident}, "contour": "{contour}",
            "N": 8, "mesh_width": {h}, "rhs_mode": "{rhs}"}}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

const BASE: &str = r#"{"kind": "default"}"#;
const PERTURBED: &str = r#"{"kind": "default", "perturbed": true}"#;

fn ratios(e: &[f64]) -> Vec<f64> {
    e.windows(2).map(|w| w[0] / w[1]).collect()
}

fn fmt(e: &[f64]) -> String {
    e.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(", ")
}

fn criterion_1_modal_rhs_reproduces_exact_solution() -> bool {
    let t0 = Instant::now();
    let mut checks = Vec::new();
    let up = r#"{"kind": "herglotz-up", "k": 1.4142135623730951}"#;
    let green = r#"{"kind": "green", "k": 1.0, "source": [0.5, 0.4]}"#;
    for (sname, surface) in [("unperturbed", BASE), ("perturbed", PERTURBED)] {
        for (iname, incident) in [("herglotz-up", up), ("green y=(0.5,0.4)", green)] {
            let cfg = config(surface, incident, "g2", "modal", 0.05);
            let setup = CaseSetup::new(&cfg).unwrap();
            let report = convergence_study_with(&cfg, &setup, &[4, 16], Reference::Exact).unwrap();
            let e = report.errors();
            checks.push(check(
                format!("{sname}, {iname}: errors at N = 4, 16 are {} (<= 1e-9)", fmt(&e)),
                e.iter().all(|v| *v <= 1e-9),
            ));
        }
    }
    report(1, "modal exactness", &checks, t0)
}

/// Group 1 example 1: perturbed surface, Green source at (0.5, 0.4), k = 1.
fn group1_errors(h: f64) -> Vec<f64> {
    let cfg = config(PERTURBED, r#"{"kind": "green", "k": 1.0, "source": [0.5, 0.4]}"#, "g1", "trace-sampled", h);
    let t = Instant::now();
    let out = convergence_study(&cfg, &[4, 8, 16, 32, 64], Reference::Exact).unwrap().errors();
    eprintln!("    h = {h}: {} ({:.1}s)", fmt(&out), t.elapsed().as_secs_f64());
    out
}

fn plateaus(e: &[f64]) -> bool {
    let decreasing = e[0] > e[1] && e[1] > e[2];
    let flat = (e[4] / e[3]).ln().abs() <= 2f64.ln() && e[3] <= e[2];
    decreasing && flat
}

fn criterion_2_group1_plateau_scales_with_mesh() -> bool {
    let t0 = Instant::now();
    let coarse = group1_errors(0.02);
    let fine = group1_errors(0.01);
    let level_ratio = coarse[4] / fine[4];
    let checks = vec![
        check(format!("h = 0.02: {} decreases over N = 4, 8, 16 then plateaus", fmt(&coarse)), plateaus(&coarse)),
        check(format!("h = 0.01: {} decreases over N = 4, 8, 16 then plateaus", fmt(&fine)), plateaus(&fine)),
        check(
            format!("plateau ratio h = 0.02 / h = 0.01 is {level_ratio:.2} (in [3, 5])"),
            (3.0..=5.0).contains(&level_ratio),
        ),
        check(
            format!("h = 0.01, N = 8 error {:.2e} within a factor 10 of 8.28e-4", fine[1]),
            (fine[1] / 8.28e-4).log10().abs() <= 1.0,
        ),
        check(
            format!("h = 0.01 plateau {:.2e} within a factor 10 of 2e-5", fine[4]),
            (fine[4] / 2e-5).log10().abs() <= 1.0,
        ),
    ];
    report(2, "group 1 plateau", &checks, t0)
}

const NS: [usize; 4] = [8, 16, 32, 64];

/// Group 2 examples 3 and 4 on the h = 0.02 mesh: (label, g1 errors, g2 errors).
fn group2_studies() -> Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    let k2 = r#"{"kind": "herglotz-down", "k": 1.4142135623730951}"#;
    let k201 = r#"{"kind": "herglotz-down", "k": 2.01}"#;
    for (label, surface, incident) in [("eg 3", PERTURBED, k2), ("eg 4", BASE, k201)] {
        let mut cfg = config(surface, incident, "g2", "trace-sampled", 0.02);
        let setup = CaseSetup::new(&cfg).unwrap();
        let g2 = convergence_study_with(&cfg, &setup, &NS, Reference::SelfRef(256)).unwrap().errors();
        cfg.contour = ContourKind::G1;
        let g1 = convergence_study_with(&cfg, &setup, &NS, Reference::SelfRef(256)).unwrap().errors();
        eprintln!("    {label}: g1 {} | g2 {}", fmt(&g1), fmt(&g2));
        out.push((label, g1, g2));
    }
    out
}

fn studies() -> &'static Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    static CELL: std::sync::OnceLock<Vec<(&'static str, Vec<f64>, Vec<f64>)>> = std::sync::OnceLock::new();
    CELL.get_or_init(group2_studies)
}

fn criterion_3_g2_self_convergence_is_super_algebraic() -> bool {
    let t0 = Instant::now();
    let mut checks = Vec::new();
    for (label, _, e) in studies() {
        let r = ratios(e);
        checks.push(check(
            format!("{label}: decay ratios {} strictly increasing", fmt(&r)),
            r.windows(2).all(|w| w[1] > w[0]),
        ));
        checks.push(check(format!("{label}: N = 64 error {:.2e} (<= 1e-9)", e[3]), e[3] <= 1e-9));
    }
    report(3, "g2 self-convergence", &checks, t0)
}

fn criterion_4_g1_converges_algebraically() -> bool {
    let t0 = Instant::now();
    let mut checks = Vec::new();
    let x: Vec<f64> = NS.iter().map(|&n| n as f64).collect();
    for (label, e, _) in studies() {
        let slope = loglog_slope(&x, e).unwrap();
        checks.push(check(format!("{label}: slope over N = 8..64 is {slope:.2} (<= -2.5)"), slope <= -2.5));
        let r = ratios(e);
        checks.push(check(
            format!("{label}: per-doubling ratios {} within [4, 64]", fmt(&r)),
            r.iter().all(|v| (4.0..=64.0).contains(v)),
        ));
    }
    report(4, "g1 algebraic rate", &checks, t0)
}

/// Adaptive Simpson rule.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    step(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

fn criterion_5_quadrature_of_square_root_singularity() -> bool {
    let t0 = Instant::now();
    // ∫₀¹ √α cos α dα, with α = u² removing the singularity for the oracle
    let oracle = adaptive_simpson(&|u: f64| 2.0 * u * u * (u * u).cos(), 0.0, 1.0, 1e-15);
    let interval = BreakpointSet {
        kappa: 0.0,
        case: 1,
        points: vec![0.0, 1.0],
        dual_period: 1.0,
        k: 1.0,
    };
    let err = |kind, n| {
        let plan = quadrature_nodes(&interval, kind, n).unwrap();
        let fields: Vec<Vec<C64>> = plan.nodes().iter().map(|q| vec![C64::new(q.alpha.sqrt() * q.alpha.cos(), 0.0)]).collect();
        let v = inverse_bloch_transform(&plan, &fields, 0, TAU).unwrap()[0];
        (v - oracle).norm()
    };
    let g2 = err(ContourKind::G2, 128);
    eprintln!("    oracle {oracle:.17e}; g2 errors at N = 16, 32, 64: {:.2e} {:.2e} {:.2e}", err(ContourKind::G2, 16), err(ContourKind::G2, 32), err(ContourKind::G2, 64));
    let ns = [8usize, 16, 32, 64];
    let g1: Vec<f64> = ns.iter().map(|&n| err(ContourKind::G1, n)).collect();
    let slope = loglog_slope(&ns.map(|n| n as f64), &g1).unwrap();
    let checks = vec![
        check(format!("g2, N = 128: error {g2:.2e} (<= 1e-10)"), g2 <= 1e-10),
        check(format!("g1 errors {} have slope {slope:.2} (<= -2.5)", fmt(&g1)), slope <= -2.5),
    ];
    report(5, "quadrature oracle", &checks, t0)
}

/// Flat surface ζ = 1, roof H = 3, one downward mode at α = 0.3: the total
/// field is `-2i e^{iμx1} sin(β(x2-1))`.
fn flat_reflection_error(h: f64) -> f64 {
    let profile = SurfaceProfile::flat(1.0, 3.0, TAU);
    let mesh = build_cell_mesh(&profile, Variant::Base, h).unwrap();
    let (k, alpha) = (2f64.sqrt(), 0.3);
    let sys = assemble_quasiperiodic_system(&mesh, alpha, k, 12).unwrap();
    let mu = -alpha;
    let beta = (k * k - mu * mu).sqrt();
    let mut f_hat = vec![C64::new(0.0, 0.0); sys.trace.n_modes()];
    for (r, f) in f_hat.iter_mut().enumerate() {
        if sys.trace.mu(r) == mu {
            // ∂₂u^i - iβu^i for u^i = e^{iμx1 - iβ(x2-1)} at x2 = 3
            *f = C64::new(0.0, -2.0 * beta) * C64::from_polar(1.0, -2.0 * beta);
        }
    }
    let x = solve_single_alpha(&sys, &sys.roof_load(&f_hat, mesh.period)).unwrap();
    let (mut err, mut norm) = (0.0, 0.0);
    for (fi, &n) in sys.dofs.free_nodes.iter().enumerate() {
        let [x1, x2] = mesh.nodes[n];
        let exact = C64::new(0.0, -2.0 * (beta * (x2 - 1.0)).sin()) * C64::from_polar(1.0, mu * x1);
        err += (x[fi] - exact).norm_sqr();
        norm += exact.norm_sqr();
    }
    (err / norm).sqrt()
}

fn criterion_6_flat_reflection_is_second_order() -> bool {
    let t0 = Instant::now();
    let e: Vec<f64> = [0.2, 0.1, 0.05, 0.025].iter().map(|&h| flat_reflection_error(h)).collect();
    let r = ratios(&e);
    let checks = vec![check(
        format!("errors {} give ratios {} (in [3.4, 4.6])", fmt(&e), fmt(&r)),
        r.iter().all(|v| (3.4..=4.6).contains(v)),
    )];
    report(6, "flat-surface FEM order", &checks, t0)
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn rel_diff(a: &[C64], b: &[C64]) -> f64 {
    let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    max_diff(a, b) / scale
}

/// Solves the cell problem at α with surface data `e^{-iαx1} p(x1)` and
/// returns the nodal field.
fn cell_solve(profile: &SurfaceProfile, h: f64, k: f64, alpha: f64, p: impl Fn(f64) -> f64) -> Vec<C64> {
    let mesh = build_cell_mesh(profile, Variant::Base, h).unwrap();
    let sys = assemble_quasiperiodic_system(&mesh, alpha, k, 10).unwrap();
    let g: Vec<C64> = sys
        .dofs
        .dirichlet_nodes
        .iter()
        .map(|&n| C64::from_polar(p(mesh.nodes[n][0]), -alpha * mesh.nodes[n][0]))
        .collect();
    let load: Vec<C64> = sys.dirichlet.matvec(&g).iter().map(|v| -v).collect();
    let x = solve_single_alpha(&sys, &load).unwrap();
    sys.dofs.expand(&x, &g, sys.phase)
}

fn criterion_7_structural_invariants() -> bool {
    let t0 = Instant::now();
    let mut checks = Vec::new();

    // discrete Fourier basis on the roof grid
    let profile = SurfaceProfile::default_base();
    let mesh = build_cell_mesh(&profile, Variant::Base, 0.1).unwrap();
    let mut worst: f64 = 0.0;
    for &alpha in &[0.0, 0.3, -0.41] {
        let e = trace_fourier_matrix(&mesh, 8, alpha).unwrap();
        for l in 0..e.n_modes() {
            let mode: Vec<C64> = (0..mesh.nx).map(|i| C64::from_polar(1.0, e.mu(l) * mesh.x1[i])).collect();
            let coef = e.apply(&mode);
            let s = (0.5 * e.mu(l) * mesh.dx()).sin() / (0.5 * e.mu(l) * mesh.dx());
            let s2 = if e.mu(l) == 0.0 { 1.0 } else { s * s };
            for (j, c) in coef.iter().enumerate() {
                let expect = if j == l { s2 } else { 0.0 };
                worst = worst.max((c - expect).norm());
            }
        }
    }
    checks.push(check(format!("Fourier-basis orthogonality deviation {worst:.1e} (<= 1e-12)"), worst <= 1e-12));

    // zero perturbation
    let k = 2f64.sqrt();
    let zero = profile.clone().with_bump(Some(Bump {
        amplitude: 0.0,
        ..Bump::default()
    }));
    let bps = wood_breakpoints(k, TAU).unwrap();
    let plan8 = quadrature_nodes(&bps, ContourKind::G2, 8).unwrap();
    let coarse = build_cell_mesh(&zero, Variant::Base, 0.2).unwrap();
    let blocks = assemble_coupling_blocks(&coarse, &zero, &plan8, k, 8).unwrap();
    let c = blocks.max_coupling_entry();
    checks.push(check(format!("zero-perturbation coupling entries {c:.1e} (<= 1e-14)"), c <= 1e-14));

    let opts = SolverOptions::new(k, TAU);
    let down = IncidentField::herglotz_down(k);
    let op_base = Arc::new(CellOperator::new(&profile, build_cell_mesh(&profile, Variant::Base, 0.1).unwrap(), k).unwrap());
    let op_zero = Arc::new(CellOperator::new(&zero, build_cell_mesh(&zero, Variant::Base, 0.1).unwrap(), k).unwrap());
    let a = solve_bloch_system(&op_base, &plan8, &down, &opts).unwrap();
    let b = solve_bloch_system(&op_zero, &plan8, &down, &opts).unwrap();
    let d = max_diff(&a.u_cell, &b.u_cell);
    checks.push(check(
        format!("decoupled vs coupled zero-perturbation solve {d:.1e} (<= 1e-10)"),
        d <= 1e-10 && !a.stats.coupled && b.stats.coupled,
    ));

    // Schur vs full GMRES on perturbed configurations
    let pert = SurfaceProfile::default_perturbed();
    for (label, kk, inc) in [
        ("eg 3 herglotz-down", k, IncidentField::herglotz_down(k)),
        ("green y=(0.5,0.4)", 1.0, IncidentField::green(1.0, [0.5, 0.4])),
    ] {
        let op = Arc::new(CellOperator::new(&pert, build_cell_mesh(&pert, Variant::Base, 0.1).unwrap(), kk).unwrap());
        let plan = quadrature_nodes(&wood_breakpoints(kk, TAU).unwrap(), ContourKind::G2, 8).unwrap();
        let mut o = SolverOptions::new(kk, TAU);
        let schur = solve_bloch_system(&op, &plan, &inc, &o).unwrap();
        o.strategy = Strategy::Gmres;
        o.gmres = GmresConfig {
            tol: 1e-13,
            restart: 100,
            max_iter: 5000,
        };
        let full = solve_bloch_system(&op, &plan, &inc, &o).unwrap();
        let d = rel_diff(&full.u_cell, &schur.u_cell);
        checks.push(check(format!("{label}: Schur vs GMRES {d:.1e} (<= 1e-8)"), d <= 1e-8));
    }

    // conjugate symmetry in the real-symmetric regime: with every Rayleigh
    // mode evanescent the DtN symbol is real and A(-α) = conj A(α)
    let p = |x: f64| 1.0 + 0.4 * x.cos() - 0.2 * (2.0 * x).sin();
    let mut conj_dev: f64 = 0.0;
    for surface in [SurfaceProfile::flat(1.0, 4.0, TAU), profile.clone()] {
        for &alpha in &[0.3, 0.45] {
            let plus = cell_solve(&surface, 0.1, 0.2, alpha, p);
            let minus = cell_solve(&surface, 0.1, 0.2, -alpha, p);
            let conj: Vec<C64> = plus.iter().map(|v| v.conj()).collect();
            conj_dev = conj_dev.max(rel_diff(&minus, &conj));
        }
    }
    checks.push(check(
        format!("conjugate symmetry w(-α) = conj w(α), k = 0.2, α = 0.3, 0.45: {conj_dev:.1e} (<= 1e-10)"),
        conj_dev <= 1e-10,
    ));
    let flat = SurfaceProfile::flat(1.0, 4.0, TAU);
    let plus = cell_solve(&flat, 0.1, k, 0.3, p);
    let minus = cell_solve(&flat, 0.1, k, -0.3, p);
    let conj: Vec<C64> = plus.iter().map(|v| v.conj()).collect();
    eprintln!("    radiating k = √2 conjugate deviation {:.2e} (not a symmetry)", rel_diff(&minus, &conj));

    // solves at the anomalies themselves
    let plan = quadrature_nodes(&bps, ContourKind::G1, 8).unwrap();
    let at_wood = plan.nodes().iter().filter(|q| bps.points.iter().any(|b| (q.alpha - b).abs() < 1e-15)).count();
    let sol = solve_bloch_system(&op_base, &plan, &down, &opts).unwrap();
    let finite = sol.node_fields().unwrap().iter().flatten().all(|v| v.re.is_finite() && v.im.is_finite())
        && sol.u_cell.iter().all(|v| v.re.is_finite() && v.im.is_finite());
    let direct = cell_solve(&profile, 0.1, k, bps.kappa, p);
    let direct_finite = direct.iter().all(|v| v.re.is_finite() && v.im.is_finite());
    checks.push(check(
        format!("{at_wood} nodes at Wood anomalies and a direct solve at α = κ are finite"),
        at_wood > 0 && finite && direct_finite,
    ));
    report(7, "structural invariants", &checks, t0)
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> bool); 7] = [
        ("criterion_1_modal_rhs_reproduces_exact_solution", criterion_1_modal_rhs_reproduces_exact_solution),
        ("criterion_2_group1_plateau_scales_with_mesh", criterion_2_group1_plateau_scales_with_mesh),
        ("criterion_3_g2_self_convergence_is_super_algebraic", criterion_3_g2_self_convergence_is_super_algebraic),
        ("criterion_4_g1_converges_algebraically", criterion_4_g1_converges_algebraically),
        ("criterion_5_quadrature_of_square_root_singularity", criterion_5_quadrature_of_square_root_singularity),
        ("criterion_6_flat_reflection_is_second_order", criterion_6_flat_reflection_is_second_order),
        ("criterion_7_structural_invariants", criterion_7_structural_invariants),
    ];
    let mut failed = 0;
    let mut run = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        run += 1;
        match std::panic::catch_unwind(f) {
            Ok(true) => {}
            Ok(false) => failed += 1,
            Err(_) => {
                println!("{name}: FAIL (panicked)");
                failed += 1;
            }
        }
    }
    println!("acceptance: {} of {run} criteria passed", run - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
