use periscat::contour::ContourKind;
use periscat::harness::*;
use periscat::quadrature::composite_gauss;
use periscat::solver::{RhsMode, Strategy};
use periscat::{Error, C64};
use std::f64::consts::PI;
use std::process::Command;

const FULL: &str = r#"{
    "surface": {"kind": "default", "perturbed": true,
                "bump": {"center": 0.0, "half_width": 1.0, "amplitude": 1.0}},
    "incident": {"kind": "green", "k": 1.0, "source": [0.5, 3.0]},
    "contour": "g1",
    "N": 16,
    "mesh_width": 0.1,
    "J": 12,
    "rhs_mode": "modal",
    "solver": "gmres",
    "gmres_tol": 1e-11,
    "gmres_restart": 40,
    "gmres_max_iter": 300,
    "H": 4.0
}"#;

fn small(kind: &str, k: f64, extra: &str) -> String {
    format!(
        r#"{{"surface": {{"kind": "default"}}, "incident": {{"kind": "{kind}", "k": {k}{extra}}},
            "N": 8, "mesh_width": 0.3}}"#
    )
}

fn config_path(e: &Error) -> String {
    match e {
        Error::Config { path, .. } => path.clone(),
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn full_config_parses() {
    let cfg = ExperimentConfig::from_json(FULL).unwrap();
    assert!(cfg.surface.perturbed);
    assert_eq!(cfg.contour, ContourKind::G1);
    assert_eq!(cfg.n, 16);
    assert_eq!(cfg.j_cutoff(), 12);
    assert_eq!(cfg.rhs_mode, RhsMode::Modal);
    assert_eq!(cfg.solver, Strategy::Gmres);
    let o = cfg.solver_options();
    assert_eq!(o.gmres.restart, 40);
    assert_eq!(o.gmres.max_iter, 300);
    assert_eq!(o.gmres.tol, 1e-11);
    assert!(cfg.profile().unwrap().is_perturbed());
    // round trip
    let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn defaults_are_filled_in() {
    let cfg = ExperimentConfig::from_json(&small("herglotz-up", 1.5, "")).unwrap();
    assert_eq!(cfg.contour, ContourKind::G2);
    assert_eq!(cfg.rhs_mode, RhsMode::TraceSampled);
    assert_eq!(cfg.solver, Strategy::Schur);
    assert_eq!(cfg.roof, 4.0);
    assert!((cfg.period - 2.0 * PI).abs() < 1e-15);
    assert!(cfg.output_dir.is_none());
}

#[test]
fn odd_n_is_a_config_error_at_n() {
    let text = small("herglotz-up", 1.5, "").replace("\"N\": 8", "\"N\": 7");
    assert_eq!(config_path(&ExperimentConfig::from_json(&text).unwrap_err()), "N");
    let text = small("herglotz-up", 1.5, "").replace("\"N\": 8", "\"N\": 2");
    assert_eq!(config_path(&ExperimentConfig::from_json(&text).unwrap_err()), "N");
}

#[test]
fn unknown_keys_are_named() {
    let text = small("herglotz-up", 1.5, "").replace("\"N\": 8", "\"N\": 8, \"colour\": 1");
    let e = ExperimentConfig::from_json(&text).unwrap_err();
    assert_eq!(config_path(&e), "colour");
    let text = small("herglotz-up", 1.5, ", \"sorce\": [0, 1]");
    assert_eq!(config_path(&ExperimentConfig::from_json(&text).unwrap_err()), "sorce");
    let e = ExperimentConfig::from_json("{\"surface\": {\"kind\": \"default\"}}").unwrap_err();
    assert!(e.is_config());
}

#[test]
fn invalid_values_are_reported_by_field() {
    let flat = r#"{"surface": {"kind": "flat"}, "incident": {"kind": "herglotz-up", "k": 1.0},
                   "N": 8, "mesh_width": 0.3}"#;
    assert_eq!(config_path(&ExperimentConfig::from_json(flat).unwrap_err()), "surface.height");
    let coarse = small("herglotz-up", 1.5, "").replace("0.3", "1.9");
    assert_eq!(config_path(&ExperimentConfig::from_json(&coarse).unwrap_err()), "mesh_width");
    assert_eq!(
        config_path(&ExperimentConfig::from_json(&small("green", 1.0, "")).unwrap_err()),
        "incident.source"
    );
    assert_eq!(
        config_path(&ExperimentConfig::from_json(&small("herglotz-up", -1.0, "")).unwrap_err()),
        "incident.k"
    );
    let harmonic = r#"{"surface": {"kind": "harmonic"}, "incident": {"kind": "herglotz-up", "k": 1.0},
                       "N": 8, "mesh_width": 0.3}"#;
    assert_eq!(config_path(&ExperimentConfig::from_json(harmonic).unwrap_err()), "surface.c0");
    let stray_bump = r#"{"surface": {"kind": "default", "bump": {"center": 0, "half_width": 1, "amplitude": 1}},
                         "incident": {"kind": "herglotz-up", "k": 1.0}, "N": 8, "mesh_width": 0.3}"#;
    assert_eq!(config_path(&ExperimentConfig::from_json(stray_bump).unwrap_err()), "surface.bump");
}

#[test]
fn l2_error_elementary_cases() {
    let a: Vec<C64> = (0..11).map(|j| C64::new(j as f64, 1.0)).collect();
    let e = relative_l2_error(&a, &a, 0.1).unwrap();
    assert_eq!(e.value, 0.0);
    assert!(e.relative);
    let b: Vec<C64> = a.iter().map(|v| 2.0 * v).collect();
    assert!((relative_l2_error(&a, &b, 0.1).unwrap().value - 0.5).abs() < 1e-15);
    let z = vec![C64::new(0.0, 0.0); 11];
    let e = relative_l2_error(&a, &z, 0.1).unwrap();
    assert!(!e.relative);
    let abs: f64 = (0..11)
        .map(|j| if j == 0 || j == 10 { 0.05 } else { 0.1 } * a[j].norm_sqr())
        .sum::<f64>()
        .sqrt();
    assert!((e.value - abs).abs() < 1e-14);
    assert!(matches!(relative_l2_error(&a, &b[1..], 0.1), Err(Error::Shape(_))));
}

#[test]
fn l2_error_matches_continuous_norms_on_a_fine_grid() {
    let nx = 315;
    let dx = 2.0 * PI / nx as f64;
    let f = |x: f64| C64::new(x.cos() + 0.3 * x, (2.0 * x).sin());
    let g = |x: f64| C64::new(1.0 + 0.5 * x.sin(), 0.2 * x * x);
    let xs: Vec<f64> = (0..=nx).map(|i| -PI + dx * i as f64).collect();
    let a: Vec<C64> = xs.iter().map(|&x| f(x)).collect();
    let b: Vec<C64> = xs.iter().map(|&x| g(x)).collect();
    let (q, w) = composite_gauss(-PI, PI, 64, 10);
    let num: f64 = q.iter().zip(&w).map(|(x, w)| w * (f(*x) - g(*x)).norm_sqr()).sum();
    let den: f64 = q.iter().zip(&w).map(|(x, w)| w * g(*x).norm_sqr()).sum();
    let oracle = (num / den).sqrt();
    let e = relative_l2_error(&a, &b, dx).unwrap();
    assert!(((e.value - oracle) / oracle).abs() < 1e-3, "{} vs {oracle}", e.value);
}

#[test]
fn run_case_writes_solution_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_json(&small("herglotz-up", 1.5, "")).unwrap();
    cfg.rhs_mode = RhsMode::Modal;
    cfg.output_dir = Some(dir.path().join("run"));
    let summary = run_case(&cfg).unwrap();
    let exact = summary.exact_error.unwrap();
    assert!(exact < 1e-9, "{exact:e}");

    let csv = std::fs::read_to_string(dir.path().join("run/solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,re_u,im_u,re_us,im_us");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), (summary.nx + 1) * (summary.ny + 1));
    assert!(rows.iter().all(|r| r.len() == 6 && r.iter().all(|v| v.is_finite())));
    // upward incidence: zero total field
    assert!(rows.iter().all(|r| r[2].hypot(r[3]) < 1e-8));

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["N"], 8);
    assert_eq!(meta["summary"]["nx"], summary.nx);
    assert!(meta["breakpoints"]["points"].is_array());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_json(&small("green", 1.0, ", \"source\": [0.5, 3.0]")).unwrap();
    cfg.surface.perturbed = true;
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        cfg.output_dir = Some(dir.path().join(name));
        run_case(&cfg).unwrap();
        outputs.push(std::fs::read(dir.path().join(name).join("solution.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn exact_reference_study_for_upward_incidence() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_json(&small("herglotz-up", 2f64.sqrt(), "")).unwrap();
    cfg.rhs_mode = RhsMode::Modal;
    cfg.surface.perturbed = true;
    cfg.output_dir = Some(dir.path().to_path_buf());
    let report = convergence_study(&cfg, &[4, 8], Reference::Exact).unwrap();
    assert_eq!(report.reference, "exact");
    assert_eq!(report.rows.len(), 2);
    assert!(report.errors().iter().all(|e| *e <= 1e-9), "{:?}", report.errors());
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(csv.starts_with("N,rel_err,seconds\n"));
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(csv, report.to_csv());
}

#[test]
fn study_arguments_are_validated() {
    let cfg = ExperimentConfig::from_json(&small("herglotz-down", 2f64.sqrt(), "")).unwrap();
    // reference below the list
    let e = convergence_study(&cfg, &[4, 8], Reference::SelfRef(8)).unwrap_err();
    assert_eq!(config_path(&e), "reference");
    let e = convergence_study(&cfg, &[8, 4], Reference::SelfRef(16)).unwrap_err();
    assert_eq!(config_path(&e), "N");
    let e = convergence_study(&cfg, &[4, 5], Reference::SelfRef(16)).unwrap_err();
    assert_eq!(config_path(&e), "N");
    // downward incidence has no closed form
    let e = convergence_study(&cfg, &[4], Reference::Exact).unwrap_err();
    assert_eq!(config_path(&e), "reference");
}

#[test]
fn self_reference_errors_decrease() {
    let mut cfg = ExperimentConfig::from_json(&small("herglotz-down", 2f64.sqrt(), "")).unwrap();
    cfg.surface.perturbed = true;
    let report = convergence_study(&cfg, &[4, 8, 16], Reference::SelfRef(64)).unwrap();
    let e = report.errors();
    assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
    assert_eq!(report.reference, "self:64");
}

#[test]
fn reference_strings() {
    assert_eq!("exact".parse::<Reference>().unwrap(), Reference::Exact);
    assert_eq!("self:256".parse::<Reference>().unwrap(), Reference::SelfRef(256));
    assert!("self:x".parse::<Reference>().is_err());
    assert!("other".parse::<Reference>().is_err());
}

#[test]
fn slopes() {
    let x = [4.0, 8.0, 16.0, 32.0];
    let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-4.0)).collect();
    assert!((loglog_slope(&x, &y).unwrap() + 4.0).abs() < 1e-12);
    assert!(loglog_slope(&[1.0], &[1.0]).is_none());
    // plateau after the third entry is excluded
    let errs = [1e-2, 2.5e-3, 6.25e-4, 6.0e-4, 6.1e-4];
    let s = pre_plateau_slope(&[4, 8, 16, 32, 64], &errs).unwrap();
    assert!((s + 2.0).abs() < 1e-12, "{s}");
    assert!(pre_plateau_slope(&[4, 8], &[1.0, 0.9]).is_none());
}

#[test]
fn mesh_info_reports_layout() {
    let cfg = ExperimentConfig::from_json(&small("herglotz-up", 2f64.sqrt(), "")).unwrap();
    let info = mesh_info(&cfg).unwrap();
    let nx = info["nx"].as_u64().unwrap();
    let ny = info["ny"].as_u64().unwrap();
    assert_eq!(info["nodes"].as_u64().unwrap(), (nx + 1) * (ny + 1));
    assert_eq!(info["triangles"].as_u64().unwrap(), 2 * nx * ny);
    assert_eq!(info["breakpoints"]["case"], 2);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_periscat")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, small("herglotz-up", 1.5, "")).unwrap();
    let out = cli(&["mesh-info", "--config", good.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let info: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(info["nx"].as_u64().unwrap() > 0);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, small("herglotz-up", 1.5, "").replace("\"N\": 8", "\"N\": 9")).unwrap();
    let out = cli(&["solve", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("N"));

    let out = cli(&["solve", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn cli_solve_and_converge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, small("herglotz-up", 1.5, "").replace("\"N\": 8", "\"N\": 8, \"rhs_mode\": \"modal\"")).unwrap();
    let out_dir = dir.path().join("out");
    let out = cli(&["solve", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("solution.csv").exists());
    let out = cli(&["converge", "--config", cfg.to_str().unwrap(), "--N", "4,8", "--reference", "exact"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("N,rel_err,seconds\n"));
    assert_eq!(text.lines().count(), 3);
}
