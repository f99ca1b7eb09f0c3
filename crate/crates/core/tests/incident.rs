use periscat::incident::*;
use periscat::special_functions::hankel0_first_kind;
use periscat::C64;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

fn i() -> C64 {
    C64::new(0.0, 1.0)
}

/// Direct half-space Green's function, written out independently.
fn green(k: f64, x: [f64; 2], y: [f64; 2]) -> C64 {
    let r1 = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
    let r2 = ((x[0] - y[0]).powi(2) + (x[1] + y[1]).powi(2)).sqrt();
    0.25 * i() * (hankel0_first_kind(k * r1).unwrap() - hankel0_first_kind(k * r2).unwrap())
}

/// `c Σ_m φ(x + Λ m e1) e^{iαΛm}` with a smooth window over |m| < M.
fn windowed_lattice_sum(f: impl Fn([f64; 2]) -> C64, alpha: f64, period: f64, x: [f64; 2], m_max: i64) -> C64 {
    let c = (period / TAU).sqrt();
    let mut s = C64::new(0.0, 0.0);
    for m in -m_max..=m_max {
        let t = m as f64 / m_max as f64;
        let w = if t.abs() >= 1.0 { 0.0 } else { (1.0 - 1.0 / (1.0 - t * t)).exp() };
        if w == 0.0 {
            continue;
        }
        let xm = [x[0] + period * m as f64, x[1]];
        s += w * f(xm) * C64::from_polar(1.0, alpha * period * m as f64);
    }
    c * s
}

#[test]
fn green_bloch_transform_matches_lattice_sum() {
    let k = 2f64.sqrt();
    let src = [0.5, 3.0];
    let field = IncidentField::green(k, src);
    for &alpha in &[0.2, -0.3, 0.55] {
        for &x in &[[0.3, 2.5], [-1.7, 3.6], [2.9, 1.9]] {
            let oracle = windowed_lattice_sum(|p| green(k, p, src), alpha, TAU, x, 16000);
            let v = bloch_transform_eval(&field, alpha, TAU, x).unwrap();
            assert!((v - oracle).norm() < 1e-8, "α={alpha} x={x:?}: {v} vs {oracle}");
        }
    }
}

#[test]
fn rayleigh_trace_sums_to_the_pointwise_transform() {
    let field = IncidentField::green(2f64.sqrt(), [0.5, 3.0]);
    let tr = bloch_rayleigh_trace(&field, 0.2, TAU, 40, 4.0).unwrap();
    for &x1 in &[-3.0, 0.0, 1.1] {
        let direct = bloch_transform_eval(&field, 0.2, TAU, [x1, 4.0]).unwrap();
        assert!((tr.eval(x1) - direct).norm() < 1e-13);
    }
}

#[test]
fn herglotz_point_values_match_trapezoid() {
    let k = 2f64.sqrt();
    let n = 10_000;
    for (field, sign) in [(IncidentField::herglotz_up(k), 1.0), (IncidentField::herglotz_down(k), -1.0)] {
        for &x in &[[1.0, 2.0], [-2.5, 3.7], [0.0, 0.1]] {
            let h = PI / n as f64;
            let oracle: C64 = (0..=n)
                .map(|j| {
                    let th = -FRAC_PI_2 + h * j as f64;
                    let w = if j == 0 || j == n { 0.5 * h } else { h };
                    let ph = k * (th.sin() * x[0] + sign * th.cos() * x[1]);
                    C64::from_polar(w * th.cos().powi(2), ph)
                })
                .sum();
            let v = incident_field_eval(&field, x).unwrap();
            assert!((v - oracle).norm() < 1e-13, "{x:?}");
        }
    }
}

#[test]
fn herglotz_transform_integrates_back_over_the_dual_cell() {
    // u(x) = c ∫ J u(α, x) dα over one dual period; midpoint rule on a
    // 10⁴ grid, limited by the square-root kinks at the anomalies
    let k = 2f64.sqrt();
    let x = [1.0, 2.0];
    let c = (TAU / TAU).sqrt();
    let n = 10_000;
    for field in [IncidentField::herglotz_up(k), IncidentField::herglotz_down(k)] {
        let h = 1.0 / n as f64;
        let mut s = C64::new(0.0, 0.0);
        for j in 0..n {
            let alpha = -0.5 + h * (j as f64 + 0.5);
            s += h * bloch_transform_eval(&field, alpha, TAU, x).unwrap();
        }
        let v = incident_field_eval(&field, x).unwrap();
        assert!((c * s - v).norm() < 2e-5, "{} vs {v}", c * s);
    }
}

#[test]
fn green_coefficients_decay_exponentially() {
    let field = IncidentField::green(2f64.sqrt(), [0.5, 3.0]);
    let tr = bloch_rayleigh_trace(&field, 0.1, TAU, 60, 4.0).unwrap();
    for (r, v) in tr.value.iter().enumerate() {
        let mu = tr.mu(r);
        if mu.abs() > 5.0 {
            let bound = (-((mu * mu - 2.0).sqrt()) * 1.0).exp() / (mu * mu - 2.0).sqrt();
            assert!(v.norm() <= bound, "mode {r}: {} > {bound}", v.norm());
        }
    }
}

#[test]
fn upward_fields_have_zero_modal_roof_data() {
    let up = IncidentField::herglotz_up(1.3);
    for f in modal_roof_data(&up, 0.2, TAU, 10, 4.0).unwrap() {
        assert!(f.norm() < 1e-15);
    }
    let below = IncidentField::green(1.3, [0.0, 1.0]);
    for f in modal_roof_data(&below, 0.2, TAU, 10, 4.0).unwrap() {
        assert!(f.norm() < 1e-15);
    }
    // downward plane waves: f̂ = -2iβ ĝ
    let down = IncidentField::herglotz_down(1.3);
    let tr = bloch_rayleigh_trace(&down, 0.2, TAU, 10, 4.0).unwrap();
    let f = modal_roof_data(&down, 0.2, TAU, 10, 4.0).unwrap();
    for r in 0..f.len() {
        let mu = tr.mu(r);
        let beta = (1.3f64 * 1.3 - mu * mu).max(0.0).sqrt();
        assert!((f[r] + 2.0 * i() * beta * tr.value[r]).norm() < 1e-14);
    }
}

#[test]
fn small_wavenumber_has_a_single_propagating_mode() {
    let field = IncidentField::herglotz_down(0.4);
    let tr = bloch_rayleigh_trace(&field, 0.1, TAU, 5, 2.0).unwrap();
    for (r, v) in tr.value.iter().enumerate() {
        if tr.mu(r) == -0.1 {
            let beta = (0.16f64 - 0.01).sqrt();
            let expect = beta / 0.16 * C64::from_polar(1.0, -beta * 2.0);
            assert!((v - expect).norm() < 1e-14);
        } else {
            assert_eq!(*v, C64::new(0.0, 0.0));
        }
    }
}

#[test]
fn rayleigh_normal_derivative_matches_finite_differences() {
    let field = IncidentField::green(2f64.sqrt(), [0.5, 3.0]);
    let e = 1e-5;
    for &height in &[2.2, 3.8] {
        let tr = bloch_rayleigh_trace(&field, 0.3, TAU, 12, height).unwrap();
        let up = bloch_rayleigh_trace(&field, 0.3, TAU, 12, height + e).unwrap();
        let dn = bloch_rayleigh_trace(&field, 0.3, TAU, 12, height - e).unwrap();
        for r in 0..tr.value.len() {
            let fd = (up.value[r] - dn.value[r]) / (2.0 * e);
            assert!((tr.normal[r] - fd).norm() < 1e-8 * (1.0 + fd.norm()));
        }
    }
}

#[test]
fn point_values_satisfy_helmholtz() {
    let k = 2f64.sqrt();
    let h = 1e-3;
    for field in [IncidentField::green(k, [0.5, 3.0]), IncidentField::herglotz_up(k), IncidentField::herglotz_down(k)] {
        for &x in &[[0.0, 2.0], [1.5, 3.7]] {
            let u = |dx: f64, dy: f64| incident_field_eval(&field, [x[0] + dx, x[1] + dy]).unwrap();
            let lap = (u(h, 0.0) + u(-h, 0.0) + u(0.0, h) + u(0.0, -h) - 4.0 * u(0.0, 0.0)) / (h * h);
            let res = lap + k * k * u(0.0, 0.0);
            assert!(res.norm() < 1e-5, "{res}");
        }
    }
}

#[test]
fn green_vanishes_on_the_axis_and_rejects_its_source() {
    let field = IncidentField::green(1.0, [0.5, 3.0]);
    assert!(incident_field_eval(&field, [2.0, 0.0]).unwrap().norm() < 1e-16);
    assert!(incident_field_eval(&field, [0.5, 3.0]).is_err());
    assert!(bloch_transform_eval(&field, 0.0, TAU, [0.0, 3.0]).is_err());
    assert!(IncidentField::green(1.0, [0.0, -1.0]).validate(4.0).is_err());
    assert!(IncidentField::green(-1.0, [0.0, 1.0]).validate(4.0).is_err());
    let scaled = field.scaled(C64::new(0.0, 2.0));
    let a = incident_field_eval(&field, [1.0, 1.0]).unwrap();
    let b = incident_field_eval(&scaled, [1.0, 1.0]).unwrap();
    assert!((b - 2.0 * i() * a).norm() < 1e-16);
}
