use periscat::geometry::{SurfaceProfile, Variant};
use periscat::mesh::*;
use periscat::quadrature::composite_gauss;
use periscat::C64;

#[test]
fn layout_and_periodic_pairs() {
    let p = SurfaceProfile::default_base();
    let m = build_cell_mesh(&p, Variant::Base, 0.2).unwrap();
    assert_eq!(m.n_nodes(), (m.nx + 1) * (m.ny + 1));
    assert_eq!(m.triangles.len(), 2 * m.nx * m.ny);
    assert_eq!(m.m_total(), m.nx * (m.ny + 1));
    assert!(m.h_mesh <= 0.2 * 2f64.sqrt() * 1.5);
    for (l, r) in m.periodic_pairs() {
        assert!((m.nodes[r][0] - m.nodes[l][0] - p.period).abs() < 1e-13);
        assert_eq!(m.nodes[r][1], m.nodes[l][1]);
    }
    for &n in &m.top_nodes() {
        assert_eq!(m.nodes[n][1], p.roof);
    }
    for (i, &n) in m.bottom_nodes().iter().enumerate().take(m.nx) {
        assert!((m.nodes[n][1] - p.height(m.x1[i], Variant::Base)).abs() < 1e-14);
    }
}

#[test]
fn triangle_areas_tile_the_polygonal_cell() {
    let p = SurfaceProfile::default_perturbed();
    let m = build_cell_mesh(&p, Variant::Perturbed, 0.1).unwrap();
    let total: f64 = (0..m.triangles.len()).map(|t| m.triangle_area(t)).sum();
    let dx = m.dx();
    let chord: f64 = (0..m.nx).map(|i| dx * (p.roof - 0.5 * (m.bottom[i] + m.bottom[i + 1]))).sum();
    assert!((total - chord).abs() < 1e-11 * chord);
    assert!((0..m.triangles.len()).all(|t| m.triangle_area(t) > 0.0));
}

#[test]
fn interpolation_reproduces_linear_functions() {
    let p = SurfaceProfile::default_base();
    let m = build_cell_mesh(&p, Variant::Base, 0.15).unwrap();
    let f = |x: [f64; 2]| C64::new(0.3 + 1.7 * x[0] - 0.4 * x[1], 2.0 * x[1] - x[0]);
    let values: Vec<C64> = m.nodes.iter().map(|&x| f(x)).collect();
    for &x1 in &[-3.0, -1.234, 0.0, 0.77, 3.1] {
        let z = p.height(x1, Variant::Base);
        for &s in &[0.02, 0.3, 0.81, 1.0] {
            let x = [x1, z + s * (p.roof - z)];
            let v = m.interpolate(&values, x).unwrap();
            assert!((v - f(x)).norm() < 1e-12, "{x:?}");
        }
    }
    assert!(m.interpolate(&values, [0.0, 4.5]).is_none());
    assert!(m.interpolate(&values, [4.0, 3.0]).is_none());
}

#[test]
fn too_coarse_or_invalid_widths_are_rejected() {
    let p = SurfaceProfile::default_base();
    assert!(build_cell_mesh(&p, Variant::Base, 1.6).is_err());
    assert!(build_cell_mesh(&p, Variant::Base, 0.0).is_err());
    assert!(build_cell_mesh(&p, Variant::Base, f64::NAN).is_err());
}

#[test]
fn hat_integrals_match_quadrature() {
    let (x, w) = composite_gauss(0.0, 1.0, 40, 10);
    for &theta in &[0.0, 1e-6, 0.1, 0.499, 0.501, 3.0, -7.5, 40.0] {
        let mut f = C64::new(0.0, 0.0);
        let mut r = C64::new(0.0, 0.0);
        for (s, ws) in x.iter().zip(&w) {
            let e = C64::from_polar(*ws, -theta * s);
            f += e * (1.0 - s);
            r += e * *s;
        }
        let (hf, hr) = hat_segment_integrals(theta);
        assert!((hf - f).norm() < 1e-14, "{theta}");
        assert!((hr - r).norm() < 1e-14, "{theta}");
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

#[test]
fn fourier_matrix_diagonalizes_interpolated_modes() {
    // the hat interpolant of e^{iμ_l x} has l-th coefficient sinc²(μ_l Δ/2)
    // and no other coefficients until the grid aliases
    let p = SurfaceProfile::default_base();
    let m = build_cell_mesh(&p, Variant::Base, 0.1).unwrap();
    let jc = 5;
    for &alpha in &[0.0, 0.3, -0.41] {
        let e = trace_fourier_matrix(&m, jc, alpha).unwrap();
        assert_eq!(e.matrix.ncols(), m.nx);
        let dx = m.dx();
        for l in 0..e.n_modes() {
            let mu = e.mu(l);
            let trace: Vec<C64> = (0..m.nx).map(|i| C64::from_polar(1.0, mu * m.x1[i])).collect();
            let coef = e.apply(&trace);
            for (j, c) in coef.iter().enumerate() {
                let expect = if j == l { sinc(0.5 * mu * dx).powi(2) } else { 0.0 };
                assert!((c - expect).norm() < 1e-12, "α={alpha} l={l} j={j}: {c}");
            }
        }
    }
}

#[test]
fn fourier_matrix_needs_two_columns() {
    let p = SurfaceProfile::default_base();
    let mut m = build_cell_mesh(&p, Variant::Base, 0.5).unwrap();
    m.nx = 1;
    assert!(trace_fourier_matrix(&m, 3, 0.0).is_err());
}
