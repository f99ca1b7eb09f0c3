//! Structured P1 triangulation of one periodic cell and the Fourier
//! pairing of quasi-periodic hat functions on the roof.

use crate::geometry::{SurfaceProfile, Variant};
use crate::{Error, Result, C64};
use faer::Mat;

/// Triangulation of `{-Λ/2 <= x1 <= Λ/2, ζ(x1) <= x2 <= H}`.
///
/// Nodes sit on `nx + 1` vertical lines; line `i` carries `ny + 1` nodes
/// evenly spaced from the surface (`r = 0`) to the roof (`r = ny`). Node
/// `(i, r)` has index `i * (ny + 1) + r`. Line `nx` is the periodic image
/// of line `0`.
#[derive(Debug, Clone)]
pub struct PeriodicCellMesh {
    pub nx: usize,
    pub ny: usize,
    pub period: f64,
    pub roof: f64,
    pub variant: Variant,
    /// Abscissae of the vertical lines.
    pub x1: Vec<f64>,
    /// Surface height at each vertical line.
    pub bottom: Vec<f64>,
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    /// Longest edge.
    pub h_mesh: f64,
    pub min_edge: f64,
}

impl PeriodicCellMesh {
    #[inline]
    pub fn node(&self, i: usize, r: usize) -> usize {
        i * (self.ny + 1) + r
    }

    #[inline]
    pub fn column_row(&self, n: usize) -> (usize, usize) {
        (n / (self.ny + 1), n % (self.ny + 1))
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn dx(&self) -> f64 {
        self.period / self.nx as f64
    }

    pub fn bottom_nodes(&self) -> Vec<usize> {
        (0..=self.nx).map(|i| self.node(i, 0)).collect()
    }

    pub fn top_nodes(&self) -> Vec<usize> {
        (0..=self.nx).map(|i| self.node(i, self.ny)).collect()
    }

    /// `(left, right)` node pairs identified by periodicity.
    pub fn periodic_pairs(&self) -> Vec<(usize, usize)> {
        (0..=self.ny).map(|r| (self.node(0, r), self.node(self.nx, r))).collect()
    }

    /// Unknowns after periodic identification, including the surface.
    pub fn m_total(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    /// Unknowns after identification that are not on the surface.
    pub fn m_free(&self) -> usize {
        self.nx * self.ny
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    /// Locates `x` in the mesh: triangle index and barycentric coordinates.
    /// Points between the surface and its chord are attributed to the
    /// lowest layer (with slightly negative coordinates).
    pub fn locate(&self, x: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let dx = self.dx();
        let s = (x[0] - self.x1[0]) / dx;
        if !(s >= -1e-12 && s <= self.nx as f64 + 1e-12) {
            return None;
        }
        let i = (s.floor().max(0.0) as usize).min(self.nx - 1);
        let tau = (x[0] - self.x1[i]) / dx;
        let b = self.bottom[i] * (1.0 - tau) + self.bottom[i + 1] * tau;
        let sigma = (x[1] - b) / (self.roof - b) * self.ny as f64;
        if !(sigma <= self.ny as f64 + 1e-9) {
            return None;
        }
        let r = (sigma.floor().max(0.0) as usize).min(self.ny - 1);
        let base = 2 * (i * self.ny + r);
        // inside one of the two triangles of the quad, or (for points between
        // the surface and its chord) the one closest to containing the point
        let mut best = None;
        let mut best_min = f64::NEG_INFINITY;
        for t in [base, base + 1] {
            let [a, bb, c] = self.triangles[t];
            let l = barycentric(self.nodes[a], self.nodes[bb], self.nodes[c], x);
            let m = l.iter().cloned().fold(f64::INFINITY, f64::min);
            if m >= -1e-12 {
                return Some((t, l));
            }
            if m > best_min {
                best_min = m;
                best = Some((t, l));
            }
        }
        best
    }

    /// Piecewise-linear interpolation of nodal values at `x`.
    pub fn interpolate(&self, values: &[C64], x: [f64; 2]) -> Option<C64> {
        let (t, l) = self.locate(x)?;
        let [a, b, c] = self.triangles[t];
        Some(values[a] * l[0] + values[b] * l[1] + values[c] * l[2])
    }
}

pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub fn barycentric(a: [f64; 2], b: [f64; 2], c: [f64; 2], x: [f64; 2]) -> [f64; 3] {
    let area = signed_area(a, b, c);
    let la = signed_area(x, b, c) / area;
    let lb = signed_area(a, x, c) / area;
    [la, lb, 1.0 - la - lb]
}

/// Options for [`build_cell_mesh_with`].
#[derive(Debug, Clone, Copy)]
pub struct MeshOptions {
    /// Minimum accepted ratio of shortest to longest edge.
    pub min_quality: f64,
}

impl Default for MeshOptions {
    fn default() -> Self {
        MeshOptions { min_quality: 0.2 }
    }
}

pub fn build_cell_mesh(profile: &SurfaceProfile, variant: Variant, h_target: f64) -> Result<PeriodicCellMesh> {
    build_cell_mesh_with(profile, variant, h_target, MeshOptions::default())
}

pub fn build_cell_mesh_with(
    profile: &SurfaceProfile,
    variant: Variant,
    h_target: f64,
    options: MeshOptions,
) -> Result<PeriodicCellMesh> {
    if !(h_target > 0.0) || !h_target.is_finite() {
        return Err(Error::Mesh(format!("mesh width must be positive, got {h_target}")));
    }
    let (zmin, zmax) = profile.height_range(variant);
    let roof = profile.roof;
    if h_target >= roof - zmax {
        return Err(Error::Mesh(format!(
            "mesh width {h_target} too coarse: must be below H - max ζ = {}",
            roof - zmax
        )));
    }
    let period = profile.period;
    let nx = (period / h_target).ceil() as usize;
    let ny = ((roof - zmin) / h_target).ceil() as usize;
    let x1: Vec<f64> = (0..=nx).map(|i| -0.5 * period + period * i as f64 / nx as f64).collect();
    let mut bottom: Vec<f64> = x1.iter().map(|&t| profile.height(t, variant)).collect();
    // exact periodic matching of the two vertical edges
    bottom[nx] = bottom[0];

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        let z = bottom[i];
        for r in 0..=ny {
            let x2 = if r == ny { roof } else { z + (roof - z) * r as f64 / ny as f64 };
            nodes.push([x1[i], x2]);
        }
    }
    let id = |i: usize, r: usize| i * (ny + 1) + r;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for r in 0..ny {
            let (n00, n10, n11, n01) = (id(i, r), id(i + 1, r), id(i + 1, r + 1), id(i, r + 1));
            // diagonals mirror about the cell centre
            if 2 * i < nx {
                triangles.push([n00, n10, n11]);
                triangles.push([n00, n11, n01]);
            } else {
                triangles.push([n00, n10, n01]);
                triangles.push([n10, n11, n01]);
            }
        }
    }
    let mut h_mesh = 0.0f64;
    let mut min_edge = f64::INFINITY;
    for t in &triangles {
        for e in 0..3 {
            let (a, b) = (nodes[t[e]], nodes[t[(e + 1) % 3]]);
            let len = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            h_mesh = h_mesh.max(len);
            min_edge = min_edge.min(len);
        }
    }
    let mesh = PeriodicCellMesh {
        nx,
        ny,
        period,
        roof,
        variant,
        x1,
        bottom,
        nodes,
        triangles,
        h_mesh,
        min_edge,
    };
    for t in 0..mesh.triangles.len() {
        if !(mesh.triangle_area(t) > 0.0) {
            return Err(Error::Mesh(format!("triangle {t} has nonpositive area")));
        }
    }
    if min_edge / h_mesh < options.min_quality {
        return Err(Error::Mesh(format!(
            "quasi-uniformity violated: min/max edge = {:.3} < {}",
            min_edge / h_mesh,
            options.min_quality
        )));
    }
    Ok(mesh)
}

/// Fourier coefficients of quasi-periodic hat traces on the roof.
///
/// Column `i` (for `i < nx`) is the roof hat at line `i`; column 0 wraps
/// around through the periodic pair. Row `j + J` holds
/// `(1/Λ) ∫ ψ_i(x1) e^{-i μ_j x1} dx1` with `μ_j = Λ* j - α`.
#[derive(Debug, Clone)]
pub struct TraceFourierMatrix {
    pub j_cutoff: usize,
    pub alpha: f64,
    pub dual_period: f64,
    pub matrix: Mat<C64>,
}

impl TraceFourierMatrix {
    pub fn mode(&self, row: usize) -> i64 {
        row as i64 - self.j_cutoff as i64
    }

    pub fn mu(&self, row: usize) -> f64 {
        self.dual_period * self.mode(row) as f64 - self.alpha
    }

    pub fn n_modes(&self) -> usize {
        2 * self.j_cutoff + 1
    }

    /// Applies the matrix to a trace on the `nx` roof unknowns.
    pub fn apply(&self, trace: &[C64]) -> Vec<C64> {
        let n = self.matrix.ncols();
        assert_eq!(trace.len(), n);
        (0..self.matrix.nrows())
            .map(|r| (0..n).map(|c| self.matrix[(r, c)] * trace[c]).sum())
            .collect()
    }
}

/// `∫_0^1 (1-s) e^{-iθs} ds` and `∫_0^1 s e^{-iθs} ds`.
pub fn hat_segment_integrals(theta: f64) -> (C64, C64) {
    let i = C64::new(0.0, 1.0);
    if theta.abs() < 0.5 {
        // series: ∫ s^p e^{-iθs} = Σ (-iθ)^n / (n! (n+p+1))
        let mut i0 = C64::new(0.0, 0.0);
        let mut i1 = C64::new(0.0, 0.0);
        let mut term = C64::new(1.0, 0.0);
        for n in 0..30 {
            let nf = n as f64;
            i0 += term / (nf + 1.0);
            i1 += term / (nf + 2.0);
            term *= -i * theta / (nf + 1.0);
        }
        (i0 - i1, i1)
    } else {
        let e = (-i * theta).exp();
        let i0 = (1.0 - e) / (i * theta);
        let i1 = i * e / theta + (e - 1.0) / (theta * theta);
        (i0 - i1, i1)
    }
}

/// Closed-form hat/exponential pairing; `alpha` selects the quasi-periodic
/// wrap of the first hat.
pub fn trace_fourier_matrix(mesh: &PeriodicCellMesh, j_cutoff: usize, alpha: f64) -> Result<TraceFourierMatrix> {
    let nx = mesh.nx;
    if nx < 2 {
        return Err(Error::Mesh("trace matrix needs at least two roof nodes".into()));
    }
    let lam = mesh.period;
    let ls = std::f64::consts::TAU / lam;
    let nm = 2 * j_cutoff + 1;
    let phase = C64::from_polar(1.0, -alpha * lam);
    let mut m = Mat::<C64>::zeros(nm, nx);
    for row in 0..nm {
        let mu = ls * (row as f64 - j_cutoff as f64) - alpha;
        for seg in 0..nx {
            let (a, b) = (mesh.x1[seg], mesh.x1[seg + 1]);
            let d = b - a;
            let (falling, rising) = hat_segment_integrals(mu * d);
            let ea = C64::from_polar(d / lam, -mu * a);
            // left node of the segment gets the falling half, right node the rising half
            m[(row, seg)] += ea * falling;
            if seg + 1 < nx {
                m[(row, seg + 1)] += ea * rising;
            } else {
                m[(row, 0)] += phase * ea * rising;
            }
        }
    }
    Ok(TraceFourierMatrix {
        j_cutoff,
        alpha,
        dual_period: ls,
        matrix: m,
    })
}
