//! P1 assembly of the quasi-periodic cell problems, the roof DtN block and
//! the blocks that couple the cell problems through the perturbation.
//!
//! Unknowns are nodal values of the quasi-periodic field itself: the right
//! edge carries `p = e^{-iαΛ}` times the left edge values. With `Q = K - k²M`
//! assembled over all nodes, the cell matrix is `Pᴴ Q P - DtN`.

use crate::contour::ContourPlan;
use crate::geometry::{coefficients_unchecked, SurfaceProfile};
use crate::linalg::{Csr, SparseLu};
use crate::mesh::{trace_fourier_matrix, PeriodicCellMesh, TraceFourierMatrix};
use crate::quadrature::triangle_rule_7;
use crate::special_functions::vertical_wavenumber;
use crate::{Error, Result, C64};
use faer::Mat;
use std::f64::consts::TAU;

/// Gradients of the three barycentric coordinates and the area.
pub fn p1_gradients(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> ([[f64; 2]; 3], f64) {
    let area = crate::mesh::signed_area(a, b, c);
    let inv = 0.5 / area;
    let g = [
        [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
        [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
        [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
    ];
    (g, area)
}

/// Stiffness and consistent mass over all mesh nodes (no identification).
pub fn assemble_stiffness_mass(mesh: &PeriodicCellMesh) -> (Csr<f64>, Csr<f64>) {
    let n = mesh.n_nodes();
    let mut kt = Vec::with_capacity(9 * mesh.triangles.len());
    let mut mt = Vec::with_capacity(9 * mesh.triangles.len());
    for tri in &mesh.triangles {
        let (g, area) = p1_gradients(mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]);
        for a in 0..3 {
            for b in 0..3 {
                let k = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                let m = area / 12.0 * if a == b { 2.0 } else { 1.0 };
                kt.push((tri[a], tri[b], k));
                mt.push((tri[a], tri[b], m));
            }
        }
    }
    (Csr::from_triplets(n, n, &kt), Csr::from_triplets(n, n, &mt))
}

/// `Q = K - k² M` over all mesh nodes.
pub fn assemble_helmholtz_real(mesh: &PeriodicCellMesh, k: f64) -> Csr<f64> {
    let n = mesh.n_nodes();
    let mut t = Vec::with_capacity(9 * mesh.triangles.len());
    for tri in &mesh.triangles {
        let (g, area) = p1_gradients(mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]);
        for a in 0..3 {
            for b in 0..3 {
                let kk = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                let m = area / 12.0 * if a == b { 2.0 } else { 1.0 };
                t.push((tri[a], tri[b], kk - k * k * m));
            }
        }
    }
    Csr::from_triplets(n, n, &t)
}

/// Perturbation form `∫ (A_p - I)∇φ_m·∇φ_l - k²(c_p - 1) φ_m φ_l` over all
/// nodes; only triangles meeting the perturbation column contribute.
pub fn assemble_perturbation(mesh: &PeriodicCellMesh, profile: &SurfaceProfile, k: f64) -> Result<Csr<f64>> {
    let n = mesh.n_nodes();
    let Some((lo, hi)) = profile.perturbation_support() else {
        return Ok(Csr::zeros(n, n));
    };
    let rule = triangle_rule_7();
    let mut t = Vec::new();
    for tri in &mesh.triangles {
        let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
        let xmin = p.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        let xmax = p.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
        if xmax <= lo || xmin >= hi {
            continue;
        }
        let (g, area) = p1_gradients(p[0], p[1], p[2]);
        let mut local = [[0.0f64; 3]; 3];
        let mut any = false;
        for (l, w) in rule.iter() {
            let x = [
                l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
            ];
            let tc = coefficients_unchecked(profile, x)?;
            let da = [[tc.a[0][0] - 1.0, tc.a[0][1]], [tc.a[1][0], tc.a[1][1] - 1.0]];
            let dc = tc.c - 1.0;
            if da.iter().flatten().all(|v| *v == 0.0) && dc == 0.0 {
                continue;
            }
            any = true;
            for a in 0..3 {
                for b in 0..3 {
                    // (A_p - I) ∇φ_b · ∇φ_a
                    let ag0 = da[0][0] * g[b][0] + da[0][1] * g[b][1];
                    let ag1 = da[1][0] * g[b][0] + da[1][1] * g[b][1];
                    let stiff = ag0 * g[a][0] + ag1 * g[a][1];
                    local[a][b] += w * area * (stiff - k * k * dc * l[a] * l[b]);
                }
            }
        }
        if any {
            for a in 0..3 {
                for b in 0..3 {
                    t.push((tri[a], tri[b], local[a][b]));
                }
            }
        }
    }
    Ok(Csr::from_triplets(n, n, &t))
}

/// Correspondence between mesh nodes and quasi-periodic unknowns.
///
/// Masters are the nodes of lines `0..nx`; line `nx` nodes are slaves of
/// line 0. Free unknowns are masters off the surface, Dirichlet unknowns the
/// surface masters.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub nx: usize,
    pub ny: usize,
    /// node -> free index or `usize::MAX`
    pub free_of_node: Vec<usize>,
    /// node -> Dirichlet index or `usize::MAX`
    pub dirichlet_of_node: Vec<usize>,
    pub free_nodes: Vec<usize>,
    pub dirichlet_nodes: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &PeriodicCellMesh) -> Self {
        let n = mesh.n_nodes();
        let mut free_of_node = vec![usize::MAX; n];
        let mut dirichlet_of_node = vec![usize::MAX; n];
        let mut free_nodes = Vec::new();
        let mut dirichlet_nodes = Vec::new();
        for i in 0..mesh.nx {
            for r in 0..=mesh.ny {
                let node = mesh.node(i, r);
                if r == 0 {
                    dirichlet_of_node[node] = dirichlet_nodes.len();
                    dirichlet_nodes.push(node);
                } else {
                    free_of_node[node] = free_nodes.len();
                    free_nodes.push(node);
                }
            }
        }
        DofMap {
            nx: mesh.nx,
            ny: mesh.ny,
            free_of_node,
            dirichlet_of_node,
            free_nodes,
            dirichlet_nodes,
        }
    }

    /// Master node and phase exponent (0 or 1 powers of `p`) of a node.
    #[inline]
    pub fn master(&self, node: usize) -> (usize, bool) {
        let i = node / (self.ny + 1);
        if i == self.nx {
            (node - self.nx * (self.ny + 1), true)
        } else {
            (node, false)
        }
    }

    pub fn n_free(&self) -> usize {
        self.free_nodes.len()
    }

    pub fn n_dirichlet(&self) -> usize {
        self.dirichlet_nodes.len()
    }

    /// Expands master-indexed values (free and Dirichlet) to all nodes.
    pub fn expand(&self, free: &[C64], dirichlet: &[C64], phase: C64) -> Vec<C64> {
        let n = (self.nx + 1) * (self.ny + 1);
        let mut out = vec![C64::new(0.0, 0.0); n];
        for node in 0..n {
            let (m, slave) = self.master(node);
            let v = if self.free_of_node[m] != usize::MAX {
                free[self.free_of_node[m]]
            } else {
                dirichlet[self.dirichlet_of_node[m]]
            };
            out[node] = if slave { phase * v } else { v };
        }
        out
    }
}

/// `p = e^{-iαΛ}`: right-edge values over left-edge values.
pub fn edge_phase(alpha: f64, period: f64) -> C64 {
    C64::from_polar(1.0, -alpha * period)
}

/// Roof DtN matrix `Eᴴ diag(iΛβ_j) E` on the `nx` roof unknowns.
pub fn dtn_matrix(trace: &TraceFourierMatrix, k: f64, period: f64) -> Mat<C64> {
    let e = &trace.matrix;
    let (nm, nt) = (e.nrows(), e.ncols());
    let i = C64::new(0.0, 1.0);
    let d: Vec<C64> = (0..nm).map(|r| i * period * vertical_wavenumber(k, trace.mu(r))).collect();
    let mut de = Mat::<C64>::zeros(nm, nt);
    for r in 0..nm {
        for c in 0..nt {
            de[(r, c)] = d[r] * e[(r, c)];
        }
    }
    let mut out = Mat::<C64>::zeros(nt, nt);
    faer::linalg::matmul::matmul(
        out.as_mut(),
        faer::Accum::Replace,
        e.adjoint(),
        de.as_ref(),
        C64::new(1.0, 0.0),
        faer::Par::Seq,
    );
    out
}

/// Quasi-periodic cell system at one quasi-momentum.
#[derive(Debug, Clone)]
pub struct QuasiPeriodicSystem {
    pub alpha: f64,
    pub k: f64,
    pub j_cutoff: usize,
    pub phase: C64,
    pub dofs: DofMap,
    /// Free-by-free matrix including the DtN block.
    pub matrix: Csr<C64>,
    /// Free-by-Dirichlet coupling for nonzero surface data.
    pub dirichlet: Csr<C64>,
    pub trace: TraceFourierMatrix,
    /// `iΛβ_j` per mode.
    pub dtn_symbol: Vec<C64>,
    /// Free indices of the roof unknowns in trace-column order.
    pub roof_free: Vec<usize>,
}

impl QuasiPeriodicSystem {
    /// Roof load `Eᴴ(Λ f̂)` scattered into a free-length vector.
    pub fn roof_load(&self, f_hat: &[C64], period: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dofs.n_free()];
        let e = &self.trace.matrix;
        for (c, &fi) in self.roof_free.iter().enumerate() {
            let mut s = C64::new(0.0, 0.0);
            for (r, fr) in f_hat.iter().enumerate() {
                s += e[(r, c)].conj() * fr * period;
            }
            out[fi] = s;
        }
        out
    }
}

/// Free indices of the roof unknowns, in the column order of the trace matrix.
pub fn roof_free_indices(mesh: &PeriodicCellMesh, dofs: &DofMap) -> Vec<usize> {
    (0..mesh.nx).map(|i| dofs.free_of_node[mesh.node(i, mesh.ny)]).collect()
}

/// Explicit sparse cell system.
pub fn assemble_quasiperiodic_system(mesh: &PeriodicCellMesh, alpha: f64, k: f64, j_cutoff: usize) -> Result<QuasiPeriodicSystem> {
    let q = assemble_helmholtz_real(mesh, k);
    assemble_quasiperiodic_system_from(mesh, &q, alpha, k, j_cutoff)
}

pub fn assemble_quasiperiodic_system_from(
    mesh: &PeriodicCellMesh,
    q: &Csr<f64>,
    alpha: f64,
    k: f64,
    j_cutoff: usize,
) -> Result<QuasiPeriodicSystem> {
    let dofs = DofMap::new(mesh);
    let p = edge_phase(alpha, mesh.period);
    let one = C64::new(1.0, 0.0);
    let mut tf = Vec::with_capacity(q.nnz());
    let mut td = Vec::new();
    for (a, b, v) in q.triplets() {
        let (ma, sa) = dofs.master(a);
        let fa = dofs.free_of_node[ma];
        if fa == usize::MAX {
            continue; // Dirichlet test function
        }
        let (mb, sb) = dofs.master(b);
        let pa = if sa { p.conj() } else { one };
        let pb = if sb { p } else { one };
        let val = pa * pb * v;
        let fb = dofs.free_of_node[mb];
        if fb != usize::MAX {
            tf.push((fa, fb, val));
        } else {
            td.push((fa, dofs.dirichlet_of_node[mb], val));
        }
    }
    let trace = trace_fourier_matrix(mesh, j_cutoff, alpha)?;
    let dtn = dtn_matrix(&trace, k, mesh.period);
    let roof_free = roof_free_indices(mesh, &dofs);
    for (a, &fa) in roof_free.iter().enumerate() {
        for (b, &fb) in roof_free.iter().enumerate() {
            tf.push((fa, fb, -dtn[(a, b)]));
        }
    }
    let i = C64::new(0.0, 1.0);
    let dtn_symbol = (0..trace.n_modes())
        .map(|r| i * mesh.period * vertical_wavenumber(k, trace.mu(r)))
        .collect();
    Ok(QuasiPeriodicSystem {
        alpha,
        k,
        j_cutoff,
        phase: p,
        matrix: Csr::from_triplets(dofs.n_free(), dofs.n_free(), &tf),
        dirichlet: Csr::from_triplets(dofs.n_free(), dofs.n_dirichlet(), &td),
        dofs,
        trace,
        dtn_symbol,
        roof_free,
    })
}

/// Sparse direct solve; returns the free-length solution.
pub fn solve_single_alpha(system: &QuasiPeriodicSystem, load: &[C64]) -> Result<Vec<C64>> {
    let n = system.dofs.n_free();
    if load.len() != n {
        return Err(Error::Shape(format!("load has length {}, expected {n}", load.len())));
    }
    if load.iter().all(|v| *v == C64::new(0.0, 0.0)) {
        return Ok(vec![C64::new(0.0, 0.0); n]);
    }
    let lu = SparseLu::new(&system.matrix).map_err(|e| Error::Singular {
        alpha: system.alpha,
        message: e.to_string(),
    })?;
    let x = lu.solve(load);
    let r = system.matrix.matvec(&x);
    let bn = crate::linalg::norm2(load);
    let rn = crate::linalg::norm2(&r.iter().zip(load).map(|(a, b)| a - b).collect::<Vec<_>>());
    if !(rn <= 1e-10 * bn) {
        return Err(Error::Singular {
            alpha: system.alpha,
            message: format!("relative residual {:.3e} after direct solve", rn / bn),
        });
    }
    Ok(x)
}

/// Global block system
/// `A_j W_j + C_j U = F_j` (each node), `U + Σ_j B_j W_j = G`,
/// with `B_j = b_j I`.
#[derive(Debug, Clone)]
pub struct CoupledBlocks {
    pub m: usize,
    pub a: Vec<Csr<C64>>,
    pub c: Vec<Csr<C64>>,
    pub b: Vec<C64>,
    pub f: Vec<Vec<C64>>,
    pub g: Vec<C64>,
}

impl CoupledBlocks {
    pub fn n_nodes(&self) -> usize {
        self.a.len()
    }

    /// Number of nonzero M×M blocks, counting the identity.
    pub fn nonzero_blocks(&self) -> usize {
        let a = self.a.iter().filter(|m| m.values.iter().any(|v| v.norm() > 0.0)).count();
        let c = self.c.iter().filter(|m| m.values.iter().any(|v| v.norm() > 0.0)).count();
        let b = self.b.iter().filter(|v| v.norm() > 0.0).count();
        a + c + b + 1
    }

    pub fn max_coupling_entry(&self) -> f64 {
        self.c
            .iter()
            .flat_map(|m| m.values.iter())
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Full system applied to `[W_1, …, W_N, U]`.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let m = self.m;
        let n = self.n_nodes();
        let u = &x[n * m..(n + 1) * m];
        let mut y = vec![C64::new(0.0, 0.0); (n + 1) * m];
        for j in 0..n {
            let w = &x[j * m..(j + 1) * m];
            let aw = self.a[j].matvec(w);
            let cu = self.c[j].matvec(u);
            for i in 0..m {
                y[j * m + i] = aw[i] + cu[i];
                y[n * m + i] += self.b[j] * w[i];
            }
        }
        for i in 0..m {
            y[n * m + i] += u[i];
        }
        y
    }

    pub fn rhs(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity((self.n_nodes() + 1) * self.m);
        for f in &self.f {
            out.extend_from_slice(f);
        }
        out.extend_from_slice(&self.g);
        out
    }
}

/// Blocks of the coupled system for the free unknowns of `mesh`, with
/// `C_j = c P_ff`, `B_j = -c w_j` and zero right-hand sides; callers fill
/// `f` and `g` from the incident data.
pub fn assemble_coupling_blocks(
    mesh: &PeriodicCellMesh,
    profile: &SurfaceProfile,
    plan: &ContourPlan,
    k: f64,
    j_cutoff: usize,
) -> Result<CoupledBlocks> {
    let q = assemble_helmholtz_real(mesh, k);
    let pert = assemble_perturbation(mesh, profile, k)?;
    let dofs = DofMap::new(mesh);
    let c = (mesh.period / TAU).sqrt();
    let pf = pert.select(&dofs.free_of_node, dofs.n_free(), &dofs.free_of_node, dofs.n_free());
    let cj = Csr {
        values: pf.values.iter().map(|v| C64::new(c * v, 0.0)).collect(),
        ..pf.to_complex()
    };
    let mut a = Vec::new();
    let mut cs = Vec::new();
    let mut b = Vec::new();
    for node in plan.nodes() {
        let sys = assemble_quasiperiodic_system_from(mesh, &q, node.alpha, k, j_cutoff)?;
        a.push(sys.matrix);
        cs.push(cj.clone());
        b.push(C64::new(-c * node.weight, 0.0));
    }
    let m = dofs.n_free();
    let n = a.len();
    Ok(CoupledBlocks {
        m,
        a,
        c: cs,
        b,
        f: vec![vec![C64::new(0.0, 0.0); m]; n],
        g: vec![C64::new(0.0, 0.0); m],
    })
}
