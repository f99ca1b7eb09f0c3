//! Global Bloch system: per-node cell solves, the coupled solve for perturbed
//! surfaces and reconstruction of physical fields.
//!
//! The cell interior is condensed once per (mesh, k): with `Q = K - k²M`
//! real, `Ŝ = Q_BB - Q_BI Q_II⁻¹ Q_IB` on the cell perimeter does not depend
//! on α, so each quadrature node only factors a dense matrix on the boundary
//! unknowns.

use crate::contour::{ContourPlan, QuadNode};
use crate::fem::{
    assemble_helmholtz_real, assemble_perturbation, assemble_quasiperiodic_system_from, dtn_matrix, edge_phase, CoupledBlocks,
    DofMap,
};
use crate::geometry::{inverse_diffeomorphism, surface_height, SurfaceProfile, Variant};
use crate::incident::{bloch_transform_eval, incident_field_eval, modal_roof_data, IncidentField, IncidentKind};
use crate::linalg::{gmres, norm2, Csr, GmresConfig, Ilu, IluFill, SparseLu};
use crate::mesh::{trace_fourier_matrix, PeriodicCellMesh, TraceFourierMatrix};
use crate::{Error, Result, C64};
use faer::linalg::solvers::{DenseSolveCore, PartialPivLu, Solve};
use faer::Mat;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Elimination of the per-node unknowns; the reduced system on the
    /// perturbation support is solved by GMRES.
    Schur,
    /// GMRES on the full block system with ILU-preconditioned diagonal blocks.
    Gmres,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RhsMode {
    /// Total field; roof data from the exact Rayleigh coefficients.
    Modal,
    /// Scattered field; surface data `-u^i` sampled at the surface nodes.
    #[default]
    TraceSampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    Total,
    Scattered,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub strategy: Strategy,
    pub rhs_mode: RhsMode,
    pub j_cutoff: usize,
    pub gmres: GmresConfig,
    pub ilu: IluFill,
    /// Relative tolerance of the reduced iteration in the Schur path.
    pub schur_tol: f64,
}

/// `⌈k/Λ*⌉ + 15`.
pub fn default_j_cutoff(k: f64, period: f64) -> usize {
    (k * period / TAU).ceil() as usize + 15
}

impl SolverOptions {
    pub fn new(k: f64, period: f64) -> Self {
        SolverOptions {
            strategy: Strategy::Schur,
            rhs_mode: RhsMode::TraceSampled,
            j_cutoff: default_j_cutoff(k, period),
            gmres: GmresConfig::default(),
            ilu: IluFill::Zero,
            schur_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BoundaryMaster {
    node: usize,
    perim: usize,
    /// Perimeter index of the right-edge image, for left-edge masters.
    slave: Option<usize>,
    free: usize,
    dirichlet: usize,
}

/// Condensed cell operator for one mesh and wavenumber.
pub struct CellOperator {
    pub mesh: PeriodicCellMesh,
    pub profile: SurfaceProfile,
    pub k: f64,
    pub dofs: DofMap,
    q: Csr<f64>,
    pert: Option<Csr<f64>>,
    interior_of: Vec<usize>,
    perim_of: Vec<usize>,
    n_interior: usize,
    n_perim: usize,
    lu_ii: SparseLu<f64>,
    q_ib: Csr<f64>,
    q_bi: Csr<f64>,
    s_hat: Mat<f64>,
    bm: Vec<BoundaryMaster>,
    /// perimeter index -> (boundary master, is right-edge image)
    perim_master: Vec<(usize, bool)>,
    bfree: Vec<usize>,
    bdir: Vec<usize>,
    roof_f: Vec<usize>,
    pub setup_seconds: f64,
}

impl std::fmt::Debug for CellOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CellOperator")
            .field("nx", &self.mesh.nx)
            .field("ny", &self.mesh.ny)
            .field("k", &self.k)
            .field("perimeter", &self.n_perim)
            .field("interior", &self.n_interior)
            .finish()
    }
}

/// Factored boundary system of one quadrature node.
pub struct NodeOperator {
    pub alpha: f64,
    pub phase: C64,
    pub trace: TraceFourierMatrix,
    lu: PartialPivLu<C64>,
    s_fd: Mat<C64>,
}

/// `Σ_j w_j p_j^a conj(p_j)^b S_j⁻¹` for the needed phase combinations.
struct PhasedInverseSum {
    g00: Mat<C64>,
    g10: Mat<C64>,
    g01: Mat<C64>,
    weight_sum: f64,
}

impl CellOperator {
    /// `mesh` must be the reference (base-surface) mesh; the perturbation,
    /// if any, enters through the transformed coefficients.
    pub fn new(profile: &SurfaceProfile, mesh: PeriodicCellMesh, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::Precondition(format!("wavenumber must be positive, got {k}")));
        }
        if mesh.variant != Variant::Base {
            return Err(Error::Precondition(
                "the cell operator is built on the reference mesh of the unperturbed surface".into(),
            ));
        }
        let t0 = Instant::now();
        let q = assemble_helmholtz_real(&mesh, k);
        let pert = if profile.is_perturbed() {
            Some(assemble_perturbation(&mesh, profile, k)?)
        } else {
            None
        };
        let n = mesh.n_nodes();
        let dofs = DofMap::new(&mesh);
        let mut interior_of = vec![usize::MAX; n];
        let mut perim_of = vec![usize::MAX; n];
        let (mut ni, mut nb) = (0, 0);
        for node in 0..n {
            let (i, r) = mesh.column_row(node);
            if i == 0 || i == mesh.nx || r == 0 || r == mesh.ny {
                perim_of[node] = nb;
                nb += 1;
            } else {
                interior_of[node] = ni;
                ni += 1;
            }
        }
        let q_ii = q.select(&interior_of, ni, &interior_of, ni);
        let q_ib = q.select(&interior_of, ni, &perim_of, nb);
        let q_bi = q.select(&perim_of, nb, &interior_of, ni);
        let q_bb = q.select(&perim_of, nb, &perim_of, nb);
        let lu_ii = SparseLu::new(&q_ii)?;

        let mut s_hat = Mat::<f64>::zeros(nb, nb);
        for (a, b, v) in q_bb.triplets() {
            s_hat[(a, b)] = v;
        }
        // Q symmetric: column b of Q_IB is row b of Q_BI
        const BATCH: usize = 128;
        let mut start = 0;
        while start < nb {
            let w = BATCH.min(nb - start);
            let mut rhs = Mat::<f64>::zeros(ni, w);
            for c in 0..w {
                for (i, v) in q_bi.row(start + c) {
                    rhs[(i, c)] = v;
                }
            }
            let x = lu_ii.solve_mat(&rhs);
            for a in 0..nb {
                for (i, v) in q_bi.row(a) {
                    for c in 0..w {
                        s_hat[(a, start + c)] -= v * x[(i, c)];
                    }
                }
            }
            start += w;
        }
        if (0..nb).any(|a| !s_hat[(a, a)].is_finite()) {
            return Err(Error::Singular {
                alpha: f64::NAN,
                message: "interior condensation produced non-finite values".into(),
            });
        }

        let mut bm = Vec::new();
        let mut bm_of_node = vec![usize::MAX; n];
        let mut bfree = Vec::new();
        let mut bdir = vec![usize::MAX; dofs.n_dirichlet()];
        for node in 0..n {
            let (i, r) = mesh.column_row(node);
            if perim_of[node] == usize::MAX || i == mesh.nx {
                continue;
            }
            let slave = (i == 0).then(|| perim_of[mesh.node(mesh.nx, r)]);
            let idx = bm.len();
            let (free, dirichlet) = if r == 0 {
                let d = dofs.dirichlet_of_node[node];
                bdir[d] = idx;
                (usize::MAX, d)
            } else {
                bfree.push(idx);
                (bfree.len() - 1, usize::MAX)
            };
            bm.push(BoundaryMaster {
                node,
                perim: perim_of[node],
                slave,
                free,
                dirichlet,
            });
            bm_of_node[node] = idx;
        }
        let mut perim_master = vec![(usize::MAX, false); nb];
        for (idx, b) in bm.iter().enumerate() {
            perim_master[b.perim] = (idx, false);
            if let Some(s) = b.slave {
                perim_master[s] = (idx, true);
            }
        }
        let roof_f = (0..mesh.nx).map(|i| bm[bm_of_node[mesh.node(i, mesh.ny)]].free).collect();
        let setup_seconds = t0.elapsed().as_secs_f64();
        log::info!(
            "cell operator: {}x{} cells, {} interior / {} perimeter nodes, {:.2}s",
            mesh.nx,
            mesh.ny,
            ni,
            nb,
            setup_seconds
        );
        Ok(CellOperator {
            mesh,
            profile: profile.clone(),
            k,
            dofs,
            q,
            pert,
            interior_of,
            perim_of,
            n_interior: ni,
            n_perim: nb,
            lu_ii,
            q_ib,
            q_bi,
            s_hat,
            bm,
            perim_master,
            bfree,
            bdir,
            roof_f,
            setup_seconds,
        })
    }

    pub fn q_matrix(&self) -> &Csr<f64> {
        &self.q
    }

    /// Perturbation form over all nodes, `None` for an unperturbed profile.
    pub fn perturbation(&self) -> Option<&Csr<f64>> {
        self.pert.as_ref()
    }

    pub fn n_boundary_free(&self) -> usize {
        self.bfree.len()
    }

    /// Boundary system at `alpha`, factored.
    pub fn node_operator(&self, alpha: f64, j_cutoff: usize) -> Result<NodeOperator> {
        let p = edge_phase(alpha, self.mesh.period);
        let pc = p.conj();
        let s = &self.s_hat;
        let entry = |a: &BoundaryMaster, b: &BoundaryMaster| -> C64 {
            let mut v = C64::new(s[(a.perim, b.perim)], 0.0);
            if let Some(sb) = b.slave {
                v += p * s[(a.perim, sb)];
            }
            if let Some(sa) = a.slave {
                v += pc * s[(sa, b.perim)];
                if let Some(sb) = b.slave {
                    v += s[(sa, sb)];
                }
            }
            v
        };
        let nf = self.bfree.len();
        let nd = self.bdir.len();
        let mut s_ff = Mat::<C64>::zeros(nf, nf);
        for fa in 0..nf {
            let a = &self.bm[self.bfree[fa]];
            for fb in 0..nf {
                s_ff[(fa, fb)] = entry(a, &self.bm[self.bfree[fb]]);
            }
        }
        let trace = trace_fourier_matrix(&self.mesh, j_cutoff, alpha)?;
        let dtn = dtn_matrix(&trace, self.k, self.mesh.period);
        for (a, &fa) in self.roof_f.iter().enumerate() {
            for (b, &fb) in self.roof_f.iter().enumerate() {
                s_ff[(fa, fb)] -= dtn[(a, b)];
            }
        }
        let mut s_fd = Mat::<C64>::zeros(nf, nd);
        for fa in 0..nf {
            let a = &self.bm[self.bfree[fa]];
            for d in 0..nd {
                s_fd[(fa, d)] = entry(a, &self.bm[self.bdir[d]]);
            }
        }
        let lu = s_ff.partial_piv_lu();
        // solvability probe
        let probe = Mat::<C64>::from_fn(nf, 1, |i, _| C64::new(1.0 + (i % 7) as f64, (i % 3) as f64 - 1.0));
        let x = lu.solve(&probe);
        let mut res = 0.0f64;
        let mut bn = 0.0f64;
        for i in 0..nf {
            let mut acc = ZERO;
            for j in 0..nf {
                acc += s_ff[(i, j)] * x[(j, 0)];
            }
            res += (acc - probe[(i, 0)]).norm_sqr();
            bn += probe[(i, 0)].norm_sqr();
        }
        let rel = (res / bn).sqrt();
        if !(rel <= 1e-8) {
            return Err(Error::Singular {
                alpha,
                message: format!("boundary system is singular or ill-conditioned (probe residual {rel:.3e})"),
            });
        }
        Ok(NodeOperator {
            alpha,
            phase: p,
            trace,
            lu,
            s_fd,
        })
    }

    /// Solves the boundary system for a free load (already condensed) and
    /// surface values; returns values on all boundary masters.
    fn solve_boundary(&self, no: &NodeOperator, mut rhs_f: Vec<C64>, g_d: Option<&[C64]>) -> Vec<C64> {
        let nf = self.bfree.len();
        if let Some(g) = g_d {
            for (fa, r) in rhs_f.iter_mut().enumerate() {
                let mut acc = ZERO;
                for (d, gv) in g.iter().enumerate() {
                    acc += no.s_fd[(fa, d)] * gv;
                }
                *r -= acc;
            }
        }
        let b = Mat::<C64>::from_fn(nf, 1, |i, _| rhs_f[i]);
        let x = no.lu.solve(&b);
        self.bm
            .iter()
            .map(|m| {
                if m.free != usize::MAX {
                    x[(m.free, 0)]
                } else {
                    g_d.map(|g| g[m.dirichlet]).unwrap_or(ZERO)
                }
            })
            .collect()
    }

    /// `[P_αᴴ]_F v` for a perimeter vector.
    fn condense(&self, phase: C64, v: &[C64]) -> Vec<C64> {
        let pc = phase.conj();
        self.bfree
            .iter()
            .map(|&b| {
                let m = &self.bm[b];
                let mut s = v[m.perim];
                if let Some(sl) = m.slave {
                    s += pc * v[sl];
                }
                s
            })
            .collect()
    }

    /// Boundary-master values to perimeter values.
    fn expand(&self, phase: C64, wb: &[C64]) -> Vec<C64> {
        self.perim_master
            .iter()
            .map(|&(b, slave)| if slave { phase * wb[b] } else { wb[b] })
            .collect()
    }

    fn split(&self, y: &[C64]) -> (Vec<C64>, Vec<C64>) {
        let mut yi = vec![ZERO; self.n_interior];
        let mut yb = vec![ZERO; self.n_perim];
        for (node, v) in y.iter().enumerate() {
            if self.interior_of[node] != usize::MAX {
                yi[self.interior_of[node]] = *v;
            } else {
                yb[self.perim_of[node]] = *v;
            }
        }
        (yi, yb)
    }

    fn join(&self, interior: &[C64], perim: &[C64]) -> Vec<C64> {
        (0..self.mesh.n_nodes())
            .map(|node| {
                if self.interior_of[node] != usize::MAX {
                    interior[self.interior_of[node]]
                } else {
                    perim[self.perim_of[node]]
                }
            })
            .collect()
    }

    /// `Q_II⁻¹ (y_I - Q_IB b)`.
    fn interior_from(&self, y_i: Option<&[C64]>, perim: &[C64]) -> Vec<C64> {
        let qb: Vec<C64> = self.q_ib.matvec(perim);
        let rhs: Vec<C64> = match y_i {
            Some(y) => y.iter().zip(&qb).map(|(a, b)| a - b).collect(),
            None => qb.iter().map(|b| -b).collect(),
        };
        if rhs.iter().all(|v| *v == ZERO) {
            return rhs;
        }
        self.lu_ii.solve_complex(&rhs)
    }

    /// Full nodal vector of one quasi-periodic field from boundary values and
    /// a node-space interior load.
    fn nodal_field(&self, phase: C64, wb: &[C64], load: Option<&[C64]>) -> Vec<C64> {
        let perim = self.expand(phase, wb);
        let yi = load.map(|y| self.split(y).0);
        let interior = self.interior_from(yi.as_deref(), &perim);
        self.join(&interior, &perim)
    }

    /// Solves the cell problem at `alpha` for a node-space load (test
    /// functions of non-surface nodes, images folded in by the caller or
    /// absent) and surface values `g_d`; returns the nodal field on all nodes.
    pub fn solve_alpha(&self, alpha: f64, j_cutoff: usize, load: &[C64], roof_load: Option<&[C64]>, g_d: Option<&[C64]>) -> Result<Vec<C64>> {
        if load.len() != self.mesh.n_nodes() {
            return Err(Error::Shape(format!("load has length {}, expected {}", load.len(), self.mesh.n_nodes())));
        }
        let no = self.node_operator(alpha, j_cutoff)?;
        let (yi, yb) = self.split(load);
        let z = if yi.iter().all(|v| *v == ZERO) {
            yi.clone()
        } else {
            self.lu_ii.solve_complex(&yi)
        };
        let q: Vec<C64> = self.q_bi.matvec(&z);
        let v: Vec<C64> = yb.iter().zip(&q).map(|(a, b)| a - b).collect();
        let mut rhs = self.condense(no.phase, &v);
        if let Some(r) = roof_load {
            for (i, &f) in self.roof_f.iter().enumerate() {
                rhs[f] += r[i];
            }
        }
        let wb = self.solve_boundary(&no, rhs, g_d);
        Ok(self.nodal_field(no.phase, &wb, Some(load)))
    }

    fn accumulate(&self, acc: &mut PhasedInverseSum, no: &NodeOperator, weight: f64) {
        let x = no.lu.inverse();
        let wp = no.phase * weight;
        let wpc = no.phase.conj() * weight;
        let nf = self.bfree.len();
        for j in 0..nf {
            for i in 0..nf {
                let v = x[(i, j)];
                acc.g00[(i, j)] += v * weight;
                acc.g10[(i, j)] += v * wp;
                acc.g01[(i, j)] += v * wpc;
            }
        }
        acc.weight_sum += weight;
    }

    /// `T(y) = Σ_j w_j (A_j⁻¹ y)` lifted to all nodes, for a node-space load
    /// with zero surface rows.
    fn apply_t(&self, g: &PhasedInverseSum, y: &[C64]) -> Vec<C64> {
        let (yi, yb) = self.split(y);
        let z = if yi.iter().all(|v| *v == ZERO) {
            yi.clone()
        } else {
            self.lu_ii.solve_complex(&yi)
        };
        let q: Vec<C64> = self.q_bi.matvec(&z);
        let nf = self.bfree.len();
        let mut v0 = vec![ZERO; nf];
        let mut v1 = vec![ZERO; nf];
        for (m, &(b, slave)) in self.perim_master.iter().enumerate() {
            let f = self.bm[b].free;
            if f == usize::MAX {
                continue;
            }
            let v = yb[m] - q[m];
            if slave {
                v1[f] += v;
            } else {
                v0[f] += v;
            }
        }
        let mut t0 = vec![ZERO; nf];
        let mut t1 = vec![ZERO; nf];
        for j in 0..nf {
            let (a0, a1) = (v0[j], v1[j]);
            if a0 == ZERO && a1 == ZERO {
                continue;
            }
            for i in 0..nf {
                t0[i] += g.g00[(i, j)] * a0 + g.g01[(i, j)] * a1;
                t1[i] += g.g10[(i, j)] * a0 + g.g00[(i, j)] * a1;
            }
        }
        let perim: Vec<C64> = self
            .perim_master
            .iter()
            .map(|&(b, slave)| {
                let f = self.bm[b].free;
                if f == usize::MAX {
                    ZERO
                } else if slave {
                    t1[f]
                } else {
                    t0[f]
                }
            })
            .collect();
        let wy: Vec<C64> = yi.iter().map(|v| v * g.weight_sum).collect();
        let interior = self.interior_from(Some(&wy), &perim);
        self.join(&interior, &perim)
    }

    /// Zeroes the rows of surface nodes (not test functions of the space).
    fn mask_surface_rows(&self, y: &mut [C64]) {
        for i in 0..=self.mesh.nx {
            y[self.mesh.node(i, 0)] = ZERO;
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveStats {
    pub strategy: String,
    pub coupled: bool,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    pub seconds: f64,
}

/// Solution of the Bloch system.
pub struct BlochSolution {
    op: Arc<CellOperator>,
    pub plan: ContourPlan,
    pub nodes: Vec<QuadNode>,
    pub j_cutoff: usize,
    pub kind: FieldKind,
    pub incident: IncidentField,
    base: Vec<Vec<C64>>,
    coupling_load: Option<Vec<C64>>,
    boundary: OnceLock<Vec<Vec<C64>>>,
    /// Physical field (total or scattered per `kind`) at the reference cell
    /// nodes, i.e. `u ∘ Φ_p`.
    pub u_cell: Vec<C64>,
    pub stats: SolveStats,
}

impl std::fmt::Debug for BlochSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlochSolution")
            .field("nodes", &self.nodes.len())
            .field("kind", &self.kind)
            .field("stats", &self.stats)
            .finish()
    }
}

impl BlochSolution {
    pub fn operator(&self) -> &Arc<CellOperator> {
        &self.op
    }

    pub fn mesh(&self) -> &PeriodicCellMesh {
        &self.op.mesh
    }

    /// Boundary-master values of every node field (computed on first use
    /// for the reduced coupled path).
    fn boundary_values(&self) -> Result<&Vec<Vec<C64>>> {
        if let Some(v) = self.boundary.get() {
            return Ok(v);
        }
        let op = &self.op;
        let y = self.coupling_load.as_ref().expect("lazy boundary values need a coupling load");
        let (yi, yb) = op.split(y);
        let z = op.lu_ii.solve_complex(&yi);
        let q: Vec<C64> = op.q_bi.matvec(&z);
        let v: Vec<C64> = yb.iter().zip(&q).map(|(a, b)| a - b).collect();
        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, w0) in self.nodes.iter().zip(&self.base) {
            let no = op.node_operator(node.alpha, self.j_cutoff)?;
            let dw = op.solve_boundary(&no, op.condense(no.phase, &v), None);
            out.push(w0.iter().zip(&dw).map(|(a, b)| a + b).collect());
        }
        let _ = self.boundary.set(out);
        Ok(self.boundary.get().expect("set above"))
    }

    /// Nodal values of `w(α_j, ·)` on all cell nodes.
    pub fn node_field(&self, j: usize) -> Result<Vec<C64>> {
        let node = self.nodes.get(j).ok_or_else(|| Error::Shape(format!("node {j} out of range")))?;
        let wb = &self.boundary_values()?[j];
        let phase = edge_phase(node.alpha, self.op.mesh.period);
        Ok(self.op.nodal_field(phase, wb, self.coupling_load.as_deref()))
    }

    pub fn node_fields(&self) -> Result<Vec<Vec<C64>>> {
        (0..self.nodes.len()).map(|j| self.node_field(j)).collect()
    }

    /// Inverse transform at the reference nodes of the cell shifted by
    /// `shift` periods (in reference coordinates for shift 0).
    pub fn shifted_nodal_field(&self, shift: i64) -> Result<Vec<C64>> {
        let op = &self.op;
        let period = op.mesh.period;
        let c = (period / TAU).sqrt();
        let bv = self.boundary_values()?;
        let mut perim = vec![ZERO; op.n_perim];
        let mut wsum = ZERO;
        for (node, wb) in self.nodes.iter().zip(bv) {
            let s = C64::from_polar(c * node.weight, -node.alpha * period * shift as f64);
            wsum += s;
            let e = op.expand(edge_phase(node.alpha, period), wb);
            for (p, v) in perim.iter_mut().zip(&e) {
                *p += s * v;
            }
        }
        let yi = self.coupling_load.as_ref().map(|y| op.split(y).0.iter().map(|v| v * wsum).collect::<Vec<_>>());
        let interior = op.interior_from(yi.as_deref(), &perim);
        Ok(op.join(&interior, &perim))
    }

    /// Physical position of each reference node.
    pub fn physical_nodes(&self) -> Vec<[f64; 2]> {
        let profile = &self.op.profile;
        self.op
            .mesh
            .nodes
            .iter()
            .map(|&x| crate::geometry::diffeomorphism(profile, x).unwrap_or(x))
            .collect()
    }

    /// Scattered field at every reference node (total minus incident at the
    /// physical position for total-field solutions).
    pub fn nodal_scattered(&self) -> Result<Vec<C64>> {
        match self.kind {
            FieldKind::Scattered => Ok(self.u_cell.clone()),
            FieldKind::Total => self
                .physical_nodes()
                .iter()
                .zip(&self.u_cell)
                .map(|(x, u)| Ok(u - incident_field_eval(&self.incident, *x)?))
                .collect(),
        }
    }

    /// Total field at every reference node.
    pub fn nodal_total(&self) -> Result<Vec<C64>> {
        match self.kind {
            FieldKind::Total => Ok(self.u_cell.clone()),
            FieldKind::Scattered => self
                .physical_nodes()
                .iter()
                .zip(&self.u_cell)
                .map(|(x, u)| Ok(u + incident_field_eval(&self.incident, *x)?))
                .collect(),
        }
    }

    /// `u^s` at the roof nodes `i = 0..=nx`.
    pub fn roof_scattered(&self) -> Result<Vec<C64>> {
        let mesh = &self.op.mesh;
        mesh.top_nodes()
            .iter()
            .map(|&n| {
                let u = self.u_cell[n];
                match self.kind {
                    FieldKind::Scattered => Ok(u),
                    FieldKind::Total => Ok(u - incident_field_eval(&self.incident, mesh.nodes[n])?),
                }
            })
            .collect()
    }
}

/// Scattered field at physical points of the cell shifted by `shift` periods.
pub fn scattered_field(solution: &BlochSolution, points: &[[f64; 2]], shift: i64) -> Result<Vec<C64>> {
    let op = solution.operator();
    let mesh = &op.mesh;
    let period = mesh.period;
    let owned;
    let values: &[C64] = if shift == 0 {
        &solution.u_cell
    } else {
        owned = solution.shifted_nodal_field(shift)?;
        &owned
    };
    let variant = if shift == 0 { Variant::Perturbed } else { Variant::Base };
    let mut out = Vec::with_capacity(points.len());
    for &y in points {
        let local = [y[0] - period * shift as f64, y[1]];
        let zs = surface_height(&op.profile, local[0], variant);
        if local[1] < zs - 1e-12 || local[1] > mesh.roof + 1e-12 {
            return Err(Error::Domain(format!(
                "point ({}, {}) is outside the shifted cell domain [{zs}, {}]",
                y[0], y[1], mesh.roof
            )));
        }
        let x = if shift == 0 && op.profile.is_perturbed() {
            inverse_diffeomorphism(&op.profile, local)?
        } else {
            local
        };
        let u = mesh
            .interpolate(values, x)
            .ok_or_else(|| Error::Domain(format!("point ({}, {}) not in the cell mesh", y[0], y[1])))?;
        out.push(match solution.kind {
            FieldKind::Scattered => u,
            FieldKind::Total => u - incident_field_eval(&solution.incident, y)?,
        });
    }
    Ok(out)
}

/// Per-node surface and roof data of the chosen right-hand side.
struct NodeData {
    roof: Option<Vec<C64>>,
    surface: Option<Vec<C64>>,
}

fn node_data(op: &CellOperator, incident: &IncidentField, mode: RhsMode, alpha: f64, j_cutoff: usize, trace: &TraceFourierMatrix, delta: &[C64]) -> Result<NodeData> {
    let mesh = &op.mesh;
    let period = mesh.period;
    match mode {
        RhsMode::Modal => {
            let f_hat = modal_roof_data(incident, alpha, period, j_cutoff, mesh.roof)?;
            if f_hat.iter().all(|v| *v == ZERO) {
                return Ok(NodeData { roof: None, surface: None });
            }
            let e = &trace.matrix;
            let roof = (0..mesh.nx)
                .map(|c| (0..e.nrows()).map(|r| e[(r, c)].conj() * f_hat[r] * period).sum())
                .collect();
            Ok(NodeData {
                roof: Some(roof),
                surface: None,
            })
        }
        RhsMode::TraceSampled => {
            let c = (period / TAU).sqrt();
            let mut g = Vec::with_capacity(mesh.nx);
            for i in 0..mesh.nx {
                let x = [mesh.x1[i], mesh.bottom[i]];
                g.push(-bloch_transform_eval(incident, alpha, period, x)? - c * delta[i]);
            }
            Ok(NodeData {
                roof: None,
                surface: Some(g),
            })
        }
    }
}

fn check_inputs(op: &CellOperator, plan: &ContourPlan, incident: &IncidentField, options: &SolverOptions) -> Result<()> {
    if (op.k - incident.k).abs() > 1e-14 * op.k {
        return Err(Error::Precondition(format!(
            "cell operator built for k = {} but incident field has k = {}",
            op.k, incident.k
        )));
    }
    if (plan.breakpoints.k - op.k).abs() > 1e-14 * op.k {
        return Err(Error::Precondition("contour plan built for a different wavenumber".into()));
    }
    if (plan.breakpoints.dual_period - TAU / op.mesh.period).abs() > 1e-12 {
        return Err(Error::Precondition("contour plan built for a different period".into()));
    }
    incident.validate(op.mesh.roof)?;
    if options.rhs_mode == RhsMode::Modal {
        if let IncidentKind::GreenHalfSpace { source } = incident.kind {
            let z = surface_height(&op.profile, source[0], Variant::Perturbed);
            if source[1] > z && source[1] < op.mesh.roof {
                return Err(Error::config(
                    "rhs_mode",
                    "the modal right-hand side needs the source outside the computational domain",
                ));
            }
        }
    }
    Ok(())
}

/// Solves the Bloch-transformed scattering problem.
///
/// Unperturbed profiles give independent node problems; perturbed ones are
/// coupled through the reconstructed field on the perturbation support.
pub fn solve_bloch_system(op: &Arc<CellOperator>, plan: &ContourPlan, incident: &IncidentField, options: &SolverOptions) -> Result<BlochSolution> {
    check_inputs(op, plan, incident, options)?;
    let t0 = Instant::now();
    let mesh = &op.mesh;
    let period = mesh.period;
    let c = (period / TAU).sqrt();
    let nodes = plan.nodes();
    let kind = match options.rhs_mode {
        RhsMode::Modal => FieldKind::Total,
        RhsMode::TraceSampled => FieldKind::Scattered,
    };
    // surface correction of the scattered-field data on the bump
    let mut delta = vec![ZERO; mesh.nx];
    if options.rhs_mode == RhsMode::TraceSampled && op.profile.is_perturbed() {
        for i in 0..mesh.nx {
            let x1 = mesh.x1[i];
            let zp = surface_height(&op.profile, x1, Variant::Perturbed);
            if zp != mesh.bottom[i] {
                delta[i] = incident_field_eval(incident, [x1, zp])? - incident_field_eval(incident, [x1, mesh.bottom[i]])?;
            }
        }
    }
    let coupled = op.pert.is_some();
    if coupled && options.strategy == Strategy::Gmres {
        return solve_full_gmres(op, plan, incident, options, &nodes, kind, &delta, t0);
    }

    let nf = op.bfree.len();
    let mut acc = coupled.then(|| PhasedInverseSum {
        g00: Mat::zeros(nf, nf),
        g10: Mat::zeros(nf, nf),
        g01: Mat::zeros(nf, nf),
        weight_sum: 0.0,
    });
    let mut base = Vec::with_capacity(nodes.len());
    let mut u0_perim = vec![ZERO; op.n_perim];
    for node in &nodes {
        let no = op.node_operator(node.alpha, options.j_cutoff)?;
        let data = node_data(op, incident, options.rhs_mode, node.alpha, options.j_cutoff, &no.trace, &delta)?;
        let mut rhs = vec![ZERO; nf];
        if let Some(r) = &data.roof {
            for (i, &f) in op.roof_f.iter().enumerate() {
                rhs[f] += r[i];
            }
        }
        let wb = op.solve_boundary(&no, rhs, data.surface.as_deref());
        let e = op.expand(no.phase, &wb);
        for (u, v) in u0_perim.iter_mut().zip(&e) {
            *u += c * node.weight * v;
        }
        if let Some(acc) = acc.as_mut() {
            op.accumulate(acc, &no, node.weight);
        }
        base.push(wb);
    }
    let u0_interior = op.interior_from(None, &u0_perim);
    let u0 = op.join(&u0_interior, &u0_perim);

    let mut stats = SolveStats {
        strategy: if coupled { "schur".into() } else { "decoupled".into() },
        coupled,
        ..Default::default()
    };
    let (u_cell, coupling_load, boundary) = match (&op.pert, acc) {
        (Some(pert), Some(acc)) => {
            let (u, y, res) = solve_reduced(op, pert, &acc, &u0, c, options)?;
            stats.iterations = res.iterations;
            stats.residual = res.residual;
            stats.history = res.history;
            (u, Some(y), OnceLock::new())
        }
        _ => {
            let cell = OnceLock::new();
            let _ = cell.set(base.clone());
            (u0, None, cell)
        }
    };
    stats.seconds = t0.elapsed().as_secs_f64();
    log::info!(
        "{} solve: {} nodes, {} iterations, residual {:.2e}, {:.2}s",
        stats.strategy,
        nodes.len(),
        stats.iterations,
        stats.residual,
        stats.seconds
    );
    Ok(BlochSolution {
        op: Arc::clone(op),
        plan: plan.clone(),
        nodes,
        j_cutoff: options.j_cutoff,
        kind,
        incident: *incident,
        base,
        coupling_load,
        boundary,
        u_cell,
        stats,
    })
}

/// Nodes touched by the perturbation form, split into non-surface and
/// surface nodes.
fn support_nodes(op: &CellOperator, pert: &Csr<f64>) -> (Vec<usize>, Vec<usize>) {
    let mut touched = vec![false; op.mesh.n_nodes()];
    for (_, j, v) in pert.triplets() {
        if v != 0.0 {
            touched[j] = true;
        }
    }
    let mut free = Vec::new();
    let mut surface = Vec::new();
    for (node, t) in touched.iter().enumerate() {
        if *t {
            if op.mesh.column_row(node).1 == 0 {
                surface.push(node);
            } else {
                free.push(node);
            }
        }
    }
    (free, surface)
}

struct ReducedResult {
    iterations: usize,
    residual: f64,
    history: Vec<f64>,
}

/// Reduced equation on the support unknowns
/// `U_S + c² T(P U)_S = U0_S` with the surface part of `U` fixed to `U0`.
fn solve_reduced(
    op: &CellOperator,
    pert: &Csr<f64>,
    acc: &PhasedInverseSum,
    u0: &[C64],
    c: f64,
    options: &SolverOptions,
) -> Result<(Vec<C64>, Vec<C64>, ReducedResult)> {
    let n = op.mesh.n_nodes();
    let (s_nodes, d_nodes) = support_nodes(op, pert);
    let c2 = c * c;
    let coupling = |u: &[C64]| -> Vec<C64> {
        let mut y: Vec<C64> = pert.matvec(u);
        op.mask_surface_rows(&mut y);
        y
    };
    let mut ud = vec![ZERO; n];
    for &d in &d_nodes {
        ud[d] = u0[d];
    }
    let td = op.apply_t(acc, &coupling(&ud));
    let rhs: Vec<C64> = s_nodes.iter().map(|&s| u0[s] - c2 * td[s]).collect();
    let apply = |x: &[C64], out: &mut [C64]| {
        let mut u = vec![ZERO; n];
        for (k, &s) in s_nodes.iter().enumerate() {
            u[s] = x[k];
        }
        let t = op.apply_t(acc, &coupling(&u));
        for (k, &s) in s_nodes.iter().enumerate() {
            out[k] = x[k] + c2 * t[s];
        }
    };
    let cfg = GmresConfig {
        tol: options.schur_tol,
        restart: options.gmres.restart,
        max_iter: options.gmres.max_iter,
    };
    let res = gmres(apply, |v: &[C64]| v.to_vec(), &rhs, &cfg)?;
    let mut u_full = ud;
    for (k, &s) in s_nodes.iter().enumerate() {
        u_full[s] = res.x[k];
    }
    let y: Vec<C64> = coupling(&u_full).iter().map(|v| -c * v).collect();
    let t = op.apply_t(acc, &y);
    let u: Vec<C64> = u0.iter().zip(&t).map(|(a, b)| a + c * b).collect();
    Ok((
        u,
        y,
        ReducedResult {
            iterations: res.iterations,
            residual: res.residual,
            history: res.history,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn solve_full_gmres(
    op: &Arc<CellOperator>,
    plan: &ContourPlan,
    incident: &IncidentField,
    options: &SolverOptions,
    nodes: &[QuadNode],
    kind: FieldKind,
    delta: &[C64],
    t0: Instant,
) -> Result<BlochSolution> {
    let mesh = &op.mesh;
    let period = mesh.period;
    let c = (period / TAU).sqrt();
    let dofs = &op.dofs;
    let pert = op.pert.as_ref().expect("coupled path");
    let pf = pert.select(&dofs.free_of_node, dofs.n_free(), &dofs.free_of_node, dofs.n_free());
    let pfd = pert.select(&dofs.free_of_node, dofs.n_free(), &dofs.dirichlet_of_node, dofs.n_dirichlet());
    let cj = {
        let mut m = pf.to_complex();
        m.values.iter_mut().for_each(|v| *v *= c);
        m
    };
    let m = dofs.n_free();
    let mut blocks = CoupledBlocks {
        m,
        a: Vec::new(),
        c: Vec::new(),
        b: Vec::new(),
        f: Vec::new(),
        g: vec![ZERO; m],
    };
    let mut surface = Vec::new();
    let mut ud = vec![ZERO; dofs.n_dirichlet()];
    for node in nodes {
        let sys = assemble_quasiperiodic_system_from(mesh, &op.q, node.alpha, op.k, options.j_cutoff)?;
        let data = node_data(op, incident, options.rhs_mode, node.alpha, options.j_cutoff, &sys.trace, delta)?;
        let mut f = vec![ZERO; m];
        if let Some(r) = &data.roof {
            for (i, &fi) in sys.roof_free.iter().enumerate() {
                f[fi] += r[i];
            }
        }
        if let Some(g) = &data.surface {
            let ag: Vec<C64> = sys.dirichlet.matvec(g);
            for (fv, a) in f.iter_mut().zip(&ag) {
                *fv -= a;
            }
            for (u, gv) in ud.iter_mut().zip(g) {
                *u += c * node.weight * gv;
            }
        }
        surface.push(data.surface.unwrap_or_else(|| vec![ZERO; dofs.n_dirichlet()]));
        blocks.a.push(sys.matrix);
        blocks.c.push(cj.clone());
        blocks.b.push(C64::new(-c * node.weight, 0.0));
        blocks.f.push(f);
    }
    let pud: Vec<C64> = pfd.matvec(&ud);
    for f in blocks.f.iter_mut() {
        for (fv, p) in f.iter_mut().zip(&pud) {
            *fv -= c * p;
        }
    }
    let sol = gmres_solve(&blocks, &options.gmres, options.ilu)?;
    let boundary: Vec<Vec<C64>> = sol
        .w
        .iter()
        .zip(&surface)
        .map(|(w, g)| {
            op.bm
                .iter()
                .map(|b| if b.free != usize::MAX { w[dofs.free_of_node[b.node]] } else { g[b.dirichlet] })
                .collect()
        })
        .collect();
    let mut u_full = vec![ZERO; mesh.n_nodes()];
    for (node, u) in u_full.iter_mut().enumerate() {
        let fi = dofs.free_of_node[node];
        let di = dofs.dirichlet_of_node[node];
        if fi != usize::MAX {
            *u = sol.u[fi];
        } else if di != usize::MAX {
            *u = ud[di];
        }
    }
    let mut y: Vec<C64> = pert.matvec(&u_full);
    op.mask_surface_rows(&mut y);
    y.iter_mut().for_each(|v| *v *= -c);
    let cell = OnceLock::new();
    let _ = cell.set(boundary.clone());
    let mut solution = BlochSolution {
        op: Arc::clone(op),
        plan: plan.clone(),
        nodes: nodes.to_vec(),
        j_cutoff: options.j_cutoff,
        kind,
        incident: *incident,
        base: boundary,
        coupling_load: Some(y),
        boundary: cell,
        u_cell: Vec::new(),
        stats: SolveStats {
            strategy: "gmres".into(),
            coupled: true,
            iterations: sol.iterations,
            residual: sol.residual,
            history: sol.history,
            seconds: 0.0,
        },
    };
    solution.u_cell = solution.shifted_nodal_field(0)?;
    solution.stats.seconds = t0.elapsed().as_secs_f64();
    log::info!(
        "gmres solve: {} nodes, {} iterations, residual {:.2e}, {:.2}s",
        nodes.len(),
        solution.stats.iterations,
        solution.stats.residual,
        solution.stats.seconds
    );
    Ok(solution)
}

/// Solution of an explicit [`CoupledBlocks`] system.
#[derive(Debug, Clone)]
pub struct CoupledSolution {
    pub w: Vec<Vec<C64>>,
    pub u: Vec<C64>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

fn block_residual(blocks: &CoupledBlocks, w: &[Vec<C64>], u: &[C64]) -> f64 {
    let mut x: Vec<C64> = w.iter().flatten().copied().collect();
    x.extend_from_slice(u);
    let ax = blocks.apply(&x);
    let b = blocks.rhs();
    let bn = norm2(&b);
    let r: Vec<C64> = ax.iter().zip(&b).map(|(a, b)| a - b).collect();
    if bn == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / bn
    }
}

/// Exact block elimination: `W_j = A_j⁻¹(F_j - C_j U)` and
/// `(I - Σ_j B_j A_j⁻¹ C_j) U = G - Σ_j B_j A_j⁻¹ F_j`, the latter formed
/// densely on the columns where some `C_j` is nonzero.
pub fn schur_solve(blocks: &CoupledBlocks) -> Result<CoupledSolution> {
    let m = blocks.m;
    let mut is_col = vec![false; m];
    for cmat in &blocks.c {
        for (_, j, v) in cmat.triplets() {
            if v != ZERO {
                is_col[j] = true;
            }
        }
    }
    let cols: Vec<usize> = (0..m).filter(|&j| is_col[j]).collect();
    let nc = cols.len();
    let mut rhs = blocks.g.clone();
    let mut kacc = Mat::<C64>::zeros(m, nc);
    let mut v = Vec::with_capacity(blocks.n_nodes());
    let mut z = Vec::with_capacity(blocks.n_nodes());
    for (j, a) in blocks.a.iter().enumerate() {
        let lu = SparseLu::new(a).map_err(|e| Error::Singular {
            alpha: f64::NAN,
            message: format!("block {j}: {e}"),
        })?;
        let vj = lu.solve(&blocks.f[j]);
        for (r, x) in rhs.iter_mut().zip(&vj) {
            *r -= blocks.b[j] * x;
        }
        let zj = if nc > 0 {
            let mut cm = Mat::<C64>::zeros(m, nc);
            let colpos: Vec<usize> = {
                let mut p = vec![usize::MAX; m];
                for (k, &cidx) in cols.iter().enumerate() {
                    p[cidx] = k;
                }
                p
            };
            for (r, cidx, val) in blocks.c[j].triplets() {
                if colpos[cidx] != usize::MAX {
                    cm[(r, colpos[cidx])] = val;
                }
            }
            let zj = lu.solve_mat(&cm);
            for k in 0..nc {
                for r in 0..m {
                    kacc[(r, k)] += blocks.b[j] * zj[(r, k)];
                }
            }
            Some(zj)
        } else {
            None
        };
        v.push(vj);
        z.push(zj);
    }
    let mut u = rhs.clone();
    let mut u_c = vec![ZERO; nc];
    if nc > 0 {
        let s = Mat::<C64>::from_fn(nc, nc, |r, k| {
            let d = if r == k { C64::new(1.0, 0.0) } else { ZERO };
            d - kacc[(cols[r], k)]
        });
        let b = Mat::<C64>::from_fn(nc, 1, |r, _| rhs[cols[r]]);
        let x = s.partial_piv_lu().solve(&b);
        let mut res = 0.0f64;
        for r in 0..nc {
            let mut acc = ZERO;
            for k in 0..nc {
                acc += s[(r, k)] * x[(k, 0)];
            }
            res += (acc - b[(r, 0)]).norm_sqr();
            u_c[r] = x[(r, 0)];
        }
        let bn: f64 = (0..nc).map(|r| b[(r, 0)].norm_sqr()).sum();
        if !(res.sqrt() <= 1e-8 * bn.sqrt().max(f64::MIN_POSITIVE)) && bn > 0.0 {
            return Err(Error::Singular {
                alpha: f64::NAN,
                message: "singular Schur complement (near-resonant configuration)".into(),
            });
        }
        for r in 0..m {
            for k in 0..nc {
                u[r] += kacc[(r, k)] * u_c[k];
            }
        }
    }
    let w: Vec<Vec<C64>> = v
        .into_iter()
        .zip(z)
        .map(|(mut vj, zj)| {
            if let Some(zj) = zj {
                for r in 0..m {
                    for k in 0..nc {
                        vj[r] -= zj[(r, k)] * u_c[k];
                    }
                }
            }
            vj
        })
        .collect();
    let residual = block_residual(blocks, &w, &u);
    Ok(CoupledSolution {
        w,
        u,
        iterations: 0,
        residual,
        history: Vec::new(),
    })
}

/// Restarted GMRES on the full block system, preconditioned by ILU of each
/// `A_j` on the diagonal and the identity for the `U` block.
pub fn gmres_solve(blocks: &CoupledBlocks, config: &GmresConfig, fill: IluFill) -> Result<CoupledSolution> {
    let m = blocks.m;
    let n = blocks.n_nodes();
    let b = blocks.rhs();
    let ilus: Vec<Ilu> = blocks.a.iter().map(|a| Ilu::new(a, fill)).collect::<Result<_>>()?;
    let precond = |v: &[C64]| -> Vec<C64> {
        let mut out = Vec::with_capacity(v.len());
        for (j, ilu) in ilus.iter().enumerate() {
            out.extend(ilu.apply(&v[j * m..(j + 1) * m]));
        }
        out.extend_from_slice(&v[n * m..]);
        out
    };
    let op = |x: &[C64], y: &mut [C64]| {
        y.copy_from_slice(&blocks.apply(x));
    };
    let res = gmres(op, precond, &b, config)?;
    let w = (0..n).map(|j| res.x[j * m..(j + 1) * m].to_vec()).collect();
    Ok(CoupledSolution {
        w,
        u: res.x[n * m..].to_vec(),
        iterations: res.iterations,
        residual: res.residual,
        history: res.history,
    })
}
