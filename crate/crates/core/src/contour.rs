//! Wood-anomaly breakpoints, graded contour maps and the trapezoidal
//! inverse Bloch transform.

use crate::quadrature::gauss_legendre;
use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::sync::OnceLock;

/// Classification tolerance for κ ∈ {0, Λ*/2}.
pub const CASE_TOL: f64 = 1e-12;
/// κ this close to a degenerate value triggers a warning.
pub const NEAR_DEGENERATE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakpointSet {
    pub kappa: f64,
    pub case: u8,
    pub points: Vec<f64>,
    pub dual_period: f64,
    pub k: f64,
}

impl BreakpointSet {
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.points.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// κ = min_n |Λ* n - k| and the breakpoints of the shifted dual cell
/// `[-κ, Λ* - κ]`.
pub fn wood_breakpoints(k: f64, period: f64) -> Result<BreakpointSet> {
    if !(k > 0.0) || !(period > 0.0) {
        return Err(Error::Precondition(format!("need k > 0 and Λ > 0, got k = {k}, Λ = {period}")));
    }
    let ls = TAU / period;
    let n = (k / ls).round();
    let kappa = (ls * n - k).abs().min(ls * 0.5);
    let tol = CASE_TOL * ls.max(1.0);
    let degenerate = kappa <= tol || (kappa - 0.5 * ls).abs() <= tol;
    if !degenerate
        && (kappa <= NEAR_DEGENERATE * ls.max(1.0) || (kappa - 0.5 * ls).abs() <= NEAR_DEGENERATE * ls.max(1.0))
    {
        log::warn!("κ = {kappa:e} is nearly degenerate; breakpoints almost merge");
    }
    let (case, points) = if degenerate {
        let kappa = if kappa <= tol { 0.0 } else { 0.5 * ls };
        (1, vec![-kappa, ls - kappa])
    } else {
        (2, vec![-kappa, kappa, ls - kappa])
    };
    let kappa = if case == 1 { -points[0] } else { kappa };
    Ok(BreakpointSet {
        kappa,
        case,
        points,
        dual_period: ls,
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContourKind {
    /// Antiderivative of `(s-A0)^3 (s-A1)^3`: endpoint flattening of order 3.
    G1,
    /// Antiderivative of `exp(1/((s-A0)(s-A1)))` on the unit-normalized
    /// interval: flat to all orders.
    G2,
    /// `g(t) = t`; plain trapezoid on the quasi-momentum interval.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourMap {
    pub kind: ContourKind,
    pub a0: f64,
    pub a1: f64,
}

const G2_TABLE_SIZE: usize = 4096;

struct G2Table {
    /// G(u_i) at u_i = i / n for i <= n/2; mirrored above the midpoint.
    values: Vec<f64>,
    /// Normalization ∫_0^1 exp(-1/(u(1-u))) du.
    norm: f64,
}

fn g2_density(u: f64) -> f64 {
    let q = u * (1.0 - u);
    if q <= 0.0 {
        0.0
    } else {
        (-1.0 / q).exp()
    }
}

/// `exp(-1/q)` with `q = u(1-u)` and its derivative.
fn g2_density_derivative(u: f64) -> (f64, f64) {
    let q = u * (1.0 - u);
    if q <= 0.0 {
        return (0.0, 0.0);
    }
    let rho = (-1.0 / q).exp();
    (rho, rho * (1.0 - 2.0 * u) / (q * q))
}

fn g2_table() -> &'static G2Table {
    static TABLE: OnceLock<G2Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = G2_TABLE_SIZE;
        let half = n / 2;
        let (gx, gw) = gauss_legendre(12);
        let h = 1.0 / n as f64;
        let mut cum = Vec::with_capacity(half + 1);
        cum.push(0.0f64);
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for i in 0..half {
            let lo = i as f64 * h;
            let mut cell = 0.0;
            for (x, w) in gx.iter().zip(&gw) {
                cell += 0.5 * h * w * g2_density(lo + 0.5 * h * (x + 1.0));
            }
            // Kahan summation keeps the running integral to full precision
            let y = cell - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            cum.push(sum);
        }
        let total = 2.0 * sum;
        let values = cum.iter().map(|v| v / total).collect();
        G2Table { values, norm: total }
    })
}

/// Normalized cumulative integral of the g2 density on [0, 1].
fn g2_unit(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    if u > 0.5 {
        return 1.0 - g2_unit(1.0 - u);
    }
    let table = g2_table();
    let n = G2_TABLE_SIZE as f64;
    let h = 1.0 / n;
    let pos = u * n;
    let i = (pos.floor() as usize).min(G2_TABLE_SIZE / 2 - 1);
    let s = pos - i as f64;
    let (u0, u1) = (i as f64 * h, (i + 1) as f64 * h);
    let (r0, d0) = g2_density_derivative(u0);
    let (r1, d1) = g2_density_derivative(u1);
    let z = table.norm;
    // quintic Hermite piece from value, first and second derivative
    let (p0, p1) = (table.values[i], table.values[i + 1]);
    let (m0, m1) = (h * r0 / z, h * r1 / z);
    let (c0, c1) = (h * h * d0 / z, h * h * d1 / z);
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let h00 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h01 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    let h10 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h11 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h20 = 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5);
    let h21 = 0.5 * (s3 - 2.0 * s4 + s5);
    p0 * h00 + p1 * h01 + m0 * h10 + m1 * h11 + c0 * h20 + c1 * h21
}

impl ContourMap {
    pub fn new(kind: ContourKind, a0: f64, a1: f64) -> Result<Self> {
        if !(a1 > a0) {
            return Err(Error::Precondition(format!("contour interval [{a0}, {a1}] is empty")));
        }
        Ok(ContourMap { kind, a0, a1 })
    }

    pub fn length(&self) -> f64 {
        self.a1 - self.a0
    }

    /// `(g(t), g'(t))`.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        let l = self.length();
        let slack = 1e-14 * (1.0 + self.a0.abs().max(self.a1.abs()));
        if t < self.a0 - slack || t > self.a1 + slack {
            return Err(Error::Domain(format!("t = {t} outside [{}, {}]", self.a0, self.a1)));
        }
        let u = ((t - self.a0) / l).clamp(0.0, 1.0);
        Ok(match self.kind {
            ContourKind::Identity => (self.a0 + l * u, 1.0),
            ContourKind::G1 => {
                // 140 ∫_0^u v³(1-v)³ dv = 35u⁴ - 84u⁵ + 70u⁶ - 20u⁷
                let g = u * u * u * u * (35.0 + u * (-84.0 + u * (70.0 - 20.0 * u)));
                let v = u * (1.0 - u);
                (self.a0 + l * g, 140.0 * v * v * v)
            }
            ContourKind::G2 => {
                let g = g2_unit(u);
                (self.a0 + l * g, g2_density(u) / g2_table().norm)
            }
        })
    }
}

/// `(g(t), g'(t))` for `t` in the map's interval.
pub fn contour_map_eval(map: &ContourMap, t: f64) -> Result<(f64, f64)> {
    let (g, dg) = map.eval(t)?;
    if t == map.a0 {
        return Ok((map.a0, dg));
    }
    if t == map.a1 {
        return Ok((map.a1, dg));
    }
    Ok((g, dg))
}

/// Nodes of one contour subinterval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanBlock {
    pub a0: f64,
    pub a1: f64,
    pub t: Vec<f64>,
    pub alpha: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContourPlan {
    pub breakpoints: BreakpointSet,
    pub kind: ContourKind,
    pub n: usize,
    pub blocks: Vec<PlanBlock>,
}

/// One quadrature node of a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadNode {
    pub t: f64,
    pub alpha: f64,
    pub weight: f64,
}

impl ContourPlan {
    pub fn nodes(&self) -> Vec<QuadNode> {
        self.blocks
            .iter()
            .flat_map(|b| {
                (0..b.t.len()).map(move |j| QuadNode {
                    t: b.t[j],
                    alpha: b.alpha[j],
                    weight: b.weights[j],
                })
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight_sum(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.weights.iter()).sum()
    }
}

/// Uniform grid `t_j = A0 + j (A1-A0)/N`, `j = 1..N`, on each subinterval,
/// mapped through the chosen contour.
pub fn quadrature_nodes(bps: &BreakpointSet, kind: ContourKind, n: usize) -> Result<ContourPlan> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Precondition(format!("N must be even and >= 2, got {n}")));
    }
    let mut blocks = Vec::new();
    for (a0, a1) in bps.intervals() {
        let map = ContourMap::new(kind, a0, a1)?;
        let step = (a1 - a0) / n as f64;
        let mut t = Vec::with_capacity(n);
        let mut alpha = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for j in 1..=n {
            let tj = if j == n { a1 } else { a0 + step * j as f64 };
            let (g, dg) = contour_map_eval(&map, tj)?;
            t.push(tj);
            alpha.push(g);
            weights.push(step * dg);
        }
        blocks.push(PlanBlock { a0, a1, t, alpha, weights });
    }
    Ok(ContourPlan {
        breakpoints: bps.clone(),
        kind,
        n,
        blocks,
    })
}

/// Trigonometric interpolant through `values[m-1]` at `t_m = A0 + m L/N`,
/// in the basis `φ^(m)(t) = (1/N) Σ_{l=-N/2+1}^{N/2} e^{i l (t - t_m) 2π/L}`.
pub fn fourier_interpolate(values: &[C64], a0: f64, a1: f64, t: f64) -> C64 {
    let n = values.len();
    let l = a1 - a0;
    let half = (n / 2) as i64;
    let mut out = C64::new(0.0, 0.0);
    for (m, v) in values.iter().enumerate() {
        let tm = a0 + l * (m + 1) as f64 / n as f64;
        let theta = TAU * (t - tm) / l;
        let mut phi = C64::new(0.0, 0.0);
        for ll in (-half + 1)..=half {
            phi += C64::from_polar(1.0, ll as f64 * theta);
        }
        out += v * phi / n as f64;
    }
    out
}

/// `c Σ_j w_j e^{-i α_j Λ s} w(α_j, ·)` with `c = (Λ/2π)^{1/2}`; evaluates
/// the field in the cell shifted by `s` periods.
pub fn inverse_bloch_transform(plan: &ContourPlan, fields: &[Vec<C64>], shift: i64, period: f64) -> Result<Vec<C64>> {
    let nodes = plan.nodes();
    if fields.len() != nodes.len() {
        return Err(Error::Shape(format!("{} fields for {} nodes", fields.len(), nodes.len())));
    }
    let npts = fields.first().map(|f| f.len()).unwrap_or(0);
    if fields.iter().any(|f| f.len() != npts) {
        return Err(Error::Shape("fields are sampled on different point sets".into()));
    }
    let c = (period / TAU).sqrt();
    let mut out = vec![C64::new(0.0, 0.0); npts];
    for (node, f) in nodes.iter().zip(fields) {
        let s = C64::from_polar(c * node.weight, -node.alpha * period * shift as f64);
        for (o, v) in out.iter_mut().zip(f) {
            *o += s * v;
        }
    }
    Ok(out)
}
