//! Incident fields, their Bloch transforms as Rayleigh series, and the
//! boundary data they induce on the cell problems.

use crate::quadrature::composite_gauss;
use crate::special_functions::{cardinal_sine, hankel0_first_kind, vertical_wavenumber};
use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IncidentKind {
    /// `(i/4)[H0(k|x-y|) - H0(k|x-y'|)]`, `y' = (y1, -y2)`.
    GreenHalfSpace { source: [f64; 2] },
    /// `∫ exp(ik(sinθ x1 + cosθ x2)) cos²θ dθ` over `|θ| < π/2`.
    HerglotzUp,
    /// `∫ exp(ik(sinθ x1 - cosθ x2)) cos²θ dθ` over `|θ| < π/2`.
    HerglotzDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncidentField {
    pub kind: IncidentKind,
    pub k: f64,
    /// Overall complex scale of the field.
    pub amplitude: C64,
}

impl IncidentField {
    pub fn green(k: f64, source: [f64; 2]) -> Self {
        IncidentField {
            kind: IncidentKind::GreenHalfSpace { source },
            k,
            amplitude: C64::new(1.0, 0.0),
        }
    }

    pub fn herglotz_up(k: f64) -> Self {
        IncidentField {
            kind: IncidentKind::HerglotzUp,
            k,
            amplitude: C64::new(1.0, 0.0),
        }
    }

    pub fn herglotz_down(k: f64) -> Self {
        IncidentField {
            kind: IncidentKind::HerglotzDown,
            k,
            amplitude: C64::new(1.0, 0.0),
        }
    }

    pub fn scaled(mut self, factor: C64) -> Self {
        self.amplitude *= factor;
        self
    }

    pub fn validate(&self, roof: f64) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::config("incident.k", "wavenumber must be positive"));
        }
        if let IncidentKind::GreenHalfSpace { source } = self.kind {
            if !(source[1] > 0.0) {
                return Err(Error::config("incident.source", "source height must be positive"));
            }
            if (source[1] - roof).abs() < 1e-9 {
                return Err(Error::config("incident.source", "source lies on the roof"));
            }
        }
        Ok(())
    }

    /// Whether the field is upward propagating in the whole computational
    /// domain above `surface_max` (sources below the surface count as upward).
    pub fn is_upward_above(&self, surface_min: f64) -> bool {
        match self.kind {
            IncidentKind::HerglotzUp => true,
            IncidentKind::HerglotzDown => false,
            IncidentKind::GreenHalfSpace { source } => source[1] < surface_min,
        }
    }
}

fn herglotz_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    // 200 nodes: 4 panels of 50
    RULE.get_or_init(|| composite_gauss(-FRAC_PI_2, FRAC_PI_2, 4, 50))
}

/// Point value of the incident field.
pub fn incident_field_eval(field: &IncidentField, x: [f64; 2]) -> Result<C64> {
    let k = field.k;
    let v = match field.kind {
        IncidentKind::GreenHalfSpace { source } => {
            let r1 = ((x[0] - source[0]).powi(2) + (x[1] - source[1]).powi(2)).sqrt();
            let r2 = ((x[0] - source[0]).powi(2) + (x[1] + source[1]).powi(2)).sqrt();
            if r1 < 1e-14 || r2 < 1e-14 {
                return Err(Error::Domain(format!("incident field evaluated at its source ({}, {})", x[0], x[1])));
            }
            C64::new(0.0, 0.25) * (hankel0_first_kind(k * r1)? - hankel0_first_kind(k * r2)?)
        }
        IncidentKind::HerglotzUp | IncidentKind::HerglotzDown => {
            let sign = if matches!(field.kind, IncidentKind::HerglotzUp) { 1.0 } else { -1.0 };
            let (th, w) = herglotz_rule();
            let mut s = C64::new(0.0, 0.0);
            for (t, wt) in th.iter().zip(w) {
                let (sn, cs) = t.sin_cos();
                s += C64::from_polar(wt * cs * cs, k * (sn * x[0] + sign * cs * x[1]));
            }
            s
        }
    };
    Ok(field.amplitude * v)
}

/// Rayleigh coefficients of the Bloch-transformed incident field at one
/// height: `J u^i(α, x1, height) = Σ_j value[j] e^{i μ_j x1}` with
/// `μ_j = Λ* j - α` and `j = -J..J`; `normal` holds the x2-derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct RayleighTrace {
    pub alpha: f64,
    pub j_cutoff: usize,
    pub dual_period: f64,
    pub value: Vec<C64>,
    pub normal: Vec<C64>,
}

impl RayleighTrace {
    pub fn mu(&self, row: usize) -> f64 {
        self.dual_period * (row as f64 - self.j_cutoff as f64) - self.alpha
    }

    /// Sum of the series at `x1`.
    pub fn eval(&self, x1: f64) -> C64 {
        self.value
            .iter()
            .enumerate()
            .map(|(r, v)| v * C64::from_polar(1.0, self.mu(r) * x1))
            .sum()
    }
}

/// `e^{iβ far} sin(β near)/β` and `e^{iβ far} cos(β near)` for
/// `near < far`, without overflow for evanescent `β`.
fn image_split(beta: C64, near: f64, far: f64) -> (C64, C64) {
    let i = C64::new(0.0, 1.0);
    if (beta * near).norm() < 1.0 {
        let e = (i * beta * far).exp();
        return (e * near * cardinal_sine(beta * near), e * (beta * near).cos());
    }
    let ep = (i * beta * (far + near)).exp();
    let em = (i * beta * (far - near)).exp();
    ((ep - em) / (2.0 * i * beta), 0.5 * (ep + em))
}

/// Coefficient of mode `mu` with vertical wavenumber `beta` at `height`.
fn mode_coefficients(field: &IncidentField, period: f64, mu: f64, beta: C64, height: f64) -> Result<(C64, C64)> {
    let c = (period / TAU).sqrt();
    let ls = TAU / period;
    let i = C64::new(0.0, 1.0);
    let k = field.k;
    let (g, d) = match field.kind {
        IncidentKind::GreenHalfSpace { source } => {
            let [y1, y2] = source;
            let pre = C64::from_polar(c / period, -mu * y1);
            if (height - y2).abs() < 1e-9 {
                return Err(Error::Regime(format!("trace height {height} coincides with source height {y2}")));
            }
            if height < y2 {
                let (sn, cs) = image_split(beta, height, y2);
                (pre * sn, pre * cs)
            } else {
                let (sn, _) = image_split(beta, y2, height);
                (pre * sn, i * beta * pre * sn)
            }
        }
        IncidentKind::HerglotzUp | IncidentKind::HerglotzDown => {
            if mu.abs() >= k {
                (C64::new(0.0, 0.0), C64::new(0.0, 0.0))
            } else {
                let sign = if matches!(field.kind, IncidentKind::HerglotzUp) { 1.0 } else { -1.0 };
                // cosθ_j / k with cosθ_j = β_j / k
                let g = C64::new(c * ls * beta.re / (k * k), 0.0) * (sign * i * beta * height).exp();
                (g, sign * i * beta * g)
            }
        }
    };
    Ok((field.amplitude * g, field.amplitude * d))
}

/// Rayleigh coefficients at the given height for modes `-J..J`.
pub fn bloch_rayleigh_trace(
    field: &IncidentField,
    alpha: f64,
    period: f64,
    j_cutoff: usize,
    height: f64,
) -> Result<RayleighTrace> {
    let ls = TAU / period;
    let nm = 2 * j_cutoff + 1;
    let mut value = Vec::with_capacity(nm);
    let mut normal = Vec::with_capacity(nm);
    for r in 0..nm {
        let mu = ls * (r as f64 - j_cutoff as f64) - alpha;
        let beta = vertical_wavenumber(field.k, mu);
        let (g, d) = mode_coefficients(field, period, mu, beta, height)?;
        value.push(g);
        normal.push(d);
    }
    Ok(RayleighTrace {
        alpha,
        j_cutoff,
        dual_period: ls,
        value,
        normal,
    })
}

/// Pointwise Bloch transform `(J u^i)(α, x)` by a Rayleigh series truncated
/// once the evanescent tail falls below 1e-17 relative.
pub fn bloch_transform_eval(field: &IncidentField, alpha: f64, period: f64, x: [f64; 2]) -> Result<C64> {
    let ls = TAU / period;
    let k = field.k;
    let j_needed = match field.kind {
        IncidentKind::GreenHalfSpace { source } => {
            let dist = (x[1] - source[1]).abs();
            if dist < 1e-9 {
                return Err(Error::Regime(format!("Bloch transform at the source height {}", source[1])));
            }
            // |β_j| ≈ Λ*|j|; e^{-Λ*|j| dist} < 1e-17
            ((k + 40.0 / dist) / ls).ceil() as i64 + 2
        }
        _ => (k / ls).ceil() as i64 + 2,
    };
    let j0 = (alpha / ls).round() as i64;
    let mut s = C64::new(0.0, 0.0);
    for j in (j0 - j_needed)..=(j0 + j_needed) {
        let mu = ls * j as f64 - alpha;
        let beta = vertical_wavenumber(k, mu);
        let (g, _) = mode_coefficients(field, period, mu, beta, x[1])?;
        s += g * C64::from_polar(1.0, mu * x[0]);
    }
    Ok(s)
}

/// Mode-wise `f̂_j = d̂_j - i β_j ĝ_j` of `∂2 J u^i - T_α J u^i` on the roof.
pub fn modal_roof_data(field: &IncidentField, alpha: f64, period: f64, j_cutoff: usize, roof: f64) -> Result<Vec<C64>> {
    let tr = bloch_rayleigh_trace(field, alpha, period, j_cutoff, roof)?;
    let i = C64::new(0.0, 1.0);
    Ok((0..tr.value.len())
        .map(|r| {
            let beta = vertical_wavenumber(field.k, tr.mu(r));
            tr.normal[r] - i * beta * tr.value[r]
        })
        .collect())
}
