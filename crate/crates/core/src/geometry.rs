//! Periodic surface profiles, their local perturbation and the map that
//! flattens the perturbed domain onto the periodic one.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

/// One term `amplitude * sin(order * 2π/Λ * t + phase)` of the base surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub amplitude: f64,
    pub order: i32,
    pub phase: f64,
}

/// Smooth bump `amplitude * exp(1/(s²-1)) sin(π(s+1))` with
/// `s = (t - center)/half_width`, supported on `|s| < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: f64,
    pub half_width: f64,
    pub amplitude: f64,
}

impl Default for Bump {
    fn default() -> Self {
        Bump {
            center: 0.0,
            half_width: 1.0,
            amplitude: 1.0,
        }
    }
}

impl Bump {
    pub fn support(&self) -> (f64, f64) {
        (self.center - self.half_width, self.center + self.half_width)
    }

    /// Value and derivative in `t`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let s = (t - self.center) / self.half_width;
        let q = s * s - 1.0;
        if q > -1e-12 {
            return (0.0, 0.0);
        }
        let e = (1.0 / q).exp();
        let (sn, cs) = (PI * (s + 1.0)).sin_cos();
        let value = self.amplitude * e * sn;
        let ds = e * (-2.0 * s / (q * q)) * sn + e * PI * cs;
        (value, self.amplitude * ds / self.half_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Base,
    Perturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceProfile {
    pub period: f64,
    pub c0: f64,
    pub harmonics: Vec<Harmonic>,
    pub bump: Option<Bump>,
    /// Height `H` of the artificial roof.
    pub roof: f64,
}

impl SurfaceProfile {
    /// `ζ(t) = 1.9 + sin(t)/3 - cos(2t)/4` with period 2π and roof 4.
    pub fn default_base() -> Self {
        SurfaceProfile {
            period: TAU,
            c0: 1.9,
            harmonics: vec![
                Harmonic {
                    amplitude: 1.0 / 3.0,
                    order: 1,
                    phase: 0.0,
                },
                Harmonic {
                    amplitude: -0.25,
                    order: 2,
                    phase: FRAC_PI_2,
                },
            ],
            bump: None,
            roof: 4.0,
        }
    }

    /// The default surface with the unit bump centred at the origin.
    pub fn default_perturbed() -> Self {
        SurfaceProfile {
            bump: Some(Bump::default()),
            ..Self::default_base()
        }
    }

    pub fn flat(height: f64, roof: f64, period: f64) -> Self {
        SurfaceProfile {
            period,
            c0: height,
            harmonics: Vec::new(),
            bump: None,
            roof,
        }
    }

    pub fn with_bump(mut self, bump: Option<Bump>) -> Self {
        self.bump = bump;
        self
    }

    pub fn dual_period(&self) -> f64 {
        TAU / self.period
    }

    /// Whether the profile carries a perturbation term, even one of zero
    /// amplitude.
    pub fn is_perturbed(&self) -> bool {
        self.bump.is_some()
    }

    /// Horizontal extent of the perturbation, if any.
    pub fn perturbation_support(&self) -> Option<(f64, f64)> {
        self.bump.map(|b| b.support())
    }

    /// Base height and its derivative.
    pub fn base(&self, t: f64) -> (f64, f64) {
        let ls = self.dual_period();
        let tr = t.rem_euclid(self.period);
        let mut z = self.c0;
        let mut dz = 0.0;
        for h in &self.harmonics {
            let w = h.order as f64 * ls;
            let (s, c) = (w * tr + h.phase).sin_cos();
            z += h.amplitude * s;
            dz += h.amplitude * w * c;
        }
        (z, dz)
    }

    /// `ζ_p - ζ` and its derivative.
    pub fn perturbation(&self, t: f64) -> (f64, f64) {
        match &self.bump {
            Some(b) => b.eval(t),
            None => (0.0, 0.0),
        }
    }

    pub fn height(&self, t: f64, variant: Variant) -> f64 {
        surface_height(self, t, variant)
    }

    /// Checks positivity below the roof on a sampled grid.
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::Geometry("period must be positive".into()));
        }
        if let Some(b) = &self.bump {
            if !(b.half_width > 0.0) {
                return Err(Error::Geometry("bump half width must be positive".into()));
            }
            let (lo, hi) = b.support();
            if lo < -0.5 * self.period || hi > 0.5 * self.period {
                return Err(Error::Geometry(format!(
                    "perturbation support [{lo}, {hi}] leaves the cell (-Λ/2, Λ/2]"
                )));
            }
        }
        let n = 4096;
        for i in 0..n {
            let t = -0.5 * self.period + self.period * i as f64 / n as f64;
            for v in [Variant::Base, Variant::Perturbed] {
                let z = self.height(t, v);
                if !(z > 0.0) || !(z < self.roof) {
                    return Err(Error::Geometry(format!(
                        "surface height {z} at t = {t} not inside (0, H = {})",
                        self.roof
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sampled extrema of the chosen variant.
    pub fn height_range(&self, variant: Variant) -> (f64, f64) {
        let n = 4096;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=n {
            let t = -0.5 * self.period + self.period * i as f64 / n as f64;
            let z = self.height(t, variant);
            lo = lo.min(z);
            hi = hi.max(z);
        }
        (lo, hi)
    }
}

/// ζ(t) or ζ_p(t).
pub fn surface_height(profile: &SurfaceProfile, t: f64, variant: Variant) -> f64 {
    let z = profile.base(t).0;
    match variant {
        Variant::Base => z,
        Variant::Perturbed => z + profile.perturbation(t).0,
    }
}

/// `Φ_p(x1, x2) = (x1, x2 + (x2-H)³/(ζ(x1)-H)³ (ζ_p(x1) - ζ(x1)))`.
pub fn diffeomorphism(profile: &SurfaceProfile, x: [f64; 2]) -> Result<[f64; 2]> {
    check_in_domain(profile, x)?;
    Ok(map_unchecked(profile, x))
}

fn check_in_domain(profile: &SurfaceProfile, x: [f64; 2]) -> Result<()> {
    let z = profile.base(x[0]).0;
    let tol = 1e-12 * (1.0 + profile.roof);
    if x[1] < z - tol || x[1] > profile.roof + tol {
        return Err(Error::Precondition(format!(
            "point ({}, {}) outside [ζ(x1), H] = [{z}, {}]",
            x[0], x[1], profile.roof
        )));
    }
    Ok(())
}

pub(crate) fn map_unchecked(profile: &SurfaceProfile, x: [f64; 2]) -> [f64; 2] {
    let (d, _) = profile.perturbation(x[0]);
    if d == 0.0 {
        return x;
    }
    let z = profile.base(x[0]).0;
    let h = profile.roof;
    let r = (x[1] - h) / (z - h);
    [x[0], x[1] + r * r * r * d]
}

/// Inverse of `Φ_p` along a vertical line: the reference height whose image
/// is `y[1]`. Requires `ζ_p(x1) <= y2 <= H`.
pub fn inverse_diffeomorphism(profile: &SurfaceProfile, y: [f64; 2]) -> Result<[f64; 2]> {
    let (d, _) = profile.perturbation(y[0]);
    let h = profile.roof;
    let zp = surface_height(profile, y[0], Variant::Perturbed);
    let tol = 1e-12 * (1.0 + h);
    if y[1] < zp - tol || y[1] > h + tol {
        return Err(Error::Precondition(format!(
            "point ({}, {}) outside [ζ_p(x1), H] = [{zp}, {h}]",
            y[0], y[1]
        )));
    }
    if d == 0.0 {
        return Ok(y);
    }
    let z = profile.base(y[0]).0;
    let s = z - h;
    // x2 -> x2 + (x2-H)^3/s^3 d is increasing on [ζ, H]; bracketed Newton.
    let mut lo = z;
    let mut hi = h;
    let mut x2 = z + (y[1] - zp) / (h - zp) * (h - z);
    for _ in 0..100 {
        let r = (x2 - h) / s;
        let f = x2 + r * r * r * d - y[1];
        if f > 0.0 {
            hi = x2;
        } else {
            lo = x2;
        }
        let df = 1.0 + 3.0 * r * r * d / s;
        let mut next = x2 - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x2).abs() < 1e-15 * (1.0 + h) {
            x2 = next;
            break;
        }
        x2 = next;
    }
    Ok([y[0], x2])
}

/// `A_p` (symmetric, unit determinant) and `c_p = det ∇Φ_p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformCoefficients {
    pub a: [[f64; 2]; 2],
    pub c: f64,
}

impl TransformCoefficients {
    pub const IDENTITY: TransformCoefficients = TransformCoefficients {
        a: [[1.0, 0.0], [0.0, 1.0]],
        c: 1.0,
    };
}

/// Analytic Jacobian of `Φ_p` as `[[∂1φ1, ∂2φ1], [∂1φ2, ∂2φ2]]`.
pub fn jacobian(profile: &SurfaceProfile, x: [f64; 2]) -> [[f64; 2]; 2] {
    let (d, dd) = profile.perturbation(x[0]);
    if d == 0.0 && dd == 0.0 {
        return [[1.0, 0.0], [0.0, 1.0]];
    }
    let (z, dz) = profile.base(x[0]);
    let h = profile.roof;
    let s = z - h;
    let t = x[1] - h;
    let t3 = t * t * t;
    let s3 = s * s * s;
    let a = t3 * (dd / s3 - 3.0 * d * dz / (s3 * s));
    let b = 1.0 + 3.0 * t * t * d / s3;
    [[1.0, 0.0], [a, b]]
}

pub fn transform_coefficients(profile: &SurfaceProfile, x: [f64; 2]) -> Result<TransformCoefficients> {
    check_in_domain(profile, x)?;
    coefficients_unchecked(profile, x)
}

/// Same as [`transform_coefficients`] without the domain check; used by
/// quadrature points that sit between the surface and its chord.
pub(crate) fn coefficients_unchecked(profile: &SurfaceProfile, x: [f64; 2]) -> Result<TransformCoefficients> {
    let jac = jacobian(profile, x);
    let a = jac[1][0];
    let b = jac[1][1];
    if a == 0.0 && b == 1.0 {
        return Ok(TransformCoefficients::IDENTITY);
    }
    if !(b > 0.0) {
        return Err(Error::Geometry(format!(
            "Jacobian determinant {b} <= 0 at ({}, {}): perturbation too large for the roof height",
            x[0], x[1]
        )));
    }
    // J = [[1,0],[a,b]], J^{-1} = [[1,0],[-a/b,1/b]],
    // A = det J · J^{-1} J^{-T} = [[b, -a], [-a, (1+a²)/b]].
    Ok(TransformCoefficients {
        a: [[b, -a], [-a, (1.0 + a * a) / b]],
        c: b,
    })
}
