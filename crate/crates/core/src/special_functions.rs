//! Bessel functions of integer order 0 and 1, the radiating vertical
//! wavenumber and a cardinal sine that is safe at the origin.

use crate::{Error, Result, C64};
use std::f64::consts::{FRAC_2_PI, PI};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Below this argument the ascending power series is used.
const SERIES_LIMIT: f64 = 1.0;
/// At and above this argument the Hankel asymptotic expansion is used.
const ASYMPTOTIC_LIMIT: f64 = 20.0;

/// Radiating branch of `sqrt(k^2 - xi^2)`: real and nonnegative for
/// `|xi| <= k`, positive imaginary otherwise.
pub fn vertical_wavenumber(k: f64, xi: f64) -> C64 {
    // (k - xi)(k + xi) keeps relative accuracy near the anomaly |xi| = k.
    let d = (k - xi) * (k + xi);
    if d >= 0.0 {
        C64::new(d.sqrt(), 0.0)
    } else {
        C64::new(0.0, (-d).sqrt())
    }
}

/// `sin(z)/z` with the removable singularity resolved by its Taylor series.
pub fn cardinal_sine(z: C64) -> C64 {
    if z.norm() < 1e-2 {
        let z2 = -(z * z);
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        for n in 1..8 {
            term *= z2 / ((2 * n) as f64 * (2 * n + 1) as f64);
            sum += term;
        }
        sum
    } else {
        z.sin() / z
    }
}

/// Values of J0, J1, Y0, Y1 at one argument.
#[derive(Debug, Clone, Copy)]
pub struct BesselPair {
    pub j0: f64,
    pub j1: f64,
    pub y0: f64,
    pub y1: f64,
}

/// J0, J1, Y0 and Y1 at `z > 0`.
pub fn bessel_01(z: f64) -> Result<BesselPair> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("Bessel argument must be positive, got {z}")));
    }
    Ok(if z < SERIES_LIMIT {
        series(z)
    } else if z < ASYMPTOTIC_LIMIT {
        miller_neumann(z)
    } else {
        asymptotic(z)
    })
}

pub fn bessel_j0(z: f64) -> Result<f64> {
    if z == 0.0 {
        return Ok(1.0);
    }
    bessel_01(z.abs()).map(|b| b.j0)
}

pub fn bessel_y0(z: f64) -> Result<f64> {
    bessel_01(z).map(|b| b.y0)
}

/// `H0^(1)(z) = J0(z) + i Y0(z)` for real `z > 0`.
pub fn hankel0_first_kind(z: f64) -> Result<C64> {
    let b = bessel_01(z)?;
    Ok(C64::new(b.j0, b.y0))
}

/// `H1^(1)(z) = J1(z) + i Y1(z)` for real `z > 0`.
pub fn hankel1_first_kind(z: f64) -> Result<C64> {
    let b = bessel_01(z)?;
    Ok(C64::new(b.j1, b.y1))
}

fn series(z: f64) -> BesselPair {
    let q = -0.25 * z * z;
    let log_term = (0.5 * z).ln() + EULER_GAMMA;

    // J0 = sum q^m/(m!)^2,  Y0 = (2/pi)[log_term J0 - sum H_m q^m/(m!)^2]
    let mut t0 = 1.0;
    let mut j0 = 1.0;
    let mut h = 0.0;
    let mut s0 = 0.0;
    // J1 = (z/2) sum q^m/(m!(m+1)!)
    let mut t1 = 1.0;
    let mut j1s = 1.0;
    // Y1 tail: sum (H_m + H_{m+1}) q^m/(m!(m+1)!)
    let mut s1 = 1.0; // m = 0: H_0 + H_1 = 1
    for m in 1..30 {
        let mf = m as f64;
        t0 *= q / (mf * mf);
        t1 *= q / (mf * (mf + 1.0));
        h += 1.0 / mf;
        j0 += t0;
        s0 += h * t0;
        j1s += t1;
        s1 += (2.0 * h + 1.0 / (mf + 1.0)) * t1;
        if t0.abs() < 1e-18 && t1.abs() < 1e-18 {
            break;
        }
    }
    let j1 = 0.5 * z * j1s;
    let y0 = FRAC_2_PI * (log_term * j0 - s0);
    // Y1 = -2/(pi z) + (2/pi) ln(z/2) J1 - (z/(2 pi)) sum (psi(m+1)+psi(m+2)) q^m/(m!(m+1)!)
    // with psi(m+1) = H_m - gamma, so the gamma terms fold into log_term.
    let y1 = -FRAC_2_PI / z + FRAC_2_PI * log_term * j1 - z / (2.0 * PI) * s1;
    BesselPair { j0, j1, y0, y1 }
}

/// Backward recurrence for J_n normalized by J0 + 2 sum J_2k = 1, with
/// Neumann series for Y0 and its derivative for Y1.
fn miller_neumann(z: f64) -> BesselPair {
    let start = 2 * ((z + 20.0 + (40.0 * z).sqrt()) as usize / 2 + 1);
    let mut j = vec![0.0f64; start + 2];
    j[start + 1] = 0.0;
    j[start] = 1e-300;
    for n in (1..=start).rev() {
        j[n - 1] = 2.0 * n as f64 / z * j[n] - j[n + 1];
        if j[n - 1].abs() > 1e250 {
            for v in j.iter_mut().skip(n - 1) {
                *v *= 1e-250;
            }
        }
    }
    let mut norm = j[0];
    for k in (2..=start).step_by(2) {
        norm += 2.0 * j[k];
    }
    for v in j.iter_mut() {
        *v /= norm;
    }

    let log_term = (0.5 * z).ln() + EULER_GAMMA;
    // Y0 = (2/pi) log_term J0 - (4/pi) sum_k (-1)^k J_2k / k
    let mut s = 0.0;
    let mut ds = 0.0;
    let mut sign = -1.0;
    let mut k = 1usize;
    while 2 * k + 1 <= start {
        let kf = k as f64;
        s += sign * j[2 * k] / kf;
        ds += sign * 0.5 * (j[2 * k - 1] - j[2 * k + 1]) / kf;
        sign = -sign;
        k += 1;
    }
    let y0 = FRAC_2_PI * log_term * j[0] - 2.0 * FRAC_2_PI * s;
    // Y1 = -Y0'
    let dy0 = FRAC_2_PI * (j[0] / z - log_term * j[1]) - 2.0 * FRAC_2_PI * ds;
    BesselPair {
        j0: j[0],
        j1: j[1],
        y0,
        y1: -dy0,
    }
}

/// Hankel expansion in amplitude/phase form.
fn asymptotic(z: f64) -> BesselPair {
    let (p0, q0) = hankel_pq(0.0, z);
    let (p1, q1) = hankel_pq(1.0, z);
    let amp = (FRAC_2_PI / z).sqrt();
    let chi0 = z - 0.25 * PI;
    let chi1 = z - 0.75 * PI;
    let (s0, c0) = chi0.sin_cos();
    let (s1, c1) = chi1.sin_cos();
    BesselPair {
        j0: amp * (p0 * c0 - q0 * s0),
        y0: amp * (p0 * s0 + q0 * c0),
        j1: amp * (p1 * c1 - q1 * s1),
        y1: amp * (p1 * s1 + q1 * c1),
    }
}

fn hankel_pq(nu: f64, z: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..80 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        term *= (mu - odd * odd) / (kf * 8.0 * z);
        if term.abs() > last {
            break;
        }
        last = term.abs();
        // terms alternate between the Q and P series with signs + - - + + - ...
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if term.abs() < 1e-17 {
            break;
        }
    }
    (p, q)
}
