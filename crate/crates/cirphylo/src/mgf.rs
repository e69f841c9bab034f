//! Moment generating functions of the integrated rate tau = int_0^t R_s ds:
//! the start-conditioned closed form Psi e^{-r0 Xi}, the bridge form
//! conditioned on both endpoint rates, and covarion (finite-state switching)
//! analogues via matrix exponentials.
//!
//! Everything is arranged in log space around g(s) = (1 - e^{-s})/s so the
//! formulas stay finite for b_bar t up to hundreds and remain exact in the
//! b_bar -> 0 limit (eta at its upper threshold).

use crate::cir::CirParams;
use crate::error::{Error, Result};
use crate::special::ln_bessel_i;
use nalgebra::DMatrix;
use std::f64::consts::LN_2;

/// Largest admissible mgf argument: eta <= b^2/(2 sigma2) keeps
/// b_bar = sqrt(b^2 - 2 eta sigma2) real. Eigenvalues of a rate matrix are
/// nonpositive, so phylogenetic callers never approach it.
pub fn eta_max(p: &CirParams) -> f64 {
    p.b * p.b / (2.0 * p.sigma2)
}

/// Psi(eta, t): the r0-independent factor of the start-conditioned mgf.
pub fn psi(p: &CirParams, eta: f64, t: f64) -> Result<f64> {
    let b_bar = check_args(p, eta, t)?;
    Ok((p.stationary_shape() * ln_psi_base(p, b_bar, t)).exp())
}

/// Xi(eta, t): the coefficient of -r0 in the exponent of the mgf.
/// Positive for eta < 0.
pub fn xi(p: &CirParams, eta: f64, t: f64) -> Result<f64> {
    let b_bar = check_args(p, eta, t)?;
    Ok(xi_inner(p, eta, b_bar, t))
}

/// E[e^{eta tau} | R_0 = r0] = Psi(eta,t) e^{-r0 Xi(eta,t)}.
pub fn mgf_start(p: &CirParams, r0: f64, eta: f64, t: f64) -> Result<f64> {
    let b_bar = check_args(p, eta, t)?;
    if !r0.is_finite() || r0 < 0.0 {
        return Err(Error::domain(format!(
            "initial rate must be nonnegative, got {r0}"
        )));
    }
    let ln_psi = p.stationary_shape() * ln_psi_base(p, b_bar, t);
    Ok((ln_psi - r0 * xi_inner(p, eta, b_bar, t)).exp())
}

/// E[e^{eta tau} | R_0 = r0, R_t = rt], the endpoint-conditioned (bridge) mgf.
///
/// Evaluated as the stable ratio
///   [g(bt)/g(b_bar t)]^{shape} ... e^{(b-b_bar)t/2}
///   * exp[ (r0+rt)/sigma2 * (b coth(bt/2) - b_bar coth(b_bar t/2)) ]
///   * I_nu(z(b_bar)) / I_nu(z(b)),   nu = 2ab/sigma2 - 1,
///   z(y) = 4 sqrt(r0 rt) e^{-yt/2} / (sigma2 t g(yt)),
/// which is the exact division of the endpoint-conditioned kernel by the
/// transition density, with every common factor cancelled analytically.
pub fn mgf_bridge(p: &CirParams, r0: f64, rt: f64, eta: f64, t: f64) -> Result<f64> {
    let b_bar = check_args(p, eta, t)?;
    for (name, r) in [("r0", r0), ("rt", rt)] {
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::domain(format!(
                "{name} must be strictly positive for the bridge mgf, got {r}"
            )));
        }
    }
    let nu = p.stationary_shape() - 1.0;
    let s_b = p.b * t;
    let s_bar = b_bar * t;
    let ln_prefactor = g(s_b).ln() - g(s_bar).ln() + (p.b - b_bar) * t / 2.0;
    let exponent = (r0 + rt) / p.sigma2 * (h_coth(p.b, t) - h_coth(b_bar, t));
    let sqrt_ends = (r0 * rt).sqrt();
    let z_bar = 4.0 * sqrt_ends * (-s_bar / 2.0).exp() / (p.sigma2 * t * g(s_bar));
    let z0 = 4.0 * sqrt_ends * (-s_b / 2.0).exp() / (p.sigma2 * t * g(s_b));
    let ln_bessel_ratio = ln_bessel_i(nu, z_bar)? - ln_bessel_i(nu, z0)?;
    Ok((ln_prefactor + exponent + ln_bessel_ratio).exp())
}

/// b_bar, validating the argument domain. eta == 0 returns b exactly so the
/// mgf normalization M(0) = 1 holds to the last bit.
fn check_args(p: &CirParams, eta: f64, t: f64) -> Result<f64> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::domain(format!("time must be positive, got {t}")));
    }
    if !eta.is_finite() {
        return Err(Error::domain(format!("eta must be finite, got {eta}")));
    }
    if eta == 0.0 {
        return Ok(p.b);
    }
    let disc = p.b * p.b - 2.0 * eta * p.sigma2;
    if disc < 0.0 {
        return Err(Error::domain(format!(
            "eta = {eta} exceeds the mgf threshold b^2/(2 sigma2) = {}",
            eta_max(p)
        )));
    }
    Ok(disc.sqrt())
}

/// g(s) = (1 - e^{-s})/s, extended by g(0) = 1. Decreasing, in (0, 1].
fn g(s: f64) -> f64 {
    if s < 1e-5 {
        1.0 - s / 2.0 + s * s / 6.0
    } else {
        -(-s).exp_m1() / s
    }
}

/// ln of the base of Psi:
/// base = 2 e^{(b - b_bar) t / 2} / [(1 + e^{-b_bar t}) + b t g(b_bar t)].
fn ln_psi_base(p: &CirParams, b_bar: f64, t: f64) -> f64 {
    let s = b_bar * t;
    let denom = 1.0 + (-s).exp() + p.b * t * g(s);
    LN_2 + (p.b - b_bar) * t / 2.0 - denom.ln()
}

/// Xi = -2 eta t g(b_bar t) / [(1 + e^{-b_bar t}) + b t g(b_bar t)].
fn xi_inner(p: &CirParams, eta: f64, b_bar: f64, t: f64) -> f64 {
    let s = b_bar * t;
    let gs = g(s);
    let denom = 1.0 + (-s).exp() + p.b * t * gs;
    -2.0 * eta * t * gs / denom
}

/// y coth(y t / 2), with the Laurent series 2/t + y^2 t/6 - y^4 t^3/360 + ...
/// below y t = 1e-2 (the direct form loses digits against the 2/t pole).
fn h_coth(y: f64, t: f64) -> f64 {
    let s = y * t;
    if s < 1e-2 {
        let y2 = y * y;
        let t2 = t * t;
        2.0 / t + y2 * t / 6.0 - y2 * y2 * t * t2 / 360.0 + y2 * y2 * y2 * t2 * t2 * t / 15120.0
    } else {
        let e = (-s).exp();
        y * (1.0 + e) / (1.0 - e)
    }
}

/// A finite-state switching-rate model: a generator `switch` moving among k
/// regimes and a nonnegative rate `rates[i]` attached to each regime.
#[derive(Debug, Clone)]
pub struct CovarionSpec {
    switch: DMatrix<f64>,
    rates: Vec<f64>,
}

impl CovarionSpec {
    pub fn new(switch: DMatrix<f64>, rates: Vec<f64>) -> Result<Self> {
        let k = switch.nrows();
        if k == 0 || switch.ncols() != k {
            return Err(Error::invalid(format!(
                "switch matrix must be square and nonempty, got {}x{}",
                switch.nrows(),
                switch.ncols()
            )));
        }
        if rates.len() != k {
            return Err(Error::invalid(format!(
                "rate vector length {} does not match switch dimension {k}",
                rates.len()
            )));
        }
        let scale = switch.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for i in 0..k {
            let mut row_sum = 0.0;
            for j in 0..k {
                let v = switch[(i, j)];
                if !v.is_finite() {
                    return Err(Error::invalid("switch matrix entries must be finite"));
                }
                if i != j && v < 0.0 {
                    return Err(Error::invalid(format!(
                        "switch matrix off-diagonal ({i},{j}) is negative: {v}"
                    )));
                }
                row_sum += v;
            }
            if row_sum.abs() > 1e-9 * scale {
                return Err(Error::invalid(format!(
                    "switch matrix row {i} sums to {row_sum}, expected 0"
                )));
            }
        }
        for (i, &r) in rates.iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::invalid(format!(
                    "rate {i} must be nonnegative and finite, got {r}"
                )));
            }
        }
        Ok(CovarionSpec { switch, rates })
    }

    pub fn k(&self) -> usize {
        self.rates.len()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// M_{g_i}(eta) = sum_j [e^{(G + eta D) t}]_{ij}, the mgf of the
    /// integrated switching rate started in regime i.
    pub fn mgf_start(&self, i: usize, eta: f64, t: f64) -> Result<f64> {
        self.check(i, 0, eta, t)?;
        let e = self.tilted_exp(eta, t)?;
        Ok(e.row(i).sum())
    }

    /// M_{g_i, g_j}(eta) = [e^{(G + eta D) t}]_{ij} / [e^{G t}]_{ij},
    /// conditioned on starting in regime i and ending in regime j.
    pub fn mgf_bridge(&self, i: usize, j: usize, eta: f64, t: f64) -> Result<f64> {
        self.check(i, j, eta, t)?;
        let tilted = self.tilted_exp(eta, t)?;
        let plain = self.tilted_exp(0.0, t)?;
        let denom = plain[(i, j)];
        if denom <= 0.0 {
            return Err(Error::domain(format!(
                "regime {j} is unreachable from regime {i} over time {t}"
            )));
        }
        Ok(tilted[(i, j)] / denom)
    }

    fn check(&self, i: usize, j: usize, eta: f64, t: f64) -> Result<()> {
        let k = self.k();
        if i >= k || j >= k {
            return Err(Error::invalid(format!(
                "regime index out of range for k = {k}"
            )));
        }
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::domain(format!("time must be positive, got {t}")));
        }
        if !eta.is_finite() {
            return Err(Error::domain(format!("eta must be finite, got {eta}")));
        }
        Ok(())
    }

    /// e^{(G + eta D) t} by scaling and squaring.
    fn tilted_exp(&self, eta: f64, t: f64) -> Result<DMatrix<f64>> {
        let k = self.k();
        let mut m = self.switch.clone();
        for i in 0..k {
            m[(i, i)] += eta * self.rates[i];
        }
        let e = (m * t).exp();
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(
                "matrix exponential produced non-finite entries",
            ));
        }
        Ok(e)
    }
}
