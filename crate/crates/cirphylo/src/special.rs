//! Special functions backing the closed-form transition machinery: the
//! modified Bessel function of the first kind and the noncentral chi-square
//! density.
//!
//! `I_nu` is evaluated in log space so that callers combining huge and tiny
//! factors (bridge ratios, densities far in the tails) never overflow.

use crate::error::{Error, Result};
use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

pub use statrs::function::gamma::ln_gamma;

/// Power series is preferred up to this argument; all series terms are
/// positive, and the running sum stays below ~e^696 < f64::MAX there.
const SERIES_MAX_X: f64 = 700.0;

/// ln I_nu(x) for nu >= -1, x >= 0.
///
/// Dispatch: power series for x <= 700; for larger x, the large-argument
/// (Hankel) expansion when 4 nu^2 <= x, otherwise the uniform large-order
/// asymptotic expansion. Relative accuracy of I is 1e-10 or better
/// throughout; returns -inf where I = 0 and +inf where I diverges.
pub fn ln_bessel_i(nu: f64, x: f64) -> Result<f64> {
    if !nu.is_finite() || nu < -1.0 {
        return Err(Error::invalid(format!(
            "bessel order must be finite and >= -1, got {nu}"
        )));
    }
    if !x.is_finite() || x < 0.0 {
        return Err(Error::domain(format!(
            "bessel argument must be finite and nonnegative, got {x}"
        )));
    }
    // I_{-1} = I_1; orders in (-1, 0) are handled directly by the series.
    let nu = if nu == -1.0 { 1.0 } else { nu };

    if x == 0.0 {
        return Ok(match nu {
            n if n == 0.0 => 0.0,
            n if n > 0.0 => f64::NEG_INFINITY,
            _ => f64::INFINITY,
        });
    }

    if x <= SERIES_MAX_X {
        Ok(ln_series(nu, x))
    } else if 4.0 * nu * nu <= x {
        Ok(ln_hankel(nu, x))
    } else {
        Ok(ln_uniform_large_order(nu, x))
    }
}

/// I_nu(x) itself; overflows to +inf beyond x ~ 709 as the true value
/// exceeds the f64 range.
pub fn bessel_i(nu: f64, x: f64) -> Result<f64> {
    Ok(ln_bessel_i(nu, x)?.exp())
}

/// Ascending series: I_nu(x) = (x/2)^nu / Gamma(nu+1) * sum_k q^k / (k! (nu+1)..(nu+k)),
/// q = x^2/4. Every term is positive, so the sum carries no cancellation.
fn ln_series(nu: f64, x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for k in 1..5000 {
        let kf = k as f64;
        term *= q / (kf * (nu + kf));
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    nu * (x / 2.0).ln() - ln_gamma(nu + 1.0) + sum.ln()
}

/// Large-argument expansion I_nu(x) ~ e^x/sqrt(2 pi x) * sum_k t_k with
/// t_0 = 1, t_k = -t_{k-1} (mu - (2k-1)^2)/(8 k x), mu = 4 nu^2.
/// Truncated at the smallest term (the series is asymptotic); with
/// mu <= x and x > 700 the smallest term is far below 1e-16.
fn ln_hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut prev = f64::INFINITY;
    for k in 1..200 {
        let kf = k as f64;
        let two_k1 = 2.0 * kf - 1.0;
        term *= -(mu - two_k1 * two_k1) / (8.0 * kf * x);
        if term.abs() >= prev {
            break;
        }
        sum += term;
        prev = term.abs();
        if term.abs() < sum.abs() * 1e-18 {
            break;
        }
    }
    x - 0.5 * (2.0 * PI * x).ln() + sum.ln()
}

/// Uniform large-order expansion: with z = x/nu, t = 1/sqrt(1+z^2),
/// eta = sqrt(1+z^2) + ln(z/(1+sqrt(1+z^2))),
/// I_nu(nu z) ~ e^{nu eta} / (sqrt(2 pi nu) (1+z^2)^{1/4}) * sum_k u_k(t)/nu^k.
/// Used only where 4 nu^2 > x > 700, so nu > 13 and eleven u_k terms give
/// relative error far below 1e-10.
fn ln_uniform_large_order(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let root = (1.0 + z * z).sqrt();
    let t = 1.0 / root;
    let eta = root + (z / (1.0 + root)).ln();
    let mut sum = 0.0f64;
    let mut nu_pow = 1.0f64;
    for poly in u_polynomials() {
        sum += eval_poly(poly, t) / nu_pow;
        nu_pow *= nu;
    }
    nu * eta - 0.5 * (2.0 * PI * nu).ln() - 0.25 * (1.0 + z * z).ln() + sum.ln()
}

/// The u_k polynomials of the uniform expansion, built from
/// u_0 = 1,  u_{k+1}(t) = t^2(1-t^2) u_k'(t)/2 + (1/8) int_0^t (1-5 s^2) u_k(s) ds.
/// Coefficients are exact dyadic/ternary rationals, reproduced here in f64.
fn u_polynomials() -> &'static Vec<Vec<f64>> {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mut polys = vec![vec![1.0f64]];
        for _ in 0..10 {
            let u = polys.last().unwrap();
            let mut next = vec![0.0f64; u.len() + 3];
            for (p, &c) in u.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let pf = p as f64;
                // t^2 (1 - t^2) u'(t) / 2
                if p >= 1 {
                    next[p + 1] += 0.5 * pf * c;
                    next[p + 3] -= 0.5 * pf * c;
                }
                // (1/8) integral of (1 - 5 s^2) c s^p
                next[p + 1] += c / (8.0 * (pf + 1.0));
                next[p + 3] -= 5.0 * c / (8.0 * (pf + 3.0));
            }
            polys.push(next);
        }
        polys
    })
}

fn eval_poly(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Density of the noncentral chi-square law with `df` degrees of freedom and
/// noncentrality `nc`, evaluated at `x`. Reduces to the central chi-square
/// density at nc = 0; returns 0 for x < 0.
pub fn noncentral_chi2_pdf(df: f64, nc: f64, x: f64) -> Result<f64> {
    Ok(ln_noncentral_chi2_pdf(df, nc, x)?.exp())
}

/// Log of `noncentral_chi2_pdf`; -inf where the density vanishes.
pub fn ln_noncentral_chi2_pdf(df: f64, nc: f64, x: f64) -> Result<f64> {
    if !df.is_finite() || df <= 0.0 {
        return Err(Error::invalid(format!(
            "degrees of freedom must be positive and finite, got {df}"
        )));
    }
    if !nc.is_finite() || nc < 0.0 {
        return Err(Error::invalid(format!(
            "noncentrality must be nonnegative and finite, got {nc}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::domain(format!("evaluation point must be finite, got {x}")));
    }
    if x < 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if x == 0.0 {
        // x^{df/2-1} limit: finite only at df = 2.
        return Ok(match df {
            d if d > 2.0 => f64::NEG_INFINITY,
            d if d == 2.0 => -LN_2 - nc / 2.0,
            _ => f64::INFINITY,
        });
    }
    if nc == 0.0 {
        return Ok((df / 2.0 - 1.0) * x.ln() - x / 2.0 - (df / 2.0) * LN_2 - ln_gamma(df / 2.0));
    }
    let order = df / 2.0 - 1.0;
    let ln_i = ln_bessel_i(order, (nc * x).sqrt())?;
    Ok(-LN_2 - (x + nc) / 2.0 + (df / 4.0 - 0.5) * (x.ln() - nc.ln()) + ln_i)
}
