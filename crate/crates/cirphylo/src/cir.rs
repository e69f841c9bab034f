//! The mean-reverting square-root rate diffusion
//! dR = b (a - R) dt + sigma sqrt(R) dB: parameters, transition law,
//! stationary law, autocovariance, dispersion statistics, and the
//! two-statistic estimator.

use crate::error::{Error, Result};
use crate::special::{ln_gamma, ln_noncentral_chi2_pdf};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

/// Validated parameter set (a, b, sigma2) of the rate diffusion.
///
/// `a` is the stationary mean rate, `b` the reversion intensity (1/time),
/// `sigma2` the squared diffusion coefficient. The stationary law is
/// Gamma(shape 2ab/sigma2, rate 2b/sigma2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirParams {
    pub a: f64,
    pub b: f64,
    pub sigma2: f64,
}

impl CirParams {
    pub fn new(a: f64, b: f64, sigma2: f64) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b), ("sigma2", sigma2)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(CirParams { a, b, sigma2 })
    }

    /// Invert the moment pair (Gamma_hat = sigma^2/b, I_inf_hat = 1 + sigma^2/b^2)
    /// of the a = 1 model: b = Gamma_hat/(I-1), sigma^2 = Gamma_hat^2/(I-1).
    pub fn from_stats(gamma_hat: f64, i_inf_hat: f64) -> Result<Self> {
        if !gamma_hat.is_finite() || gamma_hat <= 0.0 {
            return Err(Error::invalid(format!(
                "gamma_hat must be positive and finite, got {gamma_hat}"
            )));
        }
        if !i_inf_hat.is_finite() || i_inf_hat <= 1.0 {
            return Err(Error::invalid(format!(
                "index of dispersion must exceed 1 under rate variation, got {i_inf_hat}"
            )));
        }
        let excess = i_inf_hat - 1.0;
        CirParams::new(1.0, gamma_hat / excess, gamma_hat * gamma_hat / excess)
    }

    /// True when 2ab < sigma2, in which case the boundary 0 is attainable
    /// (the Feller condition fails). Construction still succeeds; samplers
    /// and densities remain valid.
    pub fn boundary_attainable(&self) -> bool {
        2.0 * self.a * self.b < self.sigma2
    }

    pub fn stationary_shape(&self) -> f64 {
        2.0 * self.a * self.b / self.sigma2
    }

    /// Rate parameter of the stationary gamma law.
    pub fn stationary_rate(&self) -> f64 {
        2.0 * self.b / self.sigma2
    }

    pub fn stationary_scale(&self) -> f64 {
        self.sigma2 / (2.0 * self.b)
    }

    pub fn stationary_mean(&self) -> f64 {
        self.a
    }

    pub fn stationary_variance(&self) -> f64 {
        self.a * self.sigma2 / (2.0 * self.b)
    }

    /// Mean and variance of R_t given R_0 = r0.
    pub fn transition_mean_var(&self, r0: f64, t: f64) -> Result<(f64, f64)> {
        self.check_transition_args(r0, t)?;
        let e = (-self.b * t).exp();
        let mean = r0 * e + self.a * (1.0 - e);
        let var = r0 * (self.sigma2 / self.b) * (e - e * e)
            + self.a * self.sigma2 / (2.0 * self.b) * (1.0 - e) * (1.0 - e);
        Ok((mean, var))
    }

    /// Density of R_t given R_0 = r0: the noncentral chi-square law scaled by
    /// 1/(2c), c = 2b/(sigma2 (1-e^{-bt})), with df = 4ab/sigma2 and
    /// noncentrality 4 b r0 e^{-bt} / (sigma2 (1-e^{-bt})).
    pub fn transition_pdf(&self, r0: f64, t: f64, r: f64) -> Result<f64> {
        self.check_transition_args(r0, t)?;
        if !r.is_finite() {
            return Err(Error::domain(format!("rate must be finite, got {r}")));
        }
        if r < 0.0 {
            return Ok(0.0);
        }
        let law = self.transition_law(t);
        Ok(law.two_c * ln_noncentral_chi2_pdf(law.df, law.nc_coef * r0, law.two_c * r)?.exp())
    }

    /// Exact draw from the transition law, as a Poisson-mixed gamma variate:
    /// K ~ Poisson(nc/2), Y ~ Gamma(df/2 + K, scale 2), R_t = Y/(2c).
    pub fn sample_transition<R: Rng + ?Sized>(&self, r0: f64, t: f64, rng: &mut R) -> Result<f64> {
        self.check_transition_args(r0, t)?;
        Ok(self.transition_law(t).sample(r0, rng))
    }

    pub(crate) fn transition_law(&self, t: f64) -> TransitionLaw {
        let one_minus_e = -(-self.b * t).exp_m1();
        let two_c = 4.0 * self.b / (self.sigma2 * one_minus_e);
        TransitionLaw {
            two_c,
            df: 2.0 * self.stationary_shape(),
            nc_coef: two_c * (-self.b * t).exp(),
        }
    }

    fn check_transition_args(&self, r0: f64, t: f64) -> Result<()> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::domain(format!("time must be positive, got {t}")));
        }
        if !r0.is_finite() || r0 < 0.0 {
            return Err(Error::domain(format!(
                "initial rate must be nonnegative, got {r0}"
            )));
        }
        Ok(())
    }

    /// Stationary density: Gamma(shape 2ab/sigma2, rate 2b/sigma2); 0 for r < 0.
    pub fn stationary_pdf(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        let shape = self.stationary_shape();
        let rate = self.stationary_rate();
        if r == 0.0 {
            return match shape {
                s if s > 1.0 => 0.0,
                s if s == 1.0 => rate,
                _ => f64::INFINITY,
            };
        }
        (shape * rate.ln() + (shape - 1.0) * r.ln() - rate * r - ln_gamma(shape)).exp()
    }

    pub fn stationary_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.stationary_shape(), self.stationary_scale())
            .expect("valid parameters imply a valid gamma law")
            .sample(rng)
    }

    /// Stationary autocovariance Cov(R_s, R_{s+t}) = (a sigma2 / 2b) e^{-bt}.
    pub fn autocovariance(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::domain(format!(
                "lag must be nonnegative, got {t}"
            )));
        }
        Ok(self.stationary_variance() * (-self.b * t).exp())
    }

    /// Index of dispersion of the substitution count over [0, t]:
    /// 1 + sigma2 (bt - 1 + e^{-bt}) / (b^3 t) for finite t,
    /// and its limit 1 + sigma2/b^2 at t = infinity.
    pub fn index_of_dispersion(&self, t: f64) -> Result<f64> {
        if t == f64::INFINITY {
            return Ok(1.0 + self.sigma2 / (self.b * self.b));
        }
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::domain(format!("time must be positive, got {t}")));
        }
        let bt = self.b * t;
        // bt - 1 + e^{-bt} = (bt)^2/2 - (bt)^3/6 + ... loses all digits for
        // small bt; switch to the series there.
        let num = if bt < 1e-4 {
            bt * bt * (0.5 - bt / 6.0 + bt * bt / 24.0)
        } else {
            bt - 1.0 + (-bt).exp()
        };
        Ok(1.0 + self.sigma2 * num / (self.b * self.b * self.b * t))
    }
}

/// Precomputed constants of the transition law for a fixed step; lets path
/// simulation draw millions of steps without recomputing exponentials.
pub(crate) struct TransitionLaw {
    /// 2c = 4b / (sigma2 (1 - e^{-bt})), the density/sampling scale.
    pub two_c: f64,
    pub df: f64,
    /// Noncentrality per unit initial rate: nc = nc_coef * r0.
    pub nc_coef: f64,
}

impl TransitionLaw {
    pub fn sample<R: Rng + ?Sized>(&self, r0: f64, rng: &mut R) -> f64 {
        let half_nc = 0.5 * self.nc_coef * r0;
        let k = if half_nc > 0.0 {
            Poisson::new(half_nc)
                .expect("positive mean")
                .sample(rng)
        } else {
            0.0
        };
        let y = Gamma::new(self.df / 2.0 + k, 2.0)
            .expect("positive shape")
            .sample(rng);
        y / self.two_c
    }
}

/// Summary of an empirical index-of-dispersion computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionEstimate {
    /// Sample variance / sample mean.
    pub value: f64,
    /// Replicate count.
    pub n: usize,
    pub mean_count: f64,
    /// Unbiased (n-1 denominator) sample variance.
    pub var_count: f64,
}

/// Index of dispersion of replicate substitution counts, with the unbiased
/// sample variance.
pub fn empirical_dispersion(counts: &[u64]) -> Result<DispersionEstimate> {
    if counts.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 replicate counts, got {}",
            counts.len()
        )));
    }
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::invalid("mean count is zero".to_string()));
    }
    let ss = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum::<f64>();
    let var = ss / (n - 1.0);
    Ok(DispersionEstimate {
        value: var / mean,
        n: counts.len(),
        mean_count: mean,
        var_count: var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> CirParams {
        CirParams::new(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn params_populate_stationary_constants() {
        let p = unit();
        assert_eq!(p.stationary_shape(), 2.0);
        assert_eq!(p.stationary_scale(), 0.5);
        assert_eq!(p.stationary_mean(), 1.0);
        assert_eq!(p.stationary_variance(), 0.5);
        assert!(!p.boundary_attainable());

        let q = CirParams::new(1.0, 1.0, 0.5).unwrap();
        assert_eq!(q.stationary_shape(), 4.0);
        assert_eq!(q.stationary_scale(), 0.25);
        assert_eq!(q.stationary_variance(), 0.25);

        assert!(CirParams::new(1.0, 0.1, 1.0).unwrap().boundary_attainable());
    }

    #[test]
    fn params_validation() {
        let err = CirParams::new(1.0, 0.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("b must be positive"));
        assert!(CirParams::new(0.0, 1.0, 1.0).is_err());
        assert!(CirParams::new(1.0, 1.0, f64::NAN).is_err());
        assert!(CirParams::new(1.0, f64::INFINITY, 1.0).is_err());
        assert!(CirParams::new(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn transition_moments() {
        let p = unit();
        let (mean, _) = p.transition_mean_var(2.0, std::f64::consts::LN_2).unwrap();
        assert_relative_eq!(mean, 1.5, max_relative = 1e-14);

        let (mean, var) = p.transition_mean_var(1.0, 50.0).unwrap();
        assert_relative_eq!(mean, 1.0, max_relative = 1e-12);
        assert_relative_eq!(var, 0.5, max_relative = 1e-12);

        let (mean, var) = p.transition_mean_var(0.0, 1.0).unwrap();
        assert_relative_eq!(mean, 0.6321205588285577, max_relative = 1e-14);
        assert_relative_eq!(var, 0.19978820044686402, max_relative = 1e-14);

        assert!(p.transition_mean_var(1.0, 0.0).is_err());
        assert!(p.transition_mean_var(-1.0, 1.0).is_err());
    }

    // Frozen against an independent high-precision evaluation of the scaled
    // noncentral chi-square density.
    #[test]
    fn transition_density_frozen_values() {
        let p = unit();
        assert_relative_eq!(
            p.transition_pdf(1.0, 1.0, 1.0).unwrap(),
            0.57998885520241565,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            p.transition_pdf(1.0, 1.0, 0.5).unwrap(),
            0.72315152054301755,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            p.transition_pdf(2.0, 0.5, 1.5).unwrap(),
            0.5478167927302129,
            max_relative = 1e-12
        );
        assert_eq!(p.transition_pdf(1.0, 1.0, -0.25).unwrap(), 0.0);
        assert!(p.transition_pdf(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn transition_density_r0_zero_is_central_gamma() {
        // nc = 0: the law is Gamma(df/2, rate c) directly.
        let p = unit();
        assert_relative_eq!(
            p.transition_pdf(0.0, 1.0, 1.0).unwrap(),
            0.42303144618141332,
            max_relative = 1e-12
        );
        let law = p.transition_law(1.0);
        let c = law.two_c / 2.0;
        let shape = law.df / 2.0;
        for r in [0.2f64, 1.0, 3.5] {
            let gamma_pdf =
                (shape * c.ln() + (shape - 1.0) * r.ln() - c * r - ln_gamma(shape)).exp();
            assert_relative_eq!(
                p.transition_pdf(0.0, 1.0, r).unwrap(),
                gamma_pdf,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn transition_density_normalizes_with_matching_moments() {
        for (p, r0, t) in [
            (unit(), 1.0, 1.0),
            (unit(), 0.0, 0.5),
            (CirParams::new(1.0, 0.5, 2.0).unwrap(), 2.0, 1.5),
            (CirParams::new(2.0, 1.5, 0.7).unwrap(), 0.3, 0.25),
        ] {
            // Integrate in u with r = u^2: the Jacobian absorbs the
            // inverse-sqrt endpoint singularity that appears when df < 2.
            let pdf = |r: f64| p.transition_pdf(r0, t, r).unwrap();
            let hi = 60f64.sqrt();
            let m0 = integrate(|u| 2.0 * u * pdf(u * u), 0.0, hi, 60, 32);
            let m1 = integrate(|u| 2.0 * u * u * u * pdf(u * u), 0.0, hi, 60, 32);
            let m2 = integrate(|u| 2.0 * u.powi(5) * pdf(u * u), 0.0, hi, 60, 32);
            let (mean, var) = p.transition_mean_var(r0, t).unwrap();
            assert_abs_diff_eq!(m0, 1.0, epsilon = 1e-8);
            assert_relative_eq!(m1, mean, max_relative = 1e-6);
            assert_relative_eq!(m2 - m1 * m1, var, max_relative = 1e-6);
        }
    }

    #[test]
    fn transition_converges_to_stationary() {
        let p = unit();
        for r in [0.5, 1.0, 2.0] {
            assert_abs_diff_eq!(
                p.transition_pdf(1.7, 100.0, r).unwrap(),
                p.stationary_pdf(r),
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn stationary_law() {
        let p = unit();
        assert_relative_eq!(
            p.stationary_pdf(1.0),
            4.0 * (-2.0f64).exp(),
            max_relative = 1e-13
        );
        assert_eq!(p.stationary_pdf(-0.5), 0.0);
        assert_eq!(p.stationary_pdf(0.0), 0.0); // shape 2 > 1

        let total = integrate(|r| p.stationary_pdf(r), 0.0, 50.0, 50, 32);
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| p.stationary_sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = (p.stationary_variance() / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean} off by > 3 SE");
    }

    #[test]
    fn autocovariance_decays_exponentially() {
        let p = unit();
        assert_relative_eq!(p.autocovariance(0.0).unwrap(), 0.5, max_relative = 1e-14);
        assert_relative_eq!(
            p.autocovariance(1.0).unwrap(),
            0.5 * (-1.0f64).exp(),
            max_relative = 1e-14
        );
        assert!(p.autocovariance(-0.1).is_err());
        // log-linear in t with slope -b
        let p2 = CirParams::new(1.0, 1.7, 0.9).unwrap();
        let slope = (p2.autocovariance(2.0).unwrap().ln() - p2.autocovariance(1.0).unwrap().ln())
            / (2.0 - 1.0);
        assert_relative_eq!(slope, -1.7, max_relative = 1e-12);
    }

    #[test]
    fn dispersion_index_values_and_monotonicity() {
        let p = unit();
        assert_relative_eq!(
            p.index_of_dispersion(f64::INFINITY).unwrap(),
            2.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            p.index_of_dispersion(1.0).unwrap(),
            1.0 + (-1.0f64).exp(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            p.index_of_dispersion(10.0).unwrap(),
            1.9000045399929763,
            max_relative = 1e-13
        );
        // Poisson limit as t -> 0+, approached smoothly through the series branch.
        assert_abs_diff_eq!(p.index_of_dispersion(1e-9).unwrap(), 1.0, epsilon = 1e-9);
        let mut prev = 1.0;
        for t in [1e-6, 1e-3, 0.1, 1.0, 5.0, 20.0, 200.0] {
            let i = p.index_of_dispersion(t).unwrap();
            assert!(i > 1.0, "I({t}) = {i} not > 1");
            assert!(i >= prev, "I not nondecreasing at t={t}");
            prev = i;
        }
        assert!(prev < p.index_of_dispersion(f64::INFINITY).unwrap());
        assert!(p.index_of_dispersion(0.0).is_err());
        assert!(p.index_of_dispersion(-1.0).is_err());
    }

    #[test]
    fn estimator_inverts_the_moment_map() {
        let p = CirParams::from_stats(1.0, 2.0).unwrap();
        assert_eq!((p.a, p.b, p.sigma2), (1.0, 1.0, 1.0));
        let p = CirParams::from_stats(0.5, 2.0).unwrap();
        assert_relative_eq!(p.b, 0.5, max_relative = 1e-15);
        assert_relative_eq!(p.sigma2, 0.25, max_relative = 1e-15);

        let err = CirParams::from_stats(1.0, 0.9).unwrap_err();
        assert!(err
            .to_string()
            .contains("index of dispersion must exceed 1"));
    }

    #[test]
    fn estimator_round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let b = rng.random_range(0.05..5.0);
            let sigma2 = rng.random_range(0.05..5.0);
            let p = CirParams::new(1.0, b, sigma2).unwrap();
            let gamma_hat = p.sigma2 / p.b;
            let i_inf = p.index_of_dispersion(f64::INFINITY).unwrap();
            let q = CirParams::from_stats(gamma_hat, i_inf).unwrap();
            assert_relative_eq!(q.b, b, max_relative = 1e-12);
            assert_relative_eq!(q.sigma2, sigma2, max_relative = 1e-12);
            assert_relative_eq!(q.sigma2 / q.b, gamma_hat, max_relative = 1e-12);
            assert_relative_eq!(
                q.index_of_dispersion(f64::INFINITY).unwrap(),
                i_inf,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn empirical_dispersion_examples() {
        assert_eq!(empirical_dispersion(&[3, 3, 3]).unwrap().value, 0.0);
        let d = empirical_dispersion(&[4, 6, 8]).unwrap();
        assert_relative_eq!(d.value, 2.0 / 3.0, max_relative = 1e-14);
        assert_eq!(d.n, 3);
        assert_eq!(d.mean_count, 6.0);
        assert_eq!(d.var_count, 4.0);

        assert!(empirical_dispersion(&[5]).is_err());
        let err = empirical_dispersion(&[0, 0, 0]).unwrap_err();
        assert!(err.to_string().contains("mean count is zero"));
    }

    #[test]
    fn sampling_matches_transition_moments() {
        let p = unit();
        let t = std::f64::consts::LN_2;
        let (mean, var) = p.transition_mean_var(2.0, t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        for _ in 0..n {
            let r = p.sample_transition(2.0, t, &mut rng).unwrap();
            sum += r;
            min = min.min(r);
        }
        let emp_mean = sum / n as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (emp_mean - mean).abs() < 3.0 * se,
            "mean {emp_mean} vs {mean}, 3se {}",
            3.0 * se
        );
        assert!(min >= 0.0);
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let p = CirParams::new(1.0, 0.8, 1.3).unwrap();
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64)
                .map(|_| p.sample_transition(0.7, 0.4, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(99), draw(99));
        assert_ne!(draw(99), draw(100));
    }
}
