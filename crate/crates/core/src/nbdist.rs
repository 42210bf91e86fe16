//! Negative Binomial distribution in the mean/shape parameterization.
//!
//! With mean `mu` and shape `r`, `p = mu / (r + mu)` and
//!
//! ```text
//! P(X = k) = C(k + r - 1, k) (r / (r + mu))^r (mu / (r + mu))^k,   Var = mu + mu^2 / r
//! ```
//!
//! All likelihood arithmetic is done in log-space with `ln Γ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegBinParams {
    mu: f64,
    r: f64,
}

impl NegBinParams {
    pub fn new(mu: f64, r: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::invalid(format!("NB mean must be finite and > 0, got {mu}")));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid(format!("NB shape must be finite and > 0, got {r}")));
        }
        Ok(NegBinParams { mu, r })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Success-count probability `mu / (r + mu)`.
    pub fn p(&self) -> f64 {
        self.mu / (self.r + self.mu)
    }

    /// `(mean, variance)`.
    pub fn moments(&self) -> (f64, f64) {
        (self.mu, self.mu + self.mu * self.mu / self.r)
    }

    pub fn std_dev(&self) -> f64 {
        self.moments().1.sqrt()
    }

    pub fn log_pmf(&self, k: u64) -> f64 {
        log_pmf(self.mu, self.r, k)
    }

    pub fn pmf(&self, k: u64) -> f64 {
        self.log_pmf(k).exp()
    }

    /// `P(X <= k)`, by direct summation.
    pub fn cdf(&self, k: u64) -> f64 {
        (0..=k).map(|j| self.pmf(j)).sum::<f64>().min(1.0)
    }

    /// Smallest `k` with `P(X <= k) >= q`.
    pub fn quantile(&self, q: f64) -> u64 {
        let mut acc = 0.0;
        let mut k = 0;
        loop {
            acc += self.pmf(k);
            if acc >= q || k > 10_000_000 {
                return k;
            }
            k += 1;
        }
    }

    /// Draws `n` counts through the Gamma-Poisson mixture, reproducibly per seed.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_one(&mut rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let gamma = Gamma::new(self.r, self.mu / self.r).expect("validated shape and scale");
        poisson_draw(gamma.sample(rng), rng)
    }
}

/// Poisson draw that tolerates a vanishing rate.
pub(crate) fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if !(lambda > 1e-12) {
        return 0;
    }
    let d: f64 = Poisson::new(lambda).expect("positive finite rate").sample(rng);
    d as u64
}

/// `ln P(X = k)` for mean `mu` and shape `r`.
pub fn log_pmf(mu: f64, r: f64, k: u64) -> f64 {
    let kf = k as f64;
    let coeff = ln_gamma(kf + r) - ln_gamma(r) - ln_gamma(kf + 1.0);
    // r ln(r/(r+mu)) = -r ln(1 + mu/r)
    let zero_part = -r * (mu / r).ln_1p();
    let count_part = if k == 0 { 0.0 } else { kf * (mu.ln() - (r + mu).ln()) };
    coeff + zero_part + count_part
}

/// Log-likelihood of an observed count under `params`.
pub fn log_likelihood(params: &NegBinParams, k: u64) -> f64 {
    params.log_pmf(k)
}

/// Negative log-likelihood and its partial derivatives `(nll, ∂/∂mu, ∂/∂r)`.
pub fn nll_with_grad(mu: f64, r: f64, k: u64) -> (f64, f64, f64) {
    let kf = k as f64;
    let nll = -log_pmf(mu, r, k);
    let d_mu = kf / mu - (kf + r) / (r + mu);
    let d_r = digamma(kf + r) - digamma(r) - (mu / r).ln_1p() + (mu - kf) / (r + mu);
    (nll, -d_mu, -d_r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn geometric_special_case() {
        let nb = NegBinParams::new(1.0, 1.0).unwrap();
        assert_eq!(nb.p(), 0.5);
        assert!((nb.pmf(0) - 0.5).abs() < 1e-15);
        assert!((nb.pmf(1) - 0.25).abs() < 1e-15);
        assert!((log_likelihood(&nb, 0) - 0.5f64.ln()).abs() < 1e-15);
        for k in 0..20u64 {
            assert!((nb.pmf(k) - 0.5f64.powi(k as i32 + 1)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(NegBinParams::new(0.0, 1.0).is_err());
        assert!(NegBinParams::new(1.0, -1.0).is_err());
        assert!(NegBinParams::new(f64::NAN, 1.0).is_err());
        assert!(NegBinParams::new(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn moments_examples() {
        assert_eq!(NegBinParams::new(2.0, 4.0).unwrap().moments(), (2.0, 3.0));
        assert_eq!(NegBinParams::new(0.5, 0.5).unwrap().moments(), (0.5, 1.0));
        let (m, v) = NegBinParams::new(1.0, 1e9).unwrap().moments();
        assert_eq!(m, 1.0);
        assert!((v - 1.0).abs() < 1e-8);
    }

    #[test]
    fn nll_vanishes_at_zero_with_tiny_mean() {
        let nll = -log_pmf(1e-12, 2.0, 0);
        assert!((0.0..1e-11).contains(&nll));
    }

    #[test]
    fn large_counts_are_finite() {
        let lp = log_pmf(3.0, 0.7, 1_000_000);
        assert!(lp.is_finite() && lp < 0.0);
        let lp = log_pmf(1e6, 5.0, 999_999);
        assert!(lp.is_finite());
    }

    #[test]
    fn mean_gradient_vanishes_at_k() {
        for &(k, r) in &[(3u64, 2.0), (7, 0.5), (1, 10.0)] {
            let mu = k as f64;
            let h = 1e-6;
            let fd = (-log_pmf(mu + h, r, k) + log_pmf(mu - h, r, k)) / (2.0 * h);
            assert!(fd.abs() < 1e-6, "fd {fd}");
            assert!(nll_with_grad(mu, r, k).1.abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let nb = NegBinParams::new(2.0, 4.0).unwrap();
        assert_eq!(nb.sample(50, 9), nb.sample(50, 9));
        assert_ne!(nb.sample(50, 9), nb.sample(50, 10));
        assert_eq!(nb.sample(1, 3).len(), 1);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let nb = NegBinParams::new(3.0, 2.0).unwrap();
        for q in [0.05, 0.5, 0.95] {
            let k = nb.quantile(q);
            assert!(nb.cdf(k) >= q);
            if k > 0 {
                assert!(nb.cdf(k - 1) < q);
            }
        }
    }

    proptest! {
        #[test]
        fn analytic_gradient_matches_finite_difference(mu in 0.05f64..30.0, r in 0.05f64..50.0, k in 0u64..60) {
            let (_, gmu, gr) = nll_with_grad(mu, r, k);
            let h_mu = 1e-5 * mu;
            let h_r = 1e-5 * r;
            let fd_mu = (-log_pmf(mu + h_mu, r, k) + log_pmf(mu - h_mu, r, k)) / (2.0 * h_mu);
            let fd_r = (-log_pmf(mu, r + h_r, k) + log_pmf(mu, r - h_r, k)) / (2.0 * h_r);
            prop_assert!((gmu - fd_mu).abs() <= 1e-5 * (1.0 + gmu.abs()), "mu {} vs {}", gmu, fd_mu);
            prop_assert!((gr - fd_r).abs() <= 1e-5 * (1.0 + gr.abs()), "r {} vs {}", gr, fd_r);
        }

        #[test]
        fn overdispersed(mu in 1e-3f64..100.0, r in 1e-3f64..1e3) {
            let (m, v) = NegBinParams::new(mu, r).unwrap().moments();
            prop_assert!(v >= m);
        }

        // Concave in ln(mu): d²/dη² = -(k + r) r mu / (r + mu)². In mu itself it is
        // not (k = 0 gives r / (r + mu)² > 0).
        #[test]
        fn log_likelihood_concave_in_log_mean(mu in 0.1f64..20.0, r in 0.1f64..20.0, k in 0u64..40) {
            let h = 1e-3;
            let at = |eta: f64| log_pmf(eta.exp(), r, k);
            let eta = mu.ln();
            let second = at(eta + h) - 2.0 * at(eta) + at(eta - h);
            prop_assert!(second <= 1e-12, "second difference {}", second);
        }

        #[test]
        fn zero_count_likelihood_is_convex_in_mean(mu in 0.1f64..20.0, r in 0.1f64..20.0) {
            let h = 1e-3 * mu;
            let second = log_pmf(mu + h, r, 0) - 2.0 * log_pmf(mu, r, 0) + log_pmf(mu - h, r, 0);
            prop_assert!(second > 0.0);
        }
    }
}
