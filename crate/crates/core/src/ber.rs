//! Closed-form BER of the MMSE receiver under imperfect CSI.
//!
//! The SINR of a UE after MMSE combining is approximated by a Gamma law whose
//! first two moments come from the deterministic equivalent of the
//! interference-plus-noise resolvent. The BER of binary signalling is then the
//! Gamma average of `Q(sqrt(SINR))`, available in closed form through `2F1`.

use crate::error::{Error, Result};
use crate::estimators::mmse_error_stats;
use crate::special::{gamma_tail_expectation, hyp2f1, ln_gamma, q_function};

/// `rho_v = (sum_k N0 beta_k / (N0 + beta_k P_T tau_T) + N0 / P_D)^-1`.
pub fn effective_rho(betas: &[f64], p_t: f64, tau_t: usize, noise_power: f64, p_d: f64) -> f64 {
    let residual: f64 = betas
        .iter()
        .map(|&b| mmse_error_stats(b, p_t, tau_t, noise_power).error_var)
        .sum();
    1.0 / (residual + noise_power / p_d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StieltjesMoments {
    /// Normalized trace of the resolvent at `z = -1`.
    pub mu: f64,
    /// Its derivative in `z` at the same point.
    pub sigma2: f64,
    pub iterations: usize,
    /// `|f(mu) - mu|` at the returned point.
    pub residual: f64,
}

const DAMPING: f64 = 0.5;
const MAX_ITERATIONS: usize = 10_000;

fn fixed_point_map(n: f64, gains: &[f64], m: f64) -> f64 {
    let s: f64 = gains.iter().map(|&v| v / (1.0 + n * v * m)).sum();
    1.0 / (s + 1.0)
}

/// Solves `m = (sum_i v_i / (1 + n v_i m) + 1)^-1` and differentiates it.
///
/// `gains` are the interferer terms `rho_v * beta_hat_i`. Damped Picard
/// iteration from `m = 1`; if that stalls, bisection on the monotone form
/// `m (sum_i v_i / (1 + n v_i m) + 1) - 1` over `[0, 1]`.
pub fn stieltjes_moments(n_antennas: usize, gains: &[f64], tolerance: f64) -> Result<StieltjesMoments> {
    if n_antennas == 0 {
        return Err(Error::InvalidConfig("antenna count must be positive".into()));
    }
    if let Some(v) = gains.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidConfig(format!("interferer gain {v} is not a finite non-negative number")));
    }
    let n = n_antennas as f64;
    let mut m = 1.0;
    let mut found = None;
    for it in 0..MAX_ITERATIONS {
        let f = fixed_point_map(n, gains, m);
        let residual = (f - m).abs();
        if residual < tolerance {
            found = Some((m, it, residual));
            break;
        }
        m = (1.0 - DAMPING) * m + DAMPING * f;
    }
    let (mu, iterations, residual) = match found {
        Some(x) => x,
        None => {
            log::warn!("damped fixed point stalled, switching to bisection");
            bisect(n, gains, tolerance)?
        }
    };
    let slope: f64 = gains.iter().map(|&v| n * v * v / (1.0 + n * v * mu).powi(2)).sum();
    let sigma2 = mu * mu / (1.0 - mu * mu * slope);
    Ok(StieltjesMoments {
        mu,
        sigma2,
        iterations,
        residual,
    })
}

fn bisect(n: f64, gains: &[f64], tolerance: f64) -> Result<(f64, usize, f64)> {
    let g = |m: f64| m * (gains.iter().map(|&v| v / (1.0 + n * v * m)).sum::<f64>() + 1.0) - 1.0;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for it in 0..200 {
        let mid = 0.5 * (lo + hi);
        let residual = (fixed_point_map(n, gains, mid) - mid).abs();
        if residual < tolerance {
            return Ok((mid, MAX_ITERATIONS + it, residual));
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence {
        what: "Stieltjes fixed point",
        iterations: MAX_ITERATIONS + 200,
    })
}

/// Gamma law fitted to the MMSE-receiver SINR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrGammaModel {
    pub mu: f64,
    pub sigma2: f64,
    pub mean: f64,
    pub variance: f64,
    /// Shape.
    pub alpha: f64,
    /// Scale.
    pub xi: f64,
    pub rho_v: f64,
    pub beta_hat: f64,
}

pub fn sinr_gamma_params(n_antennas: usize, rho_v: f64, beta_hat: f64, mu: f64, sigma2: f64) -> SinrGammaModel {
    let n = n_antennas as f64;
    let g = rho_v * beta_hat;
    SinrGammaModel {
        mu,
        sigma2,
        mean: n * g * mu,
        variance: n * g * g * sigma2,
        alpha: n * mu * mu / sigma2,
        xi: g * sigma2 / mu,
        rho_v,
        beta_hat,
    }
}

/// Closed-form `E[Q(sqrt(SINR))]` for `SINR ~ Gamma(alpha, xi)`.
///
/// Evaluated in log space. Falls back to direct quadrature if the
/// hypergeometric factor cannot be computed.
pub fn analytic_ber(model: &SinrGammaModel) -> Result<f64> {
    let (a, xi) = (model.alpha, model.xi);
    if !(a > 0.0) || !(xi >= 0.0) || !a.is_finite() || !xi.is_finite() {
        return Err(Error::InvalidConfig(format!("Gamma parameters ({a}, {xi}) out of range")));
    }
    if xi == 0.0 {
        return Ok(0.5);
    }
    let inv = 1.0 / xi;
    let z = inv / (inv + 0.5);
    let closed = hyp2f1(1.0, a + 0.5, a + 1.0, z).and_then(|f| {
        let ln = ln_gamma(a + 0.5) - ln_gamma(a) - (2.0 * (2.0 * std::f64::consts::PI).sqrt()).ln()
            - a * xi.ln()
            - a.ln()
            - (a + 0.5) * (inv + 0.5).ln()
            + f.ln();
        let v = ln.exp();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Quadrature(format!("closed form overflowed at ({a}, {xi})")))
        }
    });
    let v = match closed {
        Ok(v) => v,
        Err(e) => {
            log::info!("closed-form BER unavailable ({e}); integrating numerically");
            gamma_tail_expectation(a, xi, 1e-12)?
        }
    };
    Ok(v.clamp(0.0, 0.5))
}

/// Jensen lower bound `Q(sqrt(alpha * xi))`.
pub fn ber_lower_bound(model: &SinrGammaModel) -> f64 {
    q_function((model.alpha * model.xi).max(0.0).sqrt())
}

/// Gamma model for UE `k` decoded by an `n_antennas` MMSE receiver.
///
/// `betas` holds the gains of all UEs toward that receiver; every UE other
/// than `k` counts as an interferer.
pub fn mmse_sinr_model(
    n_antennas: usize,
    betas: &[f64],
    k: usize,
    p_t: f64,
    tau_t: usize,
    noise_power: f64,
    p_d: f64,
) -> Result<SinrGammaModel> {
    if k >= betas.len() {
        return Err(Error::IndexOutOfRange { index: k, len: betas.len() });
    }
    let rho = effective_rho(betas, p_t, tau_t, noise_power, p_d);
    let beta_hat = |b: f64| mmse_error_stats(b, p_t, tau_t, noise_power).estimate_var;
    let gains: Vec<f64> = betas
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, &b)| rho * beta_hat(b))
        .collect();
    let m = stieltjes_moments(n_antennas, &gains, 1e-12)?;
    Ok(sinr_gamma_params(n_antennas, rho, beta_hat(betas[k]), m.mu, m.sigma2))
}

/// Predicted BER of UE `k`, see [`mmse_sinr_model`].
pub fn predicted_ber(
    n_antennas: usize,
    betas: &[f64],
    k: usize,
    p_t: f64,
    tau_t: usize,
    noise_power: f64,
    p_d: f64,
) -> Result<f64> {
    analytic_ber(&mmse_sinr_model(n_antennas, betas, k, p_t, tau_t, noise_power, p_d)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(alpha: f64, xi: f64) -> SinrGammaModel {
        SinrGammaModel {
            mu: 1.0,
            sigma2: 1.0,
            mean: alpha * xi,
            variance: alpha * xi * xi,
            alpha,
            xi,
            rho_v: 1.0,
            beta_hat: 1.0,
        }
    }

    #[test]
    fn rho_examples() {
        let r = effective_rho(&[1.0], 1.0, 1, 1.0, 1.0);
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        let r = effective_rho(&[1e-9, 3e-10], 1e12, 100, 1e-11, 0.2);
        assert!((r / (0.2 / 1e-11) - 1.0).abs() < 1e-3);
        assert!(effective_rho(&[1.0, 2.0], 1.0, 4, 1.0, 2.0) > effective_rho(&[1.0, 2.0], 1.0, 4, 1.0, 1.0));
        assert!(effective_rho(&[1.0, 2.0], 1.0, 4, 0.5, 1.0) > effective_rho(&[1.0, 2.0], 1.0, 4, 1.0, 1.0));
    }

    #[test]
    fn fixed_point_known_cases() {
        let m = stieltjes_moments(8, &[], 1e-12).unwrap();
        assert_eq!((m.mu, m.sigma2), (1.0, 1.0));
        let m = stieltjes_moments(1, &[1.0], 1e-13).unwrap();
        assert!((m.mu - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_matches_bisection_oracle() {
        // solve m (sum v/(1+nvm) + 1) = 1 by plain bisection
        let gains = [0.3, 2.0, 15.0, 0.01, 7.5];
        let n = 4.0;
        let g = |m: f64| m * (gains.iter().map(|v| v / (1.0 + n * v * m)).sum::<f64>() + 1.0) - 1.0;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let m = stieltjes_moments(4, &gains, 1e-14).unwrap();
        assert!((m.mu - lo).abs() < 1e-12);
        assert!(bisect(n, &gains, 1e-14).unwrap().0 - lo < 1e-12);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        // T(z) solves 1/T = sum v/(1 + n v T) - z; compare T'(-1) to a central difference
        let gains = [0.5, 1.5, 4.0];
        let n = 2.0;
        let solve = |z: f64| {
            let mut t = 1.0;
            for _ in 0..20_000 {
                let s: f64 = gains.iter().map(|v| v / (1.0 + n * v * t)).sum();
                t = 0.5 * t + 0.5 / (s - z);
            }
            t
        };
        let h = 1e-5;
        let fd = (solve(-1.0 + h) - solve(-1.0 - h)) / (2.0 * h);
        let m = stieltjes_moments(2, &gains, 1e-14).unwrap();
        assert!((m.sigma2 / fd - 1.0).abs() < 1e-7, "{} vs {fd}", m.sigma2);
    }

    #[test]
    fn gamma_params_arithmetic() {
        let g = sinr_gamma_params(8, 2.0, 1.0, 1.0, 1.0);
        assert_eq!((g.mean, g.variance, g.alpha, g.xi), (16.0, 32.0, 8.0, 2.0));
    }

    #[test]
    fn exponential_case_closed_form() {
        let v = analytic_ber(&model(1.0, 2.0)).unwrap();
        assert!((v - 0.5 * (1.0 - 0.5f64.sqrt())).abs() < 1e-14);
        assert_eq!(analytic_ber(&model(3.0, 0.0)).unwrap(), 0.5);
        assert!((analytic_ber(&model(3.0, 1e-9)).unwrap() - 0.5).abs() < 1e-4);
    }

    #[test]
    fn lower_bound_values() {
        assert_eq!(ber_lower_bound(&model(2.0, 0.0)), 0.5);
        assert!((ber_lower_bound(&model(8.0, 2.0)) / 3.167_124_183_311_992e-5 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn closed_form_matches_quadrature_grid() {
        for alpha in [0.5, 1.0, 2.0, 4.0, 8.0] {
            for xi in [0.1, 0.5, 1.0, 4.0] {
                let closed = analytic_ber(&model(alpha, xi)).unwrap();
                let numeric = gamma_tail_expectation(alpha, xi, 1e-13).unwrap();
                assert!((closed / numeric - 1.0).abs() < 1e-8, "({alpha}, {xi}): {closed} vs {numeric}");
            }
        }
    }

    #[test]
    fn large_shape_stays_finite() {
        for (alpha, xi) in [(200.0, 0.01), (256.0, 0.2), (40.0, 0.02)] {
            let closed = analytic_ber(&model(alpha, xi)).unwrap();
            let numeric = gamma_tail_expectation(alpha, xi, 1e-13).unwrap();
            assert!((closed / numeric - 1.0).abs() < 1e-7, "({alpha}, {xi}): {closed} vs {numeric}");
        }
    }

    #[test]
    fn prediction_index_checked() {
        assert!(predicted_ber(4, &[1.0, 2.0], 2, 1.0, 2, 1.0, 1.0).is_err());
        let p = predicted_ber(4, &[1.0, 2.0], 0, 1.0, 2, 1.0, 1.0).unwrap();
        assert!(p > 0.0 && p < 0.5);
    }

    proptest! {
        #[test]
        fn fixed_point_residual_and_bounds(
            n in 1usize..64,
            gains in proptest::collection::vec(0.0f64..50.0, 0..40),
        ) {
            let m = stieltjes_moments(n, &gains, 1e-12).unwrap();
            let f = fixed_point_map(n as f64, &gains, m.mu);
            prop_assert!((f - m.mu).abs() < 1e-12);
            prop_assert!(m.mu > 0.0 && m.mu <= 1.0);
            prop_assert!(m.sigma2 <= m.mu * (1.0 + 1e-12));
            prop_assert!(m.sigma2 >= m.mu * m.mu * (1.0 - 1e-12));
        }

        #[test]
        fn shape_times_scale_is_mean(n in 1usize..300, rho in 1e-3f64..1e3, bh in 1e-3f64..10.0, mu in 0.01f64..1.0, frac in 0.01f64..1.0) {
            let sigma2 = mu * (mu + (1.0 - mu) * frac);
            let g = sinr_gamma_params(n, rho, bh, mu, sigma2);
            prop_assert!((g.alpha * g.xi / g.mean - 1.0).abs() < 1e-12);
        }

        #[test]
        fn bound_below_closed_form(alpha in 0.2f64..60.0, xi in 0.001f64..20.0) {
            let m = model(alpha, xi);
            let v = analytic_ber(&m).unwrap();
            prop_assert!(ber_lower_bound(&m) <= v * (1.0 + 1e-10));
            prop_assert!(v > 0.0 && v < 0.5);
        }

        #[test]
        fn monotone_in_both_parameters(alpha in 0.2f64..30.0, xi in 0.01f64..10.0, da in 0.01f64..5.0, dx in 0.01f64..5.0) {
            let base = analytic_ber(&model(alpha, xi)).unwrap();
            prop_assert!(analytic_ber(&model(alpha + da, xi)).unwrap() <= base * (1.0 + 1e-10));
            prop_assert!(analytic_ber(&model(alpha, xi + dx)).unwrap() <= base * (1.0 + 1e-10));
        }

        #[test]
        fn jensen_gap_shrinks_with_shape(product in 0.5f64..12.0, a1 in 0.5f64..5.0, scale in 1.5f64..10.0) {
            let a2 = a1 * scale;
            let gap = |a: f64| {
                let m = model(a, product / a);
                analytic_ber(&m).unwrap() - ber_lower_bound(&m)
            };
            prop_assert!(gap(a2) <= gap(a1) + 1e-15);
        }
    }
}
