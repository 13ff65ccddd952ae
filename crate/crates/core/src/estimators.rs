//! Pilot-only LS and MMSE estimators with their closed-form statistics.
//!
//! With orthogonal pilots the MMSE estimator of each UE decouples into a
//! scalar shrinkage of the correlator output `Y s_k^H`:
//!
//! ```text
//! g_hat_k = beta_k * Y s_k^H / (N0 + beta_k * tau_T * P_T)
//! ```
//!
//! so the `tau_T x tau_T` normal equations never need to be formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, C64};
use crate::phy::{Observation, Phase, PilotMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    Ls,
    Mmse,
    DataAided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub g_hat: CVector,
    pub method: EstimatorKind,
    /// Large-scale gain the estimate was formed for, when the estimator uses it.
    pub target_beta: Option<f64>,
}

/// Per-element variances of the MMSE estimate and its error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateStats {
    pub estimate_var: f64,
    pub error_var: f64,
}

fn check_training(obs: &Observation, pilots: &PilotMatrix) -> Result<()> {
    obs.expect_phase(Phase::Training)?;
    if obs.y.ncols() != pilots.tau_t() {
        return Err(Error::DimensionMismatch(format!(
            "training observation has {} columns, pilots have {}",
            obs.y.ncols(),
            pilots.tau_t()
        )));
    }
    Ok(())
}

/// Correlator outputs `Y S^H`, one column per UE.
fn correlate(obs: &Observation, pilots: &PilotMatrix) -> CMatrix {
    &obs.y * pilots.s.adjoint()
}

pub fn ls_estimate(obs: &Observation, pilots: &PilotMatrix, k: usize) -> Result<ChannelEstimate> {
    check_training(obs, pilots)?;
    if k >= pilots.num_ue() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: pilots.num_ue(),
        });
    }
    let s_k = pilots.s.row(k).adjoint();
    let g_hat = &obs.y * s_k / C64::from(pilots.energy());
    Ok(ChannelEstimate {
        g_hat,
        method: EstimatorKind::Ls,
        target_beta: None,
    })
}

/// LS estimates of all UEs as columns.
pub fn ls_estimates(obs: &Observation, pilots: &PilotMatrix) -> Result<CMatrix> {
    check_training(obs, pilots)?;
    Ok(correlate(obs, pilots) / C64::from(pilots.energy()))
}

fn mmse_weight(beta: f64, pilot_energy: f64, noise_power: f64) -> f64 {
    let den = noise_power + beta * pilot_energy;
    if den > 0.0 {
        beta / den
    } else {
        0.0
    }
}

/// MMSE estimates of all UEs as columns (`N x K`).
pub fn mmse_estimates(
    obs: &Observation,
    pilots: &PilotMatrix,
    betas: &[f64],
    noise_power: f64,
) -> Result<CMatrix> {
    check_training(obs, pilots)?;
    if betas.len() != pilots.num_ue() {
        return Err(Error::DimensionMismatch(format!(
            "{} gains for {} pilots",
            betas.len(),
            pilots.num_ue()
        )));
    }
    let mut est = correlate(obs, pilots);
    for (k, &beta) in betas.iter().enumerate() {
        let w = mmse_weight(beta, pilots.energy(), noise_power);
        est.column_mut(k).scale_mut(w);
    }
    Ok(est)
}

pub fn mmse_estimate(
    obs: &Observation,
    pilots: &PilotMatrix,
    betas: &[f64],
    noise_power: f64,
) -> Result<Vec<ChannelEstimate>> {
    let est = mmse_estimates(obs, pilots, betas, noise_power)?;
    Ok(betas
        .iter()
        .enumerate()
        .map(|(k, &beta)| ChannelEstimate {
            g_hat: est.column(k).into_owned(),
            method: EstimatorKind::Mmse,
            target_beta: Some(beta),
        })
        .collect())
}

pub fn mmse_error_stats(beta: f64, p_t: f64, tau_t: usize, noise_power: f64) -> EstimateStats {
    let energy = p_t * tau_t as f64;
    let den = noise_power + beta * energy;
    if den <= 0.0 {
        // no pilot energy and no noise: nothing is learned
        return EstimateStats {
            estimate_var: 0.0,
            error_var: beta,
        };
    }
    EstimateStats {
        estimate_var: beta * beta * energy / den,
        error_var: noise_power * beta / den,
    }
}

/// Closed-form pilot-only NMSE in dB.
pub fn analytic_nmse_pilot_only(
    kind: EstimatorKind,
    beta: f64,
    p_t: f64,
    tau_t: usize,
    noise_power: f64,
) -> f64 {
    let snr = tau_t as f64 * p_t / noise_power * beta;
    match kind {
        EstimatorKind::Ls => 10.0 * (1.0 / snr).log10(),
        EstimatorKind::Mmse | EstimatorKind::DataAided => 10.0 * (1.0 / (1.0 + snr)).log10(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, max_abs_diff, solve_general};
    use crate::phy::{make_pilots, observe};
    use crate::rng::{complex_gaussian, rng_from_seed};
    use proptest::prelude::*;

    /// Per-antenna linear MMSE from the full normal equations:
    /// `C = (sum_i beta_i s_i^H s_i + N0 I)^-1 s_k^H beta_k`.
    fn normal_equation_mmse(y: &CMatrix, pilots: &PilotMatrix, betas: &[f64], n0: f64, k: usize) -> CVector {
        let tau = pilots.tau_t();
        let mut r = CMatrix::identity(tau, tau) * c(n0, 0.0);
        for (i, &b) in betas.iter().enumerate() {
            let s_i = pilots.s.row(i);
            r += s_i.adjoint() * s_i * c(b, 0.0);
        }
        let rhs = pilots.s.row(k).adjoint() * c(betas[k], 0.0);
        let comb = solve_general(&r, &CMatrix::from_column_slice(tau, 1, rhs.as_slice())).unwrap();
        (y * comb).column(0).into_owned()
    }

    fn random_training(seed: u64, n: usize, betas: &[f64], p_t: f64, tau: usize, n0: f64) -> (CMatrix, PilotMatrix, Observation) {
        let mut rng = rng_from_seed(seed);
        let k = betas.len();
        let g = CMatrix::from_fn(n, k, |_, j| complex_gaussian(&mut rng, betas[j]));
        let pilots = make_pilots(k, tau, p_t).unwrap();
        let obs = observe(&g, &pilots.s, n0, Phase::Training, &mut rng).unwrap();
        (g, pilots, obs)
    }

    #[test]
    fn ls_is_exact_without_noise() {
        let (g, pilots, obs) = random_training(1, 6, &[1.0, 0.3, 2.0], 1.5, 4, 0.0);
        for k in 0..3 {
            let est = ls_estimate(&obs, &pilots, k).unwrap();
            assert!(max_abs_diff(&est.g_hat, &g.column(k)) < 1e-12);
        }
        assert!(matches!(ls_estimate(&obs, &pilots, 3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn ls_rejects_data_phase() {
        let (_, pilots, mut obs) = random_training(2, 2, &[1.0], 1.0, 2, 1.0);
        obs.phase = Phase::Data;
        assert!(matches!(ls_estimate(&obs, &pilots, 0), Err(Error::WrongPhase { .. })));
    }

    #[test]
    fn ls_error_variance() {
        // beta = 1, tau_T P_T = 100, N0 = 1 -> error variance N0 / (tau P) = 0.01
        let mut rng = rng_from_seed(3);
        let pilots = make_pilots(1, 10, 10.0).unwrap();
        let mut acc = 0.0;
        let trials = 10_000;
        for _ in 0..trials {
            let g = CMatrix::from_fn(1, 1, |_, _| complex_gaussian(&mut rng, 1.0));
            let obs = observe(&g, &pilots.s, 1.0, Phase::Training, &mut rng).unwrap();
            let est = ls_estimate(&obs, &pilots, 0).unwrap();
            acc += (est.g_hat[0] - g[(0, 0)]).norm_sqr();
        }
        let var = acc / trials as f64;
        assert!((var / 0.01 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn closed_form_matches_normal_equations() {
        let betas = [1.0, 0.2, 3.0, 0.05];
        let (_, pilots, obs) = random_training(4, 5, &betas, 0.7, 6, 0.4);
        let fast = mmse_estimates(&obs, &pilots, &betas, 0.4).unwrap();
        for k in 0..betas.len() {
            let slow = normal_equation_mmse(&obs.y, &pilots, &betas, 0.4, k);
            assert!(max_abs_diff(&fast.column(k), &slow) < 1e-12);
        }
    }

    #[test]
    fn mmse_limits() {
        // huge pilot energy -> shrinkage 1 -> estimate equals the channel
        let (g, pilots, obs) = random_training(5, 4, &[1.0, 2.0], 1e12, 2, 1.0);
        let est = mmse_estimates(&obs, &pilots, &[1.0, 2.0], 1.0).unwrap();
        assert!(max_abs_diff(&est, &g) < 1e-5);
        // zero pilot power -> zero estimate, error variance beta
        let (_, pilots, obs) = random_training(6, 4, &[1.0, 2.0], 0.0, 2, 1.0);
        let est = mmse_estimate(&obs, &pilots, &[1.0, 2.0], 1.0).unwrap();
        assert!(est.iter().all(|e| e.g_hat.iter().all(|z| z.norm() == 0.0)));
        assert_eq!(mmse_error_stats(2.0, 0.0, 4, 1.0).error_var, 2.0);
    }

    #[test]
    fn error_stats_values() {
        let s = mmse_error_stats(1.0, 99.0, 1, 1.0);
        assert!((s.error_var - 0.01).abs() < 1e-15 && (s.estimate_var - 0.99).abs() < 1e-15);
        let s = mmse_error_stats(1.0, 1.0, 1, 1.0);
        assert_eq!((s.estimate_var, s.error_var), (0.5, 0.5));
        let s = mmse_error_stats(2.0, 3.0, 1, 1.0);
        assert!((s.error_var - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn analytic_nmse_values() {
        assert_eq!(analytic_nmse_pilot_only(EstimatorKind::Mmse, 0.0, 1.0, 1, 1.0), 0.0);
        assert!((analytic_nmse_pilot_only(EstimatorKind::Ls, 1.0, 100.0, 1, 1.0) + 20.0).abs() < 1e-12);
        let gap = |snr: f64| {
            analytic_nmse_pilot_only(EstimatorKind::Ls, 1.0, snr, 1, 1.0)
                - analytic_nmse_pilot_only(EstimatorKind::Mmse, 1.0, snr, 1, 1.0)
        };
        assert!(gap(1.0) > 3.0);
        assert!(gap(100.0) < 0.1);
        assert!(gap(1e6) < 1e-5);
    }

    #[test]
    fn mmse_estimate_and_error_are_uncorrelated() {
        let mut rng = rng_from_seed(7);
        let pilots = make_pilots(1, 4, 0.5).unwrap();
        let (beta, n0) = (1.0, 1.0);
        let mut cross = C64::new(0.0, 0.0);
        let (mut e2, mut h2) = (0.0, 0.0);
        let trials = 20_000;
        for _ in 0..trials {
            let g = CMatrix::from_fn(1, 1, |_, _| complex_gaussian(&mut rng, beta));
            let obs = observe(&g, &pilots.s, n0, Phase::Training, &mut rng).unwrap();
            let est = mmse_estimates(&obs, &pilots, &[beta], n0).unwrap()[(0, 0)];
            let err = g[(0, 0)] - est;
            cross += est * err.conj();
            e2 += err.norm_sqr();
            h2 += est.norm_sqr();
        }
        let corr = cross.norm() / (e2 * h2).sqrt();
        assert!(corr < 0.03, "{corr}");
        let stats = mmse_error_stats(beta, 0.5, 4, n0);
        assert!((e2 / trials as f64 / stats.error_var - 1.0).abs() < 0.03);
        assert!((h2 / trials as f64 / stats.estimate_var - 1.0).abs() < 0.03);
    }

    proptest! {
        #[test]
        fn stats_sum_to_beta(beta in 1e-12f64..10.0, p in 0.0f64..100.0, tau in 1usize..64, n0 in 1e-15f64..10.0) {
            let s = mmse_error_stats(beta, p, tau, n0);
            prop_assert!(s.estimate_var >= 0.0 && s.error_var >= 0.0);
            prop_assert!(((s.estimate_var + s.error_var) / beta - 1.0).abs() < 1e-12);
        }

        #[test]
        fn mmse_never_worse_than_ls(beta in 1e-12f64..1.0, p in 1e-3f64..100.0, tau in 1usize..64, n0 in 1e-13f64..1.0) {
            let ls = analytic_nmse_pilot_only(EstimatorKind::Ls, beta, p, tau, n0);
            let mmse = analytic_nmse_pilot_only(EstimatorKind::Mmse, beta, p, tau, n0);
            prop_assert!(mmse <= ls + 1e-12);
            if tau as f64 * p / n0 * beta > 100.0 {
                prop_assert!(ls - mmse < 0.1);
            }
        }
    }
}
