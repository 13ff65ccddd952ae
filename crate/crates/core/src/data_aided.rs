//! Data-aided MMSE channel estimation at the MBS.
//!
//! Decoded uplink data is appended to the pilots as extra, imperfect training.
//! Decoding errors are modelled as independent sign flips: entry `(k, t)` of
//! the data block is flipped with probability `p_k`, the UE's BER. The
//! estimator uses the mean of that model, `X_hat` with row `k` shrunk by
//! `1 - 2 p_k`, and treats the residual as extra white disturbance of power
//! `dS = P_D sum_k beta_k (1 - (1 - 2 p_k)^2)` on the data columns.
//!
//! With `W = [S, X_bar]` and `P = diag(N0 I, (dS + N0) I)` the estimate of all
//! channels is
//!
//! ```text
//! H_hat = Y (W^H R W + P)^-1 W^H R = B (R A + I)^-1 R
//! A = W P^-1 W^H,  B = Y P^-1 W^H,  R = diag(beta)
//! ```
//!
//! The second form only needs a `K x K` solve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{ChannelEstimate, EstimatorKind};
use crate::linalg::{solve_general, CMatrix, CVector, C64};
use crate::phy::{Observation, Phase, PilotMatrix};

/// Reporting floor for exact recoveries.
pub const NMSE_FLOOR_DB: f64 = -200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BerSource {
    /// Closed-form prediction at the UE's uplink receiver.
    Analytic,
    /// Measured error rate of the realized decisions.
    EmpiricalOracle,
}

/// What the MBS knows about the decoded uplink data.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSideInfo {
    /// `K x tau_d` decided symbols.
    pub x_hat: CMatrix,
    /// Per-UE bit error probability.
    pub ber: Vec<f64>,
    pub source: BerSource,
}

impl DecodedSideInfo {
    pub fn new(x_hat: CMatrix, ber: Vec<f64>, source: BerSource) -> Self {
        let ber = ber.into_iter().map(clamp_ber).collect();
        Self { x_hat, ber, source }
    }
}

/// Folds a probability into `[0, 0.5]`.
pub fn clamp_ber(p: f64) -> f64 {
    if p.is_nan() {
        0.5
    } else {
        p.clamp(0.0, 0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorExpectation {
    /// `E[e_k]` over the `tau_t + tau_d` joint symbols.
    pub e_mean: Vec<f64>,
    pub delta_s: f64,
}

/// Residual disturbance power left by decoding errors.
pub fn delta_s(bers: &[f64], betas: &[f64], p_d: f64) -> f64 {
    p_d * bers
        .iter()
        .zip(betas)
        .map(|(&p, &b)| {
            let m = 1.0 - 2.0 * clamp_ber(p);
            b * (1.0 - m * m)
        })
        .sum::<f64>()
}

pub fn error_expectation(
    bers: &[f64],
    betas: &[f64],
    tau_t: usize,
    tau_d: usize,
    p_d: f64,
    k: usize,
) -> Result<ErrorExpectation> {
    if k >= bers.len() {
        return Err(Error::IndexOutOfRange { index: k, len: bers.len() });
    }
    if bers.len() != betas.len() {
        return Err(Error::DimensionMismatch(format!("{} BERs for {} gains", bers.len(), betas.len())));
    }
    let m = 1.0 - 2.0 * clamp_ber(bers[k]);
    let mut e_mean = vec![1.0; tau_t];
    e_mean.resize(tau_t + tau_d, m);
    Ok(ErrorExpectation {
        e_mean,
        delta_s: delta_s(bers, betas, p_d),
    })
}

struct Prepared {
    x_bar: CMatrix,
    data_noise: f64,
    y_p: CMatrix,
    y_d: CMatrix,
}

fn prepare(
    obs: &Observation,
    pilots: &PilotMatrix,
    side: &DecodedSideInfo,
    betas: &[f64],
    p_d: f64,
) -> Result<Prepared> {
    obs.expect_phase(Phase::Joint)?;
    let k = pilots.num_ue();
    let tau_t = pilots.tau_t();
    let tau_d = side.x_hat.ncols();
    if side.x_hat.nrows() != k || side.ber.len() != k || betas.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "side info for {} UEs, {} BERs, {} gains, {k} pilots",
            side.x_hat.nrows(),
            side.ber.len(),
            betas.len()
        )));
    }
    if obs.y.ncols() != tau_t + tau_d {
        return Err(Error::DimensionMismatch(format!(
            "joint observation has {} columns, expected {tau_t} + {tau_d}",
            obs.y.ncols()
        )));
    }
    let mut x_bar = side.x_hat.clone();
    for (i, mut row) in x_bar.row_iter_mut().enumerate() {
        row *= C64::from(1.0 - 2.0 * clamp_ber(side.ber[i]));
    }
    Ok(Prepared {
        x_bar,
        data_noise: delta_s(&side.ber, betas, p_d) + obs.noise_power,
        y_p: obs.y.columns(0, tau_t).into_owned(),
        y_d: obs.y.columns(tau_t, tau_d).into_owned(),
    })
}

fn gain_matrix(betas: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(betas.len(), betas.iter().map(|&b| C64::from(b))))
}

/// DA estimates of every UE's channel at the MBS (`M x K`), via the `K x K` form.
///
/// `p_d` is the data symbol power the error model is scaled by.
pub fn da_estimates_all(
    obs: &Observation,
    pilots: &PilotMatrix,
    side: &DecodedSideInfo,
    betas: &[f64],
    p_d: f64,
) -> Result<CMatrix> {
    let n0 = obs.noise_power;
    if !(n0 > 0.0) {
        return Err(Error::Singular("data-aided estimation needs positive noise power".into()));
    }
    let pr = prepare(obs, pilots, side, betas, p_d)?;
    let s = &pilots.s;
    let inv_t = C64::from(1.0 / n0);
    let inv_d = C64::from(1.0 / pr.data_noise);
    let a = s * s.adjoint() * inv_t + &pr.x_bar * pr.x_bar.adjoint() * inv_d;
    let b = &pr.y_p * s.adjoint() * inv_t + &pr.y_d * pr.x_bar.adjoint() * inv_d;
    let r = gain_matrix(betas);
    let k = betas.len();
    let lhs = &r * a + CMatrix::identity(k, k);
    Ok(b * solve_general(&lhs, &r)?)
}

pub fn da_estimate(
    obs: &Observation,
    pilots: &PilotMatrix,
    side: &DecodedSideInfo,
    betas: &[f64],
    p_d: f64,
    k: usize,
) -> Result<ChannelEstimate> {
    if k >= betas.len() {
        return Err(Error::IndexOutOfRange { index: k, len: betas.len() });
    }
    let all = da_estimates_all(obs, pilots, side, betas, p_d)?;
    Ok(ChannelEstimate {
        g_hat: all.column(k).into_owned(),
        method: EstimatorKind::DataAided,
        target_beta: Some(betas[k]),
    })
}

/// Same estimator through the full `(tau_t + tau_d)`-dimensional solve.
///
/// Quadratic in the block length; kept as a reference for the fast form.
pub fn da_estimates_direct(
    obs: &Observation,
    pilots: &PilotMatrix,
    side: &DecodedSideInfo,
    betas: &[f64],
    p_d: f64,
) -> Result<CMatrix> {
    let pr = prepare(obs, pilots, side, betas, p_d)?;
    let tau_t = pilots.tau_t();
    let tau = tau_t + pr.x_bar.ncols();
    let mut w = CMatrix::zeros(betas.len(), tau);
    w.columns_mut(0, tau_t).copy_from(&pilots.s);
    w.columns_mut(tau_t, tau - tau_t).copy_from(&pr.x_bar);
    let r = gain_matrix(betas);
    let mut p = w.adjoint() * &r * &w;
    for t in 0..tau {
        p[(t, t)] += C64::from(if t < tau_t { obs.noise_power } else { pr.data_noise });
    }
    let rhs = w.adjoint() * r;
    Ok(&obs.y * solve_general(&p, &rhs)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsePrediction {
    pub kind: EstimatorKind,
    /// SNR-like term multiplying `beta` in the closed form.
    pub rho: f64,
    pub value_db: f64,
}

/// Closed-form NMSE of the pilot-only estimators.
pub fn conventional_nmse(kind: EstimatorKind, beta: f64, p_t: f64, tau_t: usize, noise_power: f64) -> NmsePrediction {
    let rho = tau_t as f64 * p_t / noise_power;
    let value_db = match kind {
        EstimatorKind::Ls => -10.0 * (rho * beta).log10(),
        _ => -10.0 * (1.0 + rho * beta).log10(),
    };
    NmsePrediction { kind, rho, value_db }
}

/// Data-aided SNR-like term `tau_t P_T / N0 + tau_d P_D (1 - 2p_k)^2 / (dS + N0)`.
#[allow(clippy::too_many_arguments)]
pub fn rho_da(betas: &[f64], bers: &[f64], p_t: f64, p_d: f64, tau_t: usize, tau_d: usize, noise_power: f64, k: usize) -> f64 {
    let m = 1.0 - 2.0 * clamp_ber(bers[k]);
    tau_t as f64 * p_t / noise_power + tau_d as f64 * p_d * m * m / (delta_s(bers, betas, p_d) + noise_power)
}

#[allow(clippy::too_many_arguments)]
pub fn analytic_nmse_da(
    beta_k: f64,
    betas: &[f64],
    bers: &[f64],
    p_t: f64,
    p_d: f64,
    tau_t: usize,
    tau_d: usize,
    noise_power: f64,
    k: usize,
) -> Result<NmsePrediction> {
    if k >= bers.len() || bers.len() != betas.len() {
        return Err(Error::DimensionMismatch(format!(
            "UE {k} with {} BERs and {} gains",
            bers.len(),
            betas.len()
        )));
    }
    let rho = rho_da(betas, bers, p_t, p_d, tau_t, tau_d, noise_power, k);
    Ok(NmsePrediction {
        kind: EstimatorKind::DataAided,
        rho,
        value_db: -10.0 * (1.0 + rho * beta_k).log10(),
    })
}

/// Limit of the data-aided increment of `rho` as `P_D` grows without bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerFloor {
    Finite(f64),
    /// Error-free data: the increment grows linearly in `P_D`.
    Unbounded,
}

pub fn da_power_floor(tau_d: usize, bers: &[f64], betas: &[f64], k: usize) -> Result<PowerFloor> {
    if k >= bers.len() || bers.len() != betas.len() {
        return Err(Error::DimensionMismatch(format!(
            "UE {k} with {} BERs and {} gains",
            bers.len(),
            betas.len()
        )));
    }
    let den = delta_s(bers, betas, 1.0);
    if den <= 0.0 {
        return Ok(PowerFloor::Unbounded);
    }
    let m = 1.0 - 2.0 * clamp_ber(bers[k]);
    Ok(PowerFloor::Finite(tau_d as f64 * m * m / den))
}

/// `10 log10(err / reference)` with the exact-recovery floor.
pub fn nmse_db(err_energy: f64, ref_energy: f64) -> Result<f64> {
    if !(ref_energy > 0.0) {
        return Err(Error::ZeroNorm);
    }
    if err_energy <= 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (err_energy / ref_energy).log10()).max(NMSE_FLOOR_DB))
}

/// `10 log10(mean ||g - g_hat||^2 / mean ||g||^2)` over paired samples.
pub fn empirical_nmse(truth: &[CVector], estimates: &[ChannelEstimate]) -> Result<f64> {
    if truth.len() != estimates.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} channels vs {} estimates",
            truth.len(),
            estimates.len()
        )));
    }
    let mut err = 0.0;
    let mut reference = 0.0;
    for (g, e) in truth.iter().zip(estimates) {
        if g.len() != e.g_hat.len() {
            return Err(Error::DimensionMismatch(format!("{} vs {} antennas", g.len(), e.g_hat.len())));
        }
        err += (g - &e.g_hat).norm_squared();
        reference += g.norm_squared();
    }
    nmse_db(err, reference)
}
