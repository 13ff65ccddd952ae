//! Zero-forcing downlink precoding from estimated channels and the resulting rates.
//!
//! The downlink channel of UE `k` from a BS is the transpose of its uplink
//! channel (TDD reciprocity): a stream precoded with `w` arrives as `h_k^T w`.

use crate::error::{Error, Result};
use crate::linalg::{select_columns, solve_general, CMatrix, C64};
use crate::phy::ChannelSet;
use crate::scenario::{Association, UeClass};

/// ZF precoder for the served channel estimates (`antennas x served`), equal
/// power `power / served` per stream.
pub fn zf_precode(estimates: &CMatrix, power: f64) -> Result<CMatrix> {
    let (n, s) = estimates.shape();
    if s == 0 {
        return Ok(CMatrix::zeros(n, 0));
    }
    if s > n {
        return Err(Error::Singular(format!("ZF precoding of {s} streams with {n} antennas")));
    }
    let h_conj = estimates.conjugate();
    let gram = estimates.transpose() * &h_conj;
    let mut w = &h_conj
        * solve_general(&gram, &CMatrix::identity(s, s))
            .map_err(|_| Error::Singular("downlink channel estimates are rank deficient".into()))?;
    let per_stream = power / s as f64;
    for mut col in w.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Singular("zero-norm ZF column".into()));
        }
        col *= C64::from(per_stream.sqrt() / norm);
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsPrecoder {
    pub bs: usize,
    pub served: Vec<usize>,
    /// `antennas x served`.
    pub w: CMatrix,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub per_bs: Vec<BsPrecoder>,
}

/// Builds every BS's precoder from its estimates of all UEs (`antennas x K`).
///
/// `powers[v]` is the budget of BS `v` (0 = MBS).
pub fn build_precoders(estimates: &[CMatrix], assoc: &Association, powers: &[f64]) -> Result<PrecoderSet> {
    if estimates.len() != powers.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimate sets for {} power budgets",
            estimates.len(),
            powers.len()
        )));
    }
    let per_bs = estimates
        .iter()
        .enumerate()
        .map(|(bs, est)| {
            let served = assoc.dl_served_by(bs);
            let w = zf_precode(&select_columns(est, &served), powers[bs]).map_err(|e| e.context(format!("BS {bs}")))?;
            Ok(BsPrecoder {
                bs,
                served,
                w,
                power: powers[bs],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrecoderSet { per_bs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlReport {
    pub sinr: Vec<f64>,
    /// `log2(1 + SINR)` per UE.
    pub rate: Vec<f64>,
}

impl DlReport {
    /// Mean rate over the UEs of `class` (`None` for all UEs); `None` if empty.
    pub fn class_mean(&self, assoc: &Association, class: Option<UeClass>) -> Option<f64> {
        let picked: Vec<f64> = (0..self.rate.len())
            .filter(|&k| class.is_none_or(|c| assoc.class(k) == c))
            .map(|k| self.rate[k])
            .collect();
        (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
    }
}

/// Downlink SINR of every UE against the true channels, counting all streams
/// of all BSs other than its own as interference.
pub fn dl_rate(channels: &ChannelSet, precoders: &PrecoderSet, assoc: &Association, noise_power: f64) -> Result<DlReport> {
    let k_total = assoc.dl_serving.len();
    let mut sinr = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let serving = assoc.dl_serving[k];
        let mut signal = 0.0;
        let mut total = 0.0;
        for p in &precoders.per_bs {
            let h = channels.at(p.bs).column(k);
            if h.len() != p.w.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "BS {} has {} antennas but a {}-row precoder",
                    p.bs,
                    h.len(),
                    p.w.nrows()
                )));
            }
            for (j, &ue) in p.served.iter().enumerate() {
                let rx = h.transpose() * p.w.column(j);
                let power = rx[(0, 0)].norm_sqr();
                total += power;
                if p.bs == serving && ue == k {
                    signal = power;
                }
            }
        }
        sinr.push(signal / (total - signal + noise_power));
    }
    let rate = sinr.iter().map(|s| (1.0 + s).log2()).collect();
    Ok(DlReport { sinr, rate })
}
