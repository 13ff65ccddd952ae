//! Small-scale fading, pilots and noisy received-signal synthesis.

use std::f64::consts::TAU;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::rng::{complex_gaussian, StreamKey};
use crate::scenario::{SystemConfig, Topology};

/// Rayleigh channels from every UE to every BS.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// `M x K`, column k = `h_k`.
    pub h_mbs: CMatrix,
    /// One `N x K` matrix per SBS.
    pub g_sbs: Vec<CMatrix>,
}

impl ChannelSet {
    /// Channel matrix seen by BS `v` (0 = MBS).
    pub fn at(&self, bs: usize) -> &CMatrix {
        if bs == 0 {
            &self.h_mbs
        } else {
            &self.g_sbs[bs - 1]
        }
    }

    pub fn num_bs(&self) -> usize {
        self.g_sbs.len() + 1
    }
}

fn rayleigh<R: Rng + ?Sized>(rng: &mut R, rows: usize, betas: &[f64]) -> CMatrix {
    let mut m = CMatrix::zeros(rows, betas.len());
    for (k, &beta) in betas.iter().enumerate() {
        let amp = beta.sqrt();
        for i in 0..rows {
            m[(i, k)] = complex_gaussian(rng, 1.0) * amp;
        }
    }
    m
}

pub fn draw_channels(topology: &Topology, config: &SystemConfig, seed: StreamKey) -> ChannelSet {
    let mut rng = seed.rng();
    let h_mbs = rayleigh(&mut rng, config.mbs_antennas, &topology.beta_mbs);
    let g_sbs = topology
        .beta_sbs
        .iter()
        .map(|betas| rayleigh(&mut rng, config.sbs_antennas, betas))
        .collect();
    ChannelSet { h_mbs, g_sbs }
}

/// Orthogonal pilot rows, `S S^H = tau_t * P_T * I_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    /// `K x tau_t`.
    pub s: CMatrix,
    pub power: f64,
}

impl PilotMatrix {
    pub fn num_ue(&self) -> usize {
        self.s.nrows()
    }

    pub fn tau_t(&self) -> usize {
        self.s.ncols()
    }

    /// `tau_t * P_T`, the pilot energy per UE.
    pub fn energy(&self) -> f64 {
        self.tau_t() as f64 * self.power
    }
}

/// First `k` rows of the `tau_t`-point DFT, scaled to per-symbol power `p_t`.
pub fn make_pilots(k: usize, tau_t: usize, p_t: f64) -> Result<PilotMatrix> {
    if tau_t < k {
        return Err(Error::PilotOrthogonality { k, tau_t });
    }
    let amp = p_t.sqrt();
    let s = CMatrix::from_fn(k, tau_t, |row, n| {
        // reduce the phase index exactly before converting to an angle
        let idx = (row * n) % tau_t;
        C64::from_polar(amp, -TAU * idx as f64 / tau_t as f64)
    });
    Ok(PilotMatrix { s, power: p_t })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Training,
    Data,
    Joint,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Training => "training",
            Phase::Data => "data",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: CMatrix,
    pub phase: Phase,
    pub noise_power: f64,
}

impl Observation {
    pub fn expect_phase(&self, phase: Phase) -> Result<()> {
        if self.phase != phase {
            return Err(Error::WrongPhase {
                expected: phase.name(),
                actual: self.phase.name(),
            });
        }
        Ok(())
    }

    /// Training part (first `tau_t` columns) of a joint observation.
    pub fn training_part(&self, tau_t: usize) -> Result<Observation> {
        self.expect_phase(Phase::Joint)?;
        self.slice(0, tau_t, Phase::Training)
    }

    /// Data part (columns after `tau_t`) of a joint observation.
    pub fn data_part(&self, tau_t: usize) -> Result<Observation> {
        self.expect_phase(Phase::Joint)?;
        let cols = self.y.ncols();
        if tau_t > cols {
            return Err(Error::DimensionMismatch(format!(
                "tau_t = {tau_t} exceeds {cols} observed symbols"
            )));
        }
        self.slice(tau_t, cols - tau_t, Phase::Data)
    }

    fn slice(&self, start: usize, len: usize, phase: Phase) -> Result<Observation> {
        if start + len > self.y.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "columns {start}..{} of a {}-column observation",
                start + len,
                self.y.ncols()
            )));
        }
        Ok(Observation {
            y: self.y.columns(start, len).into_owned(),
            phase,
            noise_power: self.noise_power,
        })
    }
}

/// `y = channel * signal + noise`, noise i.i.d. `CN(0, noise_power)`.
///
/// Noise is drawn column by column, so the leading columns of a joint
/// observation match a shorter observation drawn from the same stream.
pub fn observe<R: Rng + ?Sized>(
    channel: &CMatrix,
    signal: &CMatrix,
    noise_power: f64,
    phase: Phase,
    rng: &mut R,
) -> Result<Observation> {
    if channel.ncols() != signal.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "channel {}x{} times signal {}x{}",
            channel.nrows(),
            channel.ncols(),
            signal.nrows(),
            signal.ncols()
        )));
    }
    let mut y = channel * signal;
    if noise_power > 0.0 {
        for j in 0..y.ncols() {
            for i in 0..y.nrows() {
                y[(i, j)] += complex_gaussian(rng, noise_power);
            }
        }
    }
    Ok(Observation {
        y,
        phase,
        noise_power,
    })
}
