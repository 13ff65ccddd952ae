//! Cell geometry, large-scale gains and modified-MARP association.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SimRng, StreamKey};

/// Path-loss evaluation never goes below this distance.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// The 3GPP constants are referenced to 1 km, so that model takes distances in km.
pub const THREEGPP_REFERENCE_M: f64 = 1000.0;

/// NLoS MBS link: `A_M^NL * d^-3.75`.
pub const THREEGPP_MBS_GAIN: f64 = 2.884_031_503_126_606e-15; // 10^-14.54
pub const THREEGPP_MBS_EXPONENT: f64 = 3.75;
/// LoS SBS link: `A_S^L * d^-2.09`.
pub const THREEGPP_SBS_GAIN: f64 = 4.168_693_834_703_355e-11; // 10^-10.38
pub const THREEGPP_SBS_EXPONENT: f64 = 2.09;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathLossModel {
    /// `d^-alpha` on every link.
    SimpleNlos,
    /// NLoS macro / LoS small-cell model with 3GPP constants.
    ThreeGpp,
}

impl fmt::Display for PathLossModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathLossModel::SimpleNlos => "simple_nlos",
            PathLossModel::ThreeGpp => "three_gpp",
        })
    }
}

impl FromStr for PathLossModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "simple_nlos" | "nlos" | "simple" => Ok(PathLossModel::SimpleNlos),
            "three_gpp" | "threegpp" | "3gpp" | "nlos_los" => Ok(PathLossModel::ThreeGpp),
            other => Err(Error::Parse(format!("unknown path-loss model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    MbsUe,
    SbsUe,
}

/// Static system parameters. Powers are kept in dBm as configured; use
/// [`SystemConfig::powers`] for the linear-scale values used internally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub cell_radius_m: f64,
    pub num_sbs: usize,
    pub num_ue: usize,
    pub mbs_antennas: usize,
    pub sbs_antennas: usize,
    pub p_mbs_dbm: f64,
    pub p_sbs_dbm: f64,
    pub p_train_dbm: f64,
    pub p_data_dbm: f64,
    pub noise_density_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub alpha: f64,
    pub tau_t: usize,
    pub tau_d: usize,
    pub pathloss_model: PathLossModel,
}

impl Default for SystemConfig {
    /// Desk-scale variant of the reference parameter set.
    fn default() -> Self {
        Self {
            num_sbs: 10,
            num_ue: 10,
            mbs_antennas: 64,
            ..Self::full_scale()
        }
    }
}

impl SystemConfig {
    /// Full-scale reference parameters (R = 1000 m, S = K = 30, M = 256, N = 8).
    pub fn full_scale() -> Self {
        Self {
            cell_radius_m: 1000.0,
            num_sbs: 30,
            num_ue: 30,
            mbs_antennas: 256,
            sbs_antennas: 8,
            p_mbs_dbm: 46.0,
            p_sbs_dbm: 24.0,
            p_train_dbm: 3.0,
            p_data_dbm: 23.0,
            noise_density_dbm_hz: -174.0,
            bandwidth_hz: 20e6,
            alpha: 4.0,
            tau_t: 30,
            tau_d: 128,
            pathloss_model: PathLossModel::SimpleNlos,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_ue < 1 || self.mbs_antennas < 1 || self.sbs_antennas < 1 {
            return bad("num_ue, mbs_antennas and sbs_antennas must be >= 1".into());
        }
        if self.tau_t < self.num_ue {
            return bad(format!(
                "tau_t = {} < num_ue = {}: orthogonal pilots need tau_t >= K",
                self.tau_t, self.num_ue
            ));
        }
        if !(self.cell_radius_m > 0.0) {
            return bad(format!("cell_radius_m must be > 0, got {}", self.cell_radius_m));
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad(format!("bandwidth_hz must be > 0, got {}", self.bandwidth_hz));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        let finite = [
            self.p_mbs_dbm,
            self.p_sbs_dbm,
            self.p_train_dbm,
            self.p_data_dbm,
            self.noise_density_dbm_hz,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("power levels must be finite dBm values".into());
        }
        Ok(())
    }

    pub fn powers(&self) -> LinearPowers {
        LinearPowers {
            p_mbs: dbm_to_mw(self.p_mbs_dbm),
            p_sbs: dbm_to_mw(self.p_sbs_dbm),
            p_train: dbm_to_mw(self.p_train_dbm),
            p_data: dbm_to_mw(self.p_data_dbm),
            noise: dbm_to_mw(self.noise_density_dbm_hz) * self.bandwidth_hz,
        }
    }

    /// Antenna count of BS `v` (0 = MBS).
    pub fn antennas(&self, bs: usize) -> usize {
        if bs == 0 {
            self.mbs_antennas
        } else {
            self.sbs_antennas
        }
    }

    pub const KEYS: [&'static str; 15] = [
        "cell_radius_m",
        "num_sbs",
        "num_ue",
        "mbs_antennas",
        "sbs_antennas",
        "p_mbs_dbm",
        "p_sbs_dbm",
        "p_train_dbm",
        "p_data_dbm",
        "noise_density_dbm_hz",
        "bandwidth_hz",
        "alpha",
        "tau_t",
        "tau_d",
        "pathloss_model",
    ];

    /// Sets one field from its textual value. Returns `Ok(false)` when the key
    /// is not a `SystemConfig` field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad value '{v}' for {key}")))
        }
        // counts may arrive as "128.0" from JSON numbers
        fn count(key: &str, v: &str) -> Result<usize> {
            let x: f64 = num(key, v)?;
            if x < 0.0 || x.fract() != 0.0 {
                return Err(Error::Parse(format!("{key} must be a non-negative integer")));
            }
            Ok(x as usize)
        }
        match key {
            "cell_radius_m" => self.cell_radius_m = num(key, value)?,
            "num_sbs" => self.num_sbs = count(key, value)?,
            "num_ue" => self.num_ue = count(key, value)?,
            "mbs_antennas" => self.mbs_antennas = count(key, value)?,
            "sbs_antennas" => self.sbs_antennas = count(key, value)?,
            "p_mbs_dbm" => self.p_mbs_dbm = num(key, value)?,
            "p_sbs_dbm" => self.p_sbs_dbm = num(key, value)?,
            "p_train_dbm" => self.p_train_dbm = num(key, value)?,
            "p_data_dbm" => self.p_data_dbm = num(key, value)?,
            "noise_density_dbm_hz" => self.noise_density_dbm_hz = num(key, value)?,
            "bandwidth_hz" => self.bandwidth_hz = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "tau_t" => self.tau_t = count(key, value)?,
            "tau_d" => self.tau_d = count(key, value)?,
            "pathloss_model" => self.pathloss_model = value.trim().parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Linear-scale powers in milliwatts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPowers {
    pub p_mbs: f64,
    pub p_sbs: f64,
    pub p_train: f64,
    pub p_data: f64,
    /// `N_0` integrated over the configured bandwidth.
    pub noise: f64,
}

pub type Point = [f64; 2];

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub mbs_position: Point,
    pub sbs_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
    /// `beta_mbs[k]`: UE k to MBS.
    pub beta_mbs: Vec<f64>,
    /// `beta_sbs[s][k]`: UE k to SBS s (0-based SBS index).
    pub beta_sbs: Vec<Vec<f64>>,
}

impl Topology {
    /// Computes gains for explicit positions. The MBS sits at the origin.
    pub fn from_positions(
        config: &SystemConfig,
        sbs_positions: Vec<Point>,
        ue_positions: Vec<Point>,
    ) -> Self {
        let mbs = [0.0, 0.0];
        let gain = |a: Point, b: Point, link| {
            path_loss(
                dist(a, b).max(MIN_DISTANCE_M),
                config.pathloss_model,
                link,
                config.alpha,
            )
            .expect("distance clamped")
        };
        let beta_mbs = ue_positions
            .iter()
            .map(|&u| gain(mbs, u, Link::MbsUe))
            .collect();
        let beta_sbs = sbs_positions
            .iter()
            .map(|&s| {
                ue_positions
                    .iter()
                    .map(|&u| gain(s, u, Link::SbsUe))
                    .collect()
            })
            .collect();
        Self {
            mbs_position: mbs,
            sbs_positions,
            ue_positions,
            beta_mbs,
            beta_sbs,
        }
    }

    pub fn num_ue(&self) -> usize {
        self.ue_positions.len()
    }

    pub fn num_sbs(&self) -> usize {
        self.sbs_positions.len()
    }

    /// Gain of UE `k` toward BS `v` (0 = MBS, `s >= 1` = SBS `s - 1`).
    pub fn beta(&self, bs: usize, k: usize) -> f64 {
        if bs == 0 {
            self.beta_mbs[k]
        } else {
            self.beta_sbs[bs - 1][k]
        }
    }

    /// All UE gains toward BS `v`.
    pub fn betas_at(&self, bs: usize) -> &[f64] {
        if bs == 0 {
            &self.beta_mbs
        } else {
            &self.beta_sbs[bs - 1]
        }
    }
}

fn uniform_in_disc(rng: &mut SimRng, radius: f64) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    [r * theta.cos(), r * theta.sin()]
}

/// Drops `S` SBSs then `K` UEs uniformly on the disc.
pub fn build_topology(config: &SystemConfig, seed: StreamKey) -> Topology {
    let mut rng = seed.rng();
    let sbs = (0..config.num_sbs)
        .map(|_| uniform_in_disc(&mut rng, config.cell_radius_m))
        .collect();
    let ues = (0..config.num_ue)
        .map(|_| uniform_in_disc(&mut rng, config.cell_radius_m))
        .collect();
    Topology::from_positions(config, sbs, ues)
}

/// Linear large-scale gain at `distance` metres.
pub fn path_loss(distance: f64, model: PathLossModel, link: Link, alpha: f64) -> Result<f64> {
    if !(distance >= MIN_DISTANCE_M) {
        return Err(Error::DistanceBelowClamp(distance));
    }
    Ok(match (model, link) {
        (PathLossModel::SimpleNlos, _) => distance.powf(-alpha),
        (PathLossModel::ThreeGpp, Link::MbsUe) => {
            THREEGPP_MBS_GAIN * (distance / THREEGPP_REFERENCE_M).powf(-THREEGPP_MBS_EXPONENT)
        }
        (PathLossModel::ThreeGpp, Link::SbsUe) => {
            THREEGPP_SBS_GAIN * (distance / THREEGPP_REFERENCE_M).powf(-THREEGPP_SBS_EXPONENT)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UeClass {
    /// Uplink and downlink served by different BSs.
    Decoupled,
    /// MBS in both directions.
    Mue,
    /// The same SBS in both directions.
    Sue,
}

impl UeClass {
    pub const ALL: [UeClass; 3] = [UeClass::Decoupled, UeClass::Mue, UeClass::Sue];

    pub fn label(self) -> &'static str {
        match self {
            UeClass::Decoupled => "decoupled",
            UeClass::Mue => "mue",
            UeClass::Sue => "sue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Association {
    /// Downlink serving BS per UE (0 = MBS).
    pub dl_serving: Vec<usize>,
    /// Uplink serving BS per UE (0 = MBS).
    pub ul_serving: Vec<usize>,
    /// UEs with `dl_serving != ul_serving`, ascending.
    pub decoupled: Vec<usize>,
}

impl Association {
    pub fn class(&self, k: usize) -> UeClass {
        match (self.dl_serving[k], self.ul_serving[k]) {
            (d, u) if d != u => UeClass::Decoupled,
            (0, _) => UeClass::Mue,
            _ => UeClass::Sue,
        }
    }

    pub fn classes(&self) -> Vec<UeClass> {
        (0..self.dl_serving.len()).map(|k| self.class(k)).collect()
    }

    /// UEs whose uplink goes to BS `v`.
    pub fn ul_served_by(&self, bs: usize) -> Vec<usize> {
        served(&self.ul_serving, bs)
    }

    /// UEs whose downlink comes from BS `v`.
    pub fn dl_served_by(&self, bs: usize) -> Vec<usize> {
        served(&self.dl_serving, bs)
    }
}

fn served(serving: &[usize], bs: usize) -> Vec<usize> {
    serving
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v == bs)
        .map(|(k, _)| k)
        .collect()
}

/// Index of the largest metric; ties go to the lowest index.
fn argmax(metrics: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, m) in metrics.enumerate() {
        if m > best.1 {
            best = (i, m);
        }
    }
    best.0
}

/// Fast-fading-averaged received-power association with beamforming gain,
/// evaluated separately for downlink and uplink.
pub fn associate(topology: &Topology, config: &SystemConfig) -> Association {
    let p = config.powers();
    let (m, n) = (config.mbs_antennas as f64, config.sbs_antennas as f64);
    let nbs = topology.num_sbs() + 1;
    let mut dl = Vec::with_capacity(topology.num_ue());
    let mut ul = Vec::with_capacity(topology.num_ue());
    for k in 0..topology.num_ue() {
        let dl_metric = |v: usize| {
            if v == 0 {
                m * p.p_mbs * topology.beta(0, k)
            } else {
                n * p.p_sbs * topology.beta(v, k)
            }
        };
        let ul_metric = |v: usize| {
            let ant = if v == 0 { m } else { n };
            ant * p.p_data * topology.beta(v, k)
        };
        dl.push(argmax((0..nbs).map(dl_metric)));
        ul.push(argmax((0..nbs).map(ul_metric)));
    }
    let decoupled = (0..dl.len()).filter(|&k| dl[k] != ul[k]).collect();
    Association {
        dl_serving: dl,
        ul_serving: ul,
        decoupled,
    }
}
