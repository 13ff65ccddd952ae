//! Seeded Monte Carlo sweeps over the full three-stage pipeline.
//!
//! A sweep is a grid of values for one [`SystemConfig`] field. For every
//! value and every topology index a work item draws the topology, runs all
//! trials and returns per-UE accumulators; the items are merged in a fixed
//! order into a [`ResultTable`]. Random streams are keyed by
//! `(master, topology, trial, phase)` and do not involve the sweep value, so
//! every sweep point sees the same drops, channels, bits and noise.

mod config;
mod csv;
pub mod pipeline;
pub mod validation;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::config::{load_config_file, parse_sweep};
pub use self::csv::{read_csv, table_to_csv, write_csv};
pub use self::pipeline::{methods_for, TopologyContext};
pub use self::validation::{validate, CheckResult, ValidationOptions, ValidationReport};

use crate::data_aided::BerSource;
use crate::detectors::{CombinerKind, Modulation};
use crate::error::{Error, Result};
use crate::scenario::{SystemConfig, UeClass};
use crate::special::gamma_tail_expectation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ber,
    Nmse,
    Rate,
}

impl Metric {
    /// Column value in the CSV `metric` field.
    pub fn column(self) -> &'static str {
        match self {
            Metric::Ber => "ber",
            Metric::Nmse => "nmse_db",
            Metric::Rate => "rate_bps_hz",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ber => "ber",
            Metric::Nmse => "nmse",
            Metric::Rate => "rate",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ber" => Ok(Metric::Ber),
            "nmse" => Ok(Metric::Nmse),
            "rate" => Ok(Metric::Rate),
            _ => Err(Error::Parse(format!("unknown metric '{s}'"))),
        }
    }
}

impl fmt::Display for BerSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BerSource::Analytic => "analytic",
            BerSource::EmpiricalOracle => "empirical",
        })
    }
}

impl FromStr for BerSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "analytic" => Ok(BerSource::Analytic),
            "empirical" | "empirical_oracle" | "oracle" => Ok(BerSource::EmpiricalOracle),
            _ => Err(Error::Parse(format!("unknown BER source '{s}'"))),
        }
    }
}

/// Values taken by one configuration field.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub base: SystemConfig,
    pub sweep: Sweep,
    pub metric: Metric,
    /// Detectors compared in BER sweeps.
    pub detectors: Vec<CombinerKind>,
    pub modulation: Modulation,
    /// Channel realizations per topology.
    pub trials: usize,
    pub topologies: usize,
    pub master_seed: u64,
    pub ber_source: BerSource,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base: SystemConfig::default(),
            sweep: Sweep {
                param: "p_train_dbm".into(),
                values: vec![3.0],
            },
            metric: Metric::Nmse,
            detectors: vec![CombinerKind::Mrc, CombinerKind::Zf, CombinerKind::Mmse],
            modulation: Modulation::Bpsk,
            trials: 100,
            topologies: 20,
            master_seed: 1,
            ber_source: BerSource::Analytic,
        }
    }
}

impl ExperimentSpec {
    /// Keys understood by [`ExperimentSpec::set`] on top of the system keys.
    pub const KEYS: [&'static str; 9] = [
        "metric",
        "detectors",
        "modulation",
        "trials",
        "topologies",
        "master_seed",
        "ber_source",
        "sweep_param",
        "sweep_values",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.base.set(key, value)? {
            return Ok(());
        }
        let count = |v: &str| -> Result<usize> {
            let x: f64 = v.trim().parse().map_err(|_| Error::Parse(format!("bad value '{v}' for {key}")))?;
            if x < 0.0 || x.fract() != 0.0 {
                return Err(Error::Parse(format!("{key} must be a non-negative integer")));
            }
            Ok(x as usize)
        };
        match key {
            "metric" => self.metric = value.trim().parse()?,
            "detectors" => {
                self.detectors = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse())
                    .collect::<Result<_>>()?
            }
            "modulation" => self.modulation = value.trim().parse()?,
            "trials" => self.trials = count(value)?,
            "topologies" => self.topologies = count(value)?,
            "master_seed" | "seed" => {
                self.master_seed = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad seed '{value}'")))?
            }
            "ber_source" => self.ber_source = value.trim().parse()?,
            "sweep_param" => self.sweep.param = value.trim().to_string(),
            "sweep_values" => {
                self.sweep.values = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse().map_err(|_| Error::Parse(format!("bad sweep value '{s}'"))))
                    .collect::<Result<_>>()?
            }
            "sweep" => self.sweep = parse_sweep(value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.trials < 1 || self.topologies < 1 {
            return Err(Error::InvalidConfig("trials and topologies must be >= 1".into()));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::InvalidConfig("sweep has no values".into()));
        }
        if self.sweep.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig("sweep values must be strictly increasing".into()));
        }
        if !SystemConfig::KEYS.contains(&self.sweep.param.as_str()) || self.sweep.param == "pathloss_model" {
            return Err(Error::InvalidConfig(format!("cannot sweep '{}'", self.sweep.param)));
        }
        for &v in &self.sweep.values {
            self.config_at(v)?.validate()?;
        }
        if self.metric == Metric::Ber && self.detectors.is_empty() {
            return Err(Error::InvalidConfig("BER sweep needs at least one detector".into()));
        }
        Ok(())
    }

    /// Base configuration with the swept field set to `value`.
    pub fn config_at(&self, value: f64) -> Result<SystemConfig> {
        let mut cfg = self.base.clone();
        if !cfg.set(&self.sweep.param, &format!("{value}"))? {
            return Err(Error::InvalidConfig(format!("unknown sweep parameter '{}'", self.sweep.param)));
        }
        Ok(cfg)
    }

    /// Flat key/value view, one entry per settable key.
    pub fn to_flat_json(&self) -> serde_json::Value {
        let mut map = match serde_json::to_value(&self.base).expect("config serializes") {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        };
        let detectors: Vec<String> = self.detectors.iter().map(|d| d.label().to_ascii_lowercase()).collect();
        map.insert("metric".into(), self.metric.to_string().into());
        map.insert("detectors".into(), detectors.join(",").into());
        map.insert("modulation".into(), self.modulation.to_string().into());
        map.insert("trials".into(), self.trials.into());
        map.insert("topologies".into(), self.topologies.into());
        map.insert("master_seed".into(), self.master_seed.into());
        map.insert("ber_source".into(), self.ber_source.to_string().into());
        map.insert("sweep_param".into(), self.sweep.param.clone().into());
        map.insert("sweep_values".into(), self.sweep.values.clone().into());
        serde_json::Value::Object(map)
    }

    /// Applies a flat JSON object on top of `self`. Unknown keys are errors.
    pub fn apply_json(&mut self, doc: &serde_json::Value) -> Result<()> {
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::Parse("configuration must be a JSON object".into()))?;
        for (key, value) in obj {
            let text = match value {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|v| match v {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => return Err(Error::Parse(format!("unsupported value {other} for '{key}'"))),
            };
            self.set(key, &text).map_err(|e| e.context(format!("config key '{key}'")))?;
        }
        Ok(())
    }
}

/// One aggregated cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_param: String,
    pub sweep_value: f64,
    pub method: String,
    pub ue_class: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    /// UE realizations behind the mean.
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn get(&self, sweep_value: f64, method: &str, ue_class: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.sweep_value == sweep_value && r.method == method && r.ue_class == ue_class)
    }

    pub fn sweep_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.sweep_value) {
                v.push(r.sweep_value);
            }
        }
        v
    }
}

/// Class labels in output order; `all` pools every UE.
pub const CLASS_LABELS: [&str; 4] = ["decoupled", "mue", "sue", "all"];

fn class_matches(label: &str, class: UeClass) -> bool {
    label == "all" || label == class.label()
}

/// Runs the sweep on the current rayon pool.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let methods = methods_for(spec);
    let items: Vec<(usize, usize)> = (0..spec.sweep.values.len())
        .flat_map(|i| (0..spec.topologies).map(move |p| (i, p)))
        .collect();
    let results: Vec<pipeline::ItemResult> = items
        .par_iter()
        .map(|&(i, p)| {
            let value = spec.sweep.values[i];
            pipeline::run_item(spec, value, p as u64, &methods).map_err(|e| {
                e.context(format!(
                    "{} = {value}, seed {}, topology {p}",
                    spec.sweep.param, spec.master_seed
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (i, &value) in spec.sweep.values.iter().enumerate() {
        let chunk = &results[i * spec.topologies..(i + 1) * spec.topologies];
        for (m, method) in methods.iter().enumerate() {
            for label in CLASS_LABELS {
                rows.push(aggregate(spec, value, method, m, label, chunk));
            }
        }
    }
    Ok(ResultTable { rows })
}

/// Runs the sweep on a dedicated pool of `threads` workers.
pub fn run_sweep_with_threads(spec: &ExperimentSpec, threads: usize) -> Result<ResultTable> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run_sweep(spec))
}

fn aggregate(
    spec: &ExperimentSpec,
    value: f64,
    method: &str,
    m: usize,
    label: &str,
    items: &[pipeline::ItemResult],
) -> ResultRow {
    let mut pooled = Vec::new();
    let mut per_topology = Vec::new();
    let mut n = 0;
    for item in items {
        let samples: Vec<f64> = item
            .classes
            .iter()
            .enumerate()
            .filter(|&(_, &c)| class_matches(label, c))
            .filter_map(|(k, _)| item.values[m][k].value())
            .collect();
        n += samples.len() * spec.trials;
        if !samples.is_empty() {
            per_topology.push(samples.iter().sum::<f64>() / samples.len() as f64);
            pooled.extend(samples);
        }
    }
    let (mut mean, mut stderr) = if pooled.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
        (mean, standard_error(&per_topology))
    };
    if spec.metric == Metric::Nmse && mean.is_finite() {
        // dB of the pooled linear ratio, delta-method error
        stderr = 10.0 / std::f64::consts::LN_10 * stderr / mean;
        mean = crate::data_aided::nmse_db(mean, 1.0).unwrap_or(f64::NAN);
    }
    ResultRow {
        sweep_param: spec.sweep.param.clone(),
        sweep_value: value,
        method: method.to_string(),
        ue_class: label.to_string(),
        metric: spec.metric.column().to_string(),
        mean,
        stderr,
        n,
    }
}

fn standard_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// `E[Q(sqrt(X))]` for `X ~ Gamma(alpha, xi)` by adaptive quadrature.
pub fn oracle_ber_numeric(alpha: f64, xi: f64) -> Result<f64> {
    gamma_tail_expectation(alpha, xi, 1e-12)
}
