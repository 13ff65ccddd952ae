//! Desk-scale acceptance suite.
//!
//! Every check returns a measured value next to its threshold so the report
//! shows how close a pass was. Checks never panic on numerical failure; an
//! error inside a check becomes a failed entry with the error text.

use std::fmt;

use rand::Rng;

use super::pipeline::{detect_all, side_info, simulate_trial};
use super::{run_sweep, run_sweep_with_threads, table_to_csv, ExperimentSpec, Metric, ResultTable, Sweep, TopologyContext};
use crate::ber::{analytic_ber, ber_lower_bound, mmse_sinr_model, stieltjes_moments, SinrGammaModel};
use crate::data_aided::{da_estimates_all, da_estimates_direct, da_power_floor, rho_da, BerSource, DecodedSideInfo, PowerFloor};
use crate::detectors::{build_combiner, detect, mmse_sinr, output_sinr, CombinerKind, Modulation};
use crate::error::{Error, Result};
use crate::estimators::{analytic_nmse_pilot_only, ls_estimates, mmse_estimates, EstimatorKind};
use crate::linalg::{max_abs_diff, CMatrix, C64};
use crate::phy::{draw_channels, make_pilots, observe, Observation, Phase};
use crate::rng::{complex_gaussian, phase, StreamKey, NO_TRIAL};
use crate::scenario::{build_topology, PathLossModel, SystemConfig, UeClass};
use crate::special::hyp2f1;

/// Criteria covered by [`run_criterion`].
pub const CRITERIA: std::ops::RangeInclusive<u8> = 1..=11;

/// Phase tags for streams owned by the suite, clear of the pipeline's.
const MOMENT_PHASE: u64 = 1 << 40;
const FIXED_POINT_PHASE: u64 = (1 << 40) + 1;
const SYNTHETIC_PHASE: u64 = (1 << 40) + 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Acceptance criterion the check belongs to; `None` for supporting checks.
    pub criterion: Option<u8>,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub master_seed: u64,
    /// Worker count; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Multiplier applied to the pilot-only MMSE estimate in the closed-form
    /// NMSE check. Anything but 1 is a deliberate mutation.
    pub mmse_shrinkage: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            master_seed: 1,
            threads: None,
            mmse_shrinkage: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// `None` if no check covers the criterion.
    pub fn criterion_passed(&self, criterion: u8) -> Option<bool> {
        let mut covered = self.checks.iter().filter(|c| c.criterion == Some(criterion)).peekable();
        covered.peek()?;
        Some(covered.all(|c| c.passed))
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.criterion {
            Some(c) => format!("[{c:>2}]"),
            None => "[--]".to_string(),
        };
        write!(
            f,
            "{} {tag} {:<28} measured {:>12.5e}  threshold {:>12.5e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.detail
        )
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failed().count();
        write!(f, "{} checks, {} passed, {failed} failed", self.checks.len(), self.checks.len() - failed)
    }
}

/// Runs every criterion followed by the supporting checks.
pub fn validate(opts: &ValidationOptions) -> ValidationReport {
    let run = || {
        let mut checks: Vec<CheckResult> = CRITERIA.flat_map(|c| run_criterion(c, opts)).collect();
        checks.extend(supporting_checks(opts));
        ValidationReport { checks }
    };
    match opts.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(e) => ValidationReport {
                checks: vec![failure("thread_pool", None, f64::NAN, &Error::InvalidConfig(e.to_string()))],
            },
        },
        None => run(),
    }
}

/// Checks of one acceptance criterion (empty for an unknown number).
pub fn run_criterion(criterion: u8, opts: &ValidationOptions) -> Vec<CheckResult> {
    let seed = opts.master_seed;
    match criterion {
        1 => nmse_closed_form(seed, opts.mmse_shrinkage),
        2 => da_closed_form_agreement(seed),
        3 => nmse_dominance(seed),
        4 => ber_analytics(seed),
        5 => sinr_moments(seed),
        6 => fixed_point(seed),
        7 => vec![power_floor(seed)],
        8 => limits(seed),
        9 => rate_ordering(seed),
        10 => detector_ordering(seed),
        11 => vec![determinism(seed)],
        _ => Vec::new(),
    }
}

/// Cross-checks between equivalent forms that no single criterion owns.
pub fn supporting_checks(opts: &ValidationOptions) -> Vec<CheckResult> {
    vec![
        woodbury_matches_direct(opts.master_seed),
        sinr_forms_agree(opts.master_seed),
        hyp2f1_reference(),
    ]
}

fn failure(name: &'static str, criterion: Option<u8>, threshold: f64, err: &Error) -> CheckResult {
    CheckResult {
        name,
        criterion,
        passed: false,
        measured: f64::NAN,
        threshold,
        detail: format!("error: {err}"),
    }
}

/// `measured <= threshold` check, or a failure carrying the error.
fn at_most(name: &'static str, criterion: Option<u8>, threshold: f64, r: Result<(f64, String)>) -> CheckResult {
    match r {
        Ok((measured, detail)) => CheckResult {
            name,
            criterion,
            passed: measured <= threshold,
            measured,
            threshold,
            detail,
        },
        Err(e) => failure(name, criterion, threshold, &e),
    }
}

fn desk_spec(seed: u64, metric: Metric, sweep: Sweep, topologies: usize, trials: usize) -> ExperimentSpec {
    ExperimentSpec {
        metric,
        sweep,
        topologies,
        trials,
        master_seed: seed,
        ..ExperimentSpec::default()
    }
}

fn sweep(param: &str, values: &[f64]) -> Sweep {
    Sweep {
        param: param.into(),
        values: values.to_vec(),
    }
}

fn row_mean(t: &ResultTable, v: f64, method: &str, class: &str) -> Result<(f64, usize)> {
    t.get(v, method, class)
        .map(|r| (r.mean, r.n))
        .ok_or_else(|| Error::InvalidConfig(format!("missing row {method}/{class} at {v}")))
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

// 1. Closed-form pilot-only NMSE on a fixed drop.

const NMSE_GRID_DBM: [f64; 5] = [-7.0, 0.5, 8.0, 15.5, 23.0];
const NMSE_REALIZATIONS: usize = 1000;

fn nmse_closed_form(seed: u64, shrinkage: f64) -> Vec<CheckResult> {
    match nmse_closed_form_gaps(seed, shrinkage) {
        Ok([(ls, ls_at), (mmse, mmse_at)]) => vec![
            CheckResult {
                name: "nmse_ls_closed_form",
                criterion: Some(1),
                passed: ls <= 0.2,
                measured: ls,
                threshold: 0.2,
                detail: format!("max |dB gap| over 10 UEs x 5 P_T, worst at {ls_at}"),
            },
            CheckResult {
                name: "nmse_mmse_closed_form",
                criterion: Some(1),
                passed: mmse <= 0.2,
                measured: mmse,
                threshold: 0.2,
                detail: format!("max |dB gap| over 10 UEs x 5 P_T, worst at {mmse_at}"),
            },
        ],
        Err(e) => vec![
            failure("nmse_ls_closed_form", Some(1), 0.2, &e),
            failure("nmse_mmse_closed_form", Some(1), 0.2, &e),
        ],
    }
}

/// Worst per-UE dB gap for LS and MMSE, with where it occurred.
fn nmse_closed_form_gaps(seed: u64, shrinkage: f64) -> Result<[(f64, String); 2]> {
    let base = SystemConfig::default();
    let topology = build_topology(&base, StreamKey::topology(seed, 0));
    let betas = &topology.beta_mbs;
    let k_total = base.num_ue;
    let mut worst = [(0.0_f64, String::new()), (0.0_f64, String::new())];
    for &p_t_dbm in &NMSE_GRID_DBM {
        let cfg = SystemConfig {
            p_train_dbm: p_t_dbm,
            ..base.clone()
        };
        let pw = cfg.powers();
        let pilots = make_pilots(k_total, cfg.tau_t, pw.p_train)?;
        let mut err = [vec![0.0; k_total], vec![0.0; k_total]];
        let mut energy = vec![0.0; k_total];
        for t in 0..NMSE_REALIZATIONS {
            let key = StreamKey::new(seed, 0, t as u64, 0);
            let h = draw_channels(&topology, &cfg, key.with_phase(phase::CHANNELS)).h_mbs;
            let mut rng = key.with_phase(phase::NOISE_BASE).rng();
            let obs = observe(&h, &pilots.s, pw.noise, Phase::Training, &mut rng)?;
            let ls = ls_estimates(&obs, &pilots)?;
            let mmse = mmse_estimates(&obs, &pilots, betas, pw.noise)? * C64::from(shrinkage);
            for k in 0..k_total {
                energy[k] += h.column(k).norm_squared();
                err[0][k] += (h.column(k) - ls.column(k)).norm_squared();
                err[1][k] += (h.column(k) - mmse.column(k)).norm_squared();
            }
        }
        for (i, kind) in [EstimatorKind::Ls, EstimatorKind::Mmse].into_iter().enumerate() {
            for k in 0..k_total {
                let predicted = analytic_nmse_pilot_only(kind, betas[k], pw.p_train, cfg.tau_t, pw.noise);
                let gap = (db(err[i][k] / energy[k]) - predicted).abs();
                if !(gap <= worst[i].0) {
                    worst[i] = (gap, format!("P_T {p_t_dbm} dBm, UE {k} ({predicted:.2} dB)"));
                }
            }
        }
    }
    Ok(worst)
}

// 2. Data-aided closed form at the reference operating point.

fn da_closed_form_agreement(seed: u64) -> Vec<CheckResult> {
    let spec = ExperimentSpec {
        master_seed: seed,
        metric: Metric::Nmse,
        ..ExperimentSpec::default()
    };
    let v = spec.sweep.values[0];
    let k = spec.base.num_ue as f64;
    let tau_d = spec.base.tau_d as f64;
    let t = match run_sweep(&spec) {
        Ok(t) => t,
        Err(e) => {
            return vec![
                failure("da_nmse_vs_closed_form", Some(2), 1.0, &e),
                failure("da_ideal_vs_closed_form", Some(2), 0.3, &e),
            ]
        }
    };
    let t = &t;
    let gap = |empirical: &str, analytic: &str| -> Result<(f64, String)> {
        let (e, _) = row_mean(t, v, empirical, "all")?;
        let (a, _) = row_mean(t, v, analytic, "all")?;
        let mut detail = format!("{empirical} {e:.2} dB vs {analytic} {a:.2} dB");
        for class in ["decoupled", "mue", "sue"] {
            if let (Ok((ce, n)), Ok((ca, _))) = (row_mean(t, v, empirical, class), row_mean(t, v, analytic, class)) {
                if n > 0 {
                    detail.push_str(&format!("; {class} {:+.2}", ce - ca));
                }
            }
        }
        Ok(((e - a).abs(), detail))
    };
    let ideal = gap("DA-ideal", "DA-ideal-analytic").map(|(g, d)| {
        // finite-block effect of X X^H around tau_D P_D I for K jointly estimated UEs
        (g, format!("{d}; 1+(K-1)/tau_D predicts {:.2} dB", db(1.0 + (k - 1.0) / tau_d)))
    });
    vec![
        at_most("da_nmse_vs_closed_form", Some(2), 1.0, gap("DA", "DA-analytic")),
        at_most("da_ideal_vs_closed_form", Some(2), 0.3, ideal),
    ]
}

// 3. DA <= MMSE <= LS everywhere, and the low-power gain.

const DOMINANCE_GRID_DBM: [f64; 5] = [-7.0, 0.5, 8.0, 15.5, 23.0];
const LOW_PT_GAIN_DB: f64 = 15.0;

fn nmse_dominance(seed: u64) -> Vec<CheckResult> {
    let spec = desk_spec(seed, Metric::Nmse, sweep("p_train_dbm", &DOMINANCE_GRID_DBM), 20, 20);
    let t = match run_sweep(&spec) {
        Ok(t) => t,
        Err(e) => {
            return vec![
                failure("nmse_dominance", Some(3), 0.0, &e),
                failure("da_gain_low_pt", Some(3), LOW_PT_GAIN_DB, &e),
            ]
        }
    };
    let t = &t;
    let order = (|| -> Result<(f64, String)> {
        // worst (largest) excess of a better method over a worse one
        let mut worst = (f64::NEG_INFINITY, String::new());
        for &v in &DOMINANCE_GRID_DBM {
            for class in super::CLASS_LABELS {
                let (ls, n) = row_mean(t, v, "LS", class)?;
                if n == 0 {
                    continue;
                }
                let (mmse, _) = row_mean(t, v, "MMSE", class)?;
                let (da, _) = row_mean(t, v, "DA", class)?;
                for (excess, what) in [(da - mmse, "DA-MMSE"), (mmse - ls, "MMSE-LS")] {
                    if excess > worst.0 {
                        worst = (excess, format!("largest {what} {excess:+.2} dB at P_T {v} dBm, {class}"));
                    }
                }
            }
        }
        Ok(worst)
    })();
    let gain = (|| -> Result<(f64, String)> {
        let v = DOMINANCE_GRID_DBM[0];
        let (mmse, _) = row_mean(t, v, "MMSE", "decoupled")?;
        let (da, _) = row_mean(t, v, "DA", "decoupled")?;
        let (no_ber, _) = row_mean(t, v, "DA-noBER", "decoupled")?;
        let (mmse_all, _) = row_mean(t, v, "MMSE", "all")?;
        let (da_all, _) = row_mean(t, v, "DA", "all")?;
        Ok((
            mmse - da,
            format!(
                "decoupled UEs at P_T {v} dBm: MMSE {mmse:.2} dB, DA {da:.2} dB, DA-noBER {no_ber:.2} dB; all UEs: {:.2} dB gain",
                mmse_all - da_all
            ),
        ))
    })();
    let gain = match gain {
        Ok((g, detail)) => CheckResult {
            name: "da_gain_low_pt",
            criterion: Some(3),
            passed: g > LOW_PT_GAIN_DB,
            measured: g,
            threshold: LOW_PT_GAIN_DB,
            detail,
        },
        Err(e) => failure("da_gain_low_pt", Some(3), LOW_PT_GAIN_DB, &e),
    };
    vec![at_most("nmse_dominance", Some(3), 0.0, order), gain]
}

// 4. Closed-form BER against simulation and quadrature.

const BER_GRID_DBM: [f64; 4] = [-7.0, 3.0, 13.0, 23.0];

fn ber_analytics(seed: u64) -> Vec<CheckResult> {
    let spec = desk_spec(seed, Metric::Ber, sweep("p_data_dbm", &BER_GRID_DBM), 20, 20);
    let ratios = (|| -> Result<(f64, f64, String)> {
        let t = run_sweep(&spec)?;
        let (mut worst, mut worst_doubled) = (1.0_f64, 1.0_f64);
        let mut parts = Vec::new();
        for &v in &BER_GRID_DBM {
            let (emp, n) = row_mean(&t, v, "MMSE", "decoupled")?;
            let (ana, _) = row_mean(&t, v, "MMSE-analytic", "decoupled")?;
            if n == 0 || !(emp > 1e-4) {
                continue;
            }
            let doubled = doubled_sinr_ber(&spec, v)?;
            let r = (ana / emp).max(emp / ana);
            worst = worst.max(r);
            worst_doubled = worst_doubled.max((doubled / emp).max(emp / doubled));
            parts.push(format!("{v} dBm: {emp:.2e} vs {ana:.2e} (x{r:.2}; Q(sqrt(2x)) {doubled:.2e})"));
        }
        Ok((worst, worst_doubled, format!("decoupled MMSE: {}", parts.join(", "))))
    })();
    let (ratio, doubled) = match ratios {
        Ok((r, d, detail)) => (
            at_most("ber_closed_form_vs_sim", Some(4), 2.0, Ok((r, detail))),
            // real BPSK in complex noise sees Q(sqrt(2 SINR)); this isolates that factor
            at_most(
                "ber_doubled_sinr_vs_sim",
                None,
                2.0,
                Ok((d, "same comparison with the closed form evaluated at twice the SINR".into())),
            ),
        ),
        Err(e) => (
            failure("ber_closed_form_vs_sim", Some(4), 2.0, &e),
            failure("ber_doubled_sinr_vs_sim", None, 2.0, &e),
        ),
    };
    let bound = (|| -> Result<(f64, String)> {
        let mut worst = f64::NEG_INFINITY;
        let mut count = 0;
        for &v in &BER_GRID_DBM {
            let cfg = spec.config_at(v)?;
            for p in 0..spec.topologies as u64 {
                let ctx = TopologyContext::new(&cfg, seed, p)?;
                for (m, &ber) in ctx.sinr_models.iter().zip(&ctx.predicted_ber) {
                    worst = worst.max(ber_lower_bound(m) - ber);
                    count += 1;
                }
            }
        }
        Ok((worst, format!("max(bound - closed form) over {count} UE models")))
    })();
    vec![
        ratio,
        at_most("ber_lower_bound", Some(4), 0.0, bound),
        at_most("ber_closed_form_vs_quadrature", Some(4), 1e-8, ber_grid()),
        doubled,
    ]
}

/// Decoupled-UE mean of the closed form with the SINR argument doubled.
fn doubled_sinr_ber(spec: &ExperimentSpec, v: f64) -> Result<f64> {
    let cfg = spec.config_at(v)?;
    let mut acc = (0.0, 0usize);
    for p in 0..spec.topologies as u64 {
        let ctx = TopologyContext::new(&cfg, spec.master_seed, p)?;
        for (k, m) in ctx.sinr_models.iter().enumerate() {
            if ctx.classes[k] == UeClass::Decoupled {
                let scaled = SinrGammaModel {
                    mean: 2.0 * m.mean,
                    variance: 4.0 * m.variance,
                    xi: 2.0 * m.xi,
                    ..*m
                };
                acc.0 += analytic_ber(&scaled)?;
                acc.1 += 1;
            }
        }
    }
    Ok(acc.0 / acc.1.max(1) as f64)
}

fn ber_grid() -> Result<(f64, String)> {
    let mut worst = 0.0_f64;
    for alpha in [0.5, 1.0, 2.5, 6.0, 15.0] {
        for xi in [0.05, 0.7, 3.0, 20.0] {
            let model = SinrGammaModel {
                mu: 1.0,
                sigma2: 1.0,
                mean: alpha * xi,
                variance: alpha * xi * xi,
                alpha,
                xi,
                rho_v: 1.0,
                beta_hat: 1.0,
            };
            let closed = analytic_ber(&model)?;
            let numeric = super::oracle_ber_numeric(alpha, xi)?;
            worst = worst.max((closed - numeric).abs());
        }
    }
    Ok((worst, "max abs difference over a 5 x 4 (alpha, xi) grid".into()))
}

// 5. Deterministic-equivalent SINR moments against direct simulation.

const MOMENT_DRAWS: usize = 10_000;

fn sinr_moments(seed: u64) -> Vec<CheckResult> {
    match sinr_moment_errors(seed) {
        Ok((mean_err, var_err, detail)) => vec![
            CheckResult {
                name: "sinr_mean_moment",
                criterion: Some(5),
                passed: mean_err <= 0.05,
                measured: mean_err,
                threshold: 0.05,
                detail: detail.clone(),
            },
            CheckResult {
                name: "sinr_variance_moment",
                criterion: Some(5),
                passed: var_err <= 0.05,
                measured: var_err,
                threshold: 0.05,
                detail,
            },
        ],
        Err(e) => vec![
            failure("sinr_mean_moment", Some(5), 0.05, &e),
            failure("sinr_variance_moment", Some(5), 0.05, &e),
        ],
    }
}

/// Relative moment errors for the strongest UE of the first SBS of a
/// reference-scale drop (N = 8, K = 30).
fn sinr_moment_errors(seed: u64) -> Result<(f64, f64, String)> {
    let cfg = SystemConfig::full_scale();
    let pw = cfg.powers();
    let topology = build_topology(&cfg, StreamKey::topology(seed, 0));
    let bs = 1;
    let betas = topology.betas_at(bs);
    let k = (0..betas.len())
        .max_by(|&a, &b| betas[a].total_cmp(&betas[b]))
        .expect("at least one UE");
    let model = mmse_sinr_model(cfg.sbs_antennas, betas, k, pw.p_train, cfg.tau_t, pw.noise, pw.p_data)?;
    let beta_hat: Vec<f64> = betas
        .iter()
        .map(|&b| crate::estimators::mmse_error_stats(b, pw.p_train, cfg.tau_t, pw.noise).estimate_var)
        .collect();
    let n = cfg.sbs_antennas;
    let mut rng = StreamKey::new(seed, 0, NO_TRIAL, MOMENT_PHASE).rng();
    let mut samples = Vec::with_capacity(MOMENT_DRAWS);
    for _ in 0..MOMENT_DRAWS {
        let g = CMatrix::from_fn(n, betas.len(), |_, j| complex_gaussian(&mut rng, beta_hat[j]));
        samples.push(mmse_sinr(&g, k, model.rho_v)?);
    }
    let mean = samples.iter().sum::<f64>() / MOMENT_DRAWS as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (MOMENT_DRAWS - 1) as f64;
    let mean_err = (mean / model.mean - 1.0).abs();
    let var_err = (var / model.variance - 1.0).abs();
    Ok((
        mean_err,
        var_err,
        format!(
            "UE {k} at SBS {bs}: mean {mean:.4e} vs {:.4e}, variance {var:.4e} vs {:.4e}",
            model.mean, model.variance
        ),
    ))
}

// 6. Fixed-point solver.

fn fixed_point(seed: u64) -> Vec<CheckResult> {
    let trivial = stieltjes_moments(1, &[], 1e-13).map(|m| {
        let err = (m.mu - 1.0).abs().max((m.sigma2 - 1.0).abs());
        (err, format!("mu {}, sigma2 {}", m.mu, m.sigma2))
    });
    let golden = stieltjes_moments(1, &[1.0], 1e-13).map(|m| {
        let target = (5f64.sqrt() - 1.0) / 2.0;
        ((m.mu - target).abs(), format!("mu {} after {} iterations", m.mu, m.iterations))
    });
    let random = (|| -> Result<(f64, String)> {
        let mut rng = StreamKey::new(seed, 0, NO_TRIAL, FIXED_POINT_PHASE).rng();
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let n = rng.random_range(1..=64usize);
            let count = rng.random_range(0..=60usize);
            let gains: Vec<f64> = (0..count).map(|_| 10f64.powf(rng.random_range(-4.0..4.0))).collect();
            let m = stieltjes_moments(n, &gains, 1e-13)?;
            // residual recomputed here rather than trusted from the solver
            let s: f64 = gains.iter().map(|&v| v / (1.0 + n as f64 * v * m.mu)).sum();
            worst = worst.max((1.0 / (s + 1.0) - m.mu).abs());
        }
        Ok((worst, "max |f(mu) - mu| over 100 random instances".into()))
    })();
    vec![
        at_most("fixed_point_no_interferer", Some(6), 1e-10, trivial),
        at_most("fixed_point_golden_ratio", Some(6), 1e-10, golden),
        at_most("fixed_point_residual", Some(6), 1e-12, random),
    ]
}

// 7. Increment of rho at very high data power against its limit.

fn power_floor(seed: u64) -> CheckResult {
    let r = (|| -> Result<(f64, String)> {
        let cfg = SystemConfig {
            p_data_dbm: 60.0,
            ..SystemConfig::default()
        };
        let ctx = TopologyContext::new(&cfg, seed, 0)?;
        let k = ctx.classes.iter().position(|&c| c == UeClass::Decoupled).unwrap_or(0);
        let pw = ctx.powers;
        let betas = &ctx.topology.beta_mbs;
        let bers = &ctx.predicted_ber;
        let increment =
            rho_da(betas, bers, pw.p_train, pw.p_data, cfg.tau_t, cfg.tau_d, pw.noise, k) - cfg.tau_t as f64 * pw.p_train / pw.noise;
        match da_power_floor(cfg.tau_d, bers, betas, k)? {
            PowerFloor::Finite(floor) => Ok((
                (increment / floor - 1.0).abs(),
                format!("UE {k} ({}): increment {increment:.6e}, limit {floor:.6e}", ctx.classes[k].label()),
            )),
            PowerFloor::Unbounded => Err(Error::InvalidConfig("every predicted BER is zero, no finite limit".into())),
        }
    })();
    at_most("da_power_floor", Some(7), 0.005, r)
}

// 8. Degenerate side information reduces to the pilot-only estimator.

fn limits(seed: u64) -> Vec<CheckResult> {
    let coin = (|| -> Result<(f64, String)> {
        let cfg = SystemConfig::default();
        let ctx = TopologyContext::new(&cfg, seed, 0)?;
        let run = simulate_trial(&ctx, Modulation::Bpsk, StreamKey::new(seed, 0, 0, 0))?;
        let dec = detect_all(&ctx, &run, CombinerKind::Mmse)?;
        let side = DecodedSideInfo::new(dec.x_hat, vec![0.5; cfg.num_ue], BerSource::EmpiricalOracle);
        let joint = run.joint[0].as_ref().expect("MBS always observes");
        let da = da_estimates_all(joint, &ctx.pilots, &side, &ctx.topology.beta_mbs, ctx.powers.p_data)?;
        let po = &run.po_mmse[0];
        Ok((max_abs_diff(&da, po) / max_abs(po), "max |DA - MMSE| / max |MMSE| with every BER at 0.5".into()))
    })();
    let empty = (|| -> Result<(f64, String)> {
        let cfg = SystemConfig::default();
        let ctx = TopologyContext::new(&cfg, seed, 0)?;
        let run = simulate_trial(&ctx, Modulation::Bpsk, StreamKey::new(seed, 0, 0, 0))?;
        let joint = run.joint[0].as_ref().expect("MBS always observes");
        let pilots_only = Observation {
            y: joint.y.columns(0, cfg.tau_t).into_owned(),
            phase: Phase::Joint,
            noise_power: joint.noise_power,
        };
        let side = DecodedSideInfo::new(CMatrix::zeros(cfg.num_ue, 0), ctx.predicted_ber.clone(), BerSource::Analytic);
        let da = da_estimates_all(&pilots_only, &ctx.pilots, &side, &ctx.topology.beta_mbs, ctx.powers.p_data)?;
        let po = &run.po_mmse[0];
        Ok((max_abs_diff(&da, po) / max_abs(po), "max |DA - MMSE| / max |MMSE| with tau_D = 0 (rounding only)".into()))
    })();
    let energy = (|| -> Result<(f64, String)> {
        let cfg = SystemConfig::default();
        let ctx = TopologyContext::new(&cfg, seed, 0)?;
        let pw = ctx.powers;
        let zeros = vec![0.0; cfg.num_ue];
        let total = (cfg.tau_t as f64 * pw.p_train + cfg.tau_d as f64 * pw.p_data) / pw.noise;
        let mut worst = 0.0_f64;
        for k in 0..cfg.num_ue {
            let rho = rho_da(&ctx.topology.beta_mbs, &zeros, pw.p_train, pw.p_data, cfg.tau_t, cfg.tau_d, pw.noise, k);
            worst = worst.max((rho / total - 1.0).abs());
        }
        Ok((worst, format!("relative gap to (tau_T P_T + tau_D P_D) / N0 = {total:.6e}")))
    })();
    vec![
        at_most("da_coin_flip_is_mmse", Some(8), 1e-9, coin),
        at_most("da_without_data_is_mmse", Some(8), 1e-12, empty),
        at_most("da_zero_ber_total_energy", Some(8), 4.0 * f64::EPSILON, energy),
    ]
}

// 9. Downlink rate ordering.

const RATE_GRID_DBM: [f64; 4] = [-7.0, 3.0, 13.0, 23.0];

fn rate_ordering(seed: u64) -> Vec<CheckResult> {
    let mut tables = Vec::new();
    for model in [PathLossModel::SimpleNlos, PathLossModel::ThreeGpp] {
        let mut spec = desk_spec(seed, Metric::Rate, sweep("p_data_dbm", &RATE_GRID_DBM), 10, 20);
        spec.base.pathloss_model = model;
        match run_sweep(&spec) {
            Ok(t) => tables.push((model, spec.base.p_data_dbm, t)),
            Err(e) => {
                return vec![
                    failure("rate_da_not_below_po", Some(9), 0.0, &e),
                    failure("rate_sue_flat", Some(9), 0.01, &e),
                ]
            }
        }
    }
    let order = (|| -> Result<(f64, String)> {
        let mut worst = f64::NEG_INFINITY;
        let mut parts = Vec::new();
        for (model, v, t) in &tables {
            for class in ["decoupled", "mue"] {
                let (po, n) = row_mean(t, *v, "PO", class)?;
                let (da, _) = row_mean(t, *v, "DA", class)?;
                if n == 0 {
                    parts.push(format!("{model} {class}: none"));
                    continue;
                }
                worst = worst.max(po - da);
                parts.push(format!("{model} {class}: PO {po:.3}, DA {da:.3}"));
            }
        }
        Ok((worst, format!("max(PO - DA) at P_D 23 dBm; {}", parts.join(", "))))
    })();
    let flat = (|| -> Result<(f64, String)> {
        let mut worst = 0.0_f64;
        let mut parts = Vec::new();
        for (model, _, t) in &tables {
            for method in ["PO", "DA"] {
                let mut rates = Vec::new();
                for &v in &RATE_GRID_DBM {
                    let (r, n) = row_mean(t, v, method, "sue")?;
                    if n > 0 {
                        rates.push(r);
                    }
                }
                if rates.is_empty() {
                    parts.push(format!("{model} {method}: no SUEs"));
                    continue;
                }
                let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mean = rates.iter().sum::<f64>() / rates.len() as f64;
                worst = worst.max((hi - lo) / mean);
                parts.push(format!("{model} {method} {lo:.3}..{hi:.3}"));
            }
        }
        Ok((worst, format!("(max - min) / mean of SUE rate over P_D; {}", parts.join(", "))))
    })();
    vec![
        at_most("rate_da_not_below_po", Some(9), 0.0, order),
        at_most("rate_sue_flat", Some(9), 0.01, flat),
    ]
}

// 10. Detector ordering and the single-UE ZF/MRC identity.

fn detector_ordering(seed: u64) -> Vec<CheckResult> {
    let order = (|| -> Result<(f64, String)> {
        let mut spec = desk_spec(seed, Metric::Ber, sweep("p_data_dbm", &[23.0]), 20, 20);
        spec.base.p_train_dbm = 23.0;
        let t = run_sweep(&spec)?;
        let mut worst = f64::NEG_INFINITY;
        let mut parts = Vec::new();
        for class in ["decoupled", "all"] {
            let (mmse, _) = row_mean(&t, 23.0, "MMSE", class)?;
            let (zf, _) = row_mean(&t, 23.0, "ZF", class)?;
            let (mrc, _) = row_mean(&t, 23.0, "MRC", class)?;
            worst = worst.max(mmse - zf).max(zf - mrc);
            parts.push(format!("{class}: MMSE {mmse:.2e}, ZF {zf:.2e}, MRC {mrc:.2e}"));
        }
        Ok((worst, format!("P_T = P_D = 23 dBm; {}", parts.join("; "))))
    })();
    let single = (|| -> Result<(f64, String)> {
        let cfg = SystemConfig::default();
        let ctx = TopologyContext::new(&cfg, seed, 0)?;
        let mut mismatched = 0;
        let mut compared = 0;
        for t in 0..5u64 {
            let run = simulate_trial(&ctx, Modulation::Bpsk, StreamKey::new(seed, 0, t, SYNTHETIC_PHASE))?;
            for v in 0..ctx.num_bs() {
                let Some(joint) = &run.joint[v] else { continue };
                let data = joint.data_part(cfg.tau_t)?;
                let betas = ctx.topology.betas_at(v);
                for k in 0..cfg.num_ue {
                    let zf = build_combiner(CombinerKind::Zf, &run.po_mmse[v], &[k], betas, &ctx.link)?;
                    let mrc = build_combiner(CombinerKind::Mrc, &run.po_mmse[v], &[k], betas, &ctx.link)?;
                    let a = detect(&data, &zf, &run.block, k)?;
                    let b = detect(&data, &mrc, &run.block, k)?;
                    compared += 1;
                    if a.bits != b.bits || a.symbols != b.symbols {
                        mismatched += 1;
                    }
                }
            }
        }
        Ok((mismatched as f64, format!("{mismatched} of {compared} single-UE decodings differ")))
    })();
    vec![
        at_most("detector_ordering", Some(10), 0.0, order),
        at_most("zf_single_ue_is_mrc", Some(10), 0.0, single),
    ]
}

// 11. Output independent of scheduling.

fn determinism(seed: u64) -> CheckResult {
    let r = (|| -> Result<(f64, String)> {
        let mut spec = desk_spec(seed, Metric::Rate, sweep("p_data_dbm", &[3.0, 23.0]), 4, 3);
        spec.base.tau_d = 32;
        let a = table_to_csv(&run_sweep_with_threads(&spec, 1)?);
        let b = table_to_csv(&run_sweep_with_threads(&spec, 3)?);
        let c = table_to_csv(&run_sweep_with_threads(&spec, 1)?);
        let differing = [a != b, a != c].iter().filter(|&&d| d).count();
        Ok((differing as f64, format!("{} CSV bytes; runs with 1, 3, 1 workers", a.len())))
    })();
    at_most("thread_count_invariance", Some(11), 0.0, r)
}

// Supporting checks.

fn woodbury_matches_direct(seed: u64) -> CheckResult {
    let r = (|| -> Result<(f64, String)> {
        let mut cfg = SystemConfig::default();
        cfg.tau_d = 48;
        let ctx = TopologyContext::new(&cfg, seed, 1)?;
        let run = simulate_trial(&ctx, Modulation::Bpsk, StreamKey::new(seed, 1, 0, 0))?;
        let dec = detect_all(&ctx, &run, CombinerKind::Mmse)?;
        let side = side_info(&ctx, &run, &dec, BerSource::Analytic);
        let joint = run.joint[0].as_ref().expect("MBS always observes");
        let betas = &ctx.topology.beta_mbs;
        let fast = da_estimates_all(joint, &ctx.pilots, &side, betas, ctx.powers.p_data)?;
        let slow = da_estimates_direct(joint, &ctx.pilots, &side, betas, ctx.powers.p_data)?;
        Ok((max_abs_diff(&fast, &slow) / max_abs(&slow), "K x K form vs block-length solve".into()))
    })();
    at_most("da_woodbury_matches_direct", None, 1e-9, r)
}

fn sinr_forms_agree(seed: u64) -> CheckResult {
    let r = (|| -> Result<(f64, String)> {
        let cfg = SystemConfig::default();
        let ctx = TopologyContext::new(&cfg, seed, 0)?;
        let run = simulate_trial(&ctx, Modulation::Bpsk, StreamKey::new(seed, 0, 0, 0))?;
        let mut worst = 0.0_f64;
        for v in 0..ctx.num_bs() {
            if run.joint[v].is_none() {
                continue;
            }
            let g = &run.po_mmse[v];
            let betas = ctx.topology.betas_at(v);
            let loading = ctx.link.mmse_loading(betas);
            let all: Vec<usize> = (0..cfg.num_ue).collect();
            let comb = build_combiner(CombinerKind::Mmse, g, &all, betas, &ctx.link)?;
            for k in 0..cfg.num_ue {
                let direct = output_sinr(&comb.c.column(k).into_owned(), g, k, loading);
                let resolvent = mmse_sinr(g, k, 1.0 / loading)?;
                worst = worst.max((direct / resolvent - 1.0).abs());
            }
        }
        Ok((worst, "combiner output SINR vs resolvent diagonal, all active BSs".into()))
    })();
    at_most("sinr_forms_agree", None, 1e-9, r)
}

fn hyp2f1_reference() -> CheckResult {
    let r = hyp2f1(1.0, 2.5, 3.5, 0.3).map(|v| {
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 0..200 {
            let n = n as f64;
            term *= (1.0 + n) * (2.5 + n) / ((3.5 + n) * (n + 1.0)) * 0.3;
            sum += term;
        }
        ((v - sum).abs(), format!("2F1(1, 2.5; 3.5; 0.3) = {v:.15} vs 200-term sum"))
    });
    at_most("hyp2f1_reference", None, 1e-12, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_criteria_pass() {
        let opts = ValidationOptions::default();
        for c in [6, 7, 8] {
            for check in run_criterion(c, &opts) {
                assert!(check.passed, "{check}");
            }
        }
        for check in supporting_checks(&opts) {
            assert!(check.passed, "{check}");
        }
    }

    #[test]
    fn tampered_shrinkage_is_caught() {
        let checks = nmse_closed_form(1, 2.0);
        assert!(checks[0].passed, "{}", checks[0]);
        assert!(!checks[1].passed, "{}", checks[1]);
    }

    #[test]
    fn report_bookkeeping() {
        let ok = |name, criterion| CheckResult {
            name,
            criterion,
            passed: true,
            measured: 0.0,
            threshold: 1.0,
            detail: String::new(),
        };
        let mut report = ValidationReport {
            checks: vec![ok("a", Some(1)), ok("b", Some(1)), ok("c", None)],
        };
        assert!(report.all_passed());
        assert_eq!(report.criterion_passed(1), Some(true));
        assert_eq!(report.criterion_passed(2), None);
        report.checks[1].passed = false;
        assert_eq!(report.criterion_passed(1), Some(false));
        assert!(!report.all_passed());
        let text = report.to_string();
        assert_eq!(text.lines().filter(|l| l.starts_with("FAIL")).count(), 1);
        assert!(text.ends_with("3 checks, 2 passed, 1 failed"));
    }

    #[test]
    fn errors_become_failures() {
        let c = at_most("x", Some(3), 1.0, Err(Error::Singular("boom".into())));
        assert!(!c.passed);
        assert!(c.detail.contains("boom"));
        assert!(c.measured.is_nan());
    }
}
