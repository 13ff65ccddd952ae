//! One topology worth of trials.

use super::{ExperimentSpec, Metric};
use crate::ber::{ber_lower_bound, mmse_sinr_model, analytic_ber, SinrGammaModel};
use crate::data_aided::{
    conventional_nmse, da_estimates_all, rho_da, BerSource, DecodedSideInfo,
};
use crate::detectors::{build_combiner, detect, random_block, CombinerKind, DataBlock, LinkParams, Modulation};
use crate::downlink::{build_precoders, dl_rate};
use crate::error::Result;
use crate::estimators::{ls_estimates, mmse_estimates, EstimatorKind};
use crate::linalg::{CMatrix, C64};
use crate::phy::{draw_channels, make_pilots, observe, ChannelSet, Observation, Phase, PilotMatrix};
use crate::rng::{phase, StreamKey};
use crate::scenario::{associate, build_topology, Association, LinearPowers, SystemConfig, Topology, UeClass};

/// Method labels, in output order, for a spec.
pub fn methods_for(spec: &ExperimentSpec) -> Vec<String> {
    let fixed = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    match spec.metric {
        Metric::Nmse => fixed(&[
            "LS",
            "MMSE",
            "DA",
            "DA-noBER",
            "DA-ideal",
            "LS-analytic",
            "MMSE-analytic",
            "DA-analytic",
            "DA-ideal-analytic",
        ]),
        Metric::Ber => {
            let mut m: Vec<String> = spec.detectors.iter().map(|d| d.label().to_string()).collect();
            // the closed form is for binary signalling only
            if spec.modulation == Modulation::Bpsk {
                m.push("MMSE-analytic".into());
                m.push("MMSE-lower-bound".into());
            }
            m
        }
        Metric::Rate => fixed(&["PO", "DA"]),
    }
}

/// Everything fixed for one drop: geometry, association, pilots and the
/// closed-form BER of each UE at its uplink receiver.
#[derive(Debug, Clone)]
pub struct TopologyContext {
    pub config: SystemConfig,
    pub powers: LinearPowers,
    pub topology: Topology,
    pub assoc: Association,
    pub classes: Vec<UeClass>,
    pub pilots: PilotMatrix,
    pub link: LinkParams,
    pub sinr_models: Vec<SinrGammaModel>,
    pub predicted_ber: Vec<f64>,
}

impl TopologyContext {
    pub fn new(config: &SystemConfig, master: u64, topology_index: u64) -> Result<Self> {
        let topology = build_topology(config, StreamKey::topology(master, topology_index));
        Self::with_topology(config, topology)
    }

    pub fn with_topology(config: &SystemConfig, topology: Topology) -> Result<Self> {
        config.validate()?;
        let powers = config.powers();
        let assoc = associate(&topology, config);
        let pilots = make_pilots(config.num_ue, config.tau_t, powers.p_train)?;
        let link = LinkParams {
            p_t: powers.p_train,
            tau_t: config.tau_t,
            p_d: powers.p_data,
            noise: powers.noise,
        };
        let sinr_models = (0..config.num_ue)
            .map(|k| {
                let v = assoc.ul_serving[k];
                mmse_sinr_model(
                    config.antennas(v),
                    topology.betas_at(v),
                    k,
                    link.p_t,
                    link.tau_t,
                    link.noise,
                    link.p_d,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let predicted_ber = sinr_models.iter().map(analytic_ber).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            powers,
            classes: assoc.classes(),
            topology,
            assoc,
            pilots,
            link,
            sinr_models,
            predicted_ber,
        })
    }

    pub fn num_bs(&self) -> usize {
        self.topology.num_sbs() + 1
    }
}

/// Random quantities of one coherence block.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub channels: ChannelSet,
    pub block: DataBlock,
    /// Joint training + data observation per BS; `None` for idle SBSs.
    pub joint: Vec<Option<Observation>>,
    /// Pilot-only MMSE estimates of all UEs at each BS (empty for idle SBSs).
    pub po_mmse: Vec<CMatrix>,
}

pub fn simulate_trial(ctx: &TopologyContext, modulation: Modulation, key: StreamKey) -> Result<TrialRun> {
    let cfg = &ctx.config;
    let channels = draw_channels(&ctx.topology, cfg, key.with_phase(phase::CHANNELS));
    let block = random_block(
        &mut key.with_phase(phase::BITS).rng(),
        cfg.num_ue,
        cfg.tau_d,
        modulation,
        ctx.powers.p_data,
    );
    let mut signal = CMatrix::zeros(cfg.num_ue, cfg.tau_t + cfg.tau_d);
    signal.columns_mut(0, cfg.tau_t).copy_from(&ctx.pilots.s);
    signal.columns_mut(cfg.tau_t, cfg.tau_d).copy_from(&block.symbols);
    let mut joint = Vec::with_capacity(ctx.num_bs());
    let mut po_mmse = Vec::with_capacity(ctx.num_bs());
    for v in 0..ctx.num_bs() {
        let active = v == 0 || ctx.assoc.ul_serving.contains(&v) || ctx.assoc.dl_serving.contains(&v);
        if !active {
            joint.push(None);
            po_mmse.push(CMatrix::zeros(0, 0));
            continue;
        }
        let mut rng = key.with_phase(phase::NOISE_BASE + v as u64).rng();
        let obs = observe(channels.at(v), &signal, ctx.powers.noise, Phase::Joint, &mut rng)?;
        let train = obs.training_part(cfg.tau_t)?;
        po_mmse.push(mmse_estimates(&train, &ctx.pilots, ctx.topology.betas_at(v), ctx.powers.noise)?);
        joint.push(Some(obs));
    }
    Ok(TrialRun {
        channels,
        block,
        joint,
        po_mmse,
    })
}

/// Decisions of every UE at its uplink BS.
#[derive(Debug, Clone)]
pub struct Decisions {
    /// `K x tau_d` decided symbols.
    pub x_hat: CMatrix,
    pub bit_errors: Vec<usize>,
    pub bits: Vec<usize>,
}

pub fn detect_all(ctx: &TopologyContext, run: &TrialRun, kind: CombinerKind) -> Result<Decisions> {
    let cfg = &ctx.config;
    let mut x_hat = CMatrix::zeros(cfg.num_ue, cfg.tau_d);
    let mut bit_errors = vec![0; cfg.num_ue];
    let mut bits = vec![0; cfg.num_ue];
    for v in 0..ctx.num_bs() {
        let served = ctx.assoc.ul_served_by(v);
        if served.is_empty() {
            continue;
        }
        let obs = run.joint[v].as_ref().expect("serving BS is active").data_part(cfg.tau_t)?;
        let comb = build_combiner(kind, &run.po_mmse[v], &served, ctx.topology.betas_at(v), &ctx.link)?;
        for &k in &served {
            let d = detect(&obs, &comb, &run.block, k)?;
            for (t, s) in d.symbols.iter().enumerate() {
                x_hat[(k, t)] = *s;
            }
            bit_errors[k] = d.bit_errors;
            bits[k] = d.bits.len();
        }
    }
    Ok(Decisions { x_hat, bit_errors, bits })
}

/// Flip probability that explains the realized decisions: `E[x_hat x^*] = (1 - 2p) P_D`.
///
/// Equals the bit error rate for BPSK and gives the matching shrinkage for QAM.
pub fn effective_flip_probability(truth: &CMatrix, decided: &CMatrix, p_d: f64, k: usize) -> f64 {
    let tau = truth.ncols();
    if tau == 0 {
        return 0.5;
    }
    let corr: f64 = (0..tau).map(|t| (decided[(k, t)] * truth[(k, t)].conj()).re).sum();
    (1.0 - corr / (tau as f64 * p_d)) / 2.0
}

pub fn side_info(ctx: &TopologyContext, run: &TrialRun, dec: &Decisions, source: BerSource) -> DecodedSideInfo {
    let use_closed_form = source == BerSource::Analytic && run.block.modulation == Modulation::Bpsk;
    let ber = if use_closed_form {
        ctx.predicted_ber.clone()
    } else {
        (0..ctx.config.num_ue)
            .map(|k| effective_flip_probability(&run.block.symbols, &dec.x_hat, ctx.powers.p_data, k))
            .collect()
    };
    let source = if use_closed_form { BerSource::Analytic } else { BerSource::EmpiricalOracle };
    DecodedSideInfo::new(dec.x_hat.clone(), ber, source)
}

/// Running ratio `num / den` for one UE and method.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UeAcc {
    pub num: f64,
    pub den: f64,
}

impl UeAcc {
    fn add(&mut self, num: f64, den: f64) {
        self.num += num;
        self.den += den;
    }

    pub fn value(&self) -> Option<f64> {
        (self.den > 0.0).then(|| self.num / self.den)
    }
}

#[derive(Debug, Clone)]
pub struct ItemResult {
    pub classes: Vec<UeClass>,
    /// `values[method][ue]`.
    pub values: Vec<Vec<UeAcc>>,
}

pub fn run_item(spec: &ExperimentSpec, value: f64, p: u64, methods: &[String]) -> Result<ItemResult> {
    let cfg = spec.config_at(value)?;
    let ctx = TopologyContext::new(&cfg, spec.master_seed, p)?;
    let mut values = vec![vec![UeAcc::default(); cfg.num_ue]; methods.len()];
    for t in 0..spec.trials {
        let key = StreamKey::new(spec.master_seed, p, t as u64, 0);
        let run = simulate_trial(&ctx, spec.modulation, key)?;
        match spec.metric {
            Metric::Nmse => nmse_trial(spec, &ctx, &run, &mut values)?,
            Metric::Ber => ber_trial(spec, &ctx, &run, &mut values)?,
            Metric::Rate => rate_trial(spec, &ctx, &run, &mut values)?,
        }
    }
    Ok(ItemResult {
        classes: ctx.classes.clone(),
        values,
    })
}

fn column_error(truth: &CMatrix, est: &CMatrix, k: usize) -> f64 {
    (truth.column(k) - est.column(k)).norm_squared()
}

fn nmse_trial(spec: &ExperimentSpec, ctx: &TopologyContext, run: &TrialRun, out: &mut [Vec<UeAcc>]) -> Result<()> {
    let cfg = &ctx.config;
    let joint = run.joint[0].as_ref().expect("MBS always observes");
    let train = joint.training_part(cfg.tau_t)?;
    let betas = &ctx.topology.beta_mbs;
    let p_d = ctx.powers.p_data;
    let ls = ls_estimates(&train, &ctx.pilots)?;
    let dec = detect_all(ctx, run, CombinerKind::Mmse)?;
    let side = side_info(ctx, run, &dec, spec.ber_source);
    let da = da_estimates_all(joint, &ctx.pilots, &side, betas, p_d)?;
    let no_ber = DecodedSideInfo::new(dec.x_hat.clone(), vec![0.0; cfg.num_ue], side.source);
    let da_no_ber = da_estimates_all(joint, &ctx.pilots, &no_ber, betas, p_d)?;
    let ideal = DecodedSideInfo::new(run.block.symbols.clone(), vec![0.0; cfg.num_ue], BerSource::EmpiricalOracle);
    let da_ideal = da_estimates_all(joint, &ctx.pilots, &ideal, betas, p_d)?;

    let h = &run.channels.h_mbs;
    let zeros = vec![0.0; cfg.num_ue];
    let (p_t, tau_t, tau_d, n0) = (ctx.powers.p_train, cfg.tau_t, cfg.tau_d, ctx.powers.noise);
    for k in 0..cfg.num_ue {
        let energy = h.column(k).norm_squared();
        let beta = betas[k];
        let empirical = [&ls, &run.po_mmse[0], &da, &da_no_ber, &da_ideal];
        for (m, est) in empirical.iter().enumerate() {
            out[m][k].add(column_error(h, est, k), energy);
        }
        let lin = |db: f64| 10f64.powf(db / 10.0);
        let predictions = [
            lin(conventional_nmse(EstimatorKind::Ls, beta, p_t, tau_t, n0).value_db),
            lin(conventional_nmse(EstimatorKind::Mmse, beta, p_t, tau_t, n0).value_db),
            1.0 / (1.0 + rho_da(betas, &side.ber, p_t, p_d, tau_t, tau_d, n0, k) * beta),
            1.0 / (1.0 + rho_da(betas, &zeros, p_t, p_d, tau_t, tau_d, n0, k) * beta),
        ];
        for (j, pred) in predictions.iter().enumerate() {
            out[empirical.len() + j][k].add(*pred, 1.0);
        }
    }
    Ok(())
}

fn ber_trial(spec: &ExperimentSpec, ctx: &TopologyContext, run: &TrialRun, out: &mut [Vec<UeAcc>]) -> Result<()> {
    for (m, &kind) in spec.detectors.iter().enumerate() {
        let dec = detect_all(ctx, run, kind)?;
        for k in 0..ctx.config.num_ue {
            out[m][k].add(dec.bit_errors[k] as f64, dec.bits[k] as f64);
        }
    }
    if spec.modulation == Modulation::Bpsk {
        let m = spec.detectors.len();
        for k in 0..ctx.config.num_ue {
            out[m][k].add(ctx.predicted_ber[k], 1.0);
            out[m + 1][k].add(ber_lower_bound(&ctx.sinr_models[k]), 1.0);
        }
    }
    Ok(())
}

fn rate_trial(spec: &ExperimentSpec, ctx: &TopologyContext, run: &TrialRun, out: &mut [Vec<UeAcc>]) -> Result<()> {
    let joint = run.joint[0].as_ref().expect("MBS always observes");
    let dec = detect_all(ctx, run, CombinerKind::Mmse)?;
    let side = side_info(ctx, run, &dec, spec.ber_source);
    let da = da_estimates_all(joint, &ctx.pilots, &side, &ctx.topology.beta_mbs, ctx.powers.p_data)?;
    let mut budgets = vec![ctx.powers.p_sbs; ctx.num_bs()];
    budgets[0] = ctx.powers.p_mbs;
    let po_est = per_bs_estimates(ctx, run, None);
    let da_est = per_bs_estimates(ctx, run, Some(da));
    for (m, est) in [po_est, da_est].iter().enumerate() {
        let pre = build_precoders(est, &ctx.assoc, &budgets)?;
        let rep = dl_rate(&run.channels, &pre, &ctx.assoc, ctx.powers.noise)?;
        for k in 0..ctx.config.num_ue {
            out[m][k].add(rep.rate[k], 1.0);
        }
    }
    Ok(())
}

/// Estimates used for precoding: pilot-only everywhere, or the MBS replaced
/// by its data-aided estimates. Idle SBSs get a zero matrix of the right shape.
fn per_bs_estimates(ctx: &TopologyContext, run: &TrialRun, mbs: Option<CMatrix>) -> Vec<CMatrix> {
    let mut est: Vec<CMatrix> = (0..ctx.num_bs())
        .map(|v| {
            if run.po_mmse[v].nrows() == 0 {
                CMatrix::from_element(ctx.config.antennas(v), ctx.config.num_ue, C64::from(0.0))
            } else {
                run.po_mmse[v].clone()
            }
        })
        .collect();
    if let Some(m) = mbs {
        est[0] = m;
    }
    est
}
