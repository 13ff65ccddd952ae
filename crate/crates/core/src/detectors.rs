//! Uplink modulation, linear combining and hard-decision detection.

use std::fmt;
use std::str::FromStr;
use std::sync::Once;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ber::effective_rho;
use crate::error::{Error, Result};
use crate::linalg::{select_columns, solve_general, solve_hpd, CMatrix, CVector, C64};
use crate::phy::{Observation, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qam4,
    Qam16,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qam4 => 2,
            Modulation::Qam16 => 4,
        }
    }

    /// Unit-average-power constellation point for `bits`.
    fn map(self, bits: &[u8]) -> C64 {
        let sign = |b: u8| if b == 0 { 1.0 } else { -1.0 };
        match self {
            Modulation::Bpsk => C64::new(sign(bits[0]), 0.0),
            Modulation::Qam4 => C64::new(sign(bits[0]), sign(bits[1])) / 2f64.sqrt(),
            Modulation::Qam16 => C64::new(pam4_level(bits[0], bits[1]), pam4_level(bits[2], bits[3])) / 10f64.sqrt(),
        }
    }

    /// Nearest-point decision on a unit-power sample; appends the bits.
    fn slice(self, z: C64, out: &mut Vec<u8>) {
        let bit = |x: f64| u8::from(x < 0.0);
        match self {
            Modulation::Bpsk => out.push(bit(z.re)),
            Modulation::Qam4 => out.extend([bit(z.re), bit(z.im)]),
            Modulation::Qam16 => {
                let s = 10f64.sqrt();
                out.extend(pam4_bits(z.re * s));
                out.extend(pam4_bits(z.im * s));
            }
        }
    }
}

// Gray labels per axis: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
fn pam4_level(b0: u8, b1: u8) -> f64 {
    match (b0, b1) {
        (0, 0) => -3.0,
        (0, _) => -1.0,
        (_, 1) => 1.0,
        _ => 3.0,
    }
}

fn pam4_bits(x: f64) -> [u8; 2] {
    if x < -2.0 {
        [0, 0]
    } else if x < 0.0 {
        [0, 1]
    } else if x < 2.0 {
        [1, 1]
    } else {
        [1, 0]
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qam4 => "qam4",
            Modulation::Qam16 => "qam16",
        })
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qam4" | "4qam" | "qpsk" => Ok(Modulation::Qam4),
            "qam16" | "16qam" => Ok(Modulation::Qam16),
            _ => Err(Error::Parse(format!("unknown modulation '{s}'"))),
        }
    }
}

/// Uplink data of all UEs over one coherence block.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBlock {
    /// One bit row per UE.
    pub bits: Vec<Vec<u8>>,
    /// `K x tau_d`.
    pub symbols: CMatrix,
    pub modulation: Modulation,
    pub power: f64,
}

impl DataBlock {
    pub fn tau_d(&self) -> usize {
        self.symbols.ncols()
    }
}

pub fn random_bits<R: Rng + ?Sized>(rng: &mut R, rows: usize, len: usize) -> Vec<Vec<u8>> {
    (0..rows)
        .map(|_| (0..len).map(|_| rng.random_range(0..2u8)).collect())
        .collect()
}

/// Maps bit rows to symbols with average energy `p_d`.
pub fn modulate(bits: &[Vec<u8>], modulation: Modulation, p_d: f64) -> Result<DataBlock> {
    let bps = modulation.bits_per_symbol();
    let len = bits.first().map_or(0, Vec::len);
    if let Some(row) = bits.iter().find(|r| r.len() % bps != 0 || r.len() != len) {
        return Err(Error::MalformedBits {
            len: row.len(),
            bits_per_symbol: bps,
        });
    }
    let amp = p_d.sqrt();
    let symbols = CMatrix::from_fn(bits.len(), len / bps, |k, t| {
        modulation.map(&bits[k][t * bps..(t + 1) * bps]) * amp
    });
    Ok(DataBlock {
        bits: bits.to_vec(),
        symbols,
        modulation,
        power: p_d,
    })
}

/// Random bits for `k` UEs, `tau_d` symbols each, already modulated.
pub fn random_block<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    tau_d: usize,
    modulation: Modulation,
    p_d: f64,
) -> DataBlock {
    let bits = random_bits(rng, k, tau_d * modulation.bits_per_symbol());
    modulate(&bits, modulation, p_d).expect("rows are well formed by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinerKind {
    Mrc,
    Zf,
    Mmse,
}

impl CombinerKind {
    pub fn label(self) -> &'static str {
        match self {
            CombinerKind::Mrc => "MRC",
            CombinerKind::Zf => "ZF",
            CombinerKind::Mmse => "MMSE",
        }
    }
}

impl FromStr for CombinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mrc" => Ok(CombinerKind::Mrc),
            "zf" => Ok(CombinerKind::Zf),
            "mmse" => Ok(CombinerKind::Mmse),
            _ => Err(Error::Parse(format!("unknown detector '{s}'"))),
        }
    }
}

/// Link-budget quantities shared by the estimators and detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub p_t: f64,
    pub tau_t: usize,
    pub p_d: f64,
    pub noise: f64,
}

impl LinkParams {
    /// Diagonal loading of the MMSE combiner: estimation error plus `N0 / P_D`.
    pub fn mmse_loading(&self, betas: &[f64]) -> f64 {
        1.0 / effective_rho(betas, self.p_t, self.tau_t, self.noise, self.p_d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    /// One column per served UE; the detector output is `c^H y`.
    pub c: CMatrix,
    /// Kind actually built (ZF may fall back to MMSE).
    pub kind: CombinerKind,
    pub served: Vec<usize>,
    /// `c_k^H g_hat_k`, used to normalize outputs before slicing.
    pub gain: Vec<C64>,
}

static ZF_FALLBACK: Once = Once::new();

/// Builds the combiner of a receiver from the estimates of all UEs it hears.
///
/// `g_hat` is `antennas x K`; `served` lists the UEs to be decoded here;
/// `betas` are the gains of all K UEs toward this receiver.
pub fn build_combiner(
    kind: CombinerKind,
    g_hat: &CMatrix,
    served: &[usize],
    betas: &[f64],
    link: &LinkParams,
) -> Result<Combiner> {
    let (n, k) = g_hat.shape();
    if betas.len() != k {
        return Err(Error::DimensionMismatch(format!("{} gains for {k} estimates", betas.len())));
    }
    if let Some(&bad) = served.iter().find(|&&i| i >= k) {
        return Err(Error::IndexOutOfRange { index: bad, len: k });
    }
    let g_s = select_columns(g_hat, served);
    let (c, kind) = match kind {
        CombinerKind::Mrc => {
            let mut c = g_s.clone();
            for (j, mut col) in c.column_iter_mut().enumerate() {
                let e = g_s.column(j).norm_squared();
                if e == 0.0 {
                    return Err(Error::Singular(format!("zero channel estimate for UE {}", served[j])));
                }
                col /= C64::from(e);
            }
            (c, CombinerKind::Mrc)
        }
        CombinerKind::Zf if served.len() > n => {
            ZF_FALLBACK.call_once(|| {
                log::warn!("ZF needs at most {n} served UEs, got {}; using MMSE", served.len());
            });
            (mmse_columns(g_hat, served, betas, link)?, CombinerKind::Mmse)
        }
        CombinerKind::Zf => {
            let gram = g_s.adjoint() * &g_s;
            let inv = solve_general(&gram, &CMatrix::identity(served.len(), served.len()))
                .map_err(|_| Error::Singular("ZF Gram matrix is rank deficient".into()))?;
            (&g_s * inv, CombinerKind::Zf)
        }
        CombinerKind::Mmse => (mmse_columns(g_hat, served, betas, link)?, CombinerKind::Mmse),
    };
    let gain = (0..served.len())
        .map(|j| c.column(j).dotc(&g_s.column(j)))
        .collect();
    Ok(Combiner {
        c,
        kind,
        served: served.to_vec(),
        gain,
    })
}

/// Columns `(G G^H + r I)^-1 g_k`, solved in whichever dimension is smaller.
fn mmse_columns(g_hat: &CMatrix, served: &[usize], betas: &[f64], link: &LinkParams) -> Result<CMatrix> {
    let (n, k) = g_hat.shape();
    let r = C64::from(link.mmse_loading(betas));
    if n <= k {
        let a = g_hat * g_hat.adjoint() + CMatrix::identity(n, n) * r;
        solve_hpd(&a, &select_columns(g_hat, served))
    } else {
        // push-through: (G G^H + r I)^-1 G = G (G^H G + r I)^-1
        let a = g_hat.adjoint() * g_hat + CMatrix::identity(k, k) * r;
        let mut e = CMatrix::zeros(k, served.len());
        for (j, &i) in served.iter().enumerate() {
            e[(i, j)] = C64::from(1.0);
        }
        Ok(g_hat * solve_hpd(&a, &e)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bits: Vec<u8>,
    /// Decided symbols at power `P_D`.
    pub symbols: Vec<C64>,
    pub bit_errors: usize,
    pub ber: f64,
}

/// Hard decisions for UE `k` from its combiner column.
pub fn detect(obs: &Observation, combiner: &Combiner, block: &DataBlock, k: usize) -> Result<Detection> {
    obs.expect_phase(Phase::Data)?;
    let j = combiner
        .served
        .iter()
        .position(|&i| i == k)
        .ok_or(Error::IndexOutOfRange {
            index: k,
            len: combiner.served.len(),
        })?;
    if obs.y.ncols() != block.tau_d() || obs.y.nrows() != combiner.c.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "observation {}x{} vs combiner {} rows, {} symbols",
            obs.y.nrows(),
            obs.y.ncols(),
            combiner.c.nrows(),
            block.tau_d()
        )));
    }
    let out: CVector = obs.y.adjoint() * combiner.c.column(j);
    // out[t] = y_t^H c = conj(c^H y_t)
    let scale = combiner.gain[j] * block.power.sqrt();
    let amp = block.power.sqrt();
    let m = block.modulation;
    let mut bits = Vec::with_capacity(block.bits[k].len());
    let mut symbols = Vec::with_capacity(out.len());
    for z in out.iter() {
        let start = bits.len();
        m.slice(z.conj() / scale, &mut bits);
        symbols.push(m.map(&bits[start..]) * amp);
    }
    let bit_errors = bits.iter().zip(&block.bits[k]).filter(|(a, b)| a != b).count();
    Ok(Detection {
        ber: bit_errors as f64 / bits.len().max(1) as f64,
        bits,
        symbols,
        bit_errors,
    })
}

/// Post-MMSE SINR of UE `k` treating the estimates as true channels:
/// `1 / [(I + rho G^H G)^-1]_kk - 1`.
pub fn mmse_sinr(g_hat: &CMatrix, k: usize, rho: f64) -> Result<f64> {
    let kk = g_hat.ncols();
    if k >= kk {
        return Err(Error::IndexOutOfRange { index: k, len: kk });
    }
    let a = g_hat.adjoint() * g_hat * C64::from(rho) + CMatrix::identity(kk, kk);
    let mut e = CMatrix::zeros(kk, 1);
    e[(k, 0)] = C64::from(1.0);
    let x = solve_hpd(&a, &e)?;
    Ok(1.0 / x[(k, 0)].re - 1.0)
}

/// SINR at the output of an arbitrary combining vector `c` for UE `k`, with
/// white disturbance of power `loading` per antenna.
pub fn output_sinr(c: &CVector, g_hat: &CMatrix, k: usize, loading: f64) -> f64 {
    let signal = c.dotc(&g_hat.column(k)).norm_sqr();
    let interference: f64 = (0..g_hat.ncols())
        .filter(|&i| i != k)
        .map(|i| c.dotc(&g_hat.column(i)).norm_sqr())
        .sum();
    signal / (interference + loading * c.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::phy::observe;
    use crate::rng::{complex_gaussian, rng_from_seed};
    use crate::special::q_function;
    use proptest::prelude::*;

    fn link() -> LinkParams {
        LinkParams {
            p_t: 1.0,
            tau_t: 4,
            p_d: 2.0,
            noise: 0.1,
        }
    }

    fn random_g(seed: u64, n: usize, k: usize) -> CMatrix {
        let mut rng = rng_from_seed(seed);
        CMatrix::from_fn(n, k, |_, _| complex_gaussian(&mut rng, 1.0))
    }

    #[test]
    fn constellation_examples() {
        let b = modulate(&[vec![0, 1]], Modulation::Bpsk, 4.0).unwrap();
        assert_eq!(b.symbols[(0, 0)], C64::new(2.0, 0.0));
        assert_eq!(b.symbols[(0, 1)], C64::new(-2.0, 0.0));
        let q = modulate(&[vec![0, 0, 1, 1, 0, 1]], Modulation::Qam4, 2.0).unwrap();
        for (z, want) in q.symbols.iter().zip([C64::new(1.0, 1.0), C64::new(-1.0, -1.0), C64::new(1.0, -1.0)]) {
            assert!((z - want).norm() < 1e-12);
        }
        assert!(matches!(
            modulate(&[vec![0, 1, 1]], Modulation::Qam4, 1.0),
            Err(Error::MalformedBits { len: 3, bits_per_symbol: 2 })
        ));
    }

    #[test]
    fn qam16_average_power() {
        let mut rng = rng_from_seed(1);
        let block = random_block(&mut rng, 1, 100_000, Modulation::Qam16, 3.0);
        let p = block.symbols.iter().map(|z| z.norm_sqr()).sum::<f64>() / 100_000.0;
        assert!((p / 3.0 - 1.0).abs() < 0.01, "{p}");
    }

    #[test]
    fn slicing_inverts_mapping() {
        for m in [Modulation::Bpsk, Modulation::Qam4, Modulation::Qam16] {
            let bps = m.bits_per_symbol();
            for word in 0..(1u8 << bps) {
                let bits: Vec<u8> = (0..bps).map(|i| (word >> i) & 1).collect();
                let mut out = vec![];
                m.slice(m.map(&bits), &mut out);
                assert_eq!(out, bits, "{m}");
            }
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        let levels: Vec<[u8; 2]> = [-3.0, -1.0, 1.0, 3.0].iter().map(|&x| pam4_bits(x)).collect();
        for w in levels.windows(2) {
            let d = (w[0][0] ^ w[1][0]) + (w[0][1] ^ w[1][1]);
            assert_eq!(d, 1);
        }
    }

    #[test]
    fn single_served_zf_equals_mrc() {
        let g = random_g(2, 4, 3);
        let betas = [1.0; 3];
        let zf = build_combiner(CombinerKind::Zf, &g, &[1], &betas, &link()).unwrap();
        let mrc = build_combiner(CombinerKind::Mrc, &g, &[1], &betas, &link()).unwrap();
        assert!(max_abs_diff(&zf.c, &mrc.c) < 1e-12);
    }

    #[test]
    fn zf_nulls_served_interference() {
        let g = random_g(3, 6, 4);
        let zf = build_combiner(CombinerKind::Zf, &g, &[0, 2, 3], &[1.0; 4], &link()).unwrap();
        let g_s = select_columns(&g, &[0, 2, 3]);
        assert!(max_abs_diff(&(zf.c.adjoint() * g_s), &CMatrix::identity(3, 3)) < 1e-10);
    }

    #[test]
    fn zf_rank_deficiency_and_fallback() {
        let mut g = random_g(4, 4, 2);
        let col = g.column(0).into_owned();
        g.set_column(1, &col);
        assert!(matches!(
            build_combiner(CombinerKind::Zf, &g, &[0, 1], &[1.0; 2], &link()),
            Err(Error::Singular(_))
        ));
        let wide = random_g(5, 2, 4);
        let c = build_combiner(CombinerKind::Zf, &wide, &[0, 1, 2], &[1.0; 4], &link()).unwrap();
        assert_eq!(c.kind, CombinerKind::Mmse);
    }

    #[test]
    fn mmse_matches_normal_equations() {
        // linear MMSE of x_k from y = G x + w, E|x|^2 = P_D, w white with
        // power P_D * sum(err) + N0, assembled entry by entry
        let g = random_g(6, 2, 2);
        let betas = [0.8, 1.3];
        let l = link();
        let err: f64 = betas
            .iter()
            .map(|&b| crate::estimators::mmse_error_stats(b, l.p_t, l.tau_t, l.noise).error_var)
            .sum();
        let comb = build_combiner(CombinerKind::Mmse, &g, &[0, 1], &betas, &l).unwrap();
        for k in 0..2 {
            let mut cy = CMatrix::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    let mut v = C64::from(0.0);
                    for u in 0..2 {
                        v += g[(i, u)] * g[(j, u)].conj() * l.p_d;
                    }
                    if i == j {
                        v += C64::from(l.p_d * err + l.noise);
                    }
                    cy[(i, j)] = v;
                }
            }
            let cyx = CMatrix::from_fn(2, 1, |i, _| g[(i, k)] * l.p_d);
            let w = solve_general(&cy, &cyx).unwrap();
            assert!(max_abs_diff(&w.column(0), &comb.c.column(k)) < 1e-10);
        }
    }

    #[test]
    fn mmse_both_dimensions_agree() {
        let betas = [1.0, 0.5, 2.0];
        let tall = random_g(7, 5, 3);
        let direct = {
            let r = C64::from(link().mmse_loading(&betas));
            let a = &tall * tall.adjoint() + CMatrix::identity(5, 5) * r;
            solve_general(&a, &select_columns(&tall, &[0, 2])).unwrap()
        };
        let c = build_combiner(CombinerKind::Mmse, &tall, &[0, 2], &betas, &link()).unwrap();
        assert!(max_abs_diff(&c.c, &direct) < 1e-12);
    }

    #[test]
    fn mmse_collinear_with_mrc_in_matched_filter_limit() {
        let g = random_g(8, 4, 1);
        let l = LinkParams { p_t: 1e12, tau_t: 10, p_d: 1e12, noise: 1e-3 };
        let mmse = build_combiner(CombinerKind::Mmse, &g, &[0], &[1.0], &l).unwrap();
        let mrc = build_combiner(CombinerKind::Mrc, &g, &[0], &[1.0], &l).unwrap();
        let cos = mmse.c.column(0).dotc(&mrc.c.column(0)).norm() / (mmse.c.column(0).norm() * mrc.c.column(0).norm());
        assert!((cos - 1.0).abs() < 1e-12);
    }

    fn run_scalar(p_d: f64, n0: f64, gain: f64, n_bits: usize, seed: u64) -> Detection {
        let mut rng = rng_from_seed(seed);
        let block = random_block(&mut rng, 1, n_bits, Modulation::Bpsk, p_d);
        let g = CMatrix::from_element(1, 1, C64::from(gain));
        let obs = observe(&g, &block.symbols, n0, Phase::Data, &mut rng).unwrap();
        let est = CMatrix::from_element(1, 1, C64::from(1.0));
        let comb = build_combiner(CombinerKind::Mrc, &est, &[0], &[1.0], &link()).unwrap();
        detect(&obs, &comb, &block, 0).unwrap()
    }

    #[test]
    fn noiseless_detection_is_perfect() {
        assert_eq!(run_scalar(1.0, 0.0, 1.0, 1000, 9).bit_errors, 0);
    }

    #[test]
    fn pure_noise_is_a_coin_flip() {
        let d = run_scalar(1.0, 1.0, 0.0, 10_000, 10);
        assert!((d.ber - 0.5).abs() < 0.02, "{}", d.ber);
    }

    #[test]
    fn awgn_bpsk_matches_q_function() {
        let gamma: f64 = 2.0;
        let d = run_scalar(gamma, 1.0, 1.0, 200_000, 11);
        let expect = q_function((2.0 * gamma).sqrt());
        assert!((d.ber / expect - 1.0).abs() < 0.05, "{} vs {expect}", d.ber);
    }

    #[test]
    fn detect_checks_phase_and_membership() {
        let mut rng = rng_from_seed(12);
        let block = random_block(&mut rng, 2, 8, Modulation::Bpsk, 1.0);
        let g = random_g(13, 2, 2);
        let obs = observe(&g, &block.symbols, 0.1, Phase::Training, &mut rng).unwrap();
        let comb = build_combiner(CombinerKind::Mrc, &g, &[0], &[1.0; 2], &link()).unwrap();
        assert!(matches!(detect(&obs, &comb, &block, 0), Err(Error::WrongPhase { .. })));
        let obs = Observation { phase: Phase::Data, ..obs };
        assert!(detect(&obs, &comb, &block, 1).is_err());
    }

    #[test]
    fn mmse_sinr_forms_agree() {
        for seed in 0..20 {
            let g = random_g(100 + seed, 2, 3);
            let betas = [0.7, 1.1, 0.4];
            let l = link();
            let comb = build_combiner(CombinerKind::Mmse, &g, &[0, 1, 2], &betas, &l).unwrap();
            let loading = l.mmse_loading(&betas);
            for k in 0..3 {
                let a = mmse_sinr(&g, k, 1.0 / loading).unwrap();
                let b = output_sinr(&comb.c.column(k).into_owned(), &g, k, loading);
                assert!((a - b).abs() < 1e-9 * a.max(1.0), "{a} vs {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_decisions(seed in 0u64..1000, scale in 1e-3f64..1e3, kind in 0usize..3) {
            let kind = [CombinerKind::Mrc, CombinerKind::Zf, CombinerKind::Mmse][kind];
            let mut rng = rng_from_seed(seed);
            let block = random_block(&mut rng, 2, 32, Modulation::Bpsk, 1.0);
            let g = random_g(seed + 1, 3, 2);
            let obs = observe(&g, &block.symbols, 0.5, Phase::Data, &mut rng).unwrap();
            let comb = build_combiner(kind, &g, &[0, 1], &[1.0; 2], &link()).unwrap();
            let scaled = Combiner { c: &comb.c * C64::from(scale), ..comb.clone() };
            // decisions use the sign of c^H y only; an unnormalized positive
            // rescale of the column leaves them unchanged
            let unit = Combiner { gain: vec![C64::from(1.0); 2], ..comb.clone() };
            let unit_scaled = Combiner { gain: vec![C64::from(1.0); 2], ..scaled };
            prop_assert_eq!(detect(&obs, &unit, &block, 1).unwrap().bits, detect(&obs, &unit_scaled, &block, 1).unwrap().bits);
        }
    }
}
