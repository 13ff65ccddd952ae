//! Special functions and quadrature backing the closed-form BER.

use crate::error::{Error, Result};

/// Gaussian tail probability `Q(x) = P[N(0,1) > x]`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma_r(x).0
}

/// `(ln|Gamma(x)|, sign Gamma(x))`, sign 0 at the poles.
fn ln_gamma_signed(x: f64) -> (f64, f64) {
    if x <= 0.0 && x.fract() == 0.0 {
        return (f64::INFINITY, 0.0);
    }
    let (v, s) = libm::lgamma_r(x);
    (v, if s < 0 { -1.0 } else { 1.0 })
}

const MAX_TERMS: usize = 1_000_000;
const SERIES_EPS: f64 = 1e-17;
/// Above this argument the direct series is replaced by the `1 - z` connection.
const CONNECTION_THRESHOLD: f64 = 0.9;

fn series(a: f64, b: f64, c: f64, z: f64) -> Result<f64> {
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 0..MAX_TERMS {
        let nf = n as f64;
        term *= (a + nf) * (b + nf) / ((c + nf) * (nf + 1.0)) * z;
        sum += term;
        if term == 0.0 || (term.abs() <= SERIES_EPS * sum.abs() && n > 2) {
            return Ok(sum);
        }
        if !sum.is_finite() {
            break;
        }
    }
    Err(Error::NonConvergence {
        what: "hypergeometric series",
        iterations: MAX_TERMS,
    })
}

fn is_integer(x: f64) -> bool {
    (x - x.round()).abs() < 1e-9
}

/// Gauss `1 - z` connection formula; `None` when it does not apply or loses
/// too much to cancellation.
fn connection(a: f64, b: f64, c: f64, z: f64) -> Option<f64> {
    let d = c - a - b;
    if is_integer(d) {
        return None;
    }
    let w = 1.0 - z;
    let c1 = a + b - c + 1.0;
    let c2 = d + 1.0;
    if (c1 <= 0.0 && is_integer(c1)) || (c2 <= 0.0 && is_integer(c2)) {
        return None;
    }
    let (lg_c, s_c) = ln_gamma_signed(c);
    let coeff = |num: f64, den1: f64, den2: f64| -> f64 {
        let (l_num, s_num) = ln_gamma_signed(num);
        let (l_d1, s_d1) = ln_gamma_signed(den1);
        let (l_d2, s_d2) = ln_gamma_signed(den2);
        if s_d1 == 0.0 || s_d2 == 0.0 {
            return 0.0; // 1/Gamma at a pole
        }
        s_c * s_num * s_d1 * s_d2 * (lg_c + l_num - l_d1 - l_d2).exp()
    };
    let t1 = coeff(d, c - a, c - b) * series(a, b, c1, w).ok()?;
    let t2 = w.powf(d) * coeff(-d, a, b) * series(c - a, c - b, c2, w).ok()?;
    let value = t1 + t2;
    let scale = t1.abs() + t2.abs();
    if !value.is_finite() || value.abs() < 1e-8 * scale {
        return None;
    }
    Some(value)
}

/// Gauss hypergeometric function `2F1(a, b; c; z)` for real `z < 1`.
pub fn hyp2f1(a: f64, b: f64, c: f64, z: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!("2F1 needs c > 0, got {c}")));
    }
    if !(z < 1.0) || z <= -1.0 {
        return Err(Error::InvalidConfig(format!("2F1 needs -1 < z < 1, got {z}")));
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    if z > CONNECTION_THRESHOLD {
        if let Some(v) = connection(a, b, c, z) {
            return Ok(v);
        }
    }
    series(a, b, c, z)
}

// 15-point Kronrod nodes on [0, 1] (symmetric), with 7-point Gauss weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]`.
///
/// Stops when the summed error estimate is below `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    const MAX_INTERVALS: usize = 4000;
    let (v, e) = gk15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    loop {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        if pieces.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature(format!(
                "error estimate {err:e} above tolerance after {MAX_INTERVALS} subintervals"
            )));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
}

/// `E[Q(sqrt(X))]` for `X ~ Gamma(shape, scale)` by direct quadrature.
///
/// The integral is taken in `s = x / scale`. On `[0, 1]` the substitution
/// `w = s^shape` removes the `s^(shape-1)` endpoint singularity; `[1, inf)` is
/// covered by doubling intervals until they stop contributing.
pub fn gamma_tail_expectation(shape: f64, scale: f64, rel_tol: f64) -> Result<f64> {
    if !(shape > 0.0) || !(scale >= 0.0) {
        return Err(Error::Quadrature(format!("bad Gamma parameters ({shape}, {scale})")));
    }
    if scale == 0.0 {
        return Ok(0.5);
    }
    let lg = ln_gamma(shape);
    let head = integrate(
        |w: f64| {
            let s = w.powf(1.0 / shape);
            (-s).exp() * q_function((scale * s).sqrt())
        },
        0.0,
        1.0,
        1e-300,
        rel_tol,
    )? * (-ln_gamma(shape + 1.0)).exp();

    let density = |s: f64| {
        let q = q_function((scale * s).sqrt());
        if q == 0.0 {
            return 0.0;
        }
        ((shape - 1.0) * s.ln() - s - lg + q.ln()).exp()
    };
    let mut total = head;
    let mut lo = 1.0;
    let peak = (shape - 1.0).max(1.0);
    for _ in 0..64 {
        let hi = 2.0 * lo;
        let part = integrate(density, lo, hi, 1e-300, rel_tol)?;
        total += part;
        if lo > peak && part <= 1e-18 * total {
            return Ok(total);
        }
        lo = hi;
    }
    Err(Error::Quadrature("Gamma tail did not decay".into()))
}
