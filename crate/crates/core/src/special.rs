//! Scalar special functions: the standard normal family and the modified
//! Bessel function of the second kind.

use libm::{erfc, lgamma};
use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

pub fn norm_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal distribution function Φ(z).
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(z), accurate for large positive z.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// log Φ(z), finite for every finite z.
pub fn norm_log_cdf(z: f64) -> f64 {
    if z > -37.0 {
        norm_cdf(z).ln()
    } else {
        // Asymptotic Mills-ratio series; the first omitted term is below 1e-16
        // for |z| ≥ 37.
        let w = 1.0 / (z * z);
        let series = 1.0
            - w * (1.0 - 3.0 * w * (1.0 - 5.0 * w * (1.0 - 7.0 * w * (1.0 - 9.0 * w * (1.0 - 11.0 * w)))));
        -0.5 * z * z - (-z).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// log(1 − Φ(z)).
pub fn norm_log_sf(z: f64) -> f64 {
    norm_log_cdf(-z)
}

/// Inverse of Φ (Wichura's AS241, relative accuracy about 1e-16).
///
/// Returns ∓∞ at the endpoints and NaN outside [0, 1].
pub fn norm_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
                + 67265.770_927_008_7)
                * r
                + 45921.953_931_549_87)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545 * r + 28729.085_735_721_943) * r
                + 39307.895_800_092_71)
                * r
                + 21213.794_301_586_597)
                * r
                + 5394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_91)
                * r
                + 1.0);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let z = tail_quantile(tail);
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// Φ⁻¹(1 − q) computed from the upper-tail probability q without forming 1 − q.
pub fn norm_quantile_upper(q: f64) -> f64 {
    if q < 0.5 {
        if q <= 0.0 {
            return if q == 0.0 { f64::INFINITY } else { f64::NAN };
        }
        if 0.5 - q <= 0.425 {
            return norm_quantile(1.0 - q);
        }
        tail_quantile(q)
    } else {
        -norm_quantile(q)
    }
}

/// Positive z with 1 − Φ(z) = tail, for tail < 0.075.
fn tail_quantile(tail: f64) -> f64 {
    let r = (-tail.ln()).sqrt();
    if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    }
}

/// Exponentially scaled modified Bessel function of the second kind,
/// e^x K_ν(x), for x > 0.
///
/// Uses the trapezoidal rule on K_ν(x) = ∫₀^∞ exp(−x cosh t) cosh(νt) dt, which
/// converges geometrically because the integrand is analytic in a strip. The
/// step shrinks like 1/√x so that the peak at t = 0 stays resolved.
pub fn bessel_k_scaled(nu: f64, x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let nu = nu.abs();
    let h = (0.5 / x.sqrt()).min(0.1);
    // exp(−x (cosh t − 1)) cosh(νt), with cosh t − 1 = 2 sinh²(t/2).
    let term = |t: f64| {
        let s = (0.5 * t).sinh();
        (-2.0 * x * s * s).exp() * (nu * t).cosh()
    };
    let mut sum = 0.5 * term(0.0);
    let mut k = 1u32;
    loop {
        let v = term(k as f64 * h);
        sum += v;
        if v < 1e-18 * sum || k > 200_000 {
            break;
        }
        k += 1;
    }
    sum * h
}

/// Modified Bessel function of the second kind K_ν(x), x > 0.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    bessel_k_scaled(nu, x) * (-x).exp()
}

/// x^ν K_ν(x) / (Γ(ν) 2^{ν−1}), the normalized Matérn shape; equals 1 at x = 0.
pub fn matern_shape(nu: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_val = nu * x.ln() + bessel_k_scaled(nu, x).ln() - x - lgamma(nu) - (nu - 1.0) * LN_2;
    log_val.exp().min(1.0)
}

/// log of the standard Lévy(0, c) density with c = 1/2:
/// f(r) = (4π r³)^{-1/2} exp(−1/(4r)).
pub(crate) fn levy_half_log_pdf(r: f64) -> f64 {
    -0.5 * (4.0 * PI * r * r * r).ln() - 0.25 / r
}

pub(crate) const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
