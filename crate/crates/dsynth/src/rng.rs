//! Seeded random streams and the fixed uniform/normal transforms used everywhere.
//!
//! Every random quantity in this crate comes from a [`ChaCha8Rng`] consumed only
//! through the helpers below, so a (seed, code path) pair pins the output bit for
//! bit across platforms and thread counts:
//!
//! * uniforms are built from the top 53 bits of `next_u64`,
//! * normals go through the AS 241 inverse CDF (Wichura's PPND16) applied to a
//!   strictly interior uniform, never through a platform default transform,
//! * bounded integers use unbiased rejection sampling on `next_u64`.
//!
//! Independent streams are derived with a SplitMix64 mix of the root seed and a
//! list of tag words (phase, grid index, run index, ...); adding a new tagged
//! phase never perturbs the streams of existing phases.

use rand::{RngCore, SeedableRng};
pub use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer (Steele, Lea & Flood 2014). Bijective on `u64`.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed and an ordered list of tag words.
pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(root);
    for &part in parts {
        state = splitmix64(state ^ splitmix64(part));
    }
    state
}

/// A fresh stream for the given derived seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw on `[0, 1)` with 53-bit resolution.
#[inline]
pub fn uniform53(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw on the open interval `(0, 1)`: `(k + 0.5) / 2^53` for a 53-bit `k`.
///
/// Strict interiority keeps the inverse normal CDF finite.
#[inline]
pub fn uniform_open(rng: &mut ChaCha8Rng) -> f64 {
    (((rng.next_u64() >> 11) as f64) + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Normal draw via the inverse CDF: `mean + sd * ppnd16(u)` with `u` open-uniform.
#[inline]
pub fn draw_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    mean + sd * normal_quantile(uniform_open(rng))
}

/// Unbiased uniform integer in `[0, bound)` by rejection on `next_u64`.
///
/// Panics if `bound == 0`.
#[inline]
pub fn uniform_below(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    assert!(bound > 0, "uniform_below: bound must be positive");
    // Reject draws below 2^64 mod bound so every residue is equally likely.
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let r = rng.next_u64();
        if r >= threshold {
            return r % bound;
        }
    }
}

/// In-place Fisher-Yates shuffle driven by [`uniform_below`].
pub fn shuffle<T>(rng: &mut ChaCha8Rng, slice: &mut [T]) {
    for i in (1..slice.len()).rev() {
        let j = uniform_below(rng, (i + 1) as u64) as usize;
        slice.swap(i, j);
    }
}

/// Standard normal quantile function, algorithm AS 241 (Wichura 1988, PPND16).
///
/// Accurate to about 1e-16 relative error over (0, 1); returns +/- infinity at
/// the endpoints.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(r, &A_COEF) / horner(r, &B_COEF);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        let r = r - 1.6;
        horner(r, &C_COEF) / horner(r, &D_COEF)
    } else {
        let r = r - 5.0;
        horner(r, &E_COEF) / horner(r, &F_COEF)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

#[inline]
fn horner(x: f64, coef: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &c in coef.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

const A_COEF: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B_COEF: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C_COEF: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D_COEF: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E_COEF: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F_COEF: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn quantile_matches_pinned_constants() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert_eq!(normal_quantile(0.5), 0.0);
        assert!((normal_quantile(0.75) - 0.674_489_750_196_081_7).abs() < 1e-12);
    }

    #[test]
    fn quantile_is_symmetric_and_inverts_cdf() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        for &p in &[1e-12, 1e-6, 0.01, 0.2, 0.5, 0.8, 0.99, 1.0 - 1e-6] {
            let z = normal_quantile(p);
            // Exact symmetry only away from the tails, where 1 - p is sharp.
            if p >= 1e-6 {
                assert!((z + normal_quantile(1.0 - p)).abs() < 1e-9, "asymmetry at p={p}");
            }
            assert!((normal.cdf(z) - p).abs() < 1e-9, "round trip failed at p={p}");
        }
        assert!((normal_quantile(1e-12) + 7.034_483_825_301_131).abs() < 1e-9);
        assert_eq!(normal_quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(normal_quantile(1.0), f64::INFINITY);
    }

    #[test]
    fn derived_seeds_depend_on_every_part() {
        let a = derive_seed(7, &[1, 2, 3]);
        assert_eq!(a, derive_seed(7, &[1, 2, 3]));
        assert_ne!(a, derive_seed(7, &[1, 2, 4]));
        assert_ne!(a, derive_seed(7, &[1, 2]));
        assert_ne!(a, derive_seed(8, &[1, 2, 3]));
        assert_ne!(a, derive_seed(7, &[2, 1, 3]));
    }

    #[test]
    fn uniform_below_is_in_range_and_deterministic() {
        let mut rng = stream(11);
        for _ in 0..1000 {
            assert!(uniform_below(&mut rng, 7) < 7);
        }
        let mut a = stream(3);
        let mut b = stream(3);
        for _ in 0..100 {
            assert_eq!(uniform_below(&mut a, 1000), uniform_below(&mut b, 1000));
        }
    }

    #[test]
    fn normal_draws_have_expected_moments() {
        let mut rng = stream(99);
        let k = 200_000;
        let draws: Vec<f64> = (0..k).map(|_| draw_normal(&mut rng, 3.0, 2.0)).collect();
        let mean = draws.iter().sum::<f64>() / k as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k as f64;
        assert!((mean - 3.0).abs() < 5.0 * 2.0 / (k as f64).sqrt());
        assert!((var - 4.0).abs() < 0.1);
    }
}
