//! Numeric kernels shared by every other module: seeded random streams,
//! the chi-square quantile, isotropic Gaussian log-densities and a stable
//! log-sum-exp.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A reproducible random stream keyed by `(seed, stream_id)`.
///
/// Streams with the same key replay the same sequence. Distinct stream ids
/// select disjoint ChaCha streams, so they can be handed to independent
/// consumers (one per epoch, per purpose, per sweep entry) without any
/// shared state.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// A fresh stream whose id is derived from this stream's id and `key`.
    /// The parent stream's position is not consumed.
    pub fn substream(&self, key: u64) -> RngStream {
        RngStream::new(self.seed, mix(self.stream ^ mix(key.wrapping_add(0x51_7c_c1_b7))))
    }

    /// Substream keyed by a tuple such as `(epoch, purpose)`.
    pub fn substream2(&self, a: u64, b: u64) -> RngStream {
        self.substream(mix(a).rotate_left(17) ^ b)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

// splitmix64 finalizer
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A probability in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidProbability(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9), for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * LN_2PI + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)` for `a > 0`, `x >= 0`.
///
/// Power series below `x < a + 1`, Lentz continued fraction for the upper
/// tail otherwise.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    let log_prefactor = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefactor).exp().min(1.0)
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        let q = (h.ln() + log_prefactor).exp();
        (1.0 - q).max(0.0)
    }
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi2_cdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        regularized_gamma_p(dof as f64 / 2.0, x / 2.0)
    }
}

/// Quantile of the chi-square distribution: the `x` with
/// `P(dof/2, x/2) = alpha`, found by bisection.
pub fn chi2_quantile(dof: usize, alpha: Probability) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidDof(dof));
    }
    let alpha = alpha.value();
    if alpha >= 1.0 {
        return Err(Error::QuantileDiverges);
    }
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while chi2_cdf(dof, hi) < alpha {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_cdf(dof, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Log-density of `N(mean, var * I)` at `x`.
pub fn gaussian_logpdf(x: &[f64], mean: &[f64], var: f64) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            got: x.len(),
        });
    }
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(isotropic_logpdf_sq(sq, x.len(), var))
}

/// `-(d/2) ln(2 pi var) - sq / (2 var)`, given the squared distance.
pub fn isotropic_logpdf_sq(sq_dist: f64, dim: usize, var: f64) -> f64 {
    -0.5 * dim as f64 * (LN_2PI + var.ln()) - sq_dist / (2.0 * var)
}

/// `ln sum exp(v)`, shifted by the maximum so finite inputs never overflow.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let max = values
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or(Error::EmptyInput("log_sum_exp"))?;
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if !max.is_finite() {
        return Ok(max);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// `dim` i.i.d. standard normal draws (ziggurat).
pub fn sample_standard_normal(rng: &mut RngStream, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Sample mean and unbiased standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    #[test]
    fn chi2_dof2_closed_form() {
        let q = chi2_quantile(2, p(0.9)).unwrap();
        assert!((q - 4.605_170_186).abs() < 1e-9, "{q}");
        for a in [0.5, 0.9, 0.99, 0.999] {
            let q = chi2_quantile(2, p(a)).unwrap();
            let exact = -2.0 * (1.0 - a as f64).ln();
            assert!((q - exact).abs() < 1e-9, "alpha {a}: {q} vs {exact}");
        }
    }

    #[test]
    fn chi2_zero_alpha_and_errors() {
        assert_eq!(chi2_quantile(7, p(0.0)).unwrap(), 0.0);
        assert!(matches!(
            chi2_quantile(3, p(1.0)),
            Err(Error::QuantileDiverges)
        ));
        assert!(matches!(chi2_quantile(0, p(0.5)), Err(Error::InvalidDof(0))));
        assert!(Probability::new(1.5).is_err());
        assert!(Probability::new(-0.1).is_err());
    }

    #[test]
    fn chi2_dof10_against_series() {
        // Integer-dof-even closed form of the CDF:
        // P(k, y) = 1 - e^{-y} sum_{j<k} y^j / j!  for k = dof/2.
        let q = chi2_quantile(10, p(0.99)).unwrap();
        let y = q / 2.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..5 {
            term *= y / j as f64;
            sum += term;
        }
        let cdf = 1.0 - (-y).exp() * sum;
        assert!((cdf - 0.99).abs() < 1e-12);
        assert!((q - 23.209_251_158_954_356).abs() < 1e-8, "{q}");
    }

    #[test]
    fn chi2_monotone_in_alpha() {
        for dof in [1, 2, 5, 10, 20] {
            let mut prev = -1.0;
            for i in 0..100 {
                let a = i as f64 / 100.0;
                let q = chi2_quantile(dof, p(a)).unwrap();
                assert!(q > prev || (i == 0 && q == 0.0), "dof {dof} alpha {a}");
                prev = q;
            }
        }
    }

    #[test]
    fn chi2_hits_cdf_target() {
        for dof in 1..=20 {
            for a in [0.1, 0.5, 0.9, 0.99, 0.999] {
                let q = chi2_quantile(dof, p(a)).unwrap();
                let lo = chi2_cdf(dof, q - 1e-10);
                let hi = chi2_cdf(dof, q + 1e-10);
                assert!(lo <= a + 1e-12 && hi >= a - 1e-12, "dof {dof} alpha {a}");
            }
        }
    }

    #[test]
    fn gaussian_logpdf_examples() {
        let v = gaussian_logpdf(&[0.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((v + 1.837_877).abs() < 1e-6);
        let var = 2.7;
        let v = gaussian_logpdf(&[0.3], &[0.3], var).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI * var).ln()).abs() < 1e-14);
        let v = gaussian_logpdf(&[1.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((v - (-1.837_877_066_409_345 - 0.5)).abs() < 1e-12);
        assert!(gaussian_logpdf(&[1.0], &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn gaussian_logpdf_integrates_to_one() {
        let n = 16_001;
        let h = 16.0 / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let x = -8.0 + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            total += w * gaussian_logpdf(&[x], &[0.0], 1.0).unwrap().exp();
        }
        assert!((total * h - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[-3.25]).unwrap(), -3.25);
        let v = log_sum_exp(&[-1000.0, -1000.5]).unwrap();
        assert!((v - (-999.525_923_015_819_9)).abs() < 1e-9, "{v}");
        assert!(log_sum_exp(&[]).is_err());
        assert!(log_sum_exp(&[1e308, 1e308]).unwrap().is_finite());
    }

    proptest! {
        #[test]
        fn log_sum_exp_shift_equivariant(
            v in proptest::collection::vec(-500.0f64..500.0, 1..20),
            c in -1e3f64..1e3,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = log_sum_exp(&shifted).unwrap();
            let b = log_sum_exp(&v).unwrap() + c;
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn normal_sampling_is_deterministic() {
        let a = sample_standard_normal(&mut RngStream::new(3, 9), 16);
        let b = sample_standard_normal(&mut RngStream::new(3, 9), 16);
        let c = sample_standard_normal(&mut RngStream::new(3, 10), 16);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let s = RngStream::new(3, 9);
        let x = sample_standard_normal(&mut s.substream(4), 4);
        let y = sample_standard_normal(&mut s.substream(4), 4);
        assert_eq!(x, y);
    }

    #[test]
    fn normal_sampling_moments() {
        let mut rng = RngStream::new(11, 0);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let z = sample_standard_normal(&mut rng, 2);
            for k in 0..2 {
                sum[k] += z[k];
                sq[k] += z[k] * z[k];
            }
        }
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "{mean}");
            assert!((var - 1.0).abs() < 0.02, "{var}");
        }
        let inside = (0..n)
            .filter(|_| sample_standard_normal(&mut rng, 1)[0].abs() < 1.959_964)
            .count();
        assert!((inside as f64 / n as f64 - 0.95).abs() < 0.006);
    }
}
