//! Normal-distribution helpers, truncated sampling and small numerical
//! utilities shared by the sampler and the summaries.

use std::f64::consts::{LN_2, PI, SQRT_2};

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub type ChainRng = rand_chacha::ChaCha8Rng;

/// Deterministic stream `index` of the generator family keyed by `seed`.
pub fn substream(seed: u64, index: u64) -> ChainRng {
    use rand::SeedableRng;
    let mut rng = ChainRng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    Normal::standard().inverse_cdf(p)
}

/// log Phi(x), accurate in both tails.
pub fn log_ndtr(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > 0.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else if x > -30.0 {
        (0.5 * erfc(-x / SQRT_2)).ln()
    } else {
        // asymptotic series of the Mills ratio
        let z2 = 1.0 / (x * x);
        let series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2 + 105.0 * z2 * z2 * z2 * z2;
        -0.5 * x * x - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

/// log(1 - exp(d)) for d <= 0.
fn ln_1m_exp(d: f64) -> f64 {
    if d > -LN_2 {
        (-d.exp_m1()).ln()
    } else {
        (-d.exp()).ln_1p()
    }
}

/// log(Phi(b) - Phi(a)) for a <= b, with infinite endpoints allowed.
pub fn log_diff_ndtr(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        return log_diff_ndtr(-b, -a);
    }
    if b <= 0.0 {
        let lb = log_ndtr(b);
        if a == f64::NEG_INFINITY {
            return lb;
        }
        let la = log_ndtr(a);
        return lb + ln_1m_exp(la - lb);
    }
    // a < 0 < b
    (-(norm_cdf(a) + norm_cdf(-b))).ln_1p()
}

/// One draw from N(mean, sd^2) restricted to [lower, upper].
pub fn truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(lower <= upper) {
        return Err(Error::Infeasible { lower, upper });
    }
    if lower == upper {
        return Ok(lower);
    }
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let z = std_truncated(a, b, rng);
    Ok((mean + sd * z).clamp(lower, upper))
}

fn std_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a > 0.0 {
        return -std_truncated(-b, -a, rng);
    }
    if b > 0.0 || b >= -5.0 {
        let pa = norm_cdf(a);
        let pb = norm_cdf(b);
        if pb > pa {
            let u: f64 = rng.random();
            return norm_ppf(pa + u * (pb - pa)).clamp(a, b);
        }
    }
    // deep left tail: mirror into the right tail and use rejection
    -tail_rejection(-b, -a, rng)
}

/// Exact sampler for the standard normal on [lo, hi] with lo > 0, using
/// an exponential proposal for wide intervals and a uniform one for narrow.
fn tail_rejection<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(lo > 0.0 && hi > lo);
    if hi - lo <= 2.0 / lo {
        loop {
            let u: f64 = rng.random();
            let x = lo + u * (hi - lo);
            let v: f64 = rng.random();
            if v.ln() <= -0.5 * (x - lo) * (x + lo) {
                return x;
            }
        }
    }
    let rate = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let x = lo + e / rate;
        if x > hi {
            continue;
        }
        let v: f64 = rng.random();
        if v.ln() <= -0.5 * (x - rate) * (x - rate) {
            return x;
        }
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn chi_squared<R: Rng + ?Sized>(df: f64, rng: &mut R) -> f64 {
    ChiSquared::new(df)
        .expect("positive degrees of freedom")
        .sample(rng)
}

/// Quantile of the chi-square distribution.
pub fn chi_squared_ppf(df: f64, p: f64) -> f64 {
    use statrs::distribution::ChiSquared as Chi;
    Chi::new(df).expect("positive degrees of freedom").inverse_cdf(p)
}

/// Linear-interpolation empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    if hi == lo || frac == 0.0 {
        sorted[lo]
    } else {
        // convex-combination form keeps the result monotone in the data
        (1.0 - frac) * sorted[lo] + frac * sorted[hi]
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Constant variance inflation for constrained leaf means: pi / (pi - 1).
pub fn constrained_variance_factor() -> f64 {
    PI / (PI - 1.0)
}
