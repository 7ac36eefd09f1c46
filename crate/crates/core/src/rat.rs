//! Exact rational arithmetic helpers.
//!
//! Degree cutoffs (ψ, φ, δ) and all partition-function style sums are kept
//! as exact rationals; floating point only enters when a logarithm or an
//! `exp` is genuinely required (bound evaluation, reports).

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{validation, Result};

pub type Rat = num_rational::BigRational;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

pub fn rat_usize(n: usize) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Parse a decimal literal (optionally with an exponent, e.g. `1.5`, `2`,
/// `1e-3`) into an exact rational.
pub fn parse_decimal(s: &str) -> Result<Rat> {
    let s = s.trim();
    if s.is_empty() {
        return validation("empty numeric literal");
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => {
            let e: i32 = s[i + 1..]
                .parse()
                .map_err(|_| crate::error::Error::Validation(format!("bad exponent in {s:?}")))?;
            (&s[..i], e)
        }
        None => (s, 0),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
        None => (mantissa, ""),
    };
    let digits: String = format!("{int_part}{frac_part}");
    if digits.is_empty() || digits == "-" || digits == "+" {
        return validation(format!("bad numeric literal {s:?}"));
    }
    let num: BigInt = digits
        .parse()
        .map_err(|_| crate::error::Error::Validation(format!("bad numeric literal {s:?}")))?;
    let scale = frac_part.len() as i32 - exp;
    let ten = BigInt::from(10);
    let mut value = Rat::from_integer(num);
    if scale > 0 {
        value /= Rat::from_integer(ten.pow(scale as u32));
    } else if scale < 0 {
        value *= Rat::from_integer(ten.pow((-scale) as u32));
    }
    Ok(value)
}

pub fn to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or_else(|| ln_rat_via_bits(r))
}

fn ln_rat_via_bits(r: &Rat) -> f64 {
    // Fallback for magnitudes outside f64 range; only the sign and rough
    // magnitude matter for reports.
    if r.is_zero() {
        return 0.0;
    }
    let sign = if r.is_negative() { -1.0 } else { 1.0 };
    sign * (ln_rat(&r.abs())).exp()
}

/// Natural log of a positive rational, robust to magnitudes beyond f64.
pub fn ln_rat(r: &Rat) -> f64 {
    assert!(r.is_positive(), "ln of non-positive rational");
    ln_bigint(r.numer()) - ln_bigint(r.denom())
}

fn ln_bigint(n: &BigInt) -> f64 {
    let n = n.abs();
    if let Some(v) = n.to_f64() {
        if v.is_finite() && v > 0.0 {
            return v.ln();
        }
    }
    let bits = n.bits();
    // keep the top 64 bits as a mantissa
    let shift = bits.saturating_sub(64);
    let top = (&n >> shift).to_f64().unwrap_or(1.0);
    top.ln() + (shift as f64) * std::f64::consts::LN_2
}

/// `r^k` for non-negative integer k.
pub fn rat_pow(r: &Rat, k: usize) -> Rat {
    let mut acc = Rat::one();
    for _ in 0..k {
        acc *= r;
    }
    acc
}

/// Natural log of `binom(n, <= k)` evaluated numerically. `n` and `k` may be
/// real-valued (they come from analytic cost expressions); `k` is floored,
/// and a non-positive `k` gives log(1) = 0.
pub fn log_binom_le(n: f64, k: f64) -> f64 {
    let k = k.floor();
    if k <= 0.0 || n <= 0.0 {
        return 0.0;
    }
    let kmax = k.min(n) as u64;
    let mut terms = Vec::with_capacity(kmax as usize + 1);
    for i in 0..=kmax {
        terms.push(log_binom(n, i as f64));
    }
    log_sum_exp(&terms)
}

/// log of the generalized binomial coefficient C(n, k) for real n >= k.
pub fn log_binom(n: f64, k: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    if k <= 0.0 {
        return 0.0;
    }
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// floor of a non-negative rational as usize.
pub fn rat_floor(r: &Rat) -> usize {
    r.floor().to_integer().to_usize().unwrap_or(0)
}
