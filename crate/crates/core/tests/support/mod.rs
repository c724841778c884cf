//! Direct evaluation of the suitability constraints with exact rational
//! exponents and big fixed-point arithmetic instead of logarithms.
#![allow(dead_code)]

use colordag::params::{Fraction, ParamTuple};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational `num / den` with `den > 0`.
#[derive(Clone, Debug)]
pub struct Q(pub BigInt, pub BigInt);

impl Q {
    pub fn int(n: u128) -> Self {
        Q(BigInt::from(n), BigInt::one())
    }

    pub fn frac(f: Fraction) -> Self {
        Q(BigInt::from(f.numer()), BigInt::from(f.denom()))
    }

    /// Exact value of a decimal literal such as "0.04".
    pub fn dec(s: &str) -> Self {
        Self::frac(s.parse().unwrap())
    }

    pub fn from_f64(x: f64) -> Self {
        // Exact binary expansion of a finite positive double.
        assert!(x > 0.0 && x.is_finite());
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let mant = if exp == 0 {
            (bits & ((1 << 52) - 1)) << 1
        } else {
            (bits & ((1 << 52) - 1)) | (1 << 52)
        };
        let e = exp - 1075;
        if e >= 0 {
            Q(BigInt::from(mant) << e as usize, BigInt::one())
        } else {
            Q(BigInt::from(mant), BigInt::one() << (-e) as usize)
        }
    }

    pub fn mul(&self, o: &Q) -> Q {
        Q(&self.0 * &o.0, &self.1 * &o.1)
    }

    pub fn sub(&self, o: &Q) -> Q {
        Q(&self.0 * &o.1 - &o.0 * &self.1, &self.1 * &o.1)
    }

    pub fn pow(&self, k: u32) -> Q {
        Q(self.0.pow(k), self.1.pow(k))
    }

    pub fn clamp0(self) -> Q {
        if self.0.is_negative() {
            Q(BigInt::zero(), BigInt::one())
        } else {
            self
        }
    }

    pub fn approx(&self) -> f64 {
        // Good enough for choosing a precision.
        let shift = (self.0.bits() as i64 - self.1.bits() as i64).max(0) as u64;
        let n = self.0.to_f64().unwrap_or(f64::MAX);
        let d = self.1.to_f64().unwrap_or(f64::MAX);
        if n.is_finite() && d.is_finite() && d > 0.0 {
            n / d
        } else {
            2f64.powi(shift as i32)
        }
    }

    /// `floor(self * 2^p)`.
    pub fn fixed(&self, p: u64) -> BigInt {
        (&self.0 << p as usize) / &self.1
    }
}

/// `floor(exp(-x) * 2^p)` for exact `x >= 0`.
pub fn exp_neg(x: &Q, p: u64) -> BigInt {
    let guard = 64;
    let wp = p + guard;
    let one = BigInt::one() << wp as usize;
    // Halve until the argument is below 1/2.
    let mut k = 0u32;
    while x.approx() / 2f64.powi(k as i32) >= 0.5 {
        k += 1;
    }
    let r = x.fixed(wp) >> k as usize;
    let mut term = one.clone();
    let mut sum = one.clone();
    let mut n = 1u32;
    loop {
        term = -((&term * &r) >> wp as usize) / n;
        if term.is_zero() {
            break;
        }
        sum += &term;
        n += 1;
    }
    for _ in 0..k {
        sum = (&sum * &sum) >> wp as usize;
    }
    sum >> guard as usize
}

/// `floor(value * 2^p)` for a big fixed-point value as an `f64`.
pub fn fixed_to_f64(v: &BigInt, p: u64) -> f64 {
    let bits = v.bits();
    if bits > 60 {
        let shift = bits - 60;
        (v >> shift as usize).to_f64().unwrap() * 2f64.powi(shift as i32 - p as i32)
    } else {
        v.to_f64().unwrap() * 2f64.powi(-(p as i32))
    }
}

/// Left-hand sides of the three exponential constraints as `(prefactor,
/// exponent)`, with `lhs = prefactor * exp(-exponent)`.
pub fn direct_terms(p: &ParamTuple, delta_c: &Q) -> [(Q, Q); 3] {
    let nc = p.n_colors as u128;
    let n = Q::int(p.n_ell as u128);
    let t2 = Q::int(p.t_max as u128).pow(2);
    let base = Q::int(nc).mul(&t2);
    let two = Q::int(2);
    let delta = Q::frac(p.delta);
    let keep = Q(BigInt::from(nc - 1), BigInt::from(nc)).pow(p.delta_net - 1);
    let g_fork = keep.sub(&delta).clamp0();
    let g_color = Q(BigInt::one(), BigInt::from(nc)).sub(delta_c).clamp0();
    let half = delta.mul(&Q(BigInt::one(), BigInt::from(2)));
    let ceil = Q::int(p.alpha.ceil_recip().unwrap());
    [
        (base.clone(), two.mul(&n.pow(3)).mul(&g_fork.pow(2))),
        (base.clone(), two.mul(&n.pow(3)).mul(&g_color.pow(2))),
        (base.mul(&ceil), two.mul(&half.pow(2)).mul(&n)),
    ]
}

/// Whether `prefactor * exp(-x) < eps / 3`, decided without logarithms.
/// Exponents far past the threshold are decided by a bit-count bound.
pub fn direct_pass(pre: &Q, x: &Q, eps: f64) -> bool {
    let pre_bits = pre.approx().log2().max(1.0);
    let eps3 = Q::from_f64(eps).mul(&Q(BigInt::one(), BigInt::from(3)));
    if x.approx() * std::f64::consts::LOG2_E > pre_bits + (3.0 / eps).log2() + 64.0 {
        // exp(-x) is below 2^-64 of what the threshold allows.
        return true;
    }
    let p = 256 + (x.approx() * 1.5) as u64 + pre_bits as u64;
    let lhs = exp_neg(x, p) * &pre.0 / &pre.1;
    lhs < eps3.fixed(p)
}

pub fn direct_floor(p: &ParamTuple) -> bool {
    let (n, d) = (BigInt::from(p.delta.numer()), BigInt::from(p.delta.denom()));
    BigInt::from(p.n_ell) * &n * &n >= BigInt::from(4) * &d * &d
}

pub fn direct_verdict(p: &ParamTuple, delta_c: &str) -> [bool; 4] {
    let [f, c, m] = direct_terms(p, &Q::dec(delta_c));
    [
        direct_pass(&f.0, &f.1, p.epsilon),
        direct_pass(&c.0, &c.1, p.epsilon),
        direct_floor(p),
        direct_pass(&m.0, &m.1, p.epsilon),
    ]
}
