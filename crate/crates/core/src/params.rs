//! Parameter suitability: the four concentration constraints that make a
//! safe history overwhelmingly likely, and a solver for the smallest ledger
//! depth `N_l` that satisfies them.
//!
//! Every exponential is handled in log space. A constraint of the form
//! `lhs < epsilon / 3` is reported with slack `ln(epsilon / 3) - ln(lhs)`
//! nats, positive when it passes. The depth floor `N_l >= 4 / delta^2` is
//! reported with slack `ln(N_l * delta^2 / 4)` and decided exactly.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("alpha must lie in [0, 1/2), got {0}")]
    AlphaOutOfRange(Fraction),
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidTuple { field: &'static str, reason: String },
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("cannot parse `{0}` as a decimal or a fraction")]
    Parse(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ParamError {
    ParamError::InvalidTuple {
        field,
        reason: reason.into(),
    }
}

/// Exact non-negative rational, written as a decimal (`0.49`) or a fraction
/// (`49/100`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fraction(Ratio<u128>);

impl Fraction {
    pub fn new(num: u128, den: u128) -> Self {
        assert!(den != 0, "zero denominator");
        Self(Ratio::new(num, den))
    }

    pub fn numer(&self) -> u128 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u128 {
        *self.0.denom()
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_zero(&self) -> bool {
        self.numer() == 0
    }

    /// `ceil(1 / self)`; `None` for zero.
    pub fn ceil_recip(&self) -> Option<u128> {
        (!self.is_zero()).then(|| self.denom().div_ceil(self.numer()))
    }
}

impl FromStr for Fraction {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let err = || ParamError::Parse(s.to_string());
        if let Some((n, d)) = s.split_once('/') {
            let n: u128 = n.trim().parse().map_err(|_| err())?;
            let d: u128 = d.trim().parse().map_err(|_| err())?;
            if d == 0 {
                return Err(err());
            }
            return Ok(Self::new(n, d));
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if (int.is_empty() && frac.is_empty()) || frac.len() > 30 {
            return Err(err());
        }
        let digits = |t: &str| t.is_empty() || t.bytes().all(|b| b.is_ascii_digit());
        if !digits(int) || !digits(frac) {
            return Err(err());
        }
        let den = 10u128.checked_pow(frac.len() as u32).ok_or_else(err)?;
        let int: u128 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| err())?
        };
        let frac_val: u128 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| err())?
        };
        let num = int
            .checked_mul(den)
            .and_then(|x| x.checked_add(frac_val))
            .ok_or_else(err)?;
        Ok(Self::new(num, den))
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
            // Shortest round-trip formatting recovers the written decimal.
            Raw::Number(x) => format!("{x}").parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `delta = (1/2 - alpha) / 2`, exactly.
pub fn delta_from_alpha(alpha: Fraction) -> Result<Fraction, ParamError> {
    // 1/2 - n/d = (d - 2n) / 2d.
    let (n, d) = (alpha.numer(), alpha.denom());
    if 2 * n >= d {
        return Err(ParamError::AlphaOutOfRange(alpha));
    }
    Ok(Fraction::new(d - 2 * n, 4 * d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTuple {
    /// `N_C`.
    pub n_colors: u32,
    /// `N_l`.
    pub n_ell: u64,
    pub delta: Fraction,
    /// `delta_C`.
    pub delta_c: f64,
    /// `T_max`.
    pub t_max: u64,
    pub alpha: Fraction,
    /// Network delay bound `Delta`.
    pub delta_net: u32,
    pub epsilon: f64,
}

impl ParamTuple {
    /// Tuple with `delta` derived from `alpha`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_alpha(
        alpha: Fraction,
        epsilon: f64,
        delta_net: u32,
        n_colors: u32,
        n_ell: u64,
        delta_c: f64,
        t_max: u64,
    ) -> Result<Self, ParamError> {
        Ok(Self {
            n_colors,
            n_ell,
            delta: delta_from_alpha(alpha)?,
            delta_c,
            t_max,
            alpha,
            delta_net,
            epsilon,
        })
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.n_colors == 0 {
            return Err(invalid("n_colors", "must be at least 1"));
        }
        if self.n_ell == 0 {
            return Err(invalid("n_ell", "must be at least 1"));
        }
        if self.delta.is_zero() || self.delta >= Fraction::new(1, 2) {
            return Err(invalid("delta", format!("must lie in (0, 1/2), got {}", self.delta)));
        }
        if !(self.delta_c > 0.0 && self.delta_c < 1.0) {
            return Err(invalid("delta_c", format!("must lie in (0, 1), got {}", self.delta_c)));
        }
        if self.n_ell >= self.t_max {
            return Err(invalid("t_max", "must exceed n_ell"));
        }
        if self.alpha.is_zero() || self.alpha >= Fraction::new(1, 2) {
            return Err(invalid("alpha", format!("must lie in (0, 1/2), got {}", self.alpha)));
        }
        if self.delta_net == 0 {
            return Err(invalid("delta_net", "must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", "must be positive"));
        }
        Ok(())
    }

    /// The probability-side gap of the forking constraint,
    /// `max(((N_C - 1) / N_C)^(Delta - 1) - delta, 0)`.
    pub fn forking_gap(&self) -> f64 {
        let keep = ((self.n_colors as f64 - 1.0) / self.n_colors as f64).powi(self.delta_net as i32 - 1);
        (keep - self.delta.to_f64()).max(0.0)
    }

    /// `max(1 / N_C - delta_C, 0)`.
    pub fn color_gap(&self) -> f64 {
        (1.0 / self.n_colors as f64 - self.delta_c).max(0.0)
    }

    /// `ln` of the left-hand side of the forking constraint.
    pub fn ln_forking_lhs(&self) -> f64 {
        let n = self.n_ell as f64;
        (self.n_colors as f64).ln() + 2.0 * (self.t_max as f64).ln() - 2.0 * n.powi(3) * self.forking_gap().powi(2)
    }

    /// `ln` of the left-hand side of the color-supply constraint.
    pub fn ln_color_lhs(&self) -> f64 {
        let n = self.n_ell as f64;
        (self.n_colors as f64).ln() + 2.0 * (self.t_max as f64).ln() - 2.0 * n.powi(3) * self.color_gap().powi(2)
    }

    /// `ln` of the left-hand side of the minority constraint.
    pub fn ln_minority_lhs(&self) -> f64 {
        let half_delta = self.delta.to_f64() / 2.0;
        let ceil = self.alpha.ceil_recip().expect("validated alpha is positive") as f64;
        (self.n_colors as f64).ln() + 2.0 * (self.t_max as f64).ln() + ceil.ln()
            - 2.0 * half_delta * half_delta * self.n_ell as f64
    }

    /// `N_l >= 4 / delta^2`, decided exactly.
    pub fn depth_floor_holds(&self) -> bool {
        let (n, d) = (self.delta.numer(), self.delta.denom());
        (self.n_ell as u128)
            .checked_mul(n * n)
            .is_none_or(|lhs| lhs >= 4 * d * d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintVerdict {
    pub pass: bool,
    /// Nats of room left; negative when failing.
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuitabilityVerdict {
    /// Bounded natural forking, `N_C T^2 exp(-2 N^3 gap^2) < epsilon / 3`.
    pub forking: ConstraintVerdict,
    /// Color supply, the same shape with `1/N_C - delta_C`.
    pub color_supply: ConstraintVerdict,
    /// Depth floor `N_l >= 4 / delta^2`.
    pub depth_floor: ConstraintVerdict,
    /// Minority, `N_C T^2 ceil(1/alpha) exp(-2 (delta/2)^2 N_l) < epsilon / 3`.
    pub minority: ConstraintVerdict,
    pub pass: bool,
}

pub fn check_suitability(p: &ParamTuple) -> Result<SuitabilityVerdict, ParamError> {
    p.validate()?;
    let target = (p.epsilon / 3.0).ln();
    let strict = |ln_lhs: f64| {
        let slack = target - ln_lhs;
        ConstraintVerdict {
            pass: slack > 0.0,
            slack,
        }
    };
    let forking = strict(p.ln_forking_lhs());
    let color_supply = strict(p.ln_color_lhs());
    let minority = strict(p.ln_minority_lhs());
    let d = p.delta.to_f64();
    let depth_floor = ConstraintVerdict {
        pass: p.depth_floor_holds(),
        slack: (p.n_ell as f64 * d * d / 4.0).ln(),
    };
    Ok(SuitabilityVerdict {
        pass: forking.pass && color_supply.pass && depth_floor.pass && minority.pass,
        forking,
        color_supply,
        depth_floor,
        minority,
    })
}

/// How `delta_C` is chosen when solving.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DeltaCRule {
    Fixed(f64),
    /// `delta_C = f / N_C`.
    PerColor(f64),
}

impl DeltaCRule {
    pub fn resolve(&self, n_colors: u32) -> f64 {
        match *self {
            Self::Fixed(x) => x,
            Self::PerColor(f) => f / n_colors as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub n_ell: u64,
    pub tuple: ParamTuple,
    pub verdict: SuitabilityVerdict,
}

/// Largest `N_l` the solver considers; `N_l^2` must stay a `u64`.
const SOLVER_CEILING: u64 = 1 << 31;

/// Smallest `N_l` such that the tuple with `T_max = N_l^2` passes every
/// constraint, and keeps passing for every larger `N_l`.
pub fn solve_min_nl(
    alpha: Fraction,
    epsilon: f64,
    delta_net: u32,
    n_colors: u32,
    delta_c: DeltaCRule,
) -> Result<Solution, ParamError> {
    let delta = delta_from_alpha(alpha)?;
    if alpha.is_zero() {
        return Err(invalid("alpha", "must be positive"));
    }
    let dc = delta_c.resolve(n_colors);
    let keep = ((n_colors as f64 - 1.0) / n_colors as f64).powi(delta_net as i32 - 1);
    if keep <= 0.5 {
        return Err(ParamError::NoSolution(format!(
            "((N_C - 1) / N_C)^(Delta - 1) = {keep} must exceed 1/2; use more colors"
        )));
    }
    if !(dc > 0.0 && dc < 1.0 / (2.0 * n_colors as f64)) {
        return Err(ParamError::NoSolution(format!(
            "delta_C = {dc} must lie in (0, 1 / (2 N_C))"
        )));
    }
    let tuple = |n: u64| ParamTuple {
        n_colors,
        n_ell: n,
        delta,
        delta_c: dc,
        t_max: n.saturating_mul(n).max(n + 1),
        alpha,
        delta_net,
        epsilon,
    };
    let target = (epsilon / 3.0).ln();
    let slacks: [&dyn Fn(u64) -> f64; 3] = [
        &|n| target - tuple(n).ln_forking_lhs(),
        &|n| target - tuple(n).ln_color_lhs(),
        &|n| target - tuple(n).ln_minority_lhs(),
    ];

    let (dn, dd) = (delta.numer(), delta.denom());
    let floor = u64::try_from((4 * dd * dd).div_ceil(dn * dn))
        .unwrap_or(u64::MAX)
        .max(1);
    let mut best = floor;
    for slack in slacks {
        best = best.max(eventual_threshold(slack, floor)?);
    }
    let sol = tuple(best);
    let verdict = check_suitability(&sol)?;
    debug_assert!(verdict.pass);
    Ok(Solution {
        n_ell: best,
        tuple: sol,
        verdict,
    })
}

/// For a slack convex in `n`: the smallest `n >= lo` from which the slack
/// stays positive.
fn eventual_threshold(slack: &dyn Fn(u64) -> f64, lo: u64) -> Result<u64, ParamError> {
    // First n where the slack stops decreasing.
    let (mut a, mut b) = (1u64, SOLVER_CEILING);
    while a < b {
        let m = a + (b - a) / 2;
        if slack(m + 1) >= slack(m) {
            b = m;
        } else {
            a = m + 1;
        }
    }
    let start = a.max(lo);
    if slack(start) > 0.0 {
        // Positive at the minimum (or increasing from lo onwards), so
        // positive everywhere from lo on... unless lo sits left of the
        // minimum, where only the minimum itself matters.
        if a <= lo || slack(a) > 0.0 {
            return Ok(lo);
        }
    }
    if slack(SOLVER_CEILING) <= 0.0 {
        return Err(ParamError::NoSolution(format!(
            "constraint still fails at N_l = {SOLVER_CEILING}"
        )));
    }
    let (mut a, mut b) = (start, SOLVER_CEILING);
    while a < b {
        let m = a + (b - a) / 2;
        if slack(m) > 0.0 {
            b = m;
        } else {
            a = m + 1;
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac(s: &str) -> Fraction {
        s.parse().unwrap()
    }

    fn note_tuple() -> ParamTuple {
        ParamTuple {
            n_colors: 10,
            n_ell: 10_000,
            delta: frac("0.005"),
            delta_c: 0.04,
            t_max: 100_000_000_000,
            alpha: frac("0.49"),
            delta_net: 5,
            epsilon: 1e-7,
        }
    }

    #[test]
    fn parses_decimals_and_fractions() {
        assert_eq!(frac("0.49"), Fraction::new(49, 100));
        assert_eq!(frac("1/3"), Fraction::new(1, 3));
        assert_eq!(frac(".5"), Fraction::new(1, 2));
        assert_eq!(frac("2"), Fraction::new(2, 1));
        assert!("abc".parse::<Fraction>().is_err());
        assert!("1/0".parse::<Fraction>().is_err());
        assert_eq!(frac("1/3").ceil_recip(), Some(3));
        assert_eq!(frac("0.49").ceil_recip(), Some(3));
        assert_eq!(frac("0.25").ceil_recip(), Some(4));
    }

    #[test]
    fn delta_from_alpha_values() {
        assert_eq!(delta_from_alpha(frac("0.49")).unwrap(), frac("0.005"));
        assert_eq!(delta_from_alpha(frac("0")).unwrap(), frac("0.25"));
        assert_eq!(delta_from_alpha(frac("0.25")).unwrap(), frac("0.125"));
        assert!(matches!(
            delta_from_alpha(frac("0.5")),
            Err(ParamError::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn note_tuple_verdicts() {
        let v = check_suitability(&note_tuple()).unwrap();
        assert!(v.forking.pass && v.forking.slack > 1e11);
        assert!(v.color_supply.pass && v.color_supply.slack > 1e9);
        assert!(!v.depth_floor.pass);
        assert!(!v.minority.pass);
        assert!(!v.pass);
        // Minority exponent is 2 * 0.0025^2 * 1e4 = 0.125.
        let p = note_tuple();
        let expected = 10f64.ln() + 2.0 * 1e11f64.ln() + 3f64.ln() - 0.125;
        assert!((p.ln_minority_lhs() - expected).abs() < 1e-9);
    }

    #[test]
    fn depth_floor_is_exact_at_the_boundary() {
        let mut p = note_tuple();
        p.n_ell = 160_000;
        p.t_max = 160_000u64.pow(2);
        assert!(p.depth_floor_holds());
        p.n_ell = 159_999;
        assert!(!p.depth_floor_holds());
    }

    #[test]
    fn color_gap_vanishes_at_inverse_colors() {
        let mut p = note_tuple();
        p.delta_c = 0.1;
        let v = check_suitability(&p).unwrap();
        assert_eq!(p.color_gap(), 0.0);
        assert!(!v.color_supply.pass);
        p.t_max = 1_000_000_000_000_000;
        assert!(!check_suitability(&p).unwrap().color_supply.pass);
    }

    #[test]
    fn validation_names_fields() {
        let mut p = note_tuple();
        p.t_max = 10;
        assert!(matches!(
            check_suitability(&p),
            Err(ParamError::InvalidTuple { field: "t_max", .. })
        ));
        let mut p = note_tuple();
        p.delta_c = 1.5;
        assert!(matches!(
            check_suitability(&p),
            Err(ParamError::InvalidTuple { field: "delta_c", .. })
        ));
    }

    /// Independent scan: walk every N_l upwards and keep the last failure.
    fn scan_threshold(alpha: &str, eps: f64, delta_c: f64, upto: u64) -> u64 {
        let mut last_fail = 0;
        for n in 1..=upto {
            let p = ParamTuple::from_alpha(frac(alpha), eps, 5, 10, n, delta_c, n * n.max(2)).unwrap();
            if p.validate().is_ok() && !check_suitability(&p).unwrap().pass {
                last_fail = n;
            }
        }
        last_fail + 1
    }

    #[test]
    fn solver_matches_scan_and_is_minimal() {
        let sol = solve_min_nl(frac("0.25"), 1e-7, 5, 10, DeltaCRule::Fixed(0.04)).unwrap();
        assert!(sol.n_ell >= 256);
        assert!(sol.verdict.pass);
        assert_eq!(sol.n_ell, scan_threshold("0.25", 1e-7, 0.04, sol.n_ell + 2000));
        let below = ParamTuple {
            n_ell: sol.n_ell - 1,
            t_max: (sol.n_ell - 1).pow(2),
            ..sol.tuple.clone()
        };
        assert!(!check_suitability(&below).unwrap().pass);
        for n in sol.n_ell..sol.n_ell + 500 {
            let p = ParamTuple {
                n_ell: n,
                t_max: n * n,
                ..sol.tuple.clone()
            };
            assert!(check_suitability(&p).unwrap().pass, "{n}");
        }
    }

    #[test]
    fn vacuous_epsilon_still_needs_the_depth_floor() {
        let sol = solve_min_nl(frac("0.25"), 1.0, 5, 10, DeltaCRule::Fixed(0.04)).unwrap();
        assert!(sol.n_ell >= 256);
    }

    #[test]
    fn solver_rejects_too_few_colors() {
        assert!(matches!(
            solve_min_nl(frac("0.25"), 1e-7, 5, 3, DeltaCRule::PerColor(0.25)),
            Err(ParamError::NoSolution(_))
        ));
        assert!(matches!(
            solve_min_nl(frac("0.25"), 1e-7, 5, 10, DeltaCRule::Fixed(0.06)),
            Err(ParamError::NoSolution(_))
        ));
    }

    #[test]
    fn high_alpha_solution() {
        let sol = solve_min_nl(frac("0.49"), 1e-7, 5, 10, DeltaCRule::Fixed(0.04)).unwrap();
        assert!(sol.n_ell >= 160_000);
        let below = ParamTuple {
            n_ell: sol.n_ell - 1,
            t_max: (sol.n_ell - 1).pow(2),
            ..sol.tuple.clone()
        };
        assert!(!check_suitability(&below).unwrap().pass);
        assert!(!check_suitability(&below).unwrap().minority.pass);
    }
}
