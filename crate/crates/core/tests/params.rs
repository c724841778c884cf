//! Suitability checks against an independent evaluator that works on the
//! constraints directly, with exact rational exponents and big fixed-point
//! arithmetic instead of logarithms.

mod support;

use colordag::params::{check_suitability, solve_min_nl, DeltaCRule, ParamTuple};
use num_bigint::BigInt;
use support::{direct_terms, direct_verdict, exp_neg, fixed_to_f64, Q};

fn tuple(alpha: &str, n: u64, delta_c: f64) -> ParamTuple {
    ParamTuple::from_alpha(alpha.parse().unwrap(), 1e-7, 5, 10, n, delta_c, n * n).unwrap()
}

fn verdict(p: &ParamTuple) -> [bool; 4] {
    let v = check_suitability(p).unwrap();
    [v.forking.pass, v.color_supply.pass, v.depth_floor.pass, v.minority.pass]
}

#[test]
fn smallest_depth_for_alpha_049() {
    let sol = solve_min_nl("0.49".parse().unwrap(), 1e-7, 5, 10, DeltaCRule::Fixed(0.04)).unwrap();
    assert_eq!(sol.n_ell, 6_678_019);
    assert_eq!(sol.tuple.t_max, 6_678_019u64.pow(2));
    for n in [sol.n_ell - 1, sol.n_ell, sol.n_ell + 1] {
        let p = tuple("0.49", n, 0.04);
        assert_eq!(verdict(&p), direct_verdict(&p, "0.04"), "N_l = {n}");
    }
    assert_eq!(direct_verdict(&tuple("0.49", sol.n_ell, 0.04), "0.04"), [true; 4]);
    assert_eq!(
        direct_verdict(&tuple("0.49", sol.n_ell - 1, 0.04), "0.04"),
        [true, true, true, false]
    );
}

#[test]
fn smallest_depth_for_alpha_025() {
    let sol = solve_min_nl("0.25".parse().unwrap(), 1e-7, 5, 10, DeltaCRule::Fixed(0.04)).unwrap();
    assert_eq!(sol.n_ell, 7_226);
    // Independent scan with the direct evaluator: the last failing depth
    // sits right below the solution.
    let mut last_fail = 0;
    for n in 2..=sol.n_ell + 200 {
        if direct_verdict(&tuple("0.25", n, 0.04), "0.04") != [true; 4] {
            last_fail = n;
        }
    }
    assert_eq!(last_fail + 1, sol.n_ell);
}

#[test]
fn other_alphas_agree_with_direct_evaluation() {
    for alpha in ["1/3", "0.1", "0.4"] {
        let sol = solve_min_nl(alpha.parse().unwrap(), 1e-7, 5, 10, DeltaCRule::Fixed(0.04)).unwrap();
        assert_eq!(
            direct_verdict(&tuple(alpha, sol.n_ell, 0.04), "0.04"),
            [true; 4],
            "{alpha}"
        );
        assert_ne!(
            direct_verdict(&tuple(alpha, sol.n_ell - 1, 0.04), "0.04"),
            [true; 4],
            "{alpha}"
        );
    }
}

#[test]
fn log_domain_matches_direct_evaluation() {
    let mut compared = 0;
    for n_colors in [4u32, 10, 32] {
        for delta_net in [1u32, 2, 5] {
            for alpha in ["0.05", "1/3", "0.45"] {
                for n_ell in [2u64, 5, 9, 30, 200, 3_000, 40_000] {
                    for t_max in [n_ell + 1, n_ell * n_ell + 1, 1_000_000_007] {
                        let p = ParamTuple::from_alpha(
                            alpha.parse().unwrap(),
                            1e-3,
                            delta_net,
                            n_colors,
                            n_ell,
                            0.02,
                            t_max,
                        )
                        .unwrap();
                        let logs = [p.ln_forking_lhs(), p.ln_color_lhs(), p.ln_minority_lhs()];
                        for ((pre, x), ln_lhs) in direct_terms(&p, &Q::dec("0.02")).iter().zip(logs) {
                            if !(-700.0..=700.0).contains(&ln_lhs) {
                                continue;
                            }
                            let prec = 256 + (x.approx() * 1.5) as u64;
                            let direct = fixed_to_f64(&(exp_neg(x, prec) * &pre.0 / &pre.1), prec);
                            let via_log = ln_lhs.exp();
                            let rel = (via_log - direct).abs() / direct;
                            assert!(rel < 1e-9, "{p:?}: {via_log} vs {direct}");
                            compared += 1;
                        }
                    }
                }
            }
        }
    }
    assert!(compared > 300, "{compared}");
}

#[test]
fn exp_oracle_sanity() {
    let p = 200;
    let e1 = fixed_to_f64(&exp_neg(&Q::int(1), p), p);
    assert!((e1 - (-1f64).exp()).abs() < 1e-16);
    let e50 = fixed_to_f64(&exp_neg(&Q::int(50), 400), 400);
    assert!(((e50 - (-50f64).exp()) / e50).abs() < 1e-14);
    assert!(Q::from_f64(0.5).fixed(4) == BigInt::from(8));
}
