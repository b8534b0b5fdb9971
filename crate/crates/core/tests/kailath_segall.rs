mod common;

use common::*;
use qfock::kspoly::*;
use qfock::model::MomentSequence;
use qfock::qscalar::Mode;

fn generic() -> MomentSequence {
    let v = ["0", "1", "2", "5", "3/2", "7", "-2", "11", "13", "17", "19", "23", "29", "31", "37", "41"];
    MomentSequence::from_moments(v.iter().map(|s| r(s)).collect()).unwrap()
}

#[test]
fn row_formula_up_to_five() {
    for law in [generic(), MomentSequence::from_atoms(&law(), 12).unwrap(), MomentSequence::q_gaussian(12)] {
        for j in 1..=3 {
            for n in 0..=5 {
                let rep = ks_row_formula(j, n, &law, Mode::Exact).unwrap();
                assert!(rep.holds(), "j={j} n={n}: {}", rep.residual());
            }
        }
    }
}

#[test]
fn named_specializations() {
    let m = Mode::Exact;
    assert_eq!(ks_hermite(3, m).unwrap().univariate(1).unwrap(), vec![qs("0"), qs("-2 - q"), qs("0"), qs("1")]);
    assert_eq!(ks_charlier(2, m).unwrap().univariate(1).unwrap(), vec![qs("-1"), qs("-1"), qs("1")]);
}

#[test]
fn substitution_matches_three_term_recursions() {
    for n in 0..=7 {
        assert_eq!(ks_hermite(n, Mode::Exact).unwrap(), q_hermite(n, Mode::Exact), "n={n}");
        assert_eq!(ks_charlier(n, Mode::Exact).unwrap(), q_charlier(n, Mode::Exact), "n={n}");
    }
}

#[test]
fn recursion_is_linear_in_the_leading_variable() {
    // A_(j) = x_j and A_(j,k) = x_j x_k - x_{j+k} - r_{j+k}
    let m = Mode::Exact;
    let law = generic();
    for j in 1..=3 {
        for k in 1..=3 {
            let a = ks_poly(&[j, k], &law, m).unwrap();
            let expect = NCPolynomial::var(m, j)
                .mul(&NCPolynomial::var(m, k))
                .sub(&NCPolynomial::var(m, j + k))
                .sub(&NCPolynomial::constant(m.ratio(law.r(j + k).unwrap())));
            assert_eq!(a, expect);
        }
    }
}

#[test]
fn zero_index_is_refused() {
    assert!(ks_poly(&[1, 0], &generic(), Mode::Exact).is_err());
}
