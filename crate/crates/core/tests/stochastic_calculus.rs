mod common;

use common::*;
use num_rational::BigRational;
use qfock::model::{Letter, MomentSequence, ProcessModel, TimeGrid};
use qfock::qscalar::{Mode, QScalar};
use qfock::stochastic::*;
use qfock::wick::{WickElement, WickEngine};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Body model whose law has total mass `mass`, so `r_2 = mass`.
fn massive_body(mass: &str, atoms: usize, depth: usize) -> ProcessModel {
    let m = r(mass);
    let nu: Vec<(BigRational, BigRational)> = law().into_iter().map(|(x, w)| (x, w * &m)).collect();
    let moments = MomentSequence::from_atoms(&nu, 8).unwrap();
    ProcessModel::body(Mode::Exact, moments, TimeGrid::uniform(r("1"), atoms).unwrap(), 3, depth).unwrap()
}

/// Random Wick element over first-power letters on atoms `0..before`.
fn past_element(model: &ProcessModel, g: &mut ChaCha8Rng, before: usize, max_deg: usize) -> WickElement {
    let pick: Vec<usize> = (0..before).map(|a| model.index(a, 1)).collect();
    let mut e = WickElement::zero(model.mode);
    for _ in 0..g.gen_range(1..=3) {
        let deg = g.gen_range(0..=max_deg);
        let w: Vec<Letter> = (0..deg).map(|_| letter_on(model, g, &pick)).collect();
        e.push(model.mode.ratio(&nonzero_ratio(g)), w);
    }
    e
}

fn vacuum_of(model: &ProcessModel, e: &WickElement) -> qfock::fock::FockVector {
    e.vector(&model.fock()).unwrap()
}

#[test]
fn ito_isometry_both_sides() {
    for mass in ["1", "2", "1/3"] {
        for seed in 0..4 {
            let m = massive_body(mass, 4, 4);
            let engine = WickEngine::new(m.alg.clone());
            let fock = m.fock();
            let mut g = rng(seed);
            let u = AdaptedProcess::new(
                &m,
                vec![(1..2, past_element(&m, &mut g, 1, 2)), (2..4, past_element(&m, &mut g, 2, 2))],
            )
            .unwrap();
            let v = AdaptedProcess::new(
                &m,
                vec![(1..3, past_element(&m, &mut g, 1, 2)), (3..4, past_element(&m, &mut g, 3, 2))],
            )
            .unwrap();
            let expect = ito_isometry_rhs(&m, &u, &v).unwrap();
            for side in [Side::Left, Side::Right] {
                let a = fock.apply(&ito_integral(&m, &engine, &u, side).unwrap(), &fock.vacuum()).unwrap();
                let b = fock.apply(&ito_integral(&m, &engine, &v, side).unwrap(), &fock.vacuum()).unwrap();
                assert_eq!(fock.innerq(&a, &b).unwrap(), expect, "mass {mass} seed {seed} {side:?}");
            }
        }
    }
}

#[test]
fn adaptedness_is_enforced() {
    let m = body(Mode::Exact, 1, 4, 3);
    let fut = m.x_letter(&(2..3)).unwrap();
    let e = WickElement::word(m.mode, vec![fut]);
    assert!(AdaptedProcess::new(&m, vec![(1..3, e.clone())]).is_err());
    assert!(AdaptedProcess::new(&m, vec![(3..4, e)]).is_ok());
    let one = WickElement::identity(m.mode);
    assert!(AdaptedProcess::new(&m, vec![(0..2, one.clone()), (1..3, one)]).is_err());
}

#[test]
fn conditional_expectation_sandwich() {
    for mass in ["1", "2"] {
        for seed in 0..5 {
            let m = massive_body(mass, 4, 5);
            let engine = WickEngine::new(m.alg.clone());
            let fock = m.fock();
            let mut g = rng(100 + seed);
            let s = r("1/2");
            let z = past_element(&m, &mut g, 2, 3);
            let x = m.x(&(2..4)).unwrap();
            let op = qfock::fock::FockOperator::compose(vec![x.clone(), z.operator(&engine).unwrap(), x]);
            let v = fock.apply(&op, &fock.vacuum()).unwrap();
            let lhs = past_projection(&m, &v, &s).unwrap();
            let c = m.mode.ratio(&(r("1/2") * m.moments.r(2).unwrap()));
            let rhs = gamma_q(&z).vector(&fock).unwrap().scale(&c);
            assert_eq!(lhs, rhs, "mass {mass} seed {seed}");
        }
    }
}

#[test]
fn conditional_expectation_properties() {
    let m = body(Mode::Exact, 5, 4, 4);
    let engine = WickEngine::new(m.alg.clone());
    let fock = m.fock();
    let s = r("1/2");
    for seed in 0..5 {
        let mut g = rng(200 + seed);
        let a = past_element(&m, &mut g, 4, 2);
        let past = past_element(&m, &mut g, 2, 2);
        let b1 = past_element(&m, &mut g, 2, 1);
        let b2 = past_element(&m, &mut g, 2, 1);
        // compression onto the past
        let ep = conditional_expectation(&m, &past, &s).unwrap();
        assert_eq!(vacuum_of(&m, &ep), vacuum_of(&m, &past));
        // idempotence and the state
        let ea = conditional_expectation(&m, &a, &s).unwrap();
        let eea = conditional_expectation(&m, &ea, &s).unwrap();
        assert_eq!(vacuum_of(&m, &ea), vacuum_of(&m, &eea));
        assert_eq!(vacuum_of(&m, &ea).vacuum_coefficient(), vacuum_of(&m, &a).vacuum_coefficient());
        // module property
        let prod = |mid: &WickElement| {
            let op = qfock::fock::FockOperator::compose(vec![
                b1.operator(&engine).unwrap(),
                mid.operator(&engine).unwrap(),
                b2.operator(&engine).unwrap(),
            ]);
            fock.apply(&op, &fock.vacuum()).unwrap()
        };
        let whole = WickElement::from_vector(&m.alg, &prod(&a));
        let lhs = conditional_expectation(&m, &whole, &s).unwrap();
        assert_eq!(vacuum_of(&m, &lhs), prod(&ea), "seed {seed}");
    }
}

#[test]
fn two_sided_gap_is_the_diagonal_remainder() {
    for mass in ["1", "2"] {
        for seed in 0..4 {
            let m = massive_body(mass, 4, 5);
            let engine = WickEngine::new(m.alg.clone());
            let fock = m.fock();
            let mut g = rng(300 + seed);
            let u = AdaptedProcess::new(
                &m,
                vec![(1..2, past_element(&m, &mut g, 1, 2)), (2..4, past_element(&m, &mut g, 2, 2))],
            )
            .unwrap();
            let om = fock.vacuum();
            let disc = fock.apply(&two_sided_discrete(&m, &engine, &u).unwrap(), &om).unwrap();
            let closed = fock.apply(&two_sided_integral(&m, &engine, &u).unwrap(), &om).unwrap();
            let rem = two_sided_remainder(&m, &u).unwrap();
            assert_eq!(disc.sub(&closed).unwrap(), rem, "mass {mass} seed {seed}");
        }
    }
}

#[test]
fn two_sided_remainder_halves_under_refinement() {
    let norm = |atoms: usize| -> QScalar {
        let m = body(Mode::Exact, 2, atoms, 4);
        let past = m.x_letter(&(0..atoms / 2)).unwrap();
        let u = AdaptedProcess::new(&m, vec![(atoms / 2..atoms, WickElement::word(m.mode, vec![past.clone(), past]))])
            .unwrap();
        m.fock().norm_sq(&two_sided_remainder(&m, &u).unwrap()).unwrap()
    };
    let a = norm(4);
    let b = norm(8);
    assert!(!a.is_zero());
    assert_eq!(a, &b * &Mode::Exact.int(2));
}

fn rank_one_isometry_gap(m: &ProcessModel, seed: u64) -> QScalar {
    let engine = WickEngine::new(m.alg.clone());
    let fock = m.fock();
    let mut g = rng(seed);
    let spans = vec![1..2, 2..4];
    let rank_one = |g: &mut ChaCha8Rng| {
        let a = vec![past_element(m, g, 1, 1), past_element(m, g, 2, 1)];
        let b = vec![past_element(m, g, 1, 1), past_element(m, g, 2, 1)];
        BiProcess::new(m, spans.clone(), vec![(a, b)]).unwrap()
    };
    let u = rank_one(&mut g);
    let v = rank_one(&mut g);
    let iu = fock.apply(&biprocess_integral(m, &engine, &u).unwrap(), &fock.vacuum()).unwrap();
    let iv = fock.apply(&biprocess_integral(m, &engine, &v).unwrap(), &fock.vacuum()).unwrap();
    let lhs = fock.innerq(&iu, &iv).unwrap();
    let rhs = biprocess_inner(m, &engine, &u, &v).unwrap().scale_ratio(m.moments.r(2).unwrap());
    &lhs - &rhs
}

#[test]
fn biprocess_isometry_for_q_gaussian_law() {
    let m = ProcessModel::body(
        Mode::Exact,
        MomentSequence::q_gaussian(12),
        TimeGrid::uniform(r("1"), 4).unwrap(),
        5,
        5,
    )
    .unwrap();
    for seed in 0..4 {
        assert!(rank_one_isometry_gap(&m, 400 + seed).is_zero(), "seed {seed}");
    }
}

#[test]
fn biprocess_isometry_at_q_zero() {
    for mass in ["1", "2"] {
        let m = massive_body(mass, 4, 5);
        for seed in 0..4 {
            let gap = rank_one_isometry_gap(&m, 500 + seed);
            assert!(gap.substitute(&r("0")).unwrap().is_zero(), "mass {mass} seed {seed}");
        }
    }
}

/// With a gauge part the compression `P_s Y P_s` is not `W(P_s Y Omega)` on
/// past vectors, and the pairing misses a `q (1 - q)` term.
#[test]
fn biprocess_pairing_counterexample() {
    let m = body(Mode::Exact, 6, 4, 7);
    let engine = WickEngine::new(m.alg.clone());
    let fock = m.fock();
    let x0 = WickElement::word(m.mode, vec![m.x_letter(&(0..1)).unwrap()]);
    let u = BiProcess::new(&m, vec![1..2], vec![(vec![x0.clone()], vec![x0])]).unwrap();
    let iu = fock.apply(&biprocess_integral(&m, &engine, &u).unwrap(), &fock.vacuum()).unwrap();
    let lhs = fock.innerq(&iu, &iu).unwrap();
    let rhs = biprocess_inner(&m, &engine, &u, &u).unwrap();
    assert_eq!(lhs, qs("1/64 + 1/4 q^2 + 1/64 q^3"));
    // |I| |A_0| r_2 r_4 = 15/64
    assert_eq!(&rhs - &lhs, qs("15/64 q - 15/64 q^2"));
}

#[test]
fn biprocess_needs_common_decomposition() {
    let m = body(Mode::Exact, 1, 4, 3);
    let one = WickElement::identity(m.mode);
    assert!(BiProcess::new(&m, vec![1..2, 2..4], vec![(vec![one.clone()], vec![one.clone(), one])]).is_err());
}

#[test]
fn traciality_witness_values() {
    let m = body(Mode::Exact, 5, 4, 5);
    for k in 1..=3 {
        let w = traciality_witness(&m, &(0..1), &(2..4), k).unwrap();
        assert!(w.matches(), "k={k}: {:?}", w);
    }
    // r_3 = 1/2 - 1/2 + 3/4 for the shipped law
    let w = traciality_witness(&m, &(0..1), &(2..4), 1).unwrap();
    assert_eq!(w.forward, qs("3/32 q^2"));
    assert_eq!(w.backward, qs("3/32 q"));
    assert!(traciality_witness(&m, &(0..2), &(1..3), 1).is_err());
}

#[test]
fn traciality_gap_vanishes_for_centered_laws() {
    let m = ProcessModel::body(
        Mode::Exact,
        MomentSequence::q_gaussian(12),
        TimeGrid::uniform(r("1"), 4).unwrap(),
        5,
        5,
    )
    .unwrap();
    for k in 1..=3 {
        let w = traciality_witness(&m, &(0..2), &(2..4), k).unwrap();
        assert!(w.gap().is_zero());
        assert!(w.forward.is_zero());
    }
    let m = body(Mode::Exact, 5, 4, 5);
    let w = traciality_witness(&m, &(0..2), &(2..4), 1).unwrap();
    assert!(!w.gap().is_zero());
}


