#![allow(dead_code)]

use num_rational::BigRational;
use qfock::fock::{FockVector, OneVec};
use qfock::model::{Letter, MomentSequence, ProcessModel, TimeGrid};
use qfock::qscalar::{parse_rational, Mode, QScalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn r(s: &str) -> BigRational {
    parse_rational(s).unwrap()
}

pub fn qs(s: &str) -> QScalar {
    QScalar::Exact(s.parse().unwrap())
}

pub fn small_ratio(g: &mut ChaCha8Rng) -> BigRational {
    let num: i64 = g.gen_range(-3..=3);
    let den: i64 = g.gen_range(1..=2);
    BigRational::new(num.into(), den.into())
}

pub fn nonzero_ratio(g: &mut ChaCha8Rng) -> BigRational {
    loop {
        let x = small_ratio(g);
        if x != BigRational::from_integer(0.into()) {
            return x;
        }
    }
}

/// Three-point law used across tests.
pub fn law() -> Vec<(BigRational, BigRational)> {
    vec![(r("1"), r("1/2")), (r("-2"), r("1/4")), (r("3"), r("1/4"))]
}

pub fn body(mode: Mode, cutoff: usize, atoms: usize, depth: usize) -> ProcessModel {
    let m = MomentSequence::from_atoms(&law(), 2 * cutoff + 2).unwrap();
    ProcessModel::body(mode, m, TimeGrid::uniform(r("1"), atoms).unwrap(), cutoff, depth).unwrap()
}

pub fn appendix(mode: Mode, atoms: usize, depth: usize) -> ProcessModel {
    let (p, w): (Vec<_>, Vec<_>) = law().into_iter().unzip();
    ProcessModel::appendix(mode, p, w, TimeGrid::uniform(r("1"), atoms).unwrap(), depth).unwrap()
}

/// Random letter over basis indices `pick`.
pub fn letter_on(model: &ProcessModel, g: &mut ChaCha8Rng, pick: &[usize]) -> Letter {
    let mode = model.mode;
    loop {
        let mut e: Vec<(u32, QScalar)> = Vec::new();
        for &i in pick {
            if g.gen_bool(0.7) {
                e.push((i as u32, mode.ratio(&small_ratio(g))));
            }
        }
        let xi = OneVec::from_entries(e);
        if !xi.is_zero() {
            return model.alg.letter(&xi);
        }
    }
}

/// Random letter of the model; body letters use first powers only.
pub fn random_letter(model: &ProcessModel, g: &mut ChaCha8Rng) -> Letter {
    let pick: Vec<usize> = match model.kind {
        qfock::model::ModelKind::Body => (0..model.grid.atoms()).map(|a| model.index(a, 1)).collect(),
        _ => (0..model.alg.dim()).collect(),
    };
    letter_on(model, g, &pick)
}

/// Random vector with words of length `<= deg` over `pick`.
pub fn random_vector(model: &ProcessModel, g: &mut ChaCha8Rng, deg: usize, terms: usize, pick: &[usize]) -> FockVector {
    let mode = model.mode;
    let mut v = FockVector::zero(mode, model.depth);
    for _ in 0..terms {
        let len = g.gen_range(0..=deg);
        let w: Vec<u32> = (0..len).map(|_| pick[g.gen_range(0..pick.len())] as u32).collect();
        v.add_term(w, mode.ratio(&nonzero_ratio(g))).unwrap();
    }
    v
}
