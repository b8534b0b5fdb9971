//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! Exits 0 unless `QFOCK_ACCEPTANCE_STRICT=1` is set and a criterion fails.

mod common;

use std::sync::Arc;
use std::time::Instant;

use common::*;
use num_rational::BigRational;
use qfock::cli::{run_experiment, shipped_experiments};
use qfock::fock::{FockOperator, FockSpace, FockVector, GaugeOp, Matrix, OneParticleSpace, OneVec};
use qfock::kspoly::{ks_charlier, ks_hermite, ks_row_formula};
use qfock::model::{Letter, MomentSequence, ProcessModel, TimeGrid};
use qfock::partitions::enumerate_partitions;
use qfock::qscalar::{Mode, QScalar};
use qfock::stochastic::*;
use qfock::wick::{product_expansion, vacuum_moment, WickElement, WickEngine};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `Ok(note)` passes, `Err(reason)` fails.
type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|x| x.to_string())
}

fn apply_word(m: &ProcessModel, letters: &[Letter]) -> Result<FockVector, String> {
    let fock = m.fock();
    let mut v = fock.vacuum();
    for l in letters.iter().rev() {
        v = e(fock.apply(&l.field(), &v))?;
    }
    Ok(v)
}

fn criterion_1() -> Outcome {
    let mut words = 0;
    for seed in 0..20 {
        let mut g = rng(7000 + seed);
        let dim = g.gen_range(1..=3);
        let a: Vec<Vec<i64>> = (0..dim).map(|_| (0..dim).map(|_| g.gen_range(-2..=2)).collect()).collect();
        let gram = (0..dim)
            .map(|i| (0..dim).map(|j| Mode::Exact.int((0..dim).map(|k| a[k][i] * a[k][j]).sum())).collect())
            .collect();
        let one = Arc::new(e(OneParticleSpace::new(Mode::Exact, gram))?);
        let fock = FockSpace::new(one.clone(), 5);
        let mut vec_ = || OneVec::from_entries((0..dim).map(|i| (i as u32, Mode::Exact.ratio(&small_ratio(&mut g)))).collect());
        let (z, h) = (vec_(), vec_());
        let op = FockOperator::sum(vec![
            (Mode::Exact.one(), FockOperator::annihilation(z.clone()).times(&FockOperator::creation(h.clone()))),
            (-Mode::Exact.q(), FockOperator::creation(h.clone()).times(&FockOperator::annihilation(z.clone()))),
            (-one.inner(&z, &h), FockOperator::identity(Mode::Exact)),
        ]);
        for w in fock.words_up_to(4) {
            let v = e(FockVector::word(Mode::Exact, 5, &w))?;
            ensure(e(fock.apply(&op, &v))?.is_zero(), || format!("seed {seed}, word {w:?}"))?;
            words += 1;
        }
    }
    Ok(format!("{words} basis vectors over 20 random grams"))
}

fn criterion_2() -> Outcome {
    let mut cases = 0;
    for n in 1..=5 {
        for (kind, m) in [("body", body(Mode::Exact, n, 3, n)), ("appendix", appendix(Mode::Exact, 2, n))] {
            for seed in 0..3 {
                let mut g = rng(100 * n as u64 + seed);
                let letters: Vec<Letter> = (0..n).map(|_| random_letter(&m, &mut g)).collect();
                let lhs = e(e(product_expansion(&m.alg, &letters))?.vacuum_vector(m.mode, &m.fock()))?;
                ensure(lhs == apply_word(&m, &letters)?, || format!("{kind} n={n} seed {seed}"))?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} random words, n <= 5, both constructions"))
}

fn criterion_3() -> Outcome {
    for n in 1..=6 {
        for m in [body(Mode::Exact, n, 2, n), appendix(Mode::Exact, 2, n)] {
            let x = e(m.x_letter(&m.full_span()))?;
            let lhs = e(vacuum_moment(&m.alg, &vec![x.clone(); n]))?;
            ensure(lhs == apply_word(&m, &vec![x; n])?.vacuum_coefficient(), || format!("n={n}"))?;
        }
    }
    let unit = TimeGrid::uniform(r("1"), 1).map_err(|x| x.to_string())?;
    let qg = e(ProcessModel::body(Mode::Exact, MomentSequence::q_gaussian(10), unit.clone(), 4, 4))?;
    let x = e(qg.x_letter(&qg.full_span()))?;
    let g4 = e(vacuum_moment(&qg.alg, &vec![x; 4]))?;
    ensure(g4 == qs("2 + q"), || format!("q-Gaussian n=4 gave {g4}"))?;
    let ones = e(ProcessModel::appendix(Mode::Exact, vec![r("1")], vec![r("1")], unit, 4))?;
    let x = e(ones.x_letter(&ones.full_span()))?;
    let a4 = e(vacuum_moment(&ones.alg, &vec![x; 4]))?;
    ensure(a4 == qs("14 + q"), || format!("appendix n=4 gave {a4}"))?;
    ensure(e(a4.substitute(&r("1")))? == qs("15") && e(a4.substitute(&r("0")))? == qs("14"), || "Bell/Catalan".into())?;
    Ok("n <= 6 on both constructions; 2 + q, 14 + q, 15 at q=1, 14 at q=0".into())
}

fn random_step(m: &ProcessModel, g: &mut ChaCha8Rng, n: usize) -> StepFunction {
    let mut tuples = vec![vec![]];
    for _ in 0..n {
        tuples = tuples
            .iter()
            .flat_map(|t: &Vec<usize>| {
                (0..m.grid.atoms()).filter(|a| !t.contains(a)).map(|a| {
                    let mut t2 = t.clone();
                    t2.push(a);
                    t2
                })
            })
            .collect();
    }
    tuples.shuffle(g);
    let mut f = StepFunction::new(m.mode, n);
    let k = g.gen_range(1..=tuples.len().min(6));
    for t in tuples.into_iter().take(k) {
        f.add_at(t, m.mode.ratio(&nonzero_ratio(g))).unwrap();
    }
    f
}

fn integral(m: &ProcessModel, f: &StepFunction, procs: &[Integrator]) -> Result<FockVector, String> {
    let fock = m.fock();
    e(fock.apply(&e(multiple_integral(m, f, procs))?, &fock.vacuum()))
}

fn criterion_4() -> Outcome {
    for seed in 0..20 {
        let mut g = rng(4000 + seed);
        let atoms = g.gen_range(1..=4);
        let m = body(Mode::Exact, 1, atoms, 3);
        let n = g.gen_range(1..=3.min(atoms));
        let (f, h) = (random_step(&m, &mut g, n), random_step(&m, &mut g, n));
        let procs = vec![Integrator::X; n];
        let lhs = e(m.fock().innerq(&integral(&m, &f, &procs)?, &integral(&m, &h, &procs)?))?;
        ensure(lhs == e(l2q_inner(&m.grid, &f, &h))?, || format!("isometry seed {seed}"))?;
    }
    // chaos orthogonality over ordered multi-indices with entries <= 3
    let m = body(Mode::Exact, 3, 3, 3);
    let fock = m.fock();
    let mut g = rng(4100);
    let mut us: Vec<Vec<usize>> = vec![vec![]];
    let mut layer = us.clone();
    for _ in 0..3 {
        layer = layer.iter().flat_map(|u| (1..=3).map(move |k| [u.clone(), vec![k]].concat())).collect();
        us.extend(layer.iter().cloned());
    }
    let mut vecs = Vec::new();
    for u in &us {
        let procs: Vec<Integrator> = u.iter().map(|&k| Integrator::Yhat(k)).collect();
        vecs.push((u.clone(), integral(&m, &random_step(&m, &mut g, u.len()), &procs)?));
    }
    let (mut bad_same_content, mut bad_other) = (0, 0);
    let mut example = None;
    for (u, a) in &vecs {
        for (v, b) in &vecs {
            if u != v && !e(fock.innerq(a, b))?.is_zero() {
                let (mut su, mut sv) = (u.clone(), v.clone());
                su.sort();
                sv.sort();
                if su == sv {
                    bad_same_content += 1;
                    example.get_or_insert((u.clone(), v.clone()));
                } else {
                    bad_other += 1;
                }
            }
        }
    }
    ensure(bad_other == 0, || format!("{bad_other} pairs with different content are not orthogonal"))?;
    match example {
        None => Ok("isometry on 20 random step functions; all chaoses orthogonal".into()),
        Some((u, v)) => Err(format!(
            "isometry holds (20 seeds); orthogonality holds across different contents but fails for {bad_same_content} \
             rearranged pairs, e.g. H_{u:?} vs H_{v:?}: <Yhat_1(I)Yhat_2(J)Omega, Yhat_2(J)Yhat_1(I)Omega> = q|I||J|h_1h_2"
        )),
    }
}

fn criterion_5() -> Outcome {
    for n in 1..=5 {
        let m = body(Mode::Exact, n, 2, n);
        ensure(e(power_decomposition(&m, n, &m.full_span()))?.holds(), || format!("power split n={n}"))?;
        let qg = e(ProcessModel::body(
            Mode::Exact,
            MomentSequence::q_gaussian(2 * n + 2),
            e(TimeGrid::uniform(r("3/2"), 2))?,
            n,
            n,
        ))?;
        let fock = m.fock();
        let gfock = qg.fock();
        let zero = BigRational::from_integer(0.into());
        let at0 = |v: FockVector| v.map_coeffs(Mode::Exact, |c| c.substitute(&zero)).unwrap();
        for pi in e(enumerate_partitions(n))? {
            let a = e(e(st_pi_closed(&qg, &pi, &qg.full_span()))?.vector(&gfock))?;
            let b = e(e(st_pi_q_gaussian(&qg, &pi, &qg.full_span()))?.vector(&gfock))?;
            ensure(e(gfock.norm_sq(&e(a.sub(&b))?))?.is_zero(), || format!("q-Gaussian form {pi}"))?;
            let c = at0(e(e(st_pi_closed(&m, &pi, &m.full_span()))?.vector(&fock))?);
            let d = at0(e(e(st_pi_free(&m, &pi, &m.full_span()))?.vector(&fock))?);
            ensure(c == d, || format!("free form {pi}"))?;
        }
        if n >= 2 {
            let interior: Vec<usize> = (2..n).collect();
            for mask in 0u32..(1 << interior.len()) {
                let pick: Vec<usize> =
                    interior.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &x)| x).collect();
                let pi = e(one_block_partition(n, &pick))?;
                let a = e(e(st_pi_closed(&m, &pi, &m.full_span()))?.vector(&fock))?;
                let b = e(e(one_block_form(&m, n, pick.len() + 2, &m.full_span()))?.vector(&fock))?;
                ensure(a == b, || format!("one-block form {pi}"))?;
            }
        }
    }
    Ok("power split, q-Gaussian (modulo null vectors) and free forms, one-block identity, n <= 5".into())
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let nu = e(MomentSequence::from_atoms(&law(), 8))?;
    let mut slopes = Vec::new();
    for ex in shipped_experiments().iter().filter(|x| x.name.starts_with("st_pi")) {
        let res = e(run_experiment(ex, ex.q, &nu, &[4, 8, 16, 32, 64]))?;
        slopes.push(format!("{} {:.3}", res.name, res.slope));
    }
    let secs = start.elapsed().as_secs_f64();
    let min = slopes.iter().map(|s| s.rsplit(' ').next().unwrap().parse::<f64>().unwrap()).fold(f64::INFINITY, f64::min);
    let summary = format!("slopes [{}] in {secs:.1}s", slopes.join(", "));
    if min >= 0.9 {
        Ok(summary)
    } else {
        Err(format!(
            "{summary}; required >= 0.9. Each error is the norm of diagonal remainders sum_a xi_a (x) ... (x) xi_a, \
             whose squared norm is sum_a |I_a|^2 ~ delta, so the L2 error decays like delta^(1/2)"
        ))
    }
}

fn criterion_7() -> Outcome {
    let laws = [MomentSequence::from_atoms(&law(), 12).unwrap(), MomentSequence::q_gaussian(12), MomentSequence::poisson(12)];
    for nu in &laws {
        for j in 1..=3 {
            for n in 0..=5 {
                ensure(e(ks_row_formula(j, n, nu, Mode::Exact))?.holds(), || format!("row formula j={j} n={n}"))?;
            }
        }
    }
    let h3 = e(e(ks_hermite(3, Mode::Exact))?.univariate(1))?;
    ensure(h3 == vec![qs("0"), qs("-2 - q"), qs("0"), qs("1")], || "H_3".into())?;
    let c2 = e(e(ks_charlier(2, Mode::Exact))?.univariate(1))?;
    ensure(c2 == vec![qs("-1"), qs("-1"), qs("1")], || "C_2".into())?;
    for n in 0..=4 {
        let m = body(Mode::Exact, 5, 2, n + 1);
        let engine = WickEngine::new(m.alg.clone());
        let (lhs, rhs) = e(ks_operator_chain(&m, &engine, n, &m.full_span()))?;
        ensure(lhs == rhs, || format!("operator chain n={n}"))?;
    }
    Ok("row formula j <= 3, n <= 5 (three laws); H_3, C_2; operator chain n <= 4".into())
}

fn past_element(m: &ProcessModel, g: &mut ChaCha8Rng, before: usize, max_deg: usize) -> WickElement {
    let pick: Vec<usize> = (0..before).map(|a| m.index(a, 1)).collect();
    let mut el = WickElement::zero(m.mode);
    for _ in 0..g.gen_range(1..=3) {
        let deg = g.gen_range(0..=max_deg);
        let w: Vec<Letter> = (0..deg).map(|_| letter_on(m, g, &pick)).collect();
        el.push(m.mode.ratio(&nonzero_ratio(g)), w);
    }
    el
}

fn massive_body(mass: &str, atoms: usize, cutoff: usize, depth: usize) -> ProcessModel {
    let nu: Vec<(BigRational, BigRational)> = law().into_iter().map(|(x, w)| (x, w * r(mass))).collect();
    let moments = MomentSequence::from_atoms(&nu, 2 * cutoff + 2).unwrap();
    ProcessModel::body(Mode::Exact, moments, TimeGrid::uniform(r("1"), atoms).unwrap(), cutoff, depth).unwrap()
}

fn criterion_8() -> Outcome {
    // Ito isometry with r_2
    for mass in ["1", "2", "1/3"] {
        let m = massive_body(mass, 4, 3, 4);
        let engine = WickEngine::new(m.alg.clone());
        let fock = m.fock();
        for seed in 0..3 {
            let mut g = rng(8000 + seed);
            let proc_ = |g: &mut ChaCha8Rng| {
                AdaptedProcess::new(&m, vec![(1..2, past_element(&m, g, 1, 2)), (2..4, past_element(&m, g, 2, 2))])
            };
            let (u, v) = (e(proc_(&mut g))?, e(proc_(&mut g))?);
            let expect = e(ito_isometry_rhs(&m, &u, &v))?;
            for side in [Side::Left, Side::Right] {
                let a = e(fock.apply(&e(ito_integral(&m, &engine, &u, side))?, &fock.vacuum()))?;
                let b = e(fock.apply(&e(ito_integral(&m, &engine, &v, side))?, &fock.vacuum()))?;
                ensure(e(fock.innerq(&a, &b))? == expect, || format!("Ito isometry mass {mass} {side:?}"))?;
            }
        }
    }
    // conditional expectation of X Z X, words up to degree 3
    for seed in 0..5 {
        let m = massive_body("1", 4, 3, 5);
        let engine = WickEngine::new(m.alg.clone());
        let fock = m.fock();
        let mut g = rng(8100 + seed);
        let z = past_element(&m, &mut g, 2, 3);
        let x = e(m.x(&(2..4)))?;
        let v = e(fock.apply(&FockOperator::compose(vec![x.clone(), e(z.operator(&engine))?, x]), &fock.vacuum()))?;
        let lhs = e(past_projection(&m, &v, &r("1/2")))?;
        let rhs = e(gamma_q(&z).vector(&fock))?.scale(&m.mode.ratio(&r("1/2")));
        ensure(lhs == rhs, || format!("E_s sandwich seed {seed}"))?;
    }
    // two-sided integral: discrete sums differ from the closed form by the diagonal remainder only
    for seed in 0..3 {
        let m = massive_body("1", 4, 3, 5);
        let engine = WickEngine::new(m.alg.clone());
        let fock = m.fock();
        let mut g = rng(8200 + seed);
        let u = e(AdaptedProcess::new(
            &m,
            vec![(1..2, past_element(&m, &mut g, 1, 2)), (2..4, past_element(&m, &mut g, 2, 2))],
        ))?;
        let disc = e(fock.apply(&e(two_sided_discrete(&m, &engine, &u))?, &fock.vacuum()))?;
        let closed = e(fock.apply(&e(two_sided_integral(&m, &engine, &u))?, &fock.vacuum()))?;
        ensure(e(disc.sub(&closed))? == e(two_sided_remainder(&m, &u))?, || format!("two-sided seed {seed}"))?;
    }
    let rem = |atoms: usize| -> Result<QScalar, String> {
        let m = body(Mode::Exact, 2, atoms, 4);
        let past = e(m.x_letter(&(0..atoms / 2)))?;
        let u = e(AdaptedProcess::new(&m, vec![(atoms / 2..atoms, WickElement::word(m.mode, vec![past.clone(), past]))]))?;
        e(m.fock().norm_sq(&e(two_sided_remainder(&m, &u))?))
    };
    ensure(rem(4)? == &rem(8)? * &Mode::Exact.int(2), || "two-sided remainder does not halve".into())?;
    // bi-process isometry on rank-1 bi-processes
    let m = body(Mode::Exact, 6, 4, 7);
    let engine = WickEngine::new(m.alg.clone());
    let fock = m.fock();
    let x0 = WickElement::word(m.mode, vec![e(m.x_letter(&(0..1)))?]);
    let u = e(BiProcess::new(&m, vec![1..2], vec![(vec![x0.clone()], vec![x0])]))?;
    let iu = e(fock.apply(&e(biprocess_integral(&m, &engine, &u))?, &fock.vacuum()))?;
    let lhs = e(fock.innerq(&iu, &iu))?;
    let rhs = e(biprocess_inner(&m, &engine, &u, &u))?.scale_ratio(e(m.moments.r(2))?);
    if lhs == rhs {
        return Ok("Ito isometry, E_s sandwich, two-sided remainder, bi-process isometry".into());
    }
    Err(format!(
        "Ito isometry (r_2 = 1, 2, 1/3), E_s sandwich and two-sided closed form (remainder halves per doubling) hold; \
         bi-process isometry fails for U = X(I_0) (x) X(I_0) on I_1: ||int U||^2 = {lhs} but |I|<<U,U>> = {rhs}. \
         E_s is not a bimodule map once gauge letters appear (holds for the q-Gaussian law and at q = 0)"
    ))
}

fn criterion_9() -> Outcome {
    let m = body(Mode::Exact, 5, 4, 5);
    let qg = e(ProcessModel::body(Mode::Exact, MomentSequence::q_gaussian(12), e(TimeGrid::uniform(r("1"), 4))?, 5, 5))?;
    for k in 1..=3 {
        for model in [&m, &qg] {
            let w = e(traciality_witness(model, &(0..1), &(2..4), k))?;
            ensure(w.matches(), || format!("witness k={k}: {w:?}"))?;
            let r2k = e(model.moments.r(2 + k))?;
            ensure(w.gap().is_zero() == (*r2k == BigRational::from_integer(0.into())), || format!("dichotomy k={k}"))?;
        }
    }
    let w = e(traciality_witness(&m, &(0..1), &(2..4), 1))?;
    ensure(w.forward == qs("3/32 q^2") && w.backward == qs("3/32 q"), || format!("{w:?}"))?;
    Ok("k = 1..3; gap vanishes exactly when r_(2+k) = 0".into())
}

fn criterion_10() -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, q) in [0.0, 0.3, 0.7].into_iter().enumerate() {
        let mode = e(Mode::float(q))?;
        let mut g = rng(10_000 + i as u64);
        let fock = FockSpace::new(Arc::new(OneParticleSpace::orthonormal(mode, 2)), 6);
        for _ in 0..10 {
            let rows: Vec<Vec<QScalar>> =
                (0..2).map(|_| (0..2).map(|_| mode.real(g.gen_range(-2.0..2.0)).unwrap()).collect()).collect();
            let t = e(Matrix::from_dense(&rows))?;
            let p = FockOperator::gauge(GaugeOp::new(t.clone(), t.transpose()));
            let est = e(fock.operator_norm_estimate(&p, 6))?;
            let bound = f64::max(1.0, 1.0 / (1.0 - q)) * t.spectral_norm();
            ensure(est <= bound + 1e-9, || format!("p(T) at q={q}: {est} > {bound}"))?;
            worst = worst.max(est / bound);
        }
        let m = e(ProcessModel::appendix(mode, vec![r("1")], vec![r("1")], e(TimeGrid::uniform(r("1"), 2))?, 6))?;
        let mf = m.fock();
        for _ in 0..10 {
            let f: Vec<f64> = (0..2).map(|_| g.gen_range(-1.0..1.0)).collect();
            let terms = f
                .iter()
                .enumerate()
                .map(|(a, &c)| Ok((mode.real(c).unwrap(), e(m.x(&(a..a + 1)))?)))
                .collect::<Result<Vec<_>, String>>()?;
            let est = e(mf.operator_norm_estimate(&FockOperator::sum(terms), 5))?;
            let sup = f.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let bound = (1.0 + 1.0 / (1.0 - q).sqrt()).powi(2) * sup;
            ensure(est <= bound + 1e-9, || format!("X(f) at q={q}: {est} > {bound}"))?;
            worst = worst.max(est / bound);
        }
    }
    Ok(format!("60 estimates within bounds (largest ratio {worst:.3})"))
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        let start = Instant::now();
        let out = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(note) => println!("criterion {n}: PASS [{secs:.1}s] {note}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL [{secs:.1}s] {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 && std::env::var("QFOCK_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
