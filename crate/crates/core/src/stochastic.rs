//! Stochastic measures and integrals over a process model: step functions
//! and the q-symmetrized L^2 product, multiple integrals, partition-dependent
//! stochastic measures, chaos decomposition, Ito, two-sided and bi-process
//! integrals, conditional expectations and the traciality witness.

use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::error::{usage, Error, Result};
use crate::fock::{FockOperator, FockSpace, FockVector, OneVec};
use crate::model::{Letter, ModelKind, MomentSequence, ProcessModel, TimeGrid};
use crate::partitions::{classify, enumerate_partitions, index_tuples, rc, ExtendedPartition, SetPartition};
use crate::qscalar::{permutations_with_inversions, q_falling, ratio_to_f64, Mode, QScalar};
use crate::wick::{ExpansionTerm, WickElement, WickEngine};

/// Largest arity of the exact q-symmetrized inner product.
pub const MAX_L2Q_ARITY: usize = 7;

fn require_body(model: &ProcessModel, what: &str) -> Result<()> {
    if model.kind != ModelKind::Body {
        return usage(format!("{what} is defined for the body construction only"));
    }
    Ok(())
}

/// Function on `n`-tuples of grid atoms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepFunction {
    mode: Mode,
    arity: usize,
    values: BTreeMap<Vec<usize>, QScalar>,
}

impl StepFunction {
    pub fn new(mode: Mode, arity: usize) -> Self {
        StepFunction { mode, arity, values: BTreeMap::new() }
    }

    /// `chi_{I_1 x ... x I_k}` for atom ranges `I_i`.
    pub fn indicator(mode: Mode, spans: &[Range<usize>]) -> Self {
        let mut f = StepFunction::new(mode, spans.len());
        let mut tuples: Vec<Vec<usize>> = vec![vec![]];
        for s in spans {
            tuples = tuples
                .into_iter()
                .flat_map(|t| {
                    s.clone().map(move |a| {
                        let mut t2 = t.clone();
                        t2.push(a);
                        t2
                    })
                })
                .collect();
        }
        for t in tuples {
            f.values.insert(t, mode.one());
        }
        f
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn values(&self) -> &BTreeMap<Vec<usize>, QScalar> {
        &self.values
    }

    pub fn get(&self, atoms: &[usize]) -> Option<&QScalar> {
        self.values.get(atoms)
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    /// Adds `c` at an atom tuple.
    pub fn add_at(&mut self, atoms: Vec<usize>, c: QScalar) -> Result<()> {
        if atoms.len() != self.arity {
            return usage(format!("tuple of length {} for a function of arity {}", atoms.len(), self.arity));
        }
        if c.is_zero() {
            return Ok(());
        }
        let e = self.values.entry(atoms.clone()).or_insert_with(|| self.mode.zero());
        *e += &c;
        if e.is_zero() {
            self.values.remove(&atoms);
        }
        Ok(())
    }

    pub fn add(&self, o: &StepFunction) -> Result<StepFunction> {
        let mut r = self.clone();
        for (t, c) in &o.values {
            r.add_at(t.clone(), c.clone())?;
        }
        Ok(r)
    }

    pub fn scale(&self, c: &QScalar) -> StepFunction {
        let mut r = StepFunction::new(self.mode, self.arity);
        for (t, x) in &self.values {
            r.add_at(t.clone(), x * c).expect("same arity");
        }
        r
    }

    /// Every tuple in the support has pairwise distinct atoms.
    pub fn is_off_diagonal(&self) -> bool {
        self.values.keys().all(|t| {
            let s: HashSet<&usize> = t.iter().collect();
            s.len() == t.len()
        })
    }
}

/// `<F, G>_q = sum a_u b_v sum_sigma q^{inv sigma} prod_i |I_{u(i)} cap J_{v(sigma(i))}|`.
pub fn l2q_inner(grid: &TimeGrid, f: &StepFunction, g: &StepFunction) -> Result<QScalar> {
    if f.arity != g.arity {
        return usage(format!("arity mismatch: {} vs {}", f.arity, g.arity));
    }
    if f.mode != g.mode {
        return Err(Error::ModeMismatch(f.mode.to_string(), g.mode.to_string()));
    }
    let n = f.arity;
    if n > MAX_L2Q_ARITY {
        return Err(Error::Resource(format!("q-symmetrized product of arity {n} exceeds {MAX_L2Q_ARITY}")));
    }
    let mode = f.mode;
    let mut acc = mode.zero();
    for (sigma, inv) in permutations_with_inversions(n) {
        let qk = mode.q_pow(inv);
        for (u, a) in &f.values {
            let mut v = vec![0; n];
            for i in 0..n {
                v[sigma[i]] = u[i];
            }
            if let Some(b) = g.values.get(&v) {
                let w = u.iter().fold(BigRational::one(), |p, &at| p * grid.width(at));
                acc += &(&(&(a * b) * &qk) * &mode.ratio(&w));
            }
        }
    }
    Ok(acc)
}

/// Integrator of a multiple integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    X,
    Y(usize),
    Yhat(usize),
}

impl Integrator {
    pub fn operator(&self, model: &ProcessModel, span: &Range<usize>) -> Result<FockOperator> {
        match *self {
            Integrator::X => model.x(span),
            Integrator::Y(k) => model.y(span, k),
            Integrator::Yhat(k) => model.yhat(span, k),
        }
    }

    pub fn letter(&self, model: &ProcessModel, span: &Range<usize>) -> Result<Letter> {
        match *self {
            Integrator::X => model.x_letter(span),
            Integrator::Y(k) => model.letter(span, k),
            Integrator::Yhat(k) => model.yhat_letter(span, k),
        }
    }
}

/// `int F dZ_1 ... dZ_n = sum F(A_1..A_n) Z_1(A_1) ... Z_n(A_n)`.
pub fn multiple_integral(model: &ProcessModel, f: &StepFunction, procs: &[Integrator]) -> Result<FockOperator> {
    if procs.len() != f.arity {
        return usage(format!("{} integrators for a function of arity {}", procs.len(), f.arity));
    }
    if !f.is_off_diagonal() {
        return usage("multiple integrals need support off the diagonals");
    }
    let mut terms = Vec::with_capacity(f.values.len());
    for (atoms, c) in &f.values {
        if atoms.is_empty() {
            terms.push((c.clone(), FockOperator::identity(model.mode)));
            continue;
        }
        let ops = atoms
            .iter()
            .zip(procs)
            .map(|(&a, p)| p.operator(model, &(a..a + 1)))
            .collect::<Result<Vec<_>>>()?;
        terms.push((c.clone(), FockOperator::compose(ops)));
    }
    Ok(FockOperator::sum(terms))
}

/// Discretized `St_pi(t; I) = sum_{u in [N]^n_pi} X(I_{u(1)}) ... X(I_{u(n)})`
/// over the atoms of `span`.
pub fn st_pi_discrete(model: &ProcessModel, pi: &SetPartition, span: &Range<usize>) -> Result<FockOperator> {
    if pi.n() > model.depth {
        return Err(Error::DepthExceeded(format!("{} factors at depth {}", pi.n(), model.depth)));
    }
    let fields: Vec<FockOperator> =
        span.clone().map(|a| model.x(&(a..a + 1))).collect::<Result<_>>()?;
    let mut terms = Vec::new();
    for u in index_tuples(span.len(), pi) {
        terms.push((model.mode.one(), FockOperator::compose(u.iter().map(|&i| fields[i - 1].clone()).collect())));
    }
    Ok(FockOperator::sum(terms))
}

/// `St_pi(t; I) Omega`, sharing suffix products between tuples.
pub fn st_pi_discrete_vacuum(model: &ProcessModel, pi: &SetPartition, span: &Range<usize>) -> Result<FockVector> {
    let n = pi.n();
    if n > model.depth {
        return Err(Error::DepthExceeded(format!("{n} factors at depth {}", model.depth)));
    }
    let fock = model.fock();
    if n == 0 {
        return Ok(fock.vacuum());
    }
    let atoms: Vec<usize> = span.clone().collect();
    let fields: Vec<FockOperator> = atoms.iter().map(|&a| model.x(&(a..a + 1))).collect::<Result<_>>()?;

    struct Walk<'a> {
        fock: &'a FockSpace,
        pi: &'a SetPartition,
        fields: &'a [FockOperator],
    }

    impl Walk<'_> {
        // elements are visited from n down to 1
        fn go(&self, pos: usize, assign: &mut Vec<Option<usize>>, v: &FockVector, acc: &mut FockVector) -> Result<()> {
            if pos == 0 {
                return acc.add_scaled(v, &v.mode().one());
            }
            let b = self.pi.block_of(pos);
            if let Some(a) = assign[b] {
                let w = self.fock.apply(&self.fields[a], v)?;
                return self.go(pos - 1, assign, &w, acc);
            }
            for a in 0..self.fields.len() {
                if assign.contains(&Some(a)) {
                    continue;
                }
                assign[b] = Some(a);
                let w = self.fock.apply(&self.fields[a], v)?;
                self.go(pos - 1, assign, &w, acc)?;
                assign[b] = None;
            }
            Ok(())
        }
    }

    let walk = Walk { fock: &fock, pi, fields: &fields };
    let top = pi.block_of(n);
    let om = fock.vacuum();
    let parts: Vec<Result<FockVector>> = (0..fields.len())
        .into_par_iter()
        .map(|a| {
            let mut assign = vec![None; pi.len()];
            assign[top] = Some(a);
            let mut acc = fock.zero_vector();
            let w = fock.apply(&fields[a], &om)?;
            walk.go(n - 1, &mut assign, &w, &mut acc)?;
            Ok(acc)
        })
        .collect();
    let mut out = fock.zero_vector();
    for p in parts {
        out.add_scaled(&p?, &model.mode.one())?;
    }
    Ok(out)
}

/// `Delta_k` over a span as an open letter `l^k` plus its drift: the
/// scalar of a closed block of size `k`.
#[derive(Clone, Debug)]
pub struct DeltaSlot {
    pub k: usize,
    pub letter: Letter,
    pub drift: QScalar,
}

pub fn delta_slot(model: &ProcessModel, span: &Range<usize>, k: usize) -> Result<DeltaSlot> {
    if k == 0 {
        return usage("Delta_k needs k >= 1");
    }
    let l = model.x_letter(span)?;
    let alg = &model.alg;
    let pow = alg.product_all(&vec![l.clone(); k]).map_err(cutoff_to_degenerate)?;
    let drift = if k == 1 {
        l.mean.clone()
    } else {
        let rest = alg.product_all(&vec![l.clone(); k - 1]).map_err(cutoff_to_degenerate)?;
        alg.pair(&l, &rest)
    };
    Ok(DeltaSlot { k, letter: pow, drift })
}

fn cutoff_to_degenerate(e: Error) -> Error {
    match e {
        Error::CutoffExceeded(m) => Error::Degenerate(format!("power leaves the degree cutoff: {m}")),
        o => o,
    }
}

/// `psi(Delta_{k_1}, ..., Delta_{k_m})`, expanded multilinearly: each slot
/// contributes either its letter or its drift.
pub fn psi_deltas(mode: Mode, slots: &[DeltaSlot]) -> WickElement {
    let m = slots.len();
    let mut e = WickElement::zero(mode);
    for mask in 0u32..(1u32 << m) {
        let mut c = mode.one();
        let mut word = Vec::new();
        for (i, s) in slots.iter().enumerate() {
            if mask >> i & 1 == 1 {
                word.push(s.letter.clone());
            } else {
                c = &c * &s.drift;
            }
        }
        e.push(c, word);
    }
    e
}

/// `psi(Y_{k_1}, ..., Y_{k_m})`, the Wick word of the power letters.
pub fn psi_powers(model: &ProcessModel, span: &Range<usize>, ks: &[usize]) -> Result<WickElement> {
    let letters = ks.iter().map(|&k| delta_slot(model, span, k).map(|s| s.letter)).collect::<Result<Vec<_>>>()?;
    Ok(WickElement::word(model.mode, letters))
}

/// Terms of the closed form `sum_S q^{rc(S,pi)} R_{pi \ S} psi(Y_{|B|} : B in S)`.
pub fn st_pi_terms(model: &ProcessModel, pi: &SetPartition, span: &Range<usize>) -> Result<Vec<ExpansionTerm>> {
    let mode = model.mode;
    let slots: Vec<DeltaSlot> = pi.blocks().iter().map(|b| delta_slot(model, span, b.len())).collect::<Result<_>>()?;
    let m = pi.len();
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << m) {
        let open: Vec<bool> = (0..m).map(|b| mask >> b & 1 == 1).collect();
        let mut scalar = mode.one();
        let mut word = Vec::new();
        for (b, s) in slots.iter().enumerate() {
            if open[b] {
                word.push(s.letter.clone());
            } else {
                scalar = &scalar * &s.drift;
            }
        }
        if scalar.is_zero() {
            continue;
        }
        let ep = ExtendedPartition::new(pi.clone(), open)?;
        let r = rc(&ep);
        out.push(ExpansionTerm { partition: ep, rc: r, coefficient: mode.q_pow(r), scalar, word });
    }
    Ok(out)
}

/// Closed form of `St_pi` over `span` as a Wick element.
pub fn st_pi_closed(model: &ProcessModel, pi: &SetPartition, span: &Range<usize>) -> Result<WickElement> {
    let mut e = WickElement::zero(model.mode);
    for t in st_pi_terms(model, pi, span)? {
        e.push(&t.coefficient * &t.scalar, t.word);
    }
    Ok(e)
}

/// q-Gaussian form: `q^{rc(Sing, pi)} t^{|Pairs|} psi_{|Sing|}` for blocks of
/// size at most two, zero otherwise.
pub fn st_pi_q_gaussian(model: &ProcessModel, pi: &SetPartition, span: &Range<usize>) -> Result<WickElement> {
    let mode = model.mode;
    let c = classify(pi);
    if pi.blocks().iter().any(|b| b.len() > 2) {
        return Ok(WickElement::zero(mode));
    }
    let open: Vec<bool> = pi.blocks().iter().map(|b| b.len() == 1).collect();
    let r = rc(&ExtendedPartition::new(pi.clone(), open)?);
    let t = mode.ratio(&model.span_length(span));
    let mut coef = mode.q_pow(r);
    for _ in 0..c.pairs.len() {
        coef = &coef * &t;
    }
    let e = psi_powers(model, span, &vec![1; c.singletons.len()])?;
    Ok(e.scale(&coef))
}

/// Free form: `R_{Inner}(t) psi(Delta_{|B|} : B in Outer)` for noncrossing
/// `pi`, zero otherwise.
pub fn st_pi_free(model: &ProcessModel, pi: &SetPartition, span: &Range<usize>) -> Result<WickElement> {
    let mode = model.mode;
    let c = classify(pi);
    if !c.is_noncrossing {
        return Ok(WickElement::zero(mode));
    }
    let mut coef = mode.one();
    for &b in c.inner_blocks()? {
        coef = &coef * &delta_slot(model, span, pi.blocks()[b].len())?.drift;
    }
    let slots: Vec<DeltaSlot> = c
        .outer_blocks()?
        .iter()
        .map(|&b| delta_slot(model, span, pi.blocks()[b].len()))
        .collect::<Result<_>>()?;
    Ok(psi_deltas(mode, &slots).scale(&coef))
}

/// `{ {1, interior.., n}, singletons }` with the first block of size `k`.
pub fn one_block_partition(n: usize, interior: &[usize]) -> Result<SetPartition> {
    if n < 2 {
        return usage("one-block partitions need n >= 2");
    }
    let mut big = vec![1];
    big.extend_from_slice(interior);
    big.push(n);
    let mut blocks = vec![big.clone()];
    for e in 2..n {
        if !big.contains(&e) {
            blocks.push(vec![e]);
        }
    }
    SetPartition::new(n, blocks)
}

/// `q^{n-k} psi(Delta_k, X, ..., X)`.
pub fn one_block_form(model: &ProcessModel, n: usize, k: usize, span: &Range<usize>) -> Result<WickElement> {
    let mut slots = vec![delta_slot(model, span, k)?];
    for _ in 0..n - k {
        slots.push(delta_slot(model, span, 1)?);
    }
    Ok(psi_deltas(model.mode, &slots).scale(&model.mode.q_pow(n - k)))
}

/// `X(t)^n Omega` against `sum_pi St_pi(t) Omega`.
#[derive(Clone, Debug)]
pub struct PowerDecomposition {
    pub n: usize,
    pub power: FockVector,
    pub partition_sum: FockVector,
}

impl PowerDecomposition {
    pub fn residual(&self) -> Result<FockVector> {
        self.power.sub(&self.partition_sum)
    }

    pub fn holds(&self) -> bool {
        self.power == self.partition_sum
    }
}

pub fn power_decomposition(model: &ProcessModel, n: usize, span: &Range<usize>) -> Result<PowerDecomposition> {
    if n == 0 {
        return usage("power decomposition needs n >= 1");
    }
    let fock = model.fock();
    let x = model.x(span)?;
    let mut power = fock.vacuum();
    for _ in 0..n {
        power = fock.apply(&x, &power)?;
    }
    let mut sum = fock.zero_vector();
    for pi in enumerate_partitions(n)? {
        sum.add_scaled(&st_pi_closed(model, &pi, span)?.vector(&fock)?, &model.mode.one())?;
    }
    Ok(PowerDecomposition { n, power, partition_sum: sum })
}

/// Both sides of `psi_{n+1} = sum_k (-1)^k [n]!/[n-k]! Delta_{k+1} psi_{n-k}`
/// applied to the vacuum.
pub fn ks_operator_chain(model: &ProcessModel, engine: &WickEngine, n: usize, span: &Range<usize>) -> Result<(FockVector, FockVector)> {
    let mode = model.mode;
    let fock = model.fock();
    let om = fock.vacuum();
    let l = model.x_letter(span)?;
    let lhs = fock.apply(&engine.wick(&vec![l.clone(); n + 1])?, &om)?;
    let mut terms = Vec::new();
    for k in 0..=n {
        let sign = if k % 2 == 0 { mode.one() } else { -mode.one() };
        let c = &sign * &q_falling(mode, n, k);
        let d = model.delta(span, k + 1)?;
        terms.push((c, d.times(&engine.wick(&vec![l.clone(); n - k])?)));
    }
    let rhs = fock.apply(&FockOperator::sum(terms), &om)?;
    Ok((lhs, rhs))
}

/// Chaos decomposition over the orthogonalized processes.
#[derive(Clone, Debug)]
pub struct ChaosDecomposition {
    pub terms: BTreeMap<Vec<usize>, StepFunction>,
    /// `int P_{k-1}^2 dnu` for `k = 1..=cutoff`.
    pub norm_factors: Vec<BigRational>,
}

/// Expands `v` in the basis `chi_A (x) P_{k-1}` and groups by multi-index.
pub fn chaos_decompose(model: &ProcessModel, v: &FockVector) -> Result<ChaosDecomposition> {
    require_body(model, "chaos decomposition")?;
    let mode = model.mode;
    let d = model.cutoff;
    // yhat_k = sum_j c[k][j] Y_{j+1}; invert the unit triangular change of basis
    let c: Vec<Vec<BigRational>> = (1..=d).map(|k| model.yhat_coefficients(k)).collect::<Result<_>>()?;
    let mut inv: Vec<Vec<BigRational>> = Vec::with_capacity(d);
    for k in 0..d {
        let mut row = vec![BigRational::zero(); d];
        row[k] = BigRational::one();
        for j in 0..k {
            let cj = &c[k][j];
            if cj.is_zero() {
                continue;
            }
            for (i, x) in inv[j].iter().enumerate() {
                row[i] -= cj * x;
            }
        }
        inv.push(row);
    }
    let norm_factors = (1..=d).map(|k| model.yhat_norm_factor(k)).collect::<Result<Vec<_>>>()?;
    let mut terms: BTreeMap<Vec<usize>, StepFunction> = BTreeMap::new();
    for (w, coef) in v.terms() {
        let atoms: Vec<usize> = w.iter().map(|&i| model.atom_of(i as usize)).collect();
        let powers: Vec<usize> = w.iter().map(|&i| i as usize % d).collect();
        let mut partial: Vec<(Vec<usize>, QScalar)> = vec![(vec![], coef.clone())];
        for &k in &powers {
            let mut next = Vec::new();
            for (u, x) in &partial {
                for (j, m) in inv[k].iter().enumerate() {
                    if m.is_zero() {
                        continue;
                    }
                    let mut u2 = u.clone();
                    u2.push(j + 1);
                    next.push((u2, x.scale_ratio(m)));
                }
            }
            partial = next;
        }
        for (u, x) in partial {
            let n = u.len();
            terms.entry(u).or_insert_with(|| StepFunction::new(mode, n)).add_at(atoms.clone(), x)?;
        }
    }
    terms.retain(|_, f| !f.is_zero());
    Ok(ChaosDecomposition { terms, norm_factors })
}

impl ChaosDecomposition {
    /// `sum_u sum_A F_u(A) (chi_{A_1} (x) P_{u_1 - 1}) (x) ...`.
    pub fn reconstruct(&self, model: &ProcessModel) -> Result<FockVector> {
        let fock = model.fock();
        let mut out = fock.zero_vector();
        for (u, f) in &self.terms {
            for (atoms, c) in f.values() {
                let xs: Vec<OneVec> = atoms
                    .iter()
                    .zip(u)
                    .map(|(&a, &k)| model.yhat_letter(&(a..a + 1), k).map(|l| l.xi))
                    .collect::<Result<_>>()?;
                out.add_scaled(&FockVector::tensor(model.mode, fock.depth, &xs)?, c)?;
            }
        }
        Ok(out)
    }

    /// Squared norm including the pairings between multi-indices that are
    /// rearrangements of each other.
    pub fn norm_sq(&self, model: &ProcessModel) -> Result<QScalar> {
        let mode = model.mode;
        let mut acc = mode.zero();
        for (u, f) in &self.terms {
            let n = u.len();
            for (sigma, inv) in permutations_with_inversions(n) {
                let mut u2 = vec![0; n];
                for i in 0..n {
                    u2[sigma[i]] = u[i];
                }
                let Some(g) = self.terms.get(&u2) else { continue };
                let qk = mode.q_pow(inv);
                for (a, x) in f.values() {
                    let mut b = vec![0; n];
                    for i in 0..n {
                        b[sigma[i]] = a[i];
                    }
                    if let Some(y) = g.get(&b) {
                        let mut w = BigRational::one();
                        for i in 0..n {
                            w *= model.grid.width(a[i]) * &self.norm_factors[u[i] - 1];
                        }
                        acc += &(&(&(x * y) * &qk) * &mode.ratio(&w));
                    }
                }
            }
        }
        Ok(acc)
    }

    /// `sum_u ||F_u||_q^2 prod h_{u_i}`, ignoring cross pairings.
    pub fn norm_sq_diagonal(&self, model: &ProcessModel) -> Result<QScalar> {
        let mode = model.mode;
        let mut acc = mode.zero();
        for (u, f) in &self.terms {
            let h = u.iter().fold(BigRational::one(), |p, &k| p * &self.norm_factors[k - 1]);
            acc += &l2q_inner(&model.grid, f, f)?.scale_ratio(&h);
        }
        Ok(acc)
    }
}

fn element_atoms(model: &ProcessModel, e: &WickElement) -> impl Iterator<Item = usize> {
    let v: Vec<usize> = e
        .terms()
        .iter()
        .flat_map(|(_, w)| w.iter().flat_map(|l| l.xi.support().map(|i| model.atom_of(i as usize))))
        .collect();
    v.into_iter()
}

fn check_adapted(model: &ProcessModel, span: &Range<usize>, e: &WickElement) -> Result<()> {
    if span.start >= span.end || span.end > model.grid.atoms() {
        return usage(format!("atom range {span:?} outside the grid"));
    }
    if let Some(a) = element_atoms(model, e).find(|&a| a >= span.start) {
        return usage(format!("process value on {span:?} uses atom {a}, which is not in the past"));
    }
    Ok(())
}

/// `sum_i U_i chi_{I_i}` with each `U_i` measurable before `I_i`.
#[derive(Clone, Debug)]
pub struct AdaptedProcess {
    pieces: Vec<(Range<usize>, WickElement)>,
}

impl AdaptedProcess {
    pub fn new(model: &ProcessModel, pieces: Vec<(Range<usize>, WickElement)>) -> Result<Self> {
        for (i, (s, u)) in pieces.iter().enumerate() {
            check_adapted(model, s, u)?;
            for (s2, _) in &pieces[..i] {
                if s.start < s2.end && s2.start < s.end {
                    return usage(format!("intervals {s2:?} and {s:?} overlap"));
                }
            }
        }
        Ok(AdaptedProcess { pieces })
    }

    pub fn pieces(&self) -> &[(Range<usize>, WickElement)] {
        &self.pieces
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// `sum U_i X(I_i)` (left) or `sum X(I_i) U_i` (right).
pub fn ito_integral(model: &ProcessModel, engine: &WickEngine, u: &AdaptedProcess, side: Side) -> Result<FockOperator> {
    let mut terms = Vec::new();
    for (s, e) in &u.pieces {
        let w = e.operator(engine)?;
        let x = model.x(s)?;
        let op = match side {
            Side::Left => w.times(&x),
            Side::Right => x.times(&w),
        };
        terms.push((model.mode.one(), op));
    }
    Ok(FockOperator::sum(terms))
}

fn overlap(grid: &TimeGrid, a: &Range<usize>, b: &Range<usize>) -> BigRational {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end);
    if lo >= hi {
        BigRational::zero()
    } else {
        grid.span_length(&(lo..hi))
    }
}

/// `r_2 int <U(t), V(t)>_phi dt`.
pub fn ito_isometry_rhs(model: &ProcessModel, u: &AdaptedProcess, v: &AdaptedProcess) -> Result<QScalar> {
    let fock = model.fock();
    let mode = model.mode;
    let r2 = model.moments.r(2)?.clone();
    let mut acc = mode.zero();
    for (s, a) in &u.pieces {
        for (t, b) in &v.pieces {
            let w = overlap(&model.grid, s, t);
            if w.is_zero() {
                continue;
            }
            let ip = fock.innerq(&a.vector(&fock)?, &b.vector(&fock)?)?;
            acc += &ip.scale_ratio(&(w * &r2));
        }
    }
    Ok(acc)
}

/// `Gamma_q(q)` on a Wick element: degree-n words scaled by `q^n`.
pub fn gamma_q(e: &WickElement) -> WickElement {
    let mode = e.mode();
    let mut r = WickElement::zero(mode);
    for (c, w) in e.terms() {
        r.push(c * &mode.q_pow(w.len()), w.clone());
    }
    r
}

/// Closed form `sum_i Delta_2(I_i) Gamma_q(q)(U_i)`.
pub fn two_sided_integral(model: &ProcessModel, engine: &WickEngine, u: &AdaptedProcess) -> Result<FockOperator> {
    require_body(model, "the two-sided integral closed form")?;
    let mut terms = Vec::new();
    for (s, e) in &u.pieces {
        terms.push((model.mode.one(), model.delta(s, 2)?.times(&gamma_q(e).operator(engine)?)));
    }
    Ok(FockOperator::sum(terms))
}

/// `sum_i sum_{A in I_i} X(A) U_i X(A)` on the model grid.
pub fn two_sided_discrete(model: &ProcessModel, engine: &WickEngine, u: &AdaptedProcess) -> Result<FockOperator> {
    let mut terms = Vec::new();
    for (s, e) in &u.pieces {
        let w = e.operator(engine)?;
        for a in s.clone() {
            let x = model.x(&(a..a + 1))?;
            terms.push((model.mode.one(), FockOperator::compose(vec![x.clone(), w.clone(), x])));
        }
    }
    Ok(FockOperator::sum(terms))
}

/// `sum_i sum_{A in I_i} xi_A (x) U_i Omega (x) xi_A`, the exact gap between
/// the discrete sums and the closed form on the vacuum.
pub fn two_sided_remainder(model: &ProcessModel, u: &AdaptedProcess) -> Result<FockVector> {
    let fock = model.fock();
    let mut out = fock.zero_vector();
    for (s, e) in &u.pieces {
        let v = e.vector(&fock)?;
        for a in s.clone() {
            let xi = model.x_letter(&(a..a + 1))?.xi;
            for (w, c) in v.terms() {
                for (i, x) in xi.entries() {
                    for (j, y) in xi.entries() {
                        let mut w2 = vec![*i];
                        w2.extend_from_slice(w);
                        w2.push(*j);
                        out.add_term(w2, &(c * x) * y)?;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Keeps the words over atoms before time `t`.
pub fn past_projection(model: &ProcessModel, v: &FockVector, t: &BigRational) -> Result<FockVector> {
    let cut = model.grid.point_index(t)?;
    model.fock().project(v, &|i| model.atom_of(i as usize) < cut)
}

/// `E_t[W(v)] = W(P_t v)`.
pub fn conditional_expectation(model: &ProcessModel, a: &WickElement, t: &BigRational) -> Result<WickElement> {
    let fock = model.fock();
    let v = past_projection(model, &a.vector(&fock)?, t)?;
    Ok(WickElement::from_vector(&model.alg, &v))
}

/// Simple bi-process `sum_i A^i (x) B^i` on a common decomposition.
#[derive(Clone, Debug)]
pub struct BiProcess {
    spans: Vec<Range<usize>>,
    terms: Vec<(Vec<WickElement>, Vec<WickElement>)>,
}

impl BiProcess {
    pub fn new(
        model: &ProcessModel,
        spans: Vec<Range<usize>>,
        terms: Vec<(Vec<WickElement>, Vec<WickElement>)>,
    ) -> Result<Self> {
        for (a, b) in &terms {
            if a.len() != spans.len() || b.len() != spans.len() {
                return usage("bi-process factors must use the common decomposition");
            }
            for (j, s) in spans.iter().enumerate() {
                check_adapted(model, s, &a[j])?;
                check_adapted(model, s, &b[j])?;
            }
        }
        for (i, s) in spans.iter().enumerate() {
            for s2 in &spans[..i] {
                if s.start < s2.end && s2.start < s.end {
                    return usage(format!("intervals {s2:?} and {s:?} overlap"));
                }
            }
        }
        Ok(BiProcess { spans, terms })
    }

    pub fn spans(&self) -> &[Range<usize>] {
        &self.spans
    }
}

/// `int U # dX = sum_i sum_j A^i_j X(I_j) B^i_j`.
pub fn biprocess_integral(model: &ProcessModel, engine: &WickEngine, u: &BiProcess) -> Result<FockOperator> {
    let mut terms = Vec::new();
    for (a, b) in &u.terms {
        for (j, s) in u.spans.iter().enumerate() {
            let op = FockOperator::compose(vec![a[j].operator(engine)?, model.x(s)?, b[j].operator(engine)?]);
            terms.push((model.mode.one(), op));
        }
    }
    Ok(FockOperator::sum(terms))
}

/// `<<A1 (x) B1, A2 (x) B2>> = phi[B1* Gamma_q(q)(A1* A2) B2]`.
pub fn biprocess_pairing(
    model: &ProcessModel,
    engine: &WickEngine,
    a1: &WickElement,
    b1: &WickElement,
    a2: &WickElement,
    b2: &WickElement,
) -> Result<QScalar> {
    let fock = model.fock();
    let om = fock.vacuum();
    let a2v = fock.apply(&a2.operator(engine)?, &om)?;
    let prod = fock.apply(&a1.operator(engine)?.adjoint()?, &a2v)?;
    let g = engine.wick_vector(&fock.gamma_q(&prod))?;
    let b2v = fock.apply(&g, &b2.vector(&fock)?)?;
    fock.innerq(&b1.vector(&fock)?, &b2v)
}

/// `int <<U(t), V(t)>> dt`.
pub fn biprocess_inner(model: &ProcessModel, engine: &WickEngine, u: &BiProcess, v: &BiProcess) -> Result<QScalar> {
    if u.spans != v.spans {
        return usage("bi-processes must share the decomposition");
    }
    let mut acc = model.mode.zero();
    for (j, s) in u.spans.iter().enumerate() {
        let w = model.span_length(s);
        for (a1, b1) in &u.terms {
            for (a2, b2) in &v.terms {
                acc += &biprocess_pairing(model, engine, &a1[j], &b1[j], &a2[j], &b2[j])?.scale_ratio(&w);
            }
        }
    }
    Ok(acc)
}

/// The two 5-factor moments of the traciality test and their closed forms.
#[derive(Clone, Debug)]
pub struct TracialityWitness {
    /// `phi[X(I) X(J) X(I) X(J) Y_k(I)]`.
    pub forward: QScalar,
    /// `phi[Y_k(I) X(I) X(J) X(I) X(J)]`.
    pub backward: QScalar,
    pub expected_forward: QScalar,
    pub expected_backward: QScalar,
}

impl TracialityWitness {
    pub fn matches(&self) -> bool {
        self.forward == self.expected_forward && self.backward == self.expected_backward
    }

    pub fn gap(&self) -> QScalar {
        &self.forward - &self.backward
    }
}

pub fn traciality_witness(model: &ProcessModel, i: &Range<usize>, j: &Range<usize>, k: usize) -> Result<TracialityWitness> {
    require_body(model, "the traciality witness")?;
    if i.start < j.end && j.start < i.end {
        return usage("the witness needs disjoint intervals");
    }
    let mode = model.mode;
    let fock = model.fock();
    let xi = model.x(i)?;
    let xj = model.x(j)?;
    let yk = model.y(i, k)?;
    let om = fock.vacuum();
    let fwd = FockOperator::compose(vec![xi.clone(), xj.clone(), xi.clone(), xj.clone(), yk.clone()]);
    let bwd = FockOperator::compose(vec![yk, xi.clone(), xj.clone(), xi, xj]);
    let forward = fock.apply(&fwd, &om)?.vacuum_coefficient();
    let backward = fock.apply(&bwd, &om)?.vacuum_coefficient();
    let base = model.moments.r(2)? * model.moments.r(2 + k)? * model.span_length(i) * model.span_length(j);
    Ok(TracialityWitness {
        forward,
        backward,
        expected_forward: mode.q_pow(2).scale_ratio(&base),
        expected_backward: mode.q().scale_ratio(&base),
    })
}

/// One refinement level of a convergence experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub atoms: usize,
    pub delta: f64,
    pub error: f64,
}

/// Least-squares slope of `log error` against `log delta`; infinite when
/// every error vanishes.
pub fn fit_slope(rows: &[ConvergenceRow]) -> Result<f64> {
    if rows.len() < 3 {
        return usage(format!("slope fit needs at least 3 rows (got {})", rows.len()));
    }
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.error > 1e-14).map(|r| (r.delta.ln(), r.error.ln())).collect();
    if pts.is_empty() {
        return Ok(f64::INFINITY);
    }
    if pts.len() < 3 {
        return usage("slope fit needs at least 3 nonzero errors");
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return usage("slope fit needs distinct mesh sizes");
    }
    Ok(sxy / sxx)
}

fn float_body(q: f64, moments: &MomentSequence, t: &BigRational, atoms: usize, cutoff: usize, depth: usize) -> Result<ProcessModel> {
    let cutoff = cutoff.max(1);
    ProcessModel::body(Mode::float(q)?, moments.clone(), TimeGrid::uniform(t.clone(), atoms)?, cutoff, depth)
}

/// `|| St_pi(t; I) - St_pi(t) ||_2` over uniform grids with the given atom
/// counts, in float mode.
pub fn st_pi_convergence(
    q: f64,
    moments: &MomentSequence,
    pi: &SetPartition,
    t: &BigRational,
    schedule: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    if schedule.is_empty() {
        return usage("empty refinement schedule");
    }
    let cutoff = pi.blocks().iter().map(Vec::len).max().unwrap_or(1);
    let rows: Vec<Result<ConvergenceRow>> = schedule
        .par_iter()
        .map(|&n_atoms| {
            let model = float_body(q, moments, t, n_atoms, cutoff, pi.n())?;
            let span = model.full_span();
            let fock = model.fock();
            let disc = st_pi_discrete_vacuum(&model, pi, &span)?;
            let closed = st_pi_closed(&model, pi, &span)?.vector(&fock)?;
            let err = fock.norm_sq(&disc.sub(&closed)?)?.value_at(q).max(0.0).sqrt();
            Ok(ConvergenceRow { atoms: n_atoms, delta: ratio_to_f64(&model.grid.delta()), error: err })
        })
        .collect();
    rows.into_iter().collect()
}

/// Two-sided integral over `[t/2, t)` of `U = W(X([0, t/2))^{(x) k})`:
/// `|| sum X(A) U X(A) - Delta_2 Gamma_q(q)(U) ||_2` per refinement.
pub fn two_sided_convergence(
    q: f64,
    moments: &MomentSequence,
    k: usize,
    t: &BigRational,
    schedule: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    if schedule.is_empty() {
        return usage("empty refinement schedule");
    }
    if schedule.iter().any(|n| n % 2 != 0) {
        return usage("two-sided experiment needs even atom counts");
    }
    let rows: Vec<Result<ConvergenceRow>> = schedule
        .par_iter()
        .map(|&n_atoms| {
            let model = float_body(q, moments, t, n_atoms, 2, k + 2)?;
            let engine = WickEngine::new(model.alg.clone());
            let half = n_atoms / 2;
            let past = model.x_letter(&(0..half))?;
            let u = AdaptedProcess::new(&model, vec![(half..n_atoms, WickElement::word(model.mode, vec![past; k]))])?;
            let fock = model.fock();
            let om = fock.vacuum();
            let disc = fock.apply(&two_sided_discrete(&model, &engine, &u)?, &om)?;
            let closed = fock.apply(&two_sided_integral(&model, &engine, &u)?, &om)?;
            let err = fock.norm_sq(&disc.sub(&closed)?)?.value_at(q).max(0.0).sqrt();
            Ok(ConvergenceRow { atoms: n_atoms, delta: ratio_to_f64(&model.grid.delta()), error: err })
        })
        .collect();
    rows.into_iter().collect()
}
