//! Wick map on letter words, product expansion over extended partitions,
//! vacuum moments and the right (commutant) field operators.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{FockOperator, FockSpace, FockVector, OneVec, WordAction};
use crate::model::{Letter, LetterAlgebra};
use crate::partitions::{enumerate_partitions, rc, ExtendedPartition, SetPartition};
use crate::qscalar::{Mode, QScalar};

/// Largest number of factors accepted by [`product_expansion`].
pub const MAX_EXPANSION: usize = 8;
/// Largest number of factors accepted by [`vacuum_moment`].
pub const MAX_MOMENT: usize = 10;

fn degenerate(e: Error) -> Error {
    match e {
        Error::CutoffExceeded(m) => Error::Degenerate(format!("letter product leaves the degree cutoff: {m}")),
        other => other,
    }
}

/// Memoizing evaluator of the Wick map over one letter algebra.
pub struct WickEngine {
    alg: Arc<LetterAlgebra>,
    memo: Mutex<HashMap<Vec<Letter>, FockOperator>>,
}

impl fmt::Debug for WickEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WickEngine(dim {})", self.alg.dim())
    }
}

impl WickEngine {
    pub fn new(alg: Arc<LetterAlgebra>) -> Self {
        WickEngine { alg, memo: Mutex::new(HashMap::new()) }
    }

    pub fn algebra(&self) -> &Arc<LetterAlgebra> {
        &self.alg
    }

    pub fn mode(&self) -> Mode {
        self.alg.mode()
    }

    /// `W(l_1 (x) ... (x) l_n)`.
    ///
    /// `W(l_0, rest) = X(l_0) W(rest) - sum_i q^{i-1} <l_0, l_i> W(rest \ i)
    ///   - sum_i q^{i-1} W(l_0 l_i, rest \ i) - mean(l_0) W(rest)`.
    pub fn wick(&self, word: &[Letter]) -> Result<FockOperator> {
        let mode = self.mode();
        if word.is_empty() {
            return Ok(FockOperator::identity(mode));
        }
        if word.iter().any(|l| l.xi.is_zero()) {
            return Ok(FockOperator::zero());
        }
        if let Some(op) = self.memo.lock().unwrap().get(word) {
            return Ok(op.clone());
        }
        let l0 = &word[0];
        let rest = &word[1..];
        let mut terms = vec![(mode.one(), l0.field().times(&self.wick(rest)?))];
        for i in 0..rest.len() {
            let qi = mode.q_pow(i);
            let mut without: Vec<Letter> = rest.to_vec();
            let li = without.remove(i);
            let pair = self.alg.pair(l0, &li);
            if !pair.is_zero() {
                terms.push((-(&qi * &pair), self.wick(&without)?));
            }
            let prod = self.alg.product(l0, &li).map_err(degenerate)?;
            if !prod.xi.is_zero() {
                let mut merged = Vec::with_capacity(rest.len());
                merged.push(prod);
                merged.extend(without);
                terms.push((-qi, self.wick(&merged)?));
            }
        }
        if !l0.mean.is_zero() {
            terms.push((-l0.mean.clone(), self.wick(rest)?));
        }
        let op = FockOperator::sum(terms);
        self.memo.lock().unwrap().insert(word.to_vec(), op.clone());
        Ok(op)
    }

    /// `W` of a basis word.
    pub fn wick_basis(&self, word: &[u32]) -> Result<FockOperator> {
        let letters: Vec<Letter> = word.iter().map(|&i| self.alg.basis_letter(i as usize).clone()).collect();
        self.wick(&letters)
    }

    /// `W(v)` for a Fock vector, by linearity over its basis words.
    pub fn wick_vector(&self, v: &FockVector) -> Result<FockOperator> {
        let mut terms = Vec::with_capacity(v.len());
        for (w, c) in v.terms() {
            terms.push((c.clone(), self.wick_basis(w)?));
        }
        Ok(FockOperator::sum(terms))
    }

    pub fn memo_len(&self) -> usize {
        self.memo.lock().unwrap().len()
    }
}

/// Formal linear combination of letter words, the pre-image of a Wick
/// operator.
#[derive(Clone, Debug)]
pub struct WickElement {
    mode: Mode,
    terms: Vec<(QScalar, Vec<Letter>)>,
}

impl WickElement {
    pub fn zero(mode: Mode) -> Self {
        WickElement { mode, terms: Vec::new() }
    }

    pub fn identity(mode: Mode) -> Self {
        WickElement { mode, terms: vec![(mode.one(), Vec::new())] }
    }

    pub fn word(mode: Mode, letters: Vec<Letter>) -> Self {
        WickElement { mode, terms: vec![(mode.one(), letters)] }
    }

    /// Pre-image of a Fock vector over basis letters.
    pub fn from_vector(alg: &LetterAlgebra, v: &FockVector) -> Self {
        let terms = v
            .terms()
            .iter()
            .map(|(w, c)| (c.clone(), w.iter().map(|&i| alg.basis_letter(i as usize).clone()).collect()))
            .collect();
        WickElement { mode: v.mode(), terms }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn terms(&self) -> &[(QScalar, Vec<Letter>)] {
        &self.terms
    }

    pub fn push(&mut self, c: QScalar, letters: Vec<Letter>) {
        if !c.is_zero() {
            self.terms.push((c, letters));
        }
    }

    pub fn add(&self, o: &WickElement) -> WickElement {
        let mut r = self.clone();
        r.terms.extend(o.terms.iter().cloned());
        r
    }

    pub fn scale(&self, c: &QScalar) -> WickElement {
        let mut r = WickElement::zero(self.mode);
        for (x, w) in &self.terms {
            r.push(x * c, w.clone());
        }
        r
    }

    /// Longest word.
    pub fn degree(&self) -> usize {
        self.terms.iter().map(|(_, w)| w.len()).max().unwrap_or(0)
    }

    /// `sum c (xi_1 (x) ... (x) xi_n)`, which is `W(element) Omega`.
    pub fn vector(&self, fock: &FockSpace) -> Result<FockVector> {
        let mut out = fock.zero_vector();
        for (c, w) in &self.terms {
            let xs: Vec<OneVec> = w.iter().map(|l| l.xi.clone()).collect();
            let t = FockVector::tensor(self.mode, fock.depth, &xs)?;
            out.add_scaled(&t, c)?;
        }
        Ok(out)
    }

    /// The operator `W(element)`.
    pub fn operator(&self, engine: &WickEngine) -> Result<FockOperator> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for (c, w) in &self.terms {
            terms.push((c.clone(), engine.wick(w)?));
        }
        Ok(FockOperator::sum(terms))
    }
}

/// One `(S, pi)` contribution to a product expansion.
#[derive(Clone, Debug)]
pub struct ExpansionTerm {
    pub partition: ExtendedPartition,
    pub rc: usize,
    /// `q^{rc(S, pi)}`.
    pub coefficient: QScalar,
    /// Product of the closed-block scalars.
    pub scalar: QScalar,
    /// Open-block letters, ordered by block minima.
    pub word: Vec<Letter>,
}

impl ExpansionTerm {
    /// `partition ; rc ; scalar ; word` line.
    pub fn ledger_line(&self) -> String {
        let word: Vec<String> = self.word.iter().map(|l| format!("[{l}]")).collect();
        format!("{} ; rc={} ; scalar={} ; W({})", self.partition, self.rc, self.scalar, word.join(" (x) "))
    }
}

/// `X(l_1) ... X(l_n)` as a sum of Wick operators.
#[derive(Clone, Debug)]
pub struct ProductExpansion {
    pub n: usize,
    pub terms: Vec<ExpansionTerm>,
}

impl ProductExpansion {
    pub fn ledger(&self) -> Vec<String> {
        self.terms.iter().map(ExpansionTerm::ledger_line).collect()
    }

    pub fn element(&self, mode: Mode) -> WickElement {
        let mut e = WickElement::zero(mode);
        for t in &self.terms {
            e.push(&t.coefficient * &t.scalar, t.word.clone());
        }
        e
    }

    /// Right-hand side applied to the vacuum.
    pub fn vacuum_vector(&self, mode: Mode, fock: &FockSpace) -> Result<FockVector> {
        self.element(mode).vector(fock)
    }
}

/// Per-block data: closed scalar and open letter.
struct BlockData {
    closed: QScalar,
    open: Letter,
}

fn block_data(alg: &LetterAlgebra, letters: &[Letter], pi: &SetPartition) -> Result<Vec<BlockData>> {
    pi.blocks()
        .iter()
        .map(|b| {
            let ls: Vec<Letter> = b.iter().map(|&i| letters[i - 1].clone()).collect();
            let open = alg.product_all(&ls).map_err(degenerate)?;
            let closed = if ls.len() == 1 {
                ls[0].mean.clone()
            } else {
                let rest = alg.product_all(&ls[1..]).map_err(degenerate)?;
                alg.pair(&ls[0], &rest)
            };
            Ok(BlockData { closed, open })
        })
        .collect()
}

/// Expansion of `X(l_1) ... X(l_n)` over extended partitions `(S, pi)`:
/// closed singletons give `mean(l)`, larger closed blocks
/// `<xi_{l_min}, T ... xi_{l_max}>`, open blocks the ordered letter product.
/// Terms with a vanishing scalar are omitted.
pub fn product_expansion(alg: &LetterAlgebra, letters: &[Letter]) -> Result<ProductExpansion> {
    let n = letters.len();
    if n > MAX_EXPANSION {
        return Err(Error::Resource(format!(
            "product expansion of {n} factors exceeds the budget of {MAX_EXPANSION}"
        )));
    }
    let mode = alg.mode();
    if n == 0 {
        let t = ExpansionTerm {
            partition: ExtendedPartition::closed(SetPartition::new(0, vec![])?),
            rc: 0,
            coefficient: mode.one(),
            scalar: mode.one(),
            word: vec![],
        };
        return Ok(ProductExpansion { n, terms: vec![t] });
    }
    let parts: Vec<SetPartition> = enumerate_partitions(n)?.collect();
    let chunks: Vec<Result<Vec<ExpansionTerm>>> = parts
        .par_iter()
        .map(|pi| {
            let data = block_data(alg, letters, pi)?;
            let m = pi.len();
            let mut out = Vec::new();
            for mask in 0u32..(1u32 << m) {
                let open: Vec<bool> = (0..m).map(|b| mask >> b & 1 == 1).collect();
                let mut scalar = mode.one();
                for (b, d) in data.iter().enumerate() {
                    if !open[b] {
                        scalar = &scalar * &d.closed;
                    }
                }
                if scalar.is_zero() {
                    continue;
                }
                let word: Vec<Letter> = (0..m).filter(|&b| open[b]).map(|b| data[b].open.clone()).collect();
                if word.iter().any(|l| l.xi.is_zero()) {
                    continue;
                }
                let ep = ExtendedPartition::new(pi.clone(), open)?;
                let r = rc(&ep);
                out.push(ExpansionTerm { partition: ep, rc: r, coefficient: mode.q_pow(r), scalar, word });
            }
            Ok(out)
        })
        .collect();
    let mut terms = Vec::new();
    for c in chunks {
        terms.extend(c?);
    }
    Ok(ProductExpansion { n, terms })
}

/// `<Omega, X(l_1) ... X(l_n) Omega> = sum_pi q^{rc(pi)} prod_B (closed scalar of B)`.
pub fn vacuum_moment(alg: &LetterAlgebra, letters: &[Letter]) -> Result<QScalar> {
    let n = letters.len();
    if n > MAX_MOMENT {
        return Err(Error::Resource(format!("vacuum moment of {n} factors exceeds the budget of {MAX_MOMENT}")));
    }
    let mode = alg.mode();
    if n == 0 {
        return Ok(mode.one());
    }
    let parts: Vec<SetPartition> = enumerate_partitions(n)?.collect();
    let vals: Vec<Result<QScalar>> = parts
        .par_iter()
        .map(|pi| {
            let data = block_data(alg, letters, pi)?;
            let mut s = mode.one();
            for d in &data {
                s = &s * &d.closed;
                if s.is_zero() {
                    return Ok(s);
                }
            }
            Ok(&s * &mode.q_pow(rc(&ExtendedPartition::closed(pi.clone()))))
        })
        .collect();
    let mut acc = mode.zero();
    for v in vals {
        acc += &v?;
    }
    Ok(acc)
}

/// `X^r(f)`: sends a basis word `eta` to `W(eta) X(f) Omega`.
pub struct RightField {
    engine: Arc<WickEngine>,
    letter: Letter,
}

impl WordAction for RightField {
    fn apply_word(&self, space: &FockSpace, word: &[u32], coeff: &QScalar, out: &mut FockVector) -> Result<()> {
        let mode = space.mode();
        let mut seed = FockVector::tensor(mode, space.depth, std::slice::from_ref(&self.letter.xi))?;
        seed.add_term(Vec::new(), self.letter.mean.clone())?;
        let w = self.engine.wick_basis(word)?;
        let img = space.apply(&w, &seed)?;
        out.add_scaled(&img, coeff)
    }

    fn raise(&self) -> usize {
        1
    }

    fn label(&self) -> String {
        format!("X^r[{}]", self.letter)
    }
}

/// The right field operator `X^r(l)`, commuting with every `X(g)`.
pub fn right_operator(engine: &Arc<WickEngine>, letter: &Letter) -> FockOperator {
    FockOperator::custom(Arc::new(RightField { engine: engine.clone(), letter: letter.clone() }))
}
