//! Truncated algebraic q-Fock space over a finite one-particle space.
//!
//! Vectors are sparse maps from words (sequences of basis indices) to
//! scalars. Operators are lazy expression trees evaluated on vectors.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{usage, Error, Result};
use crate::qscalar::{permutations_with_inversions, Mode, QScalar};

/// Highest degree for which `P_n` is expanded over `Sym(n)` in exact mode.
pub const MAX_PN_EXACT: usize = 7;
/// Same cap in float mode.
pub const MAX_PN_FLOAT: usize = 9;
/// Largest truncation accepted by [`FockSpace::operator_norm_estimate`].
pub const MAX_NORM_DEPTH: usize = 8;

pub type Word = Vec<u32>;

/// Sparse one-particle vector, sorted by index, without zero entries.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct OneVec {
    entries: Vec<(u32, QScalar)>,
}

impl OneVec {
    pub fn zero() -> Self {
        OneVec { entries: Vec::new() }
    }

    pub fn basis(mode: Mode, i: usize) -> Self {
        OneVec { entries: vec![(i as u32, mode.one())] }
    }

    pub fn from_entries(mut e: Vec<(u32, QScalar)>) -> Self {
        e.sort_by_key(|x| x.0);
        let mut out: Vec<(u32, QScalar)> = Vec::with_capacity(e.len());
        for (i, c) in e {
            match out.last_mut() {
                Some((j, d)) if *j == i => *d += &c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|x| !x.1.is_zero());
        OneVec { entries: out }
    }

    pub fn from_dense(v: &[QScalar]) -> Self {
        OneVec::from_entries(v.iter().enumerate().map(|(i, c)| (i as u32, c.clone())).collect())
    }

    pub fn entries(&self) -> &[(u32, QScalar)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: u32) -> Option<&QScalar> {
        self.entries.binary_search_by_key(&i, |x| x.0).ok().map(|k| &self.entries[k].1)
    }

    pub fn add(&self, o: &OneVec) -> OneVec {
        let mut e = self.entries.clone();
        e.extend(o.entries.iter().cloned());
        OneVec::from_entries(e)
    }

    pub fn scale(&self, c: &QScalar) -> OneVec {
        OneVec::from_entries(self.entries.iter().map(|(i, x)| (*i, x * c)).collect())
    }

    pub fn support(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|x| x.0)
    }
}

/// Sparse square matrix stored by columns. Columns flagged `undefined`
/// model maps that leave the finite basis; applying them is an error.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matrix {
    dim: usize,
    cols: Vec<OneVec>,
    undefined: Vec<bool>,
}

impl Matrix {
    pub fn zero(dim: usize) -> Self {
        Matrix { dim, cols: vec![OneVec::zero(); dim], undefined: vec![false; dim] }
    }

    pub fn identity(mode: Mode, dim: usize) -> Self {
        Matrix { dim, cols: (0..dim).map(|i| OneVec::basis(mode, i)).collect(), undefined: vec![false; dim] }
    }

    /// From row-major dense entries `rows[i][j] = <e_i, T e_j>` coefficient.
    pub fn from_dense(rows: &[Vec<QScalar>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return usage("matrix must be square");
        }
        let cols = (0..dim)
            .map(|j| OneVec::from_entries((0..dim).map(|i| (i as u32, rows[i][j].clone())).collect()))
            .collect();
        Ok(Matrix { dim, cols, undefined: vec![false; dim] })
    }

    pub fn from_columns(cols: Vec<OneVec>, undefined: Vec<bool>) -> Self {
        let dim = cols.len();
        Matrix { dim, cols, undefined }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn column(&self, j: usize) -> Result<&OneVec> {
        if self.undefined[j] {
            return Err(Error::CutoffExceeded(format!("gauge image of basis vector {j} leaves the degree cutoff")));
        }
        Ok(&self.cols[j])
    }

    pub fn is_undefined(&self, j: usize) -> bool {
        self.undefined[j]
    }

    pub fn apply(&self, v: &OneVec) -> Result<OneVec> {
        let mut e = Vec::new();
        for (j, c) in v.entries() {
            for (i, t) in self.column(*j as usize)?.entries() {
                e.push((*i, t * c));
            }
        }
        Ok(OneVec::from_entries(e))
    }

    /// `self * other` (apply `other` first). Undefined where `other` is, or
    /// where its image touches an undefined column of `self`.
    pub fn compose(&self, other: &Matrix) -> Matrix {
        let mut cols = Vec::with_capacity(self.dim);
        let mut undefined = Vec::with_capacity(self.dim);
        for j in 0..self.dim {
            match other.column(j).and_then(|c| self.apply(c)) {
                Ok(c) => {
                    cols.push(c);
                    undefined.push(false);
                }
                Err(_) => {
                    cols.push(OneVec::zero());
                    undefined.push(true);
                }
            }
        }
        Matrix { dim: self.dim, cols, undefined }
    }

    pub fn add(&self, o: &Matrix) -> Matrix {
        Matrix {
            dim: self.dim,
            cols: self.cols.iter().zip(&o.cols).map(|(a, b)| a.add(b)).collect(),
            undefined: self.undefined.iter().zip(&o.undefined).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn scale(&self, c: &QScalar) -> Matrix {
        Matrix { dim: self.dim, cols: self.cols.iter().map(|v| v.scale(c)).collect(), undefined: self.undefined.clone() }
    }

    pub fn transpose(&self) -> Matrix {
        let mut e: Vec<Vec<(u32, QScalar)>> = vec![Vec::new(); self.dim];
        for (j, col) in self.cols.iter().enumerate() {
            for (i, t) in col.entries() {
                e[*i as usize].push((j as u32, t.clone()));
            }
        }
        Matrix { dim: self.dim, cols: e.into_iter().map(OneVec::from_entries).collect(), undefined: self.undefined.clone() }
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<&QScalar> {
        self.cols[j].get(i as u32)
    }

    pub fn is_zero(&self) -> bool {
        self.cols.iter().all(OneVec::is_zero) && !self.undefined.iter().any(|&u| u)
    }

    /// Spectral norm in the Euclidean coordinate metric (float payloads).
    pub fn spectral_norm(&self) -> f64 {
        let m = DMatrix::from_fn(self.dim, self.dim, |i, j| self.entry(i, j).and_then(QScalar::to_f64).unwrap_or(0.0));
        m.singular_values().iter().copied().fold(0.0, f64::max)
    }
}

/// Gauge data: the matrix and its adjoint for the ambient gram form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GaugeOp {
    pub t: Arc<Matrix>,
    pub adj: Arc<Matrix>,
}

impl GaugeOp {
    pub fn new(t: Matrix, adj: Matrix) -> Self {
        GaugeOp { t: Arc::new(t), adj: Arc::new(adj) }
    }

    /// Gauge whose matrix is self-adjoint for the gram form.
    pub fn self_adjoint(t: Matrix) -> Self {
        let t = Arc::new(t);
        GaugeOp { t: t.clone(), adj: t }
    }

    pub fn adjoint(&self) -> GaugeOp {
        GaugeOp { t: self.adj.clone(), adj: self.t.clone() }
    }
}

/// Finite one-particle space with a symmetric gram form.
#[derive(Debug)]
pub struct OneParticleSpace {
    mode: Mode,
    gram: Vec<Vec<QScalar>>,
    rows: Vec<Vec<(u32, QScalar)>>,
    diagonal: bool,
}

impl OneParticleSpace {
    pub fn new(mode: Mode, gram: Vec<Vec<QScalar>>) -> Result<Self> {
        let dim = gram.len();
        for (i, row) in gram.iter().enumerate() {
            if row.len() != dim {
                return usage("gram must be square");
            }
            for (j, g) in row.iter().enumerate() {
                if g.mode() != mode {
                    return Err(Error::ModeMismatch(g.mode().to_string(), mode.to_string()));
                }
                if *g != gram[j][i] && !(matches!(mode, Mode::Float(_)) && (g.value_at(0.0) - gram[j][i].value_at(0.0)).abs() < 1e-12) {
                    return usage(format!("gram not symmetric at ({i},{j})"));
                }
            }
        }
        if let Mode::Float(_) = mode {
            check_psd(&gram)?;
        }
        let rows: Vec<Vec<(u32, QScalar)>> = gram
            .iter()
            .map(|r| r.iter().enumerate().filter(|x| !x.1.is_zero()).map(|(j, g)| (j as u32, g.clone())).collect())
            .collect();
        let diagonal = rows.iter().enumerate().all(|(i, r)| r.iter().all(|(j, _)| *j as usize == i));
        Ok(OneParticleSpace { mode, gram, rows, diagonal })
    }

    pub fn orthonormal(mode: Mode, dim: usize) -> Self {
        let gram = (0..dim).map(|i| (0..dim).map(|j| if i == j { mode.one() } else { mode.zero() }).collect()).collect();
        OneParticleSpace::new(mode, gram).expect("identity gram is valid")
    }

    pub fn dim(&self) -> usize {
        self.gram.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn gram(&self, i: usize, j: usize) -> &QScalar {
        &self.gram[i][j]
    }

    pub fn gram_rows(&self) -> &[Vec<(u32, QScalar)>] {
        &self.rows
    }

    pub fn inner(&self, u: &OneVec, v: &OneVec) -> QScalar {
        let mut acc = self.mode.zero();
        for (i, a) in u.entries() {
            for (j, g) in &self.rows[*i as usize] {
                if let Some(b) = v.get(*j) {
                    acc += &(&(a * g) * b);
                }
            }
        }
        acc
    }

    /// `<zeta, e_i>` for every basis index.
    pub fn pairings(&self, zeta: &OneVec) -> Vec<QScalar> {
        let mut out = vec![self.mode.zero(); self.dim()];
        for (i, a) in zeta.entries() {
            for (j, g) in &self.rows[*i as usize] {
                out[*j as usize] += &(a * g);
            }
        }
        out
    }

    pub fn is_orthonormal(&self) -> bool {
        self.diagonal && self.rows.iter().all(|r| r.len() == 1 && r[0].1.is_one())
    }
}

fn check_psd(gram: &[Vec<QScalar>]) -> Result<()> {
    let n = gram.len();
    let m = DMatrix::from_fn(n, n, |i, j| gram[i][j].value_at(0.0));
    let scale = m.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
    let eig = m.symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if n > 0 && min < -1e-10 * scale {
        return usage(format!("gram is not positive semidefinite (min eigenvalue {min:e})"));
    }
    Ok(())
}

/// Graded sparse vector of the truncated Fock space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FockVector {
    depth: usize,
    mode: Mode,
    terms: BTreeMap<Word, QScalar>,
}

impl FockVector {
    pub fn zero(mode: Mode, depth: usize) -> Self {
        FockVector { depth, mode, terms: BTreeMap::new() }
    }

    pub fn vacuum(mode: Mode, depth: usize) -> Self {
        let mut v = FockVector::zero(mode, depth);
        v.terms.insert(Vec::new(), mode.one());
        v
    }

    pub fn word(mode: Mode, depth: usize, word: &[u32]) -> Result<Self> {
        let mut v = FockVector::zero(mode, depth);
        v.add_term(word.to_vec(), mode.one())?;
        Ok(v)
    }

    /// `v_1 (x) ... (x) v_n`.
    pub fn tensor(mode: Mode, depth: usize, factors: &[OneVec]) -> Result<Self> {
        if factors.len() > depth {
            return Err(Error::DepthExceeded(format!("tensor of degree {} exceeds depth {depth}", factors.len())));
        }
        let mut acc: Vec<(Word, QScalar)> = vec![(Vec::new(), mode.one())];
        for f in factors {
            let mut next = Vec::with_capacity(acc.len() * f.entries().len());
            for (w, c) in &acc {
                for (i, x) in f.entries() {
                    let mut w2 = w.clone();
                    w2.push(*i);
                    next.push((w2, c * x));
                }
            }
            acc = next;
        }
        let mut v = FockVector::zero(mode, depth);
        for (w, c) in acc {
            v.add_term(w, c)?;
        }
        Ok(v)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn with_depth(mut self, depth: usize) -> Result<Self> {
        if self.top_degree().is_some_and(|d| d > depth) {
            return Err(Error::DepthExceeded(format!("vector of degree {:?} does not fit depth {depth}", self.top_degree())));
        }
        self.depth = depth;
        Ok(self)
    }

    pub fn terms(&self) -> &BTreeMap<Word, QScalar> {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, w: &[u32]) -> Option<&QScalar> {
        self.terms.get(w)
    }

    pub fn vacuum_coefficient(&self) -> QScalar {
        self.terms.get(&Vec::new()).cloned().unwrap_or_else(|| self.mode.zero())
    }

    pub fn top_degree(&self) -> Option<usize> {
        self.terms.keys().map(Vec::len).max()
    }

    pub fn add_term(&mut self, w: Word, c: QScalar) -> Result<()> {
        if w.len() > self.depth {
            return Err(Error::DepthExceeded(format!("word of length {} exceeds depth {}", w.len(), self.depth)));
        }
        if c.is_zero() {
            return Ok(());
        }
        match self.terms.entry(w) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += &c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
        Ok(())
    }

    fn check(&self, o: &FockVector) -> Result<()> {
        if self.mode != o.mode {
            return Err(Error::ModeMismatch(self.mode.to_string(), o.mode.to_string()));
        }
        Ok(())
    }

    /// `self += c * o`.
    pub fn add_scaled(&mut self, o: &FockVector, c: &QScalar) -> Result<()> {
        self.check(o)?;
        for (w, x) in &o.terms {
            let t = if c.is_one() { x.clone() } else { x * c };
            self.add_term(w.clone(), t)?;
        }
        Ok(())
    }

    pub fn add(&self, o: &FockVector) -> Result<FockVector> {
        let mut r = self.clone();
        r.depth = r.depth.max(o.depth);
        r.add_scaled(o, &self.mode.one())?;
        Ok(r)
    }

    pub fn sub(&self, o: &FockVector) -> Result<FockVector> {
        let mut r = self.clone();
        r.depth = r.depth.max(o.depth);
        r.add_scaled(o, &-self.mode.one())?;
        Ok(r)
    }

    pub fn scale(&self, c: &QScalar) -> FockVector {
        let mut r = FockVector::zero(self.mode, self.depth);
        for (w, x) in &self.terms {
            let t = x * c;
            if !t.is_zero() {
                r.terms.insert(w.clone(), t);
            }
        }
        r
    }

    /// Component of degree `n`.
    pub fn degree_part(&self, n: usize) -> FockVector {
        let mut r = FockVector::zero(self.mode, self.depth);
        r.terms = self.terms.iter().filter(|(w, _)| w.len() == n).map(|(w, c)| (w.clone(), c.clone())).collect();
        r
    }

    /// Coefficientwise map, e.g. exact substitution of `q`.
    pub fn map_coeffs(&self, mode: Mode, f: impl Fn(&QScalar) -> Result<QScalar>) -> Result<FockVector> {
        let mut r = FockVector::zero(mode, self.depth);
        for (w, c) in &self.terms {
            r.add_term(w.clone(), f(c)?)?;
        }
        Ok(r)
    }

    /// Relabel basis indices.
    pub fn map_indices(&self, f: impl Fn(u32) -> u32) -> Result<FockVector> {
        let mut r = FockVector::zero(self.mode, self.depth);
        for (w, c) in &self.terms {
            r.add_term(w.iter().map(|&i| f(i)).collect(), c.clone())?;
        }
        Ok(r)
    }

    /// Largest absolute float coefficient (for float-mode comparisons).
    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|c| c.value_at(0.0).abs()).fold(0.0, f64::max)
    }
}

impl fmt::Display for FockVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (w, c) in &self.terms {
            let idx: Vec<String> = w.iter().map(u32::to_string).collect();
            writeln!(f, "{c} | {}", idx.join(","))?;
        }
        Ok(())
    }
}

/// A linear map given word by word, for operators outside the basic
/// creation/annihilation/gauge vocabulary.
pub trait WordAction: Send + Sync {
    /// Adds `coeff * action(word)` into `out`.
    fn apply_word(&self, space: &FockSpace, word: &[u32], coeff: &QScalar, out: &mut FockVector) -> Result<()>;
    /// Maximal increase of degree.
    fn raise(&self) -> usize;
    fn label(&self) -> String;
}

pub enum OpNode {
    Zero,
    /// `c * Id`.
    Scalar(QScalar),
    Creation(OneVec),
    Annihilation(OneVec),
    Gauge(GaugeOp),
    /// Degree-n component scaled by `q^n`.
    GammaQ,
    Sum(Vec<(QScalar, FockOperator)>),
    /// Operator product in written order; the last factor acts first.
    Compose(Vec<FockOperator>),
    Custom(Arc<dyn WordAction>),
}

/// Shared lazy operator expression.
#[derive(Clone)]
pub struct FockOperator(pub Arc<OpNode>);

impl fmt::Debug for FockOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            OpNode::Zero => write!(f, "0"),
            OpNode::Scalar(c) => write!(f, "({c})Id"),
            OpNode::Creation(_) => write!(f, "a*"),
            OpNode::Annihilation(_) => write!(f, "a"),
            OpNode::Gauge(_) => write!(f, "p"),
            OpNode::GammaQ => write!(f, "Gamma"),
            OpNode::Sum(t) => {
                write!(f, "(")?;
                for (i, (c, o)) in t.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "({c}){o:?}")?;
                }
                write!(f, ")")
            }
            OpNode::Compose(fs) => {
                for o in fs {
                    write!(f, "{o:?}")?;
                }
                Ok(())
            }
            OpNode::Custom(a) => write!(f, "{}", a.label()),
        }
    }
}

impl FockOperator {
    fn node(n: OpNode) -> Self {
        FockOperator(Arc::new(n))
    }

    pub fn zero() -> Self {
        Self::node(OpNode::Zero)
    }

    pub fn scalar(c: QScalar) -> Self {
        Self::node(OpNode::Scalar(c))
    }

    pub fn identity(mode: Mode) -> Self {
        Self::scalar(mode.one())
    }

    pub fn creation(zeta: OneVec) -> Self {
        Self::node(OpNode::Creation(zeta))
    }

    pub fn annihilation(zeta: OneVec) -> Self {
        Self::node(OpNode::Annihilation(zeta))
    }

    pub fn gauge(g: GaugeOp) -> Self {
        Self::node(OpNode::Gauge(g))
    }

    pub fn gamma_q() -> Self {
        Self::node(OpNode::GammaQ)
    }

    pub fn custom(a: Arc<dyn WordAction>) -> Self {
        Self::node(OpNode::Custom(a))
    }

    /// `sum c_i A_i`, dropping zero coefficients.
    pub fn sum(terms: Vec<(QScalar, FockOperator)>) -> Self {
        let terms: Vec<_> = terms.into_iter().filter(|(c, o)| !c.is_zero() && !matches!(&*o.0, OpNode::Zero)).collect();
        if terms.is_empty() {
            return Self::zero();
        }
        Self::node(OpNode::Sum(terms))
    }

    /// Product `A_1 A_2 ... A_k` (rightmost acts first).
    pub fn compose(factors: Vec<FockOperator>) -> Self {
        if factors.iter().any(|o| matches!(&*o.0, OpNode::Zero)) {
            return Self::zero();
        }
        match factors.len() {
            0 => panic!("empty composition"),
            1 => factors.into_iter().next().unwrap(),
            _ => Self::node(OpNode::Compose(factors)),
        }
    }

    pub fn plus(&self, o: &FockOperator, mode: Mode) -> Self {
        Self::sum(vec![(mode.one(), self.clone()), (mode.one(), o.clone())])
    }

    pub fn minus(&self, o: &FockOperator, mode: Mode) -> Self {
        Self::sum(vec![(mode.one(), self.clone()), (-mode.one(), o.clone())])
    }

    pub fn times(&self, o: &FockOperator) -> Self {
        Self::compose(vec![self.clone(), o.clone()])
    }

    pub fn scaled(&self, c: QScalar) -> Self {
        Self::sum(vec![(c, self.clone())])
    }

    pub fn is_zero_node(&self) -> bool {
        matches!(&*self.0, OpNode::Zero)
    }

    /// Upper bound on the degree increase.
    pub fn raise(&self) -> usize {
        match &*self.0 {
            OpNode::Creation(_) => 1,
            OpNode::Sum(t) => t.iter().map(|(_, o)| o.raise()).max().unwrap_or(0),
            OpNode::Compose(fs) => fs.iter().map(FockOperator::raise).sum(),
            OpNode::Custom(a) => a.raise(),
            _ => 0,
        }
    }

    /// Adjoint for the q-inner product; real coefficients assumed.
    pub fn adjoint(&self) -> Result<FockOperator> {
        Ok(match &*self.0 {
            OpNode::Zero | OpNode::Scalar(_) | OpNode::GammaQ => self.clone(),
            OpNode::Creation(z) => Self::annihilation(z.clone()),
            OpNode::Annihilation(z) => Self::creation(z.clone()),
            OpNode::Gauge(g) => Self::gauge(g.adjoint()),
            OpNode::Sum(t) => {
                Self::sum(t.iter().map(|(c, o)| Ok((c.clone(), o.adjoint()?))).collect::<Result<Vec<_>>>()?)
            }
            OpNode::Compose(fs) => Self::compose(fs.iter().rev().map(FockOperator::adjoint).collect::<Result<Vec<_>>>()?),
            OpNode::Custom(a) => return usage(format!("no adjoint available for {}", a.label())),
        })
    }
}

/// `a(zeta) + a*(zeta) + p(T) + m Id`.
pub fn field_operator(zeta: &OneVec, t: &GaugeOp, m: &QScalar) -> FockOperator {
    let mode = m.mode();
    let mut terms = Vec::new();
    if !zeta.is_zero() {
        terms.push((mode.one(), FockOperator::annihilation(zeta.clone())));
        terms.push((mode.one(), FockOperator::creation(zeta.clone())));
    }
    if !t.t.is_zero() {
        terms.push((mode.one(), FockOperator::gauge(t.clone())));
    }
    if !m.is_zero() {
        terms.push((m.clone(), FockOperator::identity(mode)));
    }
    FockOperator::sum(terms)
}

/// Fock space: a one-particle space together with a truncation depth.
#[derive(Clone, Debug)]
pub struct FockSpace {
    pub one: Arc<OneParticleSpace>,
    pub depth: usize,
}

impl FockSpace {
    pub fn new(one: Arc<OneParticleSpace>, depth: usize) -> Self {
        FockSpace { one, depth }
    }

    pub fn mode(&self) -> Mode {
        self.one.mode()
    }

    pub fn with_depth(&self, depth: usize) -> FockSpace {
        FockSpace { one: self.one.clone(), depth }
    }

    pub fn vacuum(&self) -> FockVector {
        FockVector::vacuum(self.mode(), self.depth)
    }

    pub fn zero_vector(&self) -> FockVector {
        FockVector::zero(self.mode(), self.depth)
    }

    fn q_powers(&self, n: usize) -> Vec<QScalar> {
        (0..=n).map(|k| self.mode().q_pow(k)).collect()
    }

    fn check_vector(&self, v: &FockVector) -> Result<()> {
        if v.mode() != self.mode() {
            return Err(Error::ModeMismatch(v.mode().to_string(), self.mode().to_string()));
        }
        if let Some(d) = v.top_degree() {
            if d > self.depth {
                return Err(Error::DepthExceeded(format!("vector of degree {d} in space of depth {}", self.depth)));
            }
        }
        if let Some(w) = v.terms().keys().flat_map(|w| w.iter()).find(|&&i| i as usize >= self.one.dim()) {
            return usage(format!("basis index {w} outside dimension {}", self.one.dim()));
        }
        Ok(())
    }

    /// `<u, v>_0`: degreewise products of gram pairings.
    pub fn inner0(&self, u: &FockVector, v: &FockVector) -> Result<QScalar> {
        self.check_vector(u)?;
        self.check_vector(v)?;
        let mode = self.mode();
        let mut acc = mode.zero();
        if self.one.diagonal {
            for (w, a) in u.terms() {
                if let Some(b) = v.get(w) {
                    let mut t = a * b;
                    for &i in w {
                        t = &t * self.one.gram(i as usize, i as usize);
                    }
                    acc += &t;
                }
            }
            return Ok(acc);
        }
        let g = self.gram_apply(u)?;
        for (w, a) in g.terms() {
            if let Some(b) = v.get(w) {
                acc += &(a * b);
            }
        }
        Ok(acc)
    }

    /// `(G (x) ... (x) G) v`, the 0-gram applied degreewise.
    pub fn gram_apply(&self, v: &FockVector) -> Result<FockVector> {
        let rows = self.one.gram_rows();
        let mut out = FockVector::zero(self.mode(), v.depth());
        for (w, c) in v.terms() {
            let mut acc: Vec<(Word, QScalar)> = vec![(Vec::with_capacity(w.len()), c.clone())];
            for &i in w {
                let mut next = Vec::with_capacity(acc.len() * rows[i as usize].len());
                for (pre, x) in &acc {
                    for (j, g) in &rows[i as usize] {
                        let mut p = pre.clone();
                        p.push(*j);
                        next.push((p, x * g));
                    }
                }
                acc = next;
            }
            for (w2, x) in acc {
                out.add_term(w2, x)?;
            }
        }
        Ok(out)
    }

    /// `P v` with `P_n = sum_sigma q^{inv sigma} sigma` on each degree.
    pub fn apply_pn(&self, v: &FockVector) -> Result<FockVector> {
        self.check_vector(v)?;
        let cap = match self.mode() {
            Mode::Exact => MAX_PN_EXACT,
            Mode::Float(_) => MAX_PN_FLOAT,
        };
        let top = v.top_degree().unwrap_or(0);
        if top > cap {
            return Err(Error::Resource(format!("P_n expansion for degree {top} exceeds cap {cap} in {} mode", self.mode())));
        }
        let qp = self.q_powers(top * top);
        let perms: Vec<Vec<(Vec<usize>, usize)>> = (0..=top).map(permutations_with_inversions).collect();
        let mut out = FockVector::zero(self.mode(), v.depth());
        for (w, c) in v.terms() {
            for (sigma, inv) in &perms[w.len()] {
                let w2: Word = sigma.iter().map(|&s| w[s]).collect();
                out.add_term(w2, c * &qp[*inv])?;
            }
        }
        Ok(out)
    }

    /// `<u, v>_q = <u, P v>_0`.
    pub fn innerq(&self, u: &FockVector, v: &FockVector) -> Result<QScalar> {
        if u.len() <= v.len() {
            let pu = self.apply_pn(u)?;
            self.inner0(&pu, v)
        } else {
            let pv = self.apply_pn(v)?;
            self.inner0(u, &pv)
        }
    }

    pub fn norm_sq(&self, v: &FockVector) -> Result<QScalar> {
        self.innerq(v, v)
    }

    /// Degree-n component multiplied by `q^n`.
    pub fn gamma_q(&self, v: &FockVector) -> FockVector {
        let mode = v.mode();
        let mut out = FockVector::zero(mode, v.depth());
        for (w, c) in v.terms() {
            let t = c * &mode.q_pow(w.len());
            out.add_term(w.clone(), t).expect("same depth");
        }
        out
    }

    /// Keeps words over indices satisfying `keep`; the split must be
    /// gram-orthogonal.
    pub fn project(&self, v: &FockVector, keep: &dyn Fn(u32) -> bool) -> Result<FockVector> {
        for (i, row) in self.one.gram_rows().iter().enumerate() {
            for (j, _) in row {
                if keep(i as u32) != keep(*j) {
                    return usage(format!("projection split is not orthogonal: <e_{i}, e_{j}> != 0"));
                }
            }
        }
        let mut out = FockVector::zero(v.mode(), v.depth());
        for (w, c) in v.terms() {
            if w.iter().all(|&i| keep(i)) {
                out.add_term(w.clone(), c.clone())?;
            }
        }
        Ok(out)
    }

    /// Evaluates `op` on `v`. Shared subexpressions that see the input
    /// vector directly are computed once.
    pub fn apply(&self, op: &FockOperator, v: &FockVector) -> Result<FockVector> {
        self.check_vector(v)?;
        let v = if v.depth() == self.depth { v.clone() } else { v.clone().with_depth(self.depth)? };
        let mut memo = HashMap::new();
        self.eval(op, &v, true, &mut memo)
    }

    fn eval(
        &self,
        op: &FockOperator,
        v: &FockVector,
        root: bool,
        memo: &mut HashMap<usize, FockVector>,
    ) -> Result<FockVector> {
        let key = Arc::as_ptr(&op.0) as *const () as usize;
        let shared = root && Arc::strong_count(&op.0) > 1;
        if shared {
            if let Some(r) = memo.get(&key) {
                return Ok(r.clone());
            }
        }
        let mode = self.mode();
        let r = match &*op.0 {
            OpNode::Zero => self.zero_vector(),
            OpNode::Scalar(c) => v.scale(c),
            OpNode::GammaQ => self.gamma_q(v),
            OpNode::Sum(terms) => {
                let mut acc = self.zero_vector();
                for (c, t) in terms {
                    let x = self.eval(t, v, root, memo)?;
                    acc.add_scaled(&x, c)?;
                }
                acc
            }
            OpNode::Compose(fs) => {
                let mut cur = self.eval(fs.last().unwrap(), v, root, memo)?;
                for f in fs.iter().rev().skip(1) {
                    if cur.is_zero() {
                        break;
                    }
                    cur = self.eval(f, &cur, false, memo)?;
                }
                cur
            }
            OpNode::Creation(z) => {
                let mut out = self.zero_vector();
                for (w, c) in v.terms() {
                    if w.len() >= self.depth {
                        return Err(Error::DepthExceeded(format!(
                            "creation on a degree-{} word at depth {}",
                            w.len(),
                            self.depth
                        )));
                    }
                    for (i, x) in z.entries() {
                        let mut w2 = Vec::with_capacity(w.len() + 1);
                        w2.push(*i);
                        w2.extend_from_slice(w);
                        out.add_term(w2, c * x)?;
                    }
                }
                out
            }
            OpNode::Annihilation(z) => {
                let pair = self.one.pairings(z);
                let qp = self.q_powers(self.depth);
                let mut out = self.zero_vector();
                for (w, c) in v.terms() {
                    for k in 0..w.len() {
                        let g = &pair[w[k] as usize];
                        if g.is_zero() {
                            continue;
                        }
                        let mut w2 = w.clone();
                        w2.remove(k);
                        out.add_term(w2, &(c * g) * &qp[k])?;
                    }
                }
                out
            }
            OpNode::Gauge(g) => {
                let qp = self.q_powers(self.depth);
                let mut out = self.zero_vector();
                for (w, c) in v.terms() {
                    for k in 0..w.len() {
                        let col = g.t.column(w[k] as usize)?;
                        if col.is_zero() {
                            continue;
                        }
                        let ck = c * &qp[k];
                        for (i, t) in col.entries() {
                            let mut w2 = Vec::with_capacity(w.len());
                            w2.push(*i);
                            w2.extend_from_slice(&w[..k]);
                            w2.extend_from_slice(&w[k + 1..]);
                            out.add_term(w2, &ck * t)?;
                        }
                    }
                }
                out
            }
            OpNode::Custom(a) => {
                let mut out = self.zero_vector();
                for (w, c) in v.terms() {
                    a.apply_word(self, w, c, &mut out)?;
                }
                out
            }
        };
        let _ = mode;
        if shared && matches!(&*op.0, OpNode::Sum(_) | OpNode::Compose(_)) {
            memo.insert(key, r.clone());
        }
        Ok(r)
    }

    /// All words of length `<= depth` in lexicographic order by degree.
    pub fn words_up_to(&self, depth: usize) -> Vec<Word> {
        let dim = self.one.dim() as u32;
        let mut out = vec![Vec::new()];
        let mut layer: Vec<Word> = vec![Vec::new()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for w in &layer {
                for i in 0..dim {
                    let mut w2 = w.clone();
                    w2.push(i);
                    next.push(w2);
                }
            }
            out.extend(next.iter().cloned());
            layer = next;
        }
        out
    }

    fn q_gram_cholesky(&self, words: &[Word]) -> Result<DMatrix<f64>> {
        let n = words.len();
        let index: HashMap<&Word, usize> = words.iter().enumerate().map(|(i, w)| (w, i)).collect();
        let mut g = DMatrix::<f64>::zeros(n, n);
        let big = self.with_depth(words.iter().map(Vec::len).max().unwrap_or(0));
        for (j, w) in words.iter().enumerate() {
            let e = FockVector::word(self.mode(), big.depth, w)?;
            let col = big.gram_apply(&big.apply_pn(&e)?)?;
            for (w2, c) in col.terms() {
                if let Some(&i) = index.get(w2) {
                    g[(i, j)] = c.value_at(0.0);
                }
            }
        }
        let diag_max = (0..n).map(|i| g[(i, i)].abs()).fold(0.0, f64::max);
        let chol = nalgebra::linalg::Cholesky::new(g.clone()).ok_or_else(|| {
            let eig = g.clone().symmetric_eigenvalues();
            let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
            Error::Resource(format!(
                "q-Gram of {n} words is numerically singular (min eigenvalue {min:e}, max diagonal {diag_max:e})"
            ))
        })?;
        let l = chol.l();
        let min_pivot = (0..n).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
        if n > 0 && min_pivot * min_pivot < 1e-13 * diag_max.max(1.0) {
            return Err(Error::Resource(format!(
                "q-Gram of {n} words is numerically singular (condition estimate {:e})",
                diag_max / (min_pivot * min_pivot)
            )));
        }
        Ok(l)
    }

    /// Largest singular value of `op` restricted to words of length
    /// `<= depth`, measured in the q-inner product. Float mode only.
    pub fn operator_norm_estimate(&self, op: &FockOperator, depth: usize) -> Result<f64> {
        if !matches!(self.mode(), Mode::Float(_)) {
            return usage("operator norm estimates need float mode");
        }
        if depth > MAX_NORM_DEPTH {
            return Err(Error::Resource(format!("norm estimate depth {depth} exceeds {MAX_NORM_DEPTH}")));
        }
        let raise = op.raise();
        let big = self.with_depth(depth + raise);
        let domain = self.words_up_to(depth);
        let images: Vec<FockVector> = domain
            .iter()
            .map(|w| big.apply(op, &FockVector::word(self.mode(), big.depth, w)?))
            .collect::<Result<_>>()?;
        // degree blocks when the operator preserves degree
        let preserving = domain.iter().zip(&images).all(|(w, im)| im.terms().keys().all(|w2| w2.len() == w.len()));
        let groups: Vec<(Vec<Word>, Vec<Word>)> = if preserving {
            (0..=depth)
                .map(|d| {
                    let ws: Vec<Word> = domain.iter().filter(|w| w.len() == d).cloned().collect();
                    (ws.clone(), ws)
                })
                .collect()
        } else {
            vec![(domain.clone(), big.words_up_to(depth + raise))]
        };
        let dom_index: HashMap<&Word, usize> = domain.iter().enumerate().map(|(i, w)| (w, i)).collect();
        let mut best = 0.0f64;
        for (dws, cws) in groups {
            let ld = self.q_gram_cholesky(&dws)?;
            let lc = big.q_gram_cholesky(&cws)?;
            let cidx: HashMap<&Word, usize> = cws.iter().enumerate().map(|(i, w)| (w, i)).collect();
            let mut m = DMatrix::<f64>::zeros(cws.len(), dws.len());
            for (j, w) in dws.iter().enumerate() {
                for (w2, c) in images[dom_index[w]].terms() {
                    let i = *cidx.get(w2).ok_or_else(|| Error::DepthExceeded("image outside codomain".into()))?;
                    m[(i, j)] = c.value_at(0.0);
                }
            }
            // B = Lc^T M Ld^{-T}
            let lct_m = lc.transpose() * m;
            let b_t = ld
                .solve_lower_triangular(&lct_m.transpose())
                .ok_or_else(|| Error::Resource("triangular solve failed".into()))?;
            // b_t = Ld^{-1} M^T Lc = B^T
            let s = b_t.singular_values().iter().copied().fold(0.0, f64::max);
            best = best.max(s);
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(dim: usize, depth: usize) -> FockSpace {
        FockSpace::new(Arc::new(OneParticleSpace::orthonormal(Mode::Exact, dim)), depth)
    }

    fn w(s: &FockSpace, word: &[u32]) -> FockVector {
        FockVector::word(s.mode(), s.depth, word).unwrap()
    }

    fn e(i: usize) -> OneVec {
        OneVec::basis(Mode::Exact, i)
    }

    fn qs(s: &str) -> QScalar {
        QScalar::Exact(s.parse().unwrap())
    }

    #[test]
    fn inner0_examples() {
        let s = space(2, 3);
        assert!(s.inner0(&s.vacuum(), &s.vacuum()).unwrap().is_one());
        assert!(s.inner0(&w(&s, &[0, 1]), &w(&s, &[1, 0])).unwrap().is_zero());
        assert!(s.inner0(&w(&s, &[0]), &w(&s, &[0, 0])).unwrap().is_zero());
    }

    #[test]
    fn pn_examples() {
        let s = space(2, 3);
        assert_eq!(s.apply_pn(&w(&s, &[1])).unwrap(), w(&s, &[1]));
        let mut expect = w(&s, &[0, 1]);
        expect.add_scaled(&w(&s, &[1, 0]), &qs("q")).unwrap();
        assert_eq!(s.apply_pn(&w(&s, &[0, 1])).unwrap(), expect);
        let p3 = s.apply_pn(&w(&s, &[0, 0, 0])).unwrap();
        assert_eq!(p3, w(&s, &[0, 0, 0]).scale(&crate::qscalar::q_fact(Mode::Exact, 3)));
    }

    #[test]
    fn pn_cap() {
        let s = space(1, 8);
        assert!(matches!(s.apply_pn(&w(&s, &[0; 8])), Err(Error::Resource(_))));
    }

    #[test]
    fn innerq_examples() {
        let s = space(2, 3);
        assert!(s.innerq(&w(&s, &[0, 1]), &w(&s, &[0, 1])).unwrap().is_one());
        assert_eq!(s.innerq(&w(&s, &[0, 0]), &w(&s, &[0, 0])).unwrap(), qs("1 + q"));
        assert!(s.innerq(&s.vacuum(), &w(&s, &[0])).unwrap().is_zero());
    }

    #[test]
    fn apply_examples() {
        let s = space(2, 3);
        let a = FockOperator::annihilation(e(0));
        assert!(s.apply(&a, &s.vacuum()).unwrap().is_zero());
        assert_eq!(s.apply(&a, &w(&s, &[0, 1])).unwrap(), w(&s, &[1]));
        let p = FockOperator::gauge(GaugeOp::self_adjoint(Matrix::identity(Mode::Exact, 2)));
        let mut expect = w(&s, &[0, 1]);
        expect.add_scaled(&w(&s, &[1, 0]), &qs("q")).unwrap();
        assert_eq!(s.apply(&p, &w(&s, &[0, 1])).unwrap(), expect);
    }

    #[test]
    fn creation_overflow_is_an_error() {
        let s = space(1, 2);
        let c = FockOperator::creation(e(0));
        assert!(matches!(s.apply(&c, &w(&s, &[0, 0])), Err(Error::DepthExceeded(_))));
    }

    #[test]
    fn field_operator_examples() {
        let s = space(2, 3);
        let zero_t = GaugeOp::self_adjoint(Matrix::zero(2));
        let x = field_operator(&e(1), &zero_t, &Mode::Exact.zero());
        assert_eq!(s.apply(&x, &s.vacuum()).unwrap(), w(&s, &[1]));
        let c = field_operator(&OneVec::zero(), &zero_t, &qs("3"));
        assert_eq!(s.apply(&c, &w(&s, &[0])).unwrap(), w(&s, &[0]).scale(&qs("3")));
    }

    #[test]
    fn gamma_and_project() {
        let s = space(2, 3);
        let v = w(&s, &[0, 1]).add(&s.vacuum()).unwrap();
        let mut expect = w(&s, &[0, 1]).scale(&qs("q^2"));
        expect.add_scaled(&s.vacuum(), &qs("1")).unwrap();
        assert_eq!(s.gamma_q(&v), expect);
        assert_eq!(s.gamma_q(&w(&s, &[0])), w(&s, &[0]).scale(&qs("q")));
        let v = w(&s, &[0, 1]).add(&w(&s, &[0, 0])).unwrap();
        assert_eq!(s.project(&v, &|i| i == 0).unwrap(), w(&s, &[0, 0]));
        assert_eq!(s.project(&v, &|_| true).unwrap(), v);
        assert!(s.project(&v, &|_| false).unwrap().is_zero());
        let g = vec![vec![qs("1"), qs("1/2")], vec![qs("1/2"), qs("1")]];
        let t = FockSpace::new(Arc::new(OneParticleSpace::new(Mode::Exact, g).unwrap()), 2);
        assert!(t.project(&v, &|i| i == 0).is_err());
    }

    #[test]
    fn serialization() {
        let s = space(2, 3);
        let v = w(&s, &[0, 1]).scale(&qs("1/2 + q")).add(&s.vacuum()).unwrap();
        assert_eq!(v.to_string(), "1 | \n1/2 + q | 0,1\n");
    }

    #[test]
    fn norm_examples() {
        let mode = Mode::Float(0.5);
        let s = FockSpace::new(Arc::new(OneParticleSpace::orthonormal(mode, 1)), 6);
        assert_eq!(s.operator_norm_estimate(&FockOperator::zero(), 4).unwrap(), 0.0);
        let c = mode.real(-2.5).unwrap();
        assert!((s.operator_norm_estimate(&FockOperator::scalar(c), 4).unwrap() - 2.5).abs() < 1e-9);
        let p = FockOperator::gauge(GaugeOp::self_adjoint(Matrix::identity(mode, 1)));
        let n = s.operator_norm_estimate(&p, 6).unwrap();
        assert!((n - (1.0 - 0.5f64.powi(6)) / 0.5).abs() < 1e-9, "{n}");
        assert!(n <= 2.0);
        // two letters: p(I) acts on degree n with norm [n]_q
        let s2 = FockSpace::new(Arc::new(OneParticleSpace::orthonormal(mode, 2)), 6);
        let p2 = FockOperator::gauge(GaugeOp::self_adjoint(Matrix::identity(mode, 2)));
        assert!((s2.operator_norm_estimate(&p2, 4).unwrap() - 1.875).abs() < 1e-9);
    }

    #[test]
    fn norm_is_monotone_in_depth() {
        let mode = Mode::Float(0.3);
        let s = FockSpace::new(Arc::new(OneParticleSpace::orthonormal(mode, 2)), 6);
        let x = field_operator(&OneVec::basis(mode, 0), &GaugeOp::self_adjoint(Matrix::identity(mode, 2)), &mode.zero());
        let mut prev = 0.0;
        for d in 1..=5 {
            let n = s.operator_norm_estimate(&x, d).unwrap();
            assert!(n >= prev - 1e-12);
            prev = n;
        }
    }
}
