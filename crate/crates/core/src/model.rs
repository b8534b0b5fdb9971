//! Moment sequences, time grids, the generator construction discretized on
//! grid atoms, the appendix algebra of functions, and letters.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{usage, Error, Result};
use crate::fock::{field_operator, FockOperator, FockSpace, GaugeOp, Matrix, OneParticleSpace, OneVec};
use crate::kspoly::monic_op;
use crate::qscalar::{parse_rational, Mode, QScalar};

fn rat(n: i64) -> BigRational {
    BigRational::from_integer(n.into())
}

/// Moments `r_1, r_2, ...` of the measure `nu`, with `r_{k+2} = int x^k dnu`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MomentSequence {
    r: Vec<BigRational>,
}

impl MomentSequence {
    /// Explicit list `[r_1, r_2, ...]`.
    pub fn from_moments(r: Vec<BigRational>) -> Result<Self> {
        if r.len() < 2 {
            return usage("moment list needs at least r_1 and r_2");
        }
        Ok(MomentSequence { r })
    }

    /// From atoms `(x_j, w_j)`, up to `r_len`; `r_1 = 0`.
    pub fn from_atoms(atoms: &[(BigRational, BigRational)], r_len: usize) -> Result<Self> {
        if atoms.is_empty() {
            return usage("measure needs at least one atom");
        }
        if atoms.iter().any(|(_, w)| !w.is_positive()) {
            return usage("atom weights must be positive");
        }
        let mut r = vec![BigRational::zero()];
        for k in 0..r_len.saturating_sub(1) {
            let s = atoms.iter().fold(BigRational::zero(), |acc, (x, w)| acc + w * pow(x, k));
            r.push(s);
        }
        MomentSequence::from_moments(r)
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// `r_k`, one-based.
    pub fn r(&self, k: usize) -> Result<&BigRational> {
        if k == 0 || k > self.r.len() {
            return usage(format!("moment r_{k} not available (have r_1..r_{})", self.r.len()));
        }
        Ok(&self.r[k - 1])
    }

    pub fn as_slice(&self) -> &[BigRational] {
        &self.r
    }

    pub fn scaled(&self, t: &BigRational) -> MomentSequence {
        MomentSequence { r: self.r.iter().map(|x| x * t).collect() }
    }

    /// Hankel matrix `(r_{i+j+2})_{0 <= i,j <= m}` as floats.
    pub fn hankel_f64(&self, m: usize) -> Result<Vec<Vec<f64>>> {
        (0..=m)
            .map(|i| (0..=m).map(|j| self.r(i + j + 2).map(crate::qscalar::ratio_to_f64)).collect())
            .collect()
    }

    /// q-Gaussian moments: `r_2 = 1`, all others 0.
    pub fn q_gaussian(len: usize) -> Self {
        let mut r = vec![BigRational::zero(); len.max(2)];
        r[1] = BigRational::one();
        MomentSequence { r }
    }

    /// Moments of `delta_1`: `r_1 = 0`, `r_k = 1` for `k >= 2`.
    pub fn poisson(len: usize) -> Self {
        let mut r = vec![BigRational::one(); len.max(2)];
        r[0] = BigRational::zero();
        MomentSequence { r }
    }
}

pub(crate) fn pow(x: &BigRational, k: usize) -> BigRational {
    let mut acc = BigRational::one();
    for _ in 0..k {
        acc *= x;
    }
    acc
}

/// Contiguous grid `0 = p_0 < p_1 < ... < p_N = T` of half-open atoms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeGrid {
    pts: Vec<BigRational>,
}

impl TimeGrid {
    pub fn uniform(t: BigRational, n: usize) -> Result<Self> {
        if n == 0 || !t.is_positive() {
            return usage("uniform grid needs T > 0 and N >= 1");
        }
        let step = &t / rat(n as i64);
        TimeGrid::explicit((0..=n).map(|i| &step * rat(i as i64)).collect())
    }

    pub fn explicit(pts: Vec<BigRational>) -> Result<Self> {
        if pts.len() < 2 || !pts[0].is_zero() {
            return usage("grid must start at 0 and contain at least one atom");
        }
        if pts.windows(2).any(|w| w[1] <= w[0]) {
            return usage("grid points must be strictly increasing");
        }
        Ok(TimeGrid { pts })
    }

    pub fn atoms(&self) -> usize {
        self.pts.len() - 1
    }

    pub fn points(&self) -> &[BigRational] {
        &self.pts
    }

    pub fn end(&self) -> &BigRational {
        self.pts.last().unwrap()
    }

    pub fn width(&self, atom: usize) -> BigRational {
        &self.pts[atom + 1] - &self.pts[atom]
    }

    pub fn span_length(&self, span: &Range<usize>) -> BigRational {
        &self.pts[span.end] - &self.pts[span.start]
    }

    /// `max |I_i|`.
    pub fn delta(&self) -> BigRational {
        (0..self.atoms()).map(|i| self.width(i)).max().unwrap()
    }

    pub fn point_index(&self, t: &BigRational) -> Result<usize> {
        self.pts.iter().position(|p| p == t).ok_or_else(|| Error::Usage(format!("time {t} is not a grid point")))
    }

    /// Atom range of `[a, b)`; both ends must be grid points.
    pub fn span(&self, a: &BigRational, b: &BigRational) -> Result<Range<usize>> {
        let i = self.point_index(a)?;
        let j = self.point_index(b)?;
        if j <= i {
            return usage(format!("empty interval [{a}, {b})"));
        }
        Ok(i..j)
    }
}

/// Generator symbol: one-particle vector, gauge action, mean.
#[derive(Clone, Debug)]
pub struct Letter {
    pub xi: OneVec,
    pub gauge: GaugeOp,
    pub mean: QScalar,
}

impl PartialEq for Letter {
    fn eq(&self, o: &Self) -> bool {
        self.xi == o.xi
    }
}

impl Eq for Letter {}

impl Hash for Letter {
    fn hash<H: Hasher>(&self, h: &mut H) {
        self.xi.hash(h)
    }
}

impl Letter {
    pub fn add(&self, o: &Letter) -> Letter {
        Letter {
            xi: self.xi.add(&o.xi),
            gauge: GaugeOp::new(self.gauge.t.add(&o.gauge.t), self.gauge.adj.add(&o.gauge.adj)),
            mean: &self.mean + &o.mean,
        }
    }

    pub fn scale(&self, c: &QScalar) -> Letter {
        Letter {
            xi: self.xi.scale(c),
            gauge: GaugeOp::new(self.gauge.t.scale(c), self.gauge.adj.scale(c)),
            mean: &self.mean * c,
        }
    }

    /// `X(l) = a(xi) + a*(xi) + p(T) + mean`.
    pub fn field(&self) -> FockOperator {
        field_operator(&self.xi, &self.gauge, &self.mean)
    }
}

/// A finite algebra of letters over a one-particle space: each basis vector
/// carries a gauge matrix, and an optional mean functional `omega` gives
/// `mean(l) = <omega, xi_l>`.
#[derive(Debug)]
pub struct LetterAlgebra {
    space: Arc<OneParticleSpace>,
    omega: Option<OneVec>,
    basis: Vec<Letter>,
}

impl LetterAlgebra {
    pub fn new(space: Arc<OneParticleSpace>, gauges: Vec<GaugeOp>, omega: Option<OneVec>) -> Result<Self> {
        if gauges.len() != space.dim() {
            return usage("one gauge per basis vector required");
        }
        let mode = space.mode();
        let basis = gauges
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let xi = OneVec::basis(mode, i);
                let mean = omega.as_ref().map_or_else(|| mode.zero(), |w| space.inner(w, &xi));
                Letter { xi, gauge: g, mean }
            })
            .collect();
        Ok(LetterAlgebra { space, omega, basis })
    }

    pub fn mode(&self) -> Mode {
        self.space.mode()
    }

    pub fn space(&self) -> &Arc<OneParticleSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn fock(&self, depth: usize) -> FockSpace {
        FockSpace::new(self.space.clone(), depth)
    }

    pub fn has_mean(&self) -> bool {
        self.omega.is_some()
    }

    pub fn basis_letter(&self, i: usize) -> &Letter {
        &self.basis[i]
    }

    pub fn zero_letter(&self) -> Letter {
        let n = self.dim();
        Letter {
            xi: OneVec::zero(),
            gauge: GaugeOp::self_adjoint(Matrix::zero(n)),
            mean: self.mode().zero(),
        }
    }

    /// The letter whose vector is `xi`, by linearity over basis letters.
    pub fn letter(&self, xi: &OneVec) -> Letter {
        let mut acc = self.zero_letter();
        for (i, c) in xi.entries() {
            acc = acc.add(&self.basis[*i as usize].scale(c));
        }
        acc
    }

    pub fn mean_of(&self, xi: &OneVec) -> QScalar {
        self.omega.as_ref().map_or_else(|| self.mode().zero(), |w| self.space.inner(w, xi))
    }

    /// `a . b`: vector `T_a xi_b`, gauge `T_a T_b`.
    pub fn product(&self, a: &Letter, b: &Letter) -> Result<Letter> {
        let xi = a.gauge.t.apply(&b.xi)?;
        let gauge = GaugeOp::new(a.gauge.t.compose(&b.gauge.t), b.gauge.adj.compose(&a.gauge.adj));
        let mean = self.mean_of(&xi);
        Ok(Letter { xi, gauge, mean })
    }

    /// Ordered product of a nonempty slice of letters.
    pub fn product_all(&self, ls: &[Letter]) -> Result<Letter> {
        let mut acc = ls.last().expect("nonempty product").clone();
        for l in ls.iter().rev().skip(1) {
            acc = self.product(l, &acc)?;
        }
        Ok(acc)
    }

    /// `<xi_a, xi_b>`.
    pub fn pair(&self, a: &Letter, b: &Letter) -> QScalar {
        self.space.inner(&a.xi, &b.xi)
    }
}

/// Which construction a [`ProcessModel`] realizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Atoms times monomials `x^0..x^{d-1}`, gram `|A| r_{j+k}`.
    Body,
    /// Atoms times points of `nu`, gram `|A| w_j`, with a mean functional.
    Appendix { points: Vec<BigRational>, weights: Vec<BigRational> },
}

/// Process model on a time grid.
#[derive(Debug, Clone)]
pub struct ProcessModel {
    pub mode: Mode,
    pub moments: MomentSequence,
    pub grid: TimeGrid,
    pub cutoff: usize,
    pub depth: usize,
    pub kind: ModelKind,
    pub alg: Arc<LetterAlgebra>,
}

/// `X(I)`, `Y_k(I)` for `k <= d`, `Delta_k(I)`.
pub struct ProcessOperators {
    pub x: FockOperator,
    pub y: Vec<FockOperator>,
    pub delta: Vec<FockOperator>,
}

impl ProcessModel {
    /// Body construction: basis `e_{A,k}`, index `A*d + (k-1)`.
    pub fn body(mode: Mode, moments: MomentSequence, grid: TimeGrid, cutoff: usize, depth: usize) -> Result<Self> {
        if cutoff == 0 {
            return usage("degree cutoff must be positive");
        }
        if moments.len() < 2 * cutoff {
            return usage(format!("cutoff {cutoff} needs moments up to r_{}", 2 * cutoff));
        }
        let d = cutoff;
        let n = grid.atoms() * d;
        let mut gram = vec![vec![mode.zero(); n]; n];
        for a in 0..grid.atoms() {
            let w = grid.width(a);
            for j in 1..=d {
                for k in 1..=d {
                    gram[a * d + j - 1][a * d + k - 1] = mode.ratio(&(&w * moments.r(j + k)?));
                }
            }
        }
        let space = Arc::new(OneParticleSpace::new(mode, gram)?);
        let mut gauges = Vec::with_capacity(n);
        for a in 0..grid.atoms() {
            for k in 1..=d {
                let mut cols = vec![OneVec::zero(); n];
                let mut undefined = vec![false; n];
                for j in 1..=d {
                    if j + k <= d {
                        cols[a * d + j - 1] = OneVec::basis(mode, a * d + j + k - 1);
                    } else {
                        undefined[a * d + j - 1] = true;
                    }
                }
                gauges.push(GaugeOp::self_adjoint(Matrix::from_columns(cols, undefined)));
            }
        }
        let alg = Arc::new(LetterAlgebra::new(space, gauges, None)?);
        Ok(ProcessModel { mode, moments, grid, cutoff, depth, kind: ModelKind::Body, alg })
    }

    /// Appendix construction over `grid x points` with weights `w`; the
    /// one-particle space is `L^2(dt) (x) L^2(nu)` restricted to atoms.
    pub fn appendix(
        mode: Mode,
        points: Vec<BigRational>,
        weights: Vec<BigRational>,
        grid: TimeGrid,
        depth: usize,
    ) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return usage("appendix algebra needs matching points and weights");
        }
        if weights.iter().any(|w| !w.is_positive()) {
            return usage("appendix weights must be positive");
        }
        let total = weights.iter().fold(BigRational::zero(), |a, w| a + w);
        if !total.is_one() {
            return usage(format!("appendix weights must sum to 1 (got {total})"));
        }
        let m = points.len();
        let n = grid.atoms() * m;
        let mut gram = vec![vec![mode.zero(); n]; n];
        for a in 0..grid.atoms() {
            for j in 0..m {
                gram[a * m + j][a * m + j] = mode.ratio(&(grid.width(a) * &weights[j]));
            }
        }
        let space = Arc::new(OneParticleSpace::new(mode, gram)?);
        let gauges = (0..n)
            .map(|i| {
                let mut cols = vec![OneVec::zero(); n];
                cols[i] = OneVec::basis(mode, i);
                GaugeOp::self_adjoint(Matrix::from_columns(cols, vec![false; n]))
            })
            .collect();
        let omega = OneVec::from_entries((0..n).map(|i| (i as u32, mode.one())).collect());
        let alg = Arc::new(LetterAlgebra::new(space, gauges, Some(omega))?);
        // moments of nu itself: r_{k+2} = sum w x^k, informational
        let atoms: Vec<_> = points.iter().cloned().zip(weights.iter().cloned()).collect();
        let moments = MomentSequence::from_atoms(&atoms, 2 * depth + 2)?;
        Ok(ProcessModel { mode, moments, grid, cutoff: 1, depth, kind: ModelKind::Appendix { points, weights }, alg })
    }

    pub fn fock(&self) -> FockSpace {
        self.alg.fock(self.depth)
    }

    pub fn with_depth(&self, depth: usize) -> ProcessModel {
        let mut m = self.clone();
        m.depth = depth;
        m
    }

    pub fn span(&self, a: &BigRational, b: &BigRational) -> Result<Range<usize>> {
        self.grid.span(a, b)
    }

    pub fn full_span(&self) -> Range<usize> {
        0..self.grid.atoms()
    }

    pub fn span_length(&self, span: &Range<usize>) -> BigRational {
        self.grid.span_length(span)
    }

    fn check_span(&self, span: &Range<usize>) -> Result<()> {
        if span.start >= span.end || span.end > self.grid.atoms() {
            return usage(format!("atom range {span:?} not inside a grid of {} atoms", self.grid.atoms()));
        }
        Ok(())
    }

    /// Basis index of `e_{A,k}` (body) or point `k-1` on atom `A` (appendix).
    pub fn index(&self, atom: usize, k: usize) -> usize {
        match &self.kind {
            ModelKind::Body => atom * self.cutoff + k - 1,
            ModelKind::Appendix { points, .. } => atom * points.len() + k - 1,
        }
    }

    /// Basis vectors per atom.
    pub fn per_atom(&self) -> usize {
        match &self.kind {
            ModelKind::Body => self.cutoff,
            ModelKind::Appendix { points, .. } => points.len(),
        }
    }

    /// Atom carrying basis vector `i`.
    pub fn atom_of(&self, i: usize) -> usize {
        i / self.per_atom()
    }

    /// Body: letter of `chi_I (x) x^{k-1}`, i.e. of `Y_k(I)`.
    pub fn letter(&self, span: &Range<usize>, k: usize) -> Result<Letter> {
        self.check_span(span)?;
        match &self.kind {
            ModelKind::Body => {
                if k == 0 || k > self.cutoff {
                    return usage(format!("power {k} outside 1..={}", self.cutoff));
                }
                let xi = OneVec::from_entries(
                    span.clone().map(|a| (self.index(a, k) as u32, self.mode.one())).collect(),
                );
                Ok(self.alg.letter(&xi))
            }
            ModelKind::Appendix { points, .. } => {
                let vals: Vec<BigRational> = points.iter().map(|x| pow(x, k)).collect();
                self.function_letter(span, &vals)
            }
        }
    }

    /// Appendix: letter of `chi_I (x) f` for point values `f`.
    pub fn function_letter(&self, span: &Range<usize>, values: &[BigRational]) -> Result<Letter> {
        self.check_span(span)?;
        let ModelKind::Appendix { points, .. } = &self.kind else {
            return usage("function letters exist only in the appendix algebra");
        };
        if values.len() != points.len() {
            return usage("one value per support point required");
        }
        let mut e = Vec::new();
        for a in span.clone() {
            for (j, v) in values.iter().enumerate() {
                e.push((self.index(a, j + 1) as u32, self.mode.ratio(v)));
            }
        }
        Ok(self.alg.letter(&OneVec::from_entries(e)))
    }

    /// Letter of the increment `X(I)`.
    pub fn x_letter(&self, span: &Range<usize>) -> Result<Letter> {
        self.letter(span, 1)
    }

    pub fn x(&self, span: &Range<usize>) -> Result<FockOperator> {
        Ok(self.x_letter(span)?.field())
    }

    /// `Y_k(I)`, the centered field of the power letter.
    pub fn y(&self, span: &Range<usize>, k: usize) -> Result<FockOperator> {
        let l = self.letter(span, k)?;
        if l.mean.is_zero() {
            return Ok(l.field());
        }
        let m = -l.mean.clone();
        Ok(FockOperator::sum(vec![(self.mode.one(), l.field()), (m, FockOperator::identity(self.mode))]))
    }

    /// `Delta_k(I) = Y_k(I) + |I| r_k` in the body; `X(chi_I (x) x^k)` in
    /// the appendix.
    pub fn delta(&self, span: &Range<usize>, k: usize) -> Result<FockOperator> {
        if let ModelKind::Appendix { .. } = self.kind {
            return Ok(self.letter(span, k)?.field());
        }
        let c = self.mode.ratio(&(self.span_length(span) * self.moments.r(k)?));
        Ok(FockOperator::sum(vec![(self.mode.one(), self.y(span, k)?), (c, FockOperator::identity(self.mode))]))
    }

    pub fn process_operators(&self, span: &Range<usize>) -> Result<ProcessOperators> {
        let x = self.x(span)?;
        let y = (1..=self.cutoff).map(|k| self.y(span, k)).collect::<Result<_>>()?;
        let delta = (1..=self.cutoff).map(|k| self.delta(span, k)).collect::<Result<_>>()?;
        Ok(ProcessOperators { x, y, delta })
    }

    /// Coefficients `c_1..c_k` of `Yhat_k = sum c_j Y_j` (monic `P_{k-1}`).
    pub fn yhat_coefficients(&self, k: usize) -> Result<Vec<BigRational>> {
        if k == 0 || k > self.cutoff {
            return usage(format!("Yhat_{k} needs 1 <= k <= cutoff {}", self.cutoff));
        }
        Ok(monic_op(k - 1, &self.moments)?.coeffs)
    }

    pub fn yhat_letter(&self, span: &Range<usize>, k: usize) -> Result<Letter> {
        let c = self.yhat_coefficients(k)?;
        let mut acc = self.alg.zero_letter();
        for (j, cj) in c.iter().enumerate() {
            if !cj.is_zero() {
                acc = acc.add(&self.letter(span, j + 1)?.scale(&self.mode.ratio(cj)));
            }
        }
        Ok(acc)
    }

    pub fn yhat(&self, span: &Range<usize>, k: usize) -> Result<FockOperator> {
        Ok(self.yhat_letter(span, k)?.field())
    }

    /// `int P_{k-1}^2 dnu`, the squared norm factor of `Yhat_k` per unit time.
    pub fn yhat_norm_factor(&self, k: usize) -> Result<BigRational> {
        let c = self.yhat_coefficients(k)?;
        let mut acc = BigRational::zero();
        for (i, ci) in c.iter().enumerate() {
            for (j, cj) in c.iter().enumerate() {
                acc += ci * cj * self.moments.r(i + j + 2)?;
            }
        }
        Ok(acc)
    }
}

/// Parsed `key = value` model description.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub q: Option<String>,
    pub atoms: Option<Vec<(BigRational, BigRational)>>,
    pub moments: Option<Vec<BigRational>>,
    pub grid: Option<GridSpec>,
    pub cutoff: Option<usize>,
    pub depth: Option<usize>,
    /// `body` (default) or `appendix`.
    pub construction: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GridSpec {
    Uniform(BigRational, usize),
    Explicit(Vec<BigRational>),
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        match self {
            GridSpec::Uniform(t, n) => TimeGrid::uniform(t.clone(), *n),
            GridSpec::Explicit(p) => TimeGrid::explicit(p.clone()),
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<String>> {
    let s = s.trim();
    let inner = s
        .strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .ok_or_else(|| Error::Usage(format!("expected a bracketed list, got '{s}'")))?;
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for ch in inner.chars() {
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch)
            }
            ')' => {
                depth -= 1;
                cur.push(ch)
            }
            ',' if depth == 0 => out.push(std::mem::take(&mut cur)),
            _ => cur.push(ch),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    Ok(out.into_iter().map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut c = ModelConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "q" => c.q = Some(v.to_string()),
                "nu.atoms" => {
                    let mut atoms = Vec::new();
                    for item in parse_list(v)? {
                        let body = item
                            .strip_prefix('(')
                            .and_then(|x| x.strip_suffix(')'))
                            .ok_or_else(|| Error::Usage(format!("atom '{item}' must be (x,w)")))?;
                        let (x, w) =
                            body.split_once(',').ok_or_else(|| Error::Usage(format!("atom '{item}' must be (x,w)")))?;
                        atoms.push((parse_rational(x.trim())?, parse_rational(w.trim())?));
                    }
                    c.atoms = Some(atoms);
                }
                "moments" => c.moments = Some(parse_list(v)?.iter().map(|x| parse_rational(x)).collect::<Result<_>>()?),
                "grid" => {
                    c.grid = Some(if let Some(args) = v.strip_prefix("uniform(").and_then(|x| x.strip_suffix(')')) {
                        let (t, n) =
                            args.split_once(',').ok_or_else(|| Error::Usage("grid = uniform(T, N)".into()))?;
                        let n: usize = n.trim().parse().map_err(|_| Error::Usage(format!("bad grid size '{n}'")))?;
                        GridSpec::Uniform(parse_rational(t.trim())?, n)
                    } else {
                        GridSpec::Explicit(parse_list(v)?.iter().map(|x| parse_rational(x)).collect::<Result<_>>()?)
                    })
                }
                "degree_cutoff" | "cutoff" => {
                    c.cutoff = Some(v.parse().map_err(|_| Error::Usage(format!("bad cutoff '{v}'")))?)
                }
                "fock_depth" | "depth" => c.depth = Some(v.parse().map_err(|_| Error::Usage(format!("bad depth '{v}'")))?),
                "construction" => match v {
                    "body" | "appendix" => c.construction = Some(v.to_string()),
                    _ => return usage(format!("line {}: construction must be body or appendix", no + 1)),
                },
                other => return usage(format!("line {}: unknown key '{other}'", no + 1)),
            }
        }
        Ok(c)
    }
}

impl ModelConfig {
    /// Moment sequence long enough for `cutoff`, cross-checking the two
    /// input paths when both are present.
    pub fn moment_sequence(&self, cutoff: usize) -> Result<MomentSequence> {
        let need = 2 * cutoff + 2;
        let from_atoms = match &self.atoms {
            Some(a) => Some(MomentSequence::from_atoms(a, need)?),
            None => None,
        };
        match (&self.moments, from_atoms) {
            (Some(m), Some(a)) => {
                for (i, x) in m.iter().enumerate() {
                    if i < a.len() && *x != a.as_slice()[i] {
                        return usage(format!("moments list disagrees with nu.atoms at r_{}", i + 1));
                    }
                }
                Ok(a)
            }
            (Some(m), None) => MomentSequence::from_moments(m.clone()),
            (None, Some(a)) => Ok(a),
            (None, None) => usage("model needs nu.atoms or moments"),
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.xi.entries().iter().map(|(i, c)| format!("({c})e{i}")).collect();
        write!(f, "[{}]", parts.join(" + "))
    }
}
