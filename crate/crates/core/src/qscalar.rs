//! Scalars: exact polynomials in a formal `q` with rational coefficients, or
//! floats carrying a pinned numeric `q`.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{usage, Error, Result};

/// Polynomial `c0 + c1 q + ...` over the rationals, with no trailing zeros.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct QPoly {
    c: Vec<BigRational>,
}

impl QPoly {
    pub fn zero() -> Self {
        QPoly { c: Vec::new() }
    }

    pub fn one() -> Self {
        QPoly::constant(BigRational::one())
    }

    pub fn q() -> Self {
        QPoly::from_coeffs(vec![BigRational::zero(), BigRational::one()])
    }

    pub fn constant(v: BigRational) -> Self {
        QPoly::from_coeffs(vec![v])
    }

    pub fn from_int(v: i64) -> Self {
        QPoly::constant(BigRational::from_integer(BigInt::from(v)))
    }

    /// `q^k`.
    pub fn monomial(k: usize) -> Self {
        let mut c = vec![BigRational::zero(); k + 1];
        c[k] = BigRational::one();
        QPoly { c }
    }

    pub fn from_coeffs(mut c: Vec<BigRational>) -> Self {
        while c.last().is_some_and(|x| x.is_zero()) {
            c.pop();
        }
        QPoly { c }
    }

    pub fn coeffs(&self) -> &[BigRational] {
        &self.c
    }

    pub fn degree(&self) -> Option<usize> {
        self.c.len().checked_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.c.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.c.len() <= 1
    }

    pub fn eval(&self, q: &BigRational) -> BigRational {
        let mut acc = BigRational::zero();
        for c in self.c.iter().rev() {
            acc = acc * q + c;
        }
        acc
    }

    pub fn eval_f64(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        for c in self.c.iter().rev() {
            acc = acc * q + ratio_to_f64(c);
        }
        acc
    }

    fn add_in_place(&mut self, other: &QPoly, sign: bool) {
        if self.c.len() < other.c.len() {
            self.c.resize(other.c.len(), BigRational::zero());
        }
        for (a, b) in self.c.iter_mut().zip(&other.c) {
            if sign {
                *a += b;
            } else {
                *a -= b;
            }
        }
        while self.c.last().is_some_and(|x| x.is_zero()) {
            self.c.pop();
        }
    }

    pub fn mul(&self, other: &QPoly) -> QPoly {
        if self.is_zero() || other.is_zero() {
            return QPoly::zero();
        }
        let mut c = vec![BigRational::zero(); self.c.len() + other.c.len() - 1];
        for (i, a) in self.c.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.c.iter().enumerate() {
                if !b.is_zero() {
                    c[i + j] += a * b;
                }
            }
        }
        QPoly::from_coeffs(c)
    }

    pub fn scale(&self, s: &BigRational) -> QPoly {
        if s.is_zero() {
            return QPoly::zero();
        }
        QPoly { c: self.c.iter().map(|x| x * s).collect() }
    }
}

pub(crate) fn ratio_to_f64(r: &BigRational) -> f64 {
    match (r.numer().to_f64(), r.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => r.to_f64().unwrap_or(f64::NAN),
    }
}

fn fmt_ratio(r: &BigRational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for QPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.c.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in self.c.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let neg = c.is_negative();
            let a = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { "-" } else { "+" })?;
            }
            first = false;
            let var = match k {
                0 => String::new(),
                1 => "q".to_string(),
                _ => format!("q^{k}"),
            };
            if k == 0 {
                write!(f, "{}", fmt_ratio(&a))?;
            } else if a.is_one() {
                write!(f, "{var}")?;
            } else {
                write!(f, "{}*{var}", fmt_ratio(&a))?;
            }
        }
        Ok(())
    }
}

fn parse_ratio(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Usage(format!("malformed rational '{s}'"));
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        Ok(BigRational::new(n, d))
    } else if let Some((ip, fp)) = s.split_once('.') {
        let neg = ip.trim_start().starts_with('-');
        let ip: BigInt = if ip.trim() == "-" || ip.trim().is_empty() {
            BigInt::zero()
        } else {
            ip.trim().parse().map_err(|_| bad())?
        };
        if !fp.chars().all(|c| c.is_ascii_digit()) || fp.is_empty() {
            return Err(bad());
        }
        let den = num_traits::pow(BigInt::from(10), fp.len());
        let frac = BigRational::new(fp.parse::<BigInt>().map_err(|_| bad())?, den);
        let whole = BigRational::from_integer(ip.abs());
        let v = whole + frac;
        Ok(if neg { -v } else { v })
    } else {
        Ok(BigRational::from_integer(s.parse().map_err(|_| bad())?))
    }
}

/// Parses a rational literal such as `3`, `-2/5` or `0.25`.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    parse_ratio(s)
}

impl FromStr for QPoly {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return usage("empty polynomial");
        }
        // split into signed terms
        let mut terms: Vec<(bool, String)> = Vec::new();
        let mut cur = String::new();
        let mut neg = false;
        let chars: Vec<char> = s.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let ch = chars[i];
            let prev_sig = cur.trim_end().chars().last();
            let is_sep = (ch == '+' || ch == '-')
                && !matches!(prev_sig, Some('/') | Some('^') | Some('*'));
            if is_sep {
                if !cur.trim().is_empty() {
                    terms.push((neg, cur.trim().to_string()));
                } else if ch == '-' && terms.is_empty() && cur.trim().is_empty() && neg {
                    return usage(format!("malformed polynomial '{s}'"));
                }
                neg = ch == '-';
                cur.clear();
            } else {
                cur.push(ch);
            }
            i += 1;
        }
        if cur.trim().is_empty() {
            return usage(format!("malformed polynomial '{s}'"));
        }
        terms.push((neg, cur.trim().to_string()));
        let mut out = QPoly::zero();
        for (neg, t) in terms {
            let (coef, pow) = if let Some(idx) = t.find('q') {
                let head = t[..idx].trim().trim_end_matches('*').trim();
                let tail = t[idx + 1..].trim();
                let coef = if head.is_empty() { BigRational::one() } else { parse_ratio(head)? };
                let pow = if tail.is_empty() {
                    1
                } else if let Some(p) = tail.strip_prefix('^') {
                    p.trim().parse::<usize>().map_err(|_| Error::Usage(format!("bad exponent in '{t}'")))?
                } else {
                    return usage(format!("malformed term '{t}'"));
                };
                (coef, pow)
            } else {
                (parse_ratio(&t)?, 0)
            };
            let coef = if neg { -coef } else { coef };
            out.add_in_place(&QPoly::monomial(pow).scale(&coef), true);
        }
        Ok(out)
    }
}

/// Arithmetic regime of a computation.
#[derive(Clone, Copy, Debug)]
pub enum Mode {
    Exact,
    Float(f64),
}

impl PartialEq for Mode {
    fn eq(&self, other: &Mode) -> bool {
        match (self, other) {
            (Mode::Exact, Mode::Exact) => true,
            (Mode::Float(a), Mode::Float(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}
impl Eq for Mode {}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Exact => write!(f, "exact"),
            Mode::Float(q) => write!(f, "float(q={q})"),
        }
    }
}

impl Mode {
    /// Float mode; `q` must lie in (-1, 1).
    pub fn float(q: f64) -> Result<Mode> {
        if q.is_finite() && q > -1.0 && q < 1.0 {
            Ok(Mode::Float(q))
        } else {
            usage(format!("float q must lie in (-1,1), got {q}"))
        }
    }

    pub fn zero(self) -> QScalar {
        match self {
            Mode::Exact => QScalar::Exact(QPoly::zero()),
            Mode::Float(q) => QScalar::Float { q, v: 0.0 },
        }
    }

    pub fn one(self) -> QScalar {
        self.int(1)
    }

    pub fn q(self) -> QScalar {
        match self {
            Mode::Exact => QScalar::Exact(QPoly::q()),
            Mode::Float(q) => QScalar::Float { q, v: q },
        }
    }

    pub fn q_pow(self, k: usize) -> QScalar {
        match self {
            Mode::Exact => QScalar::Exact(QPoly::monomial(k)),
            Mode::Float(q) => QScalar::Float { q, v: q.powi(k as i32) },
        }
    }

    pub fn int(self, v: i64) -> QScalar {
        match self {
            Mode::Exact => QScalar::Exact(QPoly::from_int(v)),
            Mode::Float(q) => QScalar::Float { q, v: v as f64 },
        }
    }

    pub fn ratio(self, r: &BigRational) -> QScalar {
        match self {
            Mode::Exact => QScalar::Exact(QPoly::constant(r.clone())),
            Mode::Float(q) => QScalar::Float { q, v: ratio_to_f64(r) },
        }
    }

    pub fn real(self, v: f64) -> Result<QScalar> {
        match self {
            Mode::Float(q) => Ok(QScalar::Float { q, v }),
            Mode::Exact => usage("a real literal cannot enter exact mode"),
        }
    }
}

/// A scalar of either mode. Arithmetic operators panic on mixed modes;
/// the `try_*` methods report the mismatch instead.
#[derive(Clone, Debug)]
pub enum QScalar {
    Exact(QPoly),
    Float { q: f64, v: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

impl QScalar {
    pub fn mode(&self) -> Mode {
        match self {
            QScalar::Exact(_) => Mode::Exact,
            QScalar::Float { q, .. } => Mode::Float(*q),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            QScalar::Exact(p) => p.is_zero(),
            QScalar::Float { v, .. } => *v == 0.0,
        }
    }

    pub fn is_one(&self) -> bool {
        match self {
            QScalar::Exact(p) => p.c.len() == 1 && p.c[0].is_one(),
            QScalar::Float { v, .. } => *v == 1.0,
        }
    }

    pub fn as_poly(&self) -> Option<&QPoly> {
        match self {
            QScalar::Exact(p) => Some(p),
            QScalar::Float { .. } => None,
        }
    }

    /// Numeric value: the float payload, or the exact polynomial at `q0`.
    pub fn value_at(&self, q0: f64) -> f64 {
        match self {
            QScalar::Exact(p) => p.eval_f64(q0),
            QScalar::Float { v, .. } => *v,
        }
    }

    /// Float payload, if any.
    pub fn to_f64(&self) -> Option<f64> {
        match self {
            QScalar::Float { v, .. } => Some(*v),
            QScalar::Exact(p) if p.is_constant() => Some(p.eval_f64(0.0)),
            QScalar::Exact(_) => None,
        }
    }

    /// Exact scalar evaluated at numeric `q0`, yielding a float-mode scalar.
    pub fn eval_at(&self, q0: f64) -> Result<QScalar> {
        let mode = Mode::float(q0)?;
        match self {
            QScalar::Exact(p) => mode.real(p.eval_f64(q0)),
            QScalar::Float { .. } => usage("eval_at expects an exact scalar"),
        }
    }

    /// Exact substitution `q = q0` for any rational `q0` (including 0 and 1).
    pub fn substitute(&self, q0: &BigRational) -> Result<QScalar> {
        match self {
            QScalar::Exact(p) => Ok(QScalar::Exact(QPoly::constant(p.eval(q0)))),
            QScalar::Float { .. } => usage("substitution expects an exact scalar"),
        }
    }

    fn check(&self, other: &QScalar) -> Result<()> {
        if self.mode() == other.mode() {
            Ok(())
        } else {
            Err(Error::ModeMismatch(self.mode().to_string(), other.mode().to_string()))
        }
    }

    pub fn arith(&self, other: &QScalar, op: ArithOp) -> Result<QScalar> {
        self.check(other)?;
        Ok(match (self, other) {
            (QScalar::Exact(a), QScalar::Exact(b)) => QScalar::Exact(match op {
                ArithOp::Add => {
                    let mut r = a.clone();
                    r.add_in_place(b, true);
                    r
                }
                ArithOp::Sub => {
                    let mut r = a.clone();
                    r.add_in_place(b, false);
                    r
                }
                ArithOp::Mul => a.mul(b),
            }),
            (QScalar::Float { q, v: a }, QScalar::Float { v: b, .. }) => QScalar::Float {
                q: *q,
                v: match op {
                    ArithOp::Add => a + b,
                    ArithOp::Sub => a - b,
                    ArithOp::Mul => a * b,
                },
            },
            _ => unreachable!(),
        })
    }

    pub fn try_add(&self, o: &QScalar) -> Result<QScalar> {
        self.arith(o, ArithOp::Add)
    }

    pub fn try_sub(&self, o: &QScalar) -> Result<QScalar> {
        self.arith(o, ArithOp::Sub)
    }

    pub fn try_mul(&self, o: &QScalar) -> Result<QScalar> {
        self.arith(o, ArithOp::Mul)
    }

    pub fn scale_ratio(&self, r: &BigRational) -> QScalar {
        match self {
            QScalar::Exact(p) => QScalar::Exact(p.scale(r)),
            QScalar::Float { q, v } => QScalar::Float { q: *q, v: v * ratio_to_f64(r) },
        }
    }

    pub fn abs_f64(&self) -> Option<f64> {
        self.to_f64().map(f64::abs)
    }
}

fn expect(r: Result<QScalar>) -> QScalar {
    match r {
        Ok(v) => v,
        Err(e) => panic!("{e}"),
    }
}

impl PartialEq for QScalar {
    fn eq(&self, other: &QScalar) -> bool {
        match (self, other) {
            (QScalar::Exact(a), QScalar::Exact(b)) => a == b,
            (QScalar::Float { q: qa, v: a }, QScalar::Float { q: qb, v: b }) => {
                qa.to_bits() == qb.to_bits() && a.to_bits() == b.to_bits()
            }
            _ => false,
        }
    }
}
impl Eq for QScalar {}

impl Hash for QScalar {
    fn hash<H: Hasher>(&self, h: &mut H) {
        match self {
            QScalar::Exact(p) => {
                0u8.hash(h);
                p.hash(h);
            }
            QScalar::Float { q, v } => {
                1u8.hash(h);
                q.to_bits().hash(h);
                v.to_bits().hash(h);
            }
        }
    }
}

impl<'a> Add<&'a QScalar> for &'a QScalar {
    type Output = QScalar;
    fn add(self, o: &QScalar) -> QScalar {
        expect(self.arith(o, ArithOp::Add))
    }
}
impl<'a> Sub<&'a QScalar> for &'a QScalar {
    type Output = QScalar;
    fn sub(self, o: &QScalar) -> QScalar {
        expect(self.arith(o, ArithOp::Sub))
    }
}
impl<'a> Mul<&'a QScalar> for &'a QScalar {
    type Output = QScalar;
    fn mul(self, o: &QScalar) -> QScalar {
        expect(self.arith(o, ArithOp::Mul))
    }
}
impl Add for QScalar {
    type Output = QScalar;
    fn add(self, o: QScalar) -> QScalar {
        &self + &o
    }
}
impl Sub for QScalar {
    type Output = QScalar;
    fn sub(self, o: QScalar) -> QScalar {
        &self - &o
    }
}
impl Mul for QScalar {
    type Output = QScalar;
    fn mul(self, o: QScalar) -> QScalar {
        &self * &o
    }
}
impl Neg for &QScalar {
    type Output = QScalar;
    fn neg(self) -> QScalar {
        match self {
            QScalar::Exact(p) => QScalar::Exact(QPoly { c: p.c.iter().map(|x| -x).collect() }),
            QScalar::Float { q, v } => QScalar::Float { q: *q, v: -v },
        }
    }
}
impl Neg for QScalar {
    type Output = QScalar;
    fn neg(self) -> QScalar {
        -&self
    }
}
impl AddAssign<&QScalar> for QScalar {
    fn add_assign(&mut self, o: &QScalar) {
        match (self, o) {
            (QScalar::Exact(a), QScalar::Exact(b)) => a.add_in_place(b, true),
            (QScalar::Float { q: qa, v: a }, QScalar::Float { q: qb, v: b }) if qa.to_bits() == qb.to_bits() => {
                *a += b
            }
            (s, o) => panic!("{}", Error::ModeMismatch(s.mode().to_string(), o.mode().to_string())),
        }
    }
}
impl SubAssign<&QScalar> for QScalar {
    fn sub_assign(&mut self, o: &QScalar) {
        match (self, o) {
            (QScalar::Exact(a), QScalar::Exact(b)) => a.add_in_place(b, false),
            (QScalar::Float { q: qa, v: a }, QScalar::Float { q: qb, v: b }) if qa.to_bits() == qb.to_bits() => {
                *a -= b
            }
            (s, o) => panic!("{}", Error::ModeMismatch(s.mode().to_string(), o.mode().to_string())),
        }
    }
}

impl fmt::Display for QScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QScalar::Exact(p) => write!(f, "{p}"),
            QScalar::Float { v, .. } => write!(f, "{v:e}"),
        }
    }
}

/// `[n]_q = 1 + q + ... + q^{n-1}`.
pub fn q_int(mode: Mode, n: usize) -> QScalar {
    match mode {
        Mode::Exact => QScalar::Exact(QPoly::from_coeffs(vec![BigRational::one(); n])),
        Mode::Float(q) => QScalar::Float { q, v: (0..n).map(|k| q.powi(k as i32)).sum() },
    }
}

/// `[n]_q! = [1]_q [2]_q ... [n]_q`.
pub fn q_fact(mode: Mode, n: usize) -> QScalar {
    (1..=n).fold(mode.one(), |acc, i| &acc * &q_int(mode, i))
}

/// `[n]_q! / [n-k]_q! = [n-k+1]_q ... [n]_q`.
pub fn q_falling(mode: Mode, n: usize, k: usize) -> QScalar {
    (n - k + 1..=n).fold(mode.one(), |acc, i| &acc * &q_int(mode, i))
}

/// Number of pairs `i < j` with `sigma(i) > sigma(j)`; `sigma` is one-based.
pub fn inversions(sigma: &[usize]) -> Result<usize> {
    let n = sigma.len();
    let mut seen = vec![false; n];
    for &s in sigma {
        if s == 0 || s > n || seen[s - 1] {
            return usage(format!("{sigma:?} is not a permutation of 1..{n}"));
        }
        seen[s - 1] = true;
    }
    Ok(inversions_unchecked(sigma))
}

pub(crate) fn inversions_unchecked(sigma: &[usize]) -> usize {
    let mut c = 0;
    for i in 0..sigma.len() {
        for j in i + 1..sigma.len() {
            if sigma[i] > sigma[j] {
                c += 1;
            }
        }
    }
    c
}

/// All permutations of `0..n` (zero-based) with their inversion counts,
/// in lexicographic order.
pub fn permutations_with_inversions(n: usize) -> Vec<(Vec<usize>, usize)> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(n: usize, cur: &mut Vec<usize>, used: &mut [bool], inv: usize, out: &mut Vec<(Vec<usize>, usize)>) {
        if cur.len() == n {
            out.push((cur.clone(), inv));
            return;
        }
        for v in 0..n {
            if !used[v] {
                // inversions contributed: earlier entries greater than v
                let add = cur.iter().filter(|&&x| x > v).count();
                used[v] = true;
                cur.push(v);
                rec(n, cur, used, inv + add, out);
                cur.pop();
                used[v] = false;
            }
        }
    }
    rec(n, &mut cur, &mut used, 0, &mut out);
    out
}
