//! Kailath-Segall polynomials in noncommuting indeterminates, monic
//! orthogonal polynomials from moments, q-Hermite and q-Charlier families.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::fock::FockOperator;
use crate::model::MomentSequence;
use crate::qscalar::{q_fact, Mode, QScalar};

/// Noncommutative polynomial: words over indeterminates `x_1, x_2, ...`
/// (stored as indices) mapped to coefficients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NCPolynomial {
    mode: Mode,
    terms: BTreeMap<Vec<usize>, QScalar>,
}

impl NCPolynomial {
    pub fn zero(mode: Mode) -> Self {
        NCPolynomial { mode, terms: BTreeMap::new() }
    }

    pub fn constant(c: QScalar) -> Self {
        let mut p = NCPolynomial::zero(c.mode());
        p.add_term(Vec::new(), c);
        p
    }

    pub fn one(mode: Mode) -> Self {
        NCPolynomial::constant(mode.one())
    }

    pub fn var(mode: Mode, j: usize) -> Self {
        let mut p = NCPolynomial::zero(mode);
        p.add_term(vec![j], mode.one());
        p
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn terms(&self) -> &BTreeMap<Vec<usize>, QScalar> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, w: &[usize]) -> QScalar {
        self.terms.get(w).cloned().unwrap_or_else(|| self.mode.zero())
    }

    pub fn degree(&self) -> Option<usize> {
        self.terms.keys().map(Vec::len).max()
    }

    /// Indeterminates that occur.
    pub fn variables(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.terms.keys().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn add_term(&mut self, w: Vec<usize>, c: QScalar) {
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry(w).or_insert_with(|| self.mode.zero());
        *e += &c;
        if e.is_zero() {
            self.terms.retain(|_, v| !v.is_zero());
        }
    }

    pub fn add(&self, o: &NCPolynomial) -> NCPolynomial {
        let mut r = self.clone();
        for (w, c) in &o.terms {
            r.add_term(w.clone(), c.clone());
        }
        r
    }

    pub fn sub(&self, o: &NCPolynomial) -> NCPolynomial {
        self.add(&o.scale(&-self.mode.one()))
    }

    pub fn scale(&self, c: &QScalar) -> NCPolynomial {
        let mut r = NCPolynomial::zero(self.mode);
        for (w, x) in &self.terms {
            r.add_term(w.clone(), x * c);
        }
        r
    }

    /// Noncommutative product `self * o`.
    pub fn mul(&self, o: &NCPolynomial) -> NCPolynomial {
        let mut r = NCPolynomial::zero(self.mode);
        for (a, x) in &self.terms {
            for (b, y) in &o.terms {
                let mut w = a.clone();
                w.extend_from_slice(b);
                r.add_term(w, x * y);
            }
        }
        r
    }

    /// Replaces each `x_j` by `f(j)`.
    pub fn substitute(&self, f: &dyn Fn(usize) -> NCPolynomial) -> NCPolynomial {
        let mut r = NCPolynomial::zero(self.mode);
        for (w, c) in &self.terms {
            let mut acc = NCPolynomial::constant(c.clone());
            for &j in w {
                acc = acc.mul(&f(j));
            }
            r = r.add(&acc);
        }
        r
    }

    /// Operator obtained by binding `x_j` to `f(j)`.
    pub fn evaluate(&self, f: &dyn Fn(usize) -> Result<FockOperator>) -> Result<FockOperator> {
        let mut cache: HashMap<usize, FockOperator> = HashMap::new();
        let mut terms = Vec::new();
        for (w, c) in &self.terms {
            if w.is_empty() {
                terms.push((c.clone(), FockOperator::identity(self.mode)));
                continue;
            }
            let mut fs = Vec::with_capacity(w.len());
            for &j in w {
                if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(j) {
                    e.insert(f(j)?);
                }
                fs.push(cache[&j].clone());
            }
            terms.push((c.clone(), FockOperator::compose(fs)));
        }
        Ok(FockOperator::sum(terms))
    }

    /// Coefficients of a polynomial in the single variable `x_j`, lowest
    /// degree first.
    pub fn univariate(&self, j: usize) -> Result<Vec<QScalar>> {
        let mut out = Vec::new();
        for (w, c) in &self.terms {
            if w.iter().any(|&i| i != j) {
                return Err(Error::Usage(format!("polynomial is not univariate in x{j}")));
            }
            if out.len() <= w.len() {
                out.resize(w.len() + 1, self.mode.zero());
            }
            out[w.len()] = c.clone();
        }
        Ok(out)
    }

    /// Builds `sum c_i x_j^i`.
    pub fn from_univariate(mode: Mode, j: usize, coeffs: &[QScalar]) -> Self {
        let mut p = NCPolynomial::zero(mode);
        for (i, c) in coeffs.iter().enumerate() {
            p.add_term(vec![j; i], c.clone());
        }
        p
    }
}

impl fmt::Display for NCPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        // highest degree first, then lexicographic
        let mut items: Vec<(&Vec<usize>, &QScalar)> = self.terms.iter().collect();
        items.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(b.0)));
        for (n, (w, c)) in items.into_iter().enumerate() {
            let mono: Vec<String> = w.iter().map(|j| format!("x{j}")).collect();
            let mono = mono.join(" ");
            let cs = c.to_string();
            let (neg, body) = match c {
                QScalar::Exact(p) if p.is_constant() && cs.starts_with('-') => (true, cs[1..].to_string()),
                QScalar::Float { v, .. } if *v < 0.0 => (true, format!("{}", -v)),
                _ => (false, cs),
            };
            let simple = matches!(c, QScalar::Exact(p) if p.is_constant()) || matches!(c, QScalar::Float { .. });
            let coef = if !simple { format!("({body})") } else { body };
            let text = if mono.is_empty() {
                coef
            } else if coef == "1" {
                mono
            } else {
                format!("{coef} · {mono}")
            };
            match (n, neg) {
                (0, true) => write!(f, "-{text}")?,
                (0, false) => write!(f, "{text}")?,
                (_, true) => write!(f, " - {text}")?,
                (_, false) => write!(f, " + {text}")?,
            }
        }
        Ok(())
    }
}

fn q_int_factor(mode: Mode, n: usize, k: usize) -> QScalar {
    // [n]_q! / [n-k]_q!
    crate::qscalar::q_falling(mode, n, k)
}

/// Kailath-Segall polynomial `A_u` by the defining recursion.
pub fn ks_poly(u: &[usize], r: &MomentSequence, mode: Mode) -> Result<NCPolynomial> {
    if u.contains(&0) {
        return Err(Error::Usage("multi-index entries must be positive".into()));
    }
    let mut memo = HashMap::new();
    ks_rec(u, r, mode, &mut memo)
}

fn ks_rec(
    u: &[usize],
    r: &MomentSequence,
    mode: Mode,
    memo: &mut HashMap<Vec<usize>, NCPolynomial>,
) -> Result<NCPolynomial> {
    if let Some(p) = memo.get(u) {
        return Ok(p.clone());
    }
    let out = match u.len() {
        0 => NCPolynomial::one(mode),
        1 => NCPolynomial::var(mode, u[0]),
        _ => {
            let j = u[0];
            let rest = &u[1..];
            let mut acc = NCPolynomial::var(mode, j).mul(&ks_rec(rest, r, mode, memo)?);
            for i in 0..rest.len() {
                let mut without: Vec<usize> = rest.to_vec();
                let ui = without.remove(i);
                let qi = mode.q_pow(i);
                let rc = &qi * &mode.ratio(r.r(j + ui)?);
                acc = acc.sub(&ks_rec(&without, r, mode, memo)?.scale(&rc));
                let mut merged = vec![j + ui];
                merged.extend_from_slice(&without);
                acc = acc.sub(&ks_rec(&merged, r, mode, memo)?.scale(&qi));
            }
            acc
        }
    };
    memo.insert(u.to_vec(), out.clone());
    Ok(out)
}

/// `A^{(n)} = A_{(1,...,1)}`.
pub fn ks_power(n: usize, r: &MomentSequence, mode: Mode) -> Result<NCPolynomial> {
    ks_poly(&vec![1; n], r, mode)
}

/// Both sides of the row formula for `A_{(j,1,...,1)}` with `n` ones.
#[derive(Clone, Debug)]
pub struct RowReport {
    pub j: usize,
    pub n: usize,
    pub recursion: NCPolynomial,
    pub closed_form: NCPolynomial,
}

impl RowReport {
    pub fn holds(&self) -> bool {
        self.recursion == self.closed_form
    }

    pub fn residual(&self) -> NCPolynomial {
        self.recursion.sub(&self.closed_form)
    }
}

/// `x_j A^{(n)} + sum_{k=1}^n (-1)^k [n]!/[n-k]! (x_{j+k} + r_{j+k}) A^{(n-k)}`
/// against the recursion.
pub fn ks_row_formula(j: usize, n: usize, r: &MomentSequence, mode: Mode) -> Result<RowReport> {
    let mut u = vec![j];
    u.extend(std::iter::repeat_n(1, n));
    let recursion = ks_poly(&u, r, mode)?;
    let mut closed = NCPolynomial::var(mode, j).mul(&ks_power(n, r, mode)?);
    for k in 1..=n {
        let sign = if k % 2 == 0 { mode.one() } else { -mode.one() };
        let c = &sign * &q_int_factor(mode, n, k);
        let lin = NCPolynomial::var(mode, j + k).add(&NCPolynomial::constant(mode.ratio(r.r(j + k)?)));
        closed = closed.add(&lin.mul(&ks_power(n - k, r, mode)?).scale(&c));
    }
    Ok(RowReport { j, n, recursion, closed_form: closed })
}

/// `H_{n+1} = x H_n - [n]_q H_{n-1}` in the variable `x_1`.
pub fn q_hermite(n: usize, mode: Mode) -> NCPolynomial {
    three_term(n, mode, false)
}

/// `C_{n+1} = x C_n - [n]_q C_{n-1} - [n]_q C_n` in the variable `x_1`.
pub fn q_charlier(n: usize, mode: Mode) -> NCPolynomial {
    three_term(n, mode, true)
}

fn three_term(n: usize, mode: Mode, charlier: bool) -> NCPolynomial {
    let x = NCPolynomial::var(mode, 1);
    let mut prev = NCPolynomial::one(mode);
    if n == 0 {
        return prev;
    }
    let mut cur = x.clone();
    for m in 1..n {
        let qm = crate::qscalar::q_int(mode, m);
        let mut next = x.mul(&cur).sub(&prev.scale(&qm));
        if charlier {
            next = next.sub(&cur.scale(&qm));
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// `A^{(n)}` under the q-Gaussian substitution `r_2 = 1`, `x_1 = x`,
/// other `x_k = 0`. The indeterminates stand for the centered processes
/// `Y_k`, and `Y_2` vanishes in the Gaussian case, so `x_2 + r_2 = 1`.
pub fn ks_hermite(n: usize, mode: Mode) -> Result<NCPolynomial> {
    let r = MomentSequence::q_gaussian(n + 2);
    let a = ks_power(n, &r, mode)?;
    Ok(a.substitute(&|j| match j {
        1 => NCPolynomial::var(mode, 1),
        _ => NCPolynomial::zero(mode),
    }))
}

/// `A^{(n)}` under the q-Poisson substitution `r_k = 1` for `k >= 2`,
/// every `x_k = x`.
pub fn ks_charlier(n: usize, mode: Mode) -> Result<NCPolynomial> {
    let r = MomentSequence::poisson(n + 2);
    let a = ks_power(n, &r, mode)?;
    Ok(a.substitute(&|_| NCPolynomial::var(mode, 1)))
}

/// Monic orthogonal polynomial `P_k` with respect to `<x^a, x^b> = r_{a+b+2}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonicOP {
    pub degree: usize,
    /// Lowest degree first; the last entry is 1.
    pub coeffs: Vec<BigRational>,
}

impl MonicOP {
    /// `<P, x^j>` under the moment functional.
    pub fn pairing_with_monomial(&self, j: usize, r: &MomentSequence) -> Result<BigRational> {
        let mut acc = BigRational::zero();
        for (i, c) in self.coeffs.iter().enumerate() {
            acc += c * r.r(i + j + 2)?;
        }
        Ok(acc)
    }

    pub fn eval(&self, x: &BigRational) -> BigRational {
        self.coeffs.iter().rev().fold(BigRational::zero(), |acc, c| acc * x + c)
    }
}

/// Exact Gaussian elimination; `None` when singular.
pub(crate) fn solve_exact(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Option<Vec<BigRational>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).find(|&i| !a[i][col].is_zero())?;
        a.swap(col, piv);
        b.swap(col, piv);
        let inv = BigRational::one() / &a[col][col];
        for i in 0..n {
            if i != col && !a[i][col].is_zero() {
                let f = &a[i][col] * &inv;
                for k in col..n {
                    let t = &f * &a[col][k];
                    a[i][k] -= t;
                }
                let t = &f * &b[col];
                b[i] -= t;
            }
        }
    }
    Some((0..n).map(|i| &b[i] / &a[i][i]).collect())
}

/// Monic `P_k`, by an exact Hankel solve.
pub fn monic_op(k: usize, r: &MomentSequence) -> Result<MonicOP> {
    let mut h = vec![vec![BigRational::zero(); k]; k];
    let mut rhs = vec![BigRational::zero(); k];
    for j in 0..k {
        for i in 0..k {
            h[j][i] = r.r(i + j + 2)?.clone();
        }
        rhs[j] = -r.r(k + j + 2)?.clone();
    }
    let sol = solve_exact(h, rhs).ok_or_else(|| {
        Error::Degenerate(format!("Hankel matrix of order {k} is singular: nu has fewer than {} support points", k))
    })?;
    let mut coeffs = sol;
    coeffs.push(BigRational::one());
    Ok(MonicOP { degree: k, coeffs })
}

/// `[n]_q!` convenience re-export for row formulas.
pub fn q_factorial(mode: Mode, n: usize) -> QScalar {
    q_fact(mode, n)
}
