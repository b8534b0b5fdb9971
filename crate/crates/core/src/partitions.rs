//! Set partitions, extended partitions `(S, pi)` and restricted crossings.
//!
//! Elements are one-based. Blocks are sorted and ordered by their minima.

use std::fmt;
use std::str::FromStr;

use crate::error::{usage, Error, Result};

/// Largest ground set accepted by [`enumerate_partitions`].
pub const MAX_ENUMERATION: usize = 12;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SetPartition {
    lo: usize,
    hi: usize,
    blocks: Vec<Vec<usize>>,
    owner: Vec<usize>,
}

impl SetPartition {
    /// Partition of `{1..n}`.
    pub fn new(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let p = Self::on_range(1, n, blocks)?;
        Ok(p)
    }

    /// Partition of the interval `{lo..hi}`; empty when `hi < lo`.
    pub fn on_range(lo: usize, hi: usize, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        if lo == 0 {
            return usage("ground set elements are one-based");
        }
        let size = (hi + 1).saturating_sub(lo);
        let mut owner = vec![usize::MAX; size];
        for b in blocks.iter_mut() {
            if b.is_empty() {
                return usage("empty block");
            }
            b.sort_unstable();
        }
        blocks.sort_by_key(|b| b[0]);
        for (bi, b) in blocks.iter().enumerate() {
            for &e in b {
                if e < lo || e > hi {
                    return usage(format!("element {e} outside {{{lo}..{hi}}}"));
                }
                if owner[e - lo] != usize::MAX {
                    return usage(format!("element {e} appears twice"));
                }
                owner[e - lo] = bi;
            }
        }
        if owner.contains(&usize::MAX) {
            return usage("blocks do not cover the ground set");
        }
        Ok(SetPartition { lo, hi, blocks, owner })
    }

    /// From a restricted growth string (zero-based labels).
    pub fn from_rgs(rgs: &[usize]) -> Self {
        let k = rgs.iter().copied().max().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); k];
        for (i, &l) in rgs.iter().enumerate() {
            blocks[l].push(i + 1);
        }
        SetPartition { lo: 1, hi: rgs.len(), blocks, owner: rgs.to_vec() }
    }

    pub fn n(&self) -> usize {
        (self.hi + 1).saturating_sub(self.lo)
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Index of the block containing element `e`.
    pub fn block_of(&self, e: usize) -> usize {
        self.owner[e - self.lo]
    }

    /// Every block of `self` lies inside a block of `other`.
    pub fn refines(&self, other: &SetPartition) -> bool {
        self.lo == other.lo
            && self.hi == other.hi
            && self.blocks.iter().all(|b| b.iter().all(|&e| other.block_of(e) == other.block_of(b[0])))
    }

    /// `rc(emptyset, pi)`.
    pub fn crossings(&self) -> usize {
        rc(&ExtendedPartition::closed(self.clone()))
    }

    pub fn is_noncrossing(&self) -> bool {
        self.crossings() == 0
    }

    /// Iterator over all extended partitions `(S, self)`, S in binary order.
    pub fn extensions(&self) -> impl Iterator<Item = ExtendedPartition> + '_ {
        let k = self.blocks.len();
        (0u64..(1u64 << k)).map(move |mask| ExtendedPartition {
            pi: self.clone(),
            open: (0..k).map(|i| mask >> i & 1 == 1).collect(),
        })
    }
}

fn write_block(f: &mut fmt::Formatter<'_>, b: &[usize]) -> fmt::Result {
    write!(f, "{{")?;
    for (i, e) in b.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{e}")?;
    }
    write!(f, "}}")
}

impl fmt::Display for SetPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            write_block(f, b)?;
        }
        Ok(())
    }
}

fn parse_blocks(s: &str) -> Result<Vec<(Vec<usize>, bool)>> {
    let mut out = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        let body = rest.strip_prefix('{').ok_or_else(|| Error::Usage(format!("expected '{{' in '{s}'")))?;
        let end = body.find('}').ok_or_else(|| Error::Usage(format!("unclosed block in '{s}'")))?;
        let elems = body[..end]
            .split(',')
            .map(|x| x.trim().parse::<usize>().map_err(|_| Error::Usage(format!("bad element in '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        rest = body[end + 1..].trim_start();
        let open = rest.starts_with('*');
        if open {
            rest = rest[1..].trim_start();
        }
        out.push((elems, open));
    }
    Ok(out)
}

impl FromStr for SetPartition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let blocks = parse_blocks(s)?;
        if blocks.iter().any(|b| b.1) {
            return usage("open marker in a plain partition");
        }
        let n = blocks.iter().map(|b| b.0.len()).sum();
        SetPartition::new(n, blocks.into_iter().map(|b| b.0).collect())
    }
}

/// A partition with a distinguished set `S` of left-open blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExtendedPartition {
    pub pi: SetPartition,
    open: Vec<bool>,
}

impl ExtendedPartition {
    pub fn new(pi: SetPartition, open: Vec<bool>) -> Result<Self> {
        if open.len() != pi.len() {
            return usage("open-block mask length differs from block count");
        }
        Ok(ExtendedPartition { pi, open })
    }

    /// `(emptyset, pi)`.
    pub fn closed(pi: SetPartition) -> Self {
        let k = pi.len();
        ExtendedPartition { pi, open: vec![false; k] }
    }

    /// Open blocks given as element lists (must be blocks of `pi`).
    pub fn with_open_blocks(pi: SetPartition, open_blocks: &[Vec<usize>]) -> Result<Self> {
        let mut open = vec![false; pi.len()];
        for b in open_blocks {
            let mut b = b.clone();
            b.sort_unstable();
            match pi.blocks.iter().position(|c| *c == b) {
                Some(i) => open[i] = true,
                None => return usage(format!("{b:?} is not a block")),
            }
        }
        Ok(ExtendedPartition { pi, open })
    }

    pub fn is_open(&self, block: usize) -> bool {
        self.open[block]
    }

    pub fn open_mask(&self) -> &[bool] {
        &self.open
    }

    pub fn open_count(&self) -> usize {
        self.open.iter().filter(|&&o| o).count()
    }
}

impl fmt::Display for ExtendedPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (b, &o) in self.pi.blocks.iter().zip(&self.open) {
            write_block(f, b)?;
            if o {
                write!(f, "*")?;
            }
        }
        Ok(())
    }
}

impl FromStr for ExtendedPartition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let blocks = parse_blocks(s)?;
        let n = blocks.iter().map(|b| b.0.len()).sum();
        let open: Vec<Vec<usize>> = blocks.iter().filter(|b| b.1).map(|b| b.0.clone()).collect();
        let pi = SetPartition::new(n, blocks.into_iter().map(|b| b.0).collect())?;
        ExtendedPartition::with_open_blocks(pi, &open)
    }
}

/// Streaming enumeration of `Part(n)` in restricted-growth-string order.
pub struct PartitionIter {
    rgs: Vec<usize>,
    maxes: Vec<usize>,
    done: bool,
}

impl Iterator for PartitionIter {
    type Item = SetPartition;

    fn next(&mut self) -> Option<SetPartition> {
        if self.done {
            return None;
        }
        let out = SetPartition::from_rgs(&self.rgs);
        let n = self.rgs.len();
        // advance: rightmost position that can increase
        let mut i = n;
        loop {
            if i <= 1 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.rgs[i] <= self.maxes[i - 1] {
                self.rgs[i] += 1;
                let m = self.maxes[i - 1].max(self.rgs[i]);
                self.maxes[i] = m;
                for j in i + 1..n {
                    self.rgs[j] = 0;
                    self.maxes[j] = m;
                }
                break;
            }
        }
        Some(out)
    }
}

/// All partitions of `{1..n}`, `1 <= n <= 12`.
pub fn enumerate_partitions(n: usize) -> Result<PartitionIter> {
    if n == 0 || n > MAX_ENUMERATION {
        return usage(format!("partition enumeration needs 1 <= n <= {MAX_ENUMERATION}, got {n}"));
    }
    Ok(PartitionIter { rgs: vec![0; n], maxes: vec![0; n], done: false })
}

/// Restriction of `(S, pi)` to `{k..m}`; labels are kept. A block is open
/// when it was open or met `{1..k-1}`. A single point `k == m` is allowed.
pub fn restrict(ep: &ExtendedPartition, k: usize, m: usize) -> Result<ExtendedPartition> {
    let pi = &ep.pi;
    if k < pi.lo || m > pi.hi || k > m {
        return usage(format!("restriction range {{{k}..{m}}} invalid for {{{}..{}}}", pi.lo, pi.hi));
    }
    let mut pairs = Vec::new();
    for (bi, b) in pi.blocks.iter().enumerate() {
        let kept: Vec<usize> = b.iter().copied().filter(|&e| e >= k && e <= m).collect();
        if !kept.is_empty() {
            pairs.push((kept, ep.open[bi] || b[0] < k));
        }
    }
    pairs.sort_by_key(|p| p.0[0]);
    let (blocks, open): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let pi2 = SetPartition::on_range(k, m, blocks)?;
    Ok(ExtendedPartition { pi: pi2, open })
}

fn next_in_block(pi: &SetPartition, k: usize) -> Option<usize> {
    let b = &pi.blocks[pi.block_of(k)];
    b.iter().copied().find(|&e| e > k)
}

/// Right restricted crossings at `k`, by literal restriction.
pub fn rc_at(ep: &ExtendedPartition, k: usize) -> usize {
    match next_in_block(&ep.pi, k) {
        None => 0,
        Some(j) if k + 1 > j - 1 => 0,
        Some(j) => restrict(ep, k + 1, j - 1).map(|r| r.open_count()).unwrap_or(0),
    }
}

/// `rc(S, pi) = sum_k rc_at(k)`, computed by scanning each gap once.
pub fn rc(ep: &ExtendedPartition) -> usize {
    let pi = &ep.pi;
    let mut total = 0;
    let mut seen = vec![usize::MAX; pi.len()];
    for k in pi.lo..=pi.hi {
        if let Some(j) = next_in_block(pi, k) {
            for e in k + 1..j {
                let c = pi.block_of(e);
                if seen[c] != k && (ep.open[c] || pi.blocks[c][0] < k) {
                    seen[c] = k;
                    total += 1;
                }
            }
        }
    }
    total
}

/// Sizes and inner/outer structure of a partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classification {
    pub is_noncrossing: bool,
    pub singletons: Vec<usize>,
    pub pairs: Vec<usize>,
    /// Present only for noncrossing partitions.
    pub inner_outer: Option<(Vec<usize>, Vec<usize>)>,
}

impl Classification {
    pub fn inner_blocks(&self) -> Result<&[usize]> {
        self.inner_outer.as_ref().map(|x| x.0.as_slice()).ok_or_else(crossing_err)
    }

    pub fn outer_blocks(&self) -> Result<&[usize]> {
        self.inner_outer.as_ref().map(|x| x.1.as_slice()).ok_or_else(crossing_err)
    }
}

fn crossing_err() -> Error {
    Error::Usage("inner/outer blocks are defined only for noncrossing partitions".into())
}

/// Block indices classified; inner/outer only when noncrossing.
pub fn classify(pi: &SetPartition) -> Classification {
    let is_noncrossing = pi.is_noncrossing();
    let sizes: Vec<usize> = pi.blocks.iter().map(Vec::len).collect();
    let singletons = (0..pi.len()).filter(|&i| sizes[i] == 1).collect();
    let pairs = (0..pi.len()).filter(|&i| sizes[i] == 2).collect();
    let inner_outer = is_noncrossing.then(|| {
        let (mut inner, mut outer) = (Vec::new(), Vec::new());
        for (i, b) in pi.blocks.iter().enumerate() {
            let (lo, hi) = (b[0], *b.last().unwrap());
            let nested = pi
                .blocks
                .iter()
                .enumerate()
                .any(|(j, c)| j != i && c[0] < lo && hi < *c.last().unwrap());
            if nested {
                inner.push(i);
            } else {
                outer.push(i);
            }
        }
        (inner, outer)
    });
    Classification { is_noncrossing, singletons, pairs, inner_outer }
}

/// Permutation of `{1..k}` induced by a pairing in `Part_2(k,k)`:
/// `sigma(i) = j - k` where `k+1-i ~ j`.
pub fn induced_permutation(pi: &SetPartition) -> Result<Vec<usize>> {
    let n = pi.n();
    if pi.lo != 1 || !n.is_multiple_of(2) {
        return usage("not a pairing of {1..2k}");
    }
    let k = n / 2;
    for b in &pi.blocks {
        if b.len() != 2 || b[0] > k || b[1] <= k {
            return usage(format!("{pi} is not in Part_2({k},{k})"));
        }
    }
    Ok((1..=k)
        .map(|i| {
            let b = &pi.blocks[pi.block_of(k + 1 - i)];
            b[1] - k
        })
        .collect())
}

/// Tuples in `{1..N}^n` constant exactly on the blocks of `pi`.
pub fn index_tuples(big_n: usize, pi: &SetPartition) -> IndexTuples<'_> {
    let m = pi.len();
    IndexTuples { pi, big_n, vals: (1..=m).collect(), done: m > big_n }
}

pub struct IndexTuples<'a> {
    pi: &'a SetPartition,
    big_n: usize,
    vals: Vec<usize>,
    done: bool,
}

impl Iterator for IndexTuples<'_> {
    type Item = Vec<usize>;
    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = (self.pi.lo..=self.pi.hi).map(|e| self.vals[self.pi.block_of(e)]).collect();
        // next injective assignment of block values, lexicographic
        let m = self.vals.len();
        let mut i = m;
        'outer: loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            let mut v = self.vals[i] + 1;
            while v <= self.big_n {
                if !self.vals[..i].contains(&v) {
                    self.vals[i] = v;
                    // fill the rest with smallest unused values
                    for j in i + 1..m {
                        let mut w = 1;
                        while self.vals[..j].contains(&w) {
                            w += 1;
                        }
                        self.vals[j] = w;
                    }
                    break 'outer;
                }
                v += 1;
            }
        }
        Some(out)
    }
}
