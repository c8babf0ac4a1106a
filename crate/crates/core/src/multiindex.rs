//! Sparse multiindices over a countable basis and their combinatorics.
//!
//! A multiindex `a` assigns a multiplicity `a_k >= 1` to finitely many basis
//! indices `k >= 1`; all other multiplicities are zero. Multiindices label
//! Hermite functionals of a Gaussian field, and the weights below
//! (`chaos_binomial_sqrt`, `wick_weight`, `propagator_coeff`) are the square
//! roots of factorial ratios that appear throughout the chaos algebra.
//!
//! All factorial arithmetic is done in log space so that degrees well past
//! the point where `n!` overflows stay usable; relative accuracy of the log
//! factorials is ~1e-15.

use std::cmp::Ordering;
use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// log(n!) with a lazily built table; exact values summed as ln(2)+..+ln(n).
pub fn ln_factorial(n: u32) -> f64 {
    const TABLE_LEN: usize = 4096;
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = vec![0.0; TABLE_LEN];
        for i in 2..TABLE_LEN {
            t[i] = t[i - 1] + (i as f64).ln();
        }
        t
    });
    let n = n as usize;
    if n < TABLE_LEN {
        table[n]
    } else {
        let mut acc = table[TABLE_LEN - 1];
        for i in TABLE_LEN..=n {
            acc += (i as f64).ln();
        }
        acc
    }
}

/// log of the binomial coefficient C(n, k); requires k <= n.
pub fn ln_binomial(n: u32, k: u32) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// A finitely supported map `k -> a_k` with `k >= 1`, `a_k >= 1`, kept
/// sorted by `k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex {
    entries: Vec<(u32, u32)>,
}

impl MultiIndex {
    /// The zero multiindex (empty support).
    pub fn empty() -> Self {
        MultiIndex::default()
    }

    /// The unit multiindex with a single 1 at position `k`.
    pub fn unit(k: u32) -> Self {
        assert!(k >= 1, "basis indices start at 1");
        MultiIndex {
            entries: vec![(k, 1)],
        }
    }

    /// Builds from (index, multiplicity) pairs. Indices must be >= 1;
    /// duplicates are summed; zero multiplicities are dropped.
    pub fn from_pairs(pairs: &[(u32, u32)]) -> Result<Self> {
        let mut entries: Vec<(u32, u32)> = Vec::with_capacity(pairs.len());
        let mut sorted: Vec<(u32, u32)> = pairs.to_vec();
        sorted.sort_unstable_by_key(|&(k, _)| k);
        for (k, v) in sorted {
            if k == 0 {
                return Err(Error::Domain("basis indices start at 1".into()));
            }
            if v == 0 {
                continue;
            }
            match entries.last_mut() {
                Some((lk, lv)) if *lk == k => *lv += v,
                _ => entries.push((k, v)),
            }
        }
        Ok(MultiIndex { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total degree |a| = sum of multiplicities.
    pub fn degree(&self) -> u32 {
        self.entries.iter().map(|&(_, v)| v).sum()
    }

    /// Multiplicity at index `k` (0 when outside the support).
    pub fn get(&self, k: u32) -> u32 {
        self.entries
            .binary_search_by_key(&k, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0)
    }

    /// The (index, multiplicity) pairs in increasing index order.
    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    /// Iterator over the support (indices with nonzero multiplicity).
    pub fn support(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|&(k, _)| k)
    }

    /// Largest index in the support, 0 for the empty multiindex.
    pub fn max_index(&self) -> u32 {
        self.entries.last().map(|&(k, _)| k).unwrap_or(0)
    }

    /// Componentwise sum.
    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        let mut entries = Vec::with_capacity(self.entries.len() + other.entries.len());
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() || j < other.entries.len() {
            let a = self.entries.get(i);
            let b = other.entries.get(j);
            match (a, b) {
                (Some(&(ka, va)), Some(&(kb, vb))) => match ka.cmp(&kb) {
                    Ordering::Less => {
                        entries.push((ka, va));
                        i += 1;
                    }
                    Ordering::Greater => {
                        entries.push((kb, vb));
                        j += 1;
                    }
                    Ordering::Equal => {
                        entries.push((ka, va + vb));
                        i += 1;
                        j += 1;
                    }
                },
                (Some(&e), None) => {
                    entries.push(e);
                    i += 1;
                }
                (None, Some(&e)) => {
                    entries.push(e);
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        MultiIndex { entries }
    }

    /// Adds the unit multiindex at `k`.
    pub fn raise(&self, k: u32) -> MultiIndex {
        self.add(&MultiIndex::unit(k))
    }

    /// Componentwise difference, `None` if any component would go negative.
    pub fn sub_checked(&self, other: &MultiIndex) -> Option<MultiIndex> {
        let mut entries = Vec::with_capacity(self.entries.len());
        let mut j = 0;
        for &(k, v) in &self.entries {
            let mut v = v;
            while j < other.entries.len() && other.entries[j].0 < k {
                return None; // other has support where self has none
            }
            if j < other.entries.len() && other.entries[j].0 == k {
                let w = other.entries[j].1;
                if w > v {
                    return None;
                }
                v -= w;
                j += 1;
            }
            if v > 0 {
                entries.push((k, v));
            }
        }
        if j < other.entries.len() {
            return None;
        }
        Some(MultiIndex { entries })
    }

    /// `a - e_k`, `None` when `a_k = 0`.
    pub fn lower(&self, k: u32) -> Option<MultiIndex> {
        self.sub_checked(&MultiIndex::unit(k))
    }

    /// Componentwise `self <= other`.
    pub fn leq(&self, other: &MultiIndex) -> bool {
        self.entries.iter().all(|&(k, v)| v <= other.get(k))
    }

    /// Componentwise minimum.
    pub fn min_with(&self, other: &MultiIndex) -> MultiIndex {
        let entries = self
            .entries
            .iter()
            .filter_map(|&(k, v)| {
                let w = other.get(k).min(v);
                (w > 0).then_some((k, w))
            })
            .collect();
        MultiIndex { entries }
    }

    /// log of a! = prod_k a_k!.
    pub fn factorial_log(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| ln_factorial(v)).sum()
    }

    /// log of the multinomial |a|! / a!.
    pub fn multinomial_log(&self) -> f64 {
        ln_factorial(self.degree()) - self.factorial_log()
    }

    /// Dense multiplicity vector (a_1, ..., a_len).
    pub fn dense_prefix(&self, len: usize) -> Vec<u32> {
        let mut v = vec![0u32; len];
        for &(k, m) in &self.entries {
            if (k as usize) <= len {
                v[k as usize - 1] = m;
            }
        }
        v
    }

    /// All multiindices `b <= a` componentwise (including 0 and a), in
    /// graded order.
    pub fn sub_indices(&self) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex::empty()];
        for &(k, v) in &self.entries {
            let mut next = Vec::with_capacity(out.len() * (v as usize + 1));
            for base in &out {
                for m in 0..=v {
                    let mut e = base.entries.clone();
                    if m > 0 {
                        e.push((k, m));
                    }
                    next.push(MultiIndex { entries: e });
                }
            }
            out = next;
        }
        out.sort_unstable();
        out
    }

    /// Renders as `a(k1:v1,k2:v2)`; the empty multiindex is `a()`.
    pub fn render(&self) -> String {
        self.to_string()
    }

    /// Parses the `render` format.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let inner = s
            .strip_prefix("a(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::Parse(format!("expected a(...), got {s:?}")))?;
        if inner.trim().is_empty() {
            return Ok(MultiIndex::empty());
        }
        let mut pairs = Vec::new();
        for part in inner.split(',') {
            let (k, v) = part
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("expected k:v, got {part:?}")))?;
            let k: u32 = k
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("bad index {k:?}: {e}")))?;
            let v: u32 = v
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("bad multiplicity {v:?}: {e}")))?;
            if v == 0 {
                return Err(Error::Parse("zero multiplicity in literal".into()));
            }
            pairs.push((k, v));
        }
        let parsed = MultiIndex::from_pairs(&pairs)?;
        if parsed.entries.len() != pairs.len() {
            return Err(Error::Parse("duplicate index in literal".into()));
        }
        Ok(parsed)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a(")?;
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}:{v}")?;
        }
        write!(f, ")")
    }
}

/// Graded order: by total degree, then within a degree the dense
/// multiplicity vector compared position by position with the larger entry
/// first (so e_1 precedes e_2, and 2e_1 precedes e_1+e_2 precedes 2e_2).
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        let (mut i, mut j) = (0, 0);
        loop {
            let a = self.entries.get(i);
            let b = other.entries.get(j);
            match (a, b) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater, // other ended: other had mass earlier
                (None, Some(_)) => return Ordering::Less,
                (Some(&(ka, va)), Some(&(kb, vb))) => {
                    match ka.cmp(&kb) {
                        // self has mass at a smaller index: self first
                        Ordering::Less => return Ordering::Less,
                        Ordering::Greater => return Ordering::Greater,
                        Ordering::Equal => match va.cmp(&vb) {
                            Ordering::Greater => return Ordering::Less,
                            Ordering::Less => return Ordering::Greater,
                            Ordering::Equal => {
                                i += 1;
                                j += 1;
                            }
                        },
                    }
                }
            }
        }
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// sqrt of the multiindex binomial C(a, b) = a! / (b! (a-b)!); requires
/// b <= a componentwise.
pub fn chaos_binomial_sqrt(a: &MultiIndex, b: &MultiIndex) -> Result<f64> {
    let diff = a
        .sub_checked(b)
        .ok_or_else(|| Error::Domain(format!("{b} is not <= {a}")))?;
    Ok((0.5 * (a.factorial_log() - b.factorial_log() - diff.factorial_log())).exp())
}

/// sqrt((a+b)! / (a! b!)), the weight attached to the degree-raising part of
/// the chaos product; defined for all pairs.
pub fn wick_weight(a: &MultiIndex, b: &MultiIndex) -> f64 {
    let sum = a.add(b);
    (0.5 * (sum.factorial_log() - a.factorial_log() - b.factorial_log())).exp()
}

/// The coupling weight of the fully coupled propagator,
/// `[C(a,b) C(b+p,p) C(a+p-b,p)]^(1/2)`; requires b <= a.
pub fn propagator_coeff(a: &MultiIndex, b: &MultiIndex, p: &MultiIndex) -> Result<f64> {
    let amb = a
        .sub_checked(b)
        .ok_or_else(|| Error::Domain(format!("{b} is not <= {a}")))?;
    let bp = b.add(p);
    let ambp = amb.add(p);
    let log_c = (a.factorial_log() - b.factorial_log() - amb.factorial_log())
        + (bp.factorial_log() - p.factorial_log() - b.factorial_log())
        + (ambp.factorial_log() - p.factorial_log() - amb.factorial_log());
    Ok((0.5 * log_c).exp())
}

/// Truncation of the multiindex set: degree at most `max_degree`, support
/// within `1..=max_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncationSpec {
    pub max_degree: u32,
    pub max_index: u32,
}

impl TruncationSpec {
    pub fn new(max_degree: u32, max_index: u32) -> Self {
        TruncationSpec {
            max_degree,
            max_index,
        }
    }

    pub fn contains(&self, a: &MultiIndex) -> bool {
        a.degree() <= self.max_degree && a.max_index() <= self.max_index
    }

    /// Number of multiindices in the truncation:
    /// sum_{n=0}^{M} C(K+n-1, n).
    pub fn count(&self) -> usize {
        let k = self.max_index as u64;
        let mut total = 0u64;
        for n in 0..=self.max_degree as u64 {
            // C(k+n-1, n) computed exactly in integers
            let mut c = 1u64;
            for i in 0..n {
                c = c * (k + i) / (i + 1);
            }
            total += c;
        }
        total as usize
    }

    /// All multiindices of the truncation in graded order (the `Ord` order):
    /// by degree, then dense-prefix with larger leading entries first.
    pub fn enumerate(&self) -> Vec<MultiIndex> {
        let mut out = Vec::with_capacity(self.count());
        let k = self.max_index;
        for deg in 0..=self.max_degree {
            let mut stack: Vec<(u32, u32)> = Vec::new();
            compose(deg, 1, k, &mut stack, &mut out);
        }
        out
    }
}

/// Recursively distributes `remaining` over indices `idx..=max_idx`, largest
/// share at the smallest index first.
fn compose(
    remaining: u32,
    idx: u32,
    max_idx: u32,
    stack: &mut Vec<(u32, u32)>,
    out: &mut Vec<MultiIndex>,
) {
    if remaining == 0 {
        out.push(MultiIndex {
            entries: stack.clone(),
        });
        return;
    }
    if idx > max_idx {
        return;
    }
    if idx == max_idx {
        stack.push((idx, remaining));
        out.push(MultiIndex {
            entries: stack.clone(),
        });
        stack.pop();
        return;
    }
    for v in (1..=remaining).rev() {
        stack.push((idx, v));
        compose(remaining - v, idx + 1, max_idx, stack, out);
        stack.pop();
    }
    compose(remaining, idx + 1, max_idx, stack, out);
}
