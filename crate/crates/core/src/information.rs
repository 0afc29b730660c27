//! Empirical entropy, mutual information and the normalized mutual
//! information (NMI) matrix. All logarithms are natural (nats).

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CategoricalTable;
use crate::error::{Error, Result};

/// Sparse joint counts of an attribute tuple over a set of rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub attrs: Vec<usize>,
    /// Only non-zero cells are stored.
    pub counts: HashMap<Vec<u32>, u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn tally(table: &CategoricalTable, attrs: &[usize], rows: &[usize]) -> Self {
        let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
        let columns: Vec<&[u32]> = attrs.iter().map(|&a| table.column(a)).collect();
        let mut key = vec![0u32; attrs.len()];
        for &r in rows {
            for (k, c) in key.iter_mut().zip(&columns) {
                *k = c[r];
            }
            match counts.get_mut(key.as_slice()) {
                Some(n) => *n += 1,
                None => {
                    counts.insert(key.clone(), 1);
                }
            }
        }
        Self {
            attrs: attrs.to_vec(),
            counts,
            total: rows.len() as u64,
        }
    }

    pub fn count(&self, codes: &[u32]) -> u64 {
        self.counts.get(codes).copied().unwrap_or(0)
    }

    /// Cells in ascending code-tuple order.
    pub fn sorted_entries(&self) -> Vec<(&[u32], u64)> {
        let mut entries: Vec<(&[u32], u64)> =
            self.counts.iter().map(|(k, &v)| (k.as_slice(), v)).collect();
        entries.sort_unstable();
        entries
    }

    /// Sum out every attribute not in `onto` (which must be a subset of `attrs`).
    pub fn marginalize(&self, onto: &[usize]) -> Result<Self> {
        let positions = onto
            .iter()
            .map(|a| {
                self.attrs.iter().position(|b| b == a).ok_or_else(|| {
                    Error::InvalidArgument(format!("attribute {a} is not in the table"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
        for (key, &n) in &self.counts {
            let sub: Vec<u32> = positions.iter().map(|&p| key[p]).collect();
            *counts.entry(sub).or_insert(0) += n;
        }
        Ok(Self {
            attrs: onto.to_vec(),
            counts,
            total: self.total,
        })
    }

    /// Entropy of the empirical distribution. Counts are summed in sorted
    /// order so the result does not depend on hash iteration order.
    pub fn entropy(&self) -> f64 {
        let mut counts: Vec<u64> = self.counts.values().copied().collect();
        counts.sort_unstable();
        entropy_from_counts(counts, self.total)
    }
}

/// `-Σ p ln p` with `p = count / total`; zero counts contribute nothing.
/// Terms are summed in sorted count order, so the result depends only on the
/// multiset of counts.
pub fn entropy_from_counts(counts: impl IntoIterator<Item = u64>, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    counts.sort_unstable();
    let h: f64 = counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

fn value_counts(column: &[u32], rows: &[usize], cardinality: usize) -> Vec<u64> {
    let mut counts = vec![0u64; cardinality];
    for &r in rows {
        counts[column[r] as usize] += 1;
    }
    counts
}

fn require_rows(rows: &[usize]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("row subset is empty".into()));
    }
    Ok(())
}

/// Entropy of one attribute over `rows`.
pub fn entropy(table: &CategoricalTable, attr: usize, rows: &[usize]) -> Result<f64> {
    require_rows(rows)?;
    let counts = value_counts(table.column(attr), rows, table.domains()[attr].cardinality());
    Ok(entropy_from_counts(counts, rows.len() as u64))
}

struct PairStats {
    mi: f64,
    hx: f64,
    hy: f64,
}

fn pair_stats(table: &CategoricalTable, x: usize, y: usize, rows: &[usize]) -> PairStats {
    let kx = table.domains()[x].cardinality();
    let ky = table.domains()[y].cardinality();
    let (cx, cy) = (table.column(x), table.column(y));
    let mut joint = vec![0u64; kx * ky];
    let mut mx = vec![0u64; kx];
    let mut my = vec![0u64; ky];
    for &r in rows {
        let (a, b) = (cx[r] as usize, cy[r] as usize);
        joint[a * ky + b] += 1;
        mx[a] += 1;
        my[b] += 1;
    }
    let n = rows.len() as f64;
    // Sorted summation keeps I(X;Y) bit-identical under relabeling and under
    // swapping X and Y.
    let mut terms = Vec::new();
    for a in 0..kx {
        for b in 0..ky {
            let c = joint[a * ky + b];
            if c == 0 {
                continue;
            }
            let c = c as f64;
            terms.push((c / n) * (c * n / (mx[a] as f64 * my[b] as f64)).ln());
        }
    }
    terms.sort_by(f64::total_cmp);
    let mi: f64 = terms.into_iter().sum();
    PairStats {
        mi: mi.max(0.0),
        hx: entropy_from_counts(mx, rows.len() as u64),
        hy: entropy_from_counts(my, rows.len() as u64),
    }
}

/// Mutual information `I(X;Y)` over `rows`, clamped to be non-negative.
pub fn mutual_information(
    table: &CategoricalTable,
    x: usize,
    y: usize,
    rows: &[usize],
) -> Result<f64> {
    require_rows(rows)?;
    if x == y {
        return Err(Error::InvalidArgument(
            "mutual information needs two distinct attributes".into(),
        ));
    }
    Ok(pair_stats(table, x, y, rows).mi)
}

fn normalize(stats: &PairStats) -> f64 {
    let floor = stats.hx.min(stats.hy);
    if floor <= 0.0 {
        // A constant attribute is independent of everything.
        return 0.0;
    }
    (stats.mi / floor).clamp(0.0, 1.0)
}

/// `I(X;Y) / min(H(X), H(Y))`, in `[0, 1]`; 0 when either attribute is constant.
pub fn nmi(table: &CategoricalTable, x: usize, y: usize, rows: &[usize]) -> Result<f64> {
    require_rows(rows)?;
    if x == y {
        return Err(Error::InvalidArgument(
            "NMI needs two distinct attributes".into(),
        ));
    }
    Ok(normalize(&pair_stats(table, x, y, rows)))
}

/// Symmetric matrix of pairwise NMI values plus per-attribute entropies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmiMatrix {
    n_attrs: usize,
    /// Row-major strict upper triangle.
    upper: Vec<f64>,
    entropies: Vec<f64>,
}

impl NmiMatrix {
    /// Build from an explicit upper triangle (pairs `(0,1), (0,2), ..., (n-2,n-1)`).
    pub fn from_upper(n_attrs: usize, upper: Vec<f64>, entropies: Vec<f64>) -> Result<Self> {
        if upper.len() != n_attrs * n_attrs.saturating_sub(1) / 2 || entropies.len() != n_attrs {
            return Err(Error::InvalidArgument("NMI matrix dimensions disagree".into()));
        }
        Ok(Self {
            n_attrs,
            upper,
            entropies,
        })
    }

    /// Convenience constructor from `(i, j, value)` triples; unlisted pairs are 0.
    pub fn from_pairs(n_attrs: usize, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let mut m = Self {
            n_attrs,
            upper: vec![0.0; n_attrs * n_attrs.saturating_sub(1) / 2],
            entropies: vec![0.0; n_attrs],
        };
        for &(i, j, v) in pairs {
            if i == j || i >= n_attrs || j >= n_attrs {
                return Err(Error::InvalidArgument(format!("bad pair ({i}, {j})")));
            }
            let k = m.offset(i.min(j), i.max(j));
            m.upper[k] = v;
        }
        Ok(m)
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        i * (2 * self.n_attrs - i - 1) / 2 + (j - i - 1)
    }

    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    /// NMI of a pair; `None` on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Less => Some(self.upper[self.offset(i, j)]),
            std::cmp::Ordering::Greater => Some(self.upper[self.offset(j, i)]),
        }
    }

    pub fn entropies(&self) -> &[f64] {
        &self.entropies
    }

    /// All `(i, j, nmi)` with `i < j`, in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_attrs)
            .flat_map(move |i| (i + 1..self.n_attrs).map(move |j| (i, j)))
            .zip(self.upper.iter().copied())
            .map(|((i, j), v)| (i, j, v))
    }

    pub fn values(&self) -> &[f64] {
        &self.upper
    }
}

/// NMI for all attribute pairs over `rows`. Pairs are computed in parallel;
/// every cell is independent, so the result does not depend on scheduling.
pub fn nmi_matrix(table: &CategoricalTable, rows: &[usize]) -> Result<NmiMatrix> {
    require_rows(rows)?;
    let n = table.n_attrs();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "an NMI matrix needs at least one attribute".into(),
        ));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let upper: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| normalize(&pair_stats(table, i, j, rows)))
        .collect();
    let entropies = (0..n)
        .map(|a| entropy(table, a, rows))
        .collect::<Result<Vec<_>>>()?;
    NmiMatrix::from_upper(n, upper, entropies)
}

/// Counts of pair NMI values per bin `[k w, (k+1) w)`, from bin 0 up to the
/// highest occupied bin (empty bins included).
pub fn histogram_of_nmi(matrix: &NmiMatrix, bin_width: f64) -> Result<Vec<(f64, usize)>> {
    if bin_width.is_nan() || bin_width <= 0.0 {
        return Err(Error::InvalidArgument("bin width must be positive".into()));
    }
    let bins: Vec<usize> = matrix
        .values()
        .iter()
        .map(|v| (v / bin_width).floor().max(0.0) as usize)
        .collect();
    let Some(&top) = bins.iter().max() else {
        return Ok(Vec::new());
    };
    let mut counts = vec![0usize; top + 1];
    for b in bins {
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as f64 * bin_width, c))
        .collect())
}

pub fn histogram_tsv(histogram: &[(f64, usize)]) -> String {
    let mut out = String::from("bin_lower\tcount\n");
    for (lower, count) in histogram {
        let _ = writeln!(out, "{lower}\t{count}");
    }
    out
}
