//! Thresholded dependency graph, min-fill triangulation, chordality testing
//! and maximal clique enumeration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::information::NmiMatrix;

/// Undirected graph over attributes. Edges are stored as `(min, max)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyGraph {
    n_attrs: usize,
    adjacency: Vec<BTreeSet<usize>>,
    /// NMI of every thresholded edge. Fill-in edges carry no weight.
    weights: BTreeMap<(usize, usize), f64>,
    fill_in: BTreeSet<(usize, usize)>,
    threshold: Option<f64>,
}

fn key(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

impl DependencyGraph {
    pub fn empty(n_attrs: usize) -> Self {
        Self {
            n_attrs,
            adjacency: vec![BTreeSet::new(); n_attrs],
            weights: BTreeMap::new(),
            fill_in: BTreeSet::new(),
            threshold: None,
        }
    }

    /// Unweighted graph from an edge list. Self-loops are rejected.
    pub fn from_edges(n_attrs: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n_attrs);
        for &(i, j) in edges {
            if i == j || i >= n_attrs || j >= n_attrs {
                return Err(Error::InvalidArgument(format!("invalid edge ({i}, {j})")));
            }
            g.link(i, j);
        }
        Ok(g)
    }

    /// Restore a graph from its parts, e.g. when loading a model file.
    pub fn from_parts(
        n_attrs: usize,
        weighted: &[(usize, usize, f64)],
        fill_in: &[(usize, usize)],
        threshold: Option<f64>,
    ) -> Result<Self> {
        let mut g = Self::from_edges(n_attrs, fill_in)?;
        g.fill_in = fill_in.iter().map(|&(i, j)| key(i, j)).collect();
        for &(i, j, w) in weighted {
            if i == j || i >= n_attrs || j >= n_attrs {
                return Err(Error::InvalidArgument(format!("invalid edge ({i}, {j})")));
            }
            g.link(i, j);
            g.weights.insert(key(i, j), w);
        }
        g.threshold = threshold;
        Ok(g)
    }

    fn link(&mut self, i: usize, j: usize) {
        self.adjacency[i].insert(j);
        self.adjacency[j].insert(i);
    }

    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].contains(&j)
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adjacency[v]
    }

    /// All edges as sorted `(min, max)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n_attrs)
            .flat_map(|i| self.adjacency[i].range(i + 1..).map(move |&j| (i, j)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.weights.get(&key(i, j)).copied()
    }

    pub fn weighted_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.weights.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn fill_in_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.fill_in
    }

    /// Keep edge `(i, j)` iff `nmi(i, j) >= threshold`.
    pub fn prune(matrix: &NmiMatrix, threshold: f64) -> Self {
        let mut g = Self::empty(matrix.n_attrs());
        for (i, j, v) in matrix.pairs() {
            if v >= threshold {
                g.link(i, j);
                g.weights.insert((i, j), v);
            }
        }
        g.threshold = Some(threshold);
        g
    }

    /// Chordal supergraph by greedy min-fill elimination; ties go to the lowest
    /// vertex index. Added edges are recorded as fill-ins.
    pub fn triangulate(&self) -> Self {
        let mut out = self.clone();
        let mut work = self.adjacency.clone();
        let mut eliminated = vec![false; self.n_attrs];
        for _ in 0..self.n_attrs {
            let (v, _) = (0..self.n_attrs)
                .filter(|&v| !eliminated[v])
                .map(|v| (v, fill_count(&work, v)))
                .min_by_key(|&(v, fill)| (fill, v))
                .expect("a vertex remains");
            let nbrs: Vec<usize> = work[v].iter().copied().collect();
            for (a_pos, &a) in nbrs.iter().enumerate() {
                for &b in &nbrs[a_pos + 1..] {
                    if work[a].insert(b) {
                        work[b].insert(a);
                        out.link(a, b);
                        out.fill_in.insert(key(a, b));
                    }
                }
            }
            for &u in &nbrs {
                work[u].remove(&v);
            }
            work[v].clear();
            eliminated[v] = true;
        }
        out
    }

    /// Maximum cardinality search; ties go to the lowest vertex index.
    /// Returns the reverse of the visit order, which is a perfect elimination
    /// order whenever the graph is chordal.
    fn mcs_order(&self) -> Vec<usize> {
        let n = self.n_attrs;
        let mut weight = vec![0usize; n];
        let mut visited = vec![false; n];
        let mut visit = Vec::with_capacity(n);
        for _ in 0..n {
            let v = (0..n)
                .filter(|&v| !visited[v])
                .max_by_key(|&v| (weight[v], std::cmp::Reverse(v)))
                .expect("a vertex remains");
            visited[v] = true;
            visit.push(v);
            for &u in &self.adjacency[v] {
                if !visited[u] {
                    weight[u] += 1;
                }
            }
        }
        visit.reverse();
        visit
    }

    fn is_perfect_elimination_order(&self, order: &[usize]) -> bool {
        let mut position = vec![0usize; self.n_attrs];
        for (p, &v) in order.iter().enumerate() {
            position[v] = p;
        }
        order.iter().all(|&v| {
            let later: Vec<usize> = self.adjacency[v]
                .iter()
                .copied()
                .filter(|&u| position[u] > position[v])
                .collect();
            match later.iter().min_by_key(|&&u| position[u]) {
                None => true,
                Some(&parent) => later
                    .iter()
                    .all(|&u| u == parent || self.adjacency[parent].contains(&u)),
            }
        })
    }

    /// A perfect elimination order if the graph is chordal.
    pub fn perfect_elimination_order(&self) -> Option<Vec<usize>> {
        let order = self.mcs_order();
        self.is_perfect_elimination_order(&order).then_some(order)
    }

    pub fn is_chordal(&self) -> bool {
        self.perfect_elimination_order().is_some()
    }

    /// Maximal cliques of a chordal graph, read off a perfect elimination
    /// order. Members are sorted, the list is sorted lexicographically and ids
    /// are list positions.
    pub fn maximal_cliques(&self) -> Result<Vec<MaximalClique>> {
        let order = self.perfect_elimination_order().ok_or(Error::NotChordal)?;
        let mut position = vec![0usize; self.n_attrs];
        for (p, &v) in order.iter().enumerate() {
            position[v] = p;
        }
        let candidates: Vec<BTreeSet<usize>> = order
            .iter()
            .map(|&v| {
                std::iter::once(v)
                    .chain(
                        self.adjacency[v]
                            .iter()
                            .copied()
                            .filter(|&u| position[u] > position[v]),
                    )
                    .collect()
            })
            .collect();
        let mut cliques: Vec<Vec<usize>> = candidates
            .iter()
            .filter(|c| {
                !candidates
                    .iter()
                    .any(|d| d.len() > c.len() && c.is_subset(d))
            })
            .map(|c| c.iter().copied().collect())
            .collect();
        cliques.sort();
        cliques.dedup();
        Ok(number_cliques(cliques))
    }

    /// Bron–Kerbosch with Tomita pivoting; valid on any graph. Sorted like
    /// [`maximal_cliques`](Self::maximal_cliques).
    pub fn bron_kerbosch(&self) -> Vec<MaximalClique> {
        let mut found = Vec::new();
        let p: BTreeSet<usize> = (0..self.n_attrs).collect();
        self.bk_expand(&mut Vec::new(), p, BTreeSet::new(), &mut found);
        for c in &mut found {
            c.sort_unstable();
        }
        found.sort();
        number_cliques(found)
    }

    fn bk_expand(
        &self,
        r: &mut Vec<usize>,
        mut p: BTreeSet<usize>,
        mut x: BTreeSet<usize>,
        found: &mut Vec<Vec<usize>>,
    ) {
        if p.is_empty() {
            if x.is_empty() {
                found.push(r.clone());
            }
            return;
        }
        let pivot = p
            .iter()
            .chain(x.iter())
            .copied()
            .max_by_key(|&u| {
                (
                    p.iter().filter(|v| self.adjacency[u].contains(v)).count(),
                    std::cmp::Reverse(u),
                )
            })
            .expect("p is non-empty");
        let branch: Vec<usize> = p
            .iter()
            .copied()
            .filter(|v| !self.adjacency[pivot].contains(v))
            .collect();
        for v in branch {
            let nbrs = &self.adjacency[v];
            r.push(v);
            self.bk_expand(
                r,
                p.intersection(nbrs).copied().collect(),
                x.intersection(nbrs).copied().collect(),
                found,
            );
            r.pop();
            p.remove(&v);
            x.insert(v);
        }
    }

    /// DOT text: solid edges labelled with their NMI, dashed fill-in edges.
    pub fn to_dot(&self, names: &[String]) -> String {
        let mut out = String::from("graph dependencies {\n");
        for (v, name) in names.iter().enumerate().take(self.n_attrs) {
            let _ = writeln!(out, "  n{v} [label=\"{}\"];", escape(name));
        }
        for (i, j) in self.edges() {
            match self.weight(i, j) {
                Some(w) => {
                    let _ = writeln!(out, "  n{i} -- n{j} [label=\"{w:.3}\"];");
                }
                None => {
                    let _ = writeln!(out, "  n{i} -- n{j} [style=dashed];");
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

fn fill_count(adjacency: &[BTreeSet<usize>], v: usize) -> usize {
    let nbrs: Vec<usize> = adjacency[v].iter().copied().collect();
    let mut missing = 0;
    for (pos, &a) in nbrs.iter().enumerate() {
        for &b in &nbrs[pos + 1..] {
            if !adjacency[a].contains(&b) {
                missing += 1;
            }
        }
    }
    missing
}

fn number_cliques(sorted: Vec<Vec<usize>>) -> Vec<MaximalClique> {
    sorted
        .into_iter()
        .enumerate()
        .map(|(id, members)| MaximalClique { id, members })
        .collect()
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// A maximal clique of a chordal dependency graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MaximalClique {
    pub id: usize,
    /// Sorted attribute indices.
    pub members: Vec<usize>,
}

impl MaximalClique {
    pub fn new(id: usize, mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { id, members }
    }

    pub fn contains(&self, attr: usize) -> bool {
        self.members.binary_search(&attr).is_ok()
    }
}
