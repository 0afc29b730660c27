//! Clique graph and maximum-separator spanning forest (the clique tree).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::depgraph::{escape, DependencyGraph, MaximalClique};
use crate::error::{Error, Result};

/// Candidate edge of the clique graph; `a < b` are clique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueGraphEdge {
    pub a: usize,
    pub b: usize,
    pub separator: Vec<usize>,
}

impl CliqueGraphEdge {
    pub fn weight(&self) -> usize {
        self.separator.len()
    }
}

/// Cliques linked whenever they share at least one attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueGraph {
    pub cliques: Vec<MaximalClique>,
    pub edges: Vec<CliqueGraphEdge>,
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Link every pair of cliques with a non-empty intersection. Clique ids are
/// renumbered to list positions.
pub fn build_clique_graph(cliques: &[MaximalClique]) -> CliqueGraph {
    let cliques: Vec<MaximalClique> = cliques
        .iter()
        .enumerate()
        .map(|(id, c)| MaximalClique::new(id, c.members.clone()))
        .collect();
    let mut edges = Vec::new();
    for a in 0..cliques.len() {
        for b in a + 1..cliques.len() {
            let separator = intersect(&cliques[a].members, &cliques[b].members);
            if !separator.is_empty() {
                edges.push(CliqueGraphEdge { a, b, separator });
            }
        }
    }
    CliqueGraph { cliques, edges }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        // Smaller root wins so component representatives are deterministic.
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        true
    }
}

impl CliqueGraph {
    /// Kruskal over edges ordered by descending separator size, then by
    /// ascending `(a, b)`. Yields a maximum-weight spanning forest.
    pub fn spanning_tree(&self) -> Result<CliqueTree> {
        let mut order: Vec<&CliqueGraphEdge> = self.edges.iter().collect();
        order.sort_by(|x, y| {
            y.weight()
                .cmp(&x.weight())
                .then((x.a, x.b).cmp(&(y.a, y.b)))
        });
        let mut sets = DisjointSet::new(self.cliques.len());
        let edges: Vec<TreeEdge> = order
            .into_iter()
            .filter(|e| sets.union(e.a, e.b))
            .map(|e| TreeEdge {
                from: e.a,
                to: e.b,
                separator: e.separator.clone(),
            })
            .collect();
        let tree = CliqueTree::from_parts(self.cliques.clone(), edges)?;
        if !tree.verify_rip() {
            return Err(Error::Internal(
                "clique tree violates the running intersection property".into(),
            ));
        }
        Ok(tree)
    }
}

/// An edge of the clique tree, labelled by its separator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub from: usize,
    pub to: usize,
    pub separator: Vec<usize>,
}

/// A forest of maximal cliques joined by separator-labelled edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueTree {
    nodes: Vec<MaximalClique>,
    edges: Vec<TreeEdge>,
    components: Vec<Vec<usize>>,
}

impl CliqueTree {
    /// Assemble a forest from explicit parts. Node ids must equal positions
    /// and the edges must be acyclic; separators are taken as given, so
    /// hand-built trees may violate the running intersection property.
    pub fn from_parts(nodes: Vec<MaximalClique>, edges: Vec<TreeEdge>) -> Result<Self> {
        if nodes.iter().enumerate().any(|(i, c)| c.id != i) {
            return Err(Error::InvalidArgument(
                "clique ids must equal their positions".into(),
            ));
        }
        let mut sets = DisjointSet::new(nodes.len());
        for e in &edges {
            if e.from >= nodes.len() || e.to >= nodes.len() || e.from == e.to {
                return Err(Error::InvalidArgument(format!(
                    "tree edge ({}, {}) is out of range",
                    e.from, e.to
                )));
            }
            if !sets.union(e.from, e.to) {
                return Err(Error::InvalidArgument("tree edges contain a cycle".into()));
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..nodes.len() {
            groups.entry(sets.find(v)).or_default().push(v);
        }
        Ok(Self {
            nodes,
            edges,
            components: groups.into_values().collect(),
        })
    }

    /// Triangulate (if needed), enumerate maximal cliques and take the
    /// maximum-separator spanning forest.
    pub fn from_graph(graph: &DependencyGraph) -> Result<(DependencyGraph, Self)> {
        let chordal = graph.triangulate();
        let cliques = chordal.maximal_cliques()?;
        let tree = build_clique_graph(&cliques).spanning_tree()?;
        Ok((chordal, tree))
    }

    pub fn nodes(&self) -> &[MaximalClique] {
        &self.nodes
    }

    pub fn edges(&self) -> &[TreeEdge] {
        &self.edges
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn max_clique_size(&self) -> usize {
        self.nodes.iter().map(|c| c.members.len()).max().unwrap_or(0)
    }

    /// Sum of separator sizes over tree edges.
    pub fn separator_weight(&self) -> usize {
        self.edges.iter().map(|e| e.separator.len()).sum()
    }

    /// Highest attribute index plus one.
    pub fn attribute_span(&self) -> usize {
        self.nodes
            .iter()
            .flat_map(|c| c.members.iter())
            .max()
            .map_or(0, |m| m + 1)
    }

    /// For every attribute, the cliques containing it induce a connected
    /// subgraph of the forest.
    pub fn verify_rip(&self) -> bool {
        (0..self.attribute_span()).all(|attr| {
            let holders: Vec<usize> = self
                .nodes
                .iter()
                .filter(|c| c.contains(attr))
                .map(|c| c.id)
                .collect();
            let Some(&start) = holders.first() else {
                return true;
            };
            let mut reached = vec![start];
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for e in &self.edges {
                    let next = if e.from == v {
                        e.to
                    } else if e.to == v {
                        e.from
                    } else {
                        continue;
                    };
                    if self.nodes[next].contains(attr) && !reached.contains(&next) {
                        reached.push(next);
                        stack.push(next);
                    }
                }
            }
            reached.len() == holders.len()
        })
    }

    /// DOT text: clique nodes labelled with attribute names, edges labelled
    /// with separators.
    pub fn to_dot(&self, names: &[String]) -> String {
        let label = |attrs: &[usize]| -> String {
            attrs
                .iter()
                .map(|&a| names.get(a).map_or_else(|| a.to_string(), |n| escape(n)))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::from("graph clique_tree {\n  node [shape=ellipse];\n");
        for c in &self.nodes {
            let _ = writeln!(out, "  c{} [label=\"{}\"];", c.id, label(&c.members));
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  c{} -- c{} [label=\"{}\"];",
                e.from,
                e.to,
                label(&e.separator)
            );
        }
        out.push_str("}\n");
        out
    }
}
