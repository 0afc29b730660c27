//! Fitted clique-tree density model.
//!
//! The joint probability of a full assignment is the product of the clique
//! marginals divided by the product of the separator marginals, one separator
//! factor per tree edge. Tables hold raw maximum-likelihood counts, so an
//! unseen clique configuration has probability exactly zero.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cliquetree::{CliqueTree, TreeEdge};
use crate::dataset::{AttributeDomain, CategoricalTable};
use crate::depgraph::{DependencyGraph, MaximalClique};
use crate::error::{Error, Result};
use crate::information::ContingencyTable;

/// Empirical counts over one clique or separator.
pub type MarginalTable = ContingencyTable;

pub const SCHEMA_VERSION: u32 = 1;

/// Default cap on the number of assignments `enumerate_distribution` visits.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Provenance carried alongside a fitted model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub tool_version: String,
    /// Position of each modeled attribute in the source file.
    pub source_columns: Vec<usize>,
    pub seed: Option<u64>,
    pub train_fraction: Option<f64>,
    /// True when the final tables were tallied over train and test rows.
    pub refit_on_all_rows: bool,
    pub input_sha256: Option<String>,
    /// Echo of the run configuration, as `key -> value` text.
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliqueTreeModel {
    tree: CliqueTree,
    clique_tables: Vec<MarginalTable>,
    separator_tables: Vec<MarginalTable>,
    domains: Vec<AttributeDomain>,
    fit_row_count: u64,
    threshold: Option<f64>,
    entropy: f64,
    laplace_alpha: f64,
    graph: Option<DependencyGraph>,
    /// Joint log-probabilities of the fitting rows, as sorted `(value, count)`.
    reference: Option<Vec<(f64, u64)>>,
    pub metadata: ModelMetadata,
}

/// Tally every clique and separator of `tree` over the same `rows`.
pub fn fit(tree: &CliqueTree, table: &CategoricalTable, rows: &[usize]) -> Result<CliqueTreeModel> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("cannot fit a model on zero rows".into()));
    }
    let n = table.n_attrs();
    let mut covered = vec![false; n];
    for c in tree.nodes() {
        for &a in &c.members {
            if a >= n {
                return Err(Error::InvalidArgument(format!(
                    "clique attribute {a} is not in the table"
                )));
            }
            covered[a] = true;
        }
    }
    if let Some(a) = covered.iter().position(|&c| !c) {
        return Err(Error::InvalidArgument(format!(
            "attribute `{}` is not covered by any clique",
            table.domains()[a].attribute_name
        )));
    }
    let clique_tables: Vec<MarginalTable> = tree
        .nodes()
        .par_iter()
        .map(|c| MarginalTable::tally(table, &c.members, rows))
        .collect();
    let separator_tables: Vec<MarginalTable> = tree
        .edges()
        .par_iter()
        .map(|e| MarginalTable::tally(table, &e.separator, rows))
        .collect();
    let entropy = entropy_of(&clique_tables, &separator_tables);
    Ok(CliqueTreeModel {
        tree: tree.clone(),
        clique_tables,
        separator_tables,
        domains: table.domains().to_vec(),
        fit_row_count: rows.len() as u64,
        threshold: None,
        entropy,
        laplace_alpha: 0.0,
        graph: None,
        reference: None,
        metadata: ModelMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            source_columns: table.source_columns().to_vec(),
            ..ModelMetadata::default()
        },
    })
}

fn entropy_of(cliques: &[MarginalTable], separators: &[MarginalTable]) -> f64 {
    let vertex: f64 = cliques.iter().map(MarginalTable::entropy).sum();
    let edge: f64 = separators.iter().map(MarginalTable::entropy).sum();
    vertex - edge
}

impl CliqueTreeModel {
    pub fn tree(&self) -> &CliqueTree {
        &self.tree
    }

    pub fn cliques(&self) -> &[MaximalClique] {
        self.tree.nodes()
    }

    pub fn clique_tables(&self) -> &[MarginalTable] {
        &self.clique_tables
    }

    pub fn separator_tables(&self) -> &[MarginalTable] {
        &self.separator_tables
    }

    pub fn domains(&self) -> &[AttributeDomain] {
        &self.domains
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.attribute_name.clone()).collect()
    }

    pub fn n_attrs(&self) -> usize {
        self.domains.len()
    }

    pub fn fit_row_count(&self) -> u64 {
        self.fit_row_count
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn laplace_alpha(&self) -> f64 {
        self.laplace_alpha
    }

    pub fn graph(&self) -> Option<&DependencyGraph> {
        self.graph.as_ref()
    }

    pub fn reference(&self) -> Option<&[(f64, u64)]> {
        self.reference.as_deref()
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }

    /// Attach the (triangulated) dependency graph the tree was built from.
    pub fn with_graph(mut self, graph: DependencyGraph) -> Self {
        self.graph = Some(graph);
        self
    }

    /// Add-`alpha` smoothing applied when scoring. Fitted counts are unchanged.
    pub fn with_laplace(mut self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Laplace alpha must be a finite non-negative number, got {alpha}"
            )));
        }
        self.laplace_alpha = alpha;
        self.metadata
            .config
            .insert("laplace_alpha".into(), alpha.to_string());
        Ok(self)
    }

    /// Record the joint log-probabilities of `rows` as the reference
    /// population for overall percentiles.
    pub fn with_reference(mut self, table: &CategoricalTable, rows: &[usize]) -> Result<Self> {
        let values = self.log_probabilities(table, rows)?;
        let mut grouped: BTreeMap<u64, (f64, u64)> = BTreeMap::new();
        for v in values {
            grouped.entry(order_key(v)).or_insert((v, 0)).1 += 1;
        }
        self.reference = Some(grouped.into_values().collect());
        Ok(self)
    }

    /// Cached clique-tree entropy (nats) of the fitted tables.
    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    /// Smoothed probability of a clique (or separator) cell given its count.
    pub(crate) fn cell_probability(&self, count: u64, attrs: &[usize]) -> f64 {
        let n = self.fit_row_count as f64;
        if self.laplace_alpha == 0.0 {
            return count as f64 / n;
        }
        let cells: f64 = attrs
            .iter()
            .map(|&a| self.domains[a].cardinality() as f64)
            .product();
        (count as f64 + self.laplace_alpha) / (n + self.laplace_alpha * cells)
    }

    fn check_row(&self, row: &[u32]) -> Result<()> {
        if row.len() != self.n_attrs() {
            return Err(Error::InvalidArgument(format!(
                "row assigns {} attributes, model has {}",
                row.len(),
                self.n_attrs()
            )));
        }
        for (a, (&code, d)) in row.iter().zip(&self.domains).enumerate() {
            if code as usize >= d.cardinality() {
                return Err(Error::InvalidArgument(format!(
                    "code {code} is outside the domain of attribute {a}"
                )));
            }
        }
        Ok(())
    }

    fn log_probability_with(&self, code: impl Fn(usize) -> u32) -> Result<f64> {
        let mut key = Vec::new();
        let mut log_p = 0.0;
        // All clique factors first: a zero numerator ends the evaluation
        // before any separator is consulted.
        for table in &self.clique_tables {
            key.clear();
            key.extend(table.attrs.iter().map(|&a| code(a)));
            let count = table.count(&key);
            if count == 0 && self.laplace_alpha == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            log_p += self.cell_probability(count, &table.attrs).ln();
        }
        for table in &self.separator_tables {
            key.clear();
            key.extend(table.attrs.iter().map(|&a| code(a)));
            let count = table.count(&key);
            if count == 0 && self.laplace_alpha == 0.0 {
                return Err(Error::Internal(
                    "separator count is zero while every clique count is positive".into(),
                ));
            }
            log_p -= self.cell_probability(count, &table.attrs).ln();
        }
        Ok(log_p)
    }

    /// Natural log of the joint probability; `-inf` for probability zero.
    pub fn log_probability(&self, row: &[u32]) -> Result<f64> {
        self.check_row(row)?;
        self.log_probability_with(|a| row[a])
    }

    /// Joint probability of a full code assignment.
    pub fn probability(&self, row: &[u32]) -> Result<f64> {
        let lp = self.log_probability(row)?;
        Ok(if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() })
    }

    fn check_table(&self, table: &CategoricalTable) -> Result<()> {
        if table.n_attrs() != self.n_attrs() {
            return Err(Error::InvalidArgument(format!(
                "table has {} attributes, model has {}",
                table.n_attrs(),
                self.n_attrs()
            )));
        }
        for (a, (t, m)) in table.domains().iter().zip(&self.domains).enumerate() {
            if t.cardinality() > m.cardinality() {
                return Err(Error::InvalidArgument(format!(
                    "attribute {a} has values outside the model domain"
                )));
            }
        }
        Ok(())
    }

    /// Log-probability of one table row.
    pub fn log_probability_of_row(&self, table: &CategoricalTable, row: usize) -> Result<f64> {
        self.check_table(table)?;
        self.log_probability_with(|a| table.code(row, a))
    }

    /// Per-row log-probabilities, in `rows` order.
    pub fn log_probabilities(&self, table: &CategoricalTable, rows: &[usize]) -> Result<Vec<f64>> {
        self.check_table(table)?;
        rows.par_iter()
            .map(|&r| self.log_probability_with(|a| table.code(r, a)))
            .collect()
    }

    /// Sum of row log-probabilities; `-inf` as soon as any row has probability 0.
    pub fn log_likelihood(&self, table: &CategoricalTable, rows: &[usize]) -> Result<f64> {
        Ok(self.log_probabilities(table, rows)?.into_iter().sum())
    }

    /// Probability of each clique factor (`P_clique(row restricted to clique)`),
    /// in clique order.
    pub fn clique_probabilities(&self, row: &[u32]) -> Result<Vec<f64>> {
        self.check_row(row)?;
        let mut key = Vec::new();
        Ok(self
            .clique_tables
            .iter()
            .map(|t| {
                key.clear();
                key.extend(t.attrs.iter().map(|&a| row[a]));
                self.cell_probability(t.count(&key), &t.attrs)
            })
            .collect())
    }

    /// Number of full assignments over the model's domains.
    pub fn assignment_count(&self) -> u128 {
        self.domains
            .iter()
            .fold(1u128, |acc, d| acc.saturating_mul(d.cardinality() as u128))
    }

    /// Every full assignment with its model probability, in odometer order
    /// (last attribute fastest). Test-scale oracle only.
    pub fn enumerate_distribution(&self, cap: u128) -> Result<DistributionIter<'_>> {
        let size = self.assignment_count();
        if size > cap {
            return Err(Error::CapExceeded { size, cap });
        }
        Ok(DistributionIter {
            model: self,
            next: Some(vec![0; self.n_attrs()]),
        })
    }

    pub fn to_document(&self) -> ModelDocument {
        let cliques = self
            .tree
            .nodes()
            .iter()
            .zip(&self.clique_tables)
            .map(|(c, t)| CliqueDocument {
                id: c.id,
                attrs: c.members.clone(),
                entries: entries_of(t),
                total: t.total,
            })
            .collect();
        let edges = self
            .tree
            .edges()
            .iter()
            .zip(&self.separator_tables)
            .map(|(e, t)| EdgeDocument {
                from: e.from,
                to: e.to,
                separator: e.separator.clone(),
                entries: entries_of(t),
                total: t.total,
            })
            .collect();
        let graph = self.graph.as_ref().map(|g| GraphDocument {
            edges: g.weighted_edges().collect(),
            fill_in: g.fill_in_edges().iter().copied().collect(),
        });
        ModelDocument {
            schema_version: SCHEMA_VERSION,
            threshold: self.threshold,
            domains: self.domains.clone(),
            cliques,
            edges,
            graph,
            reference: self.reference.as_ref().map(|r| {
                r.iter()
                    .map(|&(log_probability, count)| ReferenceDocument {
                        log_probability: finite_or_none(log_probability),
                        count,
                    })
                    .collect()
            }),
            metadata: DocumentMetadata {
                fit_row_count: self.fit_row_count,
                entropy: self.entropy,
                laplace_alpha: self.laplace_alpha,
                provenance: self.metadata.clone(),
            },
        }
    }

    /// Rebuild and validate a model from its document form.
    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        let n = doc.domains.len();
        for (i, d) in doc.domains.iter().enumerate() {
            if d.attribute_index != i || d.values.is_empty() {
                return Err(Error::Schema(format!("domain {i} is malformed")));
            }
        }
        let rows = doc.metadata.fit_row_count;
        let table_of = |attrs: &[usize], entries: &[EntryDocument], total: u64, what: &str| {
            if attrs.iter().any(|&a| a >= n) || attrs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Schema(format!("{what}: attributes are invalid")));
            }
            if total != rows {
                return Err(Error::Schema(format!(
                    "{what}: total {total} differs from fit row count {rows}"
                )));
            }
            let mut counts = std::collections::HashMap::new();
            let mut sum = 0u64;
            for e in entries {
                let valid = e.codes.len() == attrs.len()
                    && e.codes
                        .iter()
                        .zip(attrs)
                        .all(|(&c, &a)| (c as usize) < doc.domains[a].cardinality());
                if !valid || e.count == 0 {
                    return Err(Error::Schema(format!("{what}: malformed entry {:?}", e.codes)));
                }
                if counts.insert(e.codes.clone(), e.count).is_some() {
                    return Err(Error::Schema(format!("{what}: duplicate entry {:?}", e.codes)));
                }
                sum += e.count;
            }
            if sum != total {
                return Err(Error::Schema(format!(
                    "{what}: counts sum to {sum} but total is {total}"
                )));
            }
            Ok(MarginalTable {
                attrs: attrs.to_vec(),
                counts,
                total,
            })
        };
        let nodes: Vec<MaximalClique> = doc
            .cliques
            .iter()
            .map(|c| MaximalClique::new(c.id, c.attrs.clone()))
            .collect();
        let clique_tables = doc
            .cliques
            .iter()
            .map(|c| table_of(&c.attrs, &c.entries, c.total, &format!("clique {}", c.id)))
            .collect::<Result<Vec<_>>>()?;
        let separator_tables = doc
            .edges
            .iter()
            .map(|e| {
                table_of(
                    &e.separator,
                    &e.entries,
                    e.total,
                    &format!("edge {}-{}", e.from, e.to),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let tree_edges: Vec<TreeEdge> = doc
            .edges
            .iter()
            .map(|e| TreeEdge {
                from: e.from,
                to: e.to,
                separator: e.separator.clone(),
            })
            .collect();
        let tree = CliqueTree::from_parts(nodes, tree_edges)
            .map_err(|e| Error::Schema(e.to_string()))?;
        for e in tree.edges() {
            let expected: Vec<usize> = tree.nodes()[e.from]
                .members
                .iter()
                .copied()
                .filter(|&a| tree.nodes()[e.to].contains(a))
                .collect();
            if expected != e.separator || expected.is_empty() {
                return Err(Error::Schema(format!(
                    "edge {}-{}: separator is not the clique intersection",
                    e.from, e.to
                )));
            }
        }
        if !tree.verify_rip() {
            return Err(Error::Schema(
                "clique tree violates the running intersection property".into(),
            ));
        }
        for (e, sep) in tree.edges().iter().zip(&separator_tables) {
            for end in [e.from, e.to] {
                if clique_tables[end].marginalize(&e.separator)? != *sep {
                    return Err(Error::Schema(format!(
                        "edge {}-{}: separator counts disagree with clique {end}",
                        e.from, e.to
                    )));
                }
            }
        }
        let mut covered = vec![false; n];
        for c in tree.nodes() {
            for &a in &c.members {
                covered[a] = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::Schema("an attribute is not covered by any clique".into()));
        }
        let graph = match &doc.graph {
            None => None,
            Some(g) => Some(
                DependencyGraph::from_parts(n, &g.edges, &g.fill_in, doc.threshold)
                    .map_err(|e| Error::Schema(e.to_string()))?,
            ),
        };
        let alpha = doc.metadata.laplace_alpha;
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Schema("laplace_alpha must be non-negative".into()));
        }
        let entropy = entropy_of(&clique_tables, &separator_tables);
        Ok(Self {
            tree,
            clique_tables,
            separator_tables,
            domains: doc.domains,
            fit_row_count: rows,
            threshold: doc.threshold,
            entropy,
            laplace_alpha: alpha,
            graph,
            reference: doc.reference.map(|r| {
                r.into_iter()
                    .map(|e| (e.log_probability.unwrap_or(f64::NEG_INFINITY), e.count))
                    .collect()
            }),
            metadata: doc.metadata.provenance,
        })
    }

    /// Pretty-printed JSON; identical models give identical bytes.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.to_document())?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Total order key for finite floats and `-inf` (NaN is never produced).
fn order_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn entries_of(t: &MarginalTable) -> Vec<EntryDocument> {
    t.sorted_entries()
        .into_iter()
        .map(|(codes, count)| EntryDocument {
            codes: codes.to_vec(),
            count,
        })
        .collect()
}

/// Iterator over `(assignment, probability)` pairs.
pub struct DistributionIter<'a> {
    model: &'a CliqueTreeModel,
    next: Option<Vec<u32>>,
}

impl Iterator for DistributionIter<'_> {
    type Item = Result<(Vec<u32>, f64)>;

    fn next(&mut self) -> Option<Self::Item> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut advanced = false;
        for a in (0..succ.len()).rev() {
            succ[a] += 1;
            if (succ[a] as usize) < self.model.domains[a].cardinality() {
                advanced = true;
                break;
            }
            succ[a] = 0;
        }
        if advanced {
            self.next = Some(succ);
        }
        Some(
            self.model
                .probability(&current)
                .map(|p| (current, p)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDocument {
    pub codes: Vec<u32>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliqueDocument {
    pub id: usize,
    pub attrs: Vec<usize>,
    pub entries: Vec<EntryDocument>,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDocument {
    pub from: usize,
    pub to: usize,
    pub separator: Vec<usize>,
    pub entries: Vec<EntryDocument>,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    /// `(i, j, nmi)` for thresholded edges.
    pub edges: Vec<(usize, usize, f64)>,
    pub fill_in: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDocument {
    /// `null` encodes probability zero.
    pub log_probability: Option<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentMetadata {
    pub fit_row_count: u64,
    pub entropy: f64,
    pub laplace_alpha: f64,
    #[serde(flatten)]
    pub provenance: ModelMetadata,
}

/// On-disk JSON layout of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub threshold: Option<f64>,
    pub domains: Vec<AttributeDomain>,
    pub cliques: Vec<CliqueDocument>,
    pub edges: Vec<EdgeDocument>,
    pub graph: Option<GraphDocument>,
    pub reference: Option<Vec<ReferenceDocument>>,
    pub metadata: DocumentMetadata,
}
