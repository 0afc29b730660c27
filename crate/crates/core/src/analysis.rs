//! Anomaly scoring, clique indexing and row similarity.
//!
//! Every clique of a fitted model indexes the rows by their value tuple on
//! the clique's attributes. Anomalies are rows with low joint probability;
//! the explanation clique is the factor with the lowest percentile relative
//! to the reference rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{CategoricalTable, Encoder};
use crate::error::{Error, Result};
use crate::model::CliqueTreeModel;

/// Rows sharing one value tuple on an attribute subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cluster {
    pub tuple: Vec<u32>,
    pub rows: Vec<usize>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.rows.len()
    }
}

/// Partition of rows by value tuple, largest cluster first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliqueIndex {
    /// `None` when built from an explicit attribute list.
    pub clique_id: Option<usize>,
    pub attrs: Vec<usize>,
    pub clusters: Vec<Cluster>,
}

impl CliqueIndex {
    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Cluster::size).collect()
    }

    pub fn row_count(&self) -> usize {
        self.clusters.iter().map(Cluster::size).sum()
    }

    pub fn lookup(&self, tuple: &[u32]) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.tuple == tuple)
    }

    /// Cluster listing with decoded tuple labels.
    pub fn to_tsv(&self, table: &CategoricalTable) -> String {
        let domains = table.domains();
        let mut out = String::from("rank\tsize\tfraction");
        for &a in &self.attrs {
            let _ = write!(out, "\t{}", domains[a].attribute_name);
        }
        out.push('\n');
        let total = self.row_count() as f64;
        for (rank, c) in self.clusters.iter().enumerate() {
            let _ = write!(out, "{}\t{}\t{}", rank + 1, c.size(), c.size() as f64 / total);
            for (&a, &code) in self.attrs.iter().zip(&c.tuple) {
                let _ = write!(out, "\t{}", domains[a].decode(code).unwrap_or("?"));
            }
            out.push('\n');
        }
        out
    }
}

/// Group `rows` by their tuple on `attrs` (order as given). Clusters are sorted
/// by descending size, then ascending tuple.
pub fn cluster_by_attrs(table: &CategoricalTable, attrs: &[usize], rows: &[usize]) -> Result<CliqueIndex> {
    if let Some(&a) = attrs.iter().find(|&&a| a >= table.n_attrs()) {
        return Err(Error::InvalidArgument(format!("attribute {a} is not in the table")));
    }
    let mut groups: BTreeMap<Vec<u32>, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        let key = attrs.iter().map(|&a| table.code(r, a)).collect();
        groups.entry(key).or_default().push(r);
    }
    let mut clusters: Vec<Cluster> = groups
        .into_iter()
        .map(|(tuple, rows)| Cluster { tuple, rows })
        .collect();
    clusters.sort_by(|x, y| y.size().cmp(&x.size()).then_with(|| x.tuple.cmp(&y.tuple)));
    Ok(CliqueIndex {
        clique_id: None,
        attrs: attrs.to_vec(),
        clusters,
    })
}

fn clique_attrs(model: &CliqueTreeModel, clique_id: usize) -> Result<&[usize]> {
    model
        .cliques()
        .get(clique_id)
        .map(|c| c.members.as_slice())
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "clique {clique_id} does not exist (model has {})",
                model.cliques().len()
            ))
        })
}

/// Index every row of `table` by clique `clique_id`.
pub fn cluster_by_clique(model: &CliqueTreeModel, table: &CategoricalTable, clique_id: usize) -> Result<CliqueIndex> {
    let attrs = clique_attrs(model, clique_id)?;
    let mut index = cluster_by_attrs(table, attrs, &table.all_rows())?;
    index.clique_id = Some(clique_id);
    Ok(index)
}

/// Rows of `table` whose tuple on clique `clique_id` equals `tuple`.
pub fn query_cluster(
    model: &CliqueTreeModel,
    table: &CategoricalTable,
    clique_id: usize,
    tuple: &[u32],
) -> Result<Vec<usize>> {
    let attrs = clique_attrs(model, clique_id)?;
    if attrs.len() != tuple.len() {
        return Err(Error::InvalidArgument(format!(
            "clique {clique_id} has {} attributes but the tuple has {}",
            attrs.len(),
            tuple.len()
        )));
    }
    Ok((0..table.row_count())
        .filter(|&r| attrs.iter().zip(tuple).all(|(&a, &v)| table.code(r, a) == v))
        .collect())
}

/// Fraction of cliques on which the two code rows carry the same tuple.
pub fn similarity_codes(model: &CliqueTreeModel, u: &[u32], v: &[u32]) -> f64 {
    let cliques = model.cliques();
    let shared = cliques
        .iter()
        .filter(|c| c.members.iter().all(|&a| u[a] == v[a]))
        .count();
    shared as f64 / cliques.len() as f64
}

pub fn similarity(model: &CliqueTreeModel, table: &CategoricalTable, row_u: usize, row_v: usize) -> Result<f64> {
    if row_u >= table.row_count() || row_v >= table.row_count() {
        return Err(Error::InvalidArgument("row index out of range".into()));
    }
    Ok(similarity_codes(model, &table.row(row_u), &table.row(row_v)))
}

/// Empirical CDF with the strict-less convention:
/// `percentile(q) = 100 * |{v < q}| / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    values: Vec<f64>,
    /// `below[i]` = total weight of `values[..i]`.
    below: Vec<u64>,
    total: u64,
}

impl EmpiricalCdf {
    /// From `(value, weight)` pairs; zero weights are ignored.
    pub fn from_weighted(mut pairs: Vec<(f64, u64)>) -> Result<Self> {
        pairs.retain(|&(_, w)| w > 0);
        if pairs.is_empty() {
            return Err(Error::EmptyInput("percentile reference set is empty".into()));
        }
        if pairs.iter().any(|(v, _)| v.is_nan()) {
            return Err(Error::Internal("NaN in percentile reference".into()));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values = Vec::with_capacity(pairs.len());
        let mut below = Vec::with_capacity(pairs.len());
        let mut total = 0;
        for (v, w) in pairs {
            if values.last() == Some(&v) {
                total += w;
                continue;
            }
            values.push(v);
            below.push(total);
            total += w;
        }
        Ok(Self {
            values,
            below,
            total,
        })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::from_weighted(values.iter().map(|&v| (v, 1)).collect())
    }

    pub fn percentile(&self, q: f64) -> f64 {
        let i = self.values.partition_point(|&v| v < q);
        let below = if i == self.values.len() {
            self.total
        } else {
            self.below[i]
        };
        100.0 * below as f64 / self.total as f64
    }
}

/// Reference distributions for percentiles: one per clique (factor
/// probabilities) and one for the joint log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileTables {
    pub per_clique: Vec<EmpiricalCdf>,
    pub overall: EmpiricalCdf,
}

/// Percentile tables over explicit reference rows.
pub fn build_percentiles(
    model: &CliqueTreeModel,
    table: &CategoricalTable,
    reference_rows: &[usize],
) -> Result<PercentileTables> {
    if reference_rows.is_empty() {
        return Err(Error::EmptyInput("no reference rows for percentiles".into()));
    }
    let per_row: Vec<Vec<f64>> = reference_rows
        .par_iter()
        .map(|&r| model.clique_probabilities(&table.row(r)))
        .collect::<Result<_>>()?;
    let per_clique = (0..model.cliques().len())
        .map(|c| EmpiricalCdf::from_values(&per_row.iter().map(|p| p[c]).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let overall = EmpiricalCdf::from_values(&model.log_probabilities(table, reference_rows)?)?;
    Ok(PercentileTables {
        per_clique,
        overall,
    })
}

impl PercentileTables {
    /// Tables for the model's own fitting rows, read from its clique tables and
    /// stored joint reference. `None` when the model carries no reference.
    pub fn from_model(model: &CliqueTreeModel) -> Option<Result<Self>> {
        let reference = model.reference()?;
        let per_clique = model
            .clique_tables()
            .iter()
            .map(|t| {
                EmpiricalCdf::from_weighted(
                    t.counts
                        .values()
                        .map(|&k| (model.cell_probability(k, &t.attrs), k))
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>>>();
        Some(per_clique.and_then(|per_clique| {
            Ok(Self {
                per_clique,
                overall: EmpiricalCdf::from_weighted(reference.to_vec())?,
            })
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliqueScore {
    pub clique_id: usize,
    pub clique_probability: f64,
    pub clique_percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnomalyReport {
    pub row_index: usize,
    pub probability: f64,
    /// Serialized as `null` for probability zero.
    #[serde(serialize_with = "serialize_log")]
    pub log_probability: f64,
    pub overall_percentile: f64,
    pub per_clique: Vec<CliqueScore>,
    pub explanation_clique: Option<usize>,
    /// Set for rows holding values outside the model's domains.
    pub error: Option<String>,
}

fn serialize_log<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

impl AnomalyReport {
    pub fn explanation_percentile(&self) -> f64 {
        self.explanation_clique
            .map_or(0.0, |c| self.per_clique[c].clique_percentile)
    }

    fn is_unencodable(&self) -> bool {
        self.error.is_some()
    }
}

/// Score one full code row. Percentile ties in the explanation go to the
/// lowest clique id.
pub fn score_codes(
    model: &CliqueTreeModel,
    percentiles: &PercentileTables,
    row_index: usize,
    codes: &[u32],
) -> Result<AnomalyReport> {
    let log_probability = model.log_probability(codes)?;
    let factors = model.clique_probabilities(codes)?;
    let per_clique: Vec<CliqueScore> = factors
        .iter()
        .enumerate()
        .map(|(clique_id, &p)| CliqueScore {
            clique_id,
            clique_probability: p,
            clique_percentile: percentiles.per_clique[clique_id].percentile(p),
        })
        .collect();
    let explanation = per_clique
        .iter()
        .min_by(|a, b| a.clique_percentile.total_cmp(&b.clique_percentile))
        .map(|s| s.clique_id);
    Ok(AnomalyReport {
        row_index,
        probability: if log_probability == f64::NEG_INFINITY {
            0.0
        } else {
            log_probability.exp()
        },
        log_probability,
        overall_percentile: percentiles.overall.percentile(log_probability),
        per_clique,
        explanation_clique: explanation,
        error: None,
    })
}

/// Score encoded table rows, in `rows` order.
pub fn score_rows(
    model: &CliqueTreeModel,
    percentiles: &PercentileTables,
    table: &CategoricalTable,
    rows: &[usize],
) -> Result<Vec<AnomalyReport>> {
    rows.par_iter()
        .map(|&r| score_codes(model, percentiles, r, &table.row(r)))
        .collect()
}

/// Score raw string rows laid out like the model's attributes. Rows with a
/// value outside the model domains become error entries.
pub fn score_raw<S: AsRef<str> + Sync>(
    model: &CliqueTreeModel,
    percentiles: &PercentileTables,
    rows: &[Vec<S>],
) -> Result<Vec<AnomalyReport>> {
    let encoder = Encoder::new(model.domains());
    rows.par_iter()
        .enumerate()
        .map(|(i, raw)| match encoder.encode(raw) {
            Ok(codes) => score_codes(model, percentiles, i, &codes),
            Err(u) => Ok(AnomalyReport {
                row_index: i,
                probability: 0.0,
                log_probability: f64::NEG_INFINITY,
                overall_percentile: 0.0,
                per_clique: Vec::new(),
                explanation_clique: None,
                error: Some(format!(
                    "unencodable, maximal anomaly: attribute `{}` has unseen value `{}`",
                    model.domains()[u.attribute].attribute_name,
                    u.value
                )),
            }),
        })
        .collect()
}

/// Most anomalous first: unencodable rows, then zero-probability rows by
/// explanation percentile, then ascending probability. Row index breaks ties.
pub fn sort_reports(reports: &mut [AnomalyReport]) {
    reports.sort_by(|x, y| {
        y.is_unencodable()
            .cmp(&x.is_unencodable())
            .then_with(|| x.log_probability.total_cmp(&y.log_probability))
            .then_with(|| {
                if x.log_probability == f64::NEG_INFINITY {
                    x.explanation_percentile().total_cmp(&y.explanation_percentile())
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .then_with(|| x.row_index.cmp(&y.row_index))
    });
}

pub const ANOMALY_COLUMNS: [&str; 6] = [
    "row_index",
    "probability",
    "log_probability",
    "overall_percentile",
    "explanation_clique_attrs",
    "explanation_percentile",
];

/// Anomaly report as TSV. `comments` become leading `# ` lines.
pub fn anomaly_tsv(model: &CliqueTreeModel, reports: &[AnomalyReport], comments: &[String]) -> String {
    let names = model.attribute_names();
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(&ANOMALY_COLUMNS.join("\t"));
    out.push('\n');
    for r in reports {
        let explanation = match (&r.error, r.explanation_clique) {
            (Some(e), _) => e.clone(),
            (None, Some(c)) => model.cliques()[c]
                .members
                .iter()
                .map(|&a| names[a].as_str())
                .collect::<Vec<_>>()
                .join(","),
            (None, None) => String::new(),
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.row_index,
            r.probability,
            r.log_probability,
            r.overall_percentile,
            explanation,
            r.explanation_percentile()
        );
    }
    out
}

/// One JSON object per report.
pub fn anomaly_jsonl(reports: &[AnomalyReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
