//! Threshold selection by held-out likelihood.
//!
//! Every candidate threshold yields one clique-tree structure. Tables are
//! tallied on the training rows and the structure is scored by
//! `log P(train) + log P(test)`. Under a uniform prior over thresholds the
//! posterior mode is the likelihood maximum.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::cliquetree::CliqueTree;
use crate::dataset::{CategoricalTable, DataSplit};
use crate::depgraph::DependencyGraph;
use crate::error::{Error, Result};
use crate::information::NmiMatrix;
use crate::model::{fit, CliqueTreeModel};

/// Offset above the largest NMI value that yields the edgeless graph.
pub const EPSILON: f64 = 1e-9;

/// `0`, the midpoints between consecutive distinct NMI values, and
/// `max + EPSILON`. Each reachable thresholded graph appears exactly once.
/// A midpoint that rounds down onto the lower value is replaced by the upper
/// value, which realizes the same graph.
pub fn candidate_thresholds(matrix: &NmiMatrix) -> Vec<f64> {
    let mut distinct: Vec<f64> = matrix.values().to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut out = vec![0.0];
    out.extend(distinct.windows(2).map(|w| {
        let mid = 0.5 * (w[0] + w[1]);
        if mid > w[0] {
            mid
        } else {
            w[1]
        }
    }));
    if let Some(&max) = distinct.last() {
        out.push(max + EPSILON);
    }
    out
}

/// Thresholded, triangulated graph and its clique tree.
pub fn build_structure(matrix: &NmiMatrix, threshold: f64) -> Result<(DependencyGraph, CliqueTree)> {
    CliqueTree::from_graph(&DependencyGraph::prune(matrix, threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub threshold: f64,
    pub log_p_train: f64,
    pub log_p_test: f64,
    pub log_p_total: f64,
    pub entropy: f64,
    pub avg_prob_train: f64,
    pub avg_prob_test: f64,
    /// Mean probability over train and test rows together.
    pub avg_prob_all: f64,
    pub n_cliques: usize,
    pub max_clique_size: usize,
}

impl SweepRecord {
    pub fn is_feasible(&self) -> bool {
        self.log_p_total.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    pub candidates: Vec<f64>,
    pub records: Vec<SweepRecord>,
}

/// Fit on the training rows at `threshold` and score both sides of the split.
pub fn evaluate_threshold(
    threshold: f64,
    matrix: &NmiMatrix,
    table: &CategoricalTable,
    split: &DataSplit,
) -> Result<SweepRecord> {
    let (_, tree) = build_structure(matrix, threshold)?;
    let model = fit(&tree, table, &split.train_indices)?;
    let train = model.log_probabilities(table, &split.train_indices)?;
    let test = model.log_probabilities(table, &split.test_indices)?;
    let log_p_train: f64 = train.iter().sum();
    let log_p_test: f64 = test.iter().sum();
    let mass = |lps: &[f64]| lps.iter().map(|lp| lp.exp()).sum::<f64>();
    let (mass_train, mass_test) = (mass(&train), mass(&test));
    Ok(SweepRecord {
        threshold,
        log_p_train,
        log_p_test,
        log_p_total: log_p_train + log_p_test,
        entropy: model.entropy(),
        avg_prob_train: mass_train / train.len() as f64,
        avg_prob_test: mass_test / test.len() as f64,
        avg_prob_all: (mass_train + mass_test) / (train.len() + test.len()) as f64,
        n_cliques: tree.nodes().len(),
        max_clique_size: tree.max_clique_size(),
    })
}

/// Evaluate all candidates. Work runs in parallel; `on_record` sees records in
/// ascending threshold order as each batch completes.
pub fn sweep(
    matrix: &NmiMatrix,
    table: &CategoricalTable,
    split: &DataSplit,
    mut on_record: impl FnMut(&SweepRecord),
) -> Result<ThresholdSweep> {
    let candidates = candidate_thresholds(matrix);
    let batch = rayon::current_num_threads().max(1) * 4;
    let mut records = Vec::with_capacity(candidates.len());
    for chunk in candidates.chunks(batch) {
        let done = chunk
            .par_iter()
            .map(|&x| evaluate_threshold(x, matrix, table, split))
            .collect::<Result<Vec<_>>>()?;
        for r in done {
            on_record(&r);
            records.push(r);
        }
    }
    Ok(ThresholdSweep {
        candidates,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectOptions {
    /// Refit the selected structure on train and test rows together.
    pub refit_on_all_rows: bool,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            refit_on_all_rows: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub optimal_threshold: f64,
    /// Index of the optimal record in `sweep.records`.
    pub optimal_index: usize,
    /// Smallest feasible candidate.
    pub feasibility_boundary: f64,
    /// True when every candidate below the boundary is infeasible and every
    /// candidate from it upward is feasible.
    pub boundary_is_sharp: bool,
    pub optimal_model: CliqueTreeModel,
    pub sweep: ThresholdSweep,
    pub split: DataSplit,
}

/// Index of the largest finite `log_p_total`; ties go to the earliest
/// (smallest) threshold.
pub fn argmax_feasible(records: &[SweepRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if r.is_feasible() && best.is_none_or(|b| r.log_p_total > records[b].log_p_total) {
            best = Some(i);
        }
    }
    best
}

/// First test-row value that never occurs in the training rows.
fn unseen_test_value(table: &CategoricalTable, split: &DataSplit) -> Option<(String, String)> {
    for (a, domain) in table.domains().iter().enumerate() {
        let col = table.column(a);
        let mut seen = vec![false; domain.cardinality()];
        for &r in &split.train_indices {
            seen[col[r] as usize] = true;
        }
        if let Some(&r) = split.test_indices.iter().find(|&&r| !seen[col[r] as usize]) {
            let value = domain.decode(col[r]).unwrap_or_default().to_string();
            return Some((domain.attribute_name.clone(), value));
        }
    }
    None
}

/// Fit the final model for `threshold` on `rows` and attach provenance.
pub fn fit_final(
    matrix: &NmiMatrix,
    table: &CategoricalTable,
    threshold: f64,
    rows: &[usize],
) -> Result<CliqueTreeModel> {
    let (graph, tree) = build_structure(matrix, threshold)?;
    fit(&tree, table, rows)?
        .with_threshold(threshold)
        .with_graph(graph)
        .with_reference(table, rows)
}

pub fn select(
    matrix: &NmiMatrix,
    table: &CategoricalTable,
    split: &DataSplit,
    options: SelectOptions,
    on_record: impl FnMut(&SweepRecord),
) -> Result<SelectionResult> {
    let sweep = sweep(matrix, table, split, on_record)?;
    let Some(optimal_index) = argmax_feasible(&sweep.records) else {
        return Err(match unseen_test_value(table, split) {
            Some((attribute, value)) => Error::Infeasible { attribute, value },
            None => Error::NoFeasibleThreshold(
                "every candidate assigns probability zero to some test row".into(),
            ),
        });
    };
    let first = sweep
        .records
        .iter()
        .position(SweepRecord::is_feasible)
        .expect("an optimum exists");
    let boundary_is_sharp = sweep.records[first..].iter().all(SweepRecord::is_feasible);
    if !boundary_is_sharp {
        log::warn!("feasibility is not monotone in the threshold for this split");
    }
    let optimal_threshold = sweep.records[optimal_index].threshold;
    let rows = if options.refit_on_all_rows {
        let mut all = split.train_indices.clone();
        all.extend(&split.test_indices);
        all.sort_unstable();
        all
    } else {
        split.train_indices.clone()
    };
    let mut optimal_model = fit_final(matrix, table, optimal_threshold, &rows)?;
    optimal_model.metadata.seed = Some(split.seed);
    optimal_model.metadata.train_fraction = Some(split.train_fraction);
    optimal_model.metadata.refit_on_all_rows = options.refit_on_all_rows;
    Ok(SelectionResult {
        optimal_threshold,
        optimal_index,
        feasibility_boundary: sweep.records[first].threshold,
        boundary_is_sharp,
        optimal_model,
        sweep,
        split: split.clone(),
    })
}

/// Outcome of one split in a multi-split run.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub seed: u64,
    pub result: std::result::Result<SelectionResult, String>,
}

#[derive(Debug, Clone)]
pub struct MultiSplitResult {
    pub outcomes: Vec<SplitOutcome>,
    pub median_threshold: f64,
    /// Model at the median threshold, fit on all rows.
    pub model: CliqueTreeModel,
}

impl MultiSplitResult {
    pub fn optima(&self) -> Vec<f64> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok().map(|r| r.optimal_threshold))
            .collect()
    }
}

/// Median with the even-count mean convention.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Run `select` once per seed; failed splits are kept but excluded from the median.
pub fn multi_split_select(
    matrix: &NmiMatrix,
    table: &CategoricalTable,
    train_fraction: f64,
    seeds: &[u64],
    options: SelectOptions,
) -> Result<MultiSplitResult> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one split seed is required".into()));
    }
    let mut outcomes = Vec::with_capacity(seeds.len());
    let mut last_error = None;
    for &seed in seeds {
        let split = DataSplit::new(table.row_count(), train_fraction, seed)?;
        let result = match select(matrix, table, &split, options, |_| {}) {
            Ok(r) => Ok(r),
            Err(e @ (Error::Infeasible { .. } | Error::NoFeasibleThreshold(_))) => {
                let msg = e.to_string();
                last_error = Some(e);
                Err(msg)
            }
            Err(e) => return Err(e),
        };
        outcomes.push(SplitOutcome { seed, result });
    }
    let optima: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|r| r.optimal_threshold))
        .collect();
    let Some(median_threshold) = median(&optima) else {
        return Err(last_error.expect("every split failed"));
    };
    let mut model = fit_final(matrix, table, median_threshold, &table.all_rows())?;
    model.metadata.train_fraction = Some(train_fraction);
    model.metadata.refit_on_all_rows = true;
    Ok(MultiSplitResult {
        outcomes,
        median_threshold,
        model,
    })
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "threshold",
    "log_p_train",
    "log_p_test",
    "log_p_total",
    "entropy",
    "avg_prob_train",
    "avg_prob_test",
    "n_cliques",
    "max_clique_size",
    "avg_prob_all",
];

/// Comment lines and column header of a sweep TSV.
pub fn sweep_tsv_header(comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(&SWEEP_COLUMNS.join("\t"));
    out.push('\n');
    out
}

/// One sweep TSV line; `-inf` marks probability zero.
pub fn sweep_tsv_row(r: &SweepRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        r.threshold,
        r.log_p_train,
        r.log_p_test,
        r.log_p_total,
        r.entropy,
        r.avg_prob_train,
        r.avg_prob_test,
        r.n_cliques,
        r.max_clique_size,
        r.avg_prob_all,
    )
}

pub fn sweep_tsv(sweep: &ThresholdSweep, comments: &[String]) -> String {
    let mut out = sweep_tsv_header(comments);
    for r in &sweep.records {
        out.push_str(&sweep_tsv_row(r));
    }
    out
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when fewer
/// than two points or either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::information::nmi_matrix;

    fn table(cards: &[usize], rows: &[Vec<u32>]) -> CategoricalTable {
        let cols = (0..cards.len())
            .map(|a| rows.iter().map(|r| r[a]).collect())
            .collect();
        CategoricalTable::from_codes(cards, cols).unwrap()
    }

    #[test]
    fn candidates_two_values() {
        let m = NmiMatrix::from_pairs(3, &[(0, 1, 0.2), (0, 2, 0.6), (1, 2, 0.2)]).unwrap();
        let c = candidate_thresholds(&m);
        assert_eq!(c.len(), 3);
        assert_eq!(c[0], 0.0);
        assert!((c[1] - 0.4).abs() < 1e-15);
        assert_eq!(c[2], 0.6 + EPSILON);
        let edges: Vec<usize> = c
            .iter()
            .map(|&x| DependencyGraph::prune(&m, x).edge_count())
            .collect();
        assert_eq!(edges, vec![3, 1, 0]);
    }

    #[test]
    fn candidates_all_equal() {
        let m = NmiMatrix::from_pairs(3, &[(0, 1, 0.3), (0, 2, 0.3), (1, 2, 0.3)]).unwrap();
        assert_eq!(candidate_thresholds(&m), vec![0.0, 0.3 + EPSILON]);
        assert_eq!(candidate_thresholds(&NmiMatrix::from_pairs(1, &[]).unwrap()), vec![0.0]);
    }

    #[test]
    fn zero_threshold_rejects_unseen_test_row() {
        // Test row (1, 0) never occurs in train although both values do.
        let rows: Vec<Vec<u32>> = vec![
            vec![0, 0],
            vec![0, 1],
            vec![1, 1],
            vec![0, 0],
            vec![1, 1],
            vec![1, 0],
        ];
        let t = table(&[2, 2], &rows);
        let split = DataSplit {
            train_indices: vec![0, 1, 2, 3, 4],
            test_indices: vec![5],
            seed: 0,
            train_fraction: 5.0 / 6.0,
        };
        let m = nmi_matrix(&t, &t.all_rows()).unwrap();
        let r = evaluate_threshold(0.0, &m, &t, &split).unwrap();
        assert_eq!(r.log_p_total, f64::NEG_INFINITY);
        let nb = evaluate_threshold(1.0 + EPSILON, &m, &t, &split).unwrap();
        assert!(nb.log_p_total.is_finite());
        assert_eq!(nb.n_cliques, 2);
        let sel = select(&m, &t, &split, SelectOptions::default(), |_| {}).unwrap();
        assert_eq!(Some(&sel.optimal_threshold), candidate_thresholds(&m).last());
        assert!(sel.boundary_is_sharp);
    }

    #[test]
    fn test_only_value_is_named() {
        let rows: Vec<Vec<u32>> = vec![vec![0, 0], vec![1, 0], vec![0, 0], vec![1, 1]];
        let t = table(&[2, 2], &rows);
        let split = DataSplit {
            train_indices: vec![0, 1, 2],
            test_indices: vec![3],
            seed: 0,
            train_fraction: 0.75,
        };
        let m = nmi_matrix(&t, &t.all_rows()).unwrap();
        match select(&m, &t, &split, SelectOptions::default(), |_| {}) {
            Err(Error::Infeasible { attribute, value }) => {
                assert_eq!((attribute.as_str(), value.as_str()), ("a1", "1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tie_goes_to_smaller_threshold() {
        let rec = |threshold, log_p_total| SweepRecord {
            threshold,
            log_p_train: 0.0,
            log_p_test: 0.0,
            log_p_total,
            entropy: 0.0,
            avg_prob_train: 0.0,
            avg_prob_test: 0.0,
            avg_prob_all: 0.0,
            n_cliques: 1,
            max_clique_size: 1,
        };
        let records = vec![
            rec(0.0, f64::NEG_INFINITY),
            rec(0.1, -5.0),
            rec(0.2, -3.0),
            rec(0.3, -3.0),
            rec(0.4, -4.0),
        ];
        assert_eq!(argmax_feasible(&records), Some(2));
        assert_eq!(argmax_feasible(&records[..1]), None);
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.9486832980505138).abs() < 1e-12);
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn sweep_tsv_format() {
        let s = ThresholdSweep {
            candidates: vec![0.0],
            records: vec![SweepRecord {
                threshold: 0.0,
                log_p_train: -1.5,
                log_p_test: f64::NEG_INFINITY,
                log_p_total: f64::NEG_INFINITY,
                entropy: 0.25,
                avg_prob_train: 0.5,
                avg_prob_test: 0.0,
                avg_prob_all: 0.25,
                n_cliques: 1,
                max_clique_size: 2,
            }],
        };
        let text = sweep_tsv(&s, &["seed=1".into()]);
        assert_eq!(
            text,
            "# seed=1\nthreshold\tlog_p_train\tlog_p_test\tlog_p_total\tentropy\tavg_prob_train\tavg_prob_test\tn_cliques\tmax_clique_size\tavg_prob_all\n0\t-1.5\t-inf\t-inf\t0.25\t0.5\t0\t1\t2\t0.25\n"
        );
    }
}
