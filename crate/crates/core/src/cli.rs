//! Command-line driver.
//!
//! Every artifact carries the tool version, the SHA-256 of its input file and
//! an echo of the effective configuration. Exit codes: 0 success, 2 user
//! error, 3 infeasible selection, 4 internal invariant violation.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{self, PercentileTables};
use crate::dataset::{read_records, CategoricalTable, CsvOptions, DataSplit, Encoder, RawRecords};
use crate::error::{Error, Result};
use crate::information::{nmi_matrix, NmiMatrix};
use crate::learn::{self, SelectOptions, SweepRecord};
use crate::model::{CliqueTreeModel, DEFAULT_ENUMERATION_CAP};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "cliquetree", version, about = "Clique-tree density models for categorical data")]
pub struct Cli {
    /// Worker threads (default: all available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep NMI thresholds, select the best, and write sweep.tsv,
    /// selection.json and model.json.
    Sweep(SweepArgs),
    /// Like `sweep` but writes only model.json.
    Fit(SweepArgs),
    /// Score rows under a saved model; writes anomalies.tsv and anomalies.jsonl.
    Score(ScoreArgs),
    /// List the value-tuple clusters of one clique or attribute subset.
    Clusters(ClustersArgs),
    /// Fraction of cliques on which two rows share a tuple.
    Similarity(SimilarityArgs),
    /// Write dependency_graph.dot and clique_tree.dot for a saved model.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CsvArgs {
    /// The first line holds column names (otherwise columns are named a0, a1, ...).
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Token for missing values; empty fields are read as this token.
    #[arg(long, default_value = "?")]
    pub missing_token: String,
}

impl CsvArgs {
    fn options(&self) -> Result<CsvOptions> {
        if !self.delimiter.is_ascii() {
            return Err(Error::InvalidArgument("delimiter must be a single ASCII character".into()));
        }
        Ok(CsvOptions {
            delimiter: self.delimiter as u8,
            header_row: self.header,
            missing_token: self.missing_token.clone(),
        })
    }

    fn echo(&self, config: &mut BTreeMap<String, String>) {
        config.insert("header".into(), self.header.to_string());
        config.insert("delimiter".into(), self.delimiter.to_string());
        config.insert("missing_token".into(), self.missing_token.clone());
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Categorical CSV input.
    pub input: PathBuf,
    #[command(flatten)]
    pub csv: CsvArgs,
    /// Comma-separated 0-based source columns to leave out (the class label by default).
    #[arg(long, default_value = "0", conflicts_with = "all_columns")]
    pub exclude_columns: String,
    /// Model every column.
    #[arg(long)]
    pub all_columns: bool,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Number of random splits; split i uses seed + i and the median optimum is reported.
    #[arg(long, default_value_t = 1)]
    pub n_splits: usize,
    /// Skip selection and fit this threshold directly.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Compute NMI from the training rows only (default: all rows).
    #[arg(long)]
    pub nmi_train_only: bool,
    /// Keep the training-row tables for the final model instead of refitting on all rows.
    #[arg(long)]
    pub no_refit: bool,
    /// Add-alpha smoothing used when scoring with the saved model.
    #[arg(long, default_value_t = 0.0)]
    pub laplace: f64,
    /// Verify normalization by enumeration when the assignment space is at most this large.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    pub enumeration_cap: u128,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Rows to score, laid out like the training file.
    pub input: PathBuf,
    #[command(flatten)]
    pub csv: CsvArgs,
    /// Override the model's smoothing.
    #[arg(long)]
    pub laplace: Option<f64>,
    /// Reference rows for percentiles (default: the model's fitting rows).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ClustersArgs {
    #[arg(long)]
    pub model: PathBuf,
    pub input: PathBuf,
    #[command(flatten)]
    pub csv: CsvArgs,
    /// Clique id from the model.
    #[arg(long, conflicts_with = "attrs", required_unless_present = "attrs")]
    pub clique: Option<usize>,
    /// Comma-separated attribute names or source column numbers.
    #[arg(long)]
    pub attrs: Option<String>,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub model: PathBuf,
    pub input: PathBuf,
    #[command(flatten)]
    pub csv: CsvArgs,
    /// 0-based data row indices.
    #[arg(long)]
    pub row_a: usize,
    #[arg(long)]
    pub row_b: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Parse `args` and run. Help and version requests return `Ok`.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            Ok(())
        }
        Err(e) => Err(Error::InvalidArgument(e.to_string())),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Sweep(a) => cmd_sweep(&a, true),
        Command::Fit(a) => cmd_sweep(&a, false),
        Command::Score(a) => cmd_score(&a),
        Command::Clusters(a) => cmd_clusters(&a),
        Command::Similarity(a) => cmd_similarity(&a),
        Command::Export(a) => cmd_export(&a),
    })
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("{what}: `{s}` is not a column number")))
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Provenance block shared by every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub input_sha256: String,
    pub config: BTreeMap<String, String>,
}

impl RunMetadata {
    fn new(input: &Path, config: BTreeMap<String, String>) -> Result<Self> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            input_sha256: sha256_file(input)?,
            config,
        })
    }

    fn comments(&self) -> Vec<String> {
        let mut out = vec![
            format!("tool_version={}", self.tool_version),
            format!("input_sha256={}", self.input_sha256),
        ];
        out.extend(self.config.iter().map(|(k, v)| format!("config.{k}={v}")));
        out
    }

    fn stamp(&self, model: &mut CliqueTreeModel) {
        model.metadata.tool_version = self.tool_version.clone();
        model.metadata.input_sha256 = Some(self.input_sha256.clone());
        model.metadata.config.extend(self.config.clone());
    }
}

/// Load the training file and drop excluded columns.
pub fn load_training_table(args: &SweepArgs) -> Result<CategoricalTable> {
    let records = read_records(&args.input, &args.csv.options()?)?;
    let full = CategoricalTable::from_raw(records.header, &records.rows)?;
    if args.all_columns {
        return Ok(full);
    }
    let excluded = parse_usize_list(&args.exclude_columns, "--exclude-columns")?;
    if let Some(&c) = excluded.iter().find(|&&c| c >= full.n_attrs()) {
        return Err(Error::InvalidArgument(format!(
            "excluded column {c} is out of range (file has {} columns)",
            full.n_attrs()
        )));
    }
    let keep: Vec<usize> = (0..full.n_attrs()).filter(|c| !excluded.contains(c)).collect();
    if keep.is_empty() {
        return Err(Error::InvalidArgument("every column is excluded".into()));
    }
    full.select_columns(&keep)
}

#[derive(Debug, Serialize)]
struct SplitSummary {
    seed: u64,
    optimal_threshold: Option<f64>,
    feasibility_boundary: Option<f64>,
    boundary_is_sharp: Option<bool>,
    log_p_total: Option<f64>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct ModelSummary {
    threshold: Option<f64>,
    n_cliques: usize,
    clique_sizes: Vec<usize>,
    max_clique_size: usize,
    n_tree_edges: usize,
    entropy: f64,
    fit_row_count: u64,
    /// `Σ P` over all assignments, when the space is within the enumeration cap.
    enumerated_total_probability: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SelectionReport {
    metadata: RunMetadata,
    mode: &'static str,
    row_count: usize,
    n_attrs: usize,
    n_candidates: Option<usize>,
    optimal_threshold: Option<f64>,
    feasibility_boundary: Option<f64>,
    boundary_is_sharp: Option<bool>,
    optimal_record: Option<SweepRecord>,
    splits: Vec<SplitSummary>,
    median_threshold: Option<f64>,
    threshold_spread: Option<(f64, f64)>,
    model: ModelSummary,
}

fn summarize(model: &CliqueTreeModel, cap: u128) -> Result<ModelSummary> {
    let enumerated_total_probability = if model.assignment_count() <= cap {
        let mut total = 0.0;
        for item in model.enumerate_distribution(cap)? {
            total += item?.1;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Internal(format!("model mass sums to {total}, not 1")));
        }
        Some(total)
    } else {
        None
    };
    Ok(ModelSummary {
        threshold: model.threshold(),
        n_cliques: model.cliques().len(),
        clique_sizes: model.cliques().iter().map(|c| c.members.len()).collect(),
        max_clique_size: model.tree().max_clique_size(),
        n_tree_edges: model.tree().edges().len(),
        entropy: model.entropy(),
        fit_row_count: model.fit_row_count(),
        enumerated_total_probability,
    })
}

fn sweep_config(args: &SweepArgs) -> BTreeMap<String, String> {
    let mut c = BTreeMap::new();
    args.csv.echo(&mut c);
    c.insert(
        "columns".into(),
        if args.all_columns {
            "all".into()
        } else {
            format!("exclude:{}", args.exclude_columns)
        },
    );
    c.insert("train_fraction".into(), args.train_fraction.to_string());
    c.insert("seed".into(), args.seed.to_string());
    c.insert("n_splits".into(), args.n_splits.to_string());
    c.insert(
        "threshold".into(),
        args.threshold.map_or("select".into(), |t| t.to_string()),
    );
    c.insert(
        "nmi_rows".into(),
        if args.nmi_train_only { "train" } else { "all" }.into(),
    );
    c.insert("refit_on_all_rows".into(), (!args.no_refit).to_string());
    c.insert("laplace_alpha".into(), args.laplace.to_string());
    c.insert("enumeration_cap".into(), args.enumeration_cap.to_string());
    c
}

fn cmd_sweep(args: &SweepArgs, write_sweep: bool) -> Result<()> {
    if args.n_splits == 0 {
        return Err(Error::InvalidArgument("--n-splits must be at least 1".into()));
    }
    if args.n_splits > 1 && (args.nmi_train_only || args.no_refit) {
        return Err(Error::InvalidArgument(
            "--nmi-train-only and --no-refit require --n-splits 1".into(),
        ));
    }
    let table = load_training_table(args)?;
    let meta = RunMetadata::new(&args.input, sweep_config(args))?;
    create_dir(&args.out)?;
    let options = SelectOptions {
        refit_on_all_rows: !args.no_refit,
    };
    let split = DataSplit::new(table.row_count(), args.train_fraction, args.seed)?;
    let matrix: NmiMatrix = if args.nmi_train_only {
        nmi_matrix(&table, &split.train_indices)?
    } else {
        nmi_matrix(&table, &table.all_rows())?
    };

    let mut report = SelectionReport {
        metadata: meta.clone(),
        mode: "single_split",
        row_count: table.row_count(),
        n_attrs: table.n_attrs(),
        n_candidates: None,
        optimal_threshold: None,
        feasibility_boundary: None,
        boundary_is_sharp: None,
        optimal_record: None,
        splits: Vec::new(),
        median_threshold: None,
        threshold_spread: None,
        model: ModelSummary {
            threshold: None,
            n_cliques: 0,
            clique_sizes: Vec::new(),
            max_clique_size: 0,
            n_tree_edges: 0,
            entropy: 0.0,
            fit_row_count: 0,
            enumerated_total_probability: None,
        },
    };

    let mut model = if let Some(x) = args.threshold {
        report.mode = "fixed_threshold";
        let rows = if args.no_refit {
            split.train_indices.clone()
        } else {
            table.all_rows()
        };
        let mut m = learn::fit_final(&matrix, &table, x, &rows)?;
        m.metadata.refit_on_all_rows = !args.no_refit;
        report.optimal_threshold = Some(x);
        m
    } else if args.n_splits == 1 {
        let comments = meta.comments();
        let sweep_path = args.out.join("sweep.tsv");
        let mut writer = None;
        if write_sweep {
            let file = fs::File::create(&sweep_path).map_err(|e| Error::io(&sweep_path, e))?;
            let mut w = std::io::BufWriter::new(file);
            w.write_all(learn::sweep_tsv_header(&comments).as_bytes()).map_err(|e| Error::io(&sweep_path, e))?;
            writer = Some(w);
        }
        let mut io_error = None;
        let result = learn::select(&matrix, &table, &split, options, |r| {
            log::info!(
                "threshold {:.6}: log P = {}, {} cliques",
                r.threshold,
                r.log_p_total,
                r.n_cliques
            );
            if let Some(w) = writer.as_mut() {
                let row = learn::sweep_tsv_row(r);
                if let Err(e) = w.write_all(row.as_bytes()).and_then(|_| w.flush()) {
                    io_error.get_or_insert(e);
                }
            }
        });
        if let Some(e) = io_error {
            return Err(Error::io(&sweep_path, e));
        }
        let result = result?;
        report.n_candidates = Some(result.sweep.candidates.len());
        report.optimal_threshold = Some(result.optimal_threshold);
        report.feasibility_boundary = Some(result.feasibility_boundary);
        report.boundary_is_sharp = Some(result.boundary_is_sharp);
        report.optimal_record = Some(result.sweep.records[result.optimal_index].clone());
        report.splits.push(SplitSummary {
            seed: args.seed,
            optimal_threshold: Some(result.optimal_threshold),
            feasibility_boundary: Some(result.feasibility_boundary),
            boundary_is_sharp: Some(result.boundary_is_sharp),
            log_p_total: Some(result.sweep.records[result.optimal_index].log_p_total),
            error: None,
        });
        result.optimal_model
    } else {
        report.mode = "multi_split";
        let seeds: Vec<u64> = (0..args.n_splits as u64)
            .map(|i| args.seed.wrapping_add(i))
            .collect();
        let multi = learn::multi_split_select(&matrix, &table, args.train_fraction, &seeds, options)?;
        for o in &multi.outcomes {
            match &o.result {
                Ok(r) => {
                    if write_sweep {
                        let path = args.out.join(format!("sweep_seed_{}.tsv", o.seed));
                        let mut comments = meta.comments();
                        comments.push(format!("split_seed={}", o.seed));
                        write_file(&path, &learn::sweep_tsv(&r.sweep, &comments))?;
                    }
                    report.splits.push(SplitSummary {
                        seed: o.seed,
                        optimal_threshold: Some(r.optimal_threshold),
                        feasibility_boundary: Some(r.feasibility_boundary),
                        boundary_is_sharp: Some(r.boundary_is_sharp),
                        log_p_total: Some(r.sweep.records[r.optimal_index].log_p_total),
                        error: None,
                    });
                    report.n_candidates = Some(r.sweep.candidates.len());
                }
                Err(msg) => report.splits.push(SplitSummary {
                    seed: o.seed,
                    optimal_threshold: None,
                    feasibility_boundary: None,
                    boundary_is_sharp: None,
                    log_p_total: None,
                    error: Some(msg.clone()),
                }),
            }
        }
        let optima = multi.optima();
        report.median_threshold = Some(multi.median_threshold);
        report.optimal_threshold = Some(multi.median_threshold);
        report.threshold_spread = Some((
            optima.iter().copied().fold(f64::INFINITY, f64::min),
            optima.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ));
        multi.model
    };

    model.metadata.seed = Some(args.seed);
    model.metadata.train_fraction = Some(args.train_fraction);
    meta.stamp(&mut model);
    let mut model = model.with_laplace(args.laplace)?;
    if args.laplace > 0.0 {
        // Reference percentiles must be computed under the same smoothing.
        let rows = if model.metadata.refit_on_all_rows {
            table.all_rows()
        } else {
            split.train_indices.clone()
        };
        model = model.with_reference(&table, &rows)?;
    }
    report.model = summarize(&model, args.enumeration_cap)?;
    model.save(&args.out.join("model.json"))?;
    if write_sweep {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        write_file(&args.out.join("selection.json"), &text)?;
        if let Some(x) = report.optimal_threshold {
            println!("optimal threshold: {x}");
        }
    }
    Ok(())
}

/// Raw records projected onto the model's source columns.
fn load_model_rows(model: &CliqueTreeModel, input: &Path, csv: &CsvArgs) -> Result<RawRecords> {
    let mut records = read_records(input, &csv.options()?)?;
    let cols = &model.metadata.source_columns;
    if cols.len() != model.n_attrs() {
        return Err(Error::Schema("source column list does not match the attributes".into()));
    }
    let width = records.header.len();
    if let Some(&c) = cols.iter().find(|&&c| c >= width) {
        return Err(Error::InvalidArgument(format!(
            "model reads source column {c} but the input has {width} columns"
        )));
    }
    records.header = cols.iter().map(|&c| records.header[c].clone()).collect();
    for row in &mut records.rows {
        *row = cols.iter().map(|&c| std::mem::take(&mut row[c])).collect();
    }
    Ok(records)
}

/// Encode rows that fit the model domains; others are skipped with a warning.
fn encode_rows(model: &CliqueTreeModel, records: &RawRecords) -> Result<(CategoricalTable, Vec<usize>)> {
    let encoder = Encoder::new(model.domains());
    let mut columns = vec![Vec::new(); model.n_attrs()];
    let mut kept = Vec::new();
    for (i, row) in records.rows.iter().enumerate() {
        match encoder.encode(row) {
            Ok(codes) => {
                for (col, code) in columns.iter_mut().zip(codes) {
                    col.push(code);
                }
                kept.push(i);
            }
            Err(u) => log::warn!(
                "row {i}: value `{}` of `{}` is not in the model domain; skipped",
                u.value,
                model.domains()[u.attribute].attribute_name
            ),
        }
    }
    let table = CategoricalTable::from_parts(
        model.domains().to_vec(),
        columns,
        model.metadata.source_columns.clone(),
    )?;
    Ok((table, kept))
}

fn model_config(model_path: &Path, csv: &CsvArgs) -> BTreeMap<String, String> {
    let mut c = BTreeMap::new();
    csv.echo(&mut c);
    c.insert("model".into(), model_path.display().to_string());
    c
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let mut model = CliqueTreeModel::load(&args.model)?;
    let fit_alpha = model.laplace_alpha();
    if let Some(alpha) = args.laplace {
        model = model.with_laplace(alpha)?;
    }
    let records = load_model_rows(&model, &args.input, &args.csv)?;
    let mut config = model_config(&args.model, &args.csv);
    config.insert("laplace_alpha".into(), model.laplace_alpha().to_string());
    let percentiles = match (&args.reference, PercentileTables::from_model(&model)) {
        (Some(path), _) => {
            config.insert("reference".into(), path.display().to_string());
            let refs = load_model_rows(&model, path, &args.csv)?;
            let (table, _) = encode_rows(&model, &refs)?;
            analysis::build_percentiles(&model, &table, &table.all_rows())?
        }
        (None, Some(stored)) if model.laplace_alpha() == fit_alpha => {
            config.insert("reference".into(), "model".into());
            stored?
        }
        _ => {
            log::warn!("no matching stored reference; percentiles are relative to the scored rows");
            config.insert("reference".into(), "input".into());
            let (table, _) = encode_rows(&model, &records)?;
            analysis::build_percentiles(&model, &table, &table.all_rows())?
        }
    };
    let meta = RunMetadata::new(&args.input, config)?;
    let mut reports = analysis::score_raw(&model, &percentiles, &records.rows)?;
    analysis::sort_reports(&mut reports);
    create_dir(&args.out)?;
    write_file(
        &args.out.join("anomalies.tsv"),
        &analysis::anomaly_tsv(&model, &reports, &meta.comments()),
    )?;
    let mut jsonl = serde_json::to_string(&meta)?;
    jsonl.push('\n');
    jsonl.push_str(&analysis::anomaly_jsonl(&reports)?);
    write_file(&args.out.join("anomalies.jsonl"), &jsonl)?;
    Ok(())
}

/// Resolve attribute selectors: names first, then source column numbers.
pub fn resolve_attrs(model: &CliqueTreeModel, selector: &str) -> Result<Vec<usize>> {
    let names = model.attribute_names();
    let mut out = Vec::new();
    for token in selector.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let by_name = names.iter().position(|n| n == token);
        let by_column = token
            .parse::<usize>()
            .ok()
            .and_then(|c| model.metadata.source_columns.iter().position(|&s| s == c));
        match by_name.or(by_column) {
            Some(a) if out.contains(&a) => {
                return Err(Error::InvalidArgument(format!("attribute `{token}` is listed twice")))
            }
            Some(a) => out.push(a),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "attribute `{token}` is not modeled"
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("--attrs is empty".into()));
    }
    Ok(out)
}

fn cmd_clusters(args: &ClustersArgs) -> Result<()> {
    let model = CliqueTreeModel::load(&args.model)?;
    let records = load_model_rows(&model, &args.input, &args.csv)?;
    let (table, kept) = encode_rows(&model, &records)?;
    let mut config = model_config(&args.model, &args.csv);
    let mut index = match (&args.attrs, args.clique) {
        (Some(selector), _) => {
            config.insert("attrs".into(), selector.clone());
            let attrs = resolve_attrs(&model, selector)?;
            analysis::cluster_by_attrs(&table, &attrs, &table.all_rows())?
        }
        (None, Some(id)) => {
            config.insert("clique".into(), id.to_string());
            analysis::cluster_by_clique(&model, &table, id)?
        }
        (None, None) => return Err(Error::InvalidArgument("give --clique or --attrs".into())),
    };
    for c in &mut index.clusters {
        for r in &mut c.rows {
            *r = kept[*r];
        }
    }
    let possible: u128 = index
        .attrs
        .iter()
        .map(|&a| model.domains()[a].cardinality() as u128)
        .product();
    let meta = RunMetadata::new(&args.input, config)?;
    let mut text = String::new();
    for c in meta.comments() {
        text.push_str(&format!("# {c}\n"));
    }
    text.push_str(&format!(
        "# observed_clusters={} possible_combinations={} rows={}\n",
        index.clusters.len(),
        possible,
        index.row_count()
    ));
    text.push_str(&index.to_tsv(&table));
    match &args.out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_similarity(args: &SimilarityArgs) -> Result<()> {
    let model = CliqueTreeModel::load(&args.model)?;
    let records = load_model_rows(&model, &args.input, &args.csv)?;
    let encoder = Encoder::new(model.domains());
    let row = |i: usize| -> Result<Vec<u32>> {
        let raw = records.rows.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("row {i} is out of range ({} rows)", records.rows.len()))
        })?;
        encoder.encode(raw).map_err(|u| {
            Error::InvalidArgument(format!("row {i}: value `{}` is not in the model domain", u.value))
        })
    };
    let s = analysis::similarity_codes(&model, &row(args.row_a)?, &row(args.row_b)?);
    println!("{s}");
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let model = CliqueTreeModel::load(&args.model)?;
    let names = model.attribute_names();
    create_dir(&args.out)?;
    if let Some(g) = model.graph() {
        write_file(&args.out.join("dependency_graph.dot"), &g.to_dot(&names))?;
    }
    write_file(&args.out.join("clique_tree.dot"), &model.tree().to_dot(&names))?;
    Ok(())
}
