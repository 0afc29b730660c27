//! Categorical table ingestion, dense value encoding and seeded train/test splits.
//!
//! Every attribute value is encoded to a dense `u32` code in first-appearance
//! order, so codes are stable for a given input file. Missing values are an
//! ordinary category (`?` in the UCI files).

use std::collections::HashMap;
use std::path::Path;

use rand_core::{RngCore, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The value dictionary of one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDomain {
    pub attribute_index: usize,
    pub attribute_name: String,
    /// Distinct raw values; a value's position is its code.
    pub values: Vec<String>,
}

impl AttributeDomain {
    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn decode(&self, code: u32) -> Option<&str> {
        self.values.get(code as usize).map(String::as_str)
    }

    /// Linear lookup; build an [`Encoder`] for bulk work.
    pub fn encode(&self, raw: &str) -> Option<u32> {
        self.values.iter().position(|v| v == raw).map(|p| p as u32)
    }
}

/// CSV parsing options.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub header_row: bool,
    /// Empty fields are read as this token; the token itself is an ordinary value.
    pub missing_token: String,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            header_row: false,
            missing_token: "?".to_string(),
        }
    }
}

/// Raw string records of a CSV file, before encoding.
#[derive(Debug, Clone)]
pub struct RawRecords {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Immutable column-oriented table of encoded categorical values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalTable {
    domains: Vec<AttributeDomain>,
    columns: Vec<Vec<u32>>,
    row_count: usize,
    /// Column position of each attribute in the file it was read from.
    source_columns: Vec<usize>,
}

impl CategoricalTable {
    /// Encode raw string rows. Values are coded in first-appearance order.
    pub fn from_raw(names: Vec<String>, rows: &[Vec<String>]) -> Result<Self> {
        let width = names.len();
        if rows.is_empty() || width == 0 {
            return Err(Error::EmptyInput("no data rows".into()));
        }
        let mut lookups: Vec<HashMap<&str, u32>> = vec![HashMap::new(); width];
        let mut domains: Vec<AttributeDomain> = names
            .into_iter()
            .enumerate()
            .map(|(i, name)| AttributeDomain {
                attribute_index: i,
                attribute_name: name,
                values: Vec::new(),
            })
            .collect();
        let mut columns = vec![Vec::with_capacity(rows.len()); width];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Parse {
                    row: r + 1,
                    message: format!("expected {} fields, found {}", width, row.len()),
                });
            }
            for (a, raw) in row.iter().enumerate() {
                let domain = &mut domains[a];
                let code = *lookups[a].entry(raw.as_str()).or_insert_with(|| {
                    domain.values.push(raw.clone());
                    (domain.values.len() - 1) as u32
                });
                columns[a].push(code);
            }
        }
        Ok(Self {
            domains,
            columns,
            row_count: rows.len(),
            source_columns: (0..width).collect(),
        })
    }

    /// Build directly from codes. Used for synthetic data; domain values are
    /// the decimal code strings `"0".."k-1"`.
    pub fn from_codes(cardinalities: &[usize], columns: Vec<Vec<u32>>) -> Result<Self> {
        if cardinalities.len() != columns.len() {
            return Err(Error::InvalidArgument(
                "one cardinality per column required".into(),
            ));
        }
        let row_count = columns.first().map_or(0, Vec::len);
        if row_count == 0 {
            return Err(Error::EmptyInput("no data rows".into()));
        }
        for (a, (col, &k)) in columns.iter().zip(cardinalities).enumerate() {
            if col.len() != row_count {
                return Err(Error::InvalidArgument(format!(
                    "column {a} has {} rows, expected {row_count}",
                    col.len()
                )));
            }
            if k == 0 || col.iter().any(|&c| c as usize >= k) {
                return Err(Error::InvalidArgument(format!(
                    "column {a} has a code outside 0..{k}"
                )));
            }
        }
        let domains = cardinalities
            .iter()
            .enumerate()
            .map(|(i, &k)| AttributeDomain {
                attribute_index: i,
                attribute_name: format!("a{i}"),
                values: (0..k).map(|v| v.to_string()).collect(),
            })
            .collect();
        Ok(Self {
            domains,
            columns,
            row_count,
            source_columns: (0..cardinalities.len()).collect(),
        })
    }

    /// Assemble a table from pre-encoded columns over existing domains.
    pub fn from_parts(
        domains: Vec<AttributeDomain>,
        columns: Vec<Vec<u32>>,
        source_columns: Vec<usize>,
    ) -> Result<Self> {
        if domains.len() != columns.len() || domains.len() != source_columns.len() {
            return Err(Error::InvalidArgument("mismatched table parts".into()));
        }
        let row_count = columns.first().map_or(0, Vec::len);
        for (d, col) in domains.iter().zip(&columns) {
            if col.len() != row_count || col.iter().any(|&c| c as usize >= d.cardinality()) {
                return Err(Error::InvalidArgument(format!(
                    "column `{}` is inconsistent with its domain",
                    d.attribute_name
                )));
            }
        }
        Ok(Self {
            domains,
            columns,
            row_count,
            source_columns,
        })
    }

    pub fn domains(&self) -> &[AttributeDomain] {
        &self.domains
    }

    pub fn n_attrs(&self) -> usize {
        self.domains.len()
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column(&self, attr: usize) -> &[u32] {
        &self.columns[attr]
    }

    pub fn code(&self, row: usize, attr: usize) -> u32 {
        self.columns[attr][row]
    }

    pub fn source_columns(&self) -> &[usize] {
        &self.source_columns
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.domains.iter().map(AttributeDomain::cardinality).collect()
    }

    /// Full code assignment of one row.
    pub fn row(&self, row: usize) -> Vec<u32> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    /// Raw string values of one row.
    pub fn decode_row(&self, row: usize) -> Vec<&str> {
        self.domains
            .iter()
            .zip(&self.columns)
            .map(|(d, c)| d.values[c[row] as usize].as_str())
            .collect()
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.row_count).collect()
    }

    /// Project onto `indices`, in the given order. Domains are copied verbatim
    /// (values unused by the projection are kept) so codes stay stable.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n_attrs()];
        for &i in indices {
            if i >= self.n_attrs() {
                return Err(Error::InvalidArgument(format!(
                    "column index {i} out of range (table has {} columns)",
                    self.n_attrs()
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("duplicate column index {i}")));
            }
        }
        let domains = indices
            .iter()
            .enumerate()
            .map(|(pos, &i)| AttributeDomain {
                attribute_index: pos,
                ..self.domains[i].clone()
            })
            .collect();
        Ok(Self {
            domains,
            columns: indices.iter().map(|&i| self.columns[i].clone()).collect(),
            row_count: self.row_count,
            source_columns: indices.iter().map(|&i| self.source_columns[i]).collect(),
        })
    }

    /// Rows in `rows` order, as a new table over the same domains.
    pub fn take_rows(&self, rows: &[usize]) -> Self {
        Self {
            domains: self.domains.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            row_count: rows.len(),
            source_columns: self.source_columns.clone(),
        }
    }

    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<DataSplit> {
        DataSplit::new(self.row_count, train_fraction, seed)
    }
}

/// Read a delimited file into raw string records. Ragged rows are rejected
/// with their 1-based line number.
pub fn read_records(path: &Path, options: &CsvOptions) -> Result<RawRecords> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let fields: Vec<String> = record
            .iter()
            .map(|f| {
                let f = f.trim();
                if f.is_empty() {
                    options.missing_token.clone()
                } else {
                    f.to_string()
                }
            })
            .collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::Parse {
                    row: line,
                    message: format!("expected {w} fields, found {}", fields.len()),
                })
            }
            Some(_) => {}
        }
        if options.header_row && header.is_none() {
            header = Some(fields);
        } else {
            rows.push(fields);
        }
    }
    let width = width.ok_or_else(|| Error::EmptyInput(path.display().to_string()))?;
    if rows.is_empty() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }
    let header = header.unwrap_or_else(|| (0..width).map(|i| format!("a{i}")).collect());
    Ok(RawRecords { header, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        },
    }
}

/// Load a categorical CSV. Headerless files name their columns `a0`, `a1`, ...
pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<CategoricalTable> {
    let records = read_records(path, options)?;
    CategoricalTable::from_raw(records.header, &records.rows)
}

/// A raw value that is not in the attribute's domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unencodable {
    pub attribute: usize,
    pub value: String,
}

/// Bulk raw-to-code lookup over a fixed list of domains.
pub struct Encoder<'a> {
    domains: &'a [AttributeDomain],
    lookups: Vec<HashMap<&'a str, u32>>,
}

impl<'a> Encoder<'a> {
    pub fn new(domains: &'a [AttributeDomain]) -> Self {
        let lookups = domains
            .iter()
            .map(|d| {
                d.values
                    .iter()
                    .enumerate()
                    .map(|(c, v)| (v.as_str(), c as u32))
                    .collect()
            })
            .collect();
        Self { domains, lookups }
    }

    pub fn domains(&self) -> &'a [AttributeDomain] {
        self.domains
    }

    /// Encode one row of raw values, one per domain.
    pub fn encode<S: AsRef<str>>(&self, raw: &[S]) -> std::result::Result<Vec<u32>, Unencodable> {
        raw.iter()
            .zip(&self.lookups)
            .enumerate()
            .map(|(a, (v, lookup))| {
                lookup.get(v.as_ref()).copied().ok_or_else(|| Unencodable {
                    attribute: a,
                    value: v.as_ref().to_string(),
                })
            })
            .collect()
    }
}

/// Deterministic train/test partition of `0..row_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub train_fraction: f64,
}

impl DataSplit {
    /// Fisher–Yates shuffle of `0..row_count` driven by PCG-XSL-RR 128/64
    /// (`Pcg64`) seeded through `SeedableRng::seed_from_u64`; the first
    /// `round(train_fraction * row_count)` shuffled indices form the training set.
    pub fn new(row_count: usize, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {train_fraction} must lie in (0, 1)"
            )));
        }
        if row_count < 2 {
            return Err(Error::InvalidArgument(
                "a split needs at least two rows".into(),
            ));
        }
        let n_train = (train_fraction * row_count as f64).round() as usize;
        if n_train == 0 || n_train == row_count {
            return Err(Error::InvalidArgument(format!(
                "train fraction {train_fraction} leaves an empty train or test set for {row_count} rows"
            )));
        }
        let mut order: Vec<usize> = (0..row_count).collect();
        let mut rng = Pcg64::seed_from_u64(seed);
        for i in (1..row_count).rev() {
            let j = uniform_below(&mut rng, i as u64 + 1) as usize;
            order.swap(i, j);
        }
        let mut train_indices = order[..n_train].to_vec();
        let mut test_indices = order[n_train..].to_vec();
        train_indices.sort_unstable();
        test_indices.sort_unstable();
        Ok(Self {
            train_indices,
            test_indices,
            seed,
            train_fraction,
        })
    }
}

/// Unbiased draw from `0..bound` by rejection on the top of the 64-bit range.
fn uniform_below(rng: &mut impl RngCore, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_row() {
        let f = write_tmp("a,b\n");
        let t = load_csv(f.path(), &CsvOptions::default()).unwrap();
        assert_eq!(t.row_count(), 1);
        assert_eq!(t.cardinalities(), vec![1, 1]);
    }

    #[test]
    fn first_appearance_encoding() {
        let f = write_tmp("x\nx\nx\ny\n");
        let t = load_csv(f.path(), &CsvOptions::default()).unwrap();
        assert_eq!(t.domains()[0].values, vec!["x", "y"]);
        assert_eq!(t.column(0), &[0, 0, 0, 1]);
    }

    #[test]
    fn ragged_rows_report_line() {
        let f = write_tmp("a,b\nc,d\ne\n");
        match load_csv(f.path(), &CsvOptions::default()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file() {
        let f = write_tmp("");
        assert!(matches!(
            load_csv(f.path(), &CsvOptions::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn header_and_missing_token() {
        let f = write_tmp("colour;size\nred;?\n;big\n");
        let opts = CsvOptions {
            delimiter: b';',
            header_row: true,
            ..CsvOptions::default()
        };
        let t = load_csv(f.path(), &opts).unwrap();
        assert_eq!(t.domains()[0].attribute_name, "colour");
        assert_eq!(t.domains()[0].values, vec!["red", "?"]);
        assert_eq!(t.domains()[1].values, vec!["?", "big"]);
    }

    #[test]
    fn select_columns_rules() {
        let f = write_tmp("a,b,c\nd,e,f\n");
        let t = load_csv(f.path(), &CsvOptions::default()).unwrap();
        assert_eq!(t.select_columns(&[0, 1, 2]).unwrap(), t);
        let p = t.select_columns(&[2, 0]).unwrap();
        assert_eq!(p.source_columns(), &[2, 0]);
        assert_eq!(p.domains()[0].attribute_index, 0);
        assert_eq!(p.domains()[0].attribute_name, "a2");
        assert!(t.select_columns(&[1, 1]).is_err());
        assert!(t.select_columns(&[3]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = DataSplit::new(10, 0.8, 7).unwrap();
        assert_eq!((s.train_indices.len(), s.test_indices.len()), (8, 2));
        assert_eq!(s, DataSplit::new(10, 0.8, 7).unwrap());
        let s = DataSplit::new(8124, 0.8, 1).unwrap();
        assert_eq!((s.train_indices.len(), s.test_indices.len()), (6499, 1625));
        assert!(DataSplit::new(10, 0.01, 1).is_err());
        assert!(DataSplit::new(10, 1.0, 1).is_err());
        assert!(DataSplit::new(1, 0.5, 1).is_err());
    }

    #[test]
    fn split_is_pinned() {
        // Frozen output guards the generator and shuffle against silent drift.
        let s = DataSplit::new(10, 0.5, 42).unwrap();
        assert_eq!(s.train_indices, vec![0, 1, 6, 8, 9]);
        assert_eq!(s.test_indices, vec![2, 3, 4, 5, 7]);
        assert_ne!(
            DataSplit::new(1000, 0.5, 1).unwrap().train_indices,
            DataSplit::new(1000, 0.5, 2).unwrap().train_indices
        );
    }

    #[test]
    fn encoder_rejects_unknown() {
        let t = CategoricalTable::from_raw(
            vec!["x".into(), "y".into()],
            &[vec!["a".into(), "b".into()]],
        )
        .unwrap();
        let enc = Encoder::new(t.domains());
        assert_eq!(enc.encode(&["a", "b"]).unwrap(), vec![0, 0]);
        assert_eq!(
            enc.encode(&["a", "z"]).unwrap_err(),
            Unencodable {
                attribute: 1,
                value: "z".into()
            }
        );
    }

    proptest::proptest! {
        #[test]
        fn partition_property(n in 2usize..400, f in 0.01f64..0.99, seed: u64) {
            if let Ok(s) = DataSplit::new(n, f, seed) {
                let mut all: Vec<usize> = s.train_indices.iter().chain(&s.test_indices).copied().collect();
                all.sort_unstable();
                proptest::prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                proptest::prop_assert_eq!(s.train_indices.len(), (f * n as f64).round() as usize);
            }
        }

        #[test]
        fn decode_round_trip(rows in proptest::collection::vec(proptest::collection::vec("[a-d?]{1,2}", 3), 1..30)) {
            let t = CategoricalTable::from_raw(vec!["p".into(), "q".into(), "r".into()], &rows).unwrap();
            for (i, row) in rows.iter().enumerate() {
                let decoded: Vec<String> = t.decode_row(i).into_iter().map(String::from).collect();
                proptest::prop_assert_eq!(&decoded, row);
            }
        }
    }
}
