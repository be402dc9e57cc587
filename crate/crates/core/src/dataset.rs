//! Scored test sets and the stratification variable derived from them.
//!
//! A scored dataset is the classifier's view of the test set: one record per
//! instance with the raw score and the predicted label. Simulation files also
//! carry the true label; that column is sealed inside the records and only the
//! [`oracle`](crate::oracle) module can read it.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

pub const HEADER_WITH_TRUTH: [&str; 4] = ["id", "score", "predicted", "truth"];
pub const HEADER_NO_TRUTH: [&str; 3] = ["id", "score", "predicted"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header {found:?}; expected `id,score,predicted,truth` or `id,score,predicted`")]
    Header { found: Vec<String> },
    #[error("row {row}: expected {expected} columns, found {found}")]
    ColumnCount { row: usize, expected: usize, found: usize },
    #[error("row {row}: column `{column}` value {value:?} is not a valid {kind}")]
    Parse {
        row: usize,
        column: &'static str,
        value: String,
        kind: &'static str,
    },
    #[error("row {row}: probabilistic score {score} outside [0, 1]")]
    ScoreRange { row: usize, score: f64 },
    #[error("row {row}: duplicate id {id}")]
    DuplicateId { row: usize, id: u64 },
    #[error("empty dataset")]
    Empty,
    #[error("records disagree on truth availability (row {row})")]
    MixedTruth { row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    /// Score is a probability. Binary files store p(positive class);
    /// multiclass files store the probability of the predicted class.
    Probabilistic,
    /// Score is a signed margin whose sign gives the predicted label.
    Margin,
}

impl FromStr for ScoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "probabilistic" | "prob" | "probability" => Ok(ScoreKind::Probabilistic),
            "margin" => Ok(ScoreKind::Margin),
            other => Err(format!("unknown score kind `{other}` (expected prob or margin)")),
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreKind::Probabilistic => f.write_str("probabilistic"),
            ScoreKind::Margin => f.write_str("margin"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub id: u64,
    pub raw_score: f64,
    pub predicted: i64,
    truth: Option<i64>,
}

impl InstanceRecord {
    pub fn new(id: u64, raw_score: f64, predicted: i64, truth: Option<i64>) -> Self {
        Self {
            id,
            raw_score,
            predicted,
            truth,
        }
    }

    pub fn has_truth(&self) -> bool {
        self.truth.is_some()
    }

    pub(crate) fn truth(&self) -> Option<i64> {
        self.truth
    }
}

/// An immutable scored test set. Row order defines the instance index used
/// everywhere else in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDataset {
    records: Vec<InstanceRecord>,
    kind: ScoreKind,
    has_truth: bool,
}

impl ScoredDataset {
    pub fn new(records: Vec<InstanceRecord>, kind: ScoreKind) -> Result<Self, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::Empty);
        }
        let has_truth = records[0].has_truth();
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if r.has_truth() != has_truth {
                return Err(DatasetError::MixedTruth { row });
            }
            if !r.raw_score.is_finite() {
                return Err(DatasetError::Parse {
                    row,
                    column: "score",
                    value: r.raw_score.to_string(),
                    kind: "finite number",
                });
            }
            if kind == ScoreKind::Probabilistic && !(0.0..=1.0).contains(&r.raw_score) {
                return Err(DatasetError::ScoreRange {
                    row,
                    score: r.raw_score,
                });
            }
            if !seen.insert(r.id) {
                return Err(DatasetError::DuplicateId { row, id: r.id });
            }
        }
        Ok(Self {
            records,
            kind,
            has_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn has_truth(&self) -> bool {
        self.has_truth
    }

    pub fn records(&self) -> &[InstanceRecord] {
        &self.records
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.id)
    }

    /// Copy of the dataset with the truth column removed.
    pub fn without_truth(&self) -> Self {
        Self {
            records: self
                .records
                .iter()
                .map(|r| InstanceRecord { truth: None, ..r.clone() })
                .collect(),
            kind: self.kind,
            has_truth: false,
        }
    }

    /// Computes the stratification variable z for every instance.
    ///
    /// Margin scores map to |score|. Probabilistic scores map to the
    /// probability of the predicted class: for binary label sets ({0,1} or
    /// {-1,+1}) the stored p(positive) becomes max(p, 1 - p); for any other
    /// label set the score is assumed to already be that probability.
    pub fn derive_z(&self) -> StratVariable {
        let values = match self.kind {
            ScoreKind::Margin => self.records.iter().map(|r| r.raw_score.abs()).collect(),
            ScoreKind::Probabilistic => {
                let binary = self.has_binary_labels();
                self.records
                    .iter()
                    .map(|r| {
                        if binary {
                            r.raw_score.max(1.0 - r.raw_score)
                        } else {
                            r.raw_score
                        }
                    })
                    .collect()
            }
        };
        StratVariable(values)
    }

    fn has_binary_labels(&self) -> bool {
        let zero_one = self.records.iter().all(|r| matches!(r.predicted, 0 | 1));
        let signed = self.records.iter().all(|r| matches!(r.predicted, -1 | 1));
        zero_one || signed
    }

    pub fn from_csv_reader<R: Read>(reader: R, kind: ScoreKind) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);

        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let with_truth = if header == HEADER_WITH_TRUTH {
            true
        } else if header == HEADER_NO_TRUTH {
            false
        } else {
            return Err(DatasetError::Header { found: header });
        };
        let expected = header.len();

        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row_no = i + 1;
            let row = row?;
            if row.len() != expected {
                return Err(DatasetError::ColumnCount {
                    row: row_no,
                    expected,
                    found: row.len(),
                });
            }
            let id = parse_field::<u64>(&row[0], row_no, "id", "unsigned integer")?;
            let score = parse_field::<f64>(&row[1], row_no, "score", "number")?;
            if !score.is_finite() {
                return Err(DatasetError::Parse {
                    row: row_no,
                    column: "score",
                    value: row[1].to_owned(),
                    kind: "finite number",
                });
            }
            if kind == ScoreKind::Probabilistic && !(0.0..=1.0).contains(&score) {
                return Err(DatasetError::ScoreRange { row: row_no, score });
            }
            let predicted = parse_field::<i64>(&row[2], row_no, "predicted", "integer label")?;
            let truth = if with_truth {
                Some(parse_field::<i64>(&row[3], row_no, "truth", "integer label")?)
            } else {
                None
            };
            records.push(InstanceRecord::new(id, score, predicted, truth));
        }
        Self::new(records, kind)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(writer);
        if self.has_truth {
            wtr.write_record(HEADER_WITH_TRUTH)?;
        } else {
            wtr.write_record(HEADER_NO_TRUTH)?;
        }
        for r in &self.records {
            let mut fields = vec![r.id.to_string(), r.raw_score.to_string(), r.predicted.to_string()];
            if let Some(t) = r.truth {
                fields.push(t.to_string());
            }
            wtr.write_record(&fields)?;
        }
        wtr.flush().map_err(|source| DatasetError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.to_csv_writer(std::io::BufWriter::new(file))
    }
}

fn parse_field<T: FromStr>(
    raw: &str,
    row: usize,
    column: &'static str,
    kind: &'static str,
) -> Result<T, DatasetError> {
    raw.parse().map_err(|_| DatasetError::Parse {
        row,
        column,
        value: raw.to_owned(),
        kind,
    })
}

pub fn load_scored_csv(path: impl AsRef<Path>, kind: ScoreKind) -> Result<ScoredDataset, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScoredDataset::from_csv_reader(std::io::BufReader::new(file), kind)
}

/// The per-instance stratification variable z, aligned with dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct StratVariable(Vec<f64>);

impl StratVariable {
    /// Wraps precomputed z values. Values must be finite and nonnegative.
    pub fn new(values: Vec<f64>) -> Option<Self> {
        if values.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Some(Self(values))
        } else {
            None
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn distinct_count(&self) -> usize {
        let mut sorted = self.0.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        sorted.len()
    }
}
