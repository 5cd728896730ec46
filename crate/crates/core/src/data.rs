//! Dataset ingestion, splitting, standardization and cost vectors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::rng::{self, Purpose};

/// Tabular classification data held row-major.
///
/// `row_ids` are the row positions in the originally loaded file. They survive
/// splitting and subsetting and key the per-example random streams, so an
/// example's sampled episodes do not depend on where it sits in a split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
    feature_names: Vec<String>,
    class_names: Vec<String>,
    row_ids: Vec<usize>,
}

impl Dataset {
    /// Build a dataset from row-major features; row ids default to `0..len`.
    pub fn new(features: Vec<f64>, labels: Vec<usize>, n_features: usize, n_classes: usize) -> Result<Self> {
        let len = labels.len();
        let feature_names = (0..n_features).map(|i| format!("x{i}")).collect();
        let class_names = (0..n_classes).map(|k| k.to_string()).collect();
        Self::from_parts(
            features,
            labels,
            n_features,
            n_classes,
            feature_names,
            class_names,
            (0..len).collect(),
        )
    }

    pub fn from_parts(
        features: Vec<f64>,
        labels: Vec<usize>,
        n_features: usize,
        n_classes: usize,
        feature_names: Vec<String>,
        class_names: Vec<String>,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidDataset(m));
        if n_features == 0 {
            return bad("at least one feature is required".into());
        }
        if n_classes < 2 {
            return Err(Error::TooFewClasses(n_classes));
        }
        if labels.is_empty() {
            return bad("dataset has no rows".into());
        }
        if features.len() != labels.len() * n_features {
            return bad(format!(
                "{} feature values for {} rows of {} features",
                features.len(),
                labels.len(),
                n_features
            ));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return bad(format!(
                "non-finite value at row {}, feature {}",
                pos / n_features,
                pos % n_features
            ));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return bad(format!("label {y} outside [0, {n_classes})"));
        }
        if feature_names.len() != n_features || class_names.len() != n_classes || row_ids.len() != labels.len() {
            return bad("metadata lengths do not match the data".into());
        }
        Ok(Dataset {
            features,
            labels,
            n_features,
            n_classes,
            feature_names,
            class_names,
            row_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row_id(&self, i: usize) -> usize {
        self.row_ids[i]
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Original label tokens, indexed by encoded class id.
    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Rows at `indices` (positions in this dataset), keeping metadata and row ids.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_features: self.n_features,
            n_classes: self.n_classes,
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    fn with_features(&self, features: Vec<f64>) -> Dataset {
        Dataset {
            features,
            ..self.clone()
        }
    }

    /// Write the dataset as a headered CSV whose label column holds the original tokens.
    pub fn write_csv(&self, path: &Path, label_name: &str) -> Result<()> {
        let mut out = String::new();
        for name in &self.feature_names {
            out.push_str(name);
            out.push(',');
        }
        out.push_str(label_name);
        out.push('\n');
        for i in 0..self.len() {
            for v in self.row(i) {
                write!(out, "{v},").unwrap();
            }
            out.push_str(&self.class_names[self.labels[i]]);
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }
}

/// Which CSV column holds the class label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// A bare integer is a zero-based column index; anything else is a header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

impl std::fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelColumn::Name(s) => f.write_str(s),
            LabelColumn::Index(i) => write!(f, "{i}"),
        }
    }
}

/// Load a headered, comma-separated file.
///
/// Labels are re-encoded `0..Y` in order of first appearance; the original
/// tokens are kept in [`Dataset::class_names`]. Empty or non-numeric feature
/// cells are rejected with the offending row (1-based, header excluded) and
/// column name.
pub fn load_csv(path: &Path, label: &LabelColumn) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = match label {
        LabelColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingLabelColumn(name.clone()))?,
        LabelColumn::Index(i) if *i < headers.len() => *i,
        LabelColumn::Index(i) => return Err(Error::MissingLabelColumn(i.to_string())),
    };
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let n = feature_names.len();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(Error::Cell {
                row,
                column: "*".into(),
                message: format!("expected {} cells, found {}", headers.len(), record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if j == label_idx {
                if cell.is_empty() {
                    return Err(Error::Cell {
                        row,
                        column: headers[j].clone(),
                        message: "missing label".into(),
                    });
                }
                let id = match class_names.iter().position(|c| c == cell) {
                    Some(id) => id,
                    None => {
                        class_names.push(cell.to_string());
                        class_names.len() - 1
                    }
                };
                labels.push(id);
                continue;
            }
            let value = if cell.is_empty() {
                Err("missing value".to_string())
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    Ok(_) => Err(format!("non-finite value `{cell}`")),
                    Err(_) => Err(format!("cannot parse `{cell}` as a number")),
                }
            };
            features.push(value.map_err(|message| Error::Cell {
                row,
                column: headers[j].clone(),
                message,
            })?);
        }
    }
    if n == 0 {
        return Err(Error::InvalidDataset("no feature columns".into()));
    }
    if class_names.len() < 2 {
        return Err(Error::TooFewClasses(class_names.len()));
    }
    if labels.len() < 3 {
        return Err(Error::InvalidDataset(format!(
            "{} rows; at least 3 are required",
            labels.len()
        )));
    }
    let len = labels.len();
    let n_classes = class_names.len();
    Dataset::from_parts(
        features,
        labels,
        n,
        n_classes,
        feature_names,
        class_names,
        (0..len).collect(),
    )
}

/// Seed and proportions for the train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl SplitSpec {
    pub fn thirds(seed: u64) -> Self {
        SplitSpec {
            seed,
            ratios: [1.0 / 3.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidSplit("ratios must be positive".into()));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Split sizes for `len` rows; rows lost to flooring go to the last split.
    pub fn sizes(&self, len: usize) -> [usize; 3] {
        let first = (len as f64 * self.ratios[0] + 1e-9).floor() as usize;
        let second = (len as f64 * self.ratios[1] + 1e-9).floor() as usize;
        let second = second.min(len - first.min(len));
        let first = first.min(len);
        [first, second, len - first - second]
    }
}

/// Shuffle row positions with a seeded stream and cut them into train, validation and test.
pub fn split_thirds(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let sizes = spec.sizes(d.len());
    if sizes.contains(&0) {
        return Err(Error::InvalidSplit(format!(
            "{} rows give split sizes {:?}; every split must be non-empty",
            d.len(),
            sizes
        )));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut rng::stream(spec.seed, Purpose::Split, &[]));
    let (a, rest) = order.split_at(sizes[0]);
    let (b, c) = rest.split_at(sizes[1]);
    Ok((d.subset(a), d.subset(b), d.subset(c)))
}

/// Split membership as CSV text: `split,row_id` lines in split order.
pub fn split_manifest(train: &Dataset, valid: &Dataset, test: &Dataset) -> String {
    let mut out = String::from("split,row_id\n");
    for (name, d) in [("train", train), ("valid", valid), ("test", test)] {
        for id in d.row_ids() {
            writeln!(out, "{name},{id}").unwrap();
        }
    }
    out
}

/// Per-feature z-score parameters taken from the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of each column. Constant columns get std 0.
    pub fn fit(train: &Dataset) -> Self {
        let n = train.n_features();
        let len = train.len() as f64;
        let mut mean = vec![0.0; n];
        let mut std = vec![0.0; n];
        for j in 0..n {
            let col = (0..train.len()).map(|i| train.row(i)[j]);
            let (lo, hi) = col
                .clone()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let m = col.clone().sum::<f64>() / len;
            mean[j] = m;
            std[j] = if lo == hi {
                0.0
            } else {
                (col.map(|v| (v - m) * (v - m)).sum::<f64>() / len).sqrt()
            };
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        let n = d.n_features();
        if n != self.mean.len() {
            return Err(Error::InvalidDimensions(format!(
                "standardizer has {} features, dataset has {n}",
                self.mean.len()
            )));
        }
        let features = d
            .features()
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let j = k % n;
                if self.std[j] == 0.0 {
                    0.0
                } else {
                    (v - self.mean[j]) / self.std[j]
                }
            })
            .collect();
        Ok(d.with_features(features))
    }

    /// Text record: a header line, then `index mean std` per feature.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# standardization v1: index mean std\n");
        for (j, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            writeln!(out, "{j} {m} {s}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parsed = match parts.as_slice() {
                [j, m, s] => j
                    .parse::<usize>()
                    .ok()
                    .zip(m.parse::<f64>().ok())
                    .zip(s.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some(((j, m), s)) if j == mean.len() => {
                    mean.push(m);
                    std.push(s);
                }
                _ => return Err(Error::format(path, format!("bad standardization line `{line}`"))),
            }
        }
        Ok(Standardizer { mean, std })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?, path)
    }
}

/// Standardize `train` and every dataset in `others` with the training statistics.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>, Standardizer)> {
    let stats = Standardizer::fit(train);
    let train = stats.apply(train)?;
    let others = others.iter().map(|d| stats.apply(d)).collect::<Result<Vec<_>>>()?;
    Ok((train, others, stats))
}

/// Nonnegative per-feature acquisition costs.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVector {
    costs: Vec<f64>,
    total: f64,
}

impl CostVector {
    pub fn new(costs: Vec<f64>) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::InvalidCosts("empty cost vector".into()));
        }
        if let Some((i, c)) = costs.iter().enumerate().find(|(_, c)| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidCosts(format!(
                "cost {c} of feature {i} is not a nonnegative number"
            )));
        }
        let total = costs.iter().sum::<f64>();
        if total <= 0.0 {
            return Err(Error::InvalidCosts("total cost must be positive".into()));
        }
        Ok(CostVector { costs, total })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.costs
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// True when every feature has the same cost.
    pub fn is_uniform(&self) -> bool {
        self.costs.iter().all(|&c| c == self.costs[0])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostKind {
    Uniform,
    Linear,
    File(PathBuf),
}

impl FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(CostKind::Uniform),
            "linear" => Ok(CostKind::Linear),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(CostKind::File(PathBuf::from(p))),
                _ => Err(Error::InvalidConfig(format!(
                    "unknown cost kind `{s}` (expected uniform, linear or file:PATH)"
                ))),
            },
        }
    }
}

impl std::fmt::Display for CostKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostKind::Uniform => f.write_str("uniform"),
            CostKind::Linear => f.write_str("linear"),
            CostKind::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Uniform costs are all 1; linear costs are `(i + 1) / n` so the last feature costs 1;
/// a cost file holds one value per line.
pub fn make_costs(kind: &CostKind, n: usize) -> Result<CostVector> {
    match kind {
        CostKind::Uniform => CostVector::new(vec![1.0; n]),
        CostKind::Linear => CostVector::new((0..n).map(|i| (i + 1) as f64 / n as f64).collect()),
        CostKind::File(path) => {
            let text = read_to_string(path)?;
            let costs = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .enumerate()
                .map(|(i, l)| {
                    l.parse::<f64>()
                        .map_err(|_| Error::format(path, format!("line {}: `{l}` is not a number", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            if costs.len() != n {
                return Err(Error::InvalidCosts(format!(
                    "{} holds {} costs but the dataset has {n} features",
                    path.display(),
                    costs.len()
                )));
            }
            CostVector::new(costs)
        }
    }
}
