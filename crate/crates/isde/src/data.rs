//! Shared domain types: datasets, feature subsets, partitions and the
//! estimation/scoring split.
//!
//! Feature indices are 0-based everywhere in the library; reports translate to
//! 1-based labels at the printing boundary. All types are immutable after
//! construction, so they can be shared freely across threads.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An N x d table of finite feature values, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n_rows: usize,
    n_features: usize,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from row-major values. Rejects empty shapes and
    /// non-finite entries.
    pub fn new(values: Vec<f64>, n_rows: usize, n_features: usize) -> Result<Self> {
        if n_rows == 0 || n_features == 0 {
            return Err(Error::EmptyDataset(format!(
                "shape {n_rows} x {n_features}"
            )));
        }
        if values.len() != n_rows * n_features {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for shape {} x {}, got {}",
                n_rows * n_features,
                n_rows,
                n_features,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: bad / n_features + 1,
                column: bad % n_features + 1,
            });
        }
        Ok(Dataset {
            values,
            n_rows,
            n_features,
            feature_names: None,
        })
    }

    /// Builds a dataset from a list of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        if n_rows == 0 {
            return Err(Error::EmptyDataset("no rows".into()));
        }
        let n_features = rows[0].len();
        let mut values = Vec::with_capacity(n_rows * n_features);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_features {
                return Err(Error::InvalidArgument(format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    row.len(),
                    n_features
                )));
            }
            values.extend_from_slice(row);
        }
        Dataset::new(values, n_rows, n_features)
    }

    /// Attaches feature names (must be `d` distinct strings).
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features {
            return Err(Error::InvalidArgument(format!(
                "{} names for {} features",
                names.len(),
                self.n_features
            )));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate feature name {a:?}"
                )));
            }
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    /// Loads a comma-separated file of decimal floats, with an optional single
    /// header row. NaN and infinities are rejected.
    pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Self> {
        let path = path.as_ref();
        let path_str = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path_str.clone(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .flexible(false)
            .from_reader(file);

        let names: Option<Vec<String>> = if has_header {
            let headers = reader.headers().map_err(|e| Error::Csv {
                path: path_str.clone(),
                message: e.to_string(),
            })?;
            Some(headers.iter().map(|s| s.trim().to_string()).collect())
        } else {
            None
        };

        let mut values = Vec::new();
        let mut n_features = names.as_ref().map(|n| n.len());
        let mut n_rows = 0usize;
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Csv {
                path: path_str.clone(),
                message: e.to_string(),
            })?;
            let row = i + 1;
            match n_features {
                None => n_features = Some(record.len()),
                Some(d) if record.len() != d => {
                    return Err(Error::Csv {
                        path: path_str,
                        message: format!("row {} has {} fields, expected {}", row, record.len(), d),
                    })
                }
                _ => {}
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::BadCell {
                    row,
                    column: j + 1,
                    value: field.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { row, column: j + 1 });
                }
                values.push(v);
            }
            n_rows += 1;
        }
        if n_rows == 0 {
            return Err(Error::EmptyDataset(path_str));
        }
        let ds = Dataset::new(values, n_rows, n_features.unwrap())?;
        match names {
            Some(n) => ds.with_names(n),
            None => Ok(ds),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Row-major backing storage.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row `i` as a slice of length `d`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Iterator over all rows in order.
    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + DoubleEndedIterator {
        self.values.chunks_exact(self.n_features)
    }

    /// Iterator over column `j`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(j).step_by(self.n_features).copied()
    }

    /// Maps every column through `(x - min) / (max - min)` so that values lie
    /// in `[0, 1]`. Constant columns map to all zeros. The map is exactly
    /// idempotent: non-constant columns keep min 0 and max 1.
    pub fn rescale_unit(&self) -> Dataset {
        let d = self.n_features;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in self.rows() {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.rows() {
            for (j, &v) in row.iter().enumerate() {
                let range = hi[j] - lo[j];
                values.push(if range == 0.0 {
                    0.0
                } else {
                    (v - lo[j]) / range
                });
            }
        }
        Dataset {
            values,
            n_rows: self.n_rows,
            n_features: d,
            feature_names: self.feature_names.clone(),
        }
    }

    /// Splits the rows into two disjoint datasets of `spec.m` and `spec.n`
    /// rows. A ChaCha8-seeded Fisher-Yates shuffle of the row indices decides
    /// membership: the first `m` shuffled rows form `W`, the next `n` form
    /// `Z`. Identical seeds give identical splits.
    pub fn split(&self, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
        spec.validate(self.n_rows)?;
        let mut order: Vec<usize> = (0..self.n_rows).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        order.shuffle(&mut rng);
        let take = |idx: &[usize]| -> Dataset {
            let mut values = Vec::with_capacity(idx.len() * self.n_features);
            for &i in idx {
                values.extend_from_slice(self.row(i));
            }
            Dataset {
                values,
                n_rows: idx.len(),
                n_features: self.n_features,
                feature_names: self.feature_names.clone(),
            }
        };
        let w = take(&order[..spec.m]);
        let z = take(&order[spec.m..spec.m + spec.n]);
        Ok((w, z))
    }

    /// Column projection onto `subset`, in the order of its indices.
    pub fn restrict(&self, subset: &FeatureSubset) -> Result<Dataset> {
        for &j in subset.indices() {
            if j >= self.n_features {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    d: self.n_features,
                });
            }
        }
        let p = subset.len();
        let mut values = Vec::with_capacity(self.n_rows * p);
        for row in self.rows() {
            for &j in subset.indices() {
                values.push(row[j]);
            }
        }
        let feature_names = self
            .feature_names
            .as_ref()
            .map(|names| subset.indices().iter().map(|&j| names[j].clone()).collect());
        Ok(Dataset {
            values,
            n_rows: self.n_rows,
            n_features: p,
            feature_names,
        })
    }

    /// Stacks the columns of `blocks` side by side. All blocks must share the
    /// same row count.
    pub fn concat_columns(blocks: &[Dataset]) -> Result<Dataset> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::EmptyDataset("no blocks to concatenate".into()))?;
        let n_rows = first.n_rows;
        for b in blocks {
            if b.n_rows != n_rows {
                return Err(Error::InvalidArgument(format!(
                    "row count mismatch in concatenation: {} vs {}",
                    b.n_rows, n_rows
                )));
            }
        }
        let n_features = blocks.iter().map(|b| b.n_features).sum();
        let mut values = Vec::with_capacity(n_rows * n_features);
        for i in 0..n_rows {
            for b in blocks {
                values.extend_from_slice(b.row(i));
            }
        }
        Dataset::new(values, n_rows, n_features)
    }

    /// Keeps rows `range.start..range.end`.
    pub fn row_range(&self, start: usize, end: usize) -> Result<Dataset> {
        if start >= end || end > self.n_rows {
            return Err(Error::InvalidArgument(format!(
                "bad row range {start}..{end} for {} rows",
                self.n_rows
            )));
        }
        Ok(Dataset {
            values: self.values[start * self.n_features..end * self.n_features].to_vec(),
            n_rows: end - start,
            n_features: self.n_features,
            feature_names: self.feature_names.clone(),
        })
    }
}

/// A nonempty set of feature indices, stored strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FeatureSubset(Vec<usize>);

impl FeatureSubset {
    /// Builds a subset from arbitrary-order indices; duplicates are rejected.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty feature subset".into()));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "duplicate index in feature subset {indices:?}"
            )));
        }
        Ok(FeatureSubset(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn min_index(&self) -> usize {
        self.0[0]
    }

    pub fn max_index(&self) -> usize {
        *self.0.last().unwrap()
    }

    /// Bitmask over `u64`; only valid for indices below 64.
    pub fn mask(&self) -> u64 {
        self.0.iter().fold(0u64, |m, &i| m | (1 << i))
    }

    /// Inverse of [`FeatureSubset::mask`].
    pub fn from_mask(mut mask: u64) -> Result<Self> {
        let mut indices = Vec::with_capacity(mask.count_ones() as usize);
        while mask != 0 {
            let i = mask.trailing_zeros() as usize;
            indices.push(i);
            mask &= mask - 1;
        }
        FeatureSubset::new(indices)
    }
}

impl fmt::Display for FeatureSubset {
    /// Dash-joined indices, e.g. `0-2-5` — the key format of score tables.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, idx) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "-")?;
            }
            write!(f, "{idx}")?;
        }
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for FeatureSubset {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        FeatureSubset::new(v)
    }
}

impl From<FeatureSubset> for Vec<usize> {
    fn from(s: FeatureSubset) -> Vec<usize> {
        s.0
    }
}

/// A partition of `{0, .., d-1}` into disjoint feature subsets, held in
/// canonical form: each block sorted, blocks ordered by smallest element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct Partition {
    blocks: Vec<FeatureSubset>,
}

impl Partition {
    /// Canonicalizes and validates: blocks must be pairwise disjoint and
    /// jointly cover `{0, .., max}` with no gaps.
    pub fn new(mut blocks: Vec<FeatureSubset>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("partition with no blocks".into()));
        }
        blocks.sort_by_key(|b| b.min_index());
        let d: usize = blocks.iter().map(FeatureSubset::len).sum();
        let mut seen = vec![false; d.max(blocks.iter().map(|b| b.max_index() + 1).max().unwrap())];
        for b in &blocks {
            for &i in b.indices() {
                if i >= seen.len() || seen[i] {
                    return Err(Error::InvalidArgument(format!(
                        "blocks are not a partition: index {i} repeated or out of range"
                    )));
                }
                seen[i] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidArgument(
                "blocks do not cover 0..d contiguously".into(),
            ));
        }
        Ok(Partition { blocks })
    }

    /// The all-singletons partition of `{0, .., d-1}`.
    pub fn singletons(d: usize) -> Result<Self> {
        Partition::new((0..d).map(|i| FeatureSubset(vec![i])).collect())
    }

    /// The single-block partition of `{0, .., d-1}`.
    pub fn single_block(d: usize) -> Result<Self> {
        Partition::new(vec![FeatureSubset::new((0..d).collect())?])
    }

    pub fn blocks(&self) -> &[FeatureSubset] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Size of the partitioned ground set.
    pub fn ground_size(&self) -> usize {
        self.blocks.iter().map(FeatureSubset::len).sum()
    }

    pub fn max_block_size(&self) -> usize {
        self.blocks.iter().map(FeatureSubset::len).max().unwrap()
    }

    /// True when every block of `truth` is contained in some block of `self`
    /// (the recovery notion used for structure experiments).
    pub fn admits(&self, truth: &Partition) -> bool {
        truth.blocks.iter().all(|t| {
            self.blocks
                .iter()
                .any(|b| t.indices().iter().all(|&i| b.contains(i)))
        })
    }
}

impl fmt::Display for Partition {
    /// 1-based block notation, e.g. `{1,2}{3}`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            write!(f, "{{")?;
            for (i, idx) in b.indices().iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{}", idx + 1)?;
            }
            write!(f, "}}")?;
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<usize>>> for Partition {
    type Error = Error;
    fn try_from(v: Vec<Vec<usize>>) -> Result<Self> {
        Partition::new(
            v.into_iter()
                .map(FeatureSubset::new)
                .collect::<Result<_>>()?,
        )
    }
}

impl From<Partition> for Vec<Vec<usize>> {
    fn from(p: Partition) -> Vec<Vec<usize>> {
        p.blocks.into_iter().map(Into::into).collect()
    }
}

/// How to split a dataset into the estimation sample `W` (m rows) and the
/// scoring sample `Z` (n rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(m: usize, n: usize, seed: u64) -> Self {
        SplitSpec { m, n, seed }
    }

    /// Half/half split, as used by the synthetic experiments.
    pub fn halves(n_rows: usize, seed: u64) -> Self {
        let m = n_rows / 2;
        SplitSpec {
            m,
            n: n_rows - m,
            seed,
        }
    }

    pub fn validate(&self, n_rows: usize) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidArgument(
                "split requires m >= 1 and n >= 1".into(),
            ));
        }
        if self.m + self.n > n_rows {
            return Err(Error::SplitTooLarge {
                m: self.m,
                n: self.n,
                n_rows,
            });
        }
        Ok(())
    }
}
