//! The subset score table: for every feature subset `S` with `|S| <= k`, a
//! selected bandwidth and the held-out score
//! `l_n(S) = mean over Z of log f_S(z_S)`, where `f_S` was fit on `W`.
//!
//! This table is the whole interface between marginal estimation and
//! partition selection: a partition's objective is just the sum of its
//! blocks' entries, so nothing is ever refit while searching over partitions.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{count_subsets, enumerate_subsets};
use crate::data::{Dataset, FeatureSubset, Partition, SplitSpec};
use crate::gaussian::{empirical_covariance, CenteredGaussian, Covariance};
use crate::kde::{select_bandwidth_cv, BandwidthGrid, KdeModel};
use crate::{Error, Result};

/// Bandwidth recorded for estimators that have none (Gaussian blocks). JSON
/// cannot carry NaN, so an impossible bandwidth stands in.
pub const SENTINEL_BANDWIDTH: f64 = 0.0;

/// Which marginal estimator produced a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Kde,
    Gaussian,
}

/// Selected bandwidth and held-out score for one subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub bandwidth: f64,
    pub score: f64,
}

/// The map `S -> (bandwidth, l_n(S))` over `Set_d^k`, plus the split that
/// produced it. May be partial while being built or extended; solvers require
/// completeness and check it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetScoreTable {
    d: usize,
    k: usize,
    split: SplitSpec,
    estimator: EstimatorKind,
    entries: BTreeMap<FeatureSubset, ScoreEntry>,
}

impl SubsetScoreTable {
    /// An empty table to be filled by `extend_*` or direct inserts.
    pub fn new_empty(d: usize, k: usize, split: SplitSpec, estimator: EstimatorKind) -> Self {
        SubsetScoreTable {
            d,
            k,
            split,
            estimator,
            entries: BTreeMap::new(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn split(&self) -> &SplitSpec {
        &self.split
    }

    pub fn estimator(&self) -> EstimatorKind {
        self.estimator
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, subset: &FeatureSubset) -> Option<&ScoreEntry> {
        self.entries.get(subset)
    }

    pub fn insert(&mut self, subset: FeatureSubset, entry: ScoreEntry) {
        self.entries.insert(subset, entry);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FeatureSubset, &ScoreEntry)> {
        self.entries.iter()
    }

    /// True when every subset of `Set_d^k` has an entry.
    pub fn is_complete(&self) -> bool {
        let want = count_subsets(self.d, self.k)
            .map(|c| c.to_string())
            .unwrap_or_default();
        want == self.entries.len().to_string()
    }

    pub fn require_complete(&self) -> Result<()> {
        if self.is_complete() {
            return Ok(());
        }
        let want = count_subsets(self.d, self.k)?.to_string();
        Err(Error::IncompleteTable {
            d: self.d,
            k: self.k,
            have: self.entries.len(),
            want: want.parse().unwrap_or(usize::MAX),
        })
    }

    /// Raises the size cap to `new_k` (no-op entries are kept; only missing
    /// subsets will be computed by the next `extend_*` call).
    pub fn raise_k(&mut self, new_k: usize) -> Result<()> {
        if new_k < self.k || new_k > self.d {
            return Err(Error::InvalidArgument(format!(
                "cannot change k from {} to {new_k} (d = {})",
                self.k, self.d
            )));
        }
        self.k = new_k;
        Ok(())
    }

    /// Fills every missing KDE entry, leaving existing ones untouched.
    /// Bandwidths come from V-fold CV on `restrict(W, S)` (the scoring sample
    /// `Z` is never touched during selection); the CV fold seed is the split
    /// seed, so the table is a pure function of (ds, k, split, grid, folds).
    pub fn extend_kde(&mut self, ds: &Dataset, grid: &BandwidthGrid, folds: usize) -> Result<()> {
        grid.validate()?;
        let (w, z) = ds.split(&self.split)?;
        let missing: Vec<FeatureSubset> = enumerate_subsets(self.d, self.k)?
            .filter(|s| !self.entries.contains_key(s))
            .collect();
        let seed = self.split.seed;
        let computed: Vec<(FeatureSubset, ScoreEntry)> = missing
            .into_par_iter()
            .map(|subset| -> Result<(FeatureSubset, ScoreEntry)> {
                let w_s = w.restrict(&subset)?;
                let z_s = z.restrict(&subset)?;
                let (bandwidth, _) = select_bandwidth_cv(&w_s, grid, folds, seed)?;
                let model = KdeModel::new(w_s, bandwidth)?;
                let score = model.mean_log_density(&z_s)?;
                Ok((subset, ScoreEntry { bandwidth, score }))
            })
            .map(|r| r.map_err(|e| Error::InvalidArgument(format!("failed scoring a subset: {e}"))))
            .collect::<Result<_>>()?;
        for (s, e) in computed {
            self.entries.insert(s, e);
        }
        Ok(())
    }

    /// Gaussian counterpart of [`SubsetScoreTable::extend_kde`]: the marginal
    /// estimator for `S` is the centered Gaussian with the empirical
    /// second-moment of `restrict(W, S)`. Singular covariances get a ridge of
    /// `1e-9 * trace / |S|` on the diagonal (with a warning); the bandwidth
    /// slot holds [`SENTINEL_BANDWIDTH`].
    pub fn extend_gaussian(&mut self, ds: &Dataset) -> Result<()> {
        let (w, z) = ds.split(&self.split)?;
        let missing: Vec<FeatureSubset> = enumerate_subsets(self.d, self.k)?
            .filter(|s| !self.entries.contains_key(s))
            .collect();
        let computed: Vec<(FeatureSubset, ScoreEntry)> = missing
            .into_par_iter()
            .map(|subset| -> Result<(FeatureSubset, ScoreEntry)> {
                let w_s = w.restrict(&subset)?;
                let z_s = z.restrict(&subset)?;
                let model = fit_centered_gaussian(&w_s, &subset)?;
                let score = model.mean_log_density(&z_s)?;
                Ok((
                    subset,
                    ScoreEntry {
                        bandwidth: SENTINEL_BANDWIDTH,
                        score,
                    },
                ))
            })
            .collect::<Result<_>>()?;
        for (s, e) in computed {
            self.entries.insert(s, e);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = TableFile::from(self);
        let json = serde_json::to_string_pretty(&file)?;
        let mut f = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        f.write_all(json.as_bytes()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: TableFile = serde_json::from_str(&raw)?;
        file.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TableFile::from(self))?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(raw)?;
        file.try_into()
    }
}

/// Fits the zero-mean Gaussian block estimator, applying the documented ridge
/// when the raw second-moment matrix is not positive definite.
pub(crate) fn fit_centered_gaussian(
    w_s: &Dataset,
    subset: &FeatureSubset,
) -> Result<CenteredGaussian> {
    let cov = empirical_covariance(w_s);
    match CenteredGaussian::new(&cov) {
        Ok(model) => Ok(model),
        Err(Error::NotPositiveDefinite(_)) => {
            let p = cov.dim();
            let trace: f64 = (0..p).map(|i| cov.get(i, i)).sum();
            let ridge = 1e-9 * trace / p as f64;
            log::warn!(
                "singular covariance for subset {subset}; adding ridge {ridge:e} to the diagonal"
            );
            let mut m = cov.matrix().clone();
            for i in 0..p {
                m[(i, i)] += ridge;
            }
            CenteredGaussian::new(&Covariance::new(m)?).map_err(|_| {
                Error::NotPositiveDefinite(format!("covariance of subset {subset} (after ridge)"))
            })
        }
        Err(e) => Err(e),
    }
}

/// Scores all of `Set_d^k` with CV-bandwidth KDE marginals (Algorithm phase 1).
pub fn score_all_subsets(
    ds: &Dataset,
    k: usize,
    split: &SplitSpec,
    grid: &BandwidthGrid,
    folds: usize,
) -> Result<SubsetScoreTable> {
    let mut table = SubsetScoreTable::new_empty(ds.n_features(), k, *split, EstimatorKind::Kde);
    table.extend_kde(ds, grid, folds)?;
    Ok(table)
}

/// Scores all of `Set_d^k` with centered-Gaussian marginals.
pub fn gaussian_score_all_subsets(
    ds: &Dataset,
    k: usize,
    split: &SplitSpec,
) -> Result<SubsetScoreTable> {
    let mut table =
        SubsetScoreTable::new_empty(ds.n_features(), k, *split, EstimatorKind::Gaussian);
    table.extend_gaussian(ds)?;
    Ok(table)
}

/// l_n(P) = sum over the blocks of `p` of the table's scores, in canonical
/// block order. Never refits anything.
pub fn partition_score(table: &SubsetScoreTable, p: &Partition) -> Result<f64> {
    let mut total = 0.0;
    for block in p.blocks() {
        let entry = table
            .get(block)
            .ok_or_else(|| Error::MissingSubset(block.clone()))?;
        total += entry.score;
    }
    Ok(total)
}

/// On-disk schema (version 1): entries listed in enumeration order
/// (cardinality, then lexicographic). serde_json writes floats with
/// round-trip precision.
#[derive(Serialize, Deserialize)]
struct TableFile {
    schema_version: u32,
    d: usize,
    k: usize,
    estimator: EstimatorKind,
    split: SplitSpec,
    entries: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    subset: Vec<usize>,
    bandwidth: f64,
    score: f64,
}

impl From<&SubsetScoreTable> for TableFile {
    fn from(t: &SubsetScoreTable) -> TableFile {
        let mut entries: Vec<EntryFile> = t
            .entries
            .iter()
            .map(|(s, e)| EntryFile {
                subset: s.indices().to_vec(),
                bandwidth: e.bandwidth,
                score: e.score,
            })
            .collect();
        entries.sort_by(|a, b| {
            a.subset
                .len()
                .cmp(&b.subset.len())
                .then_with(|| a.subset.cmp(&b.subset))
        });
        TableFile {
            schema_version: 1,
            d: t.d,
            k: t.k,
            estimator: t.estimator,
            split: t.split,
            entries,
        }
    }
}

impl TryFrom<TableFile> for SubsetScoreTable {
    type Error = Error;

    fn try_from(f: TableFile) -> Result<SubsetScoreTable> {
        if f.schema_version != 1 {
            return Err(Error::InvalidArgument(format!(
                "unsupported score table schema_version {}",
                f.schema_version
            )));
        }
        let mut table = SubsetScoreTable::new_empty(f.d, f.k, f.split, f.estimator);
        for e in f.entries {
            if !e.score.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite score for subset {:?}",
                    e.subset
                )));
            }
            let subset = FeatureSubset::new(e.subset)?;
            if subset.max_index() >= f.d {
                return Err(Error::IndexOutOfRange {
                    index: subset.max_index(),
                    d: f.d,
                });
            }
            table.insert(
                subset,
                ScoreEntry {
                    bandwidth: e.bandwidth,
                    score: e.score,
                },
            );
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kde::GridScale;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_ds(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        Dataset::from_rows(&rows).unwrap()
    }

    fn small_grid() -> BandwidthGrid {
        BandwidthGrid::new(0.05, 1.0, 6, GridScale::Log).unwrap()
    }

    #[test]
    fn table_has_one_entry_per_subset() {
        let ds = uniform_ds(60, 2, 1);
        let split = SplitSpec::halves(60, 3);
        let table = score_all_subsets(&ds, 1, &split, &small_grid(), 5).unwrap();
        assert_eq!(table.len(), 2);
        assert!(table.get(&FeatureSubset::new(vec![0]).unwrap()).is_some());
        assert!(table.get(&FeatureSubset::new(vec![1]).unwrap()).is_some());
        assert!(table.is_complete());

        let ds = uniform_ds(60, 3, 2);
        let table = score_all_subsets(&ds, 2, &SplitSpec::halves(60, 3), &small_grid(), 5).unwrap();
        assert_eq!(table.len(), 6); // count_subsets(3, 2)
    }

    #[test]
    fn scores_are_deterministic_and_column_local() {
        let ds = uniform_ds(80, 3, 7);
        let split = SplitSpec::new(40, 40, 5);
        let t1 = score_all_subsets(&ds, 2, &split, &small_grid(), 5).unwrap();
        let t2 = score_all_subsets(&ds, 2, &split, &small_grid(), 5).unwrap();
        assert_eq!(t1, t2);

        // swapping columns 1 and 2 must not change the entry for {0}
        let swapped_rows: Vec<Vec<f64>> = ds.rows().map(|r| vec![r[0], r[2], r[1]]).collect();
        let swapped = Dataset::from_rows(&swapped_rows).unwrap();
        let t3 = score_all_subsets(&swapped, 2, &split, &small_grid(), 5).unwrap();
        let s0 = FeatureSubset::new(vec![0]).unwrap();
        assert_eq!(t1.get(&s0).unwrap(), t3.get(&s0).unwrap());
    }

    /// Independent hold-out oracle: naive CV (refit per fold and bandwidth)
    /// plus a plain log-sum-exp evaluation over Z.
    #[test]
    fn kde_scores_match_independent_pipeline() {
        let ds = uniform_ds(200, 2, 11);
        let split = SplitSpec::new(100, 100, 13);
        let grid = small_grid();
        let folds = 5;
        let table = score_all_subsets(&ds, 2, &split, &grid, folds).unwrap();

        let (w, z) = ds.split(&split).unwrap();
        let naive_ld = |fit: &Dataset, h: f64, x: &[f64]| -> f64 {
            let p = fit.n_features() as f64;
            let ts: Vec<f64> = fit
                .rows()
                .map(|r| {
                    let sq: f64 = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    -sq / (2.0 * h * h)
                })
                .collect();
            let t_max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = ts.iter().map(|t| (t - t_max).exp()).sum();
            t_max + sum.ln()
                - (fit.n_rows() as f64).ln()
                - 0.5 * p * (2.0 * std::f64::consts::PI).ln()
                - p * h.ln()
        };

        for (subset, entry) in table.iter() {
            let w_s = w.restrict(subset).unwrap();
            let z_s = z.restrict(subset).unwrap();
            // the production CV selects the bandwidth; re-evaluate the
            // held-out score with the naive evaluator
            let oracle: f64 = z_s
                .rows()
                .map(|r| naive_ld(&w_s, entry.bandwidth, r))
                .sum::<f64>()
                / z_s.n_rows() as f64;
            assert!(
                (entry.score - oracle).abs() < 1e-10,
                "subset {subset}: {} vs {oracle}",
                entry.score
            );
        }
    }

    #[test]
    fn partition_score_adds_block_entries() {
        let ds = uniform_ds(60, 3, 21);
        let split = SplitSpec::halves(60, 4);
        let table = score_all_subsets(&ds, 3, &split, &small_grid(), 5).unwrap();

        let singles = Partition::singletons(3).unwrap();
        let sum: f64 = (0..3)
            .map(|i| {
                table
                    .get(&FeatureSubset::new(vec![i]).unwrap())
                    .unwrap()
                    .score
            })
            .sum();
        assert_eq!(partition_score(&table, &singles).unwrap(), sum);

        let full = Partition::single_block(3).unwrap();
        assert_eq!(
            partition_score(&table, &full).unwrap(),
            table
                .get(&FeatureSubset::new(vec![0, 1, 2]).unwrap())
                .unwrap()
                .score
        );

        // explicit iteration in canonical order reproduces it exactly
        let p = Partition::try_from(vec![vec![0, 2], vec![1]]).unwrap();
        let manual: f64 = p.blocks().iter().map(|b| table.get(b).unwrap().score).sum();
        assert_eq!(partition_score(&table, &p).unwrap(), manual);
    }

    #[test]
    fn partition_score_reports_missing_blocks() {
        let ds = uniform_ds(40, 3, 2);
        let table = score_all_subsets(&ds, 1, &SplitSpec::halves(40, 0), &small_grid(), 5).unwrap();
        let p = Partition::try_from(vec![vec![0, 1], vec![2]]).unwrap();
        assert!(matches!(
            partition_score(&table, &p),
            Err(Error::MissingSubset(_))
        ));
    }

    #[test]
    fn gaussian_one_dimensional_closed_form() {
        let ds = uniform_ds(30, 1, 3);
        let split = SplitSpec::new(20, 10, 8);
        let table = gaussian_score_all_subsets(&ds, 1, &split).unwrap();
        let (w, z) = ds.split(&split).unwrap();
        let s2: f64 = w.column(0).map(|v| v * v).sum::<f64>() / w.n_rows() as f64;
        let expected: f64 = z
            .column(0)
            .map(|zv| -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - zv * zv / (2.0 * s2))
            .sum::<f64>()
            / z.n_rows() as f64;
        let got = table
            .get(&FeatureSubset::new(vec![0]).unwrap())
            .unwrap()
            .score;
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn gaussian_scores_nearly_additive_for_independent_features() {
        use crate::gaussian::{sample_gaussian, Covariance};
        let id = Covariance::new(nalgebra::DMatrix::identity(2, 2)).unwrap();
        let ds = sample_gaussian(&id, 6000, 31).unwrap();
        let table = gaussian_score_all_subsets(&ds, 2, &SplitSpec::halves(6000, 1)).unwrap();
        let get = |ix: Vec<usize>| table.get(&FeatureSubset::new(ix).unwrap()).unwrap().score;
        let joint = get(vec![0, 1]);
        let sum = get(vec![0]) + get(vec![1]);
        assert!((joint - sum).abs() < 0.05, "{joint} vs {sum}");
    }

    #[test]
    fn gaussian_scores_match_quadratic_form_oracle() {
        let ds = uniform_ds(50, 3, 17);
        let split = SplitSpec::new(30, 20, 23);
        let table = gaussian_score_all_subsets(&ds, 2, &split).unwrap();
        let (w, z) = ds.split(&split).unwrap();
        for (subset, entry) in table.iter() {
            let w_s = w.restrict(subset).unwrap();
            let z_s = z.restrict(subset).unwrap();
            let cov = empirical_covariance(&w_s).matrix().clone();
            let inv = cov.clone().try_inverse().unwrap();
            let det = cov.determinant();
            let p = subset.len() as f64;
            let oracle: f64 = z_s
                .rows()
                .map(|r| {
                    let x = nalgebra::DVector::from_column_slice(r);
                    let quad = (x.transpose() * &inv * &x)[(0, 0)];
                    -0.5 * (quad + det.ln() + p * (2.0 * std::f64::consts::PI).ln())
                })
                .sum::<f64>()
                / z_s.n_rows() as f64;
            assert!(
                (entry.score - oracle).abs() < 1e-10,
                "subset {subset}: {} vs {oracle}",
                entry.score
            );
            assert_eq!(entry.bandwidth, SENTINEL_BANDWIDTH);
        }
    }

    #[test]
    fn extension_matches_direct_computation() {
        let ds = uniform_ds(80, 3, 4);
        let split = SplitSpec::halves(80, 6);
        let grid = small_grid();
        let mut partial = score_all_subsets(&ds, 1, &split, &grid, 5).unwrap();
        assert!(partial.is_complete());
        partial.raise_k(2).unwrap();
        assert!(!partial.is_complete());
        partial.extend_kde(&ds, &grid, 5).unwrap();
        let direct = score_all_subsets(&ds, 2, &split, &grid, 5).unwrap();
        assert_eq!(partial, direct);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ds = uniform_ds(40, 2, 9);
        let table = score_all_subsets(&ds, 2, &SplitSpec::halves(40, 2), &small_grid(), 5).unwrap();
        let json = table.to_json().unwrap();
        let back = SubsetScoreTable::from_json(&json).unwrap();
        assert_eq!(table, back);

        let tmp = tempfile::NamedTempFile::new().unwrap();
        table.save(tmp.path()).unwrap();
        let loaded = SubsetScoreTable::load(tmp.path()).unwrap();
        assert_eq!(table, loaded);
    }

    #[test]
    fn incomplete_table_is_detected() {
        let mut t = SubsetScoreTable::new_empty(2, 2, SplitSpec::new(1, 1, 0), EstimatorKind::Kde);
        t.insert(
            FeatureSubset::new(vec![0]).unwrap(),
            ScoreEntry {
                bandwidth: 0.1,
                score: 0.0,
            },
        );
        assert!(!t.is_complete());
        assert!(matches!(
            t.require_complete(),
            Err(Error::IncompleteTable { .. })
        ));
    }
}
