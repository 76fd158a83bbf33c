//! The estimators compared in the experiments: the independence-structure
//! product model itself, the full-dimensional CV-bandwidth KDE, and forest
//! density estimation (FDE) built from the pairwise entries of a score table.
//!
//! The asymmetry between them follows the experimental protocol: CVKDE trains
//! on all N rows with cross-validated bandwidth, while the structured models
//! fit their marginals on the estimation half `W` of the split that produced
//! the score table.

use rayon::prelude::*;

use crate::data::{Dataset, FeatureSubset, Partition, SplitSpec};
use crate::gaussian::CenteredGaussian;
use crate::kde::{select_bandwidth_cv, BandwidthGrid, KdeModel};
use crate::scoring::{fit_centered_gaussian, score_all_subsets, EstimatorKind, SubsetScoreTable};
use crate::solver::{solve_best, SolveResult};
use crate::{Error, Result};

/// Anything that assigns a log-density to points of a fixed dimension.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> Result<f64>;
}

impl LogDensity for KdeModel {
    fn dim(&self) -> usize {
        KdeModel::dim(self)
    }
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        KdeModel::log_density(self, x)
    }
}

impl LogDensity for CenteredGaussian {
    fn dim(&self) -> usize {
        CenteredGaussian::dim(self)
    }
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        CenteredGaussian::log_density(self, x)
    }
}

/// Mean log-density of `model` over a validation set (the experiments'
/// evaluation score).
pub fn validation_score<M: LogDensity + ?Sized>(model: &M, valid: &Dataset) -> Result<f64> {
    if valid.n_features() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: valid.n_features(),
        });
    }
    let rows: Vec<&[f64]> = valid.rows().collect();
    let values: Vec<f64> = rows
        .par_iter()
        .map(|row| model.log_density(row))
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Full-dimensional KDE on all rows of `ds`, bandwidth chosen by V-fold CV.
pub fn fit_cvkde(ds: &Dataset, grid: &BandwidthGrid, folds: usize, seed: u64) -> Result<KdeModel> {
    let (bandwidth, _) = select_bandwidth_cv(ds, grid, folds, seed)?;
    KdeModel::new(ds.clone(), bandwidth)
}

/// An acyclic set of feature pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Forest {
    d: usize,
    edges: Vec<(usize, usize)>,
}

impl Forest {
    pub fn new(d: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut parent: Vec<usize> = (0..d).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= d || b >= d || a == b {
                return Err(Error::InvalidArgument(format!(
                    "bad edge ({a}, {b}) for d={d}"
                )));
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) creates a cycle"
                )));
            }
            parent[ra] = rb;
            normalized.push((a.min(b), a.max(b)));
        }
        Ok(Forest {
            d,
            edges: normalized,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// FDE model: one univariate KDE per feature and one bivariate KDE per edge.
#[derive(Debug, Clone)]
pub struct ForestModel {
    forest: Forest,
    univariate: Vec<KdeModel>,
    bivariate: Vec<((usize, usize), KdeModel)>,
}

impl ForestModel {
    /// Assembles a forest model from explicit parts; there must be one
    /// univariate model per feature and one bivariate model per edge, in edge
    /// order.
    pub fn from_parts(
        forest: Forest,
        univariate: Vec<KdeModel>,
        bivariate: Vec<((usize, usize), KdeModel)>,
    ) -> Result<Self> {
        if univariate.len() != forest.d {
            return Err(Error::InvalidArgument(format!(
                "{} univariate models for {} features",
                univariate.len(),
                forest.d
            )));
        }
        if bivariate.len() != forest.edges.len()
            || bivariate
                .iter()
                .zip(&forest.edges)
                .any(|((e, _), fe)| e != fe)
        {
            return Err(Error::InvalidArgument(
                "bivariate models do not match the forest's edges".into(),
            ));
        }
        Ok(ForestModel {
            forest,
            univariate,
            bivariate,
        })
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    /// Bandwidths of the univariate marginals, by feature index.
    pub fn univariate_bandwidths(&self) -> Vec<f64> {
        self.univariate.iter().map(KdeModel::bandwidth).collect()
    }

    /// Bandwidths of the bivariate marginals, in edge order.
    pub fn edge_bandwidths(&self) -> Vec<f64> {
        self.bivariate.iter().map(|(_, m)| m.bandwidth()).collect()
    }

    /// log f(x) = sum over edges (i,j) of
    /// [log f_ij(x_i, x_j) - log f_i(x_i) - log f_j(x_j)]
    /// + sum over features of log f_k(x_k).
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.forest.d {
            return Err(Error::DimensionMismatch {
                expected: self.forest.d,
                got: x.len(),
            });
        }
        let mut total = 0.0;
        for ((i, j), model) in &self.bivariate {
            total += model.log_density(&[x[*i], x[*j]])?;
            total -= self.univariate[*i].log_density(&[x[*i]])?;
            total -= self.univariate[*j].log_density(&[x[*j]])?;
        }
        for (k, model) in self.univariate.iter().enumerate() {
            total += model.log_density(&[x[k]])?;
        }
        Ok(total)
    }
}

impl LogDensity for ForestModel {
    fn dim(&self) -> usize {
        self.forest.d
    }
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        ForestModel::log_density(self, x)
    }
}

/// Held-out edge weight: the gain of modelling the pair jointly rather than
/// as independent marginals.
pub fn fde_edge_weight(table: &SubsetScoreTable, i: usize, j: usize) -> Result<f64> {
    let get = |ix: Vec<usize>| -> Result<f64> {
        let s = FeatureSubset::new(ix)?;
        Ok(table.get(&s).ok_or(Error::MissingSubset(s))?.score)
    };
    Ok(get(vec![i, j])? - get(vec![i])? - get(vec![j])?)
}

/// Fits FDE from the pairwise entries of `table`: edges are added greedily by
/// decreasing held-out gain, skipping cycle-creating ones, stopping at the
/// first non-positive gain. Marginal KDEs reuse the table's bandwidths,
/// refit on `w` (the same sample the table's estimators were built on).
pub fn fit_fde(table: &SubsetScoreTable, w: &Dataset) -> Result<ForestModel> {
    let d = table.d();
    if table.estimator() != EstimatorKind::Kde {
        return Err(Error::InvalidArgument("FDE needs a KDE score table".into()));
    }
    if w.n_features() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: w.n_features(),
        });
    }
    let mut weighted: Vec<(f64, (usize, usize))> = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            weighted.push((fde_edge_weight(table, i, j)?, (i, j)));
        }
    }
    weighted.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

    let mut parent: Vec<usize> = (0..d).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut edges = Vec::new();
    for (gain, (i, j)) in weighted {
        if gain <= 0.0 {
            break; // held-out gain criterion: no remaining edge helps
        }
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            edges.push((i, j));
        }
    }
    let forest = Forest::new(d, edges)?;

    let bandwidth_of = |ix: Vec<usize>| -> Result<f64> {
        let s = FeatureSubset::new(ix)?;
        Ok(table.get(&s).ok_or(Error::MissingSubset(s))?.bandwidth)
    };
    let univariate: Vec<KdeModel> = (0..d)
        .map(|i| {
            let sub = w.restrict(&FeatureSubset::new(vec![i])?)?;
            KdeModel::new(sub, bandwidth_of(vec![i])?)
        })
        .collect::<Result<_>>()?;
    let bivariate: Vec<((usize, usize), KdeModel)> = forest
        .edges()
        .iter()
        .map(|&(i, j)| {
            let sub = w.restrict(&FeatureSubset::new(vec![i, j])?)?;
            Ok(((i, j), KdeModel::new(sub, bandwidth_of(vec![i, j])?)?))
        })
        .collect::<Result<_>>()?;
    Ok(ForestModel {
        forest,
        univariate,
        bivariate,
    })
}

/// Free-function form of [`ForestModel::log_density`].
pub fn forest_log_density(model: &ForestModel, x: &[f64]) -> Result<f64> {
    model.log_density(x)
}

/// Marginal estimator of one partition block.
#[derive(Debug, Clone)]
pub enum BlockDensity {
    Kde(KdeModel),
    Gaussian(CenteredGaussian),
}

impl BlockDensity {
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        match self {
            BlockDensity::Kde(m) => m.log_density(x),
            BlockDensity::Gaussian(m) => m.log_density(x),
        }
    }
}

/// The selected partition together with one marginal estimator per block:
/// the product-of-marginals density.
#[derive(Debug, Clone)]
pub struct FittedModel {
    partition: Partition,
    blocks: Vec<BlockDensity>,
}

impl FittedModel {
    /// Assembles the product model for `partition` from a score table's
    /// estimator kind and bandwidths, refitting each block marginal on `w`.
    pub fn from_table(
        table: &SubsetScoreTable,
        w: &Dataset,
        partition: &Partition,
    ) -> Result<Self> {
        if partition.ground_size() != table.d() {
            return Err(Error::DimensionMismatch {
                expected: table.d(),
                got: partition.ground_size(),
            });
        }
        let blocks = partition
            .blocks()
            .iter()
            .map(|s| {
                let w_s = w.restrict(s)?;
                match table.estimator() {
                    EstimatorKind::Kde => {
                        let entry = table
                            .get(s)
                            .ok_or_else(|| Error::MissingSubset(s.clone()))?;
                        Ok(BlockDensity::Kde(KdeModel::new(w_s, entry.bandwidth)?))
                    }
                    EstimatorKind::Gaussian => {
                        Ok(BlockDensity::Gaussian(fit_centered_gaussian(&w_s, s)?))
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FittedModel {
            partition: partition.clone(),
            blocks,
        })
    }

    /// Assembles the product model from explicit per-block bandwidths
    /// (aligned with the partition's canonical block order), as recorded in
    /// model manifests.
    pub fn from_kde_blocks(partition: &Partition, w: &Dataset, bandwidths: &[f64]) -> Result<Self> {
        if bandwidths.len() != partition.n_blocks() {
            return Err(Error::InvalidArgument(format!(
                "{} bandwidths for {} blocks",
                bandwidths.len(),
                partition.n_blocks()
            )));
        }
        let blocks = partition
            .blocks()
            .iter()
            .zip(bandwidths)
            .map(|(s, &h)| Ok(BlockDensity::Kde(KdeModel::new(w.restrict(s)?, h)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(FittedModel {
            partition: partition.clone(),
            blocks,
        })
    }

    /// Assembles the product model with centered-Gaussian block marginals
    /// refit on `w`.
    pub fn from_gaussian_blocks(partition: &Partition, w: &Dataset) -> Result<Self> {
        let blocks = partition
            .blocks()
            .iter()
            .map(|s| {
                Ok(BlockDensity::Gaussian(fit_centered_gaussian(
                    &w.restrict(s)?,
                    s,
                )?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FittedModel {
            partition: partition.clone(),
            blocks,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Bandwidth per block, in canonical block order; `None` for Gaussian
    /// blocks.
    pub fn block_bandwidths(&self) -> Vec<Option<f64>> {
        self.blocks
            .iter()
            .map(|b| match b {
                BlockDensity::Kde(m) => Some(m.bandwidth()),
                BlockDensity::Gaussian(_) => None,
            })
            .collect()
    }

    /// Sum over blocks of the block marginal's log-density at the restricted
    /// coordinates (canonical block order).
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.partition.ground_size() {
            return Err(Error::DimensionMismatch {
                expected: self.partition.ground_size(),
                got: x.len(),
            });
        }
        let mut total = 0.0;
        let mut coords: Vec<f64> = Vec::with_capacity(self.partition.ground_size());
        for (subset, block) in self.partition.blocks().iter().zip(&self.blocks) {
            coords.clear();
            coords.extend(subset.indices().iter().map(|&i| x[i]));
            total += block.log_density(&coords)?;
        }
        Ok(total)
    }
}

impl LogDensity for FittedModel {
    fn dim(&self) -> usize {
        self.partition.ground_size()
    }
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        FittedModel::log_density(self, x)
    }
}

/// Free-function form of [`FittedModel::log_density`].
pub fn fitted_model_log_density(model: &FittedModel, x: &[f64]) -> Result<f64> {
    model.log_density(x)
}

/// One full ISDE run: score table, certified-optimal partition, and the
/// assembled product model (block marginals fit on `W`).
pub struct IsdeFit {
    pub table: SubsetScoreTable,
    pub best: SolveResult,
    pub model: FittedModel,
}

/// Scores all subsets with KDE marginals, solves for the best partition, and
/// assembles the product model.
pub fn fit_isde(
    ds: &Dataset,
    k: usize,
    split: &SplitSpec,
    grid: &BandwidthGrid,
    folds: usize,
) -> Result<IsdeFit> {
    let table = score_all_subsets(ds, k, split, grid, folds)?;
    let best = solve_best(&table)?;
    let (w, _z) = ds.split(split)?;
    let model = FittedModel::from_table(&table, &w, &best.partition)?;
    Ok(IsdeFit { table, best, model })
}
