//! Model manifests: a JSON record of everything needed to rebuild a fitted
//! model from the original training CSV and re-evaluate log-densities —
//! partition or forest, bandwidths, split spec and seeds. Timing never enters
//! a manifest, so replays are byte-for-byte reproducible.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{FittedModel, Forest, ForestModel, LogDensity};
use crate::data::{Dataset, Partition, SplitSpec};
use crate::kde::{BandwidthGrid, KdeModel};
use crate::{Error, Result};

/// Which estimator the manifest describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "isde")]
    Isde,
    #[serde(rename = "isde-gauss")]
    IsdeGauss,
    #[serde(rename = "fde")]
    Fde,
    #[serde(rename = "cvkde")]
    Cvkde,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<ModelKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "isde" => Ok(ModelKind::Isde),
            "isde-gauss" | "isde_gauss" => Ok(ModelKind::IsdeGauss),
            "fde" => Ok(ModelKind::Fde),
            "cvkde" => Ok(ModelKind::Cvkde),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// Serializable record of one fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub schema_version: u32,
    pub method: ModelKind,
    pub d: usize,
    /// Max block size used during selection (structured methods).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// W/Z split behind the score table (structured methods).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<BandwidthGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    /// CV seed for methods that cross-validate outside a split (cvkde).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_seed: Option<u64>,
    /// Selected partition (isde / isde-gauss), canonical block order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
    /// Per-block bandwidths aligned with `partition` (isde).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_bandwidths: Option<Vec<f64>>,
    /// Selected forest edges (fde).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forest_edges: Option<Vec<(usize, usize)>>,
    /// Bandwidths of the univariate marginals by feature (fde).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub univariate_bandwidths: Option<Vec<f64>>,
    /// Bandwidths of the bivariate marginals in edge order (fde).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_bandwidths: Option<Vec<f64>>,
    /// Single global bandwidth (cvkde).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Held-out objective of the selected partition, informational.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

impl ModelManifest {
    fn base(method: ModelKind, d: usize) -> Self {
        ModelManifest {
            schema_version: 1,
            method,
            d,
            k: None,
            split: None,
            grid: None,
            folds: None,
            cv_seed: None,
            partition: None,
            block_bandwidths: None,
            forest_edges: None,
            univariate_bandwidths: None,
            edge_bandwidths: None,
            bandwidth: None,
            objective: None,
        }
    }

    pub fn for_isde(
        model: &FittedModel,
        k: usize,
        split: SplitSpec,
        grid: BandwidthGrid,
        folds: usize,
        objective: f64,
    ) -> Self {
        let mut m = Self::base(ModelKind::Isde, model.partition().ground_size());
        m.k = Some(k);
        m.split = Some(split);
        m.grid = Some(grid);
        m.folds = Some(folds);
        m.partition = Some(model.partition().clone());
        m.block_bandwidths = Some(
            model
                .block_bandwidths()
                .into_iter()
                .map(|b| b.expect("KDE blocks carry bandwidths"))
                .collect(),
        );
        m.objective = Some(objective);
        m
    }

    pub fn for_isde_gauss(model: &FittedModel, k: usize, split: SplitSpec, objective: f64) -> Self {
        let mut m = Self::base(ModelKind::IsdeGauss, model.partition().ground_size());
        m.k = Some(k);
        m.split = Some(split);
        m.partition = Some(model.partition().clone());
        m.objective = Some(objective);
        m
    }

    pub fn for_fde(
        model: &ForestModel,
        split: SplitSpec,
        grid: BandwidthGrid,
        folds: usize,
    ) -> Self {
        let mut m = Self::base(ModelKind::Fde, model.forest().d());
        m.split = Some(split);
        m.grid = Some(grid);
        m.folds = Some(folds);
        m.forest_edges = Some(model.forest().edges().to_vec());
        m.univariate_bandwidths = Some(model.univariate_bandwidths());
        m.edge_bandwidths = Some(model.edge_bandwidths());
        m
    }

    pub fn for_cvkde(model: &KdeModel, grid: BandwidthGrid, folds: usize, cv_seed: u64) -> Self {
        let mut m = Self::base(ModelKind::Cvkde, model.dim());
        m.grid = Some(grid);
        m.folds = Some(folds);
        m.cv_seed = Some(cv_seed);
        m.bandwidth = Some(model.bandwidth());
        m
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
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
        let m: ModelManifest = serde_json::from_str(&raw)?;
        if m.schema_version != 1 {
            return Err(Error::Manifest(format!(
                "unsupported manifest schema_version {}",
                m.schema_version
            )));
        }
        Ok(m)
    }

    fn field<'a, T>(opt: &'a Option<T>, name: &str) -> Result<&'a T> {
        opt.as_ref()
            .ok_or_else(|| Error::Manifest(format!("missing field {name:?}")))
    }

    /// Rebuilds the described model from the original training data. The
    /// reconstruction is exact: the same split, the same recorded bandwidths,
    /// the same refits.
    pub fn rebuild(&self, train: &Dataset) -> Result<ReplayModel> {
        if train.n_features() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: train.n_features(),
            });
        }
        match self.method {
            ModelKind::Isde => {
                let split = Self::field(&self.split, "split")?;
                let partition = Self::field(&self.partition, "partition")?;
                let bandwidths = Self::field(&self.block_bandwidths, "block_bandwidths")?;
                let (w, _) = train.split(split)?;
                Ok(ReplayModel::Fitted(FittedModel::from_kde_blocks(
                    partition, &w, bandwidths,
                )?))
            }
            ModelKind::IsdeGauss => {
                let split = Self::field(&self.split, "split")?;
                let partition = Self::field(&self.partition, "partition")?;
                let (w, _) = train.split(split)?;
                Ok(ReplayModel::Fitted(FittedModel::from_gaussian_blocks(
                    partition, &w,
                )?))
            }
            ModelKind::Fde => {
                let split = Self::field(&self.split, "split")?;
                let edges = Self::field(&self.forest_edges, "forest_edges")?;
                let univ = Self::field(&self.univariate_bandwidths, "univariate_bandwidths")?;
                let pair = Self::field(&self.edge_bandwidths, "edge_bandwidths")?;
                if univ.len() != self.d || pair.len() != edges.len() {
                    return Err(Error::Manifest(
                        "bandwidth lists do not match the recorded forest".into(),
                    ));
                }
                let (w, _) = train.split(split)?;
                let forest = Forest::new(self.d, edges.clone())?;
                let univariate = (0..self.d)
                    .map(|i| {
                        let s = crate::data::FeatureSubset::new(vec![i])?;
                        KdeModel::new(w.restrict(&s)?, univ[i])
                    })
                    .collect::<Result<Vec<_>>>()?;
                let bivariate = edges
                    .iter()
                    .zip(pair)
                    .map(|(&(i, j), &h)| {
                        let s = crate::data::FeatureSubset::new(vec![i, j])?;
                        Ok(((i, j), KdeModel::new(w.restrict(&s)?, h)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ReplayModel::Forest(ForestModel::from_parts(
                    forest, univariate, bivariate,
                )?))
            }
            ModelKind::Cvkde => {
                let bandwidth = *Self::field(&self.bandwidth, "bandwidth")?;
                Ok(ReplayModel::Kde(KdeModel::new(train.clone(), bandwidth)?))
            }
        }
    }
}

/// A model rebuilt from a manifest.
pub enum ReplayModel {
    Fitted(FittedModel),
    Forest(ForestModel),
    Kde(KdeModel),
}

impl LogDensity for ReplayModel {
    fn dim(&self) -> usize {
        match self {
            ReplayModel::Fitted(m) => m.dim(),
            ReplayModel::Forest(m) => m.dim(),
            ReplayModel::Kde(m) => LogDensity::dim(m),
        }
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        match self {
            ReplayModel::Fitted(m) => m.log_density(x),
            ReplayModel::Forest(m) => m.log_density(x),
            ReplayModel::Kde(m) => m.log_density(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{fit_cvkde, fit_fde, fit_isde, validation_score};
    use crate::kde::GridScale;
    use crate::synth::{gen_structure, BlockGenConfig, StructureSpec};

    fn grid() -> BandwidthGrid {
        BandwidthGrid::new(0.05, 1.0, 6, GridScale::Log).unwrap()
    }

    fn synthetic(n: usize, seed: u64) -> Dataset {
        let spec = StructureSpec::new(vec![2, 1], n, seed).unwrap();
        gen_structure(&spec, &BlockGenConfig::default()).unwrap().0
    }

    #[test]
    fn isde_manifest_replays_exactly() {
        let train = synthetic(200, 1);
        let valid = synthetic(100, 2);
        let split = SplitSpec::halves(200, 9);
        let fit = fit_isde(&train, 3, &split, &grid(), 5).unwrap();
        let original = validation_score(&fit.model, &valid).unwrap();

        let manifest = ModelManifest::for_isde(&fit.model, 3, split, grid(), 5, fit.best.objective);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        manifest.save(tmp.path()).unwrap();
        let loaded = ModelManifest::load(tmp.path()).unwrap();
        let replay = loaded.rebuild(&train).unwrap();
        let replayed = validation_score(&replay, &valid).unwrap();
        assert_eq!(original, replayed);
    }

    #[test]
    fn fde_and_cvkde_manifests_replay_exactly() {
        let train = synthetic(200, 3);
        let valid = synthetic(80, 4);
        let split = SplitSpec::halves(200, 11);
        let table = crate::scoring::score_all_subsets(&train, 2, &split, &grid(), 5).unwrap();
        let (w, _) = train.split(&split).unwrap();
        let fde = fit_fde(&table, &w).unwrap();
        let m = ModelManifest::for_fde(&fde, split, grid(), 5);
        let replay = m.rebuild(&train).unwrap();
        assert_eq!(
            validation_score(&fde, &valid).unwrap(),
            validation_score(&replay, &valid).unwrap()
        );

        let cvkde = fit_cvkde(&train, &grid(), 5, 21).unwrap();
        let m = ModelManifest::for_cvkde(&cvkde, grid(), 5, 21);
        let replay = m.rebuild(&train).unwrap();
        assert_eq!(
            validation_score(&cvkde, &valid).unwrap(),
            validation_score(&replay, &valid).unwrap()
        );
    }

    #[test]
    fn dimension_mismatch_is_detected() {
        let train = synthetic(100, 5);
        let split = SplitSpec::halves(100, 1);
        let fit = fit_isde(&train, 2, &split, &grid(), 5).unwrap();
        let manifest = ModelManifest::for_isde(&fit.model, 2, split, grid(), 5, fit.best.objective);
        let wrong = synthetic(50, 6)
            .restrict(&crate::data::FeatureSubset::new(vec![0, 1]).unwrap())
            .unwrap();
        assert!(matches!(
            manifest.rebuild(&wrong),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
