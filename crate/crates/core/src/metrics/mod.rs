//! Transfer-suitability measures: Fisher score, EMD domain similarity and
//! the scratch-minus-fixed-features gap.

pub mod emd;
pub mod fisher;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Batch, NetworkSpec, ParamSet, Tensor2D};

pub use emd::emd;
pub use fisher::{default_ridge, fisher_score, fisher_score_default};

/// Default EMD similarity temperature.
pub const DEFAULT_GAMMA: f64 = 0.01;

/// Feature rows with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub features: Tensor2D,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl FeatureMatrix {
    pub fn new(features: Tensor2D, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.cols() == 0 {
            return Err(Error::InvalidArgument("features need at least one column".into()));
        }
        nn::check_labels(&labels, n_classes)?;
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn require_all_classes(&self) -> Result<()> {
        match self.class_counts().iter().position(|&c| c == 0) {
            Some(c) => Err(Error::InvalidArgument(format!("class {c} has no samples"))),
            None => Ok(()),
        }
    }

    /// Writes `label,f0,...,f{d-1}` CSV.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let batch = Batch {
            inputs: self.features.clone(),
            labels: self.labels.clone(),
        };
        crate::datasets::save_csv(path, &batch)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let batch = crate::datasets::load_csv(path)?;
        let n_classes = batch.labels.iter().max().map_or(0, |m| m + 1);
        Self::new(batch.inputs, batch.labels, n_classes)
    }
}

/// Per-class mean rows and per-class sample fractions.
pub fn class_centroids(fm: &FeatureMatrix) -> Result<(Tensor2D, Vec<f64>)> {
    fm.require_all_classes()?;
    let counts = fm.class_counts();
    let mut centroids = Tensor2D::zeros(fm.n_classes, fm.dim());
    for (i, &l) in fm.labels.iter().enumerate() {
        for (c, x) in centroids.row_mut(l).iter_mut().zip(fm.features.row(i)) {
            *c += x;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        centroids.row_mut(c).iter_mut().for_each(|v| *v /= count as f64);
    }
    let n = fm.len() as f64;
    let weights = counts.iter().map(|&c| c as f64 / n).collect();
    Ok((centroids, weights))
}

/// EMD between the class-centroid distributions of two feature sets.
pub fn centroid_emd(source: &FeatureMatrix, target: &FeatureMatrix) -> Result<f64> {
    if source.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "source features are {}-d, target {}-d",
            source.dim(),
            target.dim()
        )));
    }
    let (ca, wa) = class_centroids(source)?;
    let (cb, wb) = class_centroids(target)?;
    let rows = |t: &Tensor2D| (0..t.rows()).map(|i| t.row(i).to_vec()).collect::<Vec<_>>();
    emd(&wa, &rows(&ca), &wb, &rows(&cb))
}

/// `exp(-gamma * EMD)` between class-centroid distributions.
pub fn domain_similarity(source: &FeatureMatrix, target: &FeatureMatrix, gamma: f64) -> Result<f64> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    Ok(similarity_from_distance(centroid_emd(source, target)?, gamma))
}

pub fn similarity_from_distance(distance: f64, gamma: f64) -> f64 {
    (-gamma * distance).exp()
}

/// Scratch accuracy minus fixed-feature accuracy, in percentage points.
pub fn transfer_gap(scratch_acc: f64, fixed_acc: f64) -> f64 {
    scratch_acc - fixed_acc
}

/// Activations after block `block_index` for every row of `data`.
///
/// `n_classes` of the result is one past the largest label.
pub fn extract_features(
    spec: &NetworkSpec,
    params: &ParamSet,
    data: &Batch,
    block_index: usize,
) -> Result<FeatureMatrix> {
    if block_index >= spec.n_blocks() {
        return Err(Error::InvalidArgument(format!(
            "block index {block_index} out of range for {} blocks",
            spec.n_blocks()
        )));
    }
    let (_, cache) = nn::forward(spec, params, &data.inputs)?;
    let features = cache
        .block_output(block_index)
        .expect("index checked")
        .clone();
    let n_classes = data.labels.iter().max().map_or(0, |m| m + 1);
    FeatureMatrix::new(features, data.labels.clone(), n_classes)
}

/// Output of the last hidden block.
pub fn penultimate_block(spec: &NetworkSpec) -> usize {
    spec.n_blocks() - 2
}

/// The three suitability measures for one source/target pair.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DomainMeasures {
    /// Top-1 of the full network trained from random initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scratch_top1: Option<f64>,
    /// Top-1 of a fresh classifier on frozen pre-trained features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher_ridge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emd_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emd_similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_block: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl DomainMeasures {
    /// Measures holding only the two probe accuracies and their gap.
    pub fn from_probes(scratch_top1: f64, fixed_top1: f64) -> Self {
        Self {
            scratch_top1: Some(scratch_top1),
            fixed_top1: Some(fixed_top1),
            gap: Some(transfer_gap(scratch_top1, fixed_top1)),
            ..Self::default()
        }
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Activation};

    fn fm(rows: Vec<Vec<f64>>, labels: Vec<usize>, c: usize) -> FeatureMatrix {
        FeatureMatrix::new(Tensor2D::from_rows(&rows).unwrap(), labels, c).unwrap()
    }

    #[test]
    fn centroids_of_singletons_are_the_samples() {
        let m = fm(vec![vec![1.0, 2.0], vec![3.0, -1.0]], vec![1, 0], 2);
        let (c, w) = class_centroids(&m).unwrap();
        assert_eq!(c.row(0), &[3.0, -1.0]);
        assert_eq!(c.row(1), &[1.0, 2.0]);
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn centroid_weights_count_samples() {
        let m = fm(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![9.0]],
            vec![0, 0, 0, 1],
            2,
        );
        let (c, w) = class_centroids(&m).unwrap();
        assert_eq!(w, vec![0.75, 0.25]);
        assert_eq!(c.row(0), &[1.0]);

        let doubled = fm(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![9.0], vec![0.0], vec![1.0], vec![2.0], vec![9.0]],
            vec![0, 0, 0, 1, 0, 0, 0, 1],
            2,
        );
        assert_eq!(class_centroids(&doubled).unwrap(), (c, w));
    }

    #[test]
    fn empty_class_rejected() {
        let m = fm(vec![vec![0.0]], vec![0], 2);
        assert!(class_centroids(&m).is_err());
    }

    #[test]
    fn similarity_endpoints() {
        let a = fm(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0, 1], 2);
        assert_eq!(domain_similarity(&a, &a, 0.5).unwrap(), 1.0);
        let b = fm(vec![vec![10.0, 0.0], vec![1.0, 11.0]], vec![0, 1], 2);
        assert_eq!(domain_similarity(&a, &b, 0.0).unwrap(), 1.0);
        assert!(domain_similarity(&a, &b, 0.1).unwrap() < 1.0);
        let c = fm(vec![vec![0.0], vec![1.0]], vec![0, 1], 2);
        assert!(domain_similarity(&a, &c, 0.1).is_err());
    }

    #[test]
    fn shifting_target_lowers_similarity() {
        let src = fm(
            vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]],
            vec![0, 1, 2],
            3,
        );
        let shift = |s: f64| {
            fm(
                (0..3).map(|i| src.features.row(i).iter().map(|v| v + s / 2f64.sqrt()).collect()).collect(),
                vec![0, 1, 2],
                3,
            )
        };
        // Translating every atom by v moves each unit of mass exactly |v|.
        let sims: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&s| domain_similarity(&src, &shift(s), DEFAULT_GAMMA).unwrap())
            .collect();
        for (s, &norm) in sims.iter().zip(&[0.5, 1.0, 2.0]) {
            assert!((s - (-DEFAULT_GAMMA * norm).exp()).abs() < 1e-12);
        }
        assert!(sims[0] > sims[1] && sims[1] > sims[2]);
    }

    #[test]
    fn gap_values() {
        assert!((transfer_gap(67.2, 83.4) - -16.2).abs() < 1e-9);
        assert!((transfer_gap(88.8, 59.9) - 28.9).abs() < 1e-9);
        assert_eq!(transfer_gap(50.0, 50.0), 0.0);
        assert_eq!(transfer_gap(3.0, 7.5), -transfer_gap(7.5, 3.0));
    }

    #[test]
    fn extract_features_by_block() {
        let spec = NetworkSpec::new(3, vec![4, 5], 2, Activation::Relu).unwrap();
        let params = init_params(&spec, 1);
        let row = vec![0.5, -0.2, 1.0];
        let data = Batch::new(Tensor2D::from_rows(&[row.clone(), row]).unwrap(), vec![0, 1]).unwrap();
        let logits = extract_features(&spec, &params, &data, 2).unwrap();
        assert_eq!(logits.features, nn::predict(&spec, &params, &data.inputs).unwrap());
        let pen = extract_features(&spec, &params, &data, penultimate_block(&spec)).unwrap();
        assert_eq!(pen.dim(), 5);
        assert_eq!(pen.features.row(0), pen.features.row(1));
        assert!(extract_features(&spec, &params, &data, 3).is_err());
    }

    #[test]
    fn measures_json_omits_absent_fields() {
        let m = DomainMeasures::from_probes(67.2, 83.4);
        let json = serde_json::to_string(&m).unwrap();
        assert!(!json.contains("fisher"));
        let back: DomainMeasures = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
