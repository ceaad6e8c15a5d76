//! Class-normalized Fisher score `Tr{(S_w + eps I)^-1 S_B} / N_c`.
//!
//! Both scatter matrices use 1/n normalization; the between-class scatter
//! weights each class mean by its sample count.

use nalgebra::{DMatrix, DVector};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Within-class and between-class scatter matrices.
pub fn scatter_matrices(fm: &FeatureMatrix) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    fm.require_all_classes()?;
    let d = fm.dim();
    let n = fm.len() as f64;
    let (centroids, weights) = super::class_centroids(fm)?;
    let global = DVector::from_iterator(
        d,
        (0..d).map(|j| (0..fm.len()).map(|i| fm.features.get(i, j)).sum::<f64>() / n),
    );

    let mut s_w = DMatrix::<f64>::zeros(d, d);
    for (i, &label) in fm.labels.iter().enumerate() {
        let diff = DVector::from_iterator(
            d,
            fm.features
                .row(i)
                .iter()
                .zip(centroids.row(label))
                .map(|(x, m)| x - m),
        );
        s_w.ger(1.0, &diff, &diff, 1.0);
    }
    s_w /= n;

    let mut s_b = DMatrix::<f64>::zeros(d, d);
    for (c, &w) in weights.iter().enumerate() {
        let diff = DVector::from_row_slice(centroids.row(c)) - &global;
        s_b.ger(w, &diff, &diff, 1.0);
    }
    Ok((s_w, s_b))
}

/// Ridge of `1e-6 * trace(S_w) / d`.
pub fn default_ridge(fm: &FeatureMatrix) -> Result<f64> {
    let (s_w, _) = scatter_matrices(fm)?;
    Ok(1e-6 * s_w.trace() / fm.dim() as f64)
}

pub fn fisher_score(fm: &FeatureMatrix, eps: f64) -> Result<f64> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {eps}")));
    }
    let (s_w, s_b) = scatter_matrices(fm)?;
    let d = fm.dim();
    let a = s_w + DMatrix::<f64>::identity(d, d) * eps;
    let eig = a.clone().symmetric_eigenvalues();
    let smallest = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let largest = eig.iter().copied().fold(0.0, f64::max);
    if smallest.is_nan() || smallest <= 1e-12 * largest.max(f64::MIN_POSITIVE) {
        return Err(Error::Conditioning {
            smallest_eigenvalue: smallest,
        });
    }
    let chol = a.cholesky().ok_or(Error::Conditioning {
        smallest_eigenvalue: smallest,
    })?;
    let x = chol.solve(&s_b);
    Ok((x.trace() / fm.n_classes as f64).max(0.0))
}

/// Fisher score with the default ridge.
pub fn fisher_score_default(fm: &FeatureMatrix) -> Result<f64> {
    fisher_score(fm, default_ridge(fm)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor2D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn fm(rows: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> FeatureMatrix {
        FeatureMatrix::new(Tensor2D::from_rows(&rows).unwrap(), labels, n_classes).unwrap()
    }

    #[test]
    fn one_dimensional_hand_case() {
        // S_w = ((1 + 1) + (1 + 1)) / 4 = 1; means 0 and 4 around 2 give S_B = 4.
        let m = fm(vec![vec![-1.0], vec![1.0], vec![3.0], vec![5.0]], vec![0, 0, 1, 1], 2);
        let (s_w, s_b) = scatter_matrices(&m).unwrap();
        assert_eq!(s_w[(0, 0)], 1.0);
        assert_eq!(s_b[(0, 0)], 4.0);
        assert_eq!(fisher_score(&m, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn coincident_means_give_zero() {
        let m = fm(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
            vec![0, 0, 1, 1],
            2,
        );
        assert_eq!(fisher_score(&m, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn singular_scatter_rejected() {
        // Second coordinate is constant so S_w is rank one.
        let m = fm(
            vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![3.0, 1.0], vec![4.0, 1.0]],
            vec![0, 0, 1, 1],
            2,
        );
        assert!(matches!(fisher_score(&m, 0.0), Err(Error::Conditioning { .. })));
        assert!(fisher_score(&m, default_ridge(&m).unwrap()).is_ok());
    }

    #[test]
    fn empty_class_rejected() {
        let m = fm(vec![vec![0.0], vec![1.0]], vec![0, 0], 2);
        assert!(fisher_score(&m, 0.0).is_err());
    }

    fn random_fm(seed: u64, n: usize, d: usize, c: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..d).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let rows = labels
            .iter()
            .map(|&l| means[l].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        fm(rows, labels, c)
    }

    #[test]
    fn invariant_under_invertible_linear_map() {
        for seed in 0..5 {
            let m = random_fm(seed, 60, 4, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            // Diagonally dominant, hence invertible and well conditioned.
            let mut a = DMatrix::<f64>::from_fn(4, 4, |_, _| rng.random_range(-0.5..0.5));
            for i in 0..4 {
                a[(i, i)] += 3.0;
            }
            let rows: Vec<Vec<f64>> = (0..m.len())
                .map(|i| (&a * DVector::from_row_slice(m.features.row(i))).iter().copied().collect())
                .collect();
            let mapped = fm(rows, m.labels.clone(), 3);
            let f0 = fisher_score(&m, 0.0).unwrap();
            let f1 = fisher_score(&mapped, 0.0).unwrap();
            assert!((f0 - f1).abs() < 1e-8, "{f0} vs {f1}");
        }
    }

    #[test]
    fn invariant_under_label_permutation() {
        let m = random_fm(7, 45, 3, 3);
        let perm = [2, 0, 1];
        let relabeled = fm(
            (0..m.len()).map(|i| m.features.row(i).to_vec()).collect(),
            m.labels.iter().map(|&l| perm[l]).collect(),
            3,
        );
        let a = fisher_score(&m, 0.0).unwrap();
        let b = fisher_score(&relabeled, 0.0).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
