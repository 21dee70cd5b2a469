use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use super::features::FeatureSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FidError {
    #[error("need at least {needed} feature vectors, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("feature dimensions differ ({0} vs {1})")]
    DimMismatch(usize, usize),
    #[error("covariance is not positive semi-definite (eigenvalue {0:e})")]
    NonPSDCovariance(f64),
    #[error("non-finite value in features")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FidOptions {
    /// Use a diagonal covariance when there are fewer than `dim + 1` samples.
    pub diagonal_fallback: bool,
}

/// Mean and covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, FidError> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(FidError::DimMismatch(mean.len(), cov.nrows()));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(FidError::NonFinite);
        }
        Ok(Self { mean, cov })
    }

    /// Sample mean and unbiased covariance.
    pub fn from_features(set: &FeatureSet, opts: FidOptions) -> Result<Self, FidError> {
        let (n, d) = (set.len(), set.dim());
        let diagonal = n < d + 1;
        if diagonal && !(opts.diagonal_fallback && n >= 2) {
            let needed = if opts.diagonal_fallback { 2 } else { d + 1 };
            return Err(FidError::TooFewSamples { needed, got: n });
        }
        if set.values().iter().any(|v| !v.is_finite()) {
            return Err(FidError::NonFinite);
        }
        let data = DMatrix::from_row_slice(n, d, set.values());
        let mean = DVector::from_iterator(d, data.column_iter().map(|c| c.mean()));
        let mut centered = data;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
        if diagonal {
            cov = DMatrix::from_diagonal(&cov.diagonal());
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn eigen_tolerance(values: &DVector<f64>) -> f64 {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    1e-8 * scale
}

/// Symmetric square root, clamping slightly negative eigenvalues to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, FidError> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let tol = eigen_tolerance(&eig.eigenvalues);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -tol {
            return Err(FidError::NonPSDCovariance(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, with the trace of
/// the cross term taken from the eigenvalues of `S_a^(1/2) S_b S_a^(1/2)`.
pub fn frechet_distance_from_stats(a: &GaussianStats, b: &GaussianStats) -> Result<f64, FidError> {
    if a.dim() != b.dim() {
        return Err(FidError::DimMismatch(a.dim(), b.dim()));
    }
    let diff = &a.mean - &b.mean;
    let sqrt_a = psd_sqrt(&a.cov)?;
    // Reject a non-PSD second covariance up front too.
    psd_sqrt(&b.cov)?;
    let inner = &sqrt_a * &b.cov * &sqrt_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner).eigenvalues;
    let tol = eigen_tolerance(&eig);
    let mut tr_cross = 0.0;
    for &v in eig.iter() {
        if v < -tol {
            return Err(FidError::NonPSDCovariance(v));
        }
        tr_cross += v.max(0.0).sqrt();
    }
    let d = diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * tr_cross;
    Ok(d.max(0.0))
}

pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet, opts: FidOptions) -> Result<f64, FidError> {
    if a.dim() != b.dim() {
        return Err(FidError::DimMismatch(a.dim(), b.dim()));
    }
    let sa = GaussianStats::from_features(a, opts)?;
    let sb = GaussianStats::from_features(b, opts)?;
    frechet_distance_from_stats(&sa, &sb)
}

#[cfg(test)]
mod tests {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use super::*;

    fn random_set(rng: &mut StdRng, n: usize, d: usize, shift: f64) -> FeatureSet {
        let values = (0..n * d).map(|_| rng.random_range(-1.0..1.0) + shift).collect();
        FeatureSet::new(d, values).unwrap()
    }

    #[test]
    fn identical_sets_are_zero() {
        let mut rng = StdRng::seed_from_u64(1);
        let a = random_set(&mut rng, 50, 8, 0.0);
        assert!(frechet_distance(&a, &a, FidOptions::default()).unwrap() < 1e-6);
    }

    #[test]
    fn univariate_closed_form() {
        let a = GaussianStats::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let b = GaussianStats::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((frechet_distance_from_stats(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = GaussianStats::new(DVector::from_element(1, 3.0), DMatrix::from_element(1, 1, 4.0)).unwrap();
        // (0 - 3)^2 + (1 - 2)^2
        assert!((frechet_distance_from_stats(&a, &c).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_translation_invariant() {
        let mut rng = StdRng::seed_from_u64(2);
        let a = random_set(&mut rng, 40, 4, 0.0);
        let b = random_set(&mut rng, 40, 4, 0.3);
        let ab = frechet_distance(&a, &b, FidOptions::default()).unwrap();
        let ba = frechet_distance(&b, &a, FidOptions::default()).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        let shift = |s: &FeatureSet| FeatureSet::new(4, s.values().iter().map(|v| v + 5.0).collect()).unwrap();
        let shifted = frechet_distance(&shift(&a), &shift(&b), FidOptions::default()).unwrap();
        assert!((ab - shifted).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples() {
        let mut rng = StdRng::seed_from_u64(3);
        let a = random_set(&mut rng, 3, 4, 0.0);
        assert!(matches!(
            frechet_distance(&a, &a, FidOptions::default()),
            Err(FidError::TooFewSamples { needed: 5, got: 3 })
        ));
        let opts = FidOptions { diagonal_fallback: true };
        assert!(frechet_distance(&a, &a, opts).unwrap() < 1e-9);
    }

    #[test]
    fn non_psd_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let bad = GaussianStats::new(DVector::zeros(2), m).unwrap();
        let good = GaussianStats::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(
            frechet_distance_from_stats(&good, &bad),
            Err(FidError::NonPSDCovariance(_))
        ));
    }
}
