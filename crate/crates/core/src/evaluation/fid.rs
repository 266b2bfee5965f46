//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Mean and `(n - 1)`-normalized covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    count: usize,
}

impl FeatureStats {
    /// Validate externally supplied statistics.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::shape(format!(
                "{d}-dim mean with a {}x{} covariance",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-6 {
            return Err(Error::invalid(format!("covariance is not symmetric (off by {asym})")));
        }
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if d > 0 && min_eig < -1e-6 {
            return Err(Error::invalid(format!(
                "covariance is not positive semidefinite (eigenvalue {min_eig})"
            )));
        }
        Ok(FeatureStats {
            mean: DVector::from_vec(mean),
            cov,
            count,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Streaming mean/covariance (Welford), accumulated in sample order.
#[derive(Clone, Debug)]
pub struct StatsAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    delta: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        StatsAccumulator {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim * dim],
            delta: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f32]) -> Result<()> {
        let d = self.mean.len();
        if x.len() != d {
            return Err(Error::shape(format!("{}-dim feature for {d}-dim statistics", x.len())));
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..d {
            self.delta[i] = x[i] as f64 - self.mean[i];
            self.mean[i] += self.delta[i] / n;
        }
        // m2 += delta_old * delta_new^T; only the upper triangle is kept.
        for i in 0..d {
            let di = self.delta[i];
            let row = &mut self.m2[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += di * (x[j] as f64 - self.mean[j]);
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<FeatureStats> {
        if self.count < 2 {
            return Err(Error::invalid(format!(
                "feature statistics need at least 2 samples, got {}",
                self.count
            )));
        }
        let d = self.mean.len();
        let denom = (self.count - 1) as f64;
        let cov = DMatrix::from_fn(d, d, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.m2[a * d + b] / denom
        });
        Ok(FeatureStats {
            mean: DVector::from_vec(self.mean.clone()),
            cov,
            count: self.count,
        })
    }
}

pub fn feature_stats<F: AsRef<[f32]>>(features: &[F]) -> Result<FeatureStats> {
    let dim = features.first().map_or(0, |f| f.as_ref().len());
    let mut acc = StatsAccumulator::new(dim);
    for f in features {
        acc.push(f.as_ref())?;
    }
    acc.finish()
}

/// Square root of a symmetric PSD matrix, negative eigenvalues clamped.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of the cross term is taken from the eigenvalues of the
/// symmetric matrix `S_a^(1/2) S_b S_a^(1/2)`, which has the same spectrum
/// as `S_a S_b`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{}-dim vs {}-dim statistics", a.dim(), b.dim())));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let root_a = sqrt_psd(&a.cov);
    let inner = &root_a * &b.cov * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner).eigenvalues;
    let scale = eig.amax().max(1.0);
    let mut cross = 0.0;
    for &l in eig.iter() {
        if l < -1e-10 * scale {
            log::debug!("clamping eigenvalue {l} of the covariance product");
        }
        cross += l.max(0.0).sqrt();
    }
    // Square roots of near-zero eigenvalues can push equal inputs a hair
    // below zero.
    Ok((diff + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}
