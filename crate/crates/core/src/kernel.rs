//! Kernels on `R^d`: pointwise evaluation, the bound `sup sqrt(k(z, z))` and
//! the spectral law used to draw random Fourier features.
//!
//! Gaussian kernels carry a diagonal scale vector `a` and evaluate
//!
//! ```text
//! k(z, z') = exp(-sum_j a_j (z_j - z'_j)^2)
//! ```
//!
//! By Bochner's theorem the matching frequency distribution is the centered
//! Gaussian `N(0, diag(2a))`, so a kernel with spectral law `N(0, diag(v))`
//! has scales `a = v / 2` (the isotropic `exp(-|z - z'|^2 / 2)` has `N(0, I)`).

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelKind {
    /// Weighted Gaussian with diagonal scales `a`, all strictly positive.
    Gaussian { scales: Vec<f64> },
    /// `(<z, z'> + 1)^2`.
    Poly2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    kind: KernelKind,
    ambient_dim: usize,
}

impl KernelSpec {
    pub fn gaussian(scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::input("gaussian kernel needs at least one scale"));
        }
        if let Some(bad) = scales.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::input(format!(
                "gaussian kernel scales must be positive and finite, got {bad}"
            )));
        }
        let ambient_dim = scales.len();
        Ok(KernelSpec {
            kind: KernelKind::Gaussian { scales },
            ambient_dim,
        })
    }

    /// `exp(-|z - z'|^2 / (2 bandwidth^2))`.
    pub fn isotropic(dim: usize, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::input(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Self::gaussian(vec![1.0 / (2.0 * bandwidth * bandwidth); dim])
    }

    /// Gaussian kernel whose frequency law is `N(0, diag(variances))`.
    pub fn from_spectral_variances(variances: &[f64]) -> Result<Self> {
        Self::gaussian(variances.iter().map(|v| v / 2.0).collect())
    }

    /// Kernel on `(x, y)` tuples with `x` in `R^d` that down-weights the
    /// features: frequencies `N(0, diag(I_d / (d + 1), 1))`.
    pub fn label_weighted(feature_dim: usize) -> Result<Self> {
        let mut v = vec![1.0 / (feature_dim as f64 + 1.0); feature_dim];
        v.push(1.0);
        Self::from_spectral_variances(&v)
    }

    pub fn poly2(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("kernel dimension must be positive"));
        }
        Ok(KernelSpec {
            kind: KernelKind::Poly2,
            ambient_dim: dim,
        })
    }

    /// Isotropic Gaussian with the bandwidth set to the median pairwise
    /// distance of `points`.
    pub fn median_heuristic(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::input("median heuristic needs at least two points"))?;
        let mut dists = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
        for (i, p) in points.iter().enumerate() {
            check_dim(dim, p.len())?;
            for q in &points[i + 1..] {
                let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                dists.push(d2.sqrt());
            }
        }
        if dists.is_empty() {
            return Err(Error::input("median heuristic needs at least two points"));
        }
        dists.sort_by(f64::total_cmp);
        let median = dists[dists.len() / 2];
        if median <= 0.0 {
            return Err(Error::input("median pairwise distance is zero"));
        }
        Self::isotropic(dim, median)
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn is_translation_invariant(&self) -> bool {
        matches!(self.kind, KernelKind::Gaussian { .. })
    }

    pub fn eval(&self, z: &[f64], z2: &[f64]) -> Result<f64> {
        check_dim(self.ambient_dim, z.len())?;
        check_dim(self.ambient_dim, z2.len())?;
        Ok(self.eval_unchecked(z, z2))
    }

    pub(crate) fn eval_unchecked(&self, z: &[f64], z2: &[f64]) -> f64 {
        match &self.kind {
            KernelKind::Gaussian { scales } => {
                let mut s = 0.0;
                for ((a, u), v) in scales.iter().zip(z).zip(z2) {
                    let d = u - v;
                    s += a * d * d;
                }
                (-s).exp()
            }
            KernelKind::Poly2 => {
                let mut s = 0.0;
                for (u, v) in z.iter().zip(z2) {
                    s += u * v;
                }
                (s + 1.0) * (s + 1.0)
            }
        }
    }

    /// `M = sup sqrt(k(z, z))`. Gaussian kernels are bounded by one; for the
    /// polynomial kernel the supremum is taken over `data`.
    pub fn bound(&self, data: Option<&[Vec<f64>]>) -> Result<f64> {
        match &self.kind {
            KernelKind::Gaussian { .. } => Ok(1.0),
            KernelKind::Poly2 => {
                let data = data
                    .filter(|d| !d.is_empty())
                    .ok_or_else(|| Error::input("poly2 kernel bound requires data"))?;
                let mut m: f64 = 0.0;
                for z in data {
                    m = m.max(self.eval(z, z)?.sqrt());
                }
                Ok(m)
            }
        }
    }

    pub fn spectral_distribution(&self) -> Result<SpectralDistribution> {
        match &self.kind {
            KernelKind::Gaussian { scales } => Ok(SpectralDistribution {
                variances: scales.iter().map(|a| 2.0 * a).collect(),
            }),
            KernelKind::Poly2 => Err(Error::UnsupportedKernel(
                "poly2 kernel is not translation invariant".into(),
            )),
        }
    }
}

/// Centered Gaussian with diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDistribution {
    pub variances: Vec<f64>,
}

impl SpectralDistribution {
    pub fn std_devs(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.sqrt()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn gaussian_diagonal_is_one() {
        let k = KernelSpec::gaussian(vec![0.3, 2.0, 7.0]).unwrap();
        assert_eq!(k.eval(&[1.0, -2.0, 5.0], &[1.0, -2.0, 5.0]).unwrap(), 1.0);
    }

    #[test]
    fn poly2_at_origin() {
        let k = KernelSpec::poly2(2).unwrap();
        assert_eq!(k.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn weighted_gaussian_value() {
        // d = 1: a = (1/sqrt(2), 1), offsets (1, 1) -> exp(-1/sqrt(2) - 1)
        let k = KernelSpec::gaussian(vec![1.0 / 2f64.sqrt(), 1.0]).unwrap();
        let v = k.eval(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(close(v, (-1.0 / 2f64.sqrt() - 1.0).exp(), 1e-15));
        assert!(close(v, 0.181390, 5e-6));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let k = KernelSpec::poly2(2).unwrap();
        assert!(matches!(
            k.eval(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_positive_scales() {
        assert!(KernelSpec::gaussian(vec![1.0, 0.0]).is_err());
        assert!(KernelSpec::gaussian(vec![-1.0]).is_err());
    }

    #[test]
    fn bounds() {
        let g = KernelSpec::isotropic(3, 1.0).unwrap();
        assert_eq!(g.bound(None).unwrap(), 1.0);
        let p = KernelSpec::poly2(2).unwrap();
        assert_eq!(p.bound(Some(&[vec![0.0, 0.0]])).unwrap(), 1.0);
        assert_eq!(p.bound(Some(&[vec![1.0, 1.0]])).unwrap(), 3.0);
        assert!(p.bound(None).is_err());
    }

    #[test]
    fn spectral_laws() {
        let iso = KernelSpec::isotropic(4, 1.0).unwrap();
        assert_eq!(iso.spectral_distribution().unwrap().variances, vec![1.0; 4]);

        let d = 20;
        let w = KernelSpec::label_weighted(d).unwrap();
        let v = w.spectral_distribution().unwrap().variances;
        for x in &v[..d] {
            assert!(close(*x, 1.0 / 21.0, 1e-15));
        }
        assert_eq!(v[d], 1.0);

        assert!(matches!(
            KernelSpec::poly2(2).unwrap().spectral_distribution(),
            Err(Error::UnsupportedKernel(_))
        ));
    }

    #[test]
    fn median_heuristic_uses_median_distance() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0]];
        // distances 1, 3, 2 -> median 2 -> a = 1 / 8
        let k = KernelSpec::median_heuristic(&pts).unwrap();
        assert_eq!(k.kind(), &KernelKind::Gaussian { scales: vec![0.125] });
    }

    fn kernels(dim: usize) -> Vec<KernelSpec> {
        vec![
            KernelSpec::gaussian((0..dim).map(|j| 0.2 + j as f64 * 0.5).collect()).unwrap(),
            KernelSpec::poly2(dim).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn symmetric_bit_identical(
            z in prop::collection::vec(-5.0f64..5.0, 3),
            w in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            for k in kernels(3) {
                prop_assert_eq!(k.eval(&z, &w).unwrap().to_bits(), k.eval(&w, &z).unwrap().to_bits());
            }
        }

        #[test]
        fn gaussian_in_unit_interval(
            z in prop::collection::vec(-5.0f64..5.0, 3),
            w in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let k = KernelSpec::isotropic(3, 2.0).unwrap();
            let v = k.eval(&z, &w).unwrap();
            prop_assert!(v > 0.0 && v <= 1.0);
        }

        #[test]
        fn gram_is_psd(pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 1..20)) {
            for k in kernels(2) {
                let n = pts.len();
                let g = DMatrix::from_fn(n, n, |i, j| k.eval(&pts[i], &pts[j]).unwrap());
                let min = g.symmetric_eigenvalues().min();
                prop_assert!(min >= -1e-8, "min eigenvalue {}", min);
            }
        }
    }
}
