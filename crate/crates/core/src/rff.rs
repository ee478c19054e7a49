//! Random Fourier features shared by the server and every agent.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::fmt_num;
use crate::kernel::{KernelKind, KernelSpec};

/// Frequencies `w_s` (rows of `w`) and phases `b_s` of a feature map
/// `phi(z) = sqrt(2/D) (cos(<z, w_s> + b_s))_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct RffParams {
    w: DMatrix<f64>,
    b: DVector<f64>,
    kernel: KernelSpec,
    seed: u64,
}

impl RffParams {
    /// Draws `dim` features for `kernel` from a ChaCha20 stream seeded with
    /// `seed`: all of `W` row by row first, then the phases as `2 pi u` with
    /// `u ~ U[0, 1)`.
    pub fn sample(kernel: &KernelSpec, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("number of random features must be positive"));
        }
        let spectral = kernel.spectral_distribution()?;
        let sd = spectral.std_devs();
        let d = kernel.ambient_dim();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut w = DMatrix::zeros(dim, d);
        for s in 0..dim {
            for (j, sd_j) in sd.iter().enumerate() {
                let g: f64 = rng.sample(StandardNormal);
                w[(s, j)] = g * sd_j;
            }
        }
        let b = DVector::from_fn(dim, |_, _| 2.0 * PI * rng.random::<f64>());
        Ok(RffParams {
            w,
            b,
            kernel: kernel.clone(),
            seed,
        })
    }

    /// Builds parameters from explicit coefficients. `w` must be `D x d`.
    pub fn from_parts(kernel: KernelSpec, w: DMatrix<f64>, b: DVector<f64>, seed: u64) -> Result<Self> {
        check_dim(kernel.ambient_dim(), w.ncols())?;
        check_dim(w.nrows(), b.len())?;
        if w.nrows() == 0 {
            return Err(Error::input("number of random features must be positive"));
        }
        if let Some(bad) = b.iter().find(|p| !(0.0..2.0 * PI).contains(*p)) {
            return Err(Error::input(format!("phase {bad} outside [0, 2pi)")));
        }
        Ok(RffParams { w, b, kernel, seed })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.b
    }

    /// Number of scalars in `Gamma`: `D (d + 1)`.
    pub fn payload_len(&self) -> usize {
        self.dim() * (self.input_dim() + 1)
    }

    pub fn featurize(&self, z: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.input_dim(), z.len())?;
        let mut out = DVector::zeros(self.dim());
        self.featurize_into(z, out.as_mut_slice());
        Ok(out)
    }

    pub(crate) fn featurize_into(&self, z: &[f64], out: &mut [f64]) {
        let scale = (2.0 / self.dim() as f64).sqrt();
        for (s, o) in out.iter_mut().enumerate() {
            let mut arg = self.b[s];
            for (j, zj) in z.iter().enumerate() {
                arg += self.w[(s, j)] * zj;
            }
            *o = scale * arg.cos();
        }
    }

    /// Mean feature vector of `points`.
    pub fn mean_feature(&self, points: &[Vec<f64>]) -> Result<DVector<f64>> {
        if points.is_empty() {
            return Err(Error::input("cannot embed an empty sample"));
        }
        let mut acc = DVector::zeros(self.dim());
        let mut buf = vec![0.0; self.dim()];
        for z in points {
            check_dim(self.input_dim(), z.len())?;
            self.featurize_into(z, &mut buf);
            for (a, v) in acc.iter_mut().zip(&buf) {
                *a += v;
            }
        }
        Ok(acc / points.len() as f64)
    }

    /// Audit text format:
    ///
    /// ```text
    /// rff,<D>,<d>,<seed>
    /// scales,<a_1>,...,<a_d>
    /// w,<w_s1>,...,<w_sd>        (D lines)
    /// b,<b_1>,...,<b_D>
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let KernelKind::Gaussian { scales } = self.kernel.kind() else {
            unreachable!("rff parameters always carry a gaussian kernel");
        };
        let _ = writeln!(out, "rff,{},{},{}", self.dim(), self.input_dim(), self.seed);
        out.push_str("scales");
        for a in scales {
            let _ = write!(out, ",{}", fmt_num(*a));
        }
        out.push('\n');
        for row in self.w.row_iter() {
            out.push('w');
            for v in row.iter() {
                let _ = write!(out, ",{}", fmt_num(*v));
            }
            out.push('\n');
        }
        out.push('b');
        for v in self.b.iter() {
            let _ = write!(out, ",{}", fmt_num(*v));
        }
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        fn bad(msg: &str) -> Error {
            Error::input(format!("malformed rff text: {msg}"))
        }
        fn nums<'a>(fields: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
            fields
                .map(|f| f.trim().parse::<f64>().map_err(|_| bad(&format!("not a number: '{f}'"))))
                .collect()
        }
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split(',').collect();
        if header.len() != 4 || header[0] != "rff" {
            return Err(bad("header"));
        }
        let parse_usize = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("header"));
        let dim = parse_usize(header[1])?;
        let d = parse_usize(header[2])?;
        let seed = header[3].trim().parse::<u64>().map_err(|_| bad("header"))?;

        let mut tagged = |tag: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            let mut f = line.split(',');
            if f.next() != Some(tag) {
                return Err(bad(&format!("expected '{tag}' line")));
            }
            nums(f)
        };
        let scales = tagged("scales")?;
        check_dim(d, scales.len())?;
        let mut w = DMatrix::zeros(dim, d);
        for s in 0..dim {
            let row = tagged("w")?;
            check_dim(d, row.len())?;
            for (j, v) in row.into_iter().enumerate() {
                w[(s, j)] = v;
            }
        }
        let b = tagged("b")?;
        check_dim(dim, b.len())?;
        let kernel = KernelSpec::gaussian(scales)?;
        Self::from_parts(kernel, w, DVector::from_vec(b), seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn deterministic_in_seed() {
        let k = KernelSpec::isotropic(3, 1.0).unwrap();
        let a = RffParams::sample(&k, 500, 7).unwrap();
        let b = RffParams::sample(&k, 500, 7).unwrap();
        assert_eq!(a, b);
        let c = RffParams::sample(&k, 500, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn phases_in_half_open_interval() {
        let k = KernelSpec::isotropic(2, 1.0).unwrap();
        let p = RffParams::sample(&k, 5000, 3).unwrap();
        assert!(p.phases().iter().all(|b| (0.0..2.0 * PI).contains(b)));
    }

    #[test]
    fn frequency_moments() {
        let k = KernelSpec::isotropic(1, 1.0).unwrap();
        let p = RffParams::sample(&k, 100_000, 11).unwrap();
        let w = p.frequencies();
        let mean = w.mean();
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn weighted_frequencies_follow_spectral_variances() {
        let k = KernelSpec::label_weighted(3).unwrap();
        let p = RffParams::sample(&k, 50_000, 5).unwrap();
        let w = p.frequencies();
        for (j, expected) in [0.25, 0.25, 0.25, 1.0].iter().enumerate() {
            let col = w.column(j);
            let var = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
            assert!((var - expected).abs() < 0.03 * expected, "column {j}: {var}");
        }
    }

    #[test]
    fn poly2_is_rejected() {
        let k = KernelSpec::poly2(2).unwrap();
        assert!(matches!(RffParams::sample(&k, 10, 0), Err(Error::UnsupportedKernel(_))));
    }

    #[test]
    fn single_zero_feature() {
        let k = KernelSpec::isotropic(2, 1.0).unwrap();
        let p = RffParams::from_parts(k, DMatrix::zeros(1, 2), DVector::zeros(1), 0).unwrap();
        let phi = p.featurize(&[3.0, -1.5]).unwrap();
        assert_eq!(phi.as_slice(), &[2f64.sqrt()]);
    }

    #[test]
    fn feature_norm_bounded() {
        let k = KernelSpec::isotropic(3, 0.5).unwrap();
        let p = RffParams::sample(&k, 64, 1).unwrap();
        let mut rng = crate::rng::stream(0, 0, "t");
        for _ in 0..200 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let phi = p.featurize(&z).unwrap();
            let bound = (2.0 / 64f64).sqrt();
            assert!(phi.iter().all(|v| v.abs() <= bound + 1e-15));
            assert!(phi.norm() <= 2f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn inner_product_matches_kernel_in_expectation() {
        let k = KernelSpec::isotropic(3, 1.0).unwrap();
        let z = [0.3, -0.2, 0.5];
        let w = [-0.4, 0.1, 0.9];
        let p = RffParams::sample(&k, 10_000, 21).unwrap();
        let approx = p.featurize(&z).unwrap().dot(&p.featurize(&w).unwrap());
        let exact = k.eval(&z, &w).unwrap();
        assert!((approx - exact).abs() < 0.05, "{approx} vs {exact}");
    }

    #[test]
    fn dimension_mismatch() {
        let k = KernelSpec::isotropic(3, 1.0).unwrap();
        let p = RffParams::sample(&k, 4, 1).unwrap();
        assert!(matches!(p.featurize(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let k = KernelSpec::label_weighted(2).unwrap();
        let p = RffParams::sample(&k, 17, 99).unwrap();
        let back = RffParams::from_text(&p.to_text()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn text_rejects_garbage() {
        assert!(RffParams::from_text("rff,1,1,0\nscales,1\nw,abc\nb,0\n").is_err());
        assert!(RffParams::from_text("").is_err());
    }
}
