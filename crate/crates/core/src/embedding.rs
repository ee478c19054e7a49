//! Empirical kernel mean embeddings and the statistics Q-aggregation needs.
//!
//! Three interchangeable representations are supported:
//!
//! * random Fourier features: the mean feature vector in `R^D`;
//! * the degree-2 polynomial kernel: the sample mean and uncentered second
//!   moment, from which `<mu_k, mu_l> = 1 + 2 <m_k, m_l> + tr(C_k C_l)`;
//! * exact kernels: a handle on the raw sample, with inner products as
//!   averaged double sums. This mode needs raw cross-agent data and is meant
//!   for centralized use and as a test oracle.
//!
//! Per-point statistics of the target sample (covariance trace, `q_k`) are
//! computed in feature space for RFF and for the polynomial kernel (through
//! the explicit lift `z -> (1, sqrt2 z, vech(z z^T))` with `sqrt2` on the
//! off-diagonal entries), and through kernel expansions in exact mode.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::AgentDataset;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{KernelKind, KernelSpec};
use crate::rff::RffParams;

/// Which columns of a labelled dataset enter the embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    FullTuple,
    FeaturesOnly,
}

#[derive(Clone, Copy, Debug)]
pub enum EmbedMode<'a> {
    Rff(&'a RffParams),
    Poly2,
    Exact(&'a KernelSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Representation {
    RffVector { v: DVector<f64>, seed: u64 },
    Poly2Summary { mean: DVector<f64>, second_moment: DMatrix<f64> },
    ExactHandle { points: Arc<Vec<Vec<f64>>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    repr: Representation,
    n: usize,
    kernel: KernelSpec,
}

pub fn embed(dataset: &AgentDataset, mode: EmbedMode<'_>, scope: Scope) -> Result<Embedding> {
    let points = dataset.points(scope)?;
    embed_points(points, mode)
}

pub fn embed_points(points: Vec<Vec<f64>>, mode: EmbedMode<'_>) -> Result<Embedding> {
    if points.is_empty() {
        return Err(Error::input("cannot embed an empty dataset"));
    }
    let n = points.len();
    let dim = points[0].len();
    for p in &points {
        check_dim(dim, p.len())?;
    }
    match mode {
        EmbedMode::Rff(params) => {
            check_dim(params.input_dim(), dim)?;
            let v = params.mean_feature(&points)?;
            Ok(Embedding {
                repr: Representation::RffVector { v, seed: params.seed() },
                n,
                kernel: params.kernel().clone(),
            })
        }
        EmbedMode::Poly2 => {
            let mut mean = DVector::zeros(dim);
            let mut second = DMatrix::zeros(dim, dim);
            for p in &points {
                let z = DVector::from_column_slice(p);
                mean += &z;
                second += &z * z.transpose();
            }
            mean /= n as f64;
            second /= n as f64;
            Ok(Embedding {
                repr: Representation::Poly2Summary {
                    mean,
                    second_moment: second,
                },
                n,
                kernel: KernelSpec::poly2(dim)?,
            })
        }
        EmbedMode::Exact(kernel) => {
            check_dim(kernel.ambient_dim(), dim)?;
            Ok(Embedding {
                repr: Representation::ExactHandle {
                    points: Arc::new(points),
                },
                n,
                kernel: kernel.clone(),
            })
        }
    }
}

impl Embedding {
    /// Polynomial embedding of a distribution given its first two moments,
    /// e.g. an analytic population. `n` is informational only.
    pub fn from_poly2_moments(mean: DVector<f64>, second_moment: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        check_dim(d, second_moment.nrows())?;
        check_dim(d, second_moment.ncols())?;
        Ok(Embedding {
            repr: Representation::Poly2Summary { mean, second_moment },
            n,
            kernel: KernelSpec::poly2(d)?,
        })
    }

    pub fn representation(&self) -> &Representation {
        &self.repr
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// Number of scalars needed to transmit this embedding.
    pub fn payload_len(&self) -> usize {
        match &self.repr {
            Representation::RffVector { v, .. } => v.len(),
            Representation::Poly2Summary { mean, .. } => {
                let d = mean.len();
                d + d * (d + 1) / 2
            }
            Representation::ExactHandle { points } => points.len() * points[0].len(),
        }
    }

    /// The embedding as a vector of the finite feature space, if there is one.
    pub fn feature_vector(&self) -> Option<DVector<f64>> {
        match &self.repr {
            Representation::RffVector { v, .. } => Some(v.clone()),
            Representation::Poly2Summary { mean, second_moment } => Some(lift_moments(mean, second_moment)),
            Representation::ExactHandle { .. } => None,
        }
    }

    fn check_compatible(&self, other: &Embedding) -> Result<()> {
        if self.kernel != other.kernel {
            return Err(Error::RepresentationMismatch("embeddings use different kernels".into()));
        }
        match (&self.repr, &other.repr) {
            (Representation::RffVector { v: a, seed: sa }, Representation::RffVector { v: b, seed: sb }) => {
                if sa != sb || a.len() != b.len() {
                    return Err(Error::RepresentationMismatch(
                        "random features drawn from different coefficients".into(),
                    ));
                }
                Ok(())
            }
            (Representation::Poly2Summary { .. }, Representation::Poly2Summary { .. })
            | (Representation::ExactHandle { .. }, Representation::ExactHandle { .. }) => Ok(()),
            _ => Err(Error::RepresentationMismatch("different embedding representations".into())),
        }
    }
}

/// `<mu_a, mu_b>` in the RKHS (or its RFF approximation).
pub fn kme_inner(a: &Embedding, b: &Embedding) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(match (&a.repr, &b.repr) {
        (Representation::RffVector { v: va, .. }, Representation::RffVector { v: vb, .. }) => va.dot(vb),
        (
            Representation::Poly2Summary {
                mean: ma,
                second_moment: ca,
            },
            Representation::Poly2Summary {
                mean: mb,
                second_moment: cb,
            },
        ) => {
            // tr(C_a C_b) with both symmetric is the Frobenius product
            1.0 + 2.0 * ma.dot(mb) + ca.dot(&cb.transpose())
        }
        (Representation::ExactHandle { points: pa }, Representation::ExactHandle { points: pb }) => {
            let mut s = 0.0;
            for z in pa.iter() {
                for w in pb.iter() {
                    s += a.kernel.eval_unchecked(z, w);
                }
            }
            s / (pa.len() as f64 * pb.len() as f64)
        }
        _ => unreachable!("compatibility checked above"),
    })
}

fn clamp_squared_distance(value: f64, scale: f64) -> Result<f64> {
    let tol = 1e-10 * scale.max(1.0);
    if value < -tol {
        return Err(Error::Inconsistent(format!(
            "squared MMD evaluated to {value}; inner products are not positive semi-definite"
        )));
    }
    Ok(value.max(0.0))
}

/// Squared MMD between two embeddings, clamped at zero.
pub fn mmd2(a: &Embedding, b: &Embedding) -> Result<f64> {
    let aa = kme_inner(a, a)?;
    let ab = kme_inner(a, b)?;
    let bb = kme_inner(b, b)?;
    clamp_squared_distance(aa - 2.0 * ab + bb, aa.abs() + bb.abs())
}

/// `|| sum_k w_k mu_k - mu_target ||^2` by bilinear expansion.
pub fn mmd2_mixture(weights: &[f64], embs: &[Embedding], target: &Embedding) -> Result<f64> {
    check_dim(embs.len(), weights.len())?;
    let mut quad = 0.0;
    let mut cross = 0.0;
    let mut scale = 0.0;
    for (k, ek) in embs.iter().enumerate() {
        if weights[k] == 0.0 {
            continue;
        }
        for (l, el) in embs.iter().enumerate() {
            if weights[l] == 0.0 {
                continue;
            }
            let g = kme_inner(ek, el)?;
            quad += weights[k] * weights[l] * g;
            scale += (weights[k] * weights[l] * g).abs();
        }
        cross += weights[k] * kme_inner(ek, target)?;
    }
    let tt = kme_inner(target, target)?;
    clamp_squared_distance(quad - 2.0 * cross + tt, scale + tt.abs())
}

/// Explicit feature map of `(<z, z'> + 1)^2`.
pub fn poly2_lift(z: &[f64]) -> DVector<f64> {
    let d = z.len();
    let mut out = Vec::with_capacity(1 + d + d * (d + 1) / 2);
    out.push(1.0);
    out.extend(z.iter().map(|v| std::f64::consts::SQRT_2 * v));
    for i in 0..d {
        for j in i..d {
            let p = z[i] * z[j];
            out.push(if i == j { p } else { std::f64::consts::SQRT_2 * p });
        }
    }
    DVector::from_vec(out)
}

/// Mean of [`poly2_lift`] over a sample with the given moments.
pub fn lift_moments(mean: &DVector<f64>, second: &DMatrix<f64>) -> DVector<f64> {
    let d = mean.len();
    let mut out = Vec::with_capacity(1 + d + d * (d + 1) / 2);
    out.push(1.0);
    out.extend(mean.iter().map(|v| std::f64::consts::SQRT_2 * v));
    for i in 0..d {
        for j in i..d {
            let p = second[(i, j)];
            out.push(if i == j { p } else { std::f64::consts::SQRT_2 * p });
        }
    }
    DVector::from_vec(out)
}

/// Transcript rows `agent_id,n,D,v_1..v_D`, one per embedding, in the
/// finite feature space. Exact-mode embeddings have no such vector.
pub fn embeddings_csv(embs: &[Embedding]) -> Result<String> {
    let vectors: Vec<DVector<f64>> = embs
        .iter()
        .map(|e| {
            e.feature_vector()
                .ok_or_else(|| Error::RepresentationMismatch("exact embeddings have no finite feature vector".into()))
        })
        .collect::<Result<_>>()?;
    let dim = vectors.first().map(|v| v.len()).unwrap_or(0);
    let mut out = String::from("agent_id,n,D");
    for j in 1..=dim {
        out.push_str(&format!(",v_{j}"));
    }
    out.push('\n');
    for (k, (e, v)) in embs.iter().zip(&vectors).enumerate() {
        check_dim(dim, v.len())?;
        out.push_str(&format!("{k},{},{dim}", e.n()));
        for x in v.iter() {
            out.push(',');
            out.push_str(&crate::fmt_num(*x));
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
enum LocalFeatures {
    Rff { rows: Vec<DVector<f64>>, seed: u64 },
    Poly2Lift { rows: Vec<DVector<f64>> },
    Points(Arc<Vec<Vec<f64>>>),
}

/// The target agent's sample mapped into the embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFeatureSet {
    features: LocalFeatures,
    kernel: KernelSpec,
}

impl LocalFeatureSet {
    pub fn build(dataset: &AgentDataset, mode: EmbedMode<'_>, scope: Scope) -> Result<Self> {
        Self::from_points(dataset.points(scope)?, mode)
    }

    pub fn from_points(points: Vec<Vec<f64>>, mode: EmbedMode<'_>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("local feature set needs at least one point"));
        }
        let dim = points[0].len();
        for p in &points {
            check_dim(dim, p.len())?;
        }
        Ok(match mode {
            EmbedMode::Rff(params) => LocalFeatureSet {
                features: LocalFeatures::Rff {
                    rows: points.iter().map(|p| params.featurize(p)).collect::<Result<_>>()?,
                    seed: params.seed(),
                },
                kernel: params.kernel().clone(),
            },
            EmbedMode::Poly2 => LocalFeatureSet {
                features: LocalFeatures::Poly2Lift {
                    rows: points.iter().map(|p| poly2_lift(p)).collect(),
                },
                kernel: KernelSpec::poly2(dim)?,
            },
            EmbedMode::Exact(kernel) => {
                check_dim(kernel.ambient_dim(), dim)?;
                LocalFeatureSet {
                    features: LocalFeatures::Points(Arc::new(points)),
                    kernel: kernel.clone(),
                }
            }
        })
    }

    pub fn n(&self) -> usize {
        match &self.features {
            LocalFeatures::Rff { rows, .. } | LocalFeatures::Poly2Lift { rows } => rows.len(),
            LocalFeatures::Points(p) => p.len(),
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// Feature vectors, or `None` in exact mode.
    pub fn vectors(&self) -> Option<&[DVector<f64>]> {
        match &self.features {
            LocalFeatures::Rff { rows, .. } | LocalFeatures::Poly2Lift { rows } => Some(rows),
            LocalFeatures::Points(_) => None,
        }
    }

    fn check_embedding(&self, e: &Embedding) -> Result<()> {
        if self.kernel != e.kernel {
            return Err(Error::RepresentationMismatch(
                "local features and embedding use different kernels".into(),
            ));
        }
        match (&self.features, &e.repr) {
            (LocalFeatures::Rff { seed, rows }, Representation::RffVector { seed: s, v }) => {
                if seed != s || rows[0].len() != v.len() {
                    return Err(Error::RepresentationMismatch(
                        "local features and embedding use different random features".into(),
                    ));
                }
                Ok(())
            }
            (LocalFeatures::Poly2Lift { .. }, Representation::Poly2Summary { .. })
            | (LocalFeatures::Points(_), Representation::ExactHandle { .. }) => Ok(()),
            _ => Err(Error::RepresentationMismatch(
                "local features and embedding use different representations".into(),
            )),
        }
    }

    fn require_two(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::DegenerateSample(format!(
                "need at least two local points, got {}",
                self.n()
            )));
        }
        Ok(())
    }
}

fn mean_vector(rows: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = DVector::zeros(rows[0].len());
    for r in rows {
        acc += r;
    }
    acc / rows.len() as f64
}

/// `(1/(n-1)) sum_i |phi_i - mean|^2` over explicit feature vectors.
pub fn trace_cov_vectors(rows: &[DVector<f64>]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "need at least two points, got {}",
            rows.len()
        )));
    }
    let mean = mean_vector(rows);
    let s: f64 = rows.iter().map(|r| (r - &mean).norm_squared()).sum();
    Ok(s / (rows.len() - 1) as f64)
}

/// `(1/(n-1)) sum_i <phi_i - nu_1, nu_k - nu_1>^2` over explicit feature vectors.
pub fn q_stat_vectors(rows: &[DVector<f64>], nu_k: &DVector<f64>, nu_1: &DVector<f64>) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "need at least two points, got {}",
            rows.len()
        )));
    }
    check_dim(rows[0].len(), nu_k.len())?;
    check_dim(rows[0].len(), nu_1.len())?;
    let dir = nu_k - nu_1;
    let s: f64 = rows
        .iter()
        .map(|r| {
            let c = (r - nu_1).dot(&dir);
            c * c
        })
        .sum();
    Ok(s / (rows.len() - 1) as f64)
}

fn kernel_mean_to(kernel: &KernelSpec, z: &[f64], sample: &[Vec<f64>]) -> f64 {
    sample.iter().map(|w| kernel.eval_unchecked(z, w)).sum::<f64>() / sample.len() as f64
}

/// Unbiased trace of the empirical covariance of the local features.
pub fn trace_cov_hat(local: &LocalFeatureSet) -> Result<f64> {
    local.require_two()?;
    match &local.features {
        LocalFeatures::Rff { rows, .. } | LocalFeatures::Poly2Lift { rows } => trace_cov_vectors(rows),
        LocalFeatures::Points(pts) => {
            let k = &local.kernel;
            let n = pts.len();
            let diag: Vec<f64> = pts.iter().map(|z| k.eval_unchecked(z, z)).collect();
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        s += diag[i] - 2.0 * k.eval_unchecked(&pts[i], &pts[j]) + diag[j];
                    }
                }
            }
            // sum over pairs of |phi_i - phi_j|^2 equals 2n sum_i |phi_i - mean|^2
            Ok(s / (2.0 * n as f64 * (n - 1) as f64))
        }
    }
}

/// `q_k = <nu_1 - nu_k, Sigma_1 (nu_1 - nu_k)>` with `Sigma_1` the unbiased
/// empirical covariance of the local features.
pub fn q_stat(local: &LocalFeatureSet, nu_k: &Embedding, nu_1: &Embedding) -> Result<f64> {
    local.require_two()?;
    local.check_embedding(nu_k)?;
    local.check_embedding(nu_1)?;
    match &local.features {
        LocalFeatures::Rff { rows, .. } | LocalFeatures::Poly2Lift { rows } => {
            let vk = nu_k.feature_vector().expect("finite-dimensional embedding");
            let v1 = nu_1.feature_vector().expect("finite-dimensional embedding");
            q_stat_vectors(rows, &vk, &v1)
        }
        LocalFeatures::Points(pts) => {
            let (Representation::ExactHandle { points: zk }, Representation::ExactHandle { points: z1 }) =
                (&nu_k.repr, &nu_1.repr)
            else {
                unreachable!("checked above")
            };
            let k = &local.kernel;
            let n1 = pts.len() as f64;
            let mut sq = 0.0;
            let mut sum = 0.0;
            for z in pts.iter() {
                let a = kernel_mean_to(k, z, zk) - kernel_mean_to(k, z, z1);
                sq += a * a;
                sum += a;
            }
            let mean = sum / n1;
            Ok(sq / (n1 - 1.0) - n1 / (n1 - 1.0) * mean * mean)
        }
    }
}

/// `tr(Sigma_1) / |Sigma_1|_op` of the empirical local covariance.
pub fn effective_dimension(local: &LocalFeatureSet) -> Result<f64> {
    local.require_two()?;
    let n = local.n();
    let eig = match &local.features {
        LocalFeatures::Rff { rows, .. } | LocalFeatures::Poly2Lift { rows } => {
            let mean = mean_vector(rows);
            let p = mean.len();
            let centered = DMatrix::from_fn(n, p, |i, j| rows[i][j] - mean[j]);
            let m = if p <= n {
                centered.transpose() * &centered
            } else {
                &centered * centered.transpose()
            };
            m.symmetric_eigenvalues()
        }
        LocalFeatures::Points(pts) => {
            let k = &local.kernel;
            let gram = DMatrix::from_fn(n, n, |i, j| k.eval_unchecked(&pts[i], &pts[j]));
            let row_means: Vec<f64> = (0..n).map(|i| gram.row(i).sum() / n as f64).collect();
            let total = row_means.iter().sum::<f64>() / n as f64;
            let centered = DMatrix::from_fn(n, n, |i, j| gram[(i, j)] - row_means[i] - row_means[j] + total);
            centered.symmetric_eigenvalues()
        }
    };
    let max = eig.iter().copied().fold(0.0, f64::max);
    let trace: f64 = eig.iter().map(|v| v.max(0.0)).sum();
    if max <= 1e-14 * trace.max(1.0) || trace <= 0.0 {
        return Err(Error::UndefinedDimension);
    }
    Ok(trace / max)
}

/// True when the kernel is the polynomial one; helper for callers choosing a mode.
pub fn is_poly2(kernel: &KernelSpec) -> bool {
    matches!(kernel.kind(), KernelKind::Poly2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    use crate::rng::stream;

    fn random_points(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, 0, "embedding-test");
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    fn scalar_rows(vals: &[f64]) -> Vec<DVector<f64>> {
        vals.iter().map(|v| DVector::from_element(1, *v)).collect()
    }

    #[test]
    fn transcript_rows() {
        let kernel = KernelSpec::isotropic(1, 1.0).unwrap();
        let params = RffParams::sample(&kernel, 3, 2).unwrap();
        let e = embed_points(vec![vec![0.5], vec![1.0]], EmbedMode::Rff(&params)).unwrap();
        let csv = embeddings_csv(std::slice::from_ref(&e)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "agent_id,n,D,v_1,v_2,v_3");
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(&fields[..3], &["0", "2", "3"]);
        assert_eq!(fields[3].parse::<f64>().unwrap(), e.feature_vector().unwrap()[0]);
        let exact = embed_points(vec![vec![0.5]], EmbedMode::Exact(&kernel)).unwrap();
        assert!(embeddings_csv(&[exact]).is_err());
    }

    #[test]
    fn single_point_rff_is_its_feature() {
        let kernel = KernelSpec::isotropic(2, 1.0).unwrap();
        let params = RffParams::sample(&kernel, 64, 4).unwrap();
        let e = embed_points(vec![vec![0.3, -1.2]], EmbedMode::Rff(&params)).unwrap();
        assert_eq!(e.feature_vector().unwrap(), params.featurize(&[0.3, -1.2]).unwrap());
        assert!(e.feature_vector().unwrap().norm() <= std::f64::consts::SQRT_2 + 1e-12);
    }

    #[test]
    fn poly2_moments_of_two_points() {
        let e = embed_points(vec![vec![1.0, 0.0], vec![0.0, 1.0]], EmbedMode::Poly2).unwrap();
        let Representation::Poly2Summary { mean, second_moment } = e.representation() else {
            panic!("wrong representation")
        };
        assert_eq!(mean.as_slice(), &[0.5, 0.5]);
        assert_eq!(second_moment, &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
        assert_eq!(e.payload_len(), 5);
    }

    #[test]
    fn duplication_leaves_embedding_unchanged() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let ds = AgentDataset::new(x, Some(DVector::from_vec(vec![1.0, 0.0, -1.0]))).unwrap();
        let twice = ds.repeated(2);
        let a = embed(&ds, EmbedMode::Poly2, Scope::FullTuple).unwrap();
        let b = embed(&twice, EmbedMode::Poly2, Scope::FullTuple).unwrap();
        assert!(mmd2(&a, &b).unwrap() < 1e-12);
        let kernel = KernelSpec::isotropic(3, 1.0).unwrap();
        let params = RffParams::sample(&kernel, 50, 1).unwrap();
        let a = embed(&ds, EmbedMode::Rff(&params), Scope::FullTuple).unwrap();
        let b = embed(&twice, EmbedMode::Rff(&params), Scope::FullTuple).unwrap();
        assert!((a.feature_vector().unwrap() - b.feature_vector().unwrap()).norm() < 1e-14);
    }

    #[test]
    fn features_only_scope_drops_label() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let ds = AgentDataset::new(x, Some(DVector::from_vec(vec![5.0, 7.0]))).unwrap();
        let e = embed(&ds, EmbedMode::Poly2, Scope::FeaturesOnly).unwrap();
        assert_eq!(e.kernel().ambient_dim(), 2);
        let unlabelled = AgentDataset::new(DMatrix::zeros(2, 2), None).unwrap();
        assert!(embed(&unlabelled, EmbedMode::Poly2, Scope::FeaturesOnly).is_err());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(
            embed_points(Vec::new(), EmbedMode::Poly2),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn exact_single_points_give_kernel_value() {
        let kernel = KernelSpec::isotropic(2, 0.7).unwrap();
        let z = vec![0.1, 0.4];
        let w = vec![-0.5, 1.0];
        let a = embed_points(vec![z.clone()], EmbedMode::Exact(&kernel)).unwrap();
        let b = embed_points(vec![w.clone()], EmbedMode::Exact(&kernel)).unwrap();
        assert_eq!(kme_inner(&a, &b).unwrap(), kernel.eval(&z, &w).unwrap());
    }

    #[test]
    fn mixing_representations_fails() {
        let kernel = KernelSpec::poly2(2).unwrap();
        let pts = random_points(1, 4, 2);
        let exact = embed_points(pts.clone(), EmbedMode::Exact(&kernel)).unwrap();
        let summary = embed_points(pts, EmbedMode::Poly2).unwrap();
        assert!(matches!(kme_inner(&exact, &summary), Err(Error::RepresentationMismatch(_))));

        let g = KernelSpec::isotropic(2, 1.0).unwrap();
        let p1 = RffParams::sample(&g, 10, 1).unwrap();
        let p2 = RffParams::sample(&g, 10, 2).unwrap();
        let a = embed_points(vec![vec![0.0, 0.0]], EmbedMode::Rff(&p1)).unwrap();
        let b = embed_points(vec![vec![0.0, 0.0]], EmbedMode::Rff(&p2)).unwrap();
        assert!(kme_inner(&a, &b).is_err());
    }

    #[test]
    fn poly2_three_routes_agree() {
        let kernel = KernelSpec::poly2(2).unwrap();
        for seed in 0..20u64 {
            let agents = 1 + (seed as usize % 4);
            let samples: Vec<Vec<Vec<f64>>> = (0..agents)
                .map(|k| random_points(seed * 10 + k as u64, 1 + (seed as usize + k) % 10, 2))
                .collect();
            for sa in &samples {
                for sb in &samples {
                    let ea = embed_points(sa.clone(), EmbedMode::Exact(&kernel)).unwrap();
                    let eb = embed_points(sb.clone(), EmbedMode::Exact(&kernel)).unwrap();
                    let double_sum = kme_inner(&ea, &eb).unwrap();
                    let ca = embed_points(sa.clone(), EmbedMode::Poly2).unwrap();
                    let cb = embed_points(sb.clone(), EmbedMode::Poly2).unwrap();
                    let closed = kme_inner(&ca, &cb).unwrap();
                    let mean_lift = |s: &Vec<Vec<f64>>| {
                        s.iter().map(|z| poly2_lift(z)).fold(DVector::zeros(6), |acc, v| acc + v) / s.len() as f64
                    };
                    let lifted = mean_lift(sa).dot(&mean_lift(sb));
                    assert!(rel_close(double_sum, closed, 1e-10), "{double_sum} vs {closed}");
                    assert!(rel_close(double_sum, lifted, 1e-10), "{double_sum} vs {lifted}");
                }
            }
        }
    }

    #[test]
    fn lift_reproduces_polynomial_kernel() {
        let kernel = KernelSpec::poly2(3).unwrap();
        let pts = random_points(5, 6, 3);
        for z in &pts {
            for w in &pts {
                let k = kernel.eval(z, w).unwrap();
                assert!(rel_close(poly2_lift(z).dot(&poly2_lift(w)), k, 1e-12));
            }
        }
    }

    #[test]
    fn mmd_of_self_is_exactly_zero() {
        let kernel = KernelSpec::isotropic(2, 1.0).unwrap();
        let params = RffParams::sample(&kernel, 100, 9).unwrap();
        let pts = random_points(2, 7, 2);
        for e in [
            embed_points(pts.clone(), EmbedMode::Rff(&params)).unwrap(),
            embed_points(pts.clone(), EmbedMode::Poly2).unwrap(),
            embed_points(pts.clone(), EmbedMode::Exact(&kernel)).unwrap(),
        ] {
            assert_eq!(mmd2(&e, &e).unwrap(), 0.0);
            assert_eq!(mmd2_mixture(&[1.0, 0.0], &[e.clone(), e.clone()], &e).unwrap(), 0.0);
        }
    }

    #[test]
    fn mixture_expansion_matches_direct_norm() {
        let kernel = KernelSpec::isotropic(2, 1.0).unwrap();
        let params = RffParams::sample(&kernel, 200, 3).unwrap();
        let mut rng = stream(8, 0, "weights");
        for rep in 0..10u64 {
            let embs: Vec<Embedding> = (0..3)
                .map(|k| embed_points(random_points(rep * 3 + k, 5, 2), EmbedMode::Rff(&params)).unwrap())
                .collect();
            let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let expanded = mmd2_mixture(&w, &embs, &embs[0]).unwrap();
            let mut mix = DVector::zeros(200);
            for (k, e) in embs.iter().enumerate() {
                mix += w[k] * e.feature_vector().unwrap();
            }
            let direct = (mix - embs[0].feature_vector().unwrap()).norm_squared();
            assert!((expanded - direct).abs() < 1e-12, "{expanded} vs {direct}");
        }
    }

    #[test]
    fn trace_of_two_scalars() {
        assert_eq!(trace_cov_vectors(&scalar_rows(&[0.0, 2.0])).unwrap(), 2.0);
        assert_eq!(trace_cov_vectors(&scalar_rows(&[1.5, 1.5, 1.5])).unwrap(), 0.0);
        assert!(matches!(
            trace_cov_vectors(&scalar_rows(&[1.0])),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn degenerate_local_sets_are_rejected() {
        let local = LocalFeatureSet::from_points(vec![vec![1.0, 2.0]], EmbedMode::Poly2).unwrap();
        assert!(matches!(trace_cov_hat(&local), Err(Error::DegenerateSample(_))));
        let e = embed_points(vec![vec![1.0, 2.0]], EmbedMode::Poly2).unwrap();
        assert!(matches!(q_stat(&local, &e, &e), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn kernel_and_feature_forms_agree() {
        // Exact Poly2 mode uses the kernel expansions; Poly2 mode the lifted
        // features. Both describe the same feature space.
        let kernel = KernelSpec::poly2(2).unwrap();
        for seed in 0..10u64 {
            let local_pts = random_points(seed, 6, 2);
            let other = random_points(seed + 100, 4, 2);
            let exact_local = LocalFeatureSet::from_points(local_pts.clone(), EmbedMode::Exact(&kernel)).unwrap();
            let lift_local = LocalFeatureSet::from_points(local_pts.clone(), EmbedMode::Poly2).unwrap();
            let t_kernel = trace_cov_hat(&exact_local).unwrap();
            let t_feat = trace_cov_hat(&lift_local).unwrap();
            assert!(rel_close(t_kernel, t_feat, 1e-10), "{t_kernel} vs {t_feat}");

            let e1 = embed_points(local_pts.clone(), EmbedMode::Exact(&kernel)).unwrap();
            let ek = embed_points(other.clone(), EmbedMode::Exact(&kernel)).unwrap();
            let p1 = embed_points(local_pts.clone(), EmbedMode::Poly2).unwrap();
            let pk = embed_points(other, EmbedMode::Poly2).unwrap();
            let q_kernel = q_stat(&exact_local, &ek, &e1).unwrap();
            let q_feat = q_stat(&lift_local, &pk, &p1).unwrap();
            assert!(rel_close(q_kernel, q_feat, 1e-10), "{q_kernel} vs {q_feat}");
        }
    }

    #[test]
    fn gaussian_trace_kernel_form_matches_rff_features_in_the_limit() {
        // tr Sigma for a bounded-by-one Gaussian kernel: the RFF version is an
        // unbiased-ish Monte Carlo approximation of the kernel form.
        let kernel = KernelSpec::isotropic(2, 1.0).unwrap();
        let pts = random_points(3, 6, 2);
        let exact = trace_cov_hat(&LocalFeatureSet::from_points(pts.clone(), EmbedMode::Exact(&kernel)).unwrap()).unwrap();
        let params = RffParams::sample(&kernel, 20000, 11).unwrap();
        let rff = trace_cov_hat(&LocalFeatureSet::from_points(pts, EmbedMode::Rff(&params)).unwrap()).unwrap();
        assert!((exact - rff).abs() < 0.05, "{exact} vs {rff}");
    }

    #[test]
    fn q_vanishes_on_zero_direction_or_zero_spread() {
        let pts = random_points(4, 5, 2);
        let local = LocalFeatureSet::from_points(pts.clone(), EmbedMode::Poly2).unwrap();
        let e1 = embed_points(pts, EmbedMode::Poly2).unwrap();
        assert_eq!(q_stat(&local, &e1, &e1).unwrap(), 0.0);
        let flat = LocalFeatureSet::from_points(vec![vec![0.5, 0.5]; 4], EmbedMode::Poly2).unwrap();
        let flat_e = embed_points(vec![vec![0.5, 0.5]; 4], EmbedMode::Poly2).unwrap();
        let other = embed_points(random_points(9, 3, 2), EmbedMode::Poly2).unwrap();
        assert_eq!(q_stat(&flat, &other, &flat_e).unwrap(), 0.0);
    }

    #[test]
    fn effective_dimension_cases() {
        let line = vec![vec![0.0, 1.0], vec![2.0, 1.0], vec![5.0, 1.0]];
        let kernel = KernelSpec::isotropic(2, 1.0).unwrap();
        // explicit features along one axis
        let params = RffParams::from_parts(
            kernel.clone(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0]),
            0,
        )
        .unwrap();
        let local = LocalFeatureSet::from_points(line, EmbedMode::Rff(&params)).unwrap();
        assert!((effective_dimension(&local).unwrap() - 1.0).abs() < 1e-8);

        let two = LocalFeatureSet::from_points(vec![vec![0.0, 0.0], vec![1.0, 3.0]], EmbedMode::Poly2).unwrap();
        assert!((effective_dimension(&two).unwrap() - 1.0).abs() < 1e-8);

        let same = LocalFeatureSet::from_points(vec![vec![1.0, 1.0]; 3], EmbedMode::Poly2).unwrap();
        assert!(matches!(effective_dimension(&same), Err(Error::UndefinedDimension)));
    }

    #[test]
    fn effective_dimension_of_isotropic_features_approaches_dimension() {
        // The explicit RFF map with identity frequencies and phase pi/2 is
        // sqrt(2/D) cos(z + pi/2); for small z it is nearly linear, so
        // isotropic Gaussian inputs yield isotropic features.
        let dim = 5;
        let kernel = KernelSpec::isotropic(dim, 1.0).unwrap();
        let params = RffParams::from_parts(
            kernel,
            DMatrix::identity(dim, dim),
            DVector::from_element(dim, std::f64::consts::FRAC_PI_2),
            0,
        )
        .unwrap();
        let mut rng = stream(12, 0, "iso");
        let pts: Vec<Vec<f64>> = (0..4000)
            .map(|_| {
                (0..dim)
                    .map(|_| 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect()
            })
            .collect();
        let local = LocalFeatureSet::from_points(pts, EmbedMode::Rff(&params)).unwrap();
        let de = effective_dimension(&local).unwrap();
        assert!((de - dim as f64).abs() <= 0.1 * dim as f64, "{de}");
    }

    proptest! {
        #[test]
        fn cauchy_schwarz_holds(seed in 0u64..500, na in 1usize..8, nb in 1usize..8) {
            let kernel = KernelSpec::isotropic(2, 0.8).unwrap();
            let params = RffParams::sample(&kernel, 32, seed).unwrap();
            let pa = random_points(seed, na, 2);
            let pb = random_points(seed + 7, nb, 2);
            for mode in [EmbedMode::Rff(&params), EmbedMode::Poly2, EmbedMode::Exact(&kernel)] {
                let a = embed_points(pa.clone(), mode).unwrap();
                let b = embed_points(pb.clone(), mode).unwrap();
                let ab = kme_inner(&a, &b).unwrap();
                let aa = kme_inner(&a, &a).unwrap();
                let bb = kme_inner(&b, &b).unwrap();
                prop_assert!(aa >= 0.0);
                prop_assert!(ab * ab <= aa * bb + 1e-12 * (aa * bb).max(1.0));
                prop_assert!(mmd2(&a, &b).unwrap() >= 0.0);
            }
        }

        #[test]
        fn rff_embeddings_stay_in_the_ball(seed in 0u64..500, n in 1usize..12) {
            let kernel = KernelSpec::isotropic(3, 1.3).unwrap();
            let params = RffParams::sample(&kernel, 40, seed).unwrap();
            let e = embed_points(random_points(seed, n, 3), EmbedMode::Rff(&params)).unwrap();
            prop_assert!(e.feature_vector().unwrap().norm() <= std::f64::consts::SQRT_2 + 1e-12);
        }
    }
}
