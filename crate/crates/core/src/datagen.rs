//! Synthetic heterogeneous agents.
//!
//! * Concept shift: shared features `X ~ N(1, I_d)`, agent-specific linear
//!   concepts `beta_k = I_k sqrt(1 - s2) beta_0 + sqrt(s2) eps_k` with
//!   `I_k` uniform on `{-1, +1}` and `Y = <beta_k, X> + N(0, sigma_Y^2)`.
//! * Covariate shift: a shared response
//!   `Y = sin(3 X_1) + 0.5 X_2^2 + 0.1 sum_{i>=3} X_i + N(0, 0.04)` over three
//!   groups of feature laws (Gaussian around `N(0, v1 I)`-drawn centers,
//!   Gaussian around `N(mu0, v2 I)`-drawn centers, uniform on `[-6, 6]^d`).
//!
//! Agent `k` draws from the stream `derive_seed(seed, k, "train")`, test sets
//! from `derive_seed(seed, k, "test")`, and shared quantities from
//! `derive_seed(seed, GLOBAL, ...)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::AgentDataset;
use crate::error::{Error, Result};
use crate::rng::{stream, GLOBAL};

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_vec(rng: &mut ChaCha20Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| normal(rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptShiftSpec {
    pub agents: usize,
    pub n_k: usize,
    pub dim: usize,
    pub sigma_c2: f64,
    pub sigma_y2: f64,
    pub seed: u64,
}

impl Default for ConceptShiftSpec {
    fn default() -> Self {
        ConceptShiftSpec {
            agents: 100,
            n_k: 10,
            dim: 20,
            sigma_c2: 0.0,
            sigma_y2: 2.0,
            seed: 0,
        }
    }
}

impl ConceptShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sigma_c2) {
            return Err(Error::input(format!("sigma_c^2 must lie in [0, 1], got {}", self.sigma_c2)));
        }
        if !(self.sigma_y2.is_finite() && self.sigma_y2 > 0.0) {
            return Err(Error::input("sigma_Y^2 must be positive"));
        }
        if self.agents == 0 || self.n_k == 0 || self.dim == 0 {
            return Err(Error::input("agents, points per agent and dimension must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ConceptShiftSample {
    pub datasets: Vec<AgentDataset>,
    pub betas: Vec<DVector<f64>>,
    /// Group of each agent: 0 for `I_k = -1`, 1 for `I_k = +1`.
    pub groups: Vec<usize>,
    spec: ConceptShiftSpec,
}

fn concept_rows(rng: &mut ChaCha20Rng, beta: &DVector<f64>, n: usize, sigma_y: f64) -> Result<AgentDataset> {
    let d = beta.len();
    let x = DMatrix::from_fn(n, d, |_, _| 1.0 + normal(rng));
    let mut y = &x * beta;
    for v in y.iter_mut() {
        *v += sigma_y * normal(rng);
    }
    AgentDataset::new(x, Some(y))
}

pub fn gen_concept_shift(spec: &ConceptShiftSpec) -> Result<ConceptShiftSample> {
    spec.validate()?;
    let beta0 = normal_vec(&mut stream(spec.seed, GLOBAL, "beta0"), spec.dim);
    let shared = (1.0 - spec.sigma_c2).sqrt();
    let own = spec.sigma_c2.sqrt();
    let sigma_y = spec.sigma_y2.sqrt();
    let mut datasets = Vec::with_capacity(spec.agents);
    let mut betas = Vec::with_capacity(spec.agents);
    let mut groups = Vec::with_capacity(spec.agents);
    for k in 0..spec.agents {
        let mut rng = stream(spec.seed, k as u64, "train");
        let sign: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let eps = normal_vec(&mut rng, spec.dim);
        let beta = if own == 0.0 {
            sign * &beta0
        } else {
            sign * shared * &beta0 + own * eps
        };
        let group = usize::from(sign > 0.0);
        datasets.push(concept_rows(&mut rng, &beta, spec.n_k, sigma_y)?.with_group(group));
        betas.push(beta);
        groups.push(group);
    }
    Ok(ConceptShiftSample {
        datasets,
        betas,
        groups,
        spec: spec.clone(),
    })
}

impl ConceptShiftSample {
    /// Fresh sample of `n` points from agent `k`'s law.
    pub fn test_set(&self, k: usize, n: usize) -> Result<AgentDataset> {
        let mut rng = stream(self.spec.seed, k as u64, "test");
        concept_rows(&mut rng, &self.betas[k], n, self.spec.sigma_y2.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateShiftSpec {
    pub dim: usize,
    /// Agents in the first group.
    pub k1: usize,
    /// Agents in the second group; the remaining agents form the uniform group.
    pub k2: usize,
    pub agents: usize,
    pub n_k: usize,
    /// Spread of first-group centers around the origin.
    pub v1_2: f64,
    /// Spread of second-group centers around `mu0`.
    pub v2_2: f64,
    /// Within-agent feature variances of the first two groups.
    pub sigma1_2: f64,
    pub sigma2_2: f64,
    pub mu0: Vec<f64>,
    pub seed: u64,
}

impl Default for CovariateShiftSpec {
    fn default() -> Self {
        CovariateShiftSpec {
            dim: 4,
            k1: 30,
            k2: 30,
            agents: 100,
            n_k: 20,
            v1_2: 0.01,
            v2_2: 0.3,
            sigma1_2: 1.0,
            sigma2_2: 1.0,
            mu0: vec![2.0; 4],
            seed: 0,
        }
    }
}

impl CovariateShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::input("covariate shift needs at least two features"));
        }
        if self.k1 + self.k2 > self.agents {
            return Err(Error::input("group sizes exceed the number of agents"));
        }
        if self.n_k == 0 || self.agents == 0 {
            return Err(Error::input("agents and points per agent must be positive"));
        }
        if self.mu0.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.mu0.len(),
            });
        }
        for (name, v) in [
            ("v1^2", self.v1_2),
            ("v2^2", self.v2_2),
            ("sigma1^2", self.sigma1_2),
            ("sigma2^2", self.sigma2_2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn group_of(&self, k: usize) -> usize {
        if k < self.k1 {
            0
        } else if k < self.k1 + self.k2 {
            1
        } else {
            2
        }
    }
}

/// Per-agent feature law.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureLaw {
    Gaussian { center: DVector<f64>, sd: f64 },
    Uniform { half_width: f64 },
}

#[derive(Clone, Debug)]
pub struct CovariateShiftSample {
    pub datasets: Vec<AgentDataset>,
    pub groups: Vec<usize>,
    pub laws: Vec<FeatureLaw>,
    seed: u64,
}

/// Noise-free response of the covariate-shift experiment.
pub fn covariate_response(x: &[f64]) -> f64 {
    (3.0 * x[0]).sin() + 0.5 * x[1] * x[1] + 0.1 * x[2..].iter().sum::<f64>()
}

fn covariate_rows(rng: &mut ChaCha20Rng, law: &FeatureLaw, n: usize, d: usize) -> Result<AgentDataset> {
    let x = match law {
        FeatureLaw::Gaussian { center, sd } => DMatrix::from_fn(n, d, |_, j| center[j] + sd * normal(rng)),
        FeatureLaw::Uniform { half_width } => {
            DMatrix::from_fn(n, d, |_, _| rng.random_range(-half_width..=*half_width))
        }
    };
    let y = DVector::from_fn(n, |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        covariate_response(&row) + 0.2 * normal(rng)
    });
    AgentDataset::new(x, Some(y))
}

pub fn gen_covariate_shift(spec: &CovariateShiftSpec) -> Result<CovariateShiftSample> {
    spec.validate()?;
    let d = spec.dim;
    let mut datasets = Vec::with_capacity(spec.agents);
    let mut groups = Vec::with_capacity(spec.agents);
    let mut laws = Vec::with_capacity(spec.agents);
    let mu0 = DVector::from_column_slice(&spec.mu0);
    for k in 0..spec.agents {
        let mut rng = stream(spec.seed, k as u64, "train");
        let group = spec.group_of(k);
        let law = match group {
            0 => FeatureLaw::Gaussian {
                center: spec.v1_2.sqrt() * normal_vec(&mut rng, d),
                sd: spec.sigma1_2.sqrt(),
            },
            1 => FeatureLaw::Gaussian {
                center: &mu0 + spec.v2_2.sqrt() * normal_vec(&mut rng, d),
                sd: spec.sigma2_2.sqrt(),
            },
            _ => FeatureLaw::Uniform { half_width: 6.0 },
        };
        datasets.push(covariate_rows(&mut rng, &law, spec.n_k, d)?.with_group(group));
        groups.push(group);
        laws.push(law);
    }
    Ok(CovariateShiftSample {
        datasets,
        groups,
        laws,
        seed: spec.seed,
    })
}

impl CovariateShiftSample {
    pub fn test_set(&self, k: usize, n: usize) -> Result<AgentDataset> {
        let mut rng = stream(self.seed, k as u64, "test");
        let d = self.datasets[k].feature_dim();
        covariate_rows(&mut rng, &self.laws[k], n, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn concept(sigma_c2: f64, agents: usize, seed: u64) -> ConceptShiftSample {
        gen_concept_shift(&ConceptShiftSpec {
            agents,
            sigma_c2,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn generator_defaults() {
        let c = ConceptShiftSpec::default();
        assert_eq!((c.dim, c.sigma_y2, c.n_k, c.agents), (20, 2.0, 10, 100));
        let v = CovariateShiftSpec::default();
        assert_eq!((v.dim, v.k1, v.k2, v.agents, v.n_k), (4, 30, 30, 100, 20));
        assert_eq!((v.v1_2, v.v2_2), (0.01, 0.3));
        assert_eq!(v.mu0, vec![2.0; 4]);
    }

    #[test]
    fn zero_noise_gives_two_exact_clusters() {
        let s = concept(0.0, 50, 3);
        let beta0 = normal_vec(&mut stream(3, GLOBAL, "beta0"), 20);
        for (beta, g) in s.betas.iter().zip(&s.groups) {
            let expected = if *g == 1 { beta0.clone() } else { -&beta0 };
            assert_eq!(beta, &expected);
        }
        assert!(s.groups.contains(&0) && s.groups.contains(&1));
    }

    #[test]
    fn full_noise_decorrelates_from_shared_concept() {
        let spec = ConceptShiftSpec {
            agents: 200,
            sigma_c2: 1.0,
            seed: 5,
            ..Default::default()
        };
        let s = gen_concept_shift(&spec).unwrap();
        let beta0 = normal_vec(&mut stream(spec.seed, GLOBAL, "beta0"), spec.dim);
        let corr: f64 = s
            .betas
            .iter()
            .map(|b| b.dot(&beta0) / (b.norm() * beta0.norm()))
            .sum::<f64>()
            / s.betas.len() as f64;
        assert!(corr.abs() < 0.1, "{corr}");
    }

    #[test]
    fn expected_concept_norm_is_dimension() {
        for s2 in [0.0, 0.3, 1.0] {
            let mean = (0..1000)
                .map(|seed| concept_single(s2, seed).betas[0].norm_squared())
                .sum::<f64>()
                / 1000.0;
            assert!((18.0..=22.0).contains(&mean), "sigma_c^2 = {s2}: {mean}");
        }
    }

    fn concept_single(sigma_c2: f64, seed: u64) -> ConceptShiftSample {
        gen_concept_shift(&ConceptShiftSpec {
            agents: 1,
            n_k: 1,
            sigma_c2,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn rejects_out_of_range_noise() {
        assert!(gen_concept_shift(&ConceptShiftSpec {
            sigma_c2: 1.5,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn seeded_determinism() {
        let a = concept(0.4, 10, 9);
        let b = concept(0.4, 10, 9);
        assert_eq!(a.datasets, b.datasets);
        let c = gen_covariate_shift(&CovariateShiftSpec { seed: 4, ..Default::default() }).unwrap();
        let d = gen_covariate_shift(&CovariateShiftSpec { seed: 4, ..Default::default() }).unwrap();
        assert_eq!(c.datasets, d.datasets);
    }

    #[test]
    fn concept_feature_mean_is_one() {
        let reps = 4;
        let (b, n, d) = (50, 10, 20);
        let mut sums = vec![0.0; d];
        for r in 0..reps {
            let s = concept(0.5, b, 1000 + r);
            for ds in &s.datasets {
                for (j, s) in sums.iter_mut().enumerate() {
                    *s += ds.x().column(j).sum();
                }
            }
        }
        let total = (b * n * reps as usize) as f64;
        let tol = 3.0 / total.sqrt();
        for s in sums {
            assert!((s / total - 1.0).abs() <= tol * 1.5, "{}", s / total);
        }
    }

    #[test]
    fn covariate_groups_and_support() {
        let s = gen_covariate_shift(&CovariateShiftSpec { seed: 1, ..Default::default() }).unwrap();
        let counts = (0..3).map(|g| s.groups.iter().filter(|x| **x == g).count()).collect::<Vec<_>>();
        assert_eq!(counts, vec![30, 30, 40]);
        for (ds, g) in s.datasets.iter().zip(&s.groups) {
            if *g == 2 {
                assert!(ds.x().iter().all(|v| (-6.0..=6.0).contains(v)));
            }
        }
    }

    #[test]
    fn covariate_noise_level() {
        assert_eq!(covariate_response(&[0.0; 4]), 0.0);
        let s = gen_covariate_shift(&CovariateShiftSpec {
            agents: 1,
            k1: 1,
            k2: 0,
            n_k: 10_000,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let ds = &s.datasets[0];
        let y = ds.y().unwrap();
        let var = (0..ds.n())
            .map(|i| {
                let r = y[i] - covariate_response(&ds.row(i));
                r * r
            })
            .sum::<f64>()
            / ds.n() as f64;
        assert!((var - 0.04).abs() <= 0.15 * 0.04, "{var}");
    }

    #[test]
    fn test_sets_are_independent_of_training() {
        let s = concept(0.2, 3, 8);
        let t = s.test_set(1, 50).unwrap();
        assert_eq!(t.n(), 50);
        assert_ne!(t.row(0), s.datasets[1].row(0));
        assert_eq!(t, s.test_set(1, 50).unwrap());
    }
}
