//! Q-aggregation of embeddings: the penalized quadratic objective over the
//! simplex and its exponentiated-gradient (prox-method) solver.
//!
//! For a target agent `t` with local sample size `n`, the objective is
//!
//! ```text
//! f(w) = w^T A w + <b, w>
//! A_kl = <nu_k - nu_t, nu_l - nu_t>
//! b_t  = 2 tr(Sigma_t) / n
//! b_k  = C_Q sqrt(q_k) / sqrt(n) + C_P M |nu_k - nu_t| / n      (k != t)
//! ```
//!
//! which equals the unbiased empirical error of the mixture plus the two
//! penalties at every point of the simplex.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{kme_inner, q_stat, trace_cov_hat, Embedding, LocalFeatureSet, Representation};
use crate::error::{check_dim, Error, Result};
use crate::kernel::KernelKind;

const SIMPLEX_TOL: f64 = 1e-9;

/// A point of the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::input("weights must be non-empty"));
        }
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::input(format!("weight {bad} is negative or non-finite")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::input(format!("weights sum to {sum}, not 1")));
        }
        Ok(SimplexWeights(w))
    }

    /// Divides non-negative weights by their sum.
    pub fn from_unnormalized(w: Vec<f64>) -> Result<Self> {
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::input(format!("weight {bad} is negative or non-finite")));
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::input("weights are all zero"));
        }
        Ok(SimplexWeights(w.into_iter().map(|v| v / sum).collect()))
    }

    pub fn uniform(b: usize) -> Self {
        SimplexWeights(vec![1.0 / b as f64; b])
    }

    pub fn vertex(b: usize, k: usize) -> Self {
        let mut w = vec![0.0; b];
        w[k] = 1.0;
        SimplexWeights(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for SimplexWeights {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// Penalty constants and solver settings.
///
/// `bound` is `M = sup sqrt(k(z, z))`; when `None` it is derived from the
/// representation (`sqrt 2` for random features, 1 for exact Gaussian
/// kernels, the largest lifted norm of the local sample for the polynomial
/// kernel).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaggConfig {
    pub c_q: f64,
    pub c_p: f64,
    pub bound: Option<f64>,
    pub iterations: usize,
    pub step_scale: f64,
    pub target: usize,
}

impl Default for QaggConfig {
    fn default() -> Self {
        QaggConfig {
            c_q: 1.0,
            c_p: 1.0,
            bound: None,
            iterations: 1000,
            step_scale: 0.5,
            target: 0,
        }
    }
}

fn log_agents(agents: usize) -> f64 {
    // log 1 = 0 would zero the penalties; they are irrelevant for one agent
    (agents.max(2) as f64).ln()
}

impl QaggConfig {
    /// `C_Q^2 = C_P = log B`.
    pub fn log_b(agents: usize) -> Self {
        let l = log_agents(agents);
        QaggConfig {
            c_q: l.sqrt(),
            c_p: l,
            ..Default::default()
        }
    }

    /// `C_Q = C_P = 1`.
    pub fn unit() -> Self {
        Self::default()
    }

    /// `C_Q^2 = C_P = 2 log(B n_1)`.
    pub fn theory(agents: usize, n1: usize) -> Self {
        let u0 = 2.0 * ((agents.max(1) * n1.max(2)) as f64).ln();
        QaggConfig {
            c_q: u0.sqrt(),
            c_p: u0,
            ..Default::default()
        }
    }

    pub fn with_target(mut self, target: usize) -> Self {
        self.target = target;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::input(format!("{name} must be positive, got {v}")))
            }
        };
        positive("C_Q", self.c_q)?;
        positive("C_P", self.c_p)?;
        positive("step scale", self.step_scale)?;
        if let Some(m) = self.bound {
            positive("kernel bound", m)?;
        }
        if self.iterations == 0 {
            return Err(Error::input("iteration count must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaggProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub target: usize,
    pub op_norm_a: f64,
    pub inf_norm_b: f64,
    /// `tr(Sigma_t)` of the target sample.
    pub trace_cov: f64,
    /// `q_k` for every agent (zero at the target).
    pub q: Vec<f64>,
}

impl QaggProblem {
    /// Assembles a problem from explicit `A` and `b`.
    pub fn from_parts(a: DMatrix<f64>, b: DVector<f64>, target: usize) -> Result<Self> {
        let n = b.len();
        check_dim(n, a.nrows())?;
        check_dim(n, a.ncols())?;
        if target >= n {
            return Err(Error::input(format!("target {target} out of range for {n} agents")));
        }
        let op_norm_a = op_norm_psd(&a);
        let inf_norm_b = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(QaggProblem {
            a,
            b,
            target,
            op_norm_a,
            inf_norm_b,
            trace_cov: f64::NAN,
            q: vec![f64::NAN; n],
        })
    }

    pub fn agents(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        (w.transpose() * &self.a * &w)[(0, 0)] + self.b.dot(&w)
    }

    pub fn gradient(&self, w: &[f64]) -> DVector<f64> {
        let w = DVector::from_column_slice(w);
        2.0 * (&self.a * w) + &self.b
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration
/// (100 iterations, relative tolerance 1e-10).
pub fn op_norm_psd(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + i as f64 / n as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..100 {
        let av = a * &v;
        let norm = av.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&av);
        v = av / norm;
        if (next - lambda).abs() <= 1e-10 * next.abs().max(f64::MIN_POSITIVE) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotient of the final iterate
    v.dot(&(a * &v)).max(lambda)
}

fn default_bound(local: &LocalFeatureSet, embs: &[Embedding]) -> f64 {
    match embs[0].representation() {
        Representation::RffVector { .. } => std::f64::consts::SQRT_2,
        Representation::Poly2Summary { .. } => local
            .vectors()
            .map(|rows| rows.iter().map(|r| r.norm()).fold(0.0, f64::max))
            .unwrap_or(1.0),
        Representation::ExactHandle { .. } => match local.kernel().kind() {
            KernelKind::Gaussian { .. } => 1.0,
            KernelKind::Poly2 => local.kernel().bound(None).unwrap_or(1.0),
        },
    }
}

/// Builds the objective for `cfg.target` from every agent's embedding and the
/// target's local features.
pub fn build_problem(embs: &[Embedding], local: &LocalFeatureSet, cfg: &QaggConfig) -> Result<QaggProblem> {
    cfg.validate()?;
    let agents = embs.len();
    if agents == 0 {
        return Err(Error::input("need at least one agent"));
    }
    let t = cfg.target;
    if t >= agents {
        return Err(Error::input(format!("target {t} out of range for {agents} agents")));
    }
    let n1 = local.n();
    if n1 < 2 {
        return Err(Error::DegenerateSample(format!(
            "target agent needs at least two points, got {n1}"
        )));
    }
    let mut gram = DMatrix::zeros(agents, agents);
    for k in 0..agents {
        for l in k..agents {
            let g = kme_inner(&embs[k], &embs[l])?;
            gram[(k, l)] = g;
            gram[(l, k)] = g;
        }
    }
    let mut a = DMatrix::from_fn(agents, agents, |k, l| {
        gram[(k, l)] - gram[(k, t)] - gram[(t, l)] + gram[(t, t)]
    });
    for k in 0..agents {
        a[(k, t)] = 0.0;
        a[(t, k)] = 0.0;
    }

    let trace_cov = trace_cov_hat(local)?;
    let m = cfg.bound.unwrap_or_else(|| default_bound(local, embs));
    let n = n1 as f64;
    let mut b = DVector::zeros(agents);
    let mut q = vec![0.0; agents];
    for k in 0..agents {
        if k == t {
            b[k] = 2.0 * trace_cov / n;
            continue;
        }
        let qk = q_stat(local, &embs[k], &embs[t])?.max(0.0);
        let dist = a[(k, k)].max(0.0).sqrt();
        q[k] = qk;
        b[k] = cfg.c_q * qk.sqrt() / n.sqrt() + cfg.c_p * m * dist / n;
    }
    let mut problem = QaggProblem::from_parts(a, b, t)?;
    problem.trace_cov = trace_cov;
    problem.q = q;
    Ok(problem)
}

fn multiplicative_step(w: &[f64], g: &DVector<f64>, eta: f64) -> Vec<f64> {
    let shift = w
        .iter()
        .zip(g.iter())
        .filter(|(wi, _)| **wi > 0.0)
        .map(|(_, gi)| -eta * gi)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = w
        .iter()
        .zip(g.iter())
        .map(|(wi, gi)| if *wi > 0.0 { wi * (-eta * gi - shift).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Exponentiated gradient with a prox (extragradient) step, from the uniform
/// point, with step `c / (2 |A|_op + |b|_inf)`.
pub fn optimize(problem: &QaggProblem, cfg: &QaggConfig) -> Result<SimplexWeights> {
    cfg.validate()?;
    let agents = problem.agents();
    if agents == 1 {
        return Ok(SimplexWeights(vec![1.0]));
    }
    let lipschitz = 2.0 * problem.op_norm_a + problem.inf_norm_b;
    if !lipschitz.is_finite() {
        return Err(Error::Numerical("objective has non-finite coefficients".into()));
    }
    let mut w = vec![1.0 / agents as f64; agents];
    if lipschitz == 0.0 {
        return Ok(SimplexWeights(w));
    }
    let eta = cfg.step_scale / lipschitz;
    for _ in 0..cfg.iterations {
        let g = problem.gradient(&w);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        let proxy = multiplicative_step(&w, &g, eta);
        let g_proxy = problem.gradient(&proxy);
        if g_proxy.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        w = multiplicative_step(&w, &g_proxy, eta);
    }
    Ok(SimplexWeights(w))
}

/// Learns one weight vector per agent, each agent acting as the target with
/// its own local features. Row `t` of the result belongs to target `t`.
pub fn learn_weights(embs: &[Embedding], locals: &[LocalFeatureSet], cfg: &QaggConfig) -> Result<Vec<SimplexWeights>> {
    check_dim(embs.len(), locals.len())?;
    (0..embs.len())
        .into_par_iter()
        .map(|t| {
            let cfg = cfg.clone().with_target(t);
            let problem = build_problem(embs, &locals[t], &cfg)?;
            optimize(&problem, &cfg)
        })
        .collect()
}
