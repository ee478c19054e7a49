//! Weighted empirical risk minimization: `min_theta sum_k w_k R_k(theta)`.
//!
//! Ridge regression has a closed-form solution and serves as the exact
//! minimizer; the gradient-descent models and the simulated FedAvg loop share
//! one gradient implementation.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::AgentDataset;
use crate::error::{check_dim, Error, Result};
use crate::fmt_num;
use crate::qagg::SimplexWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Squared loss plus `lambda |W|^2` (the intercept is not penalized).
    Ridge { lambda: f64 },
    LinearGd { lr: f64, epochs: usize },
    /// Softmax cross-entropy; labels are class indices in `0..classes`.
    LogisticGd { lr: f64, epochs: usize, classes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub fit_intercept: bool,
}

impl ModelSpec {
    pub fn ridge(lambda: f64, fit_intercept: bool) -> Self {
        ModelSpec {
            kind: ModelKind::Ridge { lambda },
            fit_intercept,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::Ridge { lambda } => {
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return Err(Error::input(format!("ridge lambda must be >= 0, got {lambda}")));
                }
            }
            ModelKind::LinearGd { lr, epochs } => check_gd(lr, epochs)?,
            ModelKind::LogisticGd { lr, epochs, classes } => {
                check_gd(lr, epochs)?;
                if classes < 2 {
                    return Err(Error::input("logistic model needs at least two classes"));
                }
            }
        }
        Ok(())
    }

    fn outputs(&self) -> usize {
        match self.kind {
            ModelKind::LogisticGd { classes, .. } => classes,
            _ => 1,
        }
    }

    fn l2(&self) -> f64 {
        match self.kind {
            ModelKind::Ridge { lambda } => lambda,
            _ => 0.0,
        }
    }

    fn is_classifier(&self) -> bool {
        matches!(self.kind, ModelKind::LogisticGd { .. })
    }

    fn param_len(&self, d: usize) -> usize {
        self.outputs() * (d + usize::from(self.fit_intercept))
    }
}

fn check_gd(lr: f64, epochs: usize) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::input(format!("learning rate must be positive, got {lr}")));
    }
    if epochs == 0 {
        return Err(Error::input("epochs must be at least 1"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitStatus {
    Ok,
    /// The normal equations were singular; the minimum-norm solution was used.
    MinimumNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    /// One row per output (one for regression, one per class otherwise).
    pub coefficients: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub spec: ModelSpec,
    pub status: FitStatus,
}

impl FittedModel {
    fn from_params(spec: &ModelSpec, d: usize, theta: &DVector<f64>, status: FitStatus) -> Self {
        let outputs = spec.outputs();
        let stride = d + usize::from(spec.fit_intercept);
        let coefficients = DMatrix::from_fn(outputs, d, |o, j| theta[o * stride + j]);
        let intercept = DVector::from_fn(outputs, |o, _| {
            if spec.fit_intercept {
                theta[o * stride + d]
            } else {
                0.0
            }
        });
        FittedModel {
            coefficients,
            intercept,
            spec: spec.clone(),
            status,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Flattened parameters: per output, coefficients then the intercept.
    pub fn params(&self) -> DVector<f64> {
        let d = self.feature_dim();
        let stride = d + usize::from(self.spec.fit_intercept);
        let mut theta = DVector::zeros(self.coefficients.nrows() * stride);
        for o in 0..self.coefficients.nrows() {
            for j in 0..d {
                theta[o * stride + j] = self.coefficients[(o, j)];
            }
            if self.spec.fit_intercept {
                theta[o * stride + d] = self.intercept[o];
            }
        }
        theta
    }

    fn scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = x * self.coefficients.transpose();
        for mut row in s.row_iter_mut() {
            row += self.intercept.transpose();
        }
        s
    }

    /// Regression outputs, or predicted class indices for classifiers.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim(self.feature_dim(), x.ncols())?;
        let s = self.scores(x);
        if self.spec.is_classifier() {
            Ok(DVector::from_fn(x.nrows(), |i, _| s.row(i).transpose().argmax().0 as f64))
        } else {
            Ok(s.column(0).into_owned())
        }
    }

    /// `output,intercept,w_1..w_d`, one row per output.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("output,intercept");
        for j in 1..=self.feature_dim() {
            let _ = write!(out, ",w_{j}");
        }
        out.push('\n');
        for o in 0..self.coefficients.nrows() {
            let _ = write!(out, "{o},{}", fmt_num(self.intercept[o]));
            for j in 0..self.feature_dim() {
                let _ = write!(out, ",{}", fmt_num(self.coefficients[(o, j)]));
            }
            out.push('\n');
        }
        out
    }
}

fn validate_inputs(spec: &ModelSpec, weights: &SimplexWeights, datasets: &[AgentDataset]) -> Result<usize> {
    spec.validate()?;
    check_dim(datasets.len(), weights.len())?;
    let d = datasets
        .first()
        .map(AgentDataset::feature_dim)
        .ok_or_else(|| Error::input("no datasets"))?;
    for ds in datasets {
        check_dim(d, ds.feature_dim())?;
        let y = ds.y().ok_or_else(|| Error::input("model fitting requires labels"))?;
        if let ModelKind::LogisticGd { classes, .. } = spec.kind {
            if let Some(bad) = y.iter().find(|v| v.fract() != 0.0 || **v < 0.0 || **v >= classes as f64) {
                return Err(Error::input(format!("label {bad} is not a class index below {classes}")));
            }
        }
    }
    Ok(d)
}

fn normalized(weights: &SimplexWeights) -> Result<Vec<f64>> {
    let sum: f64 = weights.as_slice().iter().sum();
    if sum <= 0.0 {
        return Err(Error::input("all weights are zero"));
    }
    Ok(weights.as_slice().iter().map(|w| w / sum).collect())
}

/// Unweighted empirical risk of one dataset (without the penalty).
pub fn local_risk(spec: &ModelSpec, data: &AgentDataset, theta: &DVector<f64>) -> f64 {
    let d = data.feature_dim();
    let model = FittedModel::from_params(spec, d, theta, FitStatus::Ok);
    let s = model.scores(data.x());
    let y = data.y().expect("labels validated");
    let n = data.n() as f64;
    if spec.is_classifier() {
        let mut loss = 0.0;
        for i in 0..data.n() {
            let row = s.row(i);
            let max = row.max();
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y[i] as usize];
        }
        loss / n
    } else {
        s.column(0).iter().zip(y.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
    }
}

/// Gradient of [`local_risk`] with respect to the flattened parameters.
pub fn local_gradient(spec: &ModelSpec, data: &AgentDataset, theta: &DVector<f64>) -> DVector<f64> {
    let d = data.feature_dim();
    let model = FittedModel::from_params(spec, d, theta, FitStatus::Ok);
    let s = model.scores(data.x());
    let y = data.y().expect("labels validated");
    let n = data.n() as f64;
    let outputs = spec.outputs();
    // residual-like matrix r (n x outputs): dLoss_i / dScore_io
    let r = if spec.is_classifier() {
        DMatrix::from_fn(data.n(), outputs, |i, o| {
            let row = s.row(i);
            let max = row.max();
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let p = (row[o] - max).exp() / z;
            p - f64::from(u8::from(y[i] as usize == o))
        })
    } else {
        DMatrix::from_fn(data.n(), 1, |i, _| 2.0 * (s[(i, 0)] - y[i]))
    };
    let gw = r.transpose() * data.x() / n;
    let stride = d + usize::from(spec.fit_intercept);
    let mut g = DVector::zeros(outputs * stride);
    for o in 0..outputs {
        for j in 0..d {
            g[o * stride + j] = gw[(o, j)];
        }
        if spec.fit_intercept {
            g[o * stride + d] = r.column(o).sum() / n;
        }
    }
    g
}

fn penalty_gradient(spec: &ModelSpec, d: usize, theta: &DVector<f64>) -> DVector<f64> {
    let lambda = spec.l2();
    let stride = d + usize::from(spec.fit_intercept);
    DVector::from_fn(theta.len(), |i, _| {
        if i % stride < d {
            2.0 * lambda * theta[i]
        } else {
            0.0
        }
    })
}

fn penalty(spec: &ModelSpec, d: usize, theta: &DVector<f64>) -> f64 {
    let stride = d + usize::from(spec.fit_intercept);
    spec.l2()
        * theta
            .iter()
            .enumerate()
            .filter(|(i, _)| i % stride < d)
            .map(|(_, v)| v * v)
            .sum::<f64>()
}

/// `sum_k w_k R_k(theta) + penalty(theta)` with weights normalized to sum one.
pub fn weighted_objective(
    spec: &ModelSpec,
    weights: &SimplexWeights,
    datasets: &[AgentDataset],
    theta: &DVector<f64>,
) -> Result<f64> {
    let d = validate_inputs(spec, weights, datasets)?;
    check_dim(spec.param_len(d), theta.len())?;
    let w = normalized(weights)?;
    let mut f = penalty(spec, d, theta);
    for (wk, ds) in w.iter().zip(datasets) {
        if *wk > 0.0 {
            f += wk * local_risk(spec, ds, theta);
        }
    }
    Ok(f)
}

pub fn weighted_gradient(
    spec: &ModelSpec,
    weights: &SimplexWeights,
    datasets: &[AgentDataset],
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = validate_inputs(spec, weights, datasets)?;
    check_dim(spec.param_len(d), theta.len())?;
    let w = normalized(weights)?;
    Ok(weighted_gradient_unchecked(spec, &w, datasets, d, theta))
}

fn weighted_gradient_unchecked(
    spec: &ModelSpec,
    w: &[f64],
    datasets: &[AgentDataset],
    d: usize,
    theta: &DVector<f64>,
) -> DVector<f64> {
    let mut g = penalty_gradient(spec, d, theta);
    for (wk, ds) in w.iter().zip(datasets) {
        if *wk > 0.0 {
            g += *wk * local_gradient(spec, ds, theta);
        }
    }
    g
}

fn solve_ridge(spec: &ModelSpec, w: &[f64], datasets: &[AgentDataset], d: usize) -> (DVector<f64>, FitStatus) {
    let p = d + usize::from(spec.fit_intercept);
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for (wk, ds) in w.iter().zip(datasets) {
        if *wk <= 0.0 {
            continue;
        }
        let design = if spec.fit_intercept {
            ds.x().clone().insert_column(d, 1.0)
        } else {
            ds.x().clone()
        };
        let scale = wk / ds.n() as f64;
        gram += scale * design.transpose() * &design;
        rhs += scale * design.transpose() * ds.y().expect("labels validated");
    }
    for j in 0..d {
        gram[(j, j)] += spec.l2();
    }
    let svd = gram.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if max_sv > 0.0 && min_sv > 1e-12 * max_sv {
        if let Some(chol) = gram.clone().cholesky() {
            return (chol.solve(&rhs), FitStatus::Ok);
        }
    }
    let eps = 1e-12 * max_sv.max(f64::MIN_POSITIVE);
    let theta = svd.solve(&rhs, eps).unwrap_or_else(|_| DVector::zeros(p));
    (theta, FitStatus::MinimumNorm)
}

/// Minimizes the weighted risk: closed form for ridge, full-batch gradient
/// descent from zero otherwise.
pub fn fit_weighted(spec: &ModelSpec, weights: &SimplexWeights, datasets: &[AgentDataset]) -> Result<FittedModel> {
    let d = validate_inputs(spec, weights, datasets)?;
    let w = normalized(weights)?;
    match spec.kind {
        ModelKind::Ridge { .. } => {
            let (theta, status) = solve_ridge(spec, &w, datasets, d);
            Ok(FittedModel::from_params(spec, d, &theta, status))
        }
        ModelKind::LinearGd { lr, epochs } | ModelKind::LogisticGd { lr, epochs, .. } => {
            let mut theta = DVector::zeros(spec.param_len(d));
            for _ in 0..epochs {
                let g = weighted_gradient_unchecked(spec, &w, datasets, d, &theta);
                theta -= lr * g;
            }
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("gradient descent diverged".into()));
            }
            Ok(FittedModel::from_params(spec, d, &theta, FitStatus::Ok))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedAvgConfig {
    pub rounds: usize,
    pub local_steps: usize,
    pub lr: f64,
}

impl Default for FedAvgConfig {
    fn default() -> Self {
        FedAvgConfig {
            rounds: 200,
            local_steps: 5,
            lr: 0.01,
        }
    }
}

/// Simulated FedAvg. Every agent with positive weight starts each round from
/// the broadcast model and takes `local_steps` gradient steps on its own
/// risk (plus the penalty); the server averages the returned models with the
/// weights renormalized over participants, folding in agent order.
pub fn fedavg(
    spec: &ModelSpec,
    weights: &SimplexWeights,
    datasets: &[AgentDataset],
    cfg: &FedAvgConfig,
) -> Result<FittedModel> {
    let d = validate_inputs(spec, weights, datasets)?;
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::input(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    let w = normalized(weights)?;
    let participants: Vec<usize> = (0..datasets.len()).filter(|k| w[*k] > 0.0).collect();
    let total: f64 = participants.iter().map(|k| w[*k]).sum();
    let mut theta = DVector::zeros(spec.param_len(d));
    for _ in 0..cfg.rounds {
        let locals: Vec<DVector<f64>> = participants
            .par_iter()
            .map(|&k| {
                let mut local = theta.clone();
                for _ in 0..cfg.local_steps {
                    let g = local_gradient(spec, &datasets[k], &local) + penalty_gradient(spec, d, &local);
                    local -= cfg.lr * g;
                }
                local
            })
            .collect();
        let mut next = DVector::zeros(theta.len());
        for (k, local) in participants.iter().zip(&locals) {
            next += (w[*k] / total) * local;
        }
        theta = next;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("FedAvg diverged".into()));
        }
    }
    Ok(FittedModel::from_params(spec, d, &theta, FitStatus::Ok))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    Accuracy,
}

pub fn evaluate(model: &FittedModel, test: &AgentDataset, metric: Metric) -> Result<f64> {
    let y = test.y().ok_or_else(|| Error::input("evaluation requires labels"))?;
    if y.is_empty() {
        return Err(Error::input("empty test set"));
    }
    let pred = model.predict(test.x())?;
    let n = y.len() as f64;
    match (metric, model.spec.is_classifier()) {
        (Metric::Mse, false) => Ok(pred.iter().zip(y.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n),
        (Metric::Accuracy, true) => {
            Ok(pred.iter().zip(y.iter()).filter(|(p, t)| p == t).count() as f64 / n)
        }
        (Metric::Mse, true) => Err(Error::input("MSE is not defined for a classifier")),
        (Metric::Accuracy, false) => Err(Error::input("accuracy is not defined for a regression model")),
    }
}

/// Model predicting a constant (zero coefficients) of the given shape.
pub fn constant_model(spec: &ModelSpec, d: usize, intercept: f64) -> FittedModel {
    let outputs = spec.outputs();
    FittedModel {
        coefficients: DMatrix::zeros(outputs, d),
        intercept: DVector::from_element(outputs, intercept),
        spec: spec.clone(),
        status: FitStatus::Ok,
    }
}
