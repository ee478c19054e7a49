//! Experiment configuration (TOML) and the repetition runner behind the CLI.
//!
//! A run is a grid of units `(parameter, repetition)`. Each unit generates
//! (or loads) agents, learns weights for every method and target, fits the
//! target models and scores them on held-out data. Units run in parallel;
//! rows are sorted before writing so output bytes do not depend on the
//! thread count.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, AgentDataset, CsvSchema, FeatureColumns};
use crate::datagen::{gen_concept_shift, gen_covariate_shift, ConceptShiftSpec, CovariateShiftSpec};
use crate::embedding::Scope;
use crate::error::{Error, Result};
use crate::fedsim::{
    baseline_weights, fit_for_target, learn_protocol_weights, BaselinePolicy, CommLedger, EmbeddingMode, LedgerEntry,
    OptimizerPath, ProtocolConfig,
};
use crate::fmt_num;
use crate::kernel::KernelSpec;
use crate::models::{evaluate, Metric, ModelKind, ModelSpec};
use crate::qagg::{QaggConfig, SimplexWeights};
use crate::rng::{derive_seed, GLOBAL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Local,
    GrandMean,
    Oracle,
    Qagg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Local => "local",
            Method::GrandMean => "grand_mean",
            Method::Oracle => "oracle",
            Method::Qagg => "qagg",
        }
    }

    fn is_baseline(self) -> bool {
        self != Method::Qagg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Targets {
    /// The string `"all"`.
    All(String),
    List(Vec<usize>),
}

impl Default for Targets {
    fn default() -> Self {
        Targets::List(vec![0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    ConceptShift {
        sigma_c2_grid: Vec<f64>,
        repetitions: usize,
        test_points: usize,
        agents: usize,
        n_k: usize,
        dim: usize,
        sigma_y2: f64,
    },
    CovariateShift {
        repetitions: usize,
        test_points: usize,
        agents: usize,
        k1: usize,
        k2: usize,
        n_k: usize,
        dim: usize,
        v1_2: f64,
        v2_2: f64,
        sigma1_2: f64,
        sigma2_2: f64,
        mu0: Vec<f64>,
    },
    /// Agents loaded from CSV. Without a test file models are scored on
    /// their training data.
    Custom {
        train: PathBuf,
        test: Option<PathBuf>,
        repetitions: usize,
        agent_column: String,
        feature_prefix: String,
        label_column: String,
        group_column: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelConfig {
    /// `exp(-|z - z'|^2 / (2 bandwidth^2))`.
    Isotropic { bandwidth: f64 },
    /// Frequencies `N(0, diag(I_d / (d + 1), 1))` on `(x, y)` tuples.
    LabelWeighted,
    /// `exp(-sum_j a_j (z_j - z'_j)^2)` with explicit scales.
    Diagonal { scales: Vec<f64> },
    /// Isotropic bandwidth from the median pairwise distance of the first
    /// target's sample.
    MedianHeuristic,
    Poly2,
}

impl KernelConfig {
    fn resolve(&self, point_dim: usize, feature_dim: usize, sample: &[Vec<f64>]) -> Result<KernelSpec> {
        match self {
            KernelConfig::Isotropic { bandwidth } => KernelSpec::isotropic(point_dim, *bandwidth),
            KernelConfig::LabelWeighted => {
                if point_dim != feature_dim + 1 {
                    return Err(Error::Config(
                        "label_weighted kernel needs the full (x, y) tuple scope".into(),
                    ));
                }
                KernelSpec::label_weighted(feature_dim)
            }
            KernelConfig::Diagonal { scales } => {
                if scales.len() != point_dim {
                    return Err(Error::DimensionMismatch {
                        expected: point_dim,
                        got: scales.len(),
                    });
                }
                KernelSpec::gaussian(scales.clone())
            }
            KernelConfig::MedianHeuristic => KernelSpec::median_heuristic(sample),
            KernelConfig::Poly2 => KernelSpec::poly2(point_dim),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaggPreset {
    /// `C_Q^2 = C_P = log B`.
    LogB,
    /// `C_Q = C_P = 1`.
    Unit,
    /// `C_Q^2 = C_P = 2 log(B n_1)`.
    Theory,
    /// `c_q` and `c_p` given explicitly.
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaggSettings {
    pub preset: QaggPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_p: Option<f64>,
    pub iterations: usize,
    pub step_scale: f64,
}

impl Default for QaggSettings {
    fn default() -> Self {
        QaggSettings {
            preset: QaggPreset::LogB,
            c_q: None,
            c_p: None,
            iterations: 1000,
            step_scale: 0.5,
        }
    }
}

impl QaggSettings {
    fn resolve(&self, agents: usize, n1: usize) -> Result<QaggConfig> {
        let base = match self.preset {
            QaggPreset::LogB => QaggConfig::log_b(agents),
            QaggPreset::Unit => QaggConfig::unit(),
            QaggPreset::Theory => QaggConfig::theory(agents, n1),
            QaggPreset::Manual => QaggConfig {
                c_q: self
                    .c_q
                    .ok_or_else(|| Error::Config("manual preset needs qagg.c_q".into()))?,
                c_p: self
                    .c_p
                    .ok_or_else(|| Error::Config("manual preset needs qagg.c_p".into()))?,
                ..QaggConfig::default()
            },
        };
        Ok(QaggConfig {
            iterations: self.iterations,
            step_scale: self.step_scale,
            ..base
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSettings {
    pub mode: EmbeddingMode,
    pub rff_dim: usize,
    pub scope: Scope,
    pub kernel: KernelConfig,
    pub qagg: QaggSettings,
    pub model: ModelSpec,
    pub optimizer: OptimizerPath,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub targets: Targets,
    pub experiment: ExperimentKind,
    pub protocol: ProtocolSettings,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: &str| Err(Error::Config(m.to_string()));
        if self.methods.is_empty() {
            return cfg_err("methods must not be empty");
        }
        if let Targets::All(s) = &self.targets {
            if s != "all" {
                return cfg_err("targets must be \"all\" or a list of agent indices");
            }
        }
        if let Targets::List(l) = &self.targets {
            if l.is_empty() {
                return cfg_err("targets list must not be empty");
            }
        }
        match &self.experiment {
            ExperimentKind::ConceptShift {
                sigma_c2_grid,
                repetitions,
                test_points,
                ..
            } => {
                if sigma_c2_grid.is_empty() {
                    return cfg_err("sigma_c2_grid must not be empty");
                }
                if sigma_c2_grid.iter().any(|s| !(0.0..=1.0).contains(s)) {
                    return cfg_err("sigma_c2_grid values must lie in [0, 1]");
                }
                if *repetitions == 0 || *test_points == 0 {
                    return cfg_err("repetitions and test_points must be at least 1");
                }
            }
            ExperimentKind::CovariateShift {
                repetitions,
                test_points,
                ..
            } => {
                if *repetitions == 0 || *test_points == 0 {
                    return cfg_err("repetitions and test_points must be at least 1");
                }
            }
            ExperimentKind::Custom { repetitions, .. } => {
                if *repetitions == 0 {
                    return cfg_err("repetitions must be at least 1");
                }
            }
        }
        let p = &self.protocol;
        if p.mode == EmbeddingMode::Rff && p.rff_dim == 0 {
            return cfg_err("rff_dim must be at least 1");
        }
        if p.mode == EmbeddingMode::Rff && matches!(p.kernel, KernelConfig::Poly2) {
            return cfg_err("random features need a Gaussian kernel");
        }
        if p.qagg.iterations == 0 || !p.qagg.step_scale.is_finite() || p.qagg.step_scale <= 0.0 {
            return cfg_err("qagg.iterations and qagg.step_scale must be positive");
        }
        p.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Parameter values of the grid (σ_c² values, or a single 0 otherwise).
    fn grid(&self) -> Vec<f64> {
        match &self.experiment {
            ExperimentKind::ConceptShift { sigma_c2_grid, .. } => sigma_c2_grid.clone(),
            _ => vec![0.0],
        }
    }

    fn repetitions(&self) -> usize {
        match &self.experiment {
            ExperimentKind::ConceptShift { repetitions, .. }
            | ExperimentKind::CovariateShift { repetitions, .. }
            | ExperimentKind::Custom { repetitions, .. } => *repetitions,
        }
    }
}

/// What a run produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    /// All configured methods, scored.
    Full,
    /// Q-aggregation weights only.
    WeightsOnly,
    /// The configured baseline methods, scored.
    BaselinesOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub param: f64,
    pub repetition: usize,
    pub target: usize,
    pub value: f64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightRow {
    pub param: f64,
    pub repetition: usize,
    pub target: usize,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommRow {
    pub param: f64,
    pub repetition: usize,
    pub entry: LedgerEntry,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentOutput {
    pub results: Vec<ResultRow>,
    pub weights: Vec<WeightRow>,
    pub comm: Vec<CommRow>,
}

impl ExperimentOutput {
    /// Mean score of `method` at `param` over repetitions and targets,
    /// ignoring failed rows.
    pub fn mean(&self, method: Method, param: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .results
            .iter()
            .filter(|r| r.method == method && r.param == param && r.status == "ok")
            .map(|r| r.value)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn results_csv(&self) -> String {
        let mut out = String::from("method,param,repetition,target_agent,mse_or_accuracy,status\n");
        for r in &self.results {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method.name(),
                fmt_num(r.param),
                r.repetition,
                r.target,
                fmt_num(r.value),
                csv_safe(&r.status)
            ));
        }
        out
    }

    pub fn weights_csv(&self) -> String {
        let agents = self.weights.first().map(|w| w.weights.len()).unwrap_or(0);
        let mut out = String::from("param,repetition,target_id");
        for k in 1..=agents {
            out.push_str(&format!(",w_{k}"));
        }
        out.push('\n');
        for w in &self.weights {
            out.push_str(&format!("{},{},{}", fmt_num(w.param), w.repetition, w.target));
            for v in &w.weights {
                out.push(',');
                out.push_str(&fmt_num(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn comm_csv(&self) -> String {
        let mut out = format!("param,repetition,{}\n", CommLedger::CSV_HEADER);
        for c in &self.comm {
            let e = &c.entry;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_num(c.param),
                c.repetition,
                e.round,
                e.sender,
                e.receiver,
                e.kind,
                e.scalars
            ));
        }
        out
    }

    /// Writes results.csv (unless only weights were learned), weights.csv and
    /// comm.csv into `dir`.
    pub fn write(&self, dir: &Path, mode: RunMode) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files: Vec<(&str, String)> = Vec::new();
        if mode != RunMode::WeightsOnly {
            files.push(("results.csv", self.results_csv()));
        }
        if mode != RunMode::BaselinesOnly {
            files.push(("weights.csv", self.weights_csv()));
            files.push(("comm.csv", self.comm_csv()));
        }
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn csv_safe(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

/// One generated (or loaded) population of agents.
struct Population {
    train: Vec<AgentDataset>,
    groups: Option<Vec<usize>>,
    tests: Vec<AgentDataset>,
}

fn population(cfg: &ExperimentConfig, param: f64, seed: u64, targets: &dyn Fn(usize) -> Vec<usize>) -> Result<(Population, Vec<usize>)> {
    match &cfg.experiment {
        ExperimentKind::ConceptShift {
            test_points,
            agents,
            n_k,
            dim,
            sigma_y2,
            ..
        } => {
            let sample = gen_concept_shift(&ConceptShiftSpec {
                agents: *agents,
                n_k: *n_k,
                dim: *dim,
                sigma_c2: param,
                sigma_y2: *sigma_y2,
                seed,
            })?;
            let ts = targets(*agents);
            let tests = ts.iter().map(|&t| sample.test_set(t, *test_points)).collect::<Result<_>>()?;
            Ok((
                Population {
                    groups: Some(sample.groups.clone()),
                    train: sample.datasets,
                    tests,
                },
                ts,
            ))
        }
        ExperimentKind::CovariateShift {
            test_points,
            agents,
            k1,
            k2,
            n_k,
            dim,
            v1_2,
            v2_2,
            sigma1_2,
            sigma2_2,
            mu0,
            ..
        } => {
            let sample = gen_covariate_shift(&CovariateShiftSpec {
                dim: *dim,
                k1: *k1,
                k2: *k2,
                agents: *agents,
                n_k: *n_k,
                v1_2: *v1_2,
                v2_2: *v2_2,
                sigma1_2: *sigma1_2,
                sigma2_2: *sigma2_2,
                mu0: mu0.clone(),
                seed,
            })?;
            let ts = targets(*agents);
            let tests = ts.iter().map(|&t| sample.test_set(t, *test_points)).collect::<Result<_>>()?;
            Ok((
                Population {
                    groups: Some(sample.groups.clone()),
                    train: sample.datasets,
                    tests,
                },
                ts,
            ))
        }
        ExperimentKind::Custom {
            train,
            test,
            agent_column,
            feature_prefix,
            label_column,
            group_column,
            ..
        } => {
            let schema = CsvSchema {
                agent_column: agent_column.clone(),
                features: FeatureColumns::Prefix(feature_prefix.clone()),
                label_column: Some(label_column.clone()),
                group_column: group_column.clone(),
            };
            let named = load_csv(train, &schema)?;
            let ids: Vec<String> = named.iter().map(|n| n.agent_id.clone()).collect();
            let groups = group_column
                .as_ref()
                .map(|_| named.iter().map(|n| n.data.group().unwrap_or(0)).collect());
            let train_sets: Vec<AgentDataset> = named.into_iter().map(|n| n.data).collect();
            let ts = targets(train_sets.len());
            let tests = match test {
                Some(path) => {
                    let test_schema = CsvSchema {
                        group_column: None,
                        ..schema
                    };
                    let named_test = load_csv(path, &test_schema)?;
                    ts.iter()
                        .map(|&t| {
                            named_test
                                .iter()
                                .find(|n| n.agent_id == ids[t])
                                .map(|n| n.data.clone())
                                .ok_or_else(|| Error::input(format!("no test data for agent '{}'", ids[t])))
                        })
                        .collect::<Result<_>>()?
                }
                None => ts.iter().map(|&t| train_sets[t].clone()).collect(),
            };
            Ok((
                Population {
                    train: train_sets,
                    groups,
                    tests,
                },
                ts,
            ))
        }
    }
}

fn resolve_targets(targets: &Targets, agents: usize) -> Vec<usize> {
    match targets {
        Targets::All(_) => (0..agents).collect(),
        Targets::List(l) => l.clone(),
    }
}

fn protocol_config(cfg: &ExperimentConfig, pop: &Population, first_target: usize, seed: u64) -> Result<ProtocolConfig> {
    let p = &cfg.protocol;
    let sample = &pop.train[first_target];
    let point_dim = sample.point_dim(p.scope);
    let kernel = p
        .kernel
        .resolve(point_dim, sample.feature_dim(), &sample.points(p.scope)?)?;
    let qagg = p.qagg.resolve(pop.train.len(), sample.n())?;
    Ok(ProtocolConfig {
        kernel,
        mode: p.mode,
        rff_dim: p.rff_dim,
        seed,
        qagg,
        model: p.model.clone(),
        scope: p.scope,
        optimizer: p.optimizer.clone(),
    })
}

struct UnitOutput {
    results: Vec<ResultRow>,
    weights: Vec<WeightRow>,
    comm: Vec<CommRow>,
}

fn run_unit(cfg: &ExperimentConfig, mode: RunMode, param: f64, rep: usize) -> UnitOutput {
    let seed = derive_seed(cfg.seed, rep as u64, "repetition");
    let methods: Vec<Method> = cfg
        .methods
        .iter()
        .copied()
        .filter(|m| match mode {
            RunMode::Full => true,
            RunMode::WeightsOnly => *m == Method::Qagg,
            RunMode::BaselinesOnly => m.is_baseline(),
        })
        .collect();
    let target_fn = |agents: usize| resolve_targets(&cfg.targets, agents);
    let mut out = UnitOutput {
        results: Vec::new(),
        weights: Vec::new(),
        comm: Vec::new(),
    };
    let fail_all = |out: &mut UnitOutput, targets: &[usize], methods: &[Method], msg: String| {
        for &m in methods {
            for &t in targets {
                out.results.push(ResultRow {
                    method: m,
                    param,
                    repetition: rep,
                    target: t,
                    value: f64::NAN,
                    status: format!("error: {msg}"),
                });
            }
        }
    };

    let (pop, targets) = match population(cfg, param, seed, &target_fn) {
        Ok(p) => p,
        Err(e) => {
            let ts = match cfg.targets {
                Targets::List(ref l) => l.clone(),
                Targets::All(_) => vec![0],
            };
            fail_all(&mut out, &ts, &methods, e.to_string());
            return out;
        }
    };
    if let Some(bad) = targets.iter().find(|t| **t >= pop.train.len()) {
        fail_all(&mut out, &targets, &methods, format!("target {bad} out of range"));
        return out;
    }
    let protocol = match protocol_config(cfg, &pop, targets[0], derive_seed(seed, GLOBAL, "protocol")) {
        Ok(p) => p,
        Err(e) => {
            fail_all(&mut out, &targets, &methods, e.to_string());
            return out;
        }
    };
    let metric = match protocol.model.kind {
        ModelKind::LogisticGd { .. } => Metric::Accuracy,
        _ => Metric::Mse,
    };
    let param_of = |t: usize| -> f64 {
        match cfg.experiment {
            ExperimentKind::CovariateShift { .. } => pop.groups.as_ref().map(|g| g[t] as f64).unwrap_or(0.0),
            _ => param,
        }
    };

    for &method in &methods {
        let weights: Result<Vec<(usize, SimplexWeights)>> = match method {
            Method::Qagg => learn_protocol_weights(&protocol, &pop.train, &targets).map(|session| {
                for entry in session.ledger.entries() {
                    out.comm.push(CommRow {
                        param,
                        repetition: rep,
                        entry: entry.clone(),
                    });
                }
                session.weights
            }),
            _ => {
                let policy = match method {
                    Method::Local => Ok(BaselinePolicy::Local),
                    Method::GrandMean => Ok(BaselinePolicy::GrandMean),
                    _ => pop
                        .groups
                        .clone()
                        .map(BaselinePolicy::Oracle)
                        .ok_or_else(|| Error::input("oracle baseline needs group labels")),
                };
                policy.and_then(|policy| {
                    targets
                        .iter()
                        .map(|&t| baseline_weights(&policy, &pop.train, t).map(|w| (t, w)))
                        .collect()
                })
            }
        };
        let weights = match weights {
            Ok(w) => w,
            Err(e) => {
                fail_all(&mut out, &targets, &[method], e.to_string());
                continue;
            }
        };
        if method == Method::Qagg {
            for (t, w) in &weights {
                out.weights.push(WeightRow {
                    param,
                    repetition: rep,
                    target: *t,
                    weights: w.as_slice().to_vec(),
                });
            }
        }
        if mode == RunMode::WeightsOnly {
            continue;
        }
        let scored: Vec<ResultRow> = weights
            .par_iter()
            .enumerate()
            .map(|(i, (t, w))| {
                let mut scratch = CommLedger::default();
                let value = fit_for_target(&protocol, &pop.train, *t, w, &mut scratch)
                    .and_then(|model| evaluate(&model, &pop.tests[i], metric));
                let (value, status) = match value {
                    Ok(v) => (v, "ok".to_string()),
                    Err(e) => (f64::NAN, format!("error: {e}")),
                };
                ResultRow {
                    method,
                    param: param_of(*t),
                    repetition: rep,
                    target: *t,
                    value,
                    status,
                }
            })
            .collect();
        out.results.extend(scored);
    }
    out
}

/// Runs every `(parameter, repetition)` unit of the grid on the current
/// rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig, mode: RunMode) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let grid = cfg.grid();
    let units: Vec<(f64, usize)> = grid
        .iter()
        .flat_map(|p| (0..cfg.repetitions()).map(move |r| (*p, r)))
        .collect();
    let outputs: Vec<UnitOutput> = units.par_iter().map(|(p, r)| run_unit(cfg, mode, *p, *r)).collect();
    let mut out = ExperimentOutput::default();
    for u in outputs {
        out.results.extend(u.results);
        out.weights.extend(u.weights);
        out.comm.extend(u.comm);
    }
    out.results.sort_by(|a, b| {
        (a.method, a.param, a.repetition, a.target)
            .partial_cmp(&(b.method, b.param, b.repetition, b.target))
            .expect("parameters are finite")
    });
    out.weights.sort_by(|a, b| {
        (a.param, a.repetition, a.target)
            .partial_cmp(&(b.param, b.repetition, b.target))
            .expect("parameters are finite")
    });
    // ledger entries keep protocol order within a unit
    out.comm.sort_by(|a, b| {
        (a.param, a.repetition)
            .partial_cmp(&(b.param, b.repetition))
            .expect("parameters are finite")
    });
    Ok(out)
}

/// Generates the agents of repetition 0 at the first grid value.
pub fn generate_datasets(cfg: &ExperimentConfig) -> Result<Vec<AgentDataset>> {
    cfg.validate()?;
    let seed = derive_seed(cfg.seed, 0, "repetition");
    let param = cfg.grid()[0];
    let (pop, _) = population(cfg, param, seed, &|_| Vec::new())?;
    Ok(pop.train)
}
