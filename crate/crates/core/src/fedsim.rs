//! In-process simulation of the federated weight-learning protocol.
//!
//! Steps, in order:
//!
//! 1. the server samples the random-feature coefficients and sends them to
//!    every agent (they are regenerated from a seed here, but the ledger
//!    charges the full `D (d + 1)` payload per agent);
//! 2. each agent embeds its own sample;
//! 3. embeddings go to the server once, and each target downloads the
//!    embeddings of the other agents;
//! 4. each target builds and solves its Q-aggregation problem from those
//!    embeddings and its own local features;
//! 5. the weighted risk is minimized, in closed form from sufficient
//!    statistics or by FedAvg.
//!
//! Every read of raw agent data goes through an [`AccessAudit`]. In the
//! random-feature and polynomial modes only an agent's own data is ever read;
//! exact-kernel mode is not federated and its cross-agent reads show up as
//! violations.

use std::fmt;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::AgentDataset;
use crate::embedding::{embed, Embedding, EmbedMode, LocalFeatureSet, Scope};
use crate::error::{Error, Result};
use crate::fmt_num;
use crate::kernel::KernelSpec;
use crate::models::{fedavg, fit_weighted, FedAvgConfig, FittedModel, ModelSpec};
use crate::qagg::{build_problem, optimize, QaggConfig, SimplexWeights};
use crate::rff::RffParams;
use crate::rng::{derive_seed, GLOBAL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Rff,
    Poly2,
    /// Exact kernel inner products from raw data. Not federated.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerPath {
    ClosedForm,
    FedAvg(FedAvgConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub kernel: KernelSpec,
    pub mode: EmbeddingMode,
    pub rff_dim: usize,
    pub seed: u64,
    pub qagg: QaggConfig,
    pub model: ModelSpec,
    pub scope: Scope,
    pub optimizer: OptimizerPath,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == EmbeddingMode::Rff && self.rff_dim == 0 {
            return Err(Error::input("RFF dimension must be at least 1"));
        }
        if self.mode == EmbeddingMode::Rff && !self.kernel.is_translation_invariant() {
            return Err(Error::UnsupportedKernel(
                "random features need a translation-invariant kernel".into(),
            ));
        }
        self.qagg.validate()?;
        self.model.validate()
    }

    /// Seed of the shared random features.
    pub fn rff_seed(&self) -> u64 {
        derive_seed(self.seed, GLOBAL, "rff")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Party {
    Server,
    Agent(usize),
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Server => write!(f, "server"),
            Party::Agent(k) => write!(f, "agent_{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadKind {
    RffCoefficients,
    KernelBound,
    KmeUpload,
    KmeDownload,
    RawData,
    SufficientStats,
    ModelBroadcast,
    ModelUpdate,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PayloadKind::RffCoefficients => "rff_coefficients",
            PayloadKind::KernelBound => "kernel_bound",
            PayloadKind::KmeUpload => "kme_upload",
            PayloadKind::KmeDownload => "kme_download",
            PayloadKind::RawData => "raw_data",
            PayloadKind::SufficientStats => "sufficient_stats",
            PayloadKind::ModelBroadcast => "model_broadcast",
            PayloadKind::ModelUpdate => "model_update",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerEntry {
    pub round: String,
    pub sender: Party,
    pub receiver: Party,
    pub kind: PayloadKind,
    pub scalars: usize,
}

/// Append-only transcript of every message and its size in scalars.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommLedger {
    entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn record(&mut self, round: &str, sender: Party, receiver: Party, kind: PayloadKind, scalars: usize) {
        self.entries.push(LedgerEntry {
            round: round.to_string(),
            sender,
            receiver,
            kind,
            scalars,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total(&self, kind: PayloadKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).map(|e| e.scalars).sum()
    }

    pub fn extend(&mut self, other: CommLedger) {
        self.entries.extend(other.entries);
    }

    pub const CSV_HEADER: &'static str = "round_label,sender,receiver,payload_kind,scalar_count";

    pub fn csv_rows(&self) -> impl Iterator<Item = String> + '_ {
        self.entries
            .iter()
            .map(|e| format!("{},{},{},{},{}", e.round, e.sender, e.receiver, e.kind, e.scalars))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in self.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessRecord {
    pub phase: &'static str,
    pub reader: Party,
    pub owner: usize,
}

/// Log of raw-data reads.
#[derive(Debug, Default)]
pub struct AccessAudit {
    reads: Mutex<Vec<AccessRecord>>,
}

impl AccessAudit {
    fn read<'a>(&self, datasets: &'a [AgentDataset], owner: usize, reader: Party, phase: &'static str) -> &'a AgentDataset {
        self.reads
            .lock()
            .expect("audit lock")
            .push(AccessRecord { phase, reader, owner });
        &datasets[owner]
    }

    /// All reads, sorted so the log does not depend on scheduling.
    pub fn records(&self) -> Vec<AccessRecord> {
        let mut r = self.reads.lock().expect("audit lock").clone();
        r.sort_by(|a, b| (a.phase, a.reader, a.owner).cmp(&(b.phase, b.reader, b.owner)));
        r
    }

    /// Reads of an agent's raw data by anyone other than that agent.
    pub fn violations(&self) -> Vec<AccessRecord> {
        self.records()
            .into_iter()
            .filter(|r| r.reader != Party::Agent(r.owner))
            .collect()
    }
}

/// Learned weights for a set of targets plus the transcript that produced them.
#[derive(Debug)]
pub struct WeightSession {
    /// `(target, weights)` in the order the targets were requested.
    pub weights: Vec<(usize, SimplexWeights)>,
    pub ledger: CommLedger,
    pub audit: AccessAudit,
}

#[derive(Debug)]
pub struct ProtocolOutcome {
    pub weights: SimplexWeights,
    pub model: FittedModel,
    pub ledger: CommLedger,
    pub audit: AccessAudit,
}

fn embed_mode<'a>(cfg: &'a ProtocolConfig, params: Option<&'a RffParams>) -> EmbedMode<'a> {
    match cfg.mode {
        EmbeddingMode::Rff => EmbedMode::Rff(params.expect("sampled above")),
        EmbeddingMode::Poly2 => EmbedMode::Poly2,
        EmbeddingMode::Exact => EmbedMode::Exact(&cfg.kernel),
    }
}

/// Runs the weight-learning part of the protocol for every target in `targets`.
pub fn learn_protocol_weights(cfg: &ProtocolConfig, datasets: &[AgentDataset], targets: &[usize]) -> Result<WeightSession> {
    cfg.validate()?;
    let agents = datasets.len();
    if agents == 0 {
        return Err(Error::input("protocol needs at least one agent"));
    }
    for &t in targets {
        if t >= agents {
            return Err(Error::input(format!("target {t} out of range for {agents} agents")));
        }
        if datasets[t].n() < 2 {
            return Err(Error::DegenerateSample(format!(
                "target agent {t} has {} point(s); at least two are needed",
                datasets[t].n()
            )));
        }
    }
    let point_dim = datasets[0].point_dim(cfg.scope);
    for ds in datasets {
        if ds.point_dim(cfg.scope) != point_dim {
            return Err(Error::DimensionMismatch {
                expected: point_dim,
                got: ds.point_dim(cfg.scope),
            });
        }
    }
    if cfg.mode != EmbeddingMode::Poly2 && cfg.kernel.ambient_dim() != point_dim {
        return Err(Error::DimensionMismatch {
            expected: point_dim,
            got: cfg.kernel.ambient_dim(),
        });
    }

    let mut ledger = CommLedger::default();
    let audit = AccessAudit::default();

    let params = match cfg.mode {
        EmbeddingMode::Rff => {
            let p = RffParams::sample(&cfg.kernel, cfg.rff_dim, cfg.rff_seed())?;
            for k in 0..agents {
                ledger.record("sampling", Party::Server, Party::Agent(k), PayloadKind::RffCoefficients, p.payload_len());
            }
            Some(p)
        }
        _ => None,
    };
    let mode = embed_mode(cfg, params.as_ref());

    // local embeddings, each agent on its own data
    let embs: Vec<Embedding> = (0..agents)
        .into_par_iter()
        .map(|k| {
            let data = audit.read(datasets, k, Party::Agent(k), "local_embedding");
            embed(data, mode, cfg.scope)
        })
        .collect::<Result<_>>()?;

    let mut qagg = cfg.qagg.clone();
    if cfg.mode == EmbeddingMode::Poly2 && qagg.bound.is_none() {
        let bounds: Vec<f64> = (0..agents)
            .map(|k| {
                let data = audit.read(datasets, k, Party::Agent(k), "local_bound");
                KernelSpec::poly2(point_dim)?.bound(Some(&data.points(cfg.scope)?))
            })
            .collect::<Result<_>>()?;
        if agents > 1 {
            for k in 0..agents {
                ledger.record("sharing", Party::Agent(k), Party::Server, PayloadKind::KernelBound, 1);
            }
        }
        qagg.bound = Some(bounds.into_iter().fold(0.0, f64::max));
    }

    let share_kind = if cfg.mode == EmbeddingMode::Exact {
        PayloadKind::RawData
    } else {
        PayloadKind::KmeUpload
    };
    for (k, e) in embs.iter().enumerate() {
        if targets.iter().any(|&t| t != k) {
            ledger.record("sharing", Party::Agent(k), Party::Server, share_kind, e.payload_len());
        }
    }
    for &t in targets {
        let scalars: usize = embs
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != t)
            .map(|(_, e)| e.payload_len())
            .sum();
        if scalars > 0 {
            let kind = if cfg.mode == EmbeddingMode::Exact {
                PayloadKind::RawData
            } else {
                PayloadKind::KmeDownload
            };
            ledger.record("sharing", Party::Server, Party::Agent(t), kind, scalars);
        }
    }

    let weights: Vec<(usize, SimplexWeights)> = targets
        .par_iter()
        .map(|&t| {
            let own = audit.read(datasets, t, Party::Agent(t), "weights");
            if cfg.mode == EmbeddingMode::Exact {
                for k in (0..agents).filter(|k| *k != t) {
                    audit.read(datasets, k, Party::Agent(t), "weights");
                }
            }
            let local = LocalFeatureSet::build(own, mode, cfg.scope)?;
            let cfg_t = qagg.clone().with_target(t);
            let problem = build_problem(&embs, &local, &cfg_t)?;
            Ok((t, optimize(&problem, &cfg_t)?))
        })
        .collect::<Result<_>>()?;

    Ok(WeightSession { weights, ledger, audit })
}

/// Minimizes the target's weighted risk along the configured path and
/// charges the traffic to `ledger`.
pub fn fit_for_target(
    cfg: &ProtocolConfig,
    datasets: &[AgentDataset],
    target: usize,
    weights: &SimplexWeights,
    ledger: &mut CommLedger,
) -> Result<FittedModel> {
    let d = datasets[0].feature_dim();
    let p = d + usize::from(cfg.model.fit_intercept);
    match &cfg.optimizer {
        OptimizerPath::ClosedForm => {
            let model = fit_weighted(&cfg.model, weights, datasets)?;
            for k in (0..datasets.len()).filter(|k| *k != target && weights[*k] > 0.0) {
                ledger.record("fit", Party::Agent(k), Party::Agent(target), PayloadKind::SufficientStats, p * (p + 1) / 2 + p);
            }
            Ok(model)
        }
        OptimizerPath::FedAvg(fa) => {
            let model = fedavg(&cfg.model, weights, datasets, fa)?;
            let params = model.params().len();
            let label = format!("fedavg[{} rounds]", fa.rounds);
            for k in (0..datasets.len()).filter(|k| weights[*k] > 0.0) {
                ledger.record(&label, Party::Server, Party::Agent(k), PayloadKind::ModelBroadcast, fa.rounds * params);
                ledger.record(&label, Party::Agent(k), Party::Server, PayloadKind::ModelUpdate, fa.rounds * params);
            }
            Ok(model)
        }
    }
}

/// The full protocol for one target agent.
pub fn run_protocol(cfg: &ProtocolConfig, datasets: &[AgentDataset], target: usize) -> Result<ProtocolOutcome> {
    let session = learn_protocol_weights(cfg, datasets, &[target])?;
    let WeightSession {
        mut weights,
        mut ledger,
        audit,
    } = session;
    let (_, w) = weights.pop().expect("one target requested");
    let model = fit_for_target(cfg, datasets, target, &w, &mut ledger)?;
    Ok(ProtocolOutcome {
        weights: w,
        model,
        ledger,
        audit,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum BaselinePolicy {
    Local,
    GrandMean,
    /// Ground-truth group of every agent.
    Oracle(Vec<usize>),
}

pub fn baseline_weights(policy: &BaselinePolicy, datasets: &[AgentDataset], target: usize) -> Result<SimplexWeights> {
    let agents = datasets.len();
    if target >= agents {
        return Err(Error::input(format!("target {target} out of range for {agents} agents")));
    }
    match policy {
        BaselinePolicy::Local => Ok(SimplexWeights::vertex(agents, target)),
        BaselinePolicy::GrandMean => SimplexWeights::from_unnormalized(datasets.iter().map(|d| d.n() as f64).collect()),
        BaselinePolicy::Oracle(groups) => {
            if groups.len() != agents {
                return Err(Error::input(format!(
                    "oracle needs a group for each of the {agents} agents, got {}",
                    groups.len()
                )));
            }
            let g = groups[target];
            SimplexWeights::from_unnormalized(
                datasets
                    .iter()
                    .zip(groups)
                    .map(|(d, gk)| if *gk == g { d.n() as f64 } else { 0.0 })
                    .collect(),
            )
            .map_err(|_| Error::input(format!("oracle group {g} is empty")))
        }
    }
}

/// Formats a weight matrix as `target_id,w_1..w_B`.
pub fn weights_csv(rows: &[(usize, SimplexWeights)]) -> String {
    let agents = rows.first().map(|(_, w)| w.len()).unwrap_or(0);
    let mut out = String::from("target_id");
    for k in 1..=agents {
        out.push_str(&format!(",w_{k}"));
    }
    out.push('\n');
    for (t, w) in rows {
        out.push_str(&t.to_string());
        for v in w.as_slice() {
            out.push(',');
            out.push_str(&fmt_num(*v));
        }
        out.push('\n');
    }
    out
}
