//! Joint training of the disentangled feature networks and the selection policy,
//! path extraction, target inference and the structural ablation.
//!
//! Each epoch runs `K_roll` rollouts. A rollout shuffles the intermediate pool and,
//! for every domain in that order, performs one disentangle step, builds the
//! policy state from pooled specific features, samples an action, and scores it
//! with the distance reward. The policy is updated once per epoch from all
//! rollouts.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::disentangle::{
    disentangle_step, DisentangleModel, FeatureTrace, NetworkDims, RoleBatches, StepKind,
    StepLosses, StepRates,
};
use crate::domains::{
    generate_rotated_gaussians, generate_rotated_moons, minibatch, sample_indices, DomainDataset,
    DomainId, Experiment, TransferPath,
};
use crate::error::{bail, Error, Result};
use crate::matrix::Matrix;
use crate::mlp::{xavier_init_with, Mlp, OutputActivation};
use crate::policy::{
    action_probability, build_state, compute_returns, reinforce_update, sample_action,
    step_reward, RewardConfig, RolloutStep, RolloutTrace,
};
use crate::rng::DetRng;
use crate::transport::{distance, DistanceKind, DistanceMethod};

/// Losses above this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AblationMode {
    /// `C∘I∘F` trained with cross-entropy only.
    ClassifierOnly,
    /// All disentanglement losses; every intermediate visited, no policy.
    DisentangleOnly,
    /// Disentanglement plus the learned selection policy.
    Full,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [
        AblationMode::ClassifierOnly,
        AblationMode::DisentangleOnly,
        AblationMode::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::ClassifierOnly => "classifier_only",
            AblationMode::DisentangleOnly => "disentangle_only",
            AblationMode::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// Whether reward distances compare feature clouds or pooled embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DistanceOn {
    Cloud,
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistanceConfig {
    pub method: DistanceKind,
    pub n_projections: usize,
    pub on: DistanceOn,
    /// Feature rows per domain used for reward distances and policy states.
    pub batch: usize,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            method: DistanceKind::Sliced,
            n_projections: 64,
            on: DistanceOn::Cloud,
            batch: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rates {
    pub feature: f64,
    pub mine: f64,
    pub policy: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            feature: 0.05,
            mine: 0.05,
            policy: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum DatasetSpec {
    RotatedGaussians {
        n_per_domain: usize,
        angles: Vec<f64>,
        noise_sd: f64,
    },
    RotatedMoons {
        n_per_domain: usize,
        angles: Vec<f64>,
        noise_sd: f64,
    },
    Csv {
        path: String,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::RotatedGaussians {
            n_per_domain: 500,
            angles: (0..=10).map(|i| i as f64 * 18.0).collect(),
            noise_sd: 0.3,
        }
    }
}

impl DatasetSpec {
    /// Generates synthetic domains; `None` for file-backed specs.
    pub fn generate(&self, seed: u64) -> Result<Option<Vec<DomainDataset>>> {
        match self {
            DatasetSpec::RotatedGaussians {
                n_per_domain,
                angles,
                noise_sd,
            } => generate_rotated_gaussians(*n_per_domain, angles, *noise_sd, seed).map(Some),
            DatasetSpec::RotatedMoons {
                n_per_domain,
                angles,
                noise_sd,
            } => generate_rotated_moons(*n_per_domain, angles, *noise_sd, seed).map(Some),
            DatasetSpec::Csv { .. } => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub dims: NetworkDims,
    pub policy_hidden: Vec<usize>,
    pub rates: Rates,
    pub reward: RewardConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Rollouts per epoch; `None` uses the pool size `K`.
    pub rollouts_per_epoch: Option<usize>,
    pub distance: DistanceConfig,
    pub mode: AblationMode,
    pub seed: u64,
    /// Run disentangle updates only for domains the policy selects.
    pub train_selected_only: bool,
    /// Subtract the mean return in the policy gradient.
    pub baseline: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            dims: NetworkDims::default(),
            policy_hidden: vec![16],
            rates: Rates::default(),
            reward: RewardConfig::default(),
            batch_size: 64,
            epochs: 200,
            rollouts_per_epoch: None,
            distance: DistanceConfig::default(),
            mode: AblationMode::Full,
            seed: 0,
            train_selected_only: false,
            baseline: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("rates.feature", self.rates.feature),
            ("rates.mine", self.rates.mine),
            ("rates.policy", self.rates.policy),
        ] {
            if !(r > 0.0 && r.is_finite()) {
                bail!(Config, "{} must be positive, got {}", name, r);
            }
        }
        if self.epochs == 0 {
            bail!(Config, "epochs must be >= 1");
        }
        if self.batch_size < 2 {
            bail!(Config, "batch_size must be >= 2, got {}", self.batch_size);
        }
        if self.rollouts_per_epoch == Some(0) {
            bail!(Config, "rollouts_per_epoch must be >= 1");
        }
        if self.distance.batch == 0 || self.distance.n_projections == 0 {
            bail!(Config, "distance batch and n_projections must be >= 1");
        }
        if self.policy_hidden.contains(&0) {
            bail!(Config, "policy_hidden dims must be >= 1");
        }
        self.reward.validate()?;
        self.dims.validate()
    }

    /// Seed for synthetic data, kept separate from the training streams.
    pub fn data_seed(&self) -> u64 {
        self.seed
    }

    fn distance_method(&self) -> DistanceMethod {
        match self.distance.method {
            DistanceKind::Exact => DistanceMethod::Exact,
            DistanceKind::Sliced => DistanceMethod::Sliced {
                n_projections: self.distance.n_projections,
                seed: self.seed ^ 0x5EED_D157,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RolloutRecord {
    pub order: Vec<DomainId>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_mi: f64,
    pub l_ms: f64,
    pub l_ce: f64,
    /// Mean over rollouts of the return from each rollout's first step.
    pub mean_cumulative_reward: f64,
    /// One entry per intermediate in ascending meta order: 0 if not on the
    /// current path, otherwise its 1-based position.
    pub selection_flags: Vec<u32>,
    pub path: Vec<DomainId>,
    pub rollouts: Vec<RolloutRecord>,
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn mean_rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_cumulative_reward).collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: DisentangleModel,
    pub policy: Mlp,
    pub path: TransferPath,
}

impl TrainedModel {
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        predict_target(&self.model, features)
    }
}

/// Builds a policy network for embeddings of width `phi_dim`.
pub fn new_policy(phi_dim: usize, hidden: &[usize], rng: &mut DetRng) -> Result<Mlp> {
    let mut dims = vec![3 * phi_dim];
    dims.extend_from_slice(hidden);
    dims.push(1);
    xavier_init_with(&dims, OutputActivation::Sigmoid, rng)
}

/// Arg-max of `Ĉ(Î(F̂(x)))` per row, ties going to the lower class index.
pub fn predict_target(model: &DisentangleModel, features: &Matrix) -> Result<Vec<usize>> {
    let probs = model.class_probabilities(features)?;
    Ok(probs.iter_rows().map(argmax).collect())
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        bail!(Dimension, "{} predictions for {} labels", preds.len(), labels.len());
    }
    if preds.is_empty() {
        bail!(Data, "accuracy of an empty set is undefined");
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Accuracy on the target's evaluation labels, if it has any.
pub fn target_accuracy(model: &DisentangleModel, exp: &Experiment) -> Result<Option<f64>> {
    let target = exp.target();
    match target.eval_labels.as_deref() {
        Some(labels) => Ok(Some(evaluate_accuracy(
            &predict_target(model, &target.features)?,
            labels,
        )?)),
        None => Ok(None),
    }
}

/// Greedy evaluation rollout over intermediates in ascending meta order with
/// deterministic actions `a = [p ≥ 0.5]`, using every row of each domain.
pub fn extract_path(model: &DisentangleModel, policy: &Mlp, exp: &Experiment) -> Result<TransferPath> {
    let phi = |d: &DomainDataset| -> Result<Vec<f64>> {
        Ok(FeatureTrace::new(model, &d.features)?.f_ds().column_means())
    };
    let target_phi = phi(exp.target())?;
    let mut prev_phi = phi(exp.source())?;
    let mut path = Vec::new();
    for d in exp.intermediates() {
        let cur = phi(d)?;
        let state = build_state(&prev_phi, &cur, &target_phi)?;
        if action_probability(policy, &state)? >= 0.5 {
            path.push(d.domain_id);
            prev_phi = cur;
        }
    }
    Ok(TransferPath(path))
}

/// Selection flags for `path` over the meta-sorted pool.
pub fn selection_flags(pool: &[DomainId], path: &TransferPath) -> Vec<u32> {
    pool.iter()
        .map(|id| {
            path.ids()
                .iter()
                .position(|p| p == id)
                .map_or(0, |pos| pos as u32 + 1)
        })
        .collect()
}

struct Streams {
    init: DetRng,
    policy_init: DetRng,
    batches: DetRng,
    mine: DetRng,
    order: DetRng,
    reward: DetRng,
    actions: DetRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut root = DetRng::new(seed);
        Self {
            init: root.split(),
            policy_init: root.split(),
            batches: root.split(),
            mine: root.split(),
            order: root.split(),
            reward: root.split(),
            actions: root.split(),
        }
    }
}

/// Per-domain features on a reward batch.
struct Snapshot {
    cloud: Matrix,
    phi: Vec<f64>,
}

fn snapshot(model: &DisentangleModel, d: &DomainDataset, size: usize, rng: &mut DetRng) -> Result<Snapshot> {
    let idx = sample_indices(d.len(), size.min(d.len()), rng)?;
    let trace = FeatureTrace::new(model, &d.features.select_rows(&idx))?;
    Ok(Snapshot {
        phi: trace.f_ds().column_means(),
        cloud: trace.f_ds().clone(),
    })
}

fn snapshot_distance(a: &Snapshot, b: &Snapshot, cfg: &ExperimentConfig) -> Result<f64> {
    match cfg.distance.on {
        DistanceOn::Cloud => Ok(distance(&a.cloud, &b.cloud, cfg.distance_method())?.value),
        DistanceOn::Pooled => Ok(libm::sqrt(
            a.phi.iter().zip(&b.phi).map(|(x, y)| (x - y) * (x - y)).sum(),
        )),
    }
}

fn check_losses(l: &StepLosses, epoch: usize, step: usize) -> Result<()> {
    for (name, v) in [("l_mi", l.l_mi), ("l_ms", l.l_ms), ("l_ce", l.l_ce)] {
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                epoch,
                step,
                what: alloc::format!("{} = {}", name, v),
            });
        }
    }
    Ok(())
}

struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    exp: &'a Experiment,
    model: DisentangleModel,
    policy: Mlp,
    streams: Streams,
    batch_size: usize,
    step_rates: StepRates,
    step_count: usize,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a ExperimentConfig, exp: &'a Experiment) -> Result<Self> {
        cfg.validate()?;
        let mut streams = Streams::new(cfg.seed);
        let model = DisentangleModel::new(exp.input_dim(), exp.num_classes(), &cfg.dims, &mut streams.init)?;
        let phi_dim = *cfg.dims.specific.last().expect("validated");
        let policy = new_policy(phi_dim, &cfg.policy_hidden, &mut streams.policy_init)?;
        let min_rows = exp.domains().iter().map(DomainDataset::len).min().unwrap_or(0);
        let batch_size = cfg.batch_size.min(min_rows);
        if batch_size < 2 {
            bail!(Config, "every domain needs at least 2 rows for minibatching");
        }
        Ok(Self {
            cfg,
            exp,
            model,
            policy,
            streams,
            batch_size,
            step_rates: StepRates {
                feature: cfg.rates.feature,
                mine: cfg.rates.mine,
            },
            step_count: 0,
        })
    }

    fn kind(&self) -> StepKind {
        match self.cfg.mode {
            AblationMode::ClassifierOnly => StepKind::ClassifierOnly,
            _ => StepKind::Full,
        }
    }

    fn train_on(&mut self, inter: &DomainDataset, epoch: usize) -> Result<StepLosses> {
        let s = minibatch(self.exp.source(), self.batch_size, &mut self.streams.batches)?;
        let i = minibatch(inter, self.batch_size, &mut self.streams.batches)?;
        let t = minibatch(self.exp.target(), self.batch_size, &mut self.streams.batches)?;
        let batches = RoleBatches {
            source: &s.features,
            intermediate: &i.features,
            target: &t.features,
        };
        let labels = s.labels.as_deref().expect("source batches carry labels");
        let kind = self.kind();
        let losses = disentangle_step(
            &mut self.model,
            &batches,
            labels,
            self.step_rates,
            kind,
            &mut self.streams.mine,
        )?;
        self.step_count += 1;
        check_losses(&losses, epoch, self.step_count)?;
        Ok(losses)
    }

    fn rollout(&mut self, epoch: usize, losses: &mut LossAccumulator) -> Result<RolloutTrace> {
        let mut order: Vec<usize> = (0..self.exp.pool_size()).collect();
        self.streams.order.shuffle(&mut order);
        let full = self.cfg.mode == AblationMode::Full;
        let dist_batch = self.cfg.distance.batch;

        let mut trace = RolloutTrace::default();
        let mut prev: &DomainDataset = self.exp.source();
        for &k in &order {
            let inter = self.exp.intermediate(k);
            if !(full && self.cfg.train_selected_only) {
                losses.add(self.train_on(inter, epoch)?);
            }
            if !full {
                continue;
            }
            let rng = &mut self.streams.reward;
            let prev_snap = snapshot(&self.model, prev, dist_batch, rng)?;
            let cur_snap = snapshot(&self.model, inter, dist_batch, rng)?;
            let tgt_snap = snapshot(&self.model, self.exp.target(), dist_batch, rng)?;
            let state = build_state(&prev_snap.phi, &cur_snap.phi, &tgt_snap.phi)?;
            let action = sample_action(&self.policy, &state, &mut self.streams.actions)?;
            let d_it_s = snapshot_distance(&prev_snap, &tgt_snap, self.cfg)?;
            let d_ii_next = snapshot_distance(&cur_snap, &prev_snap, self.cfg)?;
            let d_it_next = snapshot_distance(&cur_snap, &tgt_snap, self.cfg)?;
            let reward = step_reward(d_it_s, d_ii_next, d_it_next, action.action, &self.cfg.reward)?;
            trace.steps.push(RolloutStep {
                domain_id: inter.domain_id,
                state: state.input(),
                action: action.action,
                p: action.p,
                reward,
                distances: [d_it_s, d_ii_next, d_it_next],
            });
            if action.action == 1 {
                if self.cfg.train_selected_only {
                    losses.add(self.train_on(inter, epoch)?);
                }
                prev = inter;
            }
        }
        trace.finish(self.cfg.reward.gamma);
        Ok(trace)
    }

    fn epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let k_roll = self.cfg.rollouts_per_epoch.unwrap_or(self.exp.pool_size());
        let mut losses = LossAccumulator::default();
        let mut traces = Vec::with_capacity(k_roll);
        for _ in 0..k_roll {
            traces.push(self.rollout(epoch, &mut losses)?);
        }
        let pool = self.exp.intermediate_ids();
        let (path, mean_reward) = match self.cfg.mode {
            AblationMode::Full => {
                let diag = reinforce_update(
                    &mut self.policy,
                    &traces,
                    self.cfg.rates.policy,
                    self.cfg.reward.gamma,
                    self.cfg.baseline,
                )?;
                (extract_path(&self.model, &self.policy, self.exp)?, diag.mean_return)
            }
            AblationMode::DisentangleOnly => (TransferPath(pool.clone()), 0.0),
            AblationMode::ClassifierOnly => (TransferPath::default(), 0.0),
        };
        let mean = losses.mean();
        Ok(EpochRecord {
            epoch,
            l_mi: mean.l_mi,
            l_ms: mean.l_ms,
            l_ce: mean.l_ce,
            mean_cumulative_reward: mean_reward,
            selection_flags: selection_flags(&pool, &path),
            path: path.0,
            rollouts: traces
                .iter()
                .map(|t| RolloutRecord {
                    order: t.steps.iter().map(|s| s.domain_id).collect(),
                    actions: t.steps.iter().map(|s| s.action).collect(),
                    rewards: t.rewards(),
                })
                .collect(),
            target_accuracy: target_accuracy(&self.model, self.exp)?,
        })
    }
}

#[derive(Default)]
struct LossAccumulator {
    sum: StepLosses,
    count: usize,
}

impl LossAccumulator {
    fn add(&mut self, l: StepLosses) {
        self.sum.l_mi += l.l_mi;
        self.sum.l_ms += l.l_ms;
        self.sum.l_ce += l.l_ce;
        self.count += 1;
    }

    fn mean(&self) -> StepLosses {
        if self.count == 0 {
            return StepLosses::default();
        }
        let n = self.count as f64;
        StepLosses {
            l_mi: self.sum.l_mi / n,
            l_ms: self.sum.l_ms / n,
            l_ce: self.sum.l_ce / n,
        }
    }
}

/// Runs the configured mode end to end. Deterministic given `cfg.seed`.
pub fn train_joint(cfg: &ExperimentConfig, exp: &Experiment) -> Result<(TrainedModel, TrainingHistory)> {
    train_joint_with_policy(cfg, exp, None)
}

/// [`train_joint`] with an optional initial policy network in place of the
/// Xavier-initialised one.
pub fn train_joint_with_policy(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    initial_policy: Option<Mlp>,
) -> Result<(TrainedModel, TrainingHistory)> {
    let mut trainer = Trainer::new(cfg, exp)?;
    if let Some(p) = initial_policy {
        if p.layer_dims() != trainer.policy.layer_dims()
            || p.output_activation() != OutputActivation::Sigmoid
        {
            bail!(Config, "initial policy shape {:?} does not match {:?}", p.layer_dims(), trainer.policy.layer_dims());
        }
        trainer.policy = p;
    }
    let mut history = TrainingHistory::default();
    for epoch in 1..=cfg.epochs {
        history.records.push(trainer.epoch(epoch)?);
    }
    let path = TransferPath(history.last().map(|r| r.path.clone()).unwrap_or_default());
    Ok((
        TrainedModel {
            model: trainer.model,
            policy: trainer.policy,
            path,
        },
        history,
    ))
}

/// Checks the history invariants: one record per epoch, `K` flags per record,
/// valid paths, and mean rewards that agree with the recorded step rewards.
pub fn check_history(history: &TrainingHistory, pool: &[DomainId], gamma: f64) -> Result<()> {
    for (i, r) in history.records.iter().enumerate() {
        if r.epoch != i + 1 {
            bail!(Contract, "record {} has epoch {}", i, r.epoch);
        }
        if r.selection_flags.len() != pool.len() {
            bail!(Contract, "epoch {} has {} flags for pool of {}", r.epoch, r.selection_flags.len(), pool.len());
        }
        TransferPath(r.path.clone()).validate(pool)?;
        if !r.rollouts.is_empty() && r.rollouts.iter().any(|ro| !ro.rewards.is_empty()) {
            let mean = r
                .rollouts
                .iter()
                .map(|ro| compute_returns(&ro.rewards, gamma).first().copied().unwrap_or(0.0))
                .sum::<f64>()
                / r.rollouts.len() as f64;
            if (mean - r.mean_cumulative_reward).abs() > 1e-9 * mean.abs().max(1.0) {
                bail!(Contract, "epoch {} mean reward {} disagrees with rollouts {}", r.epoch, r.mean_cumulative_reward, mean);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub accuracy: f64,
}

/// Trains each ablation mode with the same seed and data and reports target
/// accuracy.
pub fn run_ablation_suite(cfg: &ExperimentConfig, exp: &Experiment) -> Result<Vec<AblationRow>> {
    if exp.target().eval_labels.is_none() {
        bail!(Data, "ablation needs evaluation labels on the target domain");
    }
    AblationMode::ALL
        .iter()
        .map(|&mode| {
            let cfg = ExperimentConfig { mode, ..cfg.clone() };
            let (trained, _) = train_joint(&cfg, exp)?;
            let accuracy = target_accuracy(&trained.model, exp)?.expect("checked above");
            Ok(AblationRow { mode, accuracy })
        })
        .collect()
}
