//! Binary selection policy trained with REINFORCE.
//!
//! At each step the policy sees `[prev_selected ‖ current ‖ target]` pooled
//! embeddings and emits the probability of keeping the current intermediate
//! domain. Rewards compare distances before and after a selection.

use alloc::vec::Vec;

use crate::domains::DomainId;
use crate::error::{bail, Result};
use crate::matrix::Matrix;
use crate::mlp::{Direction, Gradients, Mlp, OutputActivation};
use crate::rng::DetRng;

/// Probabilities are clamped to `[P_CLAMP, 1 − P_CLAMP]` before taking logs.
pub const P_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub prev_selected: Vec<f64>,
    pub current: Vec<f64>,
    pub target: Vec<f64>,
}

impl PolicyState {
    /// Concatenation in the fixed order (prev, current, target).
    pub fn input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.current.len());
        v.extend_from_slice(&self.prev_selected);
        v.extend_from_slice(&self.current);
        v.extend_from_slice(&self.target);
        v
    }
}

pub fn build_state(prev_phi: &[f64], cur_phi: &[f64], target_phi: &[f64]) -> Result<PolicyState> {
    if prev_phi.len() != cur_phi.len() || cur_phi.len() != target_phi.len() {
        bail!(
            Dimension,
            "state segments have lengths {}, {}, {}",
            prev_phi.len(),
            cur_phi.len(),
            target_phi.len()
        );
    }
    Ok(PolicyState {
        prev_selected: prev_phi.to_vec(),
        current: cur_phi.to_vec(),
        target: target_phi.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub action: u8,
    pub p: f64,
    pub log_prob: f64,
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

/// `a·ln p + (1−a)·ln(1−p)` on the clamped probability.
pub fn log_prob(action: u8, p: f64) -> f64 {
    let p = clamp_p(p);
    if action == 1 {
        libm::log(p)
    } else {
        libm::log(1.0 - p)
    }
}

fn check_policy_net(net: &Mlp) -> Result<()> {
    if net.output_activation() != OutputActivation::Sigmoid || net.output_dim() != 1 {
        bail!(Config, "policy network must have a single sigmoid output");
    }
    Ok(())
}

/// Clamped selection probability for one state.
pub fn action_probability(net: &Mlp, state: &PolicyState) -> Result<f64> {
    check_policy_net(net)?;
    let out = net.predict(&Matrix::row_vector(&state.input()))?;
    Ok(clamp_p(out.get(0, 0)))
}

pub fn sample_action(net: &Mlp, state: &PolicyState, rng: &mut DetRng) -> Result<ActionSample> {
    let p = action_probability(net, state)?;
    let action = u8::from(rng.uniform() < p);
    Ok(ActionSample {
        action,
        p,
        log_prob: log_prob(action, p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardConfig {
    /// Discount factor in `[0, 1)`.
    pub gamma: f64,
    /// Finite stand-in for an infinitely bad selection. Must be negative.
    pub penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            penalty: -50.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            bail!(Config, "gamma must lie in [0, 1), got {}", self.gamma);
        }
        if !(self.penalty < 0.0 && self.penalty.is_finite()) {
            bail!(Config, "penalty must be negative and finite, got {}", self.penalty);
        }
        Ok(())
    }
}

/// One-step reward.
///
/// * `d_it_s`: previously selected domain to target, before the action.
/// * `d_ii_next`: current domain to previously selected domain.
/// * `d_it_next`: current domain to target.
///
/// Selecting pays `2·d_it_s − d_ii_next − d_it_next` when both new distances are
/// shorter than `d_it_s`, and `cfg.penalty` otherwise. Skipping pays 0.
pub fn step_reward(
    d_it_s: f64,
    d_ii_next: f64,
    d_it_next: f64,
    action: u8,
    cfg: &RewardConfig,
) -> Result<f64> {
    for (name, d) in [("d_it_s", d_it_s), ("d_ii_next", d_ii_next), ("d_it_next", d_it_next)] {
        if !d.is_finite() || d < 0.0 {
            bail!(Contract, "{} must be a finite non-negative distance, got {}", name, d);
        }
    }
    Ok(match action {
        0 => 0.0,
        _ if d_ii_next < d_it_s && d_it_next < d_it_s => 2.0 * d_it_s - d_ii_next - d_it_next,
        _ => cfg.penalty,
    })
}

/// Discounted returns `G_T = R_T + γ·G_{T+1}` over a finite episode.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = alloc::vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (g, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RolloutStep {
    pub domain_id: DomainId,
    pub state: Vec<f64>,
    pub action: u8,
    pub p: f64,
    pub reward: f64,
    /// `(d_it_s, d_ii_next, d_it_next)`.
    pub distances: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutTrace {
    pub steps: Vec<RolloutStep>,
    pub returns: Vec<f64>,
}

impl RolloutTrace {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn finish(&mut self, gamma: f64) {
        self.returns = compute_returns(&self.rewards(), gamma);
    }

    /// Return from the first step; 0 for an empty episode.
    pub fn cumulative_reward(&self) -> f64 {
        self.returns.first().copied().unwrap_or(0.0)
    }

    pub fn selected(&self) -> Vec<DomainId> {
        self.steps
            .iter()
            .filter(|s| s.action == 1)
            .map(|s| s.domain_id)
            .collect()
    }
}

/// Monte-Carlo policy gradient averaged over rollouts:
///
/// `ĝ = (1/K) Σ_k Σ_T γ^T · G_T · ∇_θ[a·ln p + (1−a)·ln(1−p)]`
///
/// The `γ^T` factor makes `ĝ` an unbiased estimate of `∇ E[G_0]`. With
/// `baseline`, the mean return over all steps is subtracted from each `G_T`.
pub fn policy_gradient(net: &Mlp, traces: &[RolloutTrace], gamma: f64, baseline: bool) -> Result<Gradients> {
    check_policy_net(net)?;
    if traces.is_empty() {
        bail!(Config, "policy gradient needs at least one rollout");
    }
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    let mut actions = Vec::new();
    for (k, t) in traces.iter().enumerate() {
        if t.returns.len() != t.steps.len() {
            bail!(Contract, "rollout {} has {} returns for {} steps", k, t.returns.len(), t.steps.len());
        }
        let mut disc = 1.0;
        for (s, g) in t.steps.iter().zip(&t.returns) {
            rows.push(s.state.clone());
            weights.push((disc, *g));
            actions.push(s.action);
            disc *= gamma;
        }
    }
    if rows.is_empty() {
        return Ok(Gradients::zeros_like(net));
    }
    let base = if baseline {
        weights.iter().map(|w| w.1).sum::<f64>() / weights.len() as f64
    } else {
        0.0
    };
    let x = Matrix::from_rows(&rows)?;
    let acts = net.forward(&x)?;
    let k = traces.len() as f64;
    let out = acts.output();
    let mut g_out = Matrix::zeros(out.rows(), 1);
    for (r, ((disc, g), &a)) in weights.iter().zip(&actions).enumerate() {
        let p = clamp_p(out.get(r, 0));
        // ∂/∂p of the clamped log-probability; the sigmoid backward turns it into a − p.
        let dlogp = if a == 1 { 1.0 / p } else { -1.0 / (1.0 - p) };
        g_out.set(r, 0, disc * (g - base) * dlogp / k);
    }
    Ok(net.backward(&acts, &g_out)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDiagnostics {
    pub mean_return: f64,
    pub grad_max_abs: f64,
}

/// Gradient ascent `θ ← θ + rate·ĝ` on the policy network.
pub fn reinforce_update(
    net: &mut Mlp,
    traces: &[RolloutTrace],
    rate: f64,
    gamma: f64,
    baseline: bool,
) -> Result<UpdateDiagnostics> {
    let g = policy_gradient(net, traces, gamma, baseline)?;
    net.apply_update(&g, rate, Direction::Ascent)?;
    let mean_return = traces.iter().map(RolloutTrace::cumulative_reward).sum::<f64>() / traces.len() as f64;
    Ok(UpdateDiagnostics {
        mean_return,
        grad_max_abs: g.max_abs(),
    })
}
