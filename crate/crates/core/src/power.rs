//! Episodic PoWER policy search.
//!
//! Each rollout perturbs the whole policy once, `θ + ε` with `ε ~ N(0, Σ̂)` and a
//! diagonal `Σ̂`. With a single terminal reward the per-step weighting matrices
//! collapse and the update becomes a return-weighted mean of the perturbations
//! of the best rollouts seen recently:
//!
//! ```text
//! θ' = θ + Σ_ρ ε_ρ Q_ρ / Σ_ρ Q_ρ      over the importance-selected rollouts ρ
//! ```
//!
//! Rollouts kept from earlier batches are re-expressed relative to the current
//! mean before they are weighted, so the update always moves towards the
//! selected absolute parameter vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::arm_sim::{simulate_throw, terminal_reward, SimContext, Task, ThrowOutcome, TraceOptions};
use crate::dmp::{PolicyVector, POLICY_DIM};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, ExecMode};
use crate::seed::{derive_seed, stream};

/// Returns at or below this are treated as zero.
pub const ZERO_RETURN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationConfig {
    /// Diagonal exploration variances, one per policy entry.
    pub sigma_hat: Vec<f64>,
    pub rollouts_per_update: usize,
    pub importance_top_k: usize,
    /// How many recent batches the importance sampler draws from.
    pub history_batches: usize,
    pub max_updates: usize,
    /// Landing distance (m) counted as solved.
    pub success_threshold: f64,
    /// Consecutive all-zero batches before exploration is widened.
    pub stall_batches: usize,
    /// Variance multiplier applied on a stall.
    pub stall_growth: f64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        let mut sigma_hat = vec![0.0; POLICY_DIM];
        sigma_hat[0] = 0.0025;
        sigma_hat[1] = 0.5;
        for v in &mut sigma_hat[2..] {
            *v = 0.01;
        }
        ExplorationConfig {
            sigma_hat,
            rollouts_per_update: 20,
            importance_top_k: 10,
            history_batches: 3,
            max_updates: 500,
            success_threshold: 0.05,
            stall_batches: 5,
            stall_growth: 4.0,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ParameterDomain(format!("exploration config: {m}")));
        if self.sigma_hat.len() != POLICY_DIM {
            return bad(format!("sigma_hat needs {POLICY_DIM} entries, got {}", self.sigma_hat.len()));
        }
        if self.sigma_hat.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("sigma_hat entries must be finite and nonnegative".into());
        }
        if self.rollouts_per_update == 0 || self.history_batches == 0 || self.importance_top_k == 0 {
            return bad("rollouts_per_update, history_batches and importance_top_k must be >= 1".into());
        }
        if self.importance_top_k > self.rollouts_per_update * self.history_batches {
            return bad("importance_top_k exceeds the history window".into());
        }
        if !(self.success_threshold > 0.0) {
            return bad("success_threshold must be positive".into());
        }
        if !(self.stall_growth >= 1.0) {
            return bad("stall_growth must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub perturbed_theta: PolicyVector,
    pub epsilon: PolicyVector,
    pub outcome: ThrowOutcome,
    pub return_value: f64,
    pub seed: u64,
}

/// Result of [`power_update`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStep {
    pub theta: PolicyVector,
    /// Every return was zero, so `theta` is unchanged.
    pub stalled: bool,
}

/// Draws `ε ~ N(0, Σ̂)` and returns `(θ + ε, ε)`.
///
/// The release phase is kept inside `[0, 1]`; `ε` is the perturbation actually
/// applied, so `θ + ε` is always the returned policy.
pub fn perturb(theta: &PolicyVector, cfg: &ExplorationConfig, seed: u64) -> (PolicyVector, PolicyVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eps = [0.0; POLICY_DIM];
    for (e, &var) in eps.iter_mut().zip(&cfg.sigma_hat) {
        let z: f64 = StandardNormal.sample(&mut rng);
        *e = z * var.sqrt();
    }
    let mut out = *theta;
    for (o, e) in out.as_mut_array().iter_mut().zip(&eps) {
        *o += e;
    }
    let lambda = out.lambda_release();
    if !(0.0..=1.0).contains(&lambda) {
        out.set_lambda_release(lambda.clamp(0.0, 1.0));
        eps[0] = out.lambda_release() - theta.lambda_release();
    }
    (out, PolicyVector::from_array(eps))
}

/// Return-weighted mean step over already selected rollouts.
pub fn power_update(theta: &PolicyVector, selected: &[&Rollout]) -> Result<UpdateStep> {
    if selected.is_empty() {
        return Err(Error::InvalidInput("power update needs at least one rollout".into()));
    }
    let total: f64 = selected.iter().map(|r| r.return_value).sum();
    if !total.is_finite() || selected.iter().any(|r| r.return_value < 0.0) {
        return Err(Error::NumericDomain("rollout returns must be finite and nonnegative".into()));
    }
    if selected.iter().all(|r| r.return_value <= ZERO_RETURN) {
        return Ok(UpdateStep {
            theta: *theta,
            stalled: true,
        });
    }
    let mut step = [0.0; POLICY_DIM];
    for r in selected {
        for (s, e) in step.iter_mut().zip(r.epsilon.as_slice()) {
            *s += e * r.return_value;
        }
    }
    let mut next = *theta;
    for (n, s) in next.as_mut_array().iter_mut().zip(&step) {
        *n += s / total;
    }
    Ok(UpdateStep {
        theta: next,
        stalled: false,
    })
}

/// The `k` highest-return rollouts, best first. Among equal returns the more
/// recent one (later in `history`) wins.
pub fn importance_select(history: &[Rollout], k: usize) -> Result<Vec<&Rollout>> {
    if history.is_empty() {
        return Err(Error::InvalidInput("importance sampler got an empty history".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("importance sampler needs k >= 1".into()));
    }
    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&a, &b| {
        history[b]
            .return_value
            .total_cmp(&history[a].return_value)
            .then(b.cmp(&a))
    });
    Ok(order.into_iter().take(k).map(|i| &history[i]).collect())
}

/// One row of the learning log, recorded after each batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    /// Distance reached by the unperturbed policy after this update.
    pub distance: f64,
    /// Best distance among this batch's rollouts.
    pub best_rollout_distance: f64,
    pub mean_return: f64,
    pub max_return: f64,
    pub stalled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnResult {
    pub final_theta: PolicyVector,
    pub updates_used: usize,
    pub rollouts_used: usize,
    pub best_distance: f64,
    pub converged: bool,
    /// Distance of the initial policy, before any update.
    pub initial_distance: f64,
    pub history: Vec<UpdateRecord>,
}

/// Runs batches of perturbed throws and PoWER updates until the unperturbed
/// policy lands within `success_threshold` of the target or the update budget
/// is spent. Fully determined by `seed`.
pub fn learn_policy(
    task: &Task,
    init_theta: &PolicyVector,
    cfg: &ExplorationConfig,
    ctx: &SimContext,
    seed: u64,
    exec: ExecMode,
) -> Result<LearnResult> {
    cfg.validate()?;
    let mut theta = *init_theta;
    theta.set_lambda_release(theta.lambda_release().clamp(0.0, 1.0));
    let initial = simulate_throw(&theta, task, ctx, TraceOptions::default())?;
    let mut best = (initial.distance_to_target, theta);
    let mut result = LearnResult {
        final_theta: theta,
        updates_used: 0,
        rollouts_used: 0,
        best_distance: best.0,
        converged: best.0 <= cfg.success_threshold,
        initial_distance: initial.distance_to_target,
        history: Vec::new(),
    };
    if result.converged {
        return Ok(result);
    }

    let mut explore = cfg.clone();
    let mut history: Vec<Rollout> = Vec::new();
    let mut zero_batches = 0;
    let batch = cfg.rollouts_per_update;

    for update in 0..cfg.max_updates {
        let rollouts = try_map_indexed(batch, exec, |r| -> Result<Rollout> {
            let rollout_seed = derive_seed(seed, stream::ROLLOUT, (update * batch + r) as u64);
            let (perturbed, epsilon) = perturb(&theta, &explore, rollout_seed);
            let outcome = simulate_throw(&perturbed, task, ctx, TraceOptions::default())?;
            let return_value = terminal_reward(outcome.distance_to_target);
            Ok(Rollout {
                perturbed_theta: perturbed,
                epsilon,
                outcome,
                return_value,
                seed: rollout_seed,
            })
        })?;
        result.rollouts_used += batch;

        let batch_returns: Vec<f64> = rollouts.iter().map(|r| r.return_value).collect();
        let best_rollout_distance = rollouts
            .iter()
            .map(|r| r.outcome.distance_to_target)
            .fold(f64::INFINITY, f64::min);
        history.extend(rollouts);
        let window = cfg.history_batches * batch;
        if history.len() > window {
            history.drain(..history.len() - window);
        }
        // Perturbations relative to the current mean.
        for r in &mut history {
            let mut eps = r.perturbed_theta;
            for (e, t) in eps.as_mut_array().iter_mut().zip(theta.as_slice()) {
                *e -= t;
            }
            r.epsilon = eps;
        }

        let selected = importance_select(&history, cfg.importance_top_k)?;
        let step = power_update(&theta, &selected)?;
        theta = step.theta;
        theta.set_lambda_release(theta.lambda_release().clamp(0.0, 1.0));

        if batch_returns.iter().all(|&q| q <= ZERO_RETURN) {
            zero_batches += 1;
            if zero_batches >= cfg.stall_batches {
                for v in &mut explore.sigma_hat {
                    *v *= cfg.stall_growth;
                }
                zero_batches = 0;
            }
        } else {
            zero_batches = 0;
        }

        let eval = simulate_throw(&theta, task, ctx, TraceOptions::default())?;
        let distance = eval.distance_to_target;
        if distance < best.0 {
            best = (distance, theta);
        }
        result.history.push(UpdateRecord {
            update: update + 1,
            distance,
            best_rollout_distance,
            mean_return: batch_returns.iter().sum::<f64>() / batch as f64,
            max_return: batch_returns.iter().cloned().fold(0.0, f64::max),
            stalled: step.stalled,
        });
        result.updates_used = update + 1;
        if distance <= cfg.success_threshold {
            break;
        }
    }

    result.best_distance = best.0;
    result.final_theta = best.1;
    result.converged = best.0 <= cfg.success_threshold;
    Ok(result)
}
