//! Experiment orchestration.
//!
//! One run samples training and held-out tasks, learns a policy for every
//! training task (warm-starting from the nearest solved one), and then, for
//! each training-set size in the sweep, finds the charts of the first `n`
//! policies, fits a skill and scores it on the held-out tasks: parameter error
//! against an independently learned reference policy, distance of the
//! predicted throw before any learning, and updates needed to fine-tune the
//! prediction to the success threshold.
//!
//! Every random draw is keyed by the master seed through [`derive_seed`], so
//! a run gives the same report whether or not work runs in parallel.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arm_sim::{simulate_throw, ArmConfig, PidGains, SimContext, Task, TraceOptions};
use crate::dmp::{DmpConstants, PolicyVector, NUM_BASES, POLICY_DIM};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, ExecMode};
use crate::manifold::{analyze, Embedding, ManifoldConfig, PointCloud};
use crate::plot::{Chart, Series, Style};
use crate::power::{learn_policy, ExplorationConfig, LearnResult};
use crate::seed::{derive_seed, stream};
use crate::skill::{save_skill, train_skill, SkillConfig, SkillModel, TrainingSet};

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmpSettings {
    pub spring_k: f64,
    pub temporal_scale: f64,
    pub phase_alpha: f64,
    /// Multiplier on the basis widths (1 = adjacent bases cross at 0.5).
    pub width_scale: f64,
}

impl Default for DmpSettings {
    fn default() -> Self {
        let c = DmpConstants::default();
        DmpSettings {
            spring_k: c.spring_k,
            temporal_scale: c.temporal_scale,
            phase_alpha: c.phase_alpha,
            width_scale: 1.0,
        }
    }
}

impl DmpSettings {
    pub fn constants(&self) -> DmpConstants {
        DmpConstants::new(self.spring_k, self.temporal_scale, self.phase_alpha).with_width_scale(self.width_scale)
    }
}

/// Starting point of every search that has nothing better to start from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialPolicy {
    pub lambda_release: f64,
    pub goal: f64,
}

impl Default for InitialPolicy {
    fn default() -> Self {
        InitialPolicy {
            lambda_release: 0.5,
            goal: 0.0,
        }
    }
}

impl InitialPolicy {
    pub fn policy(&self) -> PolicyVector {
        PolicyVector::new(self.lambda_release, self.goal, [0.0; NUM_BASES])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Training tasks learned; every sweep size uses a prefix of them.
    pub num_training_tasks: usize,
    /// Training-set sizes at which a skill is fitted and scored.
    pub sweep: Vec<usize>,
    pub num_eval_tasks: usize,
    /// Task bearings are drawn uniformly from this range (rad).
    pub task_range: [f64; 2],
    pub warm_start: bool,
    /// Retry a task from the initial policy when the warm-started search fails.
    pub cold_restart: bool,
    /// Update budget of a warm-started search; the cold retry gets the full
    /// `exploration.max_updates`.
    pub warm_max_updates: usize,
    /// Largest share of training tasks allowed to fail before the run aborts.
    pub max_failure_fraction: f64,
    /// Not part of the config hash.
    pub output_dir: PathBuf,
    pub initial_policy: InitialPolicy,
    pub arm: ArmConfig,
    pub pid: PidGains,
    pub dmp: DmpSettings,
    pub exploration: ExplorationConfig,
    pub manifold: ManifoldConfig,
    pub skill: SkillConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 1,
            num_training_tasks: 40,
            sweep: vec![3, 6, 9, 10, 12, 15, 20, 24, 30, 40],
            num_eval_tasks: 15,
            task_range: [0.2, 2.94],
            warm_start: true,
            cold_restart: true,
            warm_max_updates: 50,
            max_failure_fraction: 0.5,
            output_dir: PathBuf::from("results"),
            initial_policy: InitialPolicy::default(),
            arm: ArmConfig::default(),
            pid: PidGains::default(),
            dmp: DmpSettings::default(),
            exploration: ExplorationConfig::default(),
            manifold: ManifoldConfig::default(),
            skill: SkillConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn sim_context(&self) -> SimContext {
        SimContext {
            arm: self.arm.clone(),
            gains: self.pid,
            dmp: self.dmp.constants(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_training_tasks == 0 || self.num_eval_tasks == 0 {
            return bad("task counts must be >= 1".into());
        }
        if self.sweep.is_empty() || self.sweep.iter().any(|&n| n == 0 || n > self.num_training_tasks) {
            return bad(format!(
                "sweep sizes must lie in 1..={}, got {:?}",
                self.num_training_tasks, self.sweep
            ));
        }
        if self.sweep.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sweep sizes must be strictly increasing".into());
        }
        let [lo, hi] = self.task_range;
        if !(0.0 <= lo && lo <= hi && hi <= std::f64::consts::PI) {
            return bad(format!("task range {:?} must satisfy 0 <= lo <= hi <= π", self.task_range));
        }
        if self.warm_max_updates == 0 {
            return bad("warm_max_updates must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return bad("max_failure_fraction must be in [0, 1]".into());
        }
        self.initial_policy.policy().validate()?;
        self.sim_context().validate()?;
        self.exploration.validate()?;
        self.manifold.validate()?;
        self.skill.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form, with
    /// the output directory left out.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}

/// `n` bearings drawn uniformly from `[lo, hi]`.
pub fn sample_tasks(range: [f64; 2], n: usize, seed: u64, arm: &ArmConfig) -> Result<Vec<Task>> {
    let [lo, hi] = range;
    if !(lo <= hi) {
        return Err(Error::InvalidInput(format!("empty task range {range:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            Task::from_angle(lo + u * (hi - lo), arm)
        })
        .collect()
}

pub fn training_tasks(cfg: &ExperimentConfig) -> Result<Vec<Task>> {
    sample_tasks(
        cfg.task_range,
        cfg.num_training_tasks,
        derive_seed(cfg.master_seed, stream::TRAIN_TASKS, 0),
        &cfg.arm,
    )
}

/// Held-out tasks; a draw that coincides with a training task is redrawn.
pub fn eval_tasks(cfg: &ExperimentConfig, training: &[Task]) -> Result<Vec<Task>> {
    let mut out = Vec::with_capacity(cfg.num_eval_tasks);
    let mut round = 0;
    while out.len() < cfg.num_eval_tasks {
        let seed = derive_seed(cfg.master_seed, stream::EVAL_TASKS, round);
        for t in sample_tasks(cfg.task_range, cfg.num_eval_tasks, seed, &cfg.arm)? {
            if out.len() < cfg.num_eval_tasks && !training.iter().any(|s| s.angle == t.angle) {
                out.push(t);
            }
        }
        round += 1;
        if round > 1000 {
            return Err(Error::InvalidInput("cannot draw held-out tasks disjoint from training".into()));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub index: usize,
    pub task: Task,
    /// Training task whose policy seeded the search.
    pub warm_from: Option<usize>,
    /// The warm-started search failed and was repeated from the initial policy.
    pub restarted: bool,
    pub converged: bool,
    pub updates: usize,
    pub rollouts: usize,
    pub distance: f64,
    pub theta: PolicyVector,
}

/// A search that may have been repeated from the initial policy; counts cover
/// both attempts.
struct Solved {
    result: LearnResult,
    updates: usize,
    rollouts: usize,
    restarted: bool,
}

impl Solved {
    fn once(result: LearnResult) -> Self {
        Solved {
            updates: result.updates_used,
            rollouts: result.rollouts_used,
            result,
            restarted: false,
        }
    }
}

/// Searches from `start` with the warm budget; when that fails and cold
/// restarts are on, searches again from the initial policy with the full
/// budget.
fn warm_then_cold(
    task: &Task,
    start: &PolicyVector,
    cfg: &ExperimentConfig,
    ctx: &SimContext,
    seeds: [u64; 2],
    exec: ExecMode,
) -> Result<Solved> {
    let warm = ExplorationConfig {
        max_updates: cfg.warm_max_updates.min(cfg.exploration.max_updates),
        ..cfg.exploration.clone()
    };
    let first = Solved::once(learn_policy(task, start, &warm, ctx, seeds[0], exec)?);
    if first.result.converged || !cfg.cold_restart {
        return Ok(first);
    }
    let init = cfg.initial_policy.policy();
    let second = learn_policy(task, &init, &cfg.exploration, ctx, seeds[1], exec)?;
    Ok(Solved {
        updates: first.updates + second.updates_used,
        rollouts: first.rollouts + second.rollouts_used,
        result: second,
        restarted: true,
    })
}

/// Index of the solved task closest in bearing; ties go to the earlier task.
pub fn nearest_solved(records: &[TrainingRecord], angle: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for r in records.iter().filter(|r| r.converged) {
        let d = (r.task.angle - angle).abs();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, r.index));
        }
    }
    best.map(|b| b.1)
}

/// Learns every task in order. Failed tasks stay in the list with
/// `converged = false` and are left out of every training set.
pub fn build_training_set(tasks: &[Task], cfg: &ExperimentConfig, exec: ExecMode) -> Result<Vec<TrainingRecord>> {
    if tasks.is_empty() {
        return Err(Error::InvalidInput("no training tasks".into()));
    }
    let ctx = cfg.sim_context();
    let init = cfg.initial_policy.policy();
    let mut records: Vec<TrainingRecord> = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let warm_from = if cfg.warm_start {
            nearest_solved(&records, task.angle)
        } else {
            None
        };
        let start = warm_from.map_or(init, |j| records[j].theta);
        let seed = derive_seed(cfg.master_seed, stream::TRAIN_LEARN, i as u64);
        let solved = if warm_from.is_some() {
            let restart_seed = derive_seed(cfg.master_seed, stream::RESTART_LEARN, i as u64);
            warm_then_cold(task, &start, cfg, &ctx, [seed, restart_seed], exec)?
        } else {
            let result = learn_policy(task, &start, &cfg.exploration, &ctx, seed, exec)?;
            Solved::once(result)
        };
        if solved.restarted {
            log::info!("task {i} (angle {:.3}): warm start failed, retried from the initial policy", task.angle);
        }
        let Solved {
            result,
            updates,
            rollouts,
            restarted,
        } = solved;
        if !result.converged {
            log::warn!(
                "task {i} (angle {:.3}) excluded: best distance {:.3} m after {updates} updates",
                task.angle,
                result.best_distance
            );
        }
        records.push(TrainingRecord {
            index: i,
            task: *task,
            warm_from,
            restarted,
            converged: result.converged,
            updates,
            rollouts,
            distance: result.best_distance,
            theta: result.final_theta,
        });
    }
    let failed = records.iter().filter(|r| !r.converged).count();
    if failed as f64 > cfg.max_failure_fraction * records.len() as f64 {
        return Err(Error::Stage {
            stage: "learn-policy",
            message: format!(
                "{failed} of {} training tasks failed to reach {} m",
                records.len(),
                cfg.exploration.success_threshold
            ),
        });
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub index: usize,
    pub task: Task,
    pub converged: bool,
    pub updates: usize,
    pub rollouts: usize,
    pub distance: f64,
    pub theta: PolicyVector,
}

/// Cold-start solutions of the held-out tasks.
pub fn learn_references(tasks: &[Task], cfg: &ExperimentConfig, exec: ExecMode) -> Result<Vec<ReferenceRecord>> {
    let ctx = cfg.sim_context();
    let init = cfg.initial_policy.policy();
    try_map_indexed(tasks.len(), exec, |e| {
        let seed = derive_seed(cfg.master_seed, stream::REFERENCE_LEARN, e as u64);
        let r = learn_policy(&tasks[e], &init, &cfg.exploration, &ctx, seed, exec)?;
        Ok(ReferenceRecord {
            index: e,
            task: tasks[e],
            converged: r.converged,
            updates: r.updates_used,
            rollouts: r.rollouts_used,
            distance: r.best_distance,
            theta: r.final_theta,
        })
    })
}

/// Per-entry scale for the relative parameter error: the largest magnitude of
/// that entry over the given policies.
pub fn parameter_scales(policies: &[PolicyVector]) -> [f64; POLICY_DIM] {
    let mut s = [0.0; POLICY_DIM];
    for p in policies {
        for (sj, v) in s.iter_mut().zip(p.as_slice()) {
            *sj = f64::max(*sj, v.abs());
        }
    }
    s
}

/// Mean over entries of `|θ̂_j − θ_j| / scale_j`; entries with zero scale are
/// skipped. Returns 0 when every scale is zero.
pub fn relative_parameter_error(predicted: &PolicyVector, reference: &PolicyVector, scales: &[f64; POLICY_DIM]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for j in 0..POLICY_DIM {
        if scales[j] > 0.0 {
            total += (predicted.as_slice()[j] - reference.as_slice()[j]).abs() / scales[j];
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

pub fn rmse(a: &PolicyVector, b: &PolicyVector) -> f64 {
    let s: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / POLICY_DIM as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: usize,
    pub task: Task,
    pub chart: usize,
    pub predicted: PolicyVector,
    pub zero_shot_distance: f64,
    /// Present when the reference search converged.
    pub parameter_error: Option<f64>,
    pub parameter_rmse: Option<f64>,
    pub fine_tune_updates: usize,
    pub fine_tune_rollouts: usize,
    pub fine_tune_converged: bool,
    /// The search from the prediction failed and was repeated from the
    /// initial policy.
    pub fine_tune_restarted: bool,
}

/// Scores a skill on held-out tasks. `key` separates the fine-tuning seeds of
/// different skills.
pub fn evaluate_skill(
    skill: &SkillModel,
    tasks: &[Task],
    references: Option<&[ReferenceRecord]>,
    scales: &[f64; POLICY_DIM],
    cfg: &ExperimentConfig,
    key: u64,
    exec: ExecMode,
) -> Result<Vec<EvalRecord>> {
    let ctx = cfg.sim_context();
    try_map_indexed(tasks.len(), exec, |e| {
        let task = &tasks[e];
        let chart = skill.classifier.classify(task);
        let predicted = skill.predict(task);
        let zero_shot = simulate_throw(&predicted, task, &ctx, TraceOptions::default())?;
        let reference = references.and_then(|r| r.get(e)).filter(|r| r.converged);
        let seed = derive_seed(cfg.master_seed, stream::FINE_TUNE, (key << 32) | e as u64);
        let restart_seed = derive_seed(seed, stream::RESTART_LEARN, 0);
        let tuned = warm_then_cold(task, &predicted, cfg, &ctx, [seed, restart_seed], exec)?;
        Ok(EvalRecord {
            index: e,
            task: *task,
            chart,
            predicted,
            zero_shot_distance: zero_shot.distance_to_target,
            parameter_error: reference.map(|r| relative_parameter_error(&predicted, &r.theta, scales)),
            parameter_rmse: reference.map(|r| rmse(&predicted, &r.theta)),
            fine_tune_updates: tuned.updates,
            fine_tune_rollouts: tuned.rollouts,
            fine_tune_converged: tuned.result.converged,
            fine_tune_restarted: tuned.restarted,
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSummary {
    pub chart: usize,
    pub size: usize,
    pub angle_min: f64,
    pub angle_max: f64,
    pub k: usize,
    pub residual_curve: Vec<f64>,
    pub dimension: usize,
    /// Training-record index of every member, in embedding row order.
    pub members: Vec<usize>,
    pub embedding: Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSummary {
    pub num_charts: usize,
    pub k: usize,
    pub single_chart_fallback: bool,
    /// Bearings (rad) where the trained classifier switches chart.
    pub boundaries: Vec<f64>,
    pub classifier_accuracy: f64,
    pub charts: Vec<ChartSummary>,
}

/// A fitted skill together with how its charts were found.
pub struct FittedSkill {
    pub skill: SkillModel,
    pub training: TrainingSet,
    /// Training-record index of every pair.
    pub record_index: Vec<usize>,
    pub manifold: ManifoldSummary,
}

/// Finds the charts of the converged policies among `records`, numbers them
/// by increasing mean bearing, and fits the skill.
pub fn fit_skill(records: &[TrainingRecord], cfg: &ExperimentConfig, hash: &str, exec: ExecMode) -> Result<FittedSkill> {
    let used: Vec<&TrainingRecord> = records.iter().filter(|r| r.converged).collect();
    if used.is_empty() {
        return Err(Error::Stage {
            stage: "train-skill",
            message: "no converged training policies".into(),
        });
    }
    let tasks: Vec<Task> = used.iter().map(|r| r.task).collect();
    let policies: Vec<PolicyVector> = used.iter().map(|r| r.theta).collect();
    let record_index: Vec<usize> = used.iter().map(|r| r.index).collect();

    let (labels, mut summaries, k, fallback) = if used.len() >= 2 {
        let cloud = PointCloud::new(policies.iter().map(|p| p.as_slice().to_vec()).collect())?;
        let report = analyze(&cloud, &cfg.manifold, exec).map_err(|e| e.in_stage("analyze-manifold"))?;
        let summaries: Vec<ChartSummary> = report
            .per_chart
            .iter()
            .map(|a| {
                let angles: Vec<f64> = a.members.iter().map(|&i| tasks[i].angle).collect();
                ChartSummary {
                    chart: a.chart,
                    size: a.members.len(),
                    angle_min: angles.iter().copied().fold(f64::INFINITY, f64::min),
                    angle_max: angles.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    k: a.k,
                    residual_curve: a.residual_curve.clone(),
                    dimension: a.dimension,
                    members: a.members.iter().map(|&i| record_index[i]).collect(),
                    embedding: a.embedding.clone(),
                }
            })
            .collect();
        (report.charts.chart_of, summaries, report.charts.k, report.charts.single_chart_fallback)
    } else {
        (vec![0], Vec::new(), 0, true)
    };

    // Renumber charts by mean bearing so chart 0 is the rightmost.
    let d = labels.iter().max().map_or(1, |m| m + 1);
    let mut mean = vec![(0.0, 0usize); d];
    for (l, t) in labels.iter().zip(&tasks) {
        mean[*l].0 += t.angle;
        mean[*l].1 += 1;
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        let ma = mean[a].0 / mean[a].1.max(1) as f64;
        let mb = mean[b].0 / mean[b].1.max(1) as f64;
        ma.total_cmp(&mb).then(a.cmp(&b))
    });
    let mut rename = vec![0; d];
    for (new, &old) in order.iter().enumerate() {
        rename[old] = new;
    }
    let labels: Vec<usize> = labels.iter().map(|&l| rename[l]).collect();
    for s in &mut summaries {
        s.chart = rename[s.chart];
    }
    summaries.sort_by_key(|s| s.chart);

    let training = TrainingSet {
        tasks,
        policies,
        chart_labels: labels,
    };
    let skill = train_skill(&training, &cfg.skill, hash).map_err(|e| e.in_stage("train-skill"))?;
    let boundaries = skill
        .classifier
        .boundaries()
        .into_iter()
        .map(|u| u * std::f64::consts::PI)
        .collect();
    let manifold = ManifoldSummary {
        num_charts: skill.num_charts(),
        k,
        single_chart_fallback: fallback,
        boundaries,
        classifier_accuracy: skill.classifier.training_accuracy,
        charts: summaries,
    };
    Ok(FittedSkill {
        skill,
        training,
        record_index,
        manifold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Training tasks offered (a prefix of the training list).
    pub num_tasks: usize,
    /// Of those, how many converged and entered the training set.
    pub num_used: usize,
    pub manifold: ManifoldSummary,
    pub mean_parameter_error: Option<f64>,
    pub mean_parameter_rmse: Option<f64>,
    pub mean_zero_shot_distance: Option<f64>,
    pub mean_fine_tune_updates: Option<f64>,
    /// Mean cold-start updates of the references on the same tasks.
    pub mean_cold_start_updates: Option<f64>,
    pub fine_tune_success_rate: Option<f64>,
    pub evals: Vec<EvalRecord>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub angle: f64,
    pub chart: usize,
    pub theta: PolicyVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub config_hash: String,
    pub master_seed: u64,
    pub training: Vec<TrainingRecord>,
    pub references: Vec<ReferenceRecord>,
    pub sweep: Vec<SweepPoint>,
    /// The skill fitted on every training task, evaluated on a bearing grid.
    pub fit_curve: Vec<FitSample>,
    /// Rollouts over training (restarts included), references and fine-tuning.
    pub total_rollouts: usize,
}

impl ExperimentReport {
    pub fn final_point(&self) -> Option<&SweepPoint> {
        self.sweep.last()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("bad report: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// The whole protocol. Returns the report and the fitted full-size skill.
pub fn run_experiment(cfg: &ExperimentConfig, exec: ExecMode) -> Result<(ExperimentReport, SkillModel)> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let hash = cfg.hash()?;
    let train = training_tasks(cfg).map_err(|e| e.in_stage("sample-tasks"))?;
    let eval = eval_tasks(cfg, &train).map_err(|e| e.in_stage("sample-tasks"))?;

    log::info!("learning {} training tasks", train.len());
    let training = build_training_set(&train, cfg, exec).map_err(|e| e.in_stage("learn-policy"))?;
    log::info!("learning {} reference policies", eval.len());
    let references = learn_references(&eval, cfg, exec).map_err(|e| e.in_stage("learn-policy"))?;

    let converged: Vec<PolicyVector> = training.iter().filter(|r| r.converged).map(|r| r.theta).collect();
    let scales = parameter_scales(&converged);

    let mut sweep = Vec::with_capacity(cfg.sweep.len());
    let mut last_skill = None;
    for &n in &cfg.sweep {
        let prefix = &training[..n];
        let num_used = prefix.iter().filter(|r| r.converged).count();
        if num_used == 0 {
            log::warn!("no converged policies among the first {n} tasks; skipping");
            continue;
        }
        let fitted = fit_skill(prefix, cfg, &hash, exec)?;
        log::info!(
            "|K| = {n}: {} chart(s), boundaries {:?}",
            fitted.manifold.num_charts,
            fitted.manifold.boundaries
        );
        let evals = evaluate_skill(&fitted.skill, &eval, Some(&references), &scales, cfg, n as u64, exec)
            .map_err(|e| e.in_stage("evaluate"))?;
        sweep.push(SweepPoint {
            num_tasks: n,
            num_used,
            manifold: fitted.manifold.clone(),
            mean_parameter_error: mean(evals.iter().filter_map(|e| e.parameter_error)),
            mean_parameter_rmse: mean(evals.iter().filter_map(|e| e.parameter_rmse)),
            mean_zero_shot_distance: mean(evals.iter().map(|e| e.zero_shot_distance)),
            mean_fine_tune_updates: mean(evals.iter().map(|e| e.fine_tune_updates as f64)),
            mean_cold_start_updates: mean(references.iter().map(|r| r.updates as f64)),
            fine_tune_success_rate: mean(evals.iter().map(|e| f64::from(u8::from(e.fine_tune_converged)))),
            evals,
        });
        last_skill = Some(fitted.skill);
    }
    let skill = last_skill.ok_or_else(|| Error::Stage {
        stage: "train-skill",
        message: "no sweep size had a converged training policy".into(),
    })?;

    let [lo, hi] = cfg.task_range;
    let grid = 100;
    let fit_curve = (0..=grid)
        .map(|i| {
            let angle = lo + (hi - lo) * i as f64 / grid as f64;
            let task = Task::from_angle(angle, &cfg.arm)?;
            Ok(FitSample {
                angle,
                chart: skill.classifier.classify(&task),
                theta: skill.predict(&task),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let total_rollouts = training.iter().map(|r| r.rollouts).sum::<usize>()
        + references.iter().map(|r| r.rollouts).sum::<usize>()
        + sweep
            .iter()
            .flat_map(|p| p.evals.iter())
            .map(|e| e.fine_tune_rollouts)
            .sum::<usize>();

    let report = ExperimentReport {
        version: REPORT_VERSION,
        config_hash: hash,
        master_seed: cfg.master_seed,
        training,
        references,
        sweep,
        fit_curve,
        total_rollouts,
    };
    Ok((report, skill))
}

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const SKILL_FILE: &str = "skill.txt";
pub const TIMING_FILE: &str = "timing.json";

/// Creates `dir` and refuses to reuse it for a different configuration.
pub fn prepare_output_dir(dir: &Path, hash: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let snapshot = dir.join(CONFIG_SNAPSHOT);
    if snapshot.exists() {
        let previous = ExperimentConfig::load(&snapshot)
            .and_then(|c| c.hash())
            .map_err(|e| Error::Stage {
                stage: "output",
                message: format!("{} holds an unreadable config snapshot: {e}", dir.display()),
            })?;
        if previous != hash {
            return Err(Error::Stage {
                stage: "output",
                message: format!(
                    "{} holds results for config {previous}; refusing to overwrite them with config {hash}",
                    dir.display()
                ),
            });
        }
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the config snapshot, report, skill, timing and figure files.
pub fn write_outputs(cfg: &ExperimentConfig, report: &ExperimentReport, skill: &SkillModel, dir: &Path, seconds: f64) -> Result<Vec<PathBuf>> {
    prepare_output_dir(dir, &report.config_hash)?;
    let mut written = Vec::new();
    let snapshot = dir.join(CONFIG_SNAPSHOT);
    write_file(
        &snapshot,
        &format!("# config_hash = \"{}\"\n{}", report.config_hash, cfg.to_toml()?),
    )?;
    written.push(snapshot);
    let report_path = dir.join(REPORT_FILE);
    write_file(&report_path, &report.to_json()?)?;
    written.push(report_path);
    let skill_path = dir.join(SKILL_FILE);
    save_skill(skill, &skill_path)?;
    written.push(skill_path);
    let timing = dir.join(TIMING_FILE);
    write_file(
        &timing,
        &format!("{{\n  \"config_hash\": \"{}\",\n  \"seconds\": {seconds}\n}}\n", report.config_hash),
    )?;
    written.push(timing);
    written.extend(emit_figures(report, dir)?);
    Ok(written)
}

fn theta_headers() -> Vec<String> {
    (0..POLICY_DIM).map(|j| format!("theta_{j}")).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    fn create(dir: &Path, name: &str, header: &[String]) -> Result<Self> {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header)?;
        Ok(CsvOut { path, writer })
    }

    fn row(&mut self, fields: Vec<String>) -> Result<()> {
        self.writer.write_record(&fields)?;
        Ok(())
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn header(fields: &[&str]) -> Vec<String> {
    fields.iter().map(|s| s.to_string()).collect()
}

pub const TASKS_CSV: &str = "tasks.csv";
pub const TRAINING_CSV: &str = "training_tasks.csv";

fn csv_file(path: &Path, header: &[String]) -> Result<CsvOut> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    CsvOut::create(dir, &name.to_string_lossy(), header)
}

/// Task table: one row per task with its set (`train` or `eval`).
pub fn write_tasks_csv(path: &Path, hash: &str, train: &[Task], eval: &[Task]) -> Result<()> {
    let mut out = csv_file(path, &header(&["config_hash", "set", "index", "angle", "target_x", "target_y"]))?;
    for (set, tasks) in [("train", train), ("eval", eval)] {
        for (i, t) in tasks.iter().enumerate() {
            out.row(vec![
                hash.to_string(),
                set.to_string(),
                i.to_string(),
                t.angle.to_string(),
                t.surface_point[0].to_string(),
                t.surface_point[1].to_string(),
            ])?;
        }
    }
    out.finish()?;
    Ok(())
}

struct CsvIn {
    path: PathBuf,
    columns: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl CsvIn {
    fn open(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let columns = reader.headers()?.iter().map(str::to_string).collect();
        let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(CsvIn {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidInput(format!("{}: missing column `{name}`", self.path.display())))
    }

    fn parse<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let raw = self.rows[row].get(col).unwrap_or("");
        raw.parse().map_err(|_| {
            Error::InvalidInput(format!(
                "{}: row {}: cannot parse `{raw}` in column `{}`",
                self.path.display(),
                row + 1,
                self.columns[col]
            ))
        })
    }

    fn parse_opt<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<Option<T>> {
        if self.rows[row].get(col).unwrap_or("").is_empty() {
            Ok(None)
        } else {
            self.parse(row, col).map(Some)
        }
    }
}

/// Reads the tasks of one set (`train` or `eval`), or all of them.
pub fn read_tasks_csv(path: &Path, set: Option<&str>, arm: &ArmConfig) -> Result<Vec<Task>> {
    let table = CsvIn::open(path)?;
    let angle = table.column("angle")?;
    let set_col = table.column("set").ok();
    let mut out = Vec::new();
    for r in 0..table.rows.len() {
        let keep = match (set, set_col) {
            (Some(want), Some(c)) => table.rows[r].get(c) == Some(want),
            _ => true,
        };
        if keep {
            out.push(Task::from_angle(table.parse(r, angle)?, arm)?);
        }
    }
    Ok(out)
}

/// Policy table: one row per learned task with its search statistics, its
/// chart (blank if unknown) and the 37 policy entries.
pub fn write_training_csv(path: &Path, hash: &str, records: &[TrainingRecord], charts: &[Option<usize>]) -> Result<()> {
    let mut h = header(&[
        "config_hash", "index", "angle", "converged", "warm_from", "restarted", "updates", "rollouts",
        "distance", "chart",
    ]);
    h.extend(theta_headers());
    let mut out = csv_file(path, &h)?;
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![
            hash.to_string(),
            r.index.to_string(),
            r.task.angle.to_string(),
            r.converged.to_string(),
            r.warm_from.map_or_else(String::new, |w| w.to_string()),
            r.restarted.to_string(),
            r.updates.to_string(),
            r.rollouts.to_string(),
            r.distance.to_string(),
            charts.get(i).copied().flatten().map_or_else(String::new, |c| c.to_string()),
        ];
        row.extend(r.theta.as_slice().iter().map(|v| v.to_string()));
        out.row(row)?;
    }
    out.finish()?;
    Ok(())
}

pub fn read_training_csv(path: &Path, arm: &ArmConfig) -> Result<Vec<TrainingRecord>> {
    let table = CsvIn::open(path)?;
    let cols: Vec<usize> = ["index", "angle", "converged", "warm_from", "restarted", "updates", "rollouts", "distance"]
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<_>>()?;
    let theta_cols: Vec<usize> = theta_headers()
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(table.rows.len());
    for r in 0..table.rows.len() {
        let theta: Vec<f64> = theta_cols.iter().map(|&c| table.parse(r, c)).collect::<Result<_>>()?;
        out.push(TrainingRecord {
            index: table.parse(r, cols[0])?,
            task: Task::from_angle(table.parse(r, cols[1])?, arm)?,
            converged: table.parse(r, cols[2])?,
            warm_from: table.parse_opt(r, cols[3])?,
            restarted: table.parse(r, cols[4])?,
            updates: table.parse(r, cols[5])?,
            rollouts: table.parse(r, cols[6])?,
            distance: table.parse(r, cols[7])?,
            theta: PolicyVector::from_slice(&theta)?,
        });
    }
    Ok(out)
}

/// One CSV per figure plus per-task tables, and an SVG next to each figure
/// CSV. Output depends only on the report.
pub fn emit_figures(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = &report.config_hash;
    let mut written = Vec::new();
    let chart_of_record = |idx: usize| -> Option<usize> {
        report
            .final_point()?
            .manifold
            .charts
            .iter()
            .find(|c| c.members.contains(&idx))
            .map(|c| c.chart)
    };

    let charts: Vec<Option<usize>> = report.training.iter().map(|r| chart_of_record(r.index)).collect();
    let path = dir.join(TRAINING_CSV);
    write_training_csv(&path, hash, &report.training, &charts)?;
    written.push(path);

    // Policy entries against bearing, samples and fitted curve.
    let mut h = header(&["config_hash", "kind", "angle", "chart"]);
    h.extend(theta_headers());
    let mut out = CsvOut::create(dir, "fig2_policy_parameters.csv", &h)?;
    for r in report.training.iter().filter(|r| r.converged) {
        let mut row = vec![
            hash.clone(),
            "sample".into(),
            r.task.angle.to_string(),
            chart_of_record(r.index).map_or_else(String::new, |c| c.to_string()),
        ];
        row.extend(r.theta.as_slice().iter().map(|v| v.to_string()));
        out.row(row)?;
    }
    for f in &report.fit_curve {
        let mut row = vec![hash.clone(), "fit".into(), f.angle.to_string(), f.chart.to_string()];
        row.extend(f.theta.as_slice().iter().map(|v| v.to_string()));
        out.row(row)?;
    }
    written.push(out.finish()?);

    // Embedding and residual variance of each chart.
    let mut out = CsvOut::create(
        dir,
        "fig3_embedding.csv",
        &header(&["config_hash", "chart", "record_index", "angle", "x1", "x2"]),
    )?;
    let mut res = CsvOut::create(
        dir,
        "fig3_residual_variance.csv",
        &header(&["config_hash", "chart", "dimension", "residual_variance", "estimated_dimension"]),
    )?;
    if let Some(last) = report.final_point() {
        for c in &last.manifold.charts {
            for (row, &idx) in c.embedding.coordinates.iter().zip(&c.members) {
                out.row(vec![
                    hash.clone(),
                    c.chart.to_string(),
                    idx.to_string(),
                    report.training[idx].task.angle.to_string(),
                    row[0].to_string(),
                    row.get(1).map_or_else(String::new, |v| v.to_string()),
                ])?;
            }
            for (d, r) in c.residual_curve.iter().enumerate() {
                res.row(vec![
                    hash.clone(),
                    c.chart.to_string(),
                    (d + 1).to_string(),
                    r.to_string(),
                    c.dimension.to_string(),
                ])?;
            }
        }
    }
    written.push(out.finish()?);
    written.push(res.finish()?);

    // Figures 5–7: curves over the training-set size.
    let mut f5 = CsvOut::create(
        dir,
        "fig5_parameter_error.csv",
        &header(&["config_hash", "num_tasks", "num_used", "mean_relative_error", "mean_rmse", "num_eval"]),
    )?;
    let mut f6 = CsvOut::create(
        dir,
        "fig6_zero_shot_distance.csv",
        &header(&["config_hash", "num_tasks", "num_used", "mean_distance", "num_eval"]),
    )?;
    let mut f7 = CsvOut::create(
        dir,
        "fig7_fine_tune_updates.csv",
        &header(&[
            "config_hash", "num_tasks", "num_used", "mean_updates", "cold_start_mean_updates", "success_rate",
            "num_eval",
        ]),
    )?;
    let mut ev = CsvOut::create(
        dir,
        "eval_records.csv",
        &header(&[
            "config_hash", "num_tasks", "eval_index", "angle", "chart", "zero_shot_distance", "parameter_error",
            "parameter_rmse", "fine_tune_updates", "fine_tune_converged", "fine_tune_restarted", "reference_updates",
            "reference_converged",
        ]),
    )?;
    for p in &report.sweep {
        let n_err = p.evals.iter().filter(|e| e.parameter_error.is_some()).count();
        f5.row(vec![
            hash.clone(),
            p.num_tasks.to_string(),
            p.num_used.to_string(),
            opt(p.mean_parameter_error),
            opt(p.mean_parameter_rmse),
            n_err.to_string(),
        ])?;
        f6.row(vec![
            hash.clone(),
            p.num_tasks.to_string(),
            p.num_used.to_string(),
            opt(p.mean_zero_shot_distance),
            p.evals.len().to_string(),
        ])?;
        f7.row(vec![
            hash.clone(),
            p.num_tasks.to_string(),
            p.num_used.to_string(),
            opt(p.mean_fine_tune_updates),
            opt(p.mean_cold_start_updates),
            opt(p.fine_tune_success_rate),
            p.evals.len().to_string(),
        ])?;
        for e in &p.evals {
            let r = report.references.get(e.index);
            ev.row(vec![
                hash.clone(),
                p.num_tasks.to_string(),
                e.index.to_string(),
                e.task.angle.to_string(),
                e.chart.to_string(),
                e.zero_shot_distance.to_string(),
                opt(e.parameter_error),
                opt(e.parameter_rmse),
                e.fine_tune_updates.to_string(),
                e.fine_tune_converged.to_string(),
                e.fine_tune_restarted.to_string(),
                r.map_or_else(String::new, |r| r.updates.to_string()),
                r.map_or_else(String::new, |r| r.converged.to_string()),
            ])?;
        }
    }
    written.push(f5.finish()?);
    written.push(f6.finish()?);
    written.push(f7.finish()?);
    written.push(ev.finish()?);

    for (name, chart) in figure_charts(report) {
        let path = dir.join(name);
        write_file(&path, &chart.to_svg())?;
        written.push(path);
    }
    Ok(written)
}

fn figure_charts(report: &ExperimentReport) -> Vec<(&'static str, Chart)> {
    let mut out = Vec::new();
    let curve = |f: &dyn Fn(&SweepPoint) -> Option<f64>| -> Vec<(f64, f64)> {
        report
            .sweep
            .iter()
            .filter_map(|p| f(p).map(|v| (p.num_tasks as f64, v)))
            .collect()
    };
    for (file, entry, label) in [("fig2_release_phase.svg", 0usize, "release phase λ"), ("fig2_goal.svg", 1, "goal g (rad)")] {
        let mut series = Vec::new();
        let charts = report.fit_curve.iter().map(|f| f.chart).max().map_or(0, |m| m + 1);
        for c in 0..charts {
            series.push(Series {
                name: format!("fit, chart {c}"),
                points: report
                    .fit_curve
                    .iter()
                    .filter(|f| f.chart == c)
                    .map(|f| (f.angle, f.theta.as_slice()[entry]))
                    .collect(),
                style: Style::Line,
            });
        }
        series.push(Series {
            name: "learned policies".into(),
            points: report
                .training
                .iter()
                .filter(|r| r.converged)
                .map(|r| (r.task.angle, r.theta.as_slice()[entry]))
                .collect(),
            style: Style::Markers,
        });
        out.push((
            file,
            Chart {
                title: format!("{label} against target bearing"),
                x_label: "target bearing (rad)".into(),
                y_label: label.into(),
                series,
            },
        ));
    }
    if let Some(last) = report.final_point() {
        let series = last
            .manifold
            .charts
            .iter()
            .map(|c| Series {
                name: format!("chart {c}", c = c.chart),
                points: c
                    .embedding
                    .coordinates
                    .iter()
                    .map(|r| (r[0], r.get(1).copied().unwrap_or(0.0)))
                    .collect(),
                style: Style::Markers,
            })
            .collect();
        out.push((
            "fig3_embedding.svg",
            Chart {
                title: "two-dimensional embedding of the learned policies".into(),
                x_label: "embedding axis 1".into(),
                y_label: "embedding axis 2".into(),
                series,
            },
        ));
    }
    out.push((
        "fig5_parameter_error.svg",
        Chart {
            title: "predicted policy parameter error".into(),
            x_label: "training tasks".into(),
            y_label: "mean relative error".into(),
            series: vec![Series {
                name: "skill".into(),
                points: curve(&|p| p.mean_parameter_error),
                style: Style::Line,
            }],
        },
    ));
    out.push((
        "fig6_zero_shot_distance.svg",
        Chart {
            title: "distance to target before learning".into(),
            x_label: "training tasks".into(),
            y_label: "mean distance (m)".into(),
            series: vec![Series {
                name: "skill".into(),
                points: curve(&|p| p.mean_zero_shot_distance),
                style: Style::Line,
            }],
        },
    ));
    out.push((
        "fig7_fine_tune_updates.svg",
        Chart {
            title: "policy updates to reach the threshold".into(),
            x_label: "training tasks".into(),
            y_label: "mean updates".into(),
            series: vec![
                Series {
                    name: "from the skill's prediction".into(),
                    points: curve(&|p| p.mean_fine_tune_updates),
                    style: Style::Line,
                },
                Series {
                    name: "from scratch".into(),
                    points: curve(&|p| p.mean_cold_start_updates),
                    style: Style::Dashed,
                },
            ],
        },
    ));
    out
}
