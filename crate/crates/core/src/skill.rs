//! The parameterized skill: a linear chart classifier over the task feature
//! and, for every chart, one Gaussian-kernel regressor per policy entry.
//!
//! The task feature is the target bearing divided by π, so it lies in
//! `[0, 1]`. A skill maps a task to the chart the classifier picks and then
//! evaluates that chart's regressors entry by entry.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arm_sim::Task;
use crate::dmp::{PolicyVector, POLICY_DIM};
use crate::error::{Error, Result};

pub const SKILL_FORMAT: &str = "paraskill-skill";
pub const SKILL_VERSION: u32 = 1;
pub const TASK_FEATURE: &str = "angle_over_pi";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkillConfig {
    /// Inverse variance of the Gaussian kernel on the task feature.
    pub gamma: f64,
    pub ridge: f64,
    /// Largest ridge tried when the kernel system cannot be factorized.
    pub max_ridge: f64,
    /// Passes of the classifier fit over the training tasks.
    pub classifier_epochs: usize,
    /// L2 penalty on the classifier slopes.
    pub classifier_penalty: f64,
}

impl Default for SkillConfig {
    fn default() -> Self {
        SkillConfig {
            gamma: 5.0,
            ridge: 1e-6,
            max_ridge: 1e-2,
            classifier_epochs: 2000,
            classifier_penalty: 1e-3,
        }
    }
}

impl SkillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::ParameterDomain("skill gamma must be positive".into()));
        }
        if !(self.ridge > 0.0 && self.ridge <= self.max_ridge && self.max_ridge.is_finite()) {
            return Err(Error::ParameterDomain("skill ridge must satisfy 0 < ridge <= max_ridge".into()));
        }
        if self.classifier_epochs == 0 || !(self.classifier_penalty >= 0.0) {
            return Err(Error::ParameterDomain("classifier epochs and penalty out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub tasks: Vec<Task>,
    pub policies: Vec<PolicyVector>,
    /// Chart index of every pair, in `0..D`.
    pub chart_labels: Vec<usize>,
}

impl TrainingSet {
    pub fn num_charts(&self) -> usize {
        self.chart_labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self, min_chart_size: usize) -> Result<()> {
        let n = self.tasks.len();
        if n == 0 || self.policies.len() != n || self.chart_labels.len() != n {
            return Err(Error::InvalidInput(format!(
                "training set needs matching nonempty tasks, policies and labels ({}, {}, {})",
                n,
                self.policies.len(),
                self.chart_labels.len()
            )));
        }
        for c in 0..self.num_charts() {
            let count = self.chart_labels.iter().filter(|&&l| l == c).count();
            if count < min_chart_size {
                return Err(Error::InvalidInput(format!(
                    "chart {c} has {count} pairs, fewer than {min_chart_size}"
                )));
            }
        }
        Ok(())
    }
}

/// One linear score `slope·u + bias` per chart; the highest score wins and
/// ties go to the lowest chart index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartClassifier {
    pub weights: Vec<[f64; 2]>,
    /// Share of training tasks classified correctly.
    pub training_accuracy: f64,
}

impl ChartClassifier {
    pub fn constant() -> Self {
        ChartClassifier {
            weights: vec![[0.0, 0.0]],
            training_accuracy: 1.0,
        }
    }

    pub fn num_charts(&self) -> usize {
        self.weights.len()
    }

    pub fn scores(&self, u: f64) -> Vec<f64> {
        self.weights.iter().map(|w| w[0] * u + w[1]).collect()
    }

    pub fn classify_feature(&self, u: f64) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, s) in self.scores(u).into_iter().enumerate() {
            if s > best_score {
                best = c;
                best_score = s;
            }
        }
        best
    }

    pub fn classify(&self, task: &Task) -> usize {
        self.classify_feature(task.normalized())
    }

    /// Feature values in `[0, 1]` where the predicted chart changes, found on
    /// a fine grid and refined by bisection.
    pub fn boundaries(&self) -> Vec<f64> {
        let steps = 10_000;
        let mut out = Vec::new();
        let mut prev = self.classify_feature(0.0);
        for i in 1..=steps {
            let u = i as f64 / steps as f64;
            let c = self.classify_feature(u);
            if c != prev {
                let (mut lo, mut hi) = ((i - 1) as f64 / steps as f64, u);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if self.classify_feature(mid) == prev {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                out.push(0.5 * (lo + hi));
                prev = c;
            }
        }
        out
    }
}

/// Fits the chart classifier with a multiclass hinge loss: every task should
/// score its own chart at least 1 above any other. Full-batch subgradient
/// steps with a decaying rate on the standardized feature; the iterate with the
/// lowest regularized loss is returned, so the fit is deterministic and does
/// not depend on task order.
pub fn train_classifier(tasks: &[Task], labels: &[usize], cfg: &SkillConfig) -> Result<ChartClassifier> {
    if tasks.is_empty() || tasks.len() != labels.len() {
        return Err(Error::InvalidInput("classifier needs one label per task".into()));
    }
    let d = labels.iter().max().map_or(0, |m| m + 1);
    for c in 0..d {
        if !labels.contains(&c) {
            return Err(Error::InvalidInput(format!("chart {c} has no example")));
        }
    }
    if d == 1 {
        return Ok(ChartClassifier::constant());
    }
    let n = tasks.len() as f64;
    let feats: Vec<f64> = tasks.iter().map(Task::normalized).collect();
    // Fit on the standardized feature z = (u − mean) / sd, then map back.
    let mean = feats.iter().sum::<f64>() / n;
    let sd = (feats.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / n).sqrt().max(1e-12);
    let z: Vec<f64> = feats.iter().map(|u| (u - mean) / sd).collect();
    let objective = |w: &[[f64; 2]]| -> f64 {
        let penalty: f64 = w.iter().map(|wc| 0.5 * cfg.classifier_penalty * wc[0] * wc[0]).sum();
        let hinge: f64 = z
            .iter()
            .zip(labels)
            .map(|(&u, &y)| {
                let own = w[y][0] * u + w[y][1];
                let rival = (0..d)
                    .filter(|&c| c != y)
                    .map(|c| w[c][0] * u + w[c][1])
                    .fold(f64::NEG_INFINITY, f64::max);
                (1.0 + rival - own).max(0.0)
            })
            .sum();
        penalty + hinge / n
    };
    let mut w = vec![[0.0f64; 2]; d];
    let mut best = (objective(&w), w.clone());
    for epoch in 0..cfg.classifier_epochs {
        let rate = 1.0 / (1.0 + epoch as f64).sqrt();
        let mut grad = vec![[0.0f64; 2]; d];
        for (c, g) in grad.iter_mut().enumerate() {
            g[0] = cfg.classifier_penalty * w[c][0];
        }
        for (&u, &y) in z.iter().zip(labels) {
            let own = w[y][0] * u + w[y][1];
            // Most violating other chart, lowest index on ties.
            let mut rival = None;
            let mut rival_score = f64::NEG_INFINITY;
            for (c, wc) in w.iter().enumerate() {
                if c == y {
                    continue;
                }
                let s = wc[0] * u + wc[1];
                if s > rival_score {
                    rival = Some(c);
                    rival_score = s;
                }
            }
            if let Some(r) = rival {
                if 1.0 + rival_score - own > 0.0 {
                    grad[y][0] -= u / n;
                    grad[y][1] -= 1.0 / n;
                    grad[r][0] += u / n;
                    grad[r][1] += 1.0 / n;
                }
            }
        }
        for c in 0..d {
            for j in 0..2 {
                w[c][j] -= rate * grad[c][j];
            }
        }
        let o = objective(&w);
        if o < best.0 {
            best = (o, w.clone());
        }
    }
    let weights = best
        .1
        .iter()
        .map(|wc| [wc[0] / sd, wc[1] - wc[0] * mean / sd])
        .collect();
    let mut classifier = ChartClassifier {
        weights,
        training_accuracy: 0.0,
    };
    let correct = feats
        .iter()
        .zip(labels)
        .filter(|(&u, &y)| classifier.classify_feature(u) == y)
        .count();
    classifier.training_accuracy = correct as f64 / n;
    Ok(classifier)
}

/// Gaussian-kernel ridge regression on the scalar task feature. The target
/// mean is removed before fitting, so constants are reproduced exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelRegressor {
    pub offset: f64,
    pub coefficients: Vec<f64>,
}

impl KernelRegressor {
    pub fn predict(&self, support: &[f64], gamma: f64, u: f64) -> f64 {
        let mut acc = self.offset;
        for (c, &s) in self.coefficients.iter().zip(support) {
            let d = u - s;
            acc += c * (-gamma * d * d).exp();
        }
        acc
    }
}

/// The regressors of one chart; they share support tasks and kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartRegressors {
    pub support: Vec<f64>,
    /// Ridge that was actually used after any escalation.
    pub ridge: f64,
    pub models: Vec<KernelRegressor>,
}

impl ChartRegressors {
    pub fn predict(&self, gamma: f64, u: f64) -> PolicyVector {
        let mut out = [0.0; POLICY_DIM];
        for (o, m) in out.iter_mut().zip(&self.models) {
            *o = m.predict(&self.support, gamma, u);
        }
        PolicyVector::from_array(out)
    }
}

pub fn kernel_matrix(support: &[f64], gamma: f64) -> DMatrix<f64> {
    let n = support.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d = support[i] - support[j];
        (-gamma * d * d).exp()
    })
}

/// Fits every policy entry on one chart's examples. If `K + ridge·I` cannot
/// be factorized the ridge grows by decades up to `cfg.max_ridge`.
pub fn fit_chart(support: &[f64], targets: &[PolicyVector], cfg: &SkillConfig) -> Result<ChartRegressors> {
    let n = support.len();
    if n == 0 || targets.len() != n {
        return Err(Error::InvalidInput("chart regression needs matching nonempty inputs".into()));
    }
    let kernel = kernel_matrix(support, cfg.gamma);
    let mut ridge = cfg.ridge;
    loop {
        let system = &kernel + DMatrix::identity(n, n) * ridge;
        if let Some(chol) = system.cholesky() {
            let mut models = Vec::with_capacity(POLICY_DIM);
            let mut finite = true;
            for j in 0..POLICY_DIM {
                let ys: Vec<f64> = targets.iter().map(|t| t.as_slice()[j]).collect();
                let offset = ys.iter().sum::<f64>() / n as f64;
                let rhs = DVector::from_iterator(n, ys.iter().map(|y| y - offset));
                let coef = chol.solve(&rhs);
                finite &= coef.iter().all(|c| c.is_finite());
                models.push(KernelRegressor {
                    offset,
                    coefficients: coef.iter().copied().collect(),
                });
            }
            if finite {
                return Ok(ChartRegressors {
                    support: support.to_vec(),
                    ridge,
                    models,
                });
            }
        }
        let next = ridge * 10.0;
        if next > cfg.max_ridge * (1.0 + 1e-9) {
            return Err(Error::NumericDomain(format!(
                "kernel system stays singular up to ridge {ridge:e}"
            )));
        }
        log::warn!("kernel system singular at ridge {ridge:e}; retrying with {next:e}");
        ridge = next;
    }
}

pub fn train_regressors(training: &TrainingSet, cfg: &SkillConfig) -> Result<Vec<ChartRegressors>> {
    (0..training.num_charts())
        .map(|c| {
            let idx: Vec<usize> = (0..training.tasks.len())
                .filter(|&i| training.chart_labels[i] == c)
                .collect();
            let support: Vec<f64> = idx.iter().map(|&i| training.tasks[i].normalized()).collect();
            let targets: Vec<PolicyVector> = idx.iter().map(|&i| training.policies[i]).collect();
            fit_chart(&support, &targets, cfg)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillMetadata {
    pub training_size: usize,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillModel {
    pub gamma: f64,
    pub classifier: ChartClassifier,
    pub charts: Vec<ChartRegressors>,
    pub metadata: SkillMetadata,
}

impl SkillModel {
    pub fn num_charts(&self) -> usize {
        self.charts.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SkillFormat(m));
        if self.charts.is_empty() {
            return bad("skill has no charts".into());
        }
        if self.classifier.num_charts() != self.charts.len() {
            return bad(format!(
                "classifier knows {} charts but the grid has {}",
                self.classifier.num_charts(),
                self.charts.len()
            ));
        }
        for (c, chart) in self.charts.iter().enumerate() {
            if chart.models.len() != POLICY_DIM {
                return bad(format!("chart {c} has {} regressors, expected {POLICY_DIM}", chart.models.len()));
            }
            if chart.models.iter().any(|m| m.coefficients.len() != chart.support.len()) {
                return bad(format!("chart {c} has coefficient rows of the wrong length"));
            }
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("bad kernel gamma {}", self.gamma));
        }
        Ok(())
    }

    /// The chart's regressors evaluated at the task; the release phase is
    /// clamped to `[0, 1]`.
    pub fn predict_in_chart(&self, chart: usize, task: &Task) -> PolicyVector {
        let mut theta = self.charts[chart].predict(self.gamma, task.normalized());
        theta.set_lambda_release(theta.lambda_release().clamp(0.0, 1.0));
        theta
    }

    pub fn predict(&self, task: &Task) -> PolicyVector {
        self.predict_in_chart(self.classifier.classify(task), task)
    }
}

pub fn train_skill(training: &TrainingSet, cfg: &SkillConfig, config_hash: &str) -> Result<SkillModel> {
    cfg.validate()?;
    training.validate(1)?;
    let classifier = train_classifier(&training.tasks, &training.chart_labels, cfg)?;
    let charts = train_regressors(training, cfg)?;
    let skill = SkillModel {
        gamma: cfg.gamma,
        classifier,
        charts,
        metadata: SkillMetadata {
            training_size: training.tasks.len(),
            config_hash: config_hash.to_string(),
        },
    };
    skill.validate()?;
    Ok(skill)
}

fn join(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    parts.join(" ")
}

/// Text form of a skill; see `docs/skill-format.md`.
pub fn skill_to_string(skill: &SkillModel) -> Result<String> {
    skill.validate()?;
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "{SKILL_FORMAT} {SKILL_VERSION}");
    let _ = writeln!(w, "task_feature {TASK_FEATURE}");
    let _ = writeln!(w, "policy_dim {POLICY_DIM}");
    let _ = writeln!(w, "num_charts {}", skill.num_charts());
    let _ = writeln!(w, "gamma {}", skill.gamma);
    let _ = writeln!(w, "training_size {}", skill.metadata.training_size);
    let _ = writeln!(w, "config_hash {}", skill.metadata.config_hash);
    let _ = writeln!(w, "[classifier]");
    let _ = writeln!(w, "training_accuracy {}", skill.classifier.training_accuracy);
    for (c, wc) in skill.classifier.weights.iter().enumerate() {
        let _ = writeln!(w, "chart {c} {} {}", wc[0], wc[1]);
    }
    for (c, chart) in skill.charts.iter().enumerate() {
        let _ = writeln!(w, "[chart {c}]");
        let _ = writeln!(w, "ridge {}", chart.ridge);
        let _ = writeln!(w, "support_count {}", chart.support.len());
        let _ = writeln!(w, "support {}", join(&chart.support));
        for (j, m) in chart.models.iter().enumerate() {
            let _ = writeln!(w, "dim {j} {} {}", m.offset, join(&m.coefficients));
        }
    }
    let _ = writeln!(w, "[end]");
    if s.contains("inf") || s.contains("NaN") {
        return Err(Error::SkillFormat("skill holds non-finite numbers".into()));
    }
    Ok(s)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    section: String,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self, expect: &str) -> Result<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            let line = line.trim();
            if !line.is_empty() {
                return Ok((i + 1, line));
            }
        }
        Err(Error::SkillFormat(format!(
            "file ends early: missing {expect} in section {}",
            self.section
        )))
    }

    /// Next line, which must start with `key`; returns the remaining fields.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (no, line) = self.next_line(key)?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some(key) {
            return Err(Error::SkillFormat(format!(
                "line {no}: expected `{key}` in section {}, found `{line}`",
                self.section
            )));
        }
        Ok((no, fields.collect()))
    }

    fn header(&mut self, name: &str) -> Result<()> {
        let (no, line) = self.next_line(&format!("section [{name}]"))?;
        if line != format!("[{name}]") {
            return Err(Error::SkillFormat(format!(
                "line {no}: missing section [{name}], found `{line}`"
            )));
        }
        self.section = format!("[{name}]");
        Ok(())
    }
}

fn num<T: std::str::FromStr>(field: Option<&&str>, line: usize) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::SkillFormat(format!("line {line}: bad or missing number")))
}

fn floats(fields: &[&str], line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::SkillFormat(format!("line {line}: bad number `{f}`")))
        })
        .collect()
}

pub fn skill_from_str(text: &str) -> Result<SkillModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        section: "header".into(),
    };
    let (no, magic) = lines.keyed(SKILL_FORMAT)?;
    let version: u32 = num(magic.first(), no)?;
    if version != SKILL_VERSION {
        return Err(Error::SkillFormat(format!(
            "skill file version {version}, this build reads version {SKILL_VERSION}"
        )));
    }
    let (no, feature) = lines.keyed("task_feature")?;
    if feature.first() != Some(&TASK_FEATURE) {
        return Err(Error::SkillFormat(format!("line {no}: unknown task feature {feature:?}")));
    }
    let (no, dim) = lines.keyed("policy_dim")?;
    let dim: usize = num(dim.first(), no)?;
    if dim != POLICY_DIM {
        return Err(Error::SkillFormat(format!("policy_dim {dim}, expected {POLICY_DIM}")));
    }
    let (no, d) = lines.keyed("num_charts")?;
    let num_charts: usize = num(d.first(), no)?;
    let (no, g) = lines.keyed("gamma")?;
    let gamma: f64 = num(g.first(), no)?;
    let (no, t) = lines.keyed("training_size")?;
    let training_size: usize = num(t.first(), no)?;
    let (_, h) = lines.keyed("config_hash")?;
    let config_hash = h.first().copied().unwrap_or("").to_string();

    lines.header("classifier")?;
    let (no, acc) = lines.keyed("training_accuracy")?;
    let training_accuracy: f64 = num(acc.first(), no)?;
    let mut weights = Vec::new();
    loop {
        let (no, line) = lines.next_line("chart weights")?;
        if line.starts_with('[') {
            // Put the header back by handling it here.
            let charts = read_charts(&mut lines, line, no, num_charts)?;
            let skill = SkillModel {
                gamma,
                classifier: ChartClassifier {
                    weights,
                    training_accuracy,
                },
                charts,
                metadata: SkillMetadata {
                    training_size,
                    config_hash,
                },
            };
            if skill.num_charts() != num_charts {
                return Err(Error::SkillFormat(format!(
                    "num_charts = {num_charts} but the file holds {} chart sections",
                    skill.num_charts()
                )));
            }
            skill.validate()?;
            return Ok(skill);
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.first() != Some(&"chart") || fields.len() != 4 {
            return Err(Error::SkillFormat(format!("line {no}: bad classifier row `{line}`")));
        }
        let idx: usize = num(fields.get(1), no)?;
        if idx != weights.len() {
            return Err(Error::SkillFormat(format!("line {no}: classifier rows out of order")));
        }
        let w = floats(&fields[2..], no)?;
        weights.push([w[0], w[1]]);
    }
}

fn read_charts(lines: &mut Lines<'_>, first: &str, first_no: usize, expected: usize) -> Result<Vec<ChartRegressors>> {
    let mut charts = Vec::new();
    let mut header = (first_no, first.to_string());
    loop {
        let (no, line) = header;
        if line == "[end]" {
            if charts.len() < expected {
                return Err(Error::SkillFormat(format!("missing section [chart {}]", charts.len())));
            }
            return Ok(charts);
        }
        if line != format!("[chart {}]", charts.len()) {
            return Err(Error::SkillFormat(format!(
                "line {no}: expected [chart {}] or [end], found `{line}`",
                charts.len()
            )));
        }
        lines.section = line.clone();
        let (no, r) = lines.keyed("ridge")?;
        let ridge: f64 = num(r.first(), no)?;
        let (no, c) = lines.keyed("support_count")?;
        let count: usize = num(c.first(), no)?;
        let (no, s) = lines.keyed("support")?;
        let support = floats(&s, no)?;
        if support.len() != count {
            return Err(Error::SkillFormat(format!(
                "line {no}: {} support points, expected {count}",
                support.len()
            )));
        }
        let mut models = Vec::with_capacity(POLICY_DIM);
        for j in 0..POLICY_DIM {
            let (no, fields) = lines.keyed("dim")?;
            let idx: usize = num(fields.first(), no)?;
            if idx != j {
                return Err(Error::SkillFormat(format!("line {no}: expected dim {j}, found {idx}")));
            }
            let values = floats(&fields[1..], no)?;
            if values.len() != count + 1 {
                return Err(Error::SkillFormat(format!(
                    "line {no}: dim {j} has {} coefficients, expected {count}",
                    values.len().saturating_sub(1)
                )));
            }
            models.push(KernelRegressor {
                offset: values[0],
                coefficients: values[1..].to_vec(),
            });
        }
        charts.push(ChartRegressors { support, ridge, models });
        let (no, next) = lines.next_line("[end]")?;
        header = (no, next.to_string());
    }
}

pub fn save_skill(skill: &SkillModel, path: &Path) -> Result<()> {
    let text = skill_to_string(skill)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_skill(path: &Path) -> Result<SkillModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    skill_from_str(&text)
}
