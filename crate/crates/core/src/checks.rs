//! The binary check function: tool outputs become decisions, decisions become
//! rate metrics with exact binomial confidence intervals, and a slice passes
//! only when the conservative interval bound clears the threshold.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::adapters::ToolOutput;
use crate::universe::Instance;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CheckError {
    #[error("tool output has no score `{0}`")]
    MissingScore(String),
    #[error("score `{field}` is not finite ({value})")]
    NonFiniteScore { field: String, value: f64 },
    #[error("no instances eligible for {0:?}")]
    NoEligibleInstances(MetricKind),
    #[error("invalid counts: {successes} successes in {trials} trials")]
    InvalidCounts { successes: u64, trials: u64 },
    #[error("invalid check spec: {0}")]
    InvalidSpec(String),
    #[error("{decisions} decisions but {labels} labels")]
    Misaligned { decisions: usize, labels: usize },
}

/// Threshold rule turning a score into an inclusion (true) or exclusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub score_field: String,
    pub tau: f64,
}

impl DecisionRule {
    pub fn log10_lr(tau: f64) -> Self {
        DecisionRule {
            score_field: "log10_lr".into(),
            tau,
        }
    }
}

/// Apply the rule: inclusion iff score >= tau. A flagged definite exclusion
/// is an exclusion whatever the score.
pub fn decide(output: &ToolOutput, rule: &DecisionRule) -> Result<bool, CheckError> {
    if output.excluded {
        return Ok(false);
    }
    let score = *output
        .scores
        .get(&rule.score_field)
        .ok_or_else(|| CheckError::MissingScore(rule.score_field.clone()))?;
    if !score.is_finite() {
        return Err(CheckError::NonFiniteScore {
            field: rule.score_field.clone(),
            value: score,
        });
    }
    Ok(score >= rule.tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ErrorRate,
    Accuracy,
    FalseInclusionRate,
    FalseExclusionRate,
}

impl MetricKind {
    /// Error-like metrics must stay at or below the threshold; accuracy must
    /// reach it.
    pub fn is_error_like(self) -> bool {
        !matches!(self, MetricKind::Accuracy)
    }

    fn eligible(self, label: bool) -> bool {
        match self {
            MetricKind::ErrorRate | MetricKind::Accuracy => true,
            MetricKind::FalseInclusionRate => !label,
            MetricKind::FalseExclusionRate => label,
        }
    }

    fn counts(self, decision: bool, label: bool) -> bool {
        match self {
            MetricKind::Accuracy => decision == label,
            _ => decision != label,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::ErrorRate => "error_rate",
            MetricKind::Accuracy => "accuracy",
            MetricKind::FalseInclusionRate => "false_inclusion_rate",
            MetricKind::FalseExclusionRate => "false_exclusion_rate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub point: f64,
    pub numerator: u64,
    pub denominator: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
}

pub fn evaluate_metric(
    metric: MetricKind,
    decisions: &[bool],
    labels: &[bool],
) -> Result<MetricEstimate, CheckError> {
    if decisions.len() != labels.len() {
        return Err(CheckError::Misaligned {
            decisions: decisions.len(),
            labels: labels.len(),
        });
    }
    let (mut numerator, mut denominator) = (0u64, 0u64);
    for (&d, &l) in decisions.iter().zip(labels) {
        if metric.eligible(l) {
            denominator += 1;
            numerator += metric.counts(d, l) as u64;
        }
    }
    if denominator == 0 {
        return Err(CheckError::NoEligibleInstances(metric));
    }
    Ok(MetricEstimate {
        point: numerator as f64 / denominator as f64,
        numerator,
        denominator,
        interval: None,
    })
}

/// Find p in [0, 1] with `f(p) = target` for a non-decreasing `f`.
fn bisect(f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sided Clopper-Pearson interval at level `1 - alpha`.
pub fn exact_binomial_ci(successes: u64, trials: u64, alpha: f64) -> Result<Interval, CheckError> {
    if trials == 0 || successes > trials {
        return Err(CheckError::InvalidCounts { successes, trials });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CheckError::InvalidSpec(format!("alpha {alpha} not in (0, 1)")));
    }
    let (k, n) = (successes as f64, trials as f64);
    let tail = alpha / 2.0;
    // The boundary cases have closed forms; the interior solves
    // P(X >= k | lo) = alpha/2 and P(X <= k | hi) = alpha/2.
    let lo = if successes == 0 {
        0.0
    } else if successes == trials {
        tail.powf(1.0 / n)
    } else {
        bisect(|p| beta_reg(k, n - k + 1.0, p), tail)
    };
    let hi = if successes == trials {
        1.0
    } else if successes == 0 {
        1.0 - tail.powf(1.0 / n)
    } else {
        bisect(|p| beta_reg(k + 1.0, n - k, p), 1.0 - tail)
    };
    Ok(Interval { lo, hi })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    /// Pass on the conservative confidence bound.
    #[default]
    Interval,
    /// Pass on the point estimate (sensitivity analysis only).
    PointEstimate,
}

fn default_score_field() -> String {
    "log10_lr".into()
}

fn default_alpha() -> f64 {
    CheckSpec::DEFAULT_ALPHA
}

fn default_n_min() -> u64 {
    CheckSpec::DEFAULT_N_MIN
}

/// Check configuration. Every default is serialized explicitly so reports
/// never depend on silent defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub metric: MetricKind,
    #[serde(default = "default_score_field")]
    pub score_field: String,
    #[serde(default)]
    pub tau: f64,
    pub theta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_min")]
    pub n_min: u64,
    #[serde(default)]
    pub mode: CheckMode,
    /// Where the threshold comes from (a published standard, a stipulation).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_provenance: Option<String>,
}

impl CheckSpec {
    pub const DEFAULT_ALPHA: f64 = 0.05;
    pub const DEFAULT_N_MIN: u64 = 30;

    pub fn new(metric: MetricKind, theta: f64) -> Self {
        CheckSpec {
            metric,
            score_field: default_score_field(),
            tau: 0.0,
            theta,
            alpha: Self::DEFAULT_ALPHA,
            n_min: Self::DEFAULT_N_MIN,
            mode: CheckMode::Interval,
            theta_provenance: None,
        }
    }

    pub fn load(document: &str) -> Result<Self, CheckError> {
        let spec: CheckSpec =
            serde_json::from_str(document).map_err(|e| CheckError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CheckError> {
        let bad = |m: String| Err(CheckError::InvalidSpec(m));
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("theta {} not in [0, 1]", self.theta));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} not in (0, 1)", self.alpha));
        }
        if self.n_min < 1 {
            return bad("n_min must be at least 1".into());
        }
        if !self.tau.is_finite() {
            return bad(format!("tau {} is not finite", self.tau));
        }
        if self.score_field.is_empty() {
            return bad("empty score_field".into());
        }
        Ok(())
    }

    pub fn decision(&self) -> DecisionRule {
        DecisionRule {
            score_field: self.score_field.clone(),
            tau: self.tau,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    MetThreshold,
    ThresholdViolated,
    InsufficientSupport,
    NoEligibleInstances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub verdict: Verdict,
    pub reason: Reason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<MetricEstimate>,
}

impl CheckResult {
    fn fail(reason: Reason, estimate: Option<MetricEstimate>) -> Self {
        CheckResult {
            verdict: Verdict::Fail,
            reason,
            estimate,
        }
    }
}

/// Evaluate the check on one slice. `outputs` is aligned with `instances`.
pub fn run_check(
    spec: &CheckSpec,
    instances: &[&Instance],
    outputs: &[ToolOutput],
) -> Result<CheckResult, CheckError> {
    spec.validate()?;
    let rule = spec.decision();
    let decisions = outputs
        .iter()
        .map(|o| decide(o, &rule))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<bool> = instances.iter().map(|i| i.label).collect();
    check_decisions(spec, &decisions, &labels)
}

/// The check applied to precomputed decisions.
pub fn check_decisions(
    spec: &CheckSpec,
    decisions: &[bool],
    labels: &[bool],
) -> Result<CheckResult, CheckError> {
    let mut estimate = match evaluate_metric(spec.metric, decisions, labels) {
        Ok(e) => e,
        Err(CheckError::NoEligibleInstances(_)) => {
            return Ok(CheckResult::fail(Reason::NoEligibleInstances, None))
        }
        Err(e) => return Err(e),
    };
    let interval = exact_binomial_ci(estimate.numerator, estimate.denominator, spec.alpha)?;
    estimate.interval = Some(interval);
    if estimate.denominator < spec.n_min {
        return Ok(CheckResult::fail(Reason::InsufficientSupport, Some(estimate)));
    }
    let statistic = match (spec.mode, spec.metric.is_error_like()) {
        (CheckMode::Interval, true) => interval.hi,
        (CheckMode::Interval, false) => interval.lo,
        (CheckMode::PointEstimate, _) => estimate.point,
    };
    let passes = if spec.metric.is_error_like() {
        statistic <= spec.theta
    } else {
        statistic >= spec.theta
    };
    Ok(if passes {
        CheckResult {
            verdict: Verdict::Pass,
            reason: Reason::MetThreshold,
            estimate: Some(estimate),
        }
    } else {
        CheckResult::fail(Reason::ThresholdViolated, Some(estimate))
    })
}
