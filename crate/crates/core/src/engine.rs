//! Robust adversarial testing: the check is evaluated on every slice of the
//! family, the tool passes only if every slice passes, and the slice with
//! the worst point estimate is reported alongside the verdict.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::adapters::{run_tool, AdapterError, OutputCache, RunOptions, ToolAdapter, ToolIdentity};
use crate::checks::{run_check, CheckError, CheckResult, CheckSpec, MetricKind, Reason, Verdict};
use crate::family::{DistributionFamily, FamilyError, FamilyMeta, SlicePredicate};
use crate::universe::{DataUniverse, Instance, UniverseError};

pub const REPORT_FORMAT: &str = "robust-audit-report/1";

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("check failed to evaluate: {0}")]
    Check(#[from] CheckError),
    #[error("no slice has instances eligible for the metric")]
    NoEvaluableSlices,
}

impl From<FamilyError> for EngineError {
    fn from(e: FamilyError) -> Self {
        EngineError::Config(e.to_string())
    }
}

impl From<UniverseError> for EngineError {
    fn from(e: UniverseError) -> Self {
        EngineError::Config(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceOutcome {
    pub spec: SlicePredicate,
    pub support: usize,
    pub result: CheckResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniverseInfo {
    pub provenance: Vec<String>,
    pub instances: usize,
    pub payload_kind: String,
    pub schema_digest: String,
    pub universe_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyInfo {
    pub slices: usize,
    pub hand_edited: bool,
    pub meta: FamilyMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub slice: String,
    pub metric: MetricKind,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub slices: usize,
    pub passed: usize,
    pub failed: usize,
    pub insufficient_support: usize,
    pub no_eligible_instances: usize,
}

/// Execution details; everything here may differ between otherwise
/// identical audits and is masked when comparing reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub elapsed_ms: u64,
    pub parallelism: usize,
    pub transport: String,
    pub tool_invocations: usize,
    pub cache_hits: usize,
    pub cache_verified: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditReport {
    pub format: String,
    pub tool: ToolIdentity,
    pub universe: UniverseInfo,
    pub family: FamilyInfo,
    pub check: CheckSpec,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_case: Option<WorstCase>,
    pub summary: Summary,
    pub outcomes: Vec<SliceOutcome>,
    pub run: Option<RunInfo>,
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Canonical JSON with the `run` block nulled out.
    pub fn to_json_masked(&self) -> String {
        AuditReport {
            run: None,
            ..self.clone()
        }
        .to_json()
    }

    pub fn load(document: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(document)
    }

    /// The family the audit ran on, rebuilt from the report.
    pub fn family(&self) -> Result<DistributionFamily, FamilyError> {
        DistributionFamily::new(
            self.outcomes.iter().map(|o| o.spec.clone()).collect(),
            self.family.meta.clone(),
        )
    }

    pub fn failing_slices(&self) -> impl Iterator<Item = &SliceOutcome> {
        self.outcomes
            .iter()
            .filter(|o| o.result.verdict == Verdict::Fail)
    }
}

/// Wall-clock milliseconds; 0 in the browser, where std has no clock.
#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
fn unix_ms() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
fn unix_ms() -> u64 {
    0
}

fn worst_of(metric: MetricKind, outcomes: &[SliceOutcome]) -> Option<WorstCase> {
    let mut worst: Option<(&SliceOutcome, f64)> = None;
    for o in outcomes {
        let Some(est) = &o.result.estimate else {
            continue;
        };
        let worse = match worst {
            None => true,
            Some((_, w)) if metric.is_error_like() => est.point > w,
            Some((_, w)) => est.point < w,
        };
        if worse {
            worst = Some((o, est.point));
        }
    }
    worst.map(|(o, value)| WorstCase {
        slice: o.spec.name.clone(),
        metric,
        value,
    })
}

/// Worst point estimate over the family: the maximum for error-like
/// metrics and the minimum for accuracy, first in family order on ties.
pub fn worst_case_metric(report: &AuditReport) -> Result<(String, f64), EngineError> {
    worst_of(report.check.metric, &report.outcomes)
        .map(|w| (w.slice, w.value))
        .ok_or(EngineError::NoEvaluableSlices)
}

/// Run the audit. Configuration is validated before the tool is called;
/// each instance is evaluated once however many slices contain it, and a
/// failing slice never stops evaluation of the others.
pub fn robust_adversarial_test(
    tool: &dyn ToolAdapter,
    universe: &DataUniverse,
    family: &DistributionFamily,
    spec: &CheckSpec,
    cache: Option<&mut OutputCache>,
    options: &RunOptions,
) -> Result<AuditReport, EngineError> {
    let started_unix_ms = unix_ms();
    if family.is_empty() {
        return Err(EngineError::Config("empty distribution family".into()));
    }
    spec.validate().map_err(|e| EngineError::Config(e.to_string()))?;
    family.validate(universe.schema())?;
    if options.parallelism < 1 {
        return Err(EngineError::Config("parallelism must be at least 1".into()));
    }
    let payload_kind = &universe.schema().payload_kind;
    if tool.payload_kind() != payload_kind {
        return Err(EngineError::Config(format!(
            "tool expects payload kind `{}`, universe holds `{}`",
            tool.payload_kind(),
            payload_kind
        )));
    }

    let slices = family
        .specs()
        .iter()
        .map(|s| universe.select_indices(s))
        .collect::<Result<Vec<_>, _>>()?;
    let needed: Vec<usize> = slices
        .iter()
        .flatten()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut position = vec![usize::MAX; universe.len()];
    for (p, &i) in needed.iter().enumerate() {
        position[i] = p;
    }
    let all = universe.instances();
    let needed_refs: Vec<&Instance> = needed.iter().map(|&i| &all[i]).collect();
    let (outputs, stats) = run_tool(tool, payload_kind, &needed_refs, cache, options)?;

    let mut outcomes = Vec::with_capacity(slices.len());
    for (spec_slice, members) in family.specs().iter().zip(&slices) {
        let insts: Vec<&Instance> = members.iter().map(|&i| &all[i]).collect();
        let outs: Vec<_> = members
            .iter()
            .map(|&i| outputs[position[i]].clone())
            .collect();
        let result = run_check(spec, &insts, &outs)?;
        outcomes.push(SliceOutcome {
            spec: spec_slice.clone(),
            support: members.len(),
            result,
        });
    }

    let mut summary = Summary {
        slices: outcomes.len(),
        ..Summary::default()
    };
    for o in &outcomes {
        match o.result.verdict {
            Verdict::Pass => summary.passed += 1,
            Verdict::Fail => summary.failed += 1,
        }
        match o.result.reason {
            Reason::InsufficientSupport => summary.insufficient_support += 1,
            Reason::NoEligibleInstances => summary.no_eligible_instances += 1,
            _ => {}
        }
    }
    let verdict = if summary.failed == 0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };

    let finished_unix_ms = unix_ms();
    Ok(AuditReport {
        format: REPORT_FORMAT.into(),
        tool: tool.identity(),
        universe: UniverseInfo {
            provenance: universe.provenance().to_vec(),
            instances: universe.len(),
            payload_kind: payload_kind.clone(),
            schema_digest: universe.schema().digest(),
            universe_digest: universe.digest(),
        },
        family: FamilyInfo {
            slices: family.len(),
            hand_edited: family.hand_edited(),
            meta: family.meta().clone(),
        },
        check: spec.clone(),
        verdict,
        worst_case: worst_of(spec.metric, &outcomes),
        summary,
        outcomes,
        run: Some(RunInfo {
            started_unix_ms,
            finished_unix_ms,
            elapsed_ms: finished_unix_ms.saturating_sub(started_unix_ms),
            parallelism: options.parallelism,
            transport: tool.transport(),
            tool_invocations: stats.invocations,
            cache_hits: stats.cache_hits,
            cache_verified: stats.verified,
        }),
    })
}
