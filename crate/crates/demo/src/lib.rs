//! Browser bindings for the audit harness. Every exported function takes
//! plain numbers or strings and returns a JSON string; the `*_json`
//! functions hold the logic and are what the native tests call.

use std::collections::BTreeMap;

use robust_audit::adapters::{ReferencePgsTool, RunOptions, SliceConditionalFlip};
use robust_audit::checks::exact_binomial_ci;
use robust_audit::cli::render_human;
use robust_audit::family::{generate_kway_family, CaseValue, FeatureCondition};
use robust_audit::refpgs::{
    compute_lr, synth_generate, FrequencyTable, LocusEvidence, MixturePayload, SynthConfig,
    DEFAULT_COMPLEXITY_BOUND,
};
use robust_audit::{
    robust_adversarial_test, CaseProfile, CheckSpec, DataUniverse, MetricKind, SlicePredicate,
    ToleranceConfig,
};
use serde::Deserialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Exact binomial interval for `k` successes out of `n`.
pub fn clopper_pearson_json(k: u32, n: u32, alpha: f64) -> Result<String, String> {
    let ci = exact_binomial_ci(k as u64, n as u64, alpha).map_err(|e| e.to_string())?;
    let point = if n == 0 { f64::NAN } else { k as f64 / n as f64 };
    Ok(json!({"k": k, "n": n, "alpha": alpha, "point": point, "lo": ci.lo, "hi": ci.hi}).to_string())
}

/// One-locus question posed in the explorer form.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocusQuery {
    /// Allele name to population frequency; normalized before use.
    pub frequencies: BTreeMap<String, f64>,
    pub evidence: Vec<String>,
    pub reference: [String; 2],
    pub contributors: usize,
    /// One dropout probability for every contributor.
    pub dropout: f64,
    pub dropin: f64,
}

pub fn locus_lr_json(query: &str) -> Result<String, String> {
    let q: LocusQuery = serde_json::from_str(query).map_err(|e| format!("bad query: {e}"))?;
    let total: f64 = q.frequencies.values().sum();
    if !(total > 0.0) || q.frequencies.values().any(|f| !(*f > 0.0)) {
        return Err("frequencies must be positive".into());
    }
    let table = FrequencyTable {
        loci: BTreeMap::from([(
            "L".to_string(),
            q.frequencies.iter().map(|(a, f)| (a.clone(), f / total)).collect(),
        )]),
    };
    let payload = MixturePayload {
        contributors: q.contributors,
        dropout: vec![q.dropout; q.contributors],
        dropin: q.dropin,
        frequency_table: table.digest(),
        loci: vec![LocusEvidence {
            locus: "L".into(),
            evidence: q.evidence,
            reference: q.reference,
        }],
    };
    let models = table.models().map_err(|e| e.to_string())?;
    let r = compute_lr(&payload, &models, DEFAULT_COMPLEXITY_BOUND).map_err(|e| e.to_string())?;
    Ok(json!({
        "log10_lr": r.log10_lr,
        "lr": r.log10_lr.map(|x| 10f64.powf(x)),
        "excluded": r.excluded,
    })
    .to_string())
}

/// Settings for a small end-to-end audit on a synthetic universe.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiniAudit {
    pub seed: u64,
    pub instances: usize,
    pub contributors: u32,
    pub amount_lo: f64,
    pub amount_hi: f64,
    pub k: usize,
    pub metric: MetricKind,
    pub theta: f64,
    /// Make the tool answer wrongly on the case slice (contributors and amount).
    pub sabotage: bool,
}

impl Default for MiniAudit {
    fn default() -> Self {
        MiniAudit {
            seed: 1,
            instances: 1000,
            contributors: 2,
            amount_lo: 10.0,
            amount_hi: 300.0,
            k: 2,
            metric: MetricKind::Accuracy,
            theta: 0.8,
            sabotage: false,
        }
    }
}

/// Returns `{"text": <human table>, "report": <report JSON>}`.
pub fn mini_audit_json(settings: &str) -> Result<String, String> {
    let s: MiniAudit = serde_json::from_str(settings).map_err(|e| format!("bad settings: {e}"))?;
    if s.instances == 0 || s.instances > 20_000 {
        return Err("instances must be between 1 and 20000".into());
    }
    let config = SynthConfig {
        instances: s.instances,
        loci: 10,
        ..SynthConfig::default()
    };
    let data = synth_generate(&config, s.seed).map_err(|e| e.to_string())?;
    let universe = DataUniverse::new(data.schema.clone(), data.instances, vec![config.source.clone()])
        .map_err(|e| e.to_string())?;

    let profile = CaseProfile::default()
        .with("n_contributors", CaseValue::Number(s.contributors as f64))
        .with("amount_pg", CaseValue::Range { lo: s.amount_lo, hi: s.amount_hi });
    let family = generate_kway_family(&profile, s.k, universe.schema(), &ToleranceConfig::default())
        .map_err(|e| e.to_string())?;
    let spec = CheckSpec::new(s.metric, s.theta);
    let honest = ReferencePgsTool::new(&data.frequencies).map_err(|e| e.to_string())?;
    let options = RunOptions::default();

    let report = if s.sabotage {
        let case = SlicePredicate::new(
            "case",
            vec![
                FeatureCondition::in_range("n_contributors", s.contributors as f64, s.contributors as f64),
                FeatureCondition::in_range("amount_pg", s.amount_lo, s.amount_hi),
            ],
        )
        .map_err(|e| e.to_string())?;
        let tool = SliceConditionalFlip::new(honest, case, spec.decision());
        robust_adversarial_test(&tool, &universe, &family, &spec, None, &options)
    } else {
        robust_adversarial_test(&honest, &universe, &family, &spec, None, &options)
    }
    .map_err(|e| e.to_string())?;

    let report_value: serde_json::Value =
        serde_json::from_str(&report.to_json()).map_err(|e| e.to_string())?;
    Ok(json!({"text": render_human(&report), "report": report_value}).to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn clopper_pearson(k: u32, n: u32, alpha: f64) -> Result<String, JsError> {
    js(clopper_pearson_json(k, n, alpha))
}

#[wasm_bindgen]
pub fn locus_lr(query: &str) -> Result<String, JsError> {
    js(locus_lr_json(query))
}

#[wasm_bindgen]
pub fn mini_audit(settings: &str) -> Result<String, JsError> {
    js(mini_audit_json(settings))
}
