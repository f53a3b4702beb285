//! Independent oracles and fixtures shared by the integration tests. Nothing
//! here calls into the likelihood or interval code under test.
#![allow(dead_code)]

use std::collections::BTreeMap;

use robust_audit::refpgs::{synth_generate, SynthConfig, SynthDataset};
use robust_audit::universe::{FeatureDef, FeatureValue};
use robust_audit::{DataUniverse, Instance, Schema};
use serde_json::json;

/// Binomial coefficient in floating point (exact for n <= 60).
pub fn choose(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c.round()
}

/// P(X <= k) for X ~ Bin(n, p), summed term by term.
pub fn binom_cdf(k: u64, n: u64, p: f64) -> f64 {
    (0..=k)
        .map(|j| choose(n, j) * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32))
        .sum()
}

/// P(X >= k) for X ~ Bin(n, p).
pub fn binom_sf(k: u64, n: u64, p: f64) -> f64 {
    (k..=n)
        .map(|j| choose(n, j) * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32))
        .sum()
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f is monotone increasing on [lo, hi] with a sign change.
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Clopper-Pearson bounds from tail sums: lo solves P(X >= k | p) = a/2 and
/// hi solves P(X <= k | p) = a/2.
pub fn clopper_pearson_oracle(k: u64, n: u64, alpha: f64) -> (f64, f64) {
    let half = alpha / 2.0;
    let lo = if k == 0 {
        0.0
    } else {
        bisect(0.0, 1.0, |p| binom_sf(k, n, p) - half)
    };
    let hi = if k == n {
        1.0
    } else {
        bisect(0.0, 1.0, |p| half - binom_cdf(k, n, p))
    };
    (lo, hi)
}

/// P(observed allele set == evidence | genotypes) by enumerating every
/// per-copy dropout pattern, then drop-in of each allele not surviving.
/// Genotypes are ordered allele pairs; `freqs` index the alleles.
pub fn event_tree_likelihood(
    evidence: u64,
    genotypes: &[(usize, usize)],
    dropout: &[f64],
    dropin: f64,
    freqs: &[f64],
) -> f64 {
    let copies: Vec<(usize, f64)> = genotypes
        .iter()
        .zip(dropout)
        .flat_map(|(&(a, b), &d)| [(a, d), (b, d)])
        .collect();
    let mut total = 0.0;
    for pattern in 0u32..(1 << copies.len()) {
        let mut p = 1.0;
        let mut surviving = 0u64;
        for (i, &(allele, d)) in copies.iter().enumerate() {
            if pattern >> i & 1 == 1 {
                p *= d;
            } else {
                p *= 1.0 - d;
                surviving |= 1 << allele;
            }
        }
        if surviving & !evidence != 0 {
            continue;
        }
        for (a, &f) in freqs.iter().enumerate() {
            let in_e = evidence >> a & 1 == 1;
            let survived = surviving >> a & 1 == 1;
            if survived {
                continue;
            }
            p *= if in_e { dropin * f } else { 1.0 - dropin * f };
        }
        total += p;
    }
    total
}

/// Likelihood with `knowns` plus `unknowns` random contributors, summed over
/// all ordered allele draws of the unknowns.
pub fn brute_force_hypothesis(
    evidence: u64,
    knowns: &[(usize, usize)],
    unknowns: usize,
    dropout: &[f64],
    dropin: f64,
    freqs: &[f64],
) -> f64 {
    let m = freqs.len();
    let draws = 2 * unknowns;
    let mut total = 0.0;
    let mut idx = vec![0usize; draws];
    loop {
        let mut prior = 1.0;
        let mut genotypes = knowns.to_vec();
        for u in 0..unknowns {
            let (a, b) = (idx[2 * u], idx[2 * u + 1]);
            prior *= freqs[a] * freqs[b];
            genotypes.push((a, b));
        }
        total += prior * event_tree_likelihood(evidence, &genotypes, dropout, dropin, freqs);
        // odometer
        let mut pos = 0;
        loop {
            if pos == draws {
                return total;
            }
            idx[pos] += 1;
            if idx[pos] < m {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// log10 LR for one locus: reference plus n-1 unknowns against n unknowns.
pub fn brute_force_locus_log10_lr(
    evidence: u64,
    reference: (usize, usize),
    n: usize,
    dropout: &[f64],
    dropin: f64,
    freqs: &[f64],
) -> Option<f64> {
    let hp = brute_force_hypothesis(evidence, &[reference], n - 1, dropout, dropin, freqs);
    let hd = brute_force_hypothesis(evidence, &[], n, dropout, dropin, freqs);
    (hp > 0.0).then(|| hp.log10() - hd.log10())
}

/// A synthetic dataset with `instances` draws and overrides applied.
pub fn synth(seed: u64, tweak: impl FnOnce(&mut SynthConfig)) -> (SynthConfig, SynthDataset) {
    let mut cfg = SynthConfig::default();
    tweak(&mut cfg);
    let data = synth_generate(&cfg, seed).expect("valid synth config");
    (cfg, data)
}

pub fn synth_universe(seed: u64, tweak: impl FnOnce(&mut SynthConfig)) -> (DataUniverse, SynthDataset) {
    let (cfg, data) = synth(seed, tweak);
    let universe = DataUniverse::new(data.schema.clone(), data.instances.clone(), vec![cfg.source])
        .expect("synthetic universe validates");
    (universe, data)
}

/// A small two-feature schema used by harness tests that do not need the
/// genotyping payload.
pub fn toy_schema() -> Schema {
    Schema::new(
        vec![
            FeatureDef::categorical("kit", &["A", "B", "C"]),
            FeatureDef::integer("n_contributors", 1, 6),
            FeatureDef::real("amount_pg", "pg", 0.0, 10000.0),
        ],
        "toy-v1",
        "boolean",
    )
    .expect("toy schema")
}

pub fn toy_instance(id: usize, kit: &str, n: i64, amount: f64, label: bool) -> Instance {
    Instance {
        id: format!("t-{id}"),
        source: "toy".into(),
        features: BTreeMap::from([
            ("kit".to_string(), FeatureValue::Category(kit.into())),
            ("n_contributors".to_string(), FeatureValue::Integer(n)),
            ("amount_pg".to_string(), FeatureValue::Real(amount)),
        ]),
        payload: json!({ "id": id }),
        label,
    }
}

pub fn toy_record(id: &str, kit: &str, n: i64, amount: f64, label: bool) -> String {
    json!({
        "id": id,
        "features": {"kit": kit, "n_contributors": n, "amount_pg": amount},
        "payload": {},
        "label": label
    })
    .to_string()
}

/// Tool whose score for each instance is fixed in advance; counts how many
/// instances it has been asked to evaluate.
pub struct ScriptedTool {
    pub scores: std::collections::HashMap<String, f64>,
    pub calls: std::sync::atomic::AtomicUsize,
    pub kind: String,
}

impl ScriptedTool {
    pub fn new(kind: &str, scores: impl IntoIterator<Item = (String, f64)>) -> Self {
        ScriptedTool {
            scores: scores.into_iter().collect(),
            calls: std::sync::atomic::AtomicUsize::new(0),
            kind: kind.into(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl robust_audit::ToolAdapter for ScriptedTool {
    fn identity(&self) -> robust_audit::ToolIdentity {
        robust_audit::ToolIdentity {
            name: "scripted".into(),
            version: "1".into(),
            config_digest: "none".into(),
        }
    }

    fn payload_kind(&self) -> &str {
        &self.kind
    }

    fn invoke(&self, batch: &[&Instance]) -> Result<Vec<robust_audit::ToolOutput>, robust_audit::AdapterError> {
        self.calls
            .fetch_add(batch.len(), std::sync::atomic::Ordering::SeqCst);
        batch
            .iter()
            .map(|i| {
                self.scores
                    .get(&i.id)
                    .map(|s| robust_audit::ToolOutput::score("log10_lr", *s))
                    .ok_or_else(|| robust_audit::AdapterError::Invocation {
                        id: i.id.clone(),
                        message: "no scripted score".into(),
                    })
            })
            .collect()
    }
}
