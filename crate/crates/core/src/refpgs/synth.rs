//! Seeded synthetic mixtures. Every instance records the factors that
//! govern how hard it is to interpret: contributor count, DNA amount,
//! mixture ratio, typing kit and the presence of a relative.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{FrequencyTable, LocusEvidence, MixturePayload, PgsError, LABEL_KIND, PAYLOAD_KIND};
use crate::universe::{FeatureDef, FeatureValue, Instance, Schema};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kit {
    pub name: String,
    /// Multiplies the amount-derived dropout before clamping.
    pub dropout_multiplier: f64,
}

/// Per-contributor dropout from that contributor's share of the DNA:
/// `clamp(multiplier * exp(-share_pg / scale_pg), floor, ceiling)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutMap {
    pub scale_pg: f64,
    pub floor: f64,
    pub ceiling: f64,
}

impl DropoutMap {
    pub fn dropout(&self, share_pg: f64, multiplier: f64) -> f64 {
        (multiplier * (-share_pg / self.scale_pg).exp()).clamp(self.floor, self.ceiling)
    }
}

impl Default for DropoutMap {
    fn default() -> Self {
        DropoutMap {
            scale_pg: 100.0,
            floor: 0.01,
            ceiling: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub instances: usize,
    pub loci: usize,
    pub alleles_per_locus: usize,
    pub frequency_seed: u64,
    pub min_contributors: usize,
    pub max_contributors: usize,
    pub min_amount_pg: f64,
    pub max_amount_pg: f64,
    pub dropout_map: DropoutMap,
    /// Major-to-minor weight classes; contributor 0 carries the major weight.
    pub ratio_classes: Vec<f64>,
    pub relative_probability: f64,
    pub dropin: f64,
    pub kits: Vec<Kit>,
    pub positive_fraction: f64,
    pub source: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            instances: 1000,
            loci: 15,
            alleles_per_locus: 8,
            frequency_seed: 7,
            min_contributors: 1,
            max_contributors: 4,
            min_amount_pg: 10.0,
            max_amount_pg: 1010.0,
            dropout_map: DropoutMap::default(),
            ratio_classes: vec![1.0, 3.0, 9.0],
            relative_probability: 0.05,
            dropin: 0.01,
            kits: vec![
                Kit {
                    name: "K1".into(),
                    dropout_multiplier: 1.0,
                },
                Kit {
                    name: "K2".into(),
                    dropout_multiplier: 1.5,
                },
            ],
            positive_fraction: 0.5,
            source: "synth".into(),
        }
    }
}

impl SynthConfig {
    pub fn load(document: &str) -> Result<Self, PgsError> {
        let config: SynthConfig =
            serde_json::from_str(document).map_err(|e| PgsError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PgsError> {
        let bad = |m: String| Err(PgsError::Config(m));
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if self.loci == 0 {
            return bad("at least one locus required".into());
        }
        if !(2..=super::LocusModel::MAX_ALLELES).contains(&self.alleles_per_locus) {
            return bad(format!("alleles_per_locus {} not in 2..=64", self.alleles_per_locus));
        }
        if self.min_contributors < 1 || self.min_contributors > self.max_contributors {
            return bad(format!(
                "contributor range {}..={} invalid",
                self.min_contributors, self.max_contributors
            ));
        }
        if !(self.min_amount_pg >= 0.0 && self.min_amount_pg <= self.max_amount_pg)
            || !self.max_amount_pg.is_finite()
        {
            return bad(format!(
                "amount range [{}, {}] invalid",
                self.min_amount_pg, self.max_amount_pg
            ));
        }
        let m = &self.dropout_map;
        if !(m.scale_pg > 0.0 && m.scale_pg.is_finite()) {
            return bad(format!("dropout scale {} must be positive", m.scale_pg));
        }
        if !(prob(m.floor) && prob(m.ceiling) && m.floor <= m.ceiling && m.ceiling < 1.0) {
            return bad(format!("dropout clamp [{}, {}] invalid", m.floor, m.ceiling));
        }
        if self.ratio_classes.is_empty() || self.ratio_classes.iter().any(|r| !(*r >= 1.0 && r.is_finite())) {
            return bad("ratio classes must be non-empty and >= 1".into());
        }
        if !prob(self.relative_probability) || !prob(self.positive_fraction) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if !(self.dropin >= 0.0 && self.dropin < 1.0) {
            return bad(format!("drop-in {} not in [0, 1)", self.dropin));
        }
        if self.kits.is_empty() {
            return bad("at least one kit required".into());
        }
        for (i, k) in self.kits.iter().enumerate() {
            if !(k.dropout_multiplier > 0.0 && k.dropout_multiplier.is_finite()) {
                return bad(format!("kit `{}` multiplier must be positive", k.name));
            }
            if self.kits[..i].iter().any(|o| o.name == k.name) {
                return bad(format!("duplicate kit `{}`", k.name));
            }
        }
        if self.source.is_empty() {
            return bad("empty source tag".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        let kits: Vec<&str> = self.kits.iter().map(|k| k.name.as_str()).collect();
        let max_ratio = self.ratio_classes.iter().copied().fold(1.0, f64::max);
        Schema::new(
            vec![
                FeatureDef::integer(
                    "n_contributors",
                    self.min_contributors as i64,
                    self.max_contributors as i64,
                ),
                FeatureDef::real("amount_pg", "pg", self.min_amount_pg, self.max_amount_pg),
                FeatureDef::real("ratio", "major:minor", 1.0, max_ratio),
                FeatureDef::categorical("kit", &kits),
                FeatureDef::categorical("relative_present", &["no", "yes"]),
            ],
            PAYLOAD_KIND,
            LABEL_KIND,
        )
        .expect("generated schema is valid")
    }
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub schema: Schema,
    pub frequencies: FrequencyTable,
    pub instances: Vec<Instance>,
}

fn allele_names(count: usize) -> Vec<String> {
    // STR-like repeat numbers, zero-padded so name order is numeric order.
    (0..count).map(|i| format!("{:02}", 8 + i)).collect()
}

fn sample_frequencies(config: &SynthConfig) -> FrequencyTable {
    let mut rng = ChaCha8Rng::seed_from_u64(config.frequency_seed);
    let names = allele_names(config.alleles_per_locus);
    let loci = (0..config.loci)
        .map(|l| {
            let weights: Vec<f64> = (0..names.len()).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let freqs = names
                .iter()
                .zip(&weights)
                .map(|(n, w)| (n.clone(), w / total))
                .collect();
            (format!("L{:02}", l + 1), freqs)
        })
        .collect();
    FrequencyTable { loci }
}

struct Sampler<'a> {
    /// Per locus: allele indices and cumulative frequencies.
    cumulative: Vec<Vec<f64>>,
    freqs: Vec<&'a [f64]>,
}

impl<'a> Sampler<'a> {
    fn allele<R: Rng>(&self, rng: &mut R, locus: usize) -> usize {
        let u: f64 = rng.gen();
        let cum = &self.cumulative[locus];
        cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
    }

    fn genotype<R: Rng>(&self, rng: &mut R, locus: usize) -> [usize; 2] {
        [self.allele(rng, locus), self.allele(rng, locus)]
    }

    /// A full sibling of `reference`: per locus, identical by descent on
    /// 0, 1 or 2 alleles with probabilities 1/4, 1/2, 1/4.
    fn sibling<R: Rng>(&self, rng: &mut R, reference: &[[usize; 2]]) -> Vec<[usize; 2]> {
        reference
            .iter()
            .enumerate()
            .map(|(l, g)| {
                let u: f64 = rng.gen();
                if u < 0.25 {
                    self.genotype(rng, l)
                } else if u < 0.75 {
                    let shared = g[rng.gen_range(0..2)];
                    [shared, self.allele(rng, l)]
                } else {
                    *g
                }
            })
            .collect()
    }
}

/// Generate a labeled synthetic dataset. Output is a pure function of
/// `(config, seed)`.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<SynthDataset, PgsError> {
    config.validate()?;
    let frequencies = sample_frequencies(config);
    let table_digest = frequencies.digest();
    let models = frequencies.models()?;
    let loci: Vec<_> = models.values().collect();
    let sampler = Sampler {
        cumulative: loci
            .iter()
            .map(|m| {
                let mut acc = 0.0;
                m.freqs()
                    .iter()
                    .map(|f| {
                        acc += f;
                        acc
                    })
                    .collect()
            })
            .collect(),
        freqs: loci.iter().map(|m| m.freqs()).collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = config.instances.max(1).to_string().len();
    let mut instances = Vec::with_capacity(config.instances);
    for i in 0..config.instances {
        let n = rng.gen_range(config.min_contributors..=config.max_contributors);
        let amount = if config.max_amount_pg > config.min_amount_pg {
            rng.gen_range(config.min_amount_pg..config.max_amount_pg)
        } else {
            config.min_amount_pg
        };
        // Round to 0.1 pg to keep instance files readable.
        let amount = ((amount * 10.0).round() / 10.0).clamp(config.min_amount_pg, config.max_amount_pg);
        let ratio = if n == 1 {
            1.0
        } else {
            config.ratio_classes[rng.gen_range(0..config.ratio_classes.len())]
        };
        let kit = &config.kits[rng.gen_range(0..config.kits.len())];
        let relative = rng.gen::<f64>() < config.relative_probability;
        let label = rng.gen::<f64>() < config.positive_fraction;

        let total_weight = ratio + (n - 1) as f64;
        let dropout: Vec<f64> = (0..n)
            .map(|c| {
                let w = if c == 0 { ratio } else { 1.0 };
                config
                    .dropout_map
                    .dropout(amount * w / total_weight, kit.dropout_multiplier)
            })
            .collect();

        let reference: Vec<[usize; 2]> =
            (0..loci.len()).map(|l| sampler.genotype(&mut rng, l)).collect();
        let mut contributors: Vec<Vec<[usize; 2]>> = Vec::with_capacity(n);
        for c in 0..n {
            let person = match (c, label, relative) {
                (0, true, _) => reference.clone(),
                (0, false, true) | (1, true, true) => sampler.sibling(&mut rng, &reference),
                _ => (0..loci.len()).map(|l| sampler.genotype(&mut rng, l)).collect(),
            };
            contributors.push(person);
        }

        let mut observations = Vec::with_capacity(loci.len());
        for (l, model) in loci.iter().enumerate() {
            let mut seen = vec![false; model.len()];
            for (c, person) in contributors.iter().enumerate() {
                for &allele in &person[l] {
                    if rng.gen::<f64>() >= dropout[c] {
                        seen[allele] = true;
                    }
                }
            }
            for (a, &f) in sampler.freqs[l].iter().enumerate() {
                if rng.gen::<f64>() < config.dropin * f {
                    seen[a] = true;
                }
            }
            let names = model.alleles();
            let mut reference_pair = [names[reference[l][0]].clone(), names[reference[l][1]].clone()];
            reference_pair.sort();
            observations.push(LocusEvidence {
                locus: model.name().to_string(),
                evidence: (0..model.len())
                    .filter(|&a| seen[a])
                    .map(|a| names[a].clone())
                    .collect(),
                reference: reference_pair,
            });
        }

        let payload = MixturePayload {
            contributors: n,
            dropout,
            dropin: config.dropin,
            frequency_table: table_digest.clone(),
            loci: observations,
        };
        let features = BTreeMap::from([
            ("n_contributors".to_string(), FeatureValue::Integer(n as i64)),
            ("amount_pg".to_string(), FeatureValue::Real(amount)),
            ("ratio".to_string(), FeatureValue::Real(ratio)),
            ("kit".to_string(), FeatureValue::Category(kit.name.clone())),
            (
                "relative_present".to_string(),
                FeatureValue::Category(if relative { "yes" } else { "no" }.to_string()),
            ),
        ]);
        instances.push(Instance {
            id: format!("s-{:0width$}", i),
            source: config.source.clone(),
            features,
            payload: serde_json::to_value(&payload).unwrap_or(Value::Null),
            label,
        });
    }
    Ok(SynthDataset {
        schema: config.schema(),
        frequencies,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_map_is_monotone_and_clamped() {
        let map = DropoutMap::default();
        let mut last = f64::INFINITY;
        for share in [0.0, 1.0, 10.0, 50.0, 100.0, 300.0, 1000.0, 5000.0] {
            let d = map.dropout(share, 1.0);
            assert!(d <= last);
            assert!((0.01..=0.9).contains(&d));
            last = d;
        }
        assert_eq!(map.dropout(5000.0, 1.0), 0.01);
        assert_eq!(map.dropout(0.0, 1.0), 0.9);
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig::default().validate().is_ok());
        let bad = SynthConfig {
            positive_fraction: 1.5,
            ..SynthConfig::default()
        };
        assert!(matches!(bad.validate(), Err(PgsError::Config(_))));
        let bad = SynthConfig {
            min_contributors: 3,
            max_contributors: 2,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SynthConfig::load(r#"{"instances": 5, "bogus": 1}"#).is_err());
        assert_eq!(SynthConfig::load(r#"{"instances": 5}"#).unwrap().instances, 5);
    }

    #[test]
    fn frequencies_normalized() {
        let table = sample_frequencies(&SynthConfig::default());
        for freqs in table.loci.values() {
            let total: f64 = freqs.values().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        assert!(table.models().is_ok());
    }

    #[test]
    fn instances_validate_against_schema() {
        let config = SynthConfig {
            instances: 200,
            ..SynthConfig::default()
        };
        let data = synth_generate(&config, 3).unwrap();
        let universe = crate::universe::DataUniverse::new(
            data.schema.clone(),
            data.instances.clone(),
            vec![config.source.clone()],
        );
        assert!(universe.is_ok());
        for inst in &data.instances {
            let p: MixturePayload = serde_json::from_value(inst.payload.clone()).unwrap();
            assert_eq!(p.contributors as i64, match inst.features["n_contributors"] {
                FeatureValue::Integer(n) => n,
                _ => unreachable!(),
            });
            assert_eq!(p.loci.len(), config.loci);
        }
    }
}
