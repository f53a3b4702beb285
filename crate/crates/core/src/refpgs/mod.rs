//! Reference probabilistic-genotyping tool: a semi-continuous
//! dropout/drop-in likelihood-ratio model over multi-locus mixtures, and a
//! seeded generator of synthetic mixtures whose features drive its accuracy.

mod model;
pub mod synth;

pub use model::{
    compute_lr, genotype_prior, hypothesis_likelihood, locus_likelihood, LrResult,
    DEFAULT_COMPLEXITY_BOUND,
};
pub use synth::{synth_generate, SynthConfig, SynthDataset};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::json_digest;

pub const PAYLOAD_KIND: &str = "pgs-mixture-v1";
pub const LABEL_KIND: &str = "contributor-boolean";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PgsError {
    #[error("unknown allele `{allele}` at locus `{locus}`")]
    UnknownAllele { locus: String, allele: String },
    #[error("unknown locus `{0}`")]
    UnknownLocus(String),
    #[error("invalid locus model `{locus}`: {message}")]
    InvalidLocus { locus: String, message: String },
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("enumeration needs {needed} terms, above the bound of {bound}")]
    ComplexityGuard { needed: u64, bound: u64 },
    #[error("locus `{0}` has zero likelihood under the defense hypothesis")]
    DegenerateLocus(String),
    #[error("invalid synthesis config: {0}")]
    Config(String),
}

/// Allele frequencies at one locus. Alleles are indexed in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct LocusModel {
    name: String,
    alleles: Vec<String>,
    freqs: Vec<f64>,
}

impl LocusModel {
    pub const MAX_ALLELES: usize = 64;

    pub fn new(name: &str, table: &BTreeMap<String, f64>) -> Result<Self, PgsError> {
        let invalid = |message: String| PgsError::InvalidLocus {
            locus: name.to_string(),
            message,
        };
        if table.is_empty() || table.len() > Self::MAX_ALLELES {
            return Err(invalid(format!("{} alleles", table.len())));
        }
        if let Some((a, f)) = table.iter().find(|(_, &f)| !(f > 0.0 && f.is_finite())) {
            return Err(invalid(format!("frequency of `{a}` is {f}")));
        }
        let total: f64 = table.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("frequencies sum to {total}")));
        }
        Ok(LocusModel {
            name: name.to_string(),
            alleles: table.keys().cloned().collect(),
            freqs: table.values().copied().collect(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alleles(&self) -> &[String] {
        &self.alleles
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.alleles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alleles.is_empty()
    }

    pub fn index(&self, allele: &str) -> Result<usize, PgsError> {
        self.alleles
            .binary_search_by(|a| a.as_str().cmp(allele))
            .map_err(|_| PgsError::UnknownAllele {
                locus: self.name.clone(),
                allele: allele.to_string(),
            })
    }

    pub fn genotype(&self, a: &str, b: &str) -> Result<Genotype, PgsError> {
        Ok(Genotype::new(self.index(a)?, self.index(b)?))
    }

    pub fn allele_set<S: AsRef<str>>(&self, alleles: &[S]) -> Result<AlleleSet, PgsError> {
        let mut set = AlleleSet::EMPTY;
        for a in alleles {
            set.insert(self.index(a.as_ref())?);
        }
        Ok(set)
    }

    fn check_genotype(&self, g: Genotype) -> Result<(), PgsError> {
        if g.b() >= self.len() {
            return Err(PgsError::UnknownAllele {
                locus: self.name.clone(),
                allele: format!("#{}", g.b()),
            });
        }
        Ok(())
    }
}

/// Unordered allele pair, stored as sorted allele indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genotype(usize, usize);

impl Genotype {
    pub fn new(a: usize, b: usize) -> Self {
        Genotype(a.min(b), a.max(b))
    }

    pub fn a(self) -> usize {
        self.0
    }

    pub fn b(self) -> usize {
        self.1
    }

    pub fn is_homozygous(self) -> bool {
        self.0 == self.1
    }

    /// Copies (0, 1 or 2) of `allele` carried.
    pub fn copies(self, allele: usize) -> u32 {
        (self.0 == allele) as u32 + (self.1 == allele) as u32
    }
}

/// Set of observed alleles at a locus, as a bit set over allele indices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct AlleleSet(u64);

impl AlleleSet {
    pub const EMPTY: AlleleSet = AlleleSet(0);

    pub fn from_bits(bits: u64) -> Self {
        AlleleSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn insert(&mut self, allele: usize) {
        self.0 |= 1 << allele;
    }

    pub fn contains(self, allele: usize) -> bool {
        self.0 >> allele & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// Population allele frequencies for every locus, keyed by locus name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrequencyTable {
    pub loci: BTreeMap<String, BTreeMap<String, f64>>,
}

impl FrequencyTable {
    pub fn load(document: &str) -> Result<Self, PgsError> {
        let table: FrequencyTable = serde_json::from_str(document)
            .map_err(|e| PgsError::InvalidLocus {
                locus: "<table>".into(),
                message: e.to_string(),
            })?;
        table.models()?;
        Ok(table)
    }

    pub fn models(&self) -> Result<BTreeMap<String, LocusModel>, PgsError> {
        self.loci
            .iter()
            .map(|(name, freqs)| Ok((name.clone(), LocusModel::new(name, freqs)?)))
            .collect()
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }
}

/// Evidence and reference at one locus, by allele name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocusEvidence {
    pub locus: String,
    pub evidence: Vec<String>,
    pub reference: [String; 2],
}

/// Tool payload of kind `pgs-mixture-v1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixturePayload {
    /// Contributors assumed under both hypotheses.
    pub contributors: usize,
    /// Per-contributor dropout; entry 0 belongs to the reference under the
    /// prosecution hypothesis.
    pub dropout: Vec<f64>,
    pub dropin: f64,
    /// Digest of the frequency table the evidence refers to.
    pub frequency_table: String,
    pub loci: Vec<LocusEvidence>,
}

impl MixturePayload {
    pub fn validate(&self) -> Result<(), PgsError> {
        let bad = |m: String| Err(PgsError::InvalidMixture(m));
        if self.contributors < 1 {
            return bad("at least one contributor required".into());
        }
        if self.dropout.len() != self.contributors {
            return bad(format!(
                "{} dropout values for {} contributors",
                self.dropout.len(),
                self.contributors
            ));
        }
        if let Some(d) = self.dropout.iter().find(|d| !(**d >= 0.0 && **d < 1.0)) {
            return bad(format!("dropout {d} not in [0, 1)"));
        }
        if !(self.dropin >= 0.0 && self.dropin < 1.0) {
            return bad(format!("drop-in {} not in [0, 1)", self.dropin));
        }
        if self.loci.is_empty() {
            return bad("no loci".into());
        }
        Ok(())
    }
}
