//! The data universe: a schema-validated, order-preserving collection of
//! labeled instances assembled from one or more validation datasets.
//!
//! Files on disk are a JSON schema manifest plus a line-delimited instance
//! file (one JSON record per line, LF-terminated).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;

use crate::digest::{json_digest, sha256_hex};
use crate::family::SlicePredicate;

#[derive(Debug, thiserror::Error)]
pub enum UniverseError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("record {index}: field `{field}`: {message}")]
    Validation {
        index: usize,
        field: String,
        message: String,
    },
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Categorical,
    Integer,
    Real,
}

impl FeatureKind {
    pub fn is_numeric(self) -> bool {
        !matches!(self, FeatureKind::Categorical)
    }
}

/// Allowed values of a feature: a category set, or closed numeric bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureDomain {
    Categories(Vec<String>),
    Bounds { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<FeatureDomain>,
}

impl FeatureDef {
    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        FeatureDef {
            name: name.to_string(),
            kind: FeatureKind::Categorical,
            unit: String::new(),
            domain: Some(FeatureDomain::Categories(
                categories.iter().map(|c| c.to_string()).collect(),
            )),
        }
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        FeatureDef {
            name: name.to_string(),
            kind: FeatureKind::Integer,
            unit: String::new(),
            domain: Some(FeatureDomain::Bounds {
                lo: lo as f64,
                hi: hi as f64,
            }),
        }
    }

    pub fn real(name: &str, unit: &str, lo: f64, hi: f64) -> Self {
        FeatureDef {
            name: name.to_string(),
            kind: FeatureKind::Real,
            unit: unit.to_string(),
            domain: Some(FeatureDomain::Bounds { lo, hi }),
        }
    }

    fn check(&self) -> Result<(), UniverseError> {
        if self.name.is_empty() {
            return Err(UniverseError::Schema("feature with empty name".into()));
        }
        match (&self.domain, self.kind) {
            (None, _) => Ok(()),
            (Some(FeatureDomain::Categories(cats)), FeatureKind::Categorical) => {
                if cats.is_empty() {
                    return Err(UniverseError::Schema(format!(
                        "feature `{}`: empty category domain",
                        self.name
                    )));
                }
                Ok(())
            }
            (Some(FeatureDomain::Bounds { lo, hi }), kind) if kind.is_numeric() => {
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(UniverseError::Schema(format!(
                        "feature `{}`: invalid bounds ({lo}, {hi})",
                        self.name
                    )));
                }
                Ok(())
            }
            _ => Err(UniverseError::Schema(format!(
                "feature `{}`: domain does not match kind {:?}",
                self.name, self.kind
            ))),
        }
    }

    /// Interpret a JSON value as a value of this feature, enforcing the domain.
    pub fn parse_value(&self, raw: &Value) -> Result<FeatureValue, String> {
        let value = match self.kind {
            FeatureKind::Categorical => raw
                .as_str()
                .map(|s| FeatureValue::Category(s.to_string()))
                .ok_or_else(|| format!("expected a category string, got {raw}"))?,
            FeatureKind::Integer => raw
                .as_i64()
                .map(FeatureValue::Integer)
                .ok_or_else(|| format!("expected an integer, got {raw}"))?,
            FeatureKind::Real => raw
                .as_f64()
                .map(FeatureValue::Real)
                .ok_or_else(|| format!("expected a number, got {raw}"))?,
        };
        self.check_value(&value)?;
        Ok(value)
    }

    pub fn check_value(&self, value: &FeatureValue) -> Result<(), String> {
        let kind_ok = matches!(
            (self.kind, value),
            (FeatureKind::Categorical, FeatureValue::Category(_))
                | (FeatureKind::Integer, FeatureValue::Integer(_))
                | (FeatureKind::Real, FeatureValue::Real(_))
        );
        if !kind_ok {
            return Err(format!("value {value} is not of kind {:?}", self.kind));
        }
        match (&self.domain, value) {
            (Some(FeatureDomain::Categories(cats)), FeatureValue::Category(c)) => {
                if !cats.iter().any(|x| x == c) {
                    return Err(format!("category `{c}` not in domain {cats:?}"));
                }
            }
            (Some(FeatureDomain::Bounds { lo, hi }), v) => {
                let x = v.as_f64().unwrap_or(f64::NAN);
                if !(x >= *lo && x <= *hi) {
                    return Err(format!("value {v} outside domain [{lo}, {hi}]"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureDef>,
    pub payload_kind: String,
    pub label_kind: String,
}

impl Schema {
    pub fn new(
        features: Vec<FeatureDef>,
        payload_kind: &str,
        label_kind: &str,
    ) -> Result<Self, UniverseError> {
        let schema = Schema {
            features,
            payload_kind: payload_kind.to_string(),
            label_kind: label_kind.to_string(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Parse and validate a schema manifest.
    pub fn load(document: &str) -> Result<Self, UniverseError> {
        let schema: Schema =
            serde_json::from_str(document).map_err(|e| UniverseError::Parse(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), UniverseError> {
        if self.payload_kind.is_empty() || self.label_kind.is_empty() {
            return Err(UniverseError::Schema(
                "payload_kind and label_kind must be non-empty".into(),
            ));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            f.check()?;
            if !seen.insert(f.name.as_str()) {
                return Err(UniverseError::Schema(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureDef> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("schema serializes");
        s.push('\n');
        s
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

/// A typed feature value.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureValue {
    Category(String),
    Integer(i64),
    Real(f64),
}

impl FeatureValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            FeatureValue::Integer(i) => Some(*i as f64),
            FeatureValue::Real(x) => Some(*x),
            FeatureValue::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            FeatureValue::Category(c) => Some(c),
            _ => None,
        }
    }
}

impl std::fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureValue::Category(c) => write!(f, "{c:?}"),
            FeatureValue::Integer(i) => write!(f, "{i}"),
            FeatureValue::Real(x) => write!(f, "{x}"),
        }
    }
}

impl Serialize for FeatureValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FeatureValue::Category(c) => s.serialize_str(c),
            FeatureValue::Integer(i) => s.serialize_i64(*i),
            FeatureValue::Real(x) => s.serialize_f64(*x),
        }
    }
}

/// One labeled element of the data universe.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Instance {
    pub id: String,
    pub source: String,
    pub features: BTreeMap<String, FeatureValue>,
    /// Opaque tool input handed to the tool under test.
    pub payload: Value,
    /// Ground truth (for mixtures: the reference is a true contributor).
    pub label: bool,
}

impl Instance {
    pub fn feature(&self, name: &str) -> Option<&FeatureValue> {
        self.features.get(name)
    }

    pub fn payload_digest(&self) -> String {
        json_digest(&self.payload)
    }

    pub fn to_json_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("instance serializes");
        line.push('\n');
        line
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    #[serde(default)]
    source: Option<String>,
    features: BTreeMap<String, Value>,
    #[serde(default)]
    payload: Value,
    label: bool,
}

fn validate_record(
    schema: &Schema,
    index: usize,
    raw: RawRecord,
    default_source: Option<&str>,
) -> Result<Instance, UniverseError> {
    let invalid = |field: &str, message: String| UniverseError::Validation {
        index,
        field: field.to_string(),
        message,
    };
    if raw.id.is_empty() {
        return Err(invalid("id", "empty id".into()));
    }
    let source = match (raw.source, default_source) {
        (Some(s), _) if !s.is_empty() => s,
        (_, Some(d)) => d.to_string(),
        _ => return Err(invalid("source", "missing source tag".into())),
    };
    for name in raw.features.keys() {
        if schema.feature(name).is_none() {
            return Err(invalid(name, "feature not declared in schema".into()));
        }
    }
    let mut features = BTreeMap::new();
    for def in &schema.features {
        let raw_value = raw
            .features
            .get(&def.name)
            .ok_or_else(|| invalid(&def.name, "missing value".into()))?;
        let value = def
            .parse_value(raw_value)
            .map_err(|m| invalid(&def.name, m))?;
        features.insert(def.name.clone(), value);
    }
    Ok(Instance {
        id: raw.id,
        source,
        features,
        payload: raw.payload,
        label: raw.label,
    })
}

/// Per-feature coverage histogram.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Histogram {
    Categories(BTreeMap<String, usize>),
    Integers(BTreeMap<i64, usize>),
    Quantiles(NumericSummary),
}

/// Nearest-rank quantiles of a real-valued feature.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NumericSummary {
    pub count: usize,
    pub min: Option<f64>,
    pub q25: Option<f64>,
    pub median: Option<f64>,
    pub q75: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureCoverage {
    pub name: String,
    pub histogram: Histogram,
}

impl FeatureCoverage {
    pub fn count(&self) -> usize {
        match &self.histogram {
            Histogram::Categories(m) => m.values().sum(),
            Histogram::Integers(m) => m.values().sum(),
            Histogram::Quantiles(q) => q.count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageSummary {
    pub total: usize,
    pub per_source: BTreeMap<String, usize>,
    pub features: Vec<FeatureCoverage>,
}

fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

/// Immutable, schema-validated universe of instances.
#[derive(Clone, Debug, PartialEq)]
pub struct DataUniverse {
    schema: Schema,
    instances: Vec<Instance>,
    provenance: Vec<String>,
}

impl DataUniverse {
    pub fn new(
        schema: Schema,
        instances: Vec<Instance>,
        provenance: Vec<String>,
    ) -> Result<Self, UniverseError> {
        schema.validate()?;
        let mut ids = HashSet::with_capacity(instances.len());
        for (index, inst) in instances.iter().enumerate() {
            if !ids.insert(inst.id.as_str()) {
                return Err(UniverseError::DuplicateId(inst.id.clone()));
            }
            for def in &schema.features {
                let value = inst.features.get(&def.name).ok_or_else(|| {
                    UniverseError::Validation {
                        index,
                        field: def.name.clone(),
                        message: "missing value".into(),
                    }
                })?;
                def.check_value(value)
                    .map_err(|message| UniverseError::Validation {
                        index,
                        field: def.name.clone(),
                        message,
                    })?;
            }
            if inst.features.len() != schema.features.len() {
                return Err(UniverseError::Validation {
                    index,
                    field: "features".into(),
                    message: "undeclared feature present".into(),
                });
            }
        }
        let mut provenance = provenance;
        for inst in &instances {
            if !provenance.contains(&inst.source) {
                provenance.push(inst.source.clone());
            }
        }
        if provenance.is_empty() {
            return Err(UniverseError::Schema("universe without provenance".into()));
        }
        Ok(DataUniverse {
            schema,
            instances,
            provenance,
        })
    }

    /// Ingest a line-delimited record stream. Records without a `source`
    /// are stamped with `source`.
    pub fn ingest<R: BufRead>(
        schema: &Schema,
        records: R,
        source: &str,
    ) -> Result<Self, UniverseError> {
        if source.is_empty() {
            return Err(UniverseError::Schema("empty source tag".into()));
        }
        let instances = Self::parse_records(schema, records, Some(source))?;
        Self::new(schema.clone(), instances, vec![source.to_string()])
    }

    /// Read back a universe written by [`DataUniverse::write`]; provenance is
    /// the record sources in first-appearance order.
    pub fn read<R: BufRead>(schema: &Schema, records: R) -> Result<Self, UniverseError> {
        let instances = Self::parse_records(schema, records, None)?;
        Self::new(schema.clone(), instances, Vec::new())
    }

    fn parse_records<R: BufRead>(
        schema: &Schema,
        records: R,
        default_source: Option<&str>,
    ) -> Result<Vec<Instance>, UniverseError> {
        schema.validate()?;
        let mut instances = Vec::new();
        let mut ids = HashSet::new();
        let mut index = 0;
        for line in records.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord =
                serde_json::from_str(&line).map_err(|e| UniverseError::Validation {
                    index,
                    field: "record".into(),
                    message: e.to_string(),
                })?;
            let inst = validate_record(schema, index, raw, default_source)?;
            if !ids.insert(inst.id.clone()) {
                return Err(UniverseError::DuplicateId(inst.id));
            }
            instances.push(inst);
            index += 1;
        }
        Ok(instances)
    }

    /// Canonical line-delimited serialization.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for inst in &self.instances {
            out.write_all(inst.to_json_line().as_bytes())?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        self.instances.iter().map(Instance::to_json_line).collect()
    }

    /// Union of universes sharing one schema. Ids that collide across inputs
    /// are prefixed with their source tag (`source/id`).
    pub fn merge(universes: &[DataUniverse]) -> Result<Self, UniverseError> {
        let first = universes
            .first()
            .ok_or_else(|| UniverseError::Schema("nothing to merge".into()))?;
        for u in &universes[1..] {
            if u.schema != first.schema {
                return Err(UniverseError::SchemaMismatch(format!(
                    "universe from {:?} has a different schema than {:?}",
                    u.provenance, first.provenance
                )));
            }
        }
        let mut holders: HashMap<&str, usize> = HashMap::new();
        for u in universes {
            for inst in &u.instances {
                *holders.entry(inst.id.as_str()).or_default() += 1;
            }
        }
        let mut instances = Vec::new();
        let mut provenance: Vec<String> = Vec::new();
        for u in universes {
            for tag in &u.provenance {
                if !provenance.contains(tag) {
                    provenance.push(tag.clone());
                }
            }
            for inst in &u.instances {
                let mut inst = inst.clone();
                if holders[inst.id.as_str()] > 1 {
                    inst.id = format!("{}/{}", inst.source, inst.id);
                }
                instances.push(inst);
            }
        }
        let mut seen = HashSet::new();
        for inst in &instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(UniverseError::DuplicateId(format!(
                    "{} (unresolvable after source prefixing)",
                    inst.id
                )));
            }
        }
        Ok(DataUniverse {
            schema: first.schema.clone(),
            instances,
            provenance,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Indices (in universe order) of the instances inside the slice.
    pub fn select_indices(&self, predicate: &SlicePredicate) -> Result<Vec<usize>, UniverseError> {
        for cond in &predicate.conditions {
            if self.schema.feature(&cond.feature).is_none() {
                return Err(UniverseError::UnknownFeature(cond.feature.clone()));
            }
        }
        Ok(self
            .instances
            .iter()
            .enumerate()
            .filter(|(_, inst)| predicate.matches(inst))
            .map(|(i, _)| i)
            .collect())
    }

    pub fn select(&self, predicate: &SlicePredicate) -> Result<Vec<&Instance>, UniverseError> {
        Ok(self
            .select_indices(predicate)?
            .into_iter()
            .map(|i| &self.instances[i])
            .collect())
    }

    pub fn summarize(&self) -> CoverageSummary {
        let mut per_source = BTreeMap::new();
        for inst in &self.instances {
            *per_source.entry(inst.source.clone()).or_insert(0) += 1;
        }
        let features = self
            .schema
            .features
            .iter()
            .map(|def| {
                let values = self.instances.iter().map(|i| &i.features[&def.name]);
                let histogram = match def.kind {
                    FeatureKind::Categorical => {
                        let mut counts = BTreeMap::new();
                        for v in values {
                            *counts
                                .entry(v.as_category().unwrap_or_default().to_string())
                                .or_insert(0) += 1;
                        }
                        Histogram::Categories(counts)
                    }
                    FeatureKind::Integer => {
                        let mut counts = BTreeMap::new();
                        for v in values {
                            if let FeatureValue::Integer(i) = v {
                                *counts.entry(*i).or_insert(0) += 1;
                            }
                        }
                        Histogram::Integers(counts)
                    }
                    FeatureKind::Real => {
                        let mut xs: Vec<f64> = values.filter_map(FeatureValue::as_f64).collect();
                        xs.sort_by(f64::total_cmp);
                        Histogram::Quantiles(NumericSummary {
                            count: xs.len(),
                            min: xs.first().copied(),
                            q25: nearest_rank(&xs, 0.25),
                            median: nearest_rank(&xs, 0.5),
                            q75: nearest_rank(&xs, 0.75),
                            max: xs.last().copied(),
                        })
                    }
                };
                FeatureCoverage {
                    name: def.name.clone(),
                    histogram,
                }
            })
            .collect();
        CoverageSummary {
            total: self.instances.len(),
            per_source,
            features,
        }
    }

    /// Digest over schema and canonical instance serialization.
    pub fn digest(&self) -> String {
        let mut bytes = serde_json::to_vec(&self.schema).expect("schema serializes");
        bytes.extend_from_slice(self.to_jsonl().as_bytes());
        sha256_hex(&bytes)
    }
}
