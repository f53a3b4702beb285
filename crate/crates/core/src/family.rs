//! Case profiles, slice predicates, and generation of the adversarial
//! distribution family as all marginals of up to `k` case features.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::digest::json_digest;
use crate::universe::{DataUniverse, FeatureDef, FeatureKind, Instance, Schema, UniverseError};

#[derive(Debug, thiserror::Error)]
pub enum FamilyError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("feature `{feature}`: {message}")]
    KindMismatch { feature: String, message: String },
    #[error("invalid k = {k} for a profile of {m} features")]
    InvalidK { k: usize, m: usize },
    #[error("case profile is empty")]
    EmptyProfile,
    #[error("distribution family is empty")]
    EmptyFamily,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid slice `{name}`: {message}")]
    InvalidSlice { name: String, message: String },
    #[error("invalid profile entry `{feature}`: {message}")]
    InvalidProfile { feature: String, message: String },
    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),
    #[error(transparent)]
    Universe(#[from] UniverseError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Equals(String),
    InRange { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureCondition {
    pub feature: String,
    #[serde(flatten)]
    pub form: Condition,
}

impl FeatureCondition {
    pub fn equals(feature: &str, category: &str) -> Self {
        FeatureCondition {
            feature: feature.to_string(),
            form: Condition::Equals(category.to_string()),
        }
    }

    pub fn in_range(feature: &str, lo: f64, hi: f64) -> Self {
        FeatureCondition {
            feature: feature.to_string(),
            form: Condition::InRange { lo, hi },
        }
    }

    pub fn matches(&self, inst: &Instance) -> bool {
        let Some(value) = inst.feature(&self.feature) else {
            return false;
        };
        match &self.form {
            Condition::Equals(c) => value.as_category() == Some(c.as_str()),
            Condition::InRange { lo, hi } => value.as_f64().is_some_and(|x| *lo <= x && x <= *hi),
        }
    }

    fn label(&self) -> String {
        match &self.form {
            Condition::Equals(c) => format!("{}={}", self.feature, c),
            Condition::InRange { lo, hi } if lo == hi => format!("{}={}", self.feature, lo),
            Condition::InRange { lo, hi } => format!("{} in [{}, {}]", self.feature, lo, hi),
        }
    }

    fn check(&self, schema: &Schema) -> Result<(), FamilyError> {
        let def = schema
            .feature(&self.feature)
            .ok_or_else(|| FamilyError::UnknownFeature(self.feature.clone()))?;
        match (&self.form, def.kind) {
            (Condition::Equals(_), FeatureKind::Categorical) => Ok(()),
            (Condition::InRange { .. }, k) if k.is_numeric() => Ok(()),
            _ => Err(FamilyError::KindMismatch {
                feature: self.feature.clone(),
                message: format!("condition form does not fit kind {:?}", def.kind),
            }),
        }
    }
}

/// A named conjunctive slice of the universe; each one materializes one
/// distribution of the family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicePredicate {
    pub name: String,
    pub conditions: Vec<FeatureCondition>,
}

impl SlicePredicate {
    pub fn new(name: &str, conditions: Vec<FeatureCondition>) -> Result<Self, FamilyError> {
        let spec = SlicePredicate {
            name: name.to_string(),
            conditions,
        };
        spec.check_shape()?;
        Ok(spec)
    }

    fn check_shape(&self) -> Result<(), FamilyError> {
        let invalid = |message: &str| FamilyError::InvalidSlice {
            name: self.name.clone(),
            message: message.to_string(),
        };
        if self.name.is_empty() {
            return Err(invalid("empty name"));
        }
        if self.conditions.is_empty() {
            return Err(invalid("no conditions"));
        }
        let mut seen = HashSet::new();
        for c in &self.conditions {
            if !seen.insert(c.feature.as_str()) {
                return Err(invalid(&format!("two conditions on `{}`", c.feature)));
            }
            if let Condition::InRange { lo, hi } = c.form {
                if lo.is_nan() || hi.is_nan() || lo > hi {
                    return Err(invalid(&format!("bad range [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), FamilyError> {
        self.check_shape()?;
        self.conditions.iter().try_for_each(|c| c.check(schema))
    }

    pub fn matches(&self, inst: &Instance) -> bool {
        self.conditions.iter().all(|c| c.matches(inst))
    }

    /// Conjunction of `self` and `other` (conditions of `other` appended).
    pub fn and(&self, other: &SlicePredicate) -> Result<SlicePredicate, FamilyError> {
        let mut conditions = self.conditions.clone();
        conditions.extend(other.conditions.iter().cloned());
        SlicePredicate::new(&format!("{} & {}", self.name, other.name), conditions)
    }
}

/// One case-profile entry: a category, an exact number, or a number range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CaseValue {
    Category(String),
    Number(f64),
    Range { lo: f64, hi: f64 },
}

impl CaseValue {
    fn realize(&self) -> crate::universe::FeatureValue {
        use crate::universe::FeatureValue;
        match self {
            CaseValue::Category(c) => FeatureValue::Category(c.clone()),
            CaseValue::Number(x) => FeatureValue::Real(*x),
            CaseValue::Range { lo, hi } => FeatureValue::Real(0.5 * (lo + hi)),
        }
    }
}

/// Feature values characterizing the case under examination.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseProfile {
    pub entries: BTreeMap<String, CaseValue>,
}

impl CaseProfile {
    pub fn load(document: &str) -> Result<Self, FamilyError> {
        serde_json::from_str(document).map_err(|e| FamilyError::Parse(e.to_string()))
    }

    pub fn with(mut self, feature: &str, value: CaseValue) -> Self {
        self.entries.insert(feature.to_string(), value);
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), FamilyError> {
        for (name, value) in &self.entries {
            let def = schema
                .feature(name)
                .ok_or_else(|| FamilyError::UnknownFeature(name.clone()))?;
            check_case_value(def, value)?;
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }

    /// A hypothetical instance realizing the profile exactly; ranges are
    /// realized at their midpoints.
    fn realization(&self) -> Instance {
        Instance {
            id: "case".into(),
            source: "case".into(),
            features: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.realize()))
                .collect(),
            payload: serde_json::Value::Null,
            label: false,
        }
    }
}

fn check_case_value(def: &FeatureDef, value: &CaseValue) -> Result<(), FamilyError> {
    let mismatch = |message: String| FamilyError::KindMismatch {
        feature: def.name.clone(),
        message,
    };
    let out_of_domain = |message: String| FamilyError::InvalidProfile {
        feature: def.name.clone(),
        message,
    };
    use crate::universe::FeatureValue;
    match (def.kind, value) {
        (FeatureKind::Categorical, CaseValue::Category(c)) => def
            .check_value(&FeatureValue::Category(c.clone()))
            .map_err(out_of_domain),
        (FeatureKind::Categorical, _) => Err(mismatch("categorical feature needs a category".into())),
        (_, CaseValue::Category(c)) => Err(mismatch(format!("numeric feature given category `{c}`"))),
        (kind, CaseValue::Number(x)) => {
            if kind == FeatureKind::Integer && x.fract() != 0.0 {
                return Err(mismatch(format!("integer feature given {x}")));
            }
            check_numeric_in_domain(def, *x).map_err(out_of_domain)
        }
        (_, CaseValue::Range { lo, hi }) => {
            if !(lo <= hi) {
                return Err(out_of_domain(format!("inverted range [{lo}, {hi}]")));
            }
            check_numeric_in_domain(def, *lo).map_err(out_of_domain)?;
            check_numeric_in_domain(def, *hi).map_err(out_of_domain)
        }
    }
}

fn check_numeric_in_domain(def: &FeatureDef, x: f64) -> Result<(), String> {
    if !x.is_finite() {
        return Err(format!("non-finite value {x}"));
    }
    if let Some(crate::universe::FeatureDomain::Bounds { lo, hi }) = &def.domain {
        if x < *lo || x > *hi {
            return Err(format!("value {x} outside domain [{lo}, {hi}]"));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfWidth {
    /// Fraction of the case value.
    Relative(f64),
    Absolute(f64),
}

impl HalfWidth {
    fn resolve(self, value: f64) -> f64 {
        match self {
            HalfWidth::Relative(r) => r * value.abs(),
            HalfWidth::Absolute(h) => h,
        }
    }

    fn check(self) -> Result<(), FamilyError> {
        let h = match self {
            HalfWidth::Relative(h) | HalfWidth::Absolute(h) => h,
        };
        if h.is_finite() && h >= 0.0 {
            Ok(())
        } else {
            Err(FamilyError::InvalidTolerance(format!("half-width {h}")))
        }
    }
}

/// Numeric matching tolerances used to turn exact case values into ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    #[serde(default = "ToleranceConfig::default_half_width")]
    pub default: HalfWidth,
    #[serde(default)]
    pub features: BTreeMap<String, HalfWidth>,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            default: Self::default_half_width(),
            features: BTreeMap::new(),
        }
    }
}

impl ToleranceConfig {
    pub const DEFAULT_RELATIVE: f64 = 0.05;

    fn default_half_width() -> HalfWidth {
        HalfWidth::Relative(Self::DEFAULT_RELATIVE)
    }

    pub fn load(document: &str) -> Result<Self, FamilyError> {
        let tol: ToleranceConfig =
            serde_json::from_str(document).map_err(|e| FamilyError::Parse(e.to_string()))?;
        tol.validate()?;
        Ok(tol)
    }

    pub fn with(mut self, feature: &str, width: HalfWidth) -> Self {
        self.features.insert(feature.to_string(), width);
        self
    }

    pub fn validate(&self) -> Result<(), FamilyError> {
        self.default.check()?;
        self.features.values().try_for_each(|h| h.check())
    }

    pub fn half_width(&self, feature: &str) -> HalfWidth {
        self.features.get(feature).copied().unwrap_or(self.default)
    }
}

/// Turn one case-profile entry into a slice condition.
pub fn build_condition(
    feature: &FeatureDef,
    case_value: &CaseValue,
    tol: &ToleranceConfig,
) -> Result<FeatureCondition, FamilyError> {
    let mismatch = |message: &str| FamilyError::KindMismatch {
        feature: feature.name.clone(),
        message: message.to_string(),
    };
    let form = match (feature.kind, case_value) {
        (FeatureKind::Categorical, CaseValue::Category(c)) => Condition::Equals(c.clone()),
        (FeatureKind::Categorical, _) => return Err(mismatch("categorical feature needs a category")),
        (_, CaseValue::Category(_)) => return Err(mismatch("numeric feature given a category")),
        (_, CaseValue::Range { lo, hi }) => Condition::InRange { lo: *lo, hi: *hi },
        (FeatureKind::Real, CaseValue::Number(v)) => {
            let h = tol.half_width(&feature.name);
            h.check()?;
            let h = h.resolve(*v);
            Condition::InRange {
                lo: v - h,
                hi: v + h,
            }
        }
        (FeatureKind::Integer, CaseValue::Number(v)) => {
            if v.fract() != 0.0 {
                return Err(mismatch("integer feature given a fractional value"));
            }
            let h = tol.half_width(&feature.name);
            h.check()?;
            // Integer ranges are closed; a half-width below 1 is an exact match.
            let h = h.resolve(*v).floor();
            Condition::InRange {
                lo: v - h,
                hi: v + h,
            }
        }
    };
    Ok(FeatureCondition {
        feature: feature.name.clone(),
        form,
    })
}

/// How a family was produced, echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<CaseProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_digest: Option<String>,
    /// Digest of the specs as generated; differs from the current specs
    /// after a hand edit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specs_digest: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionFamily {
    specs: Vec<SlicePredicate>,
    meta: FamilyMeta,
}

impl DistributionFamily {
    pub fn new(specs: Vec<SlicePredicate>, meta: FamilyMeta) -> Result<Self, FamilyError> {
        if specs.is_empty() {
            return Err(FamilyError::EmptyFamily);
        }
        let mut names = HashSet::new();
        for s in &specs {
            s.check_shape()?;
            if !names.insert(s.name.as_str()) {
                return Err(FamilyError::InvalidSlice {
                    name: s.name.clone(),
                    message: "duplicate slice name".into(),
                });
            }
        }
        Ok(DistributionFamily { specs, meta })
    }

    /// A family without generation metadata (hand-built).
    pub fn from_specs(specs: Vec<SlicePredicate>) -> Result<Self, FamilyError> {
        Self::new(
            specs,
            FamilyMeta {
                k: None,
                tolerances: None,
                profile: None,
                profile_digest: None,
                specs_digest: None,
            },
        )
    }

    pub fn specs(&self) -> &[SlicePredicate] {
        &self.specs
    }

    pub fn meta(&self) -> &FamilyMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), FamilyError> {
        self.specs.iter().try_for_each(|s| s.validate(schema))
    }

    pub fn specs_digest(&self) -> String {
        json_digest(&self.specs)
    }

    /// True when the specs no longer match those recorded at generation.
    pub fn hand_edited(&self) -> bool {
        self.meta
            .specs_digest
            .as_ref()
            .is_some_and(|d| *d != self.specs_digest())
    }

    /// A copy with one more slice appended.
    pub fn with_spec(&self, spec: SlicePredicate) -> Result<Self, FamilyError> {
        let mut specs = self.specs.clone();
        specs.push(spec);
        Self::new(specs, self.meta.clone())
    }

    /// Family file: metadata plus named specs, optionally annotated with
    /// their support in some universe.
    pub fn to_file_json(&self, supports: Option<&[usize]>) -> String {
        let specs = self
            .specs
            .iter()
            .enumerate()
            .map(|(i, s)| FamilyFileSpec {
                spec: s.clone(),
                support: supports.map(|sup| sup[i]),
            })
            .collect();
        let file = FamilyFile {
            meta: self.meta.clone(),
            specs,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("family serializes");
        s.push('\n');
        s
    }

    pub fn load(document: &str) -> Result<Self, FamilyError> {
        let file: FamilyFile =
            serde_json::from_str(document).map_err(|e| FamilyError::Parse(e.to_string()))?;
        Self::new(file.specs.into_iter().map(|s| s.spec).collect(), file.meta)
    }
}

#[derive(Serialize, Deserialize)]
struct FamilyFileSpec {
    #[serde(flatten)]
    spec: SlicePredicate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    support: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct FamilyFile {
    meta: FamilyMeta,
    specs: Vec<FamilyFileSpec>,
}

/// All conjunctions of 1..=k profile features, size-major and then
/// lexicographic over features in schema order.
pub fn generate_kway_family(
    profile: &CaseProfile,
    k: usize,
    schema: &Schema,
    tol: &ToleranceConfig,
) -> Result<DistributionFamily, FamilyError> {
    if profile.is_empty() {
        return Err(FamilyError::EmptyProfile);
    }
    let m = profile.len();
    if k == 0 || k > m {
        return Err(FamilyError::InvalidK { k, m });
    }
    profile.validate(schema)?;
    tol.validate()?;

    let mut features: Vec<&FeatureDef> = profile
        .entries
        .keys()
        .map(|name| schema.feature(name).expect("validated profile"))
        .collect();
    features.sort_by_key(|def| schema.position(&def.name));
    let conditions = features
        .iter()
        .map(|def| build_condition(def, &profile.entries[&def.name], tol))
        .collect::<Result<Vec<_>, _>>()?;

    let mut specs = Vec::new();
    for size in 1..=k {
        for subset in combinations(m, size) {
            let conds: Vec<FeatureCondition> =
                subset.iter().map(|&i| conditions[i].clone()).collect();
            let name = conds
                .iter()
                .map(FeatureCondition::label)
                .collect::<Vec<_>>()
                .join(" & ");
            specs.push(SlicePredicate::new(&name, conds)?);
        }
    }
    let meta = FamilyMeta {
        k: Some(k),
        tolerances: Some(tol.clone()),
        profile: Some(profile.clone()),
        profile_digest: Some(profile.digest()),
        specs_digest: Some(json_digest(&specs)),
    };
    DistributionFamily::new(specs, meta)
}

/// Index combinations of `size` out of `m`, in lexicographic order.
fn combinations(m: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..size).collect();
    if size > m {
        return out;
    }
    loop {
        out.push(current.clone());
        let mut i = size;
        while i > 0 && current[i - 1] == m - size + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        current[i - 1] += 1;
        for j in i..size {
            current[j] = current[j - 1] + 1;
        }
    }
}

pub fn support(spec: &SlicePredicate, universe: &DataUniverse) -> Result<usize, UniverseError> {
    Ok(universe.select_indices(spec)?.len())
}

/// True iff an instance realizing the profile lies in every slice.
pub fn profile_consistency(profile: &CaseProfile, family: &DistributionFamily) -> bool {
    let case = profile.realization();
    family.specs().iter().all(|spec| spec.matches(&case))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(
            vec![
                FeatureDef::integer("n_contributors", 1, 6),
                FeatureDef::real("amount_pg", "pg", 0.0, 10000.0),
                FeatureDef::categorical("kit", &["K1", "K2"]),
                FeatureDef::real("ratio", "", 1.0, 10.0),
                FeatureDef::categorical("relative_present", &["no", "yes"]),
            ],
            "pgs-mixture-v1",
            "contributor-boolean",
        )
        .unwrap()
    }

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn condition_from_exact_amount_with_absolute_tolerance() {
        let s = schema();
        let tol = ToleranceConfig::default().with("amount_pg", HalfWidth::Absolute(5.0));
        let c = build_condition(s.feature("amount_pg").unwrap(), &CaseValue::Number(100.0), &tol)
            .unwrap();
        assert_eq!(c.form, Condition::InRange { lo: 95.0, hi: 105.0 });

        // The default 5% relative tolerance gives the same range at 100 pg.
        let c = build_condition(
            s.feature("amount_pg").unwrap(),
            &CaseValue::Number(100.0),
            &ToleranceConfig::default(),
        )
        .unwrap();
        assert_eq!(c.form, Condition::InRange { lo: 95.0, hi: 105.0 });
    }

    #[test]
    fn integer_condition_degenerates_to_exact_match() {
        let s = schema();
        let def = s.feature("n_contributors").unwrap();
        let zero = ToleranceConfig::default().with("n_contributors", HalfWidth::Absolute(0.0));
        let c = build_condition(def, &CaseValue::Number(2.0), &zero).unwrap();
        assert_eq!(c.form, Condition::InRange { lo: 2.0, hi: 2.0 });
        let c = build_condition(def, &CaseValue::Number(2.0), &ToleranceConfig::default()).unwrap();
        assert_eq!(c.form, Condition::InRange { lo: 2.0, hi: 2.0 });
        let wide = ToleranceConfig::default().with("n_contributors", HalfWidth::Absolute(1.5));
        let c = build_condition(def, &CaseValue::Number(2.0), &wide).unwrap();
        assert_eq!(c.form, Condition::InRange { lo: 1.0, hi: 3.0 });
    }

    #[test]
    fn explicit_range_is_kept() {
        let s = schema();
        let c = build_condition(
            s.feature("ratio").unwrap(),
            &CaseValue::Range { lo: 2.0, hi: 4.0 },
            &ToleranceConfig::default(),
        )
        .unwrap();
        assert_eq!(c.form, Condition::InRange { lo: 2.0, hi: 4.0 });
    }

    #[test]
    fn kind_mismatch() {
        let s = schema();
        let err = build_condition(
            s.feature("kit").unwrap(),
            &CaseValue::Number(1.0),
            &ToleranceConfig::default(),
        );
        assert!(matches!(err, Err(FamilyError::KindMismatch { .. })));
        let err = build_condition(
            s.feature("amount_pg").unwrap(),
            &CaseValue::Category("x".into()),
            &ToleranceConfig::default(),
        );
        assert!(matches!(err, Err(FamilyError::KindMismatch { .. })));
    }

    fn case_profile() -> CaseProfile {
        CaseProfile::default()
            .with("n_contributors", CaseValue::Number(2.0))
            .with("amount_pg", CaseValue::Range { lo: 100.0, hi: 200.0 })
            .with("kit", CaseValue::Category("K1".into()))
            .with("ratio", CaseValue::Range { lo: 2.0, hi: 4.0 })
    }

    #[test]
    fn family_counts_follow_binomial_sums() {
        let s = schema();
        let profile = case_profile().with("relative_present", CaseValue::Category("no".into()));
        for k in 1..=5 {
            let fam = generate_kway_family(&profile, k, &s, &ToleranceConfig::default()).unwrap();
            let expected: usize = (1..=k).map(|j| binomial(5, j)).sum();
            assert_eq!(fam.len(), expected);
        }
        let three = CaseProfile::default()
            .with("n_contributors", CaseValue::Number(2.0))
            .with("kit", CaseValue::Category("K1".into()))
            .with("ratio", CaseValue::Number(3.0));
        assert_eq!(
            generate_kway_family(&three, 2, &s, &ToleranceConfig::default())
                .unwrap()
                .len(),
            6
        );
    }

    #[test]
    fn pairwise_family_contains_the_worked_example_slices() {
        let fam = generate_kway_family(&case_profile(), 2, &schema(), &ToleranceConfig::default())
            .unwrap();
        let names: Vec<&str> = fam.specs().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(&names[..4], ["n_contributors=2", "amount_pg in [100, 200]", "kit=K1", "ratio in [2, 4]"]);
        // two contributors and 100-200 pg / a given kit / ratio 2:1..4:1
        assert!(names.contains(&"n_contributors=2 & amount_pg in [100, 200]"));
        assert!(names.contains(&"n_contributors=2 & kit=K1"));
        assert!(names.contains(&"n_contributors=2 & ratio in [2, 4]"));
        assert!(profile_consistency(&case_profile(), &fam));
    }

    #[test]
    fn invalid_k_and_empty_profile() {
        let s = schema();
        let tol = ToleranceConfig::default();
        assert!(matches!(
            generate_kway_family(&case_profile(), 0, &s, &tol),
            Err(FamilyError::InvalidK { .. })
        ));
        assert!(matches!(
            generate_kway_family(&case_profile(), 5, &s, &tol),
            Err(FamilyError::InvalidK { .. })
        ));
        assert!(matches!(
            generate_kway_family(&CaseProfile::default(), 1, &s, &tol),
            Err(FamilyError::EmptyProfile)
        ));
        let bad = CaseProfile::default().with("kitt", CaseValue::Category("K1".into()));
        assert!(matches!(
            generate_kway_family(&bad, 1, &s, &tol),
            Err(FamilyError::UnknownFeature(_))
        ));
    }

    #[test]
    fn disjoint_slice_breaks_consistency() {
        let fam = generate_kway_family(&case_profile(), 1, &schema(), &ToleranceConfig::default())
            .unwrap();
        let far = SlicePredicate::new(
            "n=5",
            vec![FeatureCondition::in_range("n_contributors", 5.0, 5.0)],
        )
        .unwrap();
        let edited = fam.with_spec(far).unwrap();
        assert!(!profile_consistency(&case_profile(), &edited));
        assert!(edited.hand_edited());
        assert!(!fam.hand_edited());
    }

    #[test]
    fn family_file_round_trip() {
        let fam = generate_kway_family(&case_profile(), 2, &schema(), &ToleranceConfig::default())
            .unwrap();
        let supports: Vec<usize> = (0..fam.len()).collect();
        let text = fam.to_file_json(Some(&supports));
        let back = DistributionFamily::load(&text).unwrap();
        assert_eq!(back, fam);
        assert_eq!(back.to_file_json(Some(&supports)), text);
    }

    #[test]
    fn empty_and_duplicate_families_rejected() {
        assert!(matches!(
            DistributionFamily::from_specs(vec![]),
            Err(FamilyError::EmptyFamily)
        ));
        let s = SlicePredicate::new("a", vec![FeatureCondition::equals("kit", "K1")]).unwrap();
        assert!(DistributionFamily::from_specs(vec![s.clone(), s]).is_err());
    }

    #[test]
    fn combinations_are_lexicographic() {
        assert_eq!(
            combinations(4, 2),
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
    }
}
