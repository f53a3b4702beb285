mod common;

use common::*;
use proptest::prelude::*;
use robust_audit::adapters::{OutputCache, ReferencePgsTool, RunOptions, SliceConditionalFlip};
use robust_audit::family::{generate_kway_family, CaseValue, FeatureCondition};
use robust_audit::{
    robust_adversarial_test, worst_case_metric, CaseProfile, CheckSpec, DataUniverse,
    DistributionFamily, EngineError, MetricKind, Reason, SlicePredicate, ToleranceConfig, Verdict,
};

fn pred(name: &str, conditions: Vec<FeatureCondition>) -> SlicePredicate {
    SlicePredicate::new(name, conditions).unwrap()
}

/// 300 toy instances; labels alternate; the scripted tool errs on kit C
/// only when `bad_c` is set.
fn toy_world(bad_c: bool) -> (DataUniverse, ScriptedTool) {
    let insts: Vec<_> = (0..300)
        .map(|i| toy_instance(i, ["A", "B", "C"][i % 3], 1 + (i % 4) as i64, (i % 100) as f64 * 10.0, i % 2 == 0))
        .collect();
    let scores = insts
        .iter()
        .map(|i| {
            let right = if i.label { 2.0 } else { -2.0 };
            let wrong = bad_c && i.feature("kit").unwrap().as_category() == Some("C");
            (i.id.clone(), if wrong { -right } else { right })
        })
        .collect::<Vec<_>>();
    let u = DataUniverse::new(toy_schema(), insts, vec!["toy".into()]).unwrap();
    (u, ScriptedTool::new("toy-v1", scores))
}

fn kit_family() -> DistributionFamily {
    DistributionFamily::from_specs(vec![
        pred("kit=A", vec![FeatureCondition::equals("kit", "A")]),
        pred("kit=B", vec![FeatureCondition::equals("kit", "B")]),
        pred("kit=C", vec![FeatureCondition::equals("kit", "C")]),
    ])
    .unwrap()
}

#[test]
fn accurate_tool_passes_every_slice() {
    let (u, tool) = toy_world(false);
    let spec = CheckSpec::new(MetricKind::ErrorRate, 0.05);
    let r = robust_adversarial_test(&tool, &u, &kit_family(), &spec, None, &RunOptions::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert_eq!(r.summary.passed, 3);
    assert!(r.outcomes.iter().all(|o| o.support == 100));
}

#[test]
fn sabotaged_slice_is_named() {
    let (u, tool) = toy_world(true);
    let spec = CheckSpec::new(MetricKind::ErrorRate, 0.05);
    let r = robust_adversarial_test(&tool, &u, &kit_family(), &spec, None, &RunOptions::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Fail);
    let failing: Vec<&str> = r.failing_slices().map(|o| o.spec.name.as_str()).collect();
    assert_eq!(failing, ["kit=C"]);
    assert_eq!(worst_case_metric(&r).unwrap(), ("kit=C".to_string(), 1.0));
    assert_eq!(r.worst_case.as_ref().unwrap().slice, "kit=C");
}

#[test]
fn vacuous_threshold_passes() {
    let (u, tool) = toy_world(true);
    let mut spec = CheckSpec::new(MetricKind::ErrorRate, 1.0);
    spec.n_min = 1;
    let r = robust_adversarial_test(&tool, &u, &kit_family(), &spec, None, &RunOptions::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
}

#[test]
fn each_instance_is_evaluated_once() {
    let (u, tool) = toy_world(false);
    let family = kit_family()
        .with_spec(pred("all", vec![FeatureCondition::in_range("amount_pg", 0.0, 10000.0)]))
        .unwrap()
        .with_spec(pred("n=1", vec![FeatureCondition::in_range("n_contributors", 1.0, 1.0)]))
        .unwrap();
    let spec = CheckSpec::new(MetricKind::ErrorRate, 0.05);
    let r = robust_adversarial_test(&tool, &u, &family, &spec, None, &RunOptions::default()).unwrap();
    assert_eq!(tool.calls(), 300);
    assert_eq!(r.run.as_ref().unwrap().tool_invocations, 300);
}

#[test]
fn configuration_errors_precede_tool_calls() {
    let (u, tool) = toy_world(false);
    let spec = CheckSpec::new(MetricKind::ErrorRate, 0.05);
    let typo = DistributionFamily::from_specs(vec![pred("t", vec![FeatureCondition::equals("kitt", "A")])]).unwrap();
    assert!(matches!(
        robust_adversarial_test(&tool, &u, &typo, &spec, None, &RunOptions::default()),
        Err(EngineError::Config(_))
    ));
    let mut bad = spec.clone();
    bad.alpha = 2.0;
    assert!(matches!(
        robust_adversarial_test(&tool, &u, &kit_family(), &bad, None, &RunOptions::default()),
        Err(EngineError::Config(_))
    ));
    let wrong_kind = ScriptedTool::new("other-kind", vec![]);
    assert!(matches!(
        robust_adversarial_test(&wrong_kind, &u, &kit_family(), &spec, None, &RunOptions::default()),
        Err(EngineError::Config(_))
    ));
    let zero = RunOptions {
        parallelism: 0,
        ..RunOptions::default()
    };
    assert!(robust_adversarial_test(&tool, &u, &kit_family(), &spec, None, &zero).is_err());
    assert_eq!(tool.calls() + wrong_kind.calls(), 0);
}

#[test]
fn failing_tool_is_an_adapter_error() {
    let (u, _) = toy_world(false);
    let silent = ScriptedTool::new("toy-v1", vec![]);
    let spec = CheckSpec::new(MetricKind::ErrorRate, 0.05);
    assert!(matches!(
        robust_adversarial_test(&silent, &u, &kit_family(), &spec, None, &RunOptions::default()),
        Err(EngineError::Adapter(_))
    ));
}

#[test]
fn all_ineligible_has_no_worst_case() {
    let (u, tool) = toy_world(false);
    let spec = CheckSpec::new(MetricKind::FalseInclusionRate, 0.05);
    // Even ids are positives; a slice of positives has no eligible instances.
    let positives: Vec<SlicePredicate> = vec![pred("none", vec![FeatureCondition::in_range("amount_pg", 5000.0, 6000.0)])];
    let r = robust_adversarial_test(&tool, &u, &DistributionFamily::from_specs(positives).unwrap(), &spec, None, &RunOptions::default())
        .unwrap();
    assert_eq!(r.outcomes[0].result.reason, Reason::NoEligibleInstances);
    assert!(matches!(worst_case_metric(&r), Err(EngineError::NoEvaluableSlices)));
    assert!(r.worst_case.is_none());
}

#[test]
fn report_round_trips_and_masks_timing() {
    let (u, tool) = toy_world(true);
    let spec = CheckSpec::new(MetricKind::ErrorRate, 0.05);
    let r = robust_adversarial_test(&tool, &u, &kit_family(), &spec, None, &RunOptions::default()).unwrap();
    let text = r.to_json();
    let back = robust_audit::AuditReport::load(&text).unwrap();
    assert_eq!(back.to_json(), text);
    assert_eq!(back.family().unwrap().specs(), kit_family().specs());
    let again = robust_adversarial_test(&tool, &u, &kit_family(), &spec, None, &RunOptions { parallelism: 3, ..Default::default() }).unwrap();
    assert_eq!(again.to_json_masked(), r.to_json_masked());
}

#[test]
fn case_family_with_reference_tool_passes() {
    let (u, data) = synth_universe(21, |c| {
        c.instances = 1500;
        c.loci = 15;
        c.min_contributors = 2;
        c.max_contributors = 2;
        c.min_amount_pg = 100.0;
        c.max_amount_pg = 800.0;
        c.relative_probability = 0.0;
        c.kits.truncate(1);
    });
    let tool = ReferencePgsTool::new(&data.frequencies).unwrap();
    let profile = CaseProfile::default()
        .with("n_contributors", CaseValue::Number(2.0))
        .with("amount_pg", CaseValue::Range { lo: 100.0, hi: 200.0 })
        .with("kit", CaseValue::Category("K1".into()));
    let family = generate_kway_family(&profile, 1, u.schema(), &ToleranceConfig::default()).unwrap();
    assert_eq!(family.len(), 3);
    let spec = CheckSpec::new(MetricKind::ErrorRate, 0.1);
    let r = robust_adversarial_test(&tool, &u, &family, &spec, None, &RunOptions::default()).unwrap();
    assert_eq!(r.summary.passed, 3, "{}", robust_audit::cli::render_human(&r));
    assert_eq!(r.verdict, Verdict::Pass);

    let flip = SliceConditionalFlip::new(
        ReferencePgsTool::new(&data.frequencies).unwrap(),
        family.specs()[1].clone(),
        spec.decision(),
    );
    let r = robust_adversarial_test(&flip, &u, &family, &spec, None, &RunOptions::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Fail);
    let flipped = &family.specs()[1].name;
    assert!(r.failing_slices().any(|o| &o.spec.name == flipped));
    assert_eq!(&worst_case_metric(&r).unwrap().0, flipped);
}

#[test]
fn warm_cache_skips_the_tool() {
    let (u, tool) = toy_world(false);
    let spec = CheckSpec::new(MetricKind::ErrorRate, 0.05);
    let mut cache = OutputCache::in_memory();
    let cold = robust_adversarial_test(&tool, &u, &kit_family(), &spec, Some(&mut cache), &RunOptions::default()).unwrap();
    let warm = robust_adversarial_test(&tool, &u, &kit_family(), &spec, Some(&mut cache), &RunOptions::default()).unwrap();
    assert_eq!(tool.calls(), 300);
    assert_eq!(warm.run.as_ref().unwrap().cache_hits, 300);
    assert_eq!(warm.to_json_masked(), cold.to_json_masked());
}

/// A universe whose per-instance correctness is drawn at random, and a
/// random family of kit/n/amount slices.
fn random_world(wrong: &[bool]) -> (DataUniverse, ScriptedTool) {
    let insts: Vec<_> = wrong
        .iter()
        .enumerate()
        .map(|(i, _)| toy_instance(i, ["A", "B", "C"][i % 3], 1 + (i / 3 % 6) as i64, (i * 53 % 1000) as f64, i % 2 == 0))
        .collect();
    let scores = insts
        .iter()
        .zip(wrong)
        .map(|(i, &w)| (i.id.clone(), if i.label != w { 1.0 } else { -1.0 }))
        .collect::<Vec<_>>();
    (
        DataUniverse::new(toy_schema(), insts, vec!["toy".into()]).unwrap(),
        ScriptedTool::new("toy-v1", scores),
    )
}

fn slice_strategy() -> impl Strategy<Value = Vec<FeatureCondition>> {
    prop::collection::vec(
        prop_oneof![
            prop::sample::select(vec!["A", "B", "C"]).prop_map(|k| FeatureCondition::equals("kit", k)),
            (1i64..=6, 0i64..3).prop_map(|(lo, w)| FeatureCondition::in_range("n_contributors", lo as f64, (lo + w) as f64)),
            (0.0f64..900.0, 50.0f64..800.0).prop_map(|(lo, w)| FeatureCondition::in_range("amount_pg", lo, lo + w)),
        ],
        1..=2,
    )
    .prop_filter("one condition per feature", |c| c.len() < 2 || c[0].feature != c[1].feature)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn verdict_is_the_conjunction_and_monotone(
        wrong in prop::collection::vec(prop::bool::weighted(0.08), 150..400),
        slices in prop::collection::vec(slice_strategy(), 1..8),
        extra in slice_strategy(),
        theta in 0.02f64..0.3,
        n_min in 1u64..40,
    ) {
        let (u, tool) = random_world(&wrong);
        let mut spec = CheckSpec::new(MetricKind::ErrorRate, theta);
        spec.n_min = n_min;
        let specs: Vec<SlicePredicate> = slices
            .into_iter()
            .enumerate()
            .map(|(i, c)| pred(&format!("s{i}"), c))
            .collect();
        let family = DistributionFamily::from_specs(specs).unwrap();
        let r = robust_adversarial_test(&tool, &u, &family, &spec, None, &RunOptions::default()).unwrap();
        let all_pass = r.outcomes.iter().all(|o| o.result.verdict == Verdict::Pass);
        prop_assert_eq!(r.verdict == Verdict::Pass, all_pass);
        prop_assert_eq!(r.outcomes.len(), family.len());

        let bigger = family.with_spec(pred("extra", extra)).unwrap();
        let rb = robust_adversarial_test(&tool, &u, &bigger, &spec, None, &RunOptions::default()).unwrap();
        if r.verdict == Verdict::Fail {
            prop_assert_eq!(rb.verdict, Verdict::Fail);
        }
        // Shared slices keep their outcomes.
        prop_assert_eq!(&rb.outcomes[..r.outcomes.len()], &r.outcomes[..]);

        if family.len() > 1 {
            let smaller = DistributionFamily::from_specs(family.specs()[1..].to_vec()).unwrap();
            let rs = robust_adversarial_test(&tool, &u, &smaller, &spec, None, &RunOptions::default()).unwrap();
            if r.verdict == Verdict::Pass {
                prop_assert_eq!(rs.verdict, Verdict::Pass);
            }
        }
    }
}
