mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use robust_audit::refpgs::{
    compute_lr, genotype_prior, hypothesis_likelihood, locus_likelihood, synth_generate,
    AlleleSet, FrequencyTable, Genotype, LocusEvidence, LocusModel, MixturePayload, PgsError,
    SynthConfig, DEFAULT_COMPLEXITY_BOUND,
};

const NAMES: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

fn model(freqs: &[f64]) -> LocusModel {
    let table: BTreeMap<String, f64> = freqs
        .iter()
        .enumerate()
        .map(|(i, f)| (NAMES[i].to_string(), *f))
        .collect();
    LocusModel::new("L", &table).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn genotype_priors() {
    let m = model(&[0.1, 0.2, 0.7]);
    assert!((genotype_prior(Genotype::new(0, 1), &m).unwrap() - 0.04).abs() < 1e-15);
    assert!((genotype_prior(Genotype::new(0, 0), &m).unwrap() - 0.01).abs() < 1e-15);
    let total: f64 = (0..3)
        .flat_map(|a| (a..3).map(move |b| Genotype::new(a, b)))
        .map(|g| genotype_prior(g, &m).unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn noiseless_single_source() {
    let m = model(&[0.1, 0.2, 0.7]);
    let g = Genotype::new(0, 1);
    let ab = AlleleSet::from_bits(0b011);
    let a = AlleleSet::from_bits(0b001);
    assert_eq!(locus_likelihood(ab, &[g], &[0.0], 0.0, &m).unwrap(), 1.0);
    assert_eq!(locus_likelihood(a, &[g], &[0.0], 0.0, &m).unwrap(), 0.0);
}

#[test]
fn homozygote_with_dropout_and_dropin_matches_event_tree() {
    let freqs = [0.8, 0.2];
    let m = model(&freqs);
    let got = locus_likelihood(AlleleSet::from_bits(0b01), &[Genotype::new(0, 0)], &[0.3], 0.05, &m)
        .unwrap();
    let by_formula = (1.0 - 0.09 * (1.0 - 0.05 * 0.8)) * (1.0 - 0.05 * 0.2);
    let oracle = event_tree_likelihood(0b01, &[(0, 0)], &[0.3], 0.05, &freqs);
    assert!(rel_close(got, by_formula, 1e-12), "{got} vs {by_formula}");
    assert!(rel_close(got, oracle, 1e-12), "{got} vs {oracle}");
}

#[test]
fn no_unknowns_reduces_to_locus_likelihood() {
    let m = model(&[0.3, 0.3, 0.4]);
    let e = AlleleSet::from_bits(0b101);
    let g = [Genotype::new(0, 2), Genotype::new(1, 2)];
    let direct = locus_likelihood(e, &g, &[0.2, 0.4], 0.03, &m).unwrap();
    let via = hypothesis_likelihood(e, &g, 0, &[0.2, 0.4], 0.03, &m, DEFAULT_COMPLEXITY_BOUND).unwrap();
    assert!(rel_close(direct, via, 1e-12));
}

#[test]
fn one_unknown_two_alleles_is_three_terms() {
    let freqs = [0.35, 0.65];
    let m = model(&freqs);
    let (d, c) = (0.25, 0.04);
    for bits in 0..4u64 {
        let e = AlleleSet::from_bits(bits);
        let got = hypothesis_likelihood(e, &[], 1, &[d], c, &m, DEFAULT_COMPLEXITY_BOUND).unwrap();
        let by_hand = freqs[0] * freqs[0] * event_tree_likelihood(bits, &[(0, 0)], &[d], c, &freqs)
            + 2.0 * freqs[0] * freqs[1] * event_tree_likelihood(bits, &[(0, 1)], &[d], c, &freqs)
            + freqs[1] * freqs[1] * event_tree_likelihood(bits, &[(1, 1)], &[d], c, &freqs);
        assert!(rel_close(got, by_hand, 1e-12), "E={bits:b}: {got} vs {by_hand}");
    }
}

#[test]
fn two_unknowns_four_alleles_match_brute_force() {
    let freqs = [0.1, 0.2, 0.3, 0.4];
    let m = model(&freqs);
    let dropout = [0.15, 0.45];
    for bits in 0..16u64 {
        let got = hypothesis_likelihood(
            AlleleSet::from_bits(bits),
            &[],
            2,
            &dropout,
            0.07,
            &m,
            DEFAULT_COMPLEXITY_BOUND,
        )
        .unwrap();
        let oracle = brute_force_hypothesis(bits, &[], 2, &dropout, 0.07, &freqs);
        assert!(rel_close(got, oracle, 1e-10), "E={bits:b}: {got} vs {oracle}");
    }
}

#[test]
fn evidence_sets_are_a_distribution() {
    let freqs = [0.1, 0.2, 0.3, 0.4];
    let m = model(&freqs);
    for (knowns, u, dropout) in [
        (vec![Genotype::new(0, 1)], 0, vec![0.3]),
        (vec![Genotype::new(2, 2)], 1, vec![0.1, 0.4]),
        (vec![], 3, vec![0.2, 0.2, 0.49]),
    ] {
        let total: f64 = (0..16u64)
            .map(|b| {
                hypothesis_likelihood(AlleleSet::from_bits(b), &knowns, u, &dropout, 0.05, &m, DEFAULT_COMPLEXITY_BOUND)
                    .unwrap()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "sum {total}");
    }
}

#[test]
fn complexity_guard_refuses_large_enumerations() {
    let freqs = vec![1.0 / 20.0; 20];
    let table: BTreeMap<String, f64> = (0..20).map(|i| (format!("{i:02}"), freqs[i])).collect();
    let m = LocusModel::new("L", &table).unwrap();
    let dropout = vec![0.1, 0.2, 0.3, 0.4, 0.45, 0.05];
    let err = hypothesis_likelihood(AlleleSet::from_bits(0b111), &[], 6, &dropout, 0.01, &m, 1000)
        .unwrap_err();
    assert!(matches!(err, PgsError::ComplexityGuard { bound: 1000, .. }));
}

fn table(loci: &[(&str, &[f64])]) -> FrequencyTable {
    FrequencyTable {
        loci: loci
            .iter()
            .map(|(name, freqs)| {
                (
                    name.to_string(),
                    freqs.iter().enumerate().map(|(i, f)| (NAMES[i].to_string(), *f)).collect(),
                )
            })
            .collect(),
    }
}

fn payload(t: &FrequencyTable, n: usize, dropout: Vec<f64>, dropin: f64, loci: Vec<(&str, Vec<&str>, [&str; 2])>) -> MixturePayload {
    MixturePayload {
        contributors: n,
        dropout,
        dropin,
        frequency_table: t.digest(),
        loci: loci
            .into_iter()
            .map(|(l, e, r)| LocusEvidence {
                locus: l.into(),
                evidence: e.into_iter().map(String::from).collect(),
                reference: [r[0].into(), r[1].into()],
            })
            .collect(),
    }
}

#[test]
fn closed_form_heterozygote_lr() {
    let t = table(&[("L1", &[0.1, 0.2, 0.7])]);
    let p = payload(&t, 1, vec![0.0], 0.0, vec![("L1", vec!["A", "B"], ["A", "B"])]);
    let lr = compute_lr(&p, &t.models().unwrap(), DEFAULT_COMPLEXITY_BOUND).unwrap();
    let x = lr.log10_lr.unwrap();
    assert!((x - 25f64.log10()).abs() < 1e-12, "{x}");
    assert!((x - 1.39794).abs() < 1e-5);
    let oracle = brute_force_locus_log10_lr(0b011, (0, 1), 1, &[0.0], 0.0, &[0.1, 0.2, 0.7]).unwrap();
    assert!((x - oracle).abs() < 1e-12);
}

#[test]
fn loci_multiply() {
    let t = table(&[("L1", &[0.1, 0.2, 0.7]), ("L2", &[0.25, 0.25, 0.5])]);
    let models = t.models().unwrap();
    let l1 = ("L1", vec!["A", "C"], ["A", "C"]);
    let l2 = ("L2", vec!["B"], ["B", "C"]);
    let both = payload(&t, 2, vec![0.2, 0.3], 0.02, vec![l1.clone(), l2.clone()]);
    let one = payload(&t, 2, vec![0.2, 0.3], 0.02, vec![l1]);
    let two = payload(&t, 2, vec![0.2, 0.3], 0.02, vec![l2]);
    let f = |p: &MixturePayload| compute_lr(p, &models, DEFAULT_COMPLEXITY_BOUND).unwrap().log10_lr.unwrap();
    assert!((f(&both) - (f(&one) + f(&two))).abs() < 1e-12);
}

#[test]
fn impossible_under_prosecution_is_a_definite_exclusion() {
    let t = table(&[("L1", &[0.1, 0.2, 0.7])]);
    let p = payload(&t, 1, vec![0.0], 0.0, vec![("L1", vec!["A", "B"], ["A", "C"])]);
    let lr = compute_lr(&p, &t.models().unwrap(), DEFAULT_COMPLEXITY_BOUND).unwrap();
    assert!(lr.excluded);
    assert_eq!(lr.log10_lr, None);
    assert_eq!(lr.per_locus, vec![f64::NEG_INFINITY]);
}

#[test]
fn unknown_alleles_and_loci_are_errors() {
    let t = table(&[("L1", &[0.5, 0.5])]);
    let models = t.models().unwrap();
    let p = payload(&t, 1, vec![0.1], 0.0, vec![("L1", vec!["Z"], ["A", "B"])]);
    assert!(matches!(compute_lr(&p, &models, DEFAULT_COMPLEXITY_BOUND), Err(PgsError::UnknownAllele { .. })));
    let p = payload(&t, 1, vec![0.1], 0.0, vec![("L9", vec!["A"], ["A", "B"])]);
    assert!(matches!(compute_lr(&p, &models, DEFAULT_COMPLEXITY_BOUND), Err(PgsError::UnknownLocus(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lr_matches_brute_force(
        n in 1usize..=3,
        raw in prop::collection::vec(0.05f64..1.0, 2..=4),
        d in prop::collection::vec(0.0f64..0.5, 3),
        c in 0.0f64..0.5,
        ev in 0u64..16,
        ra in 0usize..4,
        rb in 0usize..4,
    ) {
        let total: f64 = raw.iter().sum();
        let freqs: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let k = freqs.len();
        let (ra, rb, ev) = (ra % k, rb % k, ev & ((1 << k) - 1));
        let t = table(&[("L1", &freqs)]);
        let evidence: Vec<&str> = (0..k).filter(|a| ev >> a & 1 == 1).map(|a| NAMES[a]).collect();
        let p = payload(&t, n, d[..n].to_vec(), c, vec![("L1", evidence, [NAMES[ra], NAMES[rb]])]);
        let got = compute_lr(&p, &t.models().unwrap(), DEFAULT_COMPLEXITY_BOUND).unwrap();
        let oracle = brute_force_locus_log10_lr(ev, (ra, rb), n, &d[..n], c, &freqs);
        match (got.log10_lr, oracle) {
            (Some(x), Some(y)) => prop_assert!(rel_close(10f64.powf(x), 10f64.powf(y), 1e-9), "{x} vs {y}"),
            (None, None) => {}
            other => prop_assert!(false, "mismatch {:?}", other),
        }
    }
}

#[test]
fn synth_is_deterministic() {
    let cfg = SynthConfig {
        instances: 200,
        ..SynthConfig::default()
    };
    let a = synth_generate(&cfg, 9).unwrap();
    let b = synth_generate(&cfg, 9).unwrap();
    let lines = |d: &robust_audit::refpgs::SynthDataset| -> String {
        d.instances.iter().map(|i| i.to_json_line()).collect()
    };
    assert_eq!(lines(&a), lines(&b));
    assert_eq!(a.frequencies, b.frequencies);
    let c = synth_generate(&cfg, 10).unwrap();
    assert_ne!(lines(&a), lines(&c));
}

#[test]
fn synth_label_balance() {
    let (_, data) = synth(3, |c| {
        c.instances = 10_000;
        c.loci = 2;
    });
    let n = data.instances.len() as f64;
    let pos = data.instances.iter().filter(|i| i.label).count() as f64;
    let se = (0.25 / n).sqrt();
    assert!(((pos / n) - 0.5).abs() < 3.0 * se, "positive fraction {}", pos / n);
}

/// At 5000 pg a single source sits at the dropout floor (0.01). Drop-in is
/// disabled so evidence equals the genotype exactly when no copy drops out:
/// probability 0.99 for a homozygote (one distinct allele must survive one
/// of two copies: 1 - 0.01^2) and 0.99^2 for a heterozygote. The expected
/// intact fraction is therefore about 0.98, not 0.99; the test checks the
/// simulated fraction against the analytic expectation.
#[test]
fn generous_single_source_evidence_matches_genotype() {
    let (_, data) = synth(11, |c| {
        c.instances = 1000;
        c.min_contributors = 1;
        c.max_contributors = 1;
        c.min_amount_pg = 5000.0;
        c.max_amount_pg = 5000.0;
        c.dropin = 0.0;
        c.positive_fraction = 1.0;
        c.relative_probability = 0.0;
        c.kits.truncate(1);
    });
    let mut intact = 0usize;
    let mut expected = 0.0;
    let mut total = 0usize;
    for inst in &data.instances {
        let p: MixturePayload = serde_json::from_value(inst.payload.clone()).unwrap();
        let d = p.dropout[0];
        assert!((d - 0.01).abs() < 1e-12);
        for l in &p.loci {
            let hom = l.reference[0] == l.reference[1];
            let mut alleles: Vec<&String> = l.reference.iter().collect();
            alleles.dedup();
            let mut ev: Vec<&String> = l.evidence.iter().collect();
            ev.sort();
            intact += (ev == alleles) as usize;
            expected += if hom { 1.0 - d * d } else { (1.0 - d) * (1.0 - d) };
            total += 1;
        }
    }
    let frac = intact as f64 / total as f64;
    let exp = expected / total as f64;
    let se = (exp * (1.0 - exp) / total as f64).sqrt();
    assert!((frac - exp).abs() < 4.0 * se, "intact {frac}, expected {exp}");
    assert!(frac > 0.97);
}
