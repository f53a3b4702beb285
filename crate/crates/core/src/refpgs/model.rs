use std::collections::BTreeMap;

use super::{AlleleSet, Genotype, LocusModel, MixturePayload, PgsError};

/// Default cap on likelihood summation work per hypothesis and locus.
pub const DEFAULT_COMPLEXITY_BOUND: u64 = 1_000_000;

/// Hardy-Weinberg genotype probability.
pub fn genotype_prior(g: Genotype, locus: &LocusModel) -> Result<f64, PgsError> {
    locus.check_genotype(g)?;
    let f = locus.freqs();
    Ok(if g.is_homozygous() {
        f[g.a()] * f[g.a()]
    } else {
        2.0 * f[g.a()] * f[g.b()]
    })
}

fn check_evidence(evidence: AlleleSet, locus: &LocusModel) -> Result<(), PgsError> {
    if locus.len() < 64 && evidence.bits() >> locus.len() != 0 {
        return Err(PgsError::UnknownAllele {
            locus: locus.name().to_string(),
            allele: format!("#{}", 63 - evidence.bits().leading_zeros()),
        });
    }
    Ok(())
}

fn check_dropout(dropout: &[f64], dropin: f64) -> Result<(), PgsError> {
    if let Some(d) = dropout.iter().find(|d| !(**d >= 0.0 && **d <= 1.0)) {
        return Err(PgsError::InvalidMixture(format!("dropout {d} not in [0, 1]")));
    }
    if !(0.0..=1.0).contains(&dropin) {
        return Err(PgsError::InvalidMixture(format!("drop-in {dropin} not in [0, 1]")));
    }
    Ok(())
}

/// Probability that allele `a` shows given that all carried copies drop out
/// with joint probability `q`.
#[inline]
fn allele_factor(observed: bool, q: f64, no_dropin: f64) -> f64 {
    if observed {
        1.0 - q * no_dropin
    } else {
        q * no_dropin
    }
}

/// P(evidence | genotypes) under independent per-copy dropout and per-allele
/// drop-in. `dropout[i]` belongs to `genotypes[i]`.
pub fn locus_likelihood(
    evidence: AlleleSet,
    genotypes: &[Genotype],
    dropout: &[f64],
    dropin: f64,
    locus: &LocusModel,
) -> Result<f64, PgsError> {
    if genotypes.len() != dropout.len() {
        return Err(PgsError::InvalidMixture(format!(
            "{} genotypes but {} dropout values",
            genotypes.len(),
            dropout.len()
        )));
    }
    check_evidence(evidence, locus)?;
    check_dropout(dropout, dropin)?;
    for &g in genotypes {
        locus.check_genotype(g)?;
    }
    let mut p = 1.0;
    for (a, &f) in locus.freqs().iter().enumerate() {
        let q: f64 = genotypes
            .iter()
            .zip(dropout)
            .map(|(g, d)| d.powi(g.copies(a) as i32))
            .product();
        p *= allele_factor(evidence.contains(a), q, 1.0 - dropin * f);
    }
    Ok(p)
}

/// Unknown contributors sharing one dropout probability.
struct DropoutClass {
    dropout: f64,
    members: usize,
}

fn dropout_classes(dropout: &[f64]) -> Vec<DropoutClass> {
    let mut classes: Vec<DropoutClass> = Vec::new();
    for &d in dropout {
        match classes.iter_mut().find(|c| c.dropout.to_bits() == d.to_bits()) {
            Some(c) => c.members += 1,
            None => classes.push(DropoutClass {
                dropout: d,
                members: 1,
            }),
        }
    }
    classes
}

/// Likelihood of the evidence with `knowns` (using the leading dropout
/// values) plus `unknowns` random unrelated contributors, summed exactly over
/// every genotype assignment of the unknowns weighted by its prior.
///
/// Genotypes of `m` unknowns drawn under Hardy-Weinberg are `2m` independent
/// allele draws, and the likelihood depends on the unknowns only through how
/// many copies of each allele every dropout class carries. The sum is
/// therefore accumulated allele by allele over per-class copy counts with
/// multinomial weights, which equals the sum over genotype assignments term
/// for term after grouping.
pub fn hypothesis_likelihood(
    evidence: AlleleSet,
    knowns: &[Genotype],
    unknowns: usize,
    dropout: &[f64],
    dropin: f64,
    locus: &LocusModel,
    bound: u64,
) -> Result<f64, PgsError> {
    if knowns.len() + unknowns != dropout.len() {
        return Err(PgsError::InvalidMixture(format!(
            "{} knowns + {} unknowns but {} dropout values",
            knowns.len(),
            unknowns,
            dropout.len()
        )));
    }
    check_evidence(evidence, locus)?;
    check_dropout(dropout, dropin)?;
    for &g in knowns {
        locus.check_genotype(g)?;
    }
    let (known_dropout, unknown_dropout) = dropout.split_at(knowns.len());
    let classes = dropout_classes(unknown_dropout);

    let caps: Vec<usize> = classes.iter().map(|c| 2 * c.members).collect();
    let mut strides = Vec::with_capacity(caps.len());
    let mut states = 1usize;
    for &cap in &caps {
        strides.push(states);
        states = states.saturating_mul(cap + 1);
    }
    let per_allele: u64 = caps
        .iter()
        .map(|&c| ((c + 1) * (c + 2) / 2) as u64)
        .fold(1u64, |acc, x| acc.saturating_mul(x));
    let needed = per_allele.saturating_mul(locus.len() as u64);
    if needed > bound {
        return Err(PgsError::ComplexityGuard { needed, bound });
    }

    let max_cap = caps.iter().copied().max().unwrap_or(0);
    let mut inv_factorial = vec![1.0f64; max_cap + 1];
    for i in 1..=max_cap {
        inv_factorial[i] = inv_factorial[i - 1] / i as f64;
    }

    let mut table = vec![0.0f64; states];
    table[0] = 1.0;
    let mut next = vec![0.0f64; states];
    // weight[j][δ] = f^δ / δ!, drop[j][δ] = d_j^δ
    let mut weight: Vec<Vec<f64>> = caps.iter().map(|&c| vec![0.0; c + 1]).collect();
    let mut drop: Vec<Vec<f64>> = caps.iter().map(|&c| vec![0.0; c + 1]).collect();
    let mut used = vec![0usize; caps.len()];
    let mut delta = vec![0usize; caps.len()];

    for (a, &f) in locus.freqs().iter().enumerate() {
        let q_known: f64 = knowns
            .iter()
            .zip(known_dropout)
            .map(|(g, d)| d.powi(g.copies(a) as i32))
            .product();
        let observed = evidence.contains(a);
        let no_dropin = 1.0 - dropin * f;
        for (j, class) in classes.iter().enumerate() {
            for k in 0..=caps[j] {
                weight[j][k] = f.powi(k as i32) * inv_factorial[k];
                drop[j][k] = class.dropout.powi(k as i32);
            }
        }
        next.iter_mut().for_each(|x| *x = 0.0);
        for (s, &mass) in table.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let mut rest = s;
            for j in 0..caps.len() {
                used[j] = rest % (caps[j] + 1);
                rest /= caps[j] + 1;
            }
            delta.iter_mut().for_each(|x| *x = 0);
            // Odometer over copy increments that fit each class.
            loop {
                let mut w = mass;
                let mut q = q_known;
                let mut target = s;
                for j in 0..caps.len() {
                    w *= weight[j][delta[j]];
                    q *= drop[j][delta[j]];
                    target += delta[j] * strides[j];
                }
                next[target] += w * allele_factor(observed, q, no_dropin);

                let mut j = 0;
                while j < caps.len() {
                    if used[j] + delta[j] < caps[j] {
                        delta[j] += 1;
                        break;
                    }
                    delta[j] = 0;
                    j += 1;
                }
                if j == caps.len() {
                    break;
                }
            }
        }
        std::mem::swap(&mut table, &mut next);
    }

    let full: usize = caps.iter().zip(&strides).map(|(c, s)| c * s).sum();
    let multinomial: f64 = caps
        .iter()
        .map(|&c| (1..=c).map(|i| i as f64).product::<f64>())
        .product();
    Ok(table[full] * multinomial)
}

/// Outcome of the likelihood-ratio computation.
#[derive(Clone, Debug, PartialEq)]
pub struct LrResult {
    /// Sum of per-locus log10 likelihood ratios; `None` on definite exclusion.
    pub log10_lr: Option<f64>,
    /// The prosecution hypothesis has probability zero at some locus.
    pub excluded: bool,
    pub per_locus: Vec<f64>,
}

/// Contributor (reference plus n-1 unknowns) versus n random unrelated
/// unknowns, locus by locus, accumulated in log10.
pub fn compute_lr(
    payload: &MixturePayload,
    loci: &BTreeMap<String, LocusModel>,
    bound: u64,
) -> Result<LrResult, PgsError> {
    payload.validate()?;
    let n = payload.contributors;
    let mut per_locus = Vec::with_capacity(payload.loci.len());
    let mut excluded = false;
    for obs in &payload.loci {
        let locus = loci
            .get(&obs.locus)
            .ok_or_else(|| PgsError::UnknownLocus(obs.locus.clone()))?;
        let evidence = locus.allele_set(&obs.evidence)?;
        let reference = locus.genotype(&obs.reference[0], &obs.reference[1])?;
        let hp = hypothesis_likelihood(
            evidence,
            &[reference],
            n - 1,
            &payload.dropout,
            payload.dropin,
            locus,
            bound,
        )?;
        let hd = hypothesis_likelihood(
            evidence,
            &[],
            n,
            &payload.dropout,
            payload.dropin,
            locus,
            bound,
        )?;
        if hd == 0.0 {
            return Err(PgsError::DegenerateLocus(obs.locus.clone()));
        }
        if hp == 0.0 {
            excluded = true;
            per_locus.push(f64::NEG_INFINITY);
        } else {
            per_locus.push(hp.log10() - hd.log10());
        }
    }
    let log10_lr = (!excluded).then(|| per_locus.iter().sum());
    Ok(LrResult {
        log10_lr,
        excluded,
        per_locus,
    })
}
