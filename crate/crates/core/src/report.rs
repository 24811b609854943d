//! Evaluation report: every party distance matrix scored against the
//! ground truths that the corpus annotations allow.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DomainScheme};
use crate::error::Result;
use crate::scaling::{
    self, MantelMode, PearsonResult, RileCodes, RileCorrelation, RileScores,
};
use crate::similarity::PartyDistanceMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub party: String,
    pub coordinate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixEvaluation {
    /// Mantel `r` against the salience ground truth.
    pub mantel_r: Option<f64>,
    pub mantel_p: Option<f64>,
    pub mantel_mode: Option<MantelMode>,
    pub n_permutations: Option<usize>,
    /// Labeller accuracy on this domain, when available.
    pub accuracy: Option<f64>,
    pub pearson_vs_rile: Option<RileCorrelation>,
    pub explained_ratio: Option<f64>,
    /// First MDS axis, for plotting.
    pub plot: Vec<PlotPoint>,
    pub coverage: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainAgreement {
    pub mantel_r: Option<f64>,
    pub mantel_p: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Annotated-versus-predicted agreement per domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub per_domain: BTreeMap<String, DomainAgreement>,
    pub aggregate: DomainAgreement,
    pub accuracy_vs_mantel: Option<PearsonResult>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub labels: String,
    pub rile: Option<RileScores>,
    pub domains: BTreeMap<String, MatrixEvaluation>,
    pub aggregate: MatrixEvaluation,
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Clone)]
pub struct EvaluationSettings {
    pub n_permutations: usize,
    pub seed: u64,
    pub rile: bool,
    pub salience: bool,
    pub rile_codes: RileCodes,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            n_permutations: scaling::DEFAULT_PERMUTATIONS,
            seed: 0,
            rile: true,
            salience: true,
            rile_codes: RileCodes::default(),
        }
    }
}

/// Ground truths derivable from an annotated corpus.
struct GroundTruth {
    rile: Option<RileScores>,
    salience: Option<PartyDistanceMatrix>,
    domain_salience: BTreeMap<String, PartyDistanceMatrix>,
}

fn ground_truth(
    corpus: Option<&Corpus>,
    scheme: &DomainScheme,
    settings: &EvaluationSettings,
    warnings: &mut Vec<String>,
) -> GroundTruth {
    let mut gt = GroundTruth {
        rile: None,
        salience: None,
        domain_salience: BTreeMap::new(),
    };
    let Some(corpus) = corpus else {
        warnings.push("no annotated corpus; ground-truth comparisons skipped".into());
        return gt;
    };
    if settings.rile {
        match scaling::rile_scores(corpus, &settings.rile_codes) {
            Ok(r) => gt.rile = Some(r),
            Err(e) => warnings.push(format!("RILE unavailable: {e}")),
        }
    }
    if settings.salience {
        match scaling::salience_distance_matrix(corpus) {
            Ok(m) => gt.salience = Some(m),
            Err(e) => warnings.push(format!("salience ground truth unavailable: {e}")),
        }
        for (domain, codes) in scheme.domains() {
            match scaling::salience_distance_matrix_within(corpus, domain, codes) {
                Ok(m) => {
                    gt.domain_salience.insert(domain.clone(), m);
                }
                Err(e) => warnings.push(format!("salience for {domain:?} unavailable: {e}")),
            }
        }
    }
    gt
}

fn evaluate_matrix(
    m: &PartyDistanceMatrix,
    salience: Option<&PartyDistanceMatrix>,
    rile: Option<&RileScores>,
    accuracy: Option<f64>,
    settings: &EvaluationSettings,
) -> MatrixEvaluation {
    let mut out = MatrixEvaluation {
        accuracy,
        coverage: m.coverage.clone(),
        ..Default::default()
    };
    let empty: Vec<&String> = m.coverage.iter().filter(|(_, c)| **c == 0).map(|(p, _)| p).collect();
    if !empty.is_empty() {
        out.warnings.push(format!("no sentences for {empty:?}; their distances are undefined"));
    }
    match scaling::classical_mds_axis1(m) {
        Ok(s) => {
            out.explained_ratio = Some(s.explained_ratio);
            out.plot = s
                .parties
                .iter()
                .map(|p| PlotPoint {
                    party: p.clone(),
                    coordinate: s.coordinate[p],
                })
                .collect();
            if let Some(rile) = rile {
                match scaling::correlate_scaling_with_rile(&s, rile) {
                    Ok(c) => out.pearson_vs_rile = Some(c),
                    Err(e) => out.warnings.push(format!("RILE correlation undefined: {e}")),
                }
            }
        }
        Err(e) => out.warnings.push(format!("MDS undefined: {e}")),
    }
    if let Some(truth) = salience {
        match scaling::mantel(m, truth, settings.n_permutations, settings.seed) {
            Ok(r) => {
                out.mantel_r = Some(r.r);
                out.mantel_p = Some(r.p_value);
                out.mantel_mode = Some(r.mode);
                out.n_permutations = Some(r.n_permutations);
            }
            Err(e) => out.warnings.push(format!("Mantel test undefined: {e}")),
        }
    }
    for w in &out.warnings {
        log::warn!("{}: {w}", m.tag);
    }
    out
}

/// Scores per-domain matrices and their aggregate.
///
/// `gold_corpus` must carry category codes for RILE and salience; without it
/// only the MDS projections are reported. `accuracy` holds per-domain
/// labeller accuracy plus an optional overall value under `None`.
pub fn evaluate(
    labels: &str,
    domain_matrices: &[PartyDistanceMatrix],
    aggregate: &PartyDistanceMatrix,
    gold_corpus: Option<&Corpus>,
    scheme: &DomainScheme,
    accuracy: Option<&crate::labeling::AccuracyReport>,
    settings: &EvaluationSettings,
) -> Result<EvaluationReport> {
    let mut warnings = Vec::new();
    let gt = ground_truth(gold_corpus, scheme, settings, &mut warnings);
    let mut domains = BTreeMap::new();
    for m in domain_matrices {
        let mut e = evaluate_matrix(
            m,
            gt.domain_salience.get(&m.tag),
            gt.rile.as_ref(),
            accuracy.and_then(|a| a.per_domain.get(&m.tag).copied()),
            settings,
        );
        e.warnings.extend(warnings.iter().cloned());
        domains.insert(m.tag.clone(), e);
    }
    let mut agg = evaluate_matrix(
        aggregate,
        gt.salience.as_ref(),
        gt.rile.as_ref(),
        accuracy.map(|a| a.overall),
        settings,
    );
    agg.warnings.extend(warnings);
    Ok(EvaluationReport {
        labels: labels.to_owned(),
        rile: gt.rile,
        domains,
        aggregate: agg,
        comparison: None,
    })
}

/// Mantel agreement between annotated and predicted matrices per domain, and
/// the correlation of that agreement with labeller accuracy across domains.
pub fn compare_setups(
    annotated: &[PartyDistanceMatrix],
    predicted: &[PartyDistanceMatrix],
    annotated_aggregate: &PartyDistanceMatrix,
    predicted_aggregate: &PartyDistanceMatrix,
    accuracy: Option<&crate::labeling::AccuracyReport>,
    settings: &EvaluationSettings,
) -> Comparison {
    let mut warnings = Vec::new();
    let agree = |a: &PartyDistanceMatrix, p: &PartyDistanceMatrix, acc: Option<f64>, warnings: &mut Vec<String>| {
        match scaling::mantel(a, p, settings.n_permutations, settings.seed) {
            Ok(r) => DomainAgreement {
                mantel_r: Some(r.r),
                mantel_p: Some(r.p_value),
                accuracy: acc,
            },
            Err(e) => {
                warnings.push(format!("{}: Mantel undefined: {e}", a.tag));
                DomainAgreement {
                    mantel_r: None,
                    mantel_p: None,
                    accuracy: acc,
                }
            }
        }
    };
    let mut per_domain = BTreeMap::new();
    for a in annotated {
        let acc = accuracy.and_then(|r| r.per_domain.get(&a.tag).copied());
        match predicted.iter().find(|p| p.tag == a.tag) {
            Some(p) => {
                per_domain.insert(a.tag.clone(), agree(a, p, acc, &mut warnings));
            }
            None => warnings.push(format!("{}: no predicted matrix", a.tag)),
        }
    }
    let aggregate = agree(
        annotated_aggregate,
        predicted_aggregate,
        accuracy.map(|a| a.overall),
        &mut warnings,
    );

    let (acc_map, mantel_map): (BTreeMap<String, f64>, BTreeMap<String, f64>) = per_domain
        .iter()
        .filter_map(|(d, a)| Some(((d.clone(), a.accuracy?), (d.clone(), a.mantel_r?))))
        .unzip();
    let accuracy_vs_mantel = if acc_map.is_empty() {
        None
    } else {
        match scaling::accuracy_vs_mantel(&acc_map, &mantel_map) {
            Ok(r) => Some(r),
            Err(e) => {
                warnings.push(format!("accuracy-vs-Mantel correlation undefined: {e}"));
                None
            }
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Comparison {
        per_domain,
        aggregate,
        accuracy_vs_mantel,
        warnings,
    }
}
