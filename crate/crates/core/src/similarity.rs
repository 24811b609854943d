//! Party-by-party distances per policy domain, and their aggregate.
//!
//! The distance between parties `p` and `q` in domain `i` is the mean cosine
//! distance over all pairs of their domain-`i` sentences (whitened
//! embeddings). A party without sentences in a domain has undefined
//! distances there; undefined cells are carried as `None`, never as zero.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DomainScheme, OTHER};
use crate::embedding::{EmbeddingStore, PreparedEmbeddings, WhiteningTransform};
use crate::error::{Error, Result};
use crate::table;

pub const AGGREGATE_TAG: &str = "aggregate";

/// Sentence id to domain label (a domain name or `"other"`).
pub type Labels = BTreeMap<String, String>;

/// Symmetric party distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyDistanceMatrix {
    pub parties: Vec<String>,
    /// Row-major; `None` marks an undefined pair.
    pub d: Vec<Vec<Option<f64>>>,
    pub tag: String,
    /// Sentences each party contributes to this matrix.
    pub coverage: BTreeMap<String, usize>,
}

impl PartyDistanceMatrix {
    /// Builds and validates a matrix from its upper triangle.
    pub fn from_fn(
        parties: Vec<String>,
        tag: impl Into<String>,
        coverage: BTreeMap<String, usize>,
        mut upper: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Self {
        let n = parties.len();
        let mut d = vec![vec![Some(0.0); n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = upper(i, j);
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        PartyDistanceMatrix {
            parties,
            d,
            tag: tag.into(),
            coverage,
        }
    }

    pub fn len(&self) -> usize {
        self.parties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parties.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.d[i][j]
    }

    pub fn index_of(&self, party: &str) -> Option<usize> {
        self.parties.iter().position(|p| p == party)
    }

    pub fn is_fully_defined(&self) -> bool {
        self.d.iter().flatten().all(Option::is_some)
    }

    /// Entry for two named parties.
    pub fn between(&self, p: &str, q: &str) -> Result<Option<f64>> {
        let i = self.index_of(p).ok_or_else(|| Error::lookup("party", p))?;
        let j = self.index_of(q).ok_or_else(|| Error::lookup("party", q))?;
        Ok(self.d[i][j])
    }

    /// Fully defined matrix as dense rows.
    pub fn dense(&self) -> Result<Vec<Vec<f64>>> {
        self.d
            .iter()
            .map(|row| row.iter().map(|v| v.ok_or_else(|| self.undefined())).collect())
            .collect()
    }

    fn undefined(&self) -> Error {
        Error::UndefinedMatrix {
            tag: self.tag.clone(),
        }
    }

    /// Checks shape, symmetry, zero diagonal, and that defined entries are
    /// finite and non-negative.
    pub fn validate(&self) -> Result<()> {
        let n = self.parties.len();
        if self.d.len() != n || self.d.iter().any(|r| r.len() != n) {
            return Err(Error::Validation(format!("matrix {:?} is not {n}x{n}", self.tag)));
        }
        if self.parties.iter().collect::<BTreeSet<_>>().len() != n {
            return Err(Error::Validation(format!("matrix {:?} repeats a party", self.tag)));
        }
        for i in 0..n {
            if self.d[i][i] != Some(0.0) {
                return Err(Error::Validation(format!("matrix {:?} has a non-zero diagonal", self.tag)));
            }
            for j in 0..n {
                let v = self.d[i][j];
                if v != self.d[j][i] || v.is_some_and(|x| !x.is_finite() || x < 0.0) {
                    return Err(Error::Validation(format!(
                        "matrix {:?} entry ({i}, {j}) is not a symmetric distance",
                        self.tag
                    )));
                }
            }
        }
        Ok(())
    }

    /// Same matrix with rows and columns in the order of `parties`.
    pub fn reordered(&self, parties: &[String]) -> Result<Self> {
        if parties.len() != self.len() {
            return Err(Error::Validation(format!(
                "matrix {:?} has {} parties, expected {}",
                self.tag,
                self.len(),
                parties.len()
            )));
        }
        let idx: Vec<usize> = parties
            .iter()
            .map(|p| {
                self.index_of(p).ok_or_else(|| {
                    Error::Validation(format!("party {p:?} missing from matrix {:?}", self.tag))
                })
            })
            .collect::<Result<_>>()?;
        Ok(PartyDistanceMatrix {
            parties: parties.to_vec(),
            d: idx.iter().map(|&i| idx.iter().map(|&j| self.d[i][j]).collect()).collect(),
            tag: self.tag.clone(),
            coverage: self.coverage.clone(),
        })
    }

    pub fn to_csv(&self) -> String {
        table::square_csv("party", &self.parties, |i, j| self.d[i][j])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: PartyDistanceMatrix = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

/// Everything needed to compare parties within domains: whitened unit
/// vectors for every labelled policy sentence, and per party and domain the
/// ordered list of its sentence ids.
pub struct DomainSlices {
    prepared: PreparedEmbeddings,
    parties: Vec<String>,
    domains: Vec<String>,
    /// `slices[domain][party]`, ids in corpus order.
    slices: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl DomainSlices {
    /// Groups the corpus by `labels`. Sentences labelled `"other"`, or not
    /// labelled at all, are dropped. Labels naming a domain the scheme does
    /// not know are an error.
    pub fn new(
        corpus: &Corpus,
        store: &EmbeddingStore,
        whitening: &WhiteningTransform,
        scheme: &DomainScheme,
        labels: &Labels,
    ) -> Result<Self> {
        let parties: Vec<String> = corpus.parties().map(str::to_owned).collect();
        let domains: Vec<String> = scheme.domain_names().map(str::to_owned).collect();
        let mut slices: BTreeMap<String, BTreeMap<String, Vec<String>>> = domains
            .iter()
            .map(|d| (d.clone(), parties.iter().map(|p| (p.clone(), Vec::new())).collect()))
            .collect();
        for s in corpus.sentences() {
            let Some(label) = labels.get(&s.id) else { continue };
            if label == OTHER {
                continue;
            }
            let per_party = slices.get_mut(label).ok_or_else(|| Error::lookup("domain", label))?;
            per_party.get_mut(&s.party).expect("party seeded").push(s.id.clone());
        }
        let prepared = PreparedEmbeddings::new(
            store,
            whitening,
            slices.values().flat_map(|m| m.values()).flatten().map(String::as_str),
        )?;
        Ok(DomainSlices {
            prepared,
            parties,
            domains,
            slices,
        })
    }

    pub fn parties(&self) -> &[String] {
        &self.parties
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn slice(&self, domain: &str, party: &str) -> Result<&[String]> {
        self.slices
            .get(domain)
            .ok_or_else(|| Error::lookup("domain", domain))?
            .get(party)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::lookup("party", party))
    }

    /// Mean cross-pair distance, or `None` when either slice is empty.
    ///
    /// The party whose name sorts first drives the outer loop, so
    /// `distance(d, p, q)` and `distance(d, q, p)` are bitwise equal.
    pub fn distance(&self, domain: &str, p: &str, q: &str) -> Result<Option<f64>> {
        let (a, b) = if p <= q { (p, q) } else { (q, p) };
        let sa = self.slice(domain, a)?;
        let sb = self.slice(domain, b)?;
        if sa.is_empty() || sb.is_empty() {
            return Ok(None);
        }
        let va: Vec<&[f64]> = sa.iter().map(|id| self.prepared.get(id)).collect::<Result<_>>()?;
        let vb: Vec<&[f64]> = sb.iter().map(|id| self.prepared.get(id)).collect::<Result<_>>()?;
        Ok(Some(
            self.prepared.cross_distance_sum(&va, &vb) / (va.len() * vb.len()) as f64,
        ))
    }

    /// Distance matrix over all parties for one domain.
    pub fn domain_matrix(&self, domain: &str) -> Result<PartyDistanceMatrix> {
        let n = self.parties.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let values: Vec<Option<f64>> = pairs
            .par_iter()
            .map(|&(i, j)| self.distance(domain, &self.parties[i], &self.parties[j]))
            .collect::<Result<_>>()?;
        let lookup: BTreeMap<(usize, usize), Option<f64>> = pairs.into_iter().zip(values).collect();
        let coverage = self
            .parties
            .iter()
            .map(|p| Ok((p.clone(), self.slice(domain, p)?.len())))
            .collect::<Result<_>>()?;
        Ok(PartyDistanceMatrix::from_fn(
            self.parties.clone(),
            domain,
            coverage,
            |i, j| lookup[&(i, j)],
        ))
    }

    /// One matrix per scheme domain, in domain order.
    pub fn all_domain_matrices(&self) -> Result<Vec<PartyDistanceMatrix>> {
        self.domains
            .par_iter()
            .map(|d| self.domain_matrix(d))
            .collect()
    }
}

/// Distance between two parties in one domain.
#[allow(clippy::too_many_arguments)]
pub fn domain_distance(
    corpus: &Corpus,
    store: &EmbeddingStore,
    whitening: &WhiteningTransform,
    scheme: &DomainScheme,
    domain: &str,
    p: &str,
    q: &str,
    labels: &Labels,
) -> Result<Option<f64>> {
    for party in [p, q] {
        if !corpus.has_party(party) {
            return Err(Error::lookup("party", party));
        }
    }
    if !scheme.has_domain(domain) {
        return Err(Error::lookup("domain", domain));
    }
    DomainSlices::new(corpus, store, whitening, scheme, labels)?.distance(domain, p, q)
}

/// Per-domain matrix over every party of the corpus.
pub fn build_domain_matrix(
    corpus: &Corpus,
    store: &EmbeddingStore,
    whitening: &WhiteningTransform,
    scheme: &DomainScheme,
    labels: &Labels,
    domain: &str,
) -> Result<PartyDistanceMatrix> {
    if !scheme.has_domain(domain) {
        return Err(Error::lookup("domain", domain));
    }
    let slices = DomainSlices::new(corpus, store, whitening, scheme, labels)?;
    if slices.parties().len() < 2 {
        return Err(Error::InsufficientData("need at least 2 parties".into()));
    }
    slices.domain_matrix(domain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Plain mean over the domains where a pair is defined.
    #[default]
    Unweighted,
    /// Weighted mean; a pair's weight in a domain is the average of the two
    /// parties' shares of their policy sentences that fall in that domain.
    SalienceWeighted,
}

/// Entrywise mean of per-domain matrices over the domains where each pair is
/// defined. A pair is undefined only if no domain defines it.
pub fn aggregate_matrix(per_domain: &[PartyDistanceMatrix], mode: Aggregation) -> Result<PartyDistanceMatrix> {
    let first = per_domain
        .first()
        .ok_or_else(|| Error::InsufficientData("no domain matrices to aggregate".into()))?;
    let parties = first.parties.clone();
    let aligned: Vec<PartyDistanceMatrix> = per_domain
        .iter()
        .map(|m| m.reordered(&parties))
        .collect::<Result<_>>()?;

    let totals: BTreeMap<&str, usize> = parties
        .iter()
        .map(|p| (p.as_str(), aligned.iter().map(|m| m.coverage.get(p).copied().unwrap_or(0)).sum()))
        .collect();
    let share = |m: &PartyDistanceMatrix, p: &str| -> f64 {
        let total = totals[p];
        if total == 0 {
            0.0
        } else {
            m.coverage.get(p).copied().unwrap_or(0) as f64 / total as f64
        }
    };

    let coverage = totals.iter().map(|(p, c)| (p.to_string(), *c)).collect();
    let matrix = PartyDistanceMatrix::from_fn(parties.clone(), AGGREGATE_TAG, coverage, |i, j| {
        let (mut sum, mut weight) = (0.0, 0.0);
        for m in &aligned {
            if let Some(v) = m.d[i][j] {
                let w = match mode {
                    Aggregation::Unweighted => 1.0,
                    Aggregation::SalienceWeighted => {
                        0.5 * (share(m, &parties[i]) + share(m, &parties[j]))
                    }
                };
                sum += w * v;
                weight += w;
            }
        }
        (weight > 0.0).then(|| sum / weight)
    });
    Ok(matrix)
}
