//! One-dimensional party positions and agreement statistics.
//!
//! * Classical (Torgerson) MDS: double-centre the squared distances,
//!   `B = -1/2 J D∘D J` with `J = I - 11ᵀ/n`, and scale the leading
//!   eigenvector by the square root of its eigenvalue.
//! * RILE: `(R - L) / N` from right- and left-coded sentence counts.
//! * Salience ground truth: Euclidean distances between per-party vectors of
//!   category frequencies divided by manifesto length.
//! * Pearson correlation with a two-sided t-test p-value.
//! * Mantel test: Pearson correlation of the upper triangles of two distance
//!   matrices, with a one-sided p-value from simultaneous row/column
//!   permutations of the second matrix.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg;
use crate::similarity::PartyDistanceMatrix;

pub const SALIENCE_TAG: &str = "salience-ground-truth";
/// Largest party count for which the Mantel test enumerates all permutations.
pub const MANTEL_EXACT_MAX_PARTIES: usize = 7;
pub const DEFAULT_PERMUTATIONS: usize = 9999;

/// Permuted statistics within this distance below the observed one count as
/// ties. Only matters for matrices with symmetries.
const MANTEL_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub parties: Vec<String>,
    pub coordinate: BTreeMap<String, f64>,
    /// Leading eigenvalue over the sum of positive eigenvalues.
    pub explained_ratio: f64,
}

impl ScalingResult {
    pub fn coordinates(&self) -> Vec<f64> {
        self.parties.iter().map(|p| self.coordinate[p]).collect()
    }
}

/// First axis of classical MDS.
///
/// The sign is fixed so that the first party in lexicographic order with a
/// non-zero coordinate is positive.
pub fn classical_mds_axis1(m: &PartyDistanceMatrix) -> Result<ScalingResult> {
    m.validate()?;
    let d = m.dense()?;
    let n = d.len();
    if n < 2 {
        return Err(Error::InsufficientData("MDS needs at least 2 parties".into()));
    }
    let sq = DMatrix::from_fn(n, n, |i, j| d[i][j] * d[i][j]);
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + grand));

    let eig = linalg::symmetric_eigen(b);
    let top = eig.values[0];
    let tol = 1e-12 * eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let positive: f64 = eig.values.iter().filter(|&&v| v > tol).sum();

    let mut coords = vec![0.0; n];
    let mut explained_ratio = 0.0;
    if top > tol {
        let scale = top.sqrt();
        let v = eig.vectors.column(0);
        let mean = v.iter().sum::<f64>() / n as f64;
        for (c, x) in coords.iter_mut().zip(v.iter()) {
            // the eigenvector is orthogonal to 1 up to rounding
            *c = scale * (x - mean);
        }
        explained_ratio = (top / positive).clamp(0.0, 1.0);

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| m.parties[a].cmp(&m.parties[b]));
        if let Some(&k) = order.iter().find(|&&k| coords[k].abs() > 0.0) {
            if coords[k] < 0.0 {
                coords.iter_mut().for_each(|c| *c = -*c);
            }
        }
    }
    Ok(ScalingResult {
        parties: m.parties.clone(),
        coordinate: m.parties.iter().cloned().zip(coords).collect(),
        explained_ratio,
    })
}

/// Right- and left-leaning category codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RileCodes {
    pub right: BTreeSet<String>,
    pub left: BTreeSet<String>,
}

impl RileCodes {
    pub fn new(right: BTreeSet<String>, left: BTreeSet<String>) -> Result<Self> {
        if let Some(code) = right.intersection(&left).next() {
            return Err(Error::Validation(format!("code {code:?} is both right and left")));
        }
        Ok(RileCodes { right, left })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: RileCodes = serde_json::from_str(s)?;
        Self::new(raw.right, raw.left)
    }
}

impl Default for RileCodes {
    /// The standard CMP right/left lists, with the sub-categories that roll
    /// up into each listed category.
    fn default() -> Self {
        Self::from_json(include_str!("../data/rile_codes.json")).expect("bundled RILE codes are valid")
    }
}

/// `(R - L) / N` for one party, where `N` counts all of its coded sentences.
pub fn rile(corpus: &Corpus, party: &str, codes: &RileCodes) -> Result<f64> {
    RileCodes::new(codes.right.clone(), codes.left.clone())?;
    let (mut r, mut l, mut n) = (0usize, 0usize, 0usize);
    for s in corpus.party_sentences(party)? {
        let Some(code) = s.code.as_deref() else { continue };
        n += 1;
        if codes.right.contains(code) {
            r += 1;
        } else if codes.left.contains(code) {
            l += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedScore(format!("party {party:?} has no coded sentences")));
    }
    Ok((r as f64 - l as f64) / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RileScores {
    pub scores: BTreeMap<String, f64>,
    pub right_codes: BTreeSet<String>,
    pub left_codes: BTreeSet<String>,
}

pub fn rile_scores(corpus: &Corpus, codes: &RileCodes) -> Result<RileScores> {
    Ok(RileScores {
        scores: corpus
            .parties()
            .map(|p| Ok((p.to_owned(), rile(corpus, p, codes)?)))
            .collect::<Result<_>>()?,
        right_codes: codes.right.clone(),
        left_codes: codes.left.clone(),
    })
}

/// Salience ground truth over all category codes.
pub fn salience_distance_matrix(corpus: &Corpus) -> Result<PartyDistanceMatrix> {
    let codes: BTreeSet<String> = corpus.category_counts().into_keys().collect();
    salience_matrix(corpus, &codes, SALIENCE_TAG.to_owned())
}

/// Salience ground truth restricted to the codes of one domain. Frequencies
/// are still divided by the full manifesto length.
pub fn salience_distance_matrix_within(
    corpus: &Corpus,
    domain: &str,
    codes: &BTreeSet<String>,
) -> Result<PartyDistanceMatrix> {
    salience_matrix(corpus, codes, format!("{SALIENCE_TAG}:{domain}"))
}

fn salience_matrix(corpus: &Corpus, codes: &BTreeSet<String>, tag: String) -> Result<PartyDistanceMatrix> {
    let parties: Vec<String> = corpus.parties().map(str::to_owned).collect();
    if parties.len() < 2 {
        return Err(Error::InsufficientData("salience needs at least 2 parties".into()));
    }
    let index: BTreeMap<&str, usize> = codes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut vectors = Vec::with_capacity(parties.len());
    let mut coverage = BTreeMap::new();
    for p in &parties {
        let mut v = vec![0.0; codes.len()];
        let (mut total, mut coded, mut covered) = (0usize, 0usize, 0usize);
        for s in corpus.party_sentences(p)? {
            total += 1;
            if let Some(code) = s.code.as_deref() {
                coded += 1;
                if let Some(&k) = index.get(code) {
                    v[k] += 1.0;
                    covered += 1;
                }
            }
        }
        if coded == 0 {
            return Err(Error::UndefinedScore(format!("party {p:?} has no coded sentences")));
        }
        v.iter_mut().for_each(|x| *x /= total as f64);
        vectors.push(v);
        coverage.insert(p.clone(), covered);
    }
    Ok(PartyDistanceMatrix::from_fn(parties, tag, coverage, |i, j| {
        Some(
            vectors[i]
                .iter()
                .zip(&vectors[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        )
    }))
}

/// Per-party salience vector over `codes` (divided by manifesto length).
pub fn salience_vector(corpus: &Corpus, party: &str, codes: &[String]) -> Result<Vec<f64>> {
    let sentences: Vec<_> = corpus.party_sentences(party)?.collect();
    let n = sentences.len() as f64;
    Ok(codes
        .iter()
        .map(|c| sentences.iter().filter(|s| s.code.as_deref() == Some(c)).count() as f64 / n)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearsonResult {
    pub r: f64,
    /// Two-sided, from Student's t with `n - 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<PearsonResult> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::UndefinedCorrelation(format!("need at least 3 points, got {n}")));
    }
    let r = correlation(x, y)?;
    let df = (n - 2) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(PearsonResult { r, p_value, n })
}

fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MantelMode {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MantelResult {
    pub r: f64,
    pub p_value: f64,
    /// Permutations evaluated, the identity included.
    pub n_permutations: usize,
    pub mode: MantelMode,
}

/// Upper-triangle correlation kernel shared by the observed statistic and
/// every permutation, so the identity permutation reproduces `r` exactly.
struct MantelKernel {
    n: usize,
    pairs: Vec<(usize, usize)>,
    /// Centred, scaled upper triangle of `a`.
    a: Vec<f64>,
    /// Centred, scaled full `b`.
    b: Vec<Vec<f64>>,
}

impl MantelKernel {
    fn new(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        let n = a.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let ua: Vec<f64> = pairs.iter().map(|&(i, j)| a[i][j]).collect();
        let ub: Vec<f64> = pairs.iter().map(|&(i, j)| b[i][j]).collect();
        let m = pairs.len() as f64;
        let ma = ua.iter().sum::<f64>() / m;
        let mb = ub.iter().sum::<f64>() / m;
        let sa = ua.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>().sqrt();
        let sb = ub.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>().sqrt();
        if sa == 0.0 || sb == 0.0 {
            return Err(Error::UndefinedCorrelation("distance matrix has zero variance".into()));
        }
        Ok(MantelKernel {
            n,
            a: ua.iter().map(|v| (v - ma) / sa).collect(),
            b: b.iter().map(|row| row.iter().map(|v| (v - mb) / sb).collect()).collect(),
            pairs,
        })
    }

    fn r(&self, perm: &[usize]) -> f64 {
        self.pairs
            .iter()
            .zip(&self.a)
            .map(|(&(i, j), a)| a * self.b[perm[i]][perm[j]])
            .sum()
    }
}

/// Mantel test of `a` against `b`.
///
/// Matrices over at most [`MANTEL_EXACT_MAX_PARTIES`] parties are tested by
/// enumerating every permutation; larger ones use the identity plus
/// `n_perm` random permutations drawn from a ChaCha stream per permutation
/// index, so results do not depend on thread count.
pub fn mantel(a: &PartyDistanceMatrix, b: &PartyDistanceMatrix, n_perm: usize, seed: u64) -> Result<MantelResult> {
    a.validate()?;
    b.validate()?;
    let b = b.reordered(&a.parties)?;
    let kernel = MantelKernel::new(&a.dense()?, &b.dense()?)?;
    let n = kernel.n;
    let identity: Vec<usize> = (0..n).collect();
    let r_obs = kernel.r(&identity);
    let at_least = |r: f64| r >= r_obs - MANTEL_TIE_EPS;

    if n <= MANTEL_EXACT_MAX_PARTIES {
        let mut perm = identity;
        let (mut count, mut total) = (0usize, 0usize);
        loop {
            total += 1;
            if at_least(kernel.r(&perm)) {
                count += 1;
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        return Ok(MantelResult {
            r: r_obs.clamp(-1.0, 1.0),
            p_value: count as f64 / total as f64,
            n_permutations: total,
            mode: MantelMode::Exact,
        });
    }

    if n_perm == 0 {
        return Err(Error::Argument("sampled Mantel test needs n_perm >= 1".into()));
    }
    let count: usize = (0..n_perm)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            usize::from(at_least(kernel.r(&perm)))
        })
        .sum();
    Ok(MantelResult {
        r: r_obs.clamp(-1.0, 1.0),
        p_value: (count + 1) as f64 / (n_perm + 1) as f64,
        n_permutations: n_perm + 1,
        mode: MantelMode::Sampled,
    })
}

/// Advances to the next permutation in lexicographic order.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("successor exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RileCorrelation {
    pub r: f64,
    /// The MDS axis has no intrinsic orientation, so `|r|` is the headline.
    pub abs_r: f64,
    pub p_value: f64,
}

pub fn correlate_scaling_with_rile(s: &ScalingResult, rile: &RileScores) -> Result<RileCorrelation> {
    let mut x = Vec::with_capacity(s.parties.len());
    let mut y = Vec::with_capacity(s.parties.len());
    if rile.scores.len() != s.parties.len() {
        return Err(Error::Validation("scaling and RILE cover different parties".into()));
    }
    for p in &s.parties {
        x.push(s.coordinate[p]);
        y.push(*rile.scores.get(p).ok_or_else(|| Error::lookup("party", p))?);
    }
    let pr = pearson(&x, &y)?;
    Ok(RileCorrelation {
        r: pr.r,
        abs_r: pr.r.abs(),
        p_value: pr.p_value,
    })
}

/// Correlation across domains between labeller accuracy and Mantel `r`.
pub fn accuracy_vs_mantel(
    per_domain_acc: &BTreeMap<String, f64>,
    per_domain_mantel: &BTreeMap<String, f64>,
) -> Result<PearsonResult> {
    if per_domain_acc.keys().ne(per_domain_mantel.keys()) {
        return Err(Error::Validation("accuracy and Mantel maps cover different domains".into()));
    }
    let x: Vec<f64> = per_domain_acc.values().copied().collect();
    let y: Vec<f64> = per_domain_mantel.values().copied().collect();
    pearson(&x, &y)
}
