//! Policy-domain discovery from category annotations.
//!
//! Two categories are close when their sentences are, on average, close in
//! embedding space. The coherence distance between categories `P` and `Q` is
//! the mean cosine distance over all sentence pairs `(i in P, j in Q)`, taken
//! on whitened embeddings. For `P = Q` the pairs are the unordered pairs of
//! distinct sentences. The resulting matrix is clustered with average linkage
//! (UPGMA), and the tree is cut into a partition that a user names and
//! finalises into a [`DomainScheme`].

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DomainScheme, NO_CATEGORY_CODE, OTHER};
use crate::embedding::{EmbeddingStore, PreparedEmbeddings, WhiteningTransform};
use crate::error::{Error, Result};
use crate::table;

pub const DEFAULT_MIN_COUNT: usize = 10;
pub const DEFAULT_CLUSTERS: usize = 13;

/// Relative slack under which two linkage distances count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Coherence distance between two category codes.
pub fn category_distance(
    corpus: &Corpus,
    store: &EmbeddingStore,
    whitening: &WhiteningTransform,
    p: &str,
    q: &str,
) -> Result<f64> {
    let ids_p = category_ids(corpus, p)?;
    let ids_q = category_ids(corpus, q)?;
    let prepared = PreparedEmbeddings::new(
        store,
        whitening,
        ids_p.iter().chain(ids_q.iter()).map(String::as_str),
    )?;
    coherence(&prepared, &ids_p, &ids_q, p == q)
}

fn category_ids<'c>(corpus: &'c Corpus, code: &str) -> Result<&'c BTreeSet<String>> {
    corpus
        .code_ids(code)
        .filter(|ids| !ids.is_empty())
        .ok_or_else(|| Error::EmptyCategory(code.to_owned()))
}

fn coherence(
    prepared: &PreparedEmbeddings,
    left: &BTreeSet<String>,
    right: &BTreeSet<String>,
    same: bool,
) -> Result<f64> {
    let lv: Vec<&[f64]> = left.iter().map(|id| prepared.get(id)).collect::<Result<_>>()?;
    if same {
        let n = lv.len();
        if n < 2 {
            return Err(Error::InsufficientData(
                "within-category distance needs at least 2 sentences".into(),
            ));
        }
        let mut sum = 0.0;
        for i in 0..n {
            sum += prepared.cross_distance_sum(&lv[i..=i], &lv[i + 1..]);
        }
        return Ok(sum / (n * (n - 1) / 2) as f64);
    }
    let rv: Vec<&[f64]> = right.iter().map(|id| prepared.get(id)).collect::<Result<_>>()?;
    Ok(prepared.cross_distance_sum(&lv, &rv) / (lv.len() * rv.len()) as f64)
}

/// Symmetric category-by-category distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDistanceMatrix {
    codes: Vec<String>,
    /// Row-major `n x n`.
    d: Vec<f64>,
}

impl CategoryDistanceMatrix {
    /// Validates symmetry, zero diagonal and finiteness.
    pub fn new(codes: Vec<String>, d: Vec<f64>) -> Result<Self> {
        let n = codes.len();
        if d.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                found: d.len(),
            });
        }
        if codes.iter().collect::<BTreeSet<_>>().len() != n {
            return Err(Error::Validation("duplicate category code".into()));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::Validation(format!("non-zero diagonal at {:?}", codes[i])));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !v.is_finite() || v < 0.0 || v != d[j * n + i] {
                    return Err(Error::Validation(format!(
                        "entry ({:?}, {:?}) is not a finite symmetric distance",
                        codes[i], codes[j]
                    )));
                }
            }
        }
        Ok(CategoryDistanceMatrix { codes, d })
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.codes.len() + j]
    }

    pub fn to_csv(&self) -> String {
        table::square_csv("code", &self.codes, |i, j| Some(self.get(i, j)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub code: String,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct CategoryMatrixReport {
    pub matrix: CategoryDistanceMatrix,
    /// Codes below `min_count`, left for manual assignment.
    pub leftovers: Vec<CategoryCount>,
}

/// Distance matrix over every code with at least `min_count` sentences.
/// The no-category code `"0"` is never clustered.
///
/// Pairs are computed in parallel; each pair's sum runs sequentially in id
/// order, so the output is identical for any thread count.
pub fn build_category_matrix(
    corpus: &Corpus,
    store: &EmbeddingStore,
    whitening: &WhiteningTransform,
    min_count: usize,
) -> Result<CategoryMatrixReport> {
    let mut counts = corpus.category_counts();
    counts.remove(NO_CATEGORY_CODE);
    let (kept, dropped): (Vec<_>, Vec<_>) =
        counts.into_iter().partition(|(_, count)| *count >= min_count);
    if kept.len() < 2 {
        return Err(Error::InsufficientCategories {
            found: kept.len(),
            min_count,
        });
    }
    let codes: Vec<String> = kept.into_iter().map(|(code, _)| code).collect();
    let id_sets: Vec<&BTreeSet<String>> = codes
        .iter()
        .map(|c| category_ids(corpus, c))
        .collect::<Result<_>>()?;
    let prepared = PreparedEmbeddings::new(
        store,
        whitening,
        id_sets.iter().flat_map(|s| s.iter()).map(String::as_str),
    )?;

    let n = codes.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| coherence(&prepared, id_sets[i], id_sets[j], false))
        .collect::<Result<_>>()?;
    let mut d = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        d[i * n + j] = v;
        d[j * n + i] = v;
    }
    let leftovers = dropped
        .into_iter()
        .map(|(code, count)| CategoryCount { code, count })
        .collect();
    Ok(CategoryMatrixReport {
        matrix: CategoryDistanceMatrix::new(codes, d)?,
        leftovers,
    })
}

/// One agglomeration step. Leaves are clusters `0..n`; merge `k` creates
/// cluster `n + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Checks merge count, monotone heights, and that each cluster id is used
    /// as a child exactly once.
    pub fn validate(&self) -> Result<()> {
        let n = self.leaves.len();
        if self.merges.len() != n.saturating_sub(1) {
            return Err(Error::Validation(format!(
                "{} leaves need {} merges, found {}",
                n,
                n.saturating_sub(1),
                self.merges.len()
            )));
        }
        let mut used = vec![false; n + self.merges.len()];
        let mut size = vec![1usize; n + self.merges.len()];
        let mut prev = f64::NEG_INFINITY;
        for (k, m) in self.merges.iter().enumerate() {
            if m.height < prev {
                return Err(Error::Validation(format!("merge {k} lowers the height")));
            }
            prev = m.height;
            for child in [m.left, m.right] {
                if child >= n + k || used[child] {
                    return Err(Error::Validation(format!("merge {k} reuses cluster {child}")));
                }
                used[child] = true;
            }
            size[n + k] = size[m.left] + size[m.right];
            if size[n + k] != m.size {
                return Err(Error::Validation(format!("merge {k} has wrong size")));
            }
        }
        Ok(())
    }

    pub fn heights(&self) -> impl Iterator<Item = f64> + '_ {
        self.merges.iter().map(|m| m.height)
    }
}

/// Average-linkage (UPGMA) agglomerative clustering.
///
/// The distance between clusters is the unweighted mean of all leaf-to-leaf
/// distances across them. Among pairs tied at the minimum distance, the pair
/// whose sorted `(smallest code of one, smallest code of the other)` is
/// lexicographically least is merged first.
pub fn average_linkage_cluster(m: &CategoryDistanceMatrix) -> Dendrogram {
    let n = m.len();
    let codes = m.codes();
    // slot-indexed working state; a merged cluster takes the lower slot
    let mut dist: Vec<f64> = m.d.clone();
    let mut alive: Vec<bool> = vec![true; n];
    let mut cluster_id: Vec<usize> = (0..n).collect();
    let mut size: Vec<usize> = vec![1; n];
    let mut min_code: Vec<&str> = codes.iter().map(String::as_str).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut last_height = f64::NEG_INFINITY;

    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in (0..n).filter(|&a| alive[a]) {
            for b in (a + 1..n).filter(|&b| alive[b]) {
                let d = dist[a * n + b];
                best = match best {
                    None => Some((a, b, d)),
                    Some((ba, bb, bd)) => {
                        let slack = TIE_TOLERANCE * bd.abs().max(1.0);
                        if d < bd - slack {
                            Some((a, b, d))
                        } else if d <= bd + slack
                            && tie_key(min_code[a], min_code[b]) < tie_key(min_code[ba], min_code[bb])
                        {
                            Some((a, b, d))
                        } else {
                            Some((ba, bb, bd))
                        }
                    }
                };
            }
        }
        let (a, b, d) = best.expect("at least two live clusters");
        let (left, right) = if cluster_id[a] < cluster_id[b] {
            (cluster_id[a], cluster_id[b])
        } else {
            (cluster_id[b], cluster_id[a])
        };
        let merged = size[a] + size[b];
        // ties resolved within TIE_TOLERANCE may dip by a rounding error
        let height = d.max(last_height);
        last_height = height;
        merges.push(Merge {
            left,
            right,
            height,
            size: merged,
        });

        let (wa, wb) = (size[a] as f64, size[b] as f64);
        for k in (0..n).filter(|&k| alive[k] && k != a && k != b) {
            let v = (wa * dist[k * n + a] + wb * dist[k * n + b]) / (wa + wb);
            dist[k * n + a] = v;
            dist[a * n + k] = v;
        }
        alive[b] = false;
        size[a] = merged;
        cluster_id[a] = n + step;
        if min_code[b] < min_code[a] {
            min_code[a] = min_code[b];
        }
    }
    Dendrogram {
        leaves: codes.to_vec(),
        merges,
    }
}

fn tie_key<'a>(x: &'a str, y: &'a str) -> (&'a str, &'a str) {
    if x <= y {
        (x, y)
    } else {
        (y, x)
    }
}

/// Flat clustering of category codes. Each cluster is sorted, and clusters
/// are ordered by their smallest code; a cluster's id is its index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub clusters: Vec<Vec<String>>,
}

impl Partition {
    pub fn new(clusters: Vec<Vec<String>>) -> Self {
        let mut clusters: Vec<Vec<String>> = clusters
            .into_iter()
            .filter(|c| !c.is_empty())
            .map(|mut c| {
                c.sort();
                c
            })
            .collect();
        clusters.sort();
        Partition { clusters }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn cluster_of(&self, code: &str) -> Option<usize> {
        self.clusters
            .iter()
            .position(|c| c.binary_search_by(|x| x.as_str().cmp(code)).is_ok())
    }

    /// Same partition as a scheme with default names `cluster_<id>`.
    pub fn to_scheme(&self) -> Result<DomainScheme> {
        finalize_scheme(self, &BTreeMap::new(), &BTreeMap::new())
    }
}

/// Partition obtained by undoing the last `k - 1` merges.
pub fn cut_dendrogram(dgram: &Dendrogram, k: usize) -> Result<Partition> {
    let n = dgram.leaves.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("cut size {k} outside 1..={n}")));
    }
    // union-find over cluster ids
    let mut parent: Vec<usize> = (0..n + dgram.merges.len()).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (step, m) in dgram.merges.iter().take(n - k).enumerate() {
        let new = n + step;
        let l = root(&mut parent, m.left);
        let r = root(&mut parent, m.right);
        parent[l] = new;
        parent[r] = new;
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (leaf, code) in dgram.leaves.iter().enumerate() {
        let r = root(&mut parent, leaf);
        groups.entry(r).or_default().push(code.clone());
    }
    Ok(Partition::new(groups.into_values().collect()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StancePairCheck {
    pub positive: String,
    pub negative: String,
    pub positive_cluster: usize,
    pub negative_cluster: usize,
    pub same_cluster: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StanceReport {
    pub pairs: Vec<StancePairCheck>,
    pub violations: usize,
    pub pass: bool,
}

/// Checks that opposite-stance category pairs share a cluster.
pub fn check_stance_pairing(
    partition: &Partition,
    stance_pairs: &[(String, String)],
) -> Result<StanceReport> {
    let pairs = stance_pairs
        .iter()
        .map(|(a, b)| {
            let ca = partition.cluster_of(a).ok_or_else(|| Error::lookup("code", a))?;
            let cb = partition.cluster_of(b).ok_or_else(|| Error::lookup("code", b))?;
            Ok(StancePairCheck {
                positive: a.clone(),
                negative: b.clone(),
                positive_cluster: ca,
                negative_cluster: cb,
                same_cluster: ca == cb,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = pairs.iter().filter(|p| !p.same_cluster).count();
    Ok(StanceReport {
        pairs,
        violations,
        pass: violations == 0,
    })
}

/// Names the clusters of a partition and applies manual code assignments.
///
/// Unnamed clusters are called `cluster_<id>`; a cluster named `"other"`
/// goes to the other bucket. Overrides are applied last and move a code out
/// of whatever cluster held it. Giving two clusters the same name is an
/// error.
pub fn finalize_scheme(
    partition: &Partition,
    overrides: &BTreeMap<String, String>,
    names: &BTreeMap<usize, String>,
) -> Result<DomainScheme> {
    if let Some(id) = names.keys().find(|&&id| id >= partition.len()) {
        return Err(Error::lookup("cluster", id.to_string()));
    }
    let mut domains: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut other: BTreeSet<String> = BTreeSet::new();
    for (id, codes) in partition.clusters.iter().enumerate() {
        let name = names.get(&id).cloned().unwrap_or_else(|| format!("cluster_{id}"));
        if name == OTHER {
            other.extend(codes.iter().cloned());
            continue;
        }
        if domains.insert(name.clone(), codes.iter().cloned().collect()).is_some() {
            return Err(Error::Validation(format!(
                "domain name {name:?} assigned to more than one cluster"
            )));
        }
    }
    for (code, target) in overrides {
        if target != OTHER && !domains.contains_key(target) {
            return Err(Error::lookup("domain", target));
        }
        other.remove(code);
        for codes in domains.values_mut() {
            codes.remove(code);
        }
        if target == OTHER {
            other.insert(code.clone());
        } else {
            domains.get_mut(target).expect("checked above").insert(code.clone());
        }
    }
    DomainScheme::new(domains, other)
}
