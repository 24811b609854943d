//! Policy-domain labelling of sentences from bigram embeddings.
//!
//! Each sentence is represented by the embedding of itself concatenated with
//! its predecessor in the same manifesto; the first sentence of a manifesto
//! is paired with a `<BOS>` sentinel. The label of the predecessor is never
//! used as a feature.
//!
//! Two classifiers are provided: a majority baseline and multinomial logistic
//! regression trained by full-batch gradient descent on softmax cross-entropy
//! with an L2 penalty on the non-bias weights.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DomainScheme, ManifestoKey};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};

pub const BOS: &str = "<BOS>";

/// Instances per gradient shard. Fixed so that the reduction order does not
/// depend on the number of threads.
const SHARD: usize = 256;

/// Key under which the adapter stores the embedding of `(prev, cur)`.
pub fn bigram_key(prev: Option<&str>, cur: &str) -> String {
    format!("{}|{}", prev.unwrap_or(BOS), cur)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BigramInstance {
    /// Id of the second sentence of the pair.
    pub id: String,
    pub manifesto: ManifestoKey,
    pub pair_embedding: Vec<f64>,
    pub label: Option<String>,
}

/// One instance per sentence, manifesto by manifesto in position order.
///
/// With a scheme, coded sentences get their domain label (or `"other"`);
/// uncoded sentences stay unlabelled.
pub fn make_bigrams(
    corpus: &Corpus,
    store: &EmbeddingStore,
    scheme: Option<&DomainScheme>,
) -> Result<Vec<BigramInstance>> {
    let mut out = Vec::with_capacity(corpus.len());
    for (key, sentences) in corpus.manifestos() {
        let mut prev: Option<&str> = None;
        for s in sentences {
            let bkey = bigram_key(prev, &s.id);
            let v = store.get(&bkey).ok_or_else(|| Error::MissingEmbedding(bkey.clone()))?;
            out.push(BigramInstance {
                id: s.id.clone(),
                manifesto: key.clone(),
                pair_embedding: v.to_vec(),
                label: scheme.and_then(|sch| s.code.as_deref().map(|c| sch.label_of(c).to_owned())),
            });
            prev = Some(&s.id);
        }
    }
    Ok(out)
}

/// Splits off the trailing `fraction` of every manifesto as validation data.
pub fn split_validation(
    instances: &[BigramInstance],
    fraction: f64,
) -> Result<(Vec<BigramInstance>, Vec<BigramInstance>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Argument(format!("validation fraction {fraction} outside [0, 1)")));
    }
    let mut per_manifesto: BTreeMap<&ManifestoKey, usize> = BTreeMap::new();
    for inst in instances {
        *per_manifesto.entry(&inst.manifesto).or_default() += 1;
    }
    let mut seen: BTreeMap<&ManifestoKey, usize> = BTreeMap::new();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for inst in instances {
        let total = per_manifesto[&inst.manifesto];
        let held_out = (total as f64 * fraction).floor() as usize;
        let pos = seen.entry(&inst.manifesto).or_default();
        if *pos >= total - held_out {
            val.push(inst.clone());
        } else {
            train.push(inst.clone());
        }
        *pos += 1;
    }
    Ok((train, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Majority,
    LogisticRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub kind: ModelKind,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate after any step-size halvings.
    pub final_learning_rate: f64,
    pub l2: f64,
    pub seed: Option<u64>,
    pub n_instances: usize,
    pub final_loss: Option<f64>,
}

/// Linear softmax classifier. `weights` is row-major `classes x (dim + 1)`,
/// the last column of each row being the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub classes: Vec<String>,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub meta: TrainingMeta,
}

impl ClassifierModel {
    fn row(&self, k: usize) -> &[f64] {
        let w = self.dim + 1;
        &self.weights[k * w..(k + 1) * w]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok((0..self.classes.len()).map(|k| affine(self.row(k), x)).collect())
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.scores(x)?;
        softmax_in_place(&mut s);
        Ok(s)
    }

    /// Highest-scoring class; ties go to the earlier class.
    pub fn predict_one(&self, x: &[f64]) -> Result<&str> {
        let s = self.scores(x)?;
        let mut best = 0;
        for (k, v) in s.iter().enumerate().skip(1) {
            if *v > s[best] {
                best = k;
            }
        }
        Ok(&self.classes[best])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ClassifierModel = serde_json::from_str(s)?;
        if m.classes.is_empty() || m.weights.len() != m.classes.len() * (m.dim + 1) {
            return Err(Error::Validation("model weights do not match classes and dim".into()));
        }
        Ok(m)
    }
}

fn affine(row: &[f64], x: &[f64]) -> f64 {
    let (w, b) = row.split_at(x.len());
    w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[0]
}

fn softmax_in_place(s: &mut [f64]) {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    s.iter_mut().for_each(|v| *v /= z);
}

fn labelled(instances: &[BigramInstance]) -> Vec<(&BigramInstance, &str)> {
    instances
        .iter()
        .filter_map(|i| i.label.as_deref().map(|l| (i, l)))
        .collect()
}

fn common_dim(instances: &[BigramInstance]) -> Result<usize> {
    let dim = instances.first().map_or(0, |i| i.pair_embedding.len());
    for i in instances {
        if i.pair_embedding.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: i.pair_embedding.len(),
            });
        }
    }
    Ok(dim)
}

/// Always predicts the most frequent training label; ties go to the
/// lexicographically smaller label.
pub fn train_majority(instances: &[BigramInstance]) -> Result<ClassifierModel> {
    let data = labelled(instances);
    if data.is_empty() {
        return Err(Error::Training("no labelled instances".into()));
    }
    let dim = common_dim(instances)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, l) in &data {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates in label order, so the first maximum wins ties
    let mut modal = "";
    let mut best = 0;
    for (&l, &c) in &counts {
        if c > best {
            modal = l;
            best = c;
        }
    }
    let classes: Vec<String> = counts.keys().map(|s| s.to_string()).collect();
    let mut weights = vec![0.0; classes.len() * (dim + 1)];
    let k = classes.iter().position(|c| c == modal).expect("modal class present");
    weights[k * (dim + 1) + dim] = 1.0;
    Ok(ClassifierModel {
        classes,
        dim,
        weights,
        meta: TrainingMeta {
            kind: ModelKind::Majority,
            epochs: 0,
            learning_rate: 0.0,
            final_learning_rate: 0.0,
            l2: 0.0,
            seed: None,
            n_instances: data.len(),
            final_loss: None,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    /// `None` initialises all weights to zero.
    pub seed: Option<u64>,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            epochs: 300,
            lr: 0.1,
            l2: 1e-4,
            seed: None,
        }
    }
}

/// Training objective: mean softmax cross-entropy plus `l2 / 2 * |W|^2` over
/// the non-bias weights.
pub struct Objective<'a> {
    xs: Vec<&'a [f64]>,
    ys: Vec<usize>,
    n_classes: usize,
    dim: usize,
    l2: f64,
}

impl<'a> Objective<'a> {
    /// `classes` fixes the row order of the weight matrix.
    pub fn new(instances: &'a [BigramInstance], classes: &[String], l2: f64) -> Result<Self> {
        let dim = common_dim(instances)?;
        let index: BTreeMap<&str, usize> =
            classes.iter().enumerate().map(|(k, c)| (c.as_str(), k)).collect();
        let mut xs = Vec::with_capacity(instances.len());
        let mut ys = Vec::with_capacity(instances.len());
        for inst in instances {
            let label = inst
                .label
                .as_deref()
                .ok_or_else(|| Error::Training(format!("instance {:?} has no label", inst.id)))?;
            let k = *index.get(label).ok_or_else(|| Error::lookup("class", label))?;
            xs.push(inst.pair_embedding.as_slice());
            ys.push(k);
        }
        Ok(Objective {
            xs,
            ys,
            n_classes: classes.len(),
            dim,
            l2,
        })
    }

    pub fn n_weights(&self) -> usize {
        self.n_classes * (self.dim + 1)
    }

    /// Loss and gradient at `weights`.
    ///
    /// Shards of [`SHARD`] instances are evaluated in parallel and merged in
    /// shard order, so the result is bitwise independent of thread count.
    pub fn loss_and_gradient(&self, weights: &[f64]) -> (f64, Vec<f64>) {
        let width = self.dim + 1;
        let n = self.xs.len();
        let partials: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(SHARD))
            .into_par_iter()
            .map(|s| {
                let mut loss = 0.0;
                let mut grad = vec![0.0; weights.len()];
                let mut p = vec![0.0; self.n_classes];
                for i in s * SHARD..((s + 1) * SHARD).min(n) {
                    let x = self.xs[i];
                    for (k, pk) in p.iter_mut().enumerate() {
                        *pk = affine(&weights[k * width..(k + 1) * width], x);
                    }
                    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    loss += lse - p[self.ys[i]];
                    for (k, pk) in p.iter().enumerate() {
                        let r = (pk - lse).exp() - if k == self.ys[i] { 1.0 } else { 0.0 };
                        let g = &mut grad[k * width..(k + 1) * width];
                        for (gj, xj) in g.iter_mut().zip(x) {
                            *gj += r * xj;
                        }
                        g[self.dim] += r;
                    }
                }
                (loss, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; weights.len()];
        for (l, g) in partials {
            loss += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let inv_n = 1.0 / n as f64;
        loss *= inv_n;
        grad.iter_mut().for_each(|g| *g *= inv_n);
        for k in 0..self.n_classes {
            for j in 0..self.dim {
                let w = weights[k * width + j];
                loss += 0.5 * self.l2 * w * w;
                grad[k * width + j] += self.l2 * w;
            }
        }
        (loss, grad)
    }
}

/// Multinomial logistic regression by full-batch gradient descent.
///
/// The loss must not increase between epochs. When it does, the step is
/// undone, the learning rate halved, and a warning logged.
pub fn train_logreg(instances: &[BigramInstance], config: &LogRegConfig) -> Result<ClassifierModel> {
    if instances.iter().any(|i| i.label.is_none()) {
        return Err(Error::Training("all training instances must be labelled".into()));
    }
    if !(config.lr > 0.0) || !(config.l2 >= 0.0) {
        return Err(Error::Argument("lr must be positive and l2 non-negative".into()));
    }
    let classes: Vec<String> = instances
        .iter()
        .filter_map(|i| i.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::Training(format!(
            "logistic regression needs at least 2 classes, found {}",
            classes.len()
        )));
    }
    let objective = Objective::new(instances, &classes, config.l2)?;
    let mut weights = vec![0.0; objective.n_weights()];
    if let Some(seed) = config.seed {
        use rand::RngExt;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        weights.iter_mut().for_each(|w| *w = 0.01 * (rng.random::<f64>() - 0.5));
    }

    let mut lr = config.lr;
    let (mut loss, mut grad) = objective.loss_and_gradient(&weights);
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, lr });
    }
    let mut epoch = 0;
    let mut halvings = 0;
    while epoch < config.epochs {
        let candidate: Vec<f64> = weights.iter().zip(&grad).map(|(w, g)| w - lr * g).collect();
        let (new_loss, new_grad) = objective.loss_and_gradient(&candidate);
        if !new_loss.is_finite() {
            return Err(Error::Divergence { epoch: epoch + 1, lr });
        }
        if new_loss > loss {
            halvings += 1;
            if halvings > 60 {
                return Err(Error::Divergence { epoch: epoch + 1, lr });
            }
            lr *= 0.5;
            log::warn!("loss rose at epoch {} ({loss} -> {new_loss}); halving lr to {lr}", epoch + 1);
            continue;
        }
        weights = candidate;
        loss = new_loss;
        grad = new_grad;
        epoch += 1;
    }
    Ok(ClassifierModel {
        classes,
        dim: objective.dim,
        weights,
        meta: TrainingMeta {
            kind: ModelKind::LogisticRegression,
            epochs: config.epochs,
            learning_rate: config.lr,
            final_learning_rate: lr,
            l2: config.l2,
            seed: config.seed,
            n_instances: instances.len(),
            final_loss: Some(loss),
        },
    })
}

pub fn predict(model: &ClassifierModel, instances: &[BigramInstance]) -> Result<BTreeMap<String, String>> {
    instances
        .iter()
        .map(|i| Ok((i.id.clone(), model.predict_one(&i.pair_embedding)?.to_owned())))
        .collect()
}

/// Fraction of gold keys predicted correctly. With `restrict`, only gold
/// keys labelled with that domain are scored. Missing predictions count as
/// wrong.
pub fn accuracy(
    pred: &BTreeMap<String, String>,
    gold: &BTreeMap<String, String>,
    restrict: Option<&str>,
) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for (id, g) in gold {
        if restrict.is_some_and(|r| r != g) {
            continue;
        }
        total += 1;
        if pred.get(id) == Some(g) {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric(match restrict {
            Some(r) => format!("no gold labels for domain {r:?}"),
            None => "no gold labels".into(),
        }));
    }
    Ok(correct as f64 / total as f64)
}

/// Overall and per-domain accuracy of a set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: f64,
    /// Accuracy restricted to sentences whose gold label is the domain.
    pub per_domain: BTreeMap<String, f64>,
    pub n_gold: usize,
    pub n_predicted: usize,
}

pub fn accuracy_report(pred: &BTreeMap<String, String>, gold: &BTreeMap<String, String>) -> Result<AccuracyReport> {
    let overall = accuracy(pred, gold, None)?;
    let domains: BTreeSet<&str> = gold.values().map(String::as_str).collect();
    let per_domain = domains
        .into_iter()
        .map(|d| Ok((d.to_owned(), accuracy(pred, gold, Some(d))?)))
        .collect::<Result<_>>()?;
    Ok(AccuracyReport {
        overall,
        per_domain,
        n_gold: gold.len(),
        n_predicted: pred.len(),
    })
}
