//! Synthetic corpora with planted party positions, written to a temp dir
//! together with embeddings, a scheme and a run config.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use manidecomp::{EmbeddingStore, Sentence};
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

/// Per domain, the first code is the right-leaning one where RILE has a
/// preference.
pub const DOMAINS: [(&str, [&str; 2]); 4] = [
    ("economy", ["401", "403"]),
    ("environment", ["501", "416.2"]),
    ("security", ["104", "105"]),
    ("welfare", ["505", "504"]),
];

#[derive(Debug, Clone)]
pub struct Spec {
    pub parties: usize,
    pub per_domain: usize,
    /// Sentences per party coded `"0"`.
    pub other: usize,
    pub dim: usize,
    pub noise: f64,
    /// Distance between the means of the two extreme parties of a domain,
    /// relative to unit noise, is `spread * sqrt(2)`.
    pub spread: f64,
    pub seed: u64,
    /// `(party, domain)` cells left without sentences.
    pub holes: Vec<(usize, usize)>,
    /// Leave every sentence uncoded.
    pub uncoded: bool,
}

impl Default for Spec {
    fn default() -> Self {
        Spec {
            parties: 6,
            per_domain: 60,
            other: 10,
            dim: 40,
            noise: 1.0,
            spread: 6.0,
            seed: 0,
            holes: Vec::new(),
            uncoded: false,
        }
    }
}

pub struct Landscape {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
    pub parties: Vec<String>,
    pub domains: Vec<String>,
    /// `positions[domain][party]`.
    pub positions: Vec<Vec<f64>>,
    /// Gold domain label (or `"other"`) of every sentence.
    pub gold: BTreeMap<String, String>,
    pub sentence_ids: Vec<String>,
}

impl Landscape {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn out(&self) -> PathBuf {
        self.root().join("out")
    }

    /// Mean absolute planted difference over domains.
    pub fn planted_aggregate(&self) -> Vec<Vec<f64>> {
        let n = self.parties.len();
        let mut d = vec![vec![0.0; n]; n];
        for pos in &self.positions {
            for i in 0..n {
                for j in 0..n {
                    d[i][j] += (pos[i] - pos[j]).abs() / self.positions.len() as f64;
                }
            }
        }
        d
    }

    /// Rewrites `run.json` after applying `edit` to its JSON.
    pub fn edit_config(&self, edit: impl FnOnce(&mut Value)) {
        let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&self.config).unwrap()).unwrap();
        edit(&mut v);
        std::fs::write(&self.config, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `count` orthonormal vectors (Gram-Schmidt on Gaussian draws).
fn orthonormal(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    assert!(count <= dim, "{count} directions need dim >= {count}");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = unit(rng, dim);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Party means per domain. A party at rank `r` sits at the domain centroid
/// plus `±step/2` along each of `n - 1` orthogonal directions, `+` for the
/// first `r` of them. All means are then equally far from the centroid, and
/// the squared distance between two means is `spread^2 * |x_p - x_q|`.
/// Cosine distance between noisy vectors of equal expected norm is affine in
/// that squared distance, so expected domain distances are affine in the
/// planted ones.
fn party_means(rng: &mut ChaCha8Rng, spec: &Spec, ranks: &[Vec<usize>]) -> (Vec<Vec<Vec<f64>>>, Vec<f64>) {
    let n = spec.parties;
    let steps = n.saturating_sub(1);
    let mut dirs = orthonormal(rng, spec.dim, DOMAINS.len() + 1 + DOMAINS.len() * steps).into_iter();
    let centroids: Vec<Vec<f64>> =
        (0..=DOMAINS.len()).map(|_| dirs.next().unwrap().iter().map(|x| 6.0 * x).collect()).collect();
    let step_len = if steps > 0 { spec.spread * (2.0 / steps as f64).sqrt() } else { 0.0 };
    let means = ranks
        .iter()
        .enumerate()
        .map(|(d, ranks)| {
            let walk: Vec<Vec<f64>> = (0..steps).map(|_| dirs.next().unwrap()).collect();
            ranks
                .iter()
                .map(|&r| {
                    let mut m = centroids[d].clone();
                    for (k, step) in walk.iter().enumerate() {
                        let sign = if k < r { 0.5 } else { -0.5 };
                        m.iter_mut().zip(step).for_each(|(x, s)| *x += sign * step_len * s);
                    }
                    m
                })
                .collect()
        })
        .collect();
    (means, centroids[DOMAINS.len()].clone())
}

/// Parties get evenly spaced positions in `[-1, 1]`, shuffled per domain;
/// each sentence is its party's domain mean plus Gaussian noise.
pub fn landscape(spec: &Spec) -> Landscape {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let n = spec.parties;
    let parties: Vec<String> = (0..n).map(|i| format!("party_{}", (b'a' + i as u8) as char)).collect();
    let ranks: Vec<Vec<usize>> = (0..DOMAINS.len())
        .map(|_| {
            let mut r: Vec<usize> = (0..n).collect();
            r.shuffle(&mut rng);
            r
        })
        .collect();
    let positions: Vec<Vec<f64>> = ranks
        .iter()
        .map(|r| r.iter().map(|&k| if n > 1 { -1.0 + 2.0 * k as f64 / (n - 1) as f64 } else { 0.0 }).collect())
        .collect();
    let (means, other_mean) = party_means(&mut rng, spec, &ranks);

    let mut sentences = Vec::new();
    let mut vectors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut gold = BTreeMap::new();
    for (pi, party) in parties.iter().enumerate() {
        // (domain index or None for other, code)
        let mut slots: Vec<(Option<usize>, &str)> = Vec::new();
        for (di, (_, codes)) in DOMAINS.iter().enumerate() {
            if spec.holes.contains(&(pi, di)) {
                continue;
            }
            // counts vary by cell; the first code's share follows the position
            let n = spec.per_domain + 2 * ((pi * 7 + di * 3) % 5);
            let first = (n as f64 * (0.5 + 0.4 * positions[di][pi])).round() as usize;
            for k in 0..n {
                slots.push((Some(di), codes[usize::from(k >= first)]));
            }
        }
        slots.extend(std::iter::repeat_n((None, "0"), spec.other));
        slots.shuffle(&mut rng);
        for (pos, (domain, code)) in slots.into_iter().enumerate() {
            let id = format!("{party}-{pos:03}");
            let mut v = match domain {
                Some(d) => means[d][pi].clone(),
                None => other_mean.clone(),
            };
            v.iter_mut().for_each(|x| *x += spec.noise * normal(&mut rng));
            vectors.insert(id.clone(), v);
            gold.insert(id.clone(), domain.map_or("other".to_string(), |d| DOMAINS[d].0.to_string()));
            sentences.push(Sentence {
                id,
                party: party.clone(),
                election_date: "2021-09".into(),
                position: pos as u64,
                text: format!("sentence {pos} of {party}"),
                code: (!spec.uncoded).then(|| code.to_string()),
            });
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut corpus = String::new();
    for s in &sentences {
        corpus.push_str(&serde_json::to_string(s).unwrap());
        corpus.push('\n');
    }
    std::fs::write(root.join("corpus.jsonl"), corpus).unwrap();

    let mut store = EmbeddingStore::new(dim).unwrap();
    let mut bigrams = EmbeddingStore::new(2 * dim).unwrap();
    let zero = vec![0.0; dim];
    let mut prev: Option<&Sentence> = None;
    for s in &sentences {
        store.insert(s.id.clone(), &vectors[&s.id]).unwrap();
        let p = prev.filter(|p| p.party == s.party);
        let key = format!("{}|{}", p.map_or("<BOS>", |p| p.id.as_str()), s.id);
        let pv = p.map_or(&zero, |p| &vectors[&p.id]);
        let pair: Vec<f64> = vectors[&s.id].iter().chain(pv.iter()).copied().collect();
        bigrams.insert(key, &pair).unwrap();
        prev = Some(s);
    }
    let mut buf = Vec::new();
    store.write(&mut buf).unwrap();
    std::fs::write(root.join("sentences.emb1"), &buf).unwrap();
    buf.clear();
    bigrams.write(&mut buf).unwrap();
    std::fs::write(root.join("bigrams.emb1"), &buf).unwrap();

    let scheme = json!({
        "domains": DOMAINS.iter().map(|(d, c)| (d.to_string(), json!(c))).collect::<serde_json::Map<_, _>>(),
        "other": ["0"],
    });
    std::fs::write(root.join("scheme.json"), serde_json::to_string_pretty(&scheme).unwrap()).unwrap();

    let config = json!({
        "analysis_corpus": "corpus.jsonl",
        "sentence_embeddings": "sentences.emb1",
        "bigram_embeddings": "bigrams.emb1",
        "scheme": "scheme.json",
        "output_dir": "out",
        "grouping": {"min_count": 5, "k": 4},
        "labeller": {"epochs": 60, "lr": 0.5},
        "evaluation": {"n_permutations": 199},
    });
    let config_path = root.join("run.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    Landscape {
        dir,
        config: config_path,
        parties,
        domains: DOMAINS.iter().map(|(d, _)| d.to_string()).collect(),
        positions,
        gold,
        sentence_ids: sentences.iter().map(|s| s.id.clone()).collect(),
    }
}

/// Writes `predictions.jsonl` from a label map, in id order.
pub fn write_predictions(dir: &Path, labels: &BTreeMap<String, String>) {
    std::fs::create_dir_all(dir).unwrap();
    let mut s = String::new();
    for (id, label) in labels {
        s.push_str(&json!({"id": id, "predicted_domain": label}).to_string());
        s.push('\n');
    }
    std::fs::write(dir.join("predictions.jsonl"), s).unwrap();
}

/// Relabels `fraction` of the sentences to a different label, chosen at
/// random.
pub fn corrupt(labels: &BTreeMap<String, String>, fraction: f64, seed: u64) -> BTreeMap<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choices: Vec<&str> = DOMAINS.iter().map(|(d, _)| *d).chain(["other"]).collect();
    let mut ids: Vec<&String> = labels.keys().collect();
    ids.shuffle(&mut rng);
    let n = (labels.len() as f64 * fraction).round() as usize;
    let mut out = labels.clone();
    for id in ids.into_iter().take(n) {
        let current = labels[id].as_str();
        let others: Vec<&str> = choices.iter().copied().filter(|c| *c != current).collect();
        out.insert(id.clone(), others[rng.random_range(0..others.len())].to_string());
    }
    out
}

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_manidecomp"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

/// Every file under `dir`, relative path to bytes.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_owned(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
