#![allow(dead_code)]

use manidecomp::{Corpus, EmbeddingStore, Sentence};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| normal(rng)).collect()
}

pub fn sentence(id: &str, party: &str, position: u64, code: Option<&str>) -> Sentence {
    Sentence {
        id: id.into(),
        party: party.into(),
        election_date: "2021-09".into(),
        position,
        text: format!("text of {id}"),
        code: code.map(Into::into),
    }
}

/// Corpus with one party per entry of `parties`, each sentence drawing its
/// code uniformly from `codes`, plus a store of Gaussian vectors for it.
pub fn random_corpus(
    rng: &mut ChaCha8Rng,
    parties: &[&str],
    per_party: usize,
    codes: &[&str],
    dim: usize,
) -> (Corpus, EmbeddingStore) {
    let mut sentences = Vec::new();
    let mut store = EmbeddingStore::new(dim).unwrap();
    for p in parties {
        for k in 0..per_party {
            let id = format!("{p}-{k}");
            let code = codes[rng.random_range(0..codes.len())];
            sentences.push(sentence(&id, p, k as u64, Some(code)));
            store.insert(id, &normal_vec(rng, dim)).unwrap();
        }
    }
    (Corpus::from_sentences(sentences).unwrap(), store)
}

/// Whitened, unit-normalised copy of one stored vector.
pub fn whitened_unit(store: &EmbeddingStore, w: &manidecomp::WhiteningTransform, id: &str) -> Vec<f64> {
    let v = w.apply(store.get(id).unwrap()).unwrap();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}
