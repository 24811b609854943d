//! Sentence embeddings: the EMB1 text format, symmetric whitening, and cosine
//! distance.
//!
//! EMB1 is a plain text format. The first line is `EMB1 <count> <dim>`; each
//! following line is a sentence id followed by `dim` space-separated decimal
//! floats. Floats are written with Rust's shortest round-trip formatting, so
//! `load -> write -> load` reproduces every value bit for bit.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const EMB1_MAGIC: &str = "EMB1";
pub const DEFAULT_EIGENVALUE_FLOOR: f64 = 1e-10;

/// Dense vectors keyed by sentence id, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingStore {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    /// Ids must be non-empty and free of whitespace, since EMB1 rows are
    /// whitespace separated.
    pub fn insert(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::Format {
                row: id,
                message: "id is empty or contains whitespace".into(),
            });
        }
        if vector.len() != self.dim {
            return Err(Error::Format {
                row: id,
                message: format!("expected {} values, found {}", self.dim, vector.len()),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format {
                row: id,
                message: "non-finite value".into(),
            });
        }
        if self.index.contains_key(&id) {
            return Err(Error::Format {
                row: id,
                message: "duplicate id".into(),
            });
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids in insertion (file) order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_owned()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?,
            None => {
                return Err(Error::Format {
                    row: "header".into(),
                    message: "empty file".into(),
                })
            }
        };
        let (count, dim) = parse_header(&header)?;
        let mut store = EmbeddingStore::new(dim)?;
        store.ids.reserve(count);
        store.data.reserve(count * dim);
        let mut row = Vec::with_capacity(dim);
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: n + 2,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_ascii_whitespace();
            let id = fields.next().expect("non-empty line has a field");
            row.clear();
            for f in fields {
                let v: f64 = f.parse().map_err(|_| Error::Format {
                    row: id.to_owned(),
                    message: format!("cannot parse {f:?} as a float"),
                })?;
                row.push(v);
            }
            store.insert(id, &row)?;
        }
        if store.len() != count {
            return Err(Error::Format {
                row: "header".into(),
                message: format!("header declares {count} rows, file has {}", store.len()),
            });
        }
        Ok(store)
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<emb1 writer>", e);
        writeln!(w, "{EMB1_MAGIC} {} {}", self.len(), self.dim).map_err(io)?;
        for (i, id) in self.ids.iter().enumerate() {
            write!(w, "{id}").map_err(io)?;
            for v in &self.data[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        Ok(())
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = |message: String| Error::Format {
        row: "header".into(),
        message,
    };
    let mut parts = line.split_ascii_whitespace();
    if parts.next() != Some(EMB1_MAGIC) {
        return Err(bad(format!("expected `{EMB1_MAGIC} <count> <dim>`, got {line:?}")));
    }
    let mut num = |what: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| bad(format!("missing or invalid {what}")))
    };
    let count = num("count")?;
    let dim = num("dim")?;
    if parts.next().is_some() {
        return Err(bad("trailing fields".into()));
    }
    Ok((count, dim))
}

/// Affine map `x -> transform * (x - mean)` that decorrelates a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningTransform {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub transform: Vec<f64>,
    pub eigenvalue_floor: f64,
}

impl WhiteningTransform {
    pub fn identity(dim: usize) -> Self {
        let mut transform = vec![0.0; dim * dim];
        for i in 0..dim {
            transform[i * dim + i] = 1.0;
        }
        WhiteningTransform {
            mean: vec![0.0; dim],
            transform,
            eigenvalue_floor: DEFAULT_EIGENVALUE_FLOOR,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fits `U diag(max(λ, floor))^{-1/2} Uᵀ` on the sample covariance
    /// (divisor `n - 1`) of the given ids.
    ///
    /// Ids are visited in sorted order and sums are accumulated sequentially,
    /// so the result does not depend on how the id set was built.
    pub fn fit<'a>(
        store: &EmbeddingStore,
        ids: impl IntoIterator<Item = &'a str>,
        eigenvalue_floor: f64,
    ) -> Result<Self> {
        if !(eigenvalue_floor > 0.0) {
            return Err(Error::Argument("eigenvalue floor must be positive".into()));
        }
        let ids: BTreeSet<&str> = ids.into_iter().collect();
        if ids.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "whitening needs at least 2 vectors, got {}",
                ids.len()
            )));
        }
        let dim = store.dim();
        let rows: Vec<&[f64]> = ids.iter().map(|id| store.require(id)).collect::<Result<_>>()?;
        let n = rows.len() as f64;

        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        let mut centered = vec![0.0; dim];
        for r in &rows {
            for (c, (v, m)) in centered.iter_mut().zip(r.iter().zip(&mean)) {
                *c = v - m;
            }
            for i in 0..dim {
                let ci = centered[i];
                for j in i..dim {
                    cov[(i, j)] += ci * centered[j];
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[(i, j)] / (n - 1.0);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }

        let eig = linalg::symmetric_eigen(cov);
        let scales = DVector::from_iterator(
            dim,
            eig.values.iter().map(|&l| l.max(eigenvalue_floor).powf(-0.5)),
        );
        let u = &eig.vectors;
        let w = u * DMatrix::from_diagonal(&scales) * u.transpose();
        let mut transform = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                // exact symmetry
                transform[i * dim + j] = if j >= i { w[(i, j)] } else { w[(j, i)] };
            }
        }
        Ok(WhiteningTransform {
            mean,
            transform,
            eigenvalue_floor,
        })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dim();
        if v.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: v.len(),
            });
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok(self
            .transform
            .chunks_exact(dim)
            .map(|row| row.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// `1 - cos(a, b)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedDistance);
    }
    Ok((1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0))
}

/// Whitened, unit-length copies of a subset of a store.
///
/// Distances between prepared vectors are `1 - a·b`, the same value
/// [`cosine_distance`] gives on the whitened vectors up to rounding.
#[derive(Debug, Clone)]
pub struct PreparedEmbeddings {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl PreparedEmbeddings {
    pub fn new<'a>(
        store: &EmbeddingStore,
        whitening: &WhiteningTransform,
        ids: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        if whitening.dim() != store.dim() {
            return Err(Error::Dimension {
                expected: store.dim(),
                found: whitening.dim(),
            });
        }
        let dim = store.dim();
        let mut index = HashMap::new();
        let mut data = Vec::new();
        for id in ids {
            if index.contains_key(id) {
                continue;
            }
            let mut w = whitening.apply(store.require(id)?)?;
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::UndefinedDistance);
            }
            w.iter_mut().for_each(|x| *x /= norm);
            index.insert(id.to_owned(), index.len());
            data.extend(w);
        }
        Ok(PreparedEmbeddings { dim, index, data })
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
            .ok_or_else(|| Error::MissingEmbedding(id.to_owned()))
    }

    /// Sequential sum of `1 - a·b` over all cross pairs, in the given order.
    pub(crate) fn cross_distance_sum(&self, left: &[&[f64]], right: &[&[f64]]) -> f64 {
        let mut sum = 0.0;
        for a in left {
            for b in right {
                let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                sum += (1.0 - dot).clamp(0.0, 2.0);
            }
        }
        sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(rows: &[(&str, &[f64])]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(rows[0].1.len()).unwrap();
        for (id, v) in rows {
            s.insert(*id, v).unwrap();
        }
        s
    }

    #[test]
    fn ids_with_whitespace_are_rejected() {
        let mut s = EmbeddingStore::new(1).unwrap();
        assert!(s.insert("a b", &[1.0]).is_err());
        assert!(s.insert("", &[1.0]).is_err());
        assert!(s.insert("<BOS>|a", &[1.0]).is_ok());
    }

    fn covariance(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = vs[0].len();
        let n = vs.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| vs.iter().map(|v| v[j]).sum::<f64>() / n).collect();
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        vs.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>()
                            / (n - 1.0)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn parses_header_and_rows() {
        let s = EmbeddingStore::read("EMB1 2 3\na 1 2 3\nb 0.5 -1e-3 4\n".as_bytes()).unwrap();
        assert_eq!((s.len(), s.dim()), (2, 3));
        assert_eq!(s.get("b").unwrap(), &[0.5, -1e-3, 4.0]);
    }

    #[test]
    fn short_row_is_named() {
        let err = EmbeddingStore::read("EMB1 2 3\na 1 2 3\nbad 1 2\n".as_bytes()).unwrap_err();
        match err {
            Error::Format { row, .. } => assert_eq!(row, "bad"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_nan_and_count_mismatch() {
        assert!(EmbeddingStore::read("EMB1 2 1\na 1\na 2\n".as_bytes()).is_err());
        assert!(EmbeddingStore::read("EMB1 1 1\na NaN\n".as_bytes()).is_err());
        assert!(EmbeddingStore::read("EMB1 1 1\na inf\n".as_bytes()).is_err());
        assert!(EmbeddingStore::read("EMB1 3 1\na 1\n".as_bytes()).is_err());
        assert!(EmbeddingStore::read("EMB2 1 1\na 1\n".as_bytes()).is_err());
        assert!(EmbeddingStore::read("".as_bytes()).is_err());
    }

    #[test]
    fn empty_store_is_fine() {
        let s = EmbeddingStore::read("EMB1 0 768\n".as_bytes()).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.dim(), 768);
    }

    #[test]
    fn cosine_basics() {
        let a = [1.0, 2.0, 3.0];
        assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-12);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((cosine_distance(&[1.0, -2.0], &[-1.0, 2.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::UndefinedDistance)
        ));
        assert!(matches!(cosine_distance(&[1.0], &[1.0, 0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn whitening_identity_fixed_point() {
        // zero mean, covariance exactly I (divisor n - 1 = 3)
        let c = (1.5f64).sqrt();
        let s = store(&[("a", &[c, 0.0]), ("b", &[-c, 0.0]), ("c", &[0.0, c]), ("d", &[0.0, -c])]);
        let t = WhiteningTransform::fit(&s, s.ids().iter().map(String::as_str), 1e-10).unwrap();
        for (got, want) in t.transform.iter().zip(WhiteningTransform::identity(2).transform) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn whitening_diagonal_closed_form() {
        // covariance diag(2/3, 8/3)
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[-1.0, 0.0]), ("c", &[0.0, 2.0]), ("d", &[0.0, -2.0])]);
        let t = WhiteningTransform::fit(&s, s.ids().iter().map(String::as_str), 1e-10).unwrap();
        assert!((t.transform[0] - (1.5f64).sqrt()).abs() < 1e-12);
        assert!((t.transform[3] - (3.0f64 / 8.0).sqrt()).abs() < 1e-12);
        let w: Vec<Vec<f64>> = s.ids().iter().map(|id| t.apply(s.get(id).unwrap()).unwrap()).collect();
        let cov = covariance(&w);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((cov[i][j] - want).abs() < 1e-9, "{cov:?}");
            }
        }
    }

    #[test]
    fn whitening_rank_deficient_uses_floor() {
        // all points on the x axis in 3-D
        let s = store(&[("a", &[1.0, 0.0, 0.0]), ("b", &[2.0, 0.0, 0.0]), ("c", &[3.0, 0.0, 0.0])]);
        let floor = 1e-10;
        let t = WhiteningTransform::fit(&s, s.ids().iter().map(String::as_str), floor).unwrap();
        // y and z directions have zero variance and get scaled by floor^{-1/2}
        assert!((t.transform[4] - floor.powf(-0.5)).abs() / floor.powf(-0.5) < 1e-9);
        assert!((t.transform[8] - floor.powf(-0.5)).abs() / floor.powf(-0.5) < 1e-9);
        assert!((t.transform[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn whitening_needs_two_vectors() {
        let s = store(&[("a", &[1.0, 2.0])]);
        assert!(matches!(
            WhiteningTransform::fit(&s, ["a"], 1e-10),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            WhiteningTransform::fit(&s, ["a", "zz"], 1e-10),
            Err(Error::MissingEmbedding(_))
        ));
    }

    #[test]
    fn apply_rules() {
        let s = store(&[("a", &[1.0, 5.0]), ("b", &[3.0, 1.0]), ("c", &[2.0, 0.0])]);
        let t = WhiteningTransform::fit(&s, ["a", "b", "c"], 1e-10).unwrap();
        let at_mean = t.apply(&t.mean.clone()).unwrap();
        assert!(at_mean.iter().all(|v| *v == 0.0));
        let id = WhiteningTransform::identity(2);
        assert_eq!(id.apply(&[3.5, -2.0]).unwrap(), vec![3.5, -2.0]);
        assert!(matches!(id.apply(&[1.0]), Err(Error::Dimension { .. })));
    }
}
