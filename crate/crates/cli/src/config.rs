//! Run configuration: one JSON file shared by every subcommand.
//!
//! Relative paths are resolved against the directory holding the config
//! file, so a config and its inputs can be moved together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use manidecomp::embedding::DEFAULT_EIGENVALUE_FLOOR;
use manidecomp::grouping::{DEFAULT_CLUSTERS, DEFAULT_MIN_COUNT};
use manidecomp::labeling::LogRegConfig;
use manidecomp::scaling::DEFAULT_PERMUTATIONS;
use manidecomp::similarity::Aggregation;
use manidecomp::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus whose parties are compared.
    pub analysis_corpus: PathBuf,
    /// Annotated corpus the labeller learns from; defaults to the analysis
    /// corpus.
    #[serde(default)]
    pub train_corpus: Option<PathBuf>,
    /// EMB1 file keyed by sentence id.
    pub sentence_embeddings: PathBuf,
    /// EMB1 file keyed by `prev|cur` for the analysis corpus.
    #[serde(default)]
    pub bigram_embeddings: Option<PathBuf>,
    /// EMB1 bigram file for the training corpus; defaults to
    /// `bigram_embeddings`.
    #[serde(default)]
    pub train_bigram_embeddings: Option<PathBuf>,
    /// Domain scheme JSON. Without it, later stages rebuild the scheme from
    /// the partition written by `group`.
    #[serde(default)]
    pub scheme: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub grouping: GroupingConfig,
    #[serde(default)]
    pub labeller: LabellerConfig,
    #[serde(default)]
    pub whitening: WhiteningConfig,
    #[serde(default)]
    pub similarity: SimilarityConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    pub min_count: usize,
    pub k: usize,
    /// `(positive, negative)` category code pairs expected to share a domain.
    pub stance_pairs: Vec<(String, String)>,
    /// Code to domain name (or `"other"`), applied after the cut.
    pub overrides: BTreeMap<String, String>,
    /// Cluster id to domain name.
    pub names: BTreeMap<usize, String>,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            min_count: DEFAULT_MIN_COUNT,
            k: DEFAULT_CLUSTERS,
            stance_pairs: Vec::new(),
            overrides: BTreeMap::new(),
            names: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabellerKind {
    Majority,
    #[default]
    LogisticRegression,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabellerConfig {
    pub kind: LabellerKind,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: Option<u64>,
    /// Trailing share of every training manifesto held out for validation.
    pub validation_fraction: f64,
}

impl Default for LabellerConfig {
    fn default() -> Self {
        let lr = LogRegConfig::default();
        LabellerConfig {
            kind: LabellerKind::default(),
            epochs: lr.epochs,
            lr: lr.lr,
            l2: lr.l2,
            seed: lr.seed,
            validation_fraction: 0.0,
        }
    }
}

impl LabellerConfig {
    pub fn logreg(&self) -> LogRegConfig {
        LogRegConfig {
            epochs: self.epochs,
            lr: self.lr,
            l2: self.l2,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhiteningConfig {
    pub enabled: bool,
    pub eigenvalue_floor: f64,
}

impl Default for WhiteningConfig {
    fn default() -> Self {
        WhiteningConfig {
            enabled: true,
            eigenvalue_floor: DEFAULT_EIGENVALUE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub rile: bool,
    pub salience: bool,
    /// Compare annotated and predicted matrices when both exist.
    pub compare_predicted: bool,
    pub n_permutations: usize,
    pub seed: u64,
    /// JSON `{"right": [...], "left": [...]}`; the standard lists otherwise.
    pub rile_codes: Option<PathBuf>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            rile: true,
            salience: true,
            compare_predicted: true,
            n_permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            rile_codes: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.analysis_corpus);
        join(&mut self.sentence_embeddings);
        join(&mut self.output_dir);
        for p in [
            &mut self.train_corpus,
            &mut self.bigram_embeddings,
            &mut self.train_bigram_embeddings,
            &mut self.scheme,
            &mut self.evaluation.rile_codes,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }

    /// Referenced input files exist and parameters are in range.
    pub fn validate(&self) -> Result<()> {
        let inputs = [
            Some(&self.analysis_corpus),
            Some(&self.sentence_embeddings),
            self.train_corpus.as_ref(),
            self.bigram_embeddings.as_ref(),
            self.train_bigram_embeddings.as_ref(),
            self.scheme.as_ref(),
            self.evaluation.rile_codes.as_ref(),
        ];
        for p in inputs.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Validation(format!("input file {} does not exist", p.display())));
            }
        }
        if self.grouping.min_count < 1 {
            return Err(Error::Validation("grouping.min_count must be at least 1".into()));
        }
        if self.grouping.k < 2 {
            return Err(Error::Validation("grouping.k must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.labeller.validation_fraction) {
            return Err(Error::Validation("labeller.validation_fraction must be in [0, 1)".into()));
        }
        if !(self.whitening.eigenvalue_floor > 0.0) {
            return Err(Error::Validation("whitening.eigenvalue_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn train_corpus(&self) -> &Path {
        self.train_corpus.as_deref().unwrap_or(&self.analysis_corpus)
    }

    pub fn bigram_embeddings(&self) -> Result<&Path> {
        self.bigram_embeddings
            .as_deref()
            .ok_or_else(|| Error::Validation("config has no bigram_embeddings".into()))
    }

    pub fn train_bigram_embeddings(&self) -> Result<&Path> {
        match &self.train_bigram_embeddings {
            Some(p) => Ok(p),
            None => self.bigram_embeddings(),
        }
    }
}
