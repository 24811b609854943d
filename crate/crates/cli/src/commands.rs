//! The four workflow stages. Stages talk to each other only through files in
//! the output directory.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use manidecomp::grouping::{self, Partition};
use manidecomp::labeling::{self, ClassifierModel};
use manidecomp::report::{self, EvaluationReport, EvaluationSettings};
use manidecomp::scaling::RileCodes;
use manidecomp::similarity::{self, DomainSlices, Labels, AGGREGATE_TAG};
use manidecomp::{Corpus, CorpusFormat, DomainScheme, EmbeddingStore, Error, PartyDistanceMatrix, WhiteningTransform};
use serde::{Deserialize, Serialize};

use crate::config::{LabellerKind, RunConfig};
use crate::Failure;

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const ACCURACY_FILE: &str = "accuracy.json";
pub const PARTITION_FILE: &str = "partition.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LabelSource {
    Annotated,
    Predicted,
}

impl LabelSource {
    fn name(self) -> &'static str {
        match self {
            LabelSource::Annotated => "annotated",
            LabelSource::Predicted => "predicted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LabelMode {
    Train,
    Predict,
    Eval,
}

#[derive(Serialize, Deserialize)]
struct Prediction {
    id: String,
    predicted_domain: String,
}

/// One entry of a similarity directory's `index.json`.
#[derive(Debug, Serialize, Deserialize)]
struct MatrixFile {
    domain: String,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimilarityIndex {
    labels: String,
    aggregation: similarity::Aggregation,
    domains: Vec<MatrixFile>,
    aggregate: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FullReport {
    annotated: Option<EvaluationReport>,
    predicted: Option<EvaluationReport>,
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Failure::internal(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::internal(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::internal(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CmdResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())).into())
}

fn load_corpus(path: &Path) -> CmdResult<Corpus> {
    Ok(Corpus::load(path, CorpusFormat::from_path(path))?)
}

fn load_store(path: &Path) -> CmdResult<EmbeddingStore> {
    Ok(EmbeddingStore::load(path)?)
}

/// Whitening fitted on every sentence of the corpus, or the identity.
fn whitening(cfg: &RunConfig, corpus: &Corpus, store: &EmbeddingStore) -> CmdResult<WhiteningTransform> {
    if !cfg.whitening.enabled {
        return Ok(WhiteningTransform::identity(store.dim()));
    }
    Ok(WhiteningTransform::fit(
        store,
        corpus.sentences().iter().map(|s| s.id.as_str()),
        cfg.whitening.eigenvalue_floor,
    )?)
}

fn scheme(cfg: &RunConfig) -> CmdResult<DomainScheme> {
    if let Some(path) = &cfg.scheme {
        return Ok(DomainScheme::load(path)?);
    }
    let partition_path = cfg.output_dir.join(PARTITION_FILE);
    if !partition_path.is_file() {
        return Err(Error::Validation(format!(
            "no scheme in the config and no {} from a previous `group` run",
            partition_path.display()
        ))
        .into());
    }
    let partition: Partition = read_json(&partition_path)?;
    Ok(grouping::finalize_scheme(
        &partition,
        &cfg.grouping.overrides,
        &cfg.grouping.names,
    )?)
}

pub fn group(cfg: &RunConfig) -> CmdResult {
    let corpus = load_corpus(&cfg.analysis_corpus)?;
    let store = load_store(&cfg.sentence_embeddings)?;
    let w = whitening(cfg, &corpus, &store)?;
    let report = grouping::build_category_matrix(&corpus, &store, &w, cfg.grouping.min_count)?;
    let n = report.matrix.len();
    if cfg.grouping.k > n {
        return Err(Error::Argument(format!(
            "grouping.k = {} exceeds the {n} categories that reach min_count",
            cfg.grouping.k
        ))
        .into());
    }
    let dendrogram = grouping::average_linkage_cluster(&report.matrix);
    let partition = grouping::cut_dendrogram(&dendrogram, cfg.grouping.k)?;
    // surface naming mistakes now rather than in a later stage
    grouping::finalize_scheme(&partition, &cfg.grouping.overrides, &cfg.grouping.names)?;

    let out = &cfg.output_dir;
    write_file(&out.join("category_matrix.csv"), report.matrix.to_csv().as_bytes())?;
    write_json(&out.join("dendrogram.json"), &dendrogram)?;
    write_json(&out.join(PARTITION_FILE), &partition)?;
    write_json(&out.join("leftovers.json"), &report.leftovers)?;

    if !cfg.grouping.stance_pairs.is_empty() {
        let stance = grouping::check_stance_pairing(&partition, &cfg.grouping.stance_pairs)?;
        if !stance.pass {
            log::warn!("{} stance pair(s) split across clusters", stance.violations);
        }
        let text = serde_json::to_string_pretty(&stance).map_err(|e| Failure::internal(e.to_string()))?;
        println!("{text}");
    }
    Ok(())
}

pub fn label(cfg: &RunConfig, mode: LabelMode) -> CmdResult {
    match mode {
        LabelMode::Train => label_train(cfg),
        LabelMode::Predict => label_predict(cfg),
        LabelMode::Eval => label_eval(cfg),
    }
}

fn label_train(cfg: &RunConfig) -> CmdResult {
    let corpus = load_corpus(cfg.train_corpus())?;
    let store = load_store(cfg.train_bigram_embeddings()?)?;
    let scheme = scheme(cfg)?;
    let labelled: Vec<_> = labeling::make_bigrams(&corpus, &store, Some(&scheme))?
        .into_iter()
        .filter(|i| i.label.is_some())
        .collect();
    let (train, val) = labeling::split_validation(&labelled, cfg.labeller.validation_fraction)?;
    let model = match cfg.labeller.kind {
        LabellerKind::Majority => labeling::train_majority(&train)?,
        LabellerKind::LogisticRegression => labeling::train_logreg(&train, &cfg.labeller.logreg())?,
    };
    write_file(&cfg.output_dir.join(MODEL_FILE), model.to_json()?.as_bytes())?;
    if !val.is_empty() {
        let pred = labeling::predict(&model, &val)?;
        let gold: BTreeMap<String, String> = val.iter().map(|i| (i.id.clone(), i.label.clone().unwrap())).collect();
        write_json(&cfg.output_dir.join("validation.json"), &labeling::accuracy_report(&pred, &gold)?)?;
    }
    Ok(())
}

fn label_predict(cfg: &RunConfig) -> CmdResult {
    let corpus = load_corpus(&cfg.analysis_corpus)?;
    let store = load_store(cfg.bigram_embeddings()?)?;
    let model_path = cfg.output_dir.join(MODEL_FILE);
    let model = ClassifierModel::from_json(&std::fs::read_to_string(&model_path).map_err(|e| Error::Io {
        path: model_path.clone(),
        source: e,
    })?)?;
    let instances = labeling::make_bigrams(&corpus, &store, None)?;
    let mut out = Vec::new();
    for inst in &instances {
        let row = Prediction {
            id: inst.id.clone(),
            predicted_domain: model.predict_one(&inst.pair_embedding)?.to_owned(),
        };
        serde_json::to_writer(&mut out, &row).map_err(|e| Failure::internal(e.to_string()))?;
        out.push(b'\n');
    }
    write_file(&cfg.output_dir.join(PREDICTIONS_FILE), &out)
}

fn read_predictions(path: &Path) -> CmdResult<Labels> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let mut labels = Labels::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if labels.insert(p.id.clone(), p.predicted_domain).is_some() {
            return Err(Error::Validation(format!("duplicate prediction for {:?}", p.id)).into());
        }
    }
    Ok(labels)
}

fn label_eval(cfg: &RunConfig) -> CmdResult {
    let corpus = load_corpus(&cfg.analysis_corpus)?;
    let scheme = scheme(cfg)?;
    let gold = scheme.annotate(&corpus);
    if gold.is_empty() {
        return Err(Error::UndefinedMetric("the analysis corpus has no gold category codes".into()).into());
    }
    let pred = read_predictions(&cfg.output_dir.join(PREDICTIONS_FILE))?;
    let report = labeling::accuracy_report(&pred, &gold)?;
    write_json(&cfg.output_dir.join(ACCURACY_FILE), &report)
}

/// File stem for a domain: position plus a filesystem-safe slug.
fn matrix_stem(index: usize, domain: &str) -> String {
    let slug: String = domain
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    format!("domain_{index:02}_{slug}")
}

fn similarity_dir(cfg: &RunConfig, source: LabelSource) -> PathBuf {
    cfg.output_dir.join(format!("similarity_{}", source.name()))
}

fn write_matrix(dir: &Path, stem: &str, m: &PartyDistanceMatrix) -> CmdResult {
    write_file(&dir.join(format!("{stem}.csv")), m.to_csv().as_bytes())?;
    let mut json = m.to_json()?;
    json.push('\n');
    write_file(&dir.join(format!("{stem}.json")), json.as_bytes())
}

pub fn similarity(cfg: &RunConfig, source: LabelSource) -> CmdResult {
    let corpus = load_corpus(&cfg.analysis_corpus)?;
    let store = load_store(&cfg.sentence_embeddings)?;
    let scheme = scheme(cfg)?;
    let labels = match source {
        LabelSource::Annotated => {
            let gold = scheme.annotate(&corpus);
            if gold.is_empty() {
                return Err(Error::Validation("annotated labels requested but the corpus has no codes".into()).into());
            }
            gold
        }
        LabelSource::Predicted => read_predictions(&cfg.output_dir.join(PREDICTIONS_FILE))?,
    };
    let w = whitening(cfg, &corpus, &store)?;
    let slices = DomainSlices::new(&corpus, &store, &w, &scheme, &labels)?;
    if slices.parties().len() < 2 {
        return Err(Error::InsufficientData("need at least 2 parties".into()).into());
    }
    let matrices = slices.all_domain_matrices()?;
    let aggregate = similarity::aggregate_matrix(&matrices, cfg.similarity.aggregation)?;

    let dir = similarity_dir(cfg, source);
    let mut files = Vec::with_capacity(matrices.len());
    for (k, m) in matrices.iter().enumerate() {
        let empty: Vec<&str> = m.coverage.iter().filter(|(_, c)| **c == 0).map(|(p, _)| p.as_str()).collect();
        if !empty.is_empty() {
            log::warn!("domain {:?}: no sentences for {empty:?}; their cells are NA", m.tag);
        }
        let stem = matrix_stem(k, &m.tag);
        write_matrix(&dir, &stem, m)?;
        files.push(MatrixFile {
            domain: m.tag.clone(),
            file: stem,
        });
    }
    write_matrix(&dir, AGGREGATE_TAG, &aggregate)?;
    write_json(
        &dir.join("index.json"),
        &SimilarityIndex {
            labels: source.name().into(),
            aggregation: cfg.similarity.aggregation,
            domains: files,
            aggregate: AGGREGATE_TAG.into(),
        },
    )
}

type MatrixSet = (Vec<PartyDistanceMatrix>, PartyDistanceMatrix);

fn read_similarity(dir: &Path) -> CmdResult<Option<MatrixSet>> {
    let index_path = dir.join("index.json");
    if !index_path.is_file() {
        return Ok(None);
    }
    let index: SimilarityIndex = read_json(&index_path)?;
    let load = |stem: &str| -> CmdResult<PartyDistanceMatrix> {
        let path = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(PartyDistanceMatrix::from_json(&text)?)
    };
    let domains = index.domains.iter().map(|f| load(&f.file)).collect::<CmdResult<Vec<_>>>()?;
    Ok(Some((domains, load(&index.aggregate)?)))
}

pub fn evaluate(cfg: &RunConfig, seed: Option<u64>) -> CmdResult {
    let corpus = load_corpus(&cfg.analysis_corpus)?;
    let scheme = scheme(cfg)?;
    let ev = &cfg.evaluation;
    let rile_codes = match &ev.rile_codes {
        Some(p) => RileCodes::from_json(&std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?)?,
        None => RileCodes::default(),
    };
    let settings = EvaluationSettings {
        n_permutations: ev.n_permutations,
        seed: seed.unwrap_or(ev.seed),
        rile: ev.rile,
        salience: ev.salience,
        rile_codes,
    };
    let gold = corpus.sentences().iter().any(|s| s.code.is_some()).then_some(&corpus);
    if gold.is_none() {
        log::warn!("analysis corpus carries no codes; RILE and salience are skipped");
    }
    let accuracy_path = cfg.output_dir.join(ACCURACY_FILE);
    let accuracy: Option<labeling::AccuracyReport> =
        if accuracy_path.is_file() { Some(read_json(&accuracy_path)?) } else { None };

    let annotated = read_similarity(&similarity_dir(cfg, LabelSource::Annotated))?;
    let predicted = read_similarity(&similarity_dir(cfg, LabelSource::Predicted))?;
    if annotated.is_none() && predicted.is_none() {
        return Err(Error::Validation("no similarity output found; run `similarity` first".into()).into());
    }
    let run = |name: &str, set: &MatrixSet, acc: Option<&labeling::AccuracyReport>| {
        report::evaluate(name, &set.0, &set.1, gold, &scheme, acc, &settings)
    };
    let mut full = FullReport {
        annotated: annotated.as_ref().map(|s| run("annotated", s, None)).transpose()?,
        predicted: predicted.as_ref().map(|s| run("predicted", s, accuracy.as_ref())).transpose()?,
    };
    if let (true, Some(a), Some(p), Some(rep)) = (ev.compare_predicted, &annotated, &predicted, full.predicted.as_mut()) {
        rep.comparison = Some(report::compare_setups(&a.0, &p.0, &a.1, &p.1, accuracy.as_ref(), &settings));
    }
    write_json(&cfg.output_dir.join(REPORT_FILE), &full)
}
