//! Annotated manifesto sentences, their indexes, and the domain scheme that
//! groups fine-grained category codes into policy domains.
//!
//! A corpus is read from JSON Lines (one [`Sentence`] per line) or from CSV
//! with the same columns. Heading records (code `"H"`) are dropped during
//! ingestion; the `"0"` code is kept.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Code marking a section heading.
pub const HEADING_CODE: &str = "H";
/// Code for statements that carry no policy category.
pub const NO_CATEGORY_CODE: &str = "0";
/// Reserved label for sentences outside every policy domain.
pub const OTHER: &str = "other";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub party: String,
    pub election_date: String,
    pub position: u64,
    pub text: String,
    #[serde(default)]
    pub code: Option<String>,
}

impl Sentence {
    pub fn manifesto(&self) -> ManifestoKey {
        ManifestoKey {
            party: self.party.clone(),
            election_date: self.election_date.clone(),
        }
    }
}

/// One party's programme for one election.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ManifestoKey {
    pub party: String,
    pub election_date: String,
}

impl std::fmt::Display for ManifestoKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.party, self.election_date)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    JsonLines,
    Csv,
}

impl CorpusFormat {
    /// Guesses the format from a file extension, defaulting to JSON Lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::JsonLines,
        }
    }
}

/// Immutable, indexed collection of sentences.
///
/// Sentences are kept sorted by `(party, election_date, position)`, so the
/// order of records in the source file does not matter.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    by_id: HashMap<String, usize>,
    by_party: BTreeMap<String, Vec<usize>>,
    by_code: BTreeMap<String, BTreeSet<String>>,
}

impl Corpus {
    /// Builds a corpus from raw records, dropping headings and validating
    /// uniqueness of ids and of `(party, election_date, position)`.
    pub fn from_sentences(sentences: impl IntoIterator<Item = Sentence>) -> Result<Self> {
        let mut sentences: Vec<Sentence> = sentences
            .into_iter()
            .filter(|s| s.code.as_deref() != Some(HEADING_CODE))
            .collect();
        for s in &sentences {
            validate_sentence(s)?;
        }
        sentences.sort_by(|a, b| {
            (&a.party, &a.election_date, a.position).cmp(&(&b.party, &b.election_date, b.position))
        });

        let mut by_id = HashMap::with_capacity(sentences.len());
        let mut by_party: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_code: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (idx, s) in sentences.iter().enumerate() {
            if by_id.insert(s.id.clone(), idx).is_some() {
                return Err(Error::Validation(format!("duplicate sentence id {:?}", s.id)));
            }
            if idx > 0 {
                let prev = &sentences[idx - 1];
                if prev.party == s.party
                    && prev.election_date == s.election_date
                    && prev.position == s.position
                {
                    return Err(Error::Validation(format!(
                        "duplicate position {} in manifesto {}@{} (ids {:?} and {:?})",
                        s.position, s.party, s.election_date, prev.id, s.id
                    )));
                }
            }
            by_party.entry(s.party.clone()).or_default().push(idx);
            if let Some(code) = &s.code {
                by_code.entry(code.clone()).or_default().insert(s.id.clone());
            }
        }
        Ok(Corpus {
            sentences,
            by_id,
            by_party,
            by_code,
        })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sentence> {
        self.by_id.get(id).map(|&i| &self.sentences[i])
    }

    /// Party names in lexicographic order.
    pub fn parties(&self) -> impl Iterator<Item = &str> {
        self.by_party.keys().map(String::as_str)
    }

    pub fn has_party(&self, party: &str) -> bool {
        self.by_party.contains_key(party)
    }

    /// Sentences of one party in `(election_date, position)` order.
    pub fn party_sentences(&self, party: &str) -> Result<impl Iterator<Item = &Sentence>> {
        let idx = self
            .by_party
            .get(party)
            .ok_or_else(|| Error::lookup("party", party))?;
        Ok(idx.iter().map(move |&i| &self.sentences[i]))
    }

    /// Ids of the sentences carrying `code`, if any.
    pub fn code_ids(&self, code: &str) -> Option<&BTreeSet<String>> {
        self.by_code.get(code)
    }

    /// Manifestos in key order, each as its position-ordered sentence slice.
    pub fn manifestos(&self) -> Vec<(ManifestoKey, &[Sentence])> {
        let mut out = Vec::new();
        let mut start = 0;
        for end in 1..=self.sentences.len() {
            let boundary = end == self.sentences.len() || {
                let (a, b) = (&self.sentences[end - 1], &self.sentences[end]);
                a.party != b.party || a.election_date != b.election_date
            };
            if boundary {
                out.push((self.sentences[start].manifesto(), &self.sentences[start..end]));
                start = end;
            }
        }
        out
    }

    /// Occurrences of each category code; uncoded sentences are not counted.
    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        self.by_code
            .iter()
            .map(|(code, ids)| (code.clone(), ids.len()))
            .collect()
    }

    /// Splits one party's sentences into policy domains.
    ///
    /// Every domain of the scheme is present in the result, possibly empty.
    /// Sentences that are uncoded, coded with an `other` code, or coded with
    /// a code the scheme does not know are left out.
    pub fn slice_by_domain(
        &self,
        scheme: &DomainScheme,
        party: &str,
    ) -> Result<BTreeMap<String, BTreeSet<String>>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = scheme
            .domain_names()
            .map(|d| (d.to_owned(), BTreeSet::new()))
            .collect();
        for s in self.party_sentences(party)? {
            if let Some(domain) = s.code.as_deref().and_then(|c| scheme.domain_of(c)) {
                out.get_mut(domain)
                    .expect("scheme domains pre-seeded")
                    .insert(s.id.clone());
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        match format {
            CorpusFormat::JsonLines => Self::read_jsonl(BufReader::new(file)),
            CorpusFormat::Csv => Self::read_csv(file),
        }
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let s: Sentence = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            records.push(s);
        }
        Self::from_sentences(records)
    }

    /// Reads CSV with header `id,party,election_date,position,text,code`.
    /// An empty `code` cell means uncoded.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut records = Vec::new();
        for (n, row) in rdr.deserialize::<CsvRow>().enumerate() {
            // header is line 1
            let row = row.map_err(|e| Error::Parse {
                line: n + 2,
                message: e.to_string(),
            })?;
            records.push(Sentence {
                id: row.id,
                party: row.party,
                election_date: row.election_date,
                position: row.position,
                text: row.text,
                code: row.code.filter(|c| !c.is_empty()),
            });
        }
        Self::from_sentences(records)
    }

    pub fn write_jsonl(&self, mut writer: impl Write) -> Result<()> {
        for s in &self.sentences {
            serde_json::to_writer(&mut writer, s)?;
            writer
                .write_all(b"\n")
                .map_err(|e| Error::io("<corpus writer>", e))?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    party: String,
    election_date: String,
    position: u64,
    text: String,
    code: Option<String>,
}

fn validate_sentence(s: &Sentence) -> Result<()> {
    if s.id.is_empty() {
        return Err(Error::Validation("empty sentence id".into()));
    }
    if s.text.is_empty() {
        return Err(Error::Validation(format!("sentence {:?} has empty text", s.id)));
    }
    let d = s.election_date.as_bytes();
    let well_formed = d.len() == 7
        && d[4] == b'-'
        && d[..4].iter().chain(&d[5..]).all(u8::is_ascii_digit)
        && matches!(&s.election_date[5..], "01" | "02" | "03" | "04" | "05" | "06" | "07" | "08" | "09" | "10" | "11" | "12");
    if !well_formed {
        return Err(Error::Validation(format!(
            "sentence {:?} has election_date {:?}, expected YYYY-MM",
            s.id, s.election_date
        )));
    }
    Ok(())
}

/// Mapping from category codes to named policy domains, plus the codes that
/// belong to no domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainScheme {
    domains: BTreeMap<String, BTreeSet<String>>,
    #[serde(rename = "other")]
    other_codes: BTreeSet<String>,
    #[serde(skip)]
    lookup: HashMap<String, String>,
}

impl DomainScheme {
    /// Validates disjointness and names. The `"0"` code is always added to
    /// the other bucket unless a domain claims it.
    pub fn new(
        domains: BTreeMap<String, BTreeSet<String>>,
        other_codes: BTreeSet<String>,
    ) -> Result<Self> {
        let mut lookup = HashMap::new();
        for (name, codes) in &domains {
            if name.trim().is_empty() {
                return Err(Error::Validation("empty domain name".into()));
            }
            if name == OTHER {
                return Err(Error::Validation(format!("domain name {OTHER:?} is reserved")));
            }
            for code in codes {
                if let Some(prev) = lookup.insert(code.clone(), name.clone()) {
                    return Err(Error::Validation(format!(
                        "code {code:?} assigned to both {prev:?} and {name:?}"
                    )));
                }
            }
        }
        for code in &other_codes {
            if let Some(domain) = lookup.get(code) {
                return Err(Error::Validation(format!(
                    "code {code:?} is in domain {domain:?} and in the other bucket"
                )));
            }
        }
        let mut other_codes = other_codes;
        if !lookup.contains_key(NO_CATEGORY_CODE) {
            other_codes.insert(NO_CATEGORY_CODE.to_owned());
        }
        Ok(DomainScheme {
            domains,
            other_codes,
            lookup,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            domains: BTreeMap<String, BTreeSet<String>>,
            #[serde(default)]
            other: BTreeSet<String>,
        }
        let raw: Raw = serde_json::from_str(s)?;
        Self::new(raw.domains, raw.other)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn domains(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.domains
    }

    pub fn domain_names(&self) -> impl Iterator<Item = &str> {
        self.domains.keys().map(String::as_str)
    }

    pub fn other_codes(&self) -> &BTreeSet<String> {
        &self.other_codes
    }

    pub fn has_domain(&self, name: &str) -> bool {
        self.domains.contains_key(name)
    }

    /// Domain of a code, or `None` for other-bucket and unknown codes.
    pub fn domain_of(&self, code: &str) -> Option<&str> {
        self.lookup.get(code).map(String::as_str)
    }

    /// Label for a coded sentence: its domain, or [`OTHER`].
    pub fn label_of(&self, code: &str) -> &str {
        self.domain_of(code).unwrap_or(OTHER)
    }

    /// Gold domain labels for every coded sentence of the corpus.
    pub fn annotate(&self, corpus: &Corpus) -> BTreeMap<String, String> {
        corpus
            .sentences()
            .iter()
            .filter_map(|s| {
                s.code
                    .as_deref()
                    .map(|c| (s.id.clone(), self.label_of(c).to_owned()))
            })
            .collect()
    }
}
