//! Document ingestion: tokenization, vocabulary construction and the sparse
//! document-term count matrix.
//!
//! A [`Corpus`] stores counts in compressed sparse row form. Every retained
//! row has at least one in-vocabulary token, so document lengths `m_i` are
//! strictly positive and token frequencies `x_i / m_i` are well defined.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One input record: `{id, text, subject?, label?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<f64>,
}

impl RawDocument {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            subject: None,
            label: None,
        }
    }

    pub fn with_subject(mut self, subject: impl Into<String>) -> Self {
        self.subject = Some(subject.into());
        self
    }

    pub fn with_label(mut self, label: f64) -> Self {
        self.label = Some(label);
        self
    }
}

/// Token transform applied after stop-word removal (e.g. a stemmer).
pub type Stemmer = Arc<dyn Fn(&str) -> String + Send + Sync>;

/// Rules for turning raw text into tokens.
#[derive(Clone)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    /// Delete characters that are neither alphanumeric, whitespace, nor one
    /// of `#`, `@`, `_` (hashtags and user handles survive).
    pub strip_punctuation: bool,
    pub stopwords: HashSet<String>,
    /// Tokens retained regardless of `min_doc_count`, provided they occur at
    /// least once.
    pub keep_list: BTreeSet<String>,
    pub min_doc_count: usize,
    pub stemmer: Option<Stemmer>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            stopwords: HashSet::new(),
            keep_list: BTreeSet::new(),
            min_doc_count: 1,
            stemmer: None,
        }
    }
}

impl fmt::Debug for TokenizerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenizerConfig")
            .field("lowercase", &self.lowercase)
            .field("strip_punctuation", &self.strip_punctuation)
            .field("stopwords", &self.stopwords.len())
            .field("keep_list", &self.keep_list.len())
            .field("min_doc_count", &self.min_doc_count)
            .field("stemmer", &self.stemmer.is_some())
            .finish()
    }
}

impl TokenizerConfig {
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stopwords = words.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_min_doc_count(mut self, min_doc_count: usize) -> Self {
        self.min_doc_count = min_doc_count;
        self
    }

    pub fn with_stemmer(mut self, stemmer: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        self.stemmer = Some(Arc::new(stemmer));
        self
    }

    pub fn with_keep_list<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.keep_list = words.into_iter().map(Into::into).collect();
        self
    }

    fn validate(&self) -> Result<()> {
        if self.min_doc_count == 0 {
            return Err(invalid("min_doc_count must be at least 1"));
        }
        Ok(())
    }
}

fn keeps_char(c: char) -> bool {
    c.is_alphanumeric() || c.is_whitespace() || matches!(c, '#' | '@' | '_')
}

/// Split `text` into unigram tokens under `config`.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let mut cleaned: String = if config.lowercase {
        text.to_lowercase()
    } else {
        text.to_owned()
    };
    if config.strip_punctuation {
        cleaned.retain(keeps_char);
    }
    cleaned
        .split_whitespace()
        .filter(|tok| !config.stopwords.contains(*tok))
        .map(|tok| match &config.stemmer {
            Some(stem) => stem(tok),
            None => tok.to_owned(),
        })
        .filter(|tok| !tok.is_empty())
        .collect()
}

/// Ordered list of distinct tokens; position is the column id.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tokens.iter()).finish()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocabulary::new(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Build from an explicit token list. The order is kept as given.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(invalid(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, column: usize) -> &str {
        &self.tokens[column]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Sorted union of two vocabularies, e.g. a subject vocabulary merged
    /// with a generic sentiment vocabulary.
    pub fn union(&self, other: &Vocabulary) -> Vocabulary {
        let merged: BTreeSet<&String> = self.tokens.iter().chain(other.tokens.iter()).collect();
        Vocabulary::new(merged.into_iter().cloned().collect()).expect("set union has no duplicates")
    }
}

/// Tokens occurring in at least `min_doc_count` distinct documents, in
/// lexicographic order.
pub fn build_vocabulary(docs: &[Vec<String>], min_doc_count: usize) -> Result<Vocabulary> {
    build_vocabulary_with_keep(docs, min_doc_count, &BTreeSet::new())
}

/// As [`build_vocabulary`], but tokens in `keep` bypass the threshold.
pub fn build_vocabulary_with_keep(
    docs: &[Vec<String>],
    min_doc_count: usize,
    keep: &BTreeSet<String>,
) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if min_doc_count == 0 {
        return Err(invalid("min_doc_count must be at least 1"));
    }
    let doc_freq = docs
        .par_iter()
        .fold(BTreeMap::<&str, usize>::new, |mut acc, doc| {
            let distinct: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
            for tok in distinct {
                *acc.entry(tok).or_default() += 1;
            }
            acc
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (tok, c) in b {
                *a.entry(tok).or_default() += c;
            }
            a
        });
    let tokens: Vec<String> = doc_freq
        .into_iter()
        .filter(|(tok, df)| *df >= min_doc_count || keep.contains(*tok))
        .map(|(tok, _)| tok.to_owned())
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyVocabulary(min_doc_count));
    }
    Vocabulary::new(tokens)
}

/// Per-document metadata carried alongside the count row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub id: String,
    pub subject: Option<String>,
    pub label: Option<f64>,
    pub text: String,
}

impl DocumentMeta {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            subject: None,
            label: None,
            text: String::new(),
        }
    }
}

/// Borrowed view of one sparse row.
#[derive(Debug, Clone, Copy)]
pub struct Row<'a> {
    pub cols: &'a [u32],
    pub counts: &'a [u32],
}

impl Row<'_> {
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.cols.iter().zip(self.counts).map(|(&j, &x)| (j as usize, x))
    }
}

/// Vocabulary plus sparse `n x p` count matrix with per-row metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocab: Vocabulary,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    counts: Vec<u32>,
    totals: Vec<u64>,
    meta: Vec<DocumentMeta>,
}

impl Corpus {
    /// Assemble from per-row `(column, count)` lists. Entries within a row
    /// may come in any order; repeated columns are summed and zero counts
    /// discarded. Every row must end up with a positive total.
    pub fn from_sparse_rows(
        vocab: Vocabulary,
        meta: Vec<DocumentMeta>,
        rows: Vec<Vec<(u32, u32)>>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if rows.len() != meta.len() {
            return Err(invalid(format!(
                "{} rows but {} metadata records",
                rows.len(),
                meta.len()
            )));
        }
        let mut seen = HashSet::with_capacity(meta.len());
        for m in &meta {
            if m.id.is_empty() {
                return Err(invalid("document id must be nonempty"));
            }
            if !seen.insert(m.id.as_str()) {
                return Err(Error::DuplicateId(m.id.clone()));
            }
        }
        let p = vocab.len();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut counts = Vec::new();
        let mut totals = Vec::with_capacity(rows.len());
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable_by_key(|&(j, _)| j);
            let mut total = 0u64;
            let start = cols.len();
            for (j, x) in row {
                if j as usize >= p {
                    return Err(invalid(format!("column {j} out of range for vocabulary of {p}")));
                }
                if x == 0 {
                    continue;
                }
                if cols.len() > start && *cols.last().unwrap() == j {
                    *counts.last_mut().unwrap() += x;
                } else {
                    cols.push(j);
                    counts.push(x);
                }
                total += u64::from(x);
            }
            if total == 0 {
                return Err(invalid(format!("row {i} ({:?}) has no tokens", meta[i].id)));
            }
            totals.push(total);
            row_ptr.push(cols.len());
        }
        Ok(Self {
            vocab,
            row_ptr,
            cols,
            counts,
            totals,
            meta,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn n_docs(&self) -> usize {
        self.totals.len()
    }

    pub fn n_terms(&self) -> usize {
        self.vocab.len()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        Row {
            cols: &self.cols[a..b],
            counts: &self.counts[a..b],
        }
    }

    /// Document length `m_i`.
    pub fn total(&self, i: usize) -> u64 {
        self.totals[i]
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    pub fn meta(&self, i: usize) -> &DocumentMeta {
        &self.meta[i]
    }

    pub fn metas(&self) -> &[DocumentMeta] {
        &self.meta
    }

    pub fn id(&self, i: usize) -> &str {
        &self.meta[i].id
    }

    pub fn subject(&self, i: usize) -> Option<&str> {
        self.meta[i].subject.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<f64> {
        self.meta[i].label
    }

    pub fn labels(&self) -> Vec<Option<f64>> {
        self.meta.iter().map(|m| m.label).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.meta.iter().map(|m| m.id.clone()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.meta.iter().position(|m| m.id == id)
    }

    /// Map from document id to row.
    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.meta.iter().enumerate().map(|(i, m)| (m.id.as_str(), i)).collect()
    }

    /// Distinct subject tags in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.meta.iter().filter_map(|m| m.subject.as_deref()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Total count of every token across the corpus.
    pub fn column_totals(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.n_terms()];
        for (&j, &x) in self.cols.iter().zip(&self.counts) {
            out[j as usize] += u64::from(x);
        }
        out
    }

    pub fn grand_total(&self) -> u64 {
        self.totals.iter().sum()
    }

    /// Dense frequency row `x_i / m_i`.
    pub fn frequencies(&self, i: usize) -> Vec<f64> {
        let mut f = vec![0.0; self.n_terms()];
        let m = self.totals[i] as f64;
        for (j, x) in self.row(i).iter() {
            f[j] = f64::from(x) / m;
        }
        f
    }

    /// Rows `indices` (in that order), sharing the vocabulary.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        let mut row_ptr = Vec::with_capacity(indices.len() + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut counts = Vec::new();
        let mut totals = Vec::with_capacity(indices.len());
        let mut meta = Vec::with_capacity(indices.len());
        for &i in indices {
            let row = self.row(i);
            cols.extend_from_slice(row.cols);
            counts.extend_from_slice(row.counts);
            row_ptr.push(cols.len());
            totals.push(self.totals[i]);
            meta.push(self.meta[i].clone());
        }
        Corpus {
            vocab: self.vocab.clone(),
            row_ptr,
            cols,
            counts,
            totals,
            meta,
        }
    }

    /// Rows tagged with `subject`.
    pub fn subject_rows(&self, subject: &str) -> Vec<usize> {
        (0..self.n_docs())
            .filter(|&i| self.subject(i) == Some(subject))
            .collect()
    }

    /// Replace every row's label.
    pub fn with_labels(mut self, labels: &[Option<f64>]) -> Result<Corpus> {
        if labels.len() != self.n_docs() {
            return Err(invalid(format!(
                "{} labels for {} documents",
                labels.len(),
                self.n_docs()
            )));
        }
        for (m, &l) in self.meta.iter_mut().zip(labels) {
            m.label = l;
        }
        Ok(self)
    }

    pub(crate) fn raw_parts(&self) -> (&[usize], &[u32], &[u32]) {
        (&self.row_ptr, &self.cols, &self.counts)
    }
}

/// Outcome of [`build_corpus`] beyond the corpus itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    /// Ids of documents with no in-vocabulary tokens.
    pub dropped: Vec<String>,
}

/// Tokenize `docs`, build (or reuse) a vocabulary, and count.
///
/// When `vocab` is `None` the vocabulary is built from these documents with
/// `config.min_doc_count` and `config.keep_list`.
pub fn build_corpus(
    docs: &[RawDocument],
    config: &TokenizerConfig,
    vocab: Option<&Vocabulary>,
) -> Result<(Corpus, BuildReport)> {
    config.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut seen = HashSet::with_capacity(docs.len());
    for d in docs {
        if d.id.is_empty() {
            return Err(invalid("document id must be nonempty"));
        }
        if !seen.insert(d.id.as_str()) {
            return Err(Error::DuplicateId(d.id.clone()));
        }
    }
    let tokenized: Vec<Vec<String>> = docs.par_iter().map(|d| tokenize(&d.text, config)).collect();
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => build_vocabulary_with_keep(&tokenized, config.min_doc_count, &config.keep_list)?,
    };
    let rows: Vec<Vec<(u32, u32)>> = tokenized
        .par_iter()
        .map(|toks| {
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for t in toks {
                if let Some(j) = vocab.get(t) {
                    *counts.entry(j as u32).or_default() += 1;
                }
            }
            counts.into_iter().collect()
        })
        .collect();

    let mut report = BuildReport::default();
    let mut kept_rows = Vec::with_capacity(docs.len());
    let mut meta = Vec::with_capacity(docs.len());
    for (doc, row) in docs.iter().zip(rows) {
        if row.is_empty() {
            report.dropped.push(doc.id.clone());
            continue;
        }
        kept_rows.push(row);
        meta.push(DocumentMeta {
            id: doc.id.clone(),
            subject: doc.subject.clone(),
            label: doc.label,
            text: doc.text.clone(),
        });
    }
    if kept_rows.is_empty() {
        return Err(Error::AllRowsDropped(docs.len()));
    }
    let corpus = Corpus::from_sparse_rows(vocab, meta, kept_rows)?;
    Ok((corpus, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_lowercases_and_strips() {
        let cfg = TokenizerConfig::default();
        assert_eq!(tokenize("Obama Wins!", &cfg), toks(&["obama", "wins"]));
    }

    #[test]
    fn tokenize_removes_stopwords() {
        let cfg = TokenizerConfig::default().with_stopwords(["the"]);
        assert_eq!(tokenize("the tax", &cfg), toks(&["tax"]));
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("", &TokenizerConfig::default()).is_empty());
        assert!(tokenize("  ?! ", &TokenizerConfig::default()).is_empty());
    }

    #[test]
    fn tokenize_keeps_hashtags_and_handles() {
        let cfg = TokenizerConfig::default();
        assert_eq!(
            tokenize("RT @danecook: #TeaParty, really?", &cfg),
            toks(&["rt", "@danecook", "#teaparty", "really"])
        );
    }

    #[test]
    fn tokenize_flags_off() {
        let cfg = TokenizerConfig {
            lowercase: false,
            strip_punctuation: false,
            ..Default::default()
        };
        assert_eq!(tokenize("Wins!", &cfg), toks(&["Wins!"]));
    }

    #[test]
    fn stemmer_hook_runs_after_stopwords() {
        let cfg = TokenizerConfig::default()
            .with_stopwords(["taxes"])
            .with_stemmer(|t| t.trim_end_matches('s').to_owned());
        assert_eq!(tokenize("taxes votes", &cfg), toks(&["vote"]));
    }

    #[test]
    fn vocabulary_threshold() {
        let docs = vec![toks(&["a", "b"]), toks(&["a"]), toks(&["c"])];
        let v = build_vocabulary(&docs, 2).unwrap();
        assert_eq!(v.tokens(), &["a"]);
        let all = build_vocabulary(&docs, 1).unwrap();
        assert_eq!(all.tokens(), &["a", "b", "c"]);
    }

    #[test]
    fn vocabulary_counts_documents_not_occurrences() {
        let docs = vec![toks(&["a", "a", "a"]), toks(&["b"]), toks(&["b"])];
        assert_eq!(build_vocabulary(&docs, 2).unwrap().tokens(), &["b"]);
    }

    #[test]
    fn vocabulary_threshold_200() {
        let mut docs: Vec<Vec<String>> = (0..199).map(|_| toks(&["rare", "common"])).collect();
        docs.push(toks(&["common"]));
        let v = build_vocabulary(&docs, 200).unwrap();
        assert_eq!(v.tokens(), &["common"]);
    }

    #[test]
    fn vocabulary_keep_list_overrides_threshold() {
        let docs = vec![toks(&["a", "b"]), toks(&["a"])];
        let keep: BTreeSet<String> = ["b".to_string(), "zzz".to_string()].into();
        let v = build_vocabulary_with_keep(&docs, 2, &keep).unwrap();
        assert_eq!(v.tokens(), &["a", "b"]);
    }

    #[test]
    fn vocabulary_errors() {
        assert!(matches!(build_vocabulary(&[], 1), Err(Error::EmptyCorpus)));
        let docs = vec![toks(&["a"])];
        assert!(matches!(build_vocabulary(&docs, 2), Err(Error::EmptyVocabulary(2))));
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(Vocabulary::new(toks(&["a", "a"])).is_err());
    }

    #[test]
    fn vocabulary_union_is_bounded() {
        let a = Vocabulary::new(toks(&["x", "y", "z"])).unwrap();
        let b = Vocabulary::new(toks(&["w", "y"])).unwrap();
        let u = a.union(&b);
        assert_eq!(u.tokens(), &["w", "x", "y", "z"]);
        assert!(u.len() <= a.len() + b.len());
    }

    #[test]
    fn corpus_counts_and_frequencies() {
        let vocab = Vocabulary::new(toks(&["a", "b", "c"])).unwrap();
        let docs = vec![RawDocument::new("d1", "a a b")];
        let (c, report) = build_corpus(&docs, &TokenizerConfig::default(), Some(&vocab)).unwrap();
        assert!(report.dropped.is_empty());
        assert_eq!(c.total(0), 3);
        let f = c.frequencies(0);
        assert_eq!(f, vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
        let row: Vec<_> = c.row(0).iter().collect();
        assert_eq!(row, vec![(0, 2), (1, 1)]);
    }

    #[test]
    fn corpus_drops_out_of_vocabulary_rows() {
        let vocab = Vocabulary::new(toks(&["a", "b"])).unwrap();
        let docs = vec![
            RawDocument::new("keep", "a"),
            RawDocument::new("junk", "zzz qqq"),
            RawDocument::new("empty", ""),
        ];
        let (c, report) = build_corpus(&docs, &TokenizerConfig::default(), Some(&vocab)).unwrap();
        assert_eq!(c.n_docs(), 1);
        assert_eq!(report.dropped, toks(&["junk", "empty"]));
    }

    #[test]
    fn corpus_all_dropped_errors() {
        let vocab = Vocabulary::new(toks(&["a"])).unwrap();
        let docs = vec![RawDocument::new("x", "b")];
        assert!(matches!(
            build_corpus(&docs, &TokenizerConfig::default(), Some(&vocab)),
            Err(Error::AllRowsDropped(1))
        ));
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let docs = vec![RawDocument::new("x", "a"), RawDocument::new("x", "b")];
        assert!(matches!(
            build_corpus(&docs, &TokenizerConfig::default(), None),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn corpus_carries_subject_and_label() {
        let docs = vec![
            RawDocument::new("1", "tax cut").with_subject("romney").with_label(1.0),
            RawDocument::new("2", "tax hike"),
        ];
        let (c, _) = build_corpus(&docs, &TokenizerConfig::default(), None).unwrap();
        assert_eq!(c.subject(0), Some("romney"));
        assert_eq!(c.label(0), Some(1.0));
        assert_eq!(c.subject(1), None);
        assert_eq!(c.subjects(), toks(&["romney"]));
        assert_eq!(c.column_totals(), vec![1, 1, 2]);
    }

    #[test]
    fn from_sparse_rows_merges_duplicates() {
        let vocab = Vocabulary::new(toks(&["a", "b"])).unwrap();
        let c = Corpus::from_sparse_rows(
            vocab,
            vec![DocumentMeta::new("d")],
            vec![vec![(1, 2), (0, 1), (1, 3), (0, 0)]],
        )
        .unwrap();
        assert_eq!(c.row(0).iter().collect::<Vec<_>>(), vec![(0, 1), (1, 5)]);
        assert_eq!(c.total(0), 6);
    }
}
