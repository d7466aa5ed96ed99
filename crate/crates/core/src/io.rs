//! File formats: JSON-lines documents, the binary corpus layout, model
//! envelopes and the CSV tables exchanged between pipeline stages.
//!
//! Corpus layout, all integers little-endian:
//!
//! ```text
//! b"TXCORPUS"  u32 version (=1)
//! u64 n  u64 p  u64 nnz
//! p x string                          vocabulary, column order
//! n x (string id, opt-string subject, opt-f64 label, string text)
//! nnz x (u32 row, u32 column, u32 count)   row-major, columns ascending
//! ```
//!
//! A string is `u32 byte length` then UTF-8 bytes; an optional field is a
//! `u8` presence flag followed by the value when present.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocumentMeta, RawDocument, Vocabulary};
use crate::design::Ranking;
use crate::error::{Error, Result};
use crate::forward::{classify_probs, ForwardModel};
use crate::mnir::SRScores;

const CORPUS_MAGIC: &[u8; 8] = b"TXCORPUS";
const CORPUS_VERSION: u32 = 1;
const MODEL_MAGIC: &[u8; 8] = b"TXMODEL\0";
const MODEL_VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// One JSON object per line; blank lines are skipped.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<RawDocument>> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str(&line).map_err(|e| format_err(format!("line {}: {e}", n + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

/// One word per line; `#` starts a comment.
pub fn read_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| format_err("string longer than 4 GiB"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_opt_str(w: &mut impl Write, s: Option<&str>) -> Result<()> {
    match s {
        Some(s) => {
            w.write_all(&[1])?;
            put_str(w, s)
        }
        None => Ok(w.write_all(&[0])?),
    }
}

fn get_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let len = get_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| format_err("invalid UTF-8 in string field"))
}

fn get_flag(r: &mut impl Read) -> Result<bool> {
    match get_u8(r)? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(format_err(format!("bad presence flag {b}"))),
    }
}

pub fn write_corpus(corpus: &Corpus, mut w: impl Write) -> Result<()> {
    let (row_ptr, cols, counts) = corpus.raw_parts();
    w.write_all(CORPUS_MAGIC)?;
    w.write_all(&CORPUS_VERSION.to_le_bytes())?;
    for v in [corpus.n_docs(), corpus.n_terms(), corpus.nnz()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for t in corpus.vocab().tokens() {
        put_str(&mut w, t)?;
    }
    for m in corpus.metas() {
        put_str(&mut w, &m.id)?;
        put_opt_str(&mut w, m.subject.as_deref())?;
        match m.label {
            Some(y) => {
                w.write_all(&[1])?;
                w.write_all(&y.to_le_bytes())?;
            }
            None => w.write_all(&[0])?,
        }
        put_str(&mut w, &m.text)?;
    }
    for i in 0..corpus.n_docs() {
        for e in row_ptr[i]..row_ptr[i + 1] {
            w.write_all(&(i as u32).to_le_bytes())?;
            w.write_all(&cols[e].to_le_bytes())?;
            w.write_all(&counts[e].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(mut r: impl Read) -> Result<Corpus> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CORPUS_MAGIC {
        return Err(format_err("not a corpus file"));
    }
    let version = get_u32(&mut r)?;
    if version != CORPUS_VERSION {
        return Err(format_err(format!("unsupported corpus version {version}")));
    }
    let n = get_u64(&mut r)? as usize;
    let p = get_u64(&mut r)? as usize;
    let nnz = get_u64(&mut r)? as usize;
    let tokens = (0..p).map(|_| get_str(&mut r)).collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::new(tokens)?;
    let mut meta = Vec::with_capacity(n);
    for _ in 0..n {
        let id = get_str(&mut r)?;
        let subject = if get_flag(&mut r)? { Some(get_str(&mut r)?) } else { None };
        let label = if get_flag(&mut r)? {
            Some(f64::from_le_bytes(get_u64(&mut r)?.to_le_bytes()))
        } else {
            None
        };
        let text = get_str(&mut r)?;
        meta.push(DocumentMeta { id, subject, label, text });
    }
    let mut rows = vec![Vec::new(); n];
    for _ in 0..nnz {
        let i = get_u32(&mut r)? as usize;
        let j = get_u32(&mut r)?;
        let x = get_u32(&mut r)?;
        rows.get_mut(i)
            .ok_or_else(|| format_err(format!("row {i} out of range")))?
            .push((j, x));
    }
    Corpus::from_sparse_rows(vocab, meta, rows)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    write_corpus(corpus, BufWriter::new(File::create(path)?))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    read_corpus(BufReader::new(File::open(path)?))
}

/// Header written before every serialized model.
#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    kind: String,
    version: u32,
}

/// Write `model` tagged with `kind` (e.g. `"topics"`).
pub fn save_model<T: Serialize>(model: &T, kind: &str, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    bincode::serialize_into(
        &mut w,
        &Envelope {
            kind: kind.to_owned(),
            version: MODEL_VERSION,
        },
    )?;
    bincode::serialize_into(&mut w, model)?;
    w.flush()?;
    Ok(())
}

/// Read a model written by [`save_model`], checking its kind tag.
pub fn load_model<T: DeserializeOwned>(kind: &str, path: impl AsRef<Path>) -> Result<T> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(format_err("not a model file"));
    }
    let env: Envelope = bincode::deserialize_from(&mut r)?;
    if env.kind != kind {
        return Err(format_err(format!("expected a {kind} model, found {}", env.kind)));
    }
    if env.version != MODEL_VERSION {
        return Err(format_err(format!("unsupported model version {}", env.version)));
    }
    Ok(bincode::deserialize_from(&mut r)?)
}

/// One line of a ranking file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub rank: usize,
    pub doc_id: String,
    pub gain: Option<f64>,
    pub cumulative_log_det: Option<f64>,
}

/// Seeds (blank gain) then greedy picks; the last seed row carries the seed
/// design's log-determinant.
pub fn ranking_rows(ranking: &Ranking, ids: &[String]) -> Vec<RankingRow> {
    let mut rows = Vec::with_capacity(ranking.seeds.len() + ranking.steps.len());
    for (r, &i) in ranking.seeds.iter().enumerate() {
        let last = r + 1 == ranking.seeds.len();
        rows.push(RankingRow {
            rank: r + 1,
            doc_id: ids[i].clone(),
            gain: None,
            cumulative_log_det: last.then_some(ranking.seed_log_det),
        });
    }
    for s in &ranking.steps {
        rows.push(RankingRow {
            rank: rows.len() + 1,
            doc_id: ids[s.index].clone(),
            gain: Some(s.gain),
            cumulative_log_det: Some(s.log_det),
        });
    }
    rows
}

/// Order-only ranking (e.g. a random permutation).
pub fn order_rows(order: &[usize], ids: &[String]) -> Vec<RankingRow> {
    order
        .iter()
        .enumerate()
        .map(|(r, &i)| RankingRow {
            rank: r + 1,
            doc_id: ids[i].clone(),
            gain: None,
            cumulative_log_det: None,
        })
        .collect()
}

pub fn write_ranking(rows: &[RankingRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows sorted by rank.
pub fn read_ranking(path: impl AsRef<Path>) -> Result<Vec<RankingRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows: Vec<RankingRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    rows.sort_by_key(|r| r.rank);
    Ok(rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    doc_id: String,
    subject: Option<String>,
    z0: f64,
    zs: f64,
}

pub fn write_scores(scores: &SRScores, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..scores.len() {
        w.serialize(ScoreRow {
            doc_id: scores.doc_ids[i].clone(),
            subject: scores.subjects[i].clone(),
            z0: scores.z0[i],
            zs: scores.zs[i],
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<SRScores> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = SRScores {
        doc_ids: Vec::new(),
        subjects: Vec::new(),
        z0: Vec::new(),
        zs: Vec::new(),
    };
    for row in r.deserialize() {
        let row: ScoreRow = row?;
        out.doc_ids.push(row.doc_id);
        out.subjects.push(row.subject.filter(|s| !s.is_empty()));
        out.z0.push(row.z0);
        out.zs.push(row.zs);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    doc_id: String,
    label: f64,
}

/// `doc_id,label` pairs; later rows for the same id win.
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in r.deserialize() {
        let row: LabelRow = row?;
        out.insert(row.doc_id, row.label);
    }
    Ok(out)
}

pub fn write_labels<'a>(labels: impl IntoIterator<Item = (&'a str, f64)>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (doc_id, label) in labels {
        w.serialize(LabelRow {
            doc_id: doc_id.to_owned(),
            label,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Attach labels by document id; ids absent from `labels` become unlabeled.
pub fn apply_labels(corpus: Corpus, labels: &BTreeMap<String, f64>) -> Result<Corpus> {
    let l: Vec<Option<f64>> = corpus.metas().iter().map(|m| labels.get(&m.id).copied()).collect();
    corpus.with_labels(&l)
}

/// `doc_id, p_<level>..., class, entropy`.
pub fn write_predictions(model: &ForwardModel, scores: &SRScores, probs: &[Vec<f64>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["doc_id".to_owned()];
    header.extend(model.levels.iter().map(|l| format!("p_{l}")));
    header.push("class".into());
    header.push("entropy".into());
    w.write_record(&header)?;
    for (id, p) in scores.doc_ids.iter().zip(probs) {
        let c = classify_probs(&model.levels, p);
        let mut rec = vec![id.clone()];
        rec.extend(p.iter().map(|v| v.to_string()));
        rec.push(c.level.to_string());
        rec.push(c.entropy.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TripletRow {
    doc_id: String,
    token: String,
    count: u32,
}

/// Build a corpus from `doc_id,token,count` triplets, such as those exported
/// from the congress109 or we8there count matrices. Documents appear in
/// first-seen order; tokens are sorted.
pub fn import_counts(path: impl AsRef<Path>) -> Result<Corpus> {
    let mut r = csv::Reader::from_path(path)?;
    let mut docs: Vec<String> = Vec::new();
    let mut doc_index: HashMap<String, usize> = HashMap::new();
    let mut triplets = Vec::new();
    let mut tokens = std::collections::BTreeSet::new();
    for row in r.deserialize() {
        let row: TripletRow = row?;
        let i = *doc_index.entry(row.doc_id.clone()).or_insert_with(|| {
            docs.push(row.doc_id.clone());
            docs.len() - 1
        });
        tokens.insert(row.token.clone());
        triplets.push((i, row.token, row.count));
    }
    let vocab = Vocabulary::new(tokens.into_iter().collect())?;
    let mut rows = vec![Vec::new(); docs.len()];
    for (i, t, x) in triplets {
        let j = vocab.get(&t).expect("token collected above") as u32;
        rows[i].push((j, x));
    }
    // Documents whose counts are all zero are dropped, as in build_corpus.
    let (meta, rows): (Vec<_>, Vec<_>) = docs
        .into_iter()
        .zip(rows)
        .filter(|(_, r)| r.iter().any(|&(_, x)| x > 0))
        .map(|(id, r)| (DocumentMeta::new(id), r))
        .unzip();
    Corpus::from_sparse_rows(vocab, meta, rows)
}
