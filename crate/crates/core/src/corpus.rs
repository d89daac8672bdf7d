//! Document corpus, passage segmentation and token-prefix truncation.
//!
//! Documents are read from line-delimited JSON records
//! (`{"docid", "title"?, "text", "url"?}`). Segmentation packs whole
//! sentences greedily into passages of at most `max_words` body words and
//! prefixes each passage with its document title. Passage ids follow the
//! `<doc_id>#<seq_index>` scheme so that the source document can be
//! recovered from the id alone.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default passage budget in body words.
pub const DEFAULT_MAX_WORDS: usize = 250;

/// Separator between document id and sequence number in passage ids.
pub const PASSAGE_ID_SEP: char = '#';

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate doc_id {0:?}")]
    DuplicateId(String),
    #[error("passage {passage_id:?} refers to unknown document {doc_id:?}")]
    OrphanPassage { passage_id: String, doc_id: String },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "docid", alias = "doc_id")]
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: None,
            text: text.into(),
            url: None,
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    fn title_str(&self) -> Option<&str> {
        self.title.as_deref().filter(|t| !t.trim().is_empty())
    }
}

/// A title-prefixed segment of a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    pub seq_index: usize,
    /// Segment text without the title prefix, words joined by single spaces.
    pub body: String,
    /// `title + "\n" + body` when the document has a title, else `body`.
    pub rendered_text: String,
    pub body_word_count: usize,
    /// Set when the passage is a piece of a single sentence that exceeded
    /// the word budget on its own.
    pub hard_split: bool,
}

impl Passage {
    fn new(doc: &Document, seq_index: usize, words: &[&str], hard_split: bool) -> Self {
        let body = words.join(" ");
        let rendered_text = match doc.title_str() {
            Some(title) => format!("{}\n{}", title.trim(), body),
            None => body.clone(),
        };
        Self {
            passage_id: passage_id(&doc.doc_id, seq_index),
            doc_id: doc.doc_id.clone(),
            seq_index,
            body,
            rendered_text,
            body_word_count: words.len(),
            hard_split,
        }
    }
}

pub fn passage_id(doc_id: &str, seq_index: usize) -> String {
    format!("{doc_id}{PASSAGE_ID_SEP}{seq_index}")
}

/// Wire form of a passage: the document record layout plus its source.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PassageRecord {
    docid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    text: String,
    source_docid: String,
    seq: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    hard_split: bool,
}

/// Whether a search unit is a whole document or a passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Document,
    Passage,
}

impl std::fmt::Display for UnitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UnitKind::Document => "document",
            UnitKind::Passage => "passage",
        })
    }
}

impl std::str::FromStr for UnitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "document" | "doc" => Ok(UnitKind::Document),
            "passage" => Ok(UnitKind::Passage),
            other => Err(format!("unknown unit kind {other:?}")),
        }
    }
}

/// Text of a retrievable unit as seen by the tools and re-rankers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitText<'a> {
    pub id: &'a str,
    pub doc_id: &'a str,
    pub title: Option<&'a str>,
    /// Document text, or passage body.
    pub body: &'a str,
}

impl UnitText<'_> {
    /// Title-prefixed text.
    pub fn rendered(&self) -> String {
        match self.title {
            Some(t) => format!("{}\n{}", t.trim(), self.body),
            None => self.body.to_string(),
        }
    }
}

/// Maps a retrieved unit id to the id of its source document.
pub trait DocResolver: Send + Sync {
    fn doc_id_of(&self, unit_id: &str) -> Option<String>;
}

/// Resolves ids by the `<doc_id>#<seq>` scheme; ids without a separator are
/// taken to be document ids already.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdSchemeResolver;

impl DocResolver for IdSchemeResolver {
    fn doc_id_of(&self, unit_id: &str) -> Option<String> {
        match unit_id.rsplit_once(PASSAGE_ID_SEP) {
            Some((doc, seq)) if !seq.is_empty() && seq.bytes().all(|b| b.is_ascii_digit()) => Some(doc.to_string()),
            _ => Some(unit_id.to_string()),
        }
    }
}

/// An immutable set of documents and, optionally, their passages.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    doc_index: HashMap<String, usize>,
    passages: Vec<Passage>,
    passage_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut doc_index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc_index.insert(doc.doc_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(doc.doc_id.clone()));
            }
        }
        Ok(Self {
            documents,
            doc_index,
            ..Default::default()
        })
    }

    /// Reads a line-delimited document file. Blank lines are skipped.
    pub fn ingest(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        let mut documents = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CorpusError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if seen.insert(doc.doc_id.clone(), ()).is_some() {
                return Err(CorpusError::DuplicateId(doc.doc_id));
            }
            documents.push(doc);
        }
        Self::from_documents(documents)
    }

    /// Returns a new corpus carrying passages for every document.
    pub fn segmented(mut self, max_words: usize) -> Self {
        let passages: Vec<Passage> = self
            .documents
            .iter()
            .flat_map(|d| segment_document(d, max_words))
            .collect();
        self.set_passages(passages);
        self
    }

    /// Attaches previously computed passages, checking every source exists.
    pub fn with_passages(mut self, passages: Vec<Passage>) -> Result<Self, CorpusError> {
        for p in &passages {
            if !self.doc_index.contains_key(&p.doc_id) {
                return Err(CorpusError::OrphanPassage {
                    passage_id: p.passage_id.clone(),
                    doc_id: p.doc_id.clone(),
                });
            }
        }
        let mut ids = HashMap::with_capacity(passages.len());
        for p in &passages {
            if ids.insert(p.passage_id.as_str(), ()).is_some() {
                return Err(CorpusError::DuplicateId(p.passage_id.clone()));
            }
        }
        self.set_passages(passages);
        Ok(self)
    }

    fn set_passages(&mut self, passages: Vec<Passage>) {
        self.passage_index = passages
            .iter()
            .enumerate()
            .map(|(i, p)| (p.passage_id.clone(), i))
            .collect();
        self.passages = passages;
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.doc_index.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn passage(&self, passage_id: &str) -> Option<&Passage> {
        self.passage_index.get(passage_id).map(|&i| &self.passages[i])
    }

    /// Looks up a document either directly or through one of its passages.
    pub fn resolve_document(&self, id: &str) -> Option<&Document> {
        self.document(id)
            .or_else(|| self.passage(id).and_then(|p| self.document(&p.doc_id)))
    }

    pub fn unit(&self, id: &str) -> Option<UnitText<'_>> {
        if let Some(doc) = self.document(id) {
            return Some(UnitText {
                id: &doc.doc_id,
                doc_id: &doc.doc_id,
                title: doc.title_str(),
                body: &doc.text,
            });
        }
        let p = self.passage(id)?;
        let doc = self.document(&p.doc_id)?;
        Some(UnitText {
            id: &p.passage_id,
            doc_id: &p.doc_id,
            title: doc.title_str(),
            body: &p.body,
        })
    }

    /// `(unit_id, indexable text)` pairs. Documents index their raw text,
    /// passages their title-prefixed rendering.
    pub fn index_units(&self, kind: UnitKind) -> Vec<(&str, &str)> {
        match kind {
            UnitKind::Document => self
                .documents
                .iter()
                .map(|d| (d.doc_id.as_str(), d.text.as_str()))
                .collect(),
            UnitKind::Passage => self
                .passages
                .iter()
                .map(|p| (p.passage_id.as_str(), p.rendered_text.as_str()))
                .collect(),
        }
    }

    pub fn write_passages(&self, path: &Path) -> Result<(), CorpusError> {
        write_passages(&self.passages, &self.documents, path)
    }
}

impl DocResolver for Corpus {
    fn doc_id_of(&self, unit_id: &str) -> Option<String> {
        if self.doc_index.contains_key(unit_id) {
            return Some(unit_id.to_string());
        }
        self.passage(unit_id).map(|p| p.doc_id.clone())
    }
}

fn write_passages(passages: &[Passage], documents: &[Document], path: &Path) -> Result<(), CorpusError> {
    let titles: HashMap<&str, Option<&str>> = documents.iter().map(|d| (d.doc_id.as_str(), d.title_str())).collect();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for p in passages {
        let record = PassageRecord {
            docid: p.passage_id.clone(),
            title: titles.get(p.doc_id.as_str()).copied().flatten().map(str::to_string),
            text: p.body.clone(),
            source_docid: p.doc_id.clone(),
            seq: p.seq_index,
            hard_split: p.hard_split,
        };
        let line = serde_json::to_string(&record).expect("passage record serializes");
        writeln!(out, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

/// Reads a passage file written by [`Corpus::write_passages`].
pub fn read_passages(path: &Path) -> Result<Vec<Passage>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut passages = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: PassageRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let words: Vec<&str> = r.text.split_whitespace().collect();
        let doc = Document {
            doc_id: r.source_docid,
            title: r.title,
            text: String::new(),
            url: None,
        };
        let mut p = Passage::new(&doc, r.seq, &words, r.hard_split);
        p.passage_id = r.docid;
        passages.push(p);
    }
    Ok(passages)
}

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "ft", "vs", "etc", "e.g", "i.e", "inc", "ltd", "co",
    "corp", "no", "nos", "fig", "figs", "vol", "pp", "ed", "eds", "al", "approx", "dept", "est", "gen", "gov", "sen",
    "rep", "rev", "capt", "col", "lt", "sgt", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct",
    "nov", "dec", "u.s", "u.k", "a.m", "p.m", "ph.d", "b.a", "m.a", "cf", "ca",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201c}', '\u{2018}'];

fn is_sentence_end(word: &str, next: &str) -> bool {
    let core = word.trim_end_matches(CLOSERS);
    let Some(last) = core.chars().last() else {
        return false;
    };
    if !matches!(last, '.' | '!' | '?') {
        return false;
    }
    let starts_ok = next
        .chars()
        .next()
        .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit() || OPENERS.contains(&c));
    if !starts_ok {
        return false;
    }
    if last == '.' {
        let stem = core.trim_end_matches('.').trim_start_matches(OPENERS).to_lowercase();
        let mut chars = stem.chars();
        let single_initial = matches!((chars.next(), chars.next()), (Some(c), None) if c.is_alphabetic());
        if single_initial || ABBREVIATIONS.contains(&stem.as_str()) {
            return false;
        }
    }
    true
}

/// Splits a whitespace-tokenized text into sentences, as word ranges.
pub fn split_sentences(words: &[&str]) -> Vec<Range<usize>> {
    let mut sentences = Vec::new();
    let mut start = 0;
    for i in 0..words.len() {
        let boundary = match words.get(i + 1) {
            Some(next) => is_sentence_end(words[i], next),
            None => true,
        };
        if boundary {
            sentences.push(start..i + 1);
            start = i + 1;
        }
    }
    sentences
}

/// Segments a document into passages of at most `max_words` body words.
///
/// Sentences are packed greedily: the next sentence joins the open passage
/// iff the total stays within budget. A sentence longer than the budget is
/// cut at word boundaries into `max_words`-sized pieces, each of which forms
/// its own passage.
pub fn segment_document(doc: &Document, max_words: usize) -> Vec<Passage> {
    assert!(max_words >= 1, "max_words must be positive");
    let words: Vec<&str> = doc.text.split_whitespace().collect();
    let mut chunks: Vec<(Range<usize>, bool)> = Vec::new();
    let mut open: Option<Range<usize>> = None;

    for sentence in split_sentences(&words) {
        if sentence.len() > max_words {
            chunks.extend(open.take().map(|r| (r, false)));
            let mut start = sentence.start;
            while start < sentence.end {
                let end = (start + max_words).min(sentence.end);
                chunks.push((start..end, true));
                start = end;
            }
            continue;
        }
        open = match open.take() {
            Some(r) if r.len() + sentence.len() <= max_words => Some(r.start..sentence.end),
            Some(r) => {
                chunks.push((r, false));
                Some(sentence)
            }
            None => Some(sentence),
        };
    }
    chunks.extend(open.map(|r| (r, false)));

    chunks
        .into_iter()
        .enumerate()
        .map(|(seq, (range, hard))| Passage::new(doc, seq, &words[range], hard))
        .collect()
}

/// Maps text to a token sequence, represented by byte spans into the input.
pub trait TokenizerAdapter: Send + Sync {
    fn name(&self) -> &str;

    fn token_spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count_tokens(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }

    /// Prefix of `text` ending at the last byte of token `n`; unchanged when
    /// the text has at most `n` tokens.
    fn truncate(&self, text: &str, n: usize) -> String {
        let spans = self.token_spans(text);
        if spans.len() <= n {
            return text.to_string();
        }
        match n.checked_sub(1) {
            Some(last) => text[..spans[last].end].to_string(),
            None => String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceAdapter;

impl TokenizerAdapter for WhitespaceAdapter {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    spans.push(s..i);
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(s..text.len());
        }
        spans
    }

    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

pub fn truncate_text(text: &str, n_tokens: usize, tok: &dyn TokenizerAdapter) -> String {
    tok.truncate(text, n_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(n_words: usize, tag: &str) -> String {
        let mut words: Vec<String> = (0..n_words).map(|i| format!("{tag}w{i}")).collect();
        words[0] = format!("S{tag}");
        let last = words.last_mut().unwrap();
        last.push('.');
        words.join(" ")
    }

    #[test]
    fn ten_sixty_word_sentences_pack_four_four_two() {
        let text: Vec<String> = (0..10).map(|i| sentence(60, &i.to_string())).collect();
        let doc = Document::new("d", text.join(" "));
        let ps = segment_document(&doc, 250);
        let counts: Vec<usize> = ps.iter().map(|p| p.body_word_count).collect();
        assert_eq!(counts, vec![240, 240, 120]);
        let sentences: Vec<usize> = ps
            .iter()
            .map(|p| {
                let w: Vec<&str> = p.body.split_whitespace().collect();
                split_sentences(&w).len()
            })
            .collect();
        assert_eq!(sentences, vec![4, 4, 2]);
    }

    #[test]
    fn oversized_sentence_is_hard_split() {
        let doc = Document::new("d", sentence(300, "x"));
        let ps = segment_document(&doc, 250);
        let counts: Vec<usize> = ps.iter().map(|p| p.body_word_count).collect();
        assert_eq!(counts, vec![250, 50]);
        assert!(ps.iter().all(|p| p.hard_split));
    }

    #[test]
    fn empty_text_yields_no_passages() {
        assert!(segment_document(&Document::new("d", ""), 250).is_empty());
        assert!(segment_document(&Document::new("d", "  \n\t "), 250).is_empty());
    }

    #[test]
    fn title_prefix_and_ids() {
        let doc = Document::new("d7", "One two. Three four.").with_title("Title Here");
        let ps = segment_document(&doc, 2);
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[1].passage_id, "d7#1");
        assert_eq!(ps[1].rendered_text, "Title Here\nThree four.");
        assert_eq!(ps[1].body, "Three four.");
    }

    #[test]
    fn abbreviations_and_initials_do_not_split() {
        let words: Vec<&str> = "Mr. Smith met J. K. Rowling in the U.S. Today. Then 3 left! \"Yes\" she said."
            .split_whitespace()
            .collect();
        let s = split_sentences(&words);
        let rendered: Vec<String> = s.iter().map(|r| words[r.clone()].join(" ")).collect();
        assert_eq!(
            rendered,
            vec![
                "Mr. Smith met J. K. Rowling in the U.S. Today.",
                "Then 3 left!",
                "\"Yes\" she said."
            ]
        );
    }

    #[test]
    fn lowercase_continuation_is_not_a_boundary() {
        let words: Vec<&str> = "It costs 3.5 dollars. approx. ten.".split_whitespace().collect();
        assert_eq!(split_sentences(&words).len(), 1);
    }

    #[test]
    fn truncate_examples() {
        let tok = WhitespaceAdapter;
        let long: Vec<String> = (0..600).map(|i| format!("w{i}")).collect();
        let text = long.join(" ");
        let out = truncate_text(&text, 512, &tok);
        assert_eq!(out, long[..512].join(" "));

        let short = "a b c d e f g h i j";
        assert_eq!(truncate_text(short, 512, &tok), short);

        let mixed = "  alpha\tbeta \n gamma  delta ";
        let once = truncate_text(mixed, 3, &tok);
        assert_eq!(once, "  alpha\tbeta \n gamma");
        assert_eq!(truncate_text(&once, 3, &tok), once);
    }

    #[test]
    fn id_scheme_resolver() {
        let r = IdSchemeResolver;
        assert_eq!(r.doc_id_of("d7#2").as_deref(), Some("d7"));
        assert_eq!(r.doc_id_of("a#b#10").as_deref(), Some("a#b"));
        assert_eq!(r.doc_id_of("plain").as_deref(), Some("plain"));
        assert_eq!(r.doc_id_of("odd#x").as_deref(), Some("odd#x"));
    }

    #[test]
    fn corpus_lookup_through_passages() {
        let corpus = Corpus::from_documents(vec![
            Document::new("d1", "Alpha beta. Gamma delta.").with_title("T"),
            Document::new("d2", ""),
        ])
        .unwrap()
        .segmented(2);
        assert_eq!(corpus.passages().len(), 2);
        assert_eq!(corpus.resolve_document("d1#1").unwrap().doc_id, "d1");
        assert_eq!(corpus.doc_id_of("d1#0").as_deref(), Some("d1"));
        assert!(corpus.doc_id_of("d3").is_none());
        let unit = corpus.unit("d1#1").unwrap();
        assert_eq!(unit.rendered(), "T\nGamma delta.");
        assert_eq!(corpus.index_units(UnitKind::Passage)[0], ("d1#0", "T\nAlpha beta."));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Corpus::from_documents(vec![Document::new("d1", "a"), Document::new("d1", "b")]).unwrap_err();
        assert!(err.to_string().contains("d1"));
    }
}
