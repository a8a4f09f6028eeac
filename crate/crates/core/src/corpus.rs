//! Document model, tokenizer, fixed-window chunker and corpus parsing.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::views::Metadata;

/// A structured source document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub abstract_text: Option<String>,
    pub keywords: Vec<String>,
    pub sections: Vec<Section>,
    pub extra_meta: BTreeMap<String, String>,
}

/// One section of a document. `path` is the chain of headings leading to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub path: Vec<String>,
    pub text: String,
}

/// A contiguous token window inside one section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub section_index: usize,
    pub index_in_doc: usize,
    pub tokens: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingConfig {
    pub chunk_size: usize,
    pub neighbor_radius: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_size: 64,
            neighbor_radius: 1,
        }
    }
}

impl ChunkingConfig {
    pub fn new(chunk_size: usize) -> Result<Self> {
        let cfg = Self {
            chunk_size,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::Param("chunk_size must be at least 1".into()));
        }
        Ok(())
    }
}

impl Document {
    /// A flat document: one untitled section.
    pub fn flat(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            abstract_text: None,
            keywords: Vec::new(),
            sections: vec![Section {
                path: Vec::new(),
                text: text.into(),
            }],
            extra_meta: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.doc_id.is_empty() {
            return Err(Error::Contract("doc_id must be non-empty".into()));
        }
        if self.sections.is_empty() {
            return Err(Error::Contract(format!(
                "document `{}` has no sections",
                self.doc_id
            )));
        }
        Ok(())
    }

    /// Tokens of all sections in document order.
    pub fn tokens(&self) -> Vec<String> {
        self.sections.iter().flat_map(|s| tokenize(&s.text)).collect()
    }
}

/// Lowercasing whitespace + punctuation tokenizer.
///
/// Every character that is neither alphanumeric nor whitespace becomes a
/// standalone token. Joining the output with single spaces is the canonical
/// detokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if ch.is_alphanumeric() {
            current.push(ch);
        } else {
            flush(&mut current, &mut tokens);
            tokens.push(ch.to_string());
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

pub fn chunk_id(doc_id: &str, index_in_doc: usize) -> String {
    format!("{doc_id}#{index_in_doc}")
}

/// Splits every section into consecutive windows of `chunk_size` tokens.
/// Windows never cross a section boundary; the last window of a section may
/// be shorter.
pub fn chunk_document(doc: &Document, cfg: &ChunkingConfig) -> Vec<Chunk> {
    let size = cfg.chunk_size.max(1);
    let mut chunks = Vec::new();
    for (section_index, section) in doc.sections.iter().enumerate() {
        let tokens = tokenize(&section.text);
        for window in tokens.chunks(size) {
            let index_in_doc = chunks.len();
            chunks.push(Chunk {
                chunk_id: chunk_id(&doc.doc_id, index_in_doc),
                doc_id: doc.doc_id.clone(),
                section_index,
                index_in_doc,
                text: detokenize(window),
                tokens: window.to_vec(),
            });
        }
    }
    chunks
}

/// A document together with its chunks and per-section token lists, the
/// unit that view construction works on.
#[derive(Debug, Clone)]
pub struct ChunkedDocument {
    pub doc: Document,
    pub chunks: Vec<Chunk>,
    pub section_tokens: Vec<Vec<String>>,
}

impl ChunkedDocument {
    pub fn new(doc: Document, cfg: &ChunkingConfig) -> Self {
        let chunks = chunk_document(&doc, cfg);
        Self::with_chunks(doc, chunks)
    }

    /// Pairs a document with chunks produced earlier (e.g. loaded from a
    /// chunk store).
    pub fn with_chunks(doc: Document, chunks: Vec<Chunk>) -> Self {
        let section_tokens = doc.sections.iter().map(|s| tokenize(&s.text)).collect();
        Self {
            doc,
            chunks,
            section_tokens,
        }
    }

    pub fn doc_tokens(&self) -> impl Iterator<Item = &String> {
        self.section_tokens.iter().flatten()
    }
}

/// Chunks a whole corpus.
pub fn chunk_corpus(docs: &[Document], cfg: &ChunkingConfig) -> Vec<ChunkedDocument> {
    docs.iter()
        .map(|d| ChunkedDocument::new(d.clone(), cfg))
        .collect()
}

#[derive(Deserialize)]
struct DocumentRecord {
    doc_id: String,
    title: String,
    #[serde(rename = "abstract", default)]
    abstract_text: Option<String>,
    #[serde(default)]
    keywords: Vec<String>,
    #[serde(default)]
    sections: Option<Vec<Section>>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    extra_meta: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct DocumentRecordOut<'a> {
    doc_id: &'a str,
    title: &'a str,
    #[serde(rename = "abstract", skip_serializing_if = "Option::is_none")]
    abstract_text: Option<&'a str>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    keywords: &'a [String],
    sections: &'a [Section],
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    extra_meta: &'a BTreeMap<String, String>,
}

/// Parses a JSON Lines corpus from a string. `source` names the input in
/// error messages. Blank lines are skipped.
pub fn parse_corpus_str(input: &str, source: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.to_string(),
            line: line_no,
            message,
        };
        let rec: DocumentRecord =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let sections = match rec.sections {
            Some(s) => s,
            None => vec![Section {
                path: Vec::new(),
                text: rec.text.unwrap_or_default(),
            }],
        };
        let doc = Document {
            doc_id: rec.doc_id,
            title: rec.title,
            abstract_text: rec.abstract_text,
            keywords: rec.keywords,
            sections,
            extra_meta: rec.extra_meta,
        };
        doc.validate().map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(parse_err(format!("duplicate doc_id `{}`", doc.doc_id)));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn parse_corpus(path: &Path) -> Result<Vec<Document>> {
    let input = fs::read_to_string(path)?;
    parse_corpus_str(&input, &path.display().to_string())
}

/// Renders documents back into the corpus line format.
pub fn write_corpus_string(docs: &[Document]) -> Result<String> {
    let mut out = String::new();
    for d in docs {
        let rec = DocumentRecordOut {
            doc_id: &d.doc_id,
            title: &d.title,
            abstract_text: d.abstract_text.as_deref(),
            keywords: &d.keywords,
            sections: &d.sections,
            extra_meta: &d.extra_meta,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// Projects the document-global metadata visible to one chunk.
pub fn extract_metadata(doc: &Document, chunk: &Chunk) -> Result<Metadata> {
    if chunk.doc_id != doc.doc_id {
        return Err(Error::Contract(format!(
            "chunk `{}` belongs to `{}`, not `{}`",
            chunk.chunk_id, chunk.doc_id, doc.doc_id
        )));
    }
    let section = doc.sections.get(chunk.section_index).ok_or_else(|| {
        Error::Contract(format!(
            "chunk `{}` references section {} but `{}` has {}",
            chunk.chunk_id,
            chunk.section_index,
            doc.doc_id,
            doc.sections.len()
        ))
    })?;
    Ok(Metadata {
        title: doc.title.clone(),
        abstract_text: doc.abstract_text.clone(),
        keywords: doc.keywords.clone(),
        section_path: section.path.clone(),
        extra: doc.extra_meta.clone(),
    })
}

/// Chunk store: JSON Lines of [`Chunk`].
pub fn write_chunk_store(chunks: &[Chunk]) -> Result<String> {
    let mut out = String::new();
    for c in chunks {
        out.push_str(&serde_json::to_string(c)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_chunk_store(path: &Path) -> Result<Vec<Chunk>> {
    let input = fs::read_to_string(path)?;
    let mut chunks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: Chunk = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        chunks.push(c);
    }
    Ok(chunks)
}
