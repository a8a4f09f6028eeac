//! Generation side: prompt assembly from bare generation views, generator
//! clients, and the retrieve-then-generate pipeline.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::{AdapterParams, Embedder, Level};
use crate::error::{Error, Result};
use crate::http::{join_url, JsonClient};
use crate::index::{SearchResult, VectorIndex};
use crate::views::GenerationView;

pub const DEFAULT_INSTRUCTION: &str =
    "Answer the question based on the given passages. Only give me the answer and do not output any other words.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplate {
    pub system_instruction: String,
    /// Must contain `{index}` and `{text}` exactly once.
    pub passage_format: String,
    /// Must contain `{question}` exactly once.
    pub question_format: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_instruction: DEFAULT_INSTRUCTION.into(),
            passage_format: "Passage {index}: {text}".into(),
            question_format: "Question: {question}".into(),
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        let once = |fmt: &str, slot: &str| fmt.matches(slot).count() == 1;
        if !once(&self.passage_format, "{index}") || !once(&self.passage_format, "{text}") {
            return Err(Error::Param(
                "passage_format needs exactly one {index} and one {text} slot".into(),
            ));
        }
        if !once(&self.question_format, "{question}") {
            return Err(Error::Param("question_format needs exactly one {question} slot".into()));
        }
        Ok(())
    }
}

/// Instruction, then the passages numbered from 1 in the given order, then
/// the question; blocks are separated by blank lines.
pub fn assemble_prompt(template: &PromptTemplate, question: &str, passages: &[GenerationView]) -> String {
    let mut blocks = vec![template.system_instruction.clone()];
    if !passages.is_empty() {
        let rendered: Vec<String> = passages
            .iter()
            .enumerate()
            .map(|(i, p)| {
                // substitute {text} last so passage text is never re-scanned
                template
                    .passage_format
                    .replacen("{index}", &(i + 1).to_string(), 1)
                    .replacen("{text}", &p.text, 1)
            })
            .collect();
        blocks.push(rendered.join("\n"));
    }
    blocks.push(template.question_format.replacen("{question}", question, 1));
    blocks.join("\n\n")
}

pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String>;

    /// Short identifier used as the model column in reports.
    fn label(&self) -> String;
}

/// Deterministic stand-ins for a language model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubMode {
    /// Always returns the same string.
    Fixed(String),
    /// Returns the rest of the line following the first occurrence of the
    /// marker, trimmed; empty if the marker is absent.
    ExtractAfter(String),
}

impl Default for StubMode {
    fn default() -> Self {
        StubMode::ExtractAfter("Passage 1:".into())
    }
}

impl FromStr for StubMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(v) = s.strip_prefix("fixed:") {
            Ok(StubMode::Fixed(v.to_string()))
        } else if let Some(m) = s.strip_prefix("extract-after:") {
            if m.is_empty() {
                return Err(Error::Param("extract-after needs a marker".into()));
            }
            Ok(StubMode::ExtractAfter(m.to_string()))
        } else {
            Err(Error::Param(format!(
                "stub mode must be `fixed:<text>` or `extract-after:<marker>`, got `{s}`"
            )))
        }
    }
}

impl fmt::Display for StubMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StubMode::Fixed(v) => write!(f, "fixed:{v}"),
            StubMode::ExtractAfter(m) => write!(f, "extract-after:{m}"),
        }
    }
}

impl Serialize for StubMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StubMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EchoStub {
    pub mode: StubMode,
}

impl Generator for EchoStub {
    fn generate(&self, prompt: &str) -> Result<String> {
        Ok(match &self.mode {
            StubMode::Fixed(v) => v.clone(),
            StubMode::ExtractAfter(marker) => prompt
                .find(marker.as_str())
                .map(|at| {
                    let rest = &prompt[at + marker.len()..];
                    rest.lines().next().unwrap_or("").trim().to_string()
                })
                .unwrap_or_default(),
        })
    }

    fn label(&self) -> String {
        "echo-stub".into()
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_new_tokens: usize,
    temperature: f64,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// Client for `POST {endpoint}/generate`.
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    url: String,
    max_new_tokens: usize,
    temperature: f64,
    client: JsonClient,
}

impl RemoteGenerator {
    pub fn new(endpoint: &str, max_new_tokens: usize, temperature: f64) -> Self {
        Self {
            url: join_url(endpoint, "generate"),
            max_new_tokens,
            temperature,
            client: JsonClient::default(),
        }
    }

    pub fn with_client(mut self, client: JsonClient) -> Self {
        self.client = client;
        self
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, prompt: &str) -> Result<String> {
        let resp: GenerateResponse = self.client.post(
            &self.url,
            &GenerateRequest {
                prompt,
                max_new_tokens: self.max_new_tokens,
                temperature: self.temperature,
            },
        )?;
        Ok(resp.text)
    }

    fn label(&self) -> String {
        "remote".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    EchoStub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub endpoint: Option<String>,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub stub: StubMode,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::EchoStub,
            endpoint: None,
            max_new_tokens: 32,
            temperature: 0.0,
            stub: StubMode::default(),
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kind == GeneratorKind::Remote && self.endpoint.is_none() {
            return Err(Error::Param("remote generator requires an endpoint".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Param("generator temperature must be non-negative".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Generator>> {
        self.validate()?;
        Ok(match self.kind {
            GeneratorKind::EchoStub => Box::new(EchoStub { mode: self.stub.clone() }),
            GeneratorKind::Remote => Box::new(RemoteGenerator::new(
                self.endpoint.as_deref().unwrap_or_default(),
                self.max_new_tokens,
                self.temperature,
            )),
        })
    }
}

pub fn generate_answer(spec: &GeneratorSpec, prompt: &str) -> Result<String> {
    spec.build()?.generate(prompt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagConfig {
    pub top_k: usize,
    /// Put the best passage last instead of first.
    pub reverse_passages: bool,
    pub template: PromptTemplate,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            reverse_passages: false,
            template: PromptTemplate::default(),
        }
    }
}

impl RagConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::Param("top_k must be at least 1".into()));
        }
        self.template.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub text: String,
    pub prompt: String,
    /// Exactly the chunks placed in the prompt, in retrieval rank order.
    pub provenance: Vec<SearchResult>,
}

/// Retrieve with the enriched index, generate from bare chunk text.
pub struct Pipeline {
    pub index: VectorIndex,
    pub passages: HashMap<String, GenerationView>,
    pub embedder: Box<dyn Embedder>,
    pub query_adapter: Option<AdapterParams>,
    pub generator: Box<dyn Generator>,
    pub config: RagConfig,
}

impl Pipeline {
    pub fn new(
        index: VectorIndex,
        passages: impl IntoIterator<Item = GenerationView>,
        embedder: Box<dyn Embedder>,
        query_adapter: Option<AdapterParams>,
        generator: Box<dyn Generator>,
        config: RagConfig,
    ) -> Result<Self> {
        config.validate()?;
        let passages: HashMap<_, _> = passages.into_iter().map(|p| (p.chunk_id.clone(), p)).collect();
        if let Some((c, _, _)) = index.iter().find(|(c, _, _)| !passages.contains_key(*c)) {
            return Err(Error::Contract(format!("indexed chunk `{c}` has no generation view")));
        }
        Ok(Self {
            index,
            passages,
            embedder,
            query_adapter,
            generator,
            config,
        })
    }

    pub fn retrieve(&self, question: &str, k: usize) -> Result<Vec<SearchResult>> {
        if self.index.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.embedder.embed(Level::Query, &[question.to_string()])?.remove(0);
        let q = match &self.query_adapter {
            Some(p) => p.apply(Level::Query, &q)?,
            None => q,
        };
        self.index.search_topk(&q, k)
    }

    pub fn run(&self, question: &str) -> Result<Answer> {
        self.run_with_k(question, self.config.top_k)
    }

    pub fn run_with_k(&self, question: &str, k: usize) -> Result<Answer> {
        let provenance = self.retrieve(question, k)?;
        let mut passages: Vec<GenerationView> = provenance
            .iter()
            .map(|r| self.passages[&r.chunk_id].clone())
            .collect();
        if self.config.reverse_passages {
            passages.reverse();
        }
        let prompt = assemble_prompt(&self.config.template, question, &passages);
        let text = self.generator.generate(&prompt)?;
        Ok(Answer { text, prompt, provenance })
    }
}
