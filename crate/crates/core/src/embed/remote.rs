use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{with_prefix, Embedder, EmbedderSpec, EmbeddingVector, Level};
use crate::error::{Error, Result};
use crate::http::{join_url, JsonClient};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    level: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dimension: usize,
    vectors: Vec<Vec<f64>>,
}

/// Client for an HTTP embedding service (`POST {endpoint}/embed`).
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    url: String,
    dim: usize,
    prefixes: BTreeMap<Level, String>,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn from_spec(spec: &EmbedderSpec) -> Result<Self> {
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::Param("remote embedder requires an endpoint".into()))?;
        Ok(Self {
            url: join_url(endpoint, "embed"),
            dim: spec.dimension,
            prefixes: spec.instruction_prefixes.clone(),
            client: JsonClient::default(),
        })
    }

    pub fn with_client(mut self, client: JsonClient) -> Self {
        self.client = client;
        self
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, level: Level, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let prefixed: Vec<String> = texts.iter().map(|t| with_prefix(&self.prefixes, level, t)).collect();
        let resp: EmbedResponse = self.client.post(
            &self.url,
            &EmbedRequest {
                level: level.as_str(),
                texts: &prefixed,
            },
        )?;
        if resp.dimension != self.dim {
            return Err(Error::Contract(format!(
                "embedding server reports dimension {}, expected {}",
                resp.dimension, self.dim
            )));
        }
        if resp.vectors.len() != texts.len() {
            return Err(Error::Contract(format!(
                "embedding server returned {} vectors for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(Error::Contract(format!(
                        "vector of length {} from server, expected {}",
                        v.len(),
                        self.dim
                    )));
                }
                let n = super::l2_norm(&v);
                if (n - 1.0).abs() > 1e-3 {
                    return Err(Error::Contract(format!("server vector is not unit-norm (norm {n})")));
                }
                // restore full f64 unit norm after the server's f32 rounding
                EmbeddingVector::normalized(v)
            })
            .collect()
    }
}
