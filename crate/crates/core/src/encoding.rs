//! Embedding retrieval views and queries, with optional adapters.
//!
//! Views are first embedded into a pre-adapter [`ChunkRepr`] with the frozen
//! embedder. Adapters are applied afterwards, so training can reuse the same
//! frozen vectors at every step.

use crate::embed::{fuse_embeddings, AdapterParams, Embedder, EmbeddingVector, Level};
use crate::error::{Error, Result};
use crate::views::{FusionMode, RetrievalView, ViewConfig};

/// Frozen-embedder representation of one retrieval view.
#[derive(Debug, Clone, PartialEq)]
pub enum ChunkRepr {
    /// Text fusion: the rendered view embedded once at [`Level::View`].
    View(EmbeddingVector),
    /// Embedding fusion: components embedded at their own levels.
    Components {
        chunk: EmbeddingVector,
        context: Option<EmbeddingVector>,
        metadata: Option<EmbeddingVector>,
        weights: (f64, f64, f64),
    },
}

impl ChunkRepr {
    /// The final retrieval vector. Without params no adapter is applied.
    pub fn finalize(&self, params: Option<&AdapterParams>) -> Result<EmbeddingVector> {
        let adapt = |level: Level, v: &EmbeddingVector| match params {
            Some(p) => p.apply(level, v),
            None => Ok(v.clone()),
        };
        match self {
            ChunkRepr::View(v) => adapt(Level::View, v),
            ChunkRepr::Components {
                chunk,
                context,
                metadata,
                weights,
            } => {
                let c = adapt(Level::Chunk, chunk)?;
                let x = context.as_ref().map(|v| adapt(Level::Context, v)).transpose()?;
                let m = metadata.as_ref().map(|v| adapt(Level::Metadata, v)).transpose()?;
                fuse_embeddings(*weights, &c, x.as_ref(), m.as_ref())
            }
        }
    }
}

/// Embeds views in corpus order according to the fusion mode.
pub fn encode_views(views: &[RetrievalView], embedder: &dyn Embedder, cfg: &ViewConfig) -> Result<Vec<ChunkRepr>> {
    match cfg.fusion_mode {
        FusionMode::Text => {
            let texts = views
                .iter()
                .map(|v| {
                    v.rendered_text.clone().ok_or_else(|| {
                        Error::Contract(format!("view `{}` was not rendered for text fusion", v.chunk_id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(embedder
                .embed(Level::View, &texts)?
                .into_iter()
                .map(ChunkRepr::View)
                .collect())
        }
        FusionMode::Embedding => {
            let chunk_texts: Vec<String> = views.iter().map(|v| v.chunk_text.clone()).collect();
            let chunks = embedder.embed(Level::Chunk, &chunk_texts)?;
            let ctx_texts: Vec<Option<String>> = views
                .iter()
                .map(|v| v.context.as_ref().map(|c| c.render()).filter(|s| !s.is_empty()))
                .collect();
            let meta_texts: Vec<Option<String>> = views
                .iter()
                .map(|v| v.metadata.as_ref().map(|m| m.render()).filter(|s| !s.is_empty()))
                .collect();
            let contexts = embed_sparse(embedder, Level::Context, &ctx_texts)?;
            let metas = embed_sparse(embedder, Level::Metadata, &meta_texts)?;
            Ok(chunks
                .into_iter()
                .zip(contexts)
                .zip(metas)
                .map(|((chunk, context), metadata)| ChunkRepr::Components {
                    chunk,
                    context,
                    metadata,
                    weights: cfg.fusion_weights,
                })
                .collect())
        }
    }
}

/// Embeds only the present texts, keeping positions.
fn embed_sparse(embedder: &dyn Embedder, level: Level, texts: &[Option<String>]) -> Result<Vec<Option<EmbeddingVector>>> {
    let present: Vec<String> = texts.iter().flatten().cloned().collect();
    let mut vectors = embedder.embed(level, &present)?.into_iter();
    Ok(texts.iter().map(|t| t.as_ref().and_then(|_| vectors.next())).collect())
}

/// Query vectors, adapted at [`Level::Query`] when params are given.
pub fn encode_queries(
    texts: &[String],
    embedder: &dyn Embedder,
    params: Option<&AdapterParams>,
) -> Result<Vec<EmbeddingVector>> {
    let raw = embedder.embed(Level::Query, texts)?;
    match params {
        Some(p) => raw.iter().map(|v| p.apply(Level::Query, v)).collect(),
        None => Ok(raw),
    }
}
