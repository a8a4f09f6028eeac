use std::fs;
use std::path::Path;

use super::{EmbeddingVector, Level};
use crate::error::{Error, Result};

pub const ADAPTER_MAGIC: &[u8; 8] = b"HRAGADP1";
pub const DEFAULT_TEMPERATURE: f64 = 0.05;

/// Affine map `v ↦ A·v + b` for one hierarchy level. `matrix` is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelAdapter {
    pub matrix: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LevelAdapter {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            matrix,
            bias: vec![0.0; dim],
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: vec![0.0; dim * dim],
            bias: vec![0.0; dim],
        }
    }

    /// A·v + b, before normalization.
    pub fn affine(&self, v: &[f64]) -> Vec<f64> {
        let d = self.bias.len();
        (0..d)
            .map(|i| {
                let row = &self.matrix[i * d..(i + 1) * d];
                row.iter().zip(v).map(|(a, x)| a * x).sum::<f64>() + self.bias[i]
            })
            .collect()
    }
}

/// Per-level adapters plus the contrastive temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub dim: usize,
    pub temperature: f64,
    /// Indexed by [`Level::index`].
    pub levels: Vec<LevelAdapter>,
}

impl AdapterParams {
    pub fn identity(dim: usize) -> Self {
        Self::with_temperature(dim, DEFAULT_TEMPERATURE)
    }

    pub fn with_temperature(dim: usize, temperature: f64) -> Self {
        Self {
            dim,
            temperature,
            levels: Level::ALL.iter().map(|_| LevelAdapter::identity(dim)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dim: self.dim,
            temperature: self.temperature,
            levels: Level::ALL.iter().map(|_| LevelAdapter::zeros(self.dim)).collect(),
        }
    }

    pub fn level(&self, level: Level) -> &LevelAdapter {
        &self.levels[level.index()]
    }

    pub fn level_mut(&mut self, level: Level) -> &mut LevelAdapter {
        &mut self.levels[level.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Param(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.levels.len() != Level::ALL.len() {
            return Err(Error::Contract("adapter must cover every level".into()));
        }
        for l in &self.levels {
            if l.matrix.len() != self.dim * self.dim || l.bias.len() != self.dim {
                return Err(Error::Contract("adapter shape does not match its dimension".into()));
            }
            if !l.matrix.iter().chain(&l.bias).all(|x| x.is_finite()) {
                return Err(Error::Numerical("adapter contains non-finite parameters".into()));
            }
        }
        Ok(())
    }

    pub fn apply(&self, level: Level, v: &EmbeddingVector) -> Result<EmbeddingVector> {
        apply_adapter(self, level, v)
    }

    /// Flat view over every parameter, level by level (A then b).
    pub fn iter_params(&self) -> impl Iterator<Item = &f64> {
        self.levels.iter().flat_map(|l| l.matrix.iter().chain(&l.bias))
    }

    pub fn iter_params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.levels.iter_mut().flat_map(|l| l.matrix.iter_mut().chain(l.bias.iter_mut()))
    }
}

/// normalize(A_h·v + b_h).
pub fn apply_adapter(params: &AdapterParams, level: Level, v: &EmbeddingVector) -> Result<EmbeddingVector> {
    if v.dim() != params.dim {
        return Err(Error::Contract(format!(
            "adapter dimension {} does not match vector dimension {}",
            params.dim,
            v.dim()
        )));
    }
    let u = params.level(level).affine(v.values());
    EmbeddingVector::normalized(u).map_err(|_| {
        Error::Numerical(format!("degenerate {level} adapter maps the input to zero"))
    })
}

/// Serializes to the adapter file layout: magic, dimension (u32 LE), then for
/// each level in [`Level::ALL`] order the row-major matrix and the bias as
/// little-endian f32.
pub fn write_adapter(params: &AdapterParams) -> Vec<u8> {
    let d = params.dim;
    let mut out = Vec::with_capacity(12 + Level::ALL.len() * (d * d + d) * 4);
    out.extend_from_slice(ADAPTER_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for l in &params.levels {
        for x in l.matrix.iter().chain(&l.bias) {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    out
}

/// Parses an adapter file. The temperature is not part of the file and is
/// set to the default.
pub fn read_adapter(bytes: &[u8], source: &str) -> Result<AdapterParams> {
    let bad = |message: &str| Error::Format {
        path: source.to_string(),
        message: message.to_string(),
    };
    if bytes.len() < 12 || &bytes[..8] != ADAPTER_MAGIC {
        return Err(bad("missing HRAGADP1 header"));
    }
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + Level::ALL.len() * (d * d + d) * 4;
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes for dimension {d}, found {}", bytes.len())));
    }
    let mut floats = bytes[12..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
    let mut params = AdapterParams::identity(d);
    for l in &mut params.levels {
        for x in l.matrix.iter_mut().chain(l.bias.iter_mut()) {
            *x = floats.next().unwrap();
        }
    }
    params.validate()?;
    Ok(params)
}

pub fn save_adapter(params: &AdapterParams, path: &Path) -> Result<()> {
    fs::write(path, write_adapter(params))?;
    Ok(())
}

pub fn load_adapter(path: &Path) -> Result<AdapterParams> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    read_adapter(&fs::read(path)?, &path.display().to_string())
}
