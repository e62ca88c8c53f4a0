//! Checkpoints: a JSON header next to a little-endian `f64` blob.
//!
//! Blob layout: embeddings `[slot][m][entity][coord]`, then per `[m][r]` the
//! rotation in row-major order followed by the shift (`v`, `a`, or
//! `from, to, angle`).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{MaxEntCoeffs, ModelParams, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{DomainBounds, Geometry, ManifoldKind, Shift, Transport};
use crate::mixture::{EmbeddingTable, MixtureWeights};

pub const CHECKPOINT_VERSION: u32 = 1;
const LAYOUT: &str = "embeddings[slot][m][entity][coord]; transports[m][r]{rotation row-major, shift}";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub kinds: Vec<ManifoldKind>,
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_bins: usize,
    pub n_slots: usize,
    pub bounds: DomainBounds,
    pub config: TrainConfig,
    pub seed: u64,
    pub coeffs: MaxEntCoeffs,
    pub logits: Vec<Vec<f64>>,
    pub layout: String,
}

fn blob_path(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

/// Writes `path` (JSON header) and `path` with a `.bin` extension (data).
pub fn save_checkpoint(params: &ModelParams, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        kinds: params.kinds.clone(),
        n_entities: params.n_entities(),
        n_relations: params.n_relations(),
        n_bins: params.coeffs.alpha.first().map_or(0, Vec::len),
        n_slots: params.embeddings.len(),
        bounds: params.bounds,
        config: cfg.clone(),
        seed: cfg.seed,
        coeffs: params.coeffs.clone(),
        logits: (0..params.n_relations()).map(|r| params.mixture.logits(r).to_vec()).collect(),
        layout: LAYOUT.into(),
    };
    let mut data: Vec<f64> = Vec::new();
    for p in params.embeddings.iter().flatten().flat_map(|t| &t.points) {
        data.extend(p.iter());
    }
    for t in params.transports.iter().flatten() {
        data.extend(t.rotation.transpose().iter());
        match &t.shift {
            Shift::Translation(v) | Shift::Gyration(v) => data.extend(v.iter()),
            Shift::GreatCircle { from, to, angle } => {
                data.extend(from.iter());
                data.extend(to.iter());
                data.push(*angle);
            }
        }
    }
    let bytes: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(path, serde_json::to_vec_pretty(&header)?)?;
    fs::write(blob_path(path), bytes)?;
    Ok(())
}

struct Reader {
    data: Vec<f64>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize) -> Result<&[f64]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint(format!("blob truncated at value {}", self.data.len())));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn vector(&mut self, n: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(self.take(n)?))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, TrainConfig)> {
    let path = path.as_ref();
    let header: CheckpointHeader = serde_json::from_slice(&fs::read(path)?)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    let bytes = fs::read(blob_path(path))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("blob length is not a multiple of 8".into()));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    let mut rd = Reader { data, pos: 0 };

    let mut embeddings = Vec::with_capacity(header.n_slots);
    for _ in 0..header.n_slots {
        let mut slot = Vec::with_capacity(header.kinds.len());
        for kind in &header.kinds {
            let points = (0..header.n_entities).map(|_| rd.vector(kind.ambient_dim())).collect::<Result<Vec<_>>>()?;
            slot.push(EmbeddingTable::new(*kind, points)?);
        }
        embeddings.push(slot);
    }
    let mut transports = Vec::with_capacity(header.kinds.len());
    for kind in &header.kinds {
        let n = kind.ambient_dim();
        let mut per_rel = Vec::with_capacity(header.n_relations);
        for _ in 0..header.n_relations {
            let rotation = DMatrix::from_row_slice(n, n, rd.take(n * n)?);
            let shift = match kind.geometry {
                Geometry::Euclidean => Shift::Translation(rd.vector(n)?),
                Geometry::Hyperbolic => Shift::Gyration(rd.vector(n)?),
                Geometry::Spherical => {
                    let from = rd.vector(n)?;
                    let to = rd.vector(n)?;
                    Shift::GreatCircle { from, to, angle: rd.take(1)?[0] }
                }
            };
            per_rel.push(Transport { kind: *kind, rotation, shift });
        }
        transports.push(per_rel);
    }
    if rd.pos != rd.data.len() {
        return Err(Error::Checkpoint(format!("{} trailing values in blob", rd.data.len() - rd.pos)));
    }
    if header.logits.len() != header.n_relations || header.coeffs.beta.len() != header.n_relations {
        return Err(Error::Checkpoint("relation count disagrees with coefficients".into()));
    }
    let params = ModelParams {
        kinds: header.kinds,
        embeddings,
        transports,
        coeffs: header.coeffs,
        mixture: MixtureWeights::from_logits(header.logits),
        bounds: header.bounds,
    };
    Ok((params, header.config))
}
