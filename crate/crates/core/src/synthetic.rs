//! Planted-model generator: entity coordinates in a chosen geometry, scores
//! `α − τ·d²`, and bin events drawn from the cloglog link.

use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::hyperbolic_tree_embedding;
use crate::error::{Error, Result};
use crate::geometry::{random_point, raw_distance, Geometry, ManifoldKind};
use crate::graphstore::{Quadruple, TemporalKG};
use crate::temporal::{simulate_bin_events_with, BinSchedule};

/// How a relation's entities are laid out in its planted geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `n` points uniform in the ball of radius `radius` (or on the sphere).
    Random { n: usize, radius: f64 },
    /// Complete binary tree in the Poincaré disk with the given edge length.
    Tree { depth: usize, edge: f64 },
    /// `side × side` square lattice with the given spacing.
    Grid { side: usize, spacing: f64 },
}

impl Layout {
    pub fn n_entities(&self) -> usize {
        match *self {
            Layout::Random { n, .. } => n,
            Layout::Tree { depth, .. } => (1usize << (depth + 1)) - 1,
            Layout::Grid { side, .. } => side * side,
        }
    }

    /// Distance between adjacent entities, used to calibrate the offset.
    fn unit(&self) -> f64 {
        match *self {
            Layout::Random { radius, .. } => radius,
            Layout::Tree { edge, .. } => edge,
            Layout::Grid { spacing, .. } => spacing,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedRelation {
    pub geometry: Geometry,
    pub layout: Layout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub n_bins: usize,
    pub bin_width: f64,
    pub dim: usize,
    /// Each relation owns a disjoint block of entities.
    pub relations: Vec<PlantedRelation>,
    /// Per-bin event probability of a pair at the layout's unit distance.
    pub p_unit: f64,
    /// `τ·unit²`: how fast the log-rate falls with squared distance.
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_bins: 30,
            bin_width: 1.0,
            dim: 2,
            relations: vec![
                PlantedRelation { geometry: Geometry::Hyperbolic, layout: Layout::Tree { depth: 3, edge: 1.0 } },
                PlantedRelation { geometry: Geometry::Euclidean, layout: Layout::Grid { side: 5, spacing: 1.0 } },
            ],
            p_unit: 0.1,
            sharpness: 2.0,
            seed: 0,
        }
    }
}

/// Ground truth behind a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub config: PlantedConfig,
    /// First entity index of each relation's block.
    pub offsets: Vec<usize>,
    /// `(α_r, τ_r)`.
    pub coefficients: Vec<(f64, f64)>,
    /// Planted coordinates per relation block.
    pub embeddings: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct PlantedDataset {
    pub kg: TemporalKG,
    pub truth: PlantedTruth,
}

fn layout_points(rel: &PlantedRelation, dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
    match (rel.layout, rel.geometry) {
        (Layout::Random { n, radius }, g) => {
            let kind = ManifoldKind { geometry: g, dim };
            Ok((0..n).map(|_| random_point(kind, radius, rng).coords).collect())
        }
        (Layout::Tree { depth, edge }, Geometry::Hyperbolic) if dim == 2 => {
            Ok(hyperbolic_tree_embedding(depth, edge))
        }
        (Layout::Grid { side, spacing }, Geometry::Euclidean) if dim == 2 => {
            let c = (side as f64 - 1.0) / 2.0;
            Ok((0..side * side)
                .map(|k| DVector::from_vec(vec![((k / side) as f64 - c) * spacing, ((k % side) as f64 - c) * spacing]))
                .collect())
        }
        (layout, g) => Err(Error::InvalidArgument(format!(
            "layout {layout:?} is not available for {g:?} at dimension {dim}"
        ))),
    }
}

/// Samples a dataset. For every ordered pair inside a relation's block the
/// score is `α − τ d²` with `τ = sharpness/unit²` and `α` set so a pair at
/// the unit distance fires with probability `p_unit` per unit-width bin.
pub fn generate_planted(cfg: &PlantedConfig) -> Result<PlantedDataset> {
    if cfg.n_bins == 0 || !(cfg.bin_width > 0.0) || cfg.dim == 0 {
        return Err(Error::InvalidArgument("n_bins, bin_width and dim must be positive".into()));
    }
    if !(cfg.p_unit > 0.0 && cfg.p_unit < 1.0) || !(cfg.sharpness >= 0.0) {
        return Err(Error::InvalidArgument("p_unit must lie in (0, 1) and sharpness be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bins = BinSchedule::uniform(cfg.n_bins, cfg.bin_width)?;
    let mut quads = Vec::new();
    let mut offsets = Vec::new();
    let mut coefficients = Vec::new();
    let mut embeddings = Vec::new();
    let mut offset = 0;
    for (r, rel) in cfg.relations.iter().enumerate() {
        let pts = layout_points(rel, cfg.dim, &mut rng)?;
        let unit = rel.layout.unit();
        let tau = if unit > 0.0 { cfg.sharpness / (unit * unit) } else { 0.0 };
        let alpha = (-(-cfg.p_unit).ln_1p()).ln() + cfg.sharpness;
        for (i, xi) in pts.iter().enumerate() {
            for (j, xj) in pts.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = raw_distance(rel.geometry, xi, xj);
                let f = alpha - tau * d * d;
                let schedule = vec![f; cfg.n_bins];
                for (u, fired) in simulate_bin_events_with(&schedule, &bins, &mut rng)?.into_iter().enumerate() {
                    if fired {
                        quads.push(Quadruple::new(offset + i, r, offset + j, u));
                    }
                }
            }
        }
        offsets.push(offset);
        coefficients.push((alpha, tau));
        embeddings.push(pts.iter().map(|p| p.iter().copied().collect()).collect());
        offset += pts.len();
    }
    quads.sort();
    let kg = TemporalKG::new(offset, cfg.relations.len(), bins.widths().to_vec(), quads)?;
    Ok(PlantedDataset { kg, truth: PlantedTruth { config: cfg.clone(), offsets, coefficients, embeddings } })
}

impl PlantedDataset {
    /// Writes `events.tsv`, `bins.json` and `truth.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        crate::graphstore::save_tsv(&self.kg, dir.join("events.tsv"))?;
        crate::graphstore::save_bin_widths(self.kg.bin_widths(), dir.join("bins.json"))?;
        std::fs::write(dir.join("truth.json"), serde_json::to_vec_pretty(&self.truth)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::cloglog_prob;

    #[test]
    fn deterministic_and_block_structured() {
        let cfg = PlantedConfig { n_bins: 5, ..PlantedConfig::default() };
        let a = generate_planted(&cfg).unwrap();
        let b = generate_planted(&cfg).unwrap();
        assert_eq!(a.kg, b.kg);
        assert_eq!(a.kg.n_entities(), 15 + 25);
        for q in a.kg.quadruples() {
            let lo = a.truth.offsets[q.relation];
            let n = cfg.relations[q.relation].layout.n_entities();
            assert!((lo..lo + n).contains(&q.head) && (lo..lo + n).contains(&q.tail));
        }
    }

    #[test]
    fn empty_relation_list_gives_empty_graph() {
        let cfg = PlantedConfig { relations: vec![], ..PlantedConfig::default() };
        let d = generate_planted(&cfg).unwrap();
        assert!(d.kg.is_empty());
        assert_eq!(d.kg.n_entities(), 0);
    }

    #[test]
    fn pair_frequency_matches_link() {
        let cfg = PlantedConfig {
            n_bins: 4000,
            relations: vec![PlantedRelation {
                geometry: Geometry::Euclidean,
                layout: Layout::Grid { side: 2, spacing: 1.0 },
            }],
            ..PlantedConfig::default()
        };
        let d = generate_planted(&cfg).unwrap();
        let (alpha, tau) = d.truth.coefficients[0];
        // Entities 0 and 1 are lattice neighbours at distance 1.
        let p = cloglog_prob(alpha - tau, 1.0);
        assert!((p - cfg.p_unit).abs() < 1e-12);
        let hits = d.kg.quadruples().iter().filter(|q| q.head == 0 && q.tail == 1).count() as f64;
        let n = cfg.n_bins as f64;
        let sd = (p * (1.0 - p) / n).sqrt();
        assert!((hits / n - p).abs() < 3.0 * sd, "{} vs {p}", hits / n);
    }
}
