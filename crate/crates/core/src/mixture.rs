//! Composite energies over the metric components, distortion energies against
//! graph distances, and temperature-controlled mixture weights.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_point, raw_distance, DomainBounds, ManifoldKind, Point, Transport};
use crate::graphstore::{pair_distribution, GraphSnapshot, TemporalKG};

pub const LAMBDA_MIN: f64 = 1e-3;
pub const DEFAULT_LAMBDA0: f64 = 1.0;
pub const DISTORTION_SAMPLES: usize = 1024;

/// All entity coordinates in one metric component.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub kind: ManifoldKind,
    pub points: Vec<DVector<f64>>,
}

impl EmbeddingTable {
    pub fn new(kind: ManifoldKind, points: Vec<DVector<f64>>) -> Result<Self> {
        for p in &points {
            Point::new(kind, p.clone())?;
        }
        Ok(Self { kind, points })
    }

    /// Points drawn uniformly in the `radius` ball (or on the sphere).
    pub fn random(kind: ManifoldKind, n: usize, radius: f64, rng: &mut impl Rng) -> Self {
        Self { kind, points: (0..n).map(|_| random_point(kind, radius, rng).coords).collect() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point {
        Point { kind: self.kind, coords: self.points[i].clone() }
    }

    /// `d(φ(x_h), x_t)`.
    pub fn distance(&self, transport: &Transport, h: usize, t: usize) -> f64 {
        raw_distance(self.kind.geometry, &transport.map(&self.points[h]), &self.points[t])
    }

    pub fn sq_distance(&self, transport: &Transport, h: usize, t: usize) -> f64 {
        self.distance(transport, h, t).powi(2)
    }

    pub fn check_bounds(&self, bounds: &DomainBounds) -> Result<()> {
        for p in &self.points {
            Point { kind: self.kind, coords: p.clone() }.check_bounds(bounds)?;
        }
        Ok(())
    }
}

/// `Σ_m w_m · d_m²`.
pub fn composite_energy(weights: &[f64], sq_dists: &[f64]) -> Result<f64> {
    if weights.len() != sq_dists.len() {
        return Err(Error::DimensionMismatch { expected: weights.len(), got: sq_dists.len() });
    }
    Ok(weights.iter().zip(sq_dists).map(|(w, d)| w * d).sum())
}

/// Composite energy of the triple `(h, r, t)` given one table and one
/// relation transport per metric.
pub fn triple_energy(weights: &[f64], tables: &[EmbeddingTable], transports: &[&Transport], h: usize, t: usize) -> f64 {
    weights.iter().zip(tables).zip(transports).map(|((w, tab), tr)| w * tab.sq_distance(tr, h, t)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistortionMode {
    /// Exact expectation over the empirical pair distribution.
    Exact,
    /// Monte Carlo average over `DISTORTION_SAMPLES` pairs drawn from it.
    Sampled { seed: u64 },
}

/// Distance used for disconnected pairs: `n − 1`, an upper bound on any
/// finite hop count.
pub fn graph_distance_or_cap(snap: &GraphSnapshot, n_entities: usize, h: usize, t: usize) -> f64 {
    snap.distance(h, t).map_or(n_entities.saturating_sub(1) as f64, |d| d as f64)
}

/// `E_{(h,t)∼π_r(u)}[(d_m(φ_r(x_h), x_t) − d_graph(h, t; u))²]` per metric.
pub fn distortion_energy(
    kg: &TemporalKG,
    r: usize,
    u: usize,
    tables: &[EmbeddingTable],
    transports: &[&Transport],
    mode: DistortionMode,
) -> Result<Vec<f64>> {
    if tables.len() != transports.len() {
        return Err(Error::DimensionMismatch { expected: tables.len(), got: transports.len() });
    }
    let pairs = pair_distribution(kg, r, u)?;
    let snap = GraphSnapshot::up_to(kg, u);
    let n = kg.n_entities();
    let weighted: Vec<((usize, usize), f64)> = match mode {
        DistortionMode::Exact => pairs.into_iter().collect(),
        DistortionMode::Sampled { seed } => {
            let keys: Vec<(usize, usize)> = pairs.keys().copied().collect();
            let index = WeightedIndex::new(pairs.values().copied()).map_err(|e| Error::EmptySupport(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = 1.0 / DISTORTION_SAMPLES as f64;
            (0..DISTORTION_SAMPLES).map(|_| (keys[index.sample(&mut rng)], w)).collect()
        }
    };
    Ok(tables
        .iter()
        .zip(transports)
        .map(|(tab, tr)| {
            weighted
                .iter()
                .map(|((h, t), p)| p * (tab.distance(tr, *h, *t) - graph_distance_or_cap(&snap, n, *h, *t)).powi(2))
                .sum()
        })
        .collect())
}

/// `softmax(−E/λ)` with max subtraction.
pub fn softmax_weights(energies: &[f64], lambda: f64) -> Vec<f64> {
    let logits: Vec<f64> = energies.iter().map(|e| -e / lambda).collect();
    softmax(&logits)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|a| (a - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// `−λ·log Σ_p exp(−E_p/λ)`.
pub fn log_sum_exp_energy(energies: &[f64], lambda: f64) -> f64 {
    let m = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = energies.iter().map(|e| (-(e - m) / lambda).exp()).sum();
    m - lambda * s.ln()
}

/// Linear annealing `λ₀(1 − t/T)`, floored at [`LAMBDA_MIN`].
pub fn temperature(t: usize, total: usize, lambda0: f64) -> Result<f64> {
    if t >= total {
        return Err(Error::InvalidArgument(format!("epoch {t} is not below the total {total}")));
    }
    Ok((lambda0 * (1.0 - t as f64 / total as f64)).max(LAMBDA_MIN))
}

/// Per-relation simplex weights over the metric components, kept in sync with
/// their logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    logits: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl MixtureWeights {
    pub fn uniform(n_relations: usize, n_metrics: usize) -> Self {
        Self::from_logits(vec![vec![0.0; n_metrics]; n_relations])
    }

    pub fn from_logits(logits: Vec<Vec<f64>>) -> Self {
        let weights = logits.iter().map(|a| softmax(a)).collect();
        Self { logits, weights }
    }

    /// Weights `softmax(−E_r/λ)` for every relation.
    pub fn from_energies(table: &DistortionTable, lambda: f64) -> Self {
        Self::from_logits(table.energies.iter().map(|e| e.iter().map(|x| -x / lambda).collect()).collect())
    }

    pub fn n_relations(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r]
    }

    pub fn logits(&self, r: usize) -> &[f64] {
        &self.logits[r]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Replaces one relation's weights by a point of the simplex. Logits are
    /// set to `log w` and the stored weights recomputed from them.
    pub fn set_row(&mut self, r: usize, w: &[f64]) -> Result<()> {
        let total: f64 = w.iter().sum();
        if w.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("mixture weights must lie on the simplex".into()));
        }
        self.logits[r] = w.iter().map(|x| x.max(f64::MIN_POSITIVE).ln()).collect();
        self.weights[r] = softmax(&self.logits[r]);
        Ok(())
    }

    /// Euclidean distance between two weight sets, over all relations.
    pub fn distance(&self, other: &MixtureWeights) -> f64 {
        self.weights
            .iter()
            .flatten()
            .zip(other.weights.iter().flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// `E[r][m]`: distortion energy of relation `r` in metric `m`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistortionTable {
    pub energies: Vec<Vec<f64>>,
}

impl DistortionTable {
    /// Builds the table at bin `u`. Relations without events up to `u` get
    /// zero energy in every metric.
    pub fn compute(
        kg: &TemporalKG,
        u: usize,
        tables: &[EmbeddingTable],
        transports: &[Vec<Transport>],
        mode: DistortionMode,
    ) -> Result<Self> {
        let energies = (0..kg.n_relations())
            .map(|r| {
                let trs: Vec<&Transport> = transports.iter().map(|per_rel| &per_rel[r]).collect();
                match distortion_energy(kg, r, u, tables, &trs, mode) {
                    Err(Error::EmptySupport(_)) => Ok(vec![0.0; tables.len()]),
                    other => other,
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { energies })
    }

    /// `E ≤ (D_m + n − 1)²` for every cell, where `D_m` is the metric's
    /// diameter.
    pub fn within_bound(&self, kinds: &[ManifoldKind], bounds: &DomainBounds, n_entities: usize) -> bool {
        self.energies.iter().all(|row| {
            row.iter().zip(kinds).all(|(e, k)| {
                let cap = (k.diameter(bounds) + n_entities.saturating_sub(1) as f64).powi(2);
                e.is_finite() && *e <= cap
            })
        })
    }
}
