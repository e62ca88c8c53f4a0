//! The decoupled outer loop: MaxEnt coefficient refresh, embedding gradient
//! steps on the surrogate, distortion energies, and softmax weight updates.
//!
//! Each outer iteration `k` at temperature `λ_k`:
//!
//! 1. holds the mixture weights fixed;
//! 2. recomputes composite energies for every candidate set, solves the
//!    per-context MaxEnt duals against the `(r, u)` moments, and averages the
//!    multipliers into `(α_{r,u}, β_r, τ_r)`;
//! 3. takes projected gradient steps on the embeddings;
//! 4. recomputes the distortion energies `E_{r,m}`;
//! 5. moves the weights toward `softmax(−E_r/λ_k)`.
//!
//! With `monotone_guard` set, every block is damped (or rejected) so the
//! surrogate `J` never increases within an iteration.

mod checkpoint;
mod eval;
mod objective;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use eval::{evaluate_ranking, random_chance_mrr, score_rank, temporal_split, RankingMetrics};
pub use objective::{
    distortion_energies, embedding_step, metric_distances, regularizers, surrogate_j, surrogate_j_gradient, Gradient,
    ObjectiveParts,
};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_isometry_with, raw_distance, DomainBounds, Geometry, ManifoldKind, Transport};
use crate::graphstore::{candidate_set, FeatureCache, FeatureConfig, GraphSnapshot, TemporalKG};
use crate::maxent::{
    check_nondegeneracy, empirical_moments, repair_degeneracy, solve_maxent, FeatureMatrix, RepairConfig, SolverConfig,
};
use crate::mixture::{graph_distance_or_cap, softmax_weights, temperature, DistortionMode, EmbeddingTable, MixtureWeights, DISTORTION_SAMPLES};
use crate::temporal::{Proposal, DEFAULT_K_NEG};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Outer iterations `T`; also the annealing horizon.
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda0: f64,
    /// Linear temperature annealing; constant `λ0` when off.
    pub anneal: bool,
    pub lambda_gate: f64,
    pub lambda_rad: f64,
    pub lambda_corr: f64,
    pub eps_gate: f64,
    /// Stop once the proposed weight update is shorter than this.
    pub tol: f64,
    pub seed: u64,
    pub dim: usize,
    pub geometries: Vec<Geometry>,
    pub k_neg: usize,
    pub k_candidates: usize,
    pub inner_steps: usize,
    pub monotone_guard: bool,
    /// Include the log-sum-exp distortion term in the embedding gradient.
    pub distortion_in_embedding_step: bool,
    pub learn_translations: bool,
    pub per_bin_embeddings: bool,
    pub init_radius_e: f64,
    pub init_radius_h: f64,
    /// Shifts of the initial transports are drawn inside the domain bounds
    /// scaled by this factor.
    pub transport_init_scale: f64,
    pub bounds: DomainBounds,
    pub features: FeatureConfig,
    pub solver: SolverConfig,
    pub repair: RepairConfig,
    pub distortion_mode: DistortionMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-2,
            lambda0: 1.0,
            anneal: true,
            lambda_gate: 1e-3,
            lambda_rad: 1e-4,
            lambda_corr: 1e-3,
            eps_gate: 1e-8,
            tol: 1e-4,
            seed: 0,
            dim: 2,
            geometries: Geometry::ALL.to_vec(),
            k_neg: DEFAULT_K_NEG,
            k_candidates: 10,
            inner_steps: 1,
            monotone_guard: true,
            distortion_in_embedding_step: true,
            learn_translations: false,
            per_bin_embeddings: false,
            init_radius_e: 1.0,
            init_radius_h: 0.3,
            transport_init_scale: 0.1,
            bounds: DomainBounds::default(),
            features: FeatureConfig::default(),
            solver: SolverConfig::default(),
            repair: RepairConfig::default(),
            distortion_mode: DistortionMode::Exact,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("lambda0", self.lambda0),
            ("eps_gate", self.eps_gate),
            ("init_radius_e", self.init_radius_e),
            ("init_radius_h", self.init_radius_h),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("lambda_gate", self.lambda_gate),
            ("lambda_rad", self.lambda_rad),
            ("lambda_corr", self.lambda_corr),
            ("transport_init_scale", self.transport_init_scale),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidArgument("tol must be non-negative".into()));
        }
        if self.epochs == 0 || self.dim == 0 || self.k_neg == 0 || self.k_candidates < 2 {
            return Err(Error::InvalidArgument("epochs, dim, k_neg must be positive and k_candidates >= 2".into()));
        }
        if self.geometries.is_empty() {
            return Err(Error::InvalidArgument("at least one geometry is required".into()));
        }
        if self.init_radius_e > self.bounds.r_e || self.init_radius_h > self.bounds.r_h {
            return Err(Error::InvalidArgument("initial radii must lie inside the domain bounds".into()));
        }
        self.bounds.validate()?;
        self.features.validate()
    }

    pub fn kinds(&self) -> Vec<ManifoldKind> {
        self.geometries.iter().map(|g| ManifoldKind { geometry: *g, dim: self.dim }).collect()
    }
}

/// `(α_{r,u}, β_r, τ_r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxEntCoeffs {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
}

impl MaxEntCoeffs {
    /// `α_{r,u}`; bins past the trained range use the relation mean.
    pub fn alpha_at(&self, r: usize, u: usize) -> f64 {
        let row = &self.alpha[r];
        match row.get(u) {
            Some(a) => *a,
            None if row.is_empty() => 0.0,
            None => row.iter().sum::<f64>() / row.len() as f64,
        }
    }

    fn lerp(&self, other: &MaxEntCoeffs, s: f64) -> MaxEntCoeffs {
        let mix = |a: &f64, b: &f64| a + s * (b - a);
        MaxEntCoeffs {
            alpha: self.alpha.iter().zip(&other.alpha).map(|(x, y)| x.iter().zip(y).map(|(a, b)| mix(a, b)).collect()).collect(),
            beta: self.beta.iter().zip(&other.beta).map(|(a, b)| mix(a, b)).collect(),
            tau: self.tau.iter().zip(&other.tau).map(|(a, b)| mix(a, b)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub kinds: Vec<ManifoldKind>,
    /// `embeddings[slot][m]`; a single slot unless per-bin embeddings are on.
    pub embeddings: Vec<Vec<EmbeddingTable>>,
    /// `transports[m][r]`.
    pub transports: Vec<Vec<Transport>>,
    pub coeffs: MaxEntCoeffs,
    pub mixture: MixtureWeights,
    pub bounds: DomainBounds,
}

impl ModelParams {
    pub fn init(n_entities: usize, n_relations: usize, n_bins: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let kinds = cfg.kinds();
        let tables: Vec<EmbeddingTable> = kinds
            .iter()
            .map(|k| {
                let radius = match k.geometry {
                    Geometry::Euclidean => cfg.init_radius_e,
                    Geometry::Hyperbolic => cfg.init_radius_h,
                    Geometry::Spherical => 1.0,
                };
                EmbeddingTable::random(*k, n_entities, radius, &mut rng)
            })
            .collect();
        let n_slots = if cfg.per_bin_embeddings { n_bins.max(1) } else { 1 };
        let s = cfg.transport_init_scale;
        let b = cfg.bounds;
        let scaled = DomainBounds { r_e: b.r_e * s, r_h: b.r_h * s, b_phi: b.b_phi * s, ..b };
        let transports = kinds
            .iter()
            .map(|k| (0..n_relations).map(|_| random_isometry_with(*k, &scaled, &mut rng)).collect())
            .collect();
        let alpha0 = -(cfg.k_candidates as f64).ln();
        Ok(Self {
            kinds: kinds.clone(),
            embeddings: vec![tables; n_slots],
            transports,
            coeffs: MaxEntCoeffs {
                alpha: vec![vec![alpha0; n_bins]; n_relations],
                beta: vec![0.0; n_relations],
                tau: vec![0.0; n_relations],
            },
            mixture: MixtureWeights::uniform(n_relations, kinds.len()),
            bounds: cfg.bounds,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.embeddings[0][0].len()
    }

    pub fn n_relations(&self) -> usize {
        self.coeffs.beta.len()
    }

    pub fn n_metrics(&self) -> usize {
        self.kinds.len()
    }

    pub fn slot(&self, u: usize) -> usize {
        u.min(self.embeddings.len() - 1)
    }

    /// Per-metric `d_m²(φ_r(x_h), x_t)` at bin `u`.
    pub fn sq_distances(&self, r: usize, h: usize, t: usize, u: usize) -> Vec<f64> {
        let slot = self.slot(u);
        (0..self.n_metrics()).map(|m| self.embeddings[slot][m].sq_distance(&self.transports[m][r], h, t)).collect()
    }

    /// `φ_r^m(x_h)` for every slot, metric, relation and head, so that
    /// event loops pay for each transport once.
    pub fn head_images(&self) -> HeadImages {
        let images = self
            .embeddings
            .iter()
            .map(|tables| {
                tables
                    .iter()
                    .zip(&self.transports)
                    .map(|(table, per_rel)| per_rel.iter().map(|tr| table.points.iter().map(|x| tr.map(x)).collect()).collect())
                    .collect()
            })
            .collect();
        HeadImages { images }
    }

    /// [`ModelParams::composite`] using precomputed head images.
    pub fn composite_with(&self, heads: &HeadImages, r: usize, h: usize, t: usize, u: usize) -> f64 {
        let slot = self.slot(u);
        let w = self.mixture.row(r);
        (0..self.n_metrics())
            .map(|m| {
                let table = &self.embeddings[slot][m];
                w[m] * raw_distance(table.kind.geometry, &heads.images[slot][m][r][h], &table.points[t]).powi(2)
            })
            .sum()
    }

    /// Composite energy `D(h, r, t; u)`.
    pub fn composite(&self, r: usize, h: usize, t: usize, u: usize) -> f64 {
        self.sq_distances(r, h, t, u).iter().zip(self.mixture.row(r)).map(|(d, w)| w * d).sum()
    }

    /// Canonical score `α_{r,u} + β_r·Ŝ − τ_r·D`.
    pub fn score(&self, r: usize, h: usize, t: usize, u: usize, s_hat: f64) -> f64 {
        self.coeffs.alpha_at(r, u) + self.coeffs.beta[r] * s_hat - self.coeffs.tau[r] * self.composite(r, h, t, u)
    }

    /// Point invariants for every embedding and transport.
    pub fn validate(&self) -> Result<()> {
        for slot in &self.embeddings {
            for table in slot {
                table.check_bounds(&self.bounds)?;
            }
        }
        for per_rel in &self.transports {
            for t in per_rel {
                t.validate(&self.bounds)?;
            }
        }
        Ok(())
    }

    /// Largest `‖x‖/bound` over Euclidean and hyperbolic coordinates.
    pub fn max_norm_ratio(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for table in self.embeddings.iter().flatten() {
            let bound = match table.kind.geometry {
                Geometry::Euclidean => self.bounds.r_e,
                Geometry::Hyperbolic => self.bounds.r_h,
                Geometry::Spherical => continue,
            };
            for p in &table.points {
                worst = worst.max(p.norm() / bound);
            }
        }
        worst
    }

    /// Whether any Euclidean or hyperbolic coordinate sits within `1e-6` of
    /// its bound.
    pub fn at_bound(&self) -> bool {
        self.embeddings.iter().flatten().any(|table| {
            let bound = match table.kind.geometry {
                Geometry::Euclidean => self.bounds.r_e,
                Geometry::Hyperbolic => self.bounds.r_h,
                Geometry::Spherical => return false,
            };
            table.points.iter().any(|p| p.norm() >= bound - 1e-6)
        })
    }
}

/// One scored event: a positive (`q = None`) or a sampled negative carrying
/// its proposal probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
    pub bin: usize,
    pub s_hat: f64,
    pub delta: f64,
    pub q: Option<f64>,
}

/// A MaxEnt context `(h, r, u)` and its fixed candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub head: usize,
    pub relation: usize,
    pub bin: usize,
    pub candidates: Vec<usize>,
    /// `Ŝ` from the head to every entity.
    pub s_row: Vec<f64>,
}

/// A weighted pair of the empirical distribution with its graph distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionPair {
    pub head: usize,
    pub tail: usize,
    pub prob: f64,
    pub graph_distance: f64,
}

/// Everything derived from the graph once, before optimization: events,
/// fixed negatives, candidate sets, and the pairs behind the distortion
/// energies.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_bins: usize,
    pub positives: Vec<Event>,
    pub negatives: Vec<Event>,
    pub contexts: Vec<Context>,
    /// Positive-event indices per `(r, u)`.
    pub moment_groups: BTreeMap<(usize, usize), Vec<usize>>,
    /// Positive-event indices per relation.
    pub relation_positives: Vec<Vec<usize>>,
    /// Bin at which distortion energies are evaluated.
    pub distortion_bin: usize,
    pub pairs: Vec<Vec<DistortionPair>>,
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bin whose history feeds the structural feature of an event at `u`: the
/// previous bin, so an event never sees its own edge.
pub fn feature_bin(u: usize) -> Option<usize> {
    u.checked_sub(1)
}

/// `Ŝ` row from `h` for an event at `u` (all zeros at the first bin).
pub fn feature_row(cache: &mut FeatureCache<'_>, n_entities: usize, h: usize, u: usize) -> Vec<f64> {
    match feature_bin(u) {
        Some(b) => cache.row(h, b).to_vec(),
        None => vec![0.0; n_entities],
    }
}

/// Monte Carlo replacement of a pair distribution by the empirical frequencies
/// of `DISTORTION_SAMPLES` draws.
fn resample_pairs(
    dist: &BTreeMap<(usize, usize), f64>,
    seed: u64,
) -> Result<BTreeMap<(usize, usize), f64>> {
    let keys: Vec<(usize, usize)> = dist.keys().copied().collect();
    let index = WeightedIndex::new(dist.values().copied()).map_err(|e| Error::EmptySupport(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    let w = 1.0 / DISTORTION_SAMPLES as f64;
    for _ in 0..DISTORTION_SAMPLES {
        *out.entry(keys[index.sample(&mut rng)]).or_insert(0.0) += w;
    }
    Ok(out)
}

impl TrainingData {
    pub fn build(kg: &TemporalKG, cfg: &TrainConfig) -> Result<Self> {
        if kg.is_empty() {
            return Err(Error::EmptySupport("training graph has no events".into()));
        }
        let n = kg.n_entities();
        if n < 2 {
            return Err(Error::InvalidArgument("need at least two entities".into()));
        }
        let k = cfg.k_candidates.min(n);
        let mut cache = FeatureCache::new(kg, cfg.features);
        let mut by_context: BTreeMap<(usize, usize, usize), Vec<usize>> = BTreeMap::new();
        for q in kg.quadruples() {
            by_context.entry((q.bin, q.relation, q.head)).or_default().push(q.tail);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1, 0));
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        let mut contexts = Vec::new();
        let mut moment_groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        let mut relation_positives = vec![Vec::new(); kg.n_relations()];
        for (idx, (&(u, r, h), tails)) in by_context.iter().enumerate() {
            let s_row = feature_row(&mut cache, n, h, u);
            let delta = kg.width(u);
            let proposal = if tails.len() < n { Some(Proposal::uniform_excluding(n, tails)?) } else { None };
            for &t in tails {
                moment_groups.entry((r, u)).or_default().push(positives.len());
                relation_positives[r].push(positives.len());
                positives.push(Event { head: h, relation: r, tail: t, bin: u, s_hat: s_row[t], delta, q: None });
                if let Some(p) = &proposal {
                    for s in p.sample(cfg.k_neg, &mut rng) {
                        negatives.push(Event {
                            head: h,
                            relation: r,
                            tail: s.tail,
                            bin: u,
                            s_hat: s_row[s.tail],
                            delta,
                            q: Some(s.q),
                        });
                    }
                }
            }
            let candidates = candidate_set(kg, h, r, u, k, mix_seed(cfg.seed, 2, idx as u64))?;
            contexts.push(Context { head: h, relation: r, bin: u, candidates, s_row });
        }

        let distortion_bin = kg.quadruples().iter().map(|q| q.bin).max().unwrap_or(0);
        let snap = GraphSnapshot::up_to(kg, distortion_bin);
        let mut pairs = vec![Vec::new(); kg.n_relations()];
        for (r, out) in pairs.iter_mut().enumerate() {
            if let Ok(dist) = crate::graphstore::pair_distribution(kg, r, distortion_bin) {
                let dist = match cfg.distortion_mode {
                    DistortionMode::Exact => dist,
                    DistortionMode::Sampled { seed } => resample_pairs(&dist, mix_seed(seed, 4, r as u64))?,
                };
                *out = dist
                    .into_iter()
                    .map(|((h, t), prob)| DistortionPair {
                        head: h,
                        tail: t,
                        prob,
                        graph_distance: graph_distance_or_cap(&snap, n, h, t),
                    })
                    .collect();
            }
        }
        Ok(Self {
            n_entities: n,
            n_relations: kg.n_relations(),
            n_bins: kg.n_bins(),
            positives,
            negatives,
            contexts,
            moment_groups,
            relation_positives,
            distortion_bin,
            pairs,
        })
    }
}

/// Counters from one round of MaxEnt solves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub solved: usize,
    pub skipped: usize,
    pub irreparable: usize,
    pub repaired: usize,
}

/// Step 2: per-context dual solves at the current embeddings and weights,
/// averaged into per-relation multipliers and per-`(r, u)` offsets.
pub fn solve_coefficients(
    params: &ModelParams,
    data: &TrainingData,
    cfg: &TrainConfig,
    round: u64,
) -> (MaxEntCoeffs, SolveStats) {
    let mut stats = SolveStats::default();
    let mut moments = BTreeMap::new();
    for (&(r, u), idx) in &data.moment_groups {
        let d: Vec<f64> = idx.iter().map(|&i| {
            let e = &data.positives[i];
            params.composite(r, e.head, e.tail, u)
        }).collect();
        let s: Vec<f64> = idx.iter().map(|&i| data.positives[i].s_hat).collect();
        if let Ok(c) = empirical_moments(&d, &s) {
            moments.insert((r, u), c);
        }
    }

    let n_rel = data.n_relations;
    let mut alpha_acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    let mut beta_acc = vec![(0.0, 0usize); n_rel];
    let mut tau_acc = vec![(0.0, 0usize); n_rel];
    let repair_cfg = RepairConfig { c_cond: cfg.solver.c_cond, ..cfg.repair };
    let solver_cfg: SolverConfig = cfg.solver;
    for (ci, ctx) in data.contexts.iter().enumerate() {
        let Some(c) = moments.get(&(ctx.relation, ctx.bin)) else { continue };
        let features_of = |e: usize| (ctx.s_row[e], params.composite(ctx.relation, ctx.head, e, ctx.bin));
        let (s, d): (Vec<f64>, Vec<f64>) = ctx.candidates.iter().map(|&e| features_of(e)).unzip();
        let Ok(mut f) = FeatureMatrix::new(s, d) else {
            stats.skipped += 1;
            continue;
        };
        if !check_nondegeneracy(&f, solver_cfg.c_cond).is_ok() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 3 + round, ci as u64));
            match repair_degeneracy(&f, &ctx.candidates, data.n_entities, features_of, &repair_cfg, &mut rng) {
                Ok(rep) => {
                    stats.repaired += 1;
                    f = rep.matrix;
                }
                Err(_) => {
                    stats.irreparable += 1;
                    continue;
                }
            }
        }
        match solve_maxent(&f, c, &solver_cfg) {
            Ok(sol) => {
                stats.solved += 1;
                let a = alpha_acc.entry((ctx.relation, ctx.bin)).or_insert((0.0, 0));
                a.0 += sol.alpha;
                a.1 += 1;
                beta_acc[ctx.relation].0 += sol.beta;
                beta_acc[ctx.relation].1 += 1;
                tau_acc[ctx.relation].0 += sol.tau;
                tau_acc[ctx.relation].1 += 1;
            }
            Err(_) => stats.skipped += 1,
        }
    }

    let mut next = params.coeffs.clone();
    for r in 0..n_rel {
        if beta_acc[r].1 > 0 {
            next.beta[r] = beta_acc[r].0 / beta_acc[r].1 as f64;
            next.tau[r] = tau_acc[r].0 / tau_acc[r].1 as f64;
        }
        let solved: Vec<f64> =
            alpha_acc.iter().filter(|((rr, _), _)| *rr == r).map(|(_, (sum, n))| sum / *n as f64).collect();
        let rel_mean = (!solved.is_empty()).then(|| solved.iter().sum::<f64>() / solved.len() as f64);
        for u in 0..next.alpha[r].len() {
            if let Some((sum, n)) = alpha_acc.get(&(r, u)) {
                next.alpha[r][u] = sum / *n as f64;
            } else if let Some(m) = rel_mean {
                next.alpha[r][u] = m;
            }
        }
    }
    (next, stats)
}

/// Transported head points, indexed `[slot][m][r][h]`.
#[derive(Clone, Debug)]
pub struct HeadImages {
    pub images: Vec<Vec<Vec<Vec<DVector<f64>>>>>,
}

/// One row of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub j_start: f64,
    pub j_end: f64,
    pub nll: f64,
    pub omega_gate: f64,
    pub omega_rad: f64,
    pub omega_corr: f64,
    pub distortion_term: f64,
    /// `E[r][m]` after the embedding step.
    pub energies: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    /// Length of the accepted weight update.
    pub weight_change: f64,
    /// Length of the proposed (undamped) update, used for convergence.
    pub proposed_weight_change: f64,
    /// Fraction of each block's proposal that was accepted.
    pub coeff_step: f64,
    pub embedding_step: f64,
    pub weight_step: f64,
    pub contexts_solved: usize,
    pub contexts_skipped: usize,
    pub contexts_irreparable: usize,
    pub max_norm_ratio: f64,
    pub at_bound: bool,
    pub negative_tau: bool,
    pub monotone_violation: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub reached_max_epochs: bool,
    /// Stats of the initial coefficient solve that precedes iteration 0.
    pub init_stats: SolveStats,
}

impl TrainTrace {
    pub fn monotone_violations(&self) -> usize {
        self.records.iter().filter(|r| r.monotone_violation).count()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let (n_rel, n_met) = self
            .records
            .first()
            .map(|r| (r.energies.len(), r.energies.first().map_or(0, Vec::len)))
            .unwrap_or((0, 0));
        let mut header: Vec<String> = [
            "iteration",
            "lambda",
            "j_start",
            "j_end",
            "nll",
            "omega_gate",
            "omega_rad",
            "omega_corr",
            "distortion_term",
            "weight_change",
            "proposed_weight_change",
            "coeff_step",
            "embedding_step",
            "weight_step",
            "contexts_solved",
            "contexts_skipped",
            "contexts_irreparable",
            "max_norm_ratio",
            "at_bound",
            "negative_tau",
            "monotone_violation",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for r in 0..n_rel {
            for m in 0..n_met {
                header.push(format!("energy_r{r}_m{m}"));
            }
        }
        for r in 0..n_rel {
            for m in 0..n_met {
                header.push(format!("weight_r{r}_m{m}"));
            }
        }
        w.write_record(&header)?;
        for rec in &self.records {
            let mut row: Vec<String> = vec![
                rec.iteration.to_string(),
                rec.lambda.to_string(),
                rec.j_start.to_string(),
                rec.j_end.to_string(),
                rec.nll.to_string(),
                rec.omega_gate.to_string(),
                rec.omega_rad.to_string(),
                rec.omega_corr.to_string(),
                rec.distortion_term.to_string(),
                rec.weight_change.to_string(),
                rec.proposed_weight_change.to_string(),
                rec.coeff_step.to_string(),
                rec.embedding_step.to_string(),
                rec.weight_step.to_string(),
                rec.contexts_solved.to_string(),
                rec.contexts_skipped.to_string(),
                rec.contexts_irreparable.to_string(),
                rec.max_norm_ratio.to_string(),
                rec.at_bound.to_string(),
                rec.negative_tau.to_string(),
                rec.monotone_violation.to_string(),
            ];
            row.extend(rec.energies.iter().flatten().map(|e| e.to_string()));
            row.extend(rec.weights.iter().flatten().map(|e| e.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        Ok(())
    }
}

/// Tolerance for counting an increase of `J` within an iteration.
pub const MONOTONE_TOL: f64 = 1e-6;
const MAX_HALVINGS: usize = 20;

fn lambda_at(cfg: &TrainConfig, k: usize) -> Result<f64> {
    if cfg.anneal {
        temperature(k, cfg.epochs, cfg.lambda0)
    } else {
        Ok(cfg.lambda0)
    }
}

/// Runs the outer loop on `kg` from a fresh initialization.
pub fn train(kg: &TemporalKG, cfg: &TrainConfig) -> Result<(ModelParams, TrainTrace)> {
    let mut params = ModelParams::init(kg.n_entities(), kg.n_relations(), kg.n_bins(), cfg)?;
    let data = TrainingData::build(kg, cfg)?;
    // Later bins reuse the last trained slot.
    params.embeddings.truncate(data.distortion_bin + 1);
    train_from(params, &data, cfg)
}

/// Runs the outer loop from the given parameters.
pub fn train_from(mut params: ModelParams, data: &TrainingData, cfg: &TrainConfig) -> Result<(ModelParams, TrainTrace)> {
    cfg.validate()?;
    let mut trace = TrainTrace::default();
    let (coeffs, stats) = solve_coefficients(&params, data, cfg, 0);
    params.coeffs = coeffs;
    trace.init_stats = stats;

    for k in 0..cfg.epochs {
        let lambda = lambda_at(cfg, k)?;
        let w_old = params.mixture.clone();
        let j_start = surrogate_j(&params, data, cfg, lambda).total;

        // Step 2: coefficient refresh.
        let (proposal, stats) = solve_coefficients(&params, data, cfg, k as u64 + 1);
        let coeff_step = if cfg.monotone_guard {
            let old = params.coeffs.clone();
            let mut accepted = 0.0;
            let mut s = 1.0;
            for _ in 0..6 {
                params.coeffs = old.lerp(&proposal, s);
                if surrogate_j(&params, data, cfg, lambda).total <= j_start {
                    accepted = s;
                    break;
                }
                s *= 0.5;
            }
            if accepted == 0.0 {
                params.coeffs = old;
            }
            accepted
        } else {
            params.coeffs = proposal;
            1.0
        };

        // Step 3: embedding steps.
        let mut embedding_step_size = 0.0;
        for _ in 0..cfg.inner_steps {
            if cfg.monotone_guard {
                let j_here = surrogate_j(&params, data, cfg, lambda).total;
                let mut eta = cfg.learning_rate;
                let mut taken = 0.0;
                for _ in 0..MAX_HALVINGS {
                    let trial = embedding_step(&params, data, cfg, lambda, eta)?;
                    if surrogate_j(&trial, data, cfg, lambda).total <= j_here {
                        params = trial;
                        taken = eta;
                        break;
                    }
                    eta *= 0.5;
                }
                embedding_step_size = taken;
            } else {
                params = embedding_step(&params, data, cfg, lambda, cfg.learning_rate)?;
                embedding_step_size = cfg.learning_rate;
            }
        }

        // Steps 4–5: distortion energies and the weight update.
        let energies = objective::distortion_energies(&params, data);
        let target: Vec<Vec<f64>> = energies.iter().map(|e| softmax_weights(e, lambda)).collect();
        let proposed_change = target
            .iter()
            .flatten()
            .zip(w_old.rows().iter().flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let set_weights = |params: &mut ModelParams, s: f64| -> Result<()> {
            for (r, t) in target.iter().enumerate() {
                let row: Vec<f64> = w_old.row(r).iter().zip(t).map(|(a, b)| a + s * (b - a)).collect();
                let total: f64 = row.iter().sum();
                let row: Vec<f64> = row.iter().map(|x| x / total).collect();
                params.mixture.set_row(r, &row)?;
            }
            Ok(())
        };
        let weight_step = if cfg.monotone_guard {
            let mut s = 1.0;
            let mut accepted = 0.0;
            for _ in 0..6 {
                set_weights(&mut params, s)?;
                if surrogate_j(&params, data, cfg, lambda).total <= j_start {
                    accepted = s;
                    break;
                }
                s *= 0.5;
            }
            if accepted == 0.0 {
                params.mixture = w_old.clone();
            }
            accepted
        } else {
            set_weights(&mut params, 1.0)?;
            1.0
        };

        let parts = surrogate_j(&params, data, cfg, lambda);
        let negative_tau = params.coeffs.tau.iter().any(|t| *t < 0.0);
        if negative_tau {
            log::warn!("iteration {k}: negative tau {:?}", params.coeffs.tau);
        }
        let record = IterationRecord {
            iteration: k,
            lambda,
            j_start,
            j_end: parts.total,
            nll: parts.nll,
            omega_gate: parts.omega_gate,
            omega_rad: parts.omega_rad,
            omega_corr: parts.omega_corr,
            distortion_term: parts.distortion_term,
            energies: parts.energies.clone(),
            weights: params.mixture.rows().to_vec(),
            weight_change: params.mixture.distance(&w_old),
            proposed_weight_change: proposed_change,
            coeff_step,
            embedding_step: embedding_step_size,
            weight_step,
            contexts_solved: stats.solved,
            contexts_skipped: stats.skipped,
            contexts_irreparable: stats.irreparable,
            max_norm_ratio: params.max_norm_ratio(),
            at_bound: params.at_bound(),
            negative_tau,
            monotone_violation: parts.total > j_start + MONOTONE_TOL,
        };
        log::debug!(
            "iter {k}: lambda {lambda:.4} J {:.6} -> {:.6} nll {:.4} dw {:.2e}",
            record.j_start,
            record.j_end,
            record.nll,
            record.proposed_weight_change
        );
        if record.monotone_violation {
            log::warn!("iteration {k}: surrogate increased from {} to {}", record.j_start, record.j_end);
        }
        trace.records.push(record);
        if proposed_change < cfg.tol {
            trace.converged = true;
            break;
        }
    }
    trace.reached_max_epochs = !trace.converged;
    Ok((params, trace))
}

#[cfg(test)]
mod tests;
