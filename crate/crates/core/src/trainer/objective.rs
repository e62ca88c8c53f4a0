//! The surrogate `J` and its gradient with respect to embeddings and
//! (optionally) transport shifts.

use nalgebra::DVector;

use super::{Event, HeadImages, ModelParams, TrainConfig, TrainingData};
use crate::error::{Error, Result};
use crate::geometry::{project_in_place, raw_distance, raw_sq_distance_grad, Geometry, Shift};
use crate::mixture::{log_sum_exp_energy, softmax_weights};
use crate::temporal::{nll, nll_gradient, NegativeEvent, PositiveEvent};

/// `J` broken into its terms. `total` already includes the regularizer
/// coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveParts {
    pub total: f64,
    pub nll: f64,
    pub omega_gate: f64,
    pub omega_rad: f64,
    pub omega_corr: f64,
    /// `Σ_r −λ log Σ_m exp(−E_{r,m}/λ)`.
    pub distortion_term: f64,
    pub energies: Vec<Vec<f64>>,
}

/// `(Ω_gate, Ω_rad)`: `Σ √(w² + ε)` over all weights, and the radial barrier
/// `‖x‖²` (Euclidean), `1/(1 − ‖x‖²)` (hyperbolic), `0` (spherical) over all
/// embeddings.
pub fn regularizers(params: &ModelParams, eps_gate: f64) -> (f64, f64) {
    let gate = params.mixture.rows().iter().flatten().map(|w| (w * w + eps_gate).sqrt()).sum();
    let rad = params
        .embeddings
        .iter()
        .flatten()
        .map(|table| match table.kind.geometry {
            Geometry::Euclidean => table.points.iter().map(|x| x.norm_squared()).sum(),
            Geometry::Hyperbolic => table.points.iter().map(|x| 1.0 / (1.0 - x.norm_squared())).sum(),
            Geometry::Spherical => 0.0,
        })
        .sum();
    (gate, rad)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64, f64, f64, f64)> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sx = (x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / nf).sqrt();
    let sy = (y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / nf).sqrt();
    if sx < 1e-12 || sy < 1e-12 {
        return None;
    }
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / nf;
    Some((cov / (sx * sy), mx, my, sx, sy, nf))
}

/// Per-relation distortion energies `E[r][m]` at the data's distortion bin.
pub fn distortion_energies(params: &ModelParams, data: &TrainingData) -> Vec<Vec<f64>> {
    let slot = params.slot(data.distortion_bin);
    data.pairs
        .iter()
        .enumerate()
        .map(|(r, pairs)| {
            (0..params.n_metrics())
                .map(|m| {
                    let table = &params.embeddings[slot][m];
                    let tr = &params.transports[m][r];
                    pairs.iter().map(|p| p.prob * (table.distance(tr, p.head, p.tail) - p.graph_distance).powi(2)).sum()
                })
                .collect()
        })
        .collect()
}

fn event_composites(params: &ModelParams, heads: &HeadImages, events: &[Event]) -> Vec<f64> {
    events.iter().map(|e| params.composite_with(heads, e.relation, e.head, e.tail, e.bin)).collect()
}

fn scores(params: &ModelParams, events: &[Event], d: &[f64]) -> Vec<f64> {
    events
        .iter()
        .zip(d)
        .map(|(e, d)| {
            let r = e.relation;
            params.coeffs.alpha_at(r, e.bin) + params.coeffs.beta[r] * e.s_hat - params.coeffs.tau[r] * d
        })
        .collect()
}

fn likelihood_events(
    data: &TrainingData,
    pos_scores: &[f64],
    neg_scores: &[f64],
) -> (Vec<PositiveEvent>, Vec<NegativeEvent>) {
    let pos = data.positives.iter().zip(pos_scores).map(|(e, s)| PositiveEvent { score: *s, delta: e.delta }).collect();
    let neg = data
        .negatives
        .iter()
        .zip(neg_scores)
        .map(|(e, s)| NegativeEvent { score: *s, delta: e.delta, q: e.q.unwrap_or(1.0) })
        .collect();
    (pos, neg)
}

fn correlation_term(data: &TrainingData, pos_d: &[f64]) -> f64 {
    data.relation_positives
        .iter()
        .filter_map(|idx| {
            let s: Vec<f64> = idx.iter().map(|&i| data.positives[i].s_hat).collect();
            let d: Vec<f64> = idx.iter().map(|&i| pos_d[i]).collect();
            pearson(&s, &d).map(|p| p.0)
        })
        .sum()
}

/// Evaluates `J = NLL + λ_gate·Ω_gate + λ_rad·Ω_rad + λ_corr·Ω_corr +
/// Σ_r LSE_λ(E_r)`.
pub fn surrogate_j(params: &ModelParams, data: &TrainingData, cfg: &TrainConfig, lambda: f64) -> ObjectiveParts {
    let heads = params.head_images();
    let pos_d = event_composites(params, &heads, &data.positives);
    let neg_d = event_composites(params, &heads, &data.negatives);
    let (pos, neg) = likelihood_events(data, &scores(params, &data.positives, &pos_d), &scores(params, &data.negatives, &neg_d));
    let nll = nll(&pos, &neg, cfg.k_neg).unwrap_or(f64::INFINITY);
    let (omega_gate, omega_rad) = regularizers(params, cfg.eps_gate);
    let omega_corr = correlation_term(data, &pos_d);
    let energies = distortion_energies(params, data);
    let distortion_term = energies.iter().map(|e| log_sum_exp_energy(e, lambda)).sum::<f64>();
    let total = nll
        + cfg.lambda_gate * omega_gate
        + cfg.lambda_rad * omega_rad
        + cfg.lambda_corr * omega_corr
        + distortion_term;
    ObjectiveParts { total, nll, omega_gate, omega_rad, omega_corr, distortion_term, energies }
}

/// Gradient of `J` with respect to the continuous geometric parameters.
/// `shifts` is empty unless translations are learned.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    /// `[slot][m][entity]`.
    pub embeddings: Vec<Vec<Vec<DVector<f64>>>>,
    /// `[m][r]`.
    pub shifts: Vec<Vec<DVector<f64>>>,
}

impl Gradient {
    fn zeros(params: &ModelParams, with_shifts: bool) -> Self {
        let embeddings = params
            .embeddings
            .iter()
            .map(|slot| slot.iter().map(|t| vec![DVector::zeros(t.kind.ambient_dim()); t.len()]).collect())
            .collect();
        let shifts = if with_shifts {
            params
                .transports
                .iter()
                .map(|per_rel| {
                    per_rel
                        .iter()
                        .map(|t| match &t.shift {
                            Shift::Translation(v) | Shift::Gyration(v) => DVector::zeros(v.len()),
                            Shift::GreatCircle { .. } => DVector::zeros(1),
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { embeddings, shifts }
    }

    pub fn norm(&self) -> f64 {
        let e: f64 = self.embeddings.iter().flatten().flatten().map(|g| g.norm_squared()).sum();
        let s: f64 = self.shifts.iter().flatten().map(|g| g.norm_squared()).sum();
        (e + s).sqrt()
    }

    /// Accumulates `coef · ∇ d_m²(φ_r(x_h), x_t)` into the head, tail and shift.
    #[allow(clippy::too_many_arguments)]
    fn add_pair(&mut self, params: &ModelParams, slot: usize, m: usize, r: usize, h: usize, t: usize, coef: f64) {
        if coef == 0.0 {
            return;
        }
        let table = &params.embeddings[slot][m];
        let tr = &params.transports[m][r];
        let g = table.kind.geometry;
        let delta_s = params.bounds.delta_s;
        let xh = &table.points[h];
        let xt = &table.points[t];
        let y = tr.map(xh);
        let gy = raw_sq_distance_grad(g, &y, xt, delta_s);
        let gt = raw_sq_distance_grad(g, xt, &y, delta_s);
        self.embeddings[slot][m][h] += coef * tr.pullback(xh, &gy);
        self.embeddings[slot][m][t] += coef * gt;
        if !self.shifts.is_empty() {
            self.shifts[m][r] += coef * tr.pullback_shift(xh, &gy);
        }
    }
}

/// Full gradient of [`surrogate_j`]. The distortion term is included only
/// when `cfg.distortion_in_embedding_step` is set.
pub fn surrogate_j_gradient(
    params: &ModelParams,
    data: &TrainingData,
    cfg: &TrainConfig,
    lambda: f64,
) -> Result<Gradient> {
    let mut grad = Gradient::zeros(params, cfg.learn_translations);
    let n_met = params.n_metrics();

    let heads = params.head_images();
    let pos_d = event_composites(params, &heads, &data.positives);
    let neg_d = event_composites(params, &heads, &data.negatives);
    let (pos, neg) = likelihood_events(data, &scores(params, &data.positives, &pos_d), &scores(params, &data.negatives, &neg_d));
    let (gp, gn) = nll_gradient(&pos, &neg, cfg.k_neg)?;

    // dJ/dD per positive: likelihood plus the correlation penalty.
    let mut dpos: Vec<f64> = data.positives.iter().zip(&gp).map(|(e, g)| -params.coeffs.tau[e.relation] * g).collect();
    if cfg.lambda_corr > 0.0 {
        for idx in &data.relation_positives {
            let s: Vec<f64> = idx.iter().map(|&i| data.positives[i].s_hat).collect();
            let d: Vec<f64> = idx.iter().map(|&i| pos_d[i]).collect();
            if let Some((rho, ms, md, ss, sd, n)) = pearson(&s, &d) {
                for (k, &i) in idx.iter().enumerate() {
                    let dr = ((s[k] - ms) / (ss * sd) - rho * (d[k] - md) / (sd * sd)) / n;
                    dpos[i] += cfg.lambda_corr * dr;
                }
            }
        }
    }
    let dneg = data.negatives.iter().zip(&gn).map(|(e, g)| -params.coeffs.tau[e.relation] * g);

    // Gradients with respect to each head image are summed first and pulled
    // back through the transport once per (slot, metric, relation, head).
    let mut image_grads: Vec<Vec<Vec<Vec<Option<DVector<f64>>>>>> = heads
        .images
        .iter()
        .map(|per_m| per_m.iter().map(|per_r| per_r.iter().map(|h| vec![None; h.len()]).collect()).collect())
        .collect();
    let delta_s = params.bounds.delta_s;
    let events = data.positives.iter().zip(dpos).chain(data.negatives.iter().zip(dneg));
    for (e, dd) in events {
        if dd == 0.0 {
            continue;
        }
        let slot = params.slot(e.bin);
        let w = params.mixture.row(e.relation);
        for m in 0..n_met {
            let coef = dd * w[m];
            if coef == 0.0 {
                continue;
            }
            let table = &params.embeddings[slot][m];
            let g = table.kind.geometry;
            let y = &heads.images[slot][m][e.relation][e.head];
            let xt = &table.points[e.tail];
            grad.embeddings[slot][m][e.tail] += coef * raw_sq_distance_grad(g, xt, y, delta_s);
            let gy = coef * raw_sq_distance_grad(g, y, xt, delta_s);
            match &mut image_grads[slot][m][e.relation][e.head] {
                Some(acc) => *acc += gy,
                slot_acc => *slot_acc = Some(gy),
            }
        }
    }
    for (slot, per_m) in image_grads.iter().enumerate() {
        for (m, per_r) in per_m.iter().enumerate() {
            for (r, per_h) in per_r.iter().enumerate() {
                let tr = &params.transports[m][r];
                for (h, gy) in per_h.iter().enumerate() {
                    let Some(gy) = gy else { continue };
                    let xh = &params.embeddings[slot][m].points[h];
                    grad.embeddings[slot][m][h] += tr.pullback(xh, gy);
                    if !grad.shifts.is_empty() {
                        grad.shifts[m][r] += tr.pullback_shift(xh, gy);
                    }
                }
            }
        }
    }

    if cfg.distortion_in_embedding_step {
        let slot = params.slot(data.distortion_bin);
        let energies = distortion_energies(params, data);
        for (r, pairs) in data.pairs.iter().enumerate() {
            let wt = softmax_weights(&energies[r], lambda);
            for m in 0..n_met {
                let table = &params.embeddings[slot][m];
                let tr = &params.transports[m][r];
                for p in pairs {
                    let d = table.distance(tr, p.head, p.tail);
                    if d < 1e-9 {
                        continue;
                    }
                    grad.add_pair(params, slot, m, r, p.head, p.tail, wt[m] * p.prob * (d - p.graph_distance) / d);
                }
            }
        }
    }

    if cfg.lambda_rad > 0.0 {
        for (slot, tables) in params.embeddings.iter().enumerate() {
            for (m, table) in tables.iter().enumerate() {
                for (i, x) in table.points.iter().enumerate() {
                    let g = match table.kind.geometry {
                        Geometry::Euclidean => 2.0 * x,
                        Geometry::Hyperbolic => 2.0 * x / (1.0 - x.norm_squared()).powi(2),
                        Geometry::Spherical => continue,
                    };
                    grad.embeddings[slot][m][i] += cfg.lambda_rad * g;
                }
            }
        }
    }

    for (slot, tables) in params.embeddings.iter().enumerate() {
        for (m, table) in tables.iter().enumerate() {
            if table.kind.geometry == Geometry::Spherical {
                for (g, x) in grad.embeddings[slot][m].iter_mut().zip(&table.points) {
                    let radial = x.dot(g);
                    *g -= radial * x;
                }
            }
        }
    }
    if !grad.norm().is_finite() {
        return Err(Error::NonFiniteGradient("surrogate gradient".into()));
    }
    Ok(grad)
}

/// One projected gradient step of size `eta`; returns the updated copy.
pub fn embedding_step(
    params: &ModelParams,
    data: &TrainingData,
    cfg: &TrainConfig,
    lambda: f64,
    eta: f64,
) -> Result<ModelParams> {
    let grad = surrogate_j_gradient(params, data, cfg, lambda)?;
    let mut next = params.clone();
    if eta == 0.0 {
        return Ok(next);
    }
    let bounds = params.bounds;
    for (slot, tables) in next.embeddings.iter_mut().enumerate() {
        for (m, table) in tables.iter_mut().enumerate() {
            let geom = table.kind.geometry;
            for (x, g) in table.points.iter_mut().zip(&grad.embeddings[slot][m]) {
                *x -= eta * g;
                project_in_place(geom, x, &bounds);
            }
        }
    }
    if cfg.learn_translations {
        for (m, per_rel) in next.transports.iter_mut().enumerate() {
            for (r, tr) in per_rel.iter_mut().enumerate() {
                let g = &grad.shifts[m][r];
                match &mut tr.shift {
                    Shift::Translation(v) => {
                        *v -= eta * g;
                        let n = v.norm();
                        if n > bounds.b_phi {
                            *v *= bounds.b_phi * (1.0 - 4.0 * f64::EPSILON) / n;
                        }
                    }
                    Shift::Gyration(a) => {
                        *a -= eta * g;
                        project_in_place(Geometry::Hyperbolic, a, &bounds);
                    }
                    Shift::GreatCircle { angle, .. } => *angle -= eta * g[0],
                }
            }
        }
    }
    Ok(next)
}

/// `d_m(φ_r(x_h), x_t)` for every metric, unsquared.
pub fn metric_distances(params: &ModelParams, r: usize, h: usize, t: usize, u: usize) -> Vec<f64> {
    let slot = params.slot(u);
    (0..params.n_metrics())
        .map(|m| {
            let table = &params.embeddings[slot][m];
            raw_distance(table.kind.geometry, &params.transports[m][r].map(&table.points[h]), &table.points[t])
        })
        .collect()
}
