//! Explicit constants of the generalization analysis, dependence and
//! instability checks, and the tree-embedding benchmark.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mobius_add, poincare_distance, raw_sq_distance_grad, sample_in_ball, DomainBounds, Geometry};
use crate::maxent::{check_nondegeneracy, FeatureMatrix, Nondegeneracy};
use crate::temporal::F_MAX;
use crate::trainer::{ModelParams, TrainTrace, TrainingData};

/// Pairs sampled when estimating the hyperbolic Lipschitz constant.
pub const LH_SAMPLES: usize = 100_000;

/// Gradient-norm bounds of the squared distances and the derived score
/// constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    /// `4 R_E`.
    pub l_e: f64,
    /// Largest sampled `‖∇_x d_H²‖` in the `R_H` ball.
    pub l_h: f64,
    pub l_h_samples: usize,
    /// `2π / √(δ_S(2 − δ_S))`.
    pub l_sphere: f64,
    /// `max` of the three.
    pub l_d: f64,
    /// Lipschitz constant assumed for the structural feature.
    pub l_feature: f64,
    /// `τ_max L_d + β_max L_S`.
    pub c: f64,
    /// `2 max{R_E, R_H/(1 − R_H), π/√(δ_S(2 − δ_S))}`.
    pub b: f64,
}

pub fn spherical_lipschitz(delta_s: f64) -> f64 {
    2.0 * std::f64::consts::PI / (delta_s * (2.0 - delta_s)).sqrt()
}

pub fn domain_radius_bound(bounds: &DomainBounds) -> f64 {
    let s = std::f64::consts::PI / (bounds.delta_s * (2.0 - bounds.delta_s)).sqrt();
    2.0 * bounds.r_e.max(bounds.r_h / (1.0 - bounds.r_h)).max(s)
}

/// Max of `‖∇_x d_H²(x, y)‖` over `samples` uniform pairs in the `R_H` ball.
pub fn empirical_hyperbolic_lipschitz(r_h: f64, dim: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = sample_in_ball(dim, r_h, &mut rng);
        let y = sample_in_ball(dim, r_h, &mut rng);
        worst = worst.max(raw_sq_distance_grad(Geometry::Hyperbolic, &x, &y, 0.0).norm());
    }
    worst
}

/// Distance and score constants. `tau_max`, `beta_max` are the largest
/// magnitudes of the score multipliers, `l_feature` the feature constant.
pub fn lipschitz_constants(
    bounds: &DomainBounds,
    dim: usize,
    tau_max: f64,
    beta_max: f64,
    l_feature: f64,
    seed: u64,
) -> Result<LipschitzConstants> {
    bounds.validate()?;
    let l_e = 4.0 * bounds.r_e;
    let l_h = empirical_hyperbolic_lipschitz(bounds.r_h, dim.max(1), LH_SAMPLES, seed);
    let l_sphere = spherical_lipschitz(bounds.delta_s);
    let l_d = l_e.max(l_h).max(l_sphere);
    Ok(LipschitzConstants {
        l_e,
        l_h,
        l_h_samples: LH_SAMPLES,
        l_sphere,
        l_d,
        l_feature,
        c: tau_max.abs() * l_d + beta_max.abs() * l_feature,
        b: domain_radius_bound(bounds),
    })
}

/// Blocking parameters `(m, g, N_eff)` with `m = g = ⌈N^{1/3}⌉` and
/// `N_eff = ⌊N / (2(m + g))⌋`.
pub fn effective_sample_size(n: usize) -> Result<(usize, usize, usize)> {
    if n < 8 {
        return Err(Error::InvalidArgument(format!("effective sample size needs N >= 8, got {n}")));
    }
    let mut m = (n as f64).cbrt().ceil() as usize;
    // Guard the float cube root against rounding just past an exact cube.
    if (m - 1).pow(3) >= n {
        m -= 1;
    }
    Ok((m, m, n / (2 * (m + m))))
}

/// `N^{2/3} / 4`, the guaranteed floor for `N_eff`.
pub fn effective_sample_floor(n: usize) -> f64 {
    (n as f64).powf(2.0 / 3.0) / 4.0
}

/// `L_ℓ = Δ_max e^{F_max} max{1, 1/(1 − e^{−Δ_min e^{F_min}})}`.
pub fn loss_lipschitz(delta_min: f64, delta_max: f64, f_min: f64, f_max: f64) -> f64 {
    let tail = 1.0 / -(-(delta_min * f_min.exp())).exp_m1();
    delta_max * f_max.exp() * tail.max(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub l_d: f64,
    pub l_s: f64,
    pub c: f64,
    pub b: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub l_loss: f64,
    pub n: usize,
    pub n_eff: usize,
    pub m_block: usize,
    pub g_gap: usize,
}

impl BoundConstants {
    pub fn new(lip: &LipschitzConstants, f_range: (f64, f64), delta_range: (f64, f64), n: usize) -> Result<Self> {
        let (m, g, n_eff) = effective_sample_size(n)?;
        let (f_min, f_max) = (f_range.0.max(-F_MAX), f_range.1.min(F_MAX));
        if !(f_min <= f_max) || !(delta_range.0 > 0.0 && delta_range.0 <= delta_range.1) {
            return Err(Error::InvalidArgument("score and width ranges must be ordered and widths positive".into()));
        }
        Ok(Self {
            l_d: lip.l_d,
            l_s: lip.l_feature,
            c: lip.c,
            b: lip.b,
            f_min,
            f_max,
            delta_min: delta_range.0,
            delta_max: delta_range.1,
            l_loss: loss_lipschitz(delta_range.0, delta_range.1, f_min, f_max),
            n,
            n_eff,
            m_block: m,
            g_gap: g,
        })
    }
}

/// Excess-risk term `L_ℓ C B / √N_eff + √(log(2/δ) / (2 N_eff))`; the
/// population risk is bounded by the empirical risk plus this value.
pub fn generalization_bound(k: &BoundConstants, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence delta must lie in (0, 1), got {delta}")));
    }
    if k.n_eff == 0 {
        return Err(Error::InvalidArgument("effective sample size is zero".into()));
    }
    let n = k.n_eff as f64;
    Ok(k.l_loss * k.c * k.b / n.sqrt() + ((2.0 / delta).ln() / (2.0 * n)).sqrt())
}

/// `log(⌈2A/(ε/3)⌉ ⌈2B S_max/(ε/3)⌉ ⌈T D²_max/(ε/3)⌉)`, with each factor at
/// least one so degenerate ranges count as a single function.
pub fn covering_bound(a: f64, b: f64, t: f64, s_max: f64, d_max_sq: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("covering radius must be positive, got {eps}")));
    }
    for (name, v) in [("A", a), ("B", b), ("T", t), ("S_max", s_max), ("D_max^2", d_max_sq)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative")));
        }
    }
    let third = eps / 3.0;
    let factor = |x: f64| (x / third).ceil().max(1.0).ln();
    Ok(factor(2.0 * a) + factor(2.0 * b * s_max) + factor(t * d_max_sq))
}

/// Block-bootstrap dependence profile of a residual series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    /// `(block length b, R(b))` where `R(b) = n·Var*(mean)/Var(x)` under the
    /// moving-block bootstrap with blocks of length `b`.
    pub variance_ratios: Vec<(usize, f64)>,
    /// Slope of `log R(b)` against `log b`.
    pub slope: f64,
    /// Fitted decay exponent `p` in `β(k) ~ k^{−p}`; infinite when the
    /// variance ratio shows no growth (decay faster than the method resolves).
    pub exponent: f64,
    /// `Σ_k β(k)^{1/3}` judged finite, i.e. `p > 3`.
    pub summable: bool,
    pub degenerate: bool,
}

/// Slope above which the variance ratio is deemed to grow with block length.
pub const VARIANCE_SLOPE_CRIT: f64 = 0.2;

pub fn default_block_sizes(n: usize) -> Vec<usize> {
    let mut out = vec![1];
    while out.last().unwrap() * 2 <= n / 8 {
        out.push(out.last().unwrap() * 2);
    }
    out
}

/// Estimates the decay of dependence in `series` via moving-block bootstrap
/// variance ratios. Under `β(k) ~ k^{−p}` with `p < 1` the ratio grows like
/// `b^{1−p}`; a flat profile means decay at least as fast as `k^{−1}` and is
/// reported as `p = ∞`. This is an estimate, not a certificate.
pub fn mixing_estimate(series: &[f64], block_sizes: &[usize], n_boot: usize, seed: u64) -> Result<MixingEstimate> {
    let n = series.len();
    if n < 64 {
        return Err(Error::SeriesTooShort { need: 64, got: n });
    }
    if n_boot < 2 {
        return Err(Error::InvalidArgument("need at least two bootstrap replicates".into()));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 1e-24 * mean.abs().max(1.0).powi(2) {
        return Ok(MixingEstimate {
            variance_ratios: Vec::new(),
            slope: 0.0,
            exponent: f64::INFINITY,
            summable: false,
            degenerate: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::new();
    for &b in block_sizes {
        if b == 0 || b > n / 2 {
            return Err(Error::InvalidArgument(format!("block size {b} outside 1..={}", n / 2)));
        }
        let n_blocks = n / b;
        let starts = n - b + 1;
        let mut prefix = vec![0.0; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] + series[i];
        }
        let means: Vec<f64> = (0..n_boot)
            .map(|_| {
                let total: f64 = (0..n_blocks)
                    .map(|_| {
                        let s = rng.random_range(0..starts);
                        prefix[s + b] - prefix[s]
                    })
                    .sum();
                total / (n_blocks * b) as f64
            })
            .collect();
        let mm = means.iter().sum::<f64>() / n_boot as f64;
        let vb = means.iter().map(|x| (x - mm).powi(2)).sum::<f64>() / (n_boot - 1) as f64;
        ratios.push((b, (n_blocks * b) as f64 * vb / var));
    }
    let pts: Vec<(f64, f64)> = ratios.iter().map(|(b, r)| ((*b as f64).ln(), r.max(1e-12).ln())).collect();
    let slope = if pts.len() < 2 {
        0.0
    } else {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 { sxy / sxx } else { 0.0 }
    };
    let exponent = if slope > VARIANCE_SLOPE_CRIT { 1.0 - slope } else { f64::INFINITY };
    Ok(MixingEstimate { variance_ratios: ratios, slope, exponent, summable: exponent > 3.0, degenerate: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorThresholds {
    /// Weight-change norm counted as oscillation.
    pub eps_w: f64,
    /// Iterations exempt from the oscillation check.
    pub grace: usize,
    /// Growth must persist for more than this many consecutive iterations.
    pub energy_streak: usize,
    /// Relative increase below which energy is treated as flat.
    pub energy_rel_tol: f64,
    /// Consecutive iterations at the domain bound counted as explosion.
    pub norm_streak: usize,
}

impl Default for MonitorThresholds {
    fn default() -> Self {
        Self { eps_w: 0.05, grace: 10, energy_streak: 3, energy_rel_tol: 1e-3, norm_streak: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub flag: String,
    pub iteration: usize,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstabilityFlags {
    pub weight_oscillation: bool,
    pub energy_growth: bool,
    pub norm_explosion: bool,
    pub rank_deficiency: bool,
    pub triggers: Vec<Trigger>,
}

impl InstabilityFlags {
    pub fn any(&self) -> bool {
        self.weight_oscillation || self.energy_growth || self.norm_explosion || self.rank_deficiency
    }
}

/// Scans a training trace for the four instability signatures. Energy growth
/// is tracked only for metrics carrying at least the uniform weight, since
/// inactive metrics drift freely once their weight vanishes.
pub fn monitor(trace: &TrainTrace, th: &MonitorThresholds) -> Result<InstabilityFlags> {
    if trace.records.is_empty() {
        return Err(Error::EmptySupport("trace has no iterations".into()));
    }
    let mut flags = InstabilityFlags::default();
    let push = |flags: &mut InstabilityFlags, flag: &str, iteration, detail: String| {
        flags.triggers.push(Trigger { flag: flag.into(), iteration, detail });
    };

    for rec in trace.records.iter().skip(th.grace) {
        if rec.weight_change > th.eps_w {
            flags.weight_oscillation = true;
            push(&mut flags, "weight_oscillation", rec.iteration, format!("|dw| = {:.4e} > {}", rec.weight_change, th.eps_w));
            break;
        }
    }

    let recs = &trace.records;
    let n_rel = recs[0].energies.len();
    let n_met = recs[0].energies.first().map_or(0, Vec::len);
    'outer: for r in 0..n_rel {
        for m in 0..n_met {
            let mut streak = 0;
            for w in recs.windows(2) {
                let (prev, cur) = (w[0].energies[r][m], w[1].energies[r][m]);
                let active = w[1].weights[r][m] * n_met as f64 >= 1.0 - 1e-12;
                if active && cur > prev + th.energy_rel_tol * prev.abs().max(1e-12) {
                    streak += 1;
                    if streak > th.energy_streak {
                        flags.energy_growth = true;
                        push(
                            &mut flags,
                            "energy_growth",
                            w[1].iteration,
                            format!("E[{r}][{m}] rose {streak} times in a row, now {cur:.6e}"),
                        );
                        break 'outer;
                    }
                } else {
                    streak = 0;
                }
            }
        }
    }

    let mut streak = 0;
    for rec in recs {
        if rec.at_bound {
            streak += 1;
            if streak >= th.norm_streak {
                flags.norm_explosion = true;
                push(
                    &mut flags,
                    "norm_explosion",
                    rec.iteration,
                    format!("at the domain bound for {streak} iterations (max norm ratio {:.6})", rec.max_norm_ratio),
                );
                break;
            }
        } else {
            streak = 0;
        }
    }

    if trace.init_stats.irreparable > 0 {
        flags.rank_deficiency = true;
        push(&mut flags, "rank_deficiency", 0, format!("{} contexts irreparable before iteration 0", trace.init_stats.irreparable));
    }
    if let Some(rec) = recs.iter().find(|r| r.contexts_irreparable > 0) {
        flags.rank_deficiency = true;
        push(&mut flags, "rank_deficiency", rec.iteration, format!("{} contexts irreparable", rec.contexts_irreparable));
    }
    Ok(flags)
}

/// Counts of the non-degeneracy audit over every training context.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyAudit {
    pub contexts: usize,
    pub ok: usize,
    pub rank_deficient: usize,
    pub ill_conditioned: usize,
    pub max_kappa: f64,
}

pub fn audit_contexts(params: &ModelParams, data: &TrainingData, c_cond: f64) -> NondegeneracyAudit {
    let mut a = NondegeneracyAudit::default();
    for ctx in &data.contexts {
        a.contexts += 1;
        let (s, d): (Vec<f64>, Vec<f64>) = ctx
            .candidates
            .iter()
            .map(|&e| (ctx.s_row[e], params.composite(ctx.relation, ctx.head, e, ctx.bin)))
            .unzip();
        match FeatureMatrix::new(s, d).map(|f| check_nondegeneracy(&f, c_cond)) {
            Ok(Nondegeneracy::Ok { kappa }) => {
                a.ok += 1;
                a.max_kappa = a.max_kappa.max(kappa);
            }
            Ok(Nondegeneracy::IllConditioned { kappa }) => {
                a.ill_conditioned += 1;
                a.max_kappa = a.max_kappa.max(kappa);
            }
            Ok(Nondegeneracy::RankDeficient { .. }) | Err(_) => a.rank_deficient += 1,
        }
    }
    a
}

/// Per-event residuals `y − P(event)` in time order, the series fed to
/// [`mixing_estimate`].
pub fn temporal_residuals(params: &ModelParams, data: &TrainingData) -> Vec<f64> {
    let mut rows: Vec<(usize, f64)> = data
        .positives
        .iter()
        .map(|e| (e, 1.0))
        .chain(data.negatives.iter().map(|e| (e, 0.0)))
        .map(|(e, y)| {
            let f = params.score(e.relation, e.head, e.tail, e.bin, e.s_hat);
            (e.bin, y - crate::temporal::cloglog_prob(f, e.delta))
        })
        .collect();
    rows.sort_by_key(|r| r.0);
    rows.into_iter().map(|r| r.1).collect()
}

/// Worst-case and mean multiplicative distortion of one embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeBenchRow {
    pub depth: usize,
    pub dim: usize,
    pub geometry: Geometry,
    pub nodes: usize,
    /// `max ratio / min ratio` over all pairs, ratio = embedded / tree distance.
    pub worst_distortion: f64,
    /// Mean of `ratio / min ratio`.
    pub mean_distortion: f64,
    /// Edge length used by the hyperbolic construction, if any.
    pub scale: Option<f64>,
}

/// Complete binary tree of the given depth in heap order: node `i` has
/// children `2i + 1`, `2i + 2`.
pub fn binary_tree_distances(depth: usize) -> DMatrix<f64> {
    let n = (1usize << (depth + 1)) - 1;
    let level = |i: usize| (usize::BITS - (i + 1).leading_zeros() - 1) as usize;
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let (mut a, mut b) = (i, j);
            let mut hops = 0;
            while a != b {
                if level(a) >= level(b) {
                    a = (a - 1) / 2;
                } else {
                    b = (b - 1) / 2;
                }
                hops += 1;
            }
            d[(i, j)] = hops as f64;
            d[(j, i)] = hops as f64;
        }
    }
    d
}

/// Deterministic placement of the complete binary tree in the Poincaré disk:
/// each node is moved to the origin, its neighbours are spread evenly around
/// it at hyperbolic distance `scale`, and the picture is moved back.
pub fn hyperbolic_tree_embedding(depth: usize, scale: f64) -> Vec<DVector<f64>> {
    let n = (1usize << (depth + 1)) - 1;
    let r = (scale / 2.0).tanh();
    let mut pts = vec![DVector::zeros(2); n];
    let at = |theta: f64| DVector::from_vec(vec![r * theta.cos(), r * theta.sin()]);
    if n > 1 {
        pts[1] = at(0.0);
        pts[2] = at(std::f64::consts::PI);
    }
    for i in 1..n {
        let (c1, c2) = (2 * i + 1, 2 * i + 2);
        if c1 >= n {
            continue;
        }
        let p = pts[i].clone();
        let parent = &pts[(i - 1) / 2];
        let rel = mobius_add(&(-&p), parent);
        let theta = rel[1].atan2(rel[0]);
        let step = 2.0 * std::f64::consts::PI / 3.0;
        pts[c1] = mobius_add(&p, &at(theta + step));
        pts[c2] = mobius_add(&p, &at(theta - step));
    }
    pts
}

fn distortion_of(emb: &DMatrix<f64>, tree: &DMatrix<f64>) -> (f64, f64) {
    let n = tree.nrows();
    let mut ratios = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            ratios.push(emb[(i, j)] / tree[(i, j)]);
        }
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0) {
        return (f64::INFINITY, f64::INFINITY);
    }
    (hi / lo, ratios.iter().map(|r| r / lo).sum::<f64>() / ratios.len() as f64)
}

/// Classical MDS in `dim` dimensions followed by gradient descent on the
/// relative stress `Σ (‖x_i − x_j‖/d_ij − 1)²`.
pub fn euclidean_stress_embedding(tree: &DMatrix<f64>, dim: usize, iterations: usize, seed: u64) -> Vec<DVector<f64>> {
    let n = tree.nrows();
    let d2 = tree.map(|x| x * x);
    let j = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let b = -0.5 * &j * d2 * &j;
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, c| eig.eigenvalues[*c].total_cmp(&eig.eigenvalues[*a]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            DVector::from_fn(dim, |k, _| {
                let c = order.get(k).map_or(0.0, |&o| eig.eigenvectors[(i, o)] * eig.eigenvalues[o].max(0.0).sqrt());
                c + 1e-6 * (rng.random::<f64>() - 0.5)
            })
        })
        .collect();

    let stress = |x: &[DVector<f64>]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for k in (i + 1)..n {
                s += ((&x[i] - &x[k]).norm() / tree[(i, k)] - 1.0).powi(2);
            }
        }
        s
    };
    let mut eta = 0.05;
    let mut current = stress(&x);
    for _ in 0..iterations {
        let mut grad = vec![DVector::zeros(dim); n];
        for i in 0..n {
            for k in (i + 1)..n {
                let diff = &x[i] - &x[k];
                let e = diff.norm().max(1e-12);
                let t = tree[(i, k)];
                let g = 2.0 * (e / t - 1.0) / (t * e) * diff;
                grad[i] += &g;
                grad[k] -= &g;
            }
        }
        loop {
            let trial: Vec<DVector<f64>> = x.iter().zip(&grad).map(|(p, g)| p - eta * g).collect();
            let s = stress(&trial);
            if s <= current {
                x = trial;
                current = s;
                eta *= 1.2;
                break;
            }
            eta *= 0.5;
            if eta < 1e-12 {
                return x;
            }
        }
    }
    x
}

/// Edge lengths tried by the hyperbolic construction; the best is reported.
pub const HYPERBOLIC_SCALES: [f64; 6] = [1.0, 1.5, 2.0, 2.5, 3.0, 4.0];

/// Worst-case and mean distortion of the depth-`depth` complete binary tree
/// in the Poincaré disk and in `R^dim` for every requested dimension.
pub fn tree_distortion_bench(depth: usize, dims: &[usize], seed: u64) -> Result<Vec<TreeBenchRow>> {
    if depth == 0 || depth > 10 {
        return Err(Error::InvalidArgument(format!("tree depth must lie in 1..=10, got {depth}")));
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    let tree = binary_tree_distances(depth);
    let n = tree.nrows();
    let mut rows = Vec::new();

    let mut best: Option<(f64, f64, f64)> = None;
    for &scale in &HYPERBOLIC_SCALES {
        let pts = hyperbolic_tree_embedding(depth, scale);
        let emb = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { poincare_distance(&pts[i], &pts[j]) });
        let (worst, mean) = distortion_of(&emb, &tree);
        if best.is_none_or(|b| worst < b.0) {
            best = Some((worst, mean, scale));
        }
    }
    let (worst, mean, scale) = best.expect("at least one scale");
    for &dim in dims {
        rows.push(TreeBenchRow {
            depth,
            dim,
            geometry: Geometry::Hyperbolic,
            nodes: n,
            worst_distortion: worst,
            mean_distortion: mean,
            scale: Some(scale),
        });
        let pts = euclidean_stress_embedding(&tree, dim, 400, seed);
        let emb = DMatrix::from_fn(n, n, |i, j| (&pts[i] - &pts[j]).norm());
        let (worst, mean) = distortion_of(&emb, &tree);
        rows.push(TreeBenchRow {
            depth,
            dim,
            geometry: Geometry::Euclidean,
            nodes: n,
            worst_distortion: worst,
            mean_distortion: mean,
            scale: None,
        });
    }
    Ok(rows)
}

/// Writes benchmark rows as CSV.
pub fn write_bench_csv(rows: &[TreeBenchRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["depth", "dim", "geometry", "nodes", "worst_distortion", "mean_distortion", "scale"])?;
    for r in rows {
        w.write_record([
            r.depth.to_string(),
            r.dim.to_string(),
            r.geometry.short_name().to_string(),
            r.nodes.to_string(),
            r.worst_distortion.to_string(),
            r.mean_distortion.to_string(),
            r.scale.map_or(String::new(), |s| s.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Everything `diagnose` reports for a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub lipschitz: LipschitzConstants,
    pub constants: BoundConstants,
    pub generalization_gap: f64,
    pub confidence_delta: f64,
    pub covering_log: f64,
    pub covering_eps: f64,
    pub nondegeneracy: NondegeneracyAudit,
    pub mixing: Option<MixingEstimate>,
    pub mixing_error: Option<String>,
    pub flags: Option<InstabilityFlags>,
    pub distortion_energies: Vec<Vec<f64>>,
    pub distortion_within_bound: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseConfig {
    pub confidence_delta: f64,
    pub covering_eps: f64,
    pub l_feature: f64,
    pub c_cond: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub thresholds: MonitorThresholds,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            confidence_delta: 0.05,
            covering_eps: 0.1,
            l_feature: 1.0,
            c_cond: 1e6,
            n_boot: 200,
            seed: 0,
            thresholds: MonitorThresholds::default(),
        }
    }
}

/// Assembles the full report for trained parameters on their training data.
pub fn diagnose(
    params: &ModelParams,
    data: &TrainingData,
    trace: Option<&TrainTrace>,
    s_max: f64,
    cfg: &DiagnoseConfig,
) -> Result<DiagnosticsReport> {
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let tau_max = max_abs(&params.coeffs.tau);
    let beta_max = max_abs(&params.coeffs.beta);
    let dim = params.kinds.first().map_or(2, |k| k.dim);
    let lip = lipschitz_constants(&params.bounds, dim, tau_max, beta_max, cfg.l_feature, cfg.seed)?;

    let events = data.positives.iter().chain(&data.negatives);
    let (mut f_lo, mut f_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut d_lo, mut d_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in events {
        let f = params.score(e.relation, e.head, e.tail, e.bin, e.s_hat);
        f_lo = f_lo.min(f);
        f_hi = f_hi.max(f);
        d_lo = d_lo.min(e.delta);
        d_hi = d_hi.max(e.delta);
    }
    let n = data.positives.len() + data.negatives.len();
    let constants = BoundConstants::new(&lip, (f_lo, f_hi), (d_lo, d_hi), n.max(8))?;
    let generalization_gap = generalization_bound(&constants, cfg.confidence_delta)?;

    let a = params.coeffs.alpha.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let d_max: f64 = params.kinds.iter().map(|k| k.diameter(&params.bounds)).fold(0.0, f64::max);
    let covering_log = covering_bound(a, beta_max, tau_max, s_max, d_max * d_max, cfg.covering_eps)?;

    let residuals = temporal_residuals(params, data);
    let (mixing, mixing_error) =
        match mixing_estimate(&residuals, &default_block_sizes(residuals.len()), cfg.n_boot, cfg.seed) {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let flags = trace.map(|t| monitor(t, &cfg.thresholds)).transpose()?;
    let energies = crate::trainer::distortion_energies(params, data);
    let table = crate::mixture::DistortionTable { energies: energies.clone() };
    Ok(DiagnosticsReport {
        lipschitz: lip,
        constants,
        generalization_gap,
        confidence_delta: cfg.confidence_delta,
        covering_log,
        covering_eps: cfg.covering_eps,
        nondegeneracy: audit_contexts(params, data, cfg.c_cond),
        mixing,
        mixing_error,
        flags,
        distortion_energies: energies,
        distortion_within_bound: table.within_bound(&params.kinds, &params.bounds, data.n_entities),
    })
}

/// Fractional Gaussian noise with Hurst index `hurst` by the Durbin–Levinson
/// recursion; used to exercise [`mixing_estimate`] on long-memory input.
pub fn fractional_gaussian_noise(n: usize, hurst: f64, seed: u64) -> Vec<f64> {
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h2 = 2.0 * hurst;
    let gamma = |k: usize| {
        let k = k as f64;
        0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
    };
    let mut out = Vec::with_capacity(n);
    let mut phi: Vec<f64> = Vec::new();
    let mut v = gamma(0);
    for t in 0..n {
        if t > 0 {
            let num = gamma(t) - (0..t - 1).map(|j| phi[j] * gamma(t - 1 - j)).sum::<f64>();
            let k = num / v;
            let prev = phi.clone();
            phi.resize(t, 0.0);
            for j in 0..t - 1 {
                phi[j] = prev[j] - k * prev[t - 2 - j];
            }
            phi[t - 1] = k;
            v *= 1.0 - k * k;
        }
        let mean: f64 = (0..t).map(|j| phi[j] * out[t - 1 - j]).sum();
        let z: f64 = rng.sample(StandardNormal);
        out.push(mean + v.sqrt() * z);
    }
    out
}

/// Random permutation helper for bootstrap-free shuffles.
pub fn shuffled(series: &[f64], seed: u64) -> Vec<f64> {
    let mut v = series.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}
