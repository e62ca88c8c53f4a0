//! Maximum-entropy candidate distributions under two moment constraints.
//!
//! For a context `(h, r, u)` with `K` candidate tails carrying a structural
//! feature `Ŝ_i` and a composite energy `D_i`, the entropy maximizer subject
//! to `E_p[Ŝ] = c_S` and `E_p[D] = c_D` is the log-linear distribution
//! `p_i ∝ exp(β·Ŝ_i − τ·D_i)`. The multipliers minimize the convex dual
//!
//! ```text
//! g(β, τ) = log Σ_i exp(β·Ŝ_i − τ·D_i) − β·c_S + τ·c_D
//! ```
//!
//! whose gradient is the moment residual and whose Hessian is the covariance
//! of `(Ŝ, −D)` under the current distribution.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative cutoff below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Above this Hessian condition number the solver takes a gradient step.
pub const NEWTON_COND_LIMIT: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentConstraints {
    pub c_d: f64,
    pub c_s: f64,
}

/// Arithmetic means of the energies and features of the observed positives.
pub fn empirical_moments(energies: &[f64], features: &[f64]) -> Result<MomentConstraints> {
    if energies.is_empty() || features.is_empty() {
        return Err(Error::EmptySupport("no observed positives for the moment constraints".into()));
    }
    if energies.len() != features.len() {
        return Err(Error::DimensionMismatch { expected: energies.len(), got: features.len() });
    }
    let n = energies.len() as f64;
    let c = MomentConstraints { c_d: energies.iter().sum::<f64>() / n, c_s: features.iter().sum::<f64>() / n };
    if !(c.c_d.is_finite() && c.c_s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite moment".into()));
    }
    Ok(c)
}

/// The `3 × K` matrix with rows `1`, `Ŝ` and `D`; the row of ones is implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub s_hat: Vec<f64>,
    pub d: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(s_hat: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        if s_hat.len() != d.len() {
            return Err(Error::DimensionMismatch { expected: s_hat.len(), got: d.len() });
        }
        if s_hat.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 candidates, got {}", s_hat.len())));
        }
        if s_hat.iter().chain(&d).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature matrix has non-finite entries".into()));
        }
        Ok(Self { s_hat, d })
    }

    pub fn len(&self) -> usize {
        self.s_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_hat.is_empty()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let k = self.len();
        DMatrix::from_fn(3, k, |row, col| match row {
            0 => 1.0,
            1 => self.s_hat[col],
            _ => self.d[col],
        })
    }

    fn push(&mut self, s: f64, d: f64) {
        self.s_hat.push(s);
        self.d.push(d);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Nondegeneracy {
    Ok { kappa: f64 },
    RankDeficient { rank: usize, singular_values: Vec<f64> },
    IllConditioned { kappa: f64 },
}

impl Nondegeneracy {
    pub fn is_ok(&self) -> bool {
        matches!(self, Nondegeneracy::Ok { .. })
    }
}

/// SVD audit of the feature matrix: full rank 3 with `σ_max/σ_min <= c_cond`.
pub fn check_nondegeneracy(f: &FeatureMatrix, c_cond: f64) -> Nondegeneracy {
    let mut sv: Vec<f64> = f.to_matrix().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let retained: Vec<f64> = sv.iter().copied().filter(|s| *s > RANK_TOL * sigma_max).collect();
    let rank = retained.len();
    if rank < 3 {
        return Nondegeneracy::RankDeficient { rank, singular_values: sv };
    }
    let kappa = sigma_max / retained[rank - 1];
    if kappa > c_cond {
        Nondegeneracy::IllConditioned { kappa }
    } else {
        Nondegeneracy::Ok { kappa }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    /// Minimum candidate-set size after expansion.
    pub k_min: usize,
    /// Jitter scale `η` in `d̃² = d² + η‖ξ‖²`.
    pub eta: f64,
    /// Standard deviation of `ξ`.
    pub sigma: f64,
    pub max_rounds: usize,
    pub c_cond: f64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self { k_min: 8, eta: 1e-3, sigma: 1.0, max_rounds: 3, c_cond: 1e6 }
    }
}

/// Outcome of a successful [`repair_degeneracy`] call.
#[derive(Clone, Debug, PartialEq)]
pub struct Repaired {
    pub matrix: FeatureMatrix,
    pub candidates: Vec<usize>,
    pub expanded: bool,
    pub jittered: bool,
}

/// Adaptive non-degeneracy enforcement. Each round first expands the
/// candidate set to `k_min` (drawing unused entities uniformly and asking
/// `features_of` for their `(Ŝ, D)`), then jitters the energies, re-checking
/// after each step. Gives up after `max_rounds` rounds.
pub fn repair_degeneracy<R: Rng>(
    f: &FeatureMatrix,
    candidates: &[usize],
    n_entities: usize,
    mut features_of: impl FnMut(usize) -> (f64, f64),
    cfg: &RepairConfig,
    rng: &mut R,
) -> Result<Repaired> {
    let mut matrix = f.clone();
    let mut cands = candidates.to_vec();
    let out = |matrix: FeatureMatrix, cands: Vec<usize>, expanded, jittered| {
        Ok(Repaired { matrix, candidates: cands, expanded, jittered })
    };
    if check_nondegeneracy(&matrix, cfg.c_cond).is_ok() {
        return out(matrix, cands, false, false);
    }
    let mut expanded = false;
    let mut jittered = false;
    for _ in 0..cfg.max_rounds {
        if cands.len() < cfg.k_min && cands.len() < n_entities {
            let mut pool: Vec<usize> = (0..n_entities).filter(|e| !cands.contains(e)).collect();
            pool.shuffle(rng);
            for e in pool.into_iter().take(cfg.k_min - cands.len()) {
                let (s, d) = features_of(e);
                matrix.push(s, d);
                cands.push(e);
            }
            expanded = true;
            if check_nondegeneracy(&matrix, cfg.c_cond).is_ok() {
                return out(matrix, cands, expanded, jittered);
            }
        }
        for d in matrix.d.iter_mut() {
            let xi: f64 = cfg.sigma * rng.sample::<f64, _>(StandardNormal);
            *d += cfg.eta * xi * xi;
        }
        jittered = true;
        if check_nondegeneracy(&matrix, cfg.c_cond).is_ok() {
            return out(matrix, cands, expanded, jittered);
        }
    }
    Err(Error::IrreparableDegeneracy { rounds: cfg.max_rounds })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stationarity tolerance on both moment residuals.
    pub tol: f64,
    pub max_iter: usize,
    /// Feasibility slack: targets farther than this from the convex hull of
    /// the candidate features are infeasible, and a run that stalls within it
    /// is reported as approximately feasible instead of failing.
    pub eps_feasible: f64,
    pub c_cond: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, eps_feasible: 1e-6, c_cond: 1e6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxEntSolution {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub probs: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual_s: f64,
    pub residual_d: f64,
    /// `τ < 0`: the fit is valid but loses the distance-penalty reading.
    pub negative_tau: bool,
}

impl MaxEntSolution {
    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}

/// Shannon entropy in nats, with `0·log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

struct DualState {
    value: f64,
    log_z: f64,
    probs: Vec<f64>,
    mean_s: f64,
    mean_d: f64,
}

fn dual_state(f: &FeatureMatrix, c: &MomentConstraints, beta: f64, tau: f64) -> DualState {
    let logits: Vec<f64> = f.s_hat.iter().zip(&f.d).map(|(s, d)| beta * s - tau * d).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let z: f64 = w.iter().sum();
    let log_z = m + z.ln();
    let probs: Vec<f64> = w.iter().map(|x| x / z).collect();
    let mean_s = probs.iter().zip(&f.s_hat).map(|(p, s)| p * s).sum();
    let mean_d = probs.iter().zip(&f.d).map(|(p, d)| p * d).sum();
    DualState { value: log_z - beta * c.c_s + tau * c.c_d, log_z, probs, mean_s, mean_d }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Euclidean distance from `target` to the convex hull of `points`
/// (zero inside).
pub fn hull_distance(points: &[(f64, f64)], target: (f64, f64)) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() == 1 {
        return segment_distance(target, pts[0], pts[0]);
    }
    // Andrew's monotone chain.
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let floor = hull.len() + 1;
        let ordered: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in ordered {
            while hull.len() > floor && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let edge_dist = (0..hull.len())
        .map(|i| segment_distance(target, hull[i], hull[(i + 1) % hull.len()]))
        .fold(f64::INFINITY, f64::min);
    if hull.len() < 3 {
        return edge_dist;
    }
    let inside = (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], target) >= 0.0);
    if inside {
        0.0
    } else {
        edge_dist
    }
}

/// Solves the dual after refusing degenerate feature matrices.
pub fn solve_maxent(f: &FeatureMatrix, c: &MomentConstraints, cfg: &SolverConfig) -> Result<MaxEntSolution> {
    if !check_nondegeneracy(f, cfg.c_cond).is_ok() {
        return Err(Error::Degenerate);
    }
    solve_maxent_from(f, c, cfg, (0.0, 0.0))
}

/// Dual solve without the rank audit, starting from `(β, τ) = (0, 0)`.
/// Rank-deficient matrices still yield the unique maximizing distribution,
/// but the multipliers are then only determined up to the null direction.
pub fn solve_maxent_unchecked(f: &FeatureMatrix, c: &MomentConstraints, cfg: &SolverConfig) -> Result<MaxEntSolution> {
    solve_maxent_from(f, c, cfg, (0.0, 0.0))
}

/// Safeguarded Newton on the dual from an explicit starting point.
pub fn solve_maxent_from(
    f: &FeatureMatrix,
    c: &MomentConstraints,
    cfg: &SolverConfig,
    init: (f64, f64),
) -> Result<MaxEntSolution> {
    let points: Vec<(f64, f64)> = f.s_hat.iter().copied().zip(f.d.iter().copied()).collect();
    let gap = hull_distance(&points, (c.c_s, c.c_d));
    if gap > cfg.eps_feasible {
        return Err(Error::InfeasibleConstraints { residual: gap });
    }

    let (mut beta, mut tau) = init;
    let mut state = dual_state(f, c, beta, tau);
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = false;
    loop {
        let grad = Vector2::new(state.mean_s - c.c_s, c.c_d - state.mean_d);
        if grad[0].abs() <= cfg.tol && grad[1].abs() <= cfg.tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter || stalled {
            break;
        }
        iterations += 1;

        let (mut vss, mut vdd, mut vsd) = (0.0, 0.0, 0.0);
        for ((p, s), d) in state.probs.iter().zip(&f.s_hat).zip(&f.d) {
            let ds = s - state.mean_s;
            let dd = -(d - state.mean_d);
            vss += p * ds * ds;
            vdd += p * dd * dd;
            vsd += p * ds * dd;
        }
        let hess = Matrix2::new(vss, vsd, vsd, vdd);
        let eig = hess.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let newton_ok = lo > 0.0 && hi / lo <= NEWTON_COND_LIMIT;
        let dir = match (newton_ok, hess.try_inverse()) {
            (true, Some(inv)) => -(inv * grad),
            _ => -grad,
        };
        let slope = grad.dot(&dir);

        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-14 {
            let (nb, nt) = (beta + step * dir[0], tau + step * dir[1]);
            let trial = dual_state(f, c, nb, nt);
            // Near the optimum the dual decrease drowns in rounding; a step
            // that still shrinks the moment residual is then accepted.
            let trial_grad = Vector2::new(trial.mean_s - c.c_s, c.c_d - trial.mean_d);
            if trial.value <= state.value + 1e-4 * step * slope || trial_grad.norm() < 0.5 * grad.norm() {
                beta = nb;
                tau = nt;
                state = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            stalled = true;
        }
    }

    let residual_s = (state.mean_s - c.c_s).abs();
    let residual_d = (state.mean_d - c.c_d).abs();
    if !converged {
        let worst = residual_s.max(residual_d);
        if worst > cfg.eps_feasible {
            if stalled {
                return Err(Error::InfeasibleConstraints { residual: worst });
            }
            return Err(Error::NotConverged { iterations, res_s: residual_s, res_d: residual_d });
        }
    }
    let negative_tau = tau < 0.0;
    if negative_tau {
        log::debug!("maxent solve produced negative tau = {tau}");
    }
    Ok(MaxEntSolution {
        alpha: -state.log_z,
        beta,
        tau,
        probs: state.probs,
        converged,
        iterations,
        residual_s,
        residual_d,
        negative_tau,
    })
}

/// `α + β·Ŝ − τ·D`.
pub fn canonical_score(alpha: f64, beta: f64, tau: f64, s_hat: f64, d: f64) -> f64 {
    alpha + beta * s_hat - tau * d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fm(s: &[f64], d: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(s.to_vec(), d.to_vec()).unwrap()
    }

    #[test]
    fn moment_examples() {
        let c = empirical_moments(&[2.0], &[1.0]).unwrap();
        assert_eq!((c.c_d, c.c_s), (2.0, 1.0));
        assert_eq!(empirical_moments(&[1.0, 3.0], &[0.0, 0.0]).unwrap().c_d, 2.0);
        assert!(matches!(empirical_moments(&[], &[]), Err(Error::EmptySupport(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e: Vec<f64> = (0..37).map(|_| rng.random::<f64>() * 9.0).collect();
        let s: Vec<f64> = (0..37).map(|_| rng.random::<f64>()).collect();
        let c = empirical_moments(&e, &s).unwrap();
        // Second pass: Kahan-free running mean.
        let mut mean_e = 0.0;
        let mut mean_s = 0.0;
        for (i, (a, b)) in e.iter().zip(&s).enumerate() {
            mean_e += (a - mean_e) / (i + 1) as f64;
            mean_s += (b - mean_s) / (i + 1) as f64;
        }
        assert!((c.c_d - mean_e).abs() < 1e-12 && (c.c_s - mean_s).abs() < 1e-12);
    }

    #[test]
    fn nondegeneracy_examples() {
        let collinear = fm(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(check_nondegeneracy(&collinear, 1e6), Nondegeneracy::RankDeficient { rank: 2, .. }));
        let independent = fm(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert!(check_nondegeneracy(&independent, 1e6).is_ok());
        assert!(matches!(check_nondegeneracy(&fm(&[0.0, 1.0], &[1.0, 0.0]), 1e6), Nondegeneracy::RankDeficient { .. }));
    }

    #[test]
    fn condition_number_matches_gram_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let k = 3 + (rng.random::<u32>() % 6) as usize;
            let s: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 2.0).collect();
            let d: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 5.0).collect();
            let f = fm(&s, &d);
            let m = f.to_matrix();
            let gram = &m * m.transpose();
            let eig = gram.symmetric_eigen().eigenvalues;
            let expected = (eig.max() / eig.min()).sqrt();
            let kappa = match check_nondegeneracy(&f, f64::INFINITY) {
                Nondegeneracy::Ok { kappa } => kappa,
                other => panic!("{other:?}"),
            };
            assert!((kappa - expected).abs() <= 1e-6 * expected, "{kappa} vs {expected}");
            assert!(matches!(check_nondegeneracy(&f, kappa * 0.5), Nondegeneracy::IllConditioned { .. }));
        }
    }

    #[test]
    fn repair_breaks_collinearity_by_jitter() {
        let f = fm(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        let cfg = RepairConfig { k_min: 3, ..RepairConfig::default() };
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = repair_degeneracy(&f, &[0, 1, 2], 3, |_| unreachable!(), &cfg, &mut rng).unwrap();
            assert!(out.jittered && !out.expanded);
            assert!(check_nondegeneracy(&out.matrix, cfg.c_cond).is_ok());
        }
    }

    #[test]
    fn repair_expands_first_and_leaves_healthy_input_alone() {
        let healthy = fm(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = repair_degeneracy(&healthy, &[0, 1, 2], 10, |_| unreachable!(), &RepairConfig::default(), &mut rng)
            .unwrap();
        assert_eq!(out.matrix, healthy);
        assert!(!out.expanded && !out.jittered);

        let two = fm(&[0.0, 1.0], &[1.0, 0.0]);
        let out = repair_degeneracy(&two, &[0, 1], 10, |e| (e as f64, (e * e) as f64), &RepairConfig::default(), &mut rng)
            .unwrap();
        assert!(out.expanded && !out.jittered);
        assert_eq!(out.candidates.len(), 8);
        assert_eq!(out.matrix.len(), 8);
    }

    #[test]
    fn constant_structural_feature_is_irreparable() {
        let f = fm(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = repair_degeneracy(&f, &[0, 1, 2], 3, |_| (1.0, 0.0), &RepairConfig::default(), &mut rng).unwrap_err();
        assert!(matches!(err, Error::IrreparableDegeneracy { rounds: 3 }));
    }

    #[test]
    fn constant_features_give_uniform_at_zero_multipliers() {
        let f = fm(&[0.7; 4], &[2.0; 4]);
        let c = MomentConstraints { c_s: 0.7, c_d: 2.0 };
        let sol = solve_maxent_unchecked(&f, &c, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!((sol.beta, sol.tau), (0.0, 0.0));
        assert!(sol.probs.iter().all(|p| (p - 0.25).abs() < 1e-15));
        assert!(matches!(solve_maxent(&f, &c, &SolverConfig::default()), Err(Error::Degenerate)));
    }

    #[test]
    fn symmetric_instance_returns_uniform() {
        let f = fm(&[0.0, 1.0, 2.0], &[2.0, 1.0, 0.0]);
        let c = MomentConstraints { c_s: 1.0, c_d: 1.0 };
        let sol = solve_maxent_unchecked(&f, &c, &SolverConfig::default()).unwrap();
        for p in &sol.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        // Grid over the 2-simplex, step 1e-3: the best feasible point is uniform.
        let n = 1000;
        let mut best = (f64::NEG_INFINITY, [0.0; 3]);
        for i in 0..=n {
            for j in 0..=(n - i) {
                let p = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
                let es = p[1] + 2.0 * p[2];
                let ed = 2.0 * p[0] + p[1];
                if (es - 1.0).abs() < 1e-9 && (ed - 1.0).abs() < 1e-9 {
                    let h = entropy(&p);
                    if h > best.0 {
                        best = (h, p);
                    }
                }
            }
        }
        assert!(sol.entropy() >= best.0 - 1e-4);
        assert!(best.1.iter().all(|p| (p - 1.0 / 3.0).abs() < 2e-3));
    }

    #[test]
    fn solution_matches_moments_and_log_linear_form() {
        let f = fm(&[0.0, 0.5, 1.5, 0.2, 1.0], &[3.0, 1.0, 0.5, 2.0, 2.5]);
        let p0 = [0.1, 0.3, 0.2, 0.25, 0.15];
        let c = MomentConstraints {
            c_s: p0.iter().zip(&f.s_hat).map(|(p, s)| p * s).sum(),
            c_d: p0.iter().zip(&f.d).map(|(p, d)| p * d).sum(),
        };
        let sol = solve_maxent(&f, &c, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.residual_s <= 1e-8 && sol.residual_d <= 1e-8);
        assert!((sol.probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for (i, p) in sol.probs.iter().enumerate() {
            let direct = canonical_score(sol.alpha, sol.beta, sol.tau, f.s_hat[i], f.d[i]).exp();
            assert!((p - direct).abs() < 1e-8);
        }
        assert!(sol.entropy() >= entropy(&p0) - 1e-12);
    }

    #[test]
    fn solves_agree_from_different_starts() {
        let f = fm(&[0.0, 0.5, 1.5, 0.2], &[3.0, 1.0, 0.5, 2.0]);
        let c = MomentConstraints { c_s: 0.6, c_d: 1.6 };
        let cfg = SolverConfig::default();
        let a = solve_maxent_from(&f, &c, &cfg, (0.0, 0.0)).unwrap();
        let b = solve_maxent_from(&f, &c, &cfg, (3.0, -2.0)).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-8);
        }
        assert!((a.beta - b.beta).abs() < 1e-6 && (a.tau - b.tau).abs() < 1e-6);
        assert!((a.alpha - b.alpha).abs() < 1e-6);
    }

    #[test]
    fn small_constraint_perturbations_move_probabilities_little() {
        let f = fm(&[0.0, 0.5, 1.5, 0.2], &[3.0, 1.0, 0.5, 2.0]);
        let c = MomentConstraints { c_s: 0.6, c_d: 1.6 };
        let cfg = SolverConfig::default();
        let a = solve_maxent(&f, &c, &cfg).unwrap();
        for (ds, dd) in [(1e-6, 0.0), (0.0, 1e-6), (-1e-6, 1e-6)] {
            let b = solve_maxent(&f, &MomentConstraints { c_s: c.c_s + ds, c_d: c.c_d + dd }, &cfg).unwrap();
            let diff = a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-3);
        }
    }

    #[test]
    fn infeasible_targets_are_reported() {
        let f = fm(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]);
        let c = MomentConstraints { c_s: 2.0, c_d: 2.0 };
        assert!(matches!(solve_maxent(&f, &c, &SolverConfig::default()), Err(Error::InfeasibleConstraints { .. })));
    }

    #[test]
    fn rank_deficient_fixture_is_refused() {
        let f = fm(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        let c = MomentConstraints { c_s: 2.0, c_d: 2.0 };
        assert!(matches!(solve_maxent(&f, &c, &SolverConfig::default()), Err(Error::Degenerate)));
    }

    #[test]
    fn hull_distance_cases() {
        let tri = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
        assert_eq!(hull_distance(&tri, (0.2, 0.2)), 0.0);
        assert!((hull_distance(&tri, (-1.0, 0.0)) - 1.0).abs() < 1e-15);
        assert!((hull_distance(&[(0.0, 0.0), (2.0, 0.0)], (1.0, 1.0)) - 1.0).abs() < 1e-15);
        assert_eq!(hull_distance(&[(1.0, 1.0), (1.0, 1.0)], (1.0, 1.0)), 0.0);
    }

    #[test]
    fn score_examples() {
        assert_eq!(canonical_score(0.0, 0.0, 0.0, 5.0, 7.0), 0.0);
        assert_eq!(canonical_score(1.0, 2.0, 0.5, 1.0, 2.0), 2.0);
        let base = canonical_score(0.3, 1.1, 0.4, 0.7, 2.2);
        assert!((canonical_score(0.3 + 2.5, 1.1, 0.4, 0.7, 2.2) - base - 2.5).abs() < 1e-15);
    }
}
