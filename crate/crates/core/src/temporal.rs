//! Bin-level event probabilities, the cloglog negative log-likelihood with
//! importance-weighted sampled negatives, and the Poisson simulator.
//!
//! A piecewise-constant intensity `e^f` over a bin of width `Δ` produces at
//! least one event with probability `1 − exp(−Δ·e^f)`. Survival over disjoint
//! sub-intervals multiplies, so this link is the only one whose bin-level
//! probabilities agree across every partition of the time axis.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Scores are clamped to `[-F_MAX, F_MAX]` before exponentiation.
pub const F_MAX: f64 = 20.0;
pub const DEFAULT_K_NEG: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSchedule {
    widths: Vec<f64>,
}

impl BinSchedule {
    pub fn new(widths: Vec<f64>) -> Result<Self> {
        if let Some((u, w)) = widths.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidArgument(format!("bin {u} has width {w}; widths must be positive")));
        }
        Ok(Self { widths })
    }

    pub fn uniform(n_bins: usize, width: f64) -> Result<Self> {
        Self::new(vec![width; n_bins])
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    /// Splits every bin into `k` equal sub-bins.
    pub fn refine(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("refinement factor must be positive".into()));
        }
        Self::new(self.widths.iter().flat_map(|w| std::iter::repeat_n(w / k as f64, k)).collect())
    }
}

pub fn clamp_score(f: f64) -> f64 {
    f.clamp(-F_MAX, F_MAX)
}

/// `1 − exp(−Δ·e^f)`.
pub fn cloglog_prob(f: f64, delta: f64) -> f64 {
    -(-delta * clamp_score(f).exp()).exp_m1()
}

/// `log(−log(1 − p)) − log Δ`.
pub fn cloglog_inverse(p: f64, delta: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("probability {p} must lie strictly inside (0, 1)")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("bin width {delta} must be positive")));
    }
    Ok((-(-p).ln_1p()).ln() - delta.ln())
}

/// Bin-level links. Only the complementary log-log is partition invariant;
/// the other two exist as negative controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    Cloglog,
    Logistic,
    Probit,
}

impl Link {
    pub fn prob(self, f: f64, delta: f64) -> f64 {
        match self {
            Link::Cloglog => cloglog_prob(f, delta),
            Link::Logistic => 1.0 / (1.0 + (-f - delta.ln()).exp()),
            Link::Probit => Normal::standard().cdf(f + delta.ln()),
        }
    }

    /// Probability of no event in the bin.
    pub fn survival(self, f: f64, delta: f64) -> f64 {
        match self {
            Link::Cloglog => (-delta * clamp_score(f).exp()).exp(),
            _ => 1.0 - self.prob(f, delta),
        }
    }
}

/// `|S(Δ) − Π_j S(Δ_j)|` for a random split of `Δ` into `k_parts` positive
/// sub-widths.
pub fn verify_partition_invariance(link: Link, f: f64, delta: f64, k_parts: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..k_parts.max(1)).map(|_| 0.05 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let parts: Vec<f64> = raw.iter().map(|r| delta * r / total).collect();
    partition_deviation(link, f, delta, &parts)
}

/// Same as [`verify_partition_invariance`] for an explicit split.
pub fn partition_deviation(link: Link, f: f64, delta: f64, parts: &[f64]) -> Result<f64> {
    if parts.is_empty() || parts.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidArgument("sub-widths must be positive".into()));
    }
    if parts.len() == 1 {
        return Ok(0.0);
    }
    let whole = link.survival(f, delta);
    let product: f64 = parts.iter().map(|d| link.survival(f, *d)).product();
    Ok((whole - product).abs())
}

/// Draws per-bin "at least one event" indicators for a Poisson process whose
/// intensity is `e^{f_u}` on bin `u`, by sampling the first arrival time in
/// each bin and comparing it to the bin width.
pub fn simulate_bin_events(f_schedule: &[f64], bins: &BinSchedule, seed: u64) -> Result<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_bin_events_with(f_schedule, bins, &mut rng)
}

pub fn simulate_bin_events_with<R: Rng>(f_schedule: &[f64], bins: &BinSchedule, rng: &mut R) -> Result<Vec<bool>> {
    if f_schedule.len() != bins.len() {
        return Err(Error::DimensionMismatch { expected: bins.len(), got: f_schedule.len() });
    }
    Ok(f_schedule
        .iter()
        .zip(bins.widths())
        .map(|(f, delta)| {
            let rate = f.min(F_MAX).exp();
            if rate == 0.0 {
                return false;
            }
            let first: f64 = rng.sample::<f64, _>(Exp1) / rate;
            first < *delta
        })
        .collect())
}

/// OR-merges consecutive groups of `k` fine indicators.
pub fn merge_indicators(fine: &[bool], k: usize) -> Vec<bool> {
    fine.chunks(k).map(|c| c.iter().any(|y| *y)).collect()
}

/// Negative-tail proposal `q(· | h, r, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    support: Vec<usize>,
    probs: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl Proposal {
    pub fn new(support: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidProposal("support and probabilities must be non-empty and aligned".into()));
        }
        if probs.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
            return Err(Error::InvalidProposal("proposal probabilities must be strictly positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProposal(format!("proposal sums to {total}")));
        }
        let index = WeightedIndex::new(&probs).map_err(|e| Error::InvalidProposal(e.to_string()))?;
        Ok(Self { support, probs, index })
    }

    /// Uniform over the tails that are not observed positives.
    pub fn uniform_excluding(n_entities: usize, positives: &[usize]) -> Result<Self> {
        let support: Vec<usize> = (0..n_entities).filter(|t| !positives.contains(t)).collect();
        if support.is_empty() {
            return Err(Error::InvalidProposal("every tail is a positive; nothing to sample".into()));
        }
        let q = 1.0 / support.len() as f64;
        let probs = vec![q; support.len()];
        Self::new(support, probs)
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<SampledNegative> {
        (0..k)
            .map(|_| {
                let i = self.index.sample(rng);
                SampledNegative { tail: self.support[i], q: self.probs[i] }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledNegative {
    pub tail: usize,
    pub q: f64,
}

/// Draws `k_neg` negatives per positive from a uniform proposal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSampler {
    pub k_neg: usize,
}

impl Default for NegativeSampler {
    fn default() -> Self {
        Self { k_neg: DEFAULT_K_NEG }
    }
}

impl NegativeSampler {
    pub fn draw<R: Rng>(&self, n_entities: usize, positives: &[usize], rng: &mut R) -> Result<Vec<SampledNegative>> {
        Ok(Proposal::uniform_excluding(n_entities, positives)?.sample(self.k_neg, rng))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositiveEvent {
    pub score: f64,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeEvent {
    pub score: f64,
    pub delta: f64,
    pub q: f64,
}

fn check_negatives(negatives: &[NegativeEvent], k_neg: usize) -> Result<()> {
    if k_neg == 0 && !negatives.is_empty() {
        return Err(Error::InvalidArgument("k_neg must be positive".into()));
    }
    if let Some(n) = negatives.iter().find(|n| !(n.q > 0.0)) {
        return Err(Error::InvalidProposal(format!("negative drawn with proposal probability {}", n.q)));
    }
    Ok(())
}

/// `−log(1 − exp(−x))`.
fn neg_log_event(x: f64) -> f64 {
    if x > std::f64::consts::LN_2 {
        -(-(-x).exp()).ln_1p()
    } else {
        -(-(-x).exp_m1()).ln()
    }
}

/// `−Σ_pos log(1 − exp(−Δe^f)) + Σ_neg Δe^f / (K_neg·q)`.
pub fn nll(positives: &[PositiveEvent], negatives: &[NegativeEvent], k_neg: usize) -> Result<f64> {
    check_negatives(negatives, k_neg)?;
    let pos: f64 = positives.iter().map(|e| neg_log_event(e.delta * clamp_score(e.score).exp())).sum();
    let neg: f64 =
        negatives.iter().map(|e| e.delta * clamp_score(e.score).exp() / (k_neg as f64 * e.q)).sum();
    Ok(pos + neg)
}

/// Derivatives of [`nll`] with respect to each event's score. Outside the
/// clamp range the derivative is zero.
pub fn nll_gradient(
    positives: &[PositiveEvent],
    negatives: &[NegativeEvent],
    k_neg: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_negatives(negatives, k_neg)?;
    let inside = |f: f64| f.abs() < F_MAX;
    let gp = positives
        .iter()
        .map(|e| {
            if !inside(e.score) {
                return 0.0;
            }
            let x = e.delta * e.score.exp();
            -x / x.exp_m1()
        })
        .collect();
    let gn = negatives
        .iter()
        .map(|e| if inside(e.score) { e.delta * e.score.exp() / (k_neg as f64 * e.q) } else { 0.0 })
        .collect();
    Ok((gp, gn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prob_examples() {
        let f = (2f64.ln()).ln();
        assert!((cloglog_prob(f, 1.0) - 0.5).abs() < 1e-15);
        assert!(cloglog_prob(-1e6, 1.0) < 1e-8);
        // Poisson with unit rate: P(N >= 1) = 1 − Σ_{k=0}^{0} e^{-1}/k!.
        let poisson_tail = 1.0 - (-1f64).exp();
        assert!((cloglog_prob(0.0, 1.0) - poisson_tail).abs() < 1e-15);
        assert!((cloglog_prob(0.0, 1.0) - 0.6321206).abs() < 1e-7);
    }

    #[test]
    fn inverse_examples() {
        assert!(cloglog_inverse(1.0 - (-1f64).exp(), 1.0).unwrap().abs() < 1e-14);
        let a = cloglog_inverse(0.3, 1.0).unwrap();
        let b = cloglog_inverse(0.3, 2.0).unwrap();
        assert!((b - a + 2f64.ln()).abs() < 1e-14);
        assert!(cloglog_inverse(0.0, 1.0).is_err());
        assert!(cloglog_inverse(1.0, 1.0).is_err());
    }

    #[test]
    fn partition_examples() {
        for seed in 0..50 {
            for k in 2..6 {
                assert!(verify_partition_invariance(Link::Cloglog, 0.3, 1.7, k, seed).unwrap() <= 1e-12);
            }
        }
        assert_eq!(verify_partition_invariance(Link::Logistic, 0.0, 1.0, 1, 0).unwrap(), 0.0);
        // 1/2 vs (2/3)^2.
        let dev = partition_deviation(Link::Logistic, 0.0, 1.0, &[0.5, 0.5]).unwrap();
        assert!((dev - (4.0 / 9.0 - 0.5f64).abs()).abs() < 1e-15);
        assert!(dev > 1e-3);
        assert!(partition_deviation(Link::Probit, 0.0, 1.0, &[0.5, 0.5]).unwrap() > 1e-3);
    }

    #[test]
    fn simulator_extremes() {
        let bins = BinSchedule::uniform(50, 1.0).unwrap();
        assert!(simulate_bin_events(&[-1000.0; 50], &bins, 3).unwrap().iter().all(|y| !y));
        assert!(simulate_bin_events(&[15.0; 50], &bins, 3).unwrap().iter().all(|y| *y));
        assert!(simulate_bin_events(&[0.0; 3], &bins, 3).is_err());
    }

    fn binomial_within(hits: usize, n: usize, p: f64) -> bool {
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        ((hits as f64 / n as f64) - p).abs() <= 3.0 * sd
    }

    #[test]
    fn simulated_frequency_matches_link() {
        let bins = BinSchedule::new(vec![0.3, 1.0, 2.5]).unwrap();
        let f = [0.2, -1.0, -0.4];
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut hits = [0usize; 3];
        for _ in 0..n {
            for (h, y) in hits.iter_mut().zip(simulate_bin_events_with(&f, &bins, &mut rng).unwrap()) {
                *h += y as usize;
            }
        }
        for u in 0..3 {
            assert!(binomial_within(hits[u], n, cloglog_prob(f[u], bins.widths()[u])), "bin {u}");
        }
    }

    #[test]
    fn refinement_is_consistent() {
        let coarse = BinSchedule::new(vec![1.0, 0.5]).unwrap();
        let f = [-0.3, 0.4];
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [2usize, 4] {
            let fine = coarse.refine(k).unwrap();
            let fine_f: Vec<f64> = f.iter().flat_map(|x| std::iter::repeat_n(*x, k)).collect();
            let mut hits = [0usize; 2];
            for _ in 0..n {
                let y = merge_indicators(&simulate_bin_events_with(&fine_f, &fine, &mut rng).unwrap(), k);
                for (h, v) in hits.iter_mut().zip(y) {
                    *h += v as usize;
                }
            }
            for u in 0..2 {
                assert!(binomial_within(hits[u], n, cloglog_prob(f[u], coarse.widths()[u])), "k={k} bin {u}");
            }
        }
    }

    #[test]
    fn nll_examples() {
        assert_eq!(nll(&[], &[], 16).unwrap(), 0.0);
        let f = (2f64.ln()).ln();
        let v = nll(&[PositiveEvent { score: f, delta: 1.0 }], &[], 16).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-14);
        let neg = NegativeEvent { score: 0.0, delta: 1.0, q: 0.0 };
        assert!(matches!(nll(&[], &[neg], 1), Err(Error::InvalidProposal(_))));
        assert!(Proposal::new(vec![1, 2], vec![0.5, 0.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pos = [PositiveEvent { score: -0.7, delta: 0.5 }, PositiveEvent { score: 1.3, delta: 2.0 }];
        let neg = [NegativeEvent { score: 0.4, delta: 0.5, q: 0.25 }, NegativeEvent { score: -2.0, delta: 2.0, q: 0.1 }];
        let (gp, gn) = nll_gradient(&pos, &neg, 4).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut a = pos;
            let mut b = pos;
            a[i].score += h;
            b[i].score -= h;
            let fd = (nll(&a, &neg, 4).unwrap() - nll(&b, &neg, 4).unwrap()) / (2.0 * h);
            assert!((fd - gp[i]).abs() <= 1e-6 * gp[i].abs().max(1e-3), "{fd} vs {}", gp[i]);
            assert!(gp[i] < 0.0);
            let mut a = neg;
            let mut b = neg;
            a[i].score += h;
            b[i].score -= h;
            let fd = (nll(&pos, &a, 4).unwrap() - nll(&pos, &b, 4).unwrap()) / (2.0 * h);
            assert!((fd - gn[i]).abs() <= 1e-6 * gn[i].abs().max(1e-3));
        }
        let (sat, _) = nll_gradient(&[PositiveEvent { score: 5.0, delta: 1.0 }], &[], 1).unwrap();
        assert!(sat[0].abs() < 1e-60);
    }

    #[test]
    fn sampled_negative_term_is_unbiased() {
        let n_entities = 5;
        let scores = [0.5, -0.2, 0.9, -1.1, 0.3];
        let delta = 0.7;
        let positives = [0usize];
        let exact: f64 = (1..n_entities).map(|t| delta * f64::exp(scores[t])).sum();
        let sampler = NegativeSampler::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let neg: Vec<NegativeEvent> = sampler
                .draw(n_entities, &positives, &mut rng)
                .unwrap()
                .into_iter()
                .map(|s| NegativeEvent { score: scores[s.tail], delta, q: s.q })
                .collect();
            acc += nll(&[], &neg, sampler.k_neg).unwrap();
        }
        let mean = acc / draws as f64;
        assert!(((mean - exact) / exact).abs() <= 0.01, "{mean} vs {exact}");
    }

    proptest! {
        #[test]
        fn round_trip(f in -15.0f64..15.0, delta in 0.01f64..10.0) {
            let p = cloglog_prob(f, delta);
            prop_assume!(p > 1e-300 && p < 1.0 - 1e-12);
            let back = cloglog_inverse(p, delta).unwrap();
            prop_assert!((cloglog_prob(back, delta) - p).abs() <= 1e-10);
        }

        #[test]
        fn strictly_monotone(mut fs in proptest::collection::vec(-5.0f64..1.0, 2..40), delta in 0.1f64..2.0) {
            fs.sort_by(|a, b| a.total_cmp(b));
            fs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            for w in fs.windows(2) {
                prop_assert!(cloglog_prob(w[0], delta) < cloglog_prob(w[1], delta));
                prop_assert!(cloglog_prob(w[0], delta) < cloglog_prob(w[0], delta * 1.5));
            }
        }

        #[test]
        fn only_cloglog_is_partition_invariant(f in -2.0f64..2.0, delta in 0.2f64..3.0, k in 2usize..6, seed in 0u64..1000) {
            prop_assert!(verify_partition_invariance(Link::Cloglog, f, delta, k, seed).unwrap() <= 1e-12);
            prop_assert!(verify_partition_invariance(Link::Logistic, f, delta, k, seed).unwrap() > 0.0);
            prop_assert!(verify_partition_invariance(Link::Probit, f, delta, k, seed).unwrap() > 0.0);
        }
    }
}
