//! Temporal splits and filtered ranking metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{feature_row, ModelParams};
use crate::error::{Error, Result};
use crate::graphstore::{FeatureCache, FeatureConfig, Quadruple, TemporalKG};

/// Splits by time: the final `test_frac` of bins (at least one) go to test.
/// Both halves keep the full entity/relation universe and bin widths.
pub fn temporal_split(kg: &TemporalKG, test_frac: f64) -> Result<(TemporalKG, TemporalKG, usize)> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::InvalidArgument(format!("test fraction must lie in (0, 1), got {test_frac}")));
    }
    let n = kg.n_bins();
    if n < 2 {
        return Err(Error::InvalidArgument("temporal split needs at least two bins".into()));
    }
    let n_test = ((n as f64 * test_frac).round() as usize).clamp(1, n - 1);
    let cut = n - n_test;
    Ok((kg.filter_bins(|u| u < cut), kg.filter_bins(|u| u >= cut), cut))
}

/// Candidates ordered by descending score, ties broken by entity index.
pub fn score_rank(
    params: &ModelParams,
    r: usize,
    h: usize,
    u: usize,
    s_row: &[f64],
    candidates: &[usize],
) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> =
        candidates.iter().map(|&t| (t, params.score(r, h, t, u, s_row[t]))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
}

/// Filtered tail-prediction metrics over `queries`. Features come from
/// `history` strictly before each query's bin; other true tails of the same
/// `(h, r, u)` are removed from the candidate list.
pub fn evaluate_ranking(
    params: &ModelParams,
    history: &TemporalKG,
    queries: &[Quadruple],
    features: FeatureConfig,
) -> Result<RankingMetrics> {
    if queries.is_empty() {
        return Err(Error::EmptySupport("no evaluation queries".into()));
    }
    let n = params.n_entities();
    if history.n_entities() != n {
        return Err(Error::DimensionMismatch { expected: n, got: history.n_entities() });
    }
    let mut truth: BTreeMap<(usize, usize, usize), Vec<usize>> = BTreeMap::new();
    for q in history.quadruples().iter().chain(queries) {
        truth.entry((q.head, q.relation, q.bin)).or_default().push(q.tail);
    }
    let mut cache = FeatureCache::new(history, features);
    let mut m = RankingMetrics { n_queries: queries.len(), ..Default::default() };
    for q in queries {
        if q.relation >= params.n_relations() || q.head >= n || q.tail >= n {
            return Err(Error::IndexOutOfRange(format!("query {q:?} outside the model universe")));
        }
        let s_row = feature_row(&mut cache, n, q.head, q.bin);
        let others = &truth[&(q.head, q.relation, q.bin)];
        let candidates: Vec<usize> = (0..n).filter(|e| *e == q.tail || !others.contains(e)).collect();
        let ranked = score_rank(params, q.relation, q.head, q.bin, &s_row, &candidates);
        let rank = 1 + ranked.iter().position(|(e, _)| *e == q.tail).expect("true tail is a candidate");
        m.mrr += 1.0 / rank as f64;
        m.hits1 += f64::from(u8::from(rank <= 1));
        m.hits3 += f64::from(u8::from(rank <= 3));
        m.hits10 += f64::from(u8::from(rank <= 10));
    }
    let k = queries.len() as f64;
    m.mrr /= k;
    m.hits1 /= k;
    m.hits3 /= k;
    m.hits10 /= k;
    Ok(m)
}

/// Expected MRR of a uniformly random ranking of `n` candidates, `H_n / n`.
pub fn random_chance_mrr(n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64
}
