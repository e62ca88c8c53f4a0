//! Temporal knowledge-graph storage and the graph-side oracles: shortest-path
//! distances, empirical pair distributions, path-count features and
//! candidate tails.
//!
//! Bins are 0-based indices into the width schedule. Graph queries treat
//! every quadruple with `bin <= u` as an undirected, relation-agnostic edge.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quadruple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
    pub bin: usize,
}

impl Quadruple {
    pub fn new(head: usize, relation: usize, tail: usize, bin: usize) -> Self {
        Self { head, relation, tail, bin }
    }
}

/// Immutable event store. Quadruples are kept sorted and unique.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalKG {
    n_entities: usize,
    n_relations: usize,
    bin_widths: Vec<f64>,
    quads: Vec<Quadruple>,
}

impl TemporalKG {
    pub fn new(
        n_entities: usize,
        n_relations: usize,
        bin_widths: Vec<f64>,
        quads: impl IntoIterator<Item = Quadruple>,
    ) -> Result<Self> {
        if let Some(w) = bin_widths.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidArgument(format!("bin width must be positive and finite, got {w}")));
        }
        let mut set = BTreeSet::new();
        for q in quads {
            if q.head >= n_entities || q.tail >= n_entities {
                return Err(Error::IndexOutOfRange(format!("entity in {q:?} (n_entities = {n_entities})")));
            }
            if q.relation >= n_relations {
                return Err(Error::IndexOutOfRange(format!("relation in {q:?} (n_relations = {n_relations})")));
            }
            if q.bin >= bin_widths.len() {
                return Err(Error::IndexOutOfRange(format!("bin in {q:?} (n_bins = {})", bin_widths.len())));
            }
            if !set.insert(q) {
                return Err(Error::InvalidArgument(format!("duplicate quadruple {q:?}")));
            }
        }
        Ok(Self { n_entities, n_relations, bin_widths, quads: set.into_iter().collect() })
    }

    /// Builds a store sized to fit the given quadruples, with unit bin widths.
    pub fn from_quadruples(quads: Vec<Quadruple>) -> Result<Self> {
        let n_entities = quads.iter().map(|q| q.head.max(q.tail) + 1).max().unwrap_or(0);
        let n_relations = quads.iter().map(|q| q.relation + 1).max().unwrap_or(0);
        let n_bins = quads.iter().map(|q| q.bin + 1).max().unwrap_or(0);
        Self::new(n_entities, n_relations, vec![1.0; n_bins], quads)
    }

    pub fn empty() -> Self {
        Self { n_entities: 0, n_relations: 0, bin_widths: Vec::new(), quads: Vec::new() }
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn n_bins(&self) -> usize {
        self.bin_widths.len()
    }

    pub fn bin_widths(&self) -> &[f64] {
        &self.bin_widths
    }

    pub fn width(&self, u: usize) -> f64 {
        self.bin_widths[u]
    }

    pub fn quadruples(&self) -> &[Quadruple] {
        &self.quads
    }

    pub fn len(&self) -> usize {
        self.quads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quads.is_empty()
    }

    pub fn contains(&self, q: &Quadruple) -> bool {
        self.quads.binary_search(q).is_ok()
    }

    /// Replaces the bin widths, keeping the events.
    pub fn with_bin_widths(&self, widths: Vec<f64>) -> Result<Self> {
        Self::new(self.n_entities, self.n_relations, widths, self.quads.iter().copied())
    }

    /// Sub-store of the events whose bin satisfies `keep`, with the same
    /// entity/relation/bin universe.
    pub fn filter_bins(&self, keep: impl Fn(usize) -> bool) -> Self {
        Self {
            n_entities: self.n_entities,
            n_relations: self.n_relations,
            bin_widths: self.bin_widths.clone(),
            quads: self.quads.iter().copied().filter(|q| keep(q.bin)).collect(),
        }
    }

    /// Observed tails for `(h, r)` in bin `u`, sorted.
    pub fn positive_tails(&self, h: usize, r: usize, u: usize) -> Vec<usize> {
        let lo = Quadruple::new(h, r, 0, 0);
        let start = self.quads.partition_point(|q| *q < lo);
        self.quads[start..]
            .iter()
            .take_while(|q| q.head == h && q.relation == r)
            .filter(|q| q.bin == u)
            .map(|q| q.tail)
            .collect()
    }

    fn check_entity(&self, e: usize) -> Result<()> {
        if e >= self.n_entities {
            return Err(Error::IndexOutOfRange(format!("entity {e} (n_entities = {})", self.n_entities)));
        }
        Ok(())
    }
}

/// Parses `head<TAB>relation<TAB>tail<TAB>bin` lines. Blank lines are skipped.
pub fn parse_tsv(text: &str) -> Result<Vec<Quadruple>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse { line: line_no, msg: format!("expected 4 tab-separated fields, got {}", fields.len()) });
        }
        let mut nums = [0usize; 4];
        for (slot, field) in nums.iter_mut().zip(&fields) {
            *slot = field
                .trim()
                .parse()
                .map_err(|e| Error::Parse { line: line_no, msg: format!("bad index {field:?}: {e}") })?;
        }
        out.push(Quadruple::new(nums[0], nums[1], nums[2], nums[3]));
    }
    Ok(out)
}

/// Loads a quadruple file, sizing the store from the largest indices seen.
pub fn load_tsv(path: impl AsRef<Path>) -> Result<TemporalKG> {
    let text = fs::read_to_string(path)?;
    TemporalKG::from_quadruples(parse_tsv(&text)?)
}

/// Loads a quadruple file against a known universe; indices outside it are
/// rejected.
pub fn load_tsv_with(
    path: impl AsRef<Path>,
    n_entities: usize,
    n_relations: usize,
    bin_widths: Vec<f64>,
) -> Result<TemporalKG> {
    let text = fs::read_to_string(path)?;
    TemporalKG::new(n_entities, n_relations, bin_widths, parse_tsv(&text)?)
}

pub fn save_tsv(kg: &TemporalKG, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for q in kg.quadruples() {
        writeln!(w, "{}\t{}\t{}\t{}", q.head, q.relation, q.tail, q.bin)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinWidth {
    pub u: usize,
    pub delta: f64,
}

/// Reads the bin-width sidecar. Bins not listed default to width 1.
pub fn load_bin_widths(path: impl AsRef<Path>, n_bins: usize) -> Result<Vec<f64>> {
    let entries: Vec<BinWidth> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let n = entries.iter().map(|e| e.u + 1).max().unwrap_or(0).max(n_bins);
    let mut widths = vec![1.0; n];
    for e in entries {
        if !(e.delta.is_finite() && e.delta > 0.0) {
            return Err(Error::InvalidArgument(format!("bin {} has non-positive width {}", e.u, e.delta)));
        }
        widths[e.u] = e.delta;
    }
    Ok(widths)
}

pub fn save_bin_widths(widths: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let entries: Vec<BinWidth> = widths.iter().enumerate().map(|(u, &delta)| BinWidth { u, delta }).collect();
    fs::write(path, serde_json::to_string(&entries)?)?;
    Ok(())
}

/// Undirected simple graph built from the events in a bin range.
#[derive(Clone, Debug)]
pub struct GraphSnapshot {
    adjacency: Vec<Vec<usize>>,
}

impl GraphSnapshot {
    /// Edges from all quadruples with `lo <= bin <= hi`.
    pub fn window(kg: &TemporalKG, lo: usize, hi: usize) -> Self {
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); kg.n_entities()];
        for q in kg.quadruples().iter().filter(|q| q.bin >= lo && q.bin <= hi) {
            if q.head != q.tail {
                sets[q.head].insert(q.tail);
                sets[q.tail].insert(q.head);
            }
        }
        Self { adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect() }
    }

    /// Edges from all quadruples with `bin <= u`.
    pub fn up_to(kg: &TemporalKG, u: usize) -> Self {
        Self::window(kg, 0, u)
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    /// Hop counts from `source` to every entity; `None` where unreachable.
    pub fn bfs(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.adjacency.len()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].expect("queued vertices have a distance");
            for &w in &self.adjacency[v] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn distance(&self, h: usize, t: usize) -> Option<usize> {
        if h == t {
            return Some(0);
        }
        self.bfs(h)[t]
    }

    /// Number of simple paths from `source` to every entity with between 1
    /// and `max_len` edges.
    pub fn path_counts(&self, source: usize, max_len: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.adjacency.len()];
        let mut on_path = vec![false; self.adjacency.len()];
        on_path[source] = true;
        self.extend_paths(source, 0, max_len, &mut on_path, &mut counts);
        counts
    }

    fn extend_paths(&self, v: usize, depth: usize, max_len: usize, on_path: &mut [bool], counts: &mut [u64]) {
        if depth == max_len {
            return;
        }
        for &w in &self.adjacency[v] {
            if on_path[w] {
                continue;
            }
            counts[w] = counts[w].saturating_add(1);
            on_path[w] = true;
            self.extend_paths(w, depth + 1, max_len, on_path, counts);
            on_path[w] = false;
        }
    }
}

/// Shortest-path hop count between `h` and `t` over events with `bin <= u`,
/// or `None` when they are disconnected.
pub fn graph_distance(kg: &TemporalKG, h: usize, t: usize, u: usize) -> Result<Option<usize>> {
    kg.check_entity(h)?;
    kg.check_entity(t)?;
    Ok(GraphSnapshot::up_to(kg, u).distance(h, t))
}

/// Empirical distribution of `(head, tail)` pairs of relation `r` over bins
/// `<= u`, counting repeated pairs with multiplicity.
pub fn pair_distribution(kg: &TemporalKG, r: usize, u: usize) -> Result<BTreeMap<(usize, usize), f64>> {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut total = 0usize;
    for q in kg.quadruples().iter().filter(|q| q.relation == r && q.bin <= u) {
        *counts.entry((q.head, q.tail)).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptySupport(format!("relation {r} has no events up to bin {u}")));
    }
    Ok(counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Window length `w`: the feature at bin `u` sees bins `[u - w, u]`.
    pub window: usize,
    /// Longest path counted.
    pub max_path_len: usize,
    /// Clip bound on the feature value.
    pub s_max: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { window: 5, max_path_len: 3, s_max: 5.0 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_path_len == 0 {
            return Err(Error::InvalidArgument("max_path_len must be >= 1".into()));
        }
        if !(self.s_max.is_finite() && self.s_max > 0.0) {
            return Err(Error::InvalidArgument("s_max must be positive".into()));
        }
        Ok(())
    }
}

/// Turns a raw path count into the clipped feature value.
pub fn path_feature(count: u64, s_max: f64) -> f64 {
    (count as f64).ln_1p().min(s_max)
}

/// `log(1 + #simple paths h → t of length <= L)` over bins `[u - w, u]`,
/// clipped to `S_max`. The relation argument does not enter the value.
pub fn structural_feature(
    kg: &TemporalKG,
    h: usize,
    _r: usize,
    t: usize,
    u: usize,
    cfg: &FeatureConfig,
) -> Result<f64> {
    kg.check_entity(h)?;
    kg.check_entity(t)?;
    let snap = GraphSnapshot::window(kg, u.saturating_sub(cfg.window), u);
    Ok(path_feature(snap.path_counts(h, cfg.max_path_len)[t], cfg.s_max))
}

/// Memoizes path-count features per `(bin, head)`.
#[derive(Debug)]
pub struct FeatureCache<'a> {
    kg: &'a TemporalKG,
    cfg: FeatureConfig,
    snapshots: BTreeMap<usize, GraphSnapshot>,
    rows: BTreeMap<(usize, usize), Vec<f64>>,
}

impl<'a> FeatureCache<'a> {
    pub fn new(kg: &'a TemporalKG, cfg: FeatureConfig) -> Self {
        Self { kg, cfg, snapshots: BTreeMap::new(), rows: BTreeMap::new() }
    }

    /// Feature values from `h` to every entity at bin `u`.
    pub fn row(&mut self, h: usize, u: usize) -> &[f64] {
        if !self.rows.contains_key(&(u, h)) {
            let cfg = self.cfg;
            let kg = self.kg;
            let snap = self
                .snapshots
                .entry(u)
                .or_insert_with(|| GraphSnapshot::window(kg, u.saturating_sub(cfg.window), u));
            let row = snap.path_counts(h, cfg.max_path_len).into_iter().map(|c| path_feature(c, cfg.s_max)).collect();
            self.rows.insert((u, h), row);
        }
        &self.rows[&(u, h)]
    }

    pub fn get(&mut self, h: usize, t: usize, u: usize) -> f64 {
        self.row(h, u)[t]
    }
}

/// `K` distinct candidate tails for `(h, r, u)`: the observed tails first,
/// padded with distinct entities drawn uniformly from the rest.
pub fn candidate_set(kg: &TemporalKG, h: usize, r: usize, u: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("candidate set size must be >= 2, got {k}")));
    }
    if k > kg.n_entities() {
        return Err(Error::InvalidArgument(format!(
            "candidate set size {k} exceeds the number of entities {}",
            kg.n_entities()
        )));
    }
    kg.check_entity(h)?;
    let mut out = kg.positive_tails(h, r, u);
    out.truncate(k);
    let taken: HashSet<usize> = out.iter().copied().collect();
    let mut pool: Vec<usize> = (0..kg.n_entities()).filter(|e| !taken.contains(e)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    out.extend(pool.into_iter().take(k - out.len()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(h: usize, r: usize, t: usize, u: usize) -> Quadruple {
        Quadruple::new(h, r, t, u)
    }

    fn path_graph(n: usize) -> TemporalKG {
        TemporalKG::from_quadruples((0..n - 1).map(|i| q(i, 0, i + 1, 0)).collect()).unwrap()
    }

    #[test]
    fn tsv_basics() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.tsv");
        fs::write(&empty, "").unwrap();
        let kg = load_tsv(&empty).unwrap();
        assert!(kg.is_empty());
        assert_eq!(kg.n_entities(), 0);

        let three = dir.path().join("three.tsv");
        fs::write(&three, "0\t0\t1\t0\n1\t0\t2\t1\n2\t1\t0\t1\n").unwrap();
        let kg = load_tsv(&three).unwrap();
        assert_eq!(kg.len(), 3);
        assert_eq!((kg.n_entities(), kg.n_relations(), kg.n_bins()), (3, 2, 2));
    }

    #[test]
    fn tsv_errors_carry_line_numbers() {
        let err = parse_tsv("0\t0\t1\t0\n0\t0\t1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_tsv("0\t0\tx\t0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.tsv");
        fs::write(&p, "0\t0\t5\t0\n").unwrap();
        assert!(matches!(load_tsv_with(&p, 3, 1, vec![1.0]), Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn bin_width_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bins.json");
        fs::write(&p, r#"[{"u":1,"delta":2.5}]"#).unwrap();
        assert_eq!(load_bin_widths(&p, 3).unwrap(), vec![1.0, 2.5, 1.0]);
        save_bin_widths(&[0.5, 1.5], &p).unwrap();
        assert_eq!(load_bin_widths(&p, 0).unwrap(), vec![0.5, 1.5]);
        fs::write(&p, r#"[{"u":0,"delta":0.0}]"#).unwrap();
        assert!(load_bin_widths(&p, 1).is_err());
    }

    #[test]
    fn distance_examples() {
        let kg = TemporalKG::new(2, 1, vec![1.0, 1.0], [q(0, 0, 1, 1)]).unwrap();
        assert_eq!(graph_distance(&kg, 0, 0, 0).unwrap(), Some(0));
        assert_eq!(graph_distance(&kg, 0, 1, 1).unwrap(), Some(1));
        assert_eq!(graph_distance(&kg, 0, 1, 0).unwrap(), None);
        let path = path_graph(4);
        assert_eq!(graph_distance(&path, 0, 3, 0).unwrap(), Some(3));
        assert_eq!(graph_distance(&path, 3, 0, 0).unwrap(), Some(3));
        assert!(graph_distance(&path, 0, 9, 0).is_err());
    }

    /// Floyd–Warshall on the same undirected edge set.
    fn all_pairs_oracle(kg: &TemporalKG, u: usize) -> Vec<Vec<Option<usize>>> {
        let n = kg.n_entities();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for e in kg.quadruples().iter().filter(|e| e.bin <= u && e.head != e.tail) {
            d[e.head][e.tail] = 1;
            d[e.tail][e.head] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d.into_iter().map(|row| row.into_iter().map(|x| (x < inf).then_some(x)).collect()).collect()
    }

    fn small_kg() -> impl Strategy<Value = TemporalKG> {
        (2usize..=8, 1usize..=3, 1usize..=4).prop_flat_map(|(n, r, b)| {
            prop::collection::vec((0..n, 0..r, 0..n, 0..b), 0..20).prop_map(move |raw| {
                let set: BTreeSet<_> = raw.into_iter().map(|(h, r, t, u)| q(h, r, t, u)).collect();
                TemporalKG::new(n, r, vec![1.0; b], set).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn bfs_matches_all_pairs_oracle(kg in small_kg()) {
            for u in 0..kg.n_bins() {
                let oracle = all_pairs_oracle(&kg, u);
                let snap = GraphSnapshot::up_to(&kg, u);
                for h in 0..kg.n_entities() {
                    for t in 0..kg.n_entities() {
                        prop_assert_eq!(snap.distance(h, t), oracle[h][t]);
                    }
                }
            }
        }

        #[test]
        fn distance_is_symmetric_monotone_and_metric(kg in small_kg()) {
            let n = kg.n_entities();
            let mut prev: Option<Vec<Vec<Option<usize>>>> = None;
            for u in 0..kg.n_bins() {
                let snap = GraphSnapshot::up_to(&kg, u);
                let d: Vec<Vec<Option<usize>>> = (0..n).map(|h| snap.bfs(h)).collect();
                for a in 0..n {
                    for b in 0..n {
                        prop_assert_eq!(d[a][b], d[b][a]);
                        for c in 0..n {
                            if let (Some(ab), Some(bc)) = (d[a][b], d[b][c]) {
                                prop_assert!(d[a][c].unwrap() <= ab + bc);
                            }
                        }
                        if let Some(p) = &prev {
                            if let Some(old) = p[a][b] {
                                prop_assert!(d[a][b].unwrap() <= old);
                            }
                        }
                    }
                }
                prev = Some(d);
            }
        }

        #[test]
        fn tsv_round_trip(kg in small_kg()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("kg.tsv");
            save_tsv(&kg, &p).unwrap();
            let back = load_tsv_with(&p, kg.n_entities(), kg.n_relations(), kg.bin_widths().to_vec()).unwrap();
            prop_assert_eq!(back, kg);
        }

        #[test]
        fn pair_distribution_is_a_distribution(kg in small_kg()) {
            for r in 0..kg.n_relations() {
                for u in 0..kg.n_bins() {
                    match pair_distribution(&kg, r, u) {
                        Ok(pi) => {
                            let total: f64 = pi.values().sum();
                            prop_assert!((total - 1.0).abs() <= 1e-12);
                            prop_assert!(pi.values().all(|p| *p > 0.0));
                        }
                        Err(Error::EmptySupport(_)) => {
                            prop_assert!(!kg.quadruples().iter().any(|e| e.relation == r && e.bin <= u));
                        }
                        Err(e) => return Err(TestCaseError::fail(e.to_string())),
                    }
                }
            }
        }

        #[test]
        fn features_are_bounded_and_causal(kg in small_kg(), extra in (0usize..8, 0usize..8)) {
            let cfg = FeatureConfig { window: 2, max_path_len: 3, s_max: 1.2 };
            let u = 0;
            let n = kg.n_entities();
            // Adding events in later bins must not change features at bin 0.
            let mut quads: Vec<_> = kg.quadruples().to_vec();
            let mut widths = kg.bin_widths().to_vec();
            widths.push(1.0);
            let future = q(extra.0 % n, 0, extra.1 % n, widths.len() - 1);
            quads.push(future);
            let set: BTreeSet<_> = quads.into_iter().collect();
            let later = TemporalKG::new(n, kg.n_relations().max(1), widths, set).unwrap();
            for h in 0..n {
                for t in 0..n {
                    let s = structural_feature(&kg, h, 0, t, u, &cfg).unwrap();
                    prop_assert!((0.0..=cfg.s_max).contains(&s));
                    prop_assert_eq!(s, structural_feature(&later, h, 0, t, u, &cfg).unwrap());
                }
            }
        }
    }

    #[test]
    fn pair_distribution_examples() {
        let one = TemporalKG::from_quadruples(vec![q(0, 0, 1, 0)]).unwrap();
        let pi = pair_distribution(&one, 0, 0).unwrap();
        assert_eq!(pi[&(0, 1)], 1.0);

        let two = TemporalKG::from_quadruples(vec![q(0, 0, 1, 0), q(1, 0, 2, 0)]).unwrap();
        let pi = pair_distribution(&two, 0, 0).unwrap();
        assert_eq!(pi[&(0, 1)], 0.5);
        assert_eq!(pi[&(1, 2)], 0.5);

        // Five events: (0,1) three times across bins, (1,2) once, and one
        // event of another relation.
        let five = TemporalKG::from_quadruples(vec![
            q(0, 0, 1, 0),
            q(0, 0, 1, 1),
            q(0, 0, 1, 2),
            q(1, 0, 2, 2),
            q(2, 1, 0, 1),
        ])
        .unwrap();
        let pi = pair_distribution(&five, 0, 2).unwrap();
        assert_eq!(pi[&(0, 1)], 0.75);
        assert_eq!(pi[&(1, 2)], 0.25);
        let pi = pair_distribution(&five, 0, 1).unwrap();
        assert_eq!(pi.len(), 1);
        assert!(matches!(pair_distribution(&five, 1, 0), Err(Error::EmptySupport(_))));
    }

    /// Enumerates every sequence of distinct vertices and checks adjacency.
    fn brute_force_paths(kg: &TemporalKG, lo: usize, hi: usize, h: usize, t: usize, max_len: usize) -> u64 {
        let n = kg.n_entities();
        let mut edges = HashSet::new();
        for e in kg.quadruples().iter().filter(|e| e.bin >= lo && e.bin <= hi && e.head != e.tail) {
            edges.insert((e.head, e.tail));
            edges.insert((e.tail, e.head));
        }
        fn rec(
            path: &mut Vec<usize>,
            t: usize,
            n: usize,
            max_len: usize,
            edges: &HashSet<(usize, usize)>,
            count: &mut u64,
        ) {
            let last = *path.last().unwrap();
            if path.len() > 1 && last == t {
                *count += 1;
                return;
            }
            if path.len() > max_len {
                return;
            }
            for next in 0..n {
                if !path.contains(&next) && edges.contains(&(last, next)) {
                    path.push(next);
                    rec(path, t, n, max_len, edges, count);
                    path.pop();
                }
            }
        }
        let mut count = 0;
        rec(&mut vec![h], t, n, max_len, &edges, &mut count);
        count
    }

    #[test]
    fn path_features_match_enumeration() {
        let cfg = FeatureConfig { window: 1, max_path_len: 3, s_max: 10.0 };
        let kg = TemporalKG::from_quadruples(vec![
            q(0, 0, 1, 0),
            q(1, 0, 2, 1),
            q(0, 1, 2, 1),
            q(2, 0, 3, 2),
            q(3, 0, 0, 2),
            q(1, 1, 3, 2),
            q(4, 0, 0, 0),
        ])
        .unwrap();
        for u in 0..kg.n_bins() {
            for h in 0..kg.n_entities() {
                for t in 0..kg.n_entities() {
                    let expected = brute_force_paths(&kg, u.saturating_sub(cfg.window), u, h, t, cfg.max_path_len);
                    let got = structural_feature(&kg, h, 0, t, u, &cfg).unwrap();
                    assert!((got - (expected as f64).ln_1p()).abs() < 1e-15, "h={h} t={t} u={u}");
                }
            }
        }
    }

    #[test]
    fn feature_examples() {
        let cfg = FeatureConfig { window: 0, max_path_len: 2, s_max: 5.0 };
        let kg = TemporalKG::from_quadruples(vec![q(0, 0, 1, 0), q(2, 0, 3, 1)]).unwrap();
        assert_eq!(structural_feature(&kg, 0, 0, 2, 1, &cfg).unwrap(), 0.0);
        assert!((structural_feature(&kg, 0, 0, 1, 0, &cfg).unwrap() - 2f64.ln()).abs() < 1e-15);
        // Outside the window the edge no longer counts.
        assert_eq!(structural_feature(&kg, 0, 0, 1, 1, &cfg).unwrap(), 0.0);
        let tight = FeatureConfig { s_max: 0.1, ..cfg };
        assert_eq!(structural_feature(&kg, 0, 0, 1, 0, &tight).unwrap(), 0.1);

        let mut cache = FeatureCache::new(&kg, cfg);
        assert_eq!(cache.get(0, 1, 0), structural_feature(&kg, 0, 0, 1, 0, &cfg).unwrap());
    }

    #[test]
    fn candidate_set_examples() {
        let kg = TemporalKG::new(6, 1, vec![1.0], [q(0, 0, 3, 0), q(0, 0, 5, 0)]).unwrap();
        let all = candidate_set(&kg, 0, 0, 0, 6, 1).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());

        for seed in 0..20 {
            let c = candidate_set(&kg, 0, 0, 0, 3, seed).unwrap();
            assert_eq!(c.len(), 3);
            assert!(c.contains(&3) && c.contains(&5));
            let distinct: HashSet<_> = c.iter().collect();
            assert_eq!(distinct.len(), 3);
            assert_eq!(c, candidate_set(&kg, 0, 0, 0, 3, seed).unwrap());
        }
        assert!(candidate_set(&kg, 0, 0, 0, 7, 0).is_err());
        assert!(candidate_set(&kg, 0, 0, 0, 1, 0).is_err());
    }

    #[test]
    fn duplicates_and_bad_widths_are_rejected() {
        assert!(TemporalKG::new(2, 1, vec![1.0], [q(0, 0, 1, 0), q(0, 0, 1, 0)]).is_err());
        assert!(TemporalKG::new(2, 1, vec![0.0], [q(0, 0, 1, 0)]).is_err());
    }
}
