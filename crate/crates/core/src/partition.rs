//! Label-invariant summaries of the allocation draws and the two rules for
//! picking a final level partition per covariate.
//!
//! Partitions are over the *elements* of a covariate: element 0 is the
//! baseline, which always sits in component 0, and elements `1..=c` are the
//! level effects. Fusing a level to the baseline merges it into element 0's
//! block.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::AllocationTrace;

/// Default upper bound on the number of clusters tried by PAM.
pub const DEFAULT_K_CAP: usize = 30;

/// A partition of the elements `0..n` of one covariate, in canonical form:
/// members ascending, blocks ordered by their smallest member. The first
/// block therefore always holds the baseline.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelPartition {
    pub covariate: String,
    blocks: Vec<Vec<usize>>,
}

impl LevelPartition {
    /// Builds a partition from arbitrary cluster labels, one per element.
    pub fn from_labels<L: Copy + Eq + std::hash::Hash>(covariate: impl Into<String>, labels: &[L]) -> Self {
        let mut index: HashMap<L, usize> = HashMap::new();
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for (e, &l) in labels.iter().enumerate() {
            let b = *index.entry(l).or_insert_with(|| {
                blocks.push(Vec::new());
                blocks.len() - 1
            });
            blocks[b].push(e);
        }
        LevelPartition {
            covariate: covariate.into(),
            blocks,
        }
    }

    /// Validates and canonicalises a list of blocks.
    pub fn from_blocks(covariate: impl Into<String>, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let n: usize = blocks.iter().map(Vec::len).sum();
        let mut seen = vec![false; n];
        for b in &mut blocks {
            if b.is_empty() {
                return Err(Error::InvalidPartition("empty block".into()));
            }
            b.sort_unstable();
            for &e in b.iter() {
                if e >= n || seen[e] {
                    return Err(Error::InvalidPartition(format!(
                        "blocks do not partition 0..{n} (element {e})"
                    )));
                }
                seen[e] = true;
            }
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(LevelPartition {
            covariate: covariate.into(),
            blocks,
        })
    }

    /// Each element in a block of its own.
    pub fn singletons(covariate: impl Into<String>, n: usize) -> Self {
        LevelPartition {
            covariate: covariate.into(),
            blocks: (0..n).map(|e| vec![e]).collect(),
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_elements(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// The block containing the baseline.
    pub fn zero_block(&self) -> &[usize] {
        &self.blocks[0]
    }

    /// Canonical block index of every element (a restricted growth string).
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.n_elements()];
        for (b, block) in self.blocks.iter().enumerate() {
            for &e in block {
                labels[e] = b;
            }
        }
        labels
    }

    /// Number of distinct nonzero effects, i.e. blocks other than the zero
    /// block.
    pub fn n_nonzero_groups(&self) -> usize {
        self.blocks.len() - 1
    }
}

impl PartialOrd for LevelPartition {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Lexicographic order of the canonical label vectors.
impl Ord for LevelPartition {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.labels().cmp(&other.labels())
    }
}

/// Canonical labels of the partition implied by one allocation draw, with the
/// baseline prepended in component 0.
fn draw_labels(allocations: &[u32], out: &mut Vec<u32>) {
    out.clear();
    let mut map: HashMap<u32, u32> = HashMap::with_capacity(allocations.len() + 1);
    map.insert(0, 0);
    out.push(0);
    for &s in allocations {
        let next = map.len() as u32;
        out.push(*map.entry(s).or_insert(next));
    }
}

pub fn draw_partition(covariate: &str, allocations: &[u32]) -> LevelPartition {
    let mut labels = Vec::new();
    draw_labels(allocations, &mut labels);
    LevelPartition::from_labels(covariate, &labels)
}

/// Pairwise co-clustering tallies over allocation draws.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoclusterAccumulator {
    pub covariate: String,
    n: usize,
    counts: Vec<u64>,
    draws: u64,
}

impl CoclusterAccumulator {
    /// Accumulator for a covariate with `n_effects` level effects.
    pub fn new(covariate: impl Into<String>, n_effects: usize) -> Self {
        let n = n_effects + 1;
        CoclusterAccumulator {
            covariate: covariate.into(),
            n,
            counts: vec![0; n * n],
            draws: 0,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.n
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn count(&self, g: usize, h: usize) -> u64 {
        self.counts[g * self.n + h]
    }

    pub fn push(&mut self, allocations: &[u32]) {
        assert_eq!(allocations.len() + 1, self.n, "allocation vector length");
        let n = self.n;
        let comp = |e: usize| if e == 0 { 0 } else { allocations[e - 1] };
        for g in 0..n {
            let sg = comp(g);
            self.counts[g * n + g] += 1;
            for h in g + 1..n {
                if comp(h) == sg {
                    self.counts[g * n + h] += 1;
                    self.counts[h * n + g] += 1;
                }
            }
        }
        self.draws += 1;
    }

    pub fn similarity(&self) -> Result<SimilarityMatrix> {
        if self.draws == 0 {
            return Err(Error::EmptyTrace);
        }
        let d = self.draws as f64;
        Ok(SimilarityMatrix(DMatrix::from_fn(self.n, self.n, |g, h| {
            self.count(g, h) as f64 / d
        })))
    }
}

pub fn accumulate_cocluster(trace: &AllocationTrace) -> Result<CoclusterAccumulator> {
    if trace.n_draws() == 0 {
        return Err(Error::EmptyTrace);
    }
    let mut acc = CoclusterAccumulator::new(trace.covariate.clone(), trace.n_effects);
    for draw in trace.iter() {
        acc.push(draw);
    }
    Ok(acc)
}

/// Posterior co-clustering probabilities `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(DMatrix<f64>);

impl SimilarityMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        check_square_symmetric(&values)?;
        let n = values.nrows();
        for g in 0..n {
            if (values[(g, g)] - 1.0).abs() > 1e-12 {
                return Err(Error::DimensionMismatch("similarity diagonal must be 1".into()));
            }
        }
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::DimensionMismatch("similarities must lie in [0, 1]".into()));
        }
        Ok(SimilarityMatrix(values))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn dissimilarity(&self) -> DissimilarityMatrix {
        DissimilarityMatrix(self.0.map(|c| 1.0 - c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix(DMatrix<f64>);

impl DissimilarityMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        check_square_symmetric(&values)?;
        if values.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::DimensionMismatch("dissimilarities must be nonnegative".into()));
        }
        if (0..values.nrows()).any(|g| values[(g, g)] != 0.0) {
            return Err(Error::DimensionMismatch("dissimilarity diagonal must be 0".into()));
        }
        Ok(DissimilarityMatrix(values))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

fn check_square_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch(format!("matrix is {}x{}", n, m.ncols())));
    }
    for i in 0..n {
        for j in i + 1..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                return Err(Error::DimensionMismatch(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Mode of the partitions visited during sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MostFrequent {
    pub partition: LevelPartition,
    pub frequency: usize,
    pub draws: usize,
    /// Other partitions visited exactly as often; the reported one is the
    /// smallest in canonical order.
    pub tied: Vec<LevelPartition>,
}

pub fn most_frequent_partition(trace: &AllocationTrace) -> Result<MostFrequent> {
    if trace.n_draws() == 0 {
        return Err(Error::EmptyTrace);
    }
    let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(trace.n_effects + 1);
    for draw in trace.iter() {
        draw_labels(draw, &mut labels);
        match counts.get_mut(&labels) {
            Some(c) => *c += 1,
            None => {
                counts.insert(labels.clone(), 1);
            }
        }
    }
    let frequency = *counts.values().max().expect("non-empty trace");
    let mut best: Vec<Vec<u32>> = counts
        .into_iter()
        .filter(|(_, c)| *c == frequency)
        .map(|(l, _)| l)
        .collect();
    best.sort_unstable();
    let mut parts = best.iter().map(|l| LevelPartition::from_labels(trace.covariate.clone(), l));
    let partition = parts.next().expect("at least one mode");
    Ok(MostFrequent {
        partition,
        frequency,
        draws: trace.n_draws(),
        tied: parts.collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamResult {
    /// Object index of each cluster's medoid.
    pub medoids: Vec<usize>,
    /// Cluster (position in `medoids`) of each object.
    pub assignment: Vec<usize>,
    pub cost: f64,
    pub build_cost: f64,
}

fn assign(d: &DissimilarityMatrix, medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let assignment = (0..d.n())
        .map(|i| {
            if let Some(c) = medoids.iter().position(|&m| m == i) {
                return c;
            }
            let mut best = 0;
            for c in 1..medoids.len() {
                if d.get(i, medoids[c]) < d.get(i, medoids[best]) {
                    best = c;
                }
            }
            cost += d.get(i, medoids[best]);
            best
        })
        .collect();
    (assignment, cost)
}

fn total_cost(d: &DissimilarityMatrix, medoids: &[usize]) -> f64 {
    (0..d.n())
        .map(|i| medoids.iter().map(|&m| d.get(i, m)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Partitioning around medoids: greedy BUILD, then SWAP until no exchange of
/// a medoid with a non-medoid strictly lowers the total dissimilarity.
pub fn pam(d: &DissimilarityMatrix, k: usize) -> Result<PamResult> {
    let n = d.n();
    if k < 1 || k > n {
        return Err(Error::InvalidClusterCount { k, n });
    }
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut is_medoid = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    while medoids.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !is_medoid[i]) {
            let cost: f64 = (0..n).map(|j| nearest[j].min(d.get(i, j))).sum();
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((i, cost));
            }
        }
        let (i, _) = best.expect("k <= n leaves a candidate");
        medoids.push(i);
        is_medoid[i] = true;
        for (j, nj) in nearest.iter_mut().enumerate() {
            *nj = nj.min(d.get(i, j));
        }
    }
    let build_cost = total_cost(d, &medoids);
    let tol = 1e-12 * (1.0 + build_cost);
    // distance of every object to its nearest and second-nearest medoid
    let mut near = vec![(0usize, 0.0f64, 0.0f64); n];
    loop {
        for (j, nj) in near.iter_mut().enumerate() {
            let (mut slot, mut first, mut second) = (0, f64::INFINITY, f64::INFINITY);
            for (s, &m) in medoids.iter().enumerate() {
                let v = d.get(j, m);
                if v < first {
                    second = first;
                    first = v;
                    slot = s;
                } else if v < second {
                    second = v;
                }
            }
            *nj = (slot, first, second);
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for slot in 0..k {
            for o in (0..n).filter(|&o| !is_medoid[o]) {
                let delta: f64 = near
                    .iter()
                    .enumerate()
                    .map(|(j, &(s, first, second))| {
                        let keep = if s == slot { second } else { first };
                        keep.min(d.get(j, o)) - first
                    })
                    .sum();
                if delta < -tol && best.is_none_or(|(_, _, b)| delta < b) {
                    best = Some((slot, o, delta));
                }
            }
        }
        match best {
            Some((slot, o, _)) => {
                is_medoid[medoids[slot]] = false;
                is_medoid[o] = true;
                medoids[slot] = o;
            }
            None => break,
        }
    }
    let (assignment, cost) = assign(d, &medoids);
    Ok(PamResult {
        medoids,
        assignment,
        cost,
        build_cost,
    })
}

/// Silhouette width of every object. Objects in singleton clusters get 0, as
/// do objects with `a = b = 0`.
pub fn silhouette_values(d: &DissimilarityMatrix, assignment: &[usize]) -> Result<Vec<f64>> {
    let n = d.n();
    if assignment.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} objects",
            assignment.len()
        )));
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut size = vec![0usize; k];
    for &a in assignment {
        size[a] += 1;
    }
    let occupied = size.iter().filter(|&&s| s > 0).count();
    if occupied < 2 {
        return Err(Error::SingleCluster);
    }
    let mut sums = vec![0.0; k];
    Ok((0..n)
        .map(|i| {
            let own = assignment[i];
            if size[own] == 1 {
                return 0.0;
            }
            sums.iter_mut().for_each(|s| *s = 0.0);
            for j in 0..n {
                sums[assignment[j]] += d.get(i, j);
            }
            let a = sums[own] / (size[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && size[c] > 0)
                .map(|c| sums[c] / size[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect())
}

/// Average silhouette width.
pub fn silhouette(d: &DissimilarityMatrix, assignment: &[usize]) -> Result<f64> {
    let s = silhouette_values(d, assignment)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamSelection {
    pub partition: LevelPartition,
    pub k: usize,
    pub silhouette: f64,
    /// `(k, average silhouette)` for every cluster count tried.
    pub silhouettes: Vec<(usize, f64)>,
    /// No cluster count achieved a positive silhouette; the covariate may
    /// have no effect at all, which PAM cannot express.
    pub one_cluster_suspected: bool,
}

/// Default largest cluster count for a covariate with `n_effects` effects.
pub fn default_k_max(n_effects: usize) -> usize {
    (n_effects + 1).min(DEFAULT_K_CAP)
}

/// Runs PAM on `D = 1 - C` for `k = 2..=k_max` and keeps the clustering with
/// the largest average silhouette (the smallest `k` on ties).
pub fn select_by_pam(covariate: &str, c: &SimilarityMatrix, k_max: Option<usize>) -> Result<PamSelection> {
    let n = c.n();
    if n < 2 {
        return Err(Error::InvalidClusterCount { k: 2, n });
    }
    let k_max = k_max.unwrap_or_else(|| default_k_max(n - 1));
    if k_max < 2 || k_max > n {
        return Err(Error::InvalidClusterCount { k: k_max, n });
    }
    let d = c.dissimilarity();
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    let mut silhouettes = Vec::with_capacity(k_max - 1);
    for k in 2..=k_max {
        let fit = pam(&d, k)?;
        let s = silhouette(&d, &fit.assignment)?;
        silhouettes.push((k, s));
        if best.as_ref().is_none_or(|(_, b, _)| s > *b) {
            best = Some((k, s, fit.assignment));
        }
    }
    let (k, s, assignment) = best.expect("k_max >= 2");
    Ok(PamSelection {
        partition: LevelPartition::from_labels(covariate, &assignment),
        k,
        silhouette: s,
        silhouettes,
        one_cluster_suspected: s <= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks(p: &LevelPartition) -> Vec<Vec<usize>> {
        p.blocks().to_vec()
    }

    #[test]
    fn draw_partition_examples() {
        assert_eq!(blocks(&draw_partition("a", &[0, 0, 1])), vec![vec![0, 1, 2], vec![3]]);
        assert_eq!(blocks(&draw_partition("a", &[1, 2, 3])), vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(draw_partition("a", &[0, 0, 0]).n_blocks(), 1);
        assert_eq!(draw_partition("a", &[3, 1, 3]), draw_partition("a", &[2, 4, 2]));
    }

    #[test]
    fn from_blocks_canonicalises() {
        let p = LevelPartition::from_blocks("a", vec![vec![3, 1], vec![2, 0]]).unwrap();
        assert_eq!(blocks(&p), vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(p.labels(), vec![0, 1, 0, 1]);
        assert_eq!(p.zero_block(), [0, 2]);
        assert!(LevelPartition::from_blocks("a", vec![vec![0, 1], vec![1]]).is_err());
        assert!(LevelPartition::from_blocks("a", vec![vec![0], vec![]]).is_err());
    }

    fn trace(draws: &[&[u32]]) -> AllocationTrace {
        let mut t = AllocationTrace::new("a", draws[0].len());
        for d in draws {
            t.push(d);
        }
        t
    }

    #[test]
    fn cocluster_counts() {
        let acc = accumulate_cocluster(&trace(&[&[0, 1, 1], &[2, 2, 1]])).unwrap();
        let c = acc.similarity().unwrap();
        let m = c.matrix();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 1)], 0.5);
        assert_eq!(m[(2, 3)], 0.5);
        assert_eq!(m[(1, 2)], 0.5);
        assert_eq!(m[(1, 3)], 0.0);
        assert!(SimilarityMatrix::new(m.clone()).is_ok());
        assert!(accumulate_cocluster(&AllocationTrace::new("a", 3)).is_err());
    }

    #[test]
    fn most_frequent_mode_and_ties() {
        let t = trace(&[&[1, 1], &[1, 1], &[1, 2]]);
        let mf = most_frequent_partition(&t).unwrap();
        assert_eq!(mf.frequency, 2);
        assert_eq!(blocks(&mf.partition), vec![vec![0], vec![1, 2]]);
        assert!(mf.tied.is_empty());

        // {0},{1},{2} has labels 012, {0,1,2} has 000: the latter is smaller
        let t = trace(&[&[1, 2], &[0, 0]]);
        let mf = most_frequent_partition(&t).unwrap();
        assert_eq!(mf.partition.n_blocks(), 1);
        assert_eq!(mf.tied.len(), 1);
    }

    fn dmat(n: usize, f: impl Fn(usize, usize) -> f64) -> DissimilarityMatrix {
        DissimilarityMatrix::new(DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { f(i.min(j), i.max(j)) }))
            .unwrap()
    }

    #[test]
    fn pam_separable_blocks() {
        let d = dmat(4, |i, j| if (i < 2) == (j < 2) { 0.0 } else { 1.0 });
        let fit = pam(&d, 2).unwrap();
        assert_eq!(fit.cost, 0.0);
        assert_eq!(LevelPartition::from_labels("a", &fit.assignment).labels(), vec![0, 0, 1, 1]);
        let all = pam(&d, 4).unwrap();
        assert_eq!(all.cost, 0.0);
        assert!(pam(&d, 5).is_err());
    }

    #[test]
    fn silhouette_examples() {
        let d = dmat(4, |i, j| if (i < 2) == (j < 2) { 0.0 } else { 1.0 });
        assert_eq!(silhouette(&d, &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!(matches!(silhouette(&d, &[0, 0, 0, 0]), Err(Error::SingleCluster)));

        // points on a line at 0, 1, 4, 6 clustered {0,1} {4,6}
        let x = [0.0f64, 1.0, 4.0, 6.0];
        let d = dmat(4, |i, j| (x[i] - x[j]).abs());
        let s = silhouette_values(&d, &[0, 0, 1, 1]).unwrap();
        // i=0: a=1, b=(4+6)/2=5 -> 0.8; i=1: a=1, b=4 -> 0.75
        // i=2: a=2, b=(4+3)/2=3.5 -> 1.5/3.5; i=3: a=2, b=5.5 -> 3.5/5.5
        let expected = [0.8, 0.75, 1.5 / 3.5, 3.5 / 5.5];
        for (g, e) in s.iter().zip(expected) {
            assert!((g - e).abs() < 1e-15);
        }
        // singleton gets zero
        let s = silhouette_values(&d, &[0, 0, 0, 1]).unwrap();
        assert_eq!(s[3], 0.0);
    }

    #[test]
    fn select_two_blocks() {
        let c = SimilarityMatrix::new(DMatrix::from_fn(5, 5, |i, j| if (i < 2) == (j < 2) { 1.0 } else { 0.0 })).unwrap();
        let sel = select_by_pam("a", &c, None).unwrap();
        assert_eq!(sel.k, 2);
        assert_eq!(blocks(&sel.partition), vec![vec![0, 1], vec![2, 3, 4]]);
        assert!(!sel.one_cluster_suspected);
        assert_eq!(sel.silhouettes.len(), 4);
    }

    #[test]
    fn select_all_ones_is_flagged() {
        let c = SimilarityMatrix::new(DMatrix::from_element(4, 4, 1.0)).unwrap();
        let sel = select_by_pam("a", &c, None).unwrap();
        assert!(sel.one_cluster_suspected);
        assert!(sel.silhouette <= 0.0);
    }

    #[test]
    fn k_max_bounds() {
        assert_eq!(default_k_max(3), 4);
        assert_eq!(default_k_max(99), 30);
        let c = SimilarityMatrix::new(DMatrix::from_element(3, 3, 1.0)).unwrap();
        assert!(select_by_pam("a", &c, Some(4)).is_err());
        assert!(select_by_pam("a", &c, Some(1)).is_err());
    }
}
