//! Checks shared by the property tests and the acceptance runner. Each
//! returns a description of the first violation.

#![allow(dead_code)]

use effectfuse::gibbs::AllocationTrace;
use effectfuse::metrics::{adjusted_rand, error_rate, pair_counts};
use effectfuse::partition::{
    accumulate_cocluster, draw_partition, most_frequent_partition, pam, silhouette, silhouette_values,
    DissimilarityMatrix,
};
use effectfuse::{Error, LevelPartition};
use nalgebra::DMatrix;

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn ari_identities(a: &[usize], b: &[usize]) -> Check {
    let (pa, pb) = (LevelPartition::from_labels("x", a), LevelPartition::from_labels("x", b));
    let self_ari = adjusted_rand(&pa, &pa).map_err(|e| e.to_string())?;
    ensure(self_ari == 1.0, || format!("ARI(a, a) = {self_ari} for {a:?}"))?;
    let ab = adjusted_rand(&pa, &pb).map_err(|e| e.to_string())?;
    let ba = adjusted_rand(&pb, &pa).map_err(|e| e.to_string())?;
    ensure((ab - ba).abs() < 1e-12, || format!("ARI not symmetric: {ab} vs {ba}"))?;
    ensure(ab <= 1.0 + 1e-12, || format!("ARI {ab} above 1"))?;
    // renaming the labels of one side changes nothing
    let renamed: Vec<usize> = b.iter().map(|&l| 1000 - l).collect();
    let ar = adjusted_rand(&pa, &LevelPartition::from_labels("x", &renamed)).map_err(|e| e.to_string())?;
    ensure((ar - ab).abs() < 1e-12, || "ARI depends on label names".into())?;
    let err = error_rate(&pa, &pb).map_err(|e| e.to_string())?;
    ensure((0.0..=1.0).contains(&err), || format!("err {err} outside [0, 1]"))?;
    ensure((err == 0.0) == (pa == pb), || format!("err = {err} but equality is {}", pa == pb))
}

pub fn pair_conservation(a: &[usize], b: &[usize]) -> Check {
    let (pa, pb) = (LevelPartition::from_labels("x", a), LevelPartition::from_labels("x", b));
    let c = pair_counts(&pa, &pb).map_err(|e| e.to_string())?;
    let n = a.len() as u64;
    let total = c.tp + c.fp + c.tn + c.fn_;
    ensure(total == n * n.saturating_sub(1) / 2, || format!("{c:?} sums to {total} for n = {n}"))?;
    for v in [c.fpr(), c.fnr()].into_iter().flatten() {
        ensure((0.0..=1.0).contains(&v), || format!("rate {v} outside [0, 1]"))?;
    }
    Ok(())
}

/// Symmetric matrix with zero diagonal from the strict upper triangle.
pub fn dissimilarity_from_upper(n: usize, upper: &[f64]) -> DissimilarityMatrix {
    let mut m = DMatrix::zeros(n, n);
    let mut it = upper.iter();
    for i in 0..n {
        for j in i + 1..n {
            let v = *it.next().expect("enough entries");
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    DissimilarityMatrix::new(m).expect("valid dissimilarity")
}

pub fn silhouette_bounds(d: &DissimilarityMatrix, assignment: &[usize]) -> Check {
    let k = assignment.iter().collect::<std::collections::HashSet<_>>().len();
    if k < 2 {
        return ensure(matches!(silhouette(d, assignment), Err(Error::SingleCluster)), || {
            "single cluster did not error".into()
        });
    }
    let s = silhouette_values(d, assignment).map_err(|e| e.to_string())?;
    ensure(s.iter().all(|v| (-1.0..=1.0).contains(v)), || format!("silhouette values {s:?}"))?;
    let avg = silhouette(d, assignment).map_err(|e| e.to_string())?;
    ensure((-1.0..=1.0).contains(&avg), || format!("average silhouette {avg}"))
}

/// Minimal total dissimilarity over all `k`-subsets of medoids.
pub fn brute_force_cost(d: &DissimilarityMatrix, k: usize) -> f64 {
    fn rec(d: &DissimilarityMatrix, k: usize, start: usize, chosen: &mut Vec<usize>, best: &mut f64) {
        if chosen.len() == k {
            let cost: f64 = (0..d.n())
                .map(|i| chosen.iter().map(|&m| d.get(i, m)).fold(f64::INFINITY, f64::min))
                .sum();
            *best = best.min(cost);
            return;
        }
        for m in start..d.n() {
            chosen.push(m);
            rec(d, k, m + 1, chosen, best);
            chosen.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(d, k, 0, &mut Vec::new(), &mut best);
    best
}

/// Dissimilarities of objects in `labels` groups: `within[i]` in `[0, 0.1]`
/// inside a group and `across` in `[0.9, 1]` between groups, both read from
/// `noise` in `[0, 1]`.
pub fn separated_instance(labels: &[usize], noise: &[f64]) -> DissimilarityMatrix {
    let n = labels.len();
    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    let mut it = noise.iter().cycle();
    for i in 0..n {
        for j in i + 1..n {
            let u = *it.next().expect("noise is non-empty");
            upper.push(if labels[i] == labels[j] { 0.1 * u } else { 0.9 + 0.1 * u });
        }
    }
    dissimilarity_from_upper(n, &upper)
}

pub fn pam_matches_brute_force(d: &DissimilarityMatrix, k: usize) -> Check {
    let fit = pam(d, k).map_err(|e| e.to_string())?;
    let best = brute_force_cost(d, k);
    ensure((fit.cost - best).abs() <= 1e-9 * (1.0 + best), || {
        format!("pam cost {} vs optimum {best} (n = {}, k = {k})", fit.cost, d.n())
    })?;
    ensure(fit.cost <= fit.build_cost + 1e-12, || "SWAP increased the cost".into())?;
    ensure(fit.medoids.len() == k, || "wrong number of medoids".into())
}

fn trace_of(draws: &[Vec<u32>]) -> AllocationTrace {
    let mut t = AllocationTrace::new("x", draws[0].len());
    for d in draws {
        t.push(d);
    }
    t
}

pub fn cocluster_shape(draws: &[Vec<u32>]) -> Check {
    let sim = accumulate_cocluster(&trace_of(draws)).map_err(|e| e.to_string())?.similarity().map_err(|e| e.to_string())?;
    let m = sim.matrix();
    let n = m.nrows();
    ensure(n == draws[0].len() + 1, || "matrix does not include the baseline".into())?;
    for g in 0..n {
        ensure(m[(g, g)] == 1.0, || format!("diagonal {g} is {}", m[(g, g)]))?;
        for h in 0..n {
            ensure(m[(g, h)] == m[(h, g)], || format!("asymmetric at ({g}, {h})"))?;
            ensure((0.0..=1.0).contains(&m[(g, h)]), || format!("entry {} out of range", m[(g, h)]))?;
        }
    }
    Ok(())
}

/// Applies `perm` (a permutation of `1..=L`, component 0 fixed) to every
/// draw and checks that nothing label-invariant moves.
pub fn relabeling_invariance(draws: &[Vec<u32>], perm: &[u32]) -> Check {
    let relabel = |d: &Vec<u32>| -> Vec<u32> { d.iter().map(|&s| if s == 0 { 0 } else { perm[s as usize - 1] }).collect() };
    let moved: Vec<Vec<u32>> = draws.iter().map(relabel).collect();
    for (a, b) in draws.iter().zip(&moved) {
        ensure(draw_partition("x", a) == draw_partition("x", b), || format!("{a:?} and {b:?} differ"))?;
    }
    let (ta, tb) = (trace_of(draws), trace_of(&moved));
    let (ma, mb) = (most_frequent_partition(&ta).unwrap(), most_frequent_partition(&tb).unwrap());
    ensure(ma == mb, || "most frequent partition changed".into())?;
    let (ca, cb) = (accumulate_cocluster(&ta).unwrap(), accumulate_cocluster(&tb).unwrap());
    ensure(ca == cb, || "co-clustering counts changed".into())
}
