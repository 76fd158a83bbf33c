//! Metrics and exploration over the partition space: the split/merge edit
//! distance, random partitions, neighbor enumeration and random walks.
//!
//! The edit distance between partitions `P` and `Q` of the same ground set is
//! the minimal number of operations turning one into the other, where an
//! operation splits a block in two or merges two blocks. It has the closed
//! form `|P| + |Q| - 2 C(P, Q)`, with `C` the number of connected components
//! of the bipartite graph joining blocks of `P` and `Q` that intersect: each
//! operation changes the block count by one and cannot change `C` by more
//! than it must, and merging every component then splitting to `Q` attains
//! the bound. The closed form is validated against a breadth-first-search
//! oracle over the full operation graph in the tests.
//!
//! Distances are computed over the unconstrained operation graph
//! (intermediate partitions may have blocks larger than `k`); walks, by
//! contrast, are constrained to stay inside `Part_d^k`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{FeatureSubset, Partition};
use crate::{Error, Result};

/// How a random-walk step picks its neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborSampling {
    /// Uniform over the full neighbor list (every reachable partition equally
    /// likely).
    #[default]
    Uniform,
    /// Pick an operation type first (merge or split, uniformly among the
    /// available types), then uniformly among that type's realizations. This
    /// biases toward the rarer type but mirrors the verbal protocol of
    /// choosing an operation before choosing blocks.
    TypeFirst,
}

/// A recorded random walk: `steps[0]` is the starting partition and every
/// consecutive pair is at edit distance exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkTrace {
    pub steps: Vec<Partition>,
    pub seed: u64,
    pub k: usize,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra] = rb;
        }
    }
}

/// Minimal number of splits/merges transforming `p` into `q`.
pub fn edit_distance(p: &Partition, q: &Partition) -> Result<usize> {
    let d = p.ground_size();
    if q.ground_size() != d {
        return Err(Error::MismatchedGroundSets);
    }
    // block index per element, for both partitions
    let mut block_p = vec![0usize; d];
    let mut block_q = vec![0usize; d];
    for (bi, b) in p.blocks().iter().enumerate() {
        for &i in b.indices() {
            block_p[i] = bi;
        }
    }
    for (bi, b) in q.blocks().iter().enumerate() {
        for &i in b.indices() {
            block_q[i] = bi;
        }
    }
    let np = p.n_blocks();
    let mut uf = UnionFind::new(np + q.n_blocks());
    for i in 0..d {
        uf.union(block_p[i], np + block_q[i]);
    }
    let mut roots: Vec<usize> = (0..np + q.n_blocks()).map(|x| uf.find(x)).collect();
    roots.sort_unstable();
    roots.dedup();
    let components = roots.len();
    Ok(np + q.n_blocks() - 2 * components)
}

/// Edit distance from `reference` to each candidate, preserving input order.
pub fn edit_profile(
    reference: &Partition,
    candidates: &[Partition],
) -> Result<Vec<(Partition, usize)>> {
    candidates
        .iter()
        .map(|c| Ok((c.clone(), edit_distance(reference, c)?)))
        .collect()
}

/// Draws a random element of `Part_d^k`: a seeded uniform permutation of the
/// features is cut into consecutive groups whose sizes are drawn uniformly in
/// `{1,..,k}` (the final group truncated to the remainder). The permutation
/// is shuffled first, then the sizes are drawn, all from ChaCha8 keyed by
/// `seed`.
pub fn random_partition(d: usize, k: usize, seed: u64) -> Result<Partition> {
    if d == 0 || k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= d, got d={d}, k={k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut rng);
    let mut blocks = Vec::new();
    let mut pos = 0;
    while pos < d {
        let size = rng.random_range(1..=k).min(d - pos);
        blocks.push(FeatureSubset::new(perm[pos..pos + size].to_vec())?);
        pos += size;
    }
    Partition::new(blocks)
}

fn merges(p: &Partition, k: usize) -> Vec<Partition> {
    let blocks = p.blocks();
    let mut out = Vec::new();
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            if blocks[i].len() + blocks[j].len() > k {
                continue;
            }
            let mut merged: Vec<usize> = blocks[i].indices().to_vec();
            merged.extend_from_slice(blocks[j].indices());
            let mut next: Vec<FeatureSubset> = Vec::with_capacity(blocks.len() - 1);
            for (bi, b) in blocks.iter().enumerate() {
                if bi != i && bi != j {
                    next.push(b.clone());
                }
            }
            next.push(FeatureSubset::new(merged).expect("merged block is valid"));
            out.push(Partition::new(next).expect("merge keeps a partition"));
        }
    }
    out
}

fn splits(p: &Partition) -> Vec<Partition> {
    let blocks = p.blocks();
    let mut out = Vec::new();
    for (bi, b) in blocks.iter().enumerate() {
        let s = b.len();
        if s < 2 {
            continue;
        }
        let ix = b.indices();
        // fix ix[0] in the first part; the 2^(s-1) - 1 strict subsets of the
        // rest give every unordered bipartition once
        for t in 0..((1u64 << (s - 1)) - 1) {
            let mut left = vec![ix[0]];
            let mut right = Vec::new();
            for (pos, &elem) in ix[1..].iter().enumerate() {
                if t >> pos & 1 == 1 {
                    left.push(elem);
                } else {
                    right.push(elem);
                }
            }
            let mut next: Vec<FeatureSubset> = Vec::with_capacity(blocks.len() + 1);
            for (ci, c) in blocks.iter().enumerate() {
                if ci != bi {
                    next.push(c.clone());
                }
            }
            next.push(FeatureSubset::new(left).expect("nonempty"));
            next.push(FeatureSubset::new(right).expect("nonempty"));
            out.push(Partition::new(next).expect("split keeps a partition"));
        }
    }
    out
}

/// All partitions of `Part_d^k` at edit distance exactly one from `p`: every
/// merge of two blocks with combined size at most `k`, then every unordered
/// bipartition of each block of size >= 2. Never contains `p` itself.
pub fn walk_neighbors(p: &Partition, k: usize) -> Vec<Partition> {
    let mut out = merges(p, k);
    out.extend(splits(p));
    out
}

/// Random walk of `length` steps from `p0`, staying inside `Part_d^k`, each
/// step uniform over the allowed moves per `sampling`. Deterministic in
/// `seed`.
pub fn random_walk(
    p0: &Partition,
    length: usize,
    k: usize,
    seed: u64,
    sampling: NeighborSampling,
) -> Result<WalkTrace> {
    if p0.max_block_size() > k {
        return Err(Error::InvalidArgument(format!(
            "starting partition has a block larger than k={k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(length + 1);
    steps.push(p0.clone());
    let mut current = p0.clone();
    for _ in 0..length {
        let next = match sampling {
            NeighborSampling::Uniform => {
                let neighbors = walk_neighbors(&current, k);
                if neighbors.is_empty() {
                    return Err(Error::InvalidArgument(
                        "partition has no neighbors in Part_d^k".into(),
                    ));
                }
                let idx = rng.random_range(0..neighbors.len());
                neighbors[idx].clone()
            }
            NeighborSampling::TypeFirst => {
                let merge_moves = merges(&current, k);
                let split_moves = splits(&current);
                let pools: Vec<&Vec<Partition>> = [&merge_moves, &split_moves]
                    .into_iter()
                    .filter(|v| !v.is_empty())
                    .collect();
                if pools.is_empty() {
                    return Err(Error::InvalidArgument(
                        "partition has no neighbors in Part_d^k".into(),
                    ));
                }
                let pool = pools[rng.random_range(0..pools.len())];
                pool[rng.random_range(0..pool.len())].clone()
            }
        };
        steps.push(next.clone());
        current = next;
    }
    Ok(WalkTrace { steps, seed, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::enumerate_partitions;
    use std::collections::{HashMap, HashSet, VecDeque};

    fn part(blocks: Vec<Vec<usize>>) -> Partition {
        Partition::try_from(blocks).unwrap()
    }

    #[test]
    fn distance_basics() {
        let p = part(vec![vec![0], vec![1]]);
        let q = part(vec![vec![0, 1]]);
        assert_eq!(edit_distance(&p, &p).unwrap(), 0);
        assert_eq!(edit_distance(&p, &q).unwrap(), 1);
        assert_eq!(edit_distance(&q, &p).unwrap(), 1);

        let a = part(vec![vec![0, 1], vec![2, 3]]);
        let b = part(vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(edit_distance(&a, &b).unwrap(), 2);
    }

    #[test]
    fn distance_rejects_mismatched_ground_sets() {
        let p = part(vec![vec![0, 1]]);
        let q = part(vec![vec![0, 1], vec![2]]);
        assert!(matches!(
            edit_distance(&p, &q),
            Err(Error::MismatchedGroundSets)
        ));
    }

    /// BFS over the unconstrained split/merge graph.
    fn bfs_distances(d: usize) -> HashMap<(Partition, Partition), usize> {
        let all: Vec<Partition> = enumerate_partitions(d, d).unwrap().collect();
        let mut out = HashMap::new();
        for src in &all {
            let mut dist: HashMap<Partition, usize> = HashMap::new();
            dist.insert(src.clone(), 0);
            let mut queue = VecDeque::from([src.clone()]);
            while let Some(p) = queue.pop_front() {
                let dp = dist[&p];
                for n in walk_neighbors(&p, d) {
                    if !dist.contains_key(&n) {
                        dist.insert(n.clone(), dp + 1);
                        queue.push_back(n);
                    }
                }
            }
            for (q, v) in dist {
                out.insert((src.clone(), q), v);
            }
        }
        out
    }

    #[test]
    fn closed_form_matches_bfs_oracle_up_to_d5() {
        for d in 2..=5 {
            let oracle = bfs_distances(d);
            let all: Vec<Partition> = enumerate_partitions(d, d).unwrap().collect();
            for p in &all {
                for q in &all {
                    let formula = edit_distance(p, q).unwrap();
                    let shortest = oracle[&(p.clone(), q.clone())];
                    assert_eq!(formula, shortest, "d={d} p={p} q={q}");
                }
            }
        }
    }

    #[test]
    fn metric_axioms_on_d4() {
        let all: Vec<Partition> = enumerate_partitions(4, 4).unwrap().collect();
        for p in &all {
            for q in &all {
                let pq = edit_distance(p, q).unwrap();
                assert_eq!(pq, edit_distance(q, p).unwrap());
                assert_eq!(pq == 0, p == q);
                for r in &all {
                    let pr = edit_distance(p, r).unwrap();
                    let rq = edit_distance(r, q).unwrap();
                    assert!(pq <= pr + rq, "triangle violated at {p} {r} {q}");
                }
            }
        }
    }

    #[test]
    fn random_partition_with_k1_is_singletons() {
        for seed in 0..20 {
            let p = random_partition(5, 1, seed).unwrap();
            assert_eq!(p, Partition::singletons(5).unwrap());
        }
    }

    #[test]
    fn random_partition_stays_in_part_dk() {
        let mut seen_sizes = HashSet::new();
        for seed in 0..10_000 {
            let p = random_partition(6, 3, seed).unwrap();
            assert_eq!(p.ground_size(), 6);
            assert!(p.max_block_size() <= 3);
            let mut sizes: Vec<usize> = p.blocks().iter().map(|b| b.len()).collect();
            sizes.sort_unstable();
            seen_sizes.insert(sizes);
        }
        // the generator reaches a spread of block-size profiles
        assert!(seen_sizes.len() >= 5, "only {seen_sizes:?}");
    }

    #[test]
    fn random_partition_single_block_is_reachable() {
        let mut found = false;
        for seed in 0..4000 {
            if random_partition(4, 4, seed).unwrap() == Partition::single_block(4).unwrap() {
                found = true;
                break;
            }
        }
        assert!(found, "single-block draw never appeared at k = d");
    }

    /// Independent re-implementation of the documented drawing process; the
    /// contract (shuffle, then uniform sizes in 1..=k, truncated tail) must
    /// reproduce the library output seed for seed.
    #[test]
    fn random_partition_matches_documented_process() {
        for seed in [0u64, 3, 11, 99] {
            let (d, k) = (7, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(&mut rng);
            let mut blocks = Vec::new();
            let mut pos = 0;
            while pos < d {
                let size = rng.random_range(1..=k).min(d - pos);
                blocks.push(perm[pos..pos + size].to_vec());
                pos += size;
            }
            let expected = Partition::try_from(blocks).unwrap();
            assert_eq!(random_partition(d, k, seed).unwrap(), expected);
        }
    }

    #[test]
    fn neighbors_of_singletons_are_the_pair_merges() {
        let p = Partition::singletons(3).unwrap();
        let n = walk_neighbors(&p, 2);
        assert_eq!(n.len(), 3);
        let expected: HashSet<Partition> = [
            part(vec![vec![0, 1], vec![2]]),
            part(vec![vec![0, 2], vec![1]]),
            part(vec![vec![1, 2], vec![0]]),
        ]
        .into_iter()
        .collect();
        assert_eq!(n.into_iter().collect::<HashSet<_>>(), expected);
    }

    #[test]
    fn neighbors_of_single_block_are_the_bipartitions() {
        let p = Partition::single_block(3).unwrap();
        let n = walk_neighbors(&p, 3);
        assert_eq!(n.len(), 3); // 2^2 - 1
        let expected: HashSet<Partition> = [
            part(vec![vec![0], vec![1, 2]]),
            part(vec![vec![1], vec![0, 2]]),
            part(vec![vec![2], vec![0, 1]]),
        ]
        .into_iter()
        .collect();
        assert_eq!(n.into_iter().collect::<HashSet<_>>(), expected);
    }

    #[test]
    fn neighbor_sets_match_distance_filter() {
        for d in 2..=5 {
            for k in 1..=d {
                let all: Vec<Partition> = enumerate_partitions(d, k).unwrap().collect();
                for p in &all {
                    let got: HashSet<Partition> = walk_neighbors(p, k).into_iter().collect();
                    let want: HashSet<Partition> = all
                        .iter()
                        .filter(|q| edit_distance(p, q).unwrap() == 1)
                        .cloned()
                        .collect();
                    assert_eq!(got, want, "d={d} k={k} p={p}");
                    assert!(!got.contains(p));
                }
            }
        }
    }

    #[test]
    fn walk_of_length_zero_is_the_start() {
        let p = part(vec![vec![0, 1], vec![2]]);
        let t = random_walk(&p, 0, 2, 5, NeighborSampling::Uniform).unwrap();
        assert_eq!(t.steps, vec![p]);
    }

    #[test]
    fn walk_steps_have_unit_distance_and_stay_in_space() {
        for sampling in [NeighborSampling::Uniform, NeighborSampling::TypeFirst] {
            let p0 = random_partition(8, 3, 1).unwrap();
            let t = random_walk(&p0, 25, 3, 42, sampling).unwrap();
            assert_eq!(t.steps.len(), 26);
            for w in t.steps.windows(2) {
                assert_eq!(edit_distance(&w[0], &w[1]).unwrap(), 1);
                assert!(w[1].max_block_size() <= 3);
            }
        }
    }

    #[test]
    fn walk_is_deterministic() {
        let p0 = random_partition(6, 2, 3).unwrap();
        let a = random_walk(&p0, 15, 2, 7, NeighborSampling::Uniform).unwrap();
        let b = random_walk(&p0, 15, 2, 7, NeighborSampling::Uniform).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn walk_with_no_moves_errors() {
        let p = Partition::singletons(3).unwrap();
        assert!(random_walk(&p, 1, 1, 0, NeighborSampling::Uniform).is_err());
    }

    #[test]
    fn five_walks_of_length_forty_visit_two_hundred() {
        // 5 walks of length 40 starting at one partition: 200 visited steps
        let p0 = random_partition(13, 5, 99).unwrap();
        let mut visited = 0;
        for w in 0..5u64 {
            let t = random_walk(&p0, 40, 5, w, NeighborSampling::Uniform).unwrap();
            visited += t.steps.len() - 1;
        }
        assert_eq!(visited, 200);
    }

    #[test]
    fn profile_preserves_order_and_identity() {
        let r = part(vec![vec![0, 1], vec![2]]);
        let got = edit_profile(&r, &[r.clone()]).unwrap();
        assert_eq!(got, vec![(r.clone(), 0)]);

        let t = random_walk(&r, 12, 2, 4, NeighborSampling::Uniform).unwrap();
        let profile = edit_profile(&r, &t.steps).unwrap();
        // distances along a walk fluctuate, but by at most one per step
        for w in profile.windows(2) {
            let delta = w[1].1 as i64 - w[0].1 as i64;
            assert!(delta.abs() <= 1);
        }
        // and stay within the structural bound |P| + |Q| - 2
        let d = r.ground_size();
        for (_, dist) in &profile {
            assert!(*dist <= 2 * d - 2);
        }
    }
}
