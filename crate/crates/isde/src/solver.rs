//! Exact maximization of the partition objective `l_n(P) = sum_S l_n(S)`
//! over `Part_d^k` — a weighted exact-cover problem: pick one scored subset
//! per uncovered feature so that every feature is covered exactly once.
//!
//! Three routes:
//!
//! * [`solve_best`]: bitmask dynamic programming for d <= 22 (state = set of
//!   uncovered features; transition = the block containing the lowest
//!   uncovered feature), branch-and-bound above that. Both are exact.
//! * [`solve_kbest`] / [`solve_worst`]: branch-and-bound enumeration into a
//!   bounded best-K set, pruning against the current K-th incumbent.
//! * [`solve_bruteforce`]: exhaustive scan of the partition stream — the
//!   oracle the faster routes are validated against.
//!
//! Ties break toward the canonically smallest partition (block lists compared
//! lexicographically), except in the brute-force route, which keeps the first
//! maximum in enumeration order.

use std::time::{Duration, Instant};

use num_bigint::BigUint;

use crate::combinatorics::{count_partitions, RgsEnumerator, PARTITION_ENUM_GUARD};
use crate::data::{FeatureSubset, Partition};
use crate::scoring::{partition_score, SubsetScoreTable};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

/// One solved partition with its certified objective.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub partition: Partition,
    pub objective: f64,
    pub status: SolveStatus,
    pub nodes_explored: u64,
    pub wall_time: Duration,
}

/// Scores addressable by feature bitmask; dense below 23 features.
enum MaskScores {
    Dense(Vec<f64>),
    Sparse(std::collections::HashMap<u64, f64>),
}

impl MaskScores {
    fn get(&self, mask: u64) -> f64 {
        match self {
            MaskScores::Dense(v) => v[mask as usize],
            MaskScores::Sparse(m) => m[&mask],
        }
    }
}

struct ScoreIndex {
    d: usize,
    k: usize,
    scores: MaskScores,
    /// per feature: candidate blocks containing it, sorted by score descending
    /// (branching order), subset-lex ascending on ties
    by_score: Vec<Vec<(u64, f64)>>,
    /// per feature: (score/|S|, mask), sorted by ratio descending (bound scan)
    by_ratio: Vec<Vec<(f64, u64)>>,
    negated: bool,
}

impl ScoreIndex {
    /// `with_branch_lists` controls whether the per-feature candidate lists
    /// (used only by branch-and-bound) are materialized and sorted.
    fn build(table: &SubsetScoreTable, negate: bool, with_branch_lists: bool) -> Result<Self> {
        table.require_complete()?;
        let d = table.d();
        let k = table.k();
        if d > 64 {
            return Err(Error::InvalidArgument(format!(
                "solver supports at most 64 features, got {d}"
            )));
        }
        let sign = if negate { -1.0 } else { 1.0 };
        let mut scores = if d <= 22 {
            MaskScores::Dense(vec![f64::NAN; 1usize << d])
        } else {
            MaskScores::Sparse(std::collections::HashMap::with_capacity(table.len()))
        };
        let mut by_score: Vec<Vec<(u64, f64)>> =
            vec![Vec::new(); if with_branch_lists { d } else { 0 }];
        for (subset, entry) in table.iter() {
            if !entry.score.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite score for subset {subset}"
                )));
            }
            let mask = subset.mask();
            let s = sign * entry.score;
            match &mut scores {
                MaskScores::Dense(v) => v[mask as usize] = s,
                MaskScores::Sparse(m) => {
                    m.insert(mask, s);
                }
            }
            if with_branch_lists {
                for &j in subset.indices() {
                    by_score[j].push((mask, s));
                }
            }
        }
        for list in &mut by_score {
            list.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        }
        let by_ratio = by_score
            .iter()
            .map(|list| {
                let mut v: Vec<(f64, u64)> = list
                    .iter()
                    .map(|&(mask, s)| (s / mask.count_ones() as f64, mask))
                    .collect();
                v.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
                v
            })
            .collect();
        Ok(ScoreIndex {
            d,
            k,
            scores,
            by_score,
            by_ratio,
            negated: negate,
        })
    }

    fn full_mask(&self) -> u64 {
        if self.d == 64 {
            u64::MAX
        } else {
            (1u64 << self.d) - 1
        }
    }

    /// Upper bound on the objective of any partition of the uncovered set:
    /// each feature contributes at most its best amortized block score among
    /// blocks inside the uncovered set (every partition objective rewrites as
    /// a sum of score/|S| over the features).
    fn bound(&self, uncovered: u64) -> f64 {
        let mut total = 0.0;
        let mut u = uncovered;
        while u != 0 {
            let j = u.trailing_zeros() as usize;
            u &= u - 1;
            let best = self.by_ratio[j]
                .iter()
                .find(|&&(_, mask)| mask & !uncovered == 0)
                .expect("the singleton {j} is always a candidate");
            total += best.0;
        }
        total
    }
}

fn partition_from_masks(masks: &[u64]) -> Partition {
    Partition::new(
        masks
            .iter()
            .map(|&m| FeatureSubset::from_mask(m).expect("nonempty block mask"))
            .collect(),
    )
    .expect("solver blocks form a partition")
}

/// Exact DP over uncovered-feature bitmasks. Candidate blocks for the lowest
/// uncovered feature are visited in prefix-lexicographic element order, and
/// strict improvement keeps the first maximizer, so the reconstructed argmax
/// is the canonically smallest one.
struct DpSolver<'a> {
    index: &'a ScoreIndex,
    value: Vec<f64>,
    choice: Vec<u64>,
    nodes: u64,
}

impl<'a> DpSolver<'a> {
    fn new(index: &'a ScoreIndex) -> Self {
        let size = 1usize << index.d;
        DpSolver {
            index,
            value: vec![f64::NAN; size],
            choice: vec![0; size],
            nodes: 0,
        }
    }

    fn solve(&mut self, uncovered: u64) -> f64 {
        if uncovered == 0 {
            return 0.0;
        }
        let cached = self.value[uncovered as usize];
        if !cached.is_nan() {
            return cached;
        }
        self.nodes += 1;
        let e = uncovered.trailing_zeros() as usize;
        let mut rest = [0usize; 64];
        let mut rest_len = 0;
        let mut u = uncovered & !(1u64 << e);
        while u != 0 {
            rest[rest_len] = u.trailing_zeros() as usize;
            rest_len += 1;
            u &= u - 1;
        }

        let mut best = f64::NEG_INFINITY;
        let mut best_block = 0u64;
        // stack of chosen extension indices into `rest` (prefix-lex DFS)
        let mut stack = [0usize; 64];
        let mut depth = 0usize;
        let mut block = 1u64 << e;
        loop {
            let v = self.index.scores.get(block) + self.solve(uncovered & !block);
            if v > best {
                best = v;
                best_block = block;
            }
            // descend: extend the block with the next element if allowed
            let next_start = if depth == 0 { 0 } else { stack[depth - 1] + 1 };
            if depth + 1 < self.index.k && next_start < rest_len {
                stack[depth] = next_start;
                block |= 1u64 << rest[next_start];
                depth += 1;
                continue;
            }
            // backtrack: advance the deepest extension that can still move
            loop {
                if depth == 0 {
                    self.value[uncovered as usize] = best;
                    self.choice[uncovered as usize] = best_block;
                    return best;
                }
                let i = stack[depth - 1];
                block &= !(1u64 << rest[i]);
                if i + 1 < rest_len {
                    stack[depth - 1] = i + 1;
                    block |= 1u64 << rest[i + 1];
                    break;
                }
                depth -= 1;
            }
        }
    }

    fn reconstruct(&self, mut uncovered: u64) -> Vec<u64> {
        let mut blocks = Vec::new();
        while uncovered != 0 {
            let b = self.choice[uncovered as usize];
            blocks.push(b);
            uncovered &= !b;
        }
        blocks
    }
}

/// Bounded best-K incumbent set. "Better" means higher objective, with ties
/// going to the canonically smaller partition.
struct Incumbents {
    capacity: usize,
    entries: Vec<(f64, Partition)>,
}

impl Incumbents {
    fn new(capacity: usize) -> Self {
        Incumbents {
            capacity,
            entries: Vec::with_capacity(capacity + 1),
        }
    }

    fn better(a: &(f64, Partition), b: &(f64, Partition)) -> bool {
        a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    /// Objective below which a completed partition cannot enter.
    fn threshold(&self) -> f64 {
        if self.entries.len() < self.capacity {
            f64::NEG_INFINITY
        } else {
            self.entries
                .iter()
                .map(|e| e.0)
                .fold(f64::INFINITY, f64::min)
        }
    }

    fn offer(&mut self, objective: f64, partition: Partition) {
        let candidate = (objective, partition);
        if self.entries.len() < self.capacity {
            self.entries.push(candidate);
            return;
        }
        let worst = (0..self.entries.len())
            .reduce(|a, b| {
                if Self::better(&self.entries[a], &self.entries[b]) {
                    b // keep the worse of the two
                } else {
                    a
                }
            })
            .unwrap();
        if Self::better(&candidate, &self.entries[worst]) {
            self.entries[worst] = candidate;
        }
    }

    fn into_sorted(self) -> Vec<(f64, Partition)> {
        let mut v = self.entries;
        v.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        v
    }
}

/// Depth-first branch-and-bound over blocks of the lowest uncovered feature,
/// children in score-descending order, pruned against the K-th incumbent.
fn branch_and_bound(index: &ScoreIndex, k_best: usize) -> (Vec<(f64, Partition)>, u64) {
    struct Search<'a> {
        index: &'a ScoreIndex,
        incumbents: Incumbents,
        nodes: u64,
        blocks: Vec<u64>,
    }

    impl Search<'_> {
        fn dfs(&mut self, uncovered: u64, value: f64) {
            self.nodes += 1;
            if uncovered == 0 {
                self.incumbents
                    .offer(value, partition_from_masks(&self.blocks));
                return;
            }
            if value + self.index.bound(uncovered) < self.incumbents.threshold() {
                return;
            }
            let e = uncovered.trailing_zeros() as usize;
            for &(mask, score) in &self.index.by_score[e] {
                if mask & !uncovered != 0 {
                    continue;
                }
                self.blocks.push(mask);
                self.dfs(uncovered & !mask, value + score);
                self.blocks.pop();
            }
        }
    }

    let mut search = Search {
        index,
        incumbents: Incumbents::new(k_best),
        nodes: 0,
        blocks: Vec::with_capacity(index.d),
    };
    search.dfs(index.full_mask(), 0.0);
    (search.incumbents.into_sorted(), search.nodes)
}

fn finalize(
    table: &SubsetScoreTable,
    partition: Partition,
    nodes: u64,
    start: Instant,
) -> Result<SolveResult> {
    debug_assert_eq!(partition.ground_size(), table.d());
    debug_assert!(partition.max_block_size() <= table.k());
    // the reported objective is recomputed in canonical block order so it
    // equals partition_score exactly
    let objective = partition_score(table, &partition)?;
    Ok(SolveResult {
        partition,
        objective,
        status: SolveStatus::Optimal,
        nodes_explored: nodes,
        wall_time: start.elapsed(),
    })
}

/// Provably optimal partition: bitmask DP for d <= 22, branch-and-bound above.
pub fn solve_best(table: &SubsetScoreTable) -> Result<SolveResult> {
    let start = Instant::now();
    let use_dp = table.d() <= 22;
    let index = ScoreIndex::build(table, false, !use_dp)?;
    if use_dp {
        let mut dp = DpSolver::new(&index);
        dp.solve(index.full_mask());
        let blocks = dp.reconstruct(index.full_mask());
        finalize(table, partition_from_masks(&blocks), dp.nodes, start)
    } else {
        let (mut results, nodes) = branch_and_bound(&index, 1);
        let (_, partition) = results.pop().ok_or_else(|| {
            Error::InvalidArgument("branch and bound returned no solution".into())
        })?;
        finalize(table, partition, nodes, start)
    }
}

/// Exhaustive maximization over the partition stream (first maximum in
/// enumeration order wins). Guarded by [`PARTITION_ENUM_GUARD`].
pub fn solve_bruteforce(table: &SubsetScoreTable) -> Result<SolveResult> {
    let start = Instant::now();
    let index = ScoreIndex::build(table, false, false)?;
    let count = count_partitions(index.d, index.k)?;
    if count > BigUint::from(PARTITION_ENUM_GUARD) {
        return Err(Error::GuardExceeded {
            count: count.to_string(),
            limit: PARTITION_ENUM_GUARD,
        });
    }
    let mut rgs = RgsEnumerator::new(index.d, index.k);
    let mut masks: Vec<u64> = Vec::with_capacity(index.d);
    let mut best = f64::NEG_INFINITY;
    let mut best_blocks: Vec<u64> = Vec::new();
    let mut visited: u64 = 0;
    while rgs.advance() {
        visited += 1;
        rgs.block_masks(&mut masks);
        let mut total = 0.0;
        for &m in &masks {
            total += index.scores.get(m);
        }
        if total > best {
            best = total;
            best_blocks.clear();
            best_blocks.extend_from_slice(&masks);
        }
    }
    finalize(table, partition_from_masks(&best_blocks), visited, start)
}

/// The K distinct partitions with the highest objectives, descending; the
/// first result equals [`solve_best`].
pub fn solve_kbest(table: &SubsetScoreTable, k_best: usize) -> Result<Vec<SolveResult>> {
    let start = Instant::now();
    if k_best == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let index = ScoreIndex::build(table, false, true)?;
    let available = count_partitions(index.d, index.k)?;
    if BigUint::from(k_best as u64) > available {
        return Err(Error::KTooLarge {
            requested: k_best,
            available: available.to_string(),
        });
    }
    let (results, nodes) = branch_and_bound(&index, k_best);
    results
        .into_iter()
        .map(|(_, p)| finalize(table, p, nodes, start))
        .collect()
}

/// The K distinct partitions with the lowest objectives, ascending: K-best on
/// the negated scores.
pub fn solve_worst(table: &SubsetScoreTable, k_worst: usize) -> Result<Vec<SolveResult>> {
    let start = Instant::now();
    if k_worst == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let index = ScoreIndex::build(table, true, true)?;
    debug_assert!(index.negated);
    let available = count_partitions(index.d, index.k)?;
    if BigUint::from(k_worst as u64) > available {
        return Err(Error::KTooLarge {
            requested: k_worst,
            available: available.to_string(),
        });
    }
    let (results, nodes) = branch_and_bound(&index, k_worst);
    results
        .into_iter()
        .map(|(_, p)| finalize(table, p, nodes, start))
        .collect()
}

/// Forces the branch-and-bound route regardless of dimension (the DP and the
/// B&B validate each other in tests).
#[doc(hidden)]
pub fn solve_best_branch_and_bound(table: &SubsetScoreTable) -> Result<SolveResult> {
    let start = Instant::now();
    let index = ScoreIndex::build(table, false, true)?;
    let (mut results, nodes) = branch_and_bound(&index, 1);
    let (_, partition) = results
        .pop()
        .ok_or_else(|| Error::InvalidArgument("branch and bound returned no solution".into()))?;
    finalize(table, partition, nodes, start)
}
