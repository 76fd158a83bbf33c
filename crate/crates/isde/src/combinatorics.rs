//! Exact counting and enumeration over `Set_d^k` (feature subsets of size at
//! most `k`) and `Part_d^k` (partitions of `{0,..,d-1}` whose blocks lie in
//! `Set_d^k`).
//!
//! All counts are arbitrary-precision: the pair-partition count for d=50
//! already overflows u64. Enumeration orders are fixed so that downstream
//! tables and tie-breaks are stable across runs:
//!
//! - subsets stream by cardinality, then lexicographically;
//! - partitions stream in lexicographic order of their restricted-growth
//!   string (the block index of each element, blocks numbered by first
//!   appearance), which yields canonical form directly.

use num_bigint::BigUint;

use crate::data::{FeatureSubset, Partition};
use crate::{Error, Result};

/// Iterating all of `Part_d^k` is refused above this count.
pub const PARTITION_ENUM_GUARD: u64 = 100_000_000;

fn check_dk(d: usize, k: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..=d, got k={k} for d={d}"
        )));
    }
    Ok(())
}

/// Exact sizes of the subset and partition spaces for one (d, k).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountReport {
    pub d: usize,
    pub k: usize,
    pub n_subsets: BigUint,
    pub n_partitions: BigUint,
}

/// Counts both spaces at once.
pub fn count_report(d: usize, k: usize) -> Result<CountReport> {
    Ok(CountReport {
        d,
        k,
        n_subsets: count_subsets(d, k)?,
        n_partitions: count_partitions(d, k)?,
    })
}

/// Binomial coefficient C(n, r) as a big integer.
pub fn binomial(n: usize, r: usize) -> BigUint {
    if r > n {
        return BigUint::ZERO;
    }
    let r = r.min(n - r);
    let mut acc = BigUint::from(1u32);
    for i in 0..r {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// |Set_d^k| = sum_{i=1}^{k} C(d, i), exact.
pub fn count_subsets(d: usize, k: usize) -> Result<BigUint> {
    check_dk(d, k)?;
    let mut total = BigUint::ZERO;
    for i in 1..=k {
        total += binomial(d, i);
    }
    Ok(total)
}

/// |Part_d^k|, exact, via the recurrence B(0) = 1,
/// B(n) = sum_{j=1}^{min(k,n)} C(n-1, j-1) * B(n-j)
/// (place the lowest-indexed remaining feature in a block of size j).
pub fn count_partitions(d: usize, k: usize) -> Result<BigUint> {
    check_dk(d, k)?;
    let mut table = vec![BigUint::from(1u32)];
    for n in 1..=d {
        let mut b = BigUint::ZERO;
        for j in 1..=k.min(n) {
            b += binomial(n - 1, j - 1) * &table[n - j];
        }
        table.push(b);
    }
    Ok(table.pop().unwrap())
}

/// |Part_d^2| via the closed form
/// sum_{i=0}^{floor(d/2)} [prod_{j=0}^{i-1} C(d-2j, 2)] / i!,
/// where `i` counts the blocks of size 2.
pub fn count_pair_partitions(d: usize) -> BigUint {
    let mut total = BigUint::ZERO;
    let mut numerator = BigUint::from(1u32); // prod of binomials for current i
    let mut factorial = BigUint::from(1u32);
    for i in 0..=(d / 2) {
        if i > 0 {
            numerator *= binomial(d - 2 * (i - 1), 2);
            factorial *= BigUint::from(i);
        }
        total += &numerator / &factorial; // exact: the ratio counts partitions
    }
    total
}

/// Rounds a positive big integer to two significant decimal digits, returning
/// `(mantissa in 10..=99, exponent)` with value ~ `mantissa * 10^(exponent-1)`.
pub fn leading_two_digits(v: &BigUint) -> (u32, i32) {
    let s = v.to_string();
    debug_assert!(!s.starts_with('0'));
    let mut exp = s.len() as i32 - 1;
    let digits: Vec<u32> = s.chars().take(3).map(|c| c.to_digit(10).unwrap()).collect();
    let head = digits.iter().fold(0u32, |a, &d| a * 10 + d);
    let head = match digits.len() {
        1 => head * 100,
        2 => head * 10,
        _ => head,
    };
    let mut mantissa = (head + 5) / 10; // round half up
    if mantissa == 100 {
        mantissa = 10;
        exp += 1;
    }
    (mantissa, exp)
}

/// Streams every subset of `{0,..,d-1}` with `1 <= |S| <= k`, ordered by
/// cardinality and then lexicographically.
pub fn enumerate_subsets(d: usize, k: usize) -> Result<SubsetIter> {
    check_dk(d, k)?;
    Ok(SubsetIter {
        d,
        k,
        current: Vec::new(),
    })
}

pub struct SubsetIter {
    d: usize,
    k: usize,
    current: Vec<usize>, // last emitted combination; empty before the first
}

impl SubsetIter {
    /// Advances `current` to the next combination of its size, or grows to the
    /// first combination of the next size. Returns false when exhausted.
    fn advance(&mut self) -> bool {
        if self.current.is_empty() {
            self.current.push(0);
            return true;
        }
        let r = self.current.len();
        // classic next-combination over 0..d
        let mut i = r;
        while i > 0 {
            i -= 1;
            if self.current[i] < self.d - (r - i) {
                self.current[i] += 1;
                for j in i + 1..r {
                    self.current[j] = self.current[j - 1] + 1;
                }
                return true;
            }
        }
        if r < self.k {
            self.current = (0..=r).collect();
            return true;
        }
        false
    }
}

impl Iterator for SubsetIter {
    type Item = FeatureSubset;

    fn next(&mut self) -> Option<FeatureSubset> {
        if self.advance() {
            Some(FeatureSubset::new(self.current.clone()).expect("combination is valid"))
        } else {
            None
        }
    }
}

/// Streams every partition in `Part_d^k` exactly once, in canonical form.
/// Refuses to start when `|Part_d^k|` exceeds [`PARTITION_ENUM_GUARD`].
pub fn enumerate_partitions(d: usize, k: usize) -> Result<PartitionIter> {
    let count = count_partitions(d, k)?;
    if count > BigUint::from(PARTITION_ENUM_GUARD) {
        return Err(Error::GuardExceeded {
            count: count.to_string(),
            limit: PARTITION_ENUM_GUARD,
        });
    }
    Ok(PartitionIter {
        rgs: RgsEnumerator::new(d, k),
    })
}

pub struct PartitionIter {
    rgs: RgsEnumerator,
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.rgs.advance() {
            Some(self.rgs.to_partition())
        } else {
            None
        }
    }
}

/// Restricted-growth-string walker over partitions with block size capped at
/// `k`: `assignment[i]` is the block index of element `i`, blocks numbered by
/// first appearance (so `assignment` is the canonical form). Successive calls
/// to [`RgsEnumerator::advance`] visit the strings in lexicographic order.
///
/// Shared by the public iterator and the solver's exhaustive mode.
pub(crate) struct RgsEnumerator {
    d: usize,
    k: usize,
    assignment: Vec<usize>,
    sizes: Vec<usize>,      // sizes[b] = current size of block b
    prefix_max: Vec<usize>, // prefix_max[i] = max(assignment[0..=i])
    started: bool,
}

impl RgsEnumerator {
    pub fn new(d: usize, k: usize) -> Self {
        RgsEnumerator {
            d,
            k,
            assignment: vec![0; d],
            sizes: Vec::new(),
            prefix_max: vec![0; d],
            started: false,
        }
    }

    /// Assigns elements `from..d` greedily to the lowest block with spare
    /// capacity, i.e. the lexicographically minimal feasible suffix.
    fn fill_minimal(&mut self, from: usize) {
        for i in from..self.d {
            let b = match self.sizes.iter().position(|&s| s < self.k) {
                Some(b) => b,
                None => {
                    self.sizes.push(0);
                    self.sizes.len() - 1
                }
            };
            self.assignment[i] = b;
            self.sizes[b] += 1;
            self.prefix_max[i] = if i == 0 {
                b
            } else {
                self.prefix_max[i - 1].max(b)
            };
        }
    }

    /// Steps to the next partition; the first call yields the first one.
    pub fn advance(&mut self) -> bool {
        if !self.started {
            self.started = true;
            self.sizes.clear();
            self.fill_minimal(0);
            return true;
        }
        // Walk left, removing elements, until some position can increase.
        let mut i = self.d;
        while i > 1 {
            i -= 1;
            let b = self.assignment[i];
            self.sizes[b] -= 1;
            if self.sizes[b] == 0 && b + 1 == self.sizes.len() {
                self.sizes.pop();
            }
            let limit = self.prefix_max[i - 1] + 1; // may open one new block
            for v in self.assignment[i] + 1..=limit {
                let fits = v == self.sizes.len() || self.sizes[v] < self.k;
                if fits {
                    if v == self.sizes.len() {
                        self.sizes.push(0);
                    }
                    self.assignment[i] = v;
                    self.sizes[v] += 1;
                    self.prefix_max[i] = self.prefix_max[i - 1].max(v);
                    self.fill_minimal(i + 1);
                    return true;
                }
            }
        }
        false
    }

    /// Writes one bitmask per block into `out`, in block-index (canonical)
    /// order. Only valid for `d <= 64`.
    pub fn block_masks(&self, out: &mut Vec<u64>) {
        out.clear();
        out.resize(self.sizes.len(), 0);
        for (i, &b) in self.assignment.iter().enumerate() {
            out[b] |= 1 << i;
        }
    }

    pub fn to_partition(&self) -> Partition {
        let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); self.sizes.len()];
        for (i, &b) in self.assignment.iter().enumerate() {
            blocks[b].push(i);
        }
        Partition::new(
            blocks
                .into_iter()
                .map(|ix| FeatureSubset::new(ix).expect("nonempty block"))
                .collect(),
        )
        .expect("RGS yields a valid partition")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn big(v: u64) -> BigUint {
        BigUint::from(v)
    }

    #[test]
    fn subset_counts_match_reference_values() {
        assert_eq!(count_subsets(20, 3).unwrap(), big(1350));
        assert_eq!(count_subsets(30, 3).unwrap(), big(4525));
        assert_eq!(count_subsets(40, 3).unwrap(), big(10700));
        assert_eq!(count_subsets(50, 3).unwrap(), big(20875));
        assert_eq!(count_subsets(15, 15).unwrap(), big(32767));
        assert_eq!(count_subsets(1, 1).unwrap(), big(1));
        assert_eq!(count_subsets(13, 5).unwrap(), big(2379));
    }

    #[test]
    fn full_subset_count_is_two_to_d_minus_one() {
        for d in 1..=30 {
            let expected = (BigUint::from(1u32) << d) - 1u32;
            assert_eq!(count_subsets(d, d).unwrap(), expected, "d={d}");
        }
    }

    #[test]
    fn partition_counts_match_bell_numbers() {
        let bell: [(usize, u64); 6] = [
            (10, 115_975),
            (11, 678_570),
            (12, 4_213_597),
            (13, 27_644_437),
            (14, 190_899_322),
            (15, 1_382_958_545),
        ];
        for (d, b) in bell {
            assert_eq!(count_partitions(d, d).unwrap(), big(b), "d={d}");
        }
        assert_eq!(count_partitions(13, 5).unwrap(), big(25_719_630));
        assert_eq!(count_partitions(3, 1).unwrap(), big(1));
    }

    #[test]
    fn large_dimension_count_exceeds_1e19() {
        let c = count_partitions(32, 3).unwrap();
        assert!(c > BigUint::from(10u64).pow(19));
    }

    #[test]
    fn pair_partition_closed_form_matches_recurrence() {
        // k = 2 exceeds d at d = 1, where Part_1^2 = Part_1^1
        assert_eq!(count_pair_partitions(1), count_partitions(1, 1).unwrap());
        for d in 2..=16 {
            assert_eq!(
                count_pair_partitions(d),
                count_partitions(d, 2).unwrap(),
                "d={d}"
            );
        }
    }

    #[test]
    fn pair_partition_small_cases() {
        assert_eq!(count_pair_partitions(1), big(1));
        // independently counted by enumerating Part_4^2 below
        assert_eq!(count_pair_partitions(4), big(10));
        let n: usize = enumerate_partitions(4, 2).unwrap().count();
        assert_eq!(n, 10);
    }

    #[test]
    fn pair_partition_leading_digits_match_published_approximations() {
        let table = [
            (20usize, (24u32, 10i32)),
            (30, (61, 17)),
            (40, (73, 25)),
            (50, (28, 34)),
        ];
        for (d, expected) in table {
            assert_eq!(
                leading_two_digits(&count_pair_partitions(d)),
                expected,
                "d={d}"
            );
        }
    }

    #[test]
    fn invalid_k_is_rejected() {
        assert!(count_subsets(3, 0).is_err());
        assert!(count_subsets(3, 4).is_err());
        assert!(count_partitions(0, 1).is_err());
        assert!(enumerate_subsets(2, 3).is_err());
    }

    #[test]
    fn subset_stream_order_and_lengths() {
        let got: Vec<Vec<usize>> = enumerate_subsets(3, 2)
            .unwrap()
            .map(|s| s.indices().to_vec())
            .collect();
        assert_eq!(
            got,
            vec![
                vec![0],
                vec![1],
                vec![2],
                vec![0, 1],
                vec![0, 2],
                vec![1, 2]
            ]
        );

        let got: Vec<Vec<usize>> = enumerate_subsets(2, 1)
            .unwrap()
            .map(|s| s.indices().to_vec())
            .collect();
        assert_eq!(got, vec![vec![0], vec![1]]);

        assert_eq!(enumerate_subsets(20, 3).unwrap().count(), 1350);
    }

    #[test]
    fn subset_stream_has_no_duplicates() {
        for d in 1..=8 {
            for k in 1..=d {
                let all: Vec<FeatureSubset> = enumerate_subsets(d, k).unwrap().collect();
                let uniq: HashSet<_> = all.iter().cloned().collect();
                assert_eq!(all.len(), uniq.len());
                assert_eq!(big(all.len() as u64), count_subsets(d, k).unwrap());
            }
        }
    }

    #[test]
    fn partition_stream_small_cases() {
        let all: Vec<Partition> = enumerate_partitions(3, 3).unwrap().collect();
        assert_eq!(all.len(), 5); // Bell(3)
        let all: Vec<Partition> = enumerate_partitions(4, 2).unwrap().collect();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn partition_stream_matches_counts_without_duplicates() {
        for d in 1..=10 {
            for k in 1..=d {
                let all: Vec<Partition> = enumerate_partitions(d, k).unwrap().collect();
                let uniq: HashSet<_> = all.iter().cloned().collect();
                assert_eq!(all.len(), uniq.len(), "d={d} k={k}");
                assert_eq!(
                    big(all.len() as u64),
                    count_partitions(d, k).unwrap(),
                    "d={d} k={k}"
                );
                for p in &all {
                    assert!(p.max_block_size() <= k);
                    assert_eq!(p.ground_size(), d);
                }
            }
        }
    }

    #[test]
    fn partition_stream_guard_rejects_huge_spaces() {
        assert!(matches!(
            enumerate_partitions(14, 14),
            Err(Error::GuardExceeded { .. })
        ));
    }

    #[test]
    fn two_digit_rounding() {
        assert_eq!(leading_two_digits(&big(23_758_664_096)), (24, 10));
        assert_eq!(leading_two_digits(&big(999)), (10, 3));
        assert_eq!(leading_two_digits(&big(10)), (10, 1));
        assert_eq!(leading_two_digits(&big(94_999)), (95, 4));
    }
}
