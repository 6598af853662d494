//! Exhaustive Hamming retrieval and label-based evaluation.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;

use crate::encoder::{words_for, BinaryCodeSet};
use crate::error::{Error, Result};

/// Precision cut-offs reported by default.
pub const DEFAULT_PRECISION_KS: [usize; 2] = [10, 500];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievalResult {
    pub query_id: usize,
    pub ranked_ids: Vec<usize>,
    /// Hamming distance of each ranked item; non-decreasing.
    pub distances: Vec<u32>,
}

/// One class id per item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet(pub Vec<i64>);

impl LabelSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> i64 {
        self.0[i]
    }

    /// Indices of items carrying `label`.
    pub fn matching(&self, label: i64) -> HashSet<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }
}

#[inline]
fn distance_unchecked(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Number of differing bits among the first `bits` bits of two packed codes.
pub fn hamming(a: &[u64], b: &[u64], bits: usize) -> Result<u32> {
    let per = words_for(bits);
    for code in [a, b] {
        if code.len() != per {
            return Err(Error::DimensionMismatch {
                expected: per,
                found: code.len(),
            });
        }
    }
    if per == 0 {
        return Ok(0);
    }
    let head = distance_unchecked(&a[..per - 1], &b[..per - 1]);
    let mask = match bits % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    };
    Ok(head + ((a[per - 1] ^ b[per - 1]) & mask).count_ones())
}

/// Rank the whole database by distance, ties by ascending index.
///
/// Distances lie in `[0, m]`, so a stable counting sort gives the
/// deterministic order in linear time.
fn rank_all(db: &BinaryCodeSet, query: &[u64], limit: usize) -> (Vec<usize>, Vec<u32>) {
    let distances: Vec<u32> = (0..db.len())
        .map(|i| distance_unchecked(db.code(i), query))
        .collect();
    let mut counts = vec![0usize; db.bits() + 2];
    for &d in &distances {
        counts[d as usize + 1] += 1;
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let mut order = vec![0usize; db.len()];
    for (i, &d) in distances.iter().enumerate() {
        let slot = &mut counts[d as usize];
        order[*slot] = i;
        *slot += 1;
    }
    order.truncate(limit);
    let dist = order.iter().map(|&i| distances[i]).collect();
    (order, dist)
}

fn check_query(db: &BinaryCodeSet, query: &[u64]) -> Result<()> {
    if query.len() != db.words_per_code() {
        return Err(Error::DimensionMismatch {
            expected: db.words_per_code(),
            found: query.len(),
        });
    }
    Ok(())
}

/// The `k` nearest database codes to `query`.
pub fn top_k(db: &BinaryCodeSet, query: &[u64], k: usize) -> Result<RetrievalResult> {
    check_query(db, query)?;
    if k > db.len() {
        return Err(Error::KTooLarge { k, n: db.len() });
    }
    let (ranked_ids, distances) = rank_all(db, query, k);
    Ok(RetrievalResult {
        query_id: 0,
        ranked_ids,
        distances,
    })
}

/// [`top_k`] for every query code, in parallel. `k = None` ranks the whole
/// database.
pub fn search_batch(
    db: &BinaryCodeSet,
    queries: &BinaryCodeSet,
    k: Option<usize>,
) -> Result<Vec<RetrievalResult>> {
    if db.bits() != queries.bits() {
        return Err(Error::DimensionMismatch {
            expected: db.bits(),
            found: queries.bits(),
        });
    }
    let k = k.unwrap_or(db.len());
    if k > db.len() {
        return Err(Error::KTooLarge { k, n: db.len() });
    }
    Ok((0..queries.len())
        .into_par_iter()
        .map(|q| {
            let (ranked_ids, distances) = rank_all(db, queries.code(q), k);
            RetrievalResult {
                query_id: q,
                ranked_ids,
                distances,
            }
        })
        .collect())
}

/// Fraction of the first `k` results whose label is `query_label`.
pub fn precision_at_k(
    result: &RetrievalResult,
    db_labels: &LabelSet,
    query_label: i64,
    k: usize,
) -> f64 {
    assert!(
        k > 0 && k <= result.ranked_ids.len(),
        "precision@{k} needs at least {k} ranked results"
    );
    let hits = result.ranked_ids[..k]
        .iter()
        .filter(|&&i| db_labels.get(i) == query_label)
        .count();
    hits as f64 / k as f64
}

/// Mean of `(hits so far) / rank` over the ranks of relevant items, divided
/// by the number of relevant items.
pub fn average_precision(result: &RetrievalResult, relevant: &HashSet<usize>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::UndefinedAp {
            query: result.query_id,
        });
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, id) in result.ranked_ids.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / relevant.len() as f64)
}

/// Mean of [`average_precision`] over queries, each ranking the full database.
pub fn mean_average_precision(
    results: &[RetrievalResult],
    relevant: &[HashSet<usize>],
) -> Result<f64> {
    if results.len() != relevant.len() {
        return Err(Error::DimensionMismatch {
            expected: results.len(),
            found: relevant.len(),
        });
    }
    if results.is_empty() {
        return Err(Error::InvalidParams("mAP over zero queries".into()));
    }
    let aps = results
        .iter()
        .zip(relevant)
        .map(|(r, rel)| average_precision(r, rel))
        .collect::<Result<Vec<_>>>()?;
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Tab-separated `query_id  rank  db_id  distance`, ranks starting at 1.
pub fn write_results_tsv<W: Write>(mut out: W, results: &[RetrievalResult]) -> Result<()> {
    for r in results {
        for (rank, (id, dist)) in r.ranked_ids.iter().zip(&r.distances).enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}", r.query_id, rank + 1, id, dist)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_codes(n: usize, bits: usize, seed: u64) -> BinaryCodeSet {
        let mut rng = seed::rng(seed);
        let rows: Vec<Vec<bool>> = (0..n)
            .map(|_| (0..bits).map(|_| rng.random()).collect())
            .collect();
        BinaryCodeSet::from_bit_rows(bits, &rows).unwrap()
    }

    fn bit_loop(a: &[bool], b: &[bool]) -> u32 {
        a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
    }

    #[test]
    fn hamming_examples() {
        let bits = 130;
        let zeros = BinaryCodeSet::from_bit_rows(bits, &[vec![false; bits]]).unwrap();
        let ones = BinaryCodeSet::from_bit_rows(bits, &[vec![true; bits]]).unwrap();
        assert_eq!(hamming(zeros.code(0), zeros.code(0), bits).unwrap(), 0);
        assert_eq!(hamming(zeros.code(0), ones.code(0), bits).unwrap(), 130);
        let codes = random_codes(2, bits, 1);
        let rows = codes.unpack();
        assert_eq!(
            hamming(codes.code(0), codes.code(1), bits).unwrap(),
            bit_loop(&rows[0], &rows[1])
        );
        assert!(hamming(&[0, 0], &[0], bits).is_err());
    }

    #[test]
    fn hamming_ignores_pad_bits() {
        assert_eq!(hamming(&[0b0001], &[0b1001], 3).unwrap(), 0);
    }

    #[test]
    fn top_k_examples() {
        let db = random_codes(20, 64, 2);
        let hit = top_k(&db, db.code(7), 1).unwrap();
        assert_eq!(hit.ranked_ids[0], 7);
        assert_eq!(hit.distances[0], 0);

        let same = BinaryCodeSet::from_bit_rows(10, &vec![vec![true; 10]; 6]).unwrap();
        let r = top_k(&same, same.code(0), 4).unwrap();
        assert_eq!(r.ranked_ids, vec![0, 1, 2, 3]);

        assert!(matches!(top_k(&db, db.code(0), 21), Err(Error::KTooLarge { k: 21, n: 20 })));
    }

    #[test]
    fn top_k_matches_full_sort() {
        let db = random_codes(1000, 64, 3);
        let queries = random_codes(5, 64, 4);
        for q in 0..5 {
            let mut all: Vec<(u32, usize)> = (0..1000)
                .map(|i| (hamming(db.code(i), queries.code(q), 64).unwrap(), i))
                .collect();
            all.sort();
            let r = top_k(&db, queries.code(q), 10).unwrap();
            let expected: Vec<usize> = all[..10].iter().map(|p| p.1).collect();
            assert_eq!(r.ranked_ids, expected);
        }
    }

    #[test]
    fn precision_examples() {
        let result = RetrievalResult {
            query_id: 0,
            ranked_ids: (0..10).collect(),
            distances: vec![0; 10],
        };
        let labels = LabelSet(vec![1, 1, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(precision_at_k(&result, &labels, 1, 10), 0.3);
        assert_eq!(precision_at_k(&result, &labels, 1, 3), 1.0);
        assert_eq!(precision_at_k(&result, &labels, 2, 10), 0.0);
    }

    #[test]
    fn average_precision_examples() {
        let result = RetrievalResult {
            query_id: 3,
            ranked_ids: vec![4, 5, 6, 7],
            distances: vec![0, 1, 2, 3],
        };
        let ap = |ids: &[usize]| average_precision(&result, &ids.iter().copied().collect()).unwrap();
        assert_eq!(ap(&[4, 5]), 1.0);
        assert_eq!(ap(&[5]), 0.5);
        assert_eq!(ap(&[4, 7]), 0.75);
        assert!(matches!(
            average_precision(&result, &HashSet::new()),
            Err(Error::UndefinedAp { query: 3 })
        ));
        let map = mean_average_precision(
            &[result.clone(), result.clone()],
            &[[4, 5].into_iter().collect(), [5].into_iter().collect()],
        )
        .unwrap();
        assert_eq!(map, 0.75);
    }

    #[test]
    fn tsv_layout() {
        let result = RetrievalResult {
            query_id: 2,
            ranked_ids: vec![9, 1],
            distances: vec![0, 4],
        };
        let mut out = Vec::new();
        write_results_tsv(&mut out, &[result]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "2\t1\t9\t0\n2\t2\t1\t4\n");
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(bits in 1usize..300, seed in any::<u64>()) {
            let c = random_codes(3, bits, seed);
            let d = |i: usize, j: usize| hamming(c.code(i), c.code(j), bits).unwrap();
            prop_assert_eq!(d(0, 1), d(1, 0));
            prop_assert_eq!(d(0, 0), 0);
            prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2));
            prop_assert_eq!(d(0, 1) == 0, c.code(0) == c.code(1));
        }
    }
}
