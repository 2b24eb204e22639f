//! Ranking metrics: full-ranking average precision and its mean.

use crate::error::{Error, Result};

/// Per-query relevant-id sets: two records are neighbors when their label
/// sets intersect.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    relevant: Vec<Vec<u32>>,
}

fn labels_intersect(a: &[u32], b: &[u32]) -> bool {
    // both sorted ascending
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

impl GroundTruth {
    /// Builds neighbor sets of each query against database records
    /// `0..db_labels.len()` (record ids in insertion order). Label slices
    /// must be sorted ascending.
    pub fn build(query_labels: &[Vec<u32>], db_labels: &[Vec<u32>]) -> Self {
        let relevant = query_labels
            .iter()
            .map(|ql| {
                db_labels
                    .iter()
                    .enumerate()
                    .filter(|(_, dl)| labels_intersect(ql, dl))
                    .map(|(id, _)| id as u32)
                    .collect()
            })
            .collect();
        GroundTruth { relevant }
    }

    pub fn num_queries(&self) -> usize {
        self.relevant.len()
    }

    /// Sorted relevant ids of one query.
    pub fn relevant(&self, query: usize) -> &[u32] {
        &self.relevant[query]
    }
}

/// Full-ranking average precision: mean of precision-at-rank over the ranks
/// holding relevant items, divided by the total relevant count. An empty
/// relevant set yields 0 (callers exclude such queries from means).
///
/// `relevant` must be sorted ascending; `ranking` must not repeat ids.
pub fn average_precision(ranking: &[u32], relevant: &[u32]) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, id) in ranking.iter().enumerate() {
        if relevant.binary_search(id).is_ok() {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

/// Mean AP over queries with non-empty ground truth.
pub fn mean_average_precision(rankings: &[Vec<u32>], gt: &GroundTruth) -> Result<f64> {
    if rankings.len() != gt.num_queries() {
        return Err(Error::DimensionMismatch {
            expected: gt.num_queries(),
            got: rankings.len(),
        });
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (q, ranking) in rankings.iter().enumerate() {
        let rel = gt.relevant(q);
        if rel.is_empty() {
            continue;
        }
        sum += average_precision(ranking, rel);
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::DegenerateInput);
    }
    Ok(sum / counted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn single_relevant_at_top_is_one() {
        assert_eq!(average_precision(&[7, 1, 2], &[7]), 1.0);
    }

    #[test]
    fn single_relevant_at_rank_two_is_half() {
        assert_eq!(average_precision(&[1, 7, 2], &[7]), 0.5);
    }

    #[test]
    fn perfect_prefix_is_one() {
        assert_eq!(average_precision(&[3, 1, 4, 0, 2], &[1, 3, 4]), 1.0);
    }

    #[test]
    fn empty_relevant_is_zero() {
        assert_eq!(average_precision(&[1, 2, 3], &[]), 0.0);
    }

    #[test]
    fn matches_literal_formula_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(60);
        for _ in 0..50 {
            let mut ranking: Vec<u32> = (0..20).collect();
            ranking.shuffle(&mut rng);
            let mut relevant: Vec<u32> =
                rand::seq::index::sample(&mut rng, 20, 5).iter().map(|i| i as u32).collect();
            relevant.sort_unstable();

            let got = average_precision(&ranking, &relevant);

            // literal sum: for each relevant item, precision at its rank
            let mut oracle = 0.0;
            for &r in &relevant {
                let rank = ranking.iter().position(|&x| x == r).unwrap() + 1;
                let hits_above = ranking[..rank]
                    .iter()
                    .filter(|x| relevant.contains(x))
                    .count();
                oracle += hits_above as f64 / rank as f64;
            }
            oracle /= relevant.len() as f64;
            assert!((got - oracle).abs() <= 1e-12);
        }
    }

    #[test]
    fn ap_is_invariant_to_consistent_relabeling() {
        let ranking = vec![4u32, 2, 9, 0, 5];
        let relevant = vec![2u32, 5];
        let base = average_precision(&ranking, &relevant);

        // shift every id by 100
        let shifted: Vec<u32> = ranking.iter().map(|&x| x + 100).collect();
        let mut rel_shifted: Vec<u32> = relevant.iter().map(|&x| x + 100).collect();
        rel_shifted.sort_unstable();
        assert_eq!(average_precision(&shifted, &rel_shifted), base);
    }

    #[test]
    fn ground_truth_by_label_overlap() {
        let queries = vec![vec![0u32], vec![1, 2], vec![5]];
        let db = vec![vec![0u32, 1], vec![2u32], vec![3u32], vec![0u32, 2]];
        let gt = GroundTruth::build(&queries, &db);
        assert_eq!(gt.relevant(0), &[0, 3]);
        assert_eq!(gt.relevant(1), &[0, 1, 3]);
        assert_eq!(gt.relevant(2), &[] as &[u32]);
    }

    #[test]
    fn map_excludes_empty_ground_truth() {
        let queries = vec![vec![0u32], vec![9u32]];
        let db = vec![vec![0u32], vec![1u32]];
        let gt = GroundTruth::build(&queries, &db);
        // query 0: relevant {0}; query 1: nothing relevant
        let rankings = vec![vec![1u32, 0], vec![0u32, 1]];
        let map = mean_average_precision(&rankings, &gt).unwrap();
        assert_eq!(map, 0.5); // only query 0 counts, AP = 0.5

        let none = GroundTruth::build(&[vec![9u32]], &db);
        assert!(mean_average_precision(&[vec![0, 1]], &none).is_err());
    }
}
