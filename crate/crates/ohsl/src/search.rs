//! Query scoring and top-K retrieval over stored codes.
//!
//! A query is folded into per-bit weights once (`m̂ = Mᵀq`), after which
//! scoring any code is `b` sign-resolved lookups: `S = Σᵢ ±m̂ᵢ`. Retrieval
//! comes in two exact flavours — exhaustive scan and a substring
//! multi-index probed in best-first order — plus plain-Hamming and
//! symmetric-bilinear baselines. All rankings break score ties by ascending
//! record id, which is what makes scan/index agreement bit-testable.

use nalgebra::{DMatrix, DVector};
use std::collections::{BinaryHeap, HashMap};

use crate::code::{extract_bits, hamming_words, BinaryCode, WORD_BITS};
use crate::error::{Error, Result};

/// Per-bit weight table for one query: `w_i(+1) = m̂_i`, `w_i(−1) = −m̂_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryWeights {
    weights: Vec<f64>,
    neg_total: f64,
}

impl QueryWeights {
    pub fn bits(&self) -> usize {
        self.weights.len()
    }

    /// `m̂` itself; the `+1`-side weight of each bit.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn from_m_hat(weights: Vec<f64>) -> Self {
        let neg_total = -weights.iter().sum::<f64>();
        QueryWeights { weights, neg_total }
    }

    /// Score over raw packed words (tail bits must be zero).
    ///
    /// `Σᵢ ±m̂ᵢ` computed as `−Σm̂ + 2·Σ_{set bits} m̂`; the trailing `+ 0.0`
    /// folds a possible `−0.0` into `+0.0` so equal scores compare equal
    /// under `total_cmp` no matter which engine produced them.
    #[inline]
    pub fn score_words(&self, words: &[u64]) -> f64 {
        let mut acc = 0.0;
        for (w, &word) in words.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let i = w * WORD_BITS + bits.trailing_zeros() as usize;
                acc += self.weights[i];
                bits &= bits - 1;
            }
        }
        self.neg_total + 2.0 * acc + 0.0
    }
}

/// `m̂ = Mᵀq`, folded into a weight table.
pub fn query_weights(m: &DMatrix<f64>, q: &DVector<f64>) -> Result<QueryWeights> {
    if q.len() != m.nrows() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: q.len(),
        });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "query vector" });
    }
    let m_hat = m.tr_mul(q);
    Ok(QueryWeights::from_m_hat(m_hat.as_slice().to_vec()))
}

/// Weighted-Hamming score of one code: equals `qᵀMx̃` for the query that
/// produced `w`.
pub fn score(w: &QueryWeights, code: &BinaryCode) -> Result<f64> {
    if code.len() != w.bits() {
        return Err(Error::CodeLengthMismatch {
            left: w.bits(),
            right: code.len(),
        });
    }
    Ok(w.score_words(code.words()))
}

/// One retrieval result. For similarity engines `score` is the (higher =
/// better) similarity; for the Hamming engine it is the distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub id: u32,
    pub score: f64,
}

/// Append-only store of codes with record ids and (evaluation-only) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeDatabase {
    bits: usize,
    words_per_code: usize,
    words: Vec<u64>,
    ids: Vec<u32>,
    labels: Vec<Vec<u32>>,
}

impl CodeDatabase {
    pub fn new(bits: usize) -> Self {
        CodeDatabase {
            bits,
            words_per_code: BinaryCode::words_for(bits),
            words: Vec::new(),
            ids: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Rebuilds a database from persisted parts.
    pub fn from_parts(
        bits: usize,
        words: Vec<u64>,
        ids: Vec<u32>,
        labels: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let wpc = BinaryCode::words_for(bits);
        if ids.len() != labels.len() || words.len() != ids.len() * wpc {
            return Err(Error::Incompatible(format!(
                "database sections disagree: {} ids, {} label sets, {} words",
                ids.len(),
                labels.len(),
                words.len()
            )));
        }
        let tail = bits % WORD_BITS;
        if wpc > 0 && tail != 0 {
            let mask = !((1u64 << tail) - 1);
            for (i, chunk) in words.chunks_exact(wpc).enumerate() {
                if chunk[wpc - 1] & mask != 0 {
                    return Err(Error::Incompatible(format!(
                        "record {i} has bits past code length {bits}"
                    )));
                }
            }
        }
        Ok(CodeDatabase {
            bits,
            words_per_code: wpc,
            words,
            ids,
            labels,
        })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Snapshot marker used for index staleness checks; advances on append.
    pub fn version(&self) -> u64 {
        self.ids.len() as u64
    }

    /// Stores a code and returns its record id (insertion order).
    pub fn append(&mut self, code: &BinaryCode, labels: &[u32]) -> Result<u32> {
        if code.len() != self.bits {
            return Err(Error::CodeLengthMismatch {
                left: self.bits,
                right: code.len(),
            });
        }
        let id = self.ids.len() as u32;
        self.words.extend_from_slice(code.words());
        self.ids.push(id);
        let mut ls = labels.to_vec();
        ls.sort_unstable();
        ls.dedup();
        self.labels.push(ls);
        Ok(id)
    }

    pub fn id(&self, pos: usize) -> u32 {
        self.ids[pos]
    }

    pub fn code_words(&self, pos: usize) -> &[u64] {
        &self.words[pos * self.words_per_code..(pos + 1) * self.words_per_code]
    }

    pub fn code(&self, pos: usize) -> BinaryCode {
        BinaryCode::from_words(self.code_words(pos).to_vec(), self.bits)
            .expect("stored codes are always valid")
    }

    pub fn labels(&self, pos: usize) -> &[u32] {
        &self.labels[pos]
    }

    pub fn all_words(&self) -> &[u64] {
        &self.words
    }

    pub fn all_ids(&self) -> &[u32] {
        &self.ids
    }
}

/// Better-first ordering: descending score, then ascending id.
fn hit_before(a: &SearchHit, b: &SearchHit) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

fn sort_and_truncate(mut hits: Vec<SearchHit>, k: usize) -> Vec<SearchHit> {
    hits.sort_unstable_by(hit_before);
    hits.truncate(k);
    hits
}

/// Exhaustive weighted scan; top-K by descending score, ties by ascending
/// id.
pub fn linear_scan_topk(w: &QueryWeights, db: &CodeDatabase, k: usize) -> Result<Vec<SearchHit>> {
    if w.bits() != db.bits() {
        return Err(Error::CodeLengthMismatch {
            left: w.bits(),
            right: db.bits(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let hits: Vec<SearchHit> = (0..db.len())
        .map(|pos| SearchHit {
            id: db.id(pos),
            score: w.score_words(db.code_words(pos)),
        })
        .collect();
    Ok(sort_and_truncate(hits, k))
}

/// Plain Hamming baseline: top-K by ascending distance, ties by ascending
/// id. `score` carries the distance.
pub fn hamming_topk(query: &BinaryCode, db: &CodeDatabase, k: usize) -> Result<Vec<SearchHit>> {
    if query.len() != db.bits() {
        return Err(Error::CodeLengthMismatch {
            left: query.len(),
            right: db.bits(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut keyed: Vec<(u32, u32)> = (0..db.len())
        .map(|pos| (hamming_words(query.words(), db.code_words(pos)), db.id(pos)))
        .collect();
    keyed.sort_unstable();
    keyed.truncate(k);
    Ok(keyed
        .into_iter()
        .map(|(d, id)| SearchHit { id, score: d as f64 })
        .collect())
}

/// `q̃ᵀ M̃ x̃` over `{−1,+1}` vectors — the symmetric-variant score.
pub fn symmetric_score(m: &DMatrix<f64>, q: &BinaryCode, x: &BinaryCode) -> Result<f64> {
    if m.nrows() != q.len() || m.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: q.len(),
        });
    }
    let mut total = 0.0;
    for j in 0..x.len() {
        let mut col = 0.0;
        for i in 0..q.len() {
            col += q.sign(i) * m[(i, j)];
        }
        total += col * x.sign(j);
    }
    Ok(total)
}

struct Segment {
    lo: usize,
    len: usize,
    /// substring value → record positions, ascending.
    table: HashMap<u64, Vec<u32>>,
}

/// Inverted tables over `m` contiguous substrings of the code.
pub struct MultiIndex {
    bits: usize,
    built_at: u64,
    segments: Vec<Segment>,
}

impl MultiIndex {
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    /// `(lo, len)` of each substring.
    pub fn boundaries(&self) -> Vec<(usize, usize)> {
        self.segments.iter().map(|s| (s.lo, s.len)).collect()
    }

    /// Posting list for a substring value, if present.
    pub fn postings(&self, segment: usize, value: u64) -> Option<&[u32]> {
        self.segments[segment].table.get(&value).map(|v| v.as_slice())
    }
}

/// Default substring count for a code length: one per ~8 bits.
pub fn default_segments(bits: usize) -> usize {
    ((bits as f64 / 8.0).round() as usize).max(1)
}

/// Partitions `b` bits into `m` contiguous substrings (lengths differ by at
/// most one) and indexes every stored code.
pub fn build_multi_index(db: &CodeDatabase, m: usize) -> Result<MultiIndex> {
    if m == 0 || m > db.bits() {
        return Err(Error::InvalidConfig(format!(
            "substring count must be in 1..={}, got {m}",
            db.bits()
        )));
    }
    let base = db.bits() / m;
    let extra = db.bits() % m;
    let mut segments = Vec::with_capacity(m);
    let mut lo = 0;
    for j in 0..m {
        let len = base + usize::from(j < extra);
        segments.push(Segment {
            lo,
            len,
            table: HashMap::new(),
        });
        lo += len;
    }
    for pos in 0..db.len() {
        let words = db.code_words(pos);
        for seg in segments.iter_mut() {
            let value = extract_bits(words, seg.lo, seg.len);
            seg.table.entry(value).or_default().push(pos as u32);
        }
    }
    Ok(MultiIndex {
        bits: db.bits(),
        built_at: db.version(),
        segments,
    })
}

/// One segment's probing state: present substring values sorted by their
/// partial score, best first.
struct SegmentCursor<'a> {
    seg: &'a Segment,
    /// (partial score, value), descending by score.
    order: Vec<(f64, u64)>,
    next: usize,
}

impl SegmentCursor<'_> {
    fn bound(&self) -> Option<f64> {
        self.order.get(self.next).map(|&(p, _)| p)
    }
}

/// Worst-kept entry ordering for the top-K heap: the maximum element is the
/// candidate that would be evicted first.
#[derive(PartialEq)]
struct WorstFirst(SearchHit);

impl Eq for WorstFirst {}

impl Ord for WorstFirst {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // `hit_before` puts better hits first, so the heap max is the worst
        // kept hit — exactly the K-th best.
        hit_before(&self.0, &other.0)
    }
}

impl PartialOrd for WorstFirst {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact top-K through the multi-index; output is identical to
/// `linear_scan_topk` on the snapshot the index was built from.
///
/// Probing is a threshold scheme: each segment enumerates its *present*
/// substring values best-first, the sum of per-segment frontier scores
/// bounds every unseen code's score from above, and the search stops once
/// the current K-th best strictly beats that bound (strictly, so tied
/// candidates can never be cut off). Exhausting any one segment means every
/// stored code has been probed.
pub fn multi_index_topk(
    idx: &MultiIndex,
    w: &QueryWeights,
    db: &CodeDatabase,
    k: usize,
) -> Result<Vec<SearchHit>> {
    if idx.built_at != db.version() {
        return Err(Error::StaleIndex {
            indexed: idx.built_at,
            current: db.version(),
        });
    }
    if w.bits() != db.bits() || idx.bits != db.bits() {
        return Err(Error::CodeLengthMismatch {
            left: w.bits(),
            right: db.bits(),
        });
    }
    if k == 0 || db.is_empty() {
        return Ok(Vec::new());
    }

    // Partial score of a substring value: same ±m̂ sum restricted to the
    // segment's bits.
    let mut cursors: Vec<SegmentCursor> = Vec::with_capacity(idx.segments.len());
    for seg in &idx.segments {
        let seg_neg: f64 = -w.weights()[seg.lo..seg.lo + seg.len].iter().sum::<f64>();
        let mut order: Vec<(f64, u64)> = seg
            .table
            .keys()
            .map(|&value| {
                let mut acc = 0.0;
                let mut bits = value;
                while bits != 0 {
                    acc += w.weights()[seg.lo + bits.trailing_zeros() as usize];
                    bits &= bits - 1;
                }
                (seg_neg + 2.0 * acc, value)
            })
            .collect();
        order.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        cursors.push(SegmentCursor { seg, order, next: 0 });
    }

    // Rounding slack so the float bound can never dip below a true score.
    let scale: f64 = w.weights().iter().map(|x| x.abs()).sum();
    let slack = 1e-12 * (1.0 + scale);

    let mut seen = vec![false; db.len()];
    let mut hits: Vec<SearchHit> = Vec::new();
    let mut worst_of_best: BinaryHeap<WorstFirst> = BinaryHeap::new();

    loop {
        // Upper bound on any not-yet-seen code: sum of frontier partials.
        let mut bound = 0.0;
        let mut exhausted = false;
        for cur in &cursors {
            match cur.bound() {
                Some(p) => bound += p,
                None => {
                    exhausted = true;
                    break;
                }
            }
        }
        if exhausted {
            // Every value of some segment was probed, so every code is in
            // `hits` already.
            break;
        }
        if worst_of_best.len() == k {
            let kth = worst_of_best.peek().unwrap().0.score;
            if kth > bound + slack {
                break;
            }
        }

        // Advance the segment with the best frontier so the bound drops
        // fastest.
        let best = cursors
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.bound()
                    .unwrap()
                    .total_cmp(&b.bound().unwrap())
            })
            .map(|(j, _)| j)
            .unwrap();
        let cur = &mut cursors[best];
        let (_, value) = cur.order[cur.next];
        cur.next += 1;
        for &pos in &cur.seg.table[&value] {
            let pos = pos as usize;
            if seen[pos] {
                continue;
            }
            seen[pos] = true;
            let hit = SearchHit {
                id: db.id(pos),
                score: w.score_words(db.code_words(pos)),
            };
            hits.push(hit);
            if worst_of_best.len() < k {
                worst_of_best.push(WorstFirst(hit));
            } else if hit_before(&hit, &worst_of_best.peek().unwrap().0).is_lt() {
                worst_of_best.pop();
                worst_of_best.push(WorstFirst(hit));
            }
        }
    }

    Ok(sort_and_truncate(hits, k))
}
