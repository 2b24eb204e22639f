//! The chunked streaming protocol.
//!
//! A run freezes the hash on the first `init_sample` points, encodes and
//! stores every point, then streams the points in chunk-sized rounds
//! through the learner. Retrieval quality is measured against the full
//! code database at scheduled points of the stream; learner wall-time is
//! accounted per chunk, which is what makes the constant-per-chunk cost
//! claim checkable.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::eval::data::Dataset;
use crate::eval::metrics::{average_precision, GroundTruth};
use crate::hash::{train_itq, HashModel, ItqConfig};
use crate::learner::{NormExponent, SimilarityKind, SimilarityModel};
use crate::search::{hamming_topk, linear_scan_topk, query_weights, CodeDatabase, QueryWeights};
use crate::target::TargetCodebook;

#[derive(Debug, Clone)]
pub struct StreamConfig {
    /// Hash code length b.
    pub bits: usize,
    /// Target-code length l.
    pub target_len: usize,
    /// PA aggressiveness C.
    pub aggressiveness: f64,
    /// Points per transport chunk.
    pub chunk_size: usize,
    /// Points used to train the hash functions up front.
    pub init_sample: usize,
    /// Stream positions (points seen) at which to measure mAP.
    pub eval_schedule: Vec<usize>,
    pub seed: u64,
    pub kind: SimilarityKind,
    pub norm_exponent: NormExponent,
    pub itq_iterations: usize,
    /// When set, adds this modeled transfer cost (ms per point) to every
    /// reported timing.
    pub io_ms_per_point: Option<f64>,
}

impl StreamConfig {
    /// Standard defaults: l = 3b, C = 0.01, chunks of 1000, 300 bootstrap
    /// points.
    pub fn new(bits: usize) -> Self {
        StreamConfig {
            bits,
            target_len: 3 * bits,
            aggressiveness: 0.01,
            chunk_size: 1000,
            init_sample: 300,
            eval_schedule: Vec::new(),
            seed: 0,
            kind: SimilarityKind::Asymmetric,
            norm_exponent: NormExponent::Two,
            itq_iterations: 50,
            io_ms_per_point: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.chunk_size < 1 {
            return Err(Error::InvalidConfig("chunk_size must be >= 1".to_string()));
        }
        if self.init_sample < self.bits {
            return Err(Error::InvalidConfig(format!(
                "init_sample {} cannot pin down {} hash bits",
                self.init_sample, self.bits
            )));
        }
        if self.target_len < 1 {
            return Err(Error::InvalidConfig("target_len must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// One scheduled measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    /// Points streamed when the measurement was taken.
    pub checkpoint: usize,
    /// Chunk the measurement falls in (0-based, by arrival).
    pub chunk_index: usize,
    pub map: f64,
    /// Cumulative learner wall-time, ms.
    pub cum_learn_ms: f64,
    /// Learner wall-time of the last completed chunk, ms (0 before any).
    pub per_chunk_ms: f64,
}

/// Everything a stream run produces.
pub struct StreamOutcome {
    pub checkpoints: Vec<CheckpointRecord>,
    /// Learner wall-time per completed chunk, ms.
    pub per_chunk_ms: Vec<f64>,
    /// Scheduled positions beyond the stream length, reported and skipped.
    pub skipped_checkpoints: Vec<usize>,
    pub hash: HashModel,
    pub codebook: TargetCodebook,
    pub model: SimilarityModel,
    pub db: CodeDatabase,
}

fn max_class(labels: &[Vec<u32>]) -> Option<u32> {
    labels.iter().flatten().copied().max()
}

/// Weight table for one query under the current model: raw features for the
/// asymmetric kind, the query's own code for the symmetric kind.
fn weights_for_query(
    model: &SimilarityModel,
    hash: &HashModel,
    q: &DVector<f64>,
) -> Result<QueryWeights> {
    match model.kind() {
        SimilarityKind::Asymmetric => query_weights(model.m(), q),
        SimilarityKind::Symmetric => {
            let code = hash.encode(q)?;
            query_weights(model.m(), &DVector::from_vec(code.to_signs()))
        }
    }
}

fn map_over_db(
    model: &SimilarityModel,
    hash: &HashModel,
    db: &CodeDatabase,
    queries: &Dataset,
    gt: &GroundTruth,
) -> Result<f64> {
    let aps: Vec<Result<Option<f64>>> = queries
        .features
        .par_iter()
        .enumerate()
        .map(|(qi, q)| {
            let rel = gt.relevant(qi);
            if rel.is_empty() {
                return Ok(None);
            }
            let w = weights_for_query(model, hash, q)?;
            let hits = linear_scan_topk(&w, db, db.len())?;
            let ranking: Vec<u32> = hits.iter().map(|h| h.id).collect();
            Ok(Some(average_precision(&ranking, rel)))
        })
        .collect();

    let mut sum = 0.0;
    let mut counted = 0usize;
    for ap in aps {
        if let Some(v) = ap? {
            sum += v;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::DegenerateInput);
    }
    Ok(sum / counted as f64)
}

/// Plain-Hamming mAP on the same codes (no learning involved).
fn hamming_map(
    hash: &HashModel,
    db: &CodeDatabase,
    queries: &Dataset,
    gt: &GroundTruth,
) -> Result<f64> {
    let aps: Vec<Result<Option<f64>>> = queries
        .features
        .par_iter()
        .enumerate()
        .map(|(qi, q)| {
            let rel = gt.relevant(qi);
            if rel.is_empty() {
                return Ok(None);
            }
            let code = hash.encode(q)?;
            let hits = hamming_topk(&code, db, db.len())?;
            let ranking: Vec<u32> = hits.iter().map(|h| h.id).collect();
            Ok(Some(average_precision(&ranking, rel)))
        })
        .collect();
    let mut sum = 0.0;
    let mut counted = 0usize;
    for ap in aps {
        if let Some(v) = ap? {
            sum += v;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::DegenerateInput);
    }
    Ok(sum / counted as f64)
}

/// Runs the streaming protocol. `queries` may be omitted only when the
/// schedule is empty; dataset and queries must be disjoint point sets.
pub fn run_stream(
    cfg: &StreamConfig,
    dataset: &Dataset,
    queries: Option<&Dataset>,
) -> Result<StreamOutcome> {
    cfg.validate()?;
    if dataset.len() < cfg.init_sample {
        return Err(Error::InsufficientSample {
            needed: cfg.init_sample,
            got: dataset.len(),
        });
    }
    let mut schedule: Vec<usize> = cfg.eval_schedule.clone();
    schedule.sort_unstable();
    schedule.dedup();
    let skipped_checkpoints: Vec<usize> =
        schedule.iter().copied().filter(|&p| p > dataset.len()).collect();
    schedule.retain(|&p| p <= dataset.len());
    if !schedule.is_empty() && queries.is_none() {
        return Err(Error::InvalidConfig(
            "an eval schedule needs a query set".to_string(),
        ));
    }
    if let Some(qs) = queries {
        if qs.dim != dataset.dim {
            return Err(Error::DimensionMismatch {
                expected: dataset.dim,
                got: qs.dim,
            });
        }
    }

    let hash = train_itq(
        &dataset.features[..cfg.init_sample],
        &ItqConfig {
            bits: cfg.bits,
            iterations: cfg.itq_iterations,
            seed: cfg.seed,
        },
    )?;

    let classes_seen = max_class(&dataset.labels)
        .map(|c| c as usize + 1)
        .unwrap_or(0)
        .max(dataset.num_classes)
        .max(1);
    let codebook = TargetCodebook::new(classes_seen, cfg.target_len, cfg.seed)?;
    let mut model = match cfg.kind {
        SimilarityKind::Asymmetric => {
            SimilarityModel::new(cfg.target_len, dataset.dim, cfg.bits, cfg.aggressiveness)?
        }
        SimilarityKind::Symmetric => {
            SimilarityModel::new_symmetric(cfg.target_len, cfg.bits, cfg.aggressiveness)?
        }
    }
    .with_norm_exponent(cfg.norm_exponent);

    // Codes are frozen the moment the hash is trained, so the whole
    // database can be materialized in arrival order up front.
    let mut db = CodeDatabase::new(cfg.bits);
    for (x, ls) in dataset.features.iter().zip(dataset.labels.iter()) {
        let code = hash.encode(x)?;
        db.append(&code, ls)?;
    }

    let gt = queries.map(|qs| GroundTruth::build(&qs.labels, &dataset.labels));

    let io_ms = cfg.io_ms_per_point.unwrap_or(0.0);
    let mut checkpoints = Vec::with_capacity(schedule.len());
    let mut per_chunk_ms: Vec<f64> = Vec::new();
    let mut chunk_ms = 0.0;
    let mut chunk_points = 0usize;
    let mut cum_ms = 0.0;
    let mut next_eval = 0usize;

    // A zero-position checkpoint measures the untrained model.
    while next_eval < schedule.len() && schedule[next_eval] == 0 {
        let map = map_over_db(&model, &hash, &db, queries.unwrap(), gt.as_ref().unwrap())?;
        checkpoints.push(CheckpointRecord {
            checkpoint: 0,
            chunk_index: 0,
            map,
            cum_learn_ms: 0.0,
            per_chunk_ms: 0.0,
        });
        next_eval += 1;
    }

    for (i, (x, ls)) in dataset.features.iter().zip(dataset.labels.iter()).enumerate() {
        if !ls.is_empty() {
            let start = Instant::now();
            model.observe(x, ls, &hash, &codebook)?;
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            chunk_ms += elapsed;
            cum_ms += elapsed;
        }
        chunk_ms += io_ms;
        cum_ms += io_ms;
        chunk_points += 1;

        let seen = i + 1;
        if chunk_points == cfg.chunk_size || seen == dataset.len() {
            per_chunk_ms.push(chunk_ms);
            chunk_ms = 0.0;
            chunk_points = 0;
        }
        while next_eval < schedule.len() && schedule[next_eval] == seen {
            let map = map_over_db(&model, &hash, &db, queries.unwrap(), gt.as_ref().unwrap())?;
            checkpoints.push(CheckpointRecord {
                checkpoint: seen,
                chunk_index: i / cfg.chunk_size,
                map,
                cum_learn_ms: cum_ms,
                per_chunk_ms: per_chunk_ms.last().copied().unwrap_or(0.0),
            });
            next_eval += 1;
        }
    }

    Ok(StreamOutcome {
        checkpoints,
        per_chunk_ms,
        skipped_checkpoints,
        hash,
        codebook,
        model,
        db,
    })
}

/// Grid for [`compare_variants`].
#[derive(Debug, Clone)]
pub struct VariantGrid {
    pub c_values: Vec<f64>,
    pub l_multipliers: Vec<usize>,
}

impl Default for VariantGrid {
    fn default() -> Self {
        VariantGrid {
            c_values: vec![0.001, 0.01, 0.1, 1.0],
            l_multipliers: vec![1, 2, 3, 4],
        }
    }
}

/// Final mAP of each variant on a shared hash/database/seed.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantReport {
    /// Plain Hamming ranking on the same codes.
    pub hamming_map: f64,
    /// Default asymmetric learner at the configured C and l.
    pub asymmetric_map: f64,
    /// Symmetric learner at the configured C and l.
    pub symmetric_map: f64,
    /// (C, mAP) rows, asymmetric, configured l.
    pub c_sweep: Vec<(f64, f64)>,
    /// (l multiplier, mAP) rows, asymmetric, configured C.
    pub l_sweep: Vec<(usize, f64)>,
}

/// Trains every variant over the identical stream and reports final mAP.
/// The hash model, codes, and ground truth are shared across variants; only
/// the learner differs.
pub fn compare_variants(
    cfg: &StreamConfig,
    dataset: &Dataset,
    queries: &Dataset,
    grid: &VariantGrid,
) -> Result<VariantReport> {
    cfg.validate()?;
    if dataset.len() < cfg.init_sample {
        return Err(Error::InsufficientSample {
            needed: cfg.init_sample,
            got: dataset.len(),
        });
    }

    let hash = train_itq(
        &dataset.features[..cfg.init_sample],
        &ItqConfig {
            bits: cfg.bits,
            iterations: cfg.itq_iterations,
            seed: cfg.seed,
        },
    )?;
    let mut db = CodeDatabase::new(cfg.bits);
    for (x, ls) in dataset.features.iter().zip(dataset.labels.iter()) {
        db.append(&hash.encode(x)?, ls)?;
    }
    let gt = GroundTruth::build(&queries.labels, &dataset.labels);
    let classes_seen = max_class(&dataset.labels)
        .map(|c| c as usize + 1)
        .unwrap_or(0)
        .max(dataset.num_classes)
        .max(1);

    let train_and_eval = |kind: SimilarityKind, target_len: usize, c: f64| -> Result<f64> {
        let codebook = TargetCodebook::new(classes_seen, target_len, cfg.seed)?;
        let mut model = match kind {
            SimilarityKind::Asymmetric => {
                SimilarityModel::new(target_len, dataset.dim, cfg.bits, c)?
            }
            SimilarityKind::Symmetric => {
                SimilarityModel::new_symmetric(target_len, cfg.bits, c)?
            }
        }
        .with_norm_exponent(cfg.norm_exponent);
        for (x, ls) in dataset.features.iter().zip(dataset.labels.iter()) {
            if !ls.is_empty() {
                model.observe(x, ls, &hash, &codebook)?;
            }
        }
        map_over_db(&model, &hash, &db, queries, &gt)
    };

    let hamming = hamming_map(&hash, &db, queries, &gt)?;
    let asymmetric = train_and_eval(SimilarityKind::Asymmetric, cfg.target_len, cfg.aggressiveness)?;
    let symmetric = train_and_eval(SimilarityKind::Symmetric, cfg.target_len, cfg.aggressiveness)?;

    let mut c_sweep = Vec::with_capacity(grid.c_values.len());
    for &c in &grid.c_values {
        c_sweep.push((c, train_and_eval(SimilarityKind::Asymmetric, cfg.target_len, c)?));
    }
    let mut l_sweep = Vec::with_capacity(grid.l_multipliers.len());
    for &mult in &grid.l_multipliers {
        let map = train_and_eval(SimilarityKind::Asymmetric, mult * cfg.bits, cfg.aggressiveness)?;
        l_sweep.push((mult, map));
    }

    Ok(VariantReport {
        hamming_map: hamming,
        asymmetric_map: asymmetric,
        symmetric_map: symmetric,
        c_sweep,
        l_sweep,
    })
}

/// Per-chunk learner cost with a least-squares trend.
#[derive(Debug, Clone, PartialEq)]
pub struct CostProfile {
    pub per_chunk_ms: Vec<f64>,
    pub mean_ms: f64,
    /// Least-squares slope of chunk time against chunk index.
    pub slope_ms_per_chunk: f64,
}

fn least_squares_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    num / den
}

/// Streams the dataset (no retrieval measurements) and profiles per-chunk
/// learner cost.
pub fn update_cost_profile(cfg: &StreamConfig, dataset: &Dataset) -> Result<CostProfile> {
    if dataset.is_empty() {
        return Ok(CostProfile {
            per_chunk_ms: Vec::new(),
            mean_ms: 0.0,
            slope_ms_per_chunk: 0.0,
        });
    }
    let mut lean = cfg.clone();
    lean.eval_schedule.clear();
    let outcome = run_stream(&lean, dataset, None)?;
    let per_chunk_ms = outcome.per_chunk_ms;
    let mean_ms = per_chunk_ms.iter().sum::<f64>() / per_chunk_ms.len() as f64;
    let slope_ms_per_chunk = least_squares_slope(&per_chunk_ms);
    Ok(CostProfile {
        per_chunk_ms,
        mean_ms,
        slope_ms_per_chunk,
    })
}
