//! Synthetic multi-label datasets.
//!
//! Each class owns a Gaussian prototype; a point picks one to three classes,
//! sums their prototypes, and adds isotropic noise. Points sharing a class
//! are near each other along that prototype's direction, which gives the
//! label-overlap ground truth real geometric meaning.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Feature vectors with per-point label sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<DVector<f64>>,
    pub labels: Vec<Vec<u32>>,
    pub num_classes: usize,
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Splits off the last `n` points (e.g. as a query set).
    pub fn split_tail(mut self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::InsufficientSample {
                needed: n,
                got: self.len(),
            });
        }
        let at = self.len() - n;
        let tail_features = self.features.split_off(at);
        let tail_labels = self.labels.split_off(at);
        let tail = Dataset {
            features: tail_features,
            labels: tail_labels,
            num_classes: self.num_classes,
            dim: self.dim,
        };
        Ok((self, tail))
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub points: usize,
    /// Inclusive range of labels per point.
    pub min_labels: usize,
    pub max_labels: usize,
    /// Isotropic noise scale added on top of the prototype sum.
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(num_classes: usize, dim: usize, points: usize) -> Self {
        SynthConfig {
            num_classes,
            dim,
            points,
            min_labels: 1,
            max_labels: 3,
            noise: 0.3,
            seed: 0,
        }
    }
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.num_classes < 2 {
        return Err(Error::InvalidConfig(
            "synthetic data needs at least 2 classes".to_string(),
        ));
    }
    if cfg.dim < 8 {
        return Err(Error::InvalidConfig(
            "synthetic data needs dim >= 8".to_string(),
        ));
    }
    if cfg.min_labels < 1
        || cfg.min_labels > cfg.max_labels
        || cfg.max_labels > cfg.num_classes
    {
        return Err(Error::InvalidConfig(format!(
            "label count range {}..={} is invalid for {} classes",
            cfg.min_labels, cfg.max_labels, cfg.num_classes
        )));
    }
    if !cfg.noise.is_finite() || cfg.noise < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "noise scale must be finite and non-negative, got {}",
            cfg.noise
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let prototypes: Vec<DVector<f64>> = (0..cfg.num_classes)
        .map(|_| DVector::from_fn(cfg.dim, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();

    let mut features = Vec::with_capacity(cfg.points);
    let mut labels = Vec::with_capacity(cfg.points);
    for _ in 0..cfg.points {
        let count = rng.random_range(cfg.min_labels..=cfg.max_labels);
        let mut chosen: Vec<u32> = rand::seq::index::sample(&mut rng, cfg.num_classes, count)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        chosen.sort_unstable();
        let mut x = DVector::zeros(cfg.dim);
        for &class in &chosen {
            x += &prototypes[class as usize];
        }
        if cfg.noise > 0.0 {
            for i in 0..cfg.dim {
                x[i] += cfg.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        features.push(x);
        labels.push(chosen);
    }

    Ok(Dataset {
        features,
        labels,
        num_classes: cfg.num_classes,
        dim: cfg.dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_is_fine() {
        let ds = synth_dataset(&SynthConfig::new(4, 8, 0)).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.num_classes, 4);
    }

    #[test]
    fn noiseless_single_label_points_are_prototypes() {
        let mut cfg = SynthConfig::new(5, 16, 200);
        cfg.min_labels = 1;
        cfg.max_labels = 1;
        cfg.noise = 0.0;
        let ds = synth_dataset(&cfg).unwrap();

        // Recover the prototypes as the distinct points of the dataset.
        for (x, ls) in ds.features.iter().zip(ds.labels.iter()) {
            assert_eq!(ls.len(), 1);
            // every other point with the same label is identical
            for (y, ls2) in ds.features.iter().zip(ds.labels.iter()) {
                if ls == ls2 {
                    assert_eq!(x, y);
                }
            }
        }
    }

    #[test]
    fn nearest_prototype_recovers_a_label() {
        let ds = synth_dataset(&SynthConfig::new(8, 64, 2000)).unwrap();

        // Re-derive the prototypes from noiseless single-label generation
        // with the same seed (prototype draws precede point draws).
        let mut noiseless = SynthConfig::new(8, 64, 0);
        noiseless.seed = 0;
        let mut rng = ChaCha12Rng::seed_from_u64(noiseless.seed);
        let prototypes: Vec<DVector<f64>> = (0..8)
            .map(|_| DVector::from_fn(64, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();

        let mut correct = 0;
        for (x, ls) in ds.features.iter().zip(ds.labels.iter()) {
            let nearest = (0..8)
                .min_by(|&a, &b| {
                    (x - &prototypes[a])
                        .norm_squared()
                        .total_cmp(&(x - &prototypes[b]).norm_squared())
                })
                .unwrap() as u32;
            if ls.contains(&nearest) {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / ds.len() as f64;
        assert!(accuracy > 0.9, "nearest-prototype accuracy {accuracy}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_dataset(&SynthConfig::new(4, 12, 50)).unwrap();
        let b = synth_dataset(&SynthConfig::new(4, 12, 50)).unwrap();
        assert_eq!(a, b);
        let mut other = SynthConfig::new(4, 12, 50);
        other.seed = 1;
        assert_ne!(synth_dataset(&other).unwrap(), a);
    }

    #[test]
    fn labels_are_sorted_distinct_and_in_range() {
        let ds = synth_dataset(&SynthConfig::new(6, 10, 300)).unwrap();
        for ls in &ds.labels {
            assert!(!ls.is_empty() && ls.len() <= 3);
            assert!(ls.windows(2).all(|w| w[0] < w[1]));
            assert!(ls.iter().all(|&c| c < 6));
        }
    }

    #[test]
    fn split_tail_partitions() {
        let ds = synth_dataset(&SynthConfig::new(4, 8, 100)).unwrap();
        let full = ds.clone();
        let (head, tail) = ds.split_tail(30).unwrap();
        assert_eq!(head.len(), 70);
        assert_eq!(tail.len(), 30);
        assert_eq!(head.features[0], full.features[0]);
        assert_eq!(tail.features[0], full.features[70]);
        assert!(matches!(
            full.split_tail(101),
            Err(Error::InsufficientSample { .. })
        ));
    }

    #[test]
    fn config_preconditions() {
        assert!(synth_dataset(&SynthConfig::new(1, 8, 10)).is_err());
        assert!(synth_dataset(&SynthConfig::new(4, 7, 10)).is_err());
        let mut bad = SynthConfig::new(4, 8, 10);
        bad.max_labels = 5;
        assert!(synth_dataset(&bad).is_err());
    }
}
