//! Fixed linear hash functions trained once with ITQ.
//!
//! Training mean-centers a bootstrap sample, projects onto the top
//! principal directions, then alternates the two ITQ steps — binarize
//! (`B = sgn(VR)`) and re-rotate (orthogonal Procrustes) — to minimize the
//! quantization error `‖B - VR‖²_F`. The resulting model is frozen: the
//! online learner later adapts similarity over these codes, never the codes
//! themselves.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::code::BinaryCode;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ItqConfig {
    /// Code length in bits.
    pub bits: usize,
    /// Alternation rounds; 50 is enough for the error curve to flatten.
    pub iterations: usize,
    /// Seed for the random initial rotation.
    pub seed: u64,
}

impl ItqConfig {
    pub fn new(bits: usize) -> Self {
        ItqConfig {
            bits,
            iterations: 50,
            seed: 0,
        }
    }
}

/// A frozen linear hash `x ↦ sgn(Pᵀx + t)` with `sgn(0) = +1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    projection: DMatrix<f64>, // D x b, orthonormal columns
    bias: DVector<f64>,       // b
}

impl HashModel {
    /// Rebuilds a model from raw parameters (e.g. read back from disk).
    pub fn from_parts(projection: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if projection.ncols() != bias.len() {
            return Err(Error::DimensionMismatch {
                expected: projection.ncols(),
                got: bias.len(),
            });
        }
        if projection.iter().any(|v| !v.is_finite()) || bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "hash model parameters",
            });
        }
        Ok(HashModel { projection, bias })
    }

    pub fn bits(&self) -> usize {
        self.projection.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    /// Hashes one point to its binary code.
    pub fn encode(&self, x: &DVector<f64>) -> Result<BinaryCode> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut z = self.projection.tr_mul(x);
        z += &self.bias;
        Ok(BinaryCode::from_signs(z.as_slice()))
    }

    pub fn encode_all(&self, points: &[DVector<f64>]) -> Result<Vec<BinaryCode>> {
        points.iter().map(|x| self.encode(x)).collect()
    }
}

/// Training output with the per-iteration quantization error curve kept
/// around for inspection.
#[derive(Debug, Clone)]
pub struct ItqReport {
    pub model: HashModel,
    /// Final rotation applied to the PCA projection.
    pub rotation: DMatrix<f64>,
    /// `‖B - VR‖²_F` at each iteration, before that iteration's re-rotation.
    pub quantization_errors: Vec<f64>,
}

pub fn train_itq(sample: &[DVector<f64>], config: &ItqConfig) -> Result<HashModel> {
    train_itq_report(sample, config).map(|r| r.model)
}

pub fn train_itq_report(sample: &[DVector<f64>], config: &ItqConfig) -> Result<ItqReport> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: n });
    }
    let dim = sample[0].len();
    let bits = config.bits;
    if bits == 0 {
        return Err(Error::InvalidConfig("code length must be positive".to_string()));
    }
    if bits > dim {
        return Err(Error::RankDeficient {
            bits,
            detail: format!("input dimension {dim} cannot carry {bits} principal directions"),
        });
    }
    for x in sample {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "itq training sample",
            });
        }
    }

    let mut mean = DVector::zeros(dim);
    for x in sample {
        mean += x;
    }
    mean /= n as f64;

    let mut centered = DMatrix::zeros(n, dim);
    for (i, x) in sample.iter().enumerate() {
        centered.row_mut(i).copy_from(&(x - &mean).transpose());
    }

    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut pca = DMatrix::zeros(dim, bits);
    for (j, &idx) in order.iter().take(bits).enumerate() {
        pca.column_mut(j).copy_from(&eig.eigenvectors.column(idx));
    }

    let projected = &centered * &pca; // n x b

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let gauss = DMatrix::from_fn(bits, bits, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut rotation = gauss.qr().q();

    let mut errors = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let z = &projected * &rotation;
        let binary = z.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        errors.push((&binary - &z).norm_squared());

        let m = projected.tr_mul(&binary);
        let svd = m.svd(true, true);
        rotation = svd.u.unwrap() * svd.v_t.unwrap();
    }

    let projection = &pca * &rotation; // D x b, orthonormal columns
    let bias = -projection.tr_mul(&mean);
    Ok(ItqReport {
        model: HashModel { projection, bias },
        rotation,
        quantization_errors: errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gaussian_sample(n: usize, dim: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    #[test]
    fn rotation_and_projection_are_orthonormal() {
        let sample = gaussian_sample(400, 24, 1);
        let report = train_itq_report(&sample, &ItqConfig::new(16)).unwrap();
        let ri = report.rotation.tr_mul(&report.rotation);
        assert_abs_diff_eq!(ri, DMatrix::identity(16, 16), epsilon = 1e-10);
        let p = report.model.projection();
        assert_abs_diff_eq!(p.tr_mul(p), DMatrix::identity(16, 16), epsilon = 1e-10);
    }

    #[test]
    fn quantization_error_never_increases() {
        let sample = gaussian_sample(300, 32, 2);
        let report = train_itq_report(&sample, &ItqConfig::new(16)).unwrap();
        assert_eq!(report.quantization_errors.len(), 50);
        for w in report.quantization_errors.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-12) + 1e-9,
                "error went up: {} -> {}",
                w[0],
                w[1]
            );
        }
        // The alternation must actually improve over the random start.
        let first = report.quantization_errors[0];
        let last = *report.quantization_errors.last().unwrap();
        assert!(last < first);
    }

    #[test]
    fn encode_matches_naive_projection() {
        let sample = gaussian_sample(200, 12, 3);
        let model = train_itq(&sample, &ItqConfig::new(8)).unwrap();
        let x = &sample[17];
        let code = model.encode(x).unwrap();
        for j in 0..8 {
            let mut z = model.bias()[j];
            for i in 0..12 {
                z += model.projection()[(i, j)] * x[i];
            }
            assert_eq!(code.get(j), z >= 0.0, "bit {j}");
        }
    }

    #[test]
    fn bits_are_roughly_balanced_on_centered_data() {
        let sample = gaussian_sample(1000, 16, 4);
        let model = train_itq(&sample, &ItqConfig::new(8)).unwrap();
        let codes = model.encode_all(&sample).unwrap();
        for j in 0..8 {
            let plus = codes.iter().filter(|c| c.get(j)).count();
            assert!(
                (200..=800).contains(&plus),
                "bit {j} is badly unbalanced: {plus}/1000"
            );
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let sample = gaussian_sample(150, 10, 5);
        let a = train_itq(&sample, &ItqConfig::new(6)).unwrap();
        let b = train_itq(&sample, &ItqConfig::new(6)).unwrap();
        assert_eq!(a.projection(), b.projection());
        assert_eq!(a.bias(), b.bias());

        let mut other_seed = ItqConfig::new(6);
        other_seed.seed = 99;
        let c = train_itq(&sample, &other_seed).unwrap();
        assert_ne!(a.projection(), c.projection());
    }

    #[test]
    fn rejects_bad_inputs() {
        let sample = gaussian_sample(20, 4, 6);
        assert!(matches!(
            train_itq(&sample, &ItqConfig::new(5)),
            Err(Error::RankDeficient { bits: 5, .. })
        ));
        assert!(matches!(
            train_itq(&sample[..1], &ItqConfig::new(2)),
            Err(Error::InsufficientSample { .. })
        ));

        let mut with_nan = sample.clone();
        with_nan[3][2] = f64::NAN;
        assert!(matches!(
            train_itq(&with_nan, &ItqConfig::new(2)),
            Err(Error::NonFinite { .. })
        ));

        let model = train_itq(&sample, &ItqConfig::new(4)).unwrap();
        assert!(matches!(
            model.encode(&DVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
