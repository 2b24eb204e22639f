//! Passive-aggressive learning of the bilinear similarity `M = UᵀV`.
//!
//! Each row pair `(u_k, v_k)` is an independent online binary classifier
//! for bit `k` of the target code: `u_k` sees the raw feature vector, `v_k`
//! sees the binary code of the same point. A row stays untouched while its
//! margin is met (passive) and otherwise takes the smallest step that lands
//! on the margin, capped by the aggressiveness bound `C`.

use nalgebra::{DMatrix, DVector};

use crate::code::BinaryCode;
use crate::error::{Error, Result};
use crate::hash::HashModel;
use crate::target::TargetCodebook;

/// Exponent of `‖x‖` in the step-size denominator `τ = min(C, loss/‖x‖^e)`.
///
/// `Two` is the standard PA-I step. `One` reproduces an alternative scaling
/// that turns up in some write-ups of the update; it is kept selectable so
/// both behaviours can be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormExponent {
    One,
    #[default]
    Two,
}

impl NormExponent {
    fn denominator(self, norm_sq: f64) -> f64 {
        match self {
            NormExponent::One => norm_sq.sqrt(),
            NormExponent::Two => norm_sq,
        }
    }
}

/// Which side of the similarity the `U` rows consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityKind {
    /// `U` sees raw feature vectors: `S(q, x̃) = qᵀMx̃`.
    #[default]
    Asymmetric,
    /// `U` sees binary codes too: `S(q̃, x̃) = q̃ᵀM̃x̃` with square `M̃`.
    Symmetric,
}

/// `max(0, 1 − g·(wᵀx))`.
pub fn hinge_loss(w: &DVector<f64>, x: &DVector<f64>, g: f64) -> f64 {
    (1.0 - g * w.dot(x)).max(0.0)
}

/// One PA step for a `U` row against the raw feature vector.
///
/// Zero loss returns the row unchanged; otherwise the row moves by
/// `τ·g·x` with `τ = min(C, loss/‖x‖^e)`. A zero feature vector cannot be
/// moved toward any margin and is reported as degenerate.
pub fn pa_update_u(
    u: &DVector<f64>,
    x: &DVector<f64>,
    g: f64,
    c: f64,
    exponent: NormExponent,
) -> Result<DVector<f64>> {
    let loss = hinge_loss(u, x, g);
    if loss == 0.0 {
        return Ok(u.clone());
    }
    let norm_sq = x.norm_squared();
    if norm_sq == 0.0 {
        return Err(Error::DegenerateInput);
    }
    let tau = c.min(loss / exponent.denominator(norm_sq));
    Ok(u + x * (tau * g))
}

/// One PA step for a `V` row against a binary code (`‖x̃‖² = b` exactly).
pub fn pa_update_v(
    v: &DVector<f64>,
    code: &BinaryCode,
    g: f64,
    c: f64,
    exponent: NormExponent,
) -> Result<DVector<f64>> {
    if v.len() != code.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            got: code.len(),
        });
    }
    let margin: f64 = g * (0..code.len()).map(|i| v[i] * code.sign(i)).sum::<f64>();
    let loss = (1.0 - margin).max(0.0);
    if loss == 0.0 {
        return Ok(v.clone());
    }
    let tau = c.min(loss / exponent.denominator(code.len() as f64));
    let mut out = v.clone();
    let tg = tau * g;
    for i in 0..code.len() {
        out[i] += code.sign(i) * tg;
    }
    Ok(out)
}

/// `M = UᵀV` (row counts must agree).
pub fn materialize_m(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.nrows() != v.nrows() {
        return Err(Error::DimensionMismatch {
            expected: u.nrows(),
            got: v.nrows(),
        });
    }
    Ok(u.tr_mul(v))
}

/// What one `observe` call did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObserveOutcome {
    /// `U` rows that took an aggressive step.
    pub updated_u: usize,
    /// `V` rows that took an aggressive step.
    pub updated_v: usize,
    /// The point's feature vector was zero, so the `U` side was skipped.
    pub skipped_degenerate: bool,
}

/// The online similarity model: `U` (l×D), `V` (l×b), cached `M = UᵀV`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityModel {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    m: DMatrix<f64>,
    c: f64,
    update_count: u64,
    kind: SimilarityKind,
    norm_exponent: NormExponent,
}

impl SimilarityModel {
    /// Fresh zero-initialized model for raw `D`-dimensional queries against
    /// `b`-bit codes, with `l` classifier rows.
    pub fn new(l: usize, d: usize, b: usize, c: f64) -> Result<Self> {
        if l == 0 || d == 0 || b == 0 {
            return Err(Error::InvalidConfig(
                "model dimensions must be positive".to_string(),
            ));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "aggressiveness C must be positive and finite, got {c}"
            )));
        }
        Ok(SimilarityModel {
            u: DMatrix::zeros(l, d),
            v: DMatrix::zeros(l, b),
            m: DMatrix::zeros(d, b),
            c,
            update_count: 0,
            kind: SimilarityKind::Asymmetric,
            norm_exponent: NormExponent::Two,
        })
    }

    /// Fresh model whose query side consumes binary codes (`D = b`).
    pub fn new_symmetric(l: usize, b: usize, c: f64) -> Result<Self> {
        let mut model = Self::new(l, b, b, c)?;
        model.kind = SimilarityKind::Symmetric;
        Ok(model)
    }

    pub fn with_norm_exponent(mut self, exponent: NormExponent) -> Self {
        self.norm_exponent = exponent;
        self
    }

    /// Rebuilds a model from persisted parameters; the `M` cache is
    /// recomputed rather than trusted.
    pub fn from_parts(
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        c: f64,
        update_count: u64,
        kind: SimilarityKind,
        norm_exponent: NormExponent,
    ) -> Result<Self> {
        if u.nrows() != v.nrows() {
            return Err(Error::DimensionMismatch {
                expected: u.nrows(),
                got: v.nrows(),
            });
        }
        if u.nrows() == 0 || u.ncols() == 0 || v.ncols() == 0 {
            return Err(Error::InvalidConfig(
                "model dimensions must be positive".to_string(),
            ));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "aggressiveness C must be positive and finite, got {c}"
            )));
        }
        if kind == SimilarityKind::Symmetric && u.ncols() != v.ncols() {
            return Err(Error::Incompatible(format!(
                "symmetric model must be square, got {}x{}",
                u.ncols(),
                v.ncols()
            )));
        }
        if u.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "similarity model parameters",
            });
        }
        let m = u.tr_mul(&v);
        Ok(SimilarityModel {
            u,
            v,
            m,
            c,
            update_count,
            kind,
            norm_exponent,
        })
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn query_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn code_bits(&self) -> usize {
        self.v.ncols()
    }

    pub fn aggressiveness(&self) -> f64 {
        self.c
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn norm_exponent(&self) -> NormExponent {
        self.norm_exponent
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// The cached `M = UᵀV`, refreshed at the end of every observe call.
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Immutable copy of `M` safe to hand to reader threads.
    pub fn snapshot_m(&self) -> DMatrix<f64> {
        self.m.clone()
    }

    /// Processes one labeled point: every `U` row takes a PA step against
    /// the feature vector, the point is hashed, every `V` row takes a PA
    /// step against the code, and the `M` cache is refreshed. Touches no
    /// stored code and costs `O(l·(D + b))` plus the cache product —
    /// independent of how many points the database holds.
    pub fn observe(
        &mut self,
        x: &DVector<f64>,
        labels: &[u32],
        hash: &HashModel,
        codebook: &TargetCodebook,
    ) -> Result<ObserveOutcome> {
        if codebook.len() != self.rows() {
            return Err(Error::Incompatible(format!(
                "codebook length {} != model rows {}",
                codebook.len(),
                self.rows()
            )));
        }
        if hash.bits() != self.code_bits() {
            return Err(Error::Incompatible(format!(
                "hash bits {} != model code bits {}",
                hash.bits(),
                self.code_bits()
            )));
        }
        if x.len() != hash.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: hash.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "observed feature vector",
            });
        }
        let expected_query_dim = match self.kind {
            SimilarityKind::Asymmetric => hash.input_dim(),
            SimilarityKind::Symmetric => hash.bits(),
        };
        if self.query_dim() != expected_query_dim {
            return Err(Error::Incompatible(format!(
                "model query dim {} does not fit {}-dim inputs",
                self.query_dim(),
                expected_query_dim
            )));
        }

        let target = codebook.target_for_labels(labels)?;
        let code = hash.encode(x)?;
        let u_input: DVector<f64> = match self.kind {
            SimilarityKind::Asymmetric => x.clone(),
            SimilarityKind::Symmetric => DVector::from_vec(code.to_signs()),
        };

        let mut outcome = ObserveOutcome {
            updated_u: 0,
            updated_v: 0,
            skipped_degenerate: false,
        };
        let norm_sq = u_input.norm_squared();
        if norm_sq == 0.0 {
            outcome.skipped_degenerate = true;
        } else {
            let denom = self.norm_exponent.denominator(norm_sq);
            for k in 0..self.rows() {
                let g = target.sign(k);
                let margin: f64 =
                    g * (0..u_input.len()).map(|j| self.u[(k, j)] * u_input[j]).sum::<f64>();
                let loss = (1.0 - margin).max(0.0);
                if loss == 0.0 {
                    continue;
                }
                let tg = self.c.min(loss / denom) * g;
                for j in 0..u_input.len() {
                    self.u[(k, j)] += u_input[j] * tg;
                }
                outcome.updated_u += 1;
            }
        }

        let bits = self.code_bits();
        let code_denom = self.norm_exponent.denominator(bits as f64);
        for k in 0..self.rows() {
            let g = target.sign(k);
            let margin: f64 =
                g * (0..bits).map(|i| self.v[(k, i)] * code.sign(i)).sum::<f64>();
            let loss = (1.0 - margin).max(0.0);
            if loss == 0.0 {
                continue;
            }
            let tg = self.c.min(loss / code_denom) * g;
            for i in 0..bits {
                self.v[(k, i)] += code.sign(i) * tg;
            }
            outcome.updated_v += 1;
        }

        self.u.tr_mul_to(&self.v, &mut self.m);
        self.update_count += 1;
        Ok(outcome)
    }
}
