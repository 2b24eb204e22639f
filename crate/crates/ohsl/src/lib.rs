//! Online similarity learning over fixed binary hash codes.
//!
//! The pipeline has four stages:
//!
//! 1. **Hashing** ([`hash`]): a linear projection plus bias, fitted once with
//!    iterative quantization on a small bootstrap sample, maps feature
//!    vectors to b-bit codes. The codes never change afterwards, so a
//!    database of hashed records stays valid for the lifetime of a run.
//! 2. **Target codes** ([`target`]): every class is assigned a near-orthogonal
//!    l-bit code cut from a seed-shuffled Hadamard matrix; multi-label
//!    records get the componentwise majority of their class codes.
//! 3. **Online learning** ([`learner`]): a bilinear similarity
//!    `S(q, c) = qᵀMc` with `M = UᵀV` is trained one labeled point at a
//!    time with passive-aggressive updates that pull each factor row toward
//!    the point's target code. Updates touch only the factors — never the
//!    hashed database.
//! 4. **Search and evaluation** ([`search`], [`eval`]): a query is folded into
//!    per-bit weights (`m̂ = Mᵀq`), scored against packed codes by weighted
//!    Hamming sums, and ranked exactly — by linear scan or by an equivalent
//!    multi-index that prunes with per-segment score bounds. [`eval`]
//!    provides synthetic streams, mean average precision, and cost profiles;
//!    [`io`] persists every artifact with deterministic byte layouts.
//!
//! All randomness is seeded explicitly; equal seeds give bit-identical
//! models, databases, and metrics.

pub mod code;
pub mod error;
pub mod eval;
pub mod hash;
pub mod io;
pub mod learner;
pub mod search;
pub mod target;

pub use code::{extract_bits, hamming, BinaryCode};
pub use error::{Error, Result};
pub use hash::{train_itq, train_itq_report, HashModel, ItqConfig, ItqReport};
pub use learner::{
    hinge_loss, materialize_m, pa_update_u, pa_update_v, NormExponent, ObserveOutcome,
    SimilarityKind, SimilarityModel,
};
pub use search::{
    build_multi_index, default_segments, hamming_topk, linear_scan_topk, multi_index_topk,
    query_weights, score, symmetric_score, CodeDatabase, MultiIndex, QueryWeights, SearchHit,
};
pub use target::{build_hadamard, TargetCodebook};
