//! Bit-packed binary codes in the `{-1, +1}` semantic.
//!
//! A code stores `b` semantic bits packed little-endian into 64-bit words:
//! bit `i` lives in word `i / 64` at position `i % 64`. A set bit reads as
//! `+1`, a clear bit as `-1`. Unused high bits of the last word are always
//! zero so that whole-word operations (XOR, popcount) stay valid.

use crate::error::{Error, Result};

/// Number of semantic bits per storage word.
pub const WORD_BITS: usize = 64;

/// A fixed-length binary code over `{-1, +1}`, stored bit-packed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    words: Vec<u64>,
    len: usize,
}

impl BinaryCode {
    /// Number of words needed for `len` bits.
    pub fn words_for(len: usize) -> usize {
        len.div_ceil(WORD_BITS)
    }

    /// All-clear code (every bit reads `-1`).
    pub fn all_minus(len: usize) -> Self {
        BinaryCode {
            words: vec![0; Self::words_for(len)],
            len,
        }
    }

    /// Builds a code from per-bit booleans; `true` reads as `+1`.
    pub fn from_bools(bits: &[bool]) -> Self {
        let mut code = Self::all_minus(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                code.set(i, true);
            }
        }
        code
    }

    /// Builds a code from real values: bit `i` is `+1` iff `values[i] >= 0`.
    ///
    /// The sign of exact zero maps to `+1`.
    pub fn from_signs(values: &[f64]) -> Self {
        let mut code = Self::all_minus(values.len());
        for (i, &v) in values.iter().enumerate() {
            if v >= 0.0 {
                code.set(i, true);
            }
        }
        code
    }

    /// Reassembles a code from packed words. Unused high bits must be zero.
    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if words.len() != Self::words_for(len) {
            return Err(Error::DimensionMismatch {
                expected: Self::words_for(len),
                got: words.len(),
            });
        }
        let tail = len % WORD_BITS;
        if tail != 0 {
            let mask = (1u64 << tail) - 1;
            if words[words.len() - 1] & !mask != 0 {
                return Err(Error::InvalidConfig(
                    "packed code has nonzero bits past its length".to_string(),
                ));
            }
        }
        Ok(BinaryCode { words, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Packed storage words, little-endian bit order.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Whether bit `i` reads as `+1`.
    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, plus: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if plus {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    /// Semantic value of bit `i` as `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(&self, i: usize) -> f64 {
        if self.get(i) {
            1.0
        } else {
            -1.0
        }
    }

    /// Expands to a `{-1.0, +1.0}` vector.
    pub fn to_signs(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.sign(i)).collect()
    }

    /// Number of `+1` bits.
    pub fn count_plus(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// The code with every bit flipped.
    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        let tail = self.len % WORD_BITS;
        if tail != 0 {
            let last = words.len() - 1;
            words[last] &= (1u64 << tail) - 1;
        }
        BinaryCode {
            words,
            len: self.len,
        }
    }
}

/// Number of differing bits between two codes of equal length.
///
/// Over the `{-1, +1}` reading this satisfies
/// `dot(a, b) = len - 2 * hamming(a, b)`.
pub fn hamming(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::CodeLengthMismatch {
            left: a.len,
            right: b.len,
        });
    }
    Ok(hamming_words(&a.words, &b.words))
}

/// Hamming distance over raw packed words (callers guarantee equal lengths
/// and zeroed tail bits).
#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// Extracts `len` bits starting at bit `lo` from a packed word slice.
///
/// `len` must be at most 64. The result carries the bits in the same
/// little-endian order, right-aligned.
#[inline]
pub fn extract_bits(words: &[u64], lo: usize, len: usize) -> u64 {
    debug_assert!(len <= WORD_BITS);
    if len == 0 {
        return 0;
    }
    let word = lo / WORD_BITS;
    let shift = lo % WORD_BITS;
    let mut value = words[word] >> shift;
    let taken = WORD_BITS - shift;
    if taken < len {
        value |= words[word + 1] << taken;
    }
    if len < WORD_BITS {
        value &= (1u64 << len) - 1;
    }
    value
}
