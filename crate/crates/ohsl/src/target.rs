//! Hadamard-derived target codes for class labels.
//!
//! Each class is handed a distinct column of a Sylvester Hadamard matrix,
//! truncated to the target length `l`. Full columns are mutually orthogonal,
//! so any two class targets disagree on exactly half their (untruncated)
//! entries — the best separation a fixed `{-1, +1}` codebook can offer.
//! Multi-label points get the componentwise majority of their class codes.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use std::collections::HashSet;

use crate::code::BinaryCode;
use crate::error::{Error, Result};

/// Sylvester construction: `H_1 = [1]`, `H_2n = [[H, H], [H, -H]]`.
///
/// Entries are exact integers so `HᵀH = n·I` holds with no rounding.
pub fn build_hadamard(n: usize) -> Result<DMatrix<i32>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut h = DMatrix::from_element(1, 1, 1i32);
    let mut size = 1;
    while size < n {
        let mut next = DMatrix::zeros(size * 2, size * 2);
        for i in 0..size {
            for j in 0..size {
                let v = h[(i, j)];
                next[(i, j)] = v;
                next[(i, j + size)] = v;
                next[(i + size, j)] = v;
                next[(i + size, j + size)] = -v;
            }
        }
        h = next;
        size *= 2;
    }
    Ok(h)
}

const ASSIGN_ATTEMPTS: usize = 64;

/// Immutable assignment of an `l`-bit target code to each class id
/// `0..num_classes`, plus the bookkeeping needed to hand out fresh columns
/// to classes discovered later.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetCodebook {
    len: usize,
    order: usize,
    seed: u64,
    attempt: u32,
    shuffled: Vec<u32>,
    cursor: usize,
    columns: Vec<u32>,
    codes: Vec<BinaryCode>,
}

fn truncate_column(h: &DMatrix<i32>, col: u32, len: usize) -> BinaryCode {
    let bits: Vec<bool> = (0..len).map(|i| h[(i, col as usize)] > 0).collect();
    BinaryCode::from_bools(&bits)
}

fn shuffle_candidates(rng: &mut ChaCha12Rng, order: usize) -> Vec<u32> {
    // Column 0 is all ones — useless as a target, always excluded.
    let mut cols: Vec<u32> = (1..order as u32).collect();
    cols.shuffle(rng);
    cols
}

impl TargetCodebook {
    /// Builds the codebook: Hadamard order is the smallest power of two
    /// covering both the code length and the class count (plus the excluded
    /// all-ones column); columns are dealt in seed-shuffled order and the
    /// whole hand is re-dealt if truncation to `l` bits makes two classes
    /// collide.
    pub fn new(num_classes: usize, len: usize, seed: u64) -> Result<Self> {
        if num_classes < 1 || len < 1 {
            return Err(Error::InvalidConfig(
                "codebook needs at least one class and one bit".to_string(),
            ));
        }
        let order = len.max(num_classes + 1).next_power_of_two();
        let h = build_hadamard(order)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for attempt in 0..ASSIGN_ATTEMPTS {
            let shuffled = shuffle_candidates(&mut rng, order);
            let columns: Vec<u32> = shuffled[..num_classes].to_vec();
            let codes: Vec<BinaryCode> = columns
                .iter()
                .map(|&c| truncate_column(&h, c, len))
                .collect();
            let distinct: HashSet<&[u64]> = codes.iter().map(|c| c.words()).collect();
            if distinct.len() == num_classes {
                return Ok(TargetCodebook {
                    len,
                    order,
                    seed,
                    attempt: attempt as u32,
                    shuffled,
                    cursor: num_classes,
                    columns,
                    codes,
                });
            }
        }
        Err(Error::CodebookExhausted(format!(
            "no collision-free assignment of {num_classes} classes to {len}-bit truncations \
             of order-{order} columns after {ASSIGN_ATTEMPTS} draws"
        )))
    }

    /// Reconstructs a codebook persisted as (len, order, seed, attempt,
    /// cursor, columns).
    pub fn from_saved(
        len: usize,
        order: usize,
        seed: u64,
        attempt: u32,
        cursor: usize,
        columns: Vec<u32>,
    ) -> Result<Self> {
        if len < 1 || order < columns.len() + 1 || cursor > order.saturating_sub(1) {
            return Err(Error::InvalidConfig(
                "inconsistent saved codebook header".to_string(),
            ));
        }
        let h = build_hadamard(order)?;
        if columns.iter().any(|&c| c == 0 || c as usize >= order) {
            return Err(Error::InvalidConfig(
                "saved codebook references an invalid Hadamard column".to_string(),
            ));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut shuffled = shuffle_candidates(&mut rng, order);
        for _ in 0..attempt {
            shuffled = shuffle_candidates(&mut rng, order);
        }
        let codes: Vec<BinaryCode> = columns
            .iter()
            .map(|&c| truncate_column(&h, c, len))
            .collect();
        let distinct: HashSet<&[u64]> = codes.iter().map(|c| c.words()).collect();
        if distinct.len() != codes.len() {
            return Err(Error::InvalidConfig(
                "saved codebook has colliding truncated codes".to_string(),
            ));
        }
        Ok(TargetCodebook {
            len,
            order,
            seed,
            attempt,
            shuffled,
            cursor,
            columns,
            codes,
        })
    }

    /// Target-code length `l`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false // always holds at least one class
    }

    pub fn num_classes(&self) -> usize {
        self.codes.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn attempt(&self) -> u32 {
        self.attempt
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Hadamard column index backing each class, in class-id order.
    pub fn columns(&self) -> &[u32] {
        &self.columns
    }

    pub fn class_code(&self, class: u32) -> Result<&BinaryCode> {
        self.codes
            .get(class as usize)
            .ok_or(Error::UnknownClass(class))
    }

    /// Componentwise majority over the member codes; a tied component
    /// resolves to `+1`.
    pub fn target_for_labels(&self, labels: &[u32]) -> Result<BinaryCode> {
        if labels.is_empty() {
            return Err(Error::EmptyLabels);
        }
        let mut members: Vec<u32> = labels.to_vec();
        members.sort_unstable();
        members.dedup();
        if members.len() == 1 {
            return Ok(self.class_code(members[0])?.clone());
        }
        let mut votes = vec![0i32; self.len];
        for &class in &members {
            let code = self.class_code(class)?;
            for (i, vote) in votes.iter_mut().enumerate() {
                *vote += if code.get(i) { 1 } else { -1 };
            }
        }
        let bits: Vec<bool> = votes.iter().map(|&v| v >= 0).collect();
        Ok(BinaryCode::from_bools(&bits))
    }

    /// Registers a fresh class, assigning the next unused column whose
    /// truncation collides with no existing code. Returns the new class id.
    pub fn add_class(&mut self) -> Result<u32> {
        let h = build_hadamard(self.order)?;
        let taken: HashSet<Vec<u64>> = self.codes.iter().map(|c| c.words().to_vec()).collect();
        for idx in self.cursor..self.shuffled.len() {
            let col = self.shuffled[idx];
            let code = truncate_column(&h, col, self.len);
            if !taken.contains(code.words()) {
                self.cursor = idx + 1;
                self.columns.push(col);
                self.codes.push(code);
                return Ok(self.codes.len() as u32 - 1);
            }
        }
        Err(Error::CodebookExhausted(format!(
            "all {} candidate columns of order {} are used or collide at {} bits",
            self.shuffled.len(),
            self.order,
            self.len
        )))
    }
}
