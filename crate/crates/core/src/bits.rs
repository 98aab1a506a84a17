//! Fixed-width bit vectors packed into `u64` words.
//!
//! Matrix rows and columns are stored as `BitSet`s so that the hot kernels of
//! biclustering and Jaccard scoring reduce to word-wise AND plus popcount.

use std::fmt;

const WORD_BITS: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitSet {
    len: usize,
    words: Vec<u64>,
}

impl BitSet {
    /// An all-zero set able to hold indices `0..len`.
    pub fn new(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(WORD_BITS)],
        }
    }

    /// An all-one set over `0..len`.
    pub fn full(len: usize) -> Self {
        let mut set = Self {
            len,
            words: vec![!0; len.div_ceil(WORD_BITS)],
        };
        set.clear_tail();
        set
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(len: usize, indices: I) -> Self {
        let mut set = Self::new(len);
        for i in indices {
            set.insert(i);
        }
        set
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn insert(&mut self, index: usize) {
        assert!(
            index < self.len,
            "bit index {index} out of range {}",
            self.len
        );
        self.words[index / WORD_BITS] |= 1u64 << (index % WORD_BITS);
    }

    #[inline]
    pub fn remove(&mut self, index: usize) {
        assert!(
            index < self.len,
            "bit index {index} out of range {}",
            self.len
        );
        self.words[index / WORD_BITS] &= !(1u64 << (index % WORD_BITS));
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        index < self.len && self.words[index / WORD_BITS] & (1u64 << (index % WORD_BITS)) != 0
    }

    /// Population count.
    #[inline]
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    #[inline]
    pub fn and_count(&self, other: &Self) -> usize {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    #[inline]
    pub fn or_count(&self, other: &Self) -> usize {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    pub fn and(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.and_assign(other);
        out
    }

    #[inline]
    pub fn and_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= b;
        }
    }

    #[inline]
    pub fn or_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    /// `self ⊆ other`.
    #[inline]
    pub fn is_subset(&self, other: &Self) -> bool {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    /// Intersection over union; two empty sets have similarity 0.
    pub fn jaccard(&self, other: &Self) -> f64 {
        let union = self.or_count(other);
        if union == 0 {
            0.0
        } else {
            self.and_count(other) as f64 / union as f64
        }
    }

    /// Set bits in ascending order.
    pub fn ones(&self) -> Ones<'_> {
        Ones {
            words: &self.words,
            word_index: 0,
            current: self.words.first().copied().unwrap_or(0),
        }
    }

    /// Whether any set bit lies strictly below `index`, other than those also in `allowed`.
    pub fn differs_below(&self, allowed: &Self, index: usize) -> bool {
        let full_words = index / WORD_BITS;
        for w in 0..full_words {
            if self.words[w] & !allowed.words[w] != 0 {
                return true;
            }
        }
        let rem = index % WORD_BITS;
        if rem != 0 {
            let mask = (1u64 << rem) - 1;
            if self.words[full_words] & !allowed.words[full_words] & mask != 0 {
                return true;
            }
        }
        false
    }
}

impl fmt::Debug for BitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.ones()).finish()
    }
}

pub struct Ones<'a> {
    words: &'a [u64],
    word_index: usize,
    current: u64,
}

impl Iterator for Ones<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        loop {
            if self.current != 0 {
                let bit = self.current.trailing_zeros() as usize;
                self.current &= self.current - 1;
                return Some(self.word_index * WORD_BITS + bit);
            }
            self.word_index += 1;
            if self.word_index >= self.words.len() {
                return None;
            }
            self.current = self.words[self.word_index];
        }
    }
}

/// Jaccard similarity of two ascending, duplicate-free slices.
pub fn sorted_jaccard<T: Ord>(a: &[T], b: &[T]) -> f64 {
    let inter = sorted_intersection_len(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn sorted_intersection_len<T: Ord>(a: &[T], b: &[T]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_set_masks_tail() {
        let s = BitSet::full(70);
        assert_eq!(s.count(), 70);
        assert_eq!(s.ones().last(), Some(69));
    }

    #[test]
    fn differs_below_checks_prefix_only() {
        let a = BitSet::from_indices(130, [3, 64, 100]);
        let allowed = BitSet::from_indices(130, [3]);
        assert!(!a.differs_below(&allowed, 64));
        assert!(a.differs_below(&allowed, 65));
        assert!(!a.differs_below(&allowed, 0));
    }

    #[test]
    fn jaccard_of_small_sets() {
        let a = BitSet::from_indices(10, [1, 2, 3]);
        let b = BitSet::from_indices(10, [2, 3, 4]);
        assert_eq!(a.jaccard(&b), 0.5);
        assert_eq!(sorted_jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
    }

    proptest! {
        #[test]
        fn bit_kernels_match_hash_sets(
            a in proptest::collection::btree_set(0usize..200, 0..60),
            b in proptest::collection::btree_set(0usize..200, 0..60),
        ) {
            let sa = BitSet::from_indices(200, a.iter().copied());
            let sb = BitSet::from_indices(200, b.iter().copied());
            prop_assert_eq!(sa.ones().collect::<Vec<_>>(), a.iter().copied().collect::<Vec<_>>());
            prop_assert_eq!(sa.and_count(&sb), a.intersection(&b).count());
            prop_assert_eq!(sa.or_count(&sb), a.union(&b).count());
            prop_assert_eq!(sa.is_subset(&sb), a.is_subset(&b));
            let av: Vec<_> = a.iter().copied().collect();
            let bv: Vec<_> = b.iter().copied().collect();
            prop_assert_eq!(sa.jaccard(&sb), sorted_jaccard(&av, &bv));
        }
    }
}
