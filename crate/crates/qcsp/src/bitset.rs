//! Dense bitsets over a fixed universe `{0, .., universe-1}`.
//!
//! Domains and relation rows are small (desk scale), so a flat `Vec<u64>`
//! beats pointer-chasing set types in every hot loop of the pattern checks.

const BITS: usize = 64;

/// A set of indices below a fixed universe size.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitSet {
    universe: usize,
    words: Vec<u64>,
}

impl BitSet {
    pub fn empty(universe: usize) -> Self {
        BitSet {
            universe,
            words: vec![0; universe.div_ceil(BITS)],
        }
    }

    pub fn full(universe: usize) -> Self {
        let mut s = Self::empty(universe);
        for i in 0..universe {
            s.insert(i);
        }
        s
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn insert(&mut self, i: usize) {
        debug_assert!(i < self.universe);
        self.words[i / BITS] |= 1 << (i % BITS);
    }

    pub fn remove(&mut self, i: usize) {
        debug_assert!(i < self.universe);
        self.words[i / BITS] &= !(1 << (i % BITS));
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.universe && self.words[i / BITS] & (1 << (i % BITS)) != 0
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.universe
    }

    /// True when every member of `self` is a member of `other`.
    pub fn is_subset_of(&self, other: &BitSet) -> bool {
        debug_assert_eq!(self.universe, other.universe);
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    pub fn intersect_with(&mut self, other: &BitSet) {
        debug_assert_eq!(self.universe, other.universe);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= b;
        }
    }

    pub fn min(&self) -> Option<usize> {
        self.iter().next()
    }

    pub fn max(&self) -> Option<usize> {
        let mut best = None;
        for i in self.iter() {
            best = Some(i);
        }
        best
    }

    pub fn iter(&self) -> Iter<'_> {
        Iter {
            set: self,
            word_idx: 0,
            current: self.words.first().copied().unwrap_or(0),
        }
    }
}

impl std::fmt::Debug for BitSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<usize> for BitSet {
    /// Collects into a set whose universe is `max + 1`; mostly for tests.
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        let items: Vec<usize> = iter.into_iter().collect();
        let universe = items.iter().max().map_or(0, |m| m + 1);
        let mut s = BitSet::empty(universe);
        for i in items {
            s.insert(i);
        }
        s
    }
}

pub struct Iter<'a> {
    set: &'a BitSet,
    word_idx: usize,
    current: u64,
}

impl Iterator for Iter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        loop {
            if self.current != 0 {
                let bit = self.current.trailing_zeros() as usize;
                self.current &= self.current - 1;
                return Some(self.word_idx * BITS + bit);
            }
            self.word_idx += 1;
            if self.word_idx >= self.set.words.len() {
                return None;
            }
            self.current = self.set.words[self.word_idx];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_ops() {
        let mut s = BitSet::empty(70);
        assert!(s.is_empty());
        s.insert(0);
        s.insert(65);
        s.insert(3);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 3, 65]);
        assert_eq!(s.min(), Some(0));
        assert_eq!(s.max(), Some(65));
        assert_eq!(s.len(), 3);
        s.remove(0);
        assert_eq!(s.min(), Some(3));
        assert!(!s.contains(0));
    }

    #[test]
    fn subset_and_intersection() {
        let mut a = BitSet::empty(10);
        let mut b = BitSet::empty(10);
        a.insert(1);
        a.insert(4);
        b.insert(1);
        b.insert(4);
        b.insert(7);
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
        b.intersect_with(&a);
        assert_eq!(b, a);
        assert!(BitSet::empty(10).is_subset_of(&a));
        assert!(BitSet::full(10).is_full());
    }
}
