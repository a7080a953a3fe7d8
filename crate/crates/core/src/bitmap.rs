//! File-membership sets for preorder inverted-index propagation.
//!
//! [`DoubleLayeredBitmap`] is the footprint-saving variant: a level-one bit
//! per block of `block_bits` files, and level-two blocks allocated only for
//! the level-one bits that are set. [`FlatBitmap`] and [`SortedFileSet`] are
//! the single-layer and set-based alternatives.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitmapError {
    #[error("file id {id} outside universe of {universe} files")]
    OutOfRange { id: u32, universe: u32 },
    #[error("block size must be between 1 and 64 bits, got {0}")]
    BlockSize(u32),
}

/// A set of file ids drawn from `0..universe`.
pub trait FileSet: Clone {
    fn with_universe(universe: u32) -> Self;
    fn universe(&self) -> u32;
    /// Inserts `id`; returns whether it was newly added.
    fn insert(&mut self, id: u32) -> Result<bool, BitmapError>;
    fn contains(&self, id: u32) -> bool;
    /// `self = self ∪ other`.
    fn union_with(&mut self, other: &Self);
    /// Members in ascending order.
    fn ids(&self) -> Vec<u32>;

    fn is_empty(&self) -> bool {
        self.ids().is_empty()
    }

    fn check(&self, id: u32) -> Result<(), BitmapError> {
        if id < self.universe() {
            Ok(())
        } else {
            Err(BitmapError::OutOfRange { id, universe: self.universe() })
        }
    }
}

/// Named alias matching the operation set of the kernels.
pub fn union_into<S: FileSet>(dst: &mut S, src: &S) {
    dst.union_with(src);
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SortedFileSet {
    universe: u32,
    ids: Vec<u32>,
}

impl FileSet for SortedFileSet {
    fn with_universe(universe: u32) -> Self {
        Self { universe, ids: Vec::new() }
    }

    fn universe(&self) -> u32 {
        self.universe
    }

    fn insert(&mut self, id: u32) -> Result<bool, BitmapError> {
        self.check(id)?;
        match self.ids.binary_search(&id) {
            Ok(_) => Ok(false),
            Err(at) => {
                self.ids.insert(at, id);
                Ok(true)
            }
        }
    }

    fn contains(&self, id: u32) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    fn union_with(&mut self, other: &Self) {
        if other.ids.is_empty() {
            return;
        }
        let mut merged = Vec::with_capacity(self.ids.len() + other.ids.len());
        let (mut i, mut j) = (0, 0);
        while i < self.ids.len() && j < other.ids.len() {
            let (a, b) = (self.ids[i], other.ids[j]);
            merged.push(a.min(b));
            i += (a <= b) as usize;
            j += (b <= a) as usize;
        }
        merged.extend_from_slice(&self.ids[i..]);
        merged.extend_from_slice(&other.ids[j..]);
        self.ids = merged;
    }

    fn ids(&self) -> Vec<u32> {
        self.ids.clone()
    }

    fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One bit per file in the universe.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlatBitmap {
    universe: u32,
    words: Vec<u64>,
}

impl FileSet for FlatBitmap {
    fn with_universe(universe: u32) -> Self {
        Self { universe, words: vec![0; (universe as usize).div_ceil(64)] }
    }

    fn universe(&self) -> u32 {
        self.universe
    }

    fn insert(&mut self, id: u32) -> Result<bool, BitmapError> {
        self.check(id)?;
        let (w, b) = ((id / 64) as usize, id % 64);
        let fresh = self.words[w] & (1 << b) == 0;
        self.words[w] |= 1 << b;
        Ok(fresh)
    }

    fn contains(&self, id: u32) -> bool {
        id < self.universe && self.words[(id / 64) as usize] & (1 << (id % 64)) != 0
    }

    fn union_with(&mut self, other: &Self) {
        debug_assert_eq!(self.universe, other.universe);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    fn ids(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, &w) in self.words.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                out.push(i as u32 * 64 + w.trailing_zeros());
                w &= w - 1;
            }
        }
        out
    }

    fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }
}

/// Two-level membership bitmap.
///
/// Level one holds a presence bit per block; `blocks` holds the allocated
/// level-two blocks in ascending block order, so the block for a set
/// level-one bit sits at that bit's rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoubleLayeredBitmap {
    universe: u32,
    block_bits: u32,
    level_one: Vec<u64>,
    blocks: Vec<u64>,
}

pub const DEFAULT_BLOCK_BITS: u32 = 64;

impl DoubleLayeredBitmap {
    pub fn new(universe: u32, block_bits: u32) -> Result<Self, BitmapError> {
        if !(1..=64).contains(&block_bits) {
            return Err(BitmapError::BlockSize(block_bits));
        }
        let block_count = (universe as usize).div_ceil(block_bits as usize);
        Ok(Self { universe, block_bits, level_one: vec![0; block_count.div_ceil(64)], blocks: Vec::new() })
    }

    pub fn block_bits(&self) -> u32 {
        self.block_bits
    }

    pub fn block_count(&self) -> usize {
        (self.universe as usize).div_ceil(self.block_bits as usize)
    }

    pub fn allocated_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn present(&self, block: usize) -> bool {
        self.level_one[block / 64] & (1 << (block % 64)) != 0
    }

    fn rank(&self, block: usize) -> usize {
        let (w, b) = (block / 64, block % 64);
        let before: u32 = self.level_one[..w].iter().map(|x| x.count_ones()).sum();
        (before + (self.level_one[w] & ((1u64 << b) - 1)).count_ones()) as usize
    }

    /// Level-one presence bits, `'1'` for an allocated block.
    pub fn level_one_bits(&self) -> String {
        (0..self.block_count()).map(|b| if self.present(b) { '1' } else { '0' }).collect()
    }

    /// Bits of level-two block `block`, lowest file first; `None` if absent.
    pub fn block_string(&self, block: usize) -> Option<String> {
        if block >= self.block_count() || !self.present(block) {
            return None;
        }
        let word = self.blocks[self.rank(block)];
        Some((0..self.block_bits).map(|i| if word & (1 << i) != 0 { '1' } else { '0' }).collect())
    }

    /// `(block index, bits)` for every allocated block, ascending.
    fn allocated(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        let mut blocks = self.blocks.iter();
        self.level_one.iter().enumerate().flat_map(move |(i, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                (w != 0).then(|| {
                    let b = i * 64 + w.trailing_zeros() as usize;
                    w &= w - 1;
                    b
                })
            })
            .map(|b| (b, *blocks.next().expect("one block per set bit")))
            .collect::<Vec<_>>()
        })
    }
}

impl FileSet for DoubleLayeredBitmap {
    fn with_universe(universe: u32) -> Self {
        Self::new(universe, DEFAULT_BLOCK_BITS).expect("default block size is valid")
    }

    fn universe(&self) -> u32 {
        self.universe
    }

    fn insert(&mut self, id: u32) -> Result<bool, BitmapError> {
        self.check(id)?;
        let block = (id / self.block_bits) as usize;
        let bit = 1u64 << (id % self.block_bits);
        let at = self.rank(block);
        if self.present(block) {
            let fresh = self.blocks[at] & bit == 0;
            self.blocks[at] |= bit;
            Ok(fresh)
        } else {
            self.level_one[block / 64] |= 1 << (block % 64);
            self.blocks.insert(at, bit);
            Ok(true)
        }
    }

    fn contains(&self, id: u32) -> bool {
        if id >= self.universe {
            return false;
        }
        let block = (id / self.block_bits) as usize;
        self.present(block) && self.blocks[self.rank(block)] & (1 << (id % self.block_bits)) != 0
    }

    fn union_with(&mut self, other: &Self) {
        debug_assert_eq!((self.universe, self.block_bits), (other.universe, other.block_bits));
        if other.blocks.is_empty() {
            return;
        }
        let mut merged = Vec::with_capacity(self.blocks.len().max(other.blocks.len()));
        {
            let (mut a, mut b) = (self.allocated().peekable(), other.allocated().peekable());
            loop {
                match (a.peek().copied(), b.peek().copied()) {
                    (Some((ia, wa)), Some((ib, wb))) => {
                        if ia == ib {
                            merged.push(wa | wb);
                            a.next();
                            b.next();
                        } else if ia < ib {
                            merged.push(wa);
                            a.next();
                        } else {
                            merged.push(wb);
                            b.next();
                        }
                    }
                    (Some((_, wa)), None) => {
                        merged.push(wa);
                        a.next();
                    }
                    (None, Some((_, wb))) => {
                        merged.push(wb);
                        b.next();
                    }
                    (None, None) => break,
                }
            }
        }
        for (x, y) in self.level_one.iter_mut().zip(&other.level_one) {
            *x |= y;
        }
        self.blocks = merged;
    }

    fn ids(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for (block, word) in self.allocated() {
            let mut w = word;
            let base = block as u32 * self.block_bits;
            while w != 0 {
                out.push(base + w.trailing_zeros());
                w &= w - 1;
            }
        }
        out
    }

    fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn worked_example() {
        let mut b = DoubleLayeredBitmap::new(12, 4).unwrap();
        for id in [0, 1, 3, 4, 5] {
            assert!(b.insert(id).unwrap());
        }
        assert_eq!(b.level_one_bits(), "110");
        assert_eq!(b.block_string(0).as_deref(), Some("1101"));
        assert_eq!(b.block_string(1).as_deref(), Some("1100"));
        assert_eq!(b.block_string(2), None);
        assert_eq!(b.allocated_blocks(), 2);
        assert_eq!(b.ids(), vec![0, 1, 3, 4, 5]);
    }

    #[test]
    fn empty_and_range() {
        let b = DoubleLayeredBitmap::new(12, 4).unwrap();
        assert!((0..20).all(|k| !b.contains(k)));
        assert!(b.ids().is_empty());
        let mut b = b;
        assert_eq!(b.insert(12), Err(BitmapError::OutOfRange { id: 12, universe: 12 }));
        assert_eq!(DoubleLayeredBitmap::new(8, 65).unwrap_err(), BitmapError::BlockSize(65));
        let mut f = FlatBitmap::with_universe(3);
        assert!(f.insert(3).is_err());
        let mut s = SortedFileSet::with_universe(3);
        assert!(s.insert(7).is_err());
    }

    #[test]
    fn unions() {
        let mut dst = DoubleLayeredBitmap::new(12, 4).unwrap();
        let mut src = dst.clone();
        for id in [2, 9] {
            src.insert(id).unwrap();
        }
        union_into(&mut dst, &src);
        assert_eq!(dst.ids(), vec![2, 9]);
        let snapshot = dst.clone();
        dst.union_with(&snapshot);
        assert_eq!(dst, snapshot);
        let mut other = DoubleLayeredBitmap::new(12, 4).unwrap();
        other.insert(3).unwrap();
        other.insert(11).unwrap();
        dst.union_with(&other);
        assert_eq!(dst.ids(), vec![2, 3, 9, 11]);
        assert_eq!(dst.level_one_bits(), "101");
    }

    #[derive(Debug, Clone)]
    enum Op {
        Set(u32),
        Test(u32),
        Union(Vec<u32>),
    }

    fn ops(universe: u32) -> impl Strategy<Value = Vec<Op>> {
        let op = prop_oneof![
            (0..universe).prop_map(Op::Set),
            (0..universe + 5).prop_map(Op::Test),
            prop::collection::vec(0..universe, 0..8).prop_map(Op::Union),
        ];
        prop::collection::vec(op, 0..200)
    }

    fn run<S: FileSet>(mut s: S, ops: &[Op]) -> Result<(), TestCaseError> {
        let mut naive = BTreeSet::new();
        for op in ops {
            match op {
                Op::Set(id) => {
                    prop_assert_eq!(s.insert(*id).unwrap(), naive.insert(*id));
                }
                Op::Test(id) => prop_assert_eq!(s.contains(*id), naive.contains(id)),
                Op::Union(ids) => {
                    let mut src = S::with_universe(s.universe());
                    for &id in ids {
                        src.insert(id).unwrap();
                        naive.insert(id);
                    }
                    s.union_with(&src);
                }
            }
        }
        prop_assert_eq!(s.ids(), naive.into_iter().collect::<Vec<_>>());
        Ok(())
    }

    proptest! {
        #[test]
        fn equivalent_to_naive_set(universe in 1u32..300, ops in ops(300)) {
            let ops: Vec<Op> = ops
                .into_iter()
                .map(|op| match op {
                    Op::Set(i) => Op::Set(i % universe),
                    Op::Test(i) => Op::Test(i),
                    Op::Union(v) => Op::Union(v.into_iter().map(|i| i % universe).collect()),
                })
                .collect();
            run(DoubleLayeredBitmap::with_universe(universe), &ops)?;
            run(FlatBitmap::with_universe(universe), &ops)?;
            run(SortedFileSet::with_universe(universe), &ops)?;
        }

        #[test]
        fn block_allocation_bound(universe in 1u32..500, ids in prop::collection::btree_set(0u32..500, 0..50)) {
            let mut b = DoubleLayeredBitmap::new(universe, 8).unwrap();
            let ids: BTreeSet<u32> = ids.into_iter().filter(|&i| i < universe).collect();
            for &i in &ids {
                b.insert(i).unwrap();
            }
            prop_assert!(b.allocated_blocks() <= b.block_count());
            prop_assert!(b.allocated_blocks() <= ids.len());
        }
    }
}
