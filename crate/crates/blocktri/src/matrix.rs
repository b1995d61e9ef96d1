//! Data model: the block tridiagonal input, block permutations, and
//! right-hand-side storage.

use crate::block::DenseBlock;
use crate::scalar::Scalar;

/// Symmetric positive-definite block tridiagonal matrix.
///
/// `diag[i]` is the i-th diagonal block; its lower triangle is
/// authoritative and the constructor mirrors it up, so the stored block
/// is symmetric as written. `offdiag[i]` couples block row `i+1` to block
/// column `i`.
#[derive(Debug, Clone)]
pub struct BlockTridiag<S> {
    n: usize,
    nblocks: usize,
    diag: Vec<DenseBlock<S>>,
    offdiag: Vec<DenseBlock<S>>,
}

impl<S: Scalar> BlockTridiag<S> {
    pub fn new(diag: Vec<DenseBlock<S>>, offdiag: Vec<DenseBlock<S>>) -> Self {
        let nblocks = diag.len();
        assert!(nblocks >= 1, "need at least one diagonal block");
        let n = diag[0].rows();
        assert!(n >= 1);
        assert_eq!(offdiag.len(), nblocks - 1, "need N-1 off-diagonal blocks");
        let mut diag = diag;
        for d in &mut diag {
            assert_eq!((d.rows(), d.cols()), (n, n), "diagonal block shape");
            d.mirror_lower();
        }
        for e in &offdiag {
            assert_eq!((e.rows(), e.cols()), (n, n), "off-diagonal block shape");
        }
        Self {
            n,
            nblocks,
            diag,
            offdiag,
        }
    }

    pub fn identity(n: usize, nblocks: usize) -> Self {
        Self::new(
            (0..nblocks).map(|_| DenseBlock::identity(n)).collect(),
            (0..nblocks.saturating_sub(1))
                .map(|_| DenseBlock::zeros(n, n))
                .collect(),
        )
    }

    /// Block size n.
    #[inline]
    pub fn block_size(&self) -> usize {
        self.n
    }

    /// Block count N.
    #[inline]
    pub fn nblocks(&self) -> usize {
        self.nblocks
    }

    /// Scalar dimension N*n of the assembled matrix.
    #[inline]
    pub fn dim(&self) -> usize {
        self.n * self.nblocks
    }

    #[inline]
    pub fn diag(&self, i: usize) -> &DenseBlock<S> {
        &self.diag[i]
    }

    #[inline]
    pub fn offdiag(&self, i: usize) -> &DenseBlock<S> {
        &self.offdiag[i]
    }

    pub fn diag_blocks(&self) -> &[DenseBlock<S>] {
        &self.diag
    }

    pub fn offdiag_blocks(&self) -> &[DenseBlock<S>] {
        &self.offdiag
    }

    /// Frobenius norm of the whole matrix (both off-diagonal triangles).
    pub fn frob_norm(&self) -> f64 {
        let mut acc = 0.0;
        for d in &self.diag {
            let f = d.frob_norm();
            acc += f * f;
        }
        for e in &self.offdiag {
            let f = e.frob_norm();
            acc += 2.0 * f * f;
        }
        acc.sqrt()
    }

    /// `y = A x` on block vectors; scalable residual checks use this instead
    /// of dense assembly.
    pub fn matvec(&self, x: &RhsBlocks<S>) -> RhsBlocks<S> {
        assert_eq!(x.nblocks(), self.nblocks);
        assert_eq!(x.block_rows(), self.n);
        let mut out = Vec::with_capacity(self.nblocks);
        for i in 0..self.nblocks {
            let mut acc = crate::kernels::matmul(&self.diag[i], x.block(i));
            if i > 0 {
                let up = crate::kernels::matmul(&self.offdiag[i - 1], x.block(i - 1));
                for (o, u) in acc.data_mut().iter_mut().zip(up.data()) {
                    *o += *u;
                }
            }
            if i + 1 < self.nblocks {
                let lo = crate::kernels::matmul(&self.offdiag[i].transposed(), x.block(i + 1));
                for (o, u) in acc.data_mut().iter_mut().zip(lo.data()) {
                    *o += *u;
                }
            }
            out.push(acc);
        }
        RhsBlocks::from_blocks(out)
    }
}

/// Bijection between block positions: `new_to_old[new] = old` (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPermutation {
    new_to_old: Vec<usize>,
    old_to_new: Vec<usize>,
}

impl BlockPermutation {
    pub fn from_new_to_old(new_to_old: Vec<usize>) -> Self {
        let n = new_to_old.len();
        let mut old_to_new = vec![usize::MAX; n];
        for (new, &old) in new_to_old.iter().enumerate() {
            assert!(old < n, "permutation entry out of range");
            assert_eq!(old_to_new[old], usize::MAX, "permutation not a bijection");
            old_to_new[old] = new;
        }
        Self {
            new_to_old,
            old_to_new,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_new_to_old((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.new_to_old.len()
    }

    pub fn is_empty(&self) -> bool {
        self.new_to_old.is_empty()
    }

    /// Original index sitting at permuted position `new`.
    #[inline]
    pub fn old_of(&self, new: usize) -> usize {
        self.new_to_old[new]
    }

    /// Permuted position of original index `old`.
    #[inline]
    pub fn new_of(&self, old: usize) -> usize {
        self.old_to_new[old]
    }

    pub fn new_to_old(&self) -> &[usize] {
        &self.new_to_old
    }

    pub fn inverse(&self) -> Self {
        Self::from_new_to_old(self.old_to_new.clone())
    }
}

/// Number of stride levels of the nested odd/even ordering: `floor(log2 N)+1`.
pub fn level_count(nblocks: usize) -> usize {
    assert!(nblocks >= 1);
    (usize::BITS - nblocks.leading_zeros()) as usize
}

/// Stride of a 1-based level: `2^(level-1)`.
pub fn stride_of_level(level: usize) -> usize {
    1usize << (level - 1)
}

/// Level owning a 1-based column index: odd multiples of `2^(l-1)` live on level `l`.
pub fn level_of_column(col: usize) -> usize {
    debug_assert!(col >= 1);
    col.trailing_zeros() as usize + 1
}

/// 1-based columns eliminated at the level with the given stride: s, 3s, 5s, ...
pub fn columns_at_level(nblocks: usize, stride: usize) -> impl Iterator<Item = usize> {
    (stride..=nblocks).step_by(2 * stride)
}

/// Ordering that lists level-1 columns (odd indices) first, then level-2
/// (indices = 2 mod 4), and so on: the block layout produced by recursively
/// splitting the chain into odd/even halves.
pub fn multi_stage_permutation(nblocks: usize) -> BlockPermutation {
    let mut order = Vec::with_capacity(nblocks);
    for level in 1..=level_count(nblocks) {
        order.extend(columns_at_level(nblocks, stride_of_level(level)).map(|c| c - 1));
    }
    BlockPermutation::from_new_to_old(order)
}

/// Two-level ordering: all odd-indexed blocks first, then the evens.
pub fn single_stage_permutation(nblocks: usize) -> BlockPermutation {
    let mut order: Vec<usize> = (0..nblocks).step_by(2).collect();
    order.extend((1..nblocks).step_by(2));
    BlockPermutation::from_new_to_old(order)
}

/// Partition ordering: the p chunks in original order, then the p-1 pivot
/// blocks (the blocks separating consecutive chunks) in ascending order.
///
/// `sizes` are the chunk lengths; they must satisfy `sum(sizes) + p - 1 == N`.
pub fn partition_permutation(nblocks: usize, sizes: &[usize]) -> BlockPermutation {
    let p = sizes.len();
    assert!(p >= 1);
    assert!(sizes.iter().all(|&s| s >= 1), "every partition nonempty");
    assert_eq!(
        sizes.iter().sum::<usize>() + (p - 1),
        nblocks,
        "sizes must cover N blocks with p-1 pivots"
    );
    let mut order = Vec::with_capacity(nblocks);
    let mut pivots = Vec::with_capacity(p - 1);
    let mut pos = 0usize;
    for (k, &sz) in sizes.iter().enumerate() {
        order.extend(pos..pos + sz);
        pos += sz;
        if k + 1 < p {
            pivots.push(pos);
            pos += 1;
        }
    }
    order.extend(pivots);
    BlockPermutation::from_new_to_old(order)
}

/// Right-hand side (or solution) stored as N stacked blocks of shape n x m.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsBlocks<S> {
    blocks: Vec<DenseBlock<S>>,
}

impl<S: Scalar> RhsBlocks<S> {
    pub fn from_blocks(blocks: Vec<DenseBlock<S>>) -> Self {
        assert!(!blocks.is_empty());
        let (n, m) = (blocks[0].rows(), blocks[0].cols());
        for b in &blocks {
            assert_eq!((b.rows(), b.cols()), (n, m), "ragged rhs blocks");
        }
        Self { blocks }
    }

    pub fn zeros(nblocks: usize, n: usize, m: usize) -> Self {
        Self::from_blocks((0..nblocks).map(|_| DenseBlock::zeros(n, m)).collect())
    }

    /// Constant right-hand side of all ones.
    pub fn ones(nblocks: usize, n: usize, m: usize) -> Self {
        let mut b = Self::zeros(nblocks, n, m);
        for blk in &mut b.blocks {
            for v in blk.data_mut() {
                *v = S::ONE;
            }
        }
        b
    }

    pub fn nblocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_rows(&self) -> usize {
        self.blocks[0].rows()
    }

    pub fn ncols(&self) -> usize {
        self.blocks[0].cols()
    }

    pub fn block(&self, i: usize) -> &DenseBlock<S> {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut DenseBlock<S> {
        &mut self.blocks[i]
    }

    pub fn blocks(&self) -> &[DenseBlock<S>] {
        &self.blocks
    }

    /// Flatten to a dense (N*n) x m column-major-free representation:
    /// row-major rows stacked block by block.
    pub fn to_flat(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.nblocks() * self.block_rows() * self.ncols());
        for b in &self.blocks {
            out.extend_from_slice(b.data());
        }
        out
    }

    pub fn from_flat(nblocks: usize, n: usize, m: usize, flat: &[S]) -> Self {
        assert_eq!(flat.len(), nblocks * n * m);
        let blocks = (0..nblocks)
            .map(|i| DenseBlock::from_data(n, m, flat[i * n * m..(i + 1) * n * m].to_vec()))
            .collect();
        Self::from_blocks(blocks)
    }

    pub fn frob_norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let f = b.frob_norm();
                f * f
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.nblocks(), other.nblocks());
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn rel_diff(&self, other: &Self) -> f64 {
        let mut num = 0.0;
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            num += a.diff_frob_sq(b);
        }
        let den = other.frob_norm().max(f64::MIN_POSITIVE);
        num.sqrt() / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_stage_order_examples() {
        assert_eq!(multi_stage_permutation(1).new_to_old(), &[0]);
        // N=8: odd columns, then 2 mod 4, then 4, then 8 (1-based), 0-based here
        assert_eq!(
            multi_stage_permutation(8).new_to_old(),
            &[0, 2, 4, 6, 1, 5, 3, 7]
        );
        let p20 = multi_stage_permutation(20);
        let first_ten: Vec<usize> = (0..10).map(|i| p20.old_of(i) + 1).collect();
        assert_eq!(first_ten, vec![1, 3, 5, 7, 9, 11, 13, 15, 17, 19]);
    }

    #[test]
    fn multi_stage_matches_recursive_reference() {
        // independent reference: odd positions of the remaining sequence first,
        // then recurse on the even positions
        fn reference(seq: &[usize], out: &mut Vec<usize>) {
            if seq.is_empty() {
                return;
            }
            out.extend(seq.iter().step_by(2));
            let rest: Vec<usize> = seq.iter().skip(1).step_by(2).copied().collect();
            reference(&rest, out);
        }
        for n in 1..=64 {
            let mut expect = Vec::new();
            reference(&(0..n).collect::<Vec<_>>(), &mut expect);
            assert_eq!(
                multi_stage_permutation(n).new_to_old(),
                &expect[..],
                "N={n}"
            );
        }
    }

    #[test]
    fn partition_order_examples() {
        assert_eq!(
            partition_permutation(10, &[10]).new_to_old(),
            &(0..10).collect::<Vec<_>>()[..]
        );
        // N=7, sizes [3,3]: pivot is block 4 (1-based)
        assert_eq!(
            partition_permutation(7, &[3, 3]).new_to_old(),
            &[0, 1, 2, 4, 5, 6, 3]
        );
        // N=5, sizes [1,3]: pivot is block 2 (1-based)
        assert_eq!(
            partition_permutation(5, &[1, 3]).new_to_old(),
            &[0, 2, 3, 4, 1]
        );
    }

    #[test]
    fn level_bookkeeping() {
        assert_eq!(level_count(1), 1);
        assert_eq!(level_count(20), 5);
        assert_eq!(level_count(32), 6);
        assert_eq!(level_of_column(6), 2);
        assert_eq!(level_of_column(8), 4);
        let cols: Vec<usize> = columns_at_level(20, 4).collect();
        assert_eq!(cols, vec![4, 12, 20]);
        // union over levels is a permutation of 1..=N
        for n in 1..=64usize {
            let mut seen = vec![false; n + 1];
            for l in 1..=level_count(n) {
                for c in columns_at_level(n, stride_of_level(l)) {
                    assert!(!seen[c]);
                    seen[c] = true;
                    assert_eq!(level_of_column(c), l);
                }
            }
            assert!(seen[1..].iter().all(|&s| s));
        }
    }

    #[test]
    fn permutation_inverse_roundtrip() {
        let p = multi_stage_permutation(13);
        for new in 0..13 {
            assert_eq!(p.new_of(p.old_of(new)), new);
        }
        let inv = p.inverse();
        for i in 0..13 {
            assert_eq!(inv.old_of(p.old_of(i)), p.old_of(inv.old_of(i)));
        }
    }

    #[test]
    fn matvec_identity() {
        let m = BlockTridiag::<f64>::identity(3, 4);
        let x = RhsBlocks::ones(4, 3, 2);
        assert_eq!(m.matvec(&x), x);
    }
}
