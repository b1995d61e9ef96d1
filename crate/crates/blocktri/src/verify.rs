//! Verification: block-sparse reconstruction residuals for every factor
//! layout, scalable to large N (no dense assembly).

use std::collections::HashMap;

use crate::block::DenseBlock;
use crate::kernels::matmul_nt;
use crate::matrix::{
    multi_stage_permutation, partition_permutation, single_stage_permutation, BlockPermutation,
    BlockTridiag, RhsBlocks,
};
use crate::partfactor::PartitionFactor;
use crate::scalar::Scalar;
use crate::seqfactor::SeqFactor;
use crate::stagefactor::{LeveledFactor, SingleStageFactor};

/// Lower-triangular block-sparse factor in some permuted ordering:
/// `cols[c]` lists `(row, block)` with `row >= c` in permuted positions.
#[derive(Debug, Clone)]
pub struct SparseFactor<S> {
    nperm: usize,
    cols: Vec<Vec<(usize, DenseBlock<S>)>>,
}

impl<S: Scalar> SparseFactor<S> {
    pub fn new(nperm: usize) -> Self {
        Self {
            nperm,
            cols: vec![Vec::new(); nperm],
        }
    }

    pub fn push(&mut self, col: usize, row: usize, block: DenseBlock<S>) {
        assert!(
            row >= col && row < self.nperm,
            "factor entry above diagonal"
        );
        self.cols[col].push((row, block));
    }

    pub fn nperm(&self) -> usize {
        self.nperm
    }

    pub fn col(&self, c: usize) -> &[(usize, DenseBlock<S>)] {
        &self.cols[c]
    }

    /// `|| L L^T - P A P^T ||_F` computed block by block over the sparsity
    /// pattern: each column contributes the pairwise products of its blocks,
    /// the permuted input supplies the tridiagonal image. O(N) block
    /// products since every column holds O(1) blocks.
    pub fn reconstruction_residual(&self, m: &BlockTridiag<S>, perm: &BlockPermutation) -> f64 {
        assert_eq!(self.nperm, m.nblocks());
        let n = m.block_size();
        let mut prod: HashMap<(usize, usize), DenseBlock<S>> = HashMap::new();
        for c in 0..self.nperm {
            for (a, (r1, b1)) in self.cols[c].iter().enumerate() {
                for (r2, b2) in &self.cols[c][..=a] {
                    let (hi, lo, x, y) = if r1 >= r2 {
                        (*r1, *r2, b1, b2)
                    } else {
                        (*r2, *r1, b2, b1)
                    };
                    let p = matmul_nt(x, y);
                    prod.entry((hi, lo))
                        .and_modify(|acc| {
                            for (t, v) in acc.data_mut().iter_mut().zip(p.data()) {
                                *t += *v;
                            }
                        })
                        .or_insert(p);
                }
            }
        }
        // fold in the permuted input: subtract wherever it has a block,
        // extending the pattern where the product missed one
        for bi in 0..self.nperm {
            let oi = perm.old_of(bi);
            for (oj, transpose) in [
                (Some(oi), false),
                (oi.checked_sub(1), true),
                ((oi + 1 < self.nperm).then_some(oi + 1), false),
            ] {
                let Some(oj) = oj else { continue };
                let bj = perm.new_of(oj);
                if bj > bi {
                    continue; // upper triangle, covered by symmetry
                }
                let src = if oi == oj {
                    m.diag(oi).clone()
                } else if transpose {
                    // original block (oi, oi-1) is offdiag[oi-1]
                    m.offdiag(oi - 1).clone()
                } else {
                    // original block (oi, oi+1) = offdiag[oi]^T
                    m.offdiag(oi).transposed()
                };
                let entry = prod
                    .entry((bi, bj))
                    .or_insert_with(|| DenseBlock::zeros(n, n));
                for (t, v) in entry.data_mut().iter_mut().zip(src.data()) {
                    *t -= *v;
                }
            }
        }
        let mut acc = 0.0;
        for ((r, c), block) in &prod {
            let f = block.frob_norm();
            let w = if r == c { 1.0 } else { 2.0 };
            acc += w * f * f;
        }
        acc.sqrt()
    }

    /// Residual relative to the Frobenius norm of the input.
    pub fn relative_residual(&self, m: &BlockTridiag<S>, perm: &BlockPermutation) -> f64 {
        self.reconstruction_residual(m, perm) / m.frob_norm().max(f64::MIN_POSITIVE)
    }

    /// Dense assembly of the factor, for small-scale cross checks.
    pub fn assemble_dense(&self, n: usize) -> crate::oracle::DenseMatrix<S> {
        let mut out = crate::oracle::DenseMatrix::zeros(self.nperm * n);
        for c in 0..self.nperm {
            for (r, b) in &self.cols[c] {
                for i in 0..n {
                    for j in 0..n {
                        out.set(r * n + i, c * n + j, b.at(i, j));
                    }
                }
            }
        }
        out
    }
}

/// Natural-order factor as a sparse lower factor (identity permutation).
pub fn seq_to_sparse<S: Scalar>(f: &SeqFactor<S>) -> (SparseFactor<S>, BlockPermutation) {
    let nb = f.nblocks();
    let mut sf = SparseFactor::new(nb);
    for i in 0..nb {
        sf.push(i, i, f.dhat(i).clone());
        if i + 1 < nb {
            sf.push(i, i + 1, f.ehat(i).clone());
        }
    }
    (sf, BlockPermutation::identity(nb))
}

/// Two-level factor in its odd/even ordering.
pub fn single_stage_to_sparse<S: Scalar>(
    f: &SingleStageFactor<S>,
) -> (SparseFactor<S>, BlockPermutation) {
    let nb = f.nblocks();
    let perm = single_stage_permutation(nb);
    let mut sf = SparseFactor::new(nb);
    for c in 1..=nb {
        let pc = perm.new_of(c - 1);
        sf.push(pc, pc, f.dhat[c - 1].clone());
        if c % 2 == 1 {
            if c < nb {
                sf.push(pc, perm.new_of(c), f.ehat[c - 1].clone());
            }
            if c > 1 {
                sf.push(pc, perm.new_of(c - 2), f.ehat[c - 2].transposed());
            }
        } else if c + 2 <= nb {
            sf.push(pc, perm.new_of(c + 1), f.hhat[c / 2 - 1].clone());
        }
    }
    (sf, perm)
}

/// Leveled factor in the fully permuted ordering.
pub fn multi_stage_to_sparse<S: Scalar>(
    f: &LeveledFactor<S>,
) -> (SparseFactor<S>, BlockPermutation) {
    let nb = f.nblocks();
    let perm = multi_stage_permutation(nb);
    let mut sf = SparseFactor::new(nb);
    for c in 1..=nb {
        sf.push(
            perm.new_of(c - 1),
            perm.new_of(c - 1),
            f.dhat_col(c).clone(),
        );
    }
    for level in 1..=f.nlevels() {
        let s = crate::matrix::stride_of_level(level);
        for (k0, e) in f.ehat_level(level).iter().enumerate() {
            let k = k0 + 1;
            let (lo, hi) = (k * s, (k + 1) * s); // 1-based columns it couples
            if k % 2 == 1 {
                // right-solved: sits at (row hi, col lo) as stored
                sf.push(perm.new_of(lo - 1), perm.new_of(hi - 1), e.clone());
            } else {
                // left-solved: the factor holds its transpose at (row lo, col hi)
                sf.push(perm.new_of(hi - 1), perm.new_of(lo - 1), e.transposed());
            }
        }
    }
    (sf, perm)
}

/// Partition factor in its chunks-then-pivots ordering.
pub fn partition_to_sparse<S: Scalar>(
    f: &PartitionFactor<S>,
) -> (SparseFactor<S>, BlockPermutation) {
    let nb = f.nblocks();
    let sizes = f.sizes().to_vec();
    let parts = sizes.len();
    let perm = partition_permutation(nb, &sizes);
    let pivot_base: usize = sizes.iter().sum();
    let mut sf = SparseFactor::new(nb);
    let mut off = 0usize;
    for (j, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let c = off + i;
            sf.push(c, c, f.dhat[j][i].clone());
            if i + 1 < size {
                sf.push(c, c + 1, f.ehat[j][i].clone());
            }
            if j > 0 {
                sf.push(c, pivot_base + j - 1, f.bhat[j][i].transposed());
            }
            if i + 1 == size && j + 1 < parts {
                sf.push(c, pivot_base + j, f.fhat[j].clone());
            }
        }
        off += size;
    }
    for q in 0..parts.saturating_sub(1) {
        let c = pivot_base + q;
        sf.push(c, c, f.ahat[q].clone());
        if q < f.hhat.len() {
            sf.push(c, c + 1, f.hhat[q].clone());
        }
    }
    (sf, perm)
}

/// `||A x - b||_F / ||b||_F` through the structured matrix-vector product.
pub fn solve_residual<S: Scalar>(m: &BlockTridiag<S>, x: &RhsBlocks<S>, b: &RhsBlocks<S>) -> f64 {
    let ax = m.matvec(x);
    let mut num = 0.0;
    for (a, v) in ax.blocks().iter().zip(b.blocks()) {
        num += a.diff_frob_sq(v);
    }
    num.sqrt() / b.frob_norm().max(f64::MIN_POSITIVE)
}

/// Residual of a dense factor against a dense matrix, for oracle checks.
pub fn dense_reconstruction_residual<S: Scalar>(
    l: &crate::oracle::DenseMatrix<S>,
    a: &crate::oracle::DenseMatrix<S>,
) -> f64 {
    l.times_transpose().diff_frob(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meter::FlopMeter;
    use crate::oracle;
    use crate::probgen::generate_spd;
    use crate::seqfactor::factor_sequential;

    #[test]
    fn seq_reconstruction_is_tiny() {
        let m = generate_spd::<f64>(9, 3, 13);
        let meter = FlopMeter::new();
        let f = factor_sequential(&m, &meter).unwrap();
        let (sf, perm) = seq_to_sparse(&f);
        assert!(sf.relative_residual(&m, &perm) < 1e-14);
    }

    #[test]
    fn blockwise_residual_matches_dense_route() {
        let m = generate_spd::<f64>(6, 2, 3);
        let meter = FlopMeter::new();
        let f = factor_sequential(&m, &meter).unwrap();
        let (sf, perm) = seq_to_sparse(&f);
        let blockwise = sf.reconstruction_residual(&m, &perm);
        let dense_l = sf.assemble_dense(2);
        let dense_a = oracle::assemble_permuted(&m, &perm);
        let dense = dense_reconstruction_residual(&dense_l, &dense_a);
        assert!((blockwise - dense).abs() < 1e-12);
    }

    #[test]
    fn residual_detects_corruption() {
        let m = generate_spd::<f64>(5, 2, 3);
        let meter = FlopMeter::new();
        let f = factor_sequential(&m, &meter).unwrap();
        let (mut sf, perm) = seq_to_sparse(&f);
        let c0 = &mut sf.cols[0][0].1;
        let v = c0.at(0, 0);
        c0.set(0, 0, v + 0.5);
        assert!(sf.relative_residual(&m, &perm) > 1e-3);
    }
}
