//! Dense reference path: assemble, factor, and solve without any structure
//! exploitation. Ground truth for the structured code, intended for
//! `N*n <= 2048`.

use crate::error::{Error, FailSite, Result};
use crate::matrix::{BlockPermutation, BlockTridiag, RhsBlocks};
use crate::scalar::Scalar;

/// Dense row-major square matrix; only what verification needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<S> {
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> DenseMatrix<S> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![S::ZERO; dim * dim],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.dim + c] = v;
    }

    pub fn frob_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.to_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn diff_frob(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a.to_f64() - b.to_f64();
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// The full product `self * self^T`.
    pub fn times_transpose(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = S::ZERO;
                for k in 0..n {
                    acc += self.at(i, k) * self.at(j, k);
                }
                out.set(i, j, acc);
            }
        }
        out
    }
}

/// Assemble the block tridiagonal matrix densely.
pub fn assemble<S: Scalar>(m: &BlockTridiag<S>) -> DenseMatrix<S> {
    assemble_permuted(m, &BlockPermutation::identity(m.nblocks()))
}

/// Assemble `P A P^T` densely: block (i, j) of the result is the original
/// block (perm(i), perm(j)). Verification only; scales as (N n)^2.
pub fn assemble_permuted<S: Scalar>(
    m: &BlockTridiag<S>,
    perm: &BlockPermutation,
) -> DenseMatrix<S> {
    let n = m.block_size();
    let nb = m.nblocks();
    assert_eq!(perm.len(), nb);
    let mut out = DenseMatrix::zeros(n * nb);
    for bi in 0..nb {
        for bj in 0..nb {
            let (oi, oj) = (perm.old_of(bi), perm.old_of(bj));
            let block = if oi == oj {
                Some((m.diag(oi).clone(), false))
            } else if oi == oj + 1 {
                Some((m.offdiag(oj).clone(), false))
            } else if oj == oi + 1 {
                Some((m.offdiag(oi).clone(), true))
            } else {
                None
            };
            if let Some((b, transpose)) = block {
                for r in 0..n {
                    for c in 0..n {
                        let v = if transpose { b.at(c, r) } else { b.at(r, c) };
                        out.set(bi * n + r, bj * n + c, v);
                    }
                }
            }
        }
    }
    out
}

/// Textbook dense Cholesky; returns the lower factor.
pub fn dense_cholesky<S: Scalar>(a: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
    let n = a.dim();
    let mut l = DenseMatrix::zeros(n);
    for j in 0..n {
        let mut diag = a.at(j, j);
        for k in 0..j {
            diag -= l.at(j, k) * l.at(j, k);
        }
        // negated comparison so a NaN pivot is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(diag > S::ZERO) {
            return Err(Error::NotPositiveDefinite {
                site: FailSite::Block { block: j + 1 },
                pivot: j + 1,
            });
        }
        let root = diag.sqrt();
        l.set(j, j, root);
        for i in j + 1..n {
            let mut v = a.at(i, j);
            for k in 0..j {
                v -= l.at(i, k) * l.at(j, k);
            }
            l.set(i, j, v / root);
        }
    }
    Ok(l)
}

/// Dense Cholesky factor of the assembled matrix.
pub fn dense_oracle_factor<S: Scalar>(m: &BlockTridiag<S>) -> Result<DenseMatrix<S>> {
    dense_cholesky(&assemble(m))
}

/// Solve `A x = b` through the dense factor; `b` given and returned as
/// stacked blocks.
pub fn dense_oracle_solve<S: Scalar>(
    m: &BlockTridiag<S>,
    b: &RhsBlocks<S>,
) -> Result<RhsBlocks<S>> {
    let l = dense_oracle_factor(m)?;
    let dim = m.dim();
    let ncols = b.ncols();
    if b.nblocks() != m.nblocks() || b.block_rows() != m.block_size() {
        return Err(Error::ShapeMismatch {
            op: "dense_oracle_solve",
            expected: (m.nblocks(), m.block_size()),
            got: (b.nblocks(), b.block_rows()),
        });
    }
    let mut x = b.to_flat();
    // forward: L y = b
    for c in 0..ncols {
        for i in 0..dim {
            let mut v = x[i * ncols + c];
            for k in 0..i {
                v -= l.at(i, k) * x[k * ncols + c];
            }
            x[i * ncols + c] = v / l.at(i, i);
        }
        // backward: L^T x = y
        for i in (0..dim).rev() {
            let mut v = x[i * ncols + c];
            for k in i + 1..dim {
                v -= l.at(k, i) * x[k * ncols + c];
            }
            x[i * ncols + c] = v / l.at(i, i);
        }
    }
    Ok(RhsBlocks::from_flat(m.nblocks(), m.block_size(), ncols, &x))
}
