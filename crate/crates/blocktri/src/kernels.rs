//! The four elementary block operations, each metered exactly.
//!
//! Costs in thirds-of-a-flop units, charged on success:
//!
//! | kernel                  | cost (units) |
//! |-------------------------|--------------|
//! | `potrf` (n x n)         | `n^3`        |
//! | `trsm_*` (m x n vs n)   | `3 m n^2`    |
//! | `syrk_down` (n x n, k)  | `3 n^2 k`    |
//! | `gemm_*` (m x n x p)    | `6 m n p`    |
//!
//! Kernels are plain triple loops on fully resident blocks: correctness and
//! exact metering are the contract here, not micro-architecture. Shape
//! mismatches are programmer errors and panic; data-dependent failures
//! (non-positive pivot, zero triangular diagonal) return `Err`.

use crate::block::DenseBlock;
use crate::error::{Error, FailSite, Result};
use crate::meter::FlopMeter;
use crate::scalar::Scalar;

/// Cholesky factor of a symmetric positive-definite block: `L L^T = d`.
///
/// Only the lower triangle of `d` is read; the strictly-upper entries of the
/// result are exactly zero. A pivot that is not strictly positive after
/// downdating aborts with the 1-based pivot index; no perturbation is
/// applied, failure must stay visible.
pub fn potrf<S: Scalar>(d: &DenseBlock<S>, meter: &FlopMeter) -> Result<DenseBlock<S>> {
    assert!(d.is_square(), "potrf needs a square block");
    let n = d.rows();
    let mut l = DenseBlock::<S>::zeros(n, n);
    for j in 0..n {
        let mut diag = d.at(j, j);
        for k in 0..j {
            diag -= l.at(j, k) * l.at(j, k);
        }
        // negated comparison so a NaN pivot is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(diag > S::ZERO) {
            return Err(Error::NotPositiveDefinite {
                site: FailSite::Block { block: 0 },
                pivot: j + 1,
            });
        }
        let root = diag.sqrt();
        l.set(j, j, root);
        for i in j + 1..n {
            let mut v = d.at(i, j);
            for k in 0..j {
                v -= l.at(i, k) * l.at(j, k);
            }
            l.set(i, j, v / root);
        }
    }
    meter.add((n * n * n) as u64);
    Ok(l)
}

fn check_triangular_diag<S: Scalar>(l: &DenseBlock<S>) -> Result<()> {
    for i in 0..l.rows() {
        if l.at(i, i) == S::ZERO {
            return Err(Error::SingularTriangular);
        }
    }
    Ok(())
}

/// `e * l^{-T}` for lower-triangular `l`: the right-solve that factors an
/// off-diagonal block against an already factored column.
pub fn trsm_right<S: Scalar>(
    e: &DenseBlock<S>,
    l: &DenseBlock<S>,
    meter: &FlopMeter,
) -> Result<DenseBlock<S>> {
    let (m, n) = (e.rows(), e.cols());
    assert!(l.is_square() && l.rows() == n, "trsm_right shape mismatch");
    check_triangular_diag(l)?;
    let mut x = DenseBlock::<S>::zeros(m, n);
    // x l^T = e, solved column by column of x (l^T is upper triangular).
    for r in 0..m {
        for j in 0..n {
            let mut v = e.at(r, j);
            for k in 0..j {
                v -= x.at(r, k) * l.at(j, k);
            }
            x.set(r, j, v / l.at(j, j));
        }
    }
    meter.add(3 * (m * n * n) as u64);
    Ok(x)
}

/// `l^{-1} * e` for lower-triangular `l` (forward substitution).
pub fn trsm_left<S: Scalar>(
    e: &DenseBlock<S>,
    l: &DenseBlock<S>,
    meter: &FlopMeter,
) -> Result<DenseBlock<S>> {
    let (n, m) = (e.rows(), e.cols());
    assert!(l.is_square() && l.rows() == n, "trsm_left shape mismatch");
    check_triangular_diag(l)?;
    let mut x = DenseBlock::<S>::zeros(n, m);
    for c in 0..m {
        for i in 0..n {
            let mut v = e.at(i, c);
            for k in 0..i {
                v -= l.at(i, k) * x.at(k, c);
            }
            x.set(i, c, v / l.at(i, i));
        }
    }
    meter.add(3 * (m * n * n) as u64);
    Ok(x)
}

/// `l^{-T} * e` for lower-triangular `l` (backward substitution).
pub fn trsm_left_trans<S: Scalar>(
    e: &DenseBlock<S>,
    l: &DenseBlock<S>,
    meter: &FlopMeter,
) -> Result<DenseBlock<S>> {
    let (n, m) = (e.rows(), e.cols());
    assert!(
        l.is_square() && l.rows() == n,
        "trsm_left_trans shape mismatch"
    );
    check_triangular_diag(l)?;
    let mut x = DenseBlock::<S>::zeros(n, m);
    for c in 0..m {
        for i in (0..n).rev() {
            let mut v = e.at(i, c);
            for k in i + 1..n {
                v -= l.at(k, i) * x.at(k, c);
            }
            x.set(i, c, v / l.at(i, i));
        }
    }
    meter.add(3 * (m * n * n) as u64);
    Ok(x)
}

/// Symmetric downdate `d - e e^T` (or `d - e^T e` when `transpose_e`).
///
/// The lower triangle is computed and mirrored up, so the result is exactly
/// symmetric as stored.
pub fn syrk_down<S: Scalar>(
    d: &DenseBlock<S>,
    e: &DenseBlock<S>,
    transpose_e: bool,
    meter: &FlopMeter,
) -> DenseBlock<S> {
    assert!(d.is_square(), "syrk_down needs a square target");
    let n = d.rows();
    let k = if transpose_e {
        assert_eq!(e.cols(), n, "syrk_down shape mismatch");
        e.rows()
    } else {
        assert_eq!(e.rows(), n, "syrk_down shape mismatch");
        e.cols()
    };
    let mut out = d.clone();
    for i in 0..n {
        for j in 0..=i {
            let mut acc = S::ZERO;
            if transpose_e {
                for q in 0..k {
                    acc += e.at(q, i) * e.at(q, j);
                }
            } else {
                for q in 0..k {
                    acc += e.at(i, q) * e.at(j, q);
                }
            }
            let v = out.at(i, j) - acc;
            out.set(i, j, v);
        }
    }
    out.mirror_lower();
    meter.add(3 * (n * n * k) as u64);
    out
}

/// `e e^T` (or `e^T e` when `transpose_e`): the product half of a symmetric
/// downdate, for schedules that subtract it through an accumulation
/// primitive instead of in place. Metered like the downdate itself; the
/// deferred subtraction is lower-order and uncounted either way.
pub fn syrk_product<S: Scalar>(
    e: &DenseBlock<S>,
    transpose_e: bool,
    meter: &FlopMeter,
) -> DenseBlock<S> {
    let (n, k) = if transpose_e {
        (e.cols(), e.rows())
    } else {
        (e.rows(), e.cols())
    };
    let mut out = DenseBlock::<S>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = S::ZERO;
            if transpose_e {
                for q in 0..k {
                    acc += e.at(q, i) * e.at(q, j);
                }
            } else {
                for q in 0..k {
                    acc += e.at(i, q) * e.at(j, q);
                }
            }
            out.set(i, j, acc);
        }
    }
    out.mirror_lower();
    meter.add(3 * (n * n * k) as u64);
    out
}

/// `-a * b`, or `acc - a * b` when an accumulator block is given.
pub fn gemm_neg<S: Scalar>(
    a: &DenseBlock<S>,
    b: &DenseBlock<S>,
    accumulate_into: Option<&DenseBlock<S>>,
    meter: &FlopMeter,
) -> DenseBlock<S> {
    let (m, n, p) = (a.rows(), a.cols(), b.cols());
    assert_eq!(b.rows(), n, "gemm_neg shape mismatch");
    let mut out = match accumulate_into {
        Some(acc) => {
            assert_eq!((acc.rows(), acc.cols()), (m, p), "gemm_neg acc shape");
            acc.clone()
        }
        None => DenseBlock::<S>::zeros(m, p),
    };
    for i in 0..m {
        for q in 0..n {
            let aiq = a.at(i, q);
            for j in 0..p {
                let v = out.at(i, j) - aiq * b.at(q, j);
                out.set(i, j, v);
            }
        }
    }
    meter.add(6 * (m * n * p) as u64);
    out
}

/// `-a^T * b`, or `acc - a^T * b`; same cost model as `gemm_neg`.
pub fn gemm_tn_neg<S: Scalar>(
    a: &DenseBlock<S>,
    b: &DenseBlock<S>,
    accumulate_into: Option<&DenseBlock<S>>,
    meter: &FlopMeter,
) -> DenseBlock<S> {
    let (k, m, p) = (a.rows(), a.cols(), b.cols());
    assert_eq!(b.rows(), k, "gemm_tn_neg shape mismatch");
    let mut out = match accumulate_into {
        Some(acc) => {
            assert_eq!((acc.rows(), acc.cols()), (m, p), "gemm_tn_neg acc shape");
            acc.clone()
        }
        None => DenseBlock::<S>::zeros(m, p),
    };
    for q in 0..k {
        for i in 0..m {
            let aqi = a.at(q, i);
            for j in 0..p {
                let v = out.at(i, j) - aqi * b.at(q, j);
                out.set(i, j, v);
            }
        }
    }
    meter.add(6 * (m * k * p) as u64);
    out
}

/// Plain product `a * b` (unmetered); verification helper.
pub fn matmul<S: Scalar>(a: &DenseBlock<S>, b: &DenseBlock<S>) -> DenseBlock<S> {
    let (m, n, p) = (a.rows(), a.cols(), b.cols());
    assert_eq!(b.rows(), n, "matmul shape mismatch");
    let mut out = DenseBlock::<S>::zeros(m, p);
    for i in 0..m {
        for q in 0..n {
            let aiq = a.at(i, q);
            for j in 0..p {
                let v = out.at(i, j) + aiq * b.at(q, j);
                out.set(i, j, v);
            }
        }
    }
    out
}

/// `a * b^T` (unmetered); verification helper.
pub fn matmul_nt<S: Scalar>(a: &DenseBlock<S>, b: &DenseBlock<S>) -> DenseBlock<S> {
    let (m, n) = (a.rows(), a.cols());
    let p = b.rows();
    assert_eq!(b.cols(), n, "matmul_nt shape mismatch");
    let mut out = DenseBlock::<S>::zeros(m, p);
    for i in 0..m {
        for j in 0..p {
            let mut acc = S::ZERO;
            for q in 0..n {
                acc += a.at(i, q) * b.at(j, q);
            }
            out.set(i, j, acc);
        }
    }
    out
}
