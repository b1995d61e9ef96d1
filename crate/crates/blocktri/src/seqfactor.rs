//! Sequential baseline: block bidiagonal Cholesky sweep and the matching
//! forward/backward solve. This is the correctness reference and the
//! denominator of every speedup figure.

use crate::block::DenseBlock;
use crate::error::{Error, FailSite, Result};
use crate::kernels;
use crate::matrix::{BlockTridiag, RhsBlocks};
use crate::meter::FlopMeter;
use crate::scalar::Scalar;

/// Cholesky factor of the naturally ordered matrix: lower-triangular
/// diagonal blocks and the factored sub-diagonal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqFactor<S> {
    n: usize,
    nblocks: usize,
    dhat: Vec<DenseBlock<S>>,
    ehat: Vec<DenseBlock<S>>,
}

impl<S: Scalar> SeqFactor<S> {
    pub fn block_size(&self) -> usize {
        self.n
    }

    pub fn nblocks(&self) -> usize {
        self.nblocks
    }

    pub fn dhat(&self, i: usize) -> &DenseBlock<S> {
        &self.dhat[i]
    }

    pub fn ehat(&self, i: usize) -> &DenseBlock<S> {
        &self.ehat[i]
    }
}

fn npd(site: FailSite, err: Error) -> Error {
    match err {
        Error::NotPositiveDefinite { pivot, .. } => Error::NotPositiveDefinite { site, pivot },
        other => other,
    }
}

/// Factor the matrix in natural order. Costs exactly `(7N - 6) n^3` units:
/// one `potrf` for the first block, then `trsm + syrk + potrf` per block.
pub fn factor_sequential<S: Scalar>(
    m: &BlockTridiag<S>,
    meter: &FlopMeter,
) -> Result<SeqFactor<S>> {
    let nb = m.nblocks();
    let mut dhat = Vec::with_capacity(nb);
    let mut ehat = Vec::with_capacity(nb.saturating_sub(1));
    let first =
        kernels::potrf(m.diag(0), meter).map_err(|e| npd(FailSite::Block { block: 1 }, e))?;
    dhat.push(first);
    for i in 1..nb {
        let e = kernels::trsm_right(m.offdiag(i - 1), &dhat[i - 1], meter)?;
        let downdated = kernels::syrk_down(m.diag(i), &e, false, meter);
        let d = kernels::potrf(&downdated, meter)
            .map_err(|err| npd(FailSite::Block { block: i + 1 }, err))?;
        ehat.push(e);
        dhat.push(d);
    }
    Ok(SeqFactor {
        n: m.block_size(),
        nblocks: nb,
        dhat,
        ehat,
    })
}

/// Solve `A x = b` with the sequential factor: one forward sweep over the
/// block bidiagonal `L`, one backward sweep over `L^T`.
pub fn solve_sequential<S: Scalar>(
    f: &SeqFactor<S>,
    b: &RhsBlocks<S>,
    meter: &FlopMeter,
) -> Result<RhsBlocks<S>> {
    if b.nblocks() != f.nblocks || b.block_rows() != f.n {
        return Err(Error::ShapeMismatch {
            op: "solve_sequential",
            expected: (f.nblocks, f.n),
            got: (b.nblocks(), b.block_rows()),
        });
    }
    let nb = f.nblocks;
    // forward: L y = b
    let mut y: Vec<DenseBlock<S>> = Vec::with_capacity(nb);
    for i in 0..nb {
        let rhs = if i == 0 {
            b.block(0).clone()
        } else {
            kernels::gemm_neg(&f.ehat[i - 1], &y[i - 1], Some(b.block(i)), meter)
        };
        y.push(kernels::trsm_left(&rhs, &f.dhat[i], meter)?);
    }
    // backward: L^T x = y
    let mut x: Vec<Option<DenseBlock<S>>> = vec![None; nb];
    for i in (0..nb).rev() {
        let rhs = if i + 1 == nb {
            y[i].clone()
        } else {
            kernels::gemm_tn_neg(&f.ehat[i], x[i + 1].as_ref().unwrap(), Some(&y[i]), meter)
        };
        x[i] = Some(kernels::trsm_left_trans(&rhs, &f.dhat[i], meter)?);
    }
    Ok(RhsBlocks::from_blocks(
        x.into_iter().map(Option::unwrap).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::probgen::{generate_rhs, generate_spd};

    #[test]
    fn single_block_costs_one_potrf() {
        let m = generate_spd::<f64>(1, 3, 0);
        let meter = FlopMeter::new();
        factor_sequential(&m, &meter).unwrap();
        assert_eq!(meter.thirds(), 27);
    }

    #[test]
    fn meter_matches_closed_form() {
        // (7N - 6) n^3 units, exactly
        for (nb, n) in [(1usize, 1usize), (4, 3), (10, 1), (7, 2), (64, 4)] {
            let m = generate_spd::<f64>(nb, n, 42);
            let meter = FlopMeter::new();
            factor_sequential(&m, &meter).unwrap();
            assert_eq!(
                meter.thirds(),
                ((7 * nb - 6) * n * n * n) as u64,
                "N={nb} n={n}"
            );
        }
        // the worked example: N=4, n=3 -> 594 units = 198 flops
        let m = generate_spd::<f64>(4, 3, 7);
        let meter = FlopMeter::new();
        factor_sequential(&m, &meter).unwrap();
        assert_eq!(meter.thirds(), 594);
    }

    #[test]
    fn identity_factors_to_identity() {
        let m = BlockTridiag::<f64>::identity(3, 5);
        let meter = FlopMeter::new();
        let f = factor_sequential(&m, &meter).unwrap();
        for i in 0..5 {
            assert_eq!(f.dhat(i), &DenseBlock::identity(3));
        }
        for i in 0..4 {
            assert!(f.ehat(i).is_zero());
        }
    }

    #[test]
    fn not_positive_definite_reports_block() {
        // make block 2 indefinite
        let mut diag = vec![
            DenseBlock::<f64>::identity(2),
            DenseBlock::<f64>::zeros(2, 2),
        ];
        diag[1].set(0, 0, -1.0);
        diag[1].set(1, 1, -1.0);
        let off = vec![DenseBlock::<f64>::zeros(2, 2)];
        let m = BlockTridiag::new(diag, off);
        let meter = FlopMeter::new();
        let err = factor_sequential(&m, &meter).unwrap_err();
        assert_eq!(
            err,
            Error::NotPositiveDefinite {
                site: FailSite::Block { block: 2 },
                pivot: 1
            }
        );
    }

    #[test]
    fn solve_identity_and_zero() {
        let m = BlockTridiag::<f64>::identity(2, 4);
        let meter = FlopMeter::new();
        let f = factor_sequential(&m, &meter).unwrap();
        let b = generate_rhs::<f64>(4, 2, 3, 5);
        assert_eq!(solve_sequential(&f, &b, &meter).unwrap(), b);
        let zero = RhsBlocks::zeros(4, 2, 1);
        assert_eq!(solve_sequential(&f, &zero, &meter).unwrap(), zero);
    }

    #[test]
    fn solve_matches_dense_oracle() {
        let m = generate_spd::<f64>(5, 2, 9);
        let b = generate_rhs::<f64>(5, 2, 1, 10);
        let meter = FlopMeter::new();
        let f = factor_sequential(&m, &meter).unwrap();
        let x = solve_sequential(&f, &b, &meter).unwrap();
        let x_ref = oracle::dense_oracle_solve(&m, &b).unwrap();
        assert!(x.rel_diff(&x_ref) < 1e-10);
    }

    #[test]
    fn solve_shape_mismatch() {
        let m = generate_spd::<f64>(3, 2, 1);
        let meter = FlopMeter::new();
        let f = factor_sequential(&m, &meter).unwrap();
        let bad = RhsBlocks::<f64>::zeros(4, 2, 1);
        assert!(matches!(
            solve_sequential(&f, &bad, &meter),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
