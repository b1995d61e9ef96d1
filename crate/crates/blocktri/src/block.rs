//! Dense blocks: the unit of storage and of every kernel.

use crate::scalar::Scalar;

/// Dense `rows x cols` block, row-major.
///
/// Triangular results are stored dense with the strictly-upper entries
/// explicitly zeroed, so block equality is well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> DenseBlock<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "blocks must be non-empty");
        Self {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut b = Self::zeros(n, n);
        for i in 0..n {
            b[(i, i)] = S::ONE;
        }
        b
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Self { rows, cols, data }
    }

    /// Build from nested row slices; handy in tests.
    pub fn from_rows(rows: &[&[S]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::from_data(r, c, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn transposed(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self.at(r, c);
            }
        }
        t
    }

    /// Copy the lower triangle onto the upper one (square blocks only).
    pub fn mirror_lower(&mut self) {
        assert_eq!(self.rows, self.cols);
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                self.data[r * self.cols + c] = self.data[c * self.cols + r];
            }
        }
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// True if every strictly-upper entry is exactly zero.
    pub fn is_lower_triangular(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|r| (r + 1..self.cols).all(|c| self.at(r, c) == S::ZERO))
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

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Squared Frobenius norm of `self - other`.
    pub fn diff_frob_sq(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a.to_f64() - b.to_f64();
                d * d
            })
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == S::ZERO)
    }
}

impl<S: Scalar> std::ops::Index<(usize, usize)> for DenseBlock<S> {
    type Output = S;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &S {
        &self.data[r * self.cols + c]
    }
}

impl<S: Scalar> std::ops::IndexMut<(usize, usize)> for DenseBlock<S> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut S {
        &mut self.data[r * self.cols + c]
    }
}
