//! CSR matrices, damped least squares (LSMR) and extreme singular values.

mod lsmr;
mod spectrum;

pub use lsmr::{lsmr, LsmrOptions, SolverReport, StopReason};
pub use spectrum::{cond, cond_with_limit, default_budget, extreme_singular_values, SingularValues};

use crate::error::{MssError, Result};

/// Anything that can apply `A` and `Aᵀ` to a vector.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `y = A x`, overwriting `y`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `x = Aᵀ y`, overwriting `x`.
    fn apply_t(&self, y: &[f64], x: &mut [f64]);
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if offsets.len() != rows + 1 || offsets[0] != 0 {
            return Err(MssError::invalid("row offsets must have length rows + 1 and start at 0"));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(MssError::invalid("row offsets must be nondecreasing"));
        }
        if offsets[rows] != indices.len() || indices.len() != values.len() {
            return Err(MssError::invalid("offsets, indices and values disagree on nnz"));
        }
        if indices.iter().any(|&c| c as usize >= cols) {
            return Err(MssError::invalid("column index out of range"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MssError::invalid("matrix values must be finite"));
        }
        Ok(Self { rows, cols, offsets, indices, values })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are kept as separate entries.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<_> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut offsets = vec![0usize; rows + 1];
        for &(r, _, _) in &sorted {
            if r >= rows {
                return Err(MssError::invalid("row index out of range"));
            }
            offsets[r + 1] += 1;
        }
        for i in 0..rows {
            offsets[i + 1] += offsets[i];
        }
        let indices = sorted.iter().map(|&(_, c, _)| c as u32).collect();
        let values = sorted.iter().map(|&(_, _, v)| v).collect();
        Self::new(rows, cols, offsets, indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.offsets[i]..self.offsets[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// Copy with row `i` multiplied by `scale[i]`.
    pub fn scale_rows(&self, scale: &[f64]) -> Result<Self> {
        if scale.len() != self.rows {
            return Err(MssError::DimensionMismatch { expected: self.rows, got: scale.len() });
        }
        let mut out = self.clone();
        for (i, &s) in scale.iter().enumerate() {
            for v in &mut out.values[self.offsets[i]..self.offsets[i + 1]] {
                *v *= s;
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(MssError::DimensionMismatch { expected: self.cols, got: x.len() });
        }
        let mut y = vec![0.0; self.rows];
        self.apply(x, &mut y);
        Ok(y)
    }

    pub fn rmatvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(MssError::DimensionMismatch { expected: self.rows, got: y.len() });
        }
        let mut x = vec![0.0; self.cols];
        self.apply_t(y, &mut x);
        Ok(x)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (i, row) in out.iter_mut().enumerate() {
            let (idx, val) = self.row(i);
            for (&c, &v) in idx.iter().zip(val) {
                row[c as usize] += v;
            }
        }
        out
    }
}

impl LinearOperator for SparseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (idx, val) = self.row(i);
            *yi = idx.iter().zip(val).map(|(&c, &v)| v * x[c as usize]).sum();
        }
    }

    fn apply_t(&self, y: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let (idx, val) = self.row(i);
            for (&c, &v) in idx.iter().zip(val) {
                x[c as usize] += v * yi;
            }
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    pub(crate) fn random_sparse(rows: usize, cols: usize, density: f64, seed: u64) -> SparseMatrix {
        let mut rng = stream(seed, &[]);
        let mut t = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if rng.gen::<f64>() < density {
                    t.push((r, c, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        SparseMatrix::from_triplets(rows, cols, &t).unwrap()
    }

    #[test]
    fn identity_is_identity() {
        let i = SparseMatrix::identity(4);
        let x = vec![1.0, -2.0, 3.5, 0.0];
        assert_eq!(i.matvec(&x).unwrap(), x);
        assert_eq!(i.rmatvec(&x).unwrap(), x);
    }

    #[test]
    fn residue_design_times_ones() {
        // moduli (2, 3), k = 4
        let t: Vec<_> = (0..4).flat_map(|x| [(x % 2, x, 1.0), (2 + x % 3, x, 1.0)]).collect();
        let a = SparseMatrix::from_triplets(5, 4, &t).unwrap();
        assert_eq!(a.matvec(&[1.0; 4]).unwrap(), vec![2.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn products_match_dense() {
        let a = random_sparse(30, 20, 0.2, 3);
        let dense = a.to_dense();
        let mut rng = stream(4, &[]);
        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ax = a.matvec(&x).unwrap();
        let aty = a.rmatvec(&y).unwrap();
        for i in 0..30 {
            let d: f64 = (0..20).map(|j| dense[i][j] * x[j]).sum();
            assert!((ax[i] - d).abs() < 1e-12);
        }
        for j in 0..20 {
            let d: f64 = (0..30).map(|i| dense[i][j] * y[i]).sum();
            assert!((aty[j] - d).abs() < 1e-12);
        }
        let lhs = dot(&ax, &y);
        let rhs = dot(&x, &aty);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn validation_and_dimension_errors() {
        assert!(SparseMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(SparseMatrix::new(1, 2, vec![0, 1], vec![0], vec![f64::NAN]).is_err());
        let a = SparseMatrix::identity(3);
        assert!(matches!(a.matvec(&[1.0]), Err(MssError::DimensionMismatch { .. })));
        assert!(a.scale_rows(&[1.0, 2.0]).is_err());
        let s = a.scale_rows(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.matvec(&[1.0; 3]).unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
