//! Symmetric sparse matrices and a Cholesky solver backed by faer.

use std::fmt;
use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::LltRegularization;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, Par, Side};

/// Row-compressed pattern of a structurally symmetric matrix. Both triangles
/// are stored; column indices are sorted within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct Pattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Pattern {
    /// Pattern from per-row column sets (each row must include its diagonal).
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Pattern {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        Pattern { n, row_ptr, cols }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Position of entry `(i, j)` in the value array.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let r = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        r.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }
}

#[derive(Clone, Debug)]
pub struct SymMatrix {
    pub pattern: Arc<Pattern>,
    pub values: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(pattern: Arc<Pattern>) -> SymMatrix {
        let values = vec![0.0; pattern.nnz()];
        SymMatrix { pattern, values }
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    /// Add to entry `(i, j)`; the entry must be in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.pattern.find(i, j).expect("entry outside sparsity pattern");
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.find(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        (0..p.n)
            .map(|i| p.row(i).map(|k| self.values[k] * x[p.cols[k]]).sum())
            .collect()
    }

    /// Dense copy, for tests and small oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in self.pattern.row(i) {
                d[i][self.pattern.cols[k]] = self.values[k];
            }
        }
        d
    }

    /// Symmetric elimination of prescribed values: row and column of each
    /// fixed dof are cleared, the diagonal kept, and the right-hand side
    /// corrected so the solution takes the prescribed value.
    pub fn apply_fixed(&mut self, rhs: &mut [f64], fixed: &[Option<f64>]) {
        let p = self.pattern.clone();
        for i in 0..p.n {
            if let Some(g) = fixed[i] {
                let mut diag = 0.0;
                for k in p.row(i) {
                    let j = p.cols[k];
                    if j == i {
                        diag = self.values[k];
                    } else {
                        self.values[k] = 0.0;
                    }
                }
                if diag == 0.0 {
                    let k = p.find(i, i).expect("diagonal in pattern");
                    self.values[k] = 1.0;
                    diag = 1.0;
                }
                rhs[i] = diag * g;
            } else {
                for k in p.row(i) {
                    let j = p.cols[k];
                    if let Some(g) = fixed[j] {
                        rhs[i] -= self.values[k] * g;
                        self.values[k] = 0.0;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LinalgError {
    /// Factorization met a non-positive pivot at the given (original) dof.
    NotPositiveDefinite { dof: usize },
    Symbolic(String),
    /// Sparse LU found the matrix singular.
    Singular(String),
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::NotPositiveDefinite { dof } => {
                write!(f, "system matrix is not positive definite (pivot at dof {dof})")
            }
            LinalgError::Symbolic(m) => write!(f, "symbolic factorization failed: {m}"),
            LinalgError::Singular(m) => write!(f, "LU factorization failed: {m}"),
        }
    }
}

impl std::error::Error for LinalgError {}

/// Sparse Cholesky solver for matrices sharing one pattern. The symbolic
/// analysis is done once; each `factorize` call only redoes the numerics.
pub struct CholeskySolver {
    pattern: Arc<Pattern>,
    upper_col_ptr: Vec<usize>,
    upper_rows: Vec<usize>,
    /// For each stored upper entry, its index in the full value array.
    upper_src: Vec<usize>,
    upper_vals: Vec<f64>,
    symbolic: SymbolicCholesky<usize>,
    l_values: Vec<f64>,
    factored: bool,
}

impl CholeskySolver {
    pub fn new(pattern: Arc<Pattern>) -> Result<CholeskySolver, LinalgError> {
        // Row i of the symmetric CSR pattern is column i of the CSC pattern.
        let n = pattern.n;
        let mut upper_col_ptr = vec![0];
        let mut upper_rows = Vec::new();
        let mut upper_src = Vec::new();
        for j in 0..n {
            for k in pattern.row(j) {
                let i = pattern.cols[k];
                if i <= j {
                    upper_rows.push(i);
                    upper_src.push(k);
                }
            }
            upper_col_ptr.push(upper_rows.len());
        }
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &upper_col_ptr, None, &upper_rows);
        let symbolic = factorize_symbolic_cholesky(
            sym,
            Side::Upper,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams::default(),
        )
        .map_err(|e| LinalgError::Symbolic(format!("{e:?}")))?;
        let l_values = vec![0.0; symbolic.len_val()];
        let upper_vals = vec![0.0; upper_rows.len()];
        Ok(CholeskySolver {
            pattern,
            upper_col_ptr,
            upper_rows,
            upper_src,
            upper_vals,
            symbolic,
            l_values,
            factored: false,
        })
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn factorize(&mut self, a: &SymMatrix) -> Result<(), LinalgError> {
        assert!(Arc::ptr_eq(&a.pattern, &self.pattern) || *a.pattern == *self.pattern);
        for (dst, &src) in self.upper_vals.iter_mut().zip(&self.upper_src) {
            *dst = a.values[src];
        }
        let n = self.pattern.n;
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &self.upper_col_ptr, None, &self.upper_rows);
        let mat = SparseColMatRef::new(sym, &self.upper_vals);
        let par = Par::Seq;
        let mut mem = MemBuffer::new(self.symbolic.factorize_numeric_llt_scratch::<f64>(par, Default::default()));
        self.factored = false;
        let res = self.symbolic.factorize_numeric_llt(
            &mut self.l_values,
            mat,
            Side::Upper,
            LltRegularization::default(),
            par,
            MemStack::new(&mut mem),
            Default::default(),
        );
        match res {
            Ok(_) => {
                self.factored = true;
                Ok(())
            }
            Err(e) => {
                let idx = match e {
                    faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } => index,
                };
                // the pivot index refers to the permuted ordering
                let dof = match self.symbolic.perm() {
                    Some(p) => {
                        let (fwd, _) = p.arrays();
                        fwd.get(idx.saturating_sub(1)).copied().unwrap_or(0)
                    }
                    None => idx.saturating_sub(1),
                };
                Err(LinalgError::NotPositiveDefinite { dof })
            }
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert!(self.factored, "solve before successful factorization");
        let n = self.pattern.n;
        let mut x = faer::Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        let llt = LltRef::<'_, usize, f64>::new(&self.symbolic, &self.l_values);
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        llt.solve_in_place_with_conj(Conj::No, x.as_mut(), Par::Seq, MemStack::new(&mut mem));
        (0..n).map(|i| x[(i, 0)]).collect()
    }
}

/// Solve a general square sparse system given as `(row, col, value)`
/// triplets; duplicates are summed.
pub fn sparse_lu_solve(n: usize, entries: &[(usize, usize, f64)], rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
    use faer::linalg::solvers::Solve;
    use faer::sparse::{SparseColMat, Triplet};
    let triplets: Vec<Triplet<usize, usize, f64>> =
        entries.iter().map(|&(row, col, val)| Triplet { row, col, val }).collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| LinalgError::Symbolic(format!("{e:?}")))?;
    let lu = a.sp_lu().map_err(|e| LinalgError::Singular(format!("{e:?}")))?;
    let b = faer::Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let x = lu.solve(&b);
    let x: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(LinalgError::Singular("non-finite solution".into()))
    }
}

/// Dense Gaussian elimination with partial pivoting; a reference solver for
/// small systems in tests.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k] == 0.0 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Some(x)
}
