//! Compressed sparse row operators and a thin wrapper over faer's sparse LU.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::perm::PermRef;
use faer::prelude::*;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, IntranodeLbltRef, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, Side};

use crate::error::{Error, Result};

/// Square sparse matrix in CSR form with sorted, duplicate-free columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>, symmetric: bool) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "triplet ({r},{c}) outside {dim}x{dim}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            dim,
            row_ptr,
            cols,
            vals,
            symmetric,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Column indices and values of one row.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entry of `|A - Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        self.iter()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    /// `xᵀ A y`.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        (0..self.dim)
            .map(|r| {
                let (cols, vals) = self.row(r);
                let ay: f64 = cols.iter().zip(vals).map(|(&c, &v)| v * y[c]).sum();
                x[r] * ay
            })
            .sum()
    }

    /// `αA + βB` for operators on the same dimension.
    pub fn combine(alpha: f64, a: &SparseOperator, beta: f64, b: &SparseOperator) -> Self {
        assert_eq!(a.dim, b.dim);
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(a.nnz() + b.nnz());
        t.extend(a.iter().map(|(r, c, v)| (r, c, alpha * v)));
        t.extend(b.iter().map(|(r, c, v)| (r, c, beta * v)));
        Self::from_triplets(a.dim, t, a.symmetric && b.symmetric)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            vals: self.vals.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Principal submatrix on `dofs` (in the given order).
    pub fn restrict(&self, dofs: &[usize]) -> Result<SparseOperator> {
        let map = local_map(self.dim, dofs)?;
        let mut t = Vec::new();
        for (li, &g) in dofs.iter().enumerate() {
            let (cols, vals) = self.row(g);
            for (&c, &v) in cols.iter().zip(vals) {
                if let Some(lj) = map[c] {
                    t.push((li, lj, v));
                }
            }
        }
        Ok(Self::from_triplets(dofs.len(), t, self.symmetric))
    }

    /// Triplets of this operator shifted by `offset` in both indices.
    pub fn triplets(&self, offset: usize) -> impl Iterator<Item = Triplet<usize, usize, f64>> + '_ {
        self.iter().map(move |(r, c, v)| Triplet {
            row: r + offset,
            col: c + offset,
            val: v,
        })
    }
}

/// `global -> local` lookup for a dof list; rejects duplicates and
/// out-of-range indices.
pub fn local_map(dim: usize, dofs: &[usize]) -> Result<Vec<Option<usize>>> {
    let mut map = vec![None; dim];
    for (li, &g) in dofs.iter().enumerate() {
        if g >= dim {
            return Err(Error::Index {
                what: "dof",
                index: g,
                limit: dim,
            });
        }
        if map[g].is_some() {
            return Err(Error::Config(format!("duplicate dof {g} in restriction set")));
        }
        map[g] = Some(li);
    }
    Ok(map)
}

/// Subvector on `dofs`.
pub fn restrict_vector(v: &[f64], dofs: &[usize]) -> Result<Vec<f64>> {
    local_map(v.len(), dofs)?;
    Ok(dofs.iter().map(|&g| v[g]).collect())
}

/// Scatter a restricted vector back to `dim` entries (zero elsewhere).
pub fn extend_by_zero(dim: usize, dofs: &[usize], local: &[f64]) -> Vec<f64> {
    assert_eq!(dofs.len(), local.len());
    let mut out = vec![0.0; dim];
    for (&g, &v) in dofs.iter().zip(local) {
        out[g] = v;
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetric analyses keyed by the lower-triangle sparsity pattern, so that
/// patches with identical structure share one ordering and elimination tree.
pub struct SymbolicCache {
    capacity: usize,
    entries: Mutex<VecDeque<SymbolicEntry>>,
}

struct SymbolicEntry {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    symbolic: Arc<SymbolicCholesky<usize>>,
}

impl SymbolicCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: Mutex::new(VecDeque::new()),
        }
    }

    fn get_or_insert(&self, lower: &SparseColMat<usize, f64>) -> std::result::Result<Arc<SymbolicCholesky<usize>>, String> {
        let col_ptr = lower.symbolic().col_ptr();
        let row_idx = lower.symbolic().row_idx();
        {
            let entries = self.entries.lock().unwrap();
            if let Some(e) = entries.iter().find(|e| e.col_ptr == col_ptr && e.row_idx == row_idx) {
                return Ok(e.symbolic.clone());
            }
        }
        let symbolic = Arc::new(analyze_lower(lower)?);
        let mut entries = self.entries.lock().unwrap();
        if entries.len() == self.capacity {
            entries.pop_front();
        }
        entries.push_back(SymbolicEntry {
            col_ptr: col_ptr.to_vec(),
            row_idx: row_idx.to_vec(),
            symbolic: symbolic.clone(),
        });
        Ok(symbolic)
    }
}

fn analyze_lower(lower: &SparseColMat<usize, f64>) -> std::result::Result<SymbolicCholesky<usize>, String> {
    factorize_symbolic_cholesky(lower.symbolic(), Side::Lower, SymmetricOrdering::Amd, Default::default())
        .map_err(|e| format!("symbolic analysis failed: {e:?}"))
}

struct Lblt {
    symbolic: Arc<SymbolicCholesky<usize>>,
    values: Vec<f64>,
    subdiag: Vec<f64>,
    fwd: Vec<usize>,
    bwd: Vec<usize>,
}

impl Lblt {
    fn factor(lower: &SparseColMat<usize, f64>, symbolic: Arc<SymbolicCholesky<usize>>) -> Self {
        let n = lower.nrows();
        let mut values = vec![0.0; symbolic.len_val()];
        let mut subdiag = vec![0.0; n];
        let mut fwd = vec![0usize; n];
        let mut bwd = vec![0usize; n];
        let par = faer::get_global_parallelism();
        let mut buf = MemBuffer::new(symbolic.factorize_numeric_intranode_lblt_scratch::<f64>(par, Default::default()));
        symbolic.factorize_numeric_intranode_lblt(
            &mut values,
            &mut subdiag,
            &mut fwd,
            &mut bwd,
            lower.as_ref(),
            Side::Lower,
            par,
            MemStack::new(&mut buf),
            Default::default(),
        );
        Self {
            symbolic,
            values,
            subdiag,
            fwd,
            bwd,
        }
    }

    fn solve(&self, b: &Mat<f64>) -> Mat<f64> {
        let mut x = b.clone();
        let par = faer::get_global_parallelism();
        let n = self.fwd.len();
        let f = IntranodeLbltRef::new(&self.symbolic, &self.values, &self.subdiag, PermRef::new_checked(&self.fwd, &self.bwd, n));
        let mut buf = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(b.ncols(), par));
        f.solve_in_place_with_conj(Conj::No, x.as_mut(), par, MemStack::new(&mut buf));
        x
    }
}

enum Backend {
    Lu(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Lblt(Lblt),
}

/// Sparse direct solver for square systems: LU with partial pivoting, or a
/// symmetric indefinite `LBLᵀ` that falls back to LU when its residual is
/// not acceptable after refinement.
pub struct SparseLu {
    dim: usize,
    matrix: SparseColMat<usize, f64>,
    backend: Backend,
}

fn build_matrix(dim: usize, triplets: &[Triplet<usize, usize, f64>], context: &str) -> Result<SparseColMat<usize, f64>> {
    SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, triplets)
        .map_err(|e| Error::solver(context, format!("matrix creation failed: {e:?}")))
}

fn lu_of(matrix: &SparseColMat<usize, f64>, context: &str) -> Result<faer::sparse::linalg::solvers::Lu<usize, f64>> {
    matrix
        .sp_lu()
        .map_err(|e| Error::solver(context, format!("LU factorization failed: {e:?}")))
}

impl SparseLu {
    pub fn factor(dim: usize, triplets: &[Triplet<usize, usize, f64>], context: &str) -> Result<Self> {
        let matrix = build_matrix(dim, triplets, context)?;
        let lu = lu_of(&matrix, context)?;
        Ok(Self {
            dim,
            matrix,
            backend: Backend::Lu(lu),
        })
    }

    /// Factor a matrix whose triplets describe a symmetric operator (both
    /// triangles present). `cache` shares symbolic analyses between calls.
    pub fn factor_symmetric(
        dim: usize,
        triplets: &[Triplet<usize, usize, f64>],
        cache: Option<&SymbolicCache>,
        context: &str,
    ) -> Result<Self> {
        let matrix = build_matrix(dim, triplets, context)?;
        let lower_t: Vec<_> = triplets.iter().filter(|t| t.row >= t.col).copied().collect();
        let lower = build_matrix(dim, &lower_t, context)?;
        let symbolic = match cache {
            Some(c) => c.get_or_insert(&lower),
            None => analyze_lower(&lower).map(Arc::new),
        }
        .map_err(|e| Error::solver(context, e))?;
        let backend = Backend::Lblt(Lblt::factor(&lower, symbolic));
        Ok(Self { dim, matrix, backend })
    }

    pub fn from_operator(op: &SparseOperator, context: &str) -> Result<Self> {
        let t: Vec<_> = op.triplets(0).collect();
        if op.is_symmetric() {
            Self::factor_symmetric(op.dim(), &t, None, context)
        } else {
            Self::factor(op.dim(), &t, context)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn residuals(&self, x: &Mat<f64>, b: &Mat<f64>) -> (Mat<f64>, f64) {
        let r = b - &self.matrix * x;
        let mut worst = 0.0_f64;
        for j in 0..b.ncols() {
            let bn = b.col(j).norm_l2();
            let rn = r.col(j).norm_l2();
            let rel = if bn > 0.0 { rn / bn } else { rn };
            worst = if rel.is_finite() { worst.max(rel) } else { f64::INFINITY };
        }
        (r, worst)
    }

    /// Solve for every column of `rhs` (column-major, `dim` rows each) and
    /// check the relative residual of each column against `tol`.
    pub fn solve_checked(&self, rhs: &[Vec<f64>], tol: f64, context: &str) -> Result<(Vec<Vec<f64>>, f64)> {
        if rhs.is_empty() {
            return Ok((Vec::new(), 0.0));
        }
        let b = Mat::<f64>::from_fn(self.dim, rhs.len(), |i, j| rhs[j][i]);
        let (x, worst) = match &self.backend {
            Backend::Lu(lu) => {
                let x = lu.solve(&b);
                let (_, w) = self.residuals(&x, &b);
                (x, w)
            }
            Backend::Lblt(f) => {
                let mut x = f.solve(&b);
                let (mut r, mut w) = self.residuals(&x, &b);
                for _ in 0..3 {
                    if w <= 0.1 * tol {
                        break;
                    }
                    x += f.solve(&r);
                    (r, w) = self.residuals(&x, &b);
                }
                if w > tol {
                    let x = lu_of(&self.matrix, context)?.solve(&b);
                    let (_, w) = self.residuals(&x, &b);
                    (x, w)
                } else {
                    (x, w)
                }
            }
        };
        if !(worst <= tol) {
            return Err(Error::solver(
                context,
                format!("relative residual {worst:.3e} exceeds {tol:.1e} (singular or near-singular system)"),
            ));
        }
        let out = (0..rhs.len()).map(|j| (0..self.dim).map(|i| x[(i, j)]).collect()).collect();
        Ok((out, worst))
    }
}
