//! Q1 assembly of the weighted stiffness and mass forms, load vectors and
//! the fine-scale reference solve.

use crate::coeffs::{CoefficientField, SourceField};
use crate::error::{Error, Result};
use crate::mesh::TwoScaleMesh;
use crate::sparse::{extend_by_zero, SparseLu, SparseOperator};

/// How the coefficient enters an assembled form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    Signed,
    Absolute,
}

impl WeightMode {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            WeightMode::Signed => v,
            WeightMode::Absolute => v.abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Form {
    /// `∫ w ∇u·∇v`
    Stiffness,
    /// `∫ w u v`
    Mass,
}

const GAUSS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta]
}

fn shape_grad(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta), -(1.0 - xi)],
        [1.0 - eta, -xi],
        [eta, xi],
        [-eta, 1.0 - xi],
    ]
}

/// Element matrix of a unit-weight Q1 cell with side `h`, by 2×2 Gauss
/// quadrature (exact for these integrands). Node order is counter-clockwise
/// from the lower-left corner.
pub fn element_matrix(form: Form, h: f64) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for &xi in &GAUSS {
        for &eta in &GAUSS {
            match form {
                Form::Stiffness => {
                    // gradients scale by 1/h, area by h²: scale-free in 2D
                    let g = shape_grad(xi, eta);
                    for a in 0..4 {
                        for b in 0..4 {
                            m[a][b] += 0.25 * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                        }
                    }
                }
                Form::Mass => {
                    let n = shape(xi, eta);
                    for a in 0..4 {
                        for b in 0..4 {
                            m[a][b] += 0.25 * h * h * n[a] * n[b];
                        }
                    }
                }
            }
        }
    }
    m
}

/// Assemble `form` with cellwise weights over the whole fine mesh.
pub fn assemble_weighted(mesh: &TwoScaleMesh, weights: &[f64], form: Form) -> Result<SparseOperator> {
    if weights.len() != mesh.num_cells() {
        return Err(Error::Config(format!(
            "weight length {} does not match {} fine cells",
            weights.len(),
            mesh.num_cells()
        )));
    }
    let ke = element_matrix(form, mesh.h());
    let n = mesh.n_fine();
    let mut t = Vec::with_capacity(16 * mesh.num_cells());
    for cy in 0..n {
        for cx in 0..n {
            let w = weights[mesh.cell(cx, cy)];
            let nodes = mesh.cell_nodes(cx, cy);
            for a in 0..4 {
                for b in 0..4 {
                    t.push((nodes[a], nodes[b], w * ke[a][b]));
                }
            }
        }
    }
    Ok(SparseOperator::from_triplets(mesh.num_dofs(), t, true))
}

/// `∫ σ ∇u·∇v` (signed) or `∫ |σ| ∇u·∇v` (absolute). No boundary rows are
/// eliminated.
pub fn assemble_stiffness(mesh: &TwoScaleMesh, field: &CoefficientField, mode: WeightMode) -> Result<SparseOperator> {
    field.check_mesh(mesh)?;
    let w: Vec<f64> = field.sigma().iter().map(|&s| mode.apply(s)).collect();
    assemble_weighted(mesh, &w, Form::Stiffness)
}

/// `∫ scale·c u v` (signed) or `∫ scale·|c| u v` (absolute).
pub fn assemble_mass(mesh: &TwoScaleMesh, field: &CoefficientField, mode: WeightMode, scale: f64) -> Result<SparseOperator> {
    field.check_mesh(mesh)?;
    if !(scale > 0.0) {
        return Err(Error::Config(format!("mass scale must be positive, got {scale}")));
    }
    let w: Vec<f64> = field.c().iter().map(|&c| scale * mode.apply(c)).collect();
    assemble_weighted(mesh, &w, Form::Mass)
}

/// Unweighted consistent mass.
pub fn assemble_unit_mass(mesh: &TwoScaleMesh) -> SparseOperator {
    assemble_weighted(mesh, &vec![1.0; mesh.num_cells()], Form::Mass).expect("unit weights")
}

/// Consistent load `∫ f v` with `f` replaced by its nodal interpolant.
pub fn assemble_load(mesh: &TwoScaleMesh, source: &SourceField) -> Result<Vec<f64>> {
    if source.n_fine() != mesh.n_fine() {
        return Err(Error::Config(format!(
            "source grid n_fine={} does not match mesh n_fine={}",
            source.n_fine(),
            mesh.n_fine()
        )));
    }
    Ok(assemble_unit_mass(mesh).apply(source.values()))
}

/// Signed Helmholtz operator `B = A_σ - k² M_c` on all fine nodes.
pub fn helmholtz_operator(mesh: &TwoScaleMesh, field: &CoefficientField, k: f64) -> Result<SparseOperator> {
    let a = assemble_stiffness(mesh, field, WeightMode::Signed)?;
    let m = assemble_mass(mesh, field, WeightMode::Signed, 1.0)?;
    Ok(SparseOperator::combine(1.0, &a, -k * k, &m))
}

/// Relative residual bound for every fine and patch direct solve.
pub const FINE_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    /// Nodal values on all fine nodes, zero on `∂Ω`.
    pub u: Vec<f64>,
    pub relative_residual: f64,
}

/// Solve `B(u, v) = (f, v)` for all `v ∈ V_h` with the global operator
/// already assembled; `load` is the full fine load vector.
pub fn solve_dirichlet(mesh: &TwoScaleMesh, operator: &SparseOperator, load: &[f64]) -> Result<ReferenceSolution> {
    let free = mesh.free_dofs();
    let sub = operator.restrict(&free)?;
    let rhs: Vec<f64> = free.iter().map(|&g| load[g]).collect();
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(ReferenceSolution {
            u: vec![0.0; mesh.num_dofs()],
            relative_residual: 0.0,
        });
    }
    let lu = SparseLu::from_operator(&sub, "fine reference solve")?;
    let (x, res) = lu.solve_checked(&[rhs], FINE_RESIDUAL_TOL, "fine reference solve")?;
    Ok(ReferenceSolution {
        u: extend_by_zero(mesh.num_dofs(), &free, &x[0]),
        relative_residual: res,
    })
}

/// Fine Q1 solution of `-∇·(σ∇u) - k² c u = f`, `u = 0` on `∂Ω`.
pub fn solve_reference(mesh: &TwoScaleMesh, field: &CoefficientField, k: f64, source: &SourceField) -> Result<ReferenceSolution> {
    if !(k > 0.0) {
        return Err(Error::Config(format!("wavenumber must be positive, got {k}")));
    }
    let op = helmholtz_operator(mesh, field, k)?;
    let load = assemble_load(mesh, source)?;
    solve_dirichlet(mesh, &op, &load)
}
