//! Auxiliary spectral space.
//!
//! On every coarse element `K_i` we solve the pencil
//! `∫ |σ| ∇v·∇w = λ ∫ μ_msh H⁻² |c| v w` over the full Q1 space of the
//! element (no boundary conditions) and keep the `l_*` eigenvectors of
//! smallest eigenvalue. Eigenvectors are normalized in the `|μ|`-weighted
//! inner product `s̃`. The `π` projection acts element by element, so its
//! output is a broken (per-element) field.

use std::collections::HashMap;

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par, Side};
use rayon::prelude::*;

use crate::assembly::{element_matrix, Form};
use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::mesh::TwoScaleMesh;
use crate::sparse::dot;

/// Default `μ_msh`.
pub const DEFAULT_MU_MSH: f64 = 24.0;

/// `μ_msh · H⁻²`, the factor multiplying `c` in `μ`.
pub fn mu_scale(mesh: &TwoScaleMesh, mu_msh: f64) -> f64 {
    mu_msh / (mesh.coarse_h() * mesh.coarse_h())
}

/// Matrix-free application of an element-local form to a vector over the
/// element's closed node rectangle.
pub fn element_apply(
    mesh: &TwoScaleMesh,
    element: usize,
    weights: impl Fn(usize) -> f64,
    form: Form,
    v: &[f64],
) -> Vec<f64> {
    let c = mesh.cells_per_coarse();
    let s = c + 1;
    assert_eq!(v.len(), s * s);
    let ke = element_matrix(form, mesh.h());
    let rect = mesh.element_rect(element);
    let mut out = vec![0.0; s * s];
    for ly in 0..c {
        for lx in 0..c {
            let w = weights(mesh.cell(rect.x0 + lx, rect.y0 + ly));
            let n0 = ly * s + lx;
            let loc = [n0, n0 + 1, n0 + s + 1, n0 + s];
            for a in 0..4 {
                let mut acc = 0.0;
                for b in 0..4 {
                    acc += ke[a][b] * v[loc[b]];
                }
                out[loc[a]] += w * acc;
            }
        }
    }
    out
}

fn element_dense(mesh: &TwoScaleMesh, element: usize, weights: impl Fn(usize) -> f64, form: Form) -> Mat<f64> {
    let c = mesh.cells_per_coarse();
    let s = c + 1;
    let ke = element_matrix(form, mesh.h());
    let rect = mesh.element_rect(element);
    let mut m = Mat::<f64>::zeros(s * s, s * s);
    for ly in 0..c {
        for lx in 0..c {
            let w = weights(mesh.cell(rect.x0 + lx, rect.y0 + ly));
            let n0 = ly * s + lx;
            let loc = [n0, n0 + 1, n0 + s + 1, n0 + s];
            for a in 0..4 {
                for b in 0..4 {
                    m[(loc[a], loc[b])] += w * ke[a][b];
                }
            }
        }
    }
    m
}

/// Dense local pencil of one coarse element.
pub struct LocalPencil {
    /// `∫ |σ| ∇u·∇v` on the element.
    pub stiffness: Mat<f64>,
    /// `∫ |μ| u v` on the element.
    pub mass: Mat<f64>,
}

pub fn local_pencil(mesh: &TwoScaleMesh, field: &CoefficientField, element: usize, mu_msh: f64) -> LocalPencil {
    let scale = mu_scale(mesh, mu_msh);
    LocalPencil {
        stiffness: element_dense(mesh, element, |cell| field.sigma()[cell].abs(), Form::Stiffness),
        mass: element_dense(mesh, element, |cell| scale * field.c()[cell].abs(), Form::Mass),
    }
}

/// Full spectrum of a symmetric-definite pencil `(A, S)`, ascending, with
/// `S`-orthonormal eigenvectors as columns.
pub fn pencil_eigen(a: &Mat<f64>, s: &Mat<f64>) -> std::result::Result<(Vec<f64>, Mat<f64>), String> {
    let n = a.nrows();
    let llt = s
        .llt(Side::Lower)
        .map_err(|e| format!("mass matrix not positive definite: {e:?}"))?;
    let l = llt.L();
    // C = L⁻¹ A L⁻ᵀ
    let mut x = a.clone();
    solve_lower_triangular_in_place(l, x.as_mut(), Par::Seq);
    let mut c = x.transpose().to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let c = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| format!("symmetric eigensolver failed: {e:?}"))?;
    let values: Vec<f64> = (0..n).map(|i| evd.S().column_vector()[i]).collect();
    let mut vectors = evd.U().to_owned();
    solve_upper_triangular_in_place(l.transpose(), vectors.as_mut(), Par::Seq);
    Ok((values, vectors))
}

/// Eigen data retained for one coarse element.
#[derive(Clone, Debug)]
pub struct ElementEigenData {
    pub element: usize,
    /// `λ^1 ≤ … ≤ λ^{l_*+1}`.
    pub eigenvalues: Vec<f64>,
    /// `l_*` eigenvectors over the element's local nodes, `s̃`-orthonormal.
    pub vectors: Vec<Vec<f64>>,
    /// `S̃ψ` for each stored vector, so that `s̃(v, ψ) = vᵀ(S̃ψ)`.
    pub weighted: Vec<Vec<f64>>,
    /// `s(ψ_a, ψ_b)` with the signed weight `μ`, row-major `l_* × l_*`.
    pub signed_gram: Vec<f64>,
    /// Local-to-global fine node map.
    pub local_dofs: Vec<usize>,
}

impl ElementEigenData {
    pub fn l_star(&self) -> usize {
        self.vectors.len()
    }

    /// `s̃`-inner products of a local vector with the stored eigenvectors.
    pub fn coefficients(&self, local: &[f64]) -> Vec<f64> {
        self.weighted.iter().map(|w| dot(w, local)).collect()
    }

    /// `Σ_j α_j ψ_j` over local nodes.
    pub fn combine(&self, alpha: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.local_dofs.len()];
        for (a, psi) in alpha.iter().zip(&self.vectors) {
            for (o, p) in out.iter_mut().zip(psi) {
                *o += a * p;
            }
        }
        out
    }
}

/// Flip the sign so the first entry that is not negligible is positive.
fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Smallest `l_star + 1` eigenpairs of the element pencil.
pub fn solve_element_eigens(
    mesh: &TwoScaleMesh,
    field: &CoefficientField,
    element: usize,
    l_star: usize,
    mu_msh: f64,
) -> Result<ElementEigenData> {
    field.check_mesh(mesh)?;
    if element >= mesh.num_elements() {
        return Err(Error::Index {
            what: "coarse element",
            index: element,
            limit: mesh.num_elements(),
        });
    }
    let local_dofs = mesh.element_nodes(element);
    if l_star == 0 || l_star + 1 > local_dofs.len() {
        return Err(Error::Config(format!(
            "l_star={l_star} must be in 1..{} for {} local nodes",
            local_dofs.len(),
            local_dofs.len()
        )));
    }
    let pencil = local_pencil(mesh, field, element, mu_msh);
    let (values, vecs) = pencil_eigen(&pencil.stiffness, &pencil.mass)
        .map_err(|detail| Error::Eigen { element, detail })?;
    if values.iter().take(l_star + 1).any(|v| !v.is_finite()) {
        return Err(Error::Eigen {
            element,
            detail: "non-finite eigenvalue".into(),
        });
    }
    let n = local_dofs.len();
    let scale = mu_scale(mesh, mu_msh);
    let mut vectors = Vec::with_capacity(l_star);
    for j in 0..l_star {
        let mut v: Vec<f64> = (0..n).map(|i| vecs[(i, j)]).collect();
        fix_sign(&mut v);
        vectors.push(v);
    }
    let weighted: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| element_apply(mesh, element, |cell| scale * field.c()[cell].abs(), Form::Mass, v))
        .collect();
    let signed: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| element_apply(mesh, element, |cell| scale * field.c()[cell], Form::Mass, v))
        .collect();
    let mut signed_gram = vec![0.0; l_star * l_star];
    for a in 0..l_star {
        for b in 0..l_star {
            signed_gram[a * l_star + b] = dot(&vectors[a], &signed[b]);
        }
    }
    // exact symmetry
    for a in 0..l_star {
        for b in a + 1..l_star {
            let m = 0.5 * (signed_gram[a * l_star + b] + signed_gram[b * l_star + a]);
            signed_gram[a * l_star + b] = m;
            signed_gram[b * l_star + a] = m;
        }
    }
    Ok(ElementEigenData {
        element,
        eigenvalues: values[..=l_star].to_vec(),
        vectors,
        weighted,
        signed_gram,
        local_dofs,
    })
}

/// Element-wise (broken) field: one vector over each element's closed node
/// rectangle.
#[derive(Clone, Debug, PartialEq)]
pub struct BrokenField {
    pub blocks: Vec<Vec<f64>>,
}

impl BrokenField {
    /// Restriction of a continuous nodal field to every element.
    pub fn from_nodal(mesh: &TwoScaleMesh, v: &[f64]) -> Self {
        Self {
            blocks: (0..mesh.num_elements())
                .map(|e| mesh.element_nodes(e).iter().map(|&g| v[g]).collect())
                .collect(),
        }
    }

    pub fn sub(&self, other: &BrokenField) -> BrokenField {
        BrokenField {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        }
    }
}

/// The global auxiliary space `V_aux = ⊕ V_i^aux`.
#[derive(Clone, Debug)]
pub struct AuxiliarySpace {
    pub per_element: Vec<ElementEigenData>,
    pub l_star: usize,
    /// `Λ = min_i λ_i^{l_*+1}`.
    pub lambda_gap: f64,
    pub mu_msh: f64,
}

/// Solve all element eigenproblems (in parallel) and collect `V_aux`.
pub fn build_auxiliary_space(
    mesh: &TwoScaleMesh,
    field: &CoefficientField,
    l_star: usize,
    mu_msh: f64,
) -> Result<AuxiliarySpace> {
    if l_star == 0 {
        return Err(Error::Config("l_star must be at least 1".into()));
    }
    if !(mu_msh > 0.0) {
        return Err(Error::Config(format!("mu_msh must be positive, got {mu_msh}")));
    }
    field.check_mesh(mesh)?;
    // elements with bitwise identical local coefficients share one pencil
    let mut groups: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut representative = Vec::with_capacity(mesh.num_elements());
    let mut unique = Vec::new();
    for e in 0..mesh.num_elements() {
        let key: Vec<u64> = mesh
            .element_cells(e)
            .iter()
            .flat_map(|&cell| [field.sigma()[cell].to_bits(), field.c()[cell].to_bits()])
            .collect();
        let g = *groups.entry(key).or_insert_with(|| {
            unique.push(e);
            unique.len() - 1
        });
        representative.push(g);
    }
    let solved = unique
        .par_iter()
        .map(|&e| solve_element_eigens(mesh, field, e, l_star, mu_msh))
        .collect::<Result<Vec<_>>>()?;
    let per_element: Vec<ElementEigenData> = representative
        .iter()
        .enumerate()
        .map(|(e, &g)| {
            let mut d = solved[g].clone();
            d.element = e;
            d.local_dofs = mesh.element_nodes(e);
            d
        })
        .collect();
    let lambda_gap = per_element
        .iter()
        .map(|d| d.eigenvalues[l_star])
        .fold(f64::INFINITY, f64::min);
    if !(lambda_gap > 0.0) {
        return Err(Error::Eigen {
            element: per_element
                .iter()
                .position(|d| !(d.eigenvalues[l_star] > 0.0))
                .unwrap_or(0),
            detail: format!("spectral gap is not positive ({lambda_gap:e})"),
        });
    }
    Ok(AuxiliarySpace {
        per_element,
        l_star,
        lambda_gap,
        mu_msh,
    })
}

impl AuxiliarySpace {
    /// `dim V_aux = N · l_*`.
    pub fn dim(&self) -> usize {
        self.per_element.len() * self.l_star
    }

    #[inline]
    pub fn index(&self, element: usize, j: usize) -> usize {
        element * self.l_star + j
    }

    /// All `s̃(v, ψ_i^j)` for a continuous nodal field, indexed by
    /// [`AuxiliarySpace::index`].
    pub fn coefficients(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for d in &self.per_element {
            let local: Vec<f64> = d.local_dofs.iter().map(|&g| v[g]).collect();
            out.extend(d.coefficients(&local));
        }
        out
    }

    /// Broken field `Σ α_{i,j} ψ_i^j`.
    pub fn synthesize(&self, alpha: &[f64]) -> BrokenField {
        assert_eq!(alpha.len(), self.dim());
        BrokenField {
            blocks: self
                .per_element
                .iter()
                .enumerate()
                .map(|(e, d)| d.combine(&alpha[e * self.l_star..(e + 1) * self.l_star]))
                .collect(),
        }
    }

    /// `πv` for a continuous nodal field.
    pub fn apply_pi(&self, v: &[f64]) -> BrokenField {
        self.synthesize(&self.coefficients(v))
    }

    /// `πv` for a broken field.
    pub fn apply_pi_broken(&self, v: &BrokenField) -> BrokenField {
        BrokenField {
            blocks: self
                .per_element
                .iter()
                .zip(&v.blocks)
                .map(|(d, b)| d.combine(&d.coefficients(b)))
                .collect(),
        }
    }
}

/// `s̃(u, v)` of two broken fields.
pub fn s_tilde_inner(mesh: &TwoScaleMesh, field: &CoefficientField, mu_msh: f64, u: &BrokenField, v: &BrokenField) -> f64 {
    let scale = mu_scale(mesh, mu_msh);
    (0..mesh.num_elements())
        .map(|e| {
            let sv = element_apply(mesh, e, |cell| scale * field.c()[cell].abs(), Form::Mass, &v.blocks[e]);
            dot(&u.blocks[e], &sv)
        })
        .sum()
}

/// `‖v‖²_ã,K_e` per element for a broken field.
pub fn element_energies(mesh: &TwoScaleMesh, field: &CoefficientField, v: &BrokenField) -> Vec<f64> {
    (0..mesh.num_elements())
        .map(|e| {
            let av = element_apply(mesh, e, |cell| field.sigma()[cell].abs(), Form::Stiffness, &v.blocks[e]);
            dot(&v.blocks[e], &av)
        })
        .collect()
}

/// `‖v‖²_s̃,K_e` per element for a broken field.
pub fn element_s_tilde(mesh: &TwoScaleMesh, field: &CoefficientField, mu_msh: f64, v: &BrokenField) -> Vec<f64> {
    let scale = mu_scale(mesh, mu_msh);
    (0..mesh.num_elements())
        .map(|e| {
            let sv = element_apply(mesh, e, |cell| scale * field.c()[cell].abs(), Form::Mass, &v.blocks[e]);
            dot(&v.blocks[e], &sv)
        })
        .collect()
}
