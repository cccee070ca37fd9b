//! Coarse Galerkin system on the multiscale space, error norms and
//! diagnostics.

use rayon::prelude::*;

use crate::assembly::{
    assemble_stiffness, assemble_unit_mass, assemble_weighted, helmholtz_operator, solve_dirichlet, Form, WeightMode,
};
use crate::auxspace::mu_scale;
use crate::coeffs::{CoefficientField, FlatInterface, SourceField};
use crate::error::{Error, Result};
use crate::mesh::{NodeRect, TwoScaleMesh};
use crate::msbasis::{BasisColumn, MultiscaleBasis};
use crate::sparse::{SparseLu, SparseOperator};

/// Relative residual bound for the coarse solve.
pub const COARSE_RESIDUAL_TOL: f64 = 1e-10;

/// `Φᵀ B Φ` and `Φᵀ b`.
#[derive(Clone, Debug)]
pub struct CoarseSystem {
    pub matrix: SparseOperator,
    pub rhs: Vec<f64>,
}

fn grow(rect: &NodeRect, n: usize) -> NodeRect {
    NodeRect {
        x0: rect.x0.saturating_sub(1),
        x1: (rect.x1 + 1).min(n),
        y0: rect.y0.saturating_sub(1),
        y1: (rect.y1 + 1).min(n),
    }
}

/// `B φ` on the node rectangle one layer around the column's support.
fn apply_column(mesh: &TwoScaleMesh, op: &SparseOperator, col: &BasisColumn) -> (NodeRect, Vec<f64>) {
    let out_rect = grow(&col.rect, mesh.n_fine());
    let mut y = vec![0.0; out_rect.len()];
    for iy in col.rect.y0..=col.rect.y1 {
        for ix in col.rect.x0..=col.rect.x1 {
            let v = col.values[col.rect.local_index(ix, iy).unwrap()];
            if v == 0.0 {
                continue;
            }
            // B is symmetric, so row r gives column r
            let (cols, vals) = op.row(mesh.node(ix, iy));
            for (&c, &b) in cols.iter().zip(vals) {
                let (cx, cy) = mesh.node_ij(c);
                y[out_rect.local_index(cx, cy).unwrap()] += b * v;
            }
        }
    }
    (out_rect, y)
}

fn rect_dot(a: &NodeRect, av: &[f64], b: &NodeRect, bv: &[f64]) -> f64 {
    let Some(r) = a.intersect(b) else { return 0.0 };
    let mut s = 0.0;
    for iy in r.y0..=r.y1 {
        let ia = a.local_index(r.x0, iy).unwrap();
        let ib = b.local_index(r.x0, iy).unwrap();
        let w = r.width();
        s += av[ia..ia + w].iter().zip(&bv[ib..ib + w]).map(|(x, y)| x * y).sum::<f64>();
    }
    s
}

fn chebyshev(mesh: &TwoScaleMesh, a: usize, b: usize) -> usize {
    let (ax, ay) = mesh.element_ij(a);
    let (bx, by) = mesh.element_ij(b);
    ax.abs_diff(bx).max(ay.abs_diff(by))
}

/// Galerkin matrix `Φᵀ(A - k²M)Φ` and right-hand side `Φᵀ b`. Only pairs of
/// columns whose patches can overlap are evaluated; the upper triangle is
/// computed and mirrored.
pub fn assemble_coarse_system(
    mesh: &TwoScaleMesh,
    helmholtz: &SparseOperator,
    basis: &MultiscaleBasis,
    load: &[f64],
) -> Result<CoarseSystem> {
    if basis.is_empty() {
        return Err(Error::Config("empty multiscale basis".into()));
    }
    if helmholtz.dim() != mesh.num_dofs() || load.len() != mesh.num_dofs() {
        return Err(Error::Internal(format!(
            "coarse assembly: operator dim {} and load len {} must equal {} fine dofs",
            helmholtz.dim(),
            load.len(),
            mesh.num_dofs()
        )));
    }
    let cols = &basis.columns;
    let reach = basis.layers.map(|m| 2 * m + 1);
    let full = NodeRect {
        x0: 0,
        x1: mesh.n_fine(),
        y0: 0,
        y1: mesh.n_fine(),
    };
    let rows: Vec<Vec<(usize, usize, f64)>> = (0..cols.len())
        .into_par_iter()
        .map(|b| {
            let (rb, yb) = apply_column(mesh, helmholtz, &cols[b]);
            let mut out = Vec::new();
            for (a, ca) in cols.iter().enumerate().take(b + 1) {
                if reach.is_some_and(|r| chebyshev(mesh, ca.element, cols[b].element) > r) {
                    continue;
                }
                let v = rect_dot(&ca.rect, &ca.values, &rb, &yb);
                if v != 0.0 {
                    out.push((a, b, v));
                    if a != b {
                        out.push((b, a, v));
                    }
                }
            }
            out
        })
        .collect();
    let triplets = rows.into_iter().flatten().collect();
    let matrix = SparseOperator::from_triplets(cols.len(), triplets, true);
    let rhs = cols
        .iter()
        .map(|c| rect_dot(&c.rect, &c.values, &full, load))
        .collect();
    Ok(CoarseSystem { matrix, rhs })
}

/// Coarse solution and its prolongation.
#[derive(Clone, Debug)]
pub struct MsSolution {
    pub coefficients: Vec<f64>,
    pub u: Vec<f64>,
    pub coarse_residual: f64,
}

pub fn solve_ms(mesh: &TwoScaleMesh, system: &CoarseSystem, basis: &MultiscaleBasis) -> Result<MsSolution> {
    let n = system.matrix.dim();
    if n != basis.len() || system.rhs.len() != n {
        return Err(Error::Internal(format!(
            "coarse system of dim {n} with rhs len {} does not match {} basis columns",
            system.rhs.len(),
            basis.len()
        )));
    }
    if system.rhs.iter().all(|&v| v == 0.0) {
        return Ok(MsSolution {
            coefficients: vec![0.0; n],
            u: vec![0.0; mesh.num_dofs()],
            coarse_residual: 0.0,
        });
    }
    let hint = "coarse system is singular or ill-conditioned; try more oversampling layers m or a larger l_star";
    let lu = SparseLu::from_operator(&system.matrix, hint)?;
    let (mut x, res) = lu.solve_checked(std::slice::from_ref(&system.rhs), COARSE_RESIDUAL_TOL, hint)?;
    let coefficients = x.pop().unwrap();
    let u = basis.combine(mesh, &coefficients);
    Ok(MsSolution {
        coefficients,
        u,
        coarse_residual: res,
    })
}

/// `‖·‖_ã` and unweighted `L²` on the fine grid.
pub struct Norms {
    stiffness: SparseOperator,
    mass: SparseOperator,
}

impl Norms {
    pub fn new(mesh: &TwoScaleMesh, field: &CoefficientField) -> Result<Self> {
        Ok(Self {
            stiffness: assemble_stiffness(mesh, field, WeightMode::Absolute)?,
            mass: assemble_unit_mass(mesh),
        })
    }

    pub fn energy_norm(&self, v: &[f64]) -> f64 {
        self.stiffness.form(v, v).max(0.0).sqrt()
    }

    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.mass.form(v, v).max(0.0).sqrt()
    }

    /// `(‖u_ref - u‖_ã / ‖u_ref‖_ã, ‖u_ref - u‖ / ‖u_ref‖)`.
    pub fn relative_errors(&self, u_ref: &[f64], u: &[f64]) -> Result<(f64, f64)> {
        let d: Vec<f64> = u_ref.iter().zip(u).map(|(a, b)| a - b).collect();
        let (ea, el) = (self.energy_norm(u_ref), self.l2_norm(u_ref));
        if ea == 0.0 || el == 0.0 {
            return Err(Error::Domain("relative error undefined for a zero reference solution".into()));
        }
        Ok((self.energy_norm(&d) / ea, self.l2_norm(&d) / el))
    }
}

/// `(∫ |μ|⁻¹ f²)^{1/2}` with `f` the nodal interpolant.
pub fn f_sinv_norm(source: &SourceField, field: &CoefficientField, mesh: &TwoScaleMesh, mu_msh: f64) -> Result<f64> {
    field.check_mesh(mesh)?;
    let scale = mu_scale(mesh, mu_msh);
    let weights: Vec<f64> = field.c().iter().map(|c| 1.0 / (scale * c.abs())).collect();
    let m = assemble_weighted(mesh, &weights, Form::Mass)?;
    Ok(m.form(source.values(), source.values()).max(0.0).sqrt())
}

/// `ρ = k²H² / (μ_msh Λ)`.
pub fn resolution_ratio(k: f64, h_coarse: f64, lambda_gap: f64, mu_msh: f64) -> f64 {
    k * k * h_coarse * h_coarse / (mu_msh * lambda_gap)
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Relative `ã`-energy and `L²` errors of a fine nodal vector against an
/// analytic solution, by 3×3 Gauss quadrature per cell.
pub fn errors_against_exact(
    mesh: &TwoScaleMesh,
    field: &CoefficientField,
    uh: &[f64],
    u: impl Fn(f64, f64) -> f64,
    grad_u: impl Fn(f64, f64) -> (f64, f64),
) -> Result<(f64, f64)> {
    field.check_mesh(mesh)?;
    let n = mesh.n_fine();
    let h = mesh.h();
    let (mut ea, mut ua, mut el, mut ul) = (0.0, 0.0, 0.0, 0.0);
    for cy in 0..n {
        for cx in 0..n {
            let w = field.sigma()[mesh.cell(cx, cy)].abs();
            let [n0, n1, n2, n3] = mesh.cell_nodes(cx, cy);
            let (v0, v1, v2, v3) = (uh[n0], uh[n1], uh[n2], uh[n3]);
            for &(gy, wy) in &GAUSS3 {
                for &(gx, wx) in &GAUSS3 {
                    let (s, t) = (0.5 * (gx + 1.0), 0.5 * (gy + 1.0));
                    let (x, y) = ((cx as f64 + s) * h, (cy as f64 + t) * h);
                    let q = wx * wy * 0.25 * h * h;
                    let val = v0 * (1.0 - s) * (1.0 - t) + v1 * s * (1.0 - t) + v2 * s * t + v3 * (1.0 - s) * t;
                    let dx = ((v1 - v0) * (1.0 - t) + (v2 - v3) * t) / h;
                    let dy = ((v3 - v0) * (1.0 - s) + (v2 - v1) * s) / h;
                    let ue = u(x, y);
                    let (gxe, gye) = grad_u(x, y);
                    ea += q * w * ((gxe - dx).powi(2) + (gye - dy).powi(2));
                    ua += q * w * (gxe * gxe + gye * gye);
                    el += q * (ue - val).powi(2);
                    ul += q * ue * ue;
                }
            }
        }
    }
    if ua == 0.0 || ul == 0.0 {
        return Err(Error::Domain("relative error undefined for a zero exact solution".into()));
    }
    Ok(((ea / ua).sqrt(), (el / ul).sqrt()))
}

/// Nodal interpolant of a function on all fine nodes.
pub fn interpolate(mesh: &TwoScaleMesh, u: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    (0..mesh.num_dofs())
        .map(|node| {
            let (x, y) = mesh.node_coords(node);
            u(x, y)
        })
        .collect()
}

/// Load `∫ f v` for every hat function, by 3×3 Gauss quadrature of `f`
/// itself rather than its interpolant.
pub fn assemble_quadrature_load(mesh: &TwoScaleMesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = mesh.n_fine();
    let h = mesh.h();
    let mut load = vec![0.0; mesh.num_dofs()];
    for cy in 0..n {
        for cx in 0..n {
            let nodes = mesh.cell_nodes(cx, cy);
            for &(gy, wy) in &GAUSS3 {
                for &(gx, wx) in &GAUSS3 {
                    let (s, t) = (0.5 * (gx + 1.0), 0.5 * (gy + 1.0));
                    let q = wx * wy * 0.25 * h * h * f((cx as f64 + s) * h, (cy as f64 + t) * h);
                    let phi = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
                    for (node, p) in nodes.iter().zip(phi) {
                        load[*node] += q * p;
                    }
                }
            }
        }
    }
    load
}

/// Plain Q1 solve of the flat-interface model on the coarse grid itself,
/// with errors against the nodal interpolant of the exact solution. The
/// load is integrated from `f` directly; with the interpolated load the Q1
/// solution reproduces the interpolant to rounding.
pub fn q1_coarse_baseline(params: &FlatInterface, n_coarse: usize) -> Result<(f64, f64)> {
    if !(params.k > 0.0) {
        return Err(Error::Config(format!("wavenumber must be positive, got {}", params.k)));
    }
    let mesh = TwoScaleMesh::new(n_coarse, 1)?;
    let field = params.field(&mesh)?;
    let op = helmholtz_operator(&mesh, &field, params.k)?;
    let load = assemble_quadrature_load(&mesh, |x, y| params.f(x, y));
    let sol = solve_dirichlet(&mesh, &op, &load)?;
    let exact = interpolate(&mesh, |x, y| params.u(x, y));
    Norms::new(&mesh, &field)?.relative_errors(&exact, &sol.u)
}

/// One row of an experiment table.
#[derive(Clone, Debug, Default)]
pub struct SolveReport {
    pub method: String,
    pub n_fine: usize,
    pub n_coarse: usize,
    pub layers: Option<usize>,
    pub l_star: usize,
    pub k: f64,
    pub energy_rel: f64,
    pub l2_rel: f64,
    /// Errors against the interpolated exact solution, when one exists.
    pub exact_errors: Option<(f64, f64)>,
    pub lambda_gap: f64,
    pub upsilon: f64,
    pub resolution_ratio: f64,
    pub resolution_flag: bool,
    pub f_sinv_norm: f64,
    pub coarse_residual: f64,
    pub basis_residual: f64,
    pub timings: Vec<(&'static str, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_load;
    use crate::auxspace::build_auxiliary_space;
    use crate::coeffs::{flat_interface, gaussian_source};
    use crate::msbasis::{build_multiscale_basis, BasisContext, CorrectionWeight};

    #[test]
    fn f_sinv_constant() {
        let mesh = TwoScaleMesh::new(40, 20).unwrap();
        let field = CoefficientField::uniform(&mesh, 1.0, 1.0).unwrap();
        let f = SourceField::from_fn(&mesh, |_, _| 1.0).unwrap();
        let v = f_sinv_norm(&f, &field, &mesh, 24.0).unwrap();
        assert!((v - (1.0 / (24.0 * 400.0f64)).sqrt()).abs() < 1e-14);
        let coarser = TwoScaleMesh::new(40, 10).unwrap();
        let v2 = f_sinv_norm(&f, &field, &coarser, 24.0).unwrap();
        assert!((v2 / v - 2.0).abs() < 1e-12);
        assert_eq!(f_sinv_norm(&SourceField::zeros(&mesh), &field, &mesh, 24.0).unwrap(), 0.0);
    }

    #[test]
    fn resolution_ratio_formula() {
        let r = resolution_ratio(4.0, 1.0 / 20.0, 1.0, 24.0);
        assert!((r - 16.0 / 9600.0).abs() < 1e-15);
        assert!((resolution_ratio(8.0, 1.0 / 20.0, 1.0, 24.0) / r - 4.0).abs() < 1e-12);
        assert!((resolution_ratio(4.0, 1.0 / 40.0, 1.0, 24.0) / r - 0.25).abs() < 1e-12);
    }

    #[test]
    fn norms_of_linear_function() {
        let mesh = TwoScaleMesh::new(10, 5).unwrap();
        let field = CoefficientField::uniform(&mesh, 1.0, 1.0).unwrap();
        let norms = Norms::new(&mesh, &field).unwrap();
        let x = interpolate(&mesh, |x, _| x);
        assert!((norms.energy_norm(&x) - 1.0).abs() < 1e-13);
        assert!((norms.l2_norm(&x) - (1.0 / 3.0f64).sqrt()).abs() < 1e-13);
        let zero = vec![0.0; mesh.num_dofs()];
        assert_eq!(norms.energy_norm(&zero), 0.0);
        assert_eq!(norms.relative_errors(&x, &x).unwrap(), (0.0, 0.0));
        assert!(matches!(norms.relative_errors(&zero, &x), Err(Error::Domain(_))));
    }

    #[test]
    fn exact_errors_vanish_for_bilinear() {
        let mesh = TwoScaleMesh::new(8, 2).unwrap();
        let field = CoefficientField::uniform(&mesh, 2.0, 2.0).unwrap();
        let u = |x: f64, y: f64| x * y + 0.5 * x;
        let v = interpolate(&mesh, u);
        let (ea, el) = errors_against_exact(&mesh, &field, &v, u, |x, y| (y + 0.5, x)).unwrap();
        assert!(ea < 1e-14 && el < 1e-14);
    }

    fn small_problem() -> (TwoScaleMesh, CoefficientField, SourceField) {
        let mesh = TwoScaleMesh::new(24, 6).unwrap();
        let field = flat_interface(&mesh, 1.0, 3.0, 0.5).unwrap();
        let src = gaussian_source(&mesh, (0.4, 0.6), 0.1, true).unwrap();
        (mesh, field, src)
    }

    #[test]
    fn coarse_matrix_structure_and_galerkin_orthogonality() {
        let (mesh, field, src) = small_problem();
        let k = 4.0;
        let aux = build_auxiliary_space(&mesh, &field, 3, 24.0).unwrap();
        let ctx = BasisContext::new(&mesh, &field, &aux, k, CorrectionWeight::Signed).unwrap();
        let basis = build_multiscale_basis(&ctx, 1).unwrap();
        let load = assemble_load(&mesh, &src).unwrap();
        let sys = assemble_coarse_system(&mesh, &ctx.helmholtz, &basis, &load).unwrap();
        assert_eq!(sys.matrix.dim(), 36 * 3);

        // brute-force entries and disjointness
        let fine: Vec<Vec<f64>> = basis.columns.iter().map(|c| c.to_fine(&mesh)).collect();
        let scale = sys.matrix.max_abs();
        for a in (0..fine.len()).step_by(7) {
            for b in (0..fine.len()).step_by(5) {
                let direct = ctx.helmholtz.form(&fine[a], &fine[b]);
                assert!((direct - sys.matrix.get(a, b)).abs() <= 1e-12 * scale);
                let d = chebyshev(&mesh, basis.columns[a].element, basis.columns[b].element);
                if d > 3 {
                    assert_eq!(sys.matrix.get(a, b), 0.0);
                }
            }
        }

        let ms = solve_ms(&mesh, &sys, &basis).unwrap();
        assert!(ms.coarse_residual <= COARSE_RESIDUAL_TOL);
        let reference = solve_dirichlet(&mesh, &ctx.helmholtz, &load).unwrap();
        let diff: Vec<f64> = reference.u.iter().zip(&ms.u).map(|(a, b)| a - b).collect();
        let bd = ctx.helmholtz.apply(&diff);
        let bscale = ctx.helmholtz.apply(&reference.u);
        for phi in &fine {
            let s: f64 = phi.iter().map(|v| v.abs()).sum::<f64>() * bscale.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(crate::sparse::dot(&bd, phi).abs() <= 1e-8 * s);
        }
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let (mesh, field, _) = small_problem();
        let aux = build_auxiliary_space(&mesh, &field, 2, 24.0).unwrap();
        let ctx = BasisContext::new(&mesh, &field, &aux, 4.0, CorrectionWeight::Signed).unwrap();
        let basis = build_multiscale_basis(&ctx, 1).unwrap();
        let op = helmholtz_operator(&mesh, &field, 4.0).unwrap();
        let sys = assemble_coarse_system(&mesh, &op, &basis, &vec![0.0; mesh.num_dofs()]).unwrap();
        let ms = solve_ms(&mesh, &sys, &basis).unwrap();
        assert!(ms.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_element_system() {
        let mesh = TwoScaleMesh::new(6, 1).unwrap();
        let field = CoefficientField::uniform(&mesh, 1.0, 1.0).unwrap();
        let aux = build_auxiliary_space(&mesh, &field, 1, 24.0).unwrap();
        let ctx = BasisContext::new(&mesh, &field, &aux, 1.0, CorrectionWeight::Signed).unwrap();
        let basis = build_multiscale_basis(&ctx, 0).unwrap();
        let sys = assemble_coarse_system(&mesh, &ctx.helmholtz, &basis, &vec![1.0; mesh.num_dofs()]).unwrap();
        assert_eq!(sys.matrix.dim(), 1);
        let phi = basis.columns[0].to_fine(&mesh);
        let b = ctx.helmholtz.form(&phi, &phi);
        assert!((sys.matrix.get(0, 0) - b).abs() < 1e-12 * b.abs());
    }

    #[test]
    fn q1_baseline_converges_at_second_order() {
        let p = FlatInterface::default();
        let (e20, l20) = q1_coarse_baseline(&p, 20).unwrap();
        let (e40, l40) = q1_coarse_baseline(&p, 40).unwrap();
        assert!(e20 > 0.0 && e20 < 1e-2 && l20 > 0.0);
        assert!((e20 / e40 - 4.0).abs() < 0.2, "{e20} {e40}");
        assert!((l20 / l40 - 4.0).abs() < 0.2, "{l20} {l40}");
    }

    #[test]
    fn quadrature_load_of_constant() {
        let mesh = TwoScaleMesh::new(6, 3).unwrap();
        let a = assemble_quadrature_load(&mesh, |_, _| 2.0);
        let b = assemble_load(&mesh, &SourceField::from_fn(&mesh, |_, _| 2.0).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
