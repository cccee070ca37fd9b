//! Constraint-energy-minimizing basis functions.
//!
//! For a target eigenvector `ψ_i^j` the basis function on a patch `K_i^m`
//! solves
//!
//! ```text
//! B(φ, w) + s(πφ, πw) = s(ψ_i^j, πw)   for all w ∈ V_0(K_i^m)
//! ```
//!
//! With `U` the matrix whose column `(e, a)` is `S̃_e ψ_e^a` (so `Uᵀw` are the
//! `s̃`-coefficients of `πw`) and `G` the block-diagonal matrix
//! `G[(e,a),(e,b)] = s(ψ_e^a, ψ_e^b)`, the correction term is `U G Uᵀ`. It
//! is never formed: each patch solves a sparse symmetric augmented system
//! (see [`PatchSystem`]) whose first block row is
//! `(K + U G Uᵀ) φ = U G e_(i,j)`.

use std::time::Instant;

use faer::sparse::Triplet;
use faer::{Mat, Side};
use rayon::prelude::*;

use crate::assembly::{assemble_stiffness, helmholtz_operator, WeightMode, FINE_RESIDUAL_TOL};
use crate::auxspace::{AuxiliarySpace, ElementEigenData};
use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};
use crate::mesh::{NodeRect, Patch, TwoScaleMesh};
use crate::sparse::{SparseLu, SparseOperator, SymbolicCache};

/// Weight used inside `s(π·, π·)` for the correction and its right-hand side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorrectionWeight {
    /// `μ` with the sign of `c`.
    #[default]
    Signed,
    /// `|μ|`; the Gram blocks become identities.
    Absolute,
}

impl CorrectionWeight {
    /// Row-major `l_* × l_*` block `s(ψ_e^a, ψ_e^b)` for one element.
    pub fn gram(self, data: &ElementEigenData) -> Vec<f64> {
        match self {
            CorrectionWeight::Signed => data.signed_gram.clone(),
            CorrectionWeight::Absolute => {
                let l = data.l_star();
                (0..l * l).map(|k| if k / l == k % l { 1.0 } else { 0.0 }).collect()
            }
        }
    }
}

/// Everything a basis computation reads: mesh, coefficients, auxiliary
/// space and the assembled global operators.
pub struct BasisContext<'a> {
    pub mesh: &'a TwoScaleMesh,
    pub field: &'a CoefficientField,
    pub aux: &'a AuxiliarySpace,
    pub k: f64,
    pub weight: CorrectionWeight,
    /// Signed `B = A_σ - k² M_c` on all fine nodes.
    pub helmholtz: SparseOperator,
    /// `∫ |σ| ∇u·∇v` on all fine nodes.
    pub abs_stiffness: SparseOperator,
    grams: Vec<Vec<f64>>,
}

impl<'a> BasisContext<'a> {
    pub fn new(
        mesh: &'a TwoScaleMesh,
        field: &'a CoefficientField,
        aux: &'a AuxiliarySpace,
        k: f64,
        weight: CorrectionWeight,
    ) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::Config(format!("wavenumber must be positive, got {k}")));
        }
        if aux.per_element.len() != mesh.num_elements() {
            return Err(Error::Internal(format!(
                "auxiliary space has {} elements, mesh has {}",
                aux.per_element.len(),
                mesh.num_elements()
            )));
        }
        Ok(Self {
            mesh,
            field,
            aux,
            k,
            weight,
            helmholtz: helmholtz_operator(mesh, field, k)?,
            abs_stiffness: assemble_stiffness(mesh, field, WeightMode::Absolute)?,
            grams: aux.per_element.iter().map(|d| weight.gram(d)).collect(),
        })
    }

    pub fn gram(&self, element: usize) -> &[f64] {
        &self.grams[element]
    }

    /// `‖v‖_ã` of a fine nodal vector.
    pub fn energy_norm(&self, v: &[f64]) -> f64 {
        self.abs_stiffness.form(v, v).max(0.0).sqrt()
    }
}

/// The `π`-correction restricted to the interior nodes of a patch.
pub struct PatchCorrection {
    rect: NodeRect,
    elements: Vec<usize>,
    l_star: usize,
    /// Per `(element, a)`: local row indices inside `rect` and values of
    /// `S̃_e ψ_e^a`.
    columns: Vec<(Vec<usize>, Vec<f64>)>,
    grams: Vec<Vec<f64>>,
}

/// Build the low-rank correction `U G Uᵀ` for a patch.
pub fn correction_operator(ctx: &BasisContext<'_>, patch: &Patch) -> Result<PatchCorrection> {
    let rect = patch
        .interior_rect()
        .ok_or_else(|| Error::Config(format!("patch around element {} has no interior nodes", patch.center_element())))?;
    correction_on_rect(ctx, rect, patch.element_set())
}

fn correction_on_rect(ctx: &BasisContext<'_>, rect: NodeRect, elements: Vec<usize>) -> Result<PatchCorrection> {
    let l = ctx.aux.l_star;
    let mut columns = Vec::with_capacity(elements.len() * l);
    let mut grams = Vec::with_capacity(elements.len());
    for &e in &elements {
        let data = ctx
            .aux
            .per_element
            .get(e)
            .ok_or_else(|| Error::Internal(format!("missing eigen data for element {e}")))?;
        let mut rows = Vec::new();
        let mut keep = Vec::new();
        for (k, &g) in data.local_dofs.iter().enumerate() {
            let (ix, iy) = ctx.mesh.node_ij(g);
            if let Some(li) = rect.local_index(ix, iy) {
                rows.push(li);
                keep.push(k);
            }
        }
        for a in 0..l {
            let vals = keep.iter().map(|&k| data.weighted[a][k]).collect();
            columns.push((rows.clone(), vals));
        }
        grams.push(ctx.gram(e).to_vec());
    }
    Ok(PatchCorrection {
        rect,
        elements,
        l_star: l,
        columns,
        grams,
    })
}

impl PatchCorrection {
    pub fn rect(&self) -> NodeRect {
        self.rect
    }

    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    /// Number of auxiliary coefficients coupled on this patch.
    pub fn rank(&self) -> usize {
        self.columns.len()
    }

    /// `Uᵀw` for a vector over the patch interior.
    pub fn coefficients(&self, w: &[f64]) -> Vec<f64> {
        self.columns
            .iter()
            .map(|(rows, vals)| rows.iter().zip(vals).map(|(&r, &v)| v * w[r]).sum())
            .collect()
    }

    fn apply_gram(&self, coeffs: &[f64]) -> Vec<f64> {
        let l = self.l_star;
        let mut out = vec![0.0; coeffs.len()];
        for (p, g) in self.grams.iter().enumerate() {
            for a in 0..l {
                out[p * l + a] = (0..l).map(|b| g[a * l + b] * coeffs[p * l + b]).sum();
            }
        }
        out
    }

    /// `s(πu, πw) = (Uᵀu)ᵀ G (Uᵀw)`.
    pub fn form(&self, u: &[f64], w: &[f64]) -> f64 {
        let gu = self.apply_gram(&self.coefficients(u));
        gu.iter().zip(self.coefficients(w)).map(|(a, b)| a * b).sum()
    }

    /// `U x` for auxiliary coefficients `x`.
    fn synthesize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rect.len()];
        for ((rows, vals), &c) in self.columns.iter().zip(x) {
            if c != 0.0 {
                for (&r, &v) in rows.iter().zip(vals) {
                    out[r] += c * v;
                }
            }
        }
        out
    }

    /// Right-hand side `w ↦ s(ψ_i^j, πw)` over the patch interior.
    pub fn rhs(&self, element: usize, j: usize) -> Result<Vec<f64>> {
        let p = self
            .elements
            .iter()
            .position(|&e| e == element)
            .ok_or_else(|| Error::Internal(format!("element {element} not in patch")))?;
        let l = self.l_star;
        let mut x = vec![0.0; self.rank()];
        for a in 0..l {
            x[p * l + a] = self.grams[p][a * l + j];
        }
        Ok(self.synthesize(&x))
    }
}

/// Eigen-pairs `(d, q)` of one symmetric Gram block, dropping modes with
/// `|d|` below `1e-13` of the block's largest.
fn gram_modes(g: &[f64], l: usize) -> Vec<(f64, Vec<f64>)> {
    let m = Mat::<f64>::from_fn(l, l, |a, b| 0.5 * (g[a * l + b] + g[b * l + a]));
    let evd = m.self_adjoint_eigen(Side::Lower).expect("small symmetric eigenproblem");
    let d: Vec<f64> = (0..l).map(|k| evd.S().column_vector()[k]).collect();
    let top = d.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    (0..l)
        .filter(|&k| top > 0.0 && d[k].abs() > 1e-13 * top)
        .map(|k| (d[k], (0..l).map(|a| evd.U()[(a, k)]).collect()))
        .collect()
}

/// One factorized patch system serving all targets of the patch.
///
/// With `G_e = Q_e D_e Q_eᵀ` and `V = U Q`, the system is assembled in the
/// symmetric form
///
/// ```text
/// [ K   V    ] [φ]   [V D Qᵀ e_(i,j)]
/// [ Vᵀ  -D⁻¹ ] [y] = [      0       ]
/// ```
pub struct PatchSystem {
    correction: PatchCorrection,
    rank: usize,
    lu: SparseLu,
    label: String,
}

impl PatchSystem {
    pub fn factor(
        ctx: &BasisContext<'_>,
        correction: PatchCorrection,
        cache: Option<&SymbolicCache>,
        label: String,
    ) -> Result<Self> {
        let rect = correction.rect;
        let n = rect.len();
        let l = correction.l_star;
        let mut modes = Vec::with_capacity(correction.grams.len());
        let mut rank = 0;
        for g in &correction.grams {
            let m = gram_modes(g, l);
            modes.push((rank, m.clone()));
            rank += m.len();
        }
        let mut t: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(9 * n + 2 * rank * 64 + rank);
        for iy in rect.y0..=rect.y1 {
            for ix in rect.x0..=rect.x1 {
                let row = (iy - rect.y0) * rect.width() + (ix - rect.x0);
                let (cols, vals) = ctx.helmholtz.row(ctx.mesh.node(ix, iy));
                for (&c, &v) in cols.iter().zip(vals) {
                    let (cx, cy) = ctx.mesh.node_ij(c);
                    if let Some(col) = rect.local_index(cx, cy) {
                        t.push(Triplet { row, col, val: v });
                    }
                }
            }
        }
        let mut v = vec![0.0; n];
        let mut touched = Vec::new();
        for (p, (offset, pm)) in modes.iter().enumerate() {
            for (k, (d, q)) in pm.iter().enumerate() {
                let aux = n + offset + k;
                for (b, qb) in q.iter().enumerate() {
                    let (rows, vals) = &correction.columns[p * l + b];
                    for (&r, &u) in rows.iter().zip(vals) {
                        if v[r] == 0.0 {
                            touched.push(r);
                        }
                        v[r] += qb * u;
                    }
                }
                touched.sort_unstable();
                touched.dedup();
                for &r in &touched {
                    t.push(Triplet { row: r, col: aux, val: v[r] });
                    t.push(Triplet { row: aux, col: r, val: v[r] });
                    v[r] = 0.0;
                }
                touched.clear();
                t.push(Triplet { row: aux, col: aux, val: -1.0 / d });
            }
        }
        let lu = SparseLu::factor_symmetric(n + rank, &t, cache, &label)?;
        Ok(Self {
            correction,
            rank,
            lu,
            label,
        })
    }

    pub fn correction(&self) -> &PatchCorrection {
        &self.correction
    }

    /// Basis values over the patch interior for targets `(element, j)`.
    pub fn solve(&self, targets: &[(usize, usize)]) -> Result<(Vec<Vec<f64>>, f64)> {
        let n = self.correction.rect.len();
        let rhs = targets
            .iter()
            .map(|&(e, j)| {
                let mut b = self.correction.rhs(e, j)?;
                b.resize(n + self.rank, 0.0);
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut x, res) = self.lu.solve_checked(&rhs, FINE_RESIDUAL_TOL, &self.label)?;
        for col in &mut x {
            col.truncate(n);
        }
        Ok((x, res))
    }

    /// Dimension of the auxiliary block after dropping null Gram modes.
    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// Basis function stored densely over the interior node rectangle of its
/// patch; zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisColumn {
    pub element: usize,
    pub j: usize,
    pub rect: NodeRect,
    pub values: Vec<f64>,
}

impl BasisColumn {
    pub fn to_fine(&self, mesh: &TwoScaleMesh) -> Vec<f64> {
        let mut out = vec![0.0; mesh.num_dofs()];
        self.add_to(mesh, 1.0, &mut out);
        out
    }

    pub fn add_to(&self, mesh: &TwoScaleMesh, alpha: f64, out: &mut [f64]) {
        let w = self.rect.width();
        for iy in self.rect.y0..=self.rect.y1 {
            let row = &self.values[(iy - self.rect.y0) * w..(iy - self.rect.y0 + 1) * w];
            let base = mesh.node(self.rect.x0, iy);
            for (k, &v) in row.iter().enumerate() {
                out[base + k] += alpha * v;
            }
        }
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.rect.local_index(ix, iy).map(|k| self.values[k]).unwrap_or(0.0)
    }
}

/// `V_ms` (or `V_glo`): `N · l_*` basis columns ordered by `element · l_* + j`.
#[derive(Clone, Debug)]
pub struct MultiscaleBasis {
    /// Oversampling layers; `None` for global basis functions.
    pub layers: Option<usize>,
    pub l_star: usize,
    pub columns: Vec<BasisColumn>,
    /// Largest relative residual over all patch solves.
    pub max_residual: f64,
}

impl MultiscaleBasis {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// `Σ_k coeffs[k] φ_k` on all fine nodes.
    pub fn combine(&self, mesh: &TwoScaleMesh, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.columns.len());
        let mut out = vec![0.0; mesh.num_dofs()];
        for (col, &c) in self.columns.iter().zip(coeffs) {
            col.add_to(mesh, c, &mut out);
        }
        out
    }
}

fn check_target(ctx: &BasisContext<'_>, element: usize, j: usize) -> Result<()> {
    if element >= ctx.mesh.num_elements() {
        return Err(Error::Index {
            what: "coarse element",
            index: element,
            limit: ctx.mesh.num_elements(),
        });
    }
    if j >= ctx.aux.l_star {
        return Err(Error::Index {
            what: "eigenvector",
            index: j,
            limit: ctx.aux.l_star,
        });
    }
    Ok(())
}

/// All `l_*` basis columns centered at `element` on `K_element^m`.
pub fn patch_basis(
    ctx: &BasisContext<'_>,
    element: usize,
    layers: usize,
    cache: Option<&SymbolicCache>,
) -> Result<(Vec<BasisColumn>, f64)> {
    let patch = ctx.mesh.patch(element, layers)?;
    let correction = correction_operator(ctx, &patch)?;
    let rect = correction.rect();
    let system = PatchSystem::factor(ctx, correction, cache, format!("patch basis (i={element}, m={layers})"))?;
    let targets: Vec<_> = (0..ctx.aux.l_star).map(|j| (element, j)).collect();
    let (values, res) = system.solve(&targets)?;
    let cols = values
        .into_iter()
        .enumerate()
        .map(|(j, values)| BasisColumn {
            element,
            j,
            rect,
            values,
        })
        .collect();
    Ok((cols, res))
}

/// `φ_{i,m}^j` extended by zero to all fine nodes.
pub fn compute_local_basis(ctx: &BasisContext<'_>, element: usize, j: usize, layers: usize) -> Result<Vec<f64>> {
    check_target(ctx, element, j)?;
    let (cols, _) = patch_basis(ctx, element, layers, None)?;
    Ok(cols[j].to_fine(ctx.mesh))
}

/// Localized basis on every patch `K_i^m`, computed in parallel. Failures
/// are collected and reported together.
pub fn build_multiscale_basis(ctx: &BasisContext<'_>, layers: usize) -> Result<MultiscaleBasis> {
    let cache = SymbolicCache::new(32);
    let results: Vec<_> = (0..ctx.mesh.num_elements())
        .into_par_iter()
        .map(|e| patch_basis(ctx, e, layers, Some(&cache)))
        .collect();
    let mut columns = Vec::with_capacity(ctx.aux.dim());
    let mut failures = Vec::new();
    let mut max_residual = 0.0_f64;
    for (e, r) in results.into_iter().enumerate() {
        match r {
            Ok((cols, res)) => {
                max_residual = max_residual.max(res);
                columns.extend(cols);
            }
            Err(err) => failures.push(format!("element {e} (j=0..{}, m={layers}): {err}", ctx.aux.l_star)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::solver(
            format!("multiscale basis, {} of {} patches failed", failures.len(), ctx.mesh.num_elements()),
            failures.join("; "),
        ));
    }
    Ok(MultiscaleBasis {
        layers: Some(layers),
        l_star: ctx.aux.l_star,
        columns,
        max_residual,
    })
}

/// Factorized global system for `φ_i^j` with test space `V`.
pub struct GlobalBasisSolver<'c, 'a> {
    ctx: &'c BasisContext<'a>,
    system: PatchSystem,
}

impl<'c, 'a> GlobalBasisSolver<'c, 'a> {
    pub fn new(ctx: &'c BasisContext<'a>) -> Result<Self> {
        let correction = correction_on_rect(ctx, ctx.mesh.free_rect(), (0..ctx.mesh.num_elements()).collect())?;
        let system = PatchSystem::factor(ctx, correction, None, "global basis".into())?;
        Ok(Self { ctx, system })
    }

    pub fn column(&self, element: usize, j: usize) -> Result<BasisColumn> {
        check_target(self.ctx, element, j)?;
        let (mut values, _) = self.system.solve(&[(element, j)])?;
        Ok(BasisColumn {
            element,
            j,
            rect: self.system.correction.rect(),
            values: values.pop().unwrap(),
        })
    }

    /// Every global basis function.
    pub fn basis(&self) -> Result<MultiscaleBasis> {
        let l = self.ctx.aux.l_star;
        let targets: Vec<_> = (0..self.ctx.mesh.num_elements())
            .flat_map(|e| (0..l).map(move |j| (e, j)))
            .collect();
        let (values, res) = self.system.solve(&targets)?;
        let rect = self.system.correction.rect();
        Ok(MultiscaleBasis {
            layers: None,
            l_star: l,
            columns: targets
                .into_iter()
                .zip(values)
                .map(|((element, j), values)| BasisColumn { element, j, rect, values })
                .collect(),
            max_residual: res,
        })
    }

    pub fn correction(&self) -> &PatchCorrection {
        self.system.correction()
    }
}

/// `φ_i^j` on all fine nodes (one global factorization per call).
pub fn compute_global_basis(ctx: &BasisContext<'_>, element: usize, j: usize) -> Result<Vec<f64>> {
    check_target(ctx, element, j)?;
    Ok(GlobalBasisSolver::new(ctx)?.column(element, j)?.to_fine(ctx.mesh))
}

/// Localization error of one basis function as the patch grows.
#[derive(Clone, Debug)]
pub struct DecayProfile {
    pub element: usize,
    pub j: usize,
    /// `(m, ‖φ_i^j − φ_{i,m}^j‖_ã, ‖φ_i^j‖_ã on Ω∖K_i^m)` for `m = 1..=m_max`.
    pub samples: Vec<(usize, f64, f64)>,
    /// Geometric rate from a least-squares fit of `log` tail energy against
    /// `m`; absent when fewer than two positive samples exist.
    pub theta: Option<f64>,
    pub seconds: f64,
}

/// Energy `‖v‖²_ã` restricted to fine cells outside a node rectangle.
fn energy_outside(ctx: &BasisContext<'_>, v: &[f64], closed: &NodeRect) -> f64 {
    let mesh = ctx.mesh;
    let ke = crate::assembly::element_matrix(crate::assembly::Form::Stiffness, mesh.h());
    let n = mesh.n_fine();
    let mut total = 0.0;
    for cy in 0..n {
        for cx in 0..n {
            let inside = cx >= closed.x0 && cx < closed.x1 && cy >= closed.y0 && cy < closed.y1;
            if inside {
                continue;
            }
            let w = ctx.field.sigma()[mesh.cell(cx, cy)].abs();
            let nodes = mesh.cell_nodes(cx, cy);
            let mut e = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    e += v[nodes[a]] * ke[a][b] * v[nodes[b]];
                }
            }
            total += w * e;
        }
    }
    total.max(0.0)
}

/// Least-squares slope of `log y` against `x`, exponentiated.
pub fn fit_geometric_rate(samples: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, y)| *y > 0.0 && y.is_finite())
        .map(|&(x, y)| (x as f64, y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| (sxy / sxx).exp())
}

/// Decay of `‖φ_i^j − φ_{i,m}^j‖_ã` for `m = 1..=m_max`, using an already
/// factorized global solver.
pub fn decay_profile_with(
    global: &GlobalBasisSolver<'_, '_>,
    element: usize,
    j: usize,
    m_max: usize,
) -> Result<DecayProfile> {
    let ctx = global.ctx;
    let start = Instant::now();
    let phi = global.column(element, j)?.to_fine(ctx.mesh);
    let mut samples = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        let local = compute_local_basis(ctx, element, j, m)?;
        let diff: Vec<f64> = phi.iter().zip(&local).map(|(a, b)| a - b).collect();
        let patch = ctx.mesh.patch(element, m)?;
        let tail = energy_outside(ctx, &phi, &patch.closed_rect()).sqrt();
        samples.push((m, ctx.energy_norm(&diff), tail));
    }
    let theta = fit_geometric_rate(&samples.iter().map(|&(m, e, _)| (m, e)).collect::<Vec<_>>());
    Ok(DecayProfile {
        element,
        j,
        samples,
        theta,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn decay_profile(ctx: &BasisContext<'_>, element: usize, j: usize, m_max: usize) -> Result<DecayProfile> {
    let global = GlobalBasisSolver::new(ctx)?;
    decay_profile_with(&global, element, j, m_max)
}
