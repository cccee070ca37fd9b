//! Invariant and oracle checks on small meshes, run by `signms verify`.

use std::f64::consts::PI;

use signms_core::assembly::{assemble_load, helmholtz_operator, solve_dirichlet, solve_reference};
use signms_core::auxspace::{build_auxiliary_space, s_tilde_inner, AuxiliarySpace, BrokenField};
use signms_core::coarse::{assemble_coarse_system, errors_against_exact, solve_ms};
use signms_core::coeffs::{CoefficientField, FlatInterface, SourceField};
use signms_core::mesh::TwoScaleMesh;
use signms_core::msbasis::{build_multiscale_basis, compute_global_basis, compute_local_basis, BasisContext, CorrectionWeight};
use signms_core::sparse::dot;
use signms_core::Result;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Deterministic scrambled vector with entries in `[-1, 1)`.
pub fn scrambled(len: usize, salt: u64) -> Vec<f64> {
    let mut state = salt.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

fn flat_problem(n_fine: usize, n_coarse: usize) -> Result<(TwoScaleMesh, CoefficientField)> {
    let mesh = TwoScaleMesh::new(n_fine, n_coarse)?;
    let p = FlatInterface {
        sigma_plus: 1.0,
        sigma_minus: 3.0,
        gamma: 0.5,
        k: 4.0,
    };
    let field = p.field(&mesh)?;
    Ok((mesh, field))
}

fn eigen_check(aux: &AuxiliarySpace) -> (bool, String) {
    let mut worst_gap = 0.0f64;
    let mut worst_neg = 0.0f64;
    let mut worst_gram = 0.0f64;
    for d in &aux.per_element {
        let l = d.eigenvalues.len();
        worst_gap = worst_gap.max(d.eigenvalues[0] / d.eigenvalues[l - 1]);
        worst_neg = worst_neg.min(d.eigenvalues[0]);
        for (a, psi) in d.vectors.iter().enumerate() {
            for (b, w) in d.weighted.iter().enumerate() {
                let target = if a == b { 1.0 } else { 0.0 };
                worst_gram = worst_gram.max((dot(psi, w) - target).abs());
            }
        }
    }
    (
        worst_gap <= 1e-10 && worst_neg >= -1e-10 && worst_gram <= 1e-10,
        format!("max λ1/λ(l*+1) = {worst_gap:.2e}, min λ = {worst_neg:.2e}, gram defect = {worst_gram:.2e}"),
    )
}

fn projection_check(mesh: &TwoScaleMesh, field: &CoefficientField, aux: &AuxiliarySpace, ctx: &BasisContext<'_>) -> (bool, String) {
    let mut worst_idem = 0.0f64;
    let mut worst_bound = 0.0f64;
    for salt in 0..5 {
        let mut v = scrambled(mesh.num_dofs(), salt + 1);
        for g in mesh.dirichlet_dofs() {
            v[g] = 0.0;
        }
        let pv = aux.apply_pi(&v);
        let ppv = aux.apply_pi_broken(&pv);
        let diff = ppv.sub(&pv);
        let norm = |b: &BrokenField| s_tilde_inner(mesh, field, aux.mu_msh, b, b).sqrt();
        worst_idem = worst_idem.max(norm(&diff) / norm(&pv).max(f64::MIN_POSITIVE));
        let rem = BrokenField::from_nodal(mesh, &v).sub(&pv);
        let lhs = s_tilde_inner(mesh, field, aux.mu_msh, &rem, &rem);
        let rhs = ctx.energy_norm(&v).powi(2) / aux.lambda_gap;
        worst_bound = worst_bound.max(lhs / rhs);
    }
    (
        worst_idem <= 1e-10 && worst_bound <= 1.0 + 1e-10,
        format!("idempotence defect = {worst_idem:.2e}, max ‖v-πv‖²/(‖v‖²/Λ) = {worst_bound:.3}"),
    )
}

fn saturation_check(ctx: &BasisContext<'_>, mesh: &TwoScaleMesh) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for e in [0, mesh.num_elements() / 2, mesh.num_elements() - 1] {
        let local = compute_local_basis(ctx, e, 0, mesh.n_coarse())?;
        let global = compute_global_basis(ctx, e, 0)?;
        let diff: Vec<f64> = local.iter().zip(&global).map(|(a, b)| a - b).collect();
        worst = worst.max(ctx.energy_norm(&diff) / ctx.energy_norm(&global));
    }
    Ok((worst <= 1e-10, format!("max relative energy gap = {worst:.2e}")))
}

fn galerkin_check(mesh: &TwoScaleMesh, field: &CoefficientField, ctx: &BasisContext<'_>, k: f64) -> Result<(bool, String)> {
    let source = SourceField::from_fn(mesh, |x, y| (PI * x).sin() * (2.0 * PI * y).sin() + 1.0)?;
    let op = helmholtz_operator(mesh, field, k)?;
    let load = assemble_load(mesh, &source)?;
    let u_ref = solve_dirichlet(mesh, &op, &load)?.u;
    let basis = build_multiscale_basis(ctx, 1)?;
    let system = assemble_coarse_system(mesh, &op, &basis, &load)?;
    let sol = solve_ms(mesh, &system, &basis)?;
    let err: Vec<f64> = u_ref.iter().zip(&sol.u).map(|(a, b)| a - b).collect();
    let scale = load.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for col in &basis.columns {
        let phi = col.to_fine(mesh);
        worst = worst.max(op.form(&err, &phi).abs() / (scale * ctx.energy_norm(&phi).max(1.0)));
    }
    Ok((worst <= 1e-8, format!("max scaled |B(u-u_ms, φ)| = {worst:.2e}")))
}

fn convergence_check() -> Result<(bool, String)> {
    let u = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
    let grad = |x: f64, y: f64| (PI * (PI * x).cos() * (PI * y).sin(), PI * (PI * x).sin() * (PI * y).cos());
    let mut errs = Vec::new();
    for n in [8, 16, 32] {
        let mesh = TwoScaleMesh::new(n, 1)?;
        let field = CoefficientField::uniform(&mesh, 1.0, 1.0)?;
        let source = SourceField::from_fn(&mesh, |x, y| (2.0 * PI * PI - 1.0) * u(x, y))?;
        let uh = solve_reference(&mesh, &field, 1.0, &source)?.u;
        errs.push(errors_against_exact(&mesh, &field, &uh, u, grad)?);
    }
    let l2 = (errs[1].1 / errs[2].1).log2();
    let en = (errs[1].0 / errs[2].0).log2();
    Ok((
        (l2 - 2.0).abs() <= 0.2 && (en - 1.0).abs() <= 0.2,
        format!("L² order {l2:.3}, energy order {en:.3}"),
    ))
}

/// Run every check; each entry reports pass or fail independently.
pub fn run_checks() -> Vec<Check> {
    let mut out = Vec::new();
    match flat_problem(24, 4).and_then(|(mesh, field)| {
        let aux = build_auxiliary_space(&mesh, &field, 3, 24.0)?;
        Ok((mesh, field, aux))
    }) {
        Ok((mesh, field, aux)) => {
            out.push(check("eigen pencils", Ok(eigen_check(&aux))));
            let ctx = BasisContext::new(&mesh, &field, &aux, 4.0, CorrectionWeight::Signed);
            out.push(check(
                "projection",
                ctx.map(|ctx| projection_check(&mesh, &field, &aux, &ctx)),
            ));
        }
        Err(e) => out.push(check("eigen pencils", Err(e))),
    }
    let oracle = (|| -> Result<(Check, Check)> {
        let mesh = TwoScaleMesh::new(16, 4)?;
        let field = CoefficientField::uniform(&mesh, 1.0, 1.0)?;
        let aux = build_auxiliary_space(&mesh, &field, 3, 24.0)?;
        let ctx = BasisContext::new(&mesh, &field, &aux, 1.0, CorrectionWeight::Signed)?;
        Ok((
            check("saturated patch equals global basis", saturation_check(&ctx, &mesh)),
            check("galerkin orthogonality", galerkin_check(&mesh, &field, &ctx, 1.0)),
        ))
    })();
    match oracle {
        Ok((a, b)) => out.extend([a, b]),
        Err(e) => out.push(check("saturated patch equals global basis", Err(e))),
    }
    out.push(check("reference convergence", convergence_check()));
    out
}
