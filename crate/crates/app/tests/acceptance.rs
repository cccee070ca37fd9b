//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use signms::config::{Experiment, ExperimentConfig};
use signms::run::{errors_csv, run_experiment, write_outputs, Method, ReferenceCache, RunOptions};
use signms::verify::scrambled;
use signms_core::assembly::{assemble_load, helmholtz_operator, solve_reference};
use signms_core::auxspace::{build_auxiliary_space, local_pencil, pencil_eigen, s_tilde_inner, BrokenField};
use signms_core::coarse::{assemble_coarse_system, errors_against_exact, solve_ms, Norms};
use signms_core::coeffs::{nim_slab, random_inclusions, CoefficientField, FlatInterface, InclusionParams, SourceField};
use signms_core::mesh::TwoScaleMesh;
use signms_core::msbasis::{
    build_multiscale_basis, decay_profile_with, BasisContext, CorrectionWeight, GlobalBasisSolver,
};
use signms_core::sparse::dot;

type Outcome = Result<(bool, String), String>;

fn report(id: usize, name: &str, outcome: Outcome) -> bool {
    let (passed, detail) = match outcome {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    println!("{} criterion {id} ({name}): {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn config(experiment: Experiment, n_coarse: Vec<usize>, m: Vec<usize>, tag: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(experiment);
    cfg.n_coarse = n_coarse;
    cfg.m = m;
    cfg.output_dir = std::env::temp_dir().join(format!("signms-acceptance-{}-{tag}", std::process::id()));
    cfg
}

fn energy(run: &signms::run::ExperimentRun, nc: usize, m: usize) -> Result<f64, String> {
    run.report(Method::Multiscale, nc, Some(m))
        .map(|r| r.energy_rel)
        .ok_or_else(|| format!("row H=1/{nc} m={m} failed"))
}

fn criterion_flat() -> Outcome {
    let cfg = ExperimentConfig::defaults(Experiment::FlatInterface);
    let start = Instant::now();
    let run = run_experiment(&cfg, RunOptions::default(), &ReferenceCache::new());
    let seconds = start.elapsed().as_secs_f64();
    if !run.failures().is_empty() {
        return Err(format!("{} rows failed", run.failures().len()));
    }
    let e20 = energy(&run, 20, 4)?;
    let l40 = run.report(Method::Multiscale, 40, Some(3)).unwrap().l2_rel;
    let mut trend = true;
    for nc in [20, 40, 80] {
        trend &= energy(&run, nc, 4)? <= energy(&run, nc, 2)?;
    }
    Ok((
        e20 <= 1.1e-3 && l40 <= 2.7e-4 && trend && seconds <= 600.0,
        format!(
            "e_a(1/20, m=4) = {e20:.3e}, L2(1/40, m=3) = {l40:.3e}, m=4 <= m=2 at every H: {trend}, runtime {seconds:.0} s"
        ),
    ))
}

fn criterion_random() -> Outcome {
    let cfg = config(Experiment::RandomInclusions, vec![80], vec![1, 3], "random");
    let run = run_experiment(&cfg, RunOptions::default(), &ReferenceCache::new());
    let e1 = energy(&run, 80, 1)?;
    let e3 = energy(&run, 80, 3)?;
    Ok((
        e3 <= 0.05 && e3 / e1 <= 0.05,
        format!("e_a(1/80, m=3) = {e3:.3e}, ratio to m=1 = {:.3e}", e3 / e1),
    ))
}

fn criterion_nim_and_determinism() -> (Outcome, Outcome) {
    let cfg = config(Experiment::NimSlab, vec![40], vec![1, 3], "nim");
    let first = run_experiment(&cfg, RunOptions::default(), &ReferenceCache::new());
    let nim = (|| {
        let e1 = energy(&first, 40, 1)?;
        let e3 = energy(&first, 40, 3)?;
        Ok((
            e3 <= 1.2e-2 && e1 / e3 >= 20.0,
            format!("e_a(1/40, m=3) = {e3:.3e}, improvement from m=1 = {:.0}x", e1 / e3),
        ))
    })();
    let det = (|| {
        let second = run_experiment(&cfg, RunOptions { parallel: true }, &ReferenceCache::new());
        write_outputs(&first).map_err(|e| e.to_string())?;
        let path = cfg.output_dir.join("errors.csv");
        let a = std::fs::read(&path).map_err(|e| e.to_string())?;
        write_outputs(&second).map_err(|e| e.to_string())?;
        let b = std::fs::read(&path).map_err(|e| e.to_string())?;
        let _ = std::fs::remove_dir_all(&cfg.output_dir);
        Ok((
            a == b && errors_csv(&first) == errors_csv(&second) && !a.is_empty(),
            format!("{} bytes of errors.csv, identical across runs: {}", a.len(), a == b),
        ))
    })();
    (nim, det)
}

fn to_nalgebra(m: &faer::Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn dense_pencil_spectrum(a: &DMatrix<f64>, s: &DMatrix<f64>) -> Vec<f64> {
    let l = s.clone().cholesky().expect("mass is SPD").unpack();
    let linv = l.clone().try_inverse().expect("invertible factor");
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut v: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v
}

fn criterion_eigen() -> Outcome {
    let mut detail = Vec::new();
    let mut passed = true;
    for (name, salt) in [("flat", 1u64), ("random", 2), ("nim", 3)] {
        let mesh = TwoScaleMesh::new(400, 20).map_err(|e| e.to_string())?;
        let field = match name {
            "flat" => FlatInterface { sigma_plus: 1.0, sigma_minus: 3.0, gamma: 0.5, k: 4.0 }.field(&mesh),
            "random" => random_inclusions(
                &mesh,
                &InclusionParams { seed: 0, sigma_plus: 1.0, sigma_minus: 1e3, count: 40, min_side: 4, max_side: 12 },
            ),
            _ => Ok(nim_slab(&mesh)),
        }
        .map_err(|e| e.to_string())?;
        let aux = build_auxiliary_space(&mesh, &field, 3, 24.0).map_err(|e| e.to_string())?;
        let (mut gap, mut neg, mut gram) = (0.0f64, 0.0f64, 0.0f64);
        for d in &aux.per_element {
            let l = d.eigenvalues.len();
            gap = gap.max(d.eigenvalues[0].abs() / d.eigenvalues[l - 1]);
            neg = neg.min(*d.eigenvalues.iter().min_by(|a, b| a.total_cmp(b)).unwrap());
            for (a, psi) in d.vectors.iter().enumerate() {
                for (b, w) in d.weighted.iter().enumerate() {
                    gram = gram.max((dot(psi, w) - if a == b { 1.0 } else { 0.0 }).abs());
                }
            }
        }
        let picks = scrambled(5, salt);
        let mut oracle = 0.0f64;
        for p in picks {
            let e = (((p + 1.0) * 0.5 * aux.per_element.len() as f64) as usize).min(aux.per_element.len() - 1);
            let pencil = local_pencil(&mesh, &field, e, 24.0);
            let (ours, _) = pencil_eigen(&pencil.stiffness, &pencil.mass)?;
            let dense = dense_pencil_spectrum(&to_nalgebra(&pencil.stiffness), &to_nalgebra(&pencil.mass));
            for (x, y) in ours.iter().zip(&dense) {
                oracle = oracle.max((x - y).abs() / y.abs().max(1.0));
            }
            for (x, y) in aux.per_element[e].eigenvalues.iter().zip(&dense) {
                oracle = oracle.max((x - y).abs() / y.abs().max(1.0));
            }
        }
        passed &= gap <= 1e-10 && neg >= -1e-10 && gram <= 1e-10 && oracle <= 1e-9;
        detail.push(format!(
            "{name}: λ1/λ4 {gap:.1e}, min λ {neg:.1e}, gram {gram:.1e}, oracle {oracle:.1e}"
        ));
    }
    Ok((passed, detail.join("; ")))
}

fn criterion_projection() -> Outcome {
    let mesh = TwoScaleMesh::new(80, 8).map_err(|e| e.to_string())?;
    let field = FlatInterface { sigma_plus: 1.0, sigma_minus: 3.0, gamma: 0.5, k: 4.0 }
        .field(&mesh)
        .map_err(|e| e.to_string())?;
    let aux = build_auxiliary_space(&mesh, &field, 3, 24.0).map_err(|e| e.to_string())?;
    let norms = Norms::new(&mesh, &field).map_err(|e| e.to_string())?;
    let st = |a: &BrokenField, b: &BrokenField| s_tilde_inner(&mesh, &field, aux.mu_msh, a, b);
    let (mut idem, mut adj, mut best, mut bound) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for t in 0..100u64 {
        let v = scrambled(mesh.num_dofs(), 1000 + t);
        let u = scrambled(mesh.num_dofs(), 5000 + t);
        let vb = BrokenField::from_nodal(&mesh, &v);
        let ub = BrokenField::from_nodal(&mesh, &u);
        let pv = aux.apply_pi(&v);
        let pu = aux.apply_pi(&u);
        let n = |b: &BrokenField| st(b, b).sqrt();
        idem = idem.max(n(&aux.apply_pi_broken(&pv).sub(&pv)) / n(&pv));
        adj = adj.max((st(&pu, &vb) - st(&ub, &pv)).abs() / (n(&ub) * n(&vb)));
        // Pythagoras against another element of V_aux
        let other = aux.synthesize(&scrambled(aux.dim(), 9000 + t));
        let w = BrokenField {
            blocks: pv
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + 0.1 * y).collect())
                .collect(),
        };
        let (r_pi, r_w, d) = (st(&vb.sub(&pv), &vb.sub(&pv)), st(&vb.sub(&w), &vb.sub(&w)), st(&pv.sub(&w), &pv.sub(&w)));
        best = best.max((r_w - r_pi - d).abs() / r_w).max(if r_pi <= r_w { 0.0 } else { 1.0 });
        let rem = vb.sub(&pv);
        bound = bound.max(st(&rem, &rem) / (norms.energy_norm(&v).powi(2) / aux.lambda_gap));
    }
    Ok((
        idem <= 1e-10 && adj <= 1e-10 && best <= 1e-10 && bound <= 1.0 + 1e-10,
        format!(
            "idempotence {idem:.1e}, self-adjointness {adj:.1e}, Pythagoras defect {best:.1e}, max ‖v-πv‖²Λ/‖v‖² {bound:.3}"
        ),
    ))
}

fn criterion_oracle() -> Outcome {
    let e = |x: signms_core::Error| x.to_string();
    let mesh = TwoScaleMesh::new(16, 4).map_err(e)?;
    let field = CoefficientField::uniform(&mesh, 1.0, 1.0).map_err(e)?;
    let aux = build_auxiliary_space(&mesh, &field, 3, 24.0).map_err(e)?;
    let ctx = BasisContext::new(&mesh, &field, &aux, 1.0, CorrectionWeight::Signed).map_err(e)?;
    let global = GlobalBasisSolver::new(&ctx).map_err(e)?;
    let global_basis = global.basis().map_err(e)?;
    let local = build_multiscale_basis(&ctx, mesh.n_coarse()).map_err(e)?;
    let mut sat = 0.0f64;
    let mut phis = Vec::new();
    for (a, b) in local.columns.iter().zip(&global_basis.columns) {
        let (pa, pb) = (a.to_fine(&mesh), b.to_fine(&mesh));
        let d: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
        sat = sat.max(ctx.energy_norm(&d) / ctx.energy_norm(&pb));
        phis.push(pb);
    }

    // dense Galerkin projection onto the span of the global basis
    let op = helmholtz_operator(&mesh, &field, 1.0).map_err(e)?;
    let source = SourceField::from_fn(&mesh, |x, y| (PI * x).sin() * (3.0 * PI * y).sin() + x * y).map_err(e)?;
    let load = assemble_load(&mesh, &source).map_err(e)?;
    let nd = mesh.num_dofs();
    let mut b = DMatrix::<f64>::zeros(nd, nd);
    for (r, c, v) in op.iter() {
        b[(r, c)] += v;
    }
    let phi = DMatrix::from_fn(nd, phis.len(), |i, j| phis[j][i]);
    let coarse = phi.transpose() * &b * &phi;
    let rhs = phi.transpose() * DVector::from_column_slice(&load);
    let coef = coarse.lu().solve(&rhs).ok_or("dense coarse matrix singular")?;
    let u_oracle: Vec<f64> = (&phi * coef).iter().copied().collect();
    let sys = assemble_coarse_system(&mesh, &op, &local, &load).map_err(e)?;
    let u_ms = solve_ms(&mesh, &sys, &local).map_err(e)?.u;
    let d: Vec<f64> = u_ms.iter().zip(&u_oracle).map(|(x, y)| x - y).collect();
    let galerkin = ctx.energy_norm(&d) / ctx.energy_norm(&u_oracle);

    // w with πw = 0: project random vectors onto the kernel of the s̃-moments
    let free = mesh.free_dofs();
    let mut cons = DMatrix::<f64>::zeros(aux.dim(), free.len());
    let col_of: std::collections::HashMap<usize, usize> = free.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    for (el, d) in aux.per_element.iter().enumerate() {
        for (j, w) in d.weighted.iter().enumerate() {
            for (a, &g) in d.local_dofs.iter().enumerate() {
                if let Some(&c) = col_of.get(&g) {
                    cons[(aux.index(el, j), c)] += w[a];
                }
            }
        }
    }
    let gram = &cons * cons.transpose();
    let gram_lu = gram.lu();
    let mut orth = 0.0f64;
    let mut worst_moment = 0.0f64;
    for t in 0..20u64 {
        let v = DVector::from_vec(scrambled(free.len(), 300 + t));
        let y = gram_lu.solve(&(&cons * &v)).ok_or("moment gram singular")?;
        let wf = &v - cons.transpose() * y;
        let mut w = vec![0.0; nd];
        for (i, &g) in free.iter().enumerate() {
            w[g] = wf[i];
        }
        worst_moment = worst_moment.max(aux.coefficients(&w).iter().fold(0.0f64, |m, x| m.max(x.abs())));
        for p in &phis {
            let scale = ctx.energy_norm(p) * ctx.energy_norm(&w);
            orth = orth.max(op.form(p, &w).abs() / scale);
        }
    }
    Ok((
        sat <= 1e-10 && galerkin <= 1e-9 && orth <= 1e-8 && worst_moment <= 1e-10,
        format!(
            "saturated vs global {sat:.1e}, u_ms vs dense oracle {galerkin:.1e}, max |B(φ,w)|/scale {orth:.1e} (moments of w {worst_moment:.1e})"
        ),
    ))
}

fn criterion_decay() -> Outcome {
    let e = |x: signms_core::Error| x.to_string();
    let p = FlatInterface { sigma_plus: 1.0, sigma_minus: 3.0, gamma: 0.5, k: 4.0 };
    let mesh = TwoScaleMesh::new(400, 20).map_err(e)?;
    let field = p.field(&mesh).map_err(e)?;
    let aux = build_auxiliary_space(&mesh, &field, 3, 24.0).map_err(e)?;
    let ctx = BasisContext::new(&mesh, &field, &aux, p.k, CorrectionWeight::Signed).map_err(e)?;
    let global = GlobalBasisSolver::new(&ctx).map_err(e)?;
    let picks = [(9, 9), (10, 9), (9, 10), (10, 10), (0, 0), (19, 19), (5, 12), (14, 3), (2, 17), (17, 8)];
    let mut worst_theta = 0.0f64;
    let mut monotone = true;
    for (n, &(ex, ey)) in picks.iter().enumerate() {
        let prof = decay_profile_with(&global, mesh.element(ex, ey), n % 3, 4).map_err(e)?;
        worst_theta = worst_theta.max(prof.theta.unwrap_or(f64::INFINITY));
        monotone &= prof.samples.windows(2).all(|w| w[1].2 < w[0].2);
    }
    Ok((
        worst_theta < 1.0 && monotone,
        format!("max fitted θ = {worst_theta:.3}, tails strictly decreasing: {monotone}"),
    ))
}

fn criterion_convergence() -> Outcome {
    let e = |x: signms_core::Error| x.to_string();
    let u = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
    let grad = |x: f64, y: f64| (PI * (PI * x).cos() * (PI * y).sin(), PI * (PI * x).sin() * (PI * y).cos());
    let sizes = [50, 100, 200, 400];
    let mut errs = Vec::new();
    for n in sizes {
        let mesh = TwoScaleMesh::new(n, 1).map_err(e)?;
        let field = CoefficientField::uniform(&mesh, 1.0, 1.0).map_err(e)?;
        let source = SourceField::from_fn(&mesh, |x, y| (2.0 * PI * PI - 1.0) * u(x, y)).map_err(e)?;
        let uh = solve_reference(&mesh, &field, 1.0, &source).map_err(e)?.u;
        errs.push(errors_against_exact(&mesh, &field, &uh, u, grad).map_err(e)?);
    }
    let mut l2 = Vec::new();
    let mut en = Vec::new();
    for w in errs.windows(2) {
        en.push((w[0].0 / w[1].0).log2());
        l2.push((w[0].1 / w[1].1).log2());
    }
    let ok = l2.iter().all(|o| (o - 2.0).abs() <= 0.2) && en.iter().all(|o| (o - 1.0).abs() <= 0.2);
    Ok((ok, format!("L2 orders {l2:.3?}, energy orders {en:.3?}")))
}

fn main() {
    faer::set_global_parallelism(faer::Par::Seq);
    let mut all = true;
    all &= report(1, "flat interface", criterion_flat());
    all &= report(2, "random inclusions", criterion_random());
    let (nim, det) = criterion_nim_and_determinism();
    all &= report(3, "negative-index slab", nim);
    all &= report(4, "eigen suite", criterion_eigen());
    all &= report(5, "projection suite", criterion_projection());
    all &= report(6, "oracle equivalence", criterion_oracle());
    all &= report(7, "decay", criterion_decay());
    all &= report(8, "reference convergence", criterion_convergence());
    all &= report(9, "determinism", det);
    if !all {
        std::process::exit(1);
    }
}
