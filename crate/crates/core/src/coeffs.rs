//! Piecewise-constant coefficient fields, nodal sources and the built-in
//! experiment profiles.

use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{read_grid, write_grid, Grid};
use crate::mesh::TwoScaleMesh;

/// Cellwise values of `σ` and `c` on the fine grid.
///
/// Both are nonzero everywhere and share their sign cell by cell; the
/// negative cells form `Ω⁻`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    n_fine: usize,
    sigma: Vec<f64>,
    c: Vec<f64>,
}

impl CoefficientField {
    pub fn new(n_fine: usize, sigma: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let cells = n_fine * n_fine;
        if sigma.len() != cells || c.len() != cells {
            return Err(Error::Config(format!(
                "coefficient length mismatch: expected {cells} cells, got sigma={} c={}",
                sigma.len(),
                c.len()
            )));
        }
        for (cell, (&s, &cv)) in sigma.iter().zip(&c).enumerate() {
            if s == 0.0 || cv == 0.0 || !s.is_finite() || !cv.is_finite() {
                return Err(Error::Domain(format!(
                    "cell {cell}: coefficients must be finite and nonzero (sigma={s}, c={cv})"
                )));
            }
            if (s > 0.0) != (cv > 0.0) {
                return Err(Error::Domain(format!(
                    "cell {cell}: sign of sigma ({s}) differs from sign of c ({cv})"
                )));
            }
        }
        Ok(Self { n_fine, sigma, c })
    }

    /// Field with `σ = c` cellwise.
    pub fn proportional(n_fine: usize, sigma: Vec<f64>) -> Result<Self> {
        let c = sigma.clone();
        Self::new(n_fine, sigma, c)
    }

    pub fn uniform(mesh: &TwoScaleMesh, sigma: f64, c: f64) -> Result<Self> {
        let n = mesh.num_cells();
        Self::new(mesh.n_fine(), vec![sigma; n], vec![c; n])
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn is_negative(&self, cell: usize) -> bool {
        self.sigma[cell] < 0.0
    }

    pub fn negative_cells(&self) -> usize {
        self.sigma.iter().filter(|&&s| s < 0.0).count()
    }

    pub fn check_mesh(&self, mesh: &TwoScaleMesh) -> Result<()> {
        if self.n_fine != mesh.n_fine() {
            return Err(Error::Config(format!(
                "coefficient field is {0}x{0} but mesh has n_fine={1}",
                self.n_fine,
                mesh.n_fine()
            )));
        }
        Ok(())
    }

    /// Scale `σ` and `c` by the same positive factor.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.n_fine,
            self.sigma.iter().map(|v| v * factor).collect(),
            self.c.iter().map(|v| v * factor).collect(),
        )
    }

    /// Write `σ` and `c` as two cell grids.
    pub fn save(&self, sigma_path: impl AsRef<Path>, c_path: impl AsRef<Path>) -> Result<()> {
        write_grid(sigma_path, self.n_fine, self.n_fine, &self.sigma)?;
        write_grid(c_path, self.n_fine, self.n_fine, &self.c)
    }

    /// Read `σ` (and optionally `c`; `c = σ` when absent) from cell grids.
    pub fn load(sigma_path: impl AsRef<Path>, c_path: Option<&Path>) -> Result<Self> {
        let sigma_path = sigma_path.as_ref();
        let sigma = read_square(sigma_path)?;
        let c = match c_path {
            Some(p) => {
                let c = read_square(p)?;
                if c.rows != sigma.rows {
                    return Err(Error::Ingest {
                        path: p.to_path_buf(),
                        line: 1,
                        msg: format!("grid is {0}x{0}, sigma grid is {1}x{1}", c.rows, sigma.rows),
                    });
                }
                c.values
            }
            None => sigma.values.clone(),
        };
        let n = sigma.rows;
        for (path, vals) in [(sigma_path, &sigma.values), (c_path.unwrap_or(sigma_path), &c)] {
            if let Some(pos) = vals.iter().position(|&v| v == 0.0) {
                return Err(Error::Ingest {
                    path: path.to_path_buf(),
                    line: pos / n + 2,
                    msg: "zero coefficient entry".into(),
                });
            }
        }
        Self::new(n, sigma.values, c)
    }
}

fn read_square(path: &Path) -> Result<Grid> {
    let g = read_grid(path)?;
    if g.rows != g.cols {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("grid must be square, got {}x{}", g.rows, g.cols),
        });
    }
    Ok(g)
}

/// Contrast ratio `Υ = min σ over Ω⁺ / max |σ| over Ω⁻`; `+∞` when `Ω⁻` is
/// empty.
pub fn contrast_ratio(field: &CoefficientField) -> Result<f64> {
    let mut min_pos = f64::INFINITY;
    let mut max_neg = 0.0_f64;
    for &s in field.sigma() {
        if s > 0.0 {
            min_pos = min_pos.min(s);
        } else {
            max_neg = max_neg.max(-s);
        }
    }
    if min_pos.is_infinite() {
        return Err(Error::Domain(
            "contrast ratio undefined: field has no positive cell".into(),
        ));
    }
    if max_neg == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(min_pos / max_neg)
}

/// Parameters of the flat-interface model with its manufactured solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatInterface {
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub gamma: f64,
    pub k: f64,
}

impl Default for FlatInterface {
    fn default() -> Self {
        Self {
            sigma_plus: 1.0,
            sigma_minus: 3.0,
            gamma: 0.5,
            k: 4.0,
        }
    }
}

/// `σ = c = sigma_plus` above the line `y = gamma`, `-sigma_minus_mag` below,
/// decided per cell by the cell center.
pub fn flat_interface(
    mesh: &TwoScaleMesh,
    sigma_plus: f64,
    sigma_minus_mag: f64,
    gamma: f64,
) -> Result<CoefficientField> {
    if !(sigma_plus > 0.0 && sigma_minus_mag > 0.0) {
        return Err(Error::Config(format!(
            "flat interface magnitudes must be positive (sigma_plus={sigma_plus}, sigma_minus={sigma_minus_mag})"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("interface height gamma={gamma} not in (0,1)")));
    }
    let sigma = (0..mesh.num_cells())
        .map(|cell| {
            let (_, y) = mesh.cell_center(cell);
            if y >= gamma {
                sigma_plus
            } else {
                -sigma_minus_mag
            }
        })
        .collect();
    CoefficientField::proportional(mesh.n_fine(), sigma)
}

impl FlatInterface {
    pub fn field(&self, mesh: &TwoScaleMesh) -> Result<CoefficientField> {
        flat_interface(mesh, self.sigma_plus, self.sigma_minus, self.gamma)
    }

    /// Exact solution value at a point.
    pub fn u(&self, x: f64, y: f64) -> f64 {
        let base = x * (x - 1.0) * y * (y - 1.0) * (y - self.gamma);
        if y >= self.gamma {
            -self.sigma_minus * base
        } else {
            self.sigma_plus * base
        }
    }

    /// Gradient of the exact solution (one-sided limit from above on the
    /// interface).
    pub fn grad_u(&self, x: f64, y: f64) -> (f64, f64) {
        let p = x * (x - 1.0);
        let dp = 2.0 * x - 1.0;
        let q = y * (y - 1.0) * (y - self.gamma);
        let dq = 3.0 * y * y - 2.0 * (1.0 + self.gamma) * y + self.gamma;
        let scale = if y >= self.gamma {
            -self.sigma_minus
        } else {
            self.sigma_plus
        };
        (scale * dp * q, scale * p * dq)
    }

    /// Source `f = -∇·(σ∇u) - k² c u` for the exact solution; smooth across
    /// the interface.
    pub fn f(&self, x: f64, y: f64) -> f64 {
        let g = self.gamma;
        let p = x * (x - 1.0);
        let q = y * (y - 1.0) * (y - g);
        let d2q = 6.0 * y - 2.0 * (g + 1.0);
        self.sigma_minus * self.sigma_plus * (2.0 * q + p * d2q + self.k * self.k * p * q)
    }
}

/// Closed-form `(u, f)` of the flat-interface model at a point.
pub fn flat_interface_exact(point: (f64, f64), params: &FlatInterface) -> (f64, f64) {
    (params.u(point.0, point.1), params.f(point.0, point.1))
}

/// Parameters of the random-inclusion model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InclusionParams {
    pub seed: u64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub count: usize,
    /// Inclusive range of rectangle side lengths, in fine cells.
    pub min_side: usize,
    pub max_side: usize,
}

impl Default for InclusionParams {
    fn default() -> Self {
        Self {
            seed: 0,
            sigma_plus: 1.0,
            sigma_minus: 1.0e3,
            count: 40,
            min_side: 4,
            max_side: 12,
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Positive background with `count` non-overlapping axis-aligned rectangles
/// of `-sigma_minus`, none touching `∂Ω`.
pub fn random_inclusions(mesh: &TwoScaleMesh, params: &InclusionParams) -> Result<CoefficientField> {
    if !(params.sigma_plus > 0.0 && params.sigma_minus > 0.0) {
        return Err(Error::Config("inclusion contrast values must be positive".into()));
    }
    if params.min_side == 0 || params.min_side > params.max_side {
        return Err(Error::Config(format!(
            "bad inclusion side range {}..={}",
            params.min_side, params.max_side
        )));
    }
    let n = mesh.n_fine();
    let mut sigma = vec![params.sigma_plus; mesh.num_cells()];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for placed in 0..params.count {
        let mut done = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = rng.random_range(params.min_side..=params.max_side);
            let h = rng.random_range(params.min_side..=params.max_side);
            // one clear cell to the boundary on every side
            if w + 2 > n || h + 2 > n {
                continue;
            }
            let x0 = rng.random_range(1..=n - 1 - w);
            let y0 = rng.random_range(1..=n - 1 - h);
            let free = (y0..y0 + h)
                .all(|cy| (x0..x0 + w).all(|cx| sigma[mesh.cell(cx, cy)] > 0.0));
            if !free {
                continue;
            }
            for cy in y0..y0 + h {
                for cx in x0..x0 + w {
                    sigma[mesh.cell(cx, cy)] = -params.sigma_minus;
                }
            }
            done = true;
            break;
        }
        if !done {
            return Err(Error::Generation(format!(
                "could not place inclusion {} of {} after {PLACEMENT_ATTEMPTS} attempts",
                placed + 1,
                params.count
            )));
        }
    }
    CoefficientField::proportional(n, sigma)
}

/// Negative-index slab: `σ = c = -10` for cell centers with
/// `11/24 <= x <= 13/24`, `1` elsewhere.
pub fn nim_slab(mesh: &TwoScaleMesh) -> CoefficientField {
    let (lo, hi) = (11.0 / 24.0, 13.0 / 24.0);
    let sigma = (0..mesh.num_cells())
        .map(|cell| {
            let (x, _) = mesh.cell_center(cell);
            if (lo..=hi).contains(&x) {
                -10.0
            } else {
                1.0
            }
        })
        .collect();
    CoefficientField::proportional(mesh.n_fine(), sigma).expect("slab values are valid")
}

/// Nodal values of a source term.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceField {
    n_fine: usize,
    values: Vec<f64>,
}

impl SourceField {
    pub fn new(n_fine: usize, values: Vec<f64>) -> Result<Self> {
        let nodes = (n_fine + 1) * (n_fine + 1);
        if values.len() != nodes {
            return Err(Error::Config(format!(
                "source length mismatch: expected {nodes} nodes, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("source value at node {i} is not finite")));
        }
        Ok(Self { n_fine, values })
    }

    pub fn from_fn(mesh: &TwoScaleMesh, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..mesh.num_dofs())
            .map(|n| {
                let (x, y) = mesh.node_coords(n);
                f(x, y)
            })
            .collect();
        Self::new(mesh.n_fine(), values)
    }

    pub fn zeros(mesh: &TwoScaleMesh) -> Self {
        Self {
            n_fine: mesh.n_fine(),
            values: vec![0.0; mesh.num_dofs()],
        }
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_grid(path, self.n_fine + 1, self.n_fine + 1, &self.values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let g = read_square(path.as_ref())?;
        if g.rows == 0 {
            return Err(Error::Ingest {
                path: path.as_ref().to_path_buf(),
                line: 1,
                msg: "empty node grid".into(),
            });
        }
        Self::new(g.rows - 1, g.values)
    }
}

/// Gaussian source `exp(-r²/(2 spread²))`, with the `1/(spread √(2π))`
/// prefactor when `normalized`.
pub fn gaussian_source(
    mesh: &TwoScaleMesh,
    center: (f64, f64),
    spread: f64,
    normalized: bool,
) -> Result<SourceField> {
    if !(spread > 0.0) {
        return Err(Error::Config(format!("gaussian spread must be positive, got {spread}")));
    }
    let pre = if normalized {
        1.0 / (spread * (2.0 * std::f64::consts::PI).sqrt())
    } else {
        1.0
    };
    SourceField::from_fn(mesh, |x, y| {
        let r2 = (x - center.0).powi(2) + (y - center.1).powi(2);
        pre * (-r2 / (2.0 * spread * spread)).exp()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell_at(mesh: &TwoScaleMesh, x: f64, y: f64) -> usize {
        let n = mesh.n_fine() as f64;
        mesh.cell((x * n) as usize, (y * n) as usize)
    }

    #[test]
    fn flat_interface_defaults() {
        let mesh = TwoScaleMesh::new(400, 20).unwrap();
        let f = flat_interface(&mesh, 1.0, 3.0, 0.5).unwrap();
        assert_eq!(f.sigma()[cell_at(&mesh, 0.5, 0.75)], 1.0);
        assert_eq!(f.sigma()[cell_at(&mesh, 0.5, 0.25)], -3.0);
        // rows with center below 0.5: 200 of 400
        let below = (0..400).filter(|&r| (r as f64 + 0.5) / 400.0 < 0.5).count();
        assert_eq!(f.negative_cells(), below * 400);
        assert_eq!(f.negative_cells(), mesh.num_cells() / 2);
        assert_eq!(f.sigma(), f.c());
        assert!((contrast_ratio(&f).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn flat_interface_symmetric_contrast() {
        let mesh = TwoScaleMesh::new(16, 4).unwrap();
        let f = flat_interface(&mesh, 1.0, 1.0, 0.5).unwrap();
        assert!(f.sigma().iter().all(|s| s.abs() == 1.0));
        assert!(flat_interface(&mesh, 0.0, 1.0, 0.5).is_err());
        assert!(flat_interface(&mesh, 1.0, -1.0, 0.5).is_err());
        assert!(flat_interface(&mesh, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn exact_solution_vanishes_on_boundary_and_interface() {
        let p = FlatInterface::default();
        for t in [0.0, 0.13, 0.5, 0.77, 1.0] {
            for (x, y) in [(0.0, t), (1.0, t), (t, 0.0), (t, 1.0)] {
                assert_eq!(flat_interface_exact((x, y), &p).0, 0.0);
            }
            assert_eq!(p.u(t, p.gamma), 0.0);
            assert!(p.u(t, p.gamma - 1e-14).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_solution_flux_continuous() {
        // σ ∂u/∂y must agree from both sides at y = γ
        let p = FlatInterface::default();
        let h = 1e-7;
        for x in [0.2, 0.5, 0.9] {
            let up = p.sigma_plus * (p.u(x, p.gamma + h) - p.u(x, p.gamma)) / h;
            let dn = -p.sigma_minus * (p.u(x, p.gamma) - p.u(x, p.gamma - h)) / h;
            assert!((up - dn).abs() < 1e-6, "{up} vs {dn}");
        }
    }

    /// Central-difference evaluation of -∇·(σ∇u) - k² c u for the exact
    /// solution, independent of the closed-form source.
    fn fd_residual_max(p: &FlatInterface, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let sigma = |y: f64| if y >= p.gamma { p.sigma_plus } else { -p.sigma_minus };
        let mut worst = 0.0_f64;
        for j in 1..n {
            let y = j as f64 * h;
            // skip the two rows adjacent to the interface
            if (y - p.gamma).abs() <= 2.0 * h {
                continue;
            }
            for i in (1..n).step_by(7) {
                let x = i as f64 * h;
                let s = sigma(y);
                let lap = (p.u(x + h, y) + p.u(x - h, y) + p.u(x, y + h) + p.u(x, y - h)
                    - 4.0 * p.u(x, y))
                    / (h * h);
                let lhs = -s * lap - p.k * p.k * s * p.u(x, y);
                worst = worst.max((lhs - p.f(x, y)).abs());
            }
        }
        worst
    }

    #[test]
    fn exact_source_matches_finite_differences() {
        let p = FlatInterface::default();
        let coarse = fd_residual_max(&p, 400);
        let fine = fd_residual_max(&p, 1600);
        // u is cubic in y and quadratic in x: central differences are exact
        // up to rounding, so the residual is at round-off level
        assert!(fine < 1e-6, "residual {fine}");
        assert!(coarse < 1e-6, "residual {coarse}");
    }

    #[test]
    fn exact_source_with_other_wavenumber() {
        let p = FlatInterface {
            k: 7.5,
            sigma_plus: 2.0,
            sigma_minus: 5.0,
            gamma: 0.375,
        };
        assert!(fd_residual_max(&p, 800) < 1e-5);
    }

    #[test]
    fn inclusions_count_zero_is_uniform() {
        let mesh = TwoScaleMesh::new(40, 4).unwrap();
        let params = InclusionParams {
            count: 0,
            ..Default::default()
        };
        let f = random_inclusions(&mesh, &params).unwrap();
        assert_eq!(f.negative_cells(), 0);
        assert_eq!(contrast_ratio(&f).unwrap(), f64::INFINITY);
    }

    #[test]
    fn single_inclusion_cell_count() {
        let mesh = TwoScaleMesh::new(400, 20).unwrap();
        let params = InclusionParams {
            seed: 7,
            count: 1,
            min_side: 4,
            max_side: 4,
            ..Default::default()
        };
        let f = random_inclusions(&mesh, &params).unwrap();
        assert_eq!(f.negative_cells(), 16);
    }

    #[test]
    fn inclusions_deterministic_and_clear_of_boundary() {
        let mesh = TwoScaleMesh::new(200, 10).unwrap();
        let params = InclusionParams {
            seed: 3,
            ..Default::default()
        };
        let a = random_inclusions(&mesh, &params).unwrap();
        let b = random_inclusions(&mesh, &params).unwrap();
        assert_eq!(a, b);
        assert!((contrast_ratio(&a).unwrap() - 1e-3).abs() < 1e-18);
        let n = mesh.n_fine();
        for k in 0..n {
            for cell in [mesh.cell(k, 0), mesh.cell(k, n - 1), mesh.cell(0, k), mesh.cell(n - 1, k)] {
                assert!(!a.is_negative(cell));
            }
        }
        let other = random_inclusions(&mesh, &InclusionParams { seed: 4, ..params }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn inclusion_overflow_is_an_error() {
        let mesh = TwoScaleMesh::new(8, 2).unwrap();
        let params = InclusionParams {
            count: 1,
            min_side: 7,
            max_side: 7,
            ..Default::default()
        };
        assert!(matches!(random_inclusions(&mesh, &params), Err(Error::Generation(_))));
        let crowded = InclusionParams {
            count: 50,
            min_side: 3,
            max_side: 3,
            ..Default::default()
        };
        assert!(random_inclusions(&mesh, &crowded).is_err());
    }

    #[test]
    fn nim_slab_membership() {
        let mesh = TwoScaleMesh::new(400, 20).unwrap();
        let f = nim_slab(&mesh);
        assert_eq!(f.sigma()[cell_at(&mesh, 0.5, 0.3)], -10.0);
        assert_eq!(f.sigma()[cell_at(&mesh, 0.1, 0.3)], 1.0);
        assert!((contrast_ratio(&f).unwrap() - 0.1).abs() < 1e-15);

        let aligned = TwoScaleMesh::new(408, 24).unwrap();
        let f = nim_slab(&aligned);
        let cols = (0..408)
            .filter(|&i| {
                let x = (i as f64 + 0.5) / 408.0;
                x > 11.0 / 24.0 && x < 13.0 / 24.0
            })
            .count();
        assert_eq!(cols, 34);
        assert_eq!(f.negative_cells(), 408 * cols);
    }

    #[test]
    fn gaussian_values() {
        let mesh = TwoScaleMesh::new(20, 4).unwrap();
        let s = gaussian_source(&mesh, (0.0, 0.5), 0.05, false).unwrap();
        let at = |x: f64, y: f64| s.values()[mesh.node((x * 20.0).round() as usize, (y * 20.0).round() as usize)];
        assert_eq!(at(0.0, 0.5), 1.0);
        assert!((at(0.1, 0.5) - (-2.0_f64).exp()).abs() < 1e-15);
        assert!(at(0.05, 0.5) > at(0.1, 0.5) && at(0.1, 0.5) > at(0.15, 0.5));

        let n = gaussian_source(&mesh, (0.5, 0.5), 0.05, true).unwrap();
        let pre = 1.0 / (0.05 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((n.values()[mesh.node(10, 10)] - pre).abs() < 1e-12);
        assert!(gaussian_source(&mesh, (0.5, 0.5), 0.0, true).is_err());
    }

    #[test]
    fn field_invariants_rejected() {
        assert!(CoefficientField::new(1, vec![1.0], vec![-1.0]).is_err());
        assert!(CoefficientField::new(1, vec![0.0], vec![0.0]).is_err());
        assert!(CoefficientField::new(2, vec![1.0], vec![1.0]).is_err());
        let all_neg = CoefficientField::proportional(1, vec![-2.0]).unwrap();
        assert!(contrast_ratio(&all_neg).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join(format!("signms-coeffs-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mesh = TwoScaleMesh::new(48, 4).unwrap();
        let f = nim_slab(&mesh);
        let (sp, cp) = (dir.join("sigma.grid"), dir.join("c.grid"));
        f.save(&sp, &cp).unwrap();
        assert_eq!(CoefficientField::load(&sp, Some(&cp)).unwrap(), f);
        assert_eq!(CoefficientField::load(&sp, None).unwrap(), f);

        std::fs::write(&sp, "2 2\n1 1\n0.0 1\n").unwrap();
        let err = CoefficientField::load(&sp, None).unwrap_err().to_string();
        assert!(err.contains("zero"), "{err}");
        std::fs::write(&sp, "2 2\n1 1\n1\n").unwrap();
        let err = CoefficientField::load(&sp, None).unwrap_err().to_string();
        assert!(err.contains("count mismatch"), "{err}");

        let src = gaussian_source(&mesh, (0.5, 0.5), 0.1, true).unwrap();
        let fp = dir.join("f.grid");
        src.save(&fp).unwrap();
        assert_eq!(SourceField::load(&fp).unwrap(), src);
        std::fs::remove_dir_all(&dir).ok();
    }
}
