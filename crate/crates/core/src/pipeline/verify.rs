use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::{weighted_inner, DenseMatrix, DenseVector};
use crate::fom::{
    assemble_fom, fom_run, step_count, step_initial_condition, Forcing, FomGrid, FomIntegrator, FomOptions, FomState,
    SpatialFn,
};
use crate::pod::{build_pod, project, reconstruct};
use crate::rom::{filter_apply, FilterKind, FilterSpec, RomOperators};
use crate::uq::{expectation, mc_oracle, smolyak_grid, RandomViscosityModel, SparseGrid};

use super::config::PipelineConfig;
use super::Result;

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: String,
}

impl Check {
    fn new(name: &str, passed: bool, measured: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            measured,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<28} {}", self.name, self.measured)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    pub fn all_passed(&self) -> bool {
        self.failed() == 0
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(f, "{} of {} checks passed", self.checks.len() - self.failed(), self.checks.len())
    }
}

fn grid_counts() -> Result<Check> {
    let cases = [(1, 3, 9), (1, 6, 65), (5, 1, 11), (5, 4, 801)];
    let mut got = Vec::new();
    let mut ok = true;
    for (d, l, want) in cases {
        let n = smolyak_grid(d, l)?.len();
        ok &= n == want;
        got.push(n.to_string());
    }
    Ok(Check::new("grid cardinalities", ok, got.join("/")))
}

/// `|sum(w) - 1| <= 1e-12`
pub fn check_weight_normalization(grid: &SparseGrid) -> Check {
    let dev = (grid.weight_sum() - 1.0).abs();
    Check::new(
        &format!("weights sum d={} L={}", grid.dim, grid.level),
        dev <= 1e-12,
        format!("|sum - 1| = {dev:.2e}"),
    )
}

fn weight_normalization() -> Result<Check> {
    let mut worst: Option<Check> = None;
    let mut worst_dev = -1.0;
    for d in [1, 2, 5] {
        for l in 0..=4 {
            let g = smolyak_grid(d, l)?;
            let dev = (g.weight_sum() - 1.0).abs();
            if dev > worst_dev {
                worst_dev = dev;
                worst = Some(check_weight_normalization(&g));
            }
        }
    }
    let w = worst.expect("at least one grid");
    Ok(Check::new("weight normalization", w.passed, format!("worst at {}: {}", w.name, w.measured)))
}

fn uniform_moments() -> Result<Check> {
    let mut worst = 0.0f64;
    for l in 1..=6 {
        let g = smolyak_grid(1, l)?;
        let y: Vec<f64> = (0..g.len()).map(|j| g.point(j)[0]).collect();
        let ones = vec![1.0; g.len()];
        let sq: Vec<f64> = y.iter().map(|v| v * v).collect();
        worst = worst
            .max((expectation(&ones, &g)? - 1.0).abs())
            .max(expectation(&y, &g)?.abs())
            .max((expectation(&sq, &g)? - 1.0 / 3.0).abs());
    }
    Ok(Check::new("uniform moments 1, y, y^2", worst <= 1e-12, format!("max error {worst:.2e}")))
}

fn nestedness() -> Result<Check> {
    let mut missing = 0;
    for d in [1, 2, 5] {
        for l in 0..=2 {
            let coarse = smolyak_grid(d, l)?;
            let fine = smolyak_grid(d, l + 1)?;
            missing += (0..coarse.len()).filter(|&j| fine.find(coarse.point(j)).is_none()).count();
        }
    }
    Ok(Check::new("grid nestedness", missing == 0, format!("{missing} coarse nodes missing")))
}

fn uniform_moment(p: u32) -> f64 {
    if p % 2 == 1 {
        0.0
    } else {
        1.0 / (p as f64 + 1.0)
    }
}

fn monomial_exactness() -> Result<Check> {
    let mut worst = 0.0f64;
    for d in [1usize, 2, 5] {
        for l in 1..=3u32 {
            let g = smolyak_grid(d, l)?;
            let deg = 2 * l + 1;
            let base = deg as usize + 1;
            for code in 0..base.pow(d as u32) {
                let mut c = code;
                let p: Vec<u32> = (0..d)
                    .map(|_| {
                        let e = (c % base) as u32;
                        c /= base;
                        e
                    })
                    .collect();
                if p.iter().sum::<u32>() > deg {
                    continue;
                }
                let vals: Vec<f64> = (0..g.len())
                    .map(|j| g.point(j).iter().zip(&p).map(|(y, &e)| y.powi(e as i32)).product())
                    .collect();
                let want: f64 = p.iter().map(|&e| uniform_moment(e)).product();
                worst = worst.max((expectation(&vals, &g)? - want).abs());
            }
        }
    }
    Ok(Check::new(
        "exactness, degree <= 2L+1",
        worst <= 1e-12,
        format!("max error {worst:.2e}"),
    ))
}

/// 64-node Burgers run with 50 snapshots, four modes.
fn pod_checks() -> Result<Vec<Check>> {
    let grid = FomGrid::new(64)?;
    let nu: SpatialFn = Arc::new(|_| 8e-4);
    let fom = assemble_fom(grid, &[nu]);
    let initial = step_initial_condition(&grid);
    let dt = 2e-3;
    let snaps = fom_run(&initial, &fom, &[], dt, 49.0 * dt, 1, &FomOptions::default())?;
    let r = 4;
    let basis = build_pod(&snaps, r)?;
    let gram = basis.modes.tr_matmul(&fom.mass.matmul(&basis.modes)?)?;
    let ortho = gram.sub(&DenseMatrix::identity(r)).max_abs();

    let mut residual = 0.0;
    for j in 0..snaps.n_snapshots() {
        let u = snaps.data().column(j);
        let a = project(&basis, &u, &fom.mass)?;
        let e = u.sub(&reconstruct(&basis, &a)?);
        residual += weighted_inner(&e, &e, &fom.mass)?;
    }
    let tail: f64 = basis.eigenvalues[r..].iter().sum();
    let rel = (residual - tail).abs() / tail;
    Ok(vec![
        Check::new("POD M-orthonormality", ortho <= 1e-8, format!("max |Phi^T M Phi - I| = {ortho:.2e}")),
        Check::new(
            "POD optimality identity",
            rel <= 1e-8,
            format!("{} snapshots, relative gap {rel:.2e}", snaps.n_snapshots()),
        ),
    ])
}

fn filter_closed_forms(cfg: &PipelineConfig) -> Result<Vec<Check>> {
    let mu = [0.5, 2.0, 10.0, 75.0];
    let ops = RomOperators::diffusion_only(DenseMatrix::identity(mu.len()), DenseMatrix::from_diagonal(&mu));
    let w = DenseVector::from(vec![1.0, -2.0, 0.5, 3.0]);
    let mut worst = 0.0f64;
    let mut reduction = 0.0f64;
    let mut identity_exact = true;
    for &delta in &[0.05, 0.1, 0.3] {
        let df = filter_apply(&w, &ops, FilterSpec::df(delta))?;
        for m in 1..=4 {
            for kind in [FilterKind::Df, FilterKind::HodfV1, FilterKind::HodfV2] {
                let spec = FilterSpec::new(kind, delta, m)?;
                let out = filter_apply(&w, &ops, spec)?;
                for i in 0..mu.len() {
                    let d2 = delta * delta;
                    let want = w[i]
                        * match kind {
                            FilterKind::Df => 1.0 / (1.0 + d2 * mu[i]),
                            FilterKind::HodfV1 => 1.0 / (1.0 + d2 * mu[i]).powi(m as i32),
                            _ => 1.0 / (1.0 + d2 * mu[i].powi(m as i32)),
                        };
                    worst = worst.max((out[i] - want).abs());
                }
                if m == 1 {
                    reduction = reduction.max(out.sub(&df).norm());
                }
            }
        }
    }
    for kind in [FilterKind::Df, FilterKind::HodfV1, FilterKind::HodfV2] {
        identity_exact &= filter_apply(&w, &ops, FilterSpec::new(kind, 0.0, 3)?)? == w;
    }

    // non-expansiveness on a non-diagonal pair
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = 6;
    let a = DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
    let mut s = a.tr_matmul(&a)?.scale(40.0);
    s.symmetrize();
    let e = DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1e-4..1e-4));
    let mut m = DenseMatrix::identity(r).add_scaled(1.0, &e.tr_matmul(&e)?);
    m.symmetrize();
    let ops = RomOperators::diffusion_only(m.clone(), s);
    let mut worst_ratio = 0.0f64;
    for _ in 0..100 {
        let w = DenseVector::from_fn(r, |_| rng.random_range(-1.0..1.0));
        let kind = [FilterKind::Df, FilterKind::HodfV1, FilterKind::HodfV2][rng.random_range(0..3)];
        let spec = FilterSpec::new(kind, rng.random_range(0.0..0.5), rng.random_range(1..5))?;
        let f = filter_apply(&w, &ops, spec)?;
        let ratio = (weighted_inner(&f, &f, &m)? / weighted_inner(&w, &w, &m)?).sqrt();
        worst_ratio = worst_ratio.max(ratio);
    }
    Ok(vec![
        Check::new("filter transfer closed forms", worst <= 1e-12, format!("max error {worst:.2e}")),
        Check::new("HODF m=1 equals DF", reduction <= 1e-12, format!("max difference {reduction:.2e}")),
        Check::new("delta=0 filter identity", identity_exact, "bit-exact".to_string()),
        Check::new(
            "filter non-expansiveness",
            worst_ratio <= 1.0 + 1e-12,
            format!("max |w_bar|/|w| = {worst_ratio:.6}"),
        ),
    ])
}

fn mc_versus_scm(cfg: &PipelineConfig) -> Result<Check> {
    let model = RandomViscosityModel::kl5d();
    let psi = |y: &[f64]| 1.0 + y[0] * y[1] + 0.3 * y[2].powi(4) - 0.2 * y[3] * y[3] * y[4] + 0.1 * y[4];
    let grid = smolyak_grid(5, 4)?;
    let vals: Vec<f64> = (0..grid.len()).map(|j| psi(&model.map_reference(grid.point(j)))).collect();
    let scm = expectation(&vals, &grid)?;
    let n = 100_000;
    let mc = mc_oracle(&model, |y| Ok(psi(y)), n, cfg.seed)?;
    let z = (mc.mean - scm).abs() / mc.std_error;
    Ok(Check::new(
        "MC vs SCM, quartic QOI",
        z <= 3.0,
        format!("scm {scm:.6}, mc {:.6} +- {:.1e} ({z:.2} se)", mc.mean, mc.std_error),
    ))
}

/// Diffusion-only manufactured solution `e^-t sin(pi x)`; the error is taken
/// against the exact semi-discrete solution so it is purely temporal.
fn bdf2_order() -> Result<Check> {
    let n_nodes = 33;
    let nu = 0.5;
    let grid = FomGrid::new(n_nodes)?;
    let h = grid.h();
    let comp: SpatialFn = Arc::new(move |_| nu);
    let fom = assemble_fom(grid, &[comp]);
    let mu_h = 6.0 * (1.0 - (PI * h).cos()) / (h * h * (2.0 + (PI * h).cos()));
    let forcing: Forcing = Arc::new(move |x, t| (nu * PI * PI - 1.0) * (-t).exp() * (PI * x).sin());
    let opts = FomOptions {
        no_convection: true,
        forcing: Some(forcing),
    };
    let amp = (nu * PI * PI - 1.0) / (nu * mu_h - 1.0);
    let g = |t: f64| amp * (-t).exp() + (1.0 - amp) * (-nu * mu_h * t).exp();
    let sine = grid.interpolate(|x| (PI * x).sin());
    let t_final = 1.0;
    let mut errors = Vec::new();
    for dt in [0.02, 0.01, 0.005] {
        let initial = FomState::new(sine.clone(), 0.0);
        let mut integ = FomIntegrator::new(initial, &fom, &[], dt, &opts)?;
        for _ in 0..step_count(0.0, t_final, dt)? {
            integ.step()?;
        }
        let exact = sine.scale(g(t_final));
        errors.push(integ.state().u.sub(&exact).norm());
    }
    let r1 = errors[0] / errors[1];
    let r2 = errors[1] / errors[2];
    let ok = [r1, r2].iter().all(|r| (3.2..=4.8).contains(r));
    Ok(Check::new("BDF2 temporal order", ok, format!("error ratios {r1:.3}, {r2:.3}")))
}

/// Runs the invariant suite and returns one check per line.
pub fn verify(cfg: &PipelineConfig) -> Result<VerifyReport> {
    let mut checks = vec![
        grid_counts()?,
        weight_normalization()?,
        uniform_moments()?,
        nestedness()?,
        monomial_exactness()?,
    ];
    checks.extend(pod_checks()?);
    checks.extend(filter_closed_forms(cfg)?);
    checks.push(mc_versus_scm(cfg)?);
    checks.push(bdf2_order()?);
    Ok(VerifyReport { checks })
}
