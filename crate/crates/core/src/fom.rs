//! Full-order model: 1D viscous Burgers on [0, 1] with linear finite elements,
//! homogeneous Dirichlet data and a linearized BDF2 time discretization.
//!
//! All matrices act on interior nodes only; boundary values are identically
//! zero and never stored.

use std::sync::Arc;

use thiserror::Error;

use crate::dense::{dot, DenseMatrix, DenseVector, LinalgError};
use crate::pod::SnapshotSet;

/// A function of the spatial coordinate.
pub type SpatialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// A source term `f(x, t)`.
pub type Forcing = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FomError {
    #[error("grid needs at least 3 nodes, got {0}")]
    Grid(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("parameter vector has {actual} entries, model has {expected} affine components")]
    Parameter { expected: usize, actual: usize },
    #[error("invalid time stepping: {0}")]
    Time(String),
    #[error("singular step system at row {row} (t = {t})")]
    Singular { row: usize, t: f64 },
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, FomError>;

/// Uniform grid on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FomGrid {
    n_nodes: usize,
    h: f64,
}

impl FomGrid {
    pub fn new(n_nodes: usize) -> Result<Self> {
        if n_nodes < 3 {
            return Err(FomError::Grid(n_nodes));
        }
        Ok(Self {
            n_nodes,
            h: 1.0 / (n_nodes - 1) as f64,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_interior(&self) -> usize {
        self.n_nodes - 2
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_nodes {
            1.0
        } else {
            i as f64 * self.h
        }
    }

    /// Coordinate of interior unknown `k` (global node `k + 1`).
    pub fn interior_node(&self, k: usize) -> f64 {
        self.node(k + 1)
    }

    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> DenseVector {
        DenseVector::from_fn(self.n_interior(), |k| f(self.interior_node(k)))
    }

    /// Pads an interior vector with the zero boundary values.
    pub fn with_boundary(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = Vec::with_capacity(self.n_nodes);
        full.push(0.0);
        full.extend_from_slice(interior);
        full.push(0.0);
        full
    }
}

/// Mass matrix plus one stiffness matrix per affine viscosity component, and
/// the unit-viscosity stiffness used for filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct FomMatrices {
    pub grid: FomGrid,
    pub mass: DenseMatrix,
    pub stiffness_components: Vec<DenseMatrix>,
    pub unit_stiffness: DenseMatrix,
}

impl FomMatrices {
    pub fn n_components(&self) -> usize {
        self.stiffness_components.len()
    }

    /// `[1, y_1, .., y_d]` weights of the stiffness components.
    pub fn affine_weights(&self, y: &[f64]) -> Result<Vec<f64>> {
        affine_weights(self.n_components(), y)
    }
}

pub(crate) fn affine_weights(n_components: usize, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() + 1 != n_components {
        return Err(FomError::Parameter {
            expected: n_components.saturating_sub(1),
            actual: y.len(),
        });
    }
    let mut w = Vec::with_capacity(n_components);
    w.push(1.0);
    w.extend_from_slice(y);
    Ok(w)
}

fn stiffness_with(grid: &FomGrid, nu: &dyn Fn(f64) -> f64) -> DenseMatrix {
    let n = grid.n_interior();
    let h = grid.h();
    let mut s = DenseMatrix::zeros(n, n);
    // element e spans global nodes (e, e+1); interior index = global - 1
    for e in 0..grid.n_nodes() - 1 {
        let mid = 0.5 * (grid.node(e) + grid.node(e + 1));
        let k = nu(mid) / h;
        let nodes = [e.checked_sub(1), (e + 1 < grid.n_nodes() - 1).then_some(e)];
        for (a, ia) in nodes.iter().enumerate() {
            let Some(ia) = *ia else { continue };
            for (b, ib) in nodes.iter().enumerate() {
                let Some(ib) = *ib else { continue };
                s[(ia, ib)] += if a == b { k } else { -k };
            }
        }
    }
    s
}

fn mass_matrix(grid: &FomGrid) -> DenseMatrix {
    let n = grid.n_interior();
    let h = grid.h();
    DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0 * h / 3.0
        } else if i.abs_diff(j) == 1 {
            h / 6.0
        } else {
            0.0
        }
    })
}

/// Assembles mass and per-component stiffness matrices; the element viscosity
/// is sampled at element midpoints.
pub fn assemble_fom(grid: FomGrid, viscosity_components: &[SpatialFn]) -> FomMatrices {
    FomMatrices {
        grid,
        mass: mass_matrix(&grid),
        stiffness_components: viscosity_components
            .iter()
            .map(|nu| stiffness_with(&grid, nu.as_ref()))
            .collect(),
        unit_stiffness: stiffness_with(&grid, &|_| 1.0),
    }
}

/// Velocity at interior nodes and time.
#[derive(Debug, Clone, PartialEq)]
pub struct FomState {
    pub u: DenseVector,
    pub t: f64,
}

impl FomState {
    pub fn new(u: DenseVector, t: f64) -> Self {
        Self { u, t }
    }

    pub fn zeros(grid: &FomGrid, t: f64) -> Self {
        Self::new(DenseVector::zeros(grid.n_interior()), t)
    }
}

/// Step-invariant knobs of the full-order model.
#[derive(Clone, Default)]
pub struct FomOptions {
    /// Disables the nonlinear term (pure diffusion).
    pub no_convection: bool,
    pub forcing: Option<Forcing>,
}

impl std::fmt::Debug for FomOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FomOptions")
            .field("no_convection", &self.no_convection)
            .field("forcing", &self.forcing.is_some())
            .finish()
    }
}

/// Steep-front initial condition: 1 on (0, 0.5], 0 elsewhere, interpolated.
pub fn step_initial_condition(grid: &FomGrid) -> FomState {
    FomState::new(
        grid.interpolate(|x| if x > 0.0 && x <= 0.5 { 1.0 } else { 0.0 }),
        0.0,
    )
}

/// Tridiagonal matrix in band form: `lower[i] = A[i+1,i]`, `upper[i] = A[i,i+1]`.
#[derive(Debug, Clone)]
pub(crate) struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n.saturating_sub(1)],
            diag: vec![0.0; n],
            upper: vec![0.0; n.saturating_sub(1)],
        }
    }

    /// `self += alpha * bands(m)`; entries of `m` outside the band are ignored.
    pub fn add_dense(&mut self, alpha: f64, m: &DenseMatrix) {
        let n = self.diag.len();
        for i in 0..n {
            self.diag[i] += alpha * m[(i, i)];
            if i + 1 < n {
                self.upper[i] += alpha * m[(i, i + 1)];
                self.lower[i] += alpha * m[(i + 1, i)];
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// Thomas algorithm; returns the failing row on a vanishing pivot.
    pub fn solve(&self, rhs: &[f64]) -> std::result::Result<Vec<f64>, usize> {
        let n = self.diag.len();
        let scale = self.diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        if denom.abs() <= 1e-14 * scale {
            return Err(0);
        }
        if n > 1 {
            c[0] = self.upper[0] / denom;
        }
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.lower[i - 1] * c[i - 1];
            if denom.abs() <= 1e-14 * scale || !denom.is_finite() {
                return Err(i);
            }
            if i + 1 < n {
                c[i] = self.upper[i] / denom;
            }
            d[i] = (rhs[i] - self.lower[i - 1] * d[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Ok(d)
    }
}

/// Bands of `C(z)` with `C_ij = (z dphi_j/dx, phi_i)` for the interior hat
/// functions, integrated exactly; `z` is the full nodal advecting field.
pub(crate) fn convection_bands(z_full: &[f64]) -> Tridiagonal {
    let n = z_full.len() - 2;
    let mut t = Tridiagonal::zeros(n);
    for k in 0..n {
        let g = k + 1;
        let (zl, zc, zr) = (z_full[g - 1], z_full[g], z_full[g + 1]);
        t.diag[k] = (zl - zr) / 6.0;
        if k + 1 < n {
            t.upper[k] = (2.0 * zc + zr) / 6.0;
        }
        if k > 0 {
            t.lower[k - 1] = -(2.0 * zc + zl) / 6.0;
        }
    }
    t
}

fn load_vector(matrices: &FomMatrices, forcing: &Forcing, t: f64) -> Result<Vec<f64>> {
    let grid = &matrices.grid;
    let f = grid.interpolate(|x| forcing(x, t));
    Ok(matrices.mass.matvec(&f)?.into_vec())
}

/// Advances one step. With `state_nm1 = None` the step is backward Euler
/// (start-up), otherwise linearized BDF2 with advecting field `2u^n - u^{n-1}`.
pub fn fom_step(
    state_n: &FomState,
    state_nm1: Option<&FomState>,
    matrices: &FomMatrices,
    y: &[f64],
    dt: f64,
    opts: &FomOptions,
) -> Result<FomState> {
    let n = matrices.grid.n_interior();
    if !(dt > 0.0) {
        return Err(FomError::Time(format!("dt must be positive, got {dt}")));
    }
    if state_n.u.len() != n {
        return Err(FomError::Dimension {
            expected: n,
            actual: state_n.u.len(),
        });
    }
    if let Some(prev) = state_nm1 {
        if prev.u.len() != n {
            return Err(FomError::Dimension {
                expected: n,
                actual: prev.u.len(),
            });
        }
    }
    let weights = matrices.affine_weights(y)?;
    let t_next = state_n.t + dt;

    let mut system = Tridiagonal::zeros(n);
    let (mass_coeff, history, advecting): (f64, Vec<f64>, Vec<f64>) = match state_nm1 {
        None => (1.0 / dt, state_n.u.scale(1.0 / dt).into_vec(), state_n.u.to_vec()),
        Some(prev) => {
            let hist = state_n.u.scale(4.0).sub(&prev.u).scale(1.0 / (2.0 * dt));
            let adv = state_n.u.scale(2.0).sub(&prev.u);
            (1.5 / dt, hist.into_vec(), adv.into_vec())
        }
    };
    system.add_dense(mass_coeff, &matrices.mass);
    for (w, s) in weights.iter().zip(&matrices.stiffness_components) {
        if *w != 0.0 {
            system.add_dense(*w, s);
        }
    }
    if !opts.no_convection {
        let conv = convection_bands(&matrices.grid.with_boundary(&advecting));
        for i in 0..n {
            system.diag[i] += conv.diag[i];
        }
        for i in 0..n.saturating_sub(1) {
            system.lower[i] += conv.lower[i];
            system.upper[i] += conv.upper[i];
        }
    }
    let mut rhs = matrices.mass.matvec(&history)?.into_vec();
    if let Some(forcing) = &opts.forcing {
        for (r, f) in rhs.iter_mut().zip(load_vector(matrices, forcing, t_next)?) {
            *r += f;
        }
    }
    let u = system
        .solve(&rhs)
        .map_err(|row| FomError::Singular { row, t: t_next })?;
    let u = DenseVector::from(u);
    if !u.is_finite() {
        return Err(FomError::NonFinite(t_next));
    }
    Ok(FomState::new(u, t_next))
}

/// Upper bound on the steps of one run; anything larger is a configuration mistake.
pub const MAX_STEPS: usize = 100_000_000;

/// Number of steps of size `dt` between `t0` and `t1`; the span must be an
/// integer multiple of `dt` to within 1e-9 relative.
pub fn step_count(t0: f64, t1: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(FomError::Time(format!("dt must be positive, got {dt}")));
    }
    let span = t1 - t0;
    if span < 0.0 {
        return Err(FomError::Time(format!("end time {t1} precedes start {t0}")));
    }
    let steps = (span / dt).round();
    if steps > MAX_STEPS as f64 {
        return Err(FomError::Time(format!(
            "{span} / {dt} needs more than {MAX_STEPS} steps"
        )));
    }
    if (steps * dt - span).abs() > 1e-9 * span.max(dt) {
        return Err(FomError::Time(format!(
            "interval {span} is not a multiple of dt = {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Sequential BDF2 integrator that remembers the previous state.
pub struct FomIntegrator<'a> {
    matrices: &'a FomMatrices,
    y: Vec<f64>,
    dt: f64,
    opts: &'a FomOptions,
    t0: f64,
    steps_taken: usize,
    current: FomState,
    previous: Option<FomState>,
}

impl<'a> FomIntegrator<'a> {
    pub fn new(
        initial: FomState,
        matrices: &'a FomMatrices,
        y: &[f64],
        dt: f64,
        opts: &'a FomOptions,
    ) -> Result<Self> {
        matrices.affine_weights(y)?;
        if initial.u.len() != matrices.grid.n_interior() {
            return Err(FomError::Dimension {
                expected: matrices.grid.n_interior(),
                actual: initial.u.len(),
            });
        }
        Ok(Self {
            matrices,
            y: y.to_vec(),
            dt,
            opts,
            t0: initial.t,
            steps_taken: 0,
            current: initial,
            previous: None,
        })
    }

    pub fn state(&self) -> &FomState {
        &self.current
    }

    pub fn previous(&self) -> Option<&FomState> {
        self.previous.as_ref()
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn step(&mut self) -> Result<&FomState> {
        let mut next = fom_step(
            &self.current,
            self.previous.as_ref(),
            self.matrices,
            &self.y,
            self.dt,
            self.opts,
        )?;
        self.steps_taken += 1;
        // times from the step index, not accumulated sums
        next.t = self.t0 + self.steps_taken as f64 * self.dt;
        self.previous = Some(std::mem::replace(&mut self.current, next));
        Ok(&self.current)
    }
}

/// Integrates to `t_final`, keeping every `stride`-th state including the initial one.
#[allow(clippy::too_many_arguments)]
pub fn fom_run(
    initial: &FomState,
    matrices: &FomMatrices,
    y: &[f64],
    dt: f64,
    t_final: f64,
    snapshot_stride: usize,
    opts: &FomOptions,
) -> Result<SnapshotSet> {
    if snapshot_stride == 0 {
        return Err(FomError::Time("snapshot stride must be at least 1".into()));
    }
    if !(t_final > initial.t) {
        return Err(FomError::Time(format!(
            "t_final = {t_final} must exceed the initial time {}",
            initial.t
        )));
    }
    let steps = step_count(initial.t, t_final, dt)?;
    let mut integ = FomIntegrator::new(initial.clone(), matrices, y, dt, opts)?;
    let mut columns = vec![initial.u.clone()];
    let mut times = vec![initial.t];
    for n in 1..=steps {
        let s = integ.step()?;
        if n % snapshot_stride == 0 {
            columns.push(s.u.clone());
            times.push(s.t);
        }
    }
    Ok(SnapshotSet::single_block(
        DenseMatrix::from_columns(&columns),
        Arc::new(matrices.mass.clone()),
        times,
        y.to_vec(),
        dt,
        snapshot_stride,
        matrices.grid.n_nodes(),
    ))
}

/// Kinetic energy `u^T M u / 2`.
pub fn energy_qoi(state: &FomState, mass: &DenseMatrix) -> Result<f64> {
    energy(&state.u, mass)
}

pub(crate) fn energy(u: &[f64], mass: &DenseMatrix) -> Result<f64> {
    if u.len() != mass.rows() {
        return Err(FomError::Dimension {
            expected: mass.rows(),
            actual: u.len(),
        });
    }
    Ok(0.5 * dot(u, &mass.matvec(u)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn constant(nu: f64) -> SpatialFn {
        Arc::new(move |_| nu)
    }

    #[test]
    fn step_count_bounds() {
        assert_eq!(step_count(0.25, 1.0, 0.05).unwrap(), 15);
        assert!(step_count(0.0, 1.0, 0.3).is_err());
        assert!(step_count(1.0, 0.0, 0.1).is_err());
        assert!(step_count(0.0, 1.0, 1e-300).is_err());
    }

    #[test]
    fn grid_validation() {
        assert_eq!(FomGrid::new(2), Err(FomError::Grid(2)));
        let g = FomGrid::new(5).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.n_interior(), 3);
    }

    #[test]
    fn hand_assembled_stiffness_and_mass() {
        let g = FomGrid::new(5).unwrap();
        let m = assemble_fom(g, &[constant(1.0), constant(0.0)]);
        let s = &m.stiffness_components[0];
        for i in 0..3 {
            assert!((s[(i, i)] - 8.0).abs() < 1e-14);
        }
        assert!((s[(0, 1)] + 4.0).abs() < 1e-14);
        assert_eq!(m.stiffness_components[1], DenseMatrix::zeros(3, 3));
        // interior row away from the boundary: h/6 + 2h/3 + h/6 = h
        let row_sum: f64 = (0..3).map(|j| m.mass[(1, j)]).sum();
        assert!((row_sum - 0.25).abs() < 1e-15);
    }

    #[test]
    fn midpoint_viscosity_sampling() {
        let g = FomGrid::new(3).unwrap();
        let m = assemble_fom(g, &[Arc::new(|x: f64| x)]);
        // single interior node, elements with midpoints 0.25 and 0.75
        assert!((m.stiffness_components[0][(0, 0)] - (0.25 + 0.75) / 0.5).abs() < 1e-15);
    }

    #[test]
    fn convection_bands_match_central_difference() {
        let z = vec![0.0, 1.0, 1.0, 1.0, 0.0];
        let c = convection_bands(&z);
        assert!((c.upper[0] - 0.5).abs() < 1e-15);
        assert!((c.lower[0] + 0.5).abs() < 1e-15);
        assert!(c.diag[1].abs() < 1e-15);
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let g = FomGrid::new(9).unwrap();
        let m = assemble_fom(g, &[constant(0.01)]);
        let s0 = FomState::zeros(&g, 0.0);
        let opts = FomOptions::default();
        let s1 = fom_step(&s0, None, &m, &[], 0.01, &opts).unwrap();
        let s2 = fom_step(&s1, Some(&s0), &m, &[], 0.01, &opts).unwrap();
        assert!(s2.u.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn energy_decays_for_smooth_data() {
        let g = FomGrid::new(65).unwrap();
        let m = assemble_fom(g, &[constant(0.05)]);
        let opts = FomOptions::default();
        let init = FomState::new(g.interpolate(|x| (PI * x).sin()), 0.0);
        let mut integ = FomIntegrator::new(init, &m, &[], 1e-3, &opts).unwrap();
        let mut e_prev = energy_qoi(integ.state(), &m.mass).unwrap();
        for _ in 0..200 {
            let e = energy_qoi(integ.step().unwrap(), &m.mass).unwrap();
            assert!(e <= e_prev + 1e-12, "{e} > {e_prev}");
            e_prev = e;
        }
    }

    #[test]
    fn run_counts_snapshots() {
        let g = FomGrid::new(9).unwrap();
        let m = assemble_fom(g, &[constant(0.01)]);
        let init = step_initial_condition(&g);
        let opts = FomOptions::default();
        let one = fom_run(&init, &m, &[], 0.01, 0.01, 1, &opts).unwrap();
        assert_eq!(one.n_snapshots(), 2);
        let strided = fom_run(&init, &m, &[], 0.01, 0.04, 2, &opts).unwrap();
        assert_eq!(strided.n_snapshots(), 3);
        assert_eq!(strided.times().len(), 3);
        assert!((strided.times()[2] - 0.04).abs() < 1e-15);
        assert!(fom_run(&init, &m, &[], 0.01, 0.04, 0, &opts).is_err());
    }

    #[test]
    fn steady_manufactured_state_is_preserved() {
        // -nu u'' = f with u = sin(pi x): the nodal sine is a discrete
        // eigenvector of (S, M), so the load M * (nu mu_h sin) is exactly steady.
        let g = FomGrid::new(33).unwrap();
        let nu = 0.1;
        let m = assemble_fom(g, &[constant(nu)]);
        let h = g.h();
        let mu_h = 6.0 / (h * h) * (1.0 - (PI * h).cos()) / (2.0 + (PI * h).cos());
        let opts = FomOptions {
            no_convection: true,
            forcing: Some(Arc::new(move |x, _| nu * mu_h * (PI * x).sin())),
        };
        let init = FomState::new(g.interpolate(|x| (PI * x).sin()), 0.0);
        let run = fom_run(&init, &m, &[], 0.01, 0.2, 1, &opts).unwrap();
        for j in 0..run.n_snapshots() {
            let diff = DenseVector::from(run.data().col(j)).sub(&init.u).norm();
            assert!(diff < 1e-10, "snapshot {j} drifted by {diff}");
        }
    }

    #[test]
    fn energy_qoi_basics() {
        let g = FomGrid::new(101).unwrap();
        let m = assemble_fom(g, &[constant(1.0)]);
        assert_eq!(energy_qoi(&FomState::zeros(&g, 0.0), &m.mass).unwrap(), 0.0);
        let ones = FomState::new(DenseVector::from(vec![1.0; g.n_interior()]), 0.0);
        let e = energy_qoi(&ones, &m.mass).unwrap();
        // boundary elimination removes one element-half at each end
        assert!((e - 0.5).abs() < 2.0 * g.h());
        let twos = FomState::new(ones.u.scale(2.0), 0.0);
        assert!((energy_qoi(&twos, &m.mass).unwrap() - 4.0 * e).abs() < 1e-14);
        let short = FomState::new(DenseVector::zeros(3), 0.0);
        assert!(energy_qoi(&short, &m.mass).is_err());
    }

    #[test]
    fn determinism() {
        let g = FomGrid::new(65).unwrap();
        let m = assemble_fom(g, &[constant(2e-3)]);
        let init = step_initial_condition(&g);
        let opts = FomOptions::default();
        let a = fom_run(&init, &m, &[], 1e-3, 0.1, 5, &opts).unwrap();
        let b = fom_run(&init, &m, &[], 1e-3, 0.1, 5, &opts).unwrap();
        let bits = |s: &SnapshotSet| s.data().as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
