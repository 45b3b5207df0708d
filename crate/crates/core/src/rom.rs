//! Reduced operators and the evolve-filter-relax stepper.
//!
//! The reduced state is `u_r = mean + sum_j a_j phi_j`. The mean is a fixed
//! lifting: only the fluctuation coefficients `a` are evolved, filtered and
//! relaxed.
//!
//! Convection enters through the trilinear form `c(z, u, v) = (z du/dx, v)`.
//! The tensor `B` follows the sign of the G-ROM right-hand side,
//! `B_imn = -c(phi_m, phi_n, phi_i)`; the mean couplings store `c` itself as
//! it appears on the left-hand side.

use std::path::Path;

use thiserror::Error;

use crate::dense::{
    dot, mat_power, sym_eig, Cholesky, DenseMatrix, DenseVector, LinalgError, Lu,
};
use crate::fom::{self, affine_weights, FomGrid, FomMatrices};
use crate::io::{self, CsvTable, FormatError, KeyValues};
use crate::pod::PodBasis;

#[derive(Debug, Error)]
pub enum RomError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("relaxation parameter chi = {0} outside [0, 1]")]
    Chi(f64),
    #[error("invalid filter: {0}")]
    FilterSpec(String),
    #[error("filter system is not SPD: {0}")]
    FilterAssembly(LinalgError),
    #[error("invalid time stepping: {0}")]
    Time(String),
    #[error("step {step} (t = {t}) failed: {source}")]
    Step {
        step: usize,
        t: f64,
        #[source]
        source: Box<RomError>,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Fom(#[from] fom::FomError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

pub type Result<T> = std::result::Result<T, RomError>;

/// Evaluates the convection load `((z d/dx) u, psi_k)` for every interior
/// test function `psi_k` of the full-order space.
pub trait ConvectionAssembler {
    fn load(&self, advecting: &[f64], advected: &[f64]) -> Vec<f64>;
}

/// Exact quadrature of the Burgers convection term on linear elements.
#[derive(Debug, Clone, Copy)]
pub struct BurgersConvection {
    pub grid: FomGrid,
}

impl ConvectionAssembler for BurgersConvection {
    fn load(&self, advecting: &[f64], advected: &[f64]) -> Vec<f64> {
        let bands = fom::convection_bands(&self.grid.with_boundary(advecting));
        bands.matvec(advected)
    }
}

/// Dense r x r x r tensor, `get(i, m, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    r: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(r: usize) -> Self {
        Self {
            r,
            data: vec![0.0; r * r * r],
        }
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn get(&self, i: usize, m: usize, n: usize) -> f64 {
        self.data[(i * self.r + m) * self.r + n]
    }

    pub fn set(&mut self, i: usize, m: usize, n: usize, v: f64) {
        let r = self.r;
        self.data[(i * r + m) * r + n] = v;
    }

    /// `sum_m e_m B_imn` as an r x r matrix indexed `(i, n)`.
    pub fn contract_middle(&self, e: &[f64]) -> DenseMatrix {
        let r = self.r;
        DenseMatrix::from_fn(r, r, |i, n| (0..r).map(|m| e[m] * self.get(i, m, n)).sum())
    }

    /// Flattened to an `r^2 x r` matrix with row `i * r + m`, column `n`.
    pub fn to_matrix(&self) -> DenseMatrix {
        let r = self.r;
        DenseMatrix::from_fn(r * r, r, |row, n| self.get(row / r, row % r, n))
    }

    pub fn from_matrix(m: &DenseMatrix) -> Option<Self> {
        let r = m.cols();
        if m.rows() != r * r {
            return None;
        }
        let mut t = Self::zeros(r);
        for row in 0..r * r {
            for n in 0..r {
                t.set(row / r, row % r, n, m[(row, n)]);
            }
        }
        Some(t)
    }
}

/// Everything the online stage needs; independent of the collocation point.
#[derive(Debug, Clone, PartialEq)]
pub struct RomOperators {
    pub mass: DenseMatrix,
    pub stiffness_components: Vec<DenseMatrix>,
    pub stiffness_mean_coupling: Vec<DenseVector>,
    /// Unit-viscosity reduced stiffness, used only by the filters.
    pub filter_stiffness: DenseMatrix,
    pub convection: Tensor3,
    /// `(i, n) -> c(mean, phi_n, phi_i)`
    pub conv_mean_left: DenseMatrix,
    /// `(i, m) -> c(phi_m, mean, phi_i)`
    pub conv_mean_right: DenseMatrix,
    /// `c(mean, mean, phi_i)`
    pub conv_mean_mean: DenseVector,
    pub forcing: DenseVector,
    /// `Phi^T M mean`, for the reduced energy.
    pub mean_mass_coupling: DenseVector,
    /// `mean^T M mean`
    pub mean_mass: f64,
}

impl RomOperators {
    /// Operators of a pure diffusion model with a zero mean: `mass` and a
    /// single stiffness component that also defines the filter.
    pub fn diffusion_only(mass: DenseMatrix, stiffness: DenseMatrix) -> Self {
        let r = mass.rows();
        RomOperators {
            mass,
            stiffness_components: vec![stiffness.clone()],
            stiffness_mean_coupling: vec![DenseVector::zeros(r)],
            filter_stiffness: stiffness,
            convection: Tensor3::zeros(r),
            conv_mean_left: DenseMatrix::zeros(r, r),
            conv_mean_right: DenseMatrix::zeros(r, r),
            conv_mean_mean: DenseVector::zeros(r),
            forcing: DenseVector::zeros(r),
            mean_mass_coupling: DenseVector::zeros(r),
            mean_mass: 0.0,
        }
    }

    pub fn r(&self) -> usize {
        self.mass.rows()
    }

    pub fn n_components(&self) -> usize {
        self.stiffness_components.len()
    }

    /// Reduced viscous matrix and mean coupling at parameter `y`.
    pub fn viscous(&self, y: &[f64]) -> Result<(DenseMatrix, DenseVector)> {
        let w = affine_weights(self.n_components(), y)?;
        let r = self.r();
        let mut s = DenseMatrix::zeros(r, r);
        let mut c = DenseVector::zeros(r);
        for ((wl, sl), cl) in w.iter().zip(&self.stiffness_components).zip(&self.stiffness_mean_coupling) {
            s = s.add_scaled(*wl, sl);
            c = c.axpy(*wl, cl);
        }
        Ok((s, c))
    }

    /// `0.5 |mean + Phi a|_M^2` from reduced quantities.
    pub fn energy(&self, a: &[f64]) -> f64 {
        let ma = self.mass.matvec(a).expect("coefficient length");
        0.5 * (self.mean_mass + 2.0 * dot(a, &self.mean_mass_coupling) + dot(a, &ma))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_matrix(&dir.join("rom_mass.txt"), &self.mass)?;
        for (l, (s, c)) in self
            .stiffness_components
            .iter()
            .zip(&self.stiffness_mean_coupling)
            .enumerate()
        {
            io::write_matrix(&dir.join(format!("rom_stiffness_{l}.txt")), s)?;
            io::write_vector(&dir.join(format!("rom_stiffness_mean_{l}.txt")), c)?;
        }
        io::write_matrix(&dir.join("rom_filter_stiffness.txt"), &self.filter_stiffness)?;
        io::write_matrix(&dir.join("rom_convection.txt"), &self.convection.to_matrix())?;
        io::write_matrix(&dir.join("rom_conv_mean_left.txt"), &self.conv_mean_left)?;
        io::write_matrix(&dir.join("rom_conv_mean_right.txt"), &self.conv_mean_right)?;
        io::write_vector(&dir.join("rom_conv_mean_mean.txt"), &self.conv_mean_mean)?;
        io::write_vector(&dir.join("rom_forcing.txt"), &self.forcing)?;
        io::write_vector(&dir.join("rom_mean_mass_coupling.txt"), &self.mean_mass_coupling)?;
        let mut kv = KeyValues::new();
        kv.set("r", self.r());
        kv.set("components", self.n_components());
        kv.set_f64("mean_mass", self.mean_mass);
        kv.write(&dir.join("rom.meta"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<RomOperators> {
        let meta = dir.join("rom.meta");
        let kv = KeyValues::read(&meta)?;
        let r: usize = kv.require_parsed("r", &meta)?;
        let components: usize = kv.require_parsed("components", &meta)?;
        let mean_mass: f64 = kv.require_parsed("mean_mass", &meta)?;
        let mut stiffness_components = Vec::with_capacity(components);
        let mut stiffness_mean_coupling = Vec::with_capacity(components);
        for l in 0..components {
            stiffness_components.push(io::read_matrix(&dir.join(format!("rom_stiffness_{l}.txt")))?);
            stiffness_mean_coupling.push(io::read_vector(&dir.join(format!("rom_stiffness_mean_{l}.txt")))?);
        }
        let conv = io::read_matrix(&dir.join("rom_convection.txt"))?;
        let convection = Tensor3::from_matrix(&conv).ok_or(RomError::Dimension {
            expected: r * r,
            actual: conv.rows(),
        })?;
        let ops = RomOperators {
            mass: io::read_matrix(&dir.join("rom_mass.txt"))?,
            stiffness_components,
            stiffness_mean_coupling,
            filter_stiffness: io::read_matrix(&dir.join("rom_filter_stiffness.txt"))?,
            convection,
            conv_mean_left: io::read_matrix(&dir.join("rom_conv_mean_left.txt"))?,
            conv_mean_right: io::read_matrix(&dir.join("rom_conv_mean_right.txt"))?,
            conv_mean_mean: io::read_vector(&dir.join("rom_conv_mean_mean.txt"))?,
            forcing: io::read_vector(&dir.join("rom_forcing.txt"))?,
            mean_mass_coupling: io::read_vector(&dir.join("rom_mean_mass_coupling.txt"))?,
            mean_mass,
        };
        if ops.r() != r || ops.convection.r() != r {
            return Err(RomError::Dimension {
                expected: r,
                actual: ops.r(),
            });
        }
        Ok(ops)
    }
}

/// Galerkin projection of the full-order operators onto the POD basis.
pub fn build_rom_operators(
    basis: &PodBasis,
    fom: &FomMatrices,
    convection: &dyn ConvectionAssembler,
) -> Result<RomOperators> {
    let dim = fom.mass.rows();
    if basis.dim() != dim {
        return Err(RomError::Dimension {
            expected: dim,
            actual: basis.dim(),
        });
    }
    let phi = &basis.modes;
    let mean = &basis.mean;
    let r = basis.r();
    let project_matrix = |m: &DenseMatrix| -> Result<DenseMatrix> {
        let mut out = phi.tr_matmul(&m.matmul(phi)?)?;
        out.symmetrize();
        Ok(out)
    };
    let mass = project_matrix(&fom.mass)?;
    let mut stiffness_components = Vec::with_capacity(fom.n_components());
    let mut stiffness_mean_coupling = Vec::with_capacity(fom.n_components());
    for s in &fom.stiffness_components {
        stiffness_components.push(project_matrix(s)?);
        stiffness_mean_coupling.push(phi.tr_matvec(&s.matvec(mean)?)?);
    }
    let filter_stiffness = project_matrix(&fom.unit_stiffness)?;

    let mut tensor = Tensor3::zeros(r);
    let mut conv_mean_right = DenseMatrix::zeros(r, r);
    for m in 0..r {
        for n in 0..r {
            let load = convection.load(phi.col(m), phi.col(n));
            let proj = phi.tr_matvec(&load)?;
            for i in 0..r {
                tensor.set(i, m, n, -proj[i]);
            }
        }
        let load = convection.load(phi.col(m), mean);
        let proj = phi.tr_matvec(&load)?;
        for i in 0..r {
            conv_mean_right[(i, m)] = proj[i];
        }
    }
    let mut conv_mean_left = DenseMatrix::zeros(r, r);
    for n in 0..r {
        let proj = phi.tr_matvec(&convection.load(mean, phi.col(n)))?;
        for i in 0..r {
            conv_mean_left[(i, n)] = proj[i];
        }
    }
    let conv_mean_mean = phi.tr_matvec(&convection.load(mean, mean))?;
    let mm = fom.mass.matvec(mean)?;
    Ok(RomOperators {
        mass,
        stiffness_components,
        stiffness_mean_coupling,
        filter_stiffness,
        convection: tensor,
        conv_mean_left,
        conv_mean_right,
        conv_mean_mean,
        forcing: DenseVector::zeros(r),
        mean_mass_coupling: phi.tr_matvec(&mm)?,
        mean_mass: dot(mean, &mm),
    })
}

/// Spatial filter selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    None,
    /// `(M + d^2 S) a_bar = M w`
    Df,
    /// `(M + d^2 S)^m a_bar = M^m w`
    HodfV1,
    /// `(M + d^2 S^m) a_bar = M w`
    HodfV2,
}

impl FilterKind {
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::None => "none",
            FilterKind::Df => "df",
            FilterKind::HodfV1 => "hodf1",
            FilterKind::HodfV2 => "hodf2",
        }
    }
}

impl std::str::FromStr for FilterKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(FilterKind::None),
            "df" => Ok(FilterKind::Df),
            "hodf1" | "hodf_v1" => Ok(FilterKind::HodfV1),
            "hodf2" | "hodf_v2" => Ok(FilterKind::HodfV2),
            other => Err(format!("unknown filter kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Filter radius.
    pub delta: f64,
    /// Order of the higher-order filters; ignored otherwise.
    pub m: u32,
}

impl FilterSpec {
    pub const NONE: FilterSpec = FilterSpec {
        kind: FilterKind::None,
        delta: 0.0,
        m: 1,
    };

    pub fn new(kind: FilterKind, delta: f64, m: u32) -> Result<Self> {
        let spec = Self { kind, delta, m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn df(delta: f64) -> Self {
        Self {
            kind: FilterKind::Df,
            delta,
            m: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(RomError::FilterSpec(format!("delta = {} must be >= 0", self.delta)));
        }
        if self.m == 0 {
            return Err(RomError::FilterSpec("order m must be >= 1".into()));
        }
        Ok(())
    }

    /// Short stable label, e.g. `df_d0.01` or `hodf2_m3_d0.0075`.
    pub fn label(&self) -> String {
        match self.kind {
            FilterKind::None => "none".into(),
            FilterKind::Df => format!("df_d{}", self.delta),
            k => format!("{}_m{}_d{}", k.name(), self.m, self.delta),
        }
    }

    /// Closed-form transfer factor on a generalized stiffness eigenvalue `mu`.
    pub fn transfer(&self, mu: f64) -> f64 {
        let d2 = self.delta * self.delta;
        match self.kind {
            FilterKind::None => 1.0,
            FilterKind::Df => 1.0 / (1.0 + d2 * mu),
            FilterKind::HodfV1 => (1.0 + d2 * mu).powi(-(self.m as i32)),
            FilterKind::HodfV2 => 1.0 / (1.0 + d2 * mu.powi(self.m as i32)),
        }
    }
}

/// A filter with its system matrix factored once.
#[derive(Debug, Clone)]
pub struct Filter {
    spec: FilterSpec,
    factored: Option<(Cholesky, DenseMatrix)>,
}

impl Filter {
    pub fn new(ops: &RomOperators, spec: FilterSpec) -> Result<Self> {
        spec.validate()?;
        if spec.kind == FilterKind::None || spec.delta == 0.0 {
            return Ok(Self { spec, factored: None });
        }
        let d2 = spec.delta * spec.delta;
        let m_r = &ops.mass;
        let s_r = &ops.filter_stiffness;
        let (mut system, rhs) = match spec.kind {
            FilterKind::Df => (m_r.add_scaled(d2, s_r), m_r.clone()),
            FilterKind::HodfV1 => {
                let base = m_r.add_scaled(d2, s_r);
                (mat_power(&base, spec.m)?, mat_power(m_r, spec.m)?)
            }
            FilterKind::HodfV2 => (m_r.add_scaled(d2, &mat_power(s_r, spec.m)?), m_r.clone()),
            FilterKind::None => unreachable!(),
        };
        system.symmetrize();
        let chol = Cholesky::factor(&system).map_err(RomError::FilterAssembly)?;
        Ok(Self {
            spec,
            factored: Some((chol, rhs)),
        })
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn is_identity(&self) -> bool {
        self.factored.is_none()
    }

    pub fn apply(&self, w: &DenseVector) -> Result<DenseVector> {
        match &self.factored {
            None => Ok(w.clone()),
            Some((chol, rhs)) => {
                if w.len() != rhs.cols() {
                    return Err(RomError::Dimension {
                        expected: rhs.cols(),
                        actual: w.len(),
                    });
                }
                Ok(chol.solve(&rhs.matvec(w)?)?)
            }
        }
    }
}

/// One-off filter application; assembles and factors the filter system.
pub fn filter_apply(w: &DenseVector, ops: &RomOperators, spec: FilterSpec) -> Result<DenseVector> {
    Filter::new(ops, spec)?.apply(w)
}

/// `(1 - chi) w + chi w_bar`; the endpoints return the inputs unchanged.
pub fn relax(w: &DenseVector, w_bar: &DenseVector, chi: f64) -> Result<DenseVector> {
    if !(0.0..=1.0).contains(&chi) {
        return Err(RomError::Chi(chi));
    }
    if w.len() != w_bar.len() {
        return Err(RomError::Dimension {
            expected: w.len(),
            actual: w_bar.len(),
        });
    }
    if chi == 0.0 {
        return Ok(w.clone());
    }
    if chi == 1.0 {
        return Ok(w_bar.clone());
    }
    Ok(w.scale(1.0 - chi).axpy(chi, w_bar))
}

/// Time stepping and stabilization settings of one online run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfrConfig {
    pub dt: f64,
    pub chi: f64,
    pub filter: FilterSpec,
    pub t_start: f64,
    pub t_final: f64,
}

impl EfrConfig {
    /// Relaxation defaults to `chi = dt`.
    pub fn new(dt: f64, t_start: f64, t_final: f64, filter: FilterSpec) -> Self {
        Self {
            dt,
            chi: dt,
            filter,
            t_start,
            t_final,
        }
    }

    pub fn with_chi(mut self, chi: f64) -> Self {
        self.chi = chi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(RomError::Time(format!("dt = {} must be positive", self.dt)));
        }
        if !(0.0..=1.0).contains(&self.chi) {
            return Err(RomError::Chi(self.chi));
        }
        self.filter.validate()
    }

    pub fn steps(&self) -> Result<usize> {
        fom::step_count(self.t_start, self.t_final, self.dt).map_err(RomError::from)
    }
}

/// Parameter-dependent pieces of the evolve system, assembled once per run.
struct EvolveSystem<'a> {
    ops: &'a RomOperators,
    viscous: DenseMatrix,
    /// mean-mean convection, viscous and forcing terms that don't involve `a`
    constant_rhs: DenseVector,
}

impl<'a> EvolveSystem<'a> {
    fn new(ops: &'a RomOperators, y: &[f64]) -> Result<Self> {
        let (viscous, viscous_mean) = ops.viscous(y)?;
        let constant_rhs = ops.forcing.sub(&viscous_mean).sub(&ops.conv_mean_mean);
        Ok(Self {
            ops,
            viscous,
            constant_rhs,
        })
    }

    fn step(&self, a_n: &DenseVector, a_nm1: Option<&DenseVector>, dt: f64) -> Result<DenseVector> {
        let ops = self.ops;
        let r = ops.r();
        if a_n.len() != r {
            return Err(RomError::Dimension {
                expected: r,
                actual: a_n.len(),
            });
        }
        let (mass_coeff, history, advecting) = match a_nm1 {
            None => (1.0 / dt, a_n.scale(1.0 / dt), a_n.clone()),
            Some(prev) => {
                if prev.len() != r {
                    return Err(RomError::Dimension {
                        expected: r,
                        actual: prev.len(),
                    });
                }
                (
                    1.5 / dt,
                    a_n.scale(4.0).sub(prev).scale(1.0 / (2.0 * dt)),
                    a_n.scale(2.0).sub(prev),
                )
            }
        };
        // c(Phi e, Phi w, phi_i) = -sum_m e_m B_imn w_n
        let fluct_conv = ops.convection.contract_middle(&advecting);
        let system = ops
            .mass
            .scale(mass_coeff)
            .add_scaled(1.0, &self.viscous)
            .add_scaled(1.0, &ops.conv_mean_left)
            .add_scaled(-1.0, &fluct_conv);
        let rhs = ops
            .mass
            .matvec(&history)?
            .axpy(1.0, &self.constant_rhs)
            .sub(&ops.conv_mean_right.matvec(&advecting)?);
        Ok(Lu::factor(&system)?.solve(&rhs)?)
    }
}

/// Evolve step: one linearized BDF2 step of the G-ROM (backward Euler when
/// `a_nm1` is `None`).
pub fn evolve_step(
    a_n: &DenseVector,
    a_nm1: Option<&DenseVector>,
    ops: &RomOperators,
    y: &[f64],
    dt: f64,
) -> Result<DenseVector> {
    if !(dt > 0.0) {
        return Err(RomError::Time(format!("dt = {dt} must be positive")));
    }
    EvolveSystem::new(ops, y)?.step(a_n, a_nm1, dt)
}

/// Coefficients, times and energies of one reduced trajectory, including the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct RomTrajectory {
    pub times: Vec<f64>,
    pub coefficients: Vec<DenseVector>,
    pub energy: Vec<f64>,
}

impl RomTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn to_csv(&self) -> CsvTable {
        self.to_csv_every(1)
    }

    /// Every `every`-th row, always including the last one.
    pub fn to_csv_every(&self, every: usize) -> CsvTable {
        let every = every.max(1);
        let last = self.len().saturating_sub(1);
        let r = self.coefficients.first().map_or(0, |a| a.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=r).map(|j| format!("a_{j}")));
        header.push("energy".into());
        let mut csv = CsvTable::new(&header);
        let mut row = Vec::with_capacity(r + 2);
        for (k, ((t, a), e)) in self.times.iter().zip(&self.coefficients).zip(&self.energy).enumerate() {
            if k % every != 0 && k != last {
                continue;
            }
            row.clear();
            row.push(*t);
            row.extend_from_slice(a);
            row.push(*e);
            csv.push_row(&[], &row);
        }
        csv
    }
}

/// Runs evolve, filter, relax from `a0` at `cfg.t_start` to `cfg.t_final`;
/// the first step is backward Euler.
pub fn efr_run(a0: &DenseVector, ops: &RomOperators, y: &[f64], cfg: &EfrConfig) -> Result<RomTrajectory> {
    run(None, a0, ops, y, cfg)
}

/// Like [`efr_run`] but starts BDF2 directly from two consecutive states
/// (`a_prev` at `t_start - dt`, `a0` at `t_start`).
pub fn efr_run_from_pair(
    a_prev: &DenseVector,
    a0: &DenseVector,
    ops: &RomOperators,
    y: &[f64],
    cfg: &EfrConfig,
) -> Result<RomTrajectory> {
    run(Some(a_prev), a0, ops, y, cfg)
}

fn run(
    a_prev: Option<&DenseVector>,
    a0: &DenseVector,
    ops: &RomOperators,
    y: &[f64],
    cfg: &EfrConfig,
) -> Result<RomTrajectory> {
    cfg.validate()?;
    let r = ops.r();
    if a0.len() != r {
        return Err(RomError::Dimension {
            expected: r,
            actual: a0.len(),
        });
    }
    let steps = cfg.steps()?;
    let system = EvolveSystem::new(ops, y)?;
    let filter = Filter::new(ops, cfg.filter)?;
    let relaxing = !filter.is_identity() && cfg.chi > 0.0;

    let mut traj = RomTrajectory {
        times: Vec::with_capacity(steps + 1),
        coefficients: Vec::with_capacity(steps + 1),
        energy: Vec::with_capacity(steps + 1),
    };
    traj.times.push(cfg.t_start);
    traj.energy.push(ops.energy(a0));
    traj.coefficients.push(a0.clone());
    let mut previous = a_prev.cloned();
    for step in 1..=steps {
        let t = cfg.t_start + step as f64 * cfg.dt;
        let wrap = |e: RomError| RomError::Step {
            step,
            t,
            source: Box::new(e),
        };
        let current = traj.coefficients.last().expect("initial state");
        let w = system.step(current, previous.as_ref(), cfg.dt).map_err(wrap)?;
        let next = if relaxing {
            let w_bar = filter.apply(&w).map_err(wrap)?;
            relax(&w, &w_bar, cfg.chi).map_err(wrap)?
        } else {
            w
        };
        if !next.is_finite() {
            return Err(wrap(RomError::Linalg(LinalgError::NonFinite { op: "efr step" })));
        }
        previous = Some(current.clone());
        traj.times.push(t);
        traj.energy.push(ops.energy(&next));
        traj.coefficients.push(next);
    }
    Ok(traj)
}

/// `0.5 |mean + Phi a|_M^2` evaluated in the full-order space.
pub fn rom_energy(a: &[f64], basis: &PodBasis, mass: &DenseMatrix) -> Result<f64> {
    let u = crate::pod::reconstruct(basis, a).map_err(|_| RomError::Dimension {
        expected: basis.r(),
        actual: a.len(),
    })?;
    Ok(fom::energy(&u, mass)?)
}

/// Generalized eigenvalues `mu` of `S v = mu M v`, nonincreasing.
pub fn generalized_eigenvalues(stiffness: &DenseMatrix, mass: &DenseMatrix) -> Result<Vec<f64>> {
    let chol = Cholesky::factor(mass)?;
    let n = mass.rows();
    // C = L^-1 S L^-T
    let mut l_inv = DenseMatrix::zeros(n, n);
    for j in 0..n {
        l_inv.col_mut(j).copy_from_slice(&chol.forward(&DenseVector::unit(n, j)));
    }
    let mut c = l_inv.matmul(&stiffness.matmul(&l_inv.transpose())?)?;
    c.symmetrize();
    Ok(sym_eig(&c)?.values)
}
