//! Proper orthogonal decomposition by the method of snapshots.
//!
//! The snapshot mean is removed first and kept as a fixed lifting; the modes
//! are the dominant M-orthonormal directions of the fluctuations.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::dense::{dot, sym_eig, DenseMatrix, DenseVector, LinalgError};
use crate::io::{self, FormatError, KeyValues};

/// Relative eigenvalue cut below which a POD direction counts as numerically zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PodError {
    #[error("snapshot set is empty")]
    Empty,
    #[error("requested {requested} modes but the centered snapshots have numerical rank {max}")]
    Rank { requested: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("snapshot sets are incompatible: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

pub type Result<T> = std::result::Result<T, PodError>;

/// Contiguous run of columns produced by one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotBlock {
    pub first_column: usize,
    pub columns: usize,
    pub y: Vec<f64>,
}

/// Snapshot columns with their mass matrix and time/parameter tags.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    data: DenseMatrix,
    mass: Arc<DenseMatrix>,
    times: Vec<f64>,
    blocks: Vec<SnapshotBlock>,
    dt: f64,
    stride: usize,
    n_nodes: usize,
}

impl SnapshotSet {
    pub fn single_block(
        data: DenseMatrix,
        mass: Arc<DenseMatrix>,
        times: Vec<f64>,
        y: Vec<f64>,
        dt: f64,
        stride: usize,
        n_nodes: usize,
    ) -> Self {
        let columns = data.cols();
        assert_eq!(times.len(), columns, "one time per snapshot");
        assert_eq!(data.rows(), mass.rows(), "snapshot length vs mass");
        Self {
            data,
            mass,
            times,
            blocks: vec![SnapshotBlock {
                first_column: 0,
                columns,
                y,
            }],
            dt,
            stride,
            n_nodes,
        }
    }

    /// Snapshots without trajectory metadata (single block, no parameters).
    pub fn from_matrix(data: DenseMatrix, mass: DenseMatrix) -> Self {
        let n = data.cols();
        let n_nodes = data.rows() + 2;
        Self::single_block(data, Arc::new(mass), (0..n).map(|i| i as f64).collect(), Vec::new(), 1.0, 1, n_nodes)
    }

    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }

    pub fn mass(&self) -> &DenseMatrix {
        &self.mass
    }

    pub fn mass_arc(&self) -> Arc<DenseMatrix> {
        Arc::clone(&self.mass)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn blocks(&self) -> &[SnapshotBlock] {
        &self.blocks
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_snapshots(&self) -> usize {
        self.data.cols()
    }

    pub fn dim(&self) -> usize {
        self.data.rows()
    }

    /// Keeps only the columns with `t >= t_start` (to 1e-12 slack).
    pub fn window(&self, t_start: f64) -> SnapshotSet {
        let mut cols = Vec::new();
        let mut times = Vec::new();
        let mut blocks = Vec::new();
        for b in &self.blocks {
            let first = cols.len();
            for j in b.first_column..b.first_column + b.columns {
                if self.times[j] >= t_start - 1e-12 {
                    cols.push(self.data.column(j));
                    times.push(self.times[j]);
                }
            }
            blocks.push(SnapshotBlock {
                first_column: first,
                columns: cols.len() - first,
                y: b.y.clone(),
            });
        }
        SnapshotSet {
            data: DenseMatrix::from_columns(&cols),
            mass: Arc::clone(&self.mass),
            times,
            blocks,
            dt: self.dt,
            stride: self.stride,
            n_nodes: self.n_nodes,
        }
    }

    /// Concatenates parameter blocks column-wise, in the given order.
    pub fn concat(sets: &[SnapshotSet]) -> Result<SnapshotSet> {
        let first = sets.first().ok_or(PodError::Empty)?;
        let mut cols = Vec::new();
        let mut times = Vec::new();
        let mut blocks = Vec::new();
        for s in sets {
            if s.dim() != first.dim() || s.mass != first.mass {
                return Err(PodError::Incompatible("different grids".into()));
            }
            for b in &s.blocks {
                let start = cols.len();
                for j in b.first_column..b.first_column + b.columns {
                    cols.push(s.data.column(j));
                    times.push(s.times[j]);
                }
                blocks.push(SnapshotBlock {
                    first_column: start,
                    columns: b.columns,
                    y: b.y.clone(),
                });
            }
        }
        Ok(SnapshotSet {
            data: DenseMatrix::from_columns(&cols),
            mass: Arc::clone(&first.mass),
            times,
            blocks,
            dt: first.dt,
            stride: first.stride,
            n_nodes: first.n_nodes,
        })
    }

    fn metadata(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set_f64("dt", self.dt);
        kv.set("stride", self.stride);
        kv.set("n_nodes", self.n_nodes);
        kv.set("blocks", self.blocks.len());
        kv.set_f64("t0", self.times.first().copied().unwrap_or(0.0));
        if let [only] = &self.blocks[..] {
            kv.set_list("y", &only.y);
        }
        for (k, b) in self.blocks.iter().enumerate() {
            kv.set(format!("block.{k}.columns"), b.columns);
            kv.set_list(format!("block.{k}.y"), &b.y);
        }
        kv.set_list("times", &self.times);
        kv
    }

    /// Writes `<stem>.txt` (columns = snapshots), `<stem>.meta` and `mass.txt`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        io::write_matrix(&dir.join(format!("{stem}.txt")), &self.data)?;
        self.metadata().write(&dir.join(format!("{stem}.meta")))?;
        io::write_matrix(&dir.join("mass.txt"), &self.mass)?;
        Ok(())
    }

    /// Reads a snapshot file pair plus `mass.txt` from `dir`. Metadata keys
    /// other than `dt` are optional so externally produced snapshots load too.
    pub fn load(dir: &Path, stem: &str) -> Result<SnapshotSet> {
        let data = io::read_matrix(&dir.join(format!("{stem}.txt")))?;
        let mass = io::read_matrix(&dir.join("mass.txt"))?;
        if mass.rows() != data.rows() || !mass.is_square() {
            return Err(PodError::Dimension {
                expected: data.rows(),
                actual: mass.rows(),
            });
        }
        let meta_path = dir.join(format!("{stem}.meta"));
        let kv = KeyValues::read(&meta_path)?;
        let dt: f64 = kv.require_parsed("dt", &meta_path)?;
        let stride: usize = kv.get("stride").and_then(|s| s.parse().ok()).unwrap_or(1);
        let n_nodes: usize = kv
            .get("n_nodes")
            .and_then(|s| s.parse().ok())
            .unwrap_or(data.rows() + 2);
        let n = data.cols();
        let times = match kv.get("times") {
            Some(_) => kv.require_list("times", &meta_path)?,
            None => {
                let t0: f64 = kv.get("t0").and_then(|s| s.parse().ok()).unwrap_or(0.0);
                (0..n).map(|j| t0 + (j * stride) as f64 * dt).collect()
            }
        };
        if times.len() != n {
            return Err(PodError::Dimension {
                expected: n,
                actual: times.len(),
            });
        }
        let n_blocks: usize = kv.get("blocks").and_then(|s| s.parse().ok()).unwrap_or(1);
        let mut blocks = Vec::with_capacity(n_blocks);
        let mut first = 0;
        for k in 0..n_blocks {
            let columns = match kv.get(&format!("block.{k}.columns")) {
                Some(_) => kv.require_parsed(&format!("block.{k}.columns"), &meta_path)?,
                None => n - first,
            };
            let y = match kv.get(&format!("block.{k}.y")) {
                Some(_) => kv.require_list(&format!("block.{k}.y"), &meta_path)?,
                None if kv.get("y").is_some() => kv.require_list("y", &meta_path)?,
                None => Vec::new(),
            };
            blocks.push(SnapshotBlock {
                first_column: first,
                columns,
                y,
            });
            first += columns;
        }
        if first != n {
            return Err(PodError::Dimension {
                expected: n,
                actual: first,
            });
        }
        Ok(SnapshotSet {
            data,
            mass: Arc::new(mass),
            times,
            blocks,
            dt,
            stride,
            n_nodes,
        })
    }
}

/// Column mean and the centered fluctuation matrix.
pub fn center_snapshots(snaps: &SnapshotSet) -> Result<(DenseVector, DenseMatrix)> {
    let a = snaps.data();
    let n = a.cols();
    if n == 0 {
        return Err(PodError::Empty);
    }
    let mut mean = DenseVector::zeros(a.rows());
    for j in 0..n {
        for (m, x) in mean.iter_mut().zip(a.col(j)) {
            *m += x;
        }
    }
    let inv = 1.0 / n as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let mut fluct = a.clone();
    for j in 0..n {
        for (f, m) in fluct.col_mut(j).iter_mut().zip(mean.iter()) {
            *f -= m;
        }
    }
    Ok((mean, fluct))
}

/// Mean lifting, r M-orthonormal modes and the full Gram spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub mean: DenseVector,
    pub modes: DenseMatrix,
    pub eigenvalues: Vec<f64>,
}

impl PodBasis {
    pub fn r(&self) -> usize {
        self.modes.cols()
    }

    pub fn dim(&self) -> usize {
        self.modes.rows()
    }

    /// Fraction of the fluctuation energy captured by the retained modes.
    pub fn captured_energy(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total == 0.0 {
            return 1.0;
        }
        self.eigenvalues[..self.r()].iter().sum::<f64>() / total
    }

    /// Number of eigenvalues above `RANK_TOLERANCE * lambda_1`.
    pub fn numerical_rank(&self) -> usize {
        numerical_rank(&self.eigenvalues)
    }

    /// Keeps the first `r` modes.
    pub fn truncated(&self, r: usize) -> Result<PodBasis> {
        if r == 0 || r > self.r() {
            return Err(PodError::Rank {
                requested: r,
                max: self.r(),
            });
        }
        let modes = DenseMatrix::from_fn(self.dim(), r, |i, j| self.modes[(i, j)]);
        Ok(PodBasis {
            mean: self.mean.clone(),
            modes,
            eigenvalues: self.eigenvalues.clone(),
        })
    }

    pub fn save(&self, dir: &Path, source: &str) -> Result<()> {
        io::write_vector(&dir.join("pod_mean.txt"), &self.mean)?;
        io::write_matrix(&dir.join("pod_modes.txt"), &self.modes)?;
        io::write_vector(&dir.join("pod_eigenvalues.txt"), &self.eigenvalues)?;
        let mut kv = KeyValues::new();
        kv.set("r", self.r());
        kv.set("dim", self.dim());
        kv.set("n_eigenvalues", self.eigenvalues.len());
        kv.set("source", source);
        kv.write(&dir.join("pod.meta"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<PodBasis> {
        let meta_path = dir.join("pod.meta");
        let kv = KeyValues::read(&meta_path)?;
        let r: usize = kv.require_parsed("r", &meta_path)?;
        let mean = io::read_vector(&dir.join("pod_mean.txt"))?;
        let modes = io::read_matrix(&dir.join("pod_modes.txt"))?;
        let eigenvalues = io::read_vector(&dir.join("pod_eigenvalues.txt"))?.into_vec();
        if modes.cols() != r || modes.rows() != mean.len() {
            return Err(PodError::Dimension {
                expected: r,
                actual: modes.cols(),
            });
        }
        Ok(PodBasis {
            mean,
            modes,
            eigenvalues,
        })
    }
}

fn numerical_rank(eigenvalues: &[f64]) -> usize {
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return 0;
    }
    eigenvalues
        .iter()
        .take_while(|&&l| l >= RANK_TOLERANCE * top)
        .count()
}

/// `A^T M A` for the centered snapshots, assembled symmetric.
pub fn gram_matrix(fluct: &DenseMatrix, mass: &DenseMatrix) -> Result<DenseMatrix> {
    let ma = mass.matmul(fluct)?;
    let n = fluct.cols();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| (0..=j).map(|i| dot(fluct.col(i), ma.col(j))).collect())
        .collect();
    let mut k = DenseMatrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Builds an r-mode basis from the Gram eigenproblem of the centered snapshots.
pub fn build_pod(snaps: &SnapshotSet, r: usize) -> Result<PodBasis> {
    build(snaps, Some(r))
}

/// Builds a basis with as many modes as the numerical rank.
pub fn build_pod_full(snaps: &SnapshotSet) -> Result<PodBasis> {
    build(snaps, None)
}

fn build(snaps: &SnapshotSet, r: Option<usize>) -> Result<PodBasis> {
    let (mean, fluct) = center_snapshots(snaps)?;
    let mass = snaps.mass();
    let gram = gram_matrix(&fluct, mass)?;
    let eig = sym_eig(&gram)?;
    // roundoff can leave tiny negative values at the bottom of the spectrum
    let eigenvalues: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
    let rank = numerical_rank(&eigenvalues);
    let r = r.unwrap_or(rank);
    if r == 0 || r > rank {
        return Err(PodError::Rank { requested: r, max: rank });
    }
    let dim = fluct.rows();
    let mut modes = DenseMatrix::zeros(dim, r);
    for j in 0..r {
        let phi = fluct.matvec(eig.vectors.col(j))?;
        let inv = 1.0 / eigenvalues[j].sqrt();
        for (dst, p) in modes.col_mut(j).iter_mut().zip(phi.iter()) {
            *dst = p * inv;
        }
    }
    // Near the rank cut the Gram eigenvectors lose relative accuracy, so
    // polish M-orthonormality with two Gram-Schmidt passes.
    m_orthonormalize(&mut modes, mass)?;
    for j in 0..r {
        fix_sign(modes.col_mut(j));
    }
    Ok(PodBasis {
        mean,
        modes,
        eigenvalues,
    })
}

fn m_orthonormalize(modes: &mut DenseMatrix, mass: &DenseMatrix) -> Result<()> {
    for _pass in 0..2 {
        for j in 0..modes.cols() {
            for k in 0..j {
                let mk = mass.matvec(modes.col(k))?;
                let c = dot(modes.col(j), &mk);
                let ck = modes.col(k).to_vec();
                for (x, y) in modes.col_mut(j).iter_mut().zip(ck) {
                    *x -= c * y;
                }
            }
            let mj = mass.matvec(modes.col(j))?;
            let nrm = dot(modes.col(j), &mj).sqrt();
            modes.col_mut(j).iter_mut().for_each(|x| *x /= nrm);
        }
    }
    Ok(())
}

/// Makes the largest-magnitude entry (first on ties) positive.
fn fix_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    if col.get(best).is_some_and(|&x| x < 0.0) {
        col.iter_mut().for_each(|x| *x = -*x);
    }
}

/// `a_j = phi_j^T M (u - mean)`.
pub fn project(basis: &PodBasis, u: &[f64], mass: &DenseMatrix) -> Result<DenseVector> {
    if u.len() != basis.dim() || mass.rows() != basis.dim() {
        return Err(PodError::Dimension {
            expected: basis.dim(),
            actual: u.len(),
        });
    }
    let centered: Vec<f64> = u.iter().zip(basis.mean.iter()).map(|(a, b)| a - b).collect();
    let mc = mass.matvec(&centered)?;
    Ok(basis.modes.tr_matvec(&mc)?)
}

/// `mean + sum_j a_j phi_j`.
pub fn reconstruct(basis: &PodBasis, a: &[f64]) -> Result<DenseVector> {
    if a.len() != basis.r() {
        return Err(PodError::Dimension {
            expected: basis.r(),
            actual: a.len(),
        });
    }
    let mut u = basis.modes.matvec(a)?;
    for (x, m) in u.iter_mut().zip(basis.mean.iter()) {
        *x += m;
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::weighted_inner;

    fn set(cols: &[Vec<f64>], mass: DenseMatrix) -> SnapshotSet {
        let vs: Vec<DenseVector> = cols.iter().map(|c| DenseVector::from(c.clone())).collect();
        SnapshotSet::from_matrix(DenseMatrix::from_columns(&vs), mass)
    }

    #[test]
    fn centering() {
        let s = set(&[vec![1.0, 2.0]], DenseMatrix::identity(2));
        let (mean, f) = center_snapshots(&s).unwrap();
        assert_eq!(mean.as_slice(), &[1.0, 2.0]);
        assert!(f.as_slice().iter().all(|&x| x == 0.0));

        let s = set(&[vec![0.5, -1.0], vec![-0.5, 1.0]], DenseMatrix::identity(2));
        let (mean, f) = center_snapshots(&s).unwrap();
        assert_eq!(mean.as_slice(), &[0.0, 0.0]);
        assert_eq!(f.col(1), &[-0.5, 1.0]);

        let s = set(&[vec![1.0, 1.0], vec![3.0, 3.0]], DenseMatrix::identity(2));
        let (mean, f) = center_snapshots(&s).unwrap();
        assert_eq!(mean.as_slice(), &[2.0, 2.0]);
        assert_eq!(f.col(0), &[-1.0, -1.0]);
        assert_eq!(f.col(1), &[1.0, 1.0]);
    }

    #[test]
    fn empty_set_is_rejected() {
        let s = SnapshotSet::from_matrix(DenseMatrix::zeros(2, 0), DenseMatrix::identity(2));
        assert!(matches!(center_snapshots(&s), Err(PodError::Empty)));
    }

    #[test]
    fn rank_one_fluctuations() {
        // mean + t w for several t: fluctuations span w only
        let w = [1.0, -2.0, 0.5];
        let m = DenseMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let ts = [-1.5, -0.5, 0.5, 1.5];
        let cols: Vec<Vec<f64>> = ts.iter().map(|t| w.iter().map(|x| 3.0 + t * x).collect()).collect();
        let b = build_pod(&set(&cols, m.clone()), 1).unwrap();
        let wnorm2 = weighted_inner(&w, &w, &m).unwrap();
        let sum_t2: f64 = ts.iter().map(|t| t * t).sum();
        assert!((b.eigenvalues[0] - sum_t2 * wnorm2).abs() < 1e-12 * wnorm2);
        for (p, x) in b.modes.col(0).iter().zip(&w) {
            assert!((p.abs() - x.abs() / wnorm2.sqrt()).abs() < 1e-12);
        }
        assert!(matches!(build_pod(&set(&cols, m), 2), Err(PodError::Rank { max: 1, .. })));
    }

    #[test]
    fn orthogonal_pair_orders_by_norm() {
        // columns a, b, -a, -b have zero mean; Gram eigenvalues 2|a|^2, 2|b|^2
        let a = [2.0, 0.0, 0.0];
        let b = [0.0, 0.0, 1.0];
        let neg = |v: &[f64; 3]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let b_pod = build_pod(
            &set(&[a.to_vec(), b.to_vec(), neg(&a), neg(&b)], DenseMatrix::identity(3)),
            2,
        )
        .unwrap();
        assert!((b_pod.eigenvalues[0] - 8.0).abs() < 1e-12);
        assert!((b_pod.eigenvalues[1] - 2.0).abs() < 1e-12);
        assert!((b_pod.modes[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((b_pod.modes[(2, 1)] - 1.0).abs() < 1e-12);
        let ratio = b_pod.captured_energy();
        assert!((0.0..=1.0).contains(&ratio));
    }

    #[test]
    fn project_reconstruct_identities() {
        let cols = vec![
            vec![1.0, 0.0, 2.0, 1.0],
            vec![0.0, 1.0, 1.0, 3.0],
            vec![2.0, 2.0, 0.0, 1.0],
            vec![1.0, 3.0, 1.0, 0.0],
        ];
        let m = DenseMatrix::from_diagonal(&[1.0, 0.5, 2.0, 1.5]);
        let b = build_pod(&set(&cols, m.clone()), 2).unwrap();
        assert!(project(&b, &b.mean, &m).unwrap().norm() < 1e-14);
        let u = reconstruct(&b, &[1.0, 0.0]).unwrap();
        let a = project(&b, &u, &m).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-12 && a[1].abs() < 1e-12);
        let u = reconstruct(&b, &[2.0, -3.0]).unwrap();
        let a = project(&b, &u, &m).unwrap();
        assert!((a[0] - 2.0).abs() < 1e-12 && (a[1] + 3.0).abs() < 1e-12);
        assert_eq!(reconstruct(&b, &[0.0, 0.0]).unwrap(), b.mean);
        assert!(reconstruct(&b, &[1.0]).is_err());
        assert!(project(&b, &[1.0], &m).is_err());
    }

    #[test]
    fn persistence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cols = vec![vec![1.0, 0.3, 2.0], vec![0.1, 1.0, 1.0], vec![2.0, 0.2, 0.7]];
        let b = build_pod(&set(&cols, DenseMatrix::identity(3)), 2).unwrap();
        b.save(dir.path(), "test").unwrap();
        assert_eq!(PodBasis::load(dir.path()).unwrap(), b);
    }
}
