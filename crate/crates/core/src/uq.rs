//! Sparse-grid stochastic collocation on nested Clenshaw-Curtis rules, the two
//! random viscosity models, and a Monte Carlo cross-check.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dense::{DenseMatrix, DenseVector};
use crate::fom::SpatialFn;
use crate::io::CsvTable;

/// Finest level representable by the integer node keys.
const MAX_LEVEL: u32 = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UqError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("parameter {value} outside [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },
    #[error("viscosity {value:e} at x = {x} is not positive")]
    Positivity { x: f64, value: f64 },
    #[error("invalid sparse grid request: {0}")]
    Grid(String),
    #[error("quantity of interest failed at sample {index}: {message}")]
    Runner { index: usize, message: String },
}

pub type Result<T> = std::result::Result<T, UqError>;

fn points_at_level(level: u32) -> u64 {
    if level == 0 {
        1
    } else {
        (1u64 << level) + 1
    }
}

/// Node `-cos(pi * k / 2^p)` computed from the reduced fraction so the same
/// node gets bit-identical coordinates at every level.
fn node_from_key(key: u64) -> f64 {
    let full = 1u64 << MAX_LEVEL;
    if key == full / 2 {
        return 0.0;
    }
    if key > full / 2 {
        return -node_from_key(full - key);
    }
    if key == 0 {
        return -1.0;
    }
    let shift = key.trailing_zeros().min(MAX_LEVEL);
    let (num, den) = (key >> shift, full >> shift);
    -(PI * num as f64 / den as f64).cos()
}

/// Key of node `k` of the level-`level` rule on the finest index lattice.
fn node_key(level: u32, k: u64) -> u64 {
    if level == 0 {
        1u64 << (MAX_LEVEL - 1)
    } else {
        k << (MAX_LEVEL - level)
    }
}

/// Clenshaw-Curtis weights for the uniform density on [-1, 1] (sum to 1),
/// in ascending node order.
fn cc_weights(level: u32) -> Vec<f64> {
    let n = points_at_level(level) as usize;
    if n == 1 {
        return vec![1.0];
    }
    let big_n = n - 1;
    let mut w = vec![0.0; n];
    for (k, wk) in w.iter_mut().enumerate() {
        let theta = PI * k as f64 / big_n as f64;
        let mut s = 0.0;
        for j in 1..=big_n / 2 {
            let b = if 2 * j == big_n { 1.0 } else { 2.0 };
            s += b / (4.0 * (j * j) as f64 - 1.0) * (2.0 * j as f64 * theta).cos();
        }
        let c = if k == 0 || k == big_n { 1.0 } else { 2.0 };
        // classic weights sum to 2 on [-1, 1]; halve for the density 1/2
        *wk = 0.5 * c / big_n as f64 * (1.0 - s);
    }
    // enforce exact mirror symmetry
    for k in 0..n / 2 {
        let avg = 0.5 * (w[k] + w[n - 1 - k]);
        w[k] = avg;
        w[n - 1 - k] = avg;
    }
    w
}

/// One-dimensional nested Clenshaw-Curtis rule: 1 node at level 0, otherwise
/// `2^level + 1` Chebyshev extrema, ascending.
pub fn cc_rule(level: u32) -> (Vec<f64>, Vec<f64>) {
    assert!(level <= MAX_LEVEL, "level {level} exceeds {MAX_LEVEL}");
    let n = points_at_level(level);
    let nodes = (0..n).map(|k| node_from_key(node_key(level, k))).collect();
    (nodes, cc_weights(level))
}

/// Collocation nodes (columns of a `dim x n` matrix in the reference cube
/// [-1, 1]^dim) with probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrid {
    pub dim: usize,
    pub level: u32,
    pub points: DenseMatrix,
    pub weights: DenseVector,
}

impl SparseGrid {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        self.points.col(j)
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Index of `y` among the nodes (coordinates equal to 1e-12), if present.
    pub fn find(&self, y: &[f64]) -> Option<usize> {
        (0..self.len()).find(|&j| {
            self.point(j)
                .iter()
                .zip(y)
                .all(|(a, b)| (a - b).abs() <= 1e-12)
        })
    }

    /// `index,y_1..y_d,weight`
    pub fn to_csv(&self) -> CsvTable {
        let mut header = vec!["index".to_string()];
        header.extend((1..=self.dim).map(|i| format!("y_{i}")));
        header.push("weight".into());
        let mut csv = CsvTable::new(&header);
        for j in 0..self.len() {
            let mut row = self.point(j).to_vec();
            row.push(self.weights[j]);
            csv.push_row(&[j.to_string()], &row);
        }
        csv
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All multi-indices of length `dim` with entries summing to exactly `total`.
fn compositions(dim: usize, total: u32, out: &mut Vec<Vec<u32>>) {
    fn rec(prefix: &mut Vec<u32>, left: usize, total: u32, out: &mut Vec<Vec<u32>>) {
        if left == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for v in 0..=total {
            prefix.push(v);
            rec(prefix, left - 1, total - v, out);
            prefix.pop();
        }
    }
    rec(&mut Vec::with_capacity(dim), dim, total, out);
}

/// Smolyak combination of the nested rules with total-level selection
/// `sum(l_i) <= level`; coincident nodes are merged and their weights summed.
pub fn smolyak_grid(dim: usize, level: u32) -> Result<SparseGrid> {
    if dim == 0 {
        return Err(UqError::Grid("dimension must be at least 1".into()));
    }
    if level > MAX_LEVEL {
        return Err(UqError::Grid(format!("level {level} exceeds {MAX_LEVEL}")));
    }
    let rules: Vec<Vec<f64>> = (0..=level).map(cc_weights).collect();
    let mut merged: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    let lowest = (level as i64 - dim as i64 + 1).max(0) as u32;
    for total in lowest..=level {
        let q = (level - total) as usize;
        let coeff = if q.is_multiple_of(2) { 1.0 } else { -1.0 } * binomial(dim - 1, q);
        let mut indices = Vec::new();
        compositions(dim, total, &mut indices);
        for multi in indices {
            let sizes: Vec<usize> = multi.iter().map(|&l| points_at_level(l) as usize).collect();
            let mut counter = vec![0usize; dim];
            loop {
                let key: Vec<u64> = multi
                    .iter()
                    .zip(&counter)
                    .map(|(&l, &k)| node_key(l, k as u64))
                    .collect();
                let w: f64 = multi
                    .iter()
                    .zip(&counter)
                    .map(|(&l, &k)| rules[l as usize][k])
                    .product();
                *merged.entry(key).or_insert(0.0) += coeff * w;
                // odometer over the tensor rule
                let mut axis = 0;
                loop {
                    if axis == dim {
                        break;
                    }
                    counter[axis] += 1;
                    if counter[axis] < sizes[axis] {
                        break;
                    }
                    counter[axis] = 0;
                    axis += 1;
                }
                if axis == dim {
                    break;
                }
            }
        }
    }
    let n = merged.len();
    let mut points = DenseMatrix::zeros(dim, n);
    let mut weights = DenseVector::zeros(n);
    for (j, (key, w)) in merged.into_iter().enumerate() {
        for (i, &k) in key.iter().enumerate() {
            points[(i, j)] = node_from_key(k);
        }
        weights[j] = w;
    }
    Ok(SparseGrid {
        dim,
        level,
        points,
        weights,
    })
}

/// `sum_j w_j psi(y_j)`, accumulated in node order.
pub fn expectation(values: &[f64], grid: &SparseGrid) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(UqError::Dimension {
            expected: grid.len(),
            actual: values.len(),
        });
    }
    Ok(values.iter().zip(grid.weights.iter()).map(|(v, w)| v * w).sum())
}

/// Reference value of the constant-viscosity model.
pub const DEFAULT_NU0: f64 = 8e-4;

/// Random viscosity, affine in the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RandomViscosityModel {
    /// `nu_0 (1 + y / 10)`, `y` in [-1, 1].
    Constant1d { nu0: f64 },
    /// Truncated Karhunen-Loeve field with `2q + 1` variables in
    /// [-sqrt 3, sqrt 3], traced along the diagonal of the 2.2 x 0.41 box.
    Kl { c: f64, correlation_length: f64, q: usize },
}

impl RandomViscosityModel {
    pub fn constant1d() -> Self {
        Self::Constant1d { nu0: DEFAULT_NU0 }
    }

    /// `c = 1`, `l = 0.01`, `q = 2`: five random variables.
    pub fn kl5d() -> Self {
        Self::Kl {
            c: 1.0,
            correlation_length: 0.01,
            q: 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant1d { .. } => "constant1d",
            Self::Kl { .. } => "kl5d",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Constant1d { .. } => 1,
            Self::Kl { q, .. } => 2 * q + 1,
        }
    }

    /// Half-width of the (symmetric) parameter box.
    pub fn half_width(&self) -> f64 {
        match self {
            Self::Constant1d { .. } => 1.0,
            Self::Kl { .. } => 3f64.sqrt(),
        }
    }

    /// Maps a reference-cube node to the parameter box.
    pub fn map_reference(&self, y_ref: &[f64]) -> Vec<f64> {
        let s = self.half_width();
        if s == 1.0 {
            y_ref.to_vec()
        } else {
            y_ref.iter().map(|y| s * y).collect()
        }
    }

    fn check_range(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(UqError::Dimension {
                expected: self.dim(),
                actual: y.len(),
            });
        }
        let hw = self.half_width();
        for &v in y {
            if !(v.abs() <= hw * (1.0 + 1e-12)) {
                return Err(UqError::Range {
                    value: v,
                    lo: -hw,
                    hi: hw,
                });
            }
        }
        Ok(())
    }

    /// `nu(x, y)` on the unit interval.
    pub fn viscosity(&self, x: f64, y: &[f64]) -> Result<f64> {
        self.check_range(y)?;
        let value = match *self {
            Self::Constant1d { nu0 } => viscosity_constant1d_with(nu0, y[0]),
            Self::Kl {
                c,
                correlation_length,
                q,
            } => kl_field(c, correlation_length, q, 2.2 * x, 0.41 * x, y),
        };
        if value > 0.0 {
            Ok(value)
        } else {
            Err(UqError::Positivity { x, value })
        }
    }

    /// `(nu_0(x), nu_1(x), .., nu_d(x))` with `nu(x, y) = nu_0 + sum nu_l y_l`.
    pub fn affine_components(&self) -> Vec<SpatialFn> {
        match *self {
            Self::Constant1d { nu0 } => vec![Arc::new(move |_| nu0), Arc::new(move |_| nu0 / 10.0)],
            Self::Kl {
                c,
                correlation_length,
                q,
            } => {
                let mut comps: Vec<SpatialFn> = Vec::with_capacity(2 * q + 2);
                comps.push(Arc::new(move |_| c / 1000.0));
                let lead = (PI.sqrt() * correlation_length / 2.0).sqrt() / 1000.0;
                comps.push(Arc::new(move |_| lead));
                for j in 1..=q {
                    let amp = kl_sqrt_eigenvalue(correlation_length, j) / 1000.0;
                    let jf = j as f64;
                    comps.push(Arc::new(move |x| {
                        amp * (jf * PI * x).sin() * (jf * PI * x).sin()
                    }));
                    comps.push(Arc::new(move |x| {
                        amp * (jf * PI * x).cos() * (jf * PI * x).cos()
                    }));
                }
                comps
            }
        }
    }

    /// Checks positivity at every online node and at every element midpoint.
    pub fn check_positive(&self, grid: &SparseGrid, n_nodes: usize) -> Result<()> {
        for j in 0..grid.len() {
            let y = self.map_reference(grid.point(j));
            for e in 0..n_nodes.saturating_sub(1) {
                let x = (e as f64 + 0.5) / (n_nodes - 1) as f64;
                self.viscosity(x, &y)?;
            }
        }
        Ok(())
    }
}

fn viscosity_constant1d_with(nu0: f64, y: f64) -> f64 {
    nu0 * (1.0 + y / 10.0)
}

/// Constant random viscosity `nu_0 (1 + y/10)` with `nu_0 = 8e-4`.
pub fn viscosity_constant1d(y: f64) -> Result<f64> {
    RandomViscosityModel::constant1d().viscosity(0.0, &[y])
}

/// `sqrt(xi_j) = (sqrt(pi) l)^(1/2) exp(-(j pi l)^2 / 8)`
pub fn kl_sqrt_eigenvalue(correlation_length: f64, j: usize) -> f64 {
    let l = correlation_length;
    (PI.sqrt() * l).sqrt() * (-(j as f64 * PI * l).powi(2) / 8.0).exp()
}

/// The truncated KL field at a point of the 2.2 x 0.41 box.
fn kl_field(c: f64, l: f64, q: usize, x1: f64, x2: f64, y: &[f64]) -> f64 {
    let mut s = c + (PI.sqrt() * l / 2.0).sqrt() * y[0];
    for j in 1..=q {
        let jf = j as f64;
        let a1 = jf * PI * x1 / 2.2;
        let a2 = jf * PI * x2 / 0.41;
        s += kl_sqrt_eigenvalue(l, j)
            * (a1.sin() * a2.sin() * y[2 * j - 1] + a1.cos() * a2.cos() * y[2 * j]);
    }
    s / 1000.0
}

/// Five-variable KL viscosity at a point `(x1, x2)` of the channel box.
pub fn viscosity_kl5d_box(x1: f64, x2: f64, y: &[f64]) -> Result<f64> {
    let model = RandomViscosityModel::kl5d();
    model.check_range(y)?;
    let v = kl_field(1.0, 0.01, 2, x1, x2, y);
    if v > 0.0 {
        Ok(v)
    } else {
        Err(UqError::Positivity { x: x1, value: v })
    }
}

/// Five-variable KL viscosity on the unit interval (`x1 = 2.2 x`, `x2 = 0.41 x`).
pub fn viscosity_kl5d(x: f64, y: &[f64]) -> Result<f64> {
    RandomViscosityModel::kl5d().viscosity(x, y)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Plain Monte Carlo over uniform samples of the model's parameter box. The
/// runner sees physical parameters; results are reduced in sample order.
pub fn mc_oracle<F>(
    model: &RandomViscosityModel,
    qoi_runner: F,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> std::result::Result<f64, String> + Sync,
{
    if n_samples == 0 {
        return Err(UqError::Grid("Monte Carlo needs at least one sample".into()));
    }
    let dim = model.dim();
    let hw = model.half_width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| (0..dim).map(|_| rng.random_range(-hw..=hw)).collect())
        .collect();
    let values: Vec<f64> = samples
        .par_iter()
        .enumerate()
        .map(|(index, y)| qoi_runner(y).map_err(|message| UqError::Runner { index, message }))
        .collect::<Result<_>>()?;
    let n = n_samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if n_samples > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        samples: n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{solve_general, DenseMatrix};

    /// Weights from exactness on 1, y, .., y^(n-1) for the uniform density.
    fn moment_weights(nodes: &[f64]) -> Vec<f64> {
        let n = nodes.len();
        let v = DenseMatrix::from_fn(n, n, |p, k| nodes[k].powi(p as i32));
        let rhs = DenseVector::from_fn(n, |p| if p % 2 == 0 { 1.0 / (p as f64 + 1.0) } else { 0.0 });
        solve_general(&v, &rhs).unwrap().into_vec()
    }

    fn uniform_moment(p: u32, half_width: f64) -> f64 {
        if p % 2 == 1 {
            0.0
        } else {
            half_width.powi(p as i32) / (p as f64 + 1.0)
        }
    }

    #[test]
    fn low_level_rules() {
        assert_eq!(cc_rule(0), (vec![0.0], vec![1.0]));
        let (x, w) = cc_rule(1);
        assert_eq!(x, vec![-1.0, 0.0, 1.0]);
        let want = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(cc_rule(3).0.len(), 9);
        assert_eq!(cc_rule(6).0.len(), 65);
    }

    #[test]
    fn weights_match_moment_fit() {
        for level in 1..=4 {
            let (x, w) = cc_rule(level);
            let fit = moment_weights(&x);
            for (a, b) in w.iter().zip(&fit) {
                // the monomial Vandermonde loses about 4 digits by level 4
                assert!((a - b).abs() < 1e-10, "level {level}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn one_dimensional_smolyak_is_the_rule() {
        for level in 0..5 {
            let g = smolyak_grid(1, level).unwrap();
            let (x, w) = cc_rule(level);
            assert_eq!(g.points.as_slice(), x.as_slice());
            for (a, b) in g.weights.iter().zip(&w) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn default_grid_sizes() {
        assert_eq!(smolyak_grid(1, 3).unwrap().len(), 9);
        assert_eq!(smolyak_grid(1, 6).unwrap().len(), 65);
        assert_eq!(smolyak_grid(5, 1).unwrap().len(), 11);
        assert_eq!(smolyak_grid(5, 4).unwrap().len(), 801);
    }

    #[test]
    fn nested_and_normalized() {
        for d in [1, 2, 5] {
            for l in 0..3 {
                let coarse = smolyak_grid(d, l).unwrap();
                let fine = smolyak_grid(d, l + 1).unwrap();
                assert!((coarse.weight_sum() - 1.0).abs() < 1e-12);
                assert!((fine.weight_sum() - 1.0).abs() < 1e-12);
                for j in 0..coarse.len() {
                    assert!(fine.find(coarse.point(j)).is_some(), "d={d} l={l} node {j}");
                }
                assert!(coarse.points.as_slice().iter().all(|v| v.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn monomial_exactness() {
        // total-level selection integrates total degree 2 * level + 1 exactly
        for d in 1..=5usize {
            for l in 1..=3u32 {
                let g = smolyak_grid(d, l).unwrap();
                let max_deg = 2 * l + 1;
                let base = max_deg as usize + 1;
                for code in 0..base.pow(d as u32) {
                    let mut c = code;
                    let exps: Vec<u32> = (0..d)
                        .map(|_| {
                            let e = (c % base) as u32;
                            c /= base;
                            e
                        })
                        .collect();
                    if exps.iter().sum::<u32>() > max_deg {
                        continue;
                    }
                    let vals: Vec<f64> = (0..g.len())
                        .map(|j| g.point(j).iter().zip(&exps).map(|(y, &e)| y.powi(e as i32)).product())
                        .collect();
                    let want: f64 = exps.iter().map(|&e| uniform_moment(e, 1.0)).product();
                    let got = expectation(&vals, &g).unwrap();
                    assert!((got - want).abs() < 1e-12, "d={d} l={l} {exps:?}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn simple_moments() {
        let g = smolyak_grid(1, 2).unwrap();
        let ones = vec![1.0; g.len()];
        assert!((expectation(&ones, &g).unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = (0..g.len()).map(|j| g.point(j)[0]).collect();
        assert!(expectation(&y, &g).unwrap().abs() < 1e-15);
        let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
        assert!((expectation(&y2, &g).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(expectation(&[1.0], &g), Err(UqError::Dimension { .. })));
    }

    #[test]
    fn constant_viscosity_values() {
        assert!((viscosity_constant1d(0.0).unwrap() - 8.0e-4).abs() < 1e-19);
        assert!((viscosity_constant1d(1.0).unwrap() - 8.8e-4).abs() < 1e-18);
        assert!((viscosity_constant1d(-1.0).unwrap() - 7.2e-4).abs() < 1e-18);
        assert!(matches!(viscosity_constant1d(1.5), Err(UqError::Range { .. })));
    }

    #[test]
    fn kl_values() {
        assert!((viscosity_kl5d(0.3, &[0.0; 5]).unwrap() - 1.0e-3).abs() < 1e-18);
        let direct = (PI.sqrt() * 0.01f64).sqrt() * (-(PI * 0.01f64).powi(2) / 8.0).exp();
        assert!((kl_sqrt_eigenvalue(0.01, 1) - direct).abs() < 1e-16);
        assert!((kl_sqrt_eigenvalue(0.01, 1) - 0.13311).abs() < 1e-5);
        assert!(viscosity_kl5d(0.3, &[2.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(viscosity_kl5d_box(1.0, 0.2, &[1.7; 5]).unwrap() > 0.0);
    }

    #[test]
    fn kl_mean_over_grid_is_offset() {
        let model = RandomViscosityModel::kl5d();
        let g = smolyak_grid(5, 2).unwrap();
        for x in [0.1, 0.37, 0.8] {
            let vals: Vec<f64> = (0..g.len())
                .map(|j| model.viscosity(x, &model.map_reference(g.point(j))).unwrap())
                .collect();
            assert!((expectation(&vals, &g).unwrap() - 1e-3).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_reassembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for model in [RandomViscosityModel::constant1d(), RandomViscosityModel::kl5d()] {
            let comps = model.affine_components();
            assert_eq!(comps.len(), model.dim() + 1);
            let hw = model.half_width();
            for _ in 0..100 {
                let x: f64 = rng.random_range(0.0..1.0);
                let y: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-hw..hw)).collect();
                let direct = model.viscosity(x, &y).unwrap();
                let affine = comps[0](x) + comps[1..].iter().zip(&y).map(|(f, yl)| f(x) * yl).sum::<f64>();
                assert!((direct - affine).abs() <= 1e-14 * direct, "{direct} vs {affine}");
            }
        }
        let c = RandomViscosityModel::constant1d().affine_components();
        assert_eq!((c[0](0.5), c[1](0.5)), (8e-4, 8e-5));
    }

    #[test]
    fn positivity_on_default_grids() {
        RandomViscosityModel::constant1d()
            .check_positive(&smolyak_grid(1, 6).unwrap(), 65)
            .unwrap();
        RandomViscosityModel::kl5d()
            .check_positive(&smolyak_grid(5, 4).unwrap(), 65)
            .unwrap();
    }

    #[test]
    fn monte_carlo_basics() {
        let model = RandomViscosityModel::constant1d();
        let c = mc_oracle(&model, |_| Ok(2.5), 100, 9).unwrap();
        assert_eq!(c.mean, 2.5);
        let n = 20_000;
        let lin = mc_oracle(&model, |y| Ok(y[0]), n, 9).unwrap();
        assert!(lin.mean.abs() <= 4.0 / (n as f64).sqrt());
        let again = mc_oracle(&model, |y| Ok(y[0]), n, 9).unwrap();
        assert_eq!(lin, again);
        assert!(mc_oracle(&model, |_| Err("boom".into()), 3, 1).is_err());
    }

    #[test]
    fn monte_carlo_agrees_with_quadrature() {
        let model = RandomViscosityModel::kl5d();
        let psi = |y: &[f64]| 1.0 + y[0] * y[1] + 0.3 * y[2] * y[2] - 0.1 * y[4];
        let g = smolyak_grid(5, 2).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|j| psi(&model.map_reference(g.point(j)))).collect();
        let scm = expectation(&vals, &g).unwrap();
        assert!((scm - 1.3).abs() < 1e-12);
        let mc = mc_oracle(&model, |y| Ok(psi(y)), 50_000, 17).unwrap();
        assert!((mc.mean - scm).abs() <= 3.0 * mc.std_error);
    }

    #[test]
    fn grid_csv_layout() {
        let g = smolyak_grid(2, 1).unwrap();
        let csv = g.to_csv();
        let mut lines = csv.as_str().lines();
        assert_eq!(lines.next(), Some("index,y_1,y_2,weight"));
        assert_eq!(csv.as_str().lines().count(), g.len() + 1);
    }
}
