use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::dense::{DenseMatrix, DenseVector};
use crate::fom::{assemble_fom, step_count, step_initial_condition, FomGrid, FomIntegrator, FomMatrices, FomOptions};
use crate::io::{self, KeyValues};
use crate::pod::{build_pod, build_pod_full, PodBasis, SnapshotSet};
use crate::rom::{build_rom_operators, BurgersConvection, RomOperators};
use crate::uq::SparseGrid;

use super::config::{ModeCount, PipelineConfig};
use super::{PipelineError, Result};

/// What one full-order training trajectory leaves behind.
pub(crate) struct TrainingRun {
    pub snapshots: SnapshotSet,
    /// State at the ROM start time.
    pub start_state: DenseVector,
}

/// Location of the offline artifacts and typed loaders for them.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(out_dir: &Path) -> Self {
        Self {
            dir: out_dir.join("offline"),
        }
    }

    fn require(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::Artifact {
                path: p,
                message: "not found; run `offline` first".into(),
            })
        }
    }

    pub fn basis(&self) -> Result<PodBasis> {
        self.require("pod.meta")?;
        Ok(PodBasis::load(&self.dir)?)
    }

    pub fn operators(&self) -> Result<RomOperators> {
        self.require("rom.meta")?;
        Ok(RomOperators::load(&self.dir)?)
    }

    pub fn mass(&self) -> Result<DenseMatrix> {
        Ok(io::read_matrix(&self.require("mass.txt")?)?)
    }

    pub fn snapshots(&self) -> Result<SnapshotSet> {
        self.require("snapshots.meta")?;
        Ok(SnapshotSet::load(&self.dir, "snapshots")?)
    }

    /// Training parameters (physical) and their states at the ROM start time.
    pub fn start_states(&self) -> Result<(f64, Vec<Vec<f64>>, DenseMatrix)> {
        let meta = self.require("start_states.meta")?;
        let kv = KeyValues::read(&meta)?;
        let t: f64 = kv.require_parsed("t_start", &meta)?;
        let n: usize = kv.require_parsed("nodes", &meta)?;
        let ys = (0..n)
            .map(|k| kv.require_list(&format!("node.{k}.y"), &meta))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let states = io::read_matrix(&self.require("start_states.txt")?)?;
        if states.cols() != n {
            return Err(PipelineError::Artifact {
                path: meta,
                message: format!("{n} nodes listed, {} state columns", states.cols()),
            });
        }
        Ok((t, ys, states))
    }

    /// The configuration the artifacts were built with.
    pub fn config(&self) -> Result<PipelineConfig> {
        let kv = KeyValues::read(&self.require("config.txt")?)?;
        PipelineConfig::from_key_values(&kv)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSummary {
    pub training_nodes: usize,
    pub snapshots: usize,
    pub r: usize,
    pub numerical_rank: usize,
    pub captured_energy: f64,
    pub leading_eigenvalues: Vec<f64>,
    pub fom_seconds: f64,
    pub pod_seconds: f64,
    pub operator_seconds: f64,
}

pub(crate) fn fom_setup(cfg: &PipelineConfig) -> Result<FomMatrices> {
    let grid = FomGrid::new(cfg.n_nodes)?;
    Ok(assemble_fom(grid, &cfg.model().affine_components()))
}

/// Runs the full-order model from the step initial condition, keeping every
/// `stride`-th state with `t >= snapshot_start` and the state at `rom_start`.
pub(crate) fn training_run(cfg: &PipelineConfig, fom: &FomMatrices, y: &[f64]) -> Result<TrainingRun> {
    let opts = FomOptions::default();
    let initial = step_initial_condition(&fom.grid);
    let steps = step_count(0.0, cfg.t_final, cfg.dt)?;
    let k_start = step_count(0.0, cfg.rom_start(), cfg.dt)?;
    let k_window = (cfg.snapshot_start / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let mut integ = FomIntegrator::new(initial.clone(), fom, y, cfg.dt, &opts)?;
    let mut columns = Vec::new();
    let mut times = Vec::new();
    let mut start_state = (k_start == 0).then(|| initial.u.clone());
    if k_window == 0 {
        columns.push(initial.u.clone());
        times.push(0.0);
    }
    for k in 1..=steps {
        let s = integ.step()?;
        if k >= k_window && k % cfg.stride == 0 {
            columns.push(s.u.clone());
            times.push(s.t);
        }
        if k == k_start {
            start_state = Some(s.u.clone());
        }
    }
    if columns.is_empty() {
        return Err(PipelineError::Config(
            "the snapshot window holds no snapshots; lower fom.stride".into(),
        ));
    }
    Ok(TrainingRun {
        snapshots: SnapshotSet::single_block(
            DenseMatrix::from_columns(&columns),
            std::sync::Arc::new(fom.mass.clone()),
            times,
            y.to_vec(),
            cfg.dt,
            cfg.stride,
            cfg.n_nodes,
        ),
        start_state: start_state.expect("ROM start inside [0, t_final]"),
    })
}

pub(crate) fn physical_nodes(cfg: &PipelineConfig, grid: &SparseGrid) -> Vec<Vec<f64>> {
    let model = cfg.model();
    (0..grid.len()).map(|j| model.map_reference(grid.point(j))).collect()
}

/// Snapshots at the training nodes, then POD and reduced operators; every
/// artifact goes to `<out>/offline`.
pub fn offline(cfg: &PipelineConfig) -> Result<OfflineSummary> {
    cfg.validate()?;
    let model = cfg.model();
    let train = cfg.training_grid()?;
    model.check_positive(&train, cfg.n_nodes)?;
    model.check_positive(&cfg.online_grid()?, cfg.n_nodes)?;
    let fom = fom_setup(cfg)?;
    let nodes = physical_nodes(cfg, &train);

    let clock = Instant::now();
    let runs: Vec<TrainingRun> = nodes
        .par_iter()
        .enumerate()
        .map(|(j, y)| training_run(cfg, &fom, y).map_err(|e| PipelineError::at_node(j, e)))
        .collect::<Result<_>>()?;
    let fom_seconds = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let sets: Vec<SnapshotSet> = runs.iter().map(|r| r.snapshots.clone()).collect();
    let snaps = SnapshotSet::concat(&sets)?;
    let basis = match cfg.modes {
        ModeCount::Fixed(r) => build_pod(&snaps, r)?,
        ModeCount::Full => build_pod_full(&snaps)?,
    };
    let pod_seconds = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let conv = BurgersConvection {
        grid: fom.grid,
    };
    let ops = build_rom_operators(&basis, &fom, &conv)?;
    let operator_seconds = clock.elapsed().as_secs_f64();

    let art = Artifacts::new(&cfg.out_dir);
    std::fs::create_dir_all(&art.dir).map_err(|source| io::FormatError::Io {
        path: art.dir.clone(),
        source,
    })?;
    cfg.to_key_values().write(&art.dir.join("config.txt"))?;
    train.to_csv().write(&art.dir.join("training_grid.csv"))?;
    snaps.save(&art.dir, "snapshots")?;
    basis.save(&art.dir, &format!("{} training nodes, level {}", train.len(), train.level))?;
    ops.save(&art.dir)?;

    let states: Vec<DenseVector> = runs.iter().map(|r| r.start_state.clone()).collect();
    io::write_matrix(&art.dir.join("start_states.txt"), &DenseMatrix::from_columns(&states))?;
    let mut kv = KeyValues::new();
    kv.set_f64("t_start", cfg.rom_start());
    kv.set("nodes", nodes.len());
    for (k, y) in nodes.iter().enumerate() {
        kv.set_list(format!("node.{k}.y"), y);
    }
    kv.write(&art.dir.join("start_states.meta"))?;

    let summary = OfflineSummary {
        training_nodes: train.len(),
        snapshots: snaps.n_snapshots(),
        r: basis.r(),
        numerical_rank: basis.numerical_rank(),
        captured_energy: basis.captured_energy(),
        leading_eigenvalues: basis.eigenvalues.iter().take(8).copied().collect(),
        fom_seconds,
        pod_seconds,
        operator_seconds,
    };
    let mut kv = KeyValues::new();
    kv.set("training_nodes", summary.training_nodes);
    kv.set("snapshots", summary.snapshots);
    kv.set("r", summary.r);
    kv.set("numerical_rank", summary.numerical_rank);
    kv.set_f64("captured_energy", summary.captured_energy);
    kv.set_list("leading_eigenvalues", &summary.leading_eigenvalues);
    kv.write(&art.dir.join("offline.meta"))?;
    Ok(summary)
}
