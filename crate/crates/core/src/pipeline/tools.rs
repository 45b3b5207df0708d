use std::path::PathBuf;

use rayon::prelude::*;

use crate::fom::{energy_qoi, fom_run, step_count, step_initial_condition, FomIntegrator, FomOptions, FomState};
use crate::io::{CsvTable, KeyValues};
use crate::rom::{generalized_eigenvalues, FilterKind, FilterSpec};
use crate::uq::{expectation, mc_oracle, McEstimate};

use super::config::PipelineConfig;
use super::offline::{fom_setup, physical_nodes, Artifacts};
use super::{PipelineError, Result};

/// One full-order trajectory at `fom.y` (zeros by default), written to
/// `<out>/fom`: all snapshots, their metadata, the mass matrix and `energy.csv`.
pub fn run_fom(cfg: &PipelineConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let model = cfg.model();
    let y = cfg.fom_y.clone().unwrap_or_else(|| vec![0.0; model.dim()]);
    for e in 0..cfg.n_nodes - 1 {
        model.viscosity((e as f64 + 0.5) / (cfg.n_nodes - 1) as f64, &y)?;
    }
    let fom = fom_setup(cfg)?;
    let initial = step_initial_condition(&fom.grid);
    let snaps = fom_run(&initial, &fom, &y, cfg.dt, cfg.t_final, cfg.stride, &FomOptions::default())?;
    let dir = cfg.out_dir.join("fom");
    snaps.save(&dir, "snapshots")?;
    let mut csv = CsvTable::new(&["t".to_string(), "energy".to_string()]);
    for (j, t) in snaps.times().iter().enumerate() {
        let u = FomState::new(snaps.data().column(j), *t);
        csv.push_row(&[], &[*t, energy_qoi(&u, &fom.mass)?]);
    }
    csv.write(&dir.join("energy.csv"))?;
    Ok(dir)
}

/// Transfer factors of every configured filter on the generalized
/// eigenvalues of the reduced (unit) stiffness, ascending in `mu`. Written to
/// `<out>/analysis/filter_transfer.csv`; returns the table.
pub fn analyze_filter(cfg: &PipelineConfig) -> Result<CsvTable> {
    cfg.validate()?;
    let ops = Artifacts::new(&cfg.out_dir).operators()?;
    let mut mu = generalized_eigenvalues(&ops.filter_stiffness, &ops.mass)?;
    mu.reverse();
    let specs: Vec<FilterSpec> = cfg
        .variants()
        .into_iter()
        .filter(|s| s.kind != FilterKind::None)
        .collect();
    let mut header = vec!["mu".to_string()];
    header.extend(specs.iter().map(FilterSpec::label));
    let mut csv = CsvTable::new(&header);
    let mut row = Vec::with_capacity(header.len());
    for &m in &mu {
        row.clear();
        row.push(m);
        row.extend(specs.iter().map(|s| s.transfer(m)));
        csv.push_row(&[], &row);
    }
    csv.write(&cfg.out_dir.join("analysis").join("filter_transfer.csv"))?;
    Ok(csv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McReport {
    pub time: f64,
    pub monte_carlo: McEstimate,
    /// Sparse-grid expectation of the same QOI on the online grid.
    pub collocation: f64,
}

impl McReport {
    /// Distance between the two estimates in Monte Carlo standard errors.
    pub fn z_score(&self) -> f64 {
        (self.monte_carlo.mean - self.collocation).abs() / self.monte_carlo.std_error
    }
}

/// Monte Carlo versus collocation for the full-order energy at `t_final`.
pub fn mc_check(cfg: &PipelineConfig, samples: usize, seed: u64) -> Result<McReport> {
    cfg.validate()?;
    let model = cfg.model();
    let fom = fom_setup(cfg)?;
    let initial = step_initial_condition(&fom.grid);
    let opts = FomOptions::default();
    let steps = step_count(0.0, cfg.t_final, cfg.dt)?;
    let final_energy = |y: &[f64]| -> Result<f64> {
        let mut integ = FomIntegrator::new(initial.clone(), &fom, y, cfg.dt, &opts)?;
        for _ in 0..steps {
            integ.step()?;
        }
        Ok(energy_qoi(integ.state(), &fom.mass)?)
    };
    let monte_carlo = mc_oracle(&model, |y| final_energy(y).map_err(|e| e.to_string()), samples, seed)?;
    let grid = cfg.online_grid()?;
    let values: Vec<f64> = physical_nodes(cfg, &grid)
        .par_iter()
        .enumerate()
        .map(|(j, y)| final_energy(y).map_err(|e| PipelineError::at_node(j, e)))
        .collect::<Result<_>>()?;
    let report = McReport {
        time: cfg.t_final,
        monte_carlo,
        collocation: expectation(&values, &grid)?,
    };
    let mut kv = KeyValues::new();
    kv.set_f64("time", report.time);
    kv.set("samples", samples);
    kv.set("seed", seed);
    kv.set_f64("mc_mean", report.monte_carlo.mean);
    kv.set_f64("mc_std_error", report.monte_carlo.std_error);
    kv.set_f64("scm_expectation", report.collocation);
    kv.set("scm_nodes", grid.len());
    kv.write(&cfg.out_dir.join("mc").join("mc_oracle.txt"))?;
    Ok(report)
}
