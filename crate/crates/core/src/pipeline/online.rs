use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::dense::DenseVector;
use crate::fom::{energy_qoi, step_count, step_initial_condition, FomIntegrator, FomMatrices, FomOptions};
use crate::io::{self, CsvTable, KeyValues};
use crate::pod::project;
use crate::rom::{efr_run, EfrConfig, FilterKind, FilterSpec};
use crate::uq::{expectation, SparseGrid};

use super::config::{NodeFiles, PipelineConfig};
use super::offline::{fom_setup, physical_nodes, Artifacts};
use super::{PipelineError, Result};

/// Expected QOI per time level.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ExpectationSeries {
    fn from_nodes(times: Vec<f64>, per_node: &[Vec<f64>], grid: &SparseGrid) -> Result<Self> {
        let mut values = Vec::with_capacity(times.len());
        let mut column = vec![0.0; per_node.len()];
        for k in 0..times.len() {
            for (c, node) in column.iter_mut().zip(per_node) {
                *c = node[k];
            }
            values.push(expectation(&column, grid)?);
        }
        Ok(Self { times, values })
    }

    /// Mean of `|E - E_ref| / |E_ref|` over levels `1..=steps`.
    pub fn mean_relative_error(&self, reference: &ExpectationSeries, steps: usize) -> f64 {
        let steps = steps.min(self.values.len().saturating_sub(1));
        if steps == 0 {
            return 0.0;
        }
        (1..=steps)
            .map(|k| (self.values[k] - reference.values[k]).abs() / reference.values[k].abs())
            .sum::<f64>()
            / steps as f64
    }

    /// Largest pointwise relative error over the first `steps` steps.
    pub fn max_relative_error(&self, reference: &ExpectationSeries, steps: usize) -> f64 {
        let steps = steps.min(self.values.len().saturating_sub(1));
        (1..=steps)
            .map(|k| (self.values[k] - reference.values[k]).abs() / reference.values[k].abs())
            .fold(0.0, f64::max)
    }
}

/// Time-averaged relative expected-energy error of one variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantError {
    pub spec: FilterSpec,
    /// ROM start to the end of the snapshot window.
    pub window: f64,
    /// ROM start to the extended horizon.
    pub extended: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineReport {
    pub grid: SparseGrid,
    pub variants: Vec<FilterSpec>,
    /// `None` for variants that lost a node in permissive mode.
    pub series: Vec<Option<ExpectationSeries>>,
    pub fom: Option<ExpectationSeries>,
    pub errors: Vec<VariantError>,
    /// `(variant label, node index, message)`
    pub failures: Vec<(String, usize, String)>,
    pub reused_states: usize,
    pub start_state_seconds: f64,
    pub rom_seconds: f64,
    pub reference_seconds: f64,
}

impl OnlineReport {
    pub fn error_of(&self, spec: &FilterSpec) -> Option<&VariantError> {
        self.errors.iter().find(|e| e.spec == *spec)
    }

    pub fn grom_error(&self) -> Option<&VariantError> {
        self.error_of(&FilterSpec::NONE)
    }

    /// Smallest in-window error among variants whose kind passes `keep`.
    pub fn best(&self, keep: impl Fn(FilterKind) -> bool) -> Option<&VariantError> {
        self.errors
            .iter()
            .filter(|e| keep(e.spec.kind))
            .min_by(|a, b| a.window.total_cmp(&b.window))
    }

    pub fn best_df(&self) -> Option<&VariantError> {
        self.best(|k| k == FilterKind::Df)
    }

    pub fn best_hodf(&self) -> Option<&VariantError> {
        self.best(|k| matches!(k, FilterKind::HodfV1 | FilterKind::HodfV2))
    }
}

fn run_to(fom: &FomMatrices, y: &[f64], dt: f64, steps: usize) -> Result<DenseVector> {
    let opts = FomOptions::default();
    let mut integ = FomIntegrator::new(step_initial_condition(&fom.grid), fom, y, dt, &opts)?;
    for _ in 0..steps {
        integ.step()?;
    }
    Ok(integ.state().u.clone())
}

/// Full-order energies at steps `k_start..=k_end`.
fn reference_energies(fom: &FomMatrices, y: &[f64], dt: f64, k_start: usize, k_end: usize) -> Result<Vec<f64>> {
    let opts = FomOptions::default();
    let initial = step_initial_condition(&fom.grid);
    let mut out = Vec::with_capacity(k_end - k_start + 1);
    if k_start == 0 {
        out.push(energy_qoi(&initial, &fom.mass)?);
    }
    let mut integ = FomIntegrator::new(initial, fom, y, dt, &opts)?;
    for k in 1..=k_end {
        let s = integ.step()?;
        if k >= k_start {
            out.push(energy_qoi(s, &fom.mass)?);
        }
    }
    Ok(out)
}

fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

fn check_artifacts(cfg: &PipelineConfig, art: &Artifacts) -> Result<()> {
    let built = art.config()?;
    let mismatch = |what: &str| PipelineError::Artifact {
        path: art.dir.join("config.txt"),
        message: format!("{what} differs from the current configuration; rerun `offline`"),
    };
    if built.n_nodes != cfg.n_nodes {
        return Err(mismatch("fom.n_nodes"));
    }
    if built.dt != cfg.dt {
        return Err(mismatch("fom.dt"));
    }
    if built.model() != cfg.model() {
        return Err(mismatch("the viscosity model"));
    }
    if built.rom_start() != cfg.rom_start() {
        return Err(mismatch("the ROM start time"));
    }
    if built.train_level() != cfg.train_level() {
        return Err(mismatch("uq.train_level"));
    }
    Ok(())
}

fn wants_node_files(cfg: &PipelineConfig, spec: &FilterSpec) -> bool {
    match cfg.node_files {
        NodeFiles::All => true,
        NodeFiles::Grom => spec.kind == FilterKind::None,
        NodeFiles::None => false,
    }
}

/// Runs every configured variant at every online node from the projected
/// full-order state at the ROM start and writes `<out>/online`.
pub fn online(cfg: &PipelineConfig) -> Result<OnlineReport> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.out_dir);
    check_artifacts(cfg, &art)?;
    let basis = art.basis()?;
    let ops = art.operators()?;
    let mass = art.mass()?;
    let (t_start, train_nodes, train_states) = art.start_states()?;

    let model = cfg.model();
    let grid = cfg.online_grid()?;
    model.check_positive(&grid, cfg.n_nodes)?;
    let nodes = physical_nodes(cfg, &grid);
    let fom = fom_setup(cfg)?;
    let k_start = step_count(0.0, t_start, cfg.dt)?;
    let k_window = step_count(0.0, cfg.t_final, cfg.dt)?;
    let k_end = step_count(0.0, cfg.horizon_end(), cfg.dt)?;

    // start states: nested grids let training states be reused verbatim
    let clock = Instant::now();
    let reuse: Vec<Option<usize>> = nodes
        .iter()
        .map(|y| train_nodes.iter().position(|t| same_point(t, y)))
        .collect();
    let reused_states = reuse.iter().filter(|r| r.is_some()).count();
    let starts: Vec<DenseVector> = nodes
        .par_iter()
        .zip(&reuse)
        .enumerate()
        .map(|(j, (y, reused))| match reused {
            Some(t) => Ok(train_states.column(*t)),
            None => run_to(&fom, y, cfg.dt, k_start).map_err(|e| PipelineError::at_node(j, e)),
        })
        .collect::<Result<_>>()?;
    let a0: Vec<DenseVector> = starts
        .iter()
        .enumerate()
        .map(|(j, u)| project(&basis, u, &mass).map_err(|e| PipelineError::at_node(j, e)))
        .collect::<Result<_>>()?;
    let start_state_seconds = clock.elapsed().as_secs_f64();

    let out = cfg.out_dir.join("online");
    let times: Vec<f64> = (k_start..=k_end).map(|k| k as f64 * cfg.dt).collect();
    let variants = cfg.variants();
    let mut series = Vec::with_capacity(variants.len());
    let mut failures = Vec::new();
    let clock = Instant::now();
    for spec in &variants {
        let efr = EfrConfig::new(cfg.dt, t_start, cfg.horizon_end(), *spec).with_chi(cfg.chi());
        let label = spec.label();
        let node_dir = out.join("nodes").join(&label);
        let write_nodes = wants_node_files(cfg, spec);
        let results: Vec<Result<Vec<f64>>> = nodes
            .par_iter()
            .zip(&a0)
            .enumerate()
            .map(|(j, (y, a))| {
                let traj = efr_run(a, &ops, y, &efr).map_err(|e| PipelineError::at_node(j, e))?;
                if write_nodes {
                    traj.to_csv_every(cfg.every)
                        .write(&node_dir.join(format!("node_{j:04}.csv")))?;
                }
                Ok(traj.energy)
            })
            .collect();
        let mut energies = Vec::with_capacity(results.len());
        let mut lost = false;
        for (j, r) in results.into_iter().enumerate() {
            match r {
                Ok(e) => energies.push(e),
                Err(e) if cfg.permissive => {
                    failures.push((label.clone(), j, e.to_string()));
                    lost = true;
                }
                Err(e) => return Err(e),
            }
        }
        series.push(if lost {
            None
        } else {
            Some(ExpectationSeries::from_nodes(times.clone(), &energies, &grid)?)
        });
    }
    let rom_seconds = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let fom_series = if cfg.reference {
        let per_node: Vec<Vec<f64>> = nodes
            .par_iter()
            .enumerate()
            .map(|(j, y)| {
                reference_energies(&fom, y, cfg.dt, k_start, k_end).map_err(|e| PipelineError::at_node(j, e))
            })
            .collect::<Result<_>>()?;
        Some(ExpectationSeries::from_nodes(times.clone(), &per_node, &grid)?)
    } else {
        None
    };
    let reference_seconds = clock.elapsed().as_secs_f64();

    let mut errors = Vec::new();
    if let Some(reference) = &fom_series {
        for (spec, s) in variants.iter().zip(&series) {
            if let Some(s) = s {
                errors.push(VariantError {
                    spec: *spec,
                    window: s.mean_relative_error(reference, k_window - k_start),
                    extended: s.mean_relative_error(reference, k_end - k_start),
                });
            }
        }
    }

    let report = OnlineReport {
        grid,
        variants,
        series,
        fom: fom_series,
        errors,
        failures,
        reused_states,
        start_state_seconds,
        rom_seconds,
        reference_seconds,
    };
    write_outputs(&out, &report)?;
    Ok(report)
}

fn write_outputs(out: &Path, report: &OnlineReport) -> Result<()> {
    report.grid.to_csv().write(&out.join("grid.csv"))?;

    let kept: Vec<(&FilterSpec, &ExpectationSeries)> = report
        .variants
        .iter()
        .zip(&report.series)
        .filter_map(|(v, s)| s.as_ref().map(|s| (v, s)))
        .collect();
    if let Some((_, first)) = kept.first() {
        let mut header = vec!["t".to_string()];
        header.extend(kept.iter().map(|(v, _)| v.label()));
        let mut csv = CsvTable::new(&header);
        let mut row = Vec::with_capacity(header.len());
        for k in 0..first.times.len() {
            row.clear();
            row.push(first.times[k]);
            row.extend(kept.iter().map(|(_, s)| s.values[k]));
            csv.push_row(&[], &row);
        }
        csv.write(&out.join("expectation.csv"))?;
    }

    if let Some(f) = &report.fom {
        let mut csv = CsvTable::new(&["t".to_string(), "energy".to_string()]);
        for (t, v) in f.times.iter().zip(&f.values) {
            csv.push_row(&[], &[*t, *v]);
        }
        csv.write(&out.join("fom_expectation.csv"))?;

        let header: Vec<String> = ["variant", "kind", "delta", "m", "error_window", "error_extended"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut csv = CsvTable::new(&header);
        for e in &report.errors {
            csv.push_row(
                &[e.spec.label(), e.spec.kind.name().to_string()],
                &[e.spec.delta, e.spec.m as f64, e.window, e.extended],
            );
        }
        csv.write(&out.join("summary.csv"))?;
    }

    if !report.failures.is_empty() {
        let mut text = String::from("variant,node,message\n");
        for (label, j, msg) in &report.failures {
            text.push_str(&format!("{label},{j},\"{}\"\n", msg.replace('"', "'")));
        }
        io::write_text(&out.join("failures.csv"), &text)?;
    }

    // wall-clock figures live outside the CSVs so those stay reproducible
    let mut kv = KeyValues::new();
    kv.set("nodes", report.grid.len());
    kv.set("reused_training_states", report.reused_states);
    kv.set("start_state_seconds", format!("{:.3}", report.start_state_seconds));
    kv.set("rom_seconds", format!("{:.3}", report.rom_seconds));
    kv.set("reference_seconds", format!("{:.3}", report.reference_seconds));
    kv.write(&out.join("timings.txt"))?;
    Ok(())
}
