use std::path::{Path, PathBuf};

use crate::fom::step_count;
use crate::io::{parse_list, KeyValues};
use crate::rom::{FilterKind, FilterSpec};
use crate::uq::{smolyak_grid, RandomViscosityModel, SparseGrid, DEFAULT_NU0};

use super::{PipelineError, Result};

/// Prefix of environment variables that override config keys:
/// `EFRROM_ROM_DELTAS=0.01,0.02` sets `rom.deltas`.
pub const ENV_PREFIX: &str = "EFRROM_";

const KNOWN_KEYS: &[&str] = &[
    "fom.n_nodes",
    "fom.dt",
    "fom.t_final",
    "fom.snapshot_start",
    "fom.stride",
    "fom.y",
    "pod.r",
    "rom.t_start",
    "rom.horizon_factor",
    "rom.chi",
    "rom.deltas",
    "rom.orders",
    "rom.filters",
    "rom.reference",
    "uq.model",
    "uq.nu0",
    "uq.train_level",
    "uq.online_level",
    "uq.seed",
    "uq.mc_samples",
    "out.dir",
    "out.node_files",
    "out.every",
];

/// Number of retained POD modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeCount {
    Fixed(usize),
    /// The numerical rank of the centered snapshots.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Constant1d,
    Kl5d,
}

/// Which per-node trajectory files `online` writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeFiles {
    All,
    /// Only the unfiltered G-ROM.
    Grom,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub n_nodes: usize,
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_start: f64,
    pub stride: usize,
    /// Parameter of the single `fom` trajectory (physical coordinates).
    pub fom_y: Option<Vec<f64>>,
    pub modes: ModeCount,
    pub rom_start: Option<f64>,
    pub horizon_factor: f64,
    pub chi: Option<f64>,
    pub deltas: Vec<f64>,
    pub orders: Vec<u32>,
    pub filters: Vec<FilterKind>,
    /// Also run the full-order ensemble on the online grid for error reports.
    pub reference: bool,
    pub model: ModelKind,
    /// Reference viscosity of the constant model.
    pub nu0: f64,
    pub train_level: Option<u32>,
    pub online_level: Option<u32>,
    pub seed: u64,
    pub mc_samples: usize,
    pub out_dir: PathBuf,
    pub node_files: NodeFiles,
    pub every: usize,
    pub workers: Option<usize>,
    pub permissive: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_nodes: 129,
            dt: 5e-4,
            t_final: 1.0,
            snapshot_start: 0.25,
            stride: 40,
            fom_y: None,
            modes: ModeCount::Fixed(4),
            rom_start: None,
            horizon_factor: 2.0,
            chi: None,
            deltas: vec![5e-3, 6e-3, 7e-3, 7.5e-3, 8e-3, 1e-2, 2e-2, 5e-2, 1e-1],
            orders: vec![2, 3],
            filters: vec![FilterKind::Df, FilterKind::HodfV1, FilterKind::HodfV2],
            reference: true,
            model: ModelKind::Constant1d,
            nu0: DEFAULT_NU0,
            train_level: None,
            online_level: None,
            seed: 20240917,
            mc_samples: 200,
            out_dir: PathBuf::from("out"),
            node_files: NodeFiles::All,
            every: 10,
            workers: None,
            permissive: false,
        }
    }
}

fn invalid(key: &str, value: &str, why: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(format!("{key} = `{value}`: {why}"))
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| invalid(key, value, e))
}

fn parse_csv_items<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

/// `EFRROM_FOM_N_NODES` -> `fom.n_nodes`
pub fn env_key(var: &str) -> Option<String> {
    let rest = var.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
    let (section, key) = rest.split_once('_')?;
    Some(format!("{section}.{key}"))
}

impl PipelineConfig {
    /// Defaults, then the optional file, then `EFRROM_*` variables from `env`.
    pub fn load<I>(path: Option<&Path>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut kv = match path {
            Some(p) => KeyValues::read(p)?,
            None => KeyValues::new(),
        };
        for (var, value) in env {
            if !var.starts_with(ENV_PREFIX) {
                continue;
            }
            match env_key(&var) {
                Some(key) => kv.set(key, value),
                None => return Err(PipelineError::Config(format!("{var} does not name a section and key"))),
            }
        }
        Self::from_key_values(&kv)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in kv.iter() {
            cfg.apply(key, value)?;
        }
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "fom.n_nodes" => self.n_nodes = parse_value(key, v)?,
            "fom.dt" => self.dt = parse_value(key, v)?,
            "fom.t_final" => self.t_final = parse_value(key, v)?,
            "fom.snapshot_start" => self.snapshot_start = parse_value(key, v)?,
            "fom.stride" => self.stride = parse_value(key, v)?,
            "fom.y" => self.fom_y = Some(parse_list(v).map_err(|e| invalid(key, v, e))?),
            "pod.r" => {
                self.modes = if v.eq_ignore_ascii_case("full") {
                    ModeCount::Full
                } else {
                    ModeCount::Fixed(parse_value(key, v)?)
                }
            }
            "rom.t_start" => {
                self.rom_start = if v.eq_ignore_ascii_case("midpoint") {
                    None
                } else {
                    Some(parse_value(key, v)?)
                }
            }
            "rom.horizon_factor" => self.horizon_factor = parse_value(key, v)?,
            "rom.chi" => {
                self.chi = if v.eq_ignore_ascii_case("dt") {
                    None
                } else {
                    Some(parse_value(key, v)?)
                }
            }
            "rom.deltas" => self.deltas = parse_list(v).map_err(|e| invalid(key, v, e))?,
            "rom.orders" => self.orders = parse_csv_items(key, v)?,
            "rom.filters" => {
                let kinds: Vec<FilterKind> = parse_csv_items(key, v)?;
                self.filters = kinds.into_iter().filter(|k| *k != FilterKind::None).collect();
            }
            "rom.reference" => self.reference = parse_value(key, v)?,
            "uq.model" => {
                self.model = match v {
                    "constant1d" => ModelKind::Constant1d,
                    "kl5d" => ModelKind::Kl5d,
                    other => return Err(invalid(key, other, "expected constant1d or kl5d")),
                }
            }
            "uq.nu0" => self.nu0 = parse_value(key, v)?,
            "uq.train_level" => self.train_level = Some(parse_value(key, v)?),
            "uq.online_level" => self.online_level = Some(parse_value(key, v)?),
            "uq.seed" => self.seed = parse_value(key, v)?,
            "uq.mc_samples" => self.mc_samples = parse_value(key, v)?,
            "out.dir" => self.out_dir = PathBuf::from(v),
            "out.node_files" => {
                self.node_files = match v {
                    "all" => NodeFiles::All,
                    "grom" => NodeFiles::Grom,
                    "none" => NodeFiles::None,
                    other => return Err(invalid(key, other, "expected all, grom or none")),
                }
            }
            "out.every" => self.every = parse_value(key, v)?,
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown key `{other}`; known keys: {}",
                    KNOWN_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }
}

impl PipelineConfig {
    pub fn model(&self) -> RandomViscosityModel {
        match self.model {
            ModelKind::Constant1d => RandomViscosityModel::Constant1d { nu0: self.nu0 },
            ModelKind::Kl5d => RandomViscosityModel::kl5d(),
        }
    }

    /// Training level; 3 (9 nodes) in 1D, 1 (11 nodes) in 5D unless set.
    pub fn train_level(&self) -> u32 {
        self.train_level.unwrap_or(match self.model {
            ModelKind::Constant1d => 3,
            ModelKind::Kl5d => 1,
        })
    }

    /// Online level; 6 (65 nodes) in 1D, 4 (801 nodes) in 5D unless set.
    pub fn online_level(&self) -> u32 {
        self.online_level.unwrap_or(match self.model {
            ModelKind::Constant1d => 6,
            ModelKind::Kl5d => 4,
        })
    }

    pub fn training_grid(&self) -> Result<SparseGrid> {
        Ok(smolyak_grid(self.model().dim(), self.train_level())?)
    }

    pub fn online_grid(&self) -> Result<SparseGrid> {
        Ok(smolyak_grid(self.model().dim(), self.online_level())?)
    }

    /// ROM start: the configured time, or the snapshot-window midpoint,
    /// rounded to the time grid.
    pub fn rom_start(&self) -> f64 {
        let t = self
            .rom_start
            .unwrap_or(0.5 * (self.snapshot_start + self.t_final));
        (t / self.dt).round() * self.dt
    }

    /// End of the extended horizon, `t_start + horizon_factor (t_final - t_start)`.
    pub fn horizon_end(&self) -> f64 {
        let t0 = self.rom_start();
        let steps = ((self.t_final - t0) * self.horizon_factor / self.dt).round();
        t0 + steps * self.dt
    }

    /// Relaxation parameter, `dt` unless configured.
    pub fn chi(&self) -> f64 {
        self.chi.unwrap_or(self.dt)
    }

    /// G-ROM first, then every configured filter over the delta (and order) sweep.
    pub fn variants(&self) -> Vec<FilterSpec> {
        let mut out = vec![FilterSpec::NONE];
        for &kind in self.filters.iter().filter(|k| **k != FilterKind::None) {
            for &delta in &self.deltas {
                if kind == FilterKind::Df {
                    out.push(FilterSpec::df(delta));
                } else {
                    for &m in &self.orders {
                        out.push(FilterSpec { kind, delta, m });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if self.n_nodes < 3 {
            return fail(format!("fom.n_nodes = {} must be at least 3", self.n_nodes));
        }
        if !(self.dt > 0.0) || !(self.t_final > 0.0) {
            return fail("fom.dt and fom.t_final must be positive".into());
        }
        if !(0.0..=self.t_final).contains(&self.snapshot_start) {
            return fail(format!(
                "snapshot window start {} outside [0, {}]",
                self.snapshot_start, self.t_final
            ));
        }
        step_count(0.0, self.t_final, self.dt).map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.stride == 0 || self.every == 0 {
            return fail("fom.stride and out.every must be at least 1".into());
        }
        if let ModeCount::Fixed(0) = self.modes {
            return fail("pod.r must be at least 1".into());
        }
        let t0 = self.rom_start();
        if !(t0 >= 0.0 && t0 < self.t_final) {
            return fail(format!("ROM start {t0} must lie in [0, {})", self.t_final));
        }
        if !(self.horizon_factor >= 1.0) {
            return fail("rom.horizon_factor must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.chi()) {
            return fail(format!("rom.chi = {} outside [0, 1]", self.chi()));
        }
        for spec in self.variants() {
            spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if !(self.nu0 > 0.0) {
            return fail(format!("uq.nu0 = {} must be positive", self.nu0));
        }
        let (lt, lo) = (self.train_level(), self.online_level());
        if lt > lo {
            return fail(format!(
                "training level {lt} exceeds the online level {lo}; the online grid must contain the training grid"
            ));
        }
        if let Some(y) = &self.fom_y {
            if y.len() != self.model().dim() {
                return fail(format!("fom.y has {} entries, model needs {}", y.len(), self.model().dim()));
            }
        }
        Ok(())
    }

    /// Flat key=value form that reloads to the same configuration.
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("fom.n_nodes", self.n_nodes);
        kv.set_f64("fom.dt", self.dt);
        kv.set_f64("fom.t_final", self.t_final);
        kv.set_f64("fom.snapshot_start", self.snapshot_start);
        kv.set("fom.stride", self.stride);
        if let Some(y) = &self.fom_y {
            kv.set_list("fom.y", y);
        }
        kv.set(
            "pod.r",
            match self.modes {
                ModeCount::Fixed(r) => r.to_string(),
                ModeCount::Full => "full".into(),
            },
        );
        match self.rom_start {
            Some(t) => kv.set_f64("rom.t_start", t),
            None => kv.set("rom.t_start", "midpoint"),
        }
        kv.set_f64("rom.horizon_factor", self.horizon_factor);
        match self.chi {
            Some(c) => kv.set_f64("rom.chi", c),
            None => kv.set("rom.chi", "dt"),
        }
        kv.set_list("rom.deltas", &self.deltas);
        kv.set("rom.orders", join(&self.orders));
        kv.set(
            "rom.filters",
            self.filters.iter().map(|k| k.name()).collect::<Vec<_>>().join(","),
        );
        kv.set("rom.reference", self.reference);
        kv.set(
            "uq.model",
            match self.model {
                ModelKind::Constant1d => "constant1d",
                ModelKind::Kl5d => "kl5d",
            },
        );
        kv.set_f64("uq.nu0", self.nu0);
        kv.set("uq.train_level", self.train_level());
        kv.set("uq.online_level", self.online_level());
        kv.set("uq.seed", self.seed);
        kv.set("uq.mc_samples", self.mc_samples);
        kv.set("out.dir", self.out_dir.display());
        kv.set(
            "out.node_files",
            match self.node_files {
                NodeFiles::All => "all",
                NodeFiles::Grom => "grom",
                NodeFiles::None => "none",
            },
        );
        kv.set("out.every", self.every);
        kv
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_names_map_to_keys() {
        assert_eq!(env_key("EFRROM_FOM_N_NODES").as_deref(), Some("fom.n_nodes"));
        assert_eq!(env_key("EFRROM_ROM_DELTAS").as_deref(), Some("rom.deltas"));
        assert_eq!(env_key("PATH"), None);
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.training_grid().unwrap().len(), 9);
        assert_eq!(cfg.online_grid().unwrap().len(), 65);
        assert!((cfg.rom_start() - 0.625).abs() < 1e-12);
        assert!((cfg.horizon_end() - 1.375).abs() < 1e-12);
        assert_eq!(cfg.chi(), cfg.dt);
        assert_eq!(cfg.variants()[0], FilterSpec::NONE);
    }

    #[test]
    fn file_then_env_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "fom.n_nodes = 65
pod.r = full
rom.chi = 0
").unwrap();
        let env = vec![
            ("EFRROM_FOM_N_NODES".to_string(), "33".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ];
        let cfg = PipelineConfig::load(Some(&path), env).unwrap();
        assert_eq!(cfg.n_nodes, 33);
        assert_eq!(cfg.modes, ModeCount::Full);
        assert_eq!(cfg.chi(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.apply("fom.nodes", "3").is_err());
        assert!(cfg.apply("fom.dt", "fast").is_err());
        cfg.train_level = Some(7);
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.snapshot_start = 2.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn key_values_roundtrip() {
        let mut cfg = PipelineConfig::default();
        cfg.apply("uq.model", "kl5d").unwrap();
        cfg.apply("rom.deltas", "0.01,0.2").unwrap();
        cfg.apply("rom.filters", "hodf2").unwrap();
        let back = PipelineConfig::from_key_values(&cfg.to_key_values()).unwrap();
        assert_eq!(back.model, ModelKind::Kl5d);
        assert_eq!(back.deltas, vec![0.01, 0.2]);
        assert_eq!(back.variants(), cfg.variants());
        assert_eq!(back.train_level(), 1);
        assert_eq!(back.online_level(), 4);
    }

    #[test]
    fn none_filter_appears_once() {
        let mut cfg = PipelineConfig::default();
        cfg.filters = vec![FilterKind::None, FilterKind::Df];
        let v = cfg.variants();
        assert_eq!(v.iter().filter(|s| s.kind == FilterKind::None).count(), 1);
        assert_eq!(v.len(), 1 + cfg.deltas.len());
    }
}
