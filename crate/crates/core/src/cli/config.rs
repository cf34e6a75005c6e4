use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accel::Menus;
use crate::acrl::{ActorCriticNet, DistillMode, TrainConfig};
use crate::cosearch::CoSearchConfig;
use crate::das::{CostSignal, SearchOptions, BRUTE_FORCE_CAP};
use crate::env::EnvKind;
use crate::supernet::{NetDescription, OperatorKind};
use crate::tensorcore::load_checkpoint;
use crate::{Error, Result};

pub const RUN_FORMAT: &str = "coaccel-run";
pub const RUN_VERSION: u32 = 1;
pub const MENUS_FORMAT: &str = "coaccel-menus";

/// Everything a subcommand needs. `env` and `seed` override the copies in
/// `[train]` and `[search]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format: String,
    pub version: u32,
    pub env: EnvKind,
    pub seed: u64,
    /// One worker thread everywhere.
    pub deterministic: bool,
    /// Output root; the `--out` flag and `COACCEL_OUT` take precedence.
    pub out_dir: Option<PathBuf>,
    /// Fine-tuning steps for the derived child after `search`.
    pub finetune_steps: usize,
    pub net: NetSpec,
    pub train: TrainConfig,
    pub search: CoSearchConfig,
    pub das: DasSection,
    pub pareto: ParetoSection,
    pub menus: Menus,
    pub teacher: Option<TeacherSpec>,
}

/// Fixed network trained by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSpec {
    pub ops: Vec<OperatorKind>,
    pub channels: usize,
    pub hidden: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec { ops: vec![OperatorKind::ConvK3; 2], channels: 8, hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DasSection {
    pub steps: usize,
    pub lr: f64,
    pub tau: f64,
    pub signal: CostSignal,
    pub brute_force_cap: f64,
}

impl Default for DasSection {
    fn default() -> Self {
        let o = SearchOptions::default();
        DasSection { steps: o.steps, lr: o.lr, tau: o.tau, signal: o.signal, brute_force_cap: BRUTE_FORCE_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoSection {
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub finetune_steps: usize,
}

impl Default for ParetoSection {
    fn default() -> Self {
        ParetoSection { lambdas: vec![0.0, 1e-6, 1e-5, 1e-4], seeds: (0..10).collect(), finetune_steps: 5_000 }
    }
}

/// A trained network on disk: its `child.net` description and checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec {
    pub net: PathBuf,
    pub checkpoint: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format: RUN_FORMAT.into(),
            version: RUN_VERSION,
            env: EnvKind::Gridworld,
            seed: 0,
            deterministic: true,
            out_dir: None,
            finetune_steps: 0,
            net: NetSpec::default(),
            train: TrainConfig::default(),
            search: CoSearchConfig::default(),
            das: DasSection::default(),
            pareto: ParetoSection::default(),
            menus: Menus::default(),
            teacher: None,
        }
    }
}

impl RunConfig {
    /// Parses `text`; relative teacher paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string().trim_end().to_string())?;
        if cfg.format != RUN_FORMAT {
            return Err(format!("format: `{}` is not `{RUN_FORMAT}`", cfg.format));
        }
        if cfg.version != RUN_VERSION {
            return Err(format!("version: unsupported version {}", cfg.version));
        }
        if let Some(t) = cfg.teacher.as_mut() {
            t.net = base.join(&t.net);
            t.checkpoint = base.join(&t.checkpoint);
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|r| Error::format(path, r))
    }

    /// Copies the top-level env and seed into every section.
    pub fn sync(&mut self) {
        self.train.env = self.env;
        self.train.seed = self.seed;
        self.search.env = self.env;
        self.search.seed = self.seed;
    }

    /// Range checks, each reported as `[section] reason`.
    pub fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| format!("[train] {}", strip(&e)))?;
        self.search.validate().map_err(|e| format!("[search] {}", strip(&e)))?;
        self.menus.validate().map_err(|e| format!("[menus] {e}"))?;
        if self.net.ops.is_empty() || self.net.channels == 0 || self.net.hidden == 0 {
            return Err("[net] ops, channels and hidden must be non-empty".into());
        }
        let d = &self.das;
        if d.steps == 0 || !(d.lr > 0.0 && d.tau > 0.0 && d.brute_force_cap > 0.0) {
            return Err("[das] steps, lr, tau and brute_force_cap must be positive".into());
        }
        let p = &self.pareto;
        if p.lambdas.is_empty() || p.seeds.is_empty() {
            return Err("[pareto] lambdas and seeds must be non-empty".into());
        }
        if let Some(l) = p.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(format!("[pareto] lambdas: {l} is not a non-negative number"));
        }
        let wants_teacher = self.train.distill != DistillMode::None || self.search.distill != DistillMode::None;
        match &self.teacher {
            None if wants_teacher => Err("[teacher] distillation is enabled but no teacher is configured".into()),
            Some(t) => {
                for (field, path) in [("net", &t.net), ("checkpoint", &t.checkpoint)] {
                    if !path.is_file() {
                        return Err(format!("[teacher] {field}: {} does not exist", path.display()));
                    }
                }
                Ok(())
            }
            None => Ok(()),
        }
    }

    pub fn das_options(&self) -> SearchOptions {
        SearchOptions { steps: self.das.steps, seed: self.seed, signal: self.das.signal, lr: self.das.lr, tau: self.das.tau }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Loads the configured teacher network and its path.
    pub fn load_teacher(&self) -> Result<Option<(ActorCriticNet, Vec<usize>)>> {
        let Some(t) = &self.teacher else { return Ok(None) };
        let desc = NetDescription::load(&t.net)?;
        let params = load_checkpoint(&t.checkpoint).map_err(|e| Error::format(&t.checkpoint, e))?;
        let net = ActorCriticNet::from_params(desc.net_config(), params).map_err(|e| Error::format(&t.checkpoint, e))?;
        let path = net.default_path();
        Ok(Some((net, path)))
    }
}

/// Stand-alone accelerator menus, as read by `das --menus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MenusFile {
    pub format: String,
    pub version: u32,
    pub menus: Menus,
}

impl MenusFile {
    pub fn new(menus: Menus) -> Self {
        MenusFile { format: MENUS_FORMAT.into(), version: RUN_VERSION, menus }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("menus serialize")
    }

    pub fn parse(text: &str) -> Result<Menus, String> {
        let f: MenusFile = toml::from_str(text).map_err(|e| e.to_string().trim_end().to_string())?;
        if f.format != MENUS_FORMAT {
            return Err(format!("format: `{}` is not `{MENUS_FORMAT}`", f.format));
        }
        if f.version != RUN_VERSION {
            return Err(format!("version: unsupported version {}", f.version));
        }
        f.menus.validate().map_err(|e| format!("[menus] {e}"))?;
        Ok(f.menus)
    }

    pub fn load(path: &Path) -> Result<Menus> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|r| Error::format(path, r))
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml(), Path::new(".")).unwrap(), cfg);
    }

    #[test]
    fn unknown_field_names_its_line() {
        let text = "format = \"coaccel-run\"\nversion = 1\n\n[search]\nlambda = 1e-5\nlamda = 2\n";
        let err = RunConfig::parse(text, Path::new(".")).unwrap_err();
        assert!(err.contains("line 6") && err.contains("lamda"), "{err}");
    }

    #[test]
    fn range_errors_name_the_section() {
        let text = "[search]\nlambda = -1.0\n";
        let err = RunConfig::parse(text, Path::new(".")).unwrap_err();
        assert!(err.starts_with("[search] lambda"), "{err}");
        let err = RunConfig::parse("env = \"pong\"\n", Path::new(".")).unwrap_err();
        assert!(err.contains("pong"), "{err}");
    }

    #[test]
    fn shipped_files_hold_the_defaults() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        assert_eq!(RunConfig::load(&dir.join("default.toml")).unwrap(), RunConfig::default());
        assert_eq!(MenusFile::load(&dir.join("menus_tiny.toml")).unwrap(), Menus::tiny());
    }

    #[test]
    fn menus_file_round_trips() {
        let text = MenusFile::new(Menus::tiny()).to_toml();
        assert_eq!(MenusFile::parse(&text).unwrap(), Menus::tiny());
        assert!(MenusFile::parse(&text.replace("coaccel-menus", "x")).is_err());
    }

    #[test]
    fn top_level_seed_reaches_every_section() {
        let cfg = RunConfig::parse("seed = 7\nenv = \"keydoor\"\n", Path::new(".")).unwrap();
        assert_eq!((cfg.train.seed, cfg.search.seed), (7, 7));
        assert_eq!(cfg.search.env, EnvKind::Keydoor);
    }
}
