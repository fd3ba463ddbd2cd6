//! Run configuration: a TOML file whose fields can be overridden by flags.

use std::path::{Path, PathBuf};

use eitga_core::baseline::NrConfig;
use eitga_core::experiment::NoiseMode;
use eitga_core::ga::GaConfig;
use eitga_core::objective::ObjectiveSpec;
use eitga_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Ga,
    Nr,
    Hybrid,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Ga => "ga",
            Solver::Nr => "nr",
            Solver::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Mesh file; when set, `rings` and `electrodes` are ignored.
    pub path: Option<PathBuf>,
    pub rings: usize,
    pub electrodes: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            path: None,
            rings: 12,
            electrodes: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub level: f64,
    pub mode: NoiseMode,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            level: 0.0,
            mode: NoiseMode::GlobalRms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub protocol: String,
    pub current: f64,
    pub mesh: MeshConfig,
    /// Phantom spec file, used by `simulate` and for metrics.
    pub phantom: Option<PathBuf>,
    pub measurements: Option<PathBuf>,
    pub noise: NoiseConfig,
    pub objective: ObjectiveSpec,
    pub solver: Solver,
    pub ga: GaConfig,
    pub nr: NrConfig,
    /// Log-normal disturbance scale applied between the NR and GA stages.
    pub disturb: Option<f64>,
    pub out_dir: Option<PathBuf>,
    /// Write wall-clock fields; off for byte-reproducible outputs.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            protocol: "adjacent".into(),
            current: 1.0,
            mesh: MeshConfig::default(),
            phantom: None,
            measurements: None,
            noise: NoiseConfig::default(),
            objective: ObjectiveSpec::default(),
            solver: Solver::Ga,
            ga: GaConfig::default(),
            nr: NrConfig::default(),
            disturb: None,
            out_dir: None,
            timing: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                msg: format!("{}: {}", path.display(), e.message()),
            }
        })?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.mesh.path, &mut cfg.phantom, &mut cfg.measurements] {
            if let Some(p) = p.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Checks everything that does not need the mesh.
    pub fn check(&self) -> Result<()> {
        if self.protocol != "adjacent" {
            return Err(Error::Config(format!(
                "unknown protocol `{}` (only `adjacent` is available)",
                self.protocol
            )));
        }
        if !(self.current.is_finite() && self.current != 0.0) {
            return Err(Error::Config("current must be finite and nonzero".into()));
        }
        if !(self.noise.level >= 0.0 && self.noise.level.is_finite()) {
            return Err(Error::Config(format!("noise level must be non-negative, got {}", self.noise.level)));
        }
        if let Some(s) = self.disturb {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("disturbance scale must be non-negative, got {s}")));
            }
        }
        for p in [&self.mesh.path, &self.phantom, &self.measurements].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{} does not exist", p.display()),
                )));
            }
        }
        self.ga.check()?;
        self.nr.check()?;
        Ok(())
    }
}
