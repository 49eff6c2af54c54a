use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smuda_core::data::{blobs3, read_features};
use smuda_core::{LabeledDataset, PipelineConfig};

use crate::CliError;

pub const PRESETS: [&str; 1] = ["blobs3"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Local,
    Distributed,
}

/// Everything a run needs. Loaded from TOML; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Synthetic preset to generate instead of reading files.
    pub preset: Option<String>,
    /// Samples per domain for the preset.
    pub samples: usize,
    /// Labeled source feature files (`.smft` or `.csv`).
    pub sources: Vec<PathBuf>,
    /// Target feature file. Labels, when present, are only used for evaluation.
    pub target: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: Mode,
    pub xi: f64,
    pub zeta: f64,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            samples: 500,
            sources: Vec::new(),
            target: None,
            out: None,
            mode: Mode::Local,
            xi: 0.05,
            zeta: 1.0,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.preset, self.sources.is_empty(), &self.target) {
            (Some(p), true, None) => {
                if !PRESETS.contains(&p.as_str()) {
                    return Err(CliError::Config(format!("unknown preset {p:?} (known: {})", PRESETS.join(", "))));
                }
                if self.samples < 4 {
                    return Err(CliError::Config("preset samples must be at least the class count".into()));
                }
            }
            (None, false, Some(_)) => {}
            (Some(_), _, _) => return Err(CliError::Config("give either a preset or source/target files, not both".into())),
            _ => return Err(CliError::Config("need a preset, or at least one source and a target".into())),
        }
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(CliError::Config(format!("xi must lie in (0, 1], got {}", self.xi)));
        }
        if !(self.zeta > 0.0 && self.zeta < std::f64::consts::SQRT_2) {
            return Err(CliError::Config(format!("zeta must lie in (0, sqrt 2), got {}", self.zeta)));
        }
        self.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Output directory: explicit setting, then `SMUDA_OUT_DIR`, then `smuda-out`.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("SMUDA_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("smuda-out"))
    }

    pub fn load_data(&self) -> Result<(Vec<LabeledDataset>, LabeledDataset), CliError> {
        if let Some(preset) = &self.preset {
            debug_assert_eq!(preset, "blobs3");
            let d = blobs3(self.pipeline.seed, self.samples).generate()?;
            return Ok((d.sources, d.target));
        }
        let mut sources = Vec::with_capacity(self.sources.len());
        for path in &self.sources {
            let ds = read_features(path)?;
            if !ds.is_labeled() {
                return Err(CliError::Config(format!("source {} has no labels", path.display())));
            }
            sources.push(ds);
        }
        let target = read_features(self.target.as_ref().expect("validated"))?;
        Ok((sources, target))
    }
}
