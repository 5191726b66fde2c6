//! Experiment configuration: one TOML file drives dataset generation,
//! cross-validation, and reporting, so a run is fully described by (config,
//! code version).

use crate::phantom::PhantomSpec;
use crate::pipeline::{
    self, ApproachConfig, ApproachKind, CrossvalOutcome, Needs, PipelineError, Target,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid experiment config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// One experiment: a phantom dataset, a set of approaches, and a single
/// prediction target evaluated by patient-stratified cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub phantom: PhantomSpec,
    pub approaches: Vec<ApproachConfig>,
    pub target: Target,
    /// Cross-validation fold count.
    pub folds: usize,
    /// Root of all derived randomness: folds, model seeds, augmentation.
    pub master_seed: u64,
    /// Operating point for the threshold-dependent metrics.
    pub threshold: f64,
    /// Output directory for datasets, scores, and reports.
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            phantom: PhantomSpec::default(),
            approaches: ApproachKind::ALL
                .iter()
                .map(|&v| ApproachConfig::for_variant(v))
                .collect(),
            target: Target::Stenosis50,
            folds: 10,
            master_seed: 42,
            threshold: 0.5,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.phantom
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.approaches.is_empty() {
            return Err(ConfigError::Invalid("no approaches configured".into()));
        }
        for (i, a) in self.approaches.iter().enumerate() {
            a.validate()
                .map_err(|e| ConfigError::Invalid(format!("approach {i}: {e}")))?;
            // Score files are named by variant, so variants must be unique.
            if self.approaches[..i].iter().any(|b| b.variant == a.variant) {
                return Err(ConfigError::Invalid(format!(
                    "approach {} listed twice",
                    a.variant.as_str()
                )));
            }
        }
        if self.folds < 2 {
            return Err(ConfigError::Invalid(format!(
                "fold count {} must be at least 2",
                self.folds
            )));
        }
        if !self.threshold.is_finite() || !(0.0..=1.0).contains(&self.threshold) {
            return Err(ConfigError::Invalid(format!(
                "threshold {} must lie in [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("experiment config always serializes")
    }
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_experiment(cfg: &ExperimentConfig, path: &Path) -> Result<(), ConfigError> {
    std::fs::write(path, cfg.to_toml()).map_err(|source| ConfigError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Groups approach indices that can share one sample bank: identical
/// geometry and radiomics configuration. Returns each group with the union
/// of its payload needs.
pub fn bank_groups(approaches: &[ApproachConfig]) -> Vec<(Vec<usize>, Needs)> {
    let mut groups: Vec<(Vec<usize>, Needs)> = Vec::new();
    for (i, a) in approaches.iter().enumerate() {
        let needs = Needs::of(a.variant);
        let found = groups.iter_mut().find(|(idxs, _)| {
            let rep = &approaches[idxs[0]];
            rep.geometry == a.geometry && rep.radiomics == a.radiomics
        });
        match found {
            Some((idxs, n)) => {
                idxs.push(i);
                *n = n.union(needs);
            }
            None => groups.push((vec![i], needs)),
        }
    }
    groups
}

/// Cross-validates every configured approach on every target, building each
/// shared sample bank exactly once. Outcomes follow the configured approach
/// order within each target.
pub fn run_targets(
    cfg: &ExperimentConfig,
    targets: &[Target],
) -> Result<Vec<(Target, Vec<CrossvalOutcome>)>, ExperimentError> {
    cfg.validate()?;
    let mut slots: Vec<Vec<Option<CrossvalOutcome>>> = targets
        .iter()
        .map(|_| vec![None; cfg.approaches.len()])
        .collect();
    for (idxs, needs) in bank_groups(&cfg.approaches) {
        let rep = &cfg.approaches[idxs[0]];
        let bank = pipeline::build_bank(&cfg.phantom, &rep.geometry, &rep.radiomics, needs)?;
        for (t, &target) in targets.iter().enumerate() {
            for &i in &idxs {
                slots[t][i] = Some(pipeline::run_crossval(
                    &bank,
                    &cfg.approaches[i],
                    target,
                    cfg.folds,
                    cfg.master_seed,
                )?);
            }
        }
    }
    Ok(targets
        .iter()
        .zip(slots)
        .map(|(&t, row)| {
            let outcomes = row
                .into_iter()
                .map(|o| o.expect("every approach runs once per target"))
                .collect();
            (t, outcomes)
        })
        .collect())
}

/// Cross-validates the configured target only.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<CrossvalOutcome>, ExperimentError> {
    let mut per_target = run_targets(cfg, &[cfg.target])?;
    Ok(per_target.pop().expect("one target requested").1)
}
