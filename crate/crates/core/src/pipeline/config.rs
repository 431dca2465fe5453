//! Declarative run configuration, read from TOML.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::aggregate::{ColumnExpr, MedianMode, PanelGroup, TableSpec, Transform, DEFAULT_SPECIES_THRESHOLD};
use crate::enrich::DEFAULT_BUFFER_M;
use crate::ingest::{RegionKind, Severity};
use crate::par::Parallelism;

fn default_radius() -> f64 {
    DEFAULT_BUFFER_M
}

fn default_species_threshold() -> f64 {
    DEFAULT_SPECIES_THRESHOLD
}

fn default_severity() -> Severity {
    Severity::High
}

fn default_true() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_zip() -> RegionKind {
    RegionKind::Zip
}

fn default_nta() -> RegionKind {
    RegionKind::Nta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Datasets {
    pub trees: PathBuf,
    pub taxonomy: PathBuf,
    /// One boundary file per region kind.
    pub regions: BTreeMap<RegionKind, PathBuf>,
    pub complaints: Option<PathBuf>,
    pub sensors: Option<PathBuf>,
    pub lots: Option<PathBuf>,
}

impl Datasets {
    /// `(label, path)` for every configured file.
    pub fn files(&self) -> Vec<(String, &Path)> {
        let mut out = vec![("trees".to_string(), self.trees.as_path()), ("taxonomy".to_string(), self.taxonomy.as_path())];
        for (kind, path) in &self.regions {
            out.push((format!("regions.{kind}"), path.as_path()));
        }
        for (label, path) in [("complaints", &self.complaints), ("sensors", &self.sensors), ("lots", &self.lots)] {
            if let Some(p) = path {
                out.push((label.to_string(), p.as_path()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Ols,
    Panel,
}

/// One regression: which table to build and how to fit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "ModelSpec::default_name")]
    pub name: String,
    #[serde(default)]
    pub kind: ModelKind,
    /// Unit of analysis for OLS tables.
    #[serde(default = "default_zip")]
    pub region_kind: RegionKind,
    pub outcome: ColumnExpr,
    #[serde(default)]
    pub predictors: Vec<ColumnExpr>,
    #[serde(default)]
    pub species_predictors: Option<Transform>,
    /// Fixed effect for panel models.
    #[serde(default)]
    pub group: PanelGroup,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

impl ModelSpec {
    fn default_name() -> String {
        "model".into()
    }

    pub fn table_spec(&self) -> TableSpec {
        TableSpec {
            outcome: self.outcome.clone(),
            predictors: self.predictors.clone(),
            species_predictors: self.species_predictors,
        }
    }

    /// Reads a standalone model spec file.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::config(path, e.to_string()))?;
        let spec: ModelSpec = toml::from_str(&text).map_err(|e| PipelineError::config(path, e.to_string()))?;
        spec.check().map_err(|m| PipelineError::config(path, m))?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), String> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(format!("model name '{}' must be non-empty [A-Za-z0-9_-]", self.name));
        }
        if self.predictors.is_empty() && self.species_predictors.is_none() {
            return Err(format!("model '{}' has no predictors", self.name));
        }
        if self.kind == ModelKind::Panel && self.species_predictors.is_some() {
            return Err(format!("model '{}': species_predictors applies to region models only", self.name));
        }
        Ok(())
    }
}

/// Pearson correlation between two region-level columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSpec {
    pub name: String,
    #[serde(default = "default_zip")]
    pub region_kind: RegionKind,
    pub x: ColumnExpr,
    pub y: ColumnExpr,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplaintWindow {
    pub from: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
    #[serde(default)]
    pub by_period: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_radius")]
    pub buffer_radius_m: f64,
    /// Lowest severity counted as severe in the pollen score.
    #[serde(default = "default_severity")]
    pub severity_threshold: Severity,
    #[serde(default = "default_species_threshold")]
    pub species_threshold: f64,
    #[serde(default)]
    pub median_mode: MedianMode,
    #[serde(default = "default_zip")]
    pub species_region_kind: RegionKind,
    #[serde(default = "default_nta")]
    pub pollen_region_kind: RegionKind,
    #[serde(default)]
    pub parallelism: Parallelism,
    /// Recorded for fixtures; the analysis itself draws no random numbers.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub complaint_window: ComplaintWindow,
    pub datasets: Datasets,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub correlations: Vec<CorrelationSpec>,
}

impl RunConfig {
    /// Parses TOML; relative paths are taken against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        let d = &mut cfg.datasets;
        resolve(&mut d.trees);
        resolve(&mut d.taxonomy);
        d.regions.values_mut().for_each(resolve);
        for p in [&mut d.complaints, &mut d.sensors, &mut d.lots].into_iter().flatten() {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::config(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, base).map_err(|m| PipelineError::config(path, m))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.buffer_radius_m.is_finite() && self.buffer_radius_m > 0.0) {
            return Err(format!("buffer_radius_m must be positive, got {}", self.buffer_radius_m));
        }
        if !(self.species_threshold.is_finite() && self.species_threshold >= 0.0) {
            return Err(format!("species_threshold must be >= 0, got {}", self.species_threshold));
        }
        if self.severity_threshold == Severity::None {
            return Err("severity_threshold must be low, moderate or high".into());
        }
        if self.datasets.regions.is_empty() {
            return Err("datasets.regions needs at least one boundary file".into());
        }
        let mut seen = BTreeSet::new();
        for (label, path) in self.datasets.files() {
            if !seen.insert(path.to_path_buf()) {
                return Err(format!("dataset path {} is used twice (second use: {label})", path.display()));
            }
        }
        for kind in [self.species_region_kind, self.pollen_region_kind] {
            self.require_regions(kind, "analysis")?;
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            m.check()?;
            if !names.insert(m.name.as_str()) {
                return Err(format!("model name '{}' is used twice", m.name));
            }
            match m.kind {
                ModelKind::Ols => self.require_regions(m.region_kind, &m.name)?,
                ModelKind::Panel if self.datasets.sensors.is_none() => {
                    return Err(format!("panel model '{}' needs datasets.sensors", m.name));
                }
                ModelKind::Panel => {}
            }
        }
        for c in &self.correlations {
            if !names.insert(c.name.as_str()) {
                return Err(format!("name '{}' is used twice", c.name));
            }
            self.require_regions(c.region_kind, &c.name)?;
        }
        if let (Some(a), Some(b)) = (self.complaint_window.from, self.complaint_window.until) {
            if a >= b {
                return Err("complaint_window.from must precede until".into());
            }
        }
        Ok(())
    }

    fn require_regions(&self, kind: RegionKind, user: &str) -> Result<(), String> {
        if self.datasets.regions.contains_key(&kind) {
            Ok(())
        } else {
            Err(format!("{user}: no boundary file configured for region kind '{kind}'"))
        }
    }
}
