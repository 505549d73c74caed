//! Run configuration: defaults, TOML/JSON loading, flag overrides and
//! validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use refracta::costvol::SearchConfig;
use refracta::fuse::FusionStrategy;
use refracta::refine::RefineConfig;
use refracta::surface::{DeformConfig, PoissonConfig};
use refracta::synth::{DatasetConfig, EnvSource, DEFAULT_IOR};
use serde::{Deserialize, Serialize};

/// A configuration problem tied to one key (dotted path, e.g. `hull.resolution`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HullConfig {
    pub resolution: usize,
    /// Loop subdivision steps applied to the marching-cubes surface.
    pub subdivisions: usize,
    /// Smooth the occupancy field before polygonizing.
    pub smooth: bool,
}

impl Default for HullConfig {
    fn default() -> Self {
        HullConfig {
            resolution: refracta::hull::DEFAULT_RESOLUTION,
            subdivisions: 1,
            smooth: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseConfig {
    pub strategy: FusionStrategy,
    /// Points sampled on the hull.
    pub points: usize,
}

impl Default for FuseConfig {
    fn default() -> Self {
        FuseConfig {
            strategy: FusionStrategy::Re,
            points: 20_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructMethod {
    Poisson,
    Deform,
}

impl FromStr for ReconstructMethod {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "poisson" => Ok(ReconstructMethod::Poisson),
            "deform" => Ok(ReconstructMethod::Deform),
            _ => Err(ConfigError::new(
                "reconstruct.method",
                format!("unknown method {s:?} (poisson, deform)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub method: ReconstructMethod,
    pub poisson: PoissonConfig,
    pub deform: DeformConfig,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            method: ReconstructMethod::Poisson,
            poisson: PoissonConfig::default(),
            deform: DeformConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Surface samples per mesh for the Chamfer and Metro distances.
    pub samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: refracta::metrics::DEFAULT_SAMPLES,
        }
    }
}

/// Everything a run needs. `threads` is excluded from hashes: results do
/// not depend on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed for hull sampling and evaluation.
    pub seed: u64,
    /// Index of refraction assumed during reconstruction.
    pub ior: f64,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    /// Existing scene bundle; when absent the pipeline generates one.
    pub scene: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub hull: HullConfig,
    pub search: SearchConfig,
    pub refine: RefineConfig,
    pub fuse: FuseConfig,
    pub reconstruct: ReconstructConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            ior: DEFAULT_IOR,
            threads: None,
            scene: None,
            dataset: DatasetConfig::default(),
            hull: HullConfig::default(),
            search: SearchConfig::default(),
            refine: RefineConfig::default(),
            fuse: FuseConfig::default(),
            reconstruct: ReconstructConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ior: Option<f64>,
    pub views: Option<usize>,
    pub threads: Option<usize>,
}

impl Config {
    /// Reads a TOML file, or JSON when the extension is `.json`. Relative
    /// paths inside are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = if is_json {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("config", one_line(&e.to_string())))?;
        serde_path_to_error::deserialize(de).map_err(|e| path_error(&e.path().to_string(), e.inner()))
    }

    pub fn from_json(text: &str) -> Result<Config, ConfigError> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| path_error(&e.path().to_string(), e.inner()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(s) = &mut self.scene {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        if let EnvSource::File { path } = &mut self.dataset.env {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    /// A seed override also replaces the dataset seeds.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
            self.dataset.seeds = vec![s];
        }
        if let Some(ior) = o.ior {
            self.ior = ior;
        }
        if let Some(v) = o.views {
            self.dataset.views = v;
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
    }

    /// Checks ranges and referenced files. `generates` says whether the run
    /// will synthesize a dataset (and so needs the dataset section).
    pub fn validate(&self, generates: bool) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: String| Err(ConfigError::new(key, msg));
        if !(self.ior.is_finite() && self.ior > 1.0) {
            return bad("ior", format!("must exceed 1, got {}", self.ior));
        }
        if self.threads == Some(0) {
            return bad("threads", "must be at least 1".into());
        }
        if self.hull.resolution < 16 {
            return bad("hull.resolution", format!("must be at least 16, got {}", self.hull.resolution));
        }
        if self.search.k == 0 {
            return bad("search.K", "must be at least 1".into());
        }
        if !(self.refine.step > 0.0) {
            return bad("refine.step", format!("must be positive, got {}", self.refine.step));
        }
        if self.fuse.points == 0 {
            return bad("fuse.points", "must be positive".into());
        }
        if self.eval.samples == 0 {
            return bad("eval.samples", "must be positive".into());
        }
        if self.reconstruct.poisson.resolution < 8 {
            return bad("reconstruct.poisson.resolution", "must be at least 8".into());
        }
        if let Some(scene) = &self.scene {
            if !scene.join(refracta::synth::MANIFEST).is_file() {
                return bad("scene", format!("no scene manifest under {}", scene.display()));
            }
        }
        if generates {
            let d = &self.dataset;
            if d.seeds.is_empty() {
                return bad("dataset.seeds", "at least one seed is required".into());
            }
            if d.views < 2 {
                return bad("dataset.views", format!("at least 2 views are required, got {}", d.views));
            }
            if !(d.ior.is_finite() && d.ior >= 1.0) {
                return bad("dataset.ior", format!("must be at least 1, got {}", d.ior));
            }
            if d.rig.width == 0 || d.rig.height == 0 {
                return bad("dataset.rig", "image size must be positive".into());
            }
            if let EnvSource::File { path } = &d.env {
                if !path.is_file() {
                    return bad("dataset.env.path", format!("environment map not found: {}", path.display()));
                }
            }
        }
        Ok(())
    }
}

fn path_error(path: &str, inner: &dyn fmt::Display) -> ConfigError {
    let key = if path.is_empty() || path == "." { "config" } else { path };
    ConfigError::new(key, one_line(&inner.to_string()))
}

pub(crate) fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn nested_type_error_names_the_key() {
        let e = Config::from_toml("[hull]\nresolution = \"big\"\n").unwrap_err();
        assert_eq!(e.key, "hull.resolution");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let e = Config::from_json(r#"{"refine": {"stepsize": 1}}"#).unwrap_err();
        assert!(e.key.starts_with("refine"), "{e}");
        assert!(e.message.contains("stepsize"));
    }

    #[test]
    fn missing_env_file_names_the_key() {
        let cfg = Config::from_toml("[dataset.env]\ntype = \"file\"\npath = \"/nonexistent/env.pfm\"\n").unwrap();
        let e = cfg.validate(true).unwrap_err();
        assert_eq!(e.key, "dataset.env.path");
        assert!(cfg.validate(false).is_ok());
    }

    #[test]
    fn seed_override_replaces_dataset_seeds() {
        let mut cfg = Config::default();
        cfg.dataset.seeds = vec![1, 2, 3];
        cfg.apply(&Overrides {
            seed: Some(9),
            ..Default::default()
        });
        assert_eq!(cfg.dataset.seeds, vec![9]);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn threads_do_not_enter_the_serialization() {
        let mut a = Config::default();
        a.threads = Some(8);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&Config::default()).unwrap()
        );
    }
}
