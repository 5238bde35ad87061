//! The declarative run configuration: a TOML file, then `--set key=value`
//! overrides, then the dedicated command-line flags (which are shorthands
//! for config keys).

use std::fs;
use std::path::{Path, PathBuf};

use msgnet::datakit::{Degradation, DegradationSpec, FogParams};
use msgnet::detector::{DetectorConfig, DetectorTrainSettings, OptimizerKind};
use msgnet::labels::SceneClass;
use msgnet::sgie::TrainSettings;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSON Lines annotations.
    pub annotations: Option<PathBuf>,
    /// Directory image paths are relative to; defaults to the directory of
    /// the annotation file.
    pub image_root: Option<PathBuf>,
    /// JSON Lines `(clean, degraded)` pairs, as written by `degrade`.
    pub pairs: Option<PathBuf>,
    /// JSON Lines predictions to score with `eval`.
    pub predictions: Option<PathBuf>,
    /// Train / validation / test ratios.
    pub split: [f64; 3],
    /// `[height, width]` every image is resized to.
    pub image_size: Option<[usize; 2]>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            annotations: None,
            image_root: None,
            pairs: None,
            predictions: None,
            split: [0.8, 0.1, 0.1],
            image_size: None,
        }
    }
}

/// Checkpoints read by a command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointPaths {
    pub scene: Option<PathBuf>,
    pub sgie: Option<PathBuf>,
    pub detector: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let d = DetectorTrainSettings::default();
        Self {
            epochs: 100,
            steps: None,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            optimizer: d.optimizer,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
        }
    }
}

impl TrainConfig {
    pub fn settings(&self, train_len: usize, seed: u64) -> DetectorTrainSettings {
        let per_epoch = train_len.div_ceil(self.batch_size.max(1));
        DetectorTrainSettings {
            steps: self.steps.unwrap_or(self.epochs * per_epoch),
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

/// Schedule of one enhancement training stage (Adam).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl StageConfig {
    pub fn settings(&self, seed: u64) -> TrainSettings {
        TrainSettings {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
        }
    }

    fn validate(&self, section: &str) -> CliResult<()> {
        if self.batch_size == 0 {
            return Err(CliError::config(format!("{section}.batch_size"), "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CliError::config(format!("{section}.learning_rate"), "must be positive"));
        }
        Ok(())
    }
}

fn scene_stage() -> StageConfig {
    StageConfig {
        steps: 150,
        batch_size: 32,
        learning_rate: 2e-3,
    }
}

fn enhancer_stage() -> StageConfig {
    StageConfig {
        steps: 200,
        batch_size: 16,
        learning_rate: 2e-3,
    }
}

fn default_degradation() -> DegradationSpec {
    DegradationSpec::new(
        Degradation::Fog(FogParams {
            beta: 1.0,
            airlight: 0.9,
            depth_near: 0.5,
            depth_far: 1.5,
        }),
        0,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub max_objects: usize,
    pub min_side: f64,
    pub scenes: Vec<SceneClass>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 8,
            width: 64,
            height: 64,
            max_objects: 3,
            min_side: 10.0,
            scenes: SceneClass::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DarklabelConfig {
    pub csv: Option<PathBuf>,
    /// Image path pattern; `{frame}` becomes the zero-padded frame number.
    pub image_template: String,
    pub width: u32,
    pub height: u32,
    pub scene: SceneClass,
}

impl Default for DarklabelConfig {
    fn default() -> Self {
        Self {
            csv: None,
            image_template: "frame_{frame}.png".into(),
            width: 1920,
            height: 1080,
            scene: SceneClass::Sunny,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Required by every command that draws random numbers.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub checkpoints: CheckpointPaths,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub scene: StageConfig,
    pub enhancer: StageConfig,
    pub degrade: DegradationSpec,
    pub synth: SynthConfig,
    pub darklabel: DarklabelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: PathBuf::from("runs/latest"),
            data: DataConfig::default(),
            checkpoints: CheckpointPaths::default(),
            detector: DetectorConfig::default(),
            train: TrainConfig::default(),
            scene: scene_stage(),
            enhancer: enhancer_stage(),
            degrade: default_degradation(),
            synth: SynthConfig::default(),
            darklabel: DarklabelConfig::default(),
        }
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(key, "malformed override key"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// A `[degrade]` table that omits `kind`, or names the default kind, takes
/// the default degradation's values for every key it leaves out, so single
/// parameters can be overridden on their own.
fn fill_degradation_defaults(table: &mut toml::Table) -> CliResult<()> {
    let Some(toml::Value::Table(user)) = table.get_mut("degrade") else {
        return Ok(());
    };
    let defaults = toml::Table::try_from(default_degradation())
        .map_err(|e| CliError::config("degrade", e.to_string()))?;
    if user.get("kind").is_some_and(|k| Some(k) != defaults.get("kind")) {
        return Ok(());
    }
    for (k, v) in defaults {
        user.entry(k).or_insert(v);
    }
    Ok(())
}

/// `KEY=VALUE` from `--set`.
pub fn parse_assignment(s: &str) -> CliResult<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::config(s, "override must look like key=value"))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

impl RunConfig {
    /// Builds the configuration: file, then overrides in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, toml::Value)]) -> CliResult<Self> {
        let mut table = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::config("config", format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            apply_override(&mut table, k, v.clone())?;
        }
        fill_degradation_defaults(&mut table)?;
        let config: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let field = e.path().to_string();
            CliError::config(if field == "." { "config".to_string() } else { field }, e.into_inner().to_string())
        })?;
        if file.is_some() && config.seed.is_none() {
            return Err(CliError::config("seed", "a configuration file must set `seed`"));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.detector.validate().map_err(|e| CliError::in_section(e, "detector"))?;
        self.degrade.validate().map_err(|e| match e {
            msgnet::Error::Config { field, reason } => {
                let hybrid = matches!(self.degrade.degradation, Degradation::LightFogHybrid { .. });
                let key = if hybrid { field.as_str() } else { field.rsplit('.').next().unwrap_or(&field) };
                CliError::config(format!("degrade.{key}"), reason)
            }
            other => other.into(),
        })?;
        self.scene.validate("scene")?;
        self.enhancer.validate("enhancer")?;
        self.train
            .settings(1, 0)
            .validate()
            .map_err(|e| CliError::in_section(e, "train"))?;
        let s = self.data.split;
        if s.iter().any(|&r| !(r > 0.0 && r.is_finite())) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CliError::config("data.split", format!("ratios must be positive and sum to 1, got {s:?}")));
        }
        if let Some([h, w]) = self.data.image_size {
            let m = self.detector.max_stride();
            if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
                return Err(CliError::config(
                    "data.image_size",
                    format!("{h}x{w} must be a positive multiple of the largest stride {m}"),
                ));
            }
        }
        let paths = [
            ("data.annotations", &self.data.annotations),
            ("data.image_root", &self.data.image_root),
            ("data.pairs", &self.data.pairs),
            ("data.predictions", &self.data.predictions),
            ("checkpoints.scene", &self.checkpoints.scene),
            ("checkpoints.sgie", &self.checkpoints.sgie),
            ("checkpoints.detector", &self.checkpoints.detector),
            ("darklabel.csv", &self.darklabel.csv),
        ];
        for (field, p) in paths {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(CliError::config(field, format!("{} does not exist", p.display())));
                }
            }
        }
        if self.synth.count == 0 || self.synth.width == 0 || self.synth.height == 0 || self.synth.scenes.is_empty() {
            return Err(CliError::config("synth", "count, size and scenes must be non-empty"));
        }
        Ok(())
    }

    pub fn require_seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::config("seed", "this command needs a seed (`seed = N` or --seed)"))
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, field: &str) -> CliResult<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| CliError::config(field, "required by this command"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(text: &str, overrides: &[&str]) -> CliResult<RunConfig> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, text).unwrap();
        let o: Vec<_> = overrides.iter().map(|s| parse_assignment(s).unwrap()).collect();
        RunConfig::load(Some(&p), &o)
    }

    fn field_of(e: CliError) -> String {
        match e {
            CliError::Config { field, .. } => field,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn defaults_and_overrides() {
        let c = load_str("seed = 3\n[train]\nbatch_size = 4\n", &["detector.use_pld=false", "train.steps=7"]).unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.train.steps, Some(7));
        assert!(!c.detector.use_pld);
        assert_eq!(c.train.learning_rate, 1e-4);
        assert_eq!(c.train.optimizer, OptimizerKind::Sgd);
        assert_eq!(c.train.settings(10, 1).steps, 7);
        let d = load_str("seed = 1", &["output_dir=out/x"]).unwrap();
        assert_eq!(d.output_dir, PathBuf::from("out/x"));
        assert_eq!(d.train.settings(33, 0).steps, 100 * 3);
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(load_str("[train]\nbatch_size = 4\n", &[]).unwrap_err()), "seed");
        assert_eq!(field_of(load_str("seed = 1\n[detector]\nwidths = [8]\n", &[]).unwrap_err()), "detector.widths");
        assert_eq!(field_of(load_str("seed = 1\n[detector]\nbogus = 1\n", &[]).unwrap_err()), "detector.bogus");
        assert_eq!(field_of(load_str("seed = 1", &["train.batch_size=\"x\""]).unwrap_err()), "train.batch_size");
        assert_eq!(field_of(load_str("seed = 1", &["degrade.beta=-1"]).unwrap_err()), "degrade.beta");
        assert_eq!(field_of(load_str("seed = 1", &["data.split=[0.5, 0.5, 0.5]"]).unwrap_err()), "data.split");
        assert_eq!(
            field_of(load_str("seed = 1", &["data.annotations=/no/such/file"]).unwrap_err()),
            "data.annotations"
        );
        assert_eq!(field_of(load_str("seed = 1", &["data.image_size=[40, 64]"]).unwrap_err()), "data.image_size");
    }

    #[test]
    fn degradation_kind_is_switchable() {
        let c = load_str(
            "seed = 1\n[degrade]\nkind = \"rain\"\nstreaks = 10\nlength = 5.0\nangle = 10.0\nopacity = 0.5\n",
            &[],
        )
        .unwrap();
        assert!(matches!(c.degrade.degradation, Degradation::Rain(_)));
        let c = load_str("seed = 1", &["degrade.beta=0.25"]).unwrap();
        match c.degrade.degradation {
            Degradation::Fog(f) => assert_eq!((f.beta, f.airlight), (0.25, 0.9)),
            other => panic!("expected fog, got {other:?}"),
        }
    }
}
