//! Run configuration: line-oriented `key = value` text with dotted keys.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected so typos surface before any work starts. Every key has a
//! default except `optim.seed`, which must come from the file or the
//! command line. [`RunConfig::to_text`] writes the complete resolved
//! configuration in a canonical order; its SHA-256 is the config hash
//! stored in checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hdrfuse_core::datagen::{CaptureMode, CaptureSchedule, RenderConfig, SampleConfig, SceneConfig};
use hdrfuse_core::imaging::{CameraResponse, ExposureSet, NoiseLevels, ToneMapParams};
use hdrfuse_core::losses::LossWeights;
use hdrfuse_core::model::ModelConfig;
use hdrfuse_core::stage1::{GateMode, Stage1Config};
use hdrfuse_core::stage2::Stage2Config;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: cannot parse {value:?}: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("`optim.seed` is required (set it in the config or pass --seed)")]
    MissingSeed,
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Every recognised key with its default value, in canonical order.
/// An empty default means "unset".
pub const KEYS: &[(&str, &str)] = &[
    ("model.c", "32"),
    ("model.c_prime", "48"),
    ("model.k", "2"),
    ("model.gate", "tpa"),
    ("model.linearized_input", "false"),
    ("model.max_radiance", "16"),
    ("schedule.mode", "fixed_reference"),
    ("schedule.t", "5"),
    ("schedule.anchors_per_window", "1"),
    ("schedule.anchor_timestamp", "3"),
    ("schedule.pair_b_timestamp", "1"),
    ("schedule.stops", "2"),
    ("noise.low", "0.03"),
    ("noise.mid", "0.01"),
    ("noise.high", "0.005"),
    ("camera.gamma", "2.2"),
    ("loss.kappa", "5000"),
    ("loss.lambda_t", "0.5"),
    ("loss.lambda_z", "0.1"),
    ("optim.lr_initial", "1e-4"),
    ("optim.lr_final", "1e-6"),
    ("optim.batch_size", "2"),
    ("optim.max_steps", "1000"),
    ("optim.seed", ""),
    ("optim.checkpoint_every", "0"),
    ("optim.log_every", "10"),
    ("data.manifest", ""),
    ("data.patch", "64"),
    ("data.rotate", "true"),
    ("data.synthetic.windows", "8"),
    ("data.synthetic.height", "96"),
    ("data.synthetic.width", "96"),
    ("data.synthetic.frames", "7"),
    ("data.synthetic.motion", "1.5"),
    ("data.synthetic.objects", "4"),
    ("data.synthetic.peak", "12"),
    ("eval.seed", "0"),
    ("paths.checkpoint_dir", "checkpoints"),
    ("paths.report_dir", "reports"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: CaptureSchedule,
    pub pair_b_timestamp: usize,
    pub render: RenderConfig,
    pub weights: LossWeights,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub log_every: usize,
    /// Window directories to train on; synthetic scenes when absent.
    pub manifest: Option<PathBuf>,
    pub patch: Option<usize>,
    pub rotate: bool,
    pub synthetic_windows: usize,
    pub scene: SceneConfig,
    pub eval_seed: u64,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

fn parse_lines(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            return Err(ConfigError::Syntax { line, text: t.to_string() });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line, text: t.to_string() });
        }
        if !KEYS.iter().any(|(key, _)| *key == k) {
            return Err(ConfigError::UnknownKey { line, key: k.to_string() });
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::Duplicate { line, key: k.to_string() });
        }
    }
    Ok(map)
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn raw(&self, key: &str) -> &str {
        self.0
            .get(key)
            .map(String::as_str)
            .or_else(|| KEYS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d))
            .expect("key is listed in KEYS")
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e: T::Err| ConfigError::Value {
            key: key.to_string(),
            value: v.to_string(),
            reason: e.to_string(),
        })
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

impl RunConfig {
    /// Parse config text; `seed` overrides `optim.seed`.
    pub fn parse(text: &str, seed: Option<u64>) -> Result<Self, ConfigError> {
        let v = Values(parse_lines(text)?);
        let seed = match seed {
            Some(s) => s,
            None => v.optional("optim.seed")?.ok_or(ConfigError::MissingSeed)?,
        };
        let tone = ToneMapParams::new(v.get("loss.kappa")?).map_err(invalid)?;
        let response = CameraResponse::new(v.get("camera.gamma")?).map_err(invalid)?;
        let model = ModelConfig {
            stage1: Stage1Config {
                width: v.get("model.c")?,
                linearized_input: v.get("model.linearized_input")?,
                gate: v.get::<GateMode>("model.gate")?,
                max_radiance: v.get("model.max_radiance")?,
                tone,
                response,
            },
            stage2: Stage2Config {
                width: v.get("model.c_prime")?,
                blocks: v.get("model.k")?,
                tone,
            },
        };
        if model.stage1.width == 0 || model.stage2.width == 0 {
            return Err(invalid("model widths must be positive"));
        }
        if !(model.stage1.max_radiance > 0.0 && model.stage1.max_radiance.is_finite()) {
            return Err(invalid("model.max_radiance must be positive"));
        }
        let schedule = CaptureSchedule::new(
            v.get::<CaptureMode>("schedule.mode")?,
            v.get("schedule.t")?,
            v.get("schedule.anchors_per_window")?,
            Some(v.get("schedule.anchor_timestamp")?),
            ExposureSet::from_stops(v.get("schedule.stops")?),
        )
        .map_err(invalid)?;
        let noise = NoiseLevels {
            low: v.get("noise.low")?,
            mid: v.get("noise.mid")?,
            high: v.get("noise.high")?,
        };
        if [noise.low, noise.mid, noise.high].iter().any(|s| !(*s >= 0.0)) {
            return Err(invalid("noise levels must be >= 0"));
        }
        let weights = LossWeights::new(v.get("loss.lambda_t")?, v.get("loss.lambda_z")?).map_err(invalid)?;
        let (lr_initial, lr_final): (f64, f64) = (v.get("optim.lr_initial")?, v.get("optim.lr_final")?);
        if !(lr_initial > 0.0 && lr_final > 0.0 && lr_final <= lr_initial) {
            return Err(invalid("learning rates must satisfy 0 < lr_final <= lr_initial"));
        }
        let batch_size: usize = v.get("optim.batch_size")?;
        if batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        let pair_b_timestamp: usize = v.get("schedule.pair_b_timestamp")?;
        if pair_b_timestamp == 0 || pair_b_timestamp > schedule.frames {
            return Err(invalid(format!("schedule.pair_b_timestamp must be in 1..={}", schedule.frames)));
        }
        let patch: usize = v.get("data.patch")?;
        let scene = SceneConfig {
            height: v.get("data.synthetic.height")?,
            width: v.get("data.synthetic.width")?,
            frames: v.get("data.synthetic.frames")?,
            motion: v.get("data.synthetic.motion")?,
            objects: v.get("data.synthetic.objects")?,
            peak: v.get("data.synthetic.peak")?,
        };
        Ok(Self {
            model,
            schedule,
            pair_b_timestamp,
            render: RenderConfig { noise, response },
            weights,
            lr_initial,
            lr_final,
            batch_size,
            max_steps: v.get("optim.max_steps")?,
            seed,
            checkpoint_every: v.get("optim.checkpoint_every")?,
            log_every: v.get("optim.log_every")?,
            manifest: v.optional::<String>("data.manifest")?.map(PathBuf::from),
            patch: (patch > 0).then_some(patch),
            rotate: v.get("data.rotate")?,
            synthetic_windows: v.get("data.synthetic.windows")?,
            scene,
            eval_seed: v.get("eval.seed")?,
            checkpoint_dir: PathBuf::from(v.get::<String>("paths.checkpoint_dir")?),
            report_dir: PathBuf::from(v.get::<String>("paths.report_dir")?),
        })
    }

    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, seed)?;
        // Relative paths in a config file resolve against the file's directory.
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        cfg.manifest = cfg.manifest.as_deref().map(resolve);
        cfg.checkpoint_dir = resolve(&cfg.checkpoint_dir);
        cfg.report_dir = resolve(&cfg.report_dir);
        Ok(cfg)
    }

    /// Complete configuration in canonical key order.
    pub fn to_text(&self) -> String {
        let s1 = &self.model.stage1;
        let s2 = &self.model.stage2;
        let sc = &self.schedule;
        let n = &self.render.noise;
        let values: Vec<String> = vec![
            s1.width.to_string(),
            s2.width.to_string(),
            s2.blocks.to_string(),
            s1.gate.to_string(),
            s1.linearized_input.to_string(),
            s1.max_radiance.to_string(),
            sc.mode.to_string(),
            sc.frames.to_string(),
            sc.anchors_per_window.to_string(),
            sc.anchor_timestamp.to_string(),
            self.pair_b_timestamp.to_string(),
            sc.exposures.high.log2().to_string(),
            n.low.to_string(),
            n.mid.to_string(),
            n.high.to_string(),
            self.render.response.gamma().to_string(),
            s1.tone.kappa().to_string(),
            self.weights.lambda_t.to_string(),
            self.weights.lambda_z.to_string(),
            self.lr_initial.to_string(),
            self.lr_final.to_string(),
            self.batch_size.to_string(),
            self.max_steps.to_string(),
            self.seed.to_string(),
            self.checkpoint_every.to_string(),
            self.log_every.to_string(),
            self.manifest.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            self.patch.unwrap_or(0).to_string(),
            self.rotate.to_string(),
            self.synthetic_windows.to_string(),
            self.scene.height.to_string(),
            self.scene.width.to_string(),
            self.scene.frames.to_string(),
            self.scene.motion.to_string(),
            self.scene.objects.to_string(),
            self.scene.peak.to_string(),
            self.eval_seed.to_string(),
            self.checkpoint_dir.display().to_string(),
            self.report_dir.display().to_string(),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        let mut out = String::new();
        for ((k, _), v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of the model-relevant part of the canonical text (paths and
    /// step budgets excluded, so moving a run does not change its hash).
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for line in self.to_text().lines() {
            if !(line.starts_with("paths.") || line.starts_with("data.manifest") || line.starts_with("optim.")) {
                h.update(line.as_bytes());
                h.update(b"\n");
            }
        }
        h.finalize().into()
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            render: self.render.clone(),
            patch: self.patch,
            rotate: self.rotate,
            pair_b_timestamp: self.pair_b_timestamp,
        }
    }

    /// Cosine decay from `lr_initial` at step 0 towards `lr_final`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.max_steps == 0 {
            return self.lr_initial;
        }
        let progress = (step as f64 / self.max_steps as f64).min(1.0);
        self.lr_final + 0.5 * (self.lr_initial - self.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_need_only_a_seed() {
        assert!(matches!(RunConfig::parse("", None), Err(ConfigError::MissingSeed)));
        let c = RunConfig::parse("optim.seed = 7\n", None).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!((c.model.stage1.width, c.model.stage2.width, c.model.stage2.blocks), (32, 48, 2));
        assert_eq!(RunConfig::parse("optim.seed = 7", Some(9)).unwrap().seed, 9);
    }

    #[test]
    fn errors_name_the_problem() {
        let e = RunConfig::parse("optim.seed = 1\nmodel.cc = 3\n", None).unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey { line: 2, .. }));
        assert!(matches!(RunConfig::parse("optim.seed 1", None), Err(ConfigError::Syntax { .. })));
        assert!(matches!(
            RunConfig::parse("optim.seed = 1\noptim.seed = 2", None),
            Err(ConfigError::Duplicate { .. })
        ));
        assert!(matches!(RunConfig::parse("optim.seed = x", None), Err(ConfigError::Value { .. })));
        assert!(RunConfig::parse("optim.seed = 1\nschedule.anchor_timestamp = 6", None).is_err());
        assert!(RunConfig::parse("optim.seed = 1\nmodel.gate = maybe", None).is_err());
        assert!(RunConfig::parse("optim.seed = 1\noptim.lr_final = 1", None).is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = RunConfig::parse("optim.seed = 3\nmodel.c = 8\n# note\nnoise.mid = 0\ndata.manifest = m.txt\n", None).unwrap();
        let again = RunConfig::parse(&c.to_text(), None).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), c.to_text());
        assert_eq!(again.hash(), c.hash());
        let other = RunConfig::parse("optim.seed = 3\nmodel.c = 16\n", None).unwrap();
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = RunConfig::parse("optim.seed = 0\noptim.max_steps = 100", None).unwrap();
        assert_eq!(c.learning_rate(0), 1e-4);
        assert!((c.learning_rate(100) - 1e-6).abs() < 1e-18);
        assert!((c.learning_rate(50) - (1e-6 + 0.5 * (1e-4 - 1e-6))).abs() < 1e-15);
        assert!(c.learning_rate(30) > c.learning_rate(31));
    }
}
