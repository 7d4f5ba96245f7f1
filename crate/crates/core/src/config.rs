//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! seed = 7
//! dataset.samples = 640
//! fusion.beta = 0.8
//! eval.kinds = even,rgb
//! ```
//!
//! Keys are dotted `section.name` strings. Unknown keys are rejected with the
//! list of valid ones. `out` names the output directory; it is not part of the
//! resolved configuration, so two runs of the same configuration into
//! different directories get the same run id.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::depth::{DepthConfig, InputKind};
use crate::enhance::{EnhancerConfig, EnhancerKind};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::nn::TrainSettings;
use crate::seed::derive_seed;
use crate::synthcam::dataset::DatasetConfig;
use crate::synthcam::weather::WeatherKind;

/// Every key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("dataset.samples", "640"),
    ("dataset.width", "64"),
    ("dataset.height", "64"),
    ("dataset.max_objects", "5"),
    ("dataset.depth_min", "2"),
    ("dataset.depth_max", "50"),
    ("dataset.weather", "clear:0.25,rain:0.25,fog:0.25,rain_and_fog:0.25"),
    ("dataset.split", "0.7,0.15,0.15"),
    ("dataset.threshold", "0.4"),
    ("dataset.window", "0.125"),
    ("dataset.night_gain", "0.06,0.2"),
    ("dataset.night_gamma", "1.4,2.2"),
    ("dataset.noise_sigma", "0.01,0.03"),
    ("dataset.exposure_frames", "1"),
    ("enhancer.kind", "analytic"),
    ("enhancer.gamma_target", "2.2"),
    ("enhancer.unet_channels", "16"),
    ("enhancer.epochs", "10"),
    ("enhancer.batch_size", "4"),
    ("enhancer.lr", "0.001"),
    ("enhancer.weight_decay", "0.0001"),
    ("enhancer.train_samples", "64"),
    ("fusion.channels", "32"),
    ("fusion.compact_dim", "16"),
    ("fusion.beta", "0.8"),
    ("fusion.epochs", "20"),
    ("fusion.batch_size", "4"),
    ("fusion.lr", "0.001"),
    ("fusion.weight_decay", "0.001"),
    ("fusion.step_size", "5"),
    ("fusion.decay", "0.5"),
    ("fusion.train_samples", "64"),
    ("depth.widths", "16,32,64"),
    ("depth.lambda", "0.5"),
    ("depth.epochs", "40"),
    ("depth.batch_size", "4"),
    ("depth.lr", "0.0001"),
    ("depth.weight_decay", "0.0001"),
    ("depth.step_size", "20"),
    ("depth.decay", "0.5"),
    ("depth.train_samples", "0"),
    ("depth.checkpoint", "best_val"),
    ("eval.kinds", "even"),
];

pub const OUT_KEY: &str = "out";
pub const DEFAULT_OUT: &str = "runs";

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn valid_keys() -> String {
    let mut keys: Vec<&str> = DEFAULTS.iter().map(|(k, _)| *k).collect();
    keys.push(OUT_KEY);
    keys.join(", ")
}

/// Fully resolved configuration: defaults, then the file, then overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            out: PathBuf::from(DEFAULT_OUT),
        }
    }
}

/// Parses `key = value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`, got {raw:?}", ln + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == OUT_KEY {
            self.out = PathBuf::from(value);
            return Ok(());
        }
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(config_err(format!(
                "unknown config key {key:?}; valid keys: {}",
                valid_keys()
            ))),
        }
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| config_err(format!("override {pair:?} is not `key=value`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unknown key {key}"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)
            .parse()
            .map_err(|_| config_err(format!("{key}: cannot parse {:?}", self.get(key))))
    }

    /// `lo,hi` pair, drawn from uniformly per sample.
    fn range(&self, key: &str) -> Result<(f64, f64)> {
        let bad = || config_err(format!("{key}: expected lo,hi, got {:?}", self.get(key)));
        let (lo, hi) = self.get(key).split_once(',').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(bad());
        }
        Ok((lo, hi))
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    /// Seed for one pipeline stage, derived from the global seed.
    pub fn stage_seed(&self, stage: &str) -> Result<u64> {
        Ok(derive_seed(self.seed()?, stage))
    }

    pub fn depth_range(&self) -> Result<(f64, f64)> {
        Ok((self.parse("dataset.depth_min")?, self.parse("dataset.depth_max")?))
    }

    pub fn dataset(&self) -> Result<DatasetConfig> {
        let mut weather_mix = Vec::new();
        for part in self
            .get("dataset.weather")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            let (k, w) = part
                .split_once(':')
                .ok_or_else(|| config_err(format!("dataset.weather: expected kind:weight, got {part:?}")))?;
            let kind: WeatherKind = k.trim().parse().map_err(|e: Error| config_err(e.to_string()))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| config_err(format!("dataset.weather: bad weight {w:?}")))?;
            weather_mix.push((kind, w));
        }
        let split: Vec<f64> = self
            .get("dataset.split")
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| config_err("dataset.split: expected three comma-separated fractions"))?;
        if split.len() != 3 {
            return Err(config_err("dataset.split: expected three comma-separated fractions"));
        }
        Ok(DatasetConfig {
            samples: self.parse("dataset.samples")?,
            width: self.parse("dataset.width")?,
            height: self.parse("dataset.height")?,
            max_objects: self.parse("dataset.max_objects")?,
            depth_range: self.depth_range()?,
            weather_mix,
            split_fractions: [split[0], split[1], split[2]],
            seed: self.stage_seed("dataset")?,
            threshold: self.parse("dataset.threshold")?,
            window: self.parse("dataset.window")?,
            night_gain: self.range("dataset.night_gain")?,
            night_gamma: self.range("dataset.night_gamma")?,
            noise_sigma: self.range("dataset.noise_sigma")?,
            exposure_frames: self.parse("dataset.exposure_frames")?,
            ..DatasetConfig::default()
        })
    }

    fn train(&self, section: &str, seed_label: &str) -> Result<TrainSettings> {
        let key = |k: &str| format!("{section}.{k}");
        let has = |k: &str| self.values.contains_key(&key(k));
        Ok(TrainSettings {
            epochs: self.parse(&key("epochs"))?,
            batch_size: self.parse(&key("batch_size"))?,
            lr: self.parse(&key("lr"))?,
            weight_decay: self.parse(&key("weight_decay"))?,
            step_size: if has("step_size") {
                self.parse(&key("step_size"))?
            } else {
                0
            },
            decay: if has("decay") { self.parse(&key("decay"))? } else { 1.0 },
            seed: self.stage_seed(seed_label)?,
        })
    }

    pub fn enhancer(&self) -> Result<EnhancerConfig> {
        Ok(EnhancerConfig {
            kind: self
                .get("enhancer.kind")
                .parse::<EnhancerKind>()
                .map_err(|e| config_err(e.to_string()))?,
            gamma_target: self.parse("enhancer.gamma_target")?,
            unet_channels: self.parse("enhancer.unet_channels")?,
        })
    }

    pub fn enhancer_train(&self) -> Result<TrainSettings> {
        self.train("enhancer", "enhancer")
    }

    pub fn fusion(&self, kind: InputKind) -> Result<FusionConfig> {
        Ok(FusionConfig {
            channels: self.parse("fusion.channels")?,
            compact_dim: self.parse("fusion.compact_dim")?,
            beta: self.parse("fusion.beta")?,
            train: self.train("fusion", &format!("fusion-{}", kind.tag()))?,
        })
    }

    pub fn depth(&self, kind: InputKind) -> Result<DepthConfig> {
        let widths: Vec<usize> = self
            .get("depth.widths")
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| config_err("depth.widths: expected comma-separated integers"))?;
        Ok(DepthConfig {
            widths,
            depth_range: self.depth_range()?,
            lambda: self.parse("depth.lambda")?,
            train: self.train("depth", &format!("depth-{}", kind.tag()))?,
            best_val: match self.get("depth.checkpoint") {
                "best_val" => true,
                "last" => false,
                v => {
                    return Err(config_err(format!(
                        "depth.checkpoint: expected best_val or last, got {v:?}"
                    )))
                }
            },
        })
    }

    pub fn train_samples(&self, section: &str) -> Result<usize> {
        self.parse(&format!("{section}.train_samples"))
    }

    pub fn eval_kinds(&self) -> Result<Vec<InputKind>> {
        InputKind::parse_list(self.get("eval.kinds")).map_err(|e| config_err(format!("eval.kinds: {e}")))
    }

    /// Checks every section; failures are reported as configuration errors.
    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>| {
            r.map_err(|e| {
                if let Error::Config(_) = e {
                    e
                } else {
                    config_err(e.to_string())
                }
            })
        };
        self.seed()?;
        let ds = self.dataset()?;
        wrap(ds.validate())?;
        wrap(self.enhancer()?.validate())?;
        wrap(self.enhancer_train()?.validate())?;
        self.train_samples("enhancer")?;
        self.train_samples("fusion")?;
        self.train_samples("depth")?;
        self.eval_kinds()?;
        for &k in InputKind::ALL.iter() {
            wrap(self.fusion(k)?.validate())?;
            wrap(self.depth(k)?.validate())?;
        }
        let m = 1usize << self.depth(InputKind::Rgb)?.widths.len();
        if ds.width % m != 0 || ds.height % m != 0 || ds.width % 4 != 0 || ds.height % 4 != 0 {
            return Err(config_err(format!(
                "dataset resolution {}×{} must be divisible by {}",
                ds.width,
                ds.height,
                m.max(4)
            )));
        }
        Ok(())
    }

    /// Resolved configuration text; replaying it reproduces the run.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Short hash of the resolved configuration.
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}
