//! `key = value` run configuration.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stegnet_core::data::Augmentation;
use stegnet_core::train::TrainConfig;
use stegnet_core::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub augmentation: Augmentation,
    pub train: TrainConfig,
}

const KEYS: &[&str] = &[
    "manifest",
    "out_dir",
    "augmentation",
    "lr0",
    "lr_decay_epochs",
    "lr_decay_factor",
    "momentum",
    "weight_decay",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "freeze_srm",
    "activation_mode",
];

fn value<T: FromStr>(key: &str, raw: &str, line: usize) -> Result<T, Error> {
    raw.parse()
        .map_err(|_| Error::InvalidConfig(format!("line {line}: cannot parse `{raw}` as a value for `{key}`")))
}

fn bool_value(key: &str, raw: &str, line: usize) -> Result<bool, Error> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("line {line}: `{key}` expects true or false, got `{raw}`"))),
    }
}

impl RunConfig {
    /// Parses a config; relative paths resolve against `base_dir`.
    /// Keys missing from the text keep their defaults, except `manifest`
    /// and `out_dir`, which are required.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, Error> {
        let mut train = TrainConfig::default();
        let mut manifest = None;
        let mut out_dir = None;
        let mut augmentation = Augmentation::None;
        let mut seen = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, raw) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::InvalidConfig(format!("line {line}: expected `key = value`, got `{content}`")))?;
            if !KEYS.contains(&key) {
                return Err(Error::InvalidConfig(format!(
                    "line {line}: unknown key `{key}`; known keys: {}",
                    KEYS.join(", ")
                )));
            }
            if seen.contains(&key) {
                return Err(Error::InvalidConfig(format!("line {line}: `{key}` is set twice")));
            }
            seen.push(key);
            match key {
                "manifest" => manifest = Some(base_dir.join(raw)),
                "out_dir" => out_dir = Some(base_dir.join(raw)),
                "augmentation" => augmentation = raw.parse()?,
                "lr0" => train.lr0 = value(key, raw, line)?,
                "lr_decay_epochs" => {
                    train.lr_decay_epochs = raw
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| value(key, s, line))
                        .collect::<Result<_, _>>()?
                }
                "lr_decay_factor" => train.lr_decay_factor = value(key, raw, line)?,
                "momentum" => train.momentum = value(key, raw, line)?,
                "weight_decay" => train.weight_decay = value(key, raw, line)?,
                "batch_size" => train.batch_size = value(key, raw, line)?,
                "max_epochs" => train.max_epochs = value(key, raw, line)?,
                "patience" => train.patience = value(key, raw, line)?,
                "seed" => train.seed = value(key, raw, line)?,
                "freeze_srm" => train.freeze_srm = bool_value(key, raw, line)?,
                "activation_mode" => train.activation_mode = raw.parse()?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        let missing = |k: &str| Error::InvalidConfig(format!("required key `{k}` is missing"));
        let cfg = Self {
            manifest: manifest.ok_or_else(|| missing("manifest"))?,
            out_dir: out_dir.ok_or_else(|| missing("out_dir"))?,
            augmentation,
            train,
        };
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Every key with its effective value, readable back by [`RunConfig::parse`].
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.train;
        let mut s = String::new();
        let decay: Vec<String> = t.lr_decay_epochs.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "manifest = {}", self.manifest.display());
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "augmentation = {}", self.augmentation);
        let _ = writeln!(s, "lr0 = {}", t.lr0);
        let _ = writeln!(s, "lr_decay_epochs = {}", decay.join(","));
        let _ = writeln!(s, "lr_decay_factor = {}", t.lr_decay_factor);
        let _ = writeln!(s, "momentum = {}", t.momentum);
        let _ = writeln!(s, "weight_decay = {}", t.weight_decay);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "max_epochs = {}", t.max_epochs);
        let _ = writeln!(s, "patience = {}", t.patience);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "freeze_srm = {}", t.freeze_srm);
        let _ = writeln!(s, "activation_mode = {}", t.activation_mode);
        f.write_str(&s)
    }
}
