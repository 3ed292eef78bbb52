//! Run settings resolved from defaults, an optional flat `key = value`
//! config file, `--set key=value` pairs and dedicated flags, in that order
//! of increasing precedence.

use std::fmt::Write as _;
use std::path::Path;

use clap::ValueEnum;
use deeppco::encoding::ProjectionConfig;
use deeppco::network::{HeadLayout, ModelConfig, ModelMode};
use deeppco::trainer::{parse_key_values, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// 16 × 64 images, channel widths divided by 8.
    Tiny,
    /// 64 × 1024 images, full channel widths.
    Full,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Tiny => "tiny",
            Profile::Full => "full",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "tiny" => Some(Profile::Tiny),
            "full" => Some(Profile::Full),
            _ => None,
        }
    }

    pub fn projection(self) -> ProjectionConfig {
        match self {
            Profile::Tiny => ProjectionConfig::tiny(),
            Profile::Full => ProjectionConfig::kitti_hdl64(),
        }
    }

    pub fn points_per_frame(self) -> usize {
        match self {
            Profile::Tiny => 2_000,
            Profile::Full => 60_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Dual,
    TranslationOnly,
    OrientationOnly,
}

impl From<Mode> for ModelMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Dual => ModelMode::Dual,
            Mode::TranslationOnly => ModelMode::TranslationOnly,
            Mode::OrientationOnly => ModelMode::OrientationOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Heads {
    /// Separate translation and orientation FC branches.
    Two,
    /// One FC branch with a 6-vector head.
    Single,
}

impl Heads {
    fn name(self) -> &'static str {
        match self {
            Heads::Two => "two",
            Heads::Single => "single",
        }
    }
}

impl From<Heads> for HeadLayout {
    fn from(h: Heads) -> Self {
        match h {
            Heads::Two => HeadLayout::TwoBranch,
            Heads::Single => HeadLayout::SingleBranch,
        }
    }
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub profile: Option<Profile>,
    pub mode: Option<Mode>,
    pub heads: Option<Heads>,
    pub set: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub profile: Profile,
    pub mode: Mode,
    pub heads: Heads,
    pub train: TrainConfig,
    /// Whether profile, mode or heads were given anywhere.
    pub architecture_explicit: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            profile: Profile::Tiny,
            mode: Mode::Dual,
            heads: Heads::Two,
            train: TrainConfig::default(),
            architecture_explicit: false,
        }
    }
}

impl Settings {
    pub fn resolve(config: Option<&Path>, ov: &Overrides) -> Result<Self, CliError> {
        let mut s = Settings::default();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let pairs =
                parse_key_values(&text).map_err(|e| CliError::format(path, e.to_string()))?;
            for (line, key, value) in pairs {
                s.set(&key, &value)
                    .map_err(|reason| CliError::format(path, format!("line {line}: {reason}")))?;
            }
        }
        for kv in &ov.set {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            s.set(key.trim(), value.trim())
                .map_err(|r| CliError::Usage(format!("--set {kv}: {r}")))?;
        }
        if let Some(seed) = ov.seed {
            s.train.seed = seed;
        }
        if let Some(p) = ov.profile {
            s.profile = p;
            s.architecture_explicit = true;
        }
        if let Some(m) = ov.mode {
            s.mode = m;
            s.architecture_explicit = true;
        }
        if let Some(h) = ov.heads {
            s.heads = h;
            s.architecture_explicit = true;
        }
        s.train.validate()?;
        Ok(s)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let bad = || format!("`{value}` is not a valid value for `{key}`");
        match key {
            "profile" => self.profile = Profile::parse(value).ok_or_else(bad)?,
            "mode" => self.mode = Mode::from_str(value, true).map_err(|_| bad())?,
            "heads" => self.heads = Heads::from_str(value, true).map_err(|_| bad())?,
            _ => return self.train.set(key, value),
        }
        self.architecture_explicit = true;
        Ok(())
    }

    pub fn projection(&self) -> ProjectionConfig {
        self.profile.projection()
    }

    pub fn model_config(&self) -> ModelConfig {
        let proj = self.projection();
        let base = match self.profile {
            Profile::Tiny => ModelConfig::tiny(&proj),
            Profile::Full => ModelConfig::full(&proj),
        };
        base.with_mode(self.mode.into())
            .with_heads(self.heads.into())
            .with_dropout(self.train.dropout)
    }

    /// Resolved settings as re-loadable `key = value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "profile = {}", self.profile.name()).unwrap();
        writeln!(s, "mode = {}", ModelMode::from(self.mode).name()).unwrap();
        writeln!(s, "heads = {}", self.heads.name()).unwrap();
        s.push_str(&self.train.to_text());
        s
    }

    /// Reproducibility header: command line context plus every resolved key.
    pub fn header(&self, command: &str) -> String {
        let mut h = format!("# deeppco {} {command}\n", env!("CARGO_PKG_VERSION"));
        for line in self.to_text().lines() {
            writeln!(h, "# {line}").unwrap();
        }
        h
    }
}
