//! Run configuration: `key = value` text with defaults for every key.
//!
//! The canonical form lists every key in a fixed order; its SHA-256 prefix
//! is the config hash stamped on all outputs of a run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::backbone::BackboneConfig;
use crate::controller::{ControllerConfig, ControllerVariant, ZpdDivisor};
use crate::data::{ColumnMapping, GroupDistance, SplitMode, SplitRatios};
use crate::error::{Error, Result};
use crate::eval::synth::ShiftProfile;
use crate::generator::{GeneratorConfig, GeneratorVariant};
use crate::train::TrainConfig;
use crate::tuning::{TuningConfig, TuningMethod};

/// Which windows of a learner a step uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowSelect {
    All,
    First,
    Last,
}

impl WindowSelect {
    pub fn name(self) -> &'static str {
        match self {
            WindowSelect::All => "all",
            WindowSelect::First => "first",
            WindowSelect::Last => "last",
        }
    }

    pub fn apply<T>(self, mut windows: Vec<T>) -> Vec<T> {
        match self {
            WindowSelect::All => windows,
            WindowSelect::First => {
                windows.truncate(1);
                windows
            }
            WindowSelect::Last => windows.pop().into_iter().collect(),
        }
    }
}

impl FromStr for WindowSelect {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(WindowSelect::All),
            "first" => Ok(WindowSelect::First),
            "last" => Ok(WindowSelect::Last),
            _ => Err(Error::Config(format!("unknown window selection {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Interaction CSV; synthetic data when absent.
    pub data: Option<PathBuf>,
    pub columns: ColumnMapping,
    pub min_len: usize,
    pub split: SplitMode,
    pub ratios: SplitRatios,
    pub group_distance: GroupDistance,
    pub k: usize,

    pub synth_learners: usize,
    pub synth_length: usize,
    pub synth: ShiftProfile,

    pub embed_dim: usize,
    pub hidden: usize,
    pub backbone_windows: WindowSelect,
    pub backbone_train: TrainConfig,

    pub heads: usize,
    pub rank: usize,
    pub generator_variant: GeneratorVariant,
    pub causal: bool,
    pub joint: bool,
    pub generator_train: TrainConfig,

    pub controller_variant: ControllerVariant,
    pub zpd_divisor: ZpdDivisor,
    pub frequency: f64,
    pub eval_windows: WindowSelect,

    pub tuning: TuningConfig,
    pub repeats: usize,

    pub shift_parts: usize,
    pub shift_threshold: f64,

    pub ranks: Vec<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            columns: ColumnMapping::default(),
            min_len: 5,
            split: SplitMode::Temporal,
            ratios: SplitRatios::default(),
            group_distance: GroupDistance::Kl,
            k: 100,
            synth_learners: 500,
            synth_length: 200,
            synth: ShiftProfile::default(),
            embed_dim: 32,
            hidden: 64,
            backbone_windows: WindowSelect::First,
            backbone_train: TrainConfig {
                max_epochs: 60,
                patience: 5,
                batch_size: 32,
                lr: 1e-3,
                seed: 0,
            },
            heads: 4,
            rank: 1,
            generator_variant: GeneratorVariant::Full,
            causal: true,
            joint: false,
            generator_train: TrainConfig {
                max_epochs: 60,
                patience: 10,
                batch_size: 32,
                lr: 3e-3,
                seed: 0,
            },
            controller_variant: ControllerVariant::Full,
            zpd_divisor: ZpdDivisor::Capacity,
            frequency: 1.0,
            eval_windows: WindowSelect::Last,
            tuning: TuningConfig::default(),
            repeats: 3,
            shift_parts: 4,
            shift_threshold: 0.005,
            ranks: vec![0, 1, 2, 4, 8],
            seed: 0,
            out: PathBuf::from("runs/default"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for {key}: expected true or false"))),
    }
}

impl RunConfig {
    /// Reads a config file over the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, got {raw:?}"),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data" => self.data = (!v.is_empty() && v != "synthetic").then(|| PathBuf::from(v)),
            "columns" => {
                let sep = self.columns.concept_separator;
                self.columns = ColumnMapping::from_list(v)?;
                self.columns.concept_separator = sep;
            }
            "concept_separator" => {
                let mut chars = v.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => self.columns.concept_separator = c,
                    _ => return Err(Error::Config(format!("concept_separator must be one character, got {v:?}"))),
                }
            }
            "min_len" => self.min_len = parse(key, v)?,
            "split" => self.split = v.parse()?,
            "ratios" => self.ratios = v.parse()?,
            "group_distance" => self.group_distance = v.parse()?,
            "k" => self.k = parse(key, v)?,
            "synth_learners" => self.synth_learners = parse(key, v)?,
            "synth_length" => self.synth_length = parse(key, v)?,
            "synth_mode" => self.synth.mode = v.parse()?,
            "synth_magnitude" => self.synth.magnitude = parse(key, v)?,
            "synth_concepts" => self.synth.num_concepts = parse(key, v)?,
            "synth_shift_at" => self.synth.shift_at = parse(key, v)?,
            "synth_ability_std" => self.synth.ability_std = parse(key, v)?,
            "synth_difficulty_std" => self.synth.difficulty_std = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "backbone_windows" => self.backbone_windows = v.parse()?,
            "backbone_epochs" => self.backbone_train.max_epochs = parse(key, v)?,
            "backbone_patience" => self.backbone_train.patience = parse(key, v)?,
            "backbone_batch" => self.backbone_train.batch_size = parse(key, v)?,
            "backbone_lr" => self.backbone_train.lr = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "rank" => self.rank = parse(key, v)?,
            "generator_variant" => self.generator_variant = v.parse()?,
            "causal" => self.causal = parse_bool(key, v)?,
            "joint" => self.joint = parse_bool(key, v)?,
            "generator_epochs" => self.generator_train.max_epochs = parse(key, v)?,
            "generator_patience" => self.generator_train.patience = parse(key, v)?,
            "generator_batch" => self.generator_train.batch_size = parse(key, v)?,
            "generator_lr" => self.generator_train.lr = parse(key, v)?,
            "controller_variant" => self.controller_variant = v.parse()?,
            "zpd_divisor" => self.zpd_divisor = v.parse()?,
            "frequency" => self.frequency = parse(key, v)?,
            "eval_windows" => self.eval_windows = v.parse()?,
            "tuning_epochs" => self.tuning.epochs = parse(key, v)?,
            "tuning_patience" => self.tuning.patience = parse(key, v)?,
            "tuning_lr" => self.tuning.lr = parse(key, v)?,
            "tuning_batch" => self.tuning.batch_size = parse(key, v)?,
            "adapter_bottleneck" => self.tuning.bottleneck = parse(key, v)?,
            "repeats" => self.repeats = parse(key, v)?,
            "shift_parts" => self.shift_parts = parse(key, v)?,
            "shift_threshold" => self.shift_threshold = parse(key, v)?,
            "ranks" => {
                self.ranks = v
                    .split(',')
                    .map(|r| parse::<usize>(key, r.trim()))
                    .collect::<Result<_>>()?
            }
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let ranks: Vec<String> = self.ranks.iter().map(|r| r.to_string()).collect();
        vec![
            ("data", self.data.as_ref().map_or("synthetic".into(), |p| p.display().to_string())),
            ("columns", self.columns.to_list()),
            ("concept_separator", self.columns.concept_separator.to_string()),
            ("min_len", self.min_len.to_string()),
            ("split", self.split.to_string()),
            ("ratios", self.ratios.to_string()),
            ("group_distance", self.group_distance.to_string()),
            ("k", self.k.to_string()),
            ("synth_learners", self.synth_learners.to_string()),
            ("synth_length", self.synth_length.to_string()),
            ("synth_mode", self.synth.mode.to_string()),
            ("synth_magnitude", self.synth.magnitude.to_string()),
            ("synth_concepts", self.synth.num_concepts.to_string()),
            ("synth_shift_at", self.synth.shift_at.to_string()),
            ("synth_ability_std", self.synth.ability_std.to_string()),
            ("synth_difficulty_std", self.synth.difficulty_std.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("backbone_windows", self.backbone_windows.name().into()),
            ("backbone_epochs", self.backbone_train.max_epochs.to_string()),
            ("backbone_patience", self.backbone_train.patience.to_string()),
            ("backbone_batch", self.backbone_train.batch_size.to_string()),
            ("backbone_lr", self.backbone_train.lr.to_string()),
            ("heads", self.heads.to_string()),
            ("rank", self.rank.to_string()),
            ("generator_variant", self.generator_variant.name().into()),
            ("causal", self.causal.to_string()),
            ("joint", self.joint.to_string()),
            ("generator_epochs", self.generator_train.max_epochs.to_string()),
            ("generator_patience", self.generator_train.patience.to_string()),
            ("generator_batch", self.generator_train.batch_size.to_string()),
            ("generator_lr", self.generator_train.lr.to_string()),
            ("controller_variant", self.controller_variant.name().into()),
            (
                "zpd_divisor",
                match self.zpd_divisor {
                    ZpdDivisor::Capacity => "capacity",
                    ZpdDivisor::Observed => "observed",
                }
                .into(),
            ),
            ("frequency", self.frequency.to_string()),
            ("eval_windows", self.eval_windows.name().into()),
            ("tuning_epochs", self.tuning.epochs.to_string()),
            ("tuning_patience", self.tuning.patience.to_string()),
            ("tuning_lr", self.tuning.lr.to_string()),
            ("tuning_batch", self.tuning.batch_size.to_string()),
            ("adapter_bottleneck", self.tuning.bottleneck.to_string()),
            ("repeats", self.repeats.to_string()),
            ("shift_parts", self.shift_parts.to_string()),
            ("shift_threshold", self.shift_threshold.to_string()),
            ("ranks", ranks.join(",")),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 4 {
            return Err(Error::Config(format!("k = {} is too small", self.k)));
        }
        if !(0.0..=1.0).contains(&self.frequency) {
            return Err(Error::Config(format!("frequency {} outside [0, 1]", self.frequency)));
        }
        if self.repeats < 3 {
            return Err(Error::Config("repeats must be at least 3".into()));
        }
        if self.ranks.is_empty() {
            return Err(Error::Config("ranks list is empty".into()));
        }
        self.backbone_train.validate()?;
        self.generator_train.validate()?;
        self.tuning_config(TuningMethod::Fft).validate()?;
        BackboneConfig {
            num_concepts: 1,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
        }
        .validate()?;
        self.generator_config(1, self.rank).validate()
    }

    pub fn backbone_config(&self, num_concepts: usize) -> BackboneConfig {
        BackboneConfig {
            num_concepts,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
        }
    }

    pub fn backbone_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.backbone_train
        }
    }

    pub fn generator_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.generator_train
        }
    }

    pub fn generator_config(&self, num_concepts: usize, rank: usize) -> GeneratorConfig {
        let mut c = GeneratorConfig::new(num_concepts, self.hidden).with_variant(self.generator_variant);
        c.embed_dim = self.embed_dim;
        c.heads = self.heads;
        c.rank = rank;
        c.causal = self.causal;
        c
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            divisor: self.zpd_divisor,
            ..self.controller_variant.config()
        }
    }

    pub fn tuning_config(&self, method: TuningMethod) -> TuningConfig {
        TuningConfig {
            method,
            seed: self.seed,
            ..self.tuning
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 7\nrank=2 # comment\n\nranks = 1, 3\ndata = x.csv\n").unwrap();
        assert_eq!((c.seed, c.rank, c.ranks.clone()), (7, 2, vec![1, 3]));
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.hash(), d.hash());
        assert_ne!(c.hash(), RunConfig::default().hash());
        assert_eq!(RunConfig::default().hash().len(), 16);
    }

    #[test]
    fn bad_input_is_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("nonsense"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(c.set("colour", "red"), Err(Error::Config(_))));
        assert!(matches!(c.set("seed", "-1"), Err(Error::Config(_))));
        assert!(matches!(c.set("joint", "maybe"), Err(Error::Config(_))));
        c.set("frequency", "1.5").unwrap();
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn window_selection() {
        assert_eq!(WindowSelect::First.apply(vec![1, 2, 3]), vec![1]);
        assert_eq!(WindowSelect::Last.apply(vec![1, 2, 3]), vec![3]);
        assert_eq!(WindowSelect::All.apply(vec![1, 2]), vec![1, 2]);
        assert!(WindowSelect::Last.apply(Vec::<u8>::new()).is_empty());
    }
}
