//! Retraining baselines: full fine-tuning, bias-only tuning, bottleneck
//! adapters, and fine-tuning followed by generated output layers.
//!
//! Every method works on a copy; the input model is never touched. Early
//! stopping watches the mean loss on the adaptation split itself.

use std::fmt;
use std::str::FromStr;

use crate::backbone::{mean_bce_loss, Adapter, Backbone};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::nn::ParamKind;
use crate::numcore::Matrix;
use crate::train::{fit, TrainConfig, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TuningMethod {
    Fft,
    BitFit,
    Adapter,
}

impl TuningMethod {
    pub const ALL: [TuningMethod; 3] = [TuningMethod::Fft, TuningMethod::BitFit, TuningMethod::Adapter];

    pub fn name(self) -> &'static str {
        match self {
            TuningMethod::Fft => "fft",
            TuningMethod::BitFit => "bitfit",
            TuningMethod::Adapter => "adapter",
        }
    }
}

impl fmt::Display for TuningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TuningMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TuningMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tuning method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TuningConfig {
    pub method: TuningMethod,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub bottleneck: usize,
    pub seed: u64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            method: TuningMethod::Fft,
            epochs: 10,
            patience: 3,
            lr: 1e-3,
            batch_size: 32,
            bottleneck: 8,
            seed: 0,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("tuning needs at least one epoch".into()));
        }
        self.train_config().validate()
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tuned {
    pub model: Backbone,
    pub log: TrainLog,
    /// Number of scalar parameters that were allowed to change.
    pub trainable_params: usize,
}

/// Runs `config.method` on a copy of `model`.
pub fn tune(model: &Backbone, adapt: &[&Window], config: &TuningConfig) -> Result<Tuned> {
    match config.method {
        TuningMethod::Fft => fft(model, adapt, config),
        TuningMethod::BitFit => bitfit(model, adapt, config),
        TuningMethod::Adapter => adapter(model, adapt, config),
    }
}

pub fn fft(model: &Backbone, adapt: &[&Window], config: &TuningConfig) -> Result<Tuned> {
    tune_subset(model.clone(), adapt, config, "fft-shuffle", |name, _| {
        !name.starts_with("adapter.")
    })
}

pub fn bitfit(model: &Backbone, adapt: &[&Window], config: &TuningConfig) -> Result<Tuned> {
    if !model.tensors().iter().any(|(_, k, m)| *k == ParamKind::Bias && !m.is_empty()) {
        return Err(Error::Config("model has no bias terms to tune".into()));
    }
    tune_subset(model.clone(), adapt, config, "bitfit-shuffle", |name, kind| {
        kind == ParamKind::Bias && !name.starts_with("adapter.")
    })
}

/// Inserts a fresh residual adapter after the recurrent cell (replacing
/// any existing one) and trains only the adapter.
pub fn adapter(model: &Backbone, adapt: &[&Window], config: &TuningConfig) -> Result<Tuned> {
    let h = model.hidden();
    if config.bottleneck == 0 || config.bottleneck >= h {
        return Err(Error::Config(format!(
            "adapter bottleneck {} must be in 1..{h}",
            config.bottleneck
        )));
    }
    let mut copy = model.clone();
    copy.adapter = Some(Adapter::new(h, config.bottleneck, config.seed));
    tune_subset(copy, adapt, config, "adapter-shuffle", |name, _| name.starts_with("adapter."))
}

/// Trainable scalars of one adapter: `2·hidden·bottleneck + bottleneck + hidden`.
pub fn adapter_param_count(hidden: usize, bottleneck: usize) -> usize {
    2 * hidden * bottleneck + bottleneck + hidden
}

fn tune_subset(
    mut model: Backbone,
    adapt: &[&Window],
    config: &TuningConfig,
    stream: &str,
    track: impl Fn(&str, ParamKind) -> bool + Copy,
) -> Result<Tuned> {
    config.validate()?;
    let selected: Vec<bool> = model.tensors().iter().map(|(n, k, _)| track(n, *k)).collect();
    let trainable_params = model
        .tensors()
        .iter()
        .zip(&selected)
        .filter(|(_, &s)| s)
        .map(|((_, _, m), _)| m.len())
        .sum();
    let usable: Vec<&Window> = adapt.iter().copied().filter(|w| w.len >= 2).collect();
    if usable.is_empty() {
        return Ok(Tuned {
            model,
            log: TrainLog::default(),
            trainable_params,
        });
    }
    let log = fit(
        &mut model,
        usable.len(),
        &config.train_config(),
        stream,
        |m, idx| {
            let batch: Vec<&Window> = idx.iter().map(|&i| usable[i]).collect();
            m.batch_loss(&batch, track)
        },
        |m| {
            m.tensors_mut()
                .into_iter()
                .zip(&selected)
                .filter(|(_, &s)| s)
                .map(|(t, _)| t)
                .collect()
        },
        |m| Ok(-adapt_loss(m, &usable)?),
    )?;
    Ok(Tuned {
        model,
        log,
        trainable_params,
    })
}

/// Mean next-step loss over the adaptation windows.
fn adapt_loss(model: &Backbone, windows: &[&Window]) -> Result<f64> {
    let s = model.predict(windows, None, &vec![1; windows.len()])?;
    let targets: Vec<f64> = s.labels.iter().map(|&l| l as f64).collect();
    mean_bce_loss(&s.predictions, &targets, &vec![true; targets.len()])
}

/// Fine-tunes a copy of the backbone, then re-anchors a copy of the
/// generator so that its fixed offsets follow the fine-tuned output layer.
///
/// The generated layer is `synthesis + offset`; shifting the offset by the
/// change fine-tuning made to the output layer keeps both contributions. An
/// empty adaptation split therefore gives plain generation, and a generator
/// with zero synthesis maps gives the plain fine-tuned model.
pub fn cuff_plus_fft(
    model: &Backbone,
    generator: &Generator,
    adapt: &[&Window],
    config: &TuningConfig,
) -> Result<(Tuned, Generator)> {
    generator.check_backbone(model)?;
    let config = TuningConfig {
        method: TuningMethod::Fft,
        ..*config
    };
    let tuned = fft(model, adapt, &config)?;
    let mut g = generator.clone();
    shift(&mut g.b_w, tuned.model.out_weight.as_slice(), model.out_weight.as_slice());
    shift(&mut g.b_b, tuned.model.out_bias.as_slice(), model.out_bias.as_slice());
    Ok((tuned, g))
}

fn shift(offset: &mut Matrix, after: &[f64], before: &[f64]) {
    for ((o, a), b) in offset.as_mut_slice().iter_mut().zip(after).zip(before) {
        if a != b {
            *o += a - b;
        }
    }
}
