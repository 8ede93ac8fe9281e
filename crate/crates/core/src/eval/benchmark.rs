//! End-to-end shift benchmark on simulated learners.
//!
//! Intra protocol: each learner has `2k` interactions with the ability jump
//! at the sequence midpoint, cut into a pre-shift and a post-shift window of
//! `k` steps. Learners are split temporally 7:1:1:1. The backbone is trained
//! on pre-shift windows only; the generator is trained on both windows of
//! the training learners (first half in, second half scored) with the
//! backbone frozen. On test learners, frozen AUC is compared between the
//! pre-shift and post-shift windows, and adapted against frozen AUC on the
//! second half of the post-shift windows.

use std::time::Instant;

use crate::backbone::{self, Backbone, BackboneConfig, Scored};
use crate::data::{make_windows, split_temporal, SplitRatios, Window};
use crate::error::{Error, Result};
use crate::eval::metrics::auc;
use crate::eval::synth::{synth_benchmark, ShiftProfile};
use crate::generator::{score_adapted, train_generator, Generator, GeneratorConfig, GeneratorVariant};
use crate::train::{TrainConfig, TrainLog};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub n_learners: usize,
    pub k: usize,
    pub profile: ShiftProfile,
    pub embed_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub rank: usize,
    pub backbone_train: TrainConfig,
    pub generator_train: TrainConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            seed: 0,
            n_learners: 500,
            k: 100,
            profile: ShiftProfile::default(),
            embed_dim: 32,
            hidden: 64,
            heads: 4,
            rank: 1,
            backbone_train: TrainConfig {
                max_epochs: 60,
                patience: 5,
                batch_size: 32,
                lr: 1e-3,
                seed: 0,
            },
            generator_train: TrainConfig {
                max_epochs: 60,
                patience: 10,
                batch_size: 32,
                lr: 3e-3,
                seed: 0,
            },
        }
    }
}

impl BenchmarkConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.backbone_train.seed = seed;
        self.generator_train.seed = seed;
        self
    }
}

/// Prepared data and frozen backbone for one seed.
pub struct IntraBenchmark {
    pub config: BenchmarkConfig,
    /// `[pre-shift, post-shift]` windows per learner, by split.
    pub train: Vec<[Window; 2]>,
    pub valid: Vec<[Window; 2]>,
    pub adapt: Vec<[Window; 2]>,
    pub test: Vec<[Window; 2]>,
    pub backbone: Backbone,
    pub backbone_log: TrainLog,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntraOutcome {
    pub frozen_pre_auc: f64,
    pub frozen_post_auc: f64,
    /// Frozen AUC on the steps the adapted model is scored on.
    pub frozen_post_half_auc: f64,
    pub adapted_post_auc: f64,
    pub backbone_epochs: usize,
    pub generator_epochs: usize,
    pub seconds: f64,
}

fn auc_of(s: &Scored) -> Result<f64> {
    auc(&s.predictions, &s.labels)
}

fn regime(ws: &[[Window; 2]], r: usize) -> Vec<&Window> {
    ws.iter().map(|p| &p[r]).collect()
}

fn both(ws: &[[Window; 2]]) -> Vec<&Window> {
    ws.iter().flat_map(|p| p.iter()).collect()
}

impl IntraBenchmark {
    pub fn prepare(config: &BenchmarkConfig) -> Result<Self> {
        if config.k < 4 {
            return Err(Error::Config(format!("window k = {} is too small", config.k)));
        }
        let data = synth_benchmark(config.seed, config.n_learners, 2 * config.k, &config.profile)?;
        let splits = split_temporal(&data.sequences, &SplitRatios::default())?;
        let windows_of = |ids: &[u64]| -> Result<Vec<[Window; 2]>> {
            let mut out = Vec::new();
            for s in data.select(ids) {
                let mut ws = make_windows(s, config.k)?;
                let post = ws.remove(1);
                out.push([ws.remove(0), post]);
            }
            Ok(out)
        };
        let train = windows_of(&splits.train)?;
        let valid = windows_of(&splits.valid)?;
        let adapt = windows_of(&splits.adapt)?;
        let test = windows_of(&splits.test)?;

        let mut backbone = Backbone::new(
            BackboneConfig {
                num_concepts: data.num_concepts,
                embed_dim: config.embed_dim,
                hidden: config.hidden,
            },
            config.seed,
        )?;
        let backbone_log = backbone::train(
            &mut backbone,
            &regime(&train, 0),
            &regime(&valid, 0),
            &config.backbone_train,
        )?;
        Ok(IntraBenchmark {
            config: config.clone(),
            train,
            valid,
            adapt,
            test,
            backbone,
            backbone_log,
        })
    }

    /// Frozen AUC over all next-step predictions of the test learners'
    /// pre-shift and post-shift windows.
    pub fn frozen_aucs(&self) -> Result<(f64, f64)> {
        let n = self.test.len();
        let pre = self.backbone.predict(&regime(&self.test, 0), None, &vec![1; n])?;
        let post = self.backbone.predict(&regime(&self.test, 1), None, &vec![1; n])?;
        Ok((auc_of(&pre)?, auc_of(&post)?))
    }

    /// Frozen AUC on the second half of the post-shift test windows.
    pub fn frozen_post_half_auc(&self) -> Result<f64> {
        let post = regime(&self.test, 1);
        let from: Vec<usize> = post.iter().map(|w| (w.len / 2).max(1)).collect();
        auc_of(&self.backbone.predict(&post, None, &from)?)
    }

    pub fn generator_config(&self, variant: GeneratorVariant) -> GeneratorConfig {
        let mut c = GeneratorConfig::for_backbone(&self.backbone).with_variant(variant);
        c.heads = self.config.heads;
        c.rank = self.config.rank;
        c
    }

    pub fn train_generator(&self, variant: GeneratorVariant) -> Result<(Generator, TrainLog)> {
        let mut g = Generator::warm_start(self.generator_config(variant), &self.backbone, self.config.seed)?;
        let log = train_generator(
            &mut g,
            &self.backbone,
            &both(&self.train),
            &both(&self.valid),
            &self.config.generator_train,
        )?;
        Ok((g, log))
    }

    /// Adapted AUC on the second half of the post-shift test windows.
    pub fn adapted_auc(&self, generator: &Generator) -> Result<f64> {
        auc_of(&score_adapted(generator, &self.backbone, &regime(&self.test, 1))?)
    }
}

/// Runs the full intra protocol with the full generator.
pub fn run_intra(config: &BenchmarkConfig) -> Result<IntraOutcome> {
    let start = Instant::now();
    let bench = IntraBenchmark::prepare(config)?;
    let (frozen_pre_auc, frozen_post_auc) = bench.frozen_aucs()?;
    let frozen_post_half_auc = bench.frozen_post_half_auc()?;
    let (g, log) = bench.train_generator(GeneratorVariant::Full)?;
    let adapted_post_auc = bench.adapted_auc(&g)?;
    Ok(IntraOutcome {
        frozen_pre_auc,
        frozen_post_auc,
        frozen_post_half_auc,
        adapted_post_auc,
        backbone_epochs: bench.backbone_log.epochs.len(),
        generator_epochs: log.epochs.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}
