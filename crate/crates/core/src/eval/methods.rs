//! Evaluation of the frozen backbone, generated layers and the retraining
//! baselines on a common set of scored steps.
//!
//! Every method is scored on the second half of each test window, so the
//! generator's context (the first half) is never among the scored steps.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::backbone::{Backbone, DynamicLayerParams, Scored};
use crate::controller::{score_window, select_with, ControllerConfig, ValueScore};
use crate::data::{context_window, LearnerId, Window};
use crate::error::{Error, Result};
use crate::eval::metrics::{auc, rmse};
use crate::eval::timing::thread_count;
use crate::generator::Generator;
use crate::tuning::{cuff_plus_fft, tune, TuningConfig, TuningMethod};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Frozen,
    CuffKt,
    Fft,
    BitFit,
    Adapter,
    CuffFft,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Frozen,
        Method::CuffKt,
        Method::Fft,
        Method::BitFit,
        Method::Adapter,
        Method::CuffFft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Frozen => "frozen",
            Method::CuffKt => "cuffkt",
            Method::Fft => "fft",
            Method::BitFit => "bitfit",
            Method::Adapter => "adapter",
            Method::CuffFft => "cuffkt+fft",
        }
    }

    pub fn needs_generator(self) -> bool {
        matches!(self, Method::CuffKt | Method::CuffFft)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Windows with at least two steps, the only ones with a scored half.
pub fn scorable<'a>(windows: &[&'a Window]) -> Vec<&'a Window> {
    windows.iter().copied().filter(|w| w.len >= 2).collect()
}

fn from_steps(windows: &[&Window]) -> Vec<usize> {
    windows.iter().map(|w| (w.len / 2).max(1)).collect()
}

/// Splits `items` into at most `threads` contiguous chunks, maps each on
/// its own thread and concatenates the results in order.
fn par_chunks<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&[T]) -> Result<Vec<R>> + Sync,
) -> Result<Vec<R>> {
    if threads <= 1 || items.len() < 2 {
        return f(items);
    }
    let size = items.len().div_ceil(threads);
    let results: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(size).map(|c| s.spawn(|| f(c))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Second-half predictions, with each window optionally using its own
/// output layer.
pub fn score_second_halves(
    backbone: &Backbone,
    windows: &[&Window],
    layers: Option<&[Option<DynamicLayerParams>]>,
    threads: usize,
) -> Result<Scored> {
    let windows = scorable(windows);
    let stored = backbone.dynamic_layer();
    let items: Vec<(&Window, &DynamicLayerParams)> = windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let l = layers.and_then(|ls| ls[i].as_ref()).unwrap_or(&stored);
            (*w, l)
        })
        .collect();
    let parts = par_chunks(&items, threads, |chunk| {
        let ws: Vec<&Window> = chunk.iter().map(|(w, _)| *w).collect();
        let ls: Vec<&DynamicLayerParams> = chunk.iter().map(|(_, l)| *l).collect();
        let s = if layers.is_some() {
            backbone.predict(&ws, Some(&ls), &from_steps(&ws))?
        } else {
            backbone.predict(&ws, None, &from_steps(&ws))?
        };
        Ok(vec![s])
    })?;
    let mut out = Scored::default();
    for p in parts {
        out.extend(p);
    }
    Ok(out)
}

/// Controller scores computed on each window's adaptation context.
pub fn controller_scores(backbone: &Backbone, windows: &[&Window], config: &ControllerConfig) -> Result<Vec<ValueScore>> {
    scorable(windows)
        .iter()
        .map(|w| score_window(backbone, &context_window(w), config))
        .collect()
}

/// Generated layers for the selected learners, `None` for the rest.
pub fn gated_layers(
    generator: &Generator,
    backbone: &Backbone,
    windows: &[&Window],
    selected: &BTreeSet<LearnerId>,
    threads: usize,
) -> Result<Vec<Option<DynamicLayerParams>>> {
    let windows = scorable(windows);
    let contexts: Vec<(usize, Window)> = windows
        .iter()
        .enumerate()
        .filter(|(_, w)| selected.contains(&w.learner))
        .map(|(i, w)| (i, context_window(w)))
        .collect();
    let generated = par_chunks(&contexts, threads, |chunk| {
        let cs: Vec<&Window> = chunk.iter().map(|(_, c)| c).collect();
        generator.adapt_batch(backbone, &cs)
    })?;
    let mut out = vec![None; windows.len()];
    for ((i, _), p) in contexts.iter().zip(generated) {
        out[*i] = Some(p);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct MethodSetup<'a> {
    pub backbone: &'a Backbone,
    pub generator: Option<&'a Generator>,
    pub adapt: &'a [&'a Window],
    pub test: &'a [&'a Window],
    pub tuning: TuningConfig,
    pub controller: ControllerConfig,
    /// Share of test learners that receive generated layers.
    pub frequency: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    pub scored: Scored,
    /// Controller scores and selection (generated-layer methods only).
    pub controller: Option<(Vec<ValueScore>, BTreeSet<LearnerId>)>,
    /// Scalars trained by a retraining method.
    pub trainable_params: usize,
}

impl MethodResult {
    pub fn auc(&self) -> Result<f64> {
        auc(&self.scored.predictions, &self.scored.labels)
    }

    pub fn rmse(&self) -> Result<f64> {
        rmse(&self.scored.predictions, &self.scored.labels)
    }
}

fn generator_of<'a>(setup: &MethodSetup<'a>, method: Method) -> Result<&'a Generator> {
    setup
        .generator
        .ok_or_else(|| Error::Config(format!("method {method} needs a generator")))
}

/// Adapts (if the method does) and scores the test windows. Runs with the
/// given thread count; timing callers pass 1.
pub fn run_method(method: Method, setup: &MethodSetup<'_>, threads: usize) -> Result<MethodResult> {
    let tuned = |m: TuningMethod| tune(setup.backbone, setup.adapt, &TuningConfig { method: m, ..setup.tuning });
    let gated = |g: &Generator, b: &Backbone| -> Result<(Scored, (Vec<ValueScore>, BTreeSet<LearnerId>))> {
        let scores = controller_scores(b, setup.test, &setup.controller)?;
        let selected = select_with(&scores, setup.frequency, &setup.controller, setup.seed)?;
        let layers = gated_layers(g, b, setup.test, &selected, threads)?;
        Ok((score_second_halves(b, setup.test, Some(&layers), threads)?, (scores, selected)))
    };
    let (scored, controller, trainable_params) = match method {
        Method::Frozen => (score_second_halves(setup.backbone, setup.test, None, threads)?, None, 0),
        Method::CuffKt => {
            let (s, c) = gated(generator_of(setup, method)?, setup.backbone)?;
            (s, Some(c), 0)
        }
        Method::Fft | Method::BitFit | Method::Adapter => {
            let m = match method {
                Method::Fft => TuningMethod::Fft,
                Method::BitFit => TuningMethod::BitFit,
                _ => TuningMethod::Adapter,
            };
            let t = tuned(m)?;
            (
                score_second_halves(&t.model, setup.test, None, threads)?,
                None,
                t.trainable_params,
            )
        }
        Method::CuffFft => {
            let (t, g) = cuff_plus_fft(setup.backbone, generator_of(setup, method)?, setup.adapt, &setup.tuning)?;
            let (s, c) = gated(&g, &t.model)?;
            (s, Some(c), t.trainable_params)
        }
    };
    Ok(MethodResult {
        method,
        scored,
        controller,
        trainable_params,
    })
}

/// Convenience wrapper using the configured thread count.
pub fn run_method_default(method: Method, setup: &MethodSetup<'_>) -> Result<MethodResult> {
    run_method(method, setup, thread_count())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub split_mode: String,
    pub seed: u64,
    pub auc: f64,
    pub rmse: f64,
    pub time_overhead_ms: f64,
    pub frequency: f64,
    pub variant: String,
    pub threads: usize,
    pub config_hash: String,
}

impl EvalReport {
    pub const HEADER: &'static str =
        "method\tsplit_mode\tseed\tauc\trmse\ttime_overhead_ms\tfrequency\tvariant\tthreads\tconfig_hash";

    pub fn row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.3}\t{}\t{}\t{}\t{}",
            self.method,
            self.split_mode,
            self.seed,
            self.auc,
            self.rmse,
            self.time_overhead_ms,
            self.frequency,
            self.variant,
            self.threads,
            self.config_hash
        )
    }
}

pub fn eval_reports_tsv(reports: &[EvalReport]) -> String {
    let mut out = format!("{}\n", EvalReport::HEADER);
    for r in reports {
        let _ = writeln!(out, "{}", r.row());
    }
    out
}
