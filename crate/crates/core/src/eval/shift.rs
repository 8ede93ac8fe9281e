//! Per-part drift of concept correct rates and the accuracy of a model
//! trained on the first part.

use std::fmt::Write as _;

use crate::backbone::{self, Backbone, BackboneConfig};
use crate::data::{make_windows, Dataset, InteractionSequence, SplitMode, Window};
use crate::divergence::kl_normalized;
use crate::error::{Error, Result};
use crate::eval::metrics::auc;
use crate::train::TrainConfig;

/// Fewest learners a part may hold.
pub const MIN_PART_LEARNERS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftReport {
    /// 1-based.
    pub part: usize,
    pub kl_vs_part1: f64,
    /// AUC of the part-1 model on held-out learners of this part.
    pub auc: f64,
    pub threshold: f64,
}

impl ShiftReport {
    pub fn shifted(&self) -> bool {
        self.kl_vs_part1 > self.threshold
    }
}

pub fn shift_reports_tsv(reports: &[ShiftReport]) -> String {
    let mut out = String::from("part\tkl_vs_part1\tauc\tthreshold\tshifted\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{}\t{}",
            r.part,
            r.kl_vs_part1,
            r.auc,
            r.threshold,
            r.shifted() as u8
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftConfig {
    pub parts: usize,
    pub mode: SplitMode,
    /// Window capacity for training and scoring.
    pub k: usize,
    pub threshold: f64,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
}

/// Laplace-smoothed correct rate of every concept within a set of sequences.
pub fn concept_correct_rates(sequences: &[InteractionSequence], num_concepts: usize) -> Vec<f64> {
    let mut attempts = vec![0.0; num_concepts];
    let mut correct = vec![0.0; num_concepts];
    for s in sequences {
        for x in &s.interactions {
            let c = x.concepts[0] as usize;
            if c < num_concepts {
                attempts[c] += 1.0;
                correct[c] += x.response as f64;
            }
        }
    }
    attempts
        .iter()
        .zip(&correct)
        .map(|(a, c)| (c + 1.0) / (a + 2.0))
        .collect()
}

/// Splits into `parts` non-overlapping parts: by stage (each learner's
/// sequence cut into equal consecutive segments) or by group (learners
/// ordered by first timestamp, then id).
pub fn partition(dataset: &Dataset, parts: usize, mode: SplitMode) -> Result<Vec<Vec<InteractionSequence>>> {
    if parts < 2 {
        return Err(Error::Config(format!("need at least 2 parts, got {parts}")));
    }
    let mut out = vec![Vec::new(); parts];
    match mode {
        SplitMode::Temporal => {
            for s in dataset.sequences.iter().filter(|s| s.len() >= 2 * parts) {
                let n = s.len();
                for (p, slot) in out.iter_mut().enumerate() {
                    let (a, b) = (p * n / parts, (p + 1) * n / parts);
                    slot.push(InteractionSequence {
                        learner: s.learner,
                        interactions: s.interactions[a..b].to_vec(),
                    });
                }
            }
        }
        SplitMode::Group => {
            let mut order: Vec<&InteractionSequence> = dataset.sequences.iter().filter(|s| !s.is_empty()).collect();
            order.sort_by_key(|s| (s.first_timestamp(), s.learner));
            let n = order.len();
            for (i, s) in order.into_iter().enumerate() {
                out[i * parts / n.max(1)].push(s.clone());
            }
        }
    }
    if let Some((p, part)) = out.iter().enumerate().find(|(_, v)| v.len() < MIN_PART_LEARNERS) {
        return Err(Error::Size(format!(
            "part {} has {} learners, need at least {MIN_PART_LEARNERS}",
            p + 1,
            part.len()
        )));
    }
    Ok(out)
}

fn windows(sequences: &[InteractionSequence], k: usize) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for s in sequences {
        out.extend(make_windows(s, k)?);
    }
    Ok(out)
}

/// Learners of each part are divided 7:1:2 by position into train, valid
/// and held-out; the model trains on part 1 only and is scored on every
/// part's held-out learners.
pub fn shift_diagnostic(dataset: &Dataset, config: &ShiftConfig) -> Result<Vec<ShiftReport>> {
    let parts = partition(dataset, config.parts, config.mode)?;
    let cut = |v: &[InteractionSequence]| -> [Vec<InteractionSequence>; 3] {
        let n = v.len();
        let (a, b) = (n * 7 / 10, n * 8 / 10);
        [v[..a].to_vec(), v[a..b].to_vec(), v[b..].to_vec()]
    };
    let [train, valid, _] = cut(&parts[0]);
    let train_w = windows(&train, config.k)?;
    let valid_w = windows(&valid, config.k)?;
    let mut model = Backbone::new(config.backbone, config.train.seed)?;
    backbone::train(
        &mut model,
        &train_w.iter().collect::<Vec<_>>(),
        &valid_w.iter().collect::<Vec<_>>(),
        &config.train,
    )?;

    let reference = concept_correct_rates(&parts[0], dataset.num_concepts);
    parts
        .iter()
        .enumerate()
        .map(|(p, part)| {
            let rates = concept_correct_rates(part, dataset.num_concepts);
            let kl = if p == 0 { 0.0 } else { kl_normalized(&rates, &reference)? };
            let [_, _, held] = cut(part);
            let ws = windows(&held, config.k)?;
            let refs: Vec<&Window> = ws.iter().collect();
            let s = model.predict(&refs, None, &vec![1; refs.len()])?;
            Ok(ShiftReport {
                part: p + 1,
                kl_vs_part1: kl,
                auc: auc(&s.predictions, &s.labels)?,
                threshold: config.threshold,
            })
        })
        .collect()
}
