use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::divergence::{js_normalized, kl_normalized};
use crate::error::{Error, Result};

use super::{InteractionSequence, LearnerId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Learners ordered by when they started responding.
    Temporal,
    /// Learners ordered by how far their knowledge state moved.
    Group,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Temporal => "temporal",
            SplitMode::Group => "group",
        })
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal" | "intra" => Ok(SplitMode::Temporal),
            "group" | "inter" => Ok(SplitMode::Group),
            other => Err(Error::Config(format!("unknown split mode {other:?}"))),
        }
    }
}

/// Relative sizes of train/valid/adapt/test. Any positive weights are
/// accepted and normalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios(pub [f64; 4]);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios([7.0, 1.0, 1.0, 1.0])
    }
}

impl SplitRatios {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Config(format!(
                "split ratios must be positive, got {weights:?}"
            )));
        }
        Ok(SplitRatios(weights))
    }

    /// Block sizes for `n` learners: the first three are floored, the
    /// remainder goes to the last.
    pub fn block_sizes(&self, n: usize) -> [usize; 4] {
        let total: f64 = self.0.iter().sum();
        let mut sizes = [0usize; 4];
        for i in 0..3 {
            sizes[i] = ((n as f64) * self.0[i] / total + 1e-9).floor() as usize;
        }
        sizes[3] = n - sizes[..3].iter().sum::<usize>();
        sizes
    }
}

impl fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| format!("{w}")).collect();
        f.write_str(&parts.join(":"))
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad split ratios {s:?}")))?;
        let weights: [f64; 4] = parts
            .try_into()
            .map_err(|_| Error::Config(format!("split ratios need four parts, got {s:?}")))?;
        SplitRatios::new(weights)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplits {
    pub mode: SplitMode,
    pub train: Vec<LearnerId>,
    pub valid: Vec<LearnerId>,
    pub adapt: Vec<LearnerId>,
    pub test: Vec<LearnerId>,
}

impl DatasetSplits {
    fn from_order(mode: SplitMode, order: Vec<LearnerId>, ratios: &SplitRatios) -> Self {
        let sizes = ratios.block_sizes(order.len());
        let mut it = order.into_iter();
        let mut take = |n: usize| -> Vec<LearnerId> { it.by_ref().take(n).collect() };
        DatasetSplits {
            mode,
            train: take(sizes[0]),
            valid: take(sizes[1]),
            adapt: take(sizes[2]),
            test: take(sizes[3]),
        }
    }

    pub fn parts(&self) -> [(&'static str, &[LearnerId]); 4] {
        [
            ("train", &self.train),
            ("valid", &self.valid),
            ("adapt", &self.adapt),
            ("test", &self.test),
        ]
    }

    pub fn sizes(&self) -> [usize; 4] {
        [
            self.train.len(),
            self.valid.len(),
            self.adapt.len(),
            self.test.len(),
        ]
    }

    /// True when the four sets are disjoint and their union is `all`.
    pub fn is_partition_of(&self, all: &[LearnerId]) -> bool {
        let mut seen = HashSet::new();
        for (_, ids) in self.parts() {
            for id in ids {
                if !seen.insert(*id) {
                    return false;
                }
            }
        }
        let all: HashSet<_> = all.iter().copied().collect();
        seen == all
    }
}

fn check_count(n: usize) -> Result<()> {
    if n < 4 {
        return Err(Error::Size(format!("{n} learners cannot fill four splits")));
    }
    Ok(())
}

/// Orders learners by first-interaction timestamp (ties by id) and cuts
/// contiguous train/valid/adapt/test blocks.
pub fn split_temporal(sequences: &[InteractionSequence], ratios: &SplitRatios) -> Result<DatasetSplits> {
    check_count(sequences.len())?;
    let mut keyed: Vec<(i64, LearnerId)> = sequences
        .iter()
        .map(|s| (s.first_timestamp().unwrap_or(i64::MAX), s.learner))
        .collect();
    keyed.sort_unstable();
    Ok(DatasetSplits::from_order(
        SplitMode::Temporal,
        keyed.into_iter().map(|(_, id)| id).collect(),
        ratios,
    ))
}

/// Anything that can report per-concept knowledge states along a sequence.
pub trait StateEncoder {
    fn is_trained(&self) -> bool;

    /// Knowledge state after consuming the first `t` interactions, for each
    /// requested `t` (1-based).
    fn states_at(&self, sequence: &InteractionSequence, steps: &[usize]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GroupDistance {
    #[default]
    Kl,
    JensenShannon,
}

impl FromStr for GroupDistance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(GroupDistance::Kl),
            "js" => Ok(GroupDistance::JensenShannon),
            other => Err(Error::Config(format!("unknown distance {other:?}"))),
        }
    }
}

impl fmt::Display for GroupDistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupDistance::Kl => "kl",
            GroupDistance::JensenShannon => "js",
        })
    }
}

/// Distance between each learner's normalized knowledge state at step
/// `⌊len/2⌋` and at step `len` (final state as the leading argument).
pub fn group_distances(
    sequences: &[InteractionSequence],
    encoder: &dyn StateEncoder,
    distance: GroupDistance,
) -> Result<Vec<(LearnerId, f64)>> {
    if !encoder.is_trained() {
        return Err(Error::Contract("group split needs a trained encoder".into()));
    }
    sequences
        .iter()
        .map(|s| {
            let len = s.len();
            if len < 2 {
                return Err(Error::Contract(format!(
                    "learner {} has {len} interaction(s); group split needs 2",
                    s.learner
                )));
            }
            let states = encoder.states_at(s, &[len / 2, len])?;
            let d = match distance {
                GroupDistance::Kl => kl_normalized(&states[1], &states[0])?,
                GroupDistance::JensenShannon => js_normalized(&states[1], &states[0])?,
            };
            Ok((s.learner, d))
        })
        .collect()
}

/// Orders learners by ascending state distance (ties by id) and cuts
/// contiguous blocks.
pub fn split_group(
    sequences: &[InteractionSequence],
    encoder: &dyn StateEncoder,
    distance: GroupDistance,
    ratios: &SplitRatios,
) -> Result<DatasetSplits> {
    check_count(sequences.len())?;
    let mut keyed = group_distances(sequences, encoder, distance)?;
    keyed.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(DatasetSplits::from_order(
        SplitMode::Group,
        keyed.into_iter().map(|(id, _)| id).collect(),
        ratios,
    ))
}

const MANIFEST_MAGIC: &str = "# shiftkt split manifest v1";

/// Plain-text manifest: a magic line, `key<TAB>value` metadata, then one
/// `[section]` per split with one learner id per line.
pub fn write_manifest(splits: &DatasetSplits, meta: &[(&str, String)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MANIFEST_MAGIC}");
    let _ = writeln!(out, "mode\t{}", splits.mode);
    for (k, v) in meta {
        let _ = writeln!(out, "{k}\t{v}");
    }
    for (name, ids) in splits.parts() {
        let _ = writeln!(out, "[{name}]");
        for id in ids {
            let _ = writeln!(out, "{id}");
        }
    }
    out
}

pub fn read_manifest(text: &str) -> Result<DatasetSplits> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == MANIFEST_MAGIC => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "not a split manifest".into(),
            })
        }
    }
    let mut mode = None;
    let mut sections: [Vec<LearnerId>; 4] = Default::default();
    let mut current: Option<usize> = None;
    for (n, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: n + 1,
            message: m.to_string(),
        };
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(
                ["train", "valid", "adapt", "test"]
                    .iter()
                    .position(|s| *s == name)
                    .ok_or_else(|| bad("unknown section"))?,
            );
        } else if let Some(section) = current {
            sections[section].push(line.parse().map_err(|_| bad("bad learner id"))?);
        } else if let Some(("mode", m)) = line.split_once('\t') {
            mode = Some(m.parse::<SplitMode>()?);
        }
    }
    let [train, valid, adapt, test] = sections;
    Ok(DatasetSplits {
        mode: mode.ok_or_else(|| Error::Parse {
            line: 2,
            message: "manifest has no mode".into(),
        })?,
        train,
        valid,
        adapt,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::super::Interaction;
    use super::*;

    fn learners(starts: &[i64]) -> Vec<InteractionSequence> {
        starts
            .iter()
            .enumerate()
            .map(|(i, &t)| InteractionSequence {
                learner: i as u64,
                interactions: vec![Interaction {
                    question: 0,
                    concepts: vec![0],
                    response: 1,
                    timestamp: t,
                }],
            })
            .collect()
    }

    #[test]
    fn rounding_rule() {
        let r = SplitRatios::default();
        assert_eq!(r.block_sizes(100), [70, 10, 10, 10]);
        assert_eq!(r.block_sizes(10), [7, 1, 1, 1]);
        assert_eq!(r.block_sizes(11), [7, 1, 1, 2]);
        assert_eq!(r.block_sizes(20), [14, 2, 2, 2]);
    }

    #[test]
    fn ratios_are_normalized() {
        let r: SplitRatios = "8:1:0.5:0.5".parse().unwrap();
        assert_eq!(r.block_sizes(100), [80, 10, 5, 5]);
        assert!("7:1:1".parse::<SplitRatios>().is_err());
        assert!("7:1:0:1".parse::<SplitRatios>().is_err());
    }

    #[test]
    fn temporal_orders_by_start_then_id() {
        let seqs = learners(&[50, 10, 10, 40, 30, 20, 60, 70, 80, 90]);
        let s = split_temporal(&seqs, &SplitRatios::default()).unwrap();
        assert_eq!(s.train, vec![1, 2, 5, 4, 3, 0, 6]);
        assert_eq!((s.valid.clone(), s.adapt.clone(), s.test.clone()), (vec![7], vec![8], vec![9]));
        assert!(s.is_partition_of(&(0..10).collect::<Vec<_>>()));
    }

    #[test]
    fn too_few_learners() {
        assert!(matches!(
            split_temporal(&learners(&[1, 2, 3]), &SplitRatios::default()),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let seqs = learners(&[5, 4, 3, 2, 1, 0, 9, 8, 7, 6, 11]);
        let s = split_temporal(&seqs, &SplitRatios::default()).unwrap();
        let text = write_manifest(&s, &[("seed", "3".into())]);
        assert_eq!(read_manifest(&text).unwrap(), s);
        assert_eq!(write_manifest(&read_manifest(&text).unwrap(), &[("seed", "3".into())]), text);
    }
}
