//! Value scoring and selection of learners whose state has drifted.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index::sample;

use crate::backbone::Backbone;
use crate::data::{LearnerId, Window};
use crate::divergence::kl_normalized;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueScore {
    pub learner: LearnerId,
    pub kl_factor: f64,
    pub zpd_factor: f64,
    pub score: f64,
}

/// `KL(full ‖ half) + 1` over the normalized proficiency vectors.
pub fn fine_grained_change(state_half: &[f64], state_full: &[f64]) -> Result<f64> {
    Ok(kl_normalized(state_full, state_half)? + 1.0)
}

/// How the two correct-rate means are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ZpdDivisor {
    /// Divide by `k` and `⌊k/2⌋`; padding counts as incorrect.
    #[default]
    Capacity,
    /// Divide by the number of unpadded steps inside each span.
    Observed,
}

impl FromStr for ZpdDivisor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "capacity" => Ok(ZpdDivisor::Capacity),
            "observed" => Ok(ZpdDivisor::Observed),
            _ => Err(Error::Config(format!("unknown zpd divisor {s:?}"))),
        }
    }
}

/// Rate-of-change factor between the first-half and full-window correct
/// rates, weighted by the number of attempted steps.
pub fn zpd(responses: &[u8], k: usize, len: usize) -> Result<f64> {
    zpd_with(responses, k, len, ZpdDivisor::Capacity, true)
}

pub fn zpd_with(
    responses: &[u8],
    k: usize,
    len: usize,
    divisor: ZpdDivisor,
    reliability: bool,
) -> Result<f64> {
    if len == 0 {
        return Err(Error::Degenerate("zpd over an empty window".into()));
    }
    if len > k || responses.len() < len {
        return Err(Error::Contract(format!(
            "zpd: length {len} with capacity {k} and {} responses",
            responses.len()
        )));
    }
    let half = (k / 2).max(1);
    let sum = |n: usize| responses[..n.min(len)].iter().map(|&r| r as f64).sum::<f64>();
    let (div_full, div_half) = match divisor {
        ZpdDivisor::Capacity => (k as f64, half as f64),
        ZpdDivisor::Observed => (len as f64, half.min(len) as f64),
    };
    let mean_full = sum(k) / div_full;
    let mean_half = sum(half) / div_half;
    let weight = if reliability { len as f64 } else { 1.0 };
    Ok((mean_full - mean_half).abs() * weight / (mean_half + 1.0) + 1.0)
}

pub fn value_score(kl_factor: f64, zpd_factor: f64) -> f64 {
    kl_factor * zpd_factor
}

/// Top `⌈frequency · n⌉` learners by score, ties to the smaller id.
pub fn select(scores: &[ValueScore], frequency: f64) -> Result<BTreeSet<LearnerId>> {
    let n = selection_size(scores.len(), frequency)?;
    let mut order: Vec<&ValueScore> = scores.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.learner.cmp(&b.learner)));
    Ok(order[..n].iter().map(|s| s.learner).collect())
}

/// Uniform sample of `⌈frequency · n⌉` learners, ignoring scores.
pub fn select_random(scores: &[ValueScore], frequency: f64, seed: u64) -> Result<BTreeSet<LearnerId>> {
    let n = selection_size(scores.len(), frequency)?;
    let mut rng = substream(seed, "controller-random");
    Ok(sample(&mut rng, scores.len(), n)
        .into_iter()
        .map(|i| scores[i].learner)
        .collect())
}

fn selection_size(n: usize, frequency: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&frequency) {
        return Err(Error::Contract(format!("frequency {frequency} outside [0, 1]")));
    }
    Ok(((frequency * n as f64).ceil() as usize).min(n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControllerConfig {
    pub use_kl: bool,
    pub use_zpd: bool,
    pub use_reliability: bool,
    /// Ignore scores and sample uniformly with the run seed.
    pub random: bool,
    pub divisor: ZpdDivisor,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerVariant::Full.config()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControllerVariant {
    Full,
    NoKl,
    NoZpd,
    NoReliability,
    Random,
}

impl ControllerVariant {
    pub const ALL: [ControllerVariant; 5] = [
        ControllerVariant::Full,
        ControllerVariant::NoKl,
        ControllerVariant::NoZpd,
        ControllerVariant::NoReliability,
        ControllerVariant::Random,
    ];

    pub fn config(self) -> ControllerConfig {
        let full = ControllerConfig {
            use_kl: true,
            use_zpd: true,
            use_reliability: true,
            random: false,
            divisor: ZpdDivisor::Capacity,
        };
        match self {
            ControllerVariant::Full => full,
            ControllerVariant::NoKl => ControllerConfig { use_kl: false, ..full },
            ControllerVariant::NoZpd => ControllerConfig { use_zpd: false, ..full },
            ControllerVariant::NoReliability => ControllerConfig {
                use_reliability: false,
                ..full
            },
            ControllerVariant::Random => ControllerConfig { random: true, ..full },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ControllerVariant::Full => "full",
            ControllerVariant::NoKl => "no-kl",
            ControllerVariant::NoZpd => "no-zpd",
            ControllerVariant::NoReliability => "no-rel",
            ControllerVariant::Random => "random",
        }
    }
}

impl FromStr for ControllerVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ControllerVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller variant {s:?}")))
    }
}

/// Scores a window from the backbone's states after `⌊len/2⌋` and `len`
/// steps and the window's responses.
pub fn score_window(backbone: &Backbone, window: &Window, config: &ControllerConfig) -> Result<ValueScore> {
    if window.len == 0 {
        return Err(Error::Degenerate(format!(
            "learner {} has an empty window",
            window.learner
        )));
    }
    let kl_factor = if config.use_kl {
        let states = backbone.forward(window, None)?;
        let half = (window.len / 2).max(1);
        fine_grained_change(&states[half - 1].proficiency, &states[window.len - 1].proficiency)?
    } else {
        1.0
    };
    let zpd_factor = if config.use_zpd {
        zpd_with(
            &window.responses,
            window.capacity(),
            window.len,
            config.divisor,
            config.use_reliability,
        )?
    } else {
        1.0
    };
    Ok(ValueScore {
        learner: window.learner,
        kl_factor,
        zpd_factor,
        score: value_score(kl_factor, zpd_factor),
    })
}

pub fn score_windows(
    backbone: &Backbone,
    windows: &[&Window],
    config: &ControllerConfig,
) -> Result<Vec<ValueScore>> {
    windows.iter().map(|w| score_window(backbone, w, config)).collect()
}

/// Selection under a controller configuration.
pub fn select_with(
    scores: &[ValueScore],
    frequency: f64,
    config: &ControllerConfig,
    seed: u64,
) -> Result<BTreeSet<LearnerId>> {
    if config.random {
        select_random(scores, frequency, seed)
    } else {
        select(scores, frequency)
    }
}

/// Tab-separated score table with a selected flag per learner.
pub fn score_report(scores: &[ValueScore], selected: &BTreeSet<LearnerId>) -> String {
    let mut out = String::from("learner\tkl_factor\tzpd_factor\tscore\tselected\n");
    for s in scores {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}",
            s.learner,
            s.kl_factor,
            s.zpd_factor,
            s.score,
            selected.contains(&s.learner) as u8
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vs(learner: LearnerId, score: f64) -> ValueScore {
        ValueScore {
            learner,
            kl_factor: 1.0,
            zpd_factor: score,
            score,
        }
    }

    #[test]
    fn kl_factor_hand_values() {
        assert_eq!(fine_grained_change(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 1.0);
        let v = fine_grained_change(&[0.5, 0.5], &[0.8, 0.2]).unwrap();
        let expect = 1.0 + 0.8 * (0.8f64 / 0.5).ln() + 0.2 * (0.2f64 / 0.5).ln();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 1.1927).abs() < 1e-4);
        assert!(matches!(
            fine_grained_change(&[0.5], &[0.5, 0.5]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zpd_hand_values() {
        let r = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        assert_eq!(zpd(&r, 10, 10).unwrap(), 3.5);
        assert_eq!(zpd_with(&r, 10, 10, ZpdDivisor::Capacity, false).unwrap(), 1.25);
        assert_eq!(zpd(&[1; 10], 10, 10).unwrap(), 1.0);
        assert_eq!(zpd(&[0; 10], 10, 10).unwrap(), 1.0);
        assert!(matches!(zpd(&r, 10, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn zpd_grows_with_length() {
        let long = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let short = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        assert!(zpd(&long, 10, 10).unwrap() > zpd(&short, 10, 5).unwrap());
    }

    #[test]
    fn selection_rules() {
        let scores = [vs(0, 4.2), vs(1, 1.0), vs(2, 4.2), vs(3, 2.0)];
        assert_eq!(select(&scores, 0.5).unwrap(), BTreeSet::from([0, 2]));
        assert_eq!(select(&scores, 1.0).unwrap().len(), 4);
        assert!(select(&scores, 0.0).unwrap().is_empty());
        assert!(matches!(select(&scores, 1.5), Err(Error::Contract(_))));
        assert_eq!(select(&scores, 0.3).unwrap(), BTreeSet::from([0, 2]));
        assert_eq!(value_score(1.2, 3.5), 1.2 * 3.5);
    }

    #[test]
    fn random_selection_is_seeded() {
        let scores: Vec<ValueScore> = (0..10).map(|i| vs(i, 1.0)).collect();
        let a = select_random(&scores, 0.3, 5).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, select_random(&scores, 0.3, 5).unwrap());
    }
}
