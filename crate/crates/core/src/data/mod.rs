//! Interaction logs: parsing, preprocessing, windowing and splits.

mod parse;
mod preprocess;
mod split;
mod window;

pub use parse::{parse_interactions, parse_interactions_from_reader, ColumnMapping};
pub use preprocess::{filter_short, remap_concept_combinations, ConceptMap};
pub use split::{
    read_manifest, split_group, split_temporal, write_manifest, DatasetSplits, GroupDistance,
    SplitMode, SplitRatios, StateEncoder,
};
pub use window::{context_window, make_windows, Window};

pub type LearnerId = u64;

/// One response record `(question, concepts, response, timestamp)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub question: u64,
    /// Sorted, deduplicated and nonempty.
    pub concepts: Vec<u64>,
    /// 0 or 1.
    pub response: u8,
    /// Seconds.
    pub timestamp: i64,
}

impl Interaction {
    pub fn correct(&self) -> bool {
        self.response == 1
    }
}

/// A learner's interactions in nondecreasing timestamp order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionSequence {
    pub learner: LearnerId,
    pub interactions: Vec<Interaction>,
}

impl InteractionSequence {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn first_timestamp(&self) -> Option<i64> {
        self.interactions.first().map(|x| x.timestamp)
    }

    /// The single concept id of interaction `i` after remapping.
    pub fn concept(&self, i: usize) -> u64 {
        self.interactions[i].concepts[0]
    }

    pub fn responses(&self) -> impl Iterator<Item = u8> + '_ {
        self.interactions.iter().map(|x| x.response)
    }
}

/// Sequences whose concepts have been remapped to dense single ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<InteractionSequence>,
    pub num_concepts: usize,
}

impl Dataset {
    pub fn learner_ids(&self) -> Vec<LearnerId> {
        self.sequences.iter().map(|s| s.learner).collect()
    }

    /// Sequences for `ids`, in the order given.
    pub fn select(&self, ids: &[LearnerId]) -> Vec<&InteractionSequence> {
        let index: std::collections::HashMap<LearnerId, &InteractionSequence> =
            self.sequences.iter().map(|s| (s.learner, s)).collect();
        ids.iter().filter_map(|id| index.get(id).copied()).collect()
    }
}
