use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::InteractionSequence;

/// Injective map from original concept-id sets to dense ids.
///
/// Ids are handed out in order of first appearance, scanning sequences in
/// the order given and interactions in time order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConceptMap {
    sets: Vec<Vec<u64>>,
    index: HashMap<Vec<u64>, u64>,
}

impl ConceptMap {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn id_of(&self, set: &[u64]) -> Option<u64> {
        let mut key = set.to_vec();
        key.sort_unstable();
        key.dedup();
        self.index.get(&key).copied()
    }

    pub fn set_of(&self, id: u64) -> Option<&[u64]> {
        self.sets.get(id as usize).map(Vec::as_slice)
    }

    fn intern(&mut self, set: &[u64]) -> u64 {
        if let Some(&id) = self.index.get(set) {
            return id;
        }
        let id = self.sets.len() as u64;
        self.sets.push(set.to_vec());
        self.index.insert(set.to_vec(), id);
        id
    }

    /// Tab-separated `id<TAB>c1;c2;...`, one line per id.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# remapped_id\tconcepts\n");
        for (id, set) in self.sets.iter().enumerate() {
            let joined: Vec<String> = set.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{id}\t{}", joined.join(";"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = ConceptMap::default();
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                line: n + 1,
                message: format!("bad concept map line {line:?}"),
            };
            let (id, set) = line.split_once('\t').ok_or_else(bad)?;
            let id: u64 = id.parse().map_err(|_| bad())?;
            let set: Vec<u64> = set
                .split(';')
                .map(|c| c.parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad())?;
            if id != map.len() as u64 || map.intern(&set) != id {
                return Err(bad());
            }
        }
        Ok(map)
    }
}

/// Replaces every concept set with a single dense id (one id per distinct set).
pub fn remap_concept_combinations(
    sequences: &[InteractionSequence],
) -> (Vec<InteractionSequence>, ConceptMap) {
    let mut map = ConceptMap::default();
    let remapped = sequences
        .iter()
        .map(|s| InteractionSequence {
            learner: s.learner,
            interactions: s
                .interactions
                .iter()
                .map(|x| {
                    let mut key = x.concepts.clone();
                    key.sort_unstable();
                    key.dedup();
                    let mut y = x.clone();
                    y.concepts = vec![map.intern(&key)];
                    y
                })
                .collect(),
        })
        .collect();
    (remapped, map)
}

/// Drops learners with fewer than `min_len` interactions.
pub fn filter_short(
    sequences: Vec<InteractionSequence>,
    min_len: usize,
) -> Result<Vec<InteractionSequence>> {
    let kept: Vec<_> = sequences.into_iter().filter(|s| s.len() >= min_len).collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset("filtering short sequences"));
    }
    Ok(kept)
}
