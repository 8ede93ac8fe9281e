use crate::error::{Error, Result};

use super::{InteractionSequence, LearnerId};

/// Fixed-capacity slice of a learner's sequence.
///
/// Concept entries are tokens: remapped concept `c` is stored as `c + 1`
/// and `0` marks padding. Every position at or after `len` is padding and
/// holds 0 in all three arrays.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub learner: LearnerId,
    pub concepts: Vec<usize>,
    pub responses: Vec<u8>,
    pub timestamps: Vec<i64>,
    pub len: usize,
    /// Index of the window's first interaction in the learner's sequence.
    pub offset: usize,
}

impl Window {
    /// Builds a window from unpadded 0-based concept ids, padding to `capacity`.
    pub fn from_parts(
        learner: LearnerId,
        concepts: &[usize],
        responses: &[u8],
        timestamps: &[i64],
        capacity: usize,
    ) -> Result<Window> {
        let len = concepts.len();
        if responses.len() != len || timestamps.len() != len {
            return Err(Error::dim(
                "window",
                format!(
                    "{len} concepts, {} responses, {} timestamps",
                    responses.len(),
                    timestamps.len()
                ),
            ));
        }
        if len > capacity {
            return Err(Error::Size(format!("{len} interactions exceed capacity {capacity}")));
        }
        if let Some(r) = responses.iter().find(|&&r| r > 1) {
            return Err(Error::Validation(format!("response {r} is not 0 or 1")));
        }
        let mut w = Window {
            learner,
            concepts: vec![0; capacity],
            responses: vec![0; capacity],
            timestamps: vec![0; capacity],
            len,
            offset: 0,
        };
        for i in 0..len {
            w.concepts[i] = concepts[i] + 1;
            w.responses[i] = responses[i];
            w.timestamps[i] = timestamps[i];
        }
        Ok(w)
    }

    pub fn capacity(&self) -> usize {
        self.concepts.len()
    }

    /// 0-based concept id at step `i`, or `None` for padding.
    pub fn concept(&self, i: usize) -> Option<usize> {
        (i < self.len).then(|| self.concepts[i] - 1)
    }

    /// The first `t` steps, padded back to the same capacity.
    pub fn prefix(&self, t: usize) -> Window {
        let t = t.min(self.len);
        let mut w = self.clone();
        for i in t..self.capacity() {
            w.concepts[i] = 0;
            w.responses[i] = 0;
            w.timestamps[i] = 0;
        }
        w.len = t;
        w
    }

    /// Steps `start..len` as a new window of capacity `len - start`.
    pub fn suffix(&self, start: usize) -> Window {
        let start = start.min(self.len);
        Window {
            learner: self.learner,
            concepts: self.concepts[start..self.len].to_vec(),
            responses: self.responses[start..self.len].to_vec(),
            timestamps: self.timestamps[start..self.len].to_vec(),
            len: self.len - start,
            offset: self.offset + start,
        }
    }
}

/// Cuts a remapped sequence into consecutive non-overlapping windows of
/// capacity `k`; only the last one may be partially filled.
pub fn make_windows(sequence: &InteractionSequence, k: usize) -> Result<Vec<Window>> {
    if k < 2 {
        return Err(Error::Config(format!("window capacity must be at least 2, got {k}")));
    }
    let mut out = Vec::with_capacity(sequence.len().div_ceil(k));
    for (n, chunk) in sequence.interactions.chunks(k).enumerate() {
        let concepts: Vec<usize> = chunk.iter().map(|x| x.concepts[0] as usize).collect();
        let responses: Vec<u8> = chunk.iter().map(|x| x.response).collect();
        let timestamps: Vec<i64> = chunk.iter().map(|x| x.timestamp).collect();
        let mut w = Window::from_parts(sequence.learner, &concepts, &responses, &timestamps, k)?;
        w.offset = n * k;
        out.push(w);
    }
    Ok(out)
}

/// The adaptation context of a window: its first `⌊len/2⌋` steps, in a
/// window of capacity `⌊capacity/2⌋` (both at least 1).
pub fn context_window(window: &Window) -> Window {
    let len = (window.len / 2).max(1).min(window.len);
    let cap = (window.capacity() / 2).max(len);
    let mut w = Window {
        learner: window.learner,
        concepts: window.concepts[..cap].to_vec(),
        responses: window.responses[..cap].to_vec(),
        timestamps: window.timestamps[..cap].to_vec(),
        len,
        offset: window.offset,
    };
    for i in len..cap {
        w.concepts[i] = 0;
        w.responses[i] = 0;
        w.timestamps[i] = 0;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::super::Interaction;
    use super::*;

    fn sequence(n: usize) -> InteractionSequence {
        InteractionSequence {
            learner: 3,
            interactions: (0..n)
                .map(|i| Interaction {
                    question: i as u64,
                    concepts: vec![(i % 4) as u64],
                    response: (i % 2) as u8,
                    timestamp: 100 + i as i64,
                })
                .collect(),
        }
    }

    #[test]
    fn covers_sequence_with_padded_tail() {
        let ws = make_windows(&sequence(25), 10).unwrap();
        assert_eq!(ws.iter().map(|w| w.len).collect::<Vec<_>>(), vec![10, 10, 5]);
        assert_eq!(ws[2].offset, 20);
        let last = &ws[2];
        for i in 5..10 {
            assert_eq!(
                (last.concepts[i], last.responses[i], last.timestamps[i]),
                (0, 0, 0)
            );
        }
        assert_eq!(last.concept(0), Some(0));
        assert_eq!(last.concepts[1], 2);
    }

    #[test]
    fn exact_fit_is_one_window() {
        let ws = make_windows(&sequence(10), 10).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].len, 10);
    }

    #[test]
    fn rejects_tiny_capacity() {
        assert!(make_windows(&sequence(3), 1).is_err());
    }

    #[test]
    fn context_is_first_half() {
        let w = &make_windows(&sequence(9), 12).unwrap()[0];
        let c = context_window(w);
        assert_eq!((c.len, c.capacity()), (4, 6));
        assert_eq!(&c.concepts[..4], &w.concepts[..4]);
        assert!(c.concepts[4..].iter().all(|&x| x == 0));
    }
}
