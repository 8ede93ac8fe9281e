use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Interaction, InteractionSequence, LearnerId};

/// Header names of the five required columns. Extra columns are ignored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnMapping {
    pub learner: String,
    pub question: String,
    pub concepts: String,
    pub response: String,
    pub timestamp: String,
    /// Separator between concept ids inside the concepts field.
    pub concept_separator: char,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            learner: "learner".into(),
            question: "question".into(),
            concepts: "concepts".into(),
            response: "response".into(),
            timestamp: "timestamp".into(),
            concept_separator: ';',
        }
    }
}

impl ColumnMapping {
    /// Parses `learner,question,concepts,response,timestamp` style lists.
    pub fn from_list(list: &str) -> Result<Self> {
        let names: Vec<&str> = list.split(',').map(str::trim).collect();
        let [learner, question, concepts, response, timestamp] = names.as_slice() else {
            return Err(Error::Config(format!(
                "column mapping needs five names, got {list:?}"
            )));
        };
        Ok(ColumnMapping {
            learner: learner.to_string(),
            question: question.to_string(),
            concepts: concepts.to_string(),
            response: response.to_string(),
            timestamp: timestamp.to_string(),
            concept_separator: ';',
        })
    }

    pub fn to_list(&self) -> String {
        [
            &self.learner,
            &self.question,
            &self.concepts,
            &self.response,
            &self.timestamp,
        ]
        .map(String::as_str)
        .join(",")
    }
}

pub fn parse_interactions(path: &Path, mapping: &ColumnMapping) -> Result<Vec<InteractionSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions_from_reader(file, mapping)
}

/// One sequence per learner, ordered by learner id; within a learner,
/// interactions are sorted by timestamp with ties kept in file order.
pub fn parse_interactions_from_reader<R: Read>(
    reader: R,
    mapping: &ColumnMapping,
) -> Result<Vec<InteractionSequence>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("header has no column {name:?}"),
        })
    };
    let (c_learner, c_question, c_concepts, c_response, c_time) = (
        col(&mapping.learner)?,
        col(&mapping.question)?,
        col(&mapping.concepts)?,
        col(&mapping.response)?,
        col(&mapping.timestamp)?,
    );

    let mut by_learner: BTreeMap<LearnerId, Vec<Interaction>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize, what: &str| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing {what} field"),
            })
        };
        let int = |i: usize, what: &str| -> Result<i64> {
            let raw = field(i, what)?;
            raw.parse::<i64>().map_err(|_| Error::Parse {
                line,
                message: format!("{what} {raw:?} is not an integer"),
            })
        };

        let learner = int(c_learner, "learner")?;
        let question = int(c_question, "question")?;
        let response = int(c_response, "response")?;
        let timestamp = int(c_time, "timestamp")?;
        if learner < 0 || question < 0 {
            return Err(Error::Parse {
                line,
                message: "learner and question ids must be nonnegative".into(),
            });
        }
        if response != 0 && response != 1 {
            return Err(Error::Validation(format!(
                "line {line}: response {response} is not 0 or 1"
            )));
        }

        let mut concepts = Vec::new();
        for part in field(c_concepts, "concepts")?.split(mapping.concept_separator) {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let id = part.parse::<u64>().map_err(|_| Error::Parse {
                line,
                message: format!("concept id {part:?} is not a nonnegative integer"),
            })?;
            concepts.push(id);
        }
        if concepts.is_empty() {
            return Err(Error::Validation(format!("line {line}: empty concepts field")));
        }
        concepts.sort_unstable();
        concepts.dedup();

        by_learner.entry(learner as u64).or_default().push(Interaction {
            question: question as u64,
            concepts,
            response: response as u8,
            timestamp,
        });
    }

    Ok(by_learner
        .into_iter()
        .map(|(learner, mut interactions)| {
            interactions.sort_by_key(|x| x.timestamp);
            InteractionSequence {
                learner,
                interactions,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<InteractionSequence>> {
        parse_interactions_from_reader(text.as_bytes(), &ColumnMapping::default())
    }

    const HEADER: &str = "learner,question,concepts,response,timestamp\n";

    #[test]
    fn maps_fields_directly() {
        let seqs = parse(&format!("{HEADER}7,101,5;9,1,1700000000\n")).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].learner, 7);
        assert_eq!(
            seqs[0].interactions[0],
            Interaction {
                question: 101,
                concepts: vec![5, 9],
                response: 1,
                timestamp: 1_700_000_000,
            }
        );
    }

    #[test]
    fn empty_concepts_rejected() {
        assert!(matches!(
            parse(&format!("{HEADER}7,101,,1,5\n")),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn bad_response_rejected() {
        let err = parse(&format!("{HEADER}7,101,3,2,5\n")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse(&format!("{HEADER}7,101,3,1,5\n7,x,3,1,6\n")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sorted_by_timestamp_with_stable_ties() {
        let seqs = parse(&format!("{HEADER}1,1,1,1,20\n1,2,1,0,10\n1,3,1,1,20\n")).unwrap();
        let qs: Vec<u64> = seqs[0].interactions.iter().map(|x| x.question).collect();
        assert_eq!(qs, vec![2, 1, 3]);
    }

    #[test]
    fn custom_mapping_and_missing_column() {
        let mapping = ColumnMapping::from_list("user_id,problem_id,skill,correct,ts").unwrap();
        let text = "ts,user_id,skill,problem_id,correct,extra\n9,3,4,5,0,zzz\n";
        let seqs = parse_interactions_from_reader(text.as_bytes(), &mapping).unwrap();
        assert_eq!(seqs[0].learner, 3);
        assert_eq!(seqs[0].interactions[0].timestamp, 9);
        assert!(matches!(
            parse("a,b\n1,2\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
