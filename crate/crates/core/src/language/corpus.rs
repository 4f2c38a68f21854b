//! Annotated command corpora in JSON-lines form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::parse::{ParseNode, ParseTree};
use super::LanguageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Line {
    utterance: String,
    parse: ParseNode,
    groundings: Vec<String>,
}

/// An utterance with its parse, per-constituent annotations and the gold
/// grounding set of the whole command.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub utterance: String,
    pub tree: ParseTree,
    pub groundings: Vec<String>,
}

impl Example {
    pub fn from_json(s: &str) -> Result<Self, String> {
        let line: Line = serde_json::from_str(s).map_err(|e| e.to_string())?;
        let tree = ParseTree::new(line.parse)?;
        let mut groundings = line.groundings;
        groundings.sort();
        groundings.dedup();
        Ok(Self { utterance: line.utterance, tree, groundings })
    }

    pub fn to_json(&self) -> String {
        let line = Line { utterance: self.utterance.clone(), parse: self.tree.root.clone(), groundings: self.groundings.clone() };
        serde_json::to_string(&line).expect("example serializes")
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<Example>, LanguageError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Example::from_json(l).map_err(|message| LanguageError::BadCorpus { line: i + 1, message }))
        .collect()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Example>, LanguageError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| LanguageError::BadCorpus { line: 0, message: e.to_string() })?;
    parse_corpus(&text)
}

const BUNDLED: &str = include_str!("../../fixtures/toy_corpus.jsonl");

/// The annotated command corpus shipped with the crate.
pub fn bundled_corpus() -> Vec<Example> {
    parse_corpus(BUNDLED).expect("bundled corpus parses")
}

/// Deterministic 80/20 split: every fifth example is held out.
pub fn split_corpus(corpus: &[Example]) -> (Vec<Example>, Vec<Example>) {
    let (test, train): (Vec<_>, Vec<_>) = corpus.iter().enumerate().partition(|(i, _)| i % 5 == 4);
    (train.into_iter().map(|(_, e)| e.clone()).collect(), test.into_iter().map(|(_, e)| e.clone()).collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::language::parse::chunk;

    pub(crate) fn toy_corpus() -> Vec<Example> {
        bundled_corpus()
    }

    #[test]
    fn fixture_loads_and_splits() {
        let c = toy_corpus();
        assert_eq!(c.len(), 60);
        let (train, test) = split_corpus(&c);
        assert_eq!((train.len(), test.len()), (48, 12));
        assert!(test.iter().any(|e| e.utterance == "get the pushcore from the tooltray"));
    }

    #[test]
    fn chunker_reproduces_annotated_parses() {
        for ex in toy_corpus() {
            let t = chunk(&ex.utterance).unwrap();
            assert!(t.root.same_shape(&ex.tree.root), "{}", ex.utterance);
            assert_eq!(t.root.span, ex.tree.root.span);
        }
    }

    #[test]
    fn json_round_trip_and_errors() {
        let c = toy_corpus();
        let back = Example::from_json(&c[3].to_json()).unwrap();
        assert_eq!(back, c[3]);
        let err = parse_corpus("{\"utterance\":\"x\"}\n").unwrap_err();
        assert!(matches!(err, LanguageError::BadCorpus { line: 1, .. }));
    }
}
