//! Constituency trees for the command grammar `VB [NP] (IN [NP])*` and the
//! rule-based chunker that produces them.

use serde::{Deserialize, Serialize};

use super::LanguageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    VB,
    NN,
    DT,
    IN,
    NP,
    PP,
    VP,
}

impl Label {
    pub fn is_leaf(self) -> bool {
        matches!(self, Label::VB | Label::NN | Label::DT | Label::IN)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::VB => "VB",
            Label::NN => "NN",
            Label::DT => "DT",
            Label::IN => "IN",
            Label::NP => "NP",
            Label::PP => "PP",
            Label::VP => "VP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseNode {
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ParseNode>,
    /// Half-open token span.
    #[serde(default)]
    pub span: (usize, usize),
    /// Annotated groundings (training data only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groundings: Vec<String>,
}

impl ParseNode {
    pub fn leaf(label: Label, word: &str) -> Self {
        Self { label, word: Some(word.to_string()), children: vec![], span: (0, 0), groundings: vec![] }
    }

    pub fn phrase(label: Label, children: Vec<ParseNode>) -> Self {
        Self { label, word: None, children, span: (0, 0), groundings: vec![] }
    }

    pub fn words(&self) -> Vec<&str> {
        match &self.word {
            Some(w) => vec![w.as_str()],
            None => self.children.iter().flat_map(|c| c.words()).collect(),
        }
    }

    fn assign_spans(&mut self, start: usize) -> usize {
        let mut end = start;
        if self.word.is_some() {
            end += 1;
        }
        for c in &mut self.children {
            end = c.assign_spans(end);
        }
        self.span = (start, end);
        end
    }

    fn check(&self) -> Result<(), String> {
        match (self.label.is_leaf(), &self.word, self.children.is_empty()) {
            (true, Some(_), true) => Ok(()),
            (false, None, _) => self.children.iter().try_for_each(|c| c.check()),
            _ => Err(format!("{} node must {}", self.label.as_str(), if self.label.is_leaf() { "carry exactly one word" } else { "not carry a word" })),
        }
    }

    /// Same structure, labels and words, ignoring annotations.
    pub fn same_shape(&self, other: &ParseNode) -> bool {
        self.label == other.label
            && self.word == other.word
            && self.children.len() == other.children.len()
            && self.children.iter().zip(&other.children).all(|(a, b)| a.same_shape(b))
    }
}

/// A single-rooted tree whose leaves are the words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTree {
    pub root: ParseNode,
}

impl ParseTree {
    pub fn new(mut root: ParseNode) -> Result<Self, String> {
        root.check()?;
        root.assign_spans(0);
        Ok(Self { root })
    }

    pub fn words(&self) -> Vec<&str> {
        self.root.words()
    }
}

pub const DETERMINERS: &[&str] = &["the", "a", "an", "this", "that"];
pub const PREPOSITIONS: &[&str] = &["from", "to", "towards", "toward", "inside", "into", "in", "at", "on", "onto", "near"];
pub const VERBS: &[&str] = &[
    "get", "grab", "retrieve", "fetch", "take", "release", "return", "put", "drop", "stow", "park", "go",
    "move", "head", "execute", "run", "stop", "halt", "freeze",
];

fn tokenize(utterance: &str) -> Vec<String> {
    utterance
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn noun_phrase(words: &[String]) -> ParseNode {
    let kids = words
        .iter()
        .map(|w| ParseNode::leaf(if DETERMINERS.contains(&w.as_str()) { Label::DT } else { Label::NN }, w))
        .collect();
    ParseNode::phrase(Label::NP, kids)
}

/// Chunks an imperative command: a leading verb, an optional noun phrase and
/// any number of prepositional phrases.
pub fn chunk(utterance: &str) -> Result<ParseTree, LanguageError> {
    let err = |reason: &str| LanguageError::Parse { utterance: utterance.to_string(), reason: reason.to_string() };
    let toks = tokenize(utterance);
    let Some(verb) = toks.first() else { return Err(err("empty utterance")) };
    if !VERBS.contains(&verb.as_str()) {
        return Err(err("utterance must start with a known verb"));
    }
    let is_prep = |w: &String| PREPOSITIONS.contains(&w.as_str());
    let mut children = vec![ParseNode::leaf(Label::VB, verb)];
    let mut i = 1;
    let start = i;
    while i < toks.len() && !is_prep(&toks[i]) {
        i += 1;
    }
    if i > start {
        children.push(noun_phrase(&toks[start..i]));
    }
    while i < toks.len() {
        let prep = ParseNode::leaf(Label::IN, &toks[i]);
        i += 1;
        let start = i;
        while i < toks.len() && !is_prep(&toks[i]) {
            i += 1;
        }
        let mut kids = vec![prep];
        if i > start {
            kids.push(noun_phrase(&toks[start..i]));
        }
        children.push(ParseNode::phrase(Label::PP, kids));
    }
    ParseTree::new(ParseNode::phrase(Label::VP, children)).map_err(|e| err(&e))
}
