//! Grounding operator commands to robot symbols with a distributed
//! correspondence graph: rule-chunked parse trees, per-factor log-linear
//! correspondence models and exact bottom-up max-product inference.

pub mod command;
pub mod corpus;
pub mod infer;
pub mod model;
pub mod parse;

pub use command::command_from_grounding;
pub use corpus::{load_corpus, split_corpus, Example};
pub use infer::{brute_force, build_graph, infer, Constituent, DcgGraph, Grounding, DEFAULT_BEAM};
pub use corpus::{bundled_corpus, parse_corpus};
pub use model::{train, LanguageModelWeights, TrainConfig, TrainReport};
pub use parse::{chunk, Label, ParseNode, ParseTree};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolKind {
    Object,
    Action,
    Location,
}

impl SymbolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SymbolKind::Object => "object",
            SymbolKind::Action => "action",
            SymbolKind::Location => "location",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingSymbol {
    pub id: String,
    pub kind: SymbolKind,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl GroundingSymbol {
    pub fn new(kind: SymbolKind, name: &str, attr: (&str, &str)) -> Self {
        Self {
            id: format!("{}:{name}", kind.as_str()),
            kind,
            attributes: BTreeMap::from([(attr.0.to_string(), attr.1.to_string())]),
        }
    }
}

/// Symbol space Γ, kept sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolSpace {
    symbols: Vec<GroundingSymbol>,
}

impl SymbolSpace {
    pub fn new(mut symbols: Vec<GroundingSymbol>) -> Result<Self, LanguageError> {
        symbols.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = symbols.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(LanguageError::DuplicateSymbol(w[0].id.clone()));
        }
        Ok(Self { symbols })
    }

    /// Tools, task steps and places of the pick-and-place task.
    pub fn testbed() -> Self {
        use SymbolKind::*;
        let mut s = Vec::new();
        for t in ["pushcore", "scoop", "slurp"] {
            s.push(GroundingSymbol::new(Object, t, ("tool", t)));
        }
        for (a, step) in [
            ("grasp", "grasp"),
            ("release", "return"),
            ("stow", "named_pose"),
            ("goto_sample", "sample"),
            ("execute", "confirm"),
            ("stop", "stop"),
        ] {
            s.push(GroundingSymbol::new(Action, a, ("step", step)));
        }
        for l in ["tooltray", "sample_site"] {
            s.push(GroundingSymbol::new(Location, l, ("place", l)));
        }
        Self::new(s).expect("unique ids")
    }

    pub fn symbols(&self) -> &[GroundingSymbol] {
        &self.symbols
    }

    pub fn get(&self, id: &str) -> Option<&GroundingSymbol> {
        self.symbols.iter().find(|s| s.id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    /// Drops object symbols whose `tool` attribute is not among `tools`.
    pub fn filtered(&self, tools: &[&str]) -> Self {
        let symbols = self
            .symbols
            .iter()
            .filter(|s| s.kind != SymbolKind::Object || s.attributes.get("tool").is_some_and(|t| tools.contains(&t.as_str())))
            .cloned()
            .collect();
        Self { symbols }
    }
}

/// What the scene currently holds; object symbols are only candidates when
/// their tool is present.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorldModel {
    pub tools: BTreeSet<String>,
}

impl WorldModel {
    pub fn with_tools<'a>(tools: impl IntoIterator<Item = &'a str>) -> Self {
        Self { tools: tools.into_iter().map(str::to_string).collect() }
    }

    /// Admits every object of `space`.
    pub fn everything(space: &SymbolSpace) -> Self {
        Self::with_tools(space.symbols.iter().filter_map(|s| s.attributes.get("tool")).map(String::as_str))
    }

    pub fn admit(&self, space: &SymbolSpace) -> SymbolSpace {
        let tools: Vec<&str> = self.tools.iter().map(String::as_str).collect();
        space.filtered(&tools)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LanguageError {
    #[error("symbol space is empty")]
    EmptySymbolSpace,
    #[error("duplicate symbol id {0}")]
    DuplicateSymbol(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("gold symbol {0} is not in the symbol space")]
    UnknownGoldSymbol(String),
    #[error("cannot parse \"{utterance}\": {reason}")]
    Parse { utterance: String, reason: String },
    #[error("expected exactly one action, got {0:?}")]
    AmbiguousAction(Vec<String>),
    #[error("action {0} needs an object")]
    MissingObject(String),
    #[error("corpus line {line}: {message}")]
    BadCorpus { line: usize, message: String },
}
