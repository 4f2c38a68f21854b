//! Text commands grounded with the bundled language model.

use uvms_core::language::{
    build_graph, bundled_corpus, chunk, command_from_grounding, infer, train, LanguageError, LanguageModelWeights,
    SymbolSpace, TrainConfig, WorldModel, DEFAULT_BEAM,
};
use uvms_core::planning::TaskEvent;

#[derive(Debug, Clone)]
pub struct Grounder {
    pub space: SymbolSpace,
    pub weights: LanguageModelWeights,
}

impl Grounder {
    pub fn new(space: SymbolSpace, weights: LanguageModelWeights) -> Self {
        Self { space, weights }
    }

    /// Trained on the full bundled corpus.
    pub fn bundled() -> Self {
        let space = SymbolSpace::testbed();
        let (weights, _) = train(&bundled_corpus(), &space, &TrainConfig::default()).expect("bundled corpus trains");
        Self { space, weights }
    }

    /// Grounding set and the events it maps to, for a scene holding `tools`.
    pub fn ground(&self, text: &str, tools: &[&str]) -> Result<(Vec<String>, Vec<TaskEvent>), LanguageError> {
        let tree = chunk(text)?;
        let graph = build_graph(&tree, &self.space, &WorldModel::with_tools(tools.iter().copied()))?;
        let g = infer(&graph, &self.weights, DEFAULT_BEAM);
        let events = command_from_grounding(&g.symbols, &self.space)?;
        Ok((g.symbols, events))
    }
}
