//! Factor-graph construction and MAP inference over correspondence
//! variables.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use super::model::{features, softplus, LanguageModelWeights};
use super::parse::{Label, ParseNode, ParseTree};
use super::{GroundingSymbol, LanguageError, SymbolSpace, WorldModel};

/// Candidate subsets kept per constituent during inference.
pub const DEFAULT_BEAM: usize = 16;

/// One λ: a verb leaf or a phrase, with the words it owns directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constituent {
    pub label: Label,
    pub span: (usize, usize),
    pub words: Vec<String>,
    /// Indices of child constituents, all smaller than this one's.
    pub children: Vec<usize>,
    /// Annotated groundings, when the tree carried them.
    pub gold: Vec<String>,
}

/// Constituents in post-order (root last) and the candidate symbols shared
/// by all of them; `φ_ij` pairs constituent `i` with symbol `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcgGraph {
    pub constituents: Vec<Constituent>,
    pub symbols: Vec<GroundingSymbol>,
}

impl DcgGraph {
    pub fn new(constituents: Vec<Constituent>, mut symbols: Vec<GroundingSymbol>) -> Result<Self, String> {
        if constituents.is_empty() {
            return Err("graph has no constituents".into());
        }
        if symbols.is_empty() || symbols.len() > 64 {
            return Err(format!("need 1..=64 candidate symbols, got {}", symbols.len()));
        }
        symbols.sort_by(|a, b| a.id.cmp(&b.id));
        let mut parent = vec![None; constituents.len()];
        for (i, c) in constituents.iter().enumerate() {
            for &k in &c.children {
                if k >= i || parent[k].is_some() {
                    return Err(format!("constituent {i} has a bad child {k}"));
                }
                parent[k] = Some(i);
            }
        }
        let root = constituents.len() - 1;
        if let Some(orphan) = (0..root).find(|&i| parent[i].is_none()) {
            return Err(format!("constituent {orphan} is not connected to the root"));
        }
        Ok(Self { constituents, symbols })
    }

    pub fn root(&self) -> usize {
        self.constituents.len() - 1
    }

    pub fn factor_count(&self) -> usize {
        self.constituents.len() * self.symbols.len()
    }

    fn ids(&self, mask: u64) -> Vec<String> {
        (0..self.symbols.len()).filter(|j| mask >> j & 1 == 1).map(|j| self.symbols[j].id.clone()).collect()
    }

    /// `ln p(φ_i· = mask | children)` for every candidate mask of constituent
    /// `i`, returned as per-symbol `(ln p(true), ln p(false))`.
    fn local(&self, w: &LanguageModelWeights, i: usize, child_masks: &[u64]) -> Vec<(f64, f64)> {
        let ctx: Vec<Vec<&GroundingSymbol>> = child_masks
            .iter()
            .map(|m| (0..self.symbols.len()).filter(|j| m >> j & 1 == 1).map(|j| &self.symbols[j]).collect())
            .collect();
        let c = &self.constituents[i];
        self.symbols
            .iter()
            .map(|s| {
                let z = w.score(&features(c, s, &ctx));
                (-softplus(-z), -softplus(z))
            })
            .collect()
    }

    /// Joint log-probability of a full assignment, one mask per constituent.
    pub fn log_prob(&self, w: &LanguageModelWeights, masks: &[u64]) -> f64 {
        (0..self.constituents.len())
            .map(|i| {
                let kids: Vec<u64> = self.constituents[i].children.iter().map(|&k| masks[k]).collect();
                self.local(w, i, &kids)
                    .iter()
                    .enumerate()
                    .map(|(j, (t, f))| if masks[i] >> j & 1 == 1 { t } else { f })
                    .sum::<f64>()
            })
            .sum()
    }
}

fn collect(node: &ParseNode, out: &mut Vec<Constituent>) -> Option<usize> {
    let is_constituent = node.label == Label::VB || !node.label.is_leaf();
    if !is_constituent {
        return None;
    }
    let mut children = Vec::new();
    let mut words = Vec::new();
    if let Some(w) = &node.word {
        words.push(w.clone());
    }
    for c in &node.children {
        match collect(c, out) {
            Some(k) => children.push(k),
            None => words.extend(c.words().into_iter().map(str::to_string)),
        }
    }
    let mut gold = node.groundings.clone();
    gold.sort();
    gold.dedup();
    out.push(Constituent { label: node.label, span: node.span, words, children, gold });
    Some(out.len() - 1)
}

/// One factor block per constituent, wired along the parse tree, over the
/// symbols of `space` that the world model admits.
pub fn build_graph(tree: &ParseTree, space: &SymbolSpace, world: &WorldModel) -> Result<DcgGraph, LanguageError> {
    let symbols = world.admit(space);
    if symbols.is_empty() {
        return Err(LanguageError::EmptySymbolSpace);
    }
    let mut constituents = Vec::new();
    if collect(&tree.root, &mut constituents).is_none() {
        // A bare word leaf becomes a single constituent.
        let r = &tree.root;
        constituents.push(Constituent {
            label: r.label,
            span: r.span,
            words: r.word.iter().cloned().collect(),
            children: vec![],
            gold: r.groundings.clone(),
        });
    }
    DcgGraph::new(constituents, symbols.symbols().to_vec()).map_err(|reason| LanguageError::Parse {
        utterance: tree.words().join(" "),
        reason,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    /// Γ*: symbols whose root correspondence is true, sorted by id.
    pub symbols: Vec<String>,
    pub per_constituent: Vec<Vec<String>>,
    pub log_prob: f64,
}

#[derive(Clone, Copy)]
struct Flip {
    cost: f64,
    last: usize,
    set: u64,
}

impl PartialEq for Flip {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Flip {}
impl PartialOrd for Flip {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Flip {
    // Reversed so the max-heap pops the cheapest subset first.
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost.total_cmp(&self.cost).then(o.set.cmp(&self.set))
    }
}

/// The `k` best masks of independent binary choices, best first.
fn top_k_masks(local: &[(f64, f64)], k: usize) -> Vec<(u64, f64)> {
    let mut best = 0u64;
    let mut base = 0.0;
    let mut margins: Vec<(f64, usize)> = Vec::with_capacity(local.len());
    for (j, &(t, f)) in local.iter().enumerate() {
        if t > f {
            best |= 1 << j;
        }
        base += t.max(f);
        margins.push(((t - f).abs(), j));
    }
    margins.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = vec![(best, base)];
    let mut heap = BinaryHeap::new();
    if !margins.is_empty() {
        heap.push(Flip { cost: margins[0].0, last: 0, set: 1 });
    }
    while out.len() < k {
        let Some(f) = heap.pop() else { break };
        let mut mask = best;
        for (i, &(_, j)) in margins.iter().enumerate() {
            if f.set >> i & 1 == 1 {
                mask ^= 1 << j;
            }
        }
        out.push((mask, base - f.cost));
        let n = f.last + 1;
        if n < margins.len() {
            heap.push(Flip { cost: f.cost + margins[n].0, last: n, set: f.set | 1 << n });
            heap.push(Flip { cost: f.cost - margins[f.last].0 + margins[n].0, last: n, set: (f.set & !(1 << f.last)) | 1 << n });
        }
    }
    out
}

#[derive(Clone)]
struct Cand {
    mask: u64,
    score: f64,
    picks: Vec<usize>,
}

fn better(a: f64, am: u64, b: f64, bm: u64) -> bool {
    a > b || (a == b && am < bm)
}

/// Bottom-up max-product over the parse tree. Each constituent keeps its
/// `beam` best grounding sets with the best subtree score behind each; the
/// result is the exact joint argmax whenever `beam >= 2^|symbols|`.
pub fn infer(graph: &DcgGraph, w: &LanguageModelWeights, beam: usize) -> Grounding {
    let beam = beam.max(1);
    let mut table: Vec<Vec<Cand>> = Vec::with_capacity(graph.constituents.len());
    for (i, c) in graph.constituents.iter().enumerate() {
        let mut best: BTreeMap<u64, Cand> = BTreeMap::new();
        let mut picks = vec![0usize; c.children.len()];
        loop {
            let kids: Vec<&Cand> = c.children.iter().zip(&picks).map(|(&k, &p)| &table[k][p]).collect();
            let masks: Vec<u64> = kids.iter().map(|k| k.mask).collect();
            let below: f64 = kids.iter().map(|k| k.score).sum();
            for (mask, local) in top_k_masks(&graph.local(w, i, &masks), beam) {
                let score = below + local;
                match best.get(&mask) {
                    Some(prev) if prev.score >= score => {}
                    _ => {
                        best.insert(mask, Cand { mask, score, picks: picks.clone() });
                    }
                }
            }
            // Odometer over the children's candidate lists.
            let mut d = 0;
            while d < picks.len() {
                picks[d] += 1;
                if picks[d] < table[c.children[d]].len() {
                    break;
                }
                picks[d] = 0;
                d += 1;
            }
            if d == picks.len() {
                break;
            }
        }
        let mut cands: Vec<Cand> = best.into_values().collect();
        cands.sort_by(|a, b| {
            if better(a.score, a.mask, b.score, b.mask) {
                Ordering::Less
            } else if better(b.score, b.mask, a.score, a.mask) {
                Ordering::Greater
            } else {
                Ordering::Equal
            }
        });
        cands.truncate(beam);
        table.push(cands);
    }

    let root = graph.root();
    let mut masks = vec![0u64; graph.constituents.len()];
    let mut stack = vec![(root, 0usize)];
    while let Some((i, p)) = stack.pop() {
        let cand = &table[i][p];
        masks[i] = cand.mask;
        for (&k, &q) in graph.constituents[i].children.iter().zip(&cand.picks) {
            stack.push((k, q));
        }
    }
    Grounding {
        symbols: graph.ids(masks[root]),
        per_constituent: masks.iter().map(|&m| graph.ids(m)).collect(),
        log_prob: table[root][0].score,
    }
}

/// Exhaustive argmax over every joint assignment of all `φ`. Exponential;
/// intended as a reference on small graphs.
pub fn brute_force(graph: &DcgGraph, w: &LanguageModelWeights) -> Grounding {
    let n = graph.constituents.len();
    let m = graph.symbols.len();
    let bits = n * m;
    assert!(bits <= 24, "brute force over {bits} variables");
    let unpack = |a: u64| -> Vec<u64> { (0..n).map(|i| (a >> (i * m)) & ((1u64 << m) - 1)).collect() };
    let mut cache: HashMap<(usize, Vec<u64>), Vec<(f64, f64)>> = HashMap::new();
    let mut best: Option<(f64, Vec<u64>)> = None;
    for a in 0..(1u64 << bits) {
        let masks = unpack(a);
        let mut score = 0.0;
        for (i, c) in graph.constituents.iter().enumerate() {
            let kids: Vec<u64> = c.children.iter().map(|&k| masks[k]).collect();
            let local = cache.entry((i, kids)).or_insert_with_key(|(i, kids)| graph.local(w, *i, kids));
            score += local.iter().enumerate().map(|(j, (t, f))| if masks[i] >> j & 1 == 1 { t } else { f }).sum::<f64>();
        }
        let take = match &best {
            None => true,
            Some((s, bm)) => score > *s || (score == *s && masks.iter().rev().lt(bm.iter().rev())),
        };
        if take {
            best = Some((score, masks));
        }
    }
    let (log_prob, masks) = best.expect("at least one assignment");
    Grounding {
        symbols: graph.ids(masks[graph.root()]),
        per_constituent: masks.iter().map(|&mk| graph.ids(mk)).collect(),
        log_prob,
    }
}
