//! Log-linear correspondence factors and their training.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::corpus::Example;
use super::infer::{build_graph, Constituent};
use super::{GroundingSymbol, LanguageError, SymbolSpace, WorldModel};

pub const WEIGHTS_VERSION: u32 = 1;

/// Binary features active for `φ = true` between a constituent and a
/// symbol, given the groundings chosen for the constituent's children.
pub fn features(c: &Constituent, sym: &GroundingSymbol, children: &[Vec<&GroundingSymbol>]) -> BTreeSet<String> {
    let (s, k, l) = (&sym.id, sym.kind.as_str(), c.label.as_str());
    let mut f = BTreeSet::new();
    f.insert(format!("b|s={s}"));
    f.insert(format!("l={l}|s={s}"));
    f.insert(format!("l={l}|k={k}"));
    for w in &c.words {
        f.insert(format!("w={w}|s={s}"));
        f.insert(format!("w={w}|k={k}"));
    }
    for set in children {
        for g in set {
            f.insert(format!("c={}|s={s}", g.id));
            f.insert(format!("ck={}|k={k}", g.kind.as_str()));
            if g.id == sym.id {
                f.insert("csame".into());
                f.insert(format!("csame|l={l}"));
            }
        }
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageModelWeights {
    pub version: u32,
    pub weights: BTreeMap<String, f64>,
}

impl Default for LanguageModelWeights {
    fn default() -> Self {
        Self { version: WEIGHTS_VERSION, weights: BTreeMap::new() }
    }
}

impl LanguageModelWeights {
    /// Unseen features weigh zero.
    pub fn score<'a>(&self, features: impl IntoIterator<Item = &'a String>) -> f64 {
        features.into_iter().filter_map(|f| self.weights.get(f)).sum()
    }

    /// `p(φ = true | γ, λ, children)`.
    pub fn probability(&self, c: &Constituent, sym: &GroundingSymbol, children: &[Vec<&GroundingSymbol>]) -> f64 {
        sigmoid(self.score(&features(c, sym, children)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let w: Self = serde_json::from_str(s).map_err(|e| e.to_string())?;
        if w.version != WEIGHTS_VERSION {
            return Err(format!("unsupported weights version {}", w.version));
        }
        if let Some((k, _)) = w.weights.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("weight {k} is not finite"));
        }
        Ok(w)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2: f64,
    pub max_epochs: usize,
    /// Stop once the gradient's largest component falls below this.
    pub grad_tol: f64,
    /// L-BFGS history length.
    pub memory: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { l2: 1e-5, max_epochs: 500, grad_tol: 1e-10, memory: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Regularized mean log-loss before training and after each epoch.
    pub losses: Vec<f64>,
    /// Distinct (features, label) samples and their total count.
    pub samples: usize,
    pub total: usize,
    pub features: usize,
}

struct Sample {
    feats: Vec<usize>,
    y: bool,
    /// Share of the corpus this sample stands for.
    weight: f64,
}

fn loss_and_gradient(samples: &[Sample], w: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let mut g: Vec<f64> = w.iter().map(|x| l2 * x).collect();
    let mut loss = 0.5 * l2 * w.iter().map(|x| x * x).sum::<f64>();
    for s in samples {
        let z: f64 = s.feats.iter().map(|&i| w[i]).sum();
        loss += s.weight * if s.y { softplus(-z) } else { softplus(z) };
        let r = s.weight * (sigmoid(z) - if s.y { 1.0 } else { 0.0 });
        for &i in &s.feats {
            g[i] += r;
        }
    }
    (loss, g)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS with Armijo backtracking; every accepted step lowers the loss.
fn minimize(samples: &[Sample], n: usize, config: &TrainConfig) -> (Vec<f64>, Vec<f64>) {
    let mut w = vec![0.0; n];
    let (mut loss, mut g) = loss_and_gradient(samples, &w, config.l2);
    let mut losses = vec![loss];
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    for _ in 0..config.max_epochs {
        if g.iter().all(|x| x.abs() < config.grad_tol) {
            break;
        }
        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|x| -x).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            hist.clear();
            d = g.iter().map(|x| -x).collect();
            slope = dot(&g, &d);
        }
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-16 {
            let trial: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let (l, tg) = loss_and_gradient(samples, &trial, config.l2);
            if l <= loss + 1e-4 * step * slope {
                accepted = Some((trial, l, tg));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, l, tg)) = accepted else { break };
        let s: Vec<f64> = trial.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = tg.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if hist.len() == config.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        w = trial;
        g = tg;
        loss = l;
        losses.push(loss);
    }
    (w, losses)
}

/// Fits all correspondence factors jointly as one L2-regularized logistic
/// regression over the corpus, using gold child groundings as context.
/// Identical samples are merged and weighted by their frequency.
pub fn train(
    corpus: &[Example],
    space: &SymbolSpace,
    config: &TrainConfig,
) -> Result<(LanguageModelWeights, TrainReport), LanguageError> {
    if corpus.is_empty() {
        return Err(LanguageError::EmptyCorpus);
    }
    let world = WorldModel::everything(space);
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut merged: Vec<(Vec<usize>, bool, usize)> = Vec::new();
    let mut seen: HashMap<(Vec<usize>, bool), usize> = HashMap::new();
    for ex in corpus {
        for id in &ex.groundings {
            if space.get(id).is_none() {
                return Err(LanguageError::UnknownGoldSymbol(id.clone()));
            }
        }
        let graph = build_graph(&ex.tree, space, &world)?;
        let gold: Vec<Vec<&GroundingSymbol>> = graph
            .constituents
            .iter()
            .map(|c| {
                c.gold
                    .iter()
                    .map(|id| space.get(id).ok_or_else(|| LanguageError::UnknownGoldSymbol(id.clone())))
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        for c in &graph.constituents {
            let ctx: Vec<Vec<&GroundingSymbol>> = c.children.iter().map(|&j| gold[j].clone()).collect();
            for sym in &graph.symbols {
                let feats: Vec<usize> = features(c, sym, &ctx)
                    .into_iter()
                    .map(|f| {
                        *index.entry(f.clone()).or_insert_with(|| {
                            names.push(f);
                            names.len() - 1
                        })
                    })
                    .collect();
                let key = (feats, c.gold.contains(&sym.id));
                match seen.get(&key) {
                    Some(&k) => merged[k].2 += 1,
                    None => {
                        seen.insert(key.clone(), merged.len());
                        merged.push((key.0, key.1, 1));
                    }
                }
            }
        }
    }
    let total: usize = merged.iter().map(|m| m.2).sum();
    let samples: Vec<Sample> = merged
        .into_iter()
        .map(|(feats, y, count)| Sample { feats, y, weight: count as f64 / total as f64 })
        .collect();
    let (w, losses) = minimize(&samples, names.len(), config);
    let weights = names.into_iter().zip(w).collect();
    let report = TrainReport { losses, samples: samples.len(), total, features: index.len() };
    Ok((LanguageModelWeights { version: WEIGHTS_VERSION, weights }, report))
}
