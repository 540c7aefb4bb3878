//! Second-order gradient boosting of regression trees under logistic loss.
//!
//! Two growth presets share one engine: `Depthwise` picks the best split
//! for every node independently, `Symmetric` picks one (feature, threshold)
//! per level and applies it to every node of that level (oblivious trees).

use serde::{Deserialize, Serialize};

use super::{ClassifierError, FrameSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowPreset {
    Depthwise,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbdtParams {
    pub num_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub preset: GrowPreset,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            num_trees: 100,
            max_depth: 6,
            learning_rate: 0.1,
            lambda: 1.0,
            preset: GrowPreset::Depthwise,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

/// Binary tree stored as a node arena rooted at index 0. Rows with
/// `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    /// `(feature, threshold)` of every split at each depth.
    pub fn splits_by_depth(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, depth)) = stack.pop() {
            if let Node::Split {
                feature,
                threshold,
                left,
                right,
            } = self.nodes[i]
            {
                if out.len() <= depth {
                    out.resize(depth + 1, Vec::new());
                }
                out[depth].push((feature, threshold));
                stack.push((left, depth + 1));
                stack.push((right, depth + 1));
            }
        }
        out
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf(_) => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub preset: GrowPreset,
    pub dim: usize,
    pub feature_config_hash: u64,
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss of one raw score against a {0,1} label, computed stably.
pub fn log_loss(score: f64, label: f64) -> f64 {
    // −[y ln σ(s) + (1−y) ln(1−σ(s))] = softplus(s) − y·s
    let softplus = if score > 0.0 {
        score + (-score).exp().ln_1p()
    } else {
        score.exp().ln_1p()
    };
    softplus - label * score
}

/// Gradient `p − y` and hessian `p(1 − p)` of the logistic loss.
pub fn logistic_gradients(scores: &[f64], labels: &[f64]) -> (Vec<f64>, Vec<f64>) {
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = sigmoid(s);
            (p - y, p * (1.0 - p))
        })
        .unzip()
}

fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

fn score_term(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn split_gain(gl: f64, hl: f64, g: f64, h: f64, lambda: f64) -> f64 {
    let (gr, hr) = (g - gl, h - hl);
    0.5 * (score_term(gl, hl, lambda) + score_term(gr, hr, lambda) - score_term(g, h, lambda))
}

/// Candidate split: strictly better gain wins, so ties keep the lowest
/// feature index and then the lowest threshold.
#[derive(Debug, Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Best {
    fn none() -> Self {
        Self {
            gain: 0.0,
            feature: usize::MAX,
            threshold: 0.0,
        }
    }

    fn found(&self) -> bool {
        self.feature != usize::MAX
    }

    fn offer(&mut self, gain: f64, feature: usize, threshold: f64) {
        if gain > self.gain + 1e-12 * self.gain.abs().max(1e-300) && gain > 1e-15 {
            *self = Self {
                gain,
                feature,
                threshold,
            };
        }
    }
}

struct Grower<'a> {
    data: &'a FrameSet,
    /// Row indices sorted by each feature's value.
    order: &'a [Vec<u32>],
    grad: &'a [f64],
    hess: &'a [f64],
    lambda: f64,
    max_depth: usize,
}

impl Grower<'_> {
    fn value(&self, i: usize, f: usize) -> f64 {
        self.data.values[i * self.data.dim + f]
    }

    /// Best split for every open node at once. `slot[i]` is the index into
    /// `open` of row `i`'s node, or `u32::MAX` when the row sits in a
    /// finished leaf.
    fn best_per_node(&self, slot: &[u32], totals: &[(f64, f64)]) -> Vec<Best> {
        let m = totals.len();
        let mut best = vec![Best::none(); m];
        let mut gl = vec![0.0; m];
        let mut hl = vec![0.0; m];
        let mut last = vec![f64::NAN; m];
        for (f, order) in self.order.iter().enumerate() {
            gl.iter_mut().for_each(|v| *v = 0.0);
            hl.iter_mut().for_each(|v| *v = 0.0);
            last.iter_mut().for_each(|v| *v = f64::NAN);
            for &i in order {
                let i = i as usize;
                let s = slot[i];
                if s == u32::MAX {
                    continue;
                }
                let s = s as usize;
                let v = self.value(i, f);
                if !last[s].is_nan() && v > last[s] {
                    let (g, h) = totals[s];
                    let gain = split_gain(gl[s], hl[s], g, h, self.lambda);
                    best[s].offer(gain, f, 0.5 * (last[s] + v));
                }
                gl[s] += self.grad[i];
                hl[s] += self.hess[i];
                last[s] = v;
            }
        }
        best
    }

    /// Best shared split for all nodes of one level.
    fn best_shared(&self, slot: &[u32], totals: &[(f64, f64)]) -> Best {
        let m = totals.len();
        let mut best = Best::none();
        let mut gl = vec![0.0; m];
        let mut hl = vec![0.0; m];
        for (f, order) in self.order.iter().enumerate() {
            gl.iter_mut().for_each(|v| *v = 0.0);
            hl.iter_mut().for_each(|v| *v = 0.0);
            // running Σ_nodes gain; nodes with nothing on the left contribute 0
            let mut total_gain = 0.0;
            let mut node_gain = vec![0.0; m];
            let mut prev = f64::NAN;
            for &i in order {
                let i = i as usize;
                let v = self.value(i, f);
                if !prev.is_nan() && v > prev {
                    best.offer(total_gain, f, 0.5 * (prev + v));
                }
                let s = slot[i] as usize;
                gl[s] += self.grad[i];
                hl[s] += self.hess[i];
                let (g, h) = totals[s];
                let ng = split_gain(gl[s], hl[s], g, h, self.lambda);
                total_gain += ng - node_gain[s];
                node_gain[s] = ng;
                prev = v;
            }
        }
        best
    }

    fn grow(&self, preset: GrowPreset) -> Tree {
        let n = self.data.len();
        let total = (self.grad.iter().sum::<f64>(), self.hess.iter().sum::<f64>());
        let mut nodes = vec![Node::Leaf(leaf_value(total.0, total.1, self.lambda))];
        // open node arena indices and their (G, H)
        let mut open: Vec<usize> = vec![0];
        let mut totals = vec![total];
        let mut slot = vec![0u32; n];

        for _depth in 0..self.max_depth {
            if open.is_empty() {
                break;
            }
            let splits: Vec<Best> = match preset {
                GrowPreset::Depthwise => self.best_per_node(&slot, &totals),
                GrowPreset::Symmetric => {
                    let b = self.best_shared(&slot, &totals);
                    if !b.found() {
                        break;
                    }
                    vec![b; open.len()]
                }
            };

            let mut next_open = Vec::new();
            let mut next_totals = Vec::new();
            // map old slot → (left slot, right slot) in next level
            let mut child_slots = vec![(u32::MAX, u32::MAX); open.len()];
            for (s, (&node, b)) in open.iter().zip(&splits).enumerate() {
                if !b.found() {
                    continue;
                }
                let left = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                nodes[node] = Node::Split {
                    feature: b.feature,
                    threshold: b.threshold,
                    left,
                    right: left + 1,
                };
                child_slots[s] = (next_open.len() as u32, next_open.len() as u32 + 1);
                next_open.push(left);
                next_open.push(left + 1);
                next_totals.push((0.0, 0.0));
                next_totals.push((0.0, 0.0));
            }
            for (i, si) in slot.iter_mut().enumerate() {
                let s = *si;
                if s == u32::MAX {
                    continue;
                }
                let (l, r) = child_slots[s as usize];
                if l == u32::MAX {
                    *si = u32::MAX;
                    continue;
                }
                let b = &splits[s as usize];
                let c = if self.value(i, b.feature) < b.threshold { l } else { r };
                *si = c;
                let t = &mut next_totals[c as usize];
                t.0 += self.grad[i];
                t.1 += self.hess[i];
            }
            for (&node, &(g, h)) in next_open.iter().zip(&next_totals) {
                nodes[node] = Node::Leaf(leaf_value(g, h, self.lambda));
            }
            open = next_open;
            totals = next_totals;
        }
        Tree { nodes }
    }
}

fn presort(data: &FrameSet) -> Vec<Vec<u32>> {
    (0..data.dim)
        .map(|f| {
            let mut idx: Vec<u32> = (0..data.len() as u32).collect();
            idx.sort_by(|&a, &b| {
                data.values[a as usize * data.dim + f]
                    .total_cmp(&data.values[b as usize * data.dim + f])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

/// Fits one regression tree to the given gradients and hessians, with
/// leaf values `−G/(H + λ)`.
pub fn fit_tree(
    data: &FrameSet,
    grad: &[f64],
    hess: &[f64],
    max_depth: usize,
    lambda: f64,
    preset: GrowPreset,
) -> Tree {
    let order = presort(data);
    Grower {
        data,
        order: &order,
        grad,
        hess,
        lambda,
        max_depth,
    }
    .grow(preset)
}

/// Per-round training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostTrace {
    /// Mean training log-loss before the first tree and after each round.
    pub loss: Vec<f64>,
    /// Gradients used to fit each round's tree.
    pub gradients: Vec<Vec<f64>>,
    /// Raw scores at which those gradients were taken.
    pub scores: Vec<Vec<f64>>,
}

fn check_training(data: &FrameSet, labels: &[f64]) -> Result<(), ClassifierError> {
    if data.len() != labels.len() {
        return Err(ClassifierError::DimensionMismatch {
            expected: data.len(),
            got: labels.len(),
        });
    }
    if data.len() < 10 {
        return Err(ClassifierError::InsufficientData(format!(
            "{} training examples (need 10)",
            data.len()
        )));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(ClassifierError::InvalidModel("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    if pos == 0 || pos == labels.len() {
        return Err(ClassifierError::SingleClass);
    }
    if data.values.iter().any(|v| !v.is_finite()) {
        return Err(ClassifierError::InvalidModel("non-finite training value".into()));
    }
    Ok(())
}

/// Boosted trees on rows of `data`; `labels` are 1 for bonafide, 0 for spoof.
pub fn gbdt_fit(
    data: &FrameSet,
    labels: &[f64],
    params: &GbdtParams,
) -> Result<GbdtModel, ClassifierError> {
    gbdt_fit_traced(data, labels, params, false).map(|(m, _)| m)
}

pub fn gbdt_fit_traced(
    data: &FrameSet,
    labels: &[f64],
    params: &GbdtParams,
    keep_gradients: bool,
) -> Result<(GbdtModel, BoostTrace), ClassifierError> {
    check_training(data, labels)?;
    let n = labels.len();
    let prior = labels.iter().sum::<f64>() / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let order = presort(data);
    let mut scores = vec![base_score; n];
    let mean_loss =
        |s: &[f64]| s.iter().zip(labels).map(|(&s, &y)| log_loss(s, y)).sum::<f64>() / n as f64;
    let mut trace = BoostTrace {
        loss: vec![mean_loss(&scores)],
        gradients: Vec::new(),
        scores: Vec::new(),
    };
    let mut trees = Vec::with_capacity(params.num_trees);
    for _ in 0..params.num_trees {
        let (grad, hess) = logistic_gradients(&scores, labels);
        let tree = Grower {
            data,
            order: &order,
            grad: &grad,
            hess: &hess,
            lambda: params.lambda,
            max_depth: params.max_depth,
        }
        .grow(params.preset);
        if keep_gradients {
            trace.gradients.push(grad);
            trace.scores.push(scores.clone());
        }
        for (s, row) in scores.iter_mut().zip(data.rows()) {
            *s += params.learning_rate * tree.predict(row);
        }
        trace.loss.push(mean_loss(&scores));
        trees.push(tree);
    }
    Ok((
        GbdtModel {
            trees,
            learning_rate: params.learning_rate,
            base_score,
            preset: params.preset,
            dim: data.dim,
            feature_config_hash: 0,
        },
        trace,
    ))
}

/// Raw log-odds score; higher favours bonafide.
pub fn gbdt_score(model: &GbdtModel, x: &[f64]) -> Result<f64, ClassifierError> {
    if x.len() != model.dim {
        return Err(ClassifierError::DimensionMismatch {
            expected: model.dim,
            got: x.len(),
        });
    }
    Ok(model.base_score
        + model.learning_rate * model.trees.iter().map(|t| t.predict(x)).sum::<f64>())
}
