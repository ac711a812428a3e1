//! Meta-classifiers over weight vectors.
//!
//! Four kinds: Gaussian naive Bayes, a CART decision tree (Gini), a random
//! forest of such trees and k-nearest-neighbours. Every kind breaks prediction
//! ties toward the lowest class id.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::weightspace::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    #[serde(rename = "nb")]
    NaiveBayes,
    #[serde(rename = "tree")]
    DecisionTree,
    #[serde(rename = "forest")]
    RandomForest,
    #[serde(rename = "knn")]
    Knn,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [Self::NaiveBayes, Self::DecisionTree, Self::RandomForest, Self::Knn];

    pub fn id(self) -> &'static str {
        match self {
            Self::NaiveBayes => "nb",
            Self::DecisionTree => "tree",
            Self::RandomForest => "forest",
            Self::Knn => "knn",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown classifier kind {s:?} (nb|tree|forest|knn)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub n_trees: usize,
    pub k_neighbors: usize,
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            max_depth: 20,
            min_samples_split: 2,
            n_trees: 100,
            k_neighbors: 5,
            variance_floor: 1e-9,
            seed: 0,
        }
    }
}

impl Hyper {
    pub fn seeded(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Feature rows with class ids `0..n_classes` and a train/val assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub split: Vec<Split>,
    pub n_classes: usize,
    pub seed: u64,
}

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

impl LabeledDataset {
    pub fn from_vectors(vectors: &[WeightVector], labels: Vec<usize>, seed: u64) -> Result<Self> {
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.fingerprint != first.fingerprint) {
                return Err(Error::ArchitectureMismatch("mixed weight-vector fingerprints".into()));
            }
        }
        let features = vectors.iter().map(|v| v.values.iter().map(|&x| x as f64).collect()).collect();
        Self::from_features(features, labels, seed)
    }

    /// Seeded per-class split: a fifth of each class (rounded, at least one when
    /// the class has two or more members) goes to validation.
    pub fn from_features(features: Vec<Vec<f64>>, labels: Vec<usize>, seed: u64) -> Result<Self> {
        let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
        let mut split = vec![Split::Train; labels.len()];
        let mut rng = stream_rng(seed, stream::SPLIT);
        for c in 0..n_classes {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            members.shuffle(&mut rng);
            let n = members.len();
            let n_val = if n >= 2 { ((n as f64 * DEFAULT_VAL_FRACTION).round() as usize).clamp(1, n - 1) } else { 0 };
            for &i in &members[..n_val] {
                split[i] = Split::Val;
            }
        }
        Self::with_split(features, labels, split, seed)
    }

    pub fn with_split(features: Vec<Vec<f64>>, labels: Vec<usize>, split: Vec<Split>, seed: u64) -> Result<Self> {
        if features.len() != labels.len() || split.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset columns",
                expected: features.len(),
                actual: if labels.len() != features.len() { labels.len() } else { split.len() },
            });
        }
        if let Some(first) = features.first() {
            if let Some(bad) = features.iter().find(|f| f.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    context: "feature row",
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(Self {
            features,
            labels,
            split,
            n_classes,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.split[i] == which).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub log_priors: Vec<f64>,
}

impl GaussianNb {
    fn fit(x: &[&[f64]], y: &[usize], n_classes: usize, floor: f64) -> Self {
        let dim = x[0].len();
        let mut means = vec![vec![0.0; dim]; n_classes];
        let mut variances = vec![vec![0.0; dim]; n_classes];
        let mut counts = vec![0usize; n_classes];
        for (row, &c) in x.iter().zip(y) {
            counts[c] += 1;
            means[c].iter_mut().zip(row.iter()).for_each(|(m, v)| *m += v);
        }
        for c in 0..n_classes {
            means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
        }
        for (row, &c) in x.iter().zip(y) {
            variances[c].iter_mut().zip(row.iter()).zip(&means[c]).for_each(|((s, v), m)| *s += (v - m) * (v - m));
        }
        for c in 0..n_classes {
            variances[c].iter_mut().for_each(|s| *s = (*s / counts[c] as f64).max(floor));
        }
        let total = y.len() as f64;
        let log_priors = counts.iter().map(|&n| (n as f64 / total).ln()).collect();
        Self {
            means,
            variances,
            log_priors,
        }
    }

    /// Unnormalised joint log-likelihood per class.
    pub fn joint_log_likelihood(&self, x: &[f64]) -> Vec<f64> {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        (0..self.means.len())
            .map(|c| {
                let ll: f64 = x
                    .iter()
                    .zip(&self.means[c])
                    .zip(&self.variances[c])
                    .map(|((v, m), s)| -0.5 * (ln_2pi + s.ln() + (v - m) * (v - m) / s))
                    .sum();
                self.log_priors[c] + ll
            })
            .collect()
    }

    /// Normalised class posteriors (log-sum-exp).
    pub fn posteriors(&self, x: &[f64]) -> Vec<f64> {
        let jll = self.joint_log_likelihood(x);
        let max = jll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = max + jll.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        jll.iter().map(|l| (l - z).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf { class: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

/// Gini comparisons run on integer class counts: minimising weighted Gini is
/// maximising `sum(l^2)/n_l + sum(r^2)/n_r`, compared by cross-multiplying.
#[derive(Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn new(left: &[usize], n_left: usize, right: &[usize], n_right: usize) -> Self {
        let sq = |c: &[usize]| c.iter().map(|&v| (v * v) as u128).sum::<u128>();
        Self {
            num: sq(left) * n_right as u128 + sq(right) * n_left as u128,
            den: n_left as u128 * n_right as u128,
        }
    }

    fn better_than(self, other: Self) -> bool {
        self.num * other.den > other.num * self.den
    }
}

pub(crate) fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// Midpoint threshold, kept strictly below `hi` so `lo <= t < hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

struct TreeBuilder<'a> {
    x: &'a [&'a [f64]],
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_samples_split: usize,
    /// Features examined per split; `None` means all.
    max_features: Option<usize>,
    rng: Option<crate::rng::Rng>,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, samples: Vec<usize>, depth: usize) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for &i in &samples {
            counts[self.y[i]] += 1;
        }
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { class: majority(&counts) });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth || samples.len() < self.min_samples_split.max(2) {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&samples, &counts) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, samples: &[usize], counts: &[usize]) -> Option<(usize, f64)> {
        let dim = self.x[0].len();
        let features: Vec<usize> = match (self.max_features, self.rng.as_mut()) {
            (Some(m), Some(rng)) if m < dim => {
                let mut f = index::sample(rng, dim, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..dim).collect(),
        };
        let mut best: Option<(SplitScore, usize, f64)> = None;
        let mut order = samples.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = vec![0usize; self.n_classes];
            let mut right = counts.to_vec();
            for w in 0..order.len() - 1 {
                let c = self.y[order[w]];
                left[c] += 1;
                right[c] -= 1;
                let (lo, hi) = (self.x[order[w]][f], self.x[order[w + 1]][f]);
                if lo == hi {
                    continue;
                }
                let score = SplitScore::new(&left, w + 1, &right, order.len() - w - 1);
                if best.as_ref().is_none_or(|b| score.better_than(b.0)) {
                    best = Some((score, f, midpoint(lo, hi)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

impl DecisionTree {
    fn fit_with(
        x: &[&[f64]],
        y: &[usize],
        samples: Vec<usize>,
        n_classes: usize,
        hyper: &Hyper,
        max_features: Option<usize>,
        rng: Option<crate::rng::Rng>,
    ) -> Self {
        let mut b = TreeBuilder {
            x,
            y,
            n_classes,
            max_depth: hyper.max_depth,
            min_samples_split: hyper.min_samples_split,
            max_features,
            rng,
            nodes: Vec::new(),
        };
        b.build(samples, 0);
        Self { nodes: b.nodes }
    }

    pub fn fit(x: &[&[f64]], y: &[usize], n_classes: usize, hyper: &Hyper) -> Self {
        Self::fit_with(x, y, (0..y.len()).collect(), n_classes, hyper, None, None)
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut node = 0;
        loop {
            match self.nodes[node] {
                TreeNode::Leaf { class } => return class,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierModel {
    NaiveBayes(GaussianNb),
    DecisionTree(DecisionTree),
    RandomForest(Vec<DecisionTree>),
    Knn { k: usize, features: Vec<Vec<f64>>, labels: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub model: ClassifierModel,
    pub n_classes: usize,
    pub dim: usize,
}

pub fn fit(kind: ClassifierKind, data: &LabeledDataset, hyper: &Hyper) -> Result<Classifier> {
    let train = data.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let mut counts = vec![0usize; data.n_classes];
    for &i in &train {
        counts[data.labels[i]] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} has no training examples")));
    }
    let x: Vec<&[f64]> = train.iter().map(|&i| data.features[i].as_slice()).collect();
    let y: Vec<usize> = train.iter().map(|&i| data.labels[i]).collect();
    let n_classes = data.n_classes;
    let dim = data.dim();
    let model = match kind {
        ClassifierKind::NaiveBayes => ClassifierModel::NaiveBayes(GaussianNb::fit(&x, &y, n_classes, hyper.variance_floor)),
        ClassifierKind::DecisionTree => ClassifierModel::DecisionTree(DecisionTree::fit(&x, &y, n_classes, hyper)),
        ClassifierKind::RandomForest => {
            let m = ((dim as f64).sqrt().floor() as usize).max(1);
            let trees = (0..hyper.n_trees)
                .into_par_iter()
                .map(|t| {
                    let mut rng = stream_rng(derive_seed(hyper.seed, t as u64), stream::FOREST);
                    let bootstrap: Vec<usize> = (0..y.len()).map(|_| rng.gen_range(0..y.len())).collect();
                    DecisionTree::fit_with(&x, &y, bootstrap, n_classes, hyper, Some(m), Some(rng))
                })
                .collect();
            ClassifierModel::RandomForest(trees)
        }
        ClassifierKind::Knn => {
            if hyper.k_neighbors == 0 {
                return Err(Error::invalid("k_neighbors must be at least 1"));
            }
            ClassifierModel::Knn {
                k: hyper.k_neighbors,
                features: x.iter().map(|r| r.to_vec()).collect(),
                labels: y,
            }
        }
    };
    Ok(Classifier { model, n_classes, dim })
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        match self.model {
            ClassifierModel::NaiveBayes(_) => ClassifierKind::NaiveBayes,
            ClassifierModel::DecisionTree(_) => ClassifierKind::DecisionTree,
            ClassifierModel::RandomForest(_) => ClassifierKind::RandomForest,
            ClassifierModel::Knn { .. } => ClassifierKind::Knn,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "classifier input",
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(match &self.model {
            ClassifierModel::NaiveBayes(nb) => argmax_lowest(&nb.joint_log_likelihood(x)),
            ClassifierModel::DecisionTree(t) => t.predict(x),
            ClassifierModel::RandomForest(trees) => {
                let mut votes = vec![0usize; self.n_classes];
                for t in trees {
                    votes[t.predict(x)] += 1;
                }
                majority(&votes)
            }
            ClassifierModel::Knn { k, features, labels } => {
                let mut d: Vec<(f64, usize)> = features
                    .iter()
                    .enumerate()
                    .map(|(i, f)| (f.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut votes = vec![0usize; self.n_classes];
                for &(_, i) in d.iter().take(*k) {
                    votes[labels[i]] += 1;
                }
                majority(&votes)
            }
        })
    }

    pub fn predict_vector(&self, v: &WeightVector) -> Result<usize> {
        let x: Vec<f64> = v.values.iter().map(|&x| x as f64).collect();
        self.predict(&x)
    }
}

/// `[true class][predicted class]` counts over the validation split.
pub fn confusion_matrix(model: &Classifier, data: &LabeledDataset) -> Result<Vec<Vec<usize>>> {
    let val = data.indices(Split::Val);
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let n = data.n_classes.max(model.n_classes);
    let mut m = vec![vec![0usize; n]; n];
    for i in val {
        m[data.labels[i]][model.predict(&data.features[i])?] += 1;
    }
    Ok(m)
}

pub fn evaluate_accuracy(model: &Classifier, data: &LabeledDataset) -> Result<f64> {
    let m = confusion_matrix(model, data)?;
    Ok(accuracy_of(&m))
}

fn accuracy_of(m: &[Vec<usize>]) -> f64 {
    let total: usize = m.iter().flatten().sum();
    let correct: usize = (0..m.len()).map(|i| m[i][i]).sum();
    correct as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub kind: ClassifierKind,
    pub n_classes: usize,
    pub train_n: usize,
    pub val_n: usize,
    pub accuracy: f64,
    pub confusion_matrix: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
}

pub fn fit_and_report(kind: ClassifierKind, data: &LabeledDataset, hyper: &Hyper) -> Result<ClassifierReport> {
    let model = fit(kind, data, hyper)?;
    let confusion_matrix = confusion_matrix(&model, data)?;
    Ok(ClassifierReport {
        kind,
        n_classes: data.n_classes,
        train_n: data.indices(Split::Train).len(),
        val_n: data.indices(Split::Val).len(),
        accuracy: accuracy_of(&confusion_matrix),
        confusion_matrix,
        class_names: Vec::new(),
    })
}
