//! Test-only reference implementations. Each one is written independently of
//! the library code it checks, and the two are compared in the tests.
#![allow(dead_code)]

use mlds::nn::{backward, forward, init_network, mse_loss, Architecture, CellKind, ParameterSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Finite differences

pub struct GradCase {
    pub arch: Architecture,
    pub params: ParameterSet<f32>,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

fn random_grad_case(seed: u64, kind: CellKind) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture {
        recurrent_kind: kind,
        recurrent_layers: rng.gen_range(1..=3),
        hidden_width: rng.gen_range(1..=4),
        linear_layers: rng.gen_range(0..=2),
        input_dim: rng.gen_range(1..=4),
        output_dim: rng.gen_range(1..=3),
    };
    let steps = rng.gen_range(1..=5);
    let mut params = init_network(arch, seed).unwrap();
    // Widen the init so gates leave their linear regime.
    params.values.iter_mut().for_each(|v| *v *= 2.0);
    let inputs = (0..steps * arch.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let targets = (0..steps * arch.output_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    GradCase {
        arch,
        params,
        inputs,
        targets,
    }
}

/// 20 tiny configurations, alternating GRU and LSTM.
pub fn grad_cases() -> Vec<GradCase> {
    (0..20)
        .map(|i| {
            let kind = if i % 2 == 0 { CellKind::Gru } else { CellKind::Lstm };
            random_grad_case(1000 + i, kind)
        })
        .collect()
}

fn loss64(p: &ParameterSet<f64>, x: &[f64], t: &[f64]) -> f64 {
    let cache = forward(p, x).unwrap();
    mse_loss(cache.outputs(), t).unwrap()
}

/// Central differences at step 1e-4, all in f64.
pub fn finite_differences(case: &GradCase) -> Vec<f64> {
    let base: ParameterSet<f64> = case.params.cast();
    let step = 1e-4;
    (0..base.values.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus.values[i] += step;
            minus.values[i] -= step;
            (loss64(&plus, &case.inputs, &case.targets) - loss64(&minus, &case.inputs, &case.targets))
                / (2.0 * step)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` per component. Components smaller than 1e-3 of
/// the largest reference gradient are measured against that floor instead;
/// below it the finite-difference oracle's own roundoff dominates.
pub fn max_relative_error(a: &[f64], reference: &[f64]) -> f64 {
    let floor = 1e-3 * reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(reference)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

pub fn bptt_error_f64(case: &GradCase) -> f64 {
    let fd = finite_differences(case);
    let p64: ParameterSet<f64> = case.params.cast();
    let cache = forward(&p64, &case.inputs).unwrap();
    let g = backward(&cache, &case.targets).unwrap();
    max_relative_error(&g.values, &fd)
}

pub fn bptt_error_f32(case: &GradCase) -> f64 {
    let fd = finite_differences(case);
    let x: Vec<f32> = case.inputs.iter().map(|&v| v as f32).collect();
    let t: Vec<f32> = case.targets.iter().map(|&v| v as f32).collect();
    let cache = forward(&case.params, &x).unwrap();
    let g = backward(&cache, &t).unwrap();
    let g: Vec<f64> = g.values.iter().map(|&v| v as f64).collect();
    max_relative_error(&g, &fd)
}

// ---------------------------------------------------------------------------
// Symmetric eigenvalues by cyclic Jacobi rotations

/// Eigenvalues of a symmetric matrix, largest first.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Sample covariance (denominator `n - 1`) of row vectors.
pub fn sample_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|v| *v /= (n - 1) as f64);
    cov
}

// ---------------------------------------------------------------------------
// Decision tree by exhaustive split enumeration

#[derive(Debug, Clone, PartialEq)]
pub enum RefTree {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<RefTree>,
        right: Box<RefTree>,
    },
}

fn gini_weighted(y: &[usize], n_classes: usize) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let n = y.len() as f64;
    let mut counts = vec![0.0; n_classes];
    for &c in y {
        counts[c] += 1.0;
    }
    n * (1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>())
}

fn majority_lowest(y: &[usize], n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for &c in y {
        counts[c] += 1;
    }
    (0..n_classes).fold(0, |best, c| if counts[c] > counts[best] { c } else { best })
}

/// CART with Gini: try every feature and every midpoint between consecutive
/// distinct values, keep the lowest weighted impurity (first one on ties, in
/// feature then threshold order). Impure nodes split even without gain.
pub fn reference_tree(x: &[Vec<f64>], y: &[usize], n_classes: usize, max_depth: usize, min_split: usize) -> RefTree {
    fn go(x: &[Vec<f64>], y: &[usize], rows: &[usize], k: usize, depth: usize, max_depth: usize, min_split: usize) -> RefTree {
        let ys: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
        let leaf = RefTree::Leaf(majority_lowest(&ys, k));
        let distinct_labels = ys.iter().collect::<std::collections::BTreeSet<_>>().len();
        if distinct_labels <= 1 || depth >= max_depth || rows.len() < min_split.max(2) {
            return leaf;
        }
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..x[0].len() {
            let mut values: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let mut t = w[0] + (w[1] - w[0]) / 2.0;
                if t >= w[1] {
                    t = w[0];
                }
                let l: Vec<usize> = rows.iter().filter(|&&i| x[i][f] <= t).map(|&i| y[i]).collect();
                let r: Vec<usize> = rows.iter().filter(|&&i| x[i][f] > t).map(|&i| y[i]).collect();
                let score = gini_weighted(&l, k) + gini_weighted(&r, k);
                if best.is_none_or(|(b, _, _)| score < b - 1e-12) {
                    best = Some((score, f, t));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return leaf;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][feature] <= threshold);
        RefTree::Split {
            feature,
            threshold,
            left: Box::new(go(x, y, &l, k, depth + 1, max_depth, min_split)),
            right: Box::new(go(x, y, &r, k, depth + 1, max_depth, min_split)),
        }
    }
    let rows: Vec<usize> = (0..y.len()).collect();
    go(x, y, &rows, n_classes, 0, max_depth, min_split)
}

pub fn reference_predict(t: &RefTree, x: &[f64]) -> usize {
    match t {
        RefTree::Leaf(c) => *c,
        RefTree::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            if x[*feature] <= *threshold {
                reference_predict(left, x)
            } else {
                reference_predict(right, x)
            }
        }
    }
}

/// Structural equality between a library tree and the reference.
pub fn same_tree(nodes: &[mlds::metaclassify::TreeNode], i: usize, r: &RefTree) -> bool {
    use mlds::metaclassify::TreeNode;
    match (&nodes[i], r) {
        (TreeNode::Leaf { class }, RefTree::Leaf(c)) => class == c,
        (
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            },
            RefTree::Split {
                feature: f,
                threshold: t,
                left: l,
                right: rr,
            },
        ) => feature == f && threshold == t && same_tree(nodes, *left, l) && same_tree(nodes, *right, rr),
        _ => false,
    }
}

/// Random dataset with coarse integer-valued features so ties are frequent.
pub fn random_tree_dataset(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>, usize) {
    let n = rng.gen_range(1..=50);
    let d = rng.gen_range(1..=4);
    let k = rng.gen_range(2..=4);
    let levels = rng.gen_range(2..=8);
    let x = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(0..levels) as f64 * 0.5 - 1.0).collect())
        .collect();
    let y = (0..n).map(|_| rng.gen_range(0..k)).collect();
    (x, y, k)
}

// ---------------------------------------------------------------------------
// Gaussian naive Bayes posteriors, written out as products of densities

pub fn naive_bayes_posterior(x: &[Vec<f64>], y: &[usize], n_classes: usize, floor: f64, query: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let mut joint = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let rows: Vec<&Vec<f64>> = x.iter().zip(y).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
        let m = rows.len() as f64;
        let mut p = m / n;
        for (j, &q) in query.iter().enumerate() {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / m;
            let var = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / m).max(floor);
            p *= (-(q - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        }
        joint.push(p);
    }
    let z: f64 = joint.iter().sum();
    joint.iter().map(|p| p / z).collect()
}

// ---------------------------------------------------------------------------
// Machines: trigger-free sequences and single planted triggers

pub const TRIGGER: [u8; 3] = [0x5A, 0xA5, 0x3C];

pub fn contains_trigger(seq: &[u8]) -> bool {
    seq.windows(3).any(|w| w == TRIGGER)
}

/// Uniform bytes, resampled until no trigger occurs anywhere.
pub fn trigger_free(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    loop {
        let s: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        if !contains_trigger(&s) {
            return s;
        }
    }
}
