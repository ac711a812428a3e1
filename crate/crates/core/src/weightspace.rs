//! Weight vectors, PCA projection and cluster purity.
//!
//! A weight vector is the flat canonical parameter buffer of a network (see
//! [`crate::nn`] for the ordering). PCA runs in f64: through the covariance
//! matrix when there are at least as many samples as dimensions, otherwise
//! through the sample Gram matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Architecture, ParameterSet};
use crate::rng::{stream, stream_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f32>,
    pub fingerprint: u64,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn vectorize(params: &ParameterSet<f32>) -> WeightVector {
    WeightVector {
        values: params.values.clone(),
        fingerprint: params.arch.fingerprint(),
    }
}

pub fn unflatten(v: &WeightVector, arch: Architecture) -> Result<ParameterSet<f32>> {
    if v.fingerprint != arch.fingerprint() {
        return Err(Error::ArchitectureMismatch(
            "weight vector fingerprint does not match the architecture".into(),
        ));
    }
    ParameterSet::from_values(arch, v.values.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal axes of length `dim`, by decreasing variance.
    pub axes: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Sum of per-dimension sample variances of the fitted data.
    pub total_variance: f64,
    pub fingerprint: u64,
}

impl ProjectionModel {
    pub fn k(&self) -> usize {
        self.axes.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_uniform(vectors: &[WeightVector]) -> Result<(u64, usize)> {
    let first = vectors.first().ok_or(Error::Empty("vector set"))?;
    for v in vectors {
        if v.fingerprint != first.fingerprint {
            return Err(Error::ArchitectureMismatch("mixed weight-vector fingerprints".into()));
        }
        if v.len() != first.len() {
            return Err(Error::DimensionMismatch {
                context: "weight vector",
                expected: first.len(),
                actual: v.len(),
            });
        }
    }
    Ok((first.fingerprint, first.len()))
}

/// Eigenpairs sorted by decreasing eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, c)| (l, c.iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Gram-Schmidt against `basis`; returns false if nothing independent is left.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) -> bool {
    for _ in 0..2 {
        for b in basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
    }
    normalize(v) > 1e-8
}

fn canonical_sign(axis: &mut [f64]) {
    let pivot = axis
        .iter()
        .copied()
        .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if pivot < 0.0 {
        axis.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn fit_pca(vectors: &[WeightVector], k: usize) -> Result<ProjectionModel> {
    if vectors.len() < 2 {
        return Err(Error::invalid("PCA needs at least 2 vectors"));
    }
    let (fingerprint, dim) = check_uniform(vectors)?;
    let n = vectors.len();
    if k == 0 || k > (n - 1).min(dim) {
        return Err(Error::invalid(format!(
            "k = {k} must be in 1..={} for {n} vectors of dimension {dim}",
            (n - 1).min(dim)
        )));
    }

    let mut mean = vec![0.0f64; dim];
    for v in vectors {
        mean.iter_mut().zip(&v.values).for_each(|(m, &x)| *m += x as f64);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| vectors[i].values[j] as f64 - mean[j]);
    let denom = (n - 1) as f64;
    let total_variance = centered.iter().map(|x| x * x).sum::<f64>() / denom;

    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    if dim <= n {
        let cov = centered.transpose() * &centered / denom;
        for (lambda, vec) in sorted_eigen(cov).into_iter().take(k) {
            explained.push(lambda.max(0.0));
            axes.push(vec);
        }
    } else {
        let gram = &centered * centered.transpose() / denom;
        for (lambda, u) in sorted_eigen(gram).into_iter().take(k) {
            let lambda = lambda.max(0.0);
            // axis = X^T u / ||X^T u||; zero-variance directions get completed below.
            let mut axis: Vec<f64> = (0..dim)
                .map(|j| (0..n).map(|i| centered[(i, j)] * u[i]).sum())
                .collect();
            if lambda > 1e-12 * total_variance.max(f64::MIN_POSITIVE) && orthogonalize(&mut axis, &axes) {
                explained.push(lambda);
                axes.push(axis);
            } else {
                break;
            }
        }
    }
    // Complete degenerate (zero-variance) directions with any orthonormal axes.
    let mut e = 0;
    while axes.len() < k {
        let mut cand = vec![0.0; dim];
        cand[e % dim] = 1.0;
        e += 1;
        if orthogonalize(&mut cand, &axes) {
            axes.push(cand);
            explained.push(0.0);
        }
    }
    axes.iter_mut().for_each(|a| canonical_sign(a));

    Ok(ProjectionModel {
        mean,
        axes,
        explained_variance: explained,
        total_variance,
        fingerprint,
    })
}

pub fn project_values(model: &ProjectionModel, values: &[f32]) -> Result<Vec<f64>> {
    if values.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "projection input",
            expected: model.dim(),
            actual: values.len(),
        });
    }
    Ok(model
        .axes
        .iter()
        .map(|axis| {
            axis.iter()
                .zip(values)
                .zip(&model.mean)
                .map(|((a, &x), m)| a * (x as f64 - m))
                .sum()
        })
        .collect())
}

pub fn project(model: &ProjectionModel, v: &WeightVector) -> Result<Vec<f64>> {
    if v.fingerprint != model.fingerprint {
        return Err(Error::ArchitectureMismatch("projection fingerprint mismatch".into()));
    }
    project_values(model, &v.values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut r = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        };
        centroids.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> KMeansResult {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&i, &j| sq_dist(p, &centroids[i]).total_cmp(&sq_dist(p, &centroids[j])))
                .unwrap_or(0);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            // An emptied cluster keeps its previous centroid.
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = assignments
        .iter()
        .zip(points)
        .map(|(&a, p)| sq_dist(p, &centroids[a]))
        .sum();
    KMeansResult {
        assignments,
        centroids,
        inertia,
    }
}

pub const KMEANS_RESTARTS: usize = 50;
pub const KMEANS_MAX_ITER: usize = 200;

/// k-means++ seeding, best of [`KMEANS_RESTARTS`] Lloyd runs by inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::invalid(format!(
            "k-means needs 1 <= k <= n points (k = {k}, n = {})",
            points.len()
        )));
    }
    let mut rng = stream_rng(seed, stream::KMEANS);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..KMEANS_RESTARTS {
        let init = kmeans_pp_init(points, k, &mut rng);
        let run = lloyd(points, init, KMEANS_MAX_ITER);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Fraction of points whose cluster's majority label is their own label.
pub fn purity(assignments: &[usize], labels: &[usize]) -> f64 {
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &l) in assignments.iter().zip(labels) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / labels.len().max(1) as f64
}

pub const PURITY_PCA_DIMS: usize = 10;

/// k-means on the top-10 PCA projection, scored by [`purity`].
pub fn cluster_purity(vectors: &[WeightVector], labels: &[usize], k: usize, seed: u64) -> Result<f64> {
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "labels",
            expected: vectors.len(),
            actual: labels.len(),
        });
    }
    let distinct = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    if k != distinct {
        return Err(Error::invalid(format!("k = {k} but there are {distinct} distinct labels")));
    }
    if vectors.len() < k {
        return Err(Error::invalid("fewer vectors than clusters"));
    }
    let (_, dim) = check_uniform(vectors)?;
    let points: Vec<Vec<f64>> = if vectors.len() < 2 {
        vectors.iter().map(|v| v.values.iter().map(|&x| x as f64).collect()).collect()
    } else {
        let dims = PURITY_PCA_DIMS.min(vectors.len() - 1).min(dim);
        let model = fit_pca(vectors, dims)?;
        vectors.iter().map(|v| project(&model, v)).collect::<Result<_>>()?
    };
    let result = kmeans(&points, k, seed)?;
    Ok(purity(&result.assignments, labels))
}

/// One row per vector: label, then values.
pub fn write_rows_csv<L: std::fmt::Display, V: std::fmt::Display>(path: &Path, header: &[String], rows: &[(L, Vec<V>)]) -> Result<()> {
    let mut out = String::new();
    if !header.is_empty() {
        out.push_str(&header.join(","));
        out.push('\n');
    }
    for (label, values) in rows {
        write!(out, "{label}").expect("string write");
        for v in values {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_vectors_csv(path: &Path, labels: &[String], vectors: &[WeightVector]) -> Result<()> {
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut header = vec!["label".to_string()];
    header.extend((0..dim).map(|i| format!("w{i}")));
    let rows: Vec<(&String, Vec<f32>)> = labels.iter().zip(vectors).map(|(l, v)| (l, v.values.clone())).collect();
    write_rows_csv(path, &header, &rows)
}

pub fn write_projection_csv(path: &Path, labels: &[String], coords: &[Vec<f64>]) -> Result<()> {
    let k = coords.first().map_or(0, |c| c.len());
    let mut header = vec!["label".to_string()];
    header.extend((0..k).map(|i| format!("pc{}", i + 1)));
    let rows: Vec<(&String, Vec<f64>)> = labels.iter().zip(coords).map(|(l, c)| (l, c.clone())).collect();
    write_rows_csv(path, &header, &rows)
}

/// Static scatter plot of the first two coordinates, one color per label.
pub fn scatter_svg(labels: &[String], coords: &[Vec<f64>]) -> String {
    const PALETTE: [&str; 10] = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    ];
    let (w, h, pad) = (640.0, 640.0, 40.0);
    let xy: Vec<(f64, f64)> = coords
        .iter()
        .map(|c| (c.first().copied().unwrap_or(0.0), c.get(1).copied().unwrap_or(0.0)))
        .collect();
    let (min_x, max_x) = xy.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (min_y, max_y) = xy.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let sx = |x: f64| pad + (x - min_x) / (max_x - min_x).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - min_y) / (max_y - min_y).max(1e-12) * (h - 2.0 * pad);
    let names: Vec<&String> = labels.iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (label, &(x, y)) in labels.iter().zip(&xy) {
        let color = PALETTE[names.iter().position(|n| *n == label).unwrap_or(0) % PALETTE.len()];
        write!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.7"/>"#, sx(x), sy(y)).expect("string write");
    }
    for (i, name) in names.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        write!(svg, r#"<text x="10" y="{}" font-size="12" fill="{color}">{name}</text>"#, 16 + 14 * i).expect("string write");
    }
    svg.push_str("</svg>");
    svg
}
