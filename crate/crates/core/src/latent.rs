//! Latent codes: the target representation `S ∈ R^{d_o×n}` each layer's
//! weights are asked to encode input activations into.
//!
//! Four codes are provided: principal components of the activations,
//! one-hot labels, inner products with K-Means cluster centers, and Fisher
//! discriminant projections. PCA and LDA project centered activations; when
//! fewer informative directions exist than requested rows, the remaining
//! rows are low-magnitude projections onto seeded random unit vectors so
//! that `SSᵀ` stays full rank.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Which latent code a layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentCodeKind {
    Pca,
    OneHot,
    KMeans,
    Lda,
}

impl std::fmt::Display for LatentCodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LatentCodeKind::Pca => "pca",
            LatentCodeKind::OneHot => "onehot",
            LatentCodeKind::KMeans => "kmeans",
            LatentCodeKind::Lda => "lda",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for LatentCodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(LatentCodeKind::Pca),
            "onehot" => Ok(LatentCodeKind::OneHot),
            "kmeans" => Ok(LatentCodeKind::KMeans),
            "lda" => Ok(LatentCodeKind::Lda),
            other => Err(Error::Parameter(format!(
                "unknown latent code '{other}' (expected pca, onehot, kmeans, or lda)"
            ))),
        }
    }
}

/// Per-layer latent-code choice with its randomness and K-Means knobs.
#[derive(Debug, Clone)]
pub struct LatentCodeSpec {
    pub kind: LatentCodeKind,
    pub seed: u64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

impl LatentCodeSpec {
    pub fn new(kind: LatentCodeKind, seed: u64) -> Self {
        LatentCodeSpec {
            kind,
            seed,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
        }
    }
}

/// Fitted K-Means state.
#[derive(Debug, Clone)]
pub struct KMeans {
    /// Cluster centers as columns, `d_i×k`.
    pub centers: Matrix,
    /// Cluster index of each input column.
    pub assignments: Vec<usize>,
    /// Final sum of squared distances to assigned centers.
    pub inertia: f64,
    /// Inertia after each Lloyd iteration; non-increasing.
    pub inertia_trace: Vec<f64>,
}

fn row_means(x: &Matrix) -> Vec<f64> {
    let n = x.cols() as f64;
    (0..x.rows())
        .map(|r| x.row(r).iter().sum::<f64>() / n)
        .collect()
}

/// Subtracts each row's mean, centering every sample dimension.
fn center_columns(x: &Matrix) -> Matrix {
    let means = row_means(x);
    let mut c = x.clone();
    for r in 0..c.rows() {
        for j in 0..c.cols() {
            c.set(r, j, c.get(r, j) - means[r]);
        }
    }
    c
}

fn sample_std(row: &[f64]) -> f64 {
    if row.len() < 2 {
        return 0.0;
    }
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    var.max(0.0).sqrt()
}

/// First component with magnitude above 1e-12 made non-negative.
fn fix_sign(col: &mut [f64]) {
    for &v in col.iter() {
        if v.abs() > 1e-12 {
            if v < 0.0 {
                for entry in col.iter_mut() {
                    *entry = -*entry;
                }
            }
            return;
        }
    }
}

/// Fills rows `start..` of `s` with projections of centered activations onto
/// seeded random unit vectors, scaled to 0.01× `ref_std`.
fn pad_rows(s: &mut Matrix, xc: &Matrix, start: usize, ref_std: f64, seed: u64) {
    let d_i = xc.rows();
    let n = xc.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in start..s.rows() {
        let mut u: Vec<f64> = (0..d_i).map(|_| rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut u {
                *v /= norm;
            }
        }
        let mut proj: Vec<f64> = (0..n)
            .map(|j| (0..d_i).map(|i| u[i] * xc.get(i, j)).sum())
            .collect();
        let proj_std = sample_std(&proj);
        if proj_std > 0.0 && ref_std > 0.0 {
            let factor = 0.01 * ref_std / proj_std;
            for v in &mut proj {
                *v *= factor;
            }
        }
        for (j, v) in proj.iter().enumerate() {
            s.set(r, j, *v);
        }
    }
}

/// Top `k` principal directions of the sample covariance of `x`
/// (columns = samples), as orthonormal columns in descending-variance
/// order. Returns min(k, d_i, n−1) columns.
pub fn pca_components(x: &Matrix, k: usize) -> Result<Matrix> {
    let n = x.cols();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "principal components need at least 2 samples, got {n}"
        )));
    }
    let xc = center_columns(x);
    let cov = xc.gram().scale(1.0 / (n as f64 - 1.0));
    let eig = cov.sym_eig()?;
    let keep = k.min(x.rows()).min(n - 1);
    let mut p = Matrix::zeros(x.rows(), keep);
    for j in 0..keep {
        for i in 0..x.rows() {
            p.set(i, j, eig.eigenvectors.get(i, j));
        }
    }
    Ok(p)
}

/// Principal-component code: rows are projections of the centered
/// activations onto the top principal directions, padded with low-magnitude
/// random projections when `d_o` exceeds the available rank.
pub fn pca_code(x: &Matrix, d_o: usize, seed: u64) -> Result<Matrix> {
    if d_o == 0 {
        return Err(Error::Parameter("code must have at least 1 row".into()));
    }
    let p = pca_components(x, d_o)?;
    let n = x.cols();
    let xc = center_columns(x);
    let retained = p.cols();
    let mut s = Matrix::zeros(d_o, n);
    for r in 0..retained {
        for j in 0..n {
            let v = (0..x.rows()).map(|i| p.get(i, r) * xc.get(i, j)).sum();
            s.set(r, j, v);
        }
    }
    if retained < d_o {
        let mut ref_std = if retained > 0 {
            sample_std(s.row(retained - 1))
        } else {
            0.0
        };
        if ref_std == 0.0 {
            ref_std = sample_std(xc.data());
        }
        pad_rows(&mut s, &xc, retained, ref_std, seed);
    }
    Ok(s)
}

/// Indicator code: `S[c][i] = 1` when `labels[i] = c`, else 0.
pub fn one_hot_code(labels: &[usize], num_classes: usize) -> Result<Matrix> {
    let mut s = Matrix::zeros(num_classes, labels.len());
    for (i, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::Label(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        s.set(label, i, 1.0);
    }
    Ok(s)
}

fn squared_distance(x: &Matrix, col: usize, centers: &Matrix, center: usize) -> f64 {
    (0..x.rows())
        .map(|i| {
            let d = x.get(i, col) - centers.get(i, center);
            d * d
        })
        .sum()
}

/// Index of the nearest center; ties break toward the lowest index.
fn nearest_center(x: &Matrix, col: usize, centers: &Matrix) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = squared_distance(x, col, centers, 0);
    for c in 1..centers.cols() {
        let d = squared_distance(x, col, centers, c);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

fn copy_column_to_center(x: &Matrix, col: usize, centers: &mut Matrix, center: usize) {
    for i in 0..x.rows() {
        centers.set(i, center, x.get(i, col));
    }
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans_fit(x: &Matrix, k: usize, spec: &LatentCodeSpec) -> Result<KMeans> {
    let n = x.cols();
    let d = x.rows();
    if k == 0 {
        return Err(Error::Parameter("cluster count must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InsufficientData(format!(
            "{k} clusters need at least {k} samples, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // k-means++ seeding: each next center drawn with probability
    // proportional to squared distance from the chosen set.
    let mut centers = Matrix::zeros(d, k);
    let first = rng.random_range(0..n);
    copy_column_to_center(x, first, &mut centers, 0);
    let mut min_d: Vec<f64> = (0..n)
        .map(|j| {
            (0..d)
                .map(|i| {
                    let diff = x.get(i, j) - centers.get(i, 0);
                    diff * diff
                })
                .sum()
        })
        .collect();
    for c in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (j, &w) in min_d.iter().enumerate() {
                acc += w;
                if acc > r {
                    chosen = j;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        copy_column_to_center(x, pick, &mut centers, c);
        for j in 0..n {
            let dsq = squared_distance(x, j, &centers, c);
            if dsq < min_d[j] {
                min_d[j] = dsq;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    let mut inertia_trace = Vec::new();
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..spec.kmeans_max_iters.max(1) {
        for j in 0..n {
            assignments[j] = nearest_center(x, j, &centers).0;
        }

        // Empty-cluster repair: teleport the center to the point farthest
        // from its current center, which strictly decreases inertia.
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assignments {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let mut far_col = 0;
            let mut far_d = -1.0;
            for j in 0..n {
                if counts[assignments[j]] <= 1 {
                    continue;
                }
                let dsq = squared_distance(x, j, &centers, assignments[j]);
                if dsq > far_d {
                    far_d = dsq;
                    far_col = j;
                }
            }
            copy_column_to_center(x, far_col, &mut centers, empty);
            assignments[far_col] = empty;
        }

        let mut sums = Matrix::zeros(d, k);
        let mut counts = vec![0usize; k];
        for j in 0..n {
            let a = assignments[j];
            counts[a] += 1;
            for i in 0..d {
                sums.set(i, a, sums.get(i, a) + x.get(i, j));
            }
        }
        for c in 0..k {
            for i in 0..d {
                centers.set(i, c, sums.get(i, c) / counts[c] as f64);
            }
        }

        let inertia: f64 = (0..n)
            .map(|j| squared_distance(x, j, &centers, assignments[j]))
            .sum();
        inertia_trace.push(inertia);
        if prev_inertia.is_finite() && prev_inertia - inertia <= spec.kmeans_tol * prev_inertia {
            break;
        }
        prev_inertia = inertia;
    }

    let inertia = *inertia_trace.last().unwrap();
    Ok(KMeans {
        centers,
        assignments,
        inertia,
        inertia_trace,
    })
}

/// Cluster-affinity code: fits `d_o` K-Means centers `H` and returns the
/// inner products `S = HᵀX`.
pub fn kmeans_code(x: &Matrix, d_o: usize, spec: &LatentCodeSpec) -> Result<Matrix> {
    let fit = kmeans_fit(x, d_o, spec)?;
    fit.centers.transpose().matmul(x)
}

/// Groups column indices by label, in ascending label order.
fn class_groups(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        groups.entry(label).or_default().push(i);
    }
    groups
}

/// Fisher discriminant directions of `x` (columns = samples): unit-norm
/// columns, at most (classes − 1) of them, in descending ratio of
/// between-class to within-class variance.
pub fn lda_directions(x: &Matrix, labels: &[usize]) -> Result<Matrix> {
    let d = x.rows();
    let n = x.cols();
    if labels.len() != n {
        return Err(Error::Parameter(format!(
            "got {} labels for {n} samples",
            labels.len()
        )));
    }
    let groups = class_groups(labels);
    if groups.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "discriminant directions need at least 2 classes, got {}",
            groups.len()
        )));
    }
    if let Some((label, members)) = groups.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "class {label} has {} sample(s), need at least 2",
            members.len()
        )));
    }

    let grand_mean = row_means(x);
    let mut s_w = Matrix::zeros(d, d);
    let mut s_b = Matrix::zeros(d, d);
    for members in groups.values() {
        let count = members.len() as f64;
        let mu: Vec<f64> = (0..d)
            .map(|i| members.iter().map(|&j| x.get(i, j)).sum::<f64>() / count)
            .collect();
        for &j in members {
            for a in 0..d {
                let da = x.get(a, j) - mu[a];
                for b in 0..d {
                    let db = x.get(b, j) - mu[b];
                    s_w.set(a, b, s_w.get(a, b) + da * db);
                }
            }
        }
        for a in 0..d {
            let da = mu[a] - grand_mean[a];
            for b in 0..d {
                let db = mu[b] - grand_mean[b];
                s_b.set(a, b, s_b.get(a, b) + count * da * db);
            }
        }
    }

    // Ridge keeps the whitening invertible under rank-deficient scatter.
    let trace: f64 = (0..d).map(|i| s_w.get(i, i)).sum();
    let ridge = 1e-6 * trace / d as f64;
    for i in 0..d {
        s_w.set(i, i, s_w.get(i, i) + ridge);
    }

    let eig_w = s_w.sym_eig()?;
    let lam_max = eig_w.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let floor = if lam_max > 0.0 {
        1e-12 * lam_max
    } else {
        f64::MIN_POSITIVE
    };
    let mut w_inv_half = Matrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let v = (0..d)
                .map(|i| {
                    let inv = 1.0 / eig_w.eigenvalues[i].max(floor).sqrt();
                    eig_w.eigenvectors.get(a, i) * inv * eig_w.eigenvectors.get(b, i)
                })
                .sum();
            w_inv_half.set(a, b, v);
        }
    }

    let t = w_inv_half.matmul(&s_b)?.matmul(&w_inv_half)?;
    let eig_t = t.sym_eig()?;
    let ratio_max = eig_t.eigenvalues.first().copied().unwrap_or(0.0);
    let threshold = 1e-9 * ratio_max.max(1.0);
    let cap = groups.len() - 1;
    let retained = eig_t
        .eigenvalues
        .iter()
        .take(cap)
        .filter(|&&v| v > threshold)
        .count();

    let mut dirs = Matrix::zeros(d, retained);
    for j in 0..retained {
        let mut col: Vec<f64> = (0..d)
            .map(|a| {
                (0..d)
                    .map(|i| w_inv_half.get(a, i) * eig_t.eigenvectors.get(i, j))
                    .sum()
            })
            .collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut col {
                *v /= norm;
            }
        }
        fix_sign(&mut col);
        for a in 0..d {
            dirs.set(a, j, col[a]);
        }
    }
    Ok(dirs)
}

/// Fisher discriminant code: rows are projections of the centered
/// activations onto discriminant directions, padded with low-magnitude
/// random projections beyond (classes − 1) rows.
pub fn lda_code(x: &Matrix, labels: &[usize], d_o: usize, seed: u64) -> Result<Matrix> {
    if d_o == 0 {
        return Err(Error::Parameter("code must have at least 1 row".into()));
    }
    let dirs = lda_directions(x, labels)?;
    let n = x.cols();
    let xc = center_columns(x);
    let retained = dirs.cols().min(d_o);
    let mut s = Matrix::zeros(d_o, n);
    for r in 0..retained {
        for j in 0..n {
            let v = (0..x.rows()).map(|i| dirs.get(i, r) * xc.get(i, j)).sum();
            s.set(r, j, v);
        }
    }
    if retained < d_o {
        let mut ref_std = if retained > 0 {
            sample_std(s.row(retained - 1))
        } else {
            0.0
        };
        if ref_std == 0.0 {
            ref_std = sample_std(xc.data());
        }
        pad_rows(&mut s, &xc, retained, ref_std, seed);
    }
    Ok(s)
}
