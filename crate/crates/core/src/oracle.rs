//! Brute-force reference computations for verification: batch PCA through a
//! cyclic Jacobi eigensolver, Lloyd's k-means, and eigenvector alignment.
//! Nothing on the training path calls into this module.

use crate::error::{Error, Result};
use crate::rules::WeightMatrix;
use crate::tensor::Tensor;

/// Leading eigenpairs of an empirical covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    /// Descending, nonnegative.
    pub eigenvalues: Vec<f64>,
    /// `[k, D]`, orthonormal rows.
    pub eigenvectors: Tensor,
    /// Set when the covariance is identically zero; the basis is then an
    /// arbitrary orthonormal one.
    pub degenerate: bool,
}

impl EigenBasis {
    pub fn vector(&self, i: usize) -> &[f64] {
        self.eigenvectors.row(i)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// `a` is a row-major `n × n` symmetric matrix. Returns eigenvalues and the
/// matching eigenvectors as rows, unsorted. Sweeps stop once the
/// off-diagonal Frobenius norm drops below `tol`.
pub fn jacobi_eigen(a: &[f64], n: usize, tol: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n, "matrix must be n x n");
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    for _sweep in 0..100 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                // eigenvectors are kept as rows of v
                for k in 0..n {
                    let vpk = v[p * n + k];
                    let vqk = v[q * n + k];
                    v[p * n + k] = c * vpk - s * vqk;
                    v[q * n + k] = s * vpk + c * vqk;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Empirical covariance `(1/n) XcᵀXc` of the mean-centered rows.
pub fn covariance(x: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = x.dims2()?;
    let mut mean = vec![0.0; d];
    for row in x.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for row in x.rows() {
        for j in 0..d {
            centered[j] = row[j] - mean[j];
        }
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / n as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(cov)
}

/// Top-`k` principal components of the rows of `x`.
pub fn batch_pca(x: &Tensor, k: usize) -> Result<EigenBasis> {
    let (n, d) = x.dims2()?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch PCA needs at least 2 rows, got {n}"
        )));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "component count {k} must be in 1..={d}"
        )));
    }
    let cov = covariance(x)?;
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let degenerate = trace <= 0.0;
    let (values, vectors) = if degenerate {
        let mut eye = vec![0.0; d * d];
        (0..d).for_each(|i| eye[i * d + i] = 1.0);
        (vec![0.0; d], eye)
    } else {
        jacobi_eigen(&cov, d, 1e-12 * trace)
    };
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut eigenvalues = Vec::with_capacity(k);
    let mut rows = Vec::with_capacity(k * d);
    for &i in order.iter().take(k) {
        eigenvalues.push(values[i].max(0.0));
        let mut v = vectors[i * d..(i + 1) * d].to_vec();
        let lead = v
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |acc, (j, x)| {
                if x.abs() > acc.1.abs() {
                    (j, x)
                } else {
                    acc
                }
            });
        if lead.1 < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        rows.extend(v);
    }
    Ok(EigenBasis {
        eigenvalues,
        eigenvectors: Tensor::new(vec![k, d], rows)?,
        degenerate,
    })
}

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub objective: Vec<f64>,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm from the given initial point indices. Stops at an
/// assignment fixpoint or after `max_iter` iterations. Empty clusters keep
/// their previous centroid.
pub fn kmeans(x: &Tensor, k: usize, init: &[usize], max_iter: usize) -> Result<KMeans> {
    let (n, d) = x.dims2()?;
    if k == 0 || k > n || init.len() != k {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= n ({n}) and k init indices, got k={k}, {} indices",
            init.len()
        )));
    }
    let mut seen = init.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != k || seen.last().is_some_and(|&i| i >= n) {
        return Err(Error::InvalidArgument(
            "init indices must be distinct and in range".into(),
        ));
    }
    let mut c: Vec<f64> = init.iter().flat_map(|&i| x.row(i).to_vec()).collect();
    let mut assign = vec![usize::MAX; n];
    let mut objective = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        let mut wcss = 0.0;
        for (i, row) in x.rows().enumerate() {
            let mut best = (0, f64::INFINITY);
            for j in 0..k {
                let dj = sq(row, &c[j * d..(j + 1) * d]);
                if dj < best.1 {
                    best = (j, dj);
                }
            }
            wcss += best.1;
            if assign[i] != best.0 {
                assign[i] = best.0;
                changed = true;
            }
        }
        objective.push(wcss);
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (row, &a) in x.rows().zip(&assign) {
            counts[a] += 1;
            sums[a * d..(a + 1) * d]
                .iter_mut()
                .zip(row)
                .for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                for t in 0..d {
                    c[j * d + t] = sums[j * d + t] / counts[j] as f64;
                }
            }
        }
    }
    Ok(KMeans {
        centroids: Tensor::new(vec![k, d], c)?,
        assignments: assign,
        iterations,
        objective,
    })
}

/// Per-component `|cos|` between weight rows and eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub values: Vec<f64>,
    /// `true` where the weight row had zero norm (value reported as 0).
    pub zero_norm: Vec<bool>,
}

impl Alignment {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn cosine_alignment(w: &WeightMatrix, basis: &EigenBasis) -> Result<Alignment> {
    let (k, d) = basis.eigenvectors.dims2()?;
    if w.neurons() != k || w.dim() != d {
        return Err(Error::dim(format!(
            "weights {}x{} vs basis {k}x{d}",
            w.neurons(),
            w.dim()
        )));
    }
    let mut values = Vec::with_capacity(k);
    let mut zero_norm = Vec::with_capacity(k);
    for i in 0..k {
        let (wi, vi) = (w.row(i), basis.vector(i));
        let wn = wi.iter().map(|a| a * a).sum::<f64>().sqrt();
        let vn = vi.iter().map(|a| a * a).sum::<f64>().sqrt();
        if wn == 0.0 || vn == 0.0 {
            values.push(0.0);
            zero_norm.push(true);
        } else {
            let dot: f64 = wi.iter().zip(vi).map(|(a, b)| a * b).sum();
            values.push((dot / (wn * vn)).abs());
            zero_norm.push(false);
        }
    }
    Ok(Alignment { values, zero_norm })
}
