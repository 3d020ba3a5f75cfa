//! Dense Hebbian learning rules.
//!
//! Every rule is a pure function returning a weight delta; nothing here
//! mutates the weights it is given. Rows of a [`WeightMatrix`] are ordered:
//! row `i` is neuron `i`, and for the PCA rules the order is the component
//! rank.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{dot, gemm, MatRef, Tensor};

/// `N × D` matrix of synaptic weights, one row per neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Tensor);

impl WeightMatrix {
    pub fn new(weights: Tensor) -> Result<Self> {
        weights.dims2()?;
        Ok(WeightMatrix(weights))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        WeightMatrix::new(Tensor::from_rows(rows)?)
    }

    pub fn zeros(neurons: usize, dim: usize) -> Result<Self> {
        WeightMatrix::new(Tensor::zeros(vec![neurons, dim])?)
    }

    /// I.i.d. uniform weights in `[-1/sqrt(D), 1/sqrt(D)]`.
    pub fn random_uniform<R: Rng + ?Sized>(
        neurons: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let a = 1.0 / (dim as f64).sqrt();
        WeightMatrix::new(Tensor::from_fn(vec![neurons, dim], |_| {
            rng.random_range(-a..=a)
        })?)
    }

    pub fn neurons(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// `weights + delta`, failing if the result is not finite.
    pub fn apply(&self, delta: &Tensor) -> Result<WeightMatrix> {
        if delta.shape() != self.0.shape() {
            return Err(Error::dim(format!(
                "delta shape {:?} does not match weights {:?}",
                delta.shape(),
                self.0.shape()
            )));
        }
        let sum = self.0.add(delta)?;
        if !sum.is_finite() {
            return Err(Error::NonFinite("updated weights".into()));
        }
        Ok(WeightMatrix(sum))
    }
}

/// Activation function `f` of the nonlinear PCA rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Nonlinearity {
    Identity,
    Relu,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Nonlinearity::Identity => y,
            Nonlinearity::Relu => y.max(0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Relu => "relu",
        }
    }
}

/// Pre-activations `y = W x` and post-activations `f(y)` for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub pre: Tensor,
    pub post: Tensor,
}

impl Activation {
    pub fn compute(w: &WeightMatrix, x_batch: &Tensor, f: Nonlinearity) -> Result<Self> {
        let (b, d) = batch_dims(w, x_batch)?;
        let mut pre = Vec::with_capacity(b * w.neurons());
        for x in x_batch.data().chunks_exact(d) {
            pre.extend((0..w.neurons()).map(|i| dot(w.row(i), x)));
        }
        let pre = Tensor::from_parts(vec![b, w.neurons()], pre);
        let post = pre.map(|y| f.apply(y));
        Ok(Activation { pre, post })
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "learning rate must be positive and finite, got {eta}"
        )))
    }
}

fn check_input(w: &WeightMatrix, x: &Tensor) -> Result<()> {
    if x.len() != w.dim() {
        return Err(Error::dim(format!(
            "input has {} elements, weights expect {}",
            x.len(),
            w.dim()
        )));
    }
    Ok(())
}

fn batch_dims(w: &WeightMatrix, x_batch: &Tensor) -> Result<(usize, usize)> {
    let (b, d) = x_batch.dims2()?;
    if d != w.dim() {
        return Err(Error::dim(format!(
            "batch rows have {d} elements, weights expect {}",
            w.dim()
        )));
    }
    Ok((b, d))
}

fn outputs(w: &WeightMatrix, x: &[f64]) -> Vec<f64> {
    (0..w.neurons()).map(|i| dot(w.row(i), x)).collect()
}

/// Plain Hebb: `Δw_i = η y_i x`.
pub fn hebb_plain(w: &WeightMatrix, x: &Tensor, eta: f64) -> Result<Tensor> {
    check_eta(eta)?;
    check_input(w, x)?;
    let y = outputs(w, x.data());
    let mut delta = Vec::with_capacity(w.neurons() * w.dim());
    for yi in y {
        delta.extend(x.data().iter().map(|&xd| eta * yi * xd));
    }
    Ok(Tensor::from_parts(vec![w.neurons(), w.dim()], delta))
}

/// Hebb with weight decay: `Δw_i = η y_i (x − w_i)`.
pub fn hebb_decay(w: &WeightMatrix, x: &Tensor, eta: f64) -> Result<Tensor> {
    check_eta(eta)?;
    check_input(w, x)?;
    let y = outputs(w, x.data());
    let mut delta = Vec::with_capacity(w.neurons() * w.dim());
    for (i, yi) in y.into_iter().enumerate() {
        delta.extend(
            x.data()
                .iter()
                .zip(w.row(i))
                .map(|(&xd, &wd)| eta * yi * (xd - wd)),
        );
    }
    Ok(Tensor::from_parts(vec![w.neurons(), w.dim()], delta))
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the neuron whose weight vector is closest to `x` in Euclidean
/// distance; ties go to the lowest index.
pub(crate) fn nearest_row(w: &WeightMatrix, x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..w.neurons() {
        let d = sq_dist(w.row(i), x);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Winner-takes-all competition.
pub fn wta_select(w: &WeightMatrix, x: &Tensor) -> Result<usize> {
    check_input(w, x)?;
    Ok(nearest_row(w, x.data()))
}

/// Competitive update: only the winner moves, by `η (x − w_winner)`.
pub fn wta_update(w: &WeightMatrix, x: &Tensor, eta: f64) -> Result<Tensor> {
    check_eta(eta)?;
    let winner = wta_select(w, x)?;
    let d = w.dim();
    let mut delta = vec![0.0; w.neurons() * d];
    for (out, (&xd, &wd)) in delta[winner * d..(winner + 1) * d]
        .iter_mut()
        .zip(x.data().iter().zip(w.row(winner)))
    {
        *out = eta * (xd - wd);
    }
    Ok(Tensor::from_parts(vec![w.neurons(), d], delta))
}

/// Linear Sanger rule (generalized Hebbian algorithm) for one sample:
/// `Δw_i = η y_i (x − Σ_{j≤i} y_j w_j)`.
pub fn sanger_update(w: &WeightMatrix, x: &Tensor, eta: f64) -> Result<Tensor> {
    check_eta(eta)?;
    check_input(w, x)?;
    let d = w.dim();
    let y = outputs(w, x.data());
    let mut residual = x.data().to_vec();
    let mut delta = vec![0.0; w.neurons() * d];
    for (i, &yi) in y.iter().enumerate() {
        for (r, &wd) in residual.iter_mut().zip(w.row(i)) {
            *r -= yi * wd;
        }
        let g = eta * yi;
        for (out, &r) in delta[i * d..(i + 1) * d].iter_mut().zip(&residual) {
            *out = g * r;
        }
    }
    Ok(Tensor::from_parts(vec![w.neurons(), d], delta))
}

/// Nonlinear Hebbian PCA update averaged over a batch of (already
/// centered) rows: per sample `Δw_i = η f(y_i) (x − Σ_{j≤i} f(y_j) w_j)`.
/// The residual uses the pre-update weights for every `j`. Per-sample
/// deltas are summed in row order and divided by the batch size.
pub fn hpca_update(
    w: &WeightMatrix,
    x_batch: &Tensor,
    f: Nonlinearity,
    eta: f64,
) -> Result<Tensor> {
    check_eta(eta)?;
    let (b, d) = batch_dims(w, x_batch)?;
    let n = w.neurons();
    let mut acc: Option<Vec<f64>> = None;
    let mut sample = vec![0.0; n * d];
    let mut residual = vec![0.0; d];
    for x in x_batch.data().chunks_exact(d) {
        residual.copy_from_slice(x);
        for i in 0..n {
            let a = f.apply(dot(w.row(i), x));
            for (r, &wd) in residual.iter_mut().zip(w.row(i)) {
                *r -= a * wd;
            }
            let g = eta * a;
            for (out, &r) in sample[i * d..(i + 1) * d].iter_mut().zip(&residual) {
                *out = g * r;
            }
        }
        match acc.as_mut() {
            None => acc = Some(sample.clone()),
            Some(acc) => acc.iter_mut().zip(&sample).for_each(|(a, s)| *a += s),
        }
    }
    let mut delta = acc.expect("batch has at least one row");
    let inv = b as f64;
    delta.iter_mut().for_each(|v| *v /= inv);
    finite_delta(Tensor::from_parts(vec![n, d], delta))
}

fn finite_delta(t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite("Hebbian update".into()))
    }
}

/// Mean squared reconstruction error `‖x − Σ_{j≤k} f(y_j) w_j‖²` over the
/// batch rows.
pub fn representation_error(
    w: &WeightMatrix,
    x_batch: &Tensor,
    f: Nonlinearity,
    k: usize,
) -> Result<f64> {
    if k == 0 || k > w.neurons() {
        return Err(Error::InvalidArgument(format!(
            "component count {k} must be in 1..={}",
            w.neurons()
        )));
    }
    let (b, d) = batch_dims(w, x_batch)?;
    let mut residual = vec![0.0; d];
    let mut total = 0.0;
    for x in x_batch.data().chunks_exact(d) {
        residual.copy_from_slice(x);
        for j in 0..k {
            let a = f.apply(dot(w.row(j), x));
            for (r, &wd) in residual.iter_mut().zip(w.row(j)) {
                *r -= a * wd;
            }
        }
        total += residual.iter().map(|r| r * r).sum::<f64>();
    }
    Ok(total / b as f64)
}

/// Update and squared-error sums over a block of input rows.
pub(crate) struct RuleSums {
    /// `N × D`, unscaled (no learning rate, no averaging).
    pub update: Vec<f64>,
    /// Σ over rows of the squared reconstruction (or quantization) error.
    pub sq_error: f64,
}

/// Sum over the rows of `x` (`P × D`) of the unscaled HPCA update
/// `f(y_i)(x − Σ_{j≤i} f(y_j) w_j)`, in matrix form
/// `Fᵀ X − tril(Fᵀ F) W` where `F = f(X Wᵀ)`. The error sum uses
/// `‖x − Σ_j f(y_j) w_j‖² = ‖x‖² − 2 f(y)·y + f(y)ᵀ (W Wᵀ) f(y)`.
pub(crate) fn hpca_sum(w: &WeightMatrix, x: &[f64], rows: usize, f: Nonlinearity) -> RuleSums {
    let (n, d) = (w.neurons(), w.dim());
    let wm = MatRef::new(w.tensor().data(), n, d);
    let xm = MatRef::new(x, rows, d);
    let pre = gemm(xm, wm.t()); // P × N
    let act: Vec<f64> = pre.iter().map(|&y| f.apply(y)).collect();
    let am = MatRef::new(&act, rows, n);
    let mut update = gemm(am.t(), xm); // N × D
    let mut gram = gemm(am.t(), am); // N × N
    let wgram = gemm(wm, wm.t());

    let x_sq: f64 = x[..rows * d].iter().map(|v| v * v).sum();
    let cross: f64 = act.iter().zip(&pre).map(|(a, y)| a * y).sum();
    let quad: f64 = gram.iter().zip(&wgram).map(|(a, b)| a * b).sum();
    let sq_error = (x_sq - 2.0 * cross + quad).max(0.0);

    for i in 0..n {
        gram[i * n + i + 1..(i + 1) * n]
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let recon = gemm(MatRef::new(&gram, n, n), wm);
    update.iter_mut().zip(&recon).for_each(|(s, r)| *s -= r);
    RuleSums { update, sq_error }
}

/// Sum over the rows of `x` of the unscaled winner update `x − w_winner`;
/// the error sum is the quantization error `‖x − w_winner‖²`.
pub(crate) fn wta_sum(w: &WeightMatrix, x: &[f64], rows: usize) -> RuleSums {
    let d = w.dim();
    let mut update = vec![0.0; w.neurons() * d];
    let mut sq_error = 0.0;
    for xr in x.chunks_exact(d).take(rows) {
        let win = nearest_row(w, xr);
        sq_error += sq_dist(w.row(win), xr);
        for (s, (&xd, &wd)) in update[win * d..(win + 1) * d]
            .iter_mut()
            .zip(xr.iter().zip(w.row(win)))
        {
            *s += xd - wd;
        }
    }
    RuleSums { update, sq_error }
}
