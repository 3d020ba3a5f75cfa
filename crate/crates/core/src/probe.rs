//! Linear softmax classifier used as the evaluation probe and as the
//! network's terminal layer. Trained with plain SGD on cross-entropy plus
//! an L2 penalty `(l2/2)·‖W‖²` (bias not penalized).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// `[num_classes, feat_dim]`
    pub weights: Tensor,
    /// `[num_classes]`
    pub bias: Tensor,
    pub l2: f64,
}

/// Gradient of the penalized mean cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGradient {
    pub loss: f64,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LinearProbe {
    pub fn zeros(num_classes: usize, feat_dim: usize, l2: f64) -> Result<Self> {
        check_l2(l2)?;
        Ok(LinearProbe {
            weights: Tensor::zeros(vec![num_classes, feat_dim])?,
            bias: Tensor::zeros(vec![num_classes])?,
            l2,
        })
    }

    /// Uniform `±1/sqrt(feat_dim)` weights, zero bias.
    pub fn random<R: Rng + ?Sized>(
        num_classes: usize,
        feat_dim: usize,
        l2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_l2(l2)?;
        let a = 1.0 / (feat_dim as f64).sqrt();
        Ok(LinearProbe {
            weights: Tensor::from_fn(vec![num_classes, feat_dim], |_| rng.random_range(-a..=a))?,
            bias: Tensor::zeros(vec![num_classes])?,
            l2,
        })
    }

    pub fn new(weights: Tensor, bias: Tensor, l2: f64) -> Result<Self> {
        check_l2(l2)?;
        let (k, _) = weights.dims2()?;
        if bias.shape() != [k] {
            return Err(Error::dim(format!(
                "bias shape {:?} does not match {k} classes",
                bias.shape()
            )));
        }
        Ok(LinearProbe { weights, bias, l2 })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn feat_dim(&self) -> usize {
        self.weights.shape()[1]
    }
}

fn check_l2(l2: f64) -> Result<()> {
    if l2 >= 0.0 && l2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "l2 must be nonnegative, got {l2}"
        )))
    }
}

fn feature_rows(p: &LinearProbe, features: &Tensor) -> Result<usize> {
    let (b, f) = features.dims2()?;
    if f != p.feat_dim() {
        return Err(Error::dim(format!(
            "features have {f} columns, probe expects {}",
            p.feat_dim()
        )));
    }
    Ok(b)
}

/// `logits = features · Wᵀ + bias`.
pub fn probe_forward(p: &LinearProbe, features: &Tensor) -> Result<Tensor> {
    let b = feature_rows(p, features)?;
    let k = p.num_classes();
    let mut logits = gemm(
        MatRef::new(features.data(), b, p.feat_dim()),
        MatRef::new(p.weights.data(), k, p.feat_dim()).t(),
    );
    for row in logits.chunks_exact_mut(k) {
        row.iter_mut().zip(p.bias.data()).for_each(|(l, b)| *l += b);
    }
    Ok(Tensor::from_parts(vec![b, k], logits))
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= z);
    e
}

fn check_labels(labels: &[usize], rows: usize, num_classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::dim(format!(
            "{} labels for {rows} feature rows",
            labels.len()
        )));
    }
    match labels.iter().find(|&&l| l >= num_classes) {
        Some(&label) => Err(Error::InvalidLabel { label, num_classes }),
        None => Ok(()),
    }
}

/// Loss and analytic gradient of `mean CE + (l2/2)‖W‖²`.
pub fn probe_gradient(
    p: &LinearProbe,
    features: &Tensor,
    labels: &[usize],
) -> Result<ProbeGradient> {
    let b = feature_rows(p, features)?;
    let k = p.num_classes();
    check_labels(labels, b, k)?;
    let logits = probe_forward(p, features)?;
    let mut dlogits = Vec::with_capacity(b * k);
    let mut loss = 0.0;
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&l| (l - m).exp()).sum();
        loss += z.ln() + m - row[y];
        let probs = softmax(row);
        dlogits.extend(
            probs
                .iter()
                .enumerate()
                .map(|(c, &pc)| (pc - if c == y { 1.0 } else { 0.0 }) / b as f64),
        );
    }
    let mut gw = gemm(
        MatRef::new(&dlogits, b, k).t(),
        MatRef::new(features.data(), b, p.feat_dim()),
    );
    gw.iter_mut()
        .zip(p.weights.data())
        .for_each(|(g, &w)| *g += p.l2 * w);
    let mut gb = vec![0.0; k];
    for row in dlogits.chunks_exact(k) {
        gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
    }
    let penalty = 0.5 * p.l2 * p.weights.data().iter().map(|w| w * w).sum::<f64>();
    Ok(ProbeGradient {
        loss: loss / b as f64 + penalty,
        weights: Tensor::from_parts(vec![k, p.feat_dim()], gw),
        bias: Tensor::from_parts(vec![k], gb),
    })
}

/// Penalized mean cross-entropy only.
pub fn probe_loss(p: &LinearProbe, features: &Tensor, labels: &[usize]) -> Result<f64> {
    let b = feature_rows(p, features)?;
    check_labels(labels, b, p.num_classes())?;
    let logits = probe_forward(p, features)?;
    let mut loss = 0.0;
    for (row, &y) in logits.data().chunks_exact(p.num_classes()).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&l| (l - m).exp()).sum();
        loss += z.ln() + m - row[y];
    }
    let penalty = 0.5 * p.l2 * p.weights.data().iter().map(|w| w * w).sum::<f64>();
    Ok(loss / b as f64 + penalty)
}

/// One SGD step on a mini-batch.
pub fn probe_sgd_step(
    p: &LinearProbe,
    features: &Tensor,
    labels: &[usize],
    eta: f64,
) -> Result<LinearProbe> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive and finite, got {eta}"
        )));
    }
    let g = probe_gradient(p, features, labels)?;
    let weights = p.weights.sub(&g.weights.scale(eta))?;
    let bias = p.bias.sub(&g.bias.scale(eta))?;
    if !weights.is_finite() || !bias.is_finite() {
        return Err(Error::Divergence {
            layer: "probe".into(),
            epoch: None,
            batch: None,
        });
    }
    Ok(LinearProbe {
        weights,
        bias,
        l2: p.l2,
    })
}

/// Argmax class per row, ties to the lowest class index.
pub fn predict(p: &LinearProbe, features: &Tensor) -> Result<Vec<usize>> {
    let logits = probe_forward(p, features)?;
    Ok(logits
        .data()
        .chunks_exact(p.num_classes())
        .map(|row| {
            let mut best = 0;
            for (c, &l) in row.iter().enumerate() {
                if l > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Number of correct argmax predictions.
pub fn count_correct(p: &LinearProbe, features: &Tensor, labels: &[usize]) -> Result<usize> {
    let pred = predict(p, features)?;
    if pred.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} labels for {} feature rows",
            labels.len(),
            pred.len()
        )));
    }
    Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count())
}

/// Fraction of rows whose argmax matches the label.
pub fn evaluate_accuracy(p: &LinearProbe, features: &Tensor, labels: &[usize]) -> Result<f64> {
    let correct = count_correct(p, features, labels)?;
    Ok(correct as f64 / labels.len() as f64)
}

/// Learning rate for a 0-based `epoch` out of `total`: constant for the
/// first half of the budget, then halved every two epochs.
pub fn probe_learning_rate(eta: f64, epoch: usize, total: usize) -> f64 {
    let half = total / 2;
    if epoch < half {
        eta
    } else {
        eta / f64::powi(2.0, ((epoch - half) / 2 + 1) as i32)
    }
}

/// SGD training settings for [`fit_probe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
}

/// Outcome of early-stopped probe training.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub probe: LinearProbe,
    /// Validation accuracy after each epoch.
    pub val_accuracy: Vec<f64>,
    /// Mean training loss over each epoch's mini-batches.
    pub train_loss: Vec<f64>,
    /// 1-based epoch with the highest validation accuracy (earliest on ties).
    pub chosen_epoch: usize,
}

/// Copies the selected rows of a `[N, F]` tensor into a new `[len, F]` tensor.
pub(crate) fn gather_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let f = t.len() / t.shape()[0];
    let mut data = Vec::with_capacity(idx.len() * f);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::from_parts(vec![idx.len(), f], data)
}

/// Trains `probe` on frozen features with per-epoch shuffling and keeps the
/// state from the epoch with the best validation accuracy.
pub fn fit_probe<R: Rng + ?Sized>(
    mut probe: LinearProbe,
    train: (&Tensor, &[usize]),
    val: (&Tensor, &[usize]),
    cfg: ProbeTraining,
    rng: &mut R,
) -> Result<ProbeFit> {
    let (xs, ys) = train;
    let n = feature_rows(&probe, xs)?;
    check_labels(ys, n, probe.num_classes())?;
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "epochs and batch size must be positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = (f64::NEG_INFINITY, 0, probe.clone());
    let mut val_accuracy = Vec::with_capacity(cfg.epochs);
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let eta = probe_learning_rate(cfg.eta, epoch, cfg.epochs);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather_rows(xs, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            let g = probe_gradient(&probe, &xb, &yb)?;
            loss_sum += g.loss;
            batches += 1;
            probe = LinearProbe {
                weights: probe.weights.sub(&g.weights.scale(eta))?,
                bias: probe.bias.sub(&g.bias.scale(eta))?,
                l2: probe.l2,
            };
            if !probe.weights.is_finite() || !probe.bias.is_finite() {
                return Err(Error::Divergence {
                    layer: "probe".into(),
                    epoch: Some(epoch + 1),
                    batch: Some(batches),
                });
            }
        }
        let acc = evaluate_accuracy(&probe, val.0, val.1)?;
        val_accuracy.push(acc);
        train_loss.push(loss_sum / batches as f64);
        if acc > best.0 {
            best = (acc, epoch + 1, probe.clone());
        }
    }
    Ok(ProbeFit {
        probe: best.2,
        val_accuracy,
        train_loss,
        chosen_epoch: best.1,
    })
}
