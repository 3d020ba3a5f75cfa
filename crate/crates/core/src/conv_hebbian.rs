//! Convolutional Hebbian layers.
//!
//! A convolutional layer shares one kernel across all spatial positions.
//! To learn it with a dense rule, every centered patch of every image in the
//! mini-batch is fed to the dense rule as its own input, and the resulting
//! per-patch updates are averaged into a single kernel update.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{conv_forward, extract_patches, ConvGeometry, PatchMatrix};
use crate::rules::{hpca_sum, wta_sum, Nonlinearity, WeightMatrix};
use crate::tensor::Tensor;

/// Learning rule of a Hebbian layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    Hpca(Nonlinearity),
    Wta,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Hpca(Nonlinearity::Relu) => "hpca-relu",
            Rule::Hpca(Nonlinearity::Identity) => "hpca-linear",
            Rule::Wta => "wta",
        }
    }

    pub fn parse(s: &str) -> Option<Rule> {
        match s {
            "hpca-relu" | "hpca" => Some(Rule::Hpca(Nonlinearity::Relu)),
            "hpca-linear" | "hpca-identity" | "sanger" => Some(Rule::Hpca(Nonlinearity::Identity)),
            "wta" => Some(Rule::Wta),
            _ => None,
        }
    }

    /// Whether the rule expects zero-mean inputs.
    pub fn centers_input(self) -> bool {
        matches!(self, Rule::Hpca(_))
    }
}

/// Running exact mean of every patch seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteringStats {
    mean: Vec<f64>,
    count: u64,
}

impl CenteringStats {
    pub fn new(dim: usize) -> Self {
        CenteringStats {
            mean: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn from_parts(mean: Vec<f64>, count: u64) -> Result<Self> {
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("centering mean".into()));
        }
        if count == 0 && mean.iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidArgument(
                "centering stats with zero count must have a zero mean".into(),
            ));
        }
        Ok(CenteringStats { mean, count })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Folds in a batch given by its element-wise sum and row count:
    /// `mean' = mean + (sum − n·mean) / (count + n)`.
    pub(crate) fn absorb_sum(&mut self, sum: &[f64], n: u64) {
        debug_assert_eq!(sum.len(), self.mean.len());
        if n == 0 {
            return;
        }
        let total = (self.count + n) as f64;
        let nf = n as f64;
        for (m, &s) in self.mean.iter_mut().zip(sum) {
            *m += (s - nf * *m) / total;
        }
        self.count += n;
    }
}

/// Column sums of a row-major `rows × dim` buffer, accumulated row by row.
pub(crate) fn column_sum(data: &[f64], dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    sum
}

/// Returns the stats after absorbing every row of `patches`.
pub fn update_centering(stats: &CenteringStats, patches: &PatchMatrix) -> Result<CenteringStats> {
    if patches.cols() != stats.dim() {
        return Err(Error::dim(format!(
            "patch width {} does not match centering dimension {}",
            patches.cols(),
            stats.dim()
        )));
    }
    let mut next = stats.clone();
    next.absorb_sum(
        &column_sum(patches.data(), stats.dim()),
        patches.rows() as u64,
    );
    Ok(next)
}

/// Kernel placement of a convolutional layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvSpec {
    pub fn geometry(&self, input: [usize; 3]) -> Result<ConvGeometry> {
        ConvGeometry::new(input, self.kernel, self.stride, self.padding)
    }
}

/// Shared-kernel layer trained by a Hebbian rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvHebbianLayer {
    pub name: String,
    pub weights: WeightMatrix,
    pub in_channels: usize,
    pub conv: ConvSpec,
    pub rule: Rule,
    pub centering: CenteringStats,
}

/// Images per reduction group. Each group is summed sequentially and the
/// group sums are combined in order, so a batch update does not depend on
/// the execution mode.
pub(crate) const GROUP: usize = 8;

/// Unscaled update sum over the patches of some images, with the squared
/// representation error and the raw patch sum for the centering statistics.
#[derive(Debug, Clone)]
pub(crate) struct UpdateSum {
    pub update: Vec<f64>,
    pub sq_error: f64,
    pub patch_sum: Vec<f64>,
    pub images: usize,
}

impl UpdateSum {
    pub(crate) fn new(neurons: usize, dim: usize) -> Self {
        UpdateSum {
            update: vec![0.0; neurons * dim],
            sq_error: 0.0,
            patch_sum: vec![0.0; dim],
            images: 0,
        }
    }

    pub(crate) fn merge(&mut self, other: &UpdateSum) {
        self.update
            .iter_mut()
            .zip(&other.update)
            .for_each(|(a, b)| *a += b);
        self.patch_sum
            .iter_mut()
            .zip(&other.patch_sum)
            .for_each(|(a, b)| *a += b);
        self.sq_error += other.sq_error;
        self.images += other.images;
    }
}

impl ConvHebbianLayer {
    pub fn new(
        name: impl Into<String>,
        weights: WeightMatrix,
        in_channels: usize,
        conv: ConvSpec,
        rule: Rule,
    ) -> Result<Self> {
        let name = name.into();
        let expected = in_channels * conv.kernel.0 * conv.kernel.1;
        if weights.dim() != expected {
            return Err(Error::dim(format!(
                "layer {name}: weight width {} != channels {in_channels} x kernel {}x{}",
                weights.dim(),
                conv.kernel.0,
                conv.kernel.1
            )));
        }
        Ok(ConvHebbianLayer {
            name,
            centering: CenteringStats::new(expected),
            weights,
            in_channels,
            conv,
            rule,
        })
    }

    pub fn filters(&self) -> usize {
        self.weights.neurons()
    }

    pub fn geometry(&self, input: [usize; 3]) -> Result<ConvGeometry> {
        if input[0] != self.in_channels {
            return Err(Error::dim(format!(
                "layer {} expects {} input channels, got {}",
                self.name, self.in_channels, input[0]
            )));
        }
        self.conv.geometry(input)
    }

    /// Centers a patch matrix in place when the rule needs it.
    fn center(&self, g: &ConvGeometry, patches: &mut [f64]) {
        if self.rule.centers_input() && self.centering.count() > 0 {
            let mean = self.centering.mean();
            for row in patches.chunks_exact_mut(g.patch_len()) {
                row.iter_mut().zip(mean).for_each(|(v, m)| *v -= m);
            }
        }
    }

    pub(crate) fn empty_sum(&self) -> UpdateSum {
        UpdateSum::new(self.weights.neurons(), self.weights.dim())
    }

    /// Adds one image's patches to `acc`.
    pub(crate) fn accumulate(&self, g: &ConvGeometry, image: &[f64], acc: &mut UpdateSum) {
        let mut x = g.im2col(image);
        let patch_sum = column_sum(&x, g.patch_len());
        self.center(g, &mut x);
        let sums = match self.rule {
            Rule::Hpca(f) => hpca_sum(&self.weights, &x, g.positions(), f),
            Rule::Wta => wta_sum(&self.weights, &x, g.positions()),
        };
        acc.update
            .iter_mut()
            .zip(&sums.update)
            .for_each(|(a, u)| *a += u);
        acc.patch_sum
            .iter_mut()
            .zip(&patch_sum)
            .for_each(|(a, u)| *a += u);
        acc.sq_error += sums.sq_error;
        acc.images += 1;
    }

    /// Update sum for a flat batch of images.
    pub(crate) fn batch_sum(&self, g: &ConvGeometry, images: &[f64], exec: Exec) -> UpdateSum {
        let len = g.input_len();
        let count = images.len() / len;
        let groups = exec.map(count.div_ceil(GROUP), |gi| {
            let mut acc = self.empty_sum();
            for b in gi * GROUP..((gi + 1) * GROUP).min(count) {
                self.accumulate(g, &images[b * len..(b + 1) * len], &mut acc);
            }
            acc
        });
        let mut total = self.empty_sum();
        groups.iter().for_each(|p| total.merge(p));
        total
    }

    /// Scales an update sum to the mean update over all patches.
    pub(crate) fn reduce_updates(
        &self,
        sum: &UpdateSum,
        positions: usize,
        eta: f64,
    ) -> Result<Tensor> {
        let scale = eta / (sum.images * positions) as f64;
        let delta: Vec<f64> = sum.update.iter().map(|d| d * scale).collect();
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                layer: self.name.clone(),
                epoch: None,
                batch: None,
            });
        }
        Ok(Tensor::from_parts(
            vec![self.weights.neurons(), self.weights.dim()],
            delta,
        ))
    }

    /// Uncentered convolution of one flat image, `[F, out_h·out_w]`.
    pub(crate) fn forward_raw(&self, g: &ConvGeometry, image: &[f64]) -> Vec<f64> {
        let patches = g.im2col(image);
        crate::nn::conv_rows(
            self.weights.tensor().data(),
            self.filters(),
            &patches,
            g.positions(),
            g.patch_len(),
        )
    }
}

fn batch_dims(input: &Tensor) -> Result<(usize, [usize; 3])> {
    match input.shape() {
        &[b, c, h, w] => Ok((b, [c, h, w])),
        s => Err(Error::dim(format!(
            "expected a [B, C, H, W] batch, got {s:?}"
        ))),
    }
}

/// Mean of the dense rule's updates over every patch of every image.
/// The layer is not modified.
pub fn conv_hebbian_step(
    layer: &ConvHebbianLayer,
    input_batch: &Tensor,
    eta: f64,
) -> Result<Tensor> {
    conv_hebbian_step_with(layer, input_batch, eta, Exec::default())
}

pub fn conv_hebbian_step_with(
    layer: &ConvHebbianLayer,
    input_batch: &Tensor,
    eta: f64,
    exec: Exec,
) -> Result<Tensor> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive and finite, got {eta}"
        )));
    }
    let (b, shape) = batch_dims(input_batch)?;
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let g = layer.geometry(shape)?;
    let sum = layer.batch_sum(&g, input_batch.data(), exec);
    layer.reduce_updates(&sum, g.positions(), eta)
}

/// `weights + delta`; a non-finite result is reported as divergence of
/// this layer.
pub fn apply_update(layer: &ConvHebbianLayer, delta: &Tensor) -> Result<ConvHebbianLayer> {
    let weights = layer.weights.apply(delta).map_err(|e| match e {
        Error::NonFinite(_) => Error::Divergence {
            layer: layer.name.clone(),
            epoch: None,
            batch: None,
        },
        other => other,
    })?;
    Ok(ConvHebbianLayer {
        weights,
        ..layer.clone()
    })
}

/// Plain shared-weight convolution of one `[C, H, W]` input. Centering only
/// affects learning, never the forward features.
pub fn layer_forward(layer: &ConvHebbianLayer, input: &Tensor) -> Result<Tensor> {
    if input.ndim() != 3 || input.shape()[0] != layer.in_channels {
        return Err(Error::dim(format!(
            "layer {} expects [{}, H, W], got {:?}",
            layer.name,
            layer.in_channels,
            input.shape()
        )));
    }
    let patches = extract_patches(
        input,
        layer.conv.kernel,
        layer.conv.stride,
        layer.conv.padding,
    )?;
    conv_forward(&patches, layer.weights.tensor())
}
