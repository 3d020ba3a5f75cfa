//! Layer stacks of Hebbian layers, ReLU, pooling and a terminal linear
//! probe; the unsupervised training loop, early stopping, per-layer
//! feature taps and retraining of upper layers.
//!
//! Hebbian layers are numbered `0..L` in stack order. Feature tap `k`
//! (`1..=L`) is the output of Hebbian layer `k` after the ReLU/pooling
//! stages that follow it, flattened; tap 0 is the raw input.

use std::borrow::Cow;
use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv_hebbian::{
    column_sum, CenteringStats, ConvHebbianLayer, ConvSpec, Rule, UpdateSum, GROUP,
};
use crate::data::{DatasetSplit, LabeledSet};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{check_pool, max_pool_raw, pool_extent, ConvGeometry};
use crate::probe::{self, count_correct, probe_gradient, LinearProbe, ProbeTraining};
use crate::rules::{Nonlinearity, WeightMatrix};
use crate::tensor::Tensor;

/// One entry of a [`NetworkSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    ConvHebbian {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rule: Rule,
    },
    Relu,
    MaxPool {
        window: (usize, usize),
        stride: (usize, usize),
    },
    Flatten,
    DenseHebbian {
        neurons: usize,
        rule: Rule,
    },
    Probe {
        num_classes: usize,
    },
}

fn pair(p: (usize, usize)) -> String {
    format!("{}x{}", p.0, p.1)
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::ConvHebbian {
                filters,
                kernel,
                stride,
                padding,
                rule,
            } => write!(
                f,
                "conv {filters} {} stride {} pad {} {}",
                pair(kernel),
                pair(stride),
                pair(padding),
                rule.name()
            ),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::MaxPool { window, stride } => {
                write!(f, "maxpool {} stride {}", pair(window), pair(stride))
            }
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::DenseHebbian { neurons, rule } => {
                write!(f, "dense {neurons} {}", rule.name())
            }
            LayerSpec::Probe { num_classes } => write!(f, "probe {num_classes}"),
        }
    }
}

fn parse_err(line: &str, why: &str) -> Error {
    Error::InvalidArgument(format!("bad spec line `{line}`: {why}"))
}

fn parse_num(s: &str, line: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| parse_err(line, &format!("`{s}` is not a count")))
}

fn parse_pair(s: &str, line: &str) -> Result<(usize, usize)> {
    match s.split_once('x') {
        Some((a, b)) => Ok((parse_num(a, line)?, parse_num(b, line)?)),
        None => {
            let v = parse_num(s, line)?;
            Ok((v, v))
        }
    }
}

fn parse_rule(s: &str, line: &str) -> Result<Rule> {
    Rule::parse(s).ok_or_else(|| parse_err(line, &format!("unknown rule `{s}`")))
}

/// Reads `key value` options (`stride 2x2`, `pad 1`) following the
/// positional fields of a line.
fn options<'a>(tokens: &[&'a str], line: &str) -> Result<Vec<(&'a str, &'a str)>> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(&k) = it.next() {
        let v = it
            .next()
            .ok_or_else(|| parse_err(line, &format!("`{k}` needs a value")))?;
        out.push((k, *v));
    }
    Ok(out)
}

impl LayerSpec {
    pub fn parse(line: &str) -> Result<LayerSpec> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["conv", filters, kernel, rest @ ..] => {
                let (rule_tok, opts) = match rest.split_last() {
                    Some((r, o)) if Rule::parse(r).is_some() => (*r, o),
                    _ => ("hpca-relu", rest),
                };
                let mut stride = (1, 1);
                let mut padding = (0, 0);
                for (k, v) in options(opts, line)? {
                    match k {
                        "stride" => stride = parse_pair(v, line)?,
                        "pad" | "padding" => padding = parse_pair(v, line)?,
                        _ => return Err(parse_err(line, &format!("unknown option `{k}`"))),
                    }
                }
                Ok(LayerSpec::ConvHebbian {
                    filters: parse_num(filters, line)?,
                    kernel: parse_pair(kernel, line)?,
                    stride,
                    padding,
                    rule: parse_rule(rule_tok, line)?,
                })
            }
            ["relu"] => Ok(LayerSpec::Relu),
            ["maxpool", window, rest @ ..] => {
                let window = parse_pair(window, line)?;
                let mut stride = window;
                for (k, v) in options(rest, line)? {
                    match k {
                        "stride" => stride = parse_pair(v, line)?,
                        _ => return Err(parse_err(line, &format!("unknown option `{k}`"))),
                    }
                }
                Ok(LayerSpec::MaxPool { window, stride })
            }
            ["flatten"] => Ok(LayerSpec::Flatten),
            ["dense", n] => Ok(LayerSpec::DenseHebbian {
                neurons: parse_num(n, line)?,
                rule: Rule::Hpca(Nonlinearity::Relu),
            }),
            ["dense", n, rule] => Ok(LayerSpec::DenseHebbian {
                neurons: parse_num(n, line)?,
                rule: parse_rule(rule, line)?,
            }),
            ["probe", k] => Ok(LayerSpec::Probe {
                num_classes: parse_num(k, line)?,
            }),
            _ => Err(parse_err(line, "unrecognized layer")),
        }
    }

    pub fn is_hebbian(&self) -> bool {
        matches!(
            self,
            LayerSpec::ConvHebbian { .. } | LayerSpec::DenseHebbian { .. }
        )
    }
}

/// Declarative description of a network.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    /// `[C, H, W]` of one input image.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl NetworkSpec {
    /// Five Hebbian layers and a linear probe: four HPCA convolutions with
    /// ReLU and max pooling in between, then a 300-unit dense HPCA layer.
    pub fn reference(input: [usize; 3], num_classes: usize, seed: u64) -> Self {
        let hpca = Rule::Hpca(Nonlinearity::Relu);
        let conv = |filters, k, p| LayerSpec::ConvHebbian {
            filters,
            kernel: (k, k),
            stride: (1, 1),
            padding: (p, p),
            rule: hpca,
        };
        let pool = LayerSpec::MaxPool {
            window: (2, 2),
            stride: (2, 2),
        };
        NetworkSpec {
            input,
            layers: vec![
                conv(32, 5, 2),
                LayerSpec::Relu,
                pool,
                conv(64, 3, 1),
                LayerSpec::Relu,
                pool,
                conv(96, 3, 1),
                LayerSpec::Relu,
                conv(128, 3, 1),
                LayerSpec::Relu,
                pool,
                LayerSpec::Flatten,
                LayerSpec::DenseHebbian {
                    neurons: 300,
                    rule: hpca,
                },
                LayerSpec::Relu,
                LayerSpec::Probe { num_classes },
            ],
            seed,
        }
    }

    /// A single linear Hebbian PCA layer on the flattened input; its
    /// weights can be compared directly against the principal components.
    pub fn reference_dense(
        input: [usize; 3],
        neurons: usize,
        num_classes: usize,
        seed: u64,
    ) -> Self {
        NetworkSpec {
            input,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::DenseHebbian {
                    neurons,
                    rule: Rule::Hpca(Nonlinearity::Identity),
                },
                LayerSpec::Probe { num_classes },
            ],
            seed,
        }
    }

    pub fn to_text(&self) -> String {
        let [c, h, w] = self.input;
        let mut s = format!("input {c}x{h}x{w}\nseed {}\n", self.seed);
        for l in &self.layers {
            s.push_str(&l.to_string());
            s.push('\n');
        }
        s
    }

    /// Parses the line format produced by [`NetworkSpec::to_text`]. Blank
    /// lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<NetworkSpec> {
        let mut input = None;
        let mut seed = 0;
        let mut layers = Vec::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("input ") {
                let dims: Vec<usize> = rest
                    .trim()
                    .split('x')
                    .map(|d| parse_num(d, line))
                    .collect::<Result<_>>()?;
                input = Some(match dims[..] {
                    [c, h, w] => [c, h, w],
                    [d] => [d, 1, 1],
                    _ => return Err(parse_err(line, "input must be CxHxW")),
                });
            } else if let Some(rest) = line.strip_prefix("seed ") {
                seed = rest
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, "seed must be an unsigned integer"))?;
            } else {
                layers.push(LayerSpec::parse(line)?);
            }
        }
        Ok(NetworkSpec {
            input: input
                .ok_or_else(|| Error::InvalidArgument("spec has no `input` line".into()))?,
            layers,
            seed,
        })
    }
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Hebbian training epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub eta_hebbian: f64,
    pub eta_probe: f64,
    pub probe_l2: f64,
    pub early_stopping: bool,
    /// Epoch budget for probes trained on frozen features.
    pub probe_epochs: usize,
    /// Train Hebbian layers one at a time (each for `epochs` epochs)
    /// instead of all together.
    pub greedy: bool,
    /// Seed for probe initialization and shuffling in frozen-feature
    /// probes; defaults to the network seed.
    pub probe_seed: Option<u64>,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            eta_hebbian: 1e-3,
            eta_probe: 1e-3,
            probe_l2: 5e-4,
            early_stopping: true,
            probe_epochs: 20,
            greedy: false,
            probe_seed: None,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    /// `key=value` pairs of every setting that affects results. The
    /// execution mode is left out since it does not.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("eta_hebbian", format!("{:e}", self.eta_hebbian)),
            ("eta_probe", format!("{:e}", self.eta_probe)),
            ("probe_l2", format!("{:e}", self.probe_l2)),
            ("early_stopping", self.early_stopping.to_string()),
            ("probe_epochs", self.probe_epochs.to_string()),
            ("greedy", self.greedy.to_string()),
            (
                "probe_seed",
                self.probe_seed
                    .map_or("network".to_string(), |s| s.to_string()),
            ),
        ]
    }

    /// Every way this run differs from the reference training protocol.
    /// The probe optimizer entry is always present.
    pub fn deviations(&self) -> Vec<String> {
        let d = TrainConfig::default();
        let mut out = vec![
            "probe_optimizer=plain SGD with L2; momentum 0.9, Nesterov and dropout 0.5 not implemented".to_string(),
        ];
        let mut differs = |key: &str, value: String, default: String| {
            if value != default {
                out.push(format!("{key}={value} (reference {default})"));
            }
        };
        differs("epochs", self.epochs.to_string(), d.epochs.to_string());
        differs(
            "batch_size",
            self.batch_size.to_string(),
            d.batch_size.to_string(),
        );
        differs(
            "eta_hebbian",
            format!("{:e}", self.eta_hebbian),
            format!("{:e}", d.eta_hebbian),
        );
        differs(
            "eta_probe",
            format!("{:e}", self.eta_probe),
            format!("{:e}", d.eta_probe),
        );
        differs(
            "probe_l2",
            format!("{:e}", self.probe_l2),
            format!("{:e}", d.probe_l2),
        );
        differs(
            "probe_epochs",
            self.probe_epochs.to_string(),
            d.probe_epochs.to_string(),
        );
        differs(
            "early_stopping",
            self.early_stopping.to_string(),
            d.early_stopping.to_string(),
        );
        differs("greedy", self.greedy.to_string(), d.greedy.to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.eta_hebbian, self.eta_probe];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument(
                "learning rates must be positive".into(),
            ));
        }
        if !(self.probe_l2 >= 0.0 && self.probe_l2.is_finite()) {
            return Err(Error::InvalidArgument(
                "probe L2 must be nonnegative".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.probe_epochs == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch size and probe epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Metrics recorded after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean squared representation error per Hebbian layer over the
    /// epoch's patches, for the layers trained in this epoch.
    pub repr_error: Vec<Option<f64>>,
    pub val_accuracy: f64,
    /// Mean probe loss over the epoch's mini-batches.
    pub probe_loss: f64,
}

/// Outcome of a training or probing run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub layer_names: Vec<String>,
    /// Hebbian layers that were updated.
    pub trained_layers: Vec<usize>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose state was kept.
    pub chosen_epoch: usize,
    /// First epoch whose validation accuracy is within two points of the
    /// chosen epoch's.
    pub convergence_epoch: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub wall_clock_secs: f64,
    pub config: TrainConfig,
    pub deviations: Vec<String>,
}

impl TrainReport {
    fn finish(
        layer_names: Vec<String>,
        trained_layers: Vec<usize>,
        epochs: Vec<EpochRecord>,
        candidates: std::ops::Range<usize>,
        cfg: &TrainConfig,
    ) -> (TrainReport, usize) {
        let chosen = if cfg.early_stopping {
            let mut best = candidates.start;
            for i in candidates.clone() {
                if epochs[i].val_accuracy > epochs[best].val_accuracy {
                    best = i;
                }
            }
            best
        } else {
            candidates.end - 1
        };
        let target = epochs[chosen].val_accuracy - 0.02;
        let convergence = candidates
            .clone()
            .find(|&i| epochs[i].val_accuracy >= target - 1e-12)
            .unwrap_or(chosen);
        let report = TrainReport {
            layer_names,
            trained_layers,
            val_accuracy: epochs[chosen].val_accuracy,
            chosen_epoch: chosen + 1,
            convergence_epoch: convergence + 1 - candidates.start,
            epochs,
            test_accuracy: f64::NAN,
            wall_clock_secs: 0.0,
            config: cfg.clone(),
            deviations: cfg.deviations(),
        };
        (report, chosen)
    }
}

/// Training provenance stored with a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub epochs_completed: usize,
    pub chosen_epoch: usize,
}

/// Instantiated layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Hebbian {
        layer: ConvHebbianLayer,
        geometry: ConvGeometry,
        dense: bool,
    },
    Relu,
    MaxPool {
        window: (usize, usize),
        stride: (usize, usize),
        input: [usize; 3],
    },
    Flatten,
}

/// An instantiated [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    stages: Vec<Stage>,
    /// Shape entering each stage, plus the final output shape.
    shapes: Vec<[usize; 3]>,
    hebbian: Vec<usize>,
    pub probe: LinearProbe,
    pub provenance: Provenance,
}

fn layer_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const PROBE_STREAM: u64 = 0;
const SHUFFLE_STREAM_BASE: u64 = 1 << 32;
const PROBE_FIT_STREAM_BASE: u64 = 1 << 40;

fn init_weights(
    seed: u64,
    hebbian_index: usize,
    neurons: usize,
    dim: usize,
) -> Result<WeightMatrix> {
    WeightMatrix::random_uniform(neurons, dim, &mut layer_rng(seed, hebbian_index as u64 + 1))
}

fn init_probe(seed: u64, num_classes: usize, feat_dim: usize, l2: f64) -> Result<LinearProbe> {
    LinearProbe::random(
        num_classes,
        feat_dim,
        l2,
        &mut layer_rng(seed, PROBE_STREAM),
    )
}

/// Instantiates a spec, checking that adjacent shapes compose. Weights are
/// uniform in `±1/sqrt(fan-in)`, drawn from a per-layer stream of the spec
/// seed so any layer can be re-initialized independently.
pub fn build_network(spec: &NetworkSpec) -> Result<Network> {
    let build_err = |layer: usize, reason: String| Error::Build {
        layer,
        descriptor: spec.layers.get(layer).map_or("-".into(), |l| l.to_string()),
        reason,
    };
    let probes = spec
        .layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::Probe { .. }))
        .count();
    if probes != 1 || !matches!(spec.layers.last(), Some(LayerSpec::Probe { .. })) {
        return Err(build_err(
            spec.layers.len().saturating_sub(1),
            format!("a network needs exactly one probe, as its last layer (found {probes})"),
        ));
    }
    if spec.input.contains(&0) {
        return Err(build_err(0, format!("empty input shape {:?}", spec.input)));
    }
    let mut shape = spec.input;
    let mut stages = Vec::new();
    let mut shapes = vec![shape];
    let mut hebbian = Vec::new();
    let mut probe = None;
    for (i, l) in spec.layers.iter().enumerate() {
        let stage = match *l {
            LayerSpec::ConvHebbian {
                filters,
                kernel,
                stride,
                padding,
                rule,
            } => {
                let conv = ConvSpec {
                    kernel,
                    stride,
                    padding,
                };
                let g = conv
                    .geometry(shape)
                    .map_err(|e| build_err(i, e.to_string()))?;
                if filters == 0 {
                    return Err(build_err(i, "zero filters".into()));
                }
                let k = hebbian.len();
                let w = init_weights(spec.seed, k, filters, g.patch_len())?;
                let layer =
                    ConvHebbianLayer::new(format!("conv{}", k + 1), w, shape[0], conv, rule)?;
                shape = [filters, g.out_height, g.out_width];
                hebbian.push(stages.len());
                Stage::Hebbian {
                    layer,
                    geometry: g,
                    dense: false,
                }
            }
            LayerSpec::DenseHebbian { neurons, rule } => {
                if shape[1] != 1 || shape[2] != 1 {
                    return Err(build_err(
                        i,
                        format!("dense layer needs a flattened input, got {shape:?}"),
                    ));
                }
                if neurons == 0 {
                    return Err(build_err(i, "zero neurons".into()));
                }
                let conv = ConvSpec {
                    kernel: (1, 1),
                    stride: (1, 1),
                    padding: (0, 0),
                };
                let g = conv.geometry(shape)?;
                let k = hebbian.len();
                let w = init_weights(spec.seed, k, neurons, shape[0])?;
                let layer =
                    ConvHebbianLayer::new(format!("dense{}", k + 1), w, shape[0], conv, rule)?;
                shape = [neurons, 1, 1];
                hebbian.push(stages.len());
                Stage::Hebbian {
                    layer,
                    geometry: g,
                    dense: true,
                }
            }
            LayerSpec::Relu => Stage::Relu,
            LayerSpec::MaxPool { window, stride } => {
                check_pool(shape[1], shape[2], window, stride)
                    .map_err(|e| build_err(i, e.to_string()))?;
                let input = shape;
                shape = [
                    shape[0],
                    pool_extent(shape[1], window.0, stride.0),
                    pool_extent(shape[2], window.1, stride.1),
                ];
                Stage::MaxPool {
                    window,
                    stride,
                    input,
                }
            }
            LayerSpec::Flatten => {
                shape = [shape.iter().product(), 1, 1];
                Stage::Flatten
            }
            LayerSpec::Probe { num_classes } => {
                if num_classes == 0 {
                    return Err(build_err(i, "probe needs at least one class".into()));
                }
                let feat: usize = shape.iter().product();
                probe = Some(init_probe(
                    spec.seed,
                    num_classes,
                    feat,
                    TrainConfig::default().probe_l2,
                )?);
                continue;
            }
        };
        stages.push(stage);
        shapes.push(shape);
    }
    Ok(Network {
        spec: spec.clone(),
        stages,
        shapes,
        hebbian,
        probe: probe.expect("probe presence checked above"),
        provenance: Provenance::default(),
    })
}

/// Result of a traced forward pass over a group of images.
struct GroupTrace {
    sums: Vec<Option<UpdateSum>>,
    terminals: Vec<Vec<f64>>,
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Replaces the spec seed. Weights are untouched; the new seed applies
    /// to later re-initialization.
    pub fn set_seed(&mut self, seed: u64) {
        self.spec.seed = seed;
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn hebbian_count(&self) -> usize {
        self.hebbian.len()
    }

    pub fn hebbian_layer(&self, k: usize) -> &ConvHebbianLayer {
        match &self.stages[self.hebbian[k]] {
            Stage::Hebbian { layer, .. } => layer,
            _ => unreachable!("hebbian index points at a Hebbian stage"),
        }
    }

    pub fn hebbian_layer_mut(&mut self, k: usize) -> &mut ConvHebbianLayer {
        match &mut self.stages[self.hebbian[k]] {
            Stage::Hebbian { layer, .. } => layer,
            _ => unreachable!("hebbian index points at a Hebbian stage"),
        }
    }

    /// Whether Hebbian layer `k` is convolutional (as opposed to dense).
    pub fn is_conv(&self, k: usize) -> bool {
        matches!(
            self.stages[self.hebbian[k]],
            Stage::Hebbian { dense: false, .. }
        )
    }

    pub fn layer_names(&self) -> Vec<String> {
        (0..self.hebbian_count())
            .map(|k| self.hebbian_layer(k).name.clone())
            .collect()
    }

    /// `(descriptor, output shape)` for every stage, flattened outputs shown
    /// as one axis.
    pub fn shape_plan(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut li = 0;
        let mut flat = false;
        for (i, s) in self.stages.iter().enumerate() {
            while matches!(self.spec.layers[li], LayerSpec::Probe { .. }) {
                li += 1;
            }
            let shape = self.shapes[i + 1];
            flat |= matches!(s, Stage::Flatten);
            let shown = if flat { vec![shape[0]] } else { shape.to_vec() };
            out.push((self.spec.layers[li].to_string(), shown));
            li += 1;
        }
        out.push((
            format!("probe {}", self.probe.num_classes()),
            vec![self.probe.num_classes()],
        ));
        out
    }

    /// Stage index where tap `k` ends (exclusive).
    fn tap_end(&self, k: usize) -> Result<usize> {
        let l = self.hebbian_count();
        if k > l {
            return Err(Error::InvalidIndex {
                index: k,
                valid: format!("0..={l}"),
            });
        }
        Ok(match k {
            0 => 0,
            k if k == l => self.stages.len(),
            k => self.hebbian[k],
        })
    }

    /// Flattened feature length at tap `k`.
    pub fn feature_dim(&self, k: usize) -> Result<usize> {
        Ok(self.shapes[self.tap_end(k)?].iter().product())
    }

    fn check_input(&self, set: &LabeledSet) -> Result<()> {
        if set.shape != self.spec.input {
            return Err(Error::dim(format!(
                "network expects inputs of shape {:?}, data has {:?}",
                self.spec.input, set.shape
            )));
        }
        Ok(())
    }

    fn run_stage(&self, i: usize, x: Vec<f64>) -> Vec<f64> {
        match &self.stages[i] {
            Stage::Hebbian {
                layer, geometry, ..
            } => layer.forward_raw(geometry, &x),
            Stage::Relu => x.into_iter().map(|v| v.max(0.0)).collect(),
            Stage::MaxPool {
                window,
                stride,
                input,
            } => max_pool_raw(&x, input[0], input[1], input[2], *window, *stride),
            Stage::Flatten => x,
        }
    }

    fn run_stages(&self, from: usize, to: usize, mut x: Vec<f64>) -> Vec<f64> {
        for i in from..to {
            x = self.run_stage(i, x);
        }
        x
    }

    /// Forward passes from stage `from`, accumulating the Hebbian update of
    /// every layer flagged in `trainable` from its own input.
    fn trace_group<'a>(
        &self,
        from: usize,
        images: impl Iterator<Item = &'a [f64]>,
        trainable: &[bool],
    ) -> GroupTrace {
        let mut sums: Vec<Option<UpdateSum>> = (0..self.hebbian_count())
            .map(|k| trainable[k].then(|| self.hebbian_layer(k).empty_sum()))
            .collect();
        let mut terminals = Vec::new();
        for image in images {
            let mut x = image.to_vec();
            for i in from..self.stages.len() {
                if let Stage::Hebbian {
                    layer, geometry, ..
                } = &self.stages[i]
                {
                    let k = self.hebbian_index(i);
                    if let Some(acc) = sums[k].as_mut() {
                        layer.accumulate(geometry, &x, acc);
                    }
                }
                x = self.run_stage(i, x);
            }
            terminals.push(x);
        }
        GroupTrace { sums, terminals }
    }

    /// Traces a batch in fixed groups and merges the group sums in order.
    fn trace_batch(
        &self,
        from: usize,
        set: &LabeledSet,
        idx: &[usize],
        trainable: &[bool],
        exec: Exec,
    ) -> GroupTrace {
        let groups: Vec<&[usize]> = idx.chunks(GROUP).collect();
        let traces = exec.map(groups.len(), |g| {
            self.trace_group(from, groups[g].iter().map(|&i| set.image(i)), trainable)
        });
        let mut sums: Vec<Option<UpdateSum>> = (0..self.hebbian_count())
            .map(|k| trainable[k].then(|| self.hebbian_layer(k).empty_sum()))
            .collect();
        let mut terminals = Vec::with_capacity(idx.len());
        for t in traces {
            for (acc, part) in sums.iter_mut().zip(&t.sums) {
                if let (Some(acc), Some(part)) = (acc.as_mut(), part) {
                    acc.merge(part);
                }
            }
            terminals.extend(t.terminals);
        }
        GroupTrace { sums, terminals }
    }

    fn hebbian_index(&self, stage: usize) -> usize {
        self.hebbian
            .iter()
            .position(|&s| s == stage)
            .expect("hebbian stage")
    }

    /// Features at tap `layer` for every image of `set`, `[N, feat_dim]`.
    pub fn extract_features(&self, set: &LabeledSet, layer: usize) -> Result<Tensor> {
        self.extract_features_with(set, layer, Exec::default())
    }

    pub fn extract_features_with(
        &self,
        set: &LabeledSet,
        layer: usize,
        exec: Exec,
    ) -> Result<Tensor> {
        self.check_input(set)?;
        let end = self.tap_end(layer)?;
        let dim = self.feature_dim(layer)?;
        let rows = exec.map(set.len(), |i| {
            self.run_stages(0, end, set.image(i).to_vec())
        });
        let mut data = Vec::with_capacity(set.len() * dim);
        rows.into_iter().for_each(|r| data.extend(r));
        Tensor::new(vec![set.len(), dim], data)
    }

    /// Raw (uncentered) input patches of Hebbian layer `k`, in image order,
    /// at most `max_patches` rows.
    pub fn layer_patches(&self, set: &LabeledSet, k: usize, max_patches: usize) -> Result<Tensor> {
        self.check_input(set)?;
        if k >= self.hebbian_count() {
            return Err(Error::InvalidIndex {
                index: k,
                valid: format!("0..{}", self.hebbian_count()),
            });
        }
        let g = self.stage_geometry(k);
        let per_image = g.positions();
        let images = max_patches.div_ceil(per_image).min(set.len());
        let mut data = Vec::new();
        for i in 0..images {
            data.extend(g.im2col(&self.run_stages(0, self.hebbian[k], set.image(i).to_vec())));
        }
        data.truncate(max_patches.saturating_mul(g.patch_len()));
        let rows = data.len() / g.patch_len();
        Tensor::new(vec![rows, g.patch_len()], data)
    }

    /// Terminal features of a `[B, C, H, W]` batch.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let (b, per) = self.batch_shape(batch)?;
        let dim: usize = self.shapes.last().expect("shapes").iter().product();
        let rows = Exec::default().map(b, |i| {
            self.run_stages(
                0,
                self.stages.len(),
                batch.data()[i * per..(i + 1) * per].to_vec(),
            )
        });
        Tensor::new(vec![b, dim], rows.concat())
    }

    fn batch_shape(&self, batch: &Tensor) -> Result<(usize, usize)> {
        match batch.shape() {
            [b, c, h, w] if [*c, *h, *w] == self.spec.input => Ok((*b, c * h * w)),
            s => Err(Error::dim(format!(
                "expected a [B, {}, {}, {}] batch, got {s:?}",
                self.spec.input[0], self.spec.input[1], self.spec.input[2]
            ))),
        }
    }

    /// Updates every Hebbian layer would apply for this batch, each computed
    /// from the layer's own input under the current weights.
    pub fn hebbian_deltas(&self, batch: &Tensor, eta: f64) -> Result<Vec<Tensor>> {
        let (b, _) = self.batch_shape(batch)?;
        if b == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let set = LabeledSet::new(self.spec.input, batch.data().to_vec(), vec![0; b])?;
        let idx: Vec<usize> = (0..b).collect();
        let trace = self.trace_batch(
            0,
            &set,
            &idx,
            &vec![true; self.hebbian_count()],
            Exec::default(),
        );
        (0..self.hebbian_count())
            .map(|k| {
                let sum = trace.sums[k].as_ref().expect("trainable");
                self.hebbian_layer(k)
                    .reduce_updates(sum, self.stage_geometry(k).positions(), eta)
            })
            .collect()
    }

    fn stage_geometry(&self, k: usize) -> ConvGeometry {
        match &self.stages[self.hebbian[k]] {
            Stage::Hebbian { geometry, .. } => *geometry,
            _ => unreachable!("hebbian index points at a Hebbian stage"),
        }
    }

    /// Re-draws the weights of Hebbian layers `from..` and of the probe from
    /// the spec seed, clearing their centering statistics.
    fn reinitialize_from(&mut self, from: usize) -> Result<()> {
        let seed = self.spec.seed;
        for k in from..self.hebbian_count() {
            let layer = self.hebbian_layer_mut(k);
            let (n, d) = (layer.weights.neurons(), layer.weights.dim());
            layer.weights = init_weights(seed, k, n, d)?;
            layer.centering = CenteringStats::new(d);
        }
        self.probe = init_probe(
            seed,
            self.probe.num_classes(),
            self.probe.feat_dim(),
            self.probe.l2,
        )?;
        Ok(())
    }
}

/// Images of a partition, already pushed through a frozen prefix of the
/// network so training can start at `stage`.
struct StagedSet<'a> {
    set: Cow<'a, LabeledSet>,
    stage: usize,
}

impl Network {
    fn staged<'a>(&self, set: &'a LabeledSet, stage: usize, exec: Exec) -> Result<StagedSet<'a>> {
        self.check_input(set)?;
        if stage == 0 {
            return Ok(StagedSet {
                set: Cow::Borrowed(set),
                stage,
            });
        }
        let rows = exec.map(set.len(), |i| {
            self.run_stages(0, stage, set.image(i).to_vec())
        });
        let shape = self.shapes[stage];
        Ok(StagedSet {
            set: Cow::Owned(LabeledSet::new(shape, rows.concat(), set.labels.clone())?),
            stage,
        })
    }

    /// Terminal features for a staged partition.
    fn terminal_features(&self, s: &StagedSet<'_>, exec: Exec) -> Result<Tensor> {
        let dim: usize = self.shapes.last().expect("shapes").iter().product();
        let rows = exec.map(s.set.len(), |i| {
            self.run_stages(s.stage, self.stages.len(), s.set.image(i).to_vec())
        });
        Tensor::new(vec![s.set.len(), dim], rows.concat())
    }

    fn probe_accuracy(&self, s: &StagedSet<'_>, exec: Exec) -> Result<f64> {
        let feats = self.terminal_features(s, exec)?;
        Ok(count_correct(&self.probe, &feats, &s.set.labels)? as f64 / s.set.len() as f64)
    }

    /// One preliminary pass estimating the input mean of every trainable
    /// layer that has no centering statistics yet.
    fn centering_prepass(&mut self, train: &StagedSet<'_>, trainable: &[bool], exec: Exec) {
        let need: Vec<bool> = (0..self.hebbian_count())
            .map(|k| {
                let layer = self.hebbian_layer(k);
                trainable[k] && layer.rule.centers_input() && layer.centering.count() == 0
            })
            .collect();
        let Some(last) = (0..self.hebbian_count()).rev().find(|&k| need[k]) else {
            return;
        };
        let last_stage = self.hebbian[last];
        const CHUNK: usize = 256;
        let n = train.set.len();
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let sums = exec.map(end - start, |j| {
                let mut x = train.set.image(start + j).to_vec();
                let mut out: Vec<Option<Vec<f64>>> = vec![None; self.hebbian_count()];
                for i in train.stage..=last_stage {
                    if let Stage::Hebbian { geometry, .. } = &self.stages[i] {
                        let k = self.hebbian_index(i);
                        if need[k] {
                            out[k] = Some(column_sum(&geometry.im2col(&x), geometry.patch_len()));
                        }
                    }
                    if i < last_stage {
                        x = self.run_stage(i, x);
                    }
                }
                out
            });
            for k in (0..self.hebbian_count()).filter(|&k| need[k]) {
                let g = self.stage_geometry(k);
                let mut total = vec![0.0; g.patch_len()];
                for s in &sums {
                    let s = s[k].as_ref().expect("needed");
                    total.iter_mut().zip(s).for_each(|(t, v)| *t += v);
                }
                let count = ((end - start) * g.positions()) as u64;
                self.hebbian_layer_mut(k)
                    .centering
                    .absorb_sum(&total, count);
            }
        }
    }
}

/// Trains the Hebbian layers `from..` (and the probe) with the others frozen.
fn train_from(
    net: &Network,
    data: &DatasetSplit,
    cfg: &TrainConfig,
    from: usize,
) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    if net.hebbian_count() == 0 {
        return Err(Error::InvalidArgument(
            "network has no Hebbian layer to train".into(),
        ));
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation splits must be nonempty".into(),
        ));
    }
    let started = Instant::now();
    let exec = cfg.exec;
    let mut net = net.clone();
    let l = net.hebbian_count();
    let phases: Vec<Vec<usize>> = if cfg.greedy {
        (from..l).map(|k| vec![k]).collect()
    } else {
        vec![(from..l).collect()]
    };
    let mut records = Vec::new();
    let mut snapshots: Vec<Network> = Vec::new();
    let mut last_phase_start = 0;
    for phase in &phases {
        let trainable: Vec<bool> = (0..l).map(|k| phase.contains(&k)).collect();
        let stage = net.hebbian[phase[0]];
        let train = net.staged(&data.train, stage, exec)?;
        let val = net.staged(&data.val, stage, exec)?;
        net.centering_prepass(&train, &trainable, exec);
        last_phase_start = records.len();
        for epoch in 0..cfg.epochs {
            let global_epoch = records.len();
            let mut order: Vec<usize> = (0..train.set.len()).collect();
            order.shuffle(&mut layer_rng(
                net.spec.seed,
                SHUFFLE_STREAM_BASE + global_epoch as u64,
            ));
            let eta_probe = probe::probe_learning_rate(cfg.eta_probe, epoch, cfg.epochs);
            let mut pending: Vec<_> = (0..l)
                .map(|k| net.hebbian_layer(k).centering.clone())
                .collect();
            let mut err_sum = vec![0.0; l];
            let mut err_count = vec![0u64; l];
            let mut loss_sum = 0.0;
            let mut batches = 0;
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let trace = net.trace_batch(stage, &train.set, chunk, &trainable, exec);
                let mut deltas = Vec::with_capacity(phase.len());
                for &k in phase {
                    let g = net.stage_geometry(k);
                    let sum = trace.sums[k].as_ref().expect("trainable");
                    let delta = net
                        .hebbian_layer(k)
                        .reduce_updates(sum, g.positions(), cfg.eta_hebbian)
                        .map_err(|e| e.at(global_epoch + 1, Some(b + 1)))?;
                    err_sum[k] += sum.sq_error;
                    let count = (sum.images * g.positions()) as u64;
                    err_count[k] += count;
                    pending[k].absorb_sum(&sum.patch_sum, count);
                    deltas.push((k, delta));
                }

                let dim = net.probe.feat_dim();
                let feats = Tensor::new(vec![chunk.len(), dim], trace.terminals.concat()).map_err(
                    |_| Error::Divergence {
                        layer: "features".into(),
                        epoch: Some(global_epoch + 1),
                        batch: Some(b + 1),
                    },
                )?;
                let labels: Vec<usize> = chunk.iter().map(|&i| train.set.labels[i]).collect();
                let g = probe_gradient(&net.probe, &feats, &labels)?;
                loss_sum += g.loss;
                batches += 1;
                let weights = net.probe.weights.sub(&g.weights.scale(eta_probe))?;
                let bias = net.probe.bias.sub(&g.bias.scale(eta_probe))?;
                if !weights.is_finite() || !bias.is_finite() {
                    return Err(Error::Divergence {
                        layer: "probe".into(),
                        epoch: Some(global_epoch + 1),
                        batch: Some(b + 1),
                    });
                }
                net.probe.weights = weights;
                net.probe.bias = bias;

                for (k, delta) in deltas {
                    let layer = net.hebbian_layer_mut(k);
                    layer.weights = layer.weights.apply(&delta).map_err(|_| Error::Divergence {
                        layer: layer.name.clone(),
                        epoch: Some(global_epoch + 1),
                        batch: Some(b + 1),
                    })?;
                }
            }
            for &k in phase {
                net.hebbian_layer_mut(k).centering = pending[k].clone();
            }
            let val_accuracy = net.probe_accuracy(&val, exec)?;
            records.push(EpochRecord {
                epoch: global_epoch + 1,
                repr_error: (0..l)
                    .map(|k| (err_count[k] > 0).then(|| err_sum[k] / err_count[k] as f64))
                    .collect(),
                val_accuracy,
                probe_loss: loss_sum / batches as f64,
            });
            net.provenance.epochs_completed = global_epoch + 1;
            snapshots.push(net.clone());
        }
    }
    let trained: Vec<usize> = (from..l).collect();
    let candidates = last_phase_start..records.len();
    let (mut report, chosen) =
        TrainReport::finish(net.layer_names(), trained, records, candidates, cfg);
    let mut best = snapshots.swap_remove(chosen);
    best.provenance = Provenance {
        epochs_completed: report.epochs.len(),
        chosen_epoch: report.chosen_epoch,
    };
    report.test_accuracy = best.test_accuracy(&data.test, exec)?;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((best, report))
}

impl Network {
    /// Accuracy of the network's own probe on a partition.
    pub fn test_accuracy(&self, set: &LabeledSet, exec: Exec) -> Result<f64> {
        if set.is_empty() {
            return Ok(f64::NAN);
        }
        let staged = self.staged(set, 0, exec)?;
        self.probe_accuracy(&staged, exec)
    }
}

/// Unsupervised training of all Hebbian layers plus the terminal probe.
/// Each mini-batch is pushed through the network once; every Hebbian layer
/// computes its update from its own input under the pre-update weights,
/// the probe takes an SGD step on the terminal features, and then all
/// updates are applied. Epoch 1 is preceded by a pass that estimates each
/// layer's input mean; afterwards the mean is refreshed at epoch
/// boundaries. With early stopping the state of the epoch with the best
/// validation accuracy is returned.
pub fn train_hebbian(
    net: &Network,
    data: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    train_from(net, data, cfg, 0)
}

/// Keeps Hebbian layers `0..from_layer` frozen, re-initializes layers
/// `from_layer..` and the probe from the spec seed, and trains them.
/// `from_layer == 0` is identical to training from scratch.
pub fn retrain_upper_layers(
    net: &Network,
    from_layer: usize,
    data: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    if from_layer >= net.hebbian_count() {
        return Err(Error::InvalidIndex {
            index: from_layer,
            valid: format!("0..{}", net.hebbian_count()),
        });
    }
    let mut fresh = net.clone();
    fresh.reinitialize_from(from_layer)?;
    fresh.provenance = Provenance::default();
    train_from(&fresh, data, cfg, from_layer)
}

/// Trains a fresh linear probe on the frozen features at tap `layer`, with
/// early stopping on validation accuracy.
pub fn train_probe_on_layer(
    net: &Network,
    layer: usize,
    data: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(LinearProbe, TrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let exec = cfg.exec;
    let train = net.extract_features_with(&data.train, layer, exec)?;
    let val = net.extract_features_with(&data.val, layer, exec)?;
    let seed = cfg.probe_seed.unwrap_or(net.spec.seed);
    let mut rng = layer_rng(seed, PROBE_FIT_STREAM_BASE + layer as u64);
    let init = LinearProbe::random(data.num_classes, train.shape()[1], cfg.probe_l2, &mut rng)?;
    let fit = probe::fit_probe(
        init,
        (&train, &data.train.labels),
        (&val, &data.val.labels),
        ProbeTraining {
            epochs: cfg.probe_epochs,
            batch_size: cfg.batch_size,
            eta: cfg.eta_probe,
        },
        &mut rng,
    )?;
    drop(train);
    let mut correct = 0;
    const CHUNK: usize = 1000;
    for start in (0..data.test.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.test.len());
        let idx: Vec<usize> = (start..end).collect();
        let part = LabeledSet::new(
            data.test.shape,
            data.test.batch(&idx).into_data(),
            data.test.labels[start..end].to_vec(),
        )?;
        let feats = net.extract_features_with(&part, layer, exec)?;
        correct += count_correct(&fit.probe, &feats, &part.labels)?;
    }
    let records: Vec<EpochRecord> = fit
        .val_accuracy
        .iter()
        .zip(&fit.train_loss)
        .enumerate()
        .map(|(e, (&acc, &loss))| EpochRecord {
            epoch: e + 1,
            repr_error: Vec::new(),
            val_accuracy: acc,
            probe_loss: loss,
        })
        .collect();
    let mut probe_cfg = cfg.clone();
    probe_cfg.epochs = cfg.probe_epochs;
    let n = records.len();
    let (mut report, _) = TrainReport::finish(
        vec![if layer == 0 {
            "input".into()
        } else {
            net.layer_names()[layer - 1].clone()
        }],
        Vec::new(),
        records,
        0..n,
        &probe_cfg,
    );
    // fit_probe always keeps the best-validation state
    report.chosen_epoch = fit.chosen_epoch;
    report.val_accuracy = fit.val_accuracy[fit.chosen_epoch - 1];
    report.test_accuracy = if data.test.is_empty() {
        f64::NAN
    } else {
        correct as f64 / data.test.len() as f64
    };
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((fit.probe, report))
}
