use std::path::Path;

use hebbnet::checkpoint::{load_checkpoint, save_checkpoint, write_atomic, Checkpoint};
use hebbnet::conv_hebbian::Rule;
use hebbnet::data::{
    checksum, load_cifar10, load_mnist_idx, synthetic_gaussian_split, synthetic_image_split,
    DatasetSplit, SyntheticGaussian, SyntheticImages,
};
use hebbnet::network::{
    build_network, retrain_upper_layers, train_hebbian, train_probe_on_layer, Network, NetworkSpec,
    TrainConfig, TrainReport,
};
use hebbnet::oracle::{batch_pca, cosine_alignment};
use hebbnet::report::RunReport;
use hebbnet::rules::Nonlinearity;
use hebbnet::Exec;
use thiserror::Error;

use crate::inspect::filter_image;
use crate::{
    DataArgs, DatasetKind, HebbArgs, InspectArgs, OptimArgs, ProbeArgs, RetrainArgs, TrainArgs,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] hebbnet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use hebbnet::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::InvalidIndex { .. } | E::Build { .. } => 2,
                E::Io { .. } | E::Format { .. } | E::Dimension(_) | E::InvalidLabel { .. } => 3,
                E::Divergence { .. } | E::NonFinite(_) => 4,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Patches used for the alignment check of a linear first layer.
const ALIGNMENT_PATCHES: usize = 20_000;

fn load_data(a: &DataArgs) -> Result<DatasetSplit> {
    let dir = || {
        a.data_dir.as_deref().ok_or_else(|| {
            CliError::Usage(
                format!("--data-dir is required for --dataset {:?}", a.dataset).to_lowercase(),
            )
        })
    };
    let pick = |limit: Option<usize>, default: usize| match limit {
        Some(n) if n != usize::MAX => n,
        _ => default,
    };
    Ok(match a.dataset {
        DatasetKind::Cifar10 => load_cifar10(dir()?, a.limit)?,
        DatasetKind::Mnist => load_mnist_idx(dir()?, a.limit)?,
        DatasetKind::Synthetic => {
            let d = SyntheticGaussian::default();
            synthetic_gaussian_split(&SyntheticGaussian {
                train: pick(a.limit.map(|l| l.train), d.train),
                val: pick(a.limit.map(|l| l.val), d.val),
                test: pick(a.limit.map(|l| l.test), d.test),
                ..d
            })?
        }
        DatasetKind::SyntheticImages => {
            let d = SyntheticImages::default();
            synthetic_image_split(&SyntheticImages {
                train: pick(a.limit.map(|l| l.train), d.train),
                val: pick(a.limit.map(|l| l.val), d.val),
                test: pick(a.limit.map(|l| l.test), d.test),
                ..d
            })?
        }
    })
}

fn resolve_spec(name: &str, data: &DatasetSplit, seed: Option<u64>) -> Result<NetworkSpec> {
    let input = data.input_shape();
    let mut spec = match name {
        "reference" => NetworkSpec::reference(input, data.num_classes, 0),
        "reference-dense" => {
            let dim = input.iter().product::<usize>();
            NetworkSpec::reference_dense(input, dim.min(4), data.num_classes, 0)
        }
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read spec {path}: {e}")))?;
            NetworkSpec::parse(&text)?
        }
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn config(hebb: Option<&HebbArgs>, o: &OptimArgs, probe_seed: Option<u64>) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        epochs: hebb.map_or(d.epochs, |h| h.epochs),
        eta_hebbian: hebb.map_or(d.eta_hebbian, |h| h.eta),
        early_stopping: hebb.is_none_or(|h| !h.no_early_stopping),
        greedy: hebb.is_some_and(|h| h.greedy),
        batch_size: o.batch_size,
        eta_probe: o.eta_probe,
        probe_l2: o.probe_l2,
        probe_epochs: o.probe_epochs,
        probe_seed,
        exec: if o.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        },
    }
}

fn config_text(cfg: &TrainConfig) -> String {
    cfg.echo()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

fn emit(report: &RunReport, path: Option<&Path>) -> Result<()> {
    let text = report.render();
    match path {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn add_shapes(report: &mut RunReport, net: &Network) {
    let rows = net
        .shape_plan()
        .into_iter()
        .map(|(desc, shape)| {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            format!("{desc} -> {}", dims.join("x"))
        })
        .collect();
    report.section("shapes", rows);
}

/// Alignment of a linear HPCA first layer with the principal components
/// of its input.
fn add_alignment(report: &mut RunReport, net: &Network, data: &DatasetSplit) -> Result<()> {
    if net.hebbian_count() == 0 || net.hebbian_layer(0).rule != Rule::Hpca(Nonlinearity::Identity) {
        return Ok(());
    }
    let layer = net.hebbian_layer(0);
    let patches = net.layer_patches(&data.train, 0, ALIGNMENT_PATCHES)?;
    let basis = batch_pca(&patches, layer.weights.neurons())?;
    let align = cosine_alignment(&layer.weights, &basis)?;
    report.set_metric("alignment.min", align.min());
    for (i, (a, l)) in align.values.iter().zip(&basis.eigenvalues).enumerate() {
        report.set_metric(format!("alignment.{}", i + 1), *a);
        report.set_metric(format!("eigenvalue.{}", i + 1), *l);
    }
    Ok(())
}

fn summary(command: &str, r: &TrainReport) {
    eprintln!(
        "{command}: chosen epoch {} of {}, val {:.4}, test {:.4}, {:.1}s",
        r.chosen_epoch,
        r.epochs.len(),
        r.val_accuracy,
        r.test_accuracy,
        r.wall_clock_secs
    );
}

pub fn train(a: TrainArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let spec = resolve_spec(&a.spec, &data, a.seed)?;
    let net = build_network(&spec)?;
    let cfg = config(Some(&a.hebb), &a.optim, None);
    let (net, rep) = train_hebbian(&net, &data, &cfg)?;

    let mut report = RunReport::new("train");
    report.add_dataset(&data);
    report.add_spec(&spec);
    add_alignment(&mut report, &net, &data)?;
    report.add_train_report(&rep);
    add_shapes(&mut report, &net);
    save_checkpoint(
        &a.out,
        &Checkpoint {
            network: net,
            config: config_text(&cfg),
        },
    )?;
    emit(&report, a.report.as_deref())?;
    summary("train", &rep);
    Ok(())
}

pub fn probe(a: ProbeArgs) -> Result<()> {
    let bytes = std::fs::read(&a.checkpoint).map_err(|e| hebbnet::Error::Io {
        path: a.checkpoint.clone(),
        source: e,
    })?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let net = ckpt.network;
    let layers: Vec<usize> = match a.layer.as_str() {
        "all" => (1..=net.hebbian_count()).collect(),
        s => vec![s.parse().map_err(|_| {
            CliError::Usage(format!("--layer must be a layer index or `all`, got `{s}`"))
        })?],
    };
    if let Some(&bad) = layers.iter().find(|&&k| k > net.hebbian_count()) {
        return Err(CliError::Usage(format!(
            "layer {bad} out of range (valid: 0..={})",
            net.hebbian_count()
        )));
    }
    let data = load_data(&a.data)?;
    if data.input_shape() != net.spec().input {
        return Err(hebbnet::Error::Dimension(format!(
            "checkpoint expects inputs {:?}, dataset has {:?}",
            net.spec().input,
            data.input_shape()
        ))
        .into());
    }
    let cfg = config(None, &a.optim, a.seed);

    let mut report = RunReport::new("probe");
    report.set("checkpoint.checksum", format!("{:016x}", checksum(&bytes)));
    report.add_dataset(&data);
    report.add_spec(net.spec());
    report.add_config(&cfg);
    let names = net.layer_names();
    let mut table = vec!["layer,name,feat_dim,chosen_epoch,val_accuracy,test_accuracy".to_string()];
    for &k in &layers {
        let (_, rep) = train_probe_on_layer(&net, k, &data, &cfg)?;
        let name = if k == 0 {
            "input"
        } else {
            names[k - 1].as_str()
        };
        table.push(format!(
            "{k},{name},{},{},{},{}",
            net.feature_dim(k)?,
            rep.chosen_epoch,
            rep.val_accuracy,
            rep.test_accuracy
        ));
        report.add_results(&format!("layer.{k}."), &rep);
        report.add_epochs(&format!("epochs.layer{k}"), &rep);
        summary(&format!("probe layer {k} ({name})"), &rep);
    }
    report.section("layers", table);
    emit(&report, a.report.as_deref())
}

pub fn retrain(a: RetrainArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let mut net = ckpt.network;
    if a.from_layer >= net.hebbian_count() {
        return Err(CliError::Usage(format!(
            "--from-layer {} out of range (valid: 0..{})",
            a.from_layer,
            net.hebbian_count()
        )));
    }
    if let Some(seed) = a.seed {
        net.set_seed(seed);
    }
    let data = load_data(&a.data)?;
    let cfg = config(Some(&a.hebb), &a.optim, None);
    let (net, rep) = retrain_upper_layers(&net, a.from_layer, &data, &cfg)?;

    let mut report = RunReport::new("retrain");
    report.set("from_layer", a.from_layer);
    report.add_dataset(&data);
    report.add_spec(net.spec());
    report.add_train_report(&rep);
    save_checkpoint(
        &a.out,
        &Checkpoint {
            network: net,
            config: config_text(&cfg),
        },
    )?;
    emit(&report, a.report.as_deref())?;
    summary("retrain", &rep);
    Ok(())
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let net = load_checkpoint(&a.checkpoint)?.network;
    let count = net.hebbian_count();
    if a.layer == 0 || a.layer > count {
        return Err(CliError::Usage(format!(
            "--layer {} out of range (valid: 1..={count})",
            a.layer
        )));
    }
    let k = a.layer - 1;
    if !net.is_conv(k) {
        return Err(CliError::Usage(format!(
            "layer {} ({}) is not convolutional",
            a.layer,
            net.hebbian_layer(k).name
        )));
    }
    let layer = net.hebbian_layer(k);
    let (kh, kw) = layer.conv.kernel;
    let color = k == 0 && layer.in_channels == 3;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| hebbnet::Error::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    for i in 0..layer.filters() {
        let img = filter_image(layer.weights.row(i), layer.in_channels, kh, kw, color);
        let path = a.out_dir.join(format!("filter_{i:03}.{}", img.extension()));
        write_atomic(&path, &img.encode())?;
    }
    eprintln!(
        "inspect: wrote {} filters to {}",
        layer.filters(),
        a.out_dir.display()
    );
    Ok(())
}
