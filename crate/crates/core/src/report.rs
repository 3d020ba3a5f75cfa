//! Run reports: `key=value` lines followed by `[section]` blocks.
//!
//! Every report carries the configuration echo and a `[deviations]`
//! section, which may be empty. Wall-clock time is not written, so reruns
//! with the same seed produce identical bytes.

use std::collections::BTreeMap;

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::network::{NetworkSpec, TrainConfig, TrainReport};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub entries: Vec<(String, String)>,
    pub sections: Vec<(String, Vec<String>)>,
}

fn metric(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        let mut r = RunReport::default();
        r.set("command", command);
        r
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn set_metric(&mut self, key: impl Into<String>, value: f64) {
        self.entries.push((key.into(), metric(value)));
    }

    pub fn section(&mut self, name: impl Into<String>, lines: Vec<String>) {
        self.sections.push((name.into(), lines));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn section_lines(&self, name: &str) -> Option<&[String]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, l)| l.as_slice())
    }

    pub fn add_dataset(&mut self, d: &DatasetSplit) {
        self.set("dataset", &d.name);
        self.set("dataset.checksum", format!("{:016x}", d.checksum));
        self.set("dataset.train", d.train.len());
        self.set("dataset.val", d.val.len());
        self.set("dataset.test", d.test.len());
        self.set("dataset.classes", d.num_classes);
        self.set("preprocessing", &d.preprocessing);
    }

    pub fn add_spec(&mut self, spec: &NetworkSpec) {
        self.set("seed", spec.seed);
        self.section("spec", spec.to_text().lines().map(str::to_string).collect());
    }

    /// Configuration echo and the deviations section.
    pub fn add_config(&mut self, cfg: &TrainConfig) {
        for (k, v) in cfg.echo() {
            self.set(format!("config.{k}"), v);
        }
        let deviations = cfg.deviations();
        self.set("deviations", deviations.len());
        self.section("deviations", deviations);
    }

    /// Outcome keys, each prefixed with `prefix`.
    pub fn add_results(&mut self, prefix: &str, r: &TrainReport) {
        self.set(format!("{prefix}chosen_epoch"), r.chosen_epoch);
        self.set(format!("{prefix}convergence_epoch"), r.convergence_epoch);
        self.set_metric(format!("{prefix}val_accuracy"), r.val_accuracy);
        self.set_metric(format!("{prefix}test_accuracy"), r.test_accuracy);
    }

    /// Per-epoch CSV.
    pub fn add_epochs(&mut self, name: &str, r: &TrainReport) {
        let width = r
            .epochs
            .iter()
            .map(|e| e.repr_error.len())
            .max()
            .unwrap_or(0);
        let mut header = vec![
            "epoch".to_string(),
            "val_accuracy".into(),
            "probe_loss".into(),
        ];
        header.extend((0..width).map(|k| {
            let name = r
                .layer_names
                .get(k)
                .cloned()
                .unwrap_or_else(|| k.to_string());
            format!("repr_error.{name}")
        }));
        let mut rows = vec![header.join(",")];
        for e in &r.epochs {
            let mut row = vec![
                e.epoch.to_string(),
                metric(e.val_accuracy),
                metric(e.probe_loss),
            ];
            row.extend((0..width).map(|k| {
                e.repr_error
                    .get(k)
                    .copied()
                    .flatten()
                    .map_or(String::new(), metric)
            }));
            rows.push(row.join(","));
        }
        self.section(name, rows);
    }

    /// Results, trained layers, configuration echo, deviations and the
    /// per-epoch CSV of a training run.
    pub fn add_train_report(&mut self, r: &TrainReport) {
        self.add_results("", r);
        let trained: Vec<String> = r
            .trained_layers
            .iter()
            .map(|&k| {
                r.layer_names
                    .get(k)
                    .cloned()
                    .unwrap_or_else(|| k.to_string())
            })
            .collect();
        self.set("trained_layers", trained.join(","));
        self.add_config(&r.config);
        self.add_epochs("epochs", r);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(&format!("{k}={}\n", v.replace('\n', " ")));
        }
        for (name, lines) in &self.sections {
            s.push_str(&format!("\n[{name}]\n"));
            for l in lines {
                s.push_str(l);
                s.push('\n');
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<RunReport> {
        let mut r = RunReport::default();
        let mut current: Option<(String, Vec<String>)> = None;
        for line in text.lines() {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if let Some(done) = current.take() {
                    r.sections.push(done);
                }
                current = Some((name.to_string(), Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                if !line.is_empty() {
                    lines.push(line.to_string());
                }
            } else if let Some((k, v)) = line.split_once('=') {
                r.entries.push((k.to_string(), v.to_string()));
            } else if !line.is_empty() {
                return Err(Error::InvalidArgument(format!("bad report line `{line}`")));
            }
        }
        if let Some(done) = current {
            r.sections.push(done);
        }
        Ok(r)
    }

    /// Values as a map, for lookups in tests.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.entries.iter().cloned().collect()
    }
}
