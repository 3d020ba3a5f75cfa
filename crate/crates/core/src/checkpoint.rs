//! Binary checkpoints.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic "HEBBNET1" | version u32
//! spec text        | config text          (u64 length + UTF-8)
//! seed u64 | epochs_completed u64 | chosen_epoch u64
//! hebbian layer count u32, then per layer:
//!     neurons u32 | dim u32 | weights f64[neurons*dim]
//!     centering count u64 | centering mean f64[dim]
//! probe: classes u32 | feat_dim u32 | l2 f64 | weights f64[..] | bias f64[..]
//! FNV-1a 64 of everything above
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::conv_hebbian::CenteringStats;
use crate::data::{fnv1a, read_file, FNV_OFFSET};
use crate::error::{Error, Result};
use crate::network::{build_network, Network, NetworkSpec, Provenance};
use crate::probe::LinearProbe;
use crate::rules::WeightMatrix;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HEBBNET1";
pub const VERSION: u32 = 1;

/// A network together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    /// `key=value` lines.
    pub config: String,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter()
            .for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
    fn text(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.path, "array length overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn text(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(self.path, "text field is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION as usize);
        w.text(&net.spec().to_text());
        w.text(&self.config);
        w.u64(net.spec().seed);
        w.u64(net.provenance.epochs_completed as u64);
        w.u64(net.provenance.chosen_epoch as u64);
        w.u32(net.hebbian_count());
        for k in 0..net.hebbian_count() {
            let layer = net.hebbian_layer(k);
            w.u32(layer.weights.neurons());
            w.u32(layer.weights.dim());
            w.f64s(layer.weights.tensor().data());
            w.u64(layer.centering.count());
            w.f64s(layer.centering.mean());
        }
        let p = &net.probe;
        w.u32(p.num_classes());
        w.u32(p.feat_dim());
        w.f64s(&[p.l2]);
        w.f64s(p.weights.data());
        w.f64s(p.bias.data());
        let sum = fnv1a(FNV_OFFSET, &w.0);
        w.u64(sum);
        w.0
    }

    /// Decodes a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
        let fail = |reason: String| Error::format(path, reason);
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(fail("not a checkpoint (bad magic)".into()));
        }
        let mut r = Reader {
            bytes,
            pos: 8,
            path,
        };
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(fail(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        if bytes.len() < 20 {
            return Err(fail("truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if fnv1a(FNV_OFFSET, body) != stored {
            return Err(fail("checksum mismatch".into()));
        }
        r.bytes = body;
        let spec = NetworkSpec::parse(&r.text()?).map_err(|e| fail(format!("bad spec: {e}")))?;
        let config = r.text()?;
        let seed = r.u64()?;
        if seed != spec.seed {
            return Err(fail(format!(
                "seed {seed} disagrees with spec seed {}",
                spec.seed
            )));
        }
        let mut net =
            build_network(&spec).map_err(|e| fail(format!("spec does not build: {e}")))?;
        net.provenance = Provenance {
            epochs_completed: r.u64()? as usize,
            chosen_epoch: r.u64()? as usize,
        };
        let layers = r.u32()?;
        if layers != net.hebbian_count() {
            return Err(fail(format!(
                "{layers} layers stored, spec has {}",
                net.hebbian_count()
            )));
        }
        for k in 0..layers {
            let (n, d) = (r.u32()?, r.u32()?);
            let layer = net.hebbian_layer_mut(k);
            if (n, d) != (layer.weights.neurons(), layer.weights.dim()) {
                return Err(fail(format!(
                    "layer {}: stored shape {n}x{d}, spec needs {}x{}",
                    layer.name,
                    layer.weights.neurons(),
                    layer.weights.dim()
                )));
            }
            let weights =
                Tensor::new(vec![n, d], r.f64s(n * d)?).map_err(|e| fail(e.to_string()))?;
            layer.weights = WeightMatrix::new(weights)?;
            let count = r.u64()?;
            layer.centering =
                CenteringStats::from_parts(r.f64s(d)?, count).map_err(|e| fail(e.to_string()))?;
        }
        let (classes, feat) = (r.u32()?, r.u32()?);
        if (classes, feat) != (net.probe.num_classes(), net.probe.feat_dim()) {
            return Err(fail(format!(
                "probe shape {classes}x{feat} does not match the spec"
            )));
        }
        let l2 = r.f64s(1)?[0];
        let weights = Tensor::new(vec![classes, feat], r.f64s(classes * feat)?)
            .map_err(|e| fail(e.to_string()))?;
        let bias = Tensor::new(vec![classes], r.f64s(classes)?).map_err(|e| fail(e.to_string()))?;
        net.probe = LinearProbe::new(weights, bias, l2).map_err(|e| fail(e.to_string()))?;
        if r.pos != body.len() {
            return Err(fail(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint {
            network: net,
            config,
        })
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes to a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_file(path)?, path)
}
