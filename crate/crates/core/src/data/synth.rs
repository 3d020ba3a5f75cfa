//! Seeded synthetic data for oracle-backed tests and smoke runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{fnv1a, DatasetSplit, LabeledSet, Normalization, FNV_OFFSET};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Covariance given by its eigenvalues, optionally rotated by a random
/// orthogonal matrix drawn from `rotation_seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub eigenvalues: Vec<f64>,
    pub rotation_seed: Option<u64>,
}

impl CovarianceSpec {
    /// Row-major orthonormal eigenvectors, one per row.
    pub fn eigenvectors(&self) -> Vec<f64> {
        let d = self.eigenvalues.len();
        match self.rotation_seed {
            Some(seed) => random_rotation(d, seed),
            None => {
                let mut eye = vec![0.0; d * d];
                (0..d).for_each(|i| eye[i * d + i] = 1.0);
                eye
            }
        }
    }
}

/// Random orthogonal `dim × dim` matrix (rows orthonormal), from
/// Gram-Schmidt on a Gaussian matrix.
pub fn random_rotation(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut m: Vec<f64> = (0..dim * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut ok = true;
        for i in 0..dim {
            for j in 0..i {
                let proj: f64 = (0..dim).map(|k| m[i * dim + k] * m[j * dim + k]).sum();
                for k in 0..dim {
                    m[i * dim + k] -= proj * m[j * dim + k];
                }
            }
            let norm = (0..dim).map(|k| m[i * dim + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            (0..dim).for_each(|k| m[i * dim + k] /= norm);
        }
        if ok {
            return m;
        }
    }
}

/// `n` i.i.d. zero-mean Gaussian samples with the given covariance.
pub fn synth_gaussian(dim: usize, n: usize, cov: &CovarianceSpec, seed: u64) -> Result<Tensor> {
    if cov.eigenvalues.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "{} eigenvalues for dimension {dim}",
            cov.eigenvalues.len()
        )));
    }
    if cov
        .eigenvalues
        .iter()
        .any(|&l| !(l >= 0.0 && l.is_finite()))
    {
        return Err(Error::InvalidArgument(
            "covariance eigenvalues must be finite and nonnegative".into(),
        ));
    }
    let vecs = cov.eigenvectors();
    let scale: Vec<f64> = cov.eigenvalues.iter().map(|l| l.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; n * dim];
    for row in data.chunks_exact_mut(dim) {
        for (i, s) in scale.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let a = s * z;
            row.iter_mut()
                .zip(&vecs[i * dim..(i + 1) * dim])
                .for_each(|(x, v)| *x += a * v);
        }
    }
    Tensor::new(vec![n, dim], data)
}

/// Isotropic Gaussian mixture with uniformly chosen components.
pub fn synth_mixture(
    centroids: &Tensor,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<(Tensor, Vec<usize>)> {
    let (k, dim) = centroids.dims2()?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be nonnegative, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..k);
        labels.push(c);
        for &m in centroids.row(c) {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(m + sigma * z);
        }
    }
    Ok((Tensor::new(vec![n, dim], data)?, labels))
}

/// Images that are single Gaussian samples reshaped to `[C, side, side]`.
/// Labels mark the sign of the projection onto the leading eigenvector,
/// giving a two-class problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGaussian {
    pub channels: usize,
    pub side: usize,
    pub covariance: CovarianceSpec,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticGaussian {
    fn default() -> Self {
        SyntheticGaussian {
            channels: 1,
            side: 3,
            covariance: CovarianceSpec {
                eigenvalues: vec![8.0, 4.0, 2.0, 1.0, 0.5, 0.25, 0.12, 0.06, 0.03],
                rotation_seed: Some(17),
            },
            train: 4000,
            val: 500,
            test: 500,
            seed: 1,
        }
    }
}

pub fn synthetic_gaussian_split(cfg: &SyntheticGaussian) -> Result<DatasetSplit> {
    let dim = cfg.channels * cfg.side * cfg.side;
    let n = cfg.train + cfg.val + cfg.test;
    let x = synth_gaussian(dim, n, &cfg.covariance, cfg.seed)?;
    let lead = cfg.covariance.eigenvectors()[..dim].to_vec();
    let labels: Vec<usize> = x
        .rows()
        .map(|r| usize::from(r.iter().zip(&lead).map(|(a, b)| a * b).sum::<f64>() > 0.0))
        .collect();
    let shape = [cfg.channels, cfg.side, cfg.side];
    let part = |from: usize, to: usize| {
        LabeledSet::new(
            shape,
            x.data()[from * dim..to * dim].to_vec(),
            labels[from..to].to_vec(),
        )
    };
    let mut checksum = FNV_OFFSET;
    for v in cfg.covariance.eigenvalues.iter() {
        checksum = fnv1a(checksum, &v.to_le_bytes());
    }
    checksum = fnv1a(checksum, &cfg.seed.to_le_bytes());
    Ok(DatasetSplit {
        name: "synthetic".into(),
        train: part(0, cfg.train)?,
        val: part(cfg.train, cfg.train + cfg.val)?,
        test: part(cfg.train + cfg.val, n)?,
        num_classes: 2,
        normalization: Normalization::identity(cfg.channels),
        checksum,
        preprocessing: "none (zero-mean Gaussian samples)".into(),
    })
}

/// Class-conditional oriented gratings with per-class color mixing and
/// additive noise. A stand-in for natural images when exercising the full
/// convolutional pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImages {
    pub shape: [usize; 3],
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticImages {
    fn default() -> Self {
        SyntheticImages {
            shape: [3, 32, 32],
            classes: 4,
            train: 256,
            val: 64,
            test: 64,
            noise: 0.5,
            seed: 3,
        }
    }
}

pub fn synthetic_image_split(cfg: &SyntheticImages) -> Result<DatasetSplit> {
    if cfg.classes == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    let [c, h, w] = cfg.shape;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let colors: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..c).map(|_| rng.random_range(0.2..1.0)).collect())
        .collect();
    let mut gen = |count: usize| -> Result<LabeledSet> {
        let mut images = Vec::with_capacity(count * c * h * w);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let k = rng.random_range(0..cfg.classes);
            let theta = std::f64::consts::PI * k as f64 / cfg.classes as f64
                + rng.random_range(-0.15..0.15);
            let freq = rng.random_range(0.35..0.6);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let (s, co) = theta.sin_cos();
            for &gain in &colors[k][..c] {
                for y in 0..h {
                    for x in 0..w {
                        let t = freq * (co * x as f64 + s * y as f64) + phase;
                        let z: f64 = StandardNormal.sample(&mut rng);
                        images.push(gain * t.sin() + cfg.noise * z);
                    }
                }
            }
            labels.push(k);
        }
        LabeledSet::new(cfg.shape, images, labels)
    };
    let mut train = gen(cfg.train)?;
    let mut val = gen(cfg.val)?;
    let mut test = gen(cfg.test)?;
    let norm = Normalization::fit(&train);
    norm.apply(&mut train);
    norm.apply(&mut val);
    norm.apply(&mut test);
    Ok(DatasetSplit {
        name: "synthetic-images".into(),
        train,
        val,
        test,
        num_classes: cfg.classes,
        normalization: norm,
        checksum: fnv1a(FNV_OFFSET, &cfg.seed.to_le_bytes()),
        preprocessing: "per-channel standardization with train-split statistics".into(),
    })
}
