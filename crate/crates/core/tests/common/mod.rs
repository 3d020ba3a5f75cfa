//! Brute-force references written independently of the library: explicit
//! window loops, per-neuron residuals and closed-form 2x2 eigenpairs.

#![allow(dead_code)]

/// Patch rows of a `[C, H, W]` image by direct window enumeration.
pub fn naive_patches(
    img: &[f64],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> Vec<Vec<f64>> {
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut rows = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            let mut row = Vec::new();
            for ch in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let y = (oy * sh + ky) as isize - ph as isize;
                        let x = (ox * sw + kx) as isize - pw as isize;
                        let inside = y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
                        row.push(if inside {
                            img[ch * h * w + y as usize * w + x as usize]
                        } else {
                            0.0
                        });
                    }
                }
            }
            rows.push(row);
        }
    }
    rows
}

/// Direct convolution: out[f][oy][ox] = sum over c, ky, kx.
pub fn naive_conv(
    img: &[f64],
    (c, h, w): (usize, usize, usize),
    weights: &[Vec<f64>],
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> Vec<f64> {
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut out = vec![0.0; weights.len() * oh * ow];
    for (f, wf) in weights.iter().enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ch in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * sh + ky) as isize - ph as isize;
                            let x = (ox * sw + kx) as isize - pw as isize;
                            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                acc += wf[ch * kh * kw + ky * kw + kx]
                                    * img[ch * h * w + y as usize * w + x as usize];
                            }
                        }
                    }
                }
                out[f * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    out
}

pub fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// One-sample nonlinear PCA update, recomputing each neuron's residual
/// from scratch: dw_i = eta f(y_i) (x - sum_{j<=i} f(y_j) w_j).
pub fn naive_hpca(w: &[Vec<f64>], x: &[f64], f: fn(f64) -> f64, eta: f64) -> Vec<Vec<f64>> {
    let fy: Vec<f64> = w
        .iter()
        .map(|wi| f(wi.iter().zip(x).map(|(a, b)| a * b).sum()))
        .collect();
    (0..w.len())
        .map(|i| {
            (0..x.len())
                .map(|d| {
                    let recon: f64 = (0..=i).map(|j| fy[j] * w[j][d]).sum();
                    eta * fy[i] * (x[d] - recon)
                })
                .collect()
        })
        .collect()
}

/// Competitive update toward the input for the nearest row.
pub fn naive_wta(w: &[Vec<f64>], x: &[f64], eta: f64) -> Vec<Vec<f64>> {
    let dist = |r: &Vec<f64>| r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut win = 0;
    for i in 1..w.len() {
        if dist(&w[i]) < dist(&w[win]) {
            win = i;
        }
    }
    w.iter()
        .enumerate()
        .map(|(i, r)| {
            if i == win {
                r.iter().zip(x).map(|(a, b)| eta * (b - a)).collect()
            } else {
                vec![0.0; x.len()]
            }
        })
        .collect()
}

/// Mean cross-entropy of a linear softmax classifier plus (l2/2)|W|^2.
pub fn naive_probe_loss(w: &[Vec<f64>], b: &[f64], l2: f64, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let logits: Vec<f64> = w
            .iter()
            .zip(b)
            .map(|(wk, bk)| wk.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bk)
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    let reg: f64 = w.iter().flatten().map(|v| v * v).sum();
    total / xs.len() as f64 + 0.5 * l2 * reg
}

/// Closed-form eigenpairs of a symmetric 2x2 matrix, descending.
pub fn eig2(a: f64, b: f64, d: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (mean + r, mean - r);
    let v = |l: f64| {
        let (x, y) = if b.abs() > 1e-300 {
            (b, l - a)
        } else if (l - a).abs() <= (l - d).abs() {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let n = (x * x + y * y).sqrt();
        [x / n, y / n]
    };
    ([l1, l2], [v(l1), v(l2)])
}

/// Population covariance (1/n) of rows after centering.
pub fn naive_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    rows.iter()
                        .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                        .sum::<f64>()
                        / n
                })
                .collect()
        })
        .collect()
}

pub fn abs_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}
