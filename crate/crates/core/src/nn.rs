//! A small densely connected convolutional classifier.
//!
//! ```text
//! x -> conv3x3 -> relu -> avgpool2 = p1 -> conv3x3 -> relu = r2
//! features = concat(gap(p1), gap(r2)) -> standardize -> linear -> softmax
//! ```
//!
//! The standardization is frozen: per-feature mean and spread are measured
//! on the training inputs before the first update and stored with the
//! weights. Pooled ReLU features are all positive, so without centring a
//! zero-initialised head cannot separate more than the two extreme classes.
//!
//! Gradients are hand-derived and checked against finite differences in the
//! tests. Parameters live in one flat vector so Adam treats them uniformly.

use std::fs;
use std::path::Path;

use image::imageops::FilterType;
use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    /// Square input side; must be even.
    pub resolution: usize,
    pub c1: usize,
    pub c2: usize,
    pub classes: usize,
}

impl Arch {
    pub fn new(resolution: usize, classes: usize) -> Self {
        Self {
            resolution,
            c1: 8,
            c2: 16,
            classes,
        }
    }

    fn features(&self) -> usize {
        self.c1 + self.c2
    }

    fn layout(&self) -> Layout {
        let w1 = 0;
        let b1 = w1 + self.c1 * 3 * 9;
        let w2 = b1 + self.c1;
        let b2 = w2 + self.c2 * self.c1 * 9;
        let wh = b2 + self.c2;
        let bh = wh + self.classes * self.features();
        Layout {
            w1,
            b1,
            w2,
            b2,
            wh,
            bh,
            len: bh + self.classes,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wh: usize,
    bh: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Arch,
    params: Vec<f64>,
    feat_mean: Vec<f64>,
    feat_std: Vec<f64>,
}

struct Cache {
    x: Vec<f64>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    a2: Vec<f64>,
    features: Vec<f64>,
    standardized: Vec<f64>,
    probs: Vec<f64>,
}

fn conv3x3(input: &[f64], cin: usize, side: usize, w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
    let plane = side * side;
    let mut out = vec![0.0; cout * plane];
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(b[o]);
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            let k = &w[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wk = k[ky * 3 + kx];
                    for y in 0..side {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= side as isize {
                            continue;
                        }
                        let row = &src[sy as usize * side..(sy as usize + 1) * side];
                        let drow = &mut dst[y * side..(y + 1) * side];
                        let (x0, x1) = match kx {
                            0 => (1, side),
                            1 => (0, side),
                            _ => (0, side - 1),
                        };
                        for x in x0..x1 {
                            drow[x] += wk * row[x + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    side: usize,
    w: &[f64],
    dout: &[f64],
    cout: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let plane = side * side;
    let mut din = vec![0.0; cin * plane];
    for o in 0..cout {
        let g = &dout[o * plane..(o + 1) * plane];
        db[o] += g.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            let dsrc = &mut din[i * plane..(i + 1) * plane];
            let base = (o * cin + i) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let wk = w[base + ky * 3 + kx];
                    let mut acc = 0.0;
                    for y in 0..side {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= side as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let (x0, x1) = match kx {
                            0 => (1, side),
                            1 => (0, side),
                            _ => (0, side - 1),
                        };
                        for x in x0..x1 {
                            let gv = g[y * side + x];
                            let sx = x + kx - 1;
                            acc += gv * src[sy * side + sx];
                            dsrc[sy * side + sx] += gv * wk;
                        }
                    }
                    dw[base + ky * 3 + kx] += acc;
                }
            }
        }
    }
    din
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Network {
    /// He-initialised convolutions and a zero-initialised head.
    pub fn new(arch: Arch, seed: u64) -> Self {
        assert!(arch.resolution >= 2 && arch.resolution.is_multiple_of(2));
        let l = arch.layout();
        let mut params = vec![0.0; l.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let he1 = Normal::new(0.0, (2.0 / 27.0f64).sqrt()).unwrap();
        let he2 = Normal::new(0.0, (2.0 / (arch.c1 * 9) as f64).sqrt()).unwrap();
        for p in &mut params[l.w1..l.b1] {
            *p = he1.sample(&mut rng);
        }
        for p in &mut params[l.w2..l.b2] {
            *p = he2.sample(&mut rng);
        }
        Self {
            arch,
            params,
            feat_mean: vec![0.0; arch.features()],
            feat_std: vec![1.0; arch.features()],
        }
    }

    /// Measures the feature standardization on `inputs` with the current
    /// convolution weights. Constant features keep unit spread.
    pub fn calibrate<'a>(&mut self, inputs: impl IntoIterator<Item = &'a [f64]>) {
        let nf = self.arch.features();
        self.feat_mean = vec![0.0; nf];
        self.feat_std = vec![1.0; nf];
        let raw: Vec<Vec<f64>> = inputs.into_iter().map(|x| self.forward_cached(x).features).collect();
        if raw.is_empty() {
            return;
        }
        let n = raw.len() as f64;
        for f in 0..nf {
            let mean = raw.iter().map(|r| r[f]).sum::<f64>() / n;
            let var = raw.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n;
            self.feat_mean[f] = mean;
            self.feat_std[f] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_cached(&self, x: &[f64]) -> Cache {
        let a = self.arch;
        let l = a.layout();
        let p = &self.params;
        let side = a.resolution;
        let half = side / 2;
        let a1 = conv3x3(x, 3, side, &p[l.w1..l.b1], &p[l.b1..l.w2], a.c1);
        let mut p1 = vec![0.0; a.c1 * half * half];
        for c in 0..a.c1 {
            for y in 0..half {
                for xx in 0..half {
                    let at = |dy: usize, dx: usize| {
                        a1[c * side * side + (2 * y + dy) * side + 2 * xx + dx].max(0.0)
                    };
                    p1[c * half * half + y * half + xx] =
                        0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
                }
            }
        }
        let a2 = conv3x3(&p1, a.c1, half, &p[l.w2..l.b2], &p[l.b2..l.wh], a.c2);
        let plane = (half * half) as f64;
        let mut features = Vec::with_capacity(a.features());
        features.extend(p1.chunks(half * half).map(|c| c.iter().sum::<f64>() / plane));
        features.extend(
            a2.chunks(half * half)
                .map(|c| c.iter().map(|v| v.max(0.0)).sum::<f64>() / plane),
        );
        let nf = a.features();
        let raw = features.clone();
        let features: Vec<f64> = features
            .iter()
            .zip(self.feat_mean.iter().zip(&self.feat_std))
            .map(|(f, (m, s))| (f - m) / s)
            .collect();
        let logits: Vec<f64> = (0..a.classes)
            .map(|k| {
                p[l.bh + k]
                    + p[l.wh + k * nf..l.wh + (k + 1) * nf]
                        .iter()
                        .zip(&features)
                        .map(|(w, f)| w * f)
                        .sum::<f64>()
            })
            .collect();
        Cache {
            x: x.to_vec(),
            a1,
            p1,
            a2,
            features: raw,
            standardized: features,
            probs: softmax(&logits),
        }
    }

    /// Class probabilities for a preprocessed input.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).probs
    }

    /// Cross-entropy loss of one sample; adds `scale * dloss/dparams` to `grad`.
    pub fn accumulate_gradient(&self, x: &[f64], label: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let a = self.arch;
        let l = a.layout();
        let side = a.resolution;
        let half = side / 2;
        let hp = half * half;
        let nf = a.features();
        let c = self.forward_cached(x);
        let loss = -c.probs[label].max(1e-300).ln();

        let dlogits: Vec<f64> = c
            .probs
            .iter()
            .enumerate()
            .map(|(k, p)| scale * (p - if k == label { 1.0 } else { 0.0 }))
            .collect();
        let mut dfeat = vec![0.0; nf];
        for (k, dl) in dlogits.iter().enumerate() {
            grad[l.bh + k] += dl;
            for f in 0..nf {
                grad[l.wh + k * nf + f] += dl * c.standardized[f];
                dfeat[f] += dl * self.params[l.wh + k * nf + f] / self.feat_std[f];
            }
        }

        let mut da2 = vec![0.0; a.c2 * hp];
        for ch in 0..a.c2 {
            let g = dfeat[a.c1 + ch] / hp as f64;
            for i in 0..hp {
                if c.a2[ch * hp + i] > 0.0 {
                    da2[ch * hp + i] = g;
                }
            }
        }
        let (gw2, rest) = grad[l.w2..].split_at_mut(l.b2 - l.w2);
        let mut dp1 = conv3x3_backward(
            &c.p1,
            a.c1,
            half,
            &self.params[l.w2..l.b2],
            &da2,
            a.c2,
            gw2,
            &mut rest[..a.c2],
        );
        for ch in 0..a.c1 {
            let g = dfeat[ch] / hp as f64;
            for v in &mut dp1[ch * hp..(ch + 1) * hp] {
                *v += g;
            }
        }

        let mut da1 = vec![0.0; a.c1 * side * side];
        for ch in 0..a.c1 {
            for y in 0..side {
                for xx in 0..side {
                    let i = ch * side * side + y * side + xx;
                    if c.a1[i] > 0.0 {
                        da1[i] = 0.25 * dp1[ch * hp + (y / 2) * half + xx / 2];
                    }
                }
            }
        }
        let (gw1, rest) = grad[l.w1..].split_at_mut(l.b1 - l.w1);
        conv3x3_backward(
            &c.x,
            3,
            side,
            &self.params[l.w1..l.b1],
            &da1,
            a.c1,
            gw1,
            &mut rest[..a.c1],
        );
        loss
    }

    /// Little-endian f64s: parameters, then feature means, then spreads.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .params
            .iter()
            .chain(&self.feat_mean)
            .chain(&self.feat_std)
            .flat_map(|p| p.to_le_bytes())
            .collect();
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(arch: Arch, path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::ModelMissing(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let len = arch.layout().len;
        let nf = arch.features();
        let expected = len + 2 * nf;
        if bytes.len() != expected * 8 {
            return Err(Error::Validation(format!(
                "{}: expected {} parameters, found {} bytes",
                path.display(),
                expected,
                bytes.len()
            )));
        }
        let mut values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let feat_std = values.split_off(len + nf);
        let feat_mean = values.split_off(len);
        Ok(Self {
            arch,
            params: values,
            feat_mean,
            feat_std,
        })
    }
}

/// Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Pads to a centred square with black, then resizes bilinearly to `side`.
pub fn center_pad_resize(img: &RgbImage, side: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let square = w.max(h);
    let padded = if w == h {
        img.clone()
    } else {
        let mut canvas = RgbImage::from_pixel(square, square, Rgb([0, 0, 0]));
        image::imageops::replace(
            &mut canvas,
            img,
            ((square - w) / 2) as i64,
            ((square - h) / 2) as i64,
        );
        canvas
    };
    if square == side {
        padded
    } else {
        image::imageops::resize(&padded, side, side, FilterType::Triangle)
    }
}

/// Channel-major tensor scaled to `[-0.5, 0.5]`.
pub fn to_tensor(img: &RgbImage, side: u32) -> Vec<f64> {
    let img = center_pad_resize(img, side);
    let plane = (side * side) as usize;
    let mut out = vec![0.0; 3 * plane];
    for (x, y, p) in img.enumerate_pixels() {
        let i = (y * side + x) as usize;
        for c in 0..3 {
            out[c * plane + i] = p[c] as f64 / 255.0 - 0.5;
        }
    }
    out
}
