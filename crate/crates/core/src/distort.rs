//! Seedable simulators for the four base distortions and their sequential
//! composition.
//!
//! The two codecs are transform-quantization models: `jpeg_like` is an 8x8
//! block DCT with the standard luminance table, `jp2k_like` a three-level
//! LeGall 5/3 wavelet with deadzone quantization of the detail bands. They
//! reproduce the perceptual character of the real codecs (blocking, ringing
//! and blur) without producing interoperable bitstreams.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pixels::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    GaussianNoise,
    GaussianBlur,
    JpegLike,
    Jp2kLike,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] = [
        DistortionKind::GaussianNoise,
        DistortionKind::GaussianBlur,
        DistortionKind::JpegLike,
        DistortionKind::Jp2kLike,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistortionKind::GaussianNoise => "gaussian_noise",
            DistortionKind::GaussianBlur => "gaussian_blur",
            DistortionKind::JpegLike => "jpeg_like",
            DistortionKind::Jp2kLike => "jp2k_like",
        }
    }

    /// Parameter that leaves the image unchanged.
    pub fn identity_param(self) -> f64 {
        match self {
            DistortionKind::JpegLike => 100.0,
            _ => 0.0,
        }
    }

    pub fn validate_param(self, param: f64) -> Result<()> {
        let ok = match self {
            DistortionKind::JpegLike => (1.0..=100.0).contains(&param),
            _ => param.is_finite() && param >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{} parameter {param} out of domain",
                self.as_str()
            )))
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown distortion kind `{s}`")))
    }
}

/// One distortion application. `param` is σ for noise and blur, the quality
/// factor for `jpeg_like` and the quantization step for `jp2k_like`; `seed`
/// only affects noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub param: f64,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, param: f64, seed: u64) -> Result<Self> {
        kind.validate_param(param)?;
        Ok(Self { kind, param, seed })
    }

    pub fn apply(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        match self.kind {
            DistortionKind::GaussianNoise => gaussian_noise(img, self.param, self.seed),
            DistortionKind::GaussianBlur => gaussian_blur(img, self.param),
            DistortionKind::JpegLike => jpeg_like(img, self.param),
            DistortionKind::Jp2kLike => jp2k_like(img, self.param),
        }
    }
}

/// `kind:param:seed`; `param` uses the shortest representation that parses
/// back to the same `f64`.
impl fmt::Display for DistortionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind, self.param, self.seed)
    }
}

impl FromStr for DistortionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [kind, param, seed] = parts[..] else {
            return Err(Error::Format(format!("bad distortion spec `{s}`")));
        };
        let param: f64 = param
            .parse()
            .map_err(|_| Error::Format(format!("bad parameter in `{s}`")))?;
        let seed: u64 = seed
            .parse()
            .map_err(|_| Error::Format(format!("bad seed in `{s}`")))?;
        DistortionSpec::new(kind.parse()?, param, seed)
    }
}

/// Distortions applied strictly left to right.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistortionChain {
    pub stages: Vec<DistortionSpec>,
}

impl DistortionChain {
    pub fn new(stages: Vec<DistortionSpec>) -> Self {
        Self { stages }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

impl fmt::Display for DistortionChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for DistortionChain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Ok(Self::default());
        }
        let stages = s.split('+').map(str::parse).collect::<Result<_>>()?;
        Ok(Self { stages })
    }
}

pub fn apply_chain(img: &ImageBuffer, chain: &DistortionChain) -> Result<ImageBuffer> {
    let mut cur = img.clone();
    for stage in &chain.stages {
        cur = stage.apply(&cur)?;
    }
    Ok(cur)
}

/// Noise seed for one generated image: the first eight bytes of
/// SHA-256 over the identifying fields.
pub fn derive_seed(root: u64, ref_id: &str, kind: DistortionKind, level: usize, stage: u8) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((ref_id.len() as u64).to_le_bytes());
    h.update(ref_id.as_bytes());
    h.update(kind.as_str().as_bytes());
    h.update((level as u64).to_le_bytes());
    h.update([stage]);
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// Additive white Gaussian noise, independent per sample, from a
/// ChaCha8 stream seeded with `seed`. Output is clamped to `[0, 1]`.
pub fn gaussian_noise(img: &ImageBuffer, sigma: f64, seed: u64) -> Result<ImageBuffer> {
    DistortionKind::GaussianNoise.validate_param(sigma)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .data()
        .iter()
        .map(|&v| v + normal.sample(&mut rng))
        .collect();
    Ok(ImageBuffer::from_clamped(
        img.width(),
        img.height(),
        img.channels(),
        data,
    ))
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// One separable pass with replicate edges. Accumulates differences from
/// the center sample so constant regions are reproduced exactly.
fn convolve_axis(
    src: &[f64],
    width: usize,
    height: usize,
    kernel: &[f64],
    horizontal: bool,
) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut out = vec![0.0; src.len()];
    if horizontal {
        let mut padded = vec![0.0; width + 2 * r];
        for row in 0..height {
            let line = &src[row * width..(row + 1) * width];
            padded[..r].fill(line[0]);
            padded[r..r + width].copy_from_slice(line);
            padded[r + width..].fill(line[width - 1]);
            let dst = &mut out[row * width..(row + 1) * width];
            for (col, o) in dst.iter_mut().enumerate() {
                let center = line[col];
                let window = &padded[col..col + kernel.len()];
                let acc: f64 = kernel.iter().zip(window).map(|(w, v)| w * (v - center)).sum();
                *o = center + acc;
            }
        }
    } else {
        for row in 0..height {
            let center = &src[row * width..(row + 1) * width];
            let dst = &mut out[row * width..(row + 1) * width];
            for (k, w) in kernel.iter().enumerate() {
                let rr = (row + k).saturating_sub(r).min(height - 1);
                let line = &src[rr * width..(rr + 1) * width];
                for ((o, v), c) in dst.iter_mut().zip(line).zip(center) {
                    *o += w * (v - c);
                }
            }
            for (o, c) in dst.iter_mut().zip(center) {
                *o += c;
            }
        }
    }
    out
}

/// Separable Gaussian blur on each channel with replicate edge handling.
/// `sigma = 0` returns the input unchanged.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> Result<ImageBuffer> {
    DistortionKind::GaussianBlur.validate_param(sigma)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (img.width(), img.height());
    let planes: Vec<Vec<f64>> = (0..img.channels())
        .map(|ch| {
            let p = img.plane(ch);
            let p = convolve_axis(&p, w, h, &kernel, true);
            convolve_axis(&p, w, h, &kernel, false)
        })
        .collect();
    Ok(ImageBuffer::from_planes(w, h, &planes))
}

/// Standard JPEG luminance quantization table (Annex K), row-major.
pub const JPEG_LUMA_TABLE: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., //
    12., 12., 14., 19., 26., 58., 60., 55., //
    14., 13., 16., 24., 40., 57., 69., 56., //
    14., 17., 22., 29., 51., 87., 80., 62., //
    18., 22., 37., 56., 68., 109., 103., 77., //
    24., 35., 55., 64., 81., 104., 113., 92., //
    49., 64., 78., 87., 103., 121., 120., 101., //
    72., 92., 95., 98., 112., 100., 103., 99.,
];

/// Quantizer steps (in 8-bit sample units) for quality factor `q`.
pub fn jpeg_quant_table(q: f64) -> [f64; 64] {
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    JPEG_LUMA_TABLE.map(|t| (t * scale / 100.0).clamp(1.0, 255.0))
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / 16.0).cos();
        }
    }
    m
}

/// Orthonormal 2-D DCT-II of an 8x8 block (`inverse` applies DCT-III).
fn dct8x8(block: &[f64; 64], basis: &[[f64; 8]; 8], inverse: bool) -> [f64; 64] {
    let mut tmp = [0.0; 64];
    let mut out = [0.0; 64];
    // rows
    for r in 0..8 {
        for u in 0..8 {
            let mut acc = 0.0;
            for x in 0..8 {
                let b = if inverse { basis[x][u] } else { basis[u][x] };
                acc += b * block[r * 8 + x];
            }
            tmp[r * 8 + u] = acc;
        }
    }
    // columns
    for c in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                let b = if inverse { basis[y][v] } else { basis[v][y] };
                acc += b * tmp[y * 8 + c];
            }
            out[v * 8 + c] = acc;
        }
    }
    out
}

/// Block-DCT compression model with the conventional quality-factor table
/// scaling. Every channel uses the luminance table; edge blocks are padded
/// by replication and cropped afterwards.
pub fn jpeg_like(img: &ImageBuffer, q: f64) -> Result<ImageBuffer> {
    DistortionKind::JpegLike.validate_param(q)?;
    let table = jpeg_quant_table(q);
    let basis = dct_basis();
    let (w, h) = (img.width(), img.height());
    let planes: Vec<Vec<f64>> = (0..img.channels())
        .map(|ch| {
            let src = img.plane(ch);
            let mut dst = vec![0.0; w * h];
            for by in (0..h).step_by(8) {
                for bx in (0..w).step_by(8) {
                    let mut block = [0.0; 64];
                    for y in 0..8 {
                        let sy = (by + y).min(h - 1);
                        for x in 0..8 {
                            let sx = (bx + x).min(w - 1);
                            block[y * 8 + x] = src[sy * w + sx] * 255.0 - 128.0;
                        }
                    }
                    let mut coef = dct8x8(&block, &basis, false);
                    for (c, step) in coef.iter_mut().zip(table.iter()) {
                        *c = (*c / step).round() * step;
                    }
                    let rec = dct8x8(&coef, &basis, true);
                    for y in 0..8.min(h - by) {
                        for x in 0..8.min(w - bx) {
                            dst[(by + y) * w + bx + x] = (rec[y * 8 + x] + 128.0) / 255.0;
                        }
                    }
                }
            }
            dst
        })
        .collect();
    Ok(ImageBuffer::from_planes(w, h, &planes))
}

pub const JP2K_LEVELS: usize = 3;

/// In-place forward 5/3 lifting on a strided 1-D signal. Afterwards the
/// first `ceil(n/2)` positions hold the lowpass band and the rest the
/// highpass band. Symmetric extension at both ends.
fn lift53_forward(line: &mut [f64], scratch: &mut Vec<f64>) {
    let n = line.len();
    if n < 2 {
        return;
    }
    let ns = n.div_ceil(2);
    let nd = n / 2;
    scratch.clear();
    scratch.extend_from_slice(line);
    let x = &scratch[..];
    let mut s: Vec<f64> = (0..ns).map(|i| x[2 * i]).collect();
    let mut d: Vec<f64> = (0..nd).map(|i| x[2 * i + 1]).collect();
    for i in 0..nd {
        let right = if i + 1 < ns { s[i + 1] } else { s[i] };
        d[i] -= 0.5 * (s[i] + right);
    }
    for i in 0..ns {
        let left = if i > 0 { d[i - 1] } else { d[0] };
        let right = if i < nd { d[i] } else { d[i - 1] };
        s[i] += 0.25 * (left + right);
    }
    line[..ns].copy_from_slice(&s);
    line[ns..].copy_from_slice(&d);
}

fn lift53_inverse(line: &mut [f64], scratch: &mut Vec<f64>) {
    let n = line.len();
    if n < 2 {
        return;
    }
    let ns = n.div_ceil(2);
    let nd = n / 2;
    scratch.clear();
    scratch.extend_from_slice(line);
    let mut s: Vec<f64> = scratch[..ns].to_vec();
    let d: Vec<f64> = scratch[ns..].to_vec();
    for i in 0..ns {
        let left = if i > 0 { d[i - 1] } else { d[0] };
        let right = if i < nd { d[i] } else { d[i - 1] };
        s[i] -= 0.25 * (left + right);
    }
    for i in 0..nd {
        let right = if i + 1 < ns { s[i + 1] } else { s[i] };
        line[2 * i + 1] = d[i] + 0.5 * (s[i] + right);
    }
    for i in 0..ns {
        line[2 * i] = s[i];
    }
}

/// Applies `f` to every row (or column) of the top-left `w`x`h` region.
fn for_each_line(
    plane: &mut [f64],
    stride: usize,
    w: usize,
    h: usize,
    rows: bool,
    f: impl Fn(&mut [f64], &mut Vec<f64>),
) {
    let mut line = Vec::new();
    let mut scratch = Vec::new();
    if rows {
        for r in 0..h {
            f(&mut plane[r * stride..r * stride + w], &mut scratch);
        }
    } else {
        for c in 0..w {
            line.clear();
            line.extend((0..h).map(|r| plane[r * stride + c]));
            f(&mut line, &mut scratch);
            for (r, v) in line.iter().enumerate() {
                plane[r * stride + c] = *v;
            }
        }
    }
}

/// Sizes of the approximation region at each decomposition level.
fn level_dims(w: usize, h: usize, levels: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::new();
    let (mut cw, mut ch) = (w, h);
    for _ in 0..levels {
        if cw < 2 && ch < 2 {
            break;
        }
        dims.push((cw, ch));
        cw = cw.div_ceil(2);
        ch = ch.div_ceil(2);
    }
    dims
}

pub(crate) fn dwt53_forward(plane: &mut [f64], w: usize, h: usize, levels: usize) {
    for (cw, ch) in level_dims(w, h, levels) {
        for_each_line(plane, w, cw, ch, true, lift53_forward);
        for_each_line(plane, w, cw, ch, false, lift53_forward);
    }
}

pub(crate) fn dwt53_inverse(plane: &mut [f64], w: usize, h: usize, levels: usize) {
    for (cw, ch) in level_dims(w, h, levels).into_iter().rev() {
        for_each_line(plane, w, cw, ch, false, lift53_inverse);
        for_each_line(plane, w, cw, ch, true, lift53_inverse);
    }
}

/// Uniform deadzone quantizer with midpoint reconstruction.
#[inline]
fn deadzone(c: f64, step: f64) -> f64 {
    let q = (c.abs() / step).floor();
    if q == 0.0 {
        0.0
    } else {
        c.signum() * (q + 0.5) * step
    }
}

/// Wavelet compression model: three-level separable LeGall 5/3 transform,
/// detail subbands deadzone-quantized with `step`, approximation band kept.
pub fn jp2k_like(img: &ImageBuffer, step: f64) -> Result<ImageBuffer> {
    DistortionKind::Jp2kLike.validate_param(step)?;
    if step == 0.0 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let dims = level_dims(w, h, JP2K_LEVELS);
    let (aw, ah) = dims
        .last()
        .map(|&(cw, ch)| (cw.div_ceil(2), ch.div_ceil(2)))
        .unwrap_or((w, h));
    let planes: Vec<Vec<f64>> = (0..img.channels())
        .map(|ch| {
            let mut p = img.plane(ch);
            dwt53_forward(&mut p, w, h, JP2K_LEVELS);
            for r in 0..h {
                for c in 0..w {
                    if r >= ah || c >= aw {
                        let v = &mut p[r * w + c];
                        *v = deadzone(*v, step);
                    }
                }
            }
            dwt53_inverse(&mut p, w, h, JP2K_LEVELS);
            p
        })
        .collect();
    Ok(ImageBuffer::from_planes(w, h, &planes))
}
