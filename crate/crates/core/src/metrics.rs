//! Full-reference quality metrics.
//!
//! Each metric declares an orientation so rank fusion can fold it onto a
//! common "rank 1 = best" axis. `quality100` is the 0–100 calibrated scale
//! used for distortion-level targeting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::pixels::{downsample2x, to_luma, ImageBuffer};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Gradient-similarity stabilizer for `[0, 1]` samples (170/255² rounded).
pub const GMS_C: f64 = 0.0026;

pub const QUALITY100_EXPONENT: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

impl Orientation {
    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::HigherBetter => "higher_better",
            Orientation::LowerBetter => "lower_better",
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "higher_better" => Ok(Orientation::HigherBetter),
            "lower_better" => Ok(Orientation::LowerBetter),
            _ => Err(Error::Format(format!("unknown orientation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrMetricDescriptor {
    pub id: String,
    pub orientation: Orientation,
    pub range: (f64, f64),
}

impl FrMetricDescriptor {
    pub fn new(id: impl Into<String>, orientation: Orientation, range: (f64, f64)) -> Self {
        Self {
            id: id.into(),
            orientation,
            range,
        }
    }
}

/// The built-in metrics. Anything implementing [`FrMetric`] can be fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuiltinMetric {
    Psnr,
    Ssim,
    MsSsim,
    GmsDeviation,
    Quality100,
}

impl BuiltinMetric {
    pub const ALL: [BuiltinMetric; 5] = [
        BuiltinMetric::Psnr,
        BuiltinMetric::Ssim,
        BuiltinMetric::MsSsim,
        BuiltinMetric::GmsDeviation,
        BuiltinMetric::Quality100,
    ];

    /// Metrics fused by default.
    pub const DEFAULT_QUARTET: [BuiltinMetric; 4] = [
        BuiltinMetric::Psnr,
        BuiltinMetric::Ssim,
        BuiltinMetric::MsSsim,
        BuiltinMetric::GmsDeviation,
    ];

    pub fn id(self) -> &'static str {
        match self {
            BuiltinMetric::Psnr => "psnr",
            BuiltinMetric::Ssim => "ssim",
            BuiltinMetric::MsSsim => "ms_ssim",
            BuiltinMetric::GmsDeviation => "gms_deviation",
            BuiltinMetric::Quality100 => "quality100",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.id() == id)
    }
}

pub trait FrMetric: Send + Sync {
    fn descriptor(&self) -> FrMetricDescriptor;
    fn score(&self, reference: &ImageBuffer, distorted: &ImageBuffer) -> Result<f64>;
}

impl FrMetric for BuiltinMetric {
    fn descriptor(&self) -> FrMetricDescriptor {
        use Orientation::*;
        match self {
            BuiltinMetric::Psnr => FrMetricDescriptor::new("psnr", HigherBetter, (0.0, PSNR_CAP_DB)),
            BuiltinMetric::Ssim => FrMetricDescriptor::new("ssim", HigherBetter, (-1.0, 1.0)),
            BuiltinMetric::MsSsim => FrMetricDescriptor::new("ms_ssim", HigherBetter, (0.0, 1.0)),
            BuiltinMetric::GmsDeviation => {
                FrMetricDescriptor::new("gms_deviation", LowerBetter, (0.0, 1.0))
            }
            BuiltinMetric::Quality100 => {
                FrMetricDescriptor::new("quality100", HigherBetter, (0.0, 100.0))
            }
        }
    }

    fn score(&self, reference: &ImageBuffer, distorted: &ImageBuffer) -> Result<f64> {
        match self {
            BuiltinMetric::Psnr => psnr(reference, distorted),
            BuiltinMetric::Ssim => ssim(reference, distorted),
            BuiltinMetric::MsSsim => ms_ssim(reference, distorted),
            BuiltinMetric::GmsDeviation => gms_deviation(reference, distorted),
            BuiltinMetric::Quality100 => quality100(reference, distorted),
        }
    }
}

fn check_pair(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "shape mismatch: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )))
    }
}

/// `10·log10(1/MSE)` over all samples, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &ImageBuffer, distorted: &ImageBuffer) -> Result<f64> {
    check_pair(reference, distorted)?;
    let n = reference.data().len() as f64;
    let mse = reference
        .data()
        .iter()
        .zip(distorted.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

struct Plane<'a> {
    w: usize,
    h: usize,
    data: &'a [f64],
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i32;
    let taps: Vec<f64> = (-r..=r)
        .map(|x| (-((x * x) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable "valid" filtering: output is `(w-k+1) x (h-k+1)`.
fn filter_valid(p: &Plane<'_>, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = p.w - k + 1;
    let oh = p.h - k + 1;
    let mut horiz = vec![0.0; ow * p.h];
    for r in 0..p.h {
        let row = &p.data[r * p.w..(r + 1) * p.w];
        for c in 0..ow {
            horiz[r * ow + c] = taps.iter().zip(&row[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        let dst = &mut out[r * ow..(r + 1) * ow];
        for (i, t) in taps.iter().enumerate() {
            let src = &horiz[(r + i) * ow..(r + i + 1) * ow];
            for (o, v) in dst.iter_mut().zip(src) {
                *o += t * v;
            }
        }
    }
    out
}

/// Reference-side SSIM statistics at one scale.
#[derive(Debug, Clone)]
struct ScaleStats {
    w: usize,
    h: usize,
    luma: Vec<f64>,
    mu: Vec<f64>,
    e_sq: Vec<f64>,
}

impl ScaleStats {
    fn new(w: usize, h: usize, luma: Vec<f64>, taps: &[f64]) -> Self {
        let sq: Vec<f64> = luma.iter().map(|x| x * x).collect();
        let mu = filter_valid(&Plane { w, h, data: &luma }, taps);
        let e_sq = filter_valid(&Plane { w, h, data: &sq }, taps);
        Self { w, h, luma, mu, e_sq }
    }

    /// Mean SSIM and mean contrast-structure term against plane `b`.
    fn compare(&self, b: &[f64], taps: &[f64]) -> (f64, f64) {
        let plane = |d: &[f64]| filter_valid(&Plane { w: self.w, h: self.h, data: d }, taps);
        let yy: Vec<f64> = b.iter().map(|y| y * y).collect();
        let xy: Vec<f64> = self.luma.iter().zip(b).map(|(x, y)| x * y).collect();
        let mu_y = plane(b);
        let e_yy = plane(&yy);
        let e_xy = plane(&xy);
        let n = mu_y.len() as f64;
        let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
        for i in 0..mu_y.len() {
            let (mx, my) = (self.mu[i], mu_y[i]);
            let sxx = self.e_sq[i] - mx * mx;
            let syy = e_yy[i] - my * my;
            let sxy = e_xy[i] - mx * my;
            let cs = (2.0 * sxy + SSIM_C2) / (sxx + syy + SSIM_C2);
            let l = (2.0 * mx * my + SSIM_C1) / (mx * mx + my * my + SSIM_C1);
            ssim_sum += l * cs;
            cs_sum += cs;
        }
        (ssim_sum / n, cs_sum / n)
    }
}

fn check_min_dim(img: &ImageBuffer, min_dim: usize) -> Result<()> {
    if img.width() < min_dim || img.height() < min_dim {
        return Err(Error::Dimension(format!(
            "image {}x{} smaller than {min_dim}x{min_dim}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn luma_pair(reference: &ImageBuffer, distorted: &ImageBuffer, min_dim: usize) -> Result<(ImageBuffer, ImageBuffer)> {
    check_pair(reference, distorted)?;
    check_min_dim(reference, min_dim)?;
    Ok((to_luma(reference), to_luma(distorted)))
}

/// Mean SSIM over an 11x11 Gaussian window (σ = 1.5), computed on luma.
pub fn ssim(reference: &ImageBuffer, distorted: &ImageBuffer) -> Result<f64> {
    let (a, b) = luma_pair(reference, distorted, SSIM_WINDOW)?;
    let taps = gaussian_window();
    let stats = ScaleStats::new(a.width(), a.height(), a.into_data(), &taps);
    Ok(stats.compare(b.data(), &taps).0)
}

/// Number of dyadic scales at which the SSIM window still fits.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let (mut w, mut h) = (width, height);
    let mut n = 0;
    while n < MS_SSIM_WEIGHTS.len() && w >= SSIM_WINDOW && h >= SSIM_WINDOW {
        n += 1;
        w /= 2;
        h /= 2;
    }
    n
}

/// A reference image with its MS-SSIM pyramid statistics precomputed, for
/// scoring many distorted versions against it.
#[derive(Debug, Clone)]
pub struct QualityReference {
    image: ImageBuffer,
    taps: Vec<f64>,
    scales: Vec<ScaleStats>,
}

impl QualityReference {
    pub fn new(reference: &ImageBuffer) -> Result<Self> {
        check_min_dim(reference, SSIM_WINDOW)?;
        let taps = gaussian_window();
        let n = ms_ssim_scales(reference.width(), reference.height());
        let mut scales = Vec::with_capacity(n);
        let mut luma = to_luma(reference);
        for s in 0..n {
            let next = if s + 1 < n { Some(downsample2x(&luma)?) } else { None };
            let (w, h) = (luma.width(), luma.height());
            scales.push(ScaleStats::new(w, h, luma.into_data(), &taps));
            match next {
                Some(l) => luma = l,
                None => break,
            }
        }
        Ok(Self {
            image: reference.clone(),
            taps,
            scales,
        })
    }

    pub fn image(&self) -> &ImageBuffer {
        &self.image
    }

    /// Multi-scale SSIM of `distorted` against the reference.
    pub fn ms_ssim(&self, distorted: &ImageBuffer) -> Result<f64> {
        check_pair(&self.image, distorted)?;
        let n = self.scales.len();
        let wsum: f64 = MS_SSIM_WEIGHTS[..n].iter().sum();
        let mut b = to_luma(distorted);
        let mut value = 1.0;
        for (s, stats) in self.scales.iter().enumerate() {
            let (full, cs) = stats.compare(b.data(), &self.taps);
            let term = if s + 1 == n { full } else { cs };
            value *= term.max(0.0).powf(MS_SSIM_WEIGHTS[s] / wsum);
            if s + 1 < n {
                b = downsample2x(&b)?;
            }
        }
        Ok(value.clamp(0.0, 1.0))
    }

    /// [`quality100`] of `distorted` against the reference.
    pub fn quality100(&self, distorted: &ImageBuffer) -> Result<f64> {
        check_pair(&self.image, distorted)?;
        if &self.image == distorted {
            return Ok(100.0);
        }
        Ok(ms_ssim_to_quality100(self.ms_ssim(distorted)?))
    }
}

/// Multi-scale SSIM with 2x2-mean downsampling between scales. Contrast and
/// structure enter at every scale, luminance only at the coarsest. When
/// the image supports fewer than five scales the remaining exponents are
/// renormalized to sum to one. Negative per-scale terms are clamped to 0.
pub fn ms_ssim(reference: &ImageBuffer, distorted: &ImageBuffer) -> Result<f64> {
    check_pair(reference, distorted)?;
    QualityReference::new(reference)?.ms_ssim(distorted)
}

fn prewitt_magnitude(img: &ImageBuffer) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let d = img.data();
    let mut out = Vec::with_capacity((w - 2) * (h - 2));
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let px = |dr: isize, dc: isize| {
                d[(r as isize + dr) as usize * w + (c as isize + dc) as usize]
            };
            let gx = (px(-1, -1) + px(0, -1) + px(1, -1) - px(-1, 1) - px(0, 1) - px(1, 1)) / 3.0;
            let gy = (px(-1, -1) + px(-1, 0) + px(-1, 1) - px(1, -1) - px(1, 0) - px(1, 1)) / 3.0;
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Standard deviation of the gradient-magnitude similarity map (lower is
/// better). Prewitt gradients over the interior of the luma plane.
pub fn gms_deviation(reference: &ImageBuffer, distorted: &ImageBuffer) -> Result<f64> {
    let (a, b) = luma_pair(reference, distorted, 3)?;
    let ga = prewitt_magnitude(&a);
    let gb = prewitt_magnitude(&b);
    let map: Vec<f64> = ga
        .iter()
        .zip(&gb)
        .map(|(x, y)| (2.0 * x * y + GMS_C) / (x * x + y * y + GMS_C))
        .collect();
    let n = map.len() as f64;
    let mean = map.iter().sum::<f64>() / n;
    let var = map.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Maps an MS-SSIM value onto the 0–100 quality scale.
pub fn ms_ssim_to_quality100(m: f64) -> f64 {
    let m = m.clamp(0.0, 1.0);
    100.0 * (1.0 - (1.0 - m).powf(QUALITY100_EXPONENT))
}

/// Calibrated 0–100 quality: `100·(1 − (1 − ms_ssim)^0.7)`.
pub fn quality100(reference: &ImageBuffer, distorted: &ImageBuffer) -> Result<f64> {
    check_pair(reference, distorted)?;
    if reference == distorted {
        return Ok(100.0);
    }
    Ok(ms_ssim_to_quality100(ms_ssim(reference, distorted)?))
}

/// Scores every pair in input order. The first failing pair (by index)
/// aborts the batch.
pub fn score_pairs(
    metric: &dyn FrMetric,
    pairs: &[(&ImageBuffer, &ImageBuffer)],
) -> Result<Vec<f64>> {
    par::try_map_indexed(pairs, |(r, d)| metric.score(r, d))
}
