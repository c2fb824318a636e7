//! Deterministic synthetic content.
//!
//! [`natural_scene`] renders procedural reference images with the statistics
//! the simulators and metrics care about: smooth shading, multi-scale
//! texture, sharp occluding edges and saturated color regions.
//! [`SyntheticBenchmark`] produces a score matrix whose columns are noisy
//! monotone warps of a known latent quality, for exercising fusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::metrics::{FrMetricDescriptor, Orientation};
use crate::pixels::ImageBuffer;
use crate::sqb::{DatasetSegment, ScoreMatrix, SubjectiveOrientation, SubjectiveScores};

/// Bilinearly interpolated lattice noise with `cell`-pixel spacing.
struct ValueNoise {
    cell: f64,
    gw: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(width: usize, height: usize, cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let gw = (width as f64 / cell).ceil() as usize + 2;
        let gh = (height as f64 / cell).ceil() as usize + 2;
        let grid = (0..gw * gh).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Self { cell, gw, grid }
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        let (fy, fx) = (row as f64 / self.cell, col as f64 / self.cell);
        let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (fy - iy as f64, fx - ix as f64);
        // smoothstep keeps the lattice from showing
        let (sy, sx) = (ty * ty * (3.0 - 2.0 * ty), tx * tx * (3.0 - 2.0 * tx));
        let g = |y: usize, x: usize| self.grid[y * self.gw + x];
        let top = g(iy, ix) * (1.0 - sx) + g(iy, ix + 1) * sx;
        let bot = g(iy + 1, ix) * (1.0 - sx) + g(iy + 1, ix + 1) * sx;
        top * (1.0 - sy) + bot * sy
    }
}

enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, cos: f64, sin: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx, cos, sin } => {
                let (dy, dx) = (y - cy, x - cx);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
        }
    }
}

/// Procedural RGB scene of the given size; identical seeds give identical
/// images.
pub fn natural_scene(width: usize, height: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a9e_0000_0001);
    let (w, h) = (width as f64, height as f64);
    let span = w.max(h);

    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ga, gb) = (angle.cos(), angle.sin());

    let octaves: Vec<(ValueNoise, f64)> = [span / 3.0, span / 8.0, 12.0, 5.0, 2.0]
        .into_iter()
        .map(|cell| {
            let cell = cell.max(1.5);
            let amp = 0.08 * (cell / span).powf(0.35);
            (ValueNoise::new(width, height, cell, &mut rng), amp)
        })
        .collect();
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.7..1.3));

    let n_shapes = rng.random_range(6..14);
    let shapes: Vec<(Shape, [f64; 3], f64, f64)> = (0..n_shapes)
        .map(|_| {
            let shape = if rng.random_bool(0.6) {
                let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                Shape::Ellipse {
                    cy: rng.random_range(0.0..h),
                    cx: rng.random_range(0.0..w),
                    ry: rng.random_range(0.04..0.3) * span,
                    rx: rng.random_range(0.04..0.3) * span,
                    cos: theta.cos(),
                    sin: theta.sin(),
                }
            } else {
                let (y0, x0) = (rng.random_range(0.0..h), rng.random_range(0.0..w));
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + rng.random_range(0.05..0.4) * h,
                    x1: x0 + rng.random_range(0.05..0.4) * w,
                }
            };
            let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let stripe_freq = if rng.random_bool(0.3) {
                rng.random_range(0.2..0.9)
            } else {
                0.0
            };
            let stripe_dir: f64 = rng.random_range(0.0..std::f64::consts::PI);
            (shape, color, stripe_freq, stripe_dir)
        })
        .collect();

    let mut data = Vec::with_capacity(width * height * 3);
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64, c as f64);
            let t = (((x / w - 0.5) * ga + (y / h - 0.5) * gb) + 0.75) / 1.5;
            let mut px: [f64; 3] = std::array::from_fn(|i| c0[i] * (1.0 - t) + c1[i] * t);
            for (shape, color, freq, dir) in &shapes {
                if shape.contains(y, x) {
                    let stripe = if *freq > 0.0 {
                        0.12 * ((x * dir.cos() + y * dir.sin()) * freq).sin()
                    } else {
                        0.0
                    };
                    px = std::array::from_fn(|i| color[i] + stripe);
                }
            }
            let tex: f64 = octaves.iter().map(|(n, a)| a * n.at(r, c)).sum();
            for i in 0..3 {
                data.push(px[i] + tex * tint[i]);
            }
        }
    }
    ImageBuffer::from_clamped(width, height, 3, data)
}

/// One fused metric in the synthetic benchmark: a monotone warp of the
/// latent quality plus Gaussian noise at `noise` times the warp's spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Warp {
    Identity,
    Exponential,
    Cubic,
    /// Decreasing in quality: a lower-is-better metric.
    NegLogistic,
}

impl Warp {
    fn apply(self, u: f64) -> f64 {
        match self {
            Warp::Identity => u,
            Warp::Exponential => (2.5 * u).exp(),
            Warp::Cubic => (u - 0.3).powi(3),
            Warp::NegLogistic => 1.0 / (1.0 + (6.0 * (u - 0.5)).exp()),
        }
    }

    fn orientation(self) -> Orientation {
        match self {
            Warp::NegLogistic => Orientation::LowerBetter,
            _ => Orientation::HigherBetter,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub n: usize,
    pub segments: usize,
    pub metrics: Vec<(Warp, f64)>,
}

impl BenchmarkConfig {
    /// Four distinct warps whose noise levels leave every metric with an
    /// SRCC against the latent quality between roughly 0.95 and 0.99.
    pub fn standard(n: usize) -> Self {
        Self {
            n,
            segments: 4,
            metrics: vec![
                (Warp::Identity, 0.15),
                (Warp::Exponential, 0.12),
                (Warp::Cubic, 0.06),
                (Warp::NegLogistic, 0.12),
            ],
        }
    }
}

/// A score matrix with known latent quality. Segment 0 (`anchor`) carries
/// MOS-style subjective scores, the last segment DMOS-style ones, the rest
/// MOS; subjective scores equal the latent quality up to orientation.
#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub latent: Vec<f64>,
    pub scores: ScoreMatrix,
    pub segments: Vec<DatasetSegment>,
}

pub const BENCHMARK_ANCHOR: &str = "anchor";

impl SyntheticBenchmark {
    pub fn generate(config: &BenchmarkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.n;
        let latent: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();

        let mut metrics = Vec::new();
        let mut columns = Vec::new();
        for (j, &(warp, noise)) in config.metrics.iter().enumerate() {
            let clean: Vec<f64> = latent.iter().map(|&u| warp.apply(u)).collect();
            let mean = clean.iter().sum::<f64>() / n as f64;
            let sd = (clean.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            let normal = Normal::new(0.0, noise * sd.max(1e-12)).expect("finite noise");
            columns.push(clean.iter().map(|v| v + normal.sample(&mut rng)).collect());
            metrics.push(FrMetricDescriptor::new(
                format!("m{j}"),
                warp.orientation(),
                (f64::NEG_INFINITY, f64::INFINITY),
            ));
        }

        let k = config.segments.max(1);
        let mut segments = Vec::with_capacity(k);
        for s in 0..k {
            let offset = s * n / k;
            let end = (s + 1) * n / k;
            let rows = &latent[offset..end];
            let dmos = s + 1 == k && k > 1;
            let scores = if dmos {
                rows.iter().map(|u| 100.0 * (1.0 - u)).collect()
            } else {
                rows.iter().map(|u| 1.0 + 7.0 * u).collect()
            };
            let name = if s == 0 {
                BENCHMARK_ANCHOR.to_string()
            } else {
                format!("seg{s}")
            };
            segments.push(DatasetSegment {
                name,
                offset,
                length: end - offset,
                subjective: vec![SubjectiveScores {
                    label: "subjective".into(),
                    scores,
                    orientation: if dmos {
                        SubjectiveOrientation::DmosLowerBetter
                    } else {
                        SubjectiveOrientation::MosHigherBetter
                    },
                }],
            });
        }
        Self {
            latent,
            scores: ScoreMatrix::new(metrics, columns).expect("consistent benchmark"),
            segments,
        }
    }
}
