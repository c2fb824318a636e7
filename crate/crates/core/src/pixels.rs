//! Image buffers in a normalized `[0, 1]` working domain.
//!
//! Every simulator and metric in the crate consumes [`ImageBuffer`]. Samples
//! are stored row-major and channel-interleaved as `f64`; quantization to 8
//! bits happens only at the file boundary ([`load_image`] / [`save_image`]).

use std::path::Path;

use image::{ColorType, DynamicImage, ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::fsutil;

/// Luma weights applied to (R, G, B).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Validates dimensions, channel count and sample range.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "sample {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from samples that are clamped into `[0, 1]`.
    pub(crate) fn from_clamped(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// `f(row, col, channel)` evaluated for every sample, clamped into `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 || (channels != 1 && channels != 3) {
            return Err(Error::Dimension(format!(
                "invalid shape {width}x{height}x{channels}"
            )));
        }
        let mut data = Vec::with_capacity(width * height * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Ok(Self::from_clamped(width, height, channels, data))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// One channel as a row-major plane.
    pub fn plane(&self, channel: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Reassembles an image from per-channel planes, clamping samples.
    pub(crate) fn from_planes(width: usize, height: usize, planes: &[Vec<f64>]) -> Self {
        let channels = planes.len();
        let mut data = vec![0.0; width * height * channels];
        for (ch, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + ch] = *v;
            }
        }
        Self::from_clamped(width, height, channels, data)
    }

    /// Applies the 8-bit round trip that [`save_image`] followed by
    /// [`load_image`] performs.
    pub fn quantized(&self) -> ImageBuffer {
        let data = self
            .data
            .iter()
            .map(|&v| quantize_sample(v) as f64 / 255.0)
            .collect();
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }

    /// Crops a `size`x`size` window whose top-left corner is `origin`.
    pub fn crop(&self, origin: (usize, usize), size: usize) -> Result<ImageBuffer> {
        let (r0, c0) = origin;
        if r0 + size > self.height || c0 + size > self.width || size == 0 {
            return Err(Error::Dimension(format!(
                "crop {size}x{size} at {origin:?} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(size * size * self.channels);
        for r in r0..r0 + size {
            let start = (r * self.width + c0) * self.channels;
            data.extend_from_slice(&self.data[start..start + size * self.channels]);
        }
        Ok(Self {
            width: size,
            height: size,
            channels: self.channels,
            data,
        })
    }
}

/// Round-half-up quantization to a byte.
#[inline]
pub fn quantize_sample(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Reads an 8-bit PNG or binary PPM with one or three channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, bytes) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!(
                    "unsupported color type {:?}; expected 8-bit gray or RGB",
                    other.color()
                ),
            })
        }
    };
    let data = bytes.into_iter().map(|b| b as f64 / 255.0).collect();
    ImageBuffer::new(width, height, channels, data)
}

/// Encodes an image as an 8-bit PNG in memory.
pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize_sample(v)).collect();
    let color = if img.channels == 1 {
        ColorType::L8
    } else {
        ColorType::Rgb8
    };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&bytes, img.width as u32, img.height as u32, color.into())
        .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    Ok(out)
}

/// Writes an 8-bit PNG; the file appears atomically.
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_png(img)?;
    fsutil::atomic_write(path.as_ref(), &bytes)
}

/// Luma plane with weights [`LUMA_WEIGHTS`]; single-channel input is
/// returned unchanged.
pub fn to_luma(img: &ImageBuffer) -> ImageBuffer {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
        .collect();
    ImageBuffer::from_clamped(img.width, img.height, 1, data)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    /// Top-left `(row, col)` of each patch, row-major order.
    pub origins: Vec<(usize, usize)>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

fn axis_origins(dim: usize, size: usize, stride: usize) -> Vec<usize> {
    let last = dim - size;
    let mut out: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|&o| o < last)
        .collect();
    out.push(last);
    out.dedup();
    out
}

/// Regular patch grid whose last row/column of patches is clamped to the
/// image edge, so every pixel is covered without padding.
pub fn extract_patches(img: &ImageBuffer, size: usize, stride: usize) -> Result<PatchGrid> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidParameter(
            "patch size and stride must be positive".into(),
        ));
    }
    if img.height < size || img.width < size {
        return Err(Error::Dimension(format!(
            "image {}x{} smaller than patch size {size}",
            img.width, img.height
        )));
    }
    let rows = axis_origins(img.height, size, stride);
    let cols = axis_origins(img.width, size, stride);
    let origins = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(PatchGrid {
        patch_size: size,
        stride,
        origins,
    })
}

/// Non-overlapping 2x2 block mean of a single-channel image. Odd trailing
/// rows and columns are dropped.
pub fn downsample2x(img: &ImageBuffer) -> Result<ImageBuffer> {
    if img.channels != 1 {
        return Err(Error::Dimension("downsample2x expects one channel".into()));
    }
    if img.width < 2 || img.height < 2 {
        return Err(Error::Dimension(format!(
            "cannot downsample {}x{}",
            img.width, img.height
        )));
    }
    let (w, h) = (img.width / 2, img.height / 2);
    let src = &img.data;
    let sw = img.width;
    let mut data = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let i = 2 * r * sw + 2 * c;
            data.push((src[i] + src[i + 1] + src[i + sw] + src[i + sw + 1]) * 0.25);
        }
    }
    Ok(ImageBuffer::from_clamped(w, h, 1, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: usize, h: usize, data: Vec<f64>) -> ImageBuffer {
        ImageBuffer::new(w, h, 1, data).unwrap()
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(ImageBuffer::new(0, 1, 1, vec![]).is_err());
        assert!(ImageBuffer::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageBuffer::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn white_png_loads_as_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.png");
        image::save_buffer(&p, &[255u8], 1, 1, image::ColorType::L8).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.data(), &[1.0]);
    }

    #[test]
    fn ppm_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        std::fs::write(&p, bytes).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn truncated_file_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        let img = ImageBuffer::filled(16, 16, 3, 0.3).unwrap();
        let bytes = encode_png(&img).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        match load_image(&p) {
            Err(Error::Decode { path, .. }) => assert_eq!(path, p),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_image("/nonexistent/none.png"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn sixteen_bit_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(1, 1, vec![1000u16]).unwrap();
        buf.save(&p).unwrap();
        assert!(matches!(load_image(&p), Err(Error::Decode { .. })));
    }

    #[test]
    fn save_quantizes_half_up() {
        let dir = tempfile::tempdir().unwrap();
        for (v, byte) in [(0.0, 0u8), (0.5, 128u8), (1.0, 255u8)] {
            let p = dir.path().join("q.png");
            save_image(&gray(1, 1, vec![v]), &p).unwrap();
            let raw = image::open(&p).unwrap().into_luma8().into_raw();
            assert_eq!(raw, vec![byte]);
        }
    }

    #[test]
    fn luma_weights() {
        let red = ImageBuffer::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((to_luma(&red).data()[0] - 0.299).abs() < 1e-15);
        let white = ImageBuffer::filled(3, 2, 3, 1.0).unwrap();
        assert!(to_luma(&white).data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let g = ImageBuffer::filled(3, 2, 3, 0.42).unwrap();
        assert!(to_luma(&g).data().iter().all(|&v| (v - 0.42).abs() < 1e-15));
        let single = gray(2, 1, vec![0.1, 0.9]);
        assert_eq!(to_luma(&single), single);
    }

    #[test]
    fn patch_grid_examples() {
        let img = ImageBuffer::filled(235, 235, 1, 0.0).unwrap();
        assert_eq!(extract_patches(&img, 235, 128).unwrap().origins, vec![(0, 0)]);

        let img = ImageBuffer::filled(256, 256, 1, 0.0).unwrap();
        let grid = extract_patches(&img, 235, 128).unwrap();
        assert_eq!(grid.origins, vec![(0, 0), (0, 21), (21, 0), (21, 21)]);

        let img = ImageBuffer::filled(100, 100, 1, 0.0).unwrap();
        assert!(matches!(
            extract_patches(&img, 235, 128),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn downsample_examples() {
        let img = gray(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(downsample2x(&img).unwrap().data(), &[0.5]);

        let img = ImageBuffer::filled(5, 5, 1, 0.3).unwrap();
        let d = downsample2x(&img).unwrap();
        assert_eq!((d.width(), d.height()), (2, 2));
        assert!(d.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));

        assert!(downsample2x(&gray(1, 4, vec![0.0; 4])).is_err());
    }

    fn arb_image() -> impl Strategy<Value = ImageBuffer> {
        (1usize..12, 1usize..12, prop::bool::ANY).prop_flat_map(|(w, h, rgb)| {
            let ch = if rgb { 3 } else { 1 };
            prop::collection::vec(0.0f64..=1.0, w * h * ch)
                .prop_map(move |d| ImageBuffer::new(w, h, ch, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(img in arb_image()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.png");
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            prop_assert!(back.same_shape(&img));
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
            prop_assert_eq!(back, img.quantized());
        }

        #[test]
        fn patches_cover_every_pixel(
            w in 1usize..80, h in 1usize..80, size in 1usize..40, frac in 0.0f64..1.0
        ) {
            prop_assume!(size <= w && size <= h);
            let stride = 1 + (frac * size as f64) as usize % size;
            let img = ImageBuffer::filled(w, h, 1, 0.0).unwrap();
            let grid = extract_patches(&img, size, stride).unwrap();
            let mut covered = vec![false; w * h];
            for &(r, c) in &grid.origins {
                prop_assert!(r + size <= h && c + size <= w);
                for rr in r..r + size {
                    for cc in c..c + size {
                        covered[rr * w + cc] = true;
                    }
                }
            }
            prop_assert!(covered.iter().all(|&c| c));
        }

        #[test]
        fn luma_in_unit_range(img in arb_image()) {
            prop_assert!(to_luma(&img).data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn downsample_keeps_mean_on_even_dims(
            hw in 1usize..10, hh in 1usize..10, seed in prop::collection::vec(0.0f64..=1.0, 400)
        ) {
            let (w, h) = (2 * hw, 2 * hh);
            let img = gray(w, h, seed[..w * h].to_vec());
            let d = downsample2x(&img).unwrap();
            let m0: f64 = img.data().iter().sum::<f64>() / (w * h) as f64;
            let m1: f64 = d.data().iter().sum::<f64>() / (hw * hh) as f64;
            prop_assert!((m0 - m1).abs() < 1e-12);
        }
    }
}
