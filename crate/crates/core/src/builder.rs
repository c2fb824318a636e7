//! Two-stage corpus generation with provenance manifests, content
//! descriptors and score-distribution summaries.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::{CalibrationTable, STAGE1_LEVELS, STAGE2_LEVELS};
use crate::distort::{derive_seed, DistortionChain, DistortionKind, DistortionSpec};
use crate::error::{Error, Result};
use crate::metrics::QualityReference;
use crate::par;
use crate::pixels::{load_image, save_image, to_luma, ImageBuffer};

/// Kinds applied in the first stage.
pub const STAGE1_KINDS: [DistortionKind; 3] = [
    DistortionKind::GaussianNoise,
    DistortionKind::GaussianBlur,
    DistortionKind::JpegLike,
];

/// A two-stage combination: `first` from the stage-1 parent, then `second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Combo {
    pub name: &'static str,
    pub first: DistortionKind,
    pub second: DistortionKind,
}

pub const STAGE2_COMBOS: [Combo; 5] = [
    Combo {
        name: "blur-jpeg",
        first: DistortionKind::GaussianBlur,
        second: DistortionKind::JpegLike,
    },
    Combo {
        name: "blur-noise",
        first: DistortionKind::GaussianBlur,
        second: DistortionKind::GaussianNoise,
    },
    Combo {
        name: "jpeg-jpeg",
        first: DistortionKind::JpegLike,
        second: DistortionKind::JpegLike,
    },
    Combo {
        name: "noise-jpeg",
        first: DistortionKind::GaussianNoise,
        second: DistortionKind::JpegLike,
    },
    Combo {
        name: "noise-jp2k",
        first: DistortionKind::GaussianNoise,
        second: DistortionKind::Jp2kLike,
    },
];

/// One row of a manifest CSV. `path` is resolved against the manifest's
/// output directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: String,
    pub ref_id: String,
    pub stage: u8,
    pub chain: String,
    pub level1: Option<usize>,
    pub level2: Option<usize>,
    pub achieved1: Option<f64>,
    pub achieved2: Option<f64>,
    pub sqb: Option<f64>,
    pub path: String,
}

impl ManifestRecord {
    pub fn parsed_chain(&self) -> Result<DistortionChain> {
        self.chain.parse()
    }

    pub fn resolve(&self, base: &Path) -> PathBuf {
        base.join(&self.path)
    }
}

pub fn image_id(ref_id: &str, stage: u8, chain: &DistortionChain) -> String {
    format!("{ref_id}__{stage}__{chain}")
}

fn relative_image_path(stage: u8, id: &str) -> String {
    let name: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._+-".contains(c) { c } else { '_' })
        .collect();
    format!("stage{stage}/{name}.png")
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub out_dir: PathBuf,
    pub seed_root: u64,
}

/// Stage-0 records for every PNG/PPM/PGM file in `dir`, with absolute paths
/// and the file stem as `ref_id`, sorted by `ref_id`.
pub fn references_from_dir(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png" | "ppm" | "pgm")) {
            continue;
        }
        let ref_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Format(format!("non-UTF-8 file name {}", path.display())))?
            .to_string();
        let abs = std::fs::canonicalize(&path).map_err(|e| Error::io(&path, e))?;
        out.push(reference_record(&ref_id, &abs.to_string_lossy()));
    }
    out.sort_by(|a, b| a.ref_id.cmp(&b.ref_id));
    if let Some(w) = out.windows(2).find(|w| w[0].ref_id == w[1].ref_id) {
        return Err(Error::InvalidParameter(format!("duplicate reference id `{}`", w[0].ref_id)));
    }
    Ok(out)
}

pub fn reference_record(ref_id: &str, path: &str) -> ManifestRecord {
    ManifestRecord {
        image_id: image_id(ref_id, 0, &DistortionChain::default()),
        ref_id: ref_id.to_string(),
        stage: 0,
        chain: String::new(),
        level1: None,
        level2: None,
        achieved1: None,
        achieved2: None,
        sqb: None,
        path: path.to_string(),
    }
}

fn load_reference(rec: &ManifestRecord, base: &Path) -> Result<ImageBuffer> {
    load_image(rec.resolve(base))
}

fn write_output(opts: &BuildOptions, stage: u8, id: &str, img: &ImageBuffer) -> Result<(String, ImageBuffer)> {
    let rel = relative_image_path(stage, id);
    save_image(img, opts.out_dir.join(&rel))?;
    // score what is on disk
    Ok((rel, img.quantized()))
}

fn sort_records(mut v: Vec<ManifestRecord>) -> Vec<ManifestRecord> {
    v.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    v
}

/// Singly distorted images: every reference × [`STAGE1_KINDS`] × levels
/// 1–11 with the reference's calibrated parameters. Images are written
/// under `out_dir/stage1/`; `achieved1` is measured on the 8-bit output.
pub fn build_stage1(
    refs: &[ManifestRecord],
    calib: &CalibrationTable,
    opts: &BuildOptions,
) -> Result<Vec<ManifestRecord>> {
    // fail before any work if the calibration is incomplete
    for r in refs {
        for kind in STAGE1_KINDS {
            for level in STAGE1_LEVELS {
                calib.get(&r.ref_id, kind, level)?;
            }
        }
    }
    let jobs: Vec<(&ManifestRecord, DistortionKind)> = refs
        .iter()
        .flat_map(|r| STAGE1_KINDS.iter().map(move |&k| (r, k)))
        .collect();
    let nested = par::try_map(&jobs, |&(rec, kind)| {
        let reference = load_reference(rec, &opts.out_dir)?;
        let qref = QualityReference::new(&reference)?;
        STAGE1_LEVELS
            .map(|level| {
                let entry = calib.get(&rec.ref_id, kind, level)?;
                let seed = derive_seed(opts.seed_root, &rec.ref_id, kind, level, 1);
                let chain = DistortionChain::new(vec![DistortionSpec::new(kind, entry.param, seed)?]);
                let id = image_id(&rec.ref_id, 1, &chain);
                let img = chain.stages[0].apply(&reference)?;
                let (path, on_disk) = write_output(opts, 1, &id, &img)?;
                Ok(ManifestRecord {
                    image_id: id,
                    ref_id: rec.ref_id.clone(),
                    stage: 1,
                    chain: chain.to_string(),
                    level1: Some(level),
                    level2: None,
                    achieved1: Some(qref.quality100(&on_disk)?),
                    achieved2: None,
                    sqb: None,
                    path,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(sort_records(nested.into_iter().flatten().collect()))
}

/// Doubly distorted images: for each combo, every stage-1 parent of the
/// combo's first kind is distorted again with the reference's calibrated
/// parameter for the second kind at levels 1–17. `achieved2` compares the
/// final 8-bit output with the pristine reference.
pub fn build_stage2(
    refs: &[ManifestRecord],
    stage1: &[ManifestRecord],
    calib: &CalibrationTable,
    opts: &BuildOptions,
) -> Result<Vec<ManifestRecord>> {
    let mut parents: HashMap<(&str, DistortionKind, usize), &ManifestRecord> = HashMap::new();
    for rec in stage1.iter().filter(|r| r.stage == 1) {
        let chain = rec.parsed_chain()?;
        let level = rec
            .level1
            .ok_or_else(|| Error::Format(format!("stage-1 record `{}` has no level1", rec.image_id)))?;
        if chain.len() != 1 {
            return Err(Error::Format(format!("stage-1 record `{}` must have one stage", rec.image_id)));
        }
        parents.insert((rec.ref_id.as_str(), chain.stages[0].kind, level), rec);
    }
    let mut jobs = Vec::new();
    for r in refs {
        for combo in &STAGE2_COMBOS {
            for l1 in STAGE1_LEVELS {
                let parent = parents.get(&(r.ref_id.as_str(), combo.first, l1)).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "missing stage-1 parent for ref `{}`, kind {}, level {l1}",
                        r.ref_id, combo.first
                    ))
                })?;
                for l2 in STAGE2_LEVELS {
                    calib.get(&r.ref_id, combo.second, l2)?;
                }
                jobs.push((r, *combo, *parent));
            }
        }
    }
    let nested = par::try_map(&jobs, |&(rec, combo, parent)| {
        let reference = load_reference(rec, &opts.out_dir)?;
        let qref = QualityReference::new(&reference)?;
        let parent_img = load_image(parent.resolve(&opts.out_dir))?;
        let first = parent.parsed_chain()?.stages[0];
        STAGE2_LEVELS
            .map(|level| {
                let entry = calib.get(&rec.ref_id, combo.second, level)?;
                let seed = derive_seed(opts.seed_root, &rec.ref_id, combo.second, level, 2);
                let second = DistortionSpec::new(combo.second, entry.param, seed)?;
                let chain = DistortionChain::new(vec![first, second]);
                let id = image_id(&rec.ref_id, 2, &chain);
                let img = second.apply(&parent_img)?;
                let (path, on_disk) = write_output(opts, 2, &id, &img)?;
                Ok(ManifestRecord {
                    image_id: id,
                    ref_id: rec.ref_id.clone(),
                    stage: 2,
                    chain: chain.to_string(),
                    level1: parent.level1,
                    level2: Some(level),
                    achieved1: parent.achieved1,
                    achieved2: Some(qref.quality100(&on_disk)?),
                    sqb: None,
                    path,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(sort_records(nested.into_iter().flatten().collect()))
}

/// Mean Sobel gradient magnitude of the luma plane, replicate edges.
pub fn spatial_information(img: &ImageBuffer) -> f64 {
    let luma = to_luma(img);
    let (w, h) = (luma.width(), luma.height());
    let d = luma.data();
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        d[r * w + c]
    };
    let mut total = 0.0;
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (at(r - 1, c + 1) - at(r - 1, c - 1))
                + 2.0 * (at(r, c + 1) - at(r, c - 1))
                + (at(r + 1, c + 1) - at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) - at(r - 1, c - 1))
                + 2.0 * (at(r + 1, c) - at(r - 1, c))
                + (at(r + 1, c + 1) - at(r - 1, c + 1));
            total += (gx * gx + gy * gy).sqrt();
        }
    }
    total / (w * h) as f64
}

/// Opponent-channel colorfulness: `sqrt(σ²rg + σ²yb) + 0.3·sqrt(μ²rg + μ²yb)`
/// with `rg = R − G`, `yb = (R + G)/2 − B`, on `[0, 1]` samples.
pub fn colorfulness(img: &ImageBuffer) -> Result<f64> {
    if img.channels() != 3 {
        return Err(Error::Dimension(format!(
            "colorfulness needs 3 channels, got {}",
            img.channels()
        )));
    }
    let n = (img.width() * img.height()) as f64;
    let (mut srg, mut syb, mut srg2, mut syb2) = (0.0, 0.0, 0.0, 0.0);
    for px in img.data().chunks_exact(3) {
        let rg = px[0] - px[1];
        let yb = 0.5 * (px[0] + px[1]) - px[2];
        srg += rg;
        syb += yb;
        srg2 += rg * rg;
        syb2 += yb * yb;
    }
    let (mrg, myb) = (srg / n, syb / n);
    let var_rg = (srg2 / n - mrg * mrg).max(0.0);
    let var_yb = (syb2 / n - myb * myb).max(0.0);
    Ok((var_rg + var_yb).sqrt() + 0.3 * (mrg * mrg + myb * myb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentDescriptors {
    pub si: f64,
    pub cf: f64,
}

/// SI and CF; single-channel images have zero colorfulness.
pub fn content_descriptors(img: &ImageBuffer) -> ContentDescriptors {
    ContentDescriptors {
        si: spatial_information(img),
        cf: colorfulness(img).unwrap_or(0.0),
    }
}

/// Sets `sqb` on every record found in `scores`; returns how many were set.
pub fn annotate(records: &mut [ManifestRecord], scores: &HashMap<String, f64>) -> usize {
    let mut hit = 0;
    for r in records.iter_mut() {
        if let Some(&s) = scores.get(&r.image_id) {
            r.sqb = Some(s);
            hit += 1;
        }
    }
    hit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    /// Counts per integer bin `floor(sqb)`, with 100 in its own bin.
    pub histogram: BTreeMap<u32, usize>,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn distribution(values: &[f64]) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::Degenerate("no scores to summarize".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite score".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut histogram = BTreeMap::new();
    for v in &sorted {
        *histogram.entry(v.clamp(0.0, 100.0).floor() as u32).or_insert(0) += 1;
    }
    let (q1, median, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.5), quantile(&sorted, 0.75));
    let iqr = q3 - q1;
    let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = sorted.iter().copied().filter(|v| (fence_lo..=fence_hi).contains(v)).collect();
    Ok(DistributionSummary {
        count: sorted.len(),
        histogram,
        min: sorted[0],
        q1,
        median,
        q3,
        max: sorted[sorted.len() - 1],
        whisker_low: inside[0],
        whisker_high: inside[inside.len() - 1],
        outliers: sorted.len() - inside.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub overall: DistributionSummary,
    /// Per stage and distortion type, e.g. `stage1/gaussian_blur` or
    /// `stage2/blur-jpeg`.
    pub groups: BTreeMap<String, DistributionSummary>,
}

fn group_name(rec: &ManifestRecord) -> Result<String> {
    let chain = rec.parsed_chain()?;
    let kinds: Vec<&str> = chain
        .stages
        .iter()
        .map(|s| match s.kind {
            DistortionKind::GaussianNoise => "noise",
            DistortionKind::GaussianBlur => "blur",
            DistortionKind::JpegLike => "jpeg",
            DistortionKind::Jp2kLike => "jp2k",
        })
        .collect();
    Ok(match rec.stage {
        0 => "stage0/pristine".to_string(),
        1 => format!("stage1/{}", chain.stages[0].kind),
        s => format!("stage{s}/{}", kinds.join("-")),
    })
}

/// Histogram and boxplot statistics of the `sqb` column, overall and per
/// group. Every record must carry a score.
pub fn summarize(records: &[ManifestRecord]) -> Result<CorpusSummary> {
    if records.is_empty() {
        return Err(Error::Degenerate("empty manifest".into()));
    }
    let mut all = Vec::with_capacity(records.len());
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        let s = r
            .sqb
            .ok_or_else(|| Error::InvalidParameter(format!("record `{}` has no sqb", r.image_id)))?;
        all.push(s);
        grouped.entry(group_name(r)?).or_default().push(s);
    }
    Ok(CorpusSummary {
        overall: distribution(&all)?,
        groups: grouped
            .into_iter()
            .map(|(k, v)| Ok((k, distribution(&v)?)))
            .collect::<Result<_>>()?,
    })
}
