//! Content-adaptive distortion parameters: per reference and kind, the
//! parameter whose calibrated quality score lands on each level's target.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::distort::{derive_seed, DistortionKind, DistortionSpec};
use crate::error::{Error, Result};
use crate::metrics::QualityReference;
use crate::par;
use crate::pixels::ImageBuffer;

pub const STAGE1_LEVELS: RangeInclusive<usize> = 1..=11;
pub const STAGE2_LEVELS: RangeInclusive<usize> = 1..=17;

/// Bisection stops once the achieved score is this close to the target.
pub const SEARCH_TOLERANCE: f64 = 0.25;
pub const MAX_BISECTIONS: usize = 40;
/// Largest acceptable distance between achieved score and target.
pub const ACCEPT_TOLERANCE: f64 = 1.0;
pub const SWEEP_POINTS: usize = 2000;

/// Seeds used for noise during calibration are stage-1 seeds, so a
/// stage-1 noise image reproduces its calibration exactly.
pub const CALIBRATION_STAGE: u8 = 1;

/// Quality levels `1..=21` with targets `100, 95, …, 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTable {
    levels: Vec<(usize, f64)>,
}

impl LevelTable {
    pub fn standard() -> Self {
        Self {
            levels: (1..=21).map(|l| (l, 100.0 - 5.0 * (l - 1) as f64)).collect(),
        }
    }

    pub fn levels(&self) -> &[(usize, f64)] {
        &self.levels
    }

    pub fn target(&self, level: usize) -> Result<f64> {
        self.levels
            .iter()
            .find(|(l, _)| *l == level)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::InvalidParameter(format!("level {level} not in table")))
    }
}

impl Default for LevelTable {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub ref_id: String,
    pub kind: DistortionKind,
    pub level: usize,
    pub param: f64,
    pub achieved: f64,
    pub clamped: bool,
}

/// Search interval `(identity end, strongest end)` for a kind.
pub fn param_domain(kind: DistortionKind) -> (f64, f64) {
    match kind {
        DistortionKind::GaussianNoise => (0.0, 0.5),
        DistortionKind::GaussianBlur => (0.0, 16.0),
        DistortionKind::Jp2kLike => (0.0, 2.0),
        DistortionKind::JpegLike => (100.0, 1.0),
    }
}

fn score_at(reference: &QualityReference, kind: DistortionKind, param: f64, seed: u64) -> Result<f64> {
    let distorted = DistortionSpec::new(kind, param, seed)?.apply(reference.image())?;
    reference.quality100(&distorted)
}

/// `quality100` at the strongest and at the identity parameter.
pub fn achievable_range(reference: &ImageBuffer, kind: DistortionKind, seed: u64) -> Result<(f64, f64)> {
    let (id, max) = param_domain(kind);
    let reference = QualityReference::new(reference)?;
    Ok((score_at(&reference, kind, max, seed)?, score_at(&reference, kind, id, seed)?))
}

fn nearest<'a>(candidates: impl Iterator<Item = &'a (f64, f64)>, target: f64) -> (f64, f64) {
    // candidates arrive ordered from weakest to strongest distortion, so a
    // strict comparison keeps the weaker one on ties
    let mut best = (f64::NAN, f64::NAN);
    let mut best_d = f64::INFINITY;
    for &(p, q) in candidates {
        let d = (q - target).abs();
        if d < best_d {
            best_d = d;
            best = (p, q);
        }
    }
    best
}

/// Dense sweep of `points` evenly spaced parameters over the kind's domain
/// (the integer grid for `jpeg_like`), returning `(param, score)` pairs from
/// weakest to strongest.
pub fn sweep(
    reference: &ImageBuffer,
    kind: DistortionKind,
    seed: u64,
    points: usize,
) -> Result<Vec<(f64, f64)>> {
    sweep_cached(&QualityReference::new(reference)?, kind, seed, points)
}

fn sweep_cached(
    reference: &QualityReference,
    kind: DistortionKind,
    seed: u64,
    points: usize,
) -> Result<Vec<(f64, f64)>> {
    let params: Vec<f64> = match kind {
        DistortionKind::JpegLike => (1..=100).rev().map(f64::from).collect(),
        _ => {
            let (lo, hi) = param_domain(kind);
            let last = points.max(2) - 1;
            (0..=last).map(|i| lo + (hi - lo) * i as f64 / last as f64).collect()
        }
    };
    par::try_map(&params, |&p| Ok((p, score_at(reference, kind, p, seed)?)))
}

/// The sweep candidate whose score is nearest `target`, ties going to the
/// weaker distortion.
pub fn brute_force_sweep(
    reference: &ImageBuffer,
    kind: DistortionKind,
    seed: u64,
    target: f64,
    points: usize,
) -> Result<(f64, f64)> {
    Ok(nearest(sweep(reference, kind, seed, points)?.iter(), target))
}

fn bisect(
    reference: &QualityReference,
    kind: DistortionKind,
    seed: u64,
    target: f64,
    shared_scan: Option<&[(f64, f64)]>,
) -> Result<(f64, f64, bool)> {
    let (lo, hi) = param_domain(kind);
    let floor = score_at(reference, kind, hi, seed)?;
    let mut best = (hi, floor);
    if floor <= target + SEARCH_TOLERANCE {
        let top = score_at(reference, kind, lo, seed)?;
        best = bisect_bracket(reference, kind, seed, target, (lo, top), (hi, floor))?;
        if (best.1 - target).abs() <= SEARCH_TOLERANCE {
            return Ok((best.0, best.1, false));
        }
    }
    // the score is not monotone in the parameter: bisect every crossing of
    // a coarse scan and keep the closest result
    let own_scan;
    let scan = match shared_scan {
        Some(s) => s,
        None => {
            own_scan = sweep_cached(reference, kind, seed, FALLBACK_SCAN_POINTS)?;
            &own_scan
        }
    };
    best = scan.iter().fold(best, |b, &c| closer(b, c, target));
    for w in scan.windows(2) {
        if (w[0].1 - target) * (w[1].1 - target) <= 0.0 {
            best = closer(best, bisect_bracket(reference, kind, seed, target, w[0], w[1])?, target);
        }
    }
    let lowest = scan.iter().map(|c| c.1).fold(floor, f64::min);
    Ok((best.0, best.1, lowest > target + SEARCH_TOLERANCE))
}

/// Parameters scanned when plain bisection fails to converge.
pub const FALLBACK_SCAN_POINTS: usize = 64;

fn closer(a: (f64, f64), b: (f64, f64), target: f64) -> (f64, f64) {
    if (b.1 - target).abs() < (a.1 - target).abs() {
        b
    } else {
        a
    }
}

/// Bisects between a weaker point scoring above `target` and a stronger one
/// scoring below it, returning the closest point seen.
fn bisect_bracket(
    reference: &QualityReference,
    kind: DistortionKind,
    seed: u64,
    target: f64,
    weak: (f64, f64),
    strong: (f64, f64),
) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (weak.0, strong.0);
    let mut best = closer(strong, weak, target);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let q = score_at(reference, kind, mid, seed)?;
        best = closer(best, (mid, q), target);
        if (q - target).abs() <= SEARCH_TOLERANCE {
            break;
        }
        if q > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Calibrates `levels` for one reference and kind. Level 1 is always the
/// identity parameter. Continuous kinds are bisected; `jpeg_like` picks the
/// nearest score on the integer quality grid. A level is clamped when no
/// parameter in the domain scores as low as its target; for continuous
/// kinds that is judged over the strongest parameter and a coarse scan.
pub fn calibrate_levels(
    ref_id: &str,
    reference: &ImageBuffer,
    kind: DistortionKind,
    table: &LevelTable,
    levels: RangeInclusive<usize>,
    seed_root: u64,
) -> Result<Vec<CalibrationEntry>> {
    let targets: Vec<(usize, f64)> = levels
        .map(|l| Ok((l, table.target(l)?)))
        .collect::<Result<_>>()?;
    let reference = &QualityReference::new(reference)?;
    let grid = if kind == DistortionKind::JpegLike {
        Some(sweep_cached(reference, kind, 0, 100)?)
    } else {
        None
    };
    // blur and jp2k ignore the seed, so one fallback scan serves every level
    let shared_scan = match kind {
        DistortionKind::GaussianBlur | DistortionKind::Jp2kLike => {
            Some(sweep_cached(reference, kind, 0, FALLBACK_SCAN_POINTS)?)
        }
        _ => None,
    };
    par::try_map(&targets, |&(level, target)| {
        let seed = derive_seed(seed_root, ref_id, kind, level, CALIBRATION_STAGE);
        let (param, achieved, clamped) = if level == 1 {
            (kind.identity_param(), 100.0, false)
        } else if let Some(grid) = &grid {
            let (p, q) = nearest(grid.iter(), target);
            let floor = grid.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            (p, q, floor > target + ACCEPT_TOLERANCE)
        } else {
            bisect(reference, kind, seed, target, shared_scan.as_deref())?
        };
        Ok(CalibrationEntry {
            ref_id: ref_id.to_string(),
            kind,
            level,
            param,
            achieved,
            clamped,
        })
    })
}

/// Calibrates every (reference, kind) pair over `levels`, sorted by
/// `(ref_id, kind, level)`.
pub fn calibrate_all(
    refs: &[(String, ImageBuffer)],
    kinds: &[DistortionKind],
    table: &LevelTable,
    levels: RangeInclusive<usize>,
    seed_root: u64,
) -> Result<Vec<CalibrationEntry>> {
    let jobs: Vec<(&str, &ImageBuffer, DistortionKind)> = refs
        .iter()
        .flat_map(|(id, img)| kinds.iter().map(move |&k| (id.as_str(), img, k)))
        .collect();
    let mut out: Vec<CalibrationEntry> = par::try_map(&jobs, |&(id, img, kind)| {
        calibrate_levels(id, img, kind, table, levels.clone(), seed_root)
    })?
    .into_iter()
    .flatten()
    .collect();
    out.sort_by(|a, b| {
        (a.ref_id.as_str(), a.kind, a.level).cmp(&(b.ref_id.as_str(), b.kind, b.level))
    });
    Ok(out)
}

/// Calibration entries indexed by `(ref_id, kind, level)`.
#[derive(Debug, Clone, Default)]
pub struct CalibrationTable {
    entries: BTreeMap<(String, DistortionKind, usize), CalibrationEntry>,
}

impl CalibrationTable {
    pub fn new(entries: impl IntoIterator<Item = CalibrationEntry>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|e| ((e.ref_id.clone(), e.kind, e.level), e))
                .collect(),
        }
    }

    pub fn get(&self, ref_id: &str, kind: DistortionKind, level: usize) -> Result<&CalibrationEntry> {
        self.entries
            .get(&(ref_id.to_string(), kind, level))
            .ok_or_else(|| Error::MissingCalibration {
                ref_id: ref_id.to_string(),
                kind: kind.to_string(),
                level,
            })
    }

    pub fn entries(&self) -> impl Iterator<Item = &CalibrationEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::natural_scene;

    #[test]
    fn level_table_targets() {
        let t = LevelTable::standard();
        assert_eq!(t.levels().len(), 21);
        assert_eq!(t.target(1).unwrap(), 100.0);
        assert_eq!(t.target(11).unwrap(), 50.0);
        assert_eq!(t.target(17).unwrap(), 20.0);
        assert_eq!(t.target(21).unwrap(), 0.0);
        assert!(t.levels().windows(2).all(|w| w[0].1 - w[1].1 == 5.0));
        assert!(t.target(22).is_err());
    }

    #[test]
    fn level_one_is_identity() {
        let img = natural_scene(64, 64, 1);
        for kind in DistortionKind::ALL {
            let e = calibrate_levels("r", &img, kind, &LevelTable::standard(), 1..=1, 0).unwrap();
            assert_eq!(e[0].param, kind.identity_param());
            assert_eq!(e[0].achieved, 100.0);
            assert!(!e[0].clamped);
        }
    }

    #[test]
    fn noise_hits_targets_and_orders_params() {
        let img = natural_scene(128, 128, 2);
        let table = LevelTable::standard();
        let e = calibrate_levels("r", &img, DistortionKind::GaussianNoise, &table, 2..=6, 9).unwrap();
        let (l2, l6) = (&e[0], &e[4]);
        assert!((l2.achieved - 95.0).abs() <= ACCEPT_TOLERANCE, "{l2:?}");
        assert!((l6.achieved - 75.0).abs() <= ACCEPT_TOLERANCE, "{l6:?}");
        assert!(l2.param < l6.param);
        let seed = derive_seed(9, "r", DistortionKind::GaussianNoise, 6, CALIBRATION_STAGE);
        let (_, swept) = brute_force_sweep(&img, DistortionKind::GaussianNoise, seed, 75.0, 400).unwrap();
        assert!((swept - l6.achieved).abs() <= 0.5);
    }

    #[test]
    fn unreachable_target_clamps() {
        let img = ImageBuffer::from_fn(64, 64, 1, |r, c, _| if (r / 8 + c / 8) % 2 == 0 { 0.3 } else { 0.7 }).unwrap();
        let (floor, top) = achievable_range(&img, DistortionKind::Jp2kLike, 0).unwrap();
        assert_eq!(top, 100.0);
        let e = calibrate_levels("r", &img, DistortionKind::Jp2kLike, &LevelTable::standard(), 21..=21, 0).unwrap();
        if floor > SEARCH_TOLERANCE {
            assert!(e[0].clamped);
            assert_eq!(e[0].param, 2.0);
            assert_eq!(e[0].achieved, floor);
        }
    }

    #[test]
    fn blur_on_constant_is_flat() {
        let img = ImageBuffer::filled(48, 48, 3, 0.5).unwrap();
        assert_eq!(achievable_range(&img, DistortionKind::GaussianBlur, 0).unwrap(), (100.0, 100.0));
    }

    #[test]
    fn noise_floor_is_low() {
        let img = natural_scene(128, 128, 3);
        let (floor, top) = achievable_range(&img, DistortionKind::GaussianNoise, 5).unwrap();
        assert_eq!(top, 100.0);
        assert!(floor < 60.0, "{floor}");
    }

    #[test]
    fn missing_entry_is_named() {
        let t = CalibrationTable::new(vec![]);
        let err = t.get("ref7", DistortionKind::JpegLike, 4).unwrap_err().to_string();
        assert!(err.contains("ref7") && err.contains("jpeg_like") && err.contains('4'), "{err}");
    }

    #[test]
    fn deterministic() {
        let img = natural_scene(64, 64, 4);
        let refs = vec![("a".to_string(), img.clone()), ("b".to_string(), natural_scene(64, 64, 5))];
        let table = LevelTable::standard();
        let once = calibrate_all(&refs, &DistortionKind::ALL, &table, 1..=4, 3).unwrap();
        let twice = par::with_workers(Some(1), || calibrate_all(&refs, &DistortionKind::ALL, &table, 1..=4, 3))
            .unwrap()
            .unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.len(), 2 * 4 * 4);
    }
}
