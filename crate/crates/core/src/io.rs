//! File formats for the fusion and evaluation workflow: long-format score
//! tables, segment definitions, and per-segment outputs.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_csv, read_json, write_csv};
use crate::metrics::{BuiltinMetric, FrMetric, FrMetricDescriptor, Orientation};
use crate::sqb::{DatasetSegment, KSweepPoint, ScoreMatrix, SqbOutcome, SubjectiveOrientation, SubjectiveScores};

/// One `image_id,metric_id,score` row. Prediction tables reuse the layout
/// with the method name in `metric_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub image_id: String,
    pub metric_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub label: String,
    pub scores: Vec<f64>,
    #[serde(default = "default_orientation")]
    pub orientation: SubjectiveOrientation,
}

fn default_orientation() -> SubjectiveOrientation {
    SubjectiveOrientation::MosHigherBetter
}

/// One entry of a segments JSON array. A segment carries either a single
/// `subjective` vector (with `orientation`) or a list of `variants`, or no
/// subjective data at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub name: String,
    pub image_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subjective: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<SubjectiveOrientation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<VariantSpec>,
}

impl SegmentSpec {
    fn subjective_variants(&self) -> Result<Vec<SubjectiveScores>> {
        let mut out = Vec::new();
        if let Some(scores) = &self.subjective {
            out.push(SubjectiveScores {
                label: "subjective".into(),
                scores: scores.clone(),
                orientation: self.orientation.unwrap_or(SubjectiveOrientation::MosHigherBetter),
            });
        } else if self.orientation.is_some() {
            return Err(Error::Format(format!(
                "segment `{}` has an orientation but no subjective scores",
                self.name
            )));
        }
        out.extend(self.variants.iter().map(|v| SubjectiveScores {
            label: v.label.clone(),
            scores: v.scores.clone(),
            orientation: v.orientation,
        }));
        Ok(out)
    }
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    read_csv(path)
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_segments(path: &Path) -> Result<Vec<SegmentSpec>> {
    read_json(path)
}

/// Scores aligned to the concatenation of the segments' image lists.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedScores {
    pub image_ids: Vec<String>,
    /// Columns keyed by metric (or method) id, sorted by id.
    pub columns: BTreeMap<String, Vec<f64>>,
    pub segments: Vec<DatasetSegment>,
}

/// Lays the long-format rows out in segment order. Every (image, metric)
/// cell must appear exactly once, and every scored image must belong to
/// exactly one segment.
pub fn align(rows: &[ScoreRow], specs: &[SegmentSpec]) -> Result<AlignedScores> {
    let mut position: HashMap<&str, usize> = HashMap::new();
    let mut image_ids = Vec::new();
    let mut segments = Vec::with_capacity(specs.len());
    for spec in specs {
        let offset = image_ids.len();
        for id in &spec.image_ids {
            if position.insert(id.as_str(), image_ids.len()).is_some() {
                return Err(Error::Format(format!("image `{id}` listed in more than one segment slot")));
            }
            image_ids.push(id.clone());
        }
        segments.push(DatasetSegment {
            name: spec.name.clone(),
            offset,
            length: spec.image_ids.len(),
            subjective: spec.subjective_variants()?,
        });
    }
    let n = image_ids.len();
    let mut columns: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for row in rows {
        let &i = position.get(row.image_id.as_str()).ok_or_else(|| {
            Error::Format(format!("image `{}` has scores but belongs to no segment", row.image_id))
        })?;
        if !row.score.is_finite() {
            return Err(Error::Degenerate(format!(
                "non-finite score for image `{}`, metric `{}`",
                row.image_id, row.metric_id
            )));
        }
        let col = columns.entry(row.metric_id.clone()).or_insert_with(|| vec![None; n]);
        if col[i].replace(row.score).is_some() {
            return Err(Error::Format(format!(
                "duplicate score for image `{}`, metric `{}`",
                row.image_id, row.metric_id
            )));
        }
    }
    if columns.is_empty() {
        return Err(Error::Degenerate("score table is empty".into()));
    }
    let columns = columns
        .into_iter()
        .map(|(metric, col)| {
            let filled = col
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.ok_or_else(|| {
                        Error::Format(format!("missing score for image `{}`, metric `{metric}`", image_ids[i]))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((metric, filled))
        })
        .collect::<Result<_>>()?;
    Ok(AlignedScores {
        image_ids,
        columns,
        segments,
    })
}

/// Orientation lookup: overrides first, then the built-in metrics.
pub fn resolve_orientation(metric_id: &str, overrides: &BTreeMap<String, Orientation>) -> Result<Orientation> {
    if let Some(o) = overrides.get(metric_id) {
        return Ok(*o);
    }
    BuiltinMetric::from_id(metric_id)
        .map(|m| m.descriptor().orientation)
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "metric `{metric_id}` is not built in; declare its orientation"
            ))
        })
}

/// Builds the score matrix (columns in metric-id order).
pub fn score_matrix(aligned: &AlignedScores, overrides: &BTreeMap<String, Orientation>) -> Result<ScoreMatrix> {
    let mut metrics = Vec::new();
    let mut cols = Vec::new();
    for (id, col) in &aligned.columns {
        let range = BuiltinMetric::from_id(id)
            .map(|m| m.descriptor().range)
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        metrics.push(FrMetricDescriptor::new(id.clone(), resolve_orientation(id, overrides)?, range));
        cols.push(col.clone());
    }
    ScoreMatrix::new(metrics, cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqbRow {
    pub image_id: String,
    pub sqb: f64,
}

/// Writes `dir/<segment>.csv` for every segment; returns the paths in
/// segment order.
pub fn write_sqb_segments(
    dir: &Path,
    aligned: &AlignedScores,
    outcome: &SqbOutcome,
) -> Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::new();
    for seg in &aligned.segments {
        if seg.name.is_empty() || seg.name.contains(['/', '\\']) || seg.name.starts_with('.') {
            return Err(Error::Format(format!("segment name `{}` is not a safe file name", seg.name)));
        }
        let rows: Vec<SqbRow> = seg
            .range()
            .map(|i| SqbRow {
                image_id: aligned.image_ids[i].clone(),
                sqb: outcome.sqb[i],
            })
            .collect();
        let path = dir.join(format!("{}.csv", seg.name));
        write_csv(&path, &rows)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn write_ksweep(path: &Path, points: &[KSweepPoint]) -> Result<()> {
    write_csv(path, points)
}

/// Parses a comma-separated k list; entries may be numbers or `auto`.
pub fn parse_k_list(text: &str, n: usize) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_k(s, n))
        .collect()
}

/// `auto` resolves through [`crate::sqb::resolve_auto_k`]; otherwise a
/// positive number.
pub fn parse_k(text: &str, n: usize) -> Result<f64> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(crate::sqb::resolve_auto_k(n));
    }
    let k: f64 = text
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("k `{text}` is neither a number nor `auto`")))?;
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidParameter(format!("k must be positive, got {k}")));
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(cells: &[(&str, &str, f64)]) -> Vec<ScoreRow> {
        cells
            .iter()
            .map(|(i, m, s)| ScoreRow {
                image_id: i.to_string(),
                metric_id: m.to_string(),
                score: *s,
            })
            .collect()
    }

    fn specs() -> Vec<SegmentSpec> {
        serde_json::from_str(
            r#"[
                {"name": "anchor", "image_ids": ["b", "a"], "subjective": [2.0, 1.0]},
                {"name": "rest", "image_ids": ["c"], "orientation": "dmos_lower_better", "subjective": [5.0]}
            ]"#,
        )
        .unwrap()
    }

    #[test]
    fn align_orders_by_segment() {
        let r = rows(&[
            ("a", "psnr", 30.0),
            ("b", "psnr", 40.0),
            ("c", "psnr", 20.0),
            ("c", "ssim", 0.5),
            ("a", "ssim", 0.8),
            ("b", "ssim", 0.9),
        ]);
        let al = align(&r, &specs()).unwrap();
        assert_eq!(al.image_ids, vec!["b", "a", "c"]);
        assert_eq!(al.columns["psnr"], vec![40.0, 30.0, 20.0]);
        assert_eq!(al.segments[1].offset, 2);
        assert_eq!(al.segments[1].subjective[0].orientation, SubjectiveOrientation::DmosLowerBetter);
        let m = score_matrix(&al, &BTreeMap::new()).unwrap();
        assert_eq!(m.metrics()[0].id, "psnr");
    }

    #[test]
    fn align_errors_name_the_cell() {
        let missing = rows(&[("a", "psnr", 1.0), ("b", "psnr", 2.0)]);
        let e = align(&missing, &specs()).unwrap_err().to_string();
        assert!(e.contains("`c`") && e.contains("psnr"), "{e}");
        let dup = rows(&[("a", "psnr", 1.0), ("a", "psnr", 1.0)]);
        assert!(align(&dup, &specs()).unwrap_err().to_string().contains("duplicate"));
        let stray = rows(&[("z", "psnr", 1.0)]);
        assert!(align(&stray, &specs()).unwrap_err().to_string().contains("`z`"));
    }

    #[test]
    fn orientation_registry() {
        let mut o = BTreeMap::new();
        assert_eq!(resolve_orientation("psnr", &o).unwrap(), Orientation::HigherBetter);
        assert_eq!(resolve_orientation("gms_deviation", &o).unwrap(), Orientation::LowerBetter);
        assert!(resolve_orientation("vif", &o).is_err());
        o.insert("vif".to_string(), Orientation::HigherBetter);
        assert_eq!(resolve_orientation("vif", &o).unwrap(), Orientation::HigherBetter);
    }

    #[test]
    fn k_parsing() {
        assert_eq!(parse_k("auto", 50).unwrap(), 100.0);
        assert_eq!(parse_k("60", 50).unwrap(), 60.0);
        assert!(parse_k("0", 50).is_err());
        assert!(parse_k("x", 50).is_err());
        assert_eq!(parse_k_list("1, 10,auto", 5).unwrap(), vec![1.0, 10.0, 10.0]);
    }
}
