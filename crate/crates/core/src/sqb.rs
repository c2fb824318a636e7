//! Synthetic Quality Benchmark generation.
//!
//! The pipeline runs over one concatenated score matrix covering every
//! dataset segment:
//!
//! 1. rank each metric column, rank 1 = best after orientation folding,
//!    ties averaged;
//! 2. reciprocal rank fusion `Σ_j 1/(k + r_j(i))`;
//! 3. divide by the maximum fused score;
//! 4. fit the five-parameter logistic on the anchor segment's rows against
//!    its subjective scores, then map every row through it;
//! 5. rescale to `[0, 100]` over the whole vector and split by segment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::metrics::{FrMetricDescriptor, Orientation};
use crate::par;
use crate::simplex::{self, SimplexOptions};

/// Concatenation size at or above which `auto` resolves to the large-corpus
/// constant.
pub const LARGE_SCALE_ROWS: usize = 1_000_000;
pub const LARGE_SCALE_K: f64 = 8.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectiveOrientation {
    MosHigherBetter,
    DmosLowerBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectiveScores {
    pub label: String,
    pub scores: Vec<f64>,
    pub orientation: SubjectiveOrientation,
}

impl SubjectiveScores {
    /// Scores oriented so that larger means better.
    pub fn folded(&self) -> Vec<f64> {
        match self.orientation {
            SubjectiveOrientation::MosHigherBetter => self.scores.clone(),
            SubjectiveOrientation::DmosLowerBetter => self.scores.iter().map(|s| -s).collect(),
        }
    }
}

/// A named contiguous span of the concatenated score vector. A dataset
/// rated under several conditions lists each as its own subjective variant.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSegment {
    pub name: String,
    pub offset: usize,
    pub length: usize,
    pub subjective: Vec<SubjectiveScores>,
}

impl DatasetSegment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.length
    }
}

/// `n` images × `J` metrics, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    metrics: Vec<FrMetricDescriptor>,
    columns: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(metrics: Vec<FrMetricDescriptor>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if metrics.len() != columns.len() || metrics.is_empty() {
            return Err(Error::Dimension(format!(
                "{} metric descriptors for {} columns",
                metrics.len(),
                columns.len()
            )));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("score columns differ in length".into()));
        }
        Ok(Self { metrics, columns })
    }

    pub fn n(&self) -> usize {
        self.columns[0].len()
    }

    pub fn metrics(&self) -> &[FrMetricDescriptor] {
        &self.metrics
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Rows in `order` (a permutation or subset of row indices).
    pub fn select_rows(&self, order: &[usize]) -> ScoreMatrix {
        Self {
            metrics: self.metrics.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| order.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    columns: Vec<Vec<f64>>,
}

impl RankMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.first().map(Vec::len).unwrap_or(0);
        if columns.is_empty() || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("rank columns must be non-empty and equal length".into()));
        }
        if columns.iter().flatten().any(|r| !(*r >= 1.0)) {
            return Err(Error::InvalidParameter("ranks must be >= 1".into()));
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn n(&self) -> usize {
        self.columns[0].len()
    }
}

/// Fractional ranks in ascending order of `values` (smallest gets 1); exact
/// ties receive the mean of the positions they cover.
pub fn fractional_ranks(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Degenerate("NaN in ranked values".into()));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    Ok(ranks)
}

/// Ranks with 1 = best quality under the given orientation.
pub fn rank_scores(scores: &[f64], orientation: Orientation) -> Result<Vec<f64>> {
    match orientation {
        Orientation::LowerBetter => fractional_ranks(scores),
        Orientation::HigherBetter => {
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            fractional_ranks(&neg)
        }
    }
}

pub fn rank_matrix(scores: &ScoreMatrix) -> Result<RankMatrix> {
    let cols: Vec<(usize, &Vec<f64>)> = scores.columns.iter().enumerate().collect();
    let columns = par::try_map(&cols, |(j, c)| rank_scores(c, scores.metrics[*j].orientation))?;
    Ok(RankMatrix { columns })
}

/// Reciprocal rank fusion: `Σ_j 1/(k + r_j(i))`. Larger is better.
pub fn rrf(ranks: &RankMatrix, k: f64) -> Result<Vec<f64>> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::InvalidParameter(format!("rrf constant must be > 0, got {k}")));
    }
    let n = ranks.n();
    let mut out = vec![0.0; n];
    for col in &ranks.columns {
        for (o, r) in out.iter_mut().zip(col) {
            *o += 1.0 / (k + r);
        }
    }
    Ok(out)
}

pub fn normalize_rrf(v: &[f64]) -> Result<Vec<f64>> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() || !(max > 0.0) {
        return Err(Error::Degenerate("rrf vector empty or without positive entries".into()));
    }
    Ok(v.iter().map(|x| x / max).collect())
}

/// Coefficients of
/// `S(R) = β1·(1/2 − 1/(1 + exp(β2·(R − β3)))) + β4·R + β5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
}

impl LogisticParams {
    pub fn new(b: [f64; 5]) -> Self {
        Self {
            beta1: b[0],
            beta2: b[1],
            beta3: b[2],
            beta4: b[3],
            beta5: b[4],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.beta1, self.beta2, self.beta3, self.beta4, self.beta5]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|b| b.is_finite())
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        logistic5(&self.as_array(), r)
    }
}

#[inline]
fn logistic5(b: &[f64; 5], r: f64) -> f64 {
    // β4·R + β5 written as β4·(R − β3) + (β4·β3 + β5): algebraically equal,
    // but keeps nearby R values apart when β4 is large.
    let d = r - b[2];
    b[0] * (0.5 - 1.0 / (1.0 + (b[1] * d).exp())) + b[3] * d + (b[3] * b[2] + b[4])
}

pub fn apply_logistic(params: &LogisticParams, r: &[f64]) -> Vec<f64> {
    let b = params.as_array();
    r.iter().map(|&x| logistic5(&b, x)).collect()
}

/// `S(R) − S(1)` for every `R`. The rescale ignores constant shifts, and
/// the difference form keeps a large `β4`/`β5` pair from cancelling.
fn logistic_offsets(params: &LogisticParams, r: &[f64]) -> Vec<f64> {
    let [b1, b2, b3, b4, _] = params.as_array();
    let sig = |x: f64| 1.0 / (1.0 + (b2 * (x - b3)).exp());
    let s1 = sig(1.0);
    r.iter().map(|&x| b1 * (s1 - sig(x)) + b4 * (x - 1.0)).collect()
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

const FIT_QUANTILES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const MAX_POLISH_RUNS: usize = 6;

/// Least-squares fit of the logistic map by multi-start Nelder–Mead.
///
/// The fit runs in standardized coordinates (`R` and `S` shifted and scaled
/// to unit range) and the coefficients are mapped back exactly. Starts put
/// β3 at the 10/30/50/70/90 % quantiles of `R`, β1 at the range of `S`,
/// β2 at ±4/range(R) with the sign of the data's slope, and β4, β5 on the
/// least-squares line. Each start is re-run from its optimum until the
/// SSE stops improving; the best start wins.
pub fn fit_logistic(r: &[f64], s: &[f64]) -> Result<LogisticParams> {
    if r.len() != s.len() {
        return Err(Error::Dimension(format!("|R| = {} but |S| = {}", r.len(), s.len())));
    }
    if r.len() < 10 {
        return Err(Error::Degenerate(format!("need at least 10 points, got {}", r.len())));
    }
    if r.iter().chain(s).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite input to logistic fit".into()));
    }
    let (r_min, r_max) = min_max(r);
    let (s_min, s_max) = min_max(s);
    let r_span = r_max - r_min;
    if !(r_span > 0.0) {
        return Err(Error::Degenerate("constant R in logistic fit".into()));
    }
    let s_span = if s_max > s_min { s_max - s_min } else { 1.0 };
    let z: Vec<f64> = r.iter().map(|v| (v - r_min) / r_span).collect();
    let t: Vec<f64> = s.iter().map(|v| (v - s_min) / s_span).collect();

    let sse = |b: &[f64]| -> f64 {
        let b = [b[0], b[1], b[2], b[3], b[4]];
        z.iter()
            .zip(&t)
            .map(|(x, y)| {
                let e = y - logistic5(&b, *x);
                e * e
            })
            .sum()
    };

    let n = z.len() as f64;
    let (mz, mt) = (z.iter().sum::<f64>() / n, t.iter().sum::<f64>() / n);
    let szz: f64 = z.iter().map(|x| (x - mz).powi(2)).sum();
    let szt: f64 = z.iter().zip(&t).map(|(x, y)| (x - mz) * (y - mt)).sum();
    let slope = szt / szz;
    let intercept = mt - slope * mz;
    let sign = if slope < 0.0 { -1.0 } else { 1.0 };
    let mut sorted = z.clone();
    sorted.sort_by(f64::total_cmp);

    let starts: Vec<[f64; 5]> = FIT_QUANTILES
        .iter()
        .map(|&p| [1.0, 4.0 * sign, quantile_sorted(&sorted, p), slope, intercept])
        .collect();

    let fits = par::map(&starts, |x0| {
        let mut x = x0.to_vec();
        let mut best = sse(&x);
        for _ in 0..MAX_POLISH_RUNS {
            let steps: Vec<f64> = x.iter().map(|v| 0.1 * v.abs() + 0.05).collect();
            let res = simplex::minimize(sse, &x, &steps, SimplexOptions::default());
            let improved = res.value < best * (1.0 - 1e-10) - 1e-300;
            if res.value <= best {
                x = res.x;
                best = res.value;
            }
            if !improved {
                break;
            }
        }
        (x, best)
    });
    let (b, _) = fits
        .into_iter()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Fit("every start diverged".into()))?;

    let params = LogisticParams::new([
        s_span * b[0],
        b[1] / r_span,
        r_min + r_span * b[2],
        s_span * b[3] / r_span,
        s_span * b[4] + s_min - s_span * b[3] * r_min / r_span,
    ]);
    if !params.is_finite() {
        return Err(Error::Fit(format!("non-finite coefficients {params:?}")));
    }
    Ok(params)
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// `100·(Q − min Q)/max(Q − min Q)`.
pub fn rescale_0_100(q: &[f64]) -> Result<Vec<f64>> {
    if q.is_empty() {
        return Err(Error::Degenerate("empty vector".into()));
    }
    let (lo, _) = min_max(q);
    let shifted: Vec<f64> = q.iter().map(|v| v - lo).collect();
    let top = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(top > 0.0) || !top.is_finite() {
        return Err(Error::Degenerate("degenerate range: Q is constant".into()));
    }
    Ok(shifted.iter().map(|v| 100.0 * (v / top)).collect())
}

/// RRF constant for `auto`: `2·n` at desk scale, 8·10⁶ from a million
/// rows up.
pub fn resolve_auto_k(n: usize) -> f64 {
    if n >= LARGE_SCALE_ROWS {
        LARGE_SCALE_K
    } else {
        2.0 * n as f64
    }
}

/// Checks that segments are disjoint and tile `0..n` exactly.
pub fn validate_tiling(segments: &[DatasetSegment], n: usize) -> Result<()> {
    let mut spans: Vec<(usize, usize, &str)> = segments
        .iter()
        .map(|s| (s.offset, s.length, s.name.as_str()))
        .collect();
    spans.sort();
    let mut next = 0;
    for (offset, length, name) in spans {
        if offset != next {
            return Err(Error::Dimension(format!(
                "segment `{name}` starts at {offset}, expected {next}"
            )));
        }
        next = offset + length;
    }
    if next != n {
        return Err(Error::Dimension(format!("segments cover {next} rows, matrix has {n}")));
    }
    for s in segments {
        if let Some(v) = s.subjective.iter().find(|v| v.scores.len() != s.length) {
            return Err(Error::Dimension(format!(
                "segment `{}` variant `{}` has {} scores for {} rows",
                s.name,
                v.label,
                v.scores.len(),
                s.length
            )));
        }
    }
    let mut names: Vec<&str> = segments.iter().map(|s| s.name.as_str()).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Format("duplicate segment names".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqbOutcome {
    pub k: f64,
    pub params: LogisticParams,
    pub normalized_rrf: Vec<f64>,
    /// Full concatenated SQB vector.
    pub sqb: Vec<f64>,
    /// Per-segment slices, in declaration order.
    pub segments: Vec<(String, Vec<f64>)>,
}

impl SqbOutcome {
    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Runs the whole fusion pipeline over the concatenated score matrix.
pub fn generate_sqb(
    segments: &[DatasetSegment],
    scores: &ScoreMatrix,
    k: f64,
    anchor: &str,
) -> Result<SqbOutcome> {
    let n = scores.n();
    validate_tiling(segments, n)?;
    let anchor_seg = segments
        .iter()
        .find(|s| s.name == anchor)
        .ok_or_else(|| Error::InvalidParameter(format!("anchor segment `{anchor}` not found")))?;
    let anchor_subj = anchor_seg.subjective.first().ok_or_else(|| {
        Error::InvalidParameter(format!("anchor segment `{anchor}` has no subjective scores"))
    })?;

    let ranks = rank_matrix(scores)?;
    let fused = rrf(&ranks, k)?;
    let normalized = normalize_rrf(&fused)?;
    let params = fit_logistic(&normalized[anchor_seg.range()], &anchor_subj.folded())?;
    let sqb = rescale_0_100(&logistic_offsets(&params, &normalized))?;
    let per_segment = segments
        .iter()
        .map(|s| (s.name.clone(), sqb[s.range()].to_vec()))
        .collect();
    Ok(SqbOutcome {
        k,
        params,
        normalized_rrf: normalized,
        sqb,
        segments: per_segment,
    })
}

/// Length-weighted mean SRCC of the SQB against every subjective variant.
pub fn weighted_srcc(segments: &[DatasetSegment], outcome: &SqbOutcome) -> Result<f64> {
    let mut values = Vec::new();
    let mut weights = Vec::new();
    for seg in segments {
        for variant in &seg.subjective {
            let pred = &outcome.sqb[seg.range()];
            values.push(eval::srcc(pred, &variant.folded())?);
            weights.push(seg.length as f64);
        }
    }
    eval::weighted_average(&values, &weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSweepPoint {
    pub k: f64,
    pub wa_srcc: f64,
}

/// Regenerates the SQB for every `k` and reports the weighted SRCC.
pub fn k_sweep(
    segments: &[DatasetSegment],
    scores: &ScoreMatrix,
    ks: &[f64],
    anchor: &str,
) -> Result<Vec<KSweepPoint>> {
    if !segments.iter().any(|s| !s.subjective.is_empty()) {
        return Err(Error::InvalidParameter("no segment has subjective scores".into()));
    }
    par::try_map(ks, |&k| {
        let outcome = generate_sqb(segments, scores, k, anchor)?;
        Ok(KSweepPoint {
            k,
            wa_srcc: weighted_srcc(segments, &outcome)?,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn rank_examples() {
        let s = [0.9, 0.5, 0.7];
        assert_eq!(rank_scores(&s, Orientation::HigherBetter).unwrap(), vec![1.0, 3.0, 2.0]);
        assert_eq!(rank_scores(&s, Orientation::LowerBetter).unwrap(), vec![3.0, 1.0, 2.0]);
        assert_eq!(
            rank_scores(&[0.5, 0.5, 0.1], Orientation::HigherBetter).unwrap(),
            vec![1.5, 1.5, 3.0]
        );
        assert!(rank_scores(&[0.1, f64::NAN], Orientation::HigherBetter).is_err());
    }

    #[test]
    fn rrf_examples() {
        let ranks = RankMatrix::from_columns(vec![vec![1.0, 2.0, 3.0], vec![2.0, 1.0, 3.0]]).unwrap();
        let v = rrf(&ranks, 60.0).unwrap();
        assert_eq!(v[0], v[1]);
        assert!((v[0] - (1.0 / 61.0 + 1.0 / 62.0)).abs() < 1e-15);
        assert!((v[2] - 2.0 / 63.0).abs() < 1e-15);
        assert!(v[2] < v[0]);
        assert!(rrf(&ranks, 0.0).is_err());
        assert!(rrf(&ranks, -1.0).is_err());
    }

    #[test]
    fn single_metric_rrf_follows_its_ranks() {
        let ranks = vec![3.0, 1.0, 4.0, 2.0, 5.0];
        for k in [0.5, 60.0, 1e6] {
            let v = rrf(&RankMatrix::from_columns(vec![ranks.clone()]).unwrap(), k).unwrap();
            let back = rank_scores(&v, Orientation::HigherBetter).unwrap();
            assert_eq!(back, ranks);
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_rrf(&[2.0, 4.0]).unwrap(), vec![0.5, 1.0]);
        assert_eq!(normalize_rrf(&[0.3]).unwrap(), vec![1.0]);
        assert!(normalize_rrf(&[]).is_err());
        assert!(normalize_rrf(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn apply_logistic_examples() {
        let r = [0.0, 0.25, 0.9, 3.0];
        let id = LogisticParams::new([0.0, 1.0, 0.0, 1.0, 0.0]);
        assert!(close(&apply_logistic(&id, &r), &r, 1e-15));
        let c = LogisticParams::new([0.0, 1.0, 0.0, 0.0, 2.5]);
        assert!(apply_logistic(&c, &r).iter().all(|&q| q == 2.5));
        let p = LogisticParams::new([1.3, 5.0, 0.4, 0.7, -2.0]);
        assert!((p.eval(0.4) - (0.7 * 0.4 - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn logistic_monotone_by_sign_analysis() {
        // dS/dR = β1·β2·e/(1+e)² + β4; with β1 ≤ 0 < β2 the first term is
        // ≤ 0, so monotone increase needs β4 to dominate. Spot-check the
        // non-decreasing direction with β1 = 0 and β4 ≥ 0, and a case with
        // β1 < 0 where |β1·β2|/4 ≤ β4.
        for b in [[0.0, 3.0, 0.5, 0.2, 1.0], [-0.4, 2.0, 0.5, 0.25, 0.0]] {
            let p = LogisticParams::new(b);
            let r: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
            let q = apply_logistic(&p, &r);
            assert!(q.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn fit_recovers_generating_curve() {
        let truth = LogisticParams::new([1.0, 8.0, 0.5, 0.2, 3.0]);
        let r: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
        let s = apply_logistic(&truth, &r);
        let fit = fit_logistic(&r, &s).unwrap();
        let pred = apply_logistic(&fit, &r);
        let rmse = (pred.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0).sqrt();
        assert!(rmse < 1e-6, "rmse {rmse}, params {fit:?}");
    }

    #[test]
    fn fit_reproduces_linear_data() {
        let r: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect();
        let s: Vec<f64> = r.iter().map(|x| 2.0 * x + 1.0).collect();
        let fit = fit_logistic(&r, &s).unwrap();
        let pred = apply_logistic(&fit, &r);
        let rmse = (pred.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 60.0).sqrt();
        assert!(rmse < 1e-8, "rmse {rmse}");
    }

    #[test]
    fn fit_rejects_bad_input() {
        let r = vec![0.5; 20];
        let s: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(matches!(fit_logistic(&r, &s), Err(Error::Degenerate(_))));
        assert!(fit_logistic(&s[..5], &s[..5]).is_err());
        assert!(fit_logistic(&s, &s[..19]).is_err());
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_0_100(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 50.0, 100.0]);
        assert!(rescale_0_100(&[3.0, 3.0]).is_err());
        let q = [0.3, -1.2, 4.4, 2.0];
        let a = rescale_0_100(&q).unwrap();
        let b = rescale_0_100(&q.map(|v| 3.5 * v - 7.0)).unwrap();
        assert!(close(&a, &b, 1e-12));
    }

    #[test]
    fn auto_k() {
        assert_eq!(resolve_auto_k(500), 1000.0);
        assert_eq!(resolve_auto_k(3_530_595), LARGE_SCALE_K);
    }

    #[test]
    fn large_scale_configuration_is_consistent() {
        // dataset column sizes of the twelve concatenated corpora
        let sizes = [32912usize, 32912, 3455760, 779, 3000, 866, 552, 690, 1600, 324, 450, 750];
        let total: usize = sizes.iter().sum();
        assert_eq!(total, 3_530_595);
        let mut offset = 0;
        let segs: Vec<DatasetSegment> = sizes
            .iter()
            .enumerate()
            .map(|(i, &len)| {
                let s = DatasetSegment {
                    name: format!("d{i}"),
                    offset,
                    length: len,
                    subjective: vec![],
                };
                offset += len;
                s
            })
            .collect();
        validate_tiling(&segs, total).unwrap();
        assert_eq!(resolve_auto_k(total), 8.0e6);
    }

    fn mos(scores: Vec<f64>) -> Vec<SubjectiveScores> {
        vec![SubjectiveScores {
            label: "mos".into(),
            scores,
            orientation: SubjectiveOrientation::MosHigherBetter,
        }]
    }

    #[test]
    fn identical_metrics_single_anchor_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<f64> = (0..40).map(|_| rng.random()).collect();
        let scores = ScoreMatrix::new(
            vec![
                FrMetricDescriptor::new("a", Orientation::HigherBetter, (0.0, 1.0)),
                FrMetricDescriptor::new("b", Orientation::HigherBetter, (0.0, 1.0)),
            ],
            vec![base.clone(), base.clone()],
        )
        .unwrap();
        let seg = DatasetSegment {
            name: "only".into(),
            offset: 0,
            length: 40,
            subjective: mos(base.iter().map(|v| 1.0 + 4.0 * v).collect()),
        };
        let out = generate_sqb(&[seg], &scores, 80.0, "only").unwrap();
        let r1 = rank_scores(&out.sqb, Orientation::HigherBetter).unwrap();
        let r2 = rank_scores(&base, Orientation::HigherBetter).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(out.sqb.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(out.sqb.iter().copied().fold(f64::NEG_INFINITY, f64::max), 100.0);
    }

    #[test]
    fn pipeline_errors() {
        let scores = ScoreMatrix::new(
            vec![FrMetricDescriptor::new("a", Orientation::HigherBetter, (0.0, 1.0))],
            vec![(0..20).map(|i| i as f64).collect()],
        )
        .unwrap();
        let seg = |name: &str, offset, length, subj: bool| DatasetSegment {
            name: name.into(),
            offset,
            length,
            subjective: if subj { mos((0..length).map(|i| i as f64).collect()) } else { vec![] },
        };
        // gap
        assert!(generate_sqb(&[seg("a", 0, 10, true), seg("b", 11, 9, false)], &scores, 60.0, "a").is_err());
        // short
        assert!(generate_sqb(&[seg("a", 0, 10, true)], &scores, 60.0, "a").is_err());
        // anchor without subjective data
        assert!(generate_sqb(&[seg("a", 0, 10, false), seg("b", 10, 10, true)], &scores, 60.0, "a").is_err());
        // unknown anchor
        assert!(generate_sqb(&[seg("a", 0, 20, true)], &scores, 60.0, "zzz").is_err());
        assert!(generate_sqb(&[seg("a", 0, 20, true)], &scores, 60.0, "a").is_ok());
    }

    #[test]
    fn dmos_anchor_is_folded() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let scores = ScoreMatrix::new(
            vec![FrMetricDescriptor::new("a", Orientation::HigherBetter, (0.0, 1.0))],
            vec![x.clone()],
        )
        .unwrap();
        let seg = DatasetSegment {
            name: "d".into(),
            offset: 0,
            length: 30,
            subjective: vec![SubjectiveScores {
                label: "dmos".into(),
                scores: x.iter().map(|v| 50.0 - 40.0 * v).collect(),
                orientation: SubjectiveOrientation::DmosLowerBetter,
            }],
        };
        let out = generate_sqb(&[seg], &scores, 60.0, "d").unwrap();
        // best item (x = 1) must end up at SQB 100
        assert_eq!(out.sqb[29], 100.0);
        assert_eq!(out.sqb[0], 0.0);
    }

    fn arb_ranks() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..50, 1usize..6).prop_flat_map(|(n, j)| {
            prop::collection::vec(Just((1..=n).map(|r| r as f64).collect::<Vec<_>>()).prop_shuffle(), j)
        })
    }

    proptest! {
        #[test]
        fn rank_columns_sum(values in prop::collection::vec(0u8..6, 1..60)) {
            let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
            let r = rank_scores(&v, Orientation::HigherBetter).unwrap();
            let n = v.len() as f64;
            prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        }

        #[test]
        fn improving_a_rank_raises_rrf(cols in arb_ranks(), item in any::<prop::sample::Index>(),
                                        col in any::<prop::sample::Index>(), k in 0.5f64..1e4) {
            let m = RankMatrix::from_columns(cols.clone()).unwrap();
            let i = item.index(m.n());
            let j = col.index(cols.len());
            prop_assume!(cols[j][i] > 1.0);
            let before = rrf(&m, k).unwrap()[i];
            let mut better = cols.clone();
            better[j][i] -= 1.0;
            let after = rrf(&RankMatrix::from_columns(better).unwrap(), k).unwrap()[i];
            prop_assert!(after > before);
        }

        #[test]
        fn large_k_matches_borda(cols in arb_ranks()) {
            let m = RankMatrix::from_columns(cols.clone()).unwrap();
            let n = m.n();
            let j = cols.len();
            // brute force: items ordered by ascending rank sum
            let borda: Vec<f64> = (0..n).map(|i| cols.iter().map(|c| c[i]).sum()).collect();
            let k = 100.0 * (n * j) as f64;
            let v = rrf(&m, k).unwrap();
            for a in 0..n {
                for b in 0..n {
                    if borda[a] < borda[b] {
                        prop_assert!(v[a] > v[b], "items {} {} borda {} {}", a, b, borda[a], borda[b]);
                    }
                }
            }
        }

        #[test]
        fn normalize_keeps_argmax(v in prop::collection::vec(0.001f64..10.0, 1..40)) {
            let nv = normalize_rrf(&v).unwrap();
            let am = |x: &[f64]| x.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            prop_assert_eq!(am(&v), am(&nv));
            prop_assert_eq!(nv[am(&nv)], 1.0);
        }
    }
}
