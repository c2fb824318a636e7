//! Evaluation statistics: mapped PLCC, SRCC, weighted aggregates, and
//! residual-variance F-tests with a kurtosis Gaussianity gate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::par;
use crate::sqb::{apply_logistic, fit_logistic, fractional_ranks, LogisticParams};

pub const DEFAULT_ALPHA: f64 = 0.05;
/// Residuals count as Gaussian when their kurtosis falls in this range.
pub const GAUSSIAN_KURTOSIS: (f64, f64) = (2.0, 4.0);

fn check_lengths(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::Degenerate(format!("need at least {min} samples, got {}", x.len())));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation.
pub fn plcc_raw(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 3)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant input to correlation".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson correlation of average-tie ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 3)?;
    plcc_raw(&fractional_ranks(x)?, &fractional_ranks(y)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappedPlcc {
    pub plcc: f64,
    pub params: LogisticParams,
}

/// PLCC after the five-parameter logistic mapping of `objective` onto
/// `subjective`. Fit failures surface as [`Error::Fit`].
pub fn plcc_mapped(objective: &[f64], subjective: &[f64]) -> Result<MappedPlcc> {
    check_lengths(objective, subjective, 3)?;
    let params = fit_logistic(objective, subjective).map_err(|e| match e {
        Error::Fit(m) => Error::Fit(m),
        other => Error::Fit(other.to_string()),
    })?;
    let mapped = apply_logistic(&params, objective);
    Ok(MappedPlcc {
        plcc: plcc_raw(&mapped, subjective)?,
        params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub plcc: f64,
    pub srcc: f64,
    pub n: usize,
    pub params: LogisticParams,
}

pub fn evaluate(objective: &[f64], subjective: &[f64]) -> Result<EvalResult> {
    let mapped = plcc_mapped(objective, subjective)?;
    Ok(EvalResult {
        plcc: mapped.plcc,
        srcc: srcc(objective, subjective)?,
        n: objective.len(),
        params: mapped.params,
    })
}

/// `Σ wᵢvᵢ / Σ wᵢ`.
pub fn weighted_average(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("weighted average of nothing".into()));
    }
    if values.len() != weights.len() {
        return Err(Error::Dimension("values and weights differ in length".into()));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidParameter("weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    Ok(values.iter().zip(weights).map(|(v, w)| (w / total) * v).sum())
}

/// Subjective scores minus the logistic-mapped objective scores.
pub fn residuals(objective: &[f64], subjective: &[f64]) -> Result<Vec<f64>> {
    let mapped = plcc_mapped(objective, subjective)?;
    let pred = apply_logistic(&mapped.params, objective);
    Ok(subjective.iter().zip(&pred).map(|(s, p)| s - p).collect())
}

/// Population kurtosis `m4/m2²` (3 for a Gaussian).
pub fn kurtosis(v: &[f64]) -> Result<f64> {
    if v.len() < 4 {
        return Err(Error::Degenerate(format!("kurtosis needs 4 samples, got {}", v.len())));
    }
    let m = mean(v);
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in v {
        let d2 = (x - m) * (x - m);
        m2 += d2;
        m4 += d2 * d2;
    }
    let n = v.len() as f64;
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 == 0.0 {
        return Err(Error::Degenerate("constant input to kurtosis".into()));
    }
    Ok(m4 / (m2 * m2))
}

pub fn is_gaussian(kurt: f64) -> bool {
    (GAUSSIAN_KURTOSIS.0..=GAUSSIAN_KURTOSIS.1).contains(&kurt)
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// CDF of the F distribution with `(d1, d2)` degrees of freedom, through the
/// regularized incomplete beta function.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    beta_reg(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))
}

/// Lower-tail critical value: the `x` with `F_cdf(x) = alpha`.
pub fn f_critical_lower(alpha: f64, d1: f64, d2: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while f_cdf(hi, d1, d2) < alpha {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f_cdf(mid, d1, d2) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictValue {
    Better,
    Indistinguishable,
    Worse,
}

impl VerdictValue {
    pub fn flipped(self) -> Self {
        match self {
            VerdictValue::Better => VerdictValue::Worse,
            VerdictValue::Worse => VerdictValue::Better,
            VerdictValue::Indistinguishable => VerdictValue::Indistinguishable,
        }
    }

    /// `1`, `-` or `0`.
    pub fn symbol(self) -> &'static str {
        match self {
            VerdictValue::Better => "1",
            VerdictValue::Indistinguishable => "-",
            VerdictValue::Worse => "0",
        }
    }
}

impl fmt::Display for VerdictValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: VerdictValue,
    /// Kurtosis gate outcome for (A, B); informational, never blocking.
    pub gaussian_ok: (bool, bool),
    pub kurtosis: (f64, f64),
    pub f_statistic: f64,
}

/// Two one-sided (left-tailed) F-tests on residual variances, one per
/// ordering. A is better when `var(A)/var(B)` falls below the lower
/// `alpha` quantile, worse when the reversed ratio does.
pub fn variance_f_test(res_a: &[f64], res_b: &[f64], alpha: f64) -> Result<Verdict> {
    if res_a.len() < 2 || res_b.len() < 2 {
        return Err(Error::Degenerate("F-test needs at least two residuals per side".into()));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 0.5)")));
    }
    let (va, vb) = (sample_variance(res_a), sample_variance(res_b));
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("zero residual variance".into()));
    }
    let (da, db) = ((res_a.len() - 1) as f64, (res_b.len() - 1) as f64);
    let f_ab = va / vb;
    let a_better = f_cdf(f_ab, da, db) < alpha;
    let b_better = f_cdf(vb / va, db, da) < alpha;
    let value = match (a_better, b_better) {
        (true, false) => VerdictValue::Better,
        (false, true) => VerdictValue::Worse,
        _ => VerdictValue::Indistinguishable,
    };
    let (ka, kb) = (kurtosis(res_a)?, kurtosis(res_b)?);
    Ok(Verdict {
        value,
        gaussian_ok: (is_gaussian(ka), is_gaussian(kb)),
        kurtosis: (ka, kb),
        f_statistic: f_ab,
    })
}

/// Residual vectors keyed by `(method, dataset)`.
pub type ResidualTable = BTreeMap<(String, String), Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMatrix {
    pub designated: String,
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// `cells[m][d]`: verdict of the designated method against `methods[m]`
    /// on `datasets[d]`.
    pub cells: Vec<Vec<Verdict>>,
}

impl SignificanceMatrix {
    /// Share of residual vectors (method × dataset, counted once each) that
    /// pass the kurtosis gate.
    pub fn gaussian_pass_rate(&self, table: &ResidualTable) -> f64 {
        let total = table.len();
        let pass = table
            .values()
            .filter(|r| kurtosis(r).map(is_gaussian).unwrap_or(false))
            .count();
        pass as f64 / total.max(1) as f64
    }

    /// CSV with one row per method and one `1`/`-`/`0` column per dataset.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string()];
        header.extend(self.datasets.iter().cloned());
        w.write_record(&header)?;
        for (m, row) in self.methods.iter().zip(&self.cells) {
            let mut rec = vec![m.clone()];
            rec.extend(row.iter().map(|v| v.value.symbol().to_string()));
            w.write_record(&rec)?;
        }
        w.into_inner()
            .map_err(|e| Error::Format(format!("csv flush: {e}")))
    }
}

/// Verdicts of `designated` against every method (itself included) on
/// every dataset. Any missing cell is an error listing all gaps.
pub fn significance_matrix(
    table: &ResidualTable,
    designated: &str,
    alpha: f64,
) -> Result<SignificanceMatrix> {
    let methods: BTreeSet<String> = table.keys().map(|(m, _)| m.clone()).collect();
    let datasets: BTreeSet<String> = table.keys().map(|(_, d)| d.clone()).collect();
    if !methods.contains(designated) {
        return Err(Error::InvalidParameter(format!(
            "designated method `{designated}` has no residuals"
        )));
    }
    let missing: Vec<String> = methods
        .iter()
        .flat_map(|m| datasets.iter().map(move |d| (m, d)))
        .filter(|(m, d)| !table.contains_key(&((*m).clone(), (*d).clone())))
        .map(|(m, d)| format!("{m}/{d}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "missing residual cells: {}",
            missing.join(", ")
        )));
    }
    let methods: Vec<String> = methods.into_iter().collect();
    let datasets: Vec<String> = datasets.into_iter().collect();
    let cells = par::try_map(&methods, |m| {
        datasets
            .iter()
            .map(|d| {
                let a = &table[&(designated.to_string(), d.clone())];
                let b = &table[&(m.clone(), d.clone())];
                variance_f_test(a, b, alpha)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SignificanceMatrix {
        designated: designated.to_string(),
        methods,
        datasets,
        cells,
    })
}

/// Per-method, per-dataset accuracy and monotonicity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub method: String,
    pub dataset: String,
    pub n: usize,
    pub plcc: f64,
    pub srcc: f64,
    pub kurtosis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedScore {
    pub method: String,
    pub wa_plcc: f64,
    pub wa_srcc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<DatasetScore>,
    pub weighted: Vec<WeightedScore>,
    pub residuals: ResidualTable,
    pub matrix: Option<SignificanceMatrix>,
}

impl EvalReport {
    /// Share of residual vectors whose kurtosis passes the gate.
    pub fn gaussian_pass_rate(&self) -> f64 {
        let pass = self.rows.iter().filter(|r| is_gaussian(r.kurtosis)).count();
        pass as f64 / self.rows.len().max(1) as f64
    }
}

/// Evaluates every method column against every subjective variant of every
/// segment. Variants become datasets named `segment` (single variant) or
/// `segment/label`; weights are segment lengths. With `designated`, the
/// significance matrix of that method against all others is included.
pub fn evaluate_methods(
    predictions: &BTreeMap<String, Vec<f64>>,
    segments: &[crate::sqb::DatasetSegment],
    designated: Option<&str>,
    alpha: f64,
) -> Result<EvalReport> {
    let mut datasets = Vec::new();
    for seg in segments {
        for v in &seg.subjective {
            let name = if seg.subjective.len() == 1 {
                seg.name.clone()
            } else {
                format!("{}/{}", seg.name, v.label)
            };
            datasets.push((name, seg.range(), v.folded()));
        }
    }
    if datasets.is_empty() {
        return Err(Error::InvalidParameter("no segment has subjective scores".into()));
    }
    let jobs: Vec<(&String, &Vec<f64>, usize)> = predictions
        .iter()
        .flat_map(|(m, col)| (0..datasets.len()).map(move |d| (m, col, d)))
        .collect();
    let cells = par::try_map(&jobs, |&(method, col, d)| {
        let (name, range, subj) = &datasets[d];
        let obj = &col[range.clone()];
        let res = evaluate(obj, subj)?;
        let pred = apply_logistic(&res.params, obj);
        let resid: Vec<f64> = subj.iter().zip(&pred).map(|(s, p)| s - p).collect();
        let row = DatasetScore {
            method: method.clone(),
            dataset: name.clone(),
            n: res.n,
            plcc: res.plcc,
            srcc: res.srcc,
            kurtosis: kurtosis(&resid)?,
        };
        Ok((row, resid))
    })?;
    let mut rows = Vec::with_capacity(cells.len());
    let mut residuals = ResidualTable::new();
    for (row, resid) in cells {
        residuals.insert((row.method.clone(), row.dataset.clone()), resid);
        rows.push(row);
    }
    rows.sort_by(|a, b| (&a.method, &a.dataset).cmp(&(&b.method, &b.dataset)));
    let weighted = predictions
        .keys()
        .map(|m| {
            let mine: Vec<&DatasetScore> = rows.iter().filter(|r| &r.method == m).collect();
            let w: Vec<f64> = mine.iter().map(|r| r.n as f64).collect();
            let plcc: Vec<f64> = mine.iter().map(|r| r.plcc).collect();
            let srcc: Vec<f64> = mine.iter().map(|r| r.srcc).collect();
            Ok(WeightedScore {
                method: m.clone(),
                wa_plcc: weighted_average(&plcc, &w)?,
                wa_srcc: weighted_average(&srcc, &w)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = designated
        .map(|d| significance_matrix(&residuals, d, alpha))
        .transpose()?;
    Ok(EvalReport {
        rows,
        weighted,
        residuals,
        matrix,
    })
}
