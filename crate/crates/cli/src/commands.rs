use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use iqa_forge::builder::{self, BuildOptions, ManifestRecord};
use iqa_forge::calibrate::{self, CalibrationEntry, CalibrationTable, LevelTable, STAGE2_LEVELS};
use iqa_forge::distort::DistortionKind;
use iqa_forge::eval;
use iqa_forge::fsutil::{atomic_write, read_csv, write_csv, write_json};
use iqa_forge::io::{self, ScoreRow, SegmentSpec};
use iqa_forge::metrics::{BuiltinMetric, FrMetric, Orientation};
use iqa_forge::pixels::load_image;
use iqa_forge::sqb;
use iqa_forge::synthetic::{BenchmarkConfig, SyntheticBenchmark};
use iqa_forge::par;

use crate::{
    BuildArgs, CalibrateArgs, Cli, Command, EvalArgs, FusionInputs, KsweepArgs, ScoreArgs, SqbArgs,
    SummarizeArgs, SynthArgs,
};

/// Echo of the resolved configuration, written as `run.json`.
#[derive(Debug, Serialize)]
struct RunConfig {
    command: &'static str,
    inputs: BTreeMap<&'static str, String>,
    out: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    anchor: Option<String>,
    workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed_root: Option<u64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    extra: BTreeMap<&'static str, Value>,
}

impl RunConfig {
    fn new(command: &'static str, out: &Path) -> Self {
        Self {
            command,
            inputs: BTreeMap::new(),
            out: out.display().to_string(),
            k: None,
            anchor: None,
            workers: par::current_workers(),
            seed_root: None,
            extra: BTreeMap::new(),
        }
    }

    fn input(mut self, name: &'static str, path: &Path) -> Self {
        self.inputs.insert(name, path.display().to_string());
        self
    }
}

struct Ctx {
    force: bool,
}

impl Ctx {
    /// Creates `out` and refuses to clobber any of `files` unless forced.
    fn prepare(&self, out: &Path, files: &[&str]) -> Result<()> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        if !self.force {
            for f in files.iter().chain(std::iter::once(&"run.json")) {
                let p = out.join(f);
                if p.exists() {
                    bail!("{} exists; pass --force to overwrite", p.display());
                }
            }
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    let ctx = Ctx { force: cli.force };
    par::with_workers(cli.workers, || dispatch(&ctx, cli.command))?
}

fn dispatch(ctx: &Ctx, command: Command) -> Result<()> {
    match command {
        Command::Calibrate(a) => cmd_calibrate(ctx, a),
        Command::Build(a) => cmd_build(ctx, a),
        Command::Score(a) => cmd_score(ctx, a),
        Command::Sqb(a) => cmd_sqb(ctx, a),
        Command::Ksweep(a) => cmd_ksweep(ctx, a),
        Command::Eval(a) => cmd_eval(ctx, a),
        Command::Summarize(a) => cmd_summarize(ctx, a),
        Command::Synth(a) => cmd_synth(ctx, a),
    }
}

fn finish(out: &Path, cfg: &RunConfig) -> Result<()> {
    write_json(&out.join("run.json"), cfg)?;
    Ok(())
}

fn base_dir(file: &Path) -> PathBuf {
    file.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Reads a manifest and makes every relative `path` absolute against the
/// manifest's directory.
fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let mut rows: Vec<ManifestRecord> =
        read_csv(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let base = std::path::absolute(base_dir(path))?;
    for r in &mut rows {
        r.path = r.resolve(&base).to_string_lossy().into_owned();
    }
    Ok(rows)
}

#[derive(Serialize)]
struct ContentRow<'a> {
    ref_id: &'a str,
    si: f64,
    cf: f64,
}

fn cmd_calibrate(ctx: &Ctx, a: CalibrateArgs) -> Result<()> {
    if !(2..=*STAGE2_LEVELS.end()).contains(&a.max_level) {
        bail!("--max-level must lie in 2..={}", STAGE2_LEVELS.end());
    }
    ctx.prepare(&a.out, &["calibration.csv", "references.csv", "content.csv"])?;
    let refs = builder::references_from_dir(&a.refs)?;
    if refs.is_empty() {
        bail!("no PNG/PPM/PGM references in {}", a.refs.display());
    }
    let images = par::try_map(&refs, |r| {
        load_image(&r.path).map(|img| (r.ref_id.clone(), img))
    })?;
    let entries = calibrate::calibrate_all(
        &images,
        &DistortionKind::ALL,
        &LevelTable::standard(),
        1..=a.max_level,
        a.seed,
    )?;
    let content: Vec<ContentRow> = images
        .iter()
        .map(|(id, img)| {
            let d = builder::content_descriptors(img);
            ContentRow { ref_id: id, si: d.si, cf: d.cf }
        })
        .collect();
    write_csv(&a.out.join("calibration.csv"), &entries)?;
    write_csv(&a.out.join("references.csv"), &refs)?;
    write_csv(&a.out.join("content.csv"), &content)?;

    let clamped = entries.iter().filter(|e| e.clamped).count();
    if clamped > 0 {
        eprintln!("note: {clamped} of {} calibration entries are clamped at the domain edge", entries.len());
    }
    let mut cfg = RunConfig::new("calibrate", &a.out).input("refs", &a.refs);
    cfg.seed_root = Some(a.seed);
    cfg.extra.insert("max_level", json!(a.max_level));
    cfg.extra.insert("clamped_entries", json!(clamped));
    finish(&a.out, &cfg)
}

fn cmd_build(ctx: &Ctx, a: BuildArgs) -> Result<()> {
    ctx.prepare(&a.out, &["manifest.csv"])?;
    let refs = read_manifest(&a.references)?;
    if let Some(r) = refs.iter().find(|r| r.stage != 0) {
        bail!("reference manifest row `{}` is not stage 0", r.image_id);
    }
    let entries: Vec<CalibrationEntry> = read_csv(&a.calibration)
        .with_context(|| format!("reading calibration {}", a.calibration.display()))?;
    let calib = CalibrationTable::new(entries);
    let opts = BuildOptions {
        out_dir: a.out.clone(),
        seed_root: a.seed,
    };
    let stage1 = builder::build_stage1(&refs, &calib, &opts)?;
    let mut manifest = stage1.clone();
    if !a.stage1_only {
        manifest.extend(builder::build_stage2(&refs, &stage1, &calib, &opts)?);
    }
    manifest.sort_by(|x, y| (x.stage, &x.image_id).cmp(&(y.stage, &y.image_id)));
    write_csv(&a.out.join("manifest.csv"), &manifest)?;

    let mut cfg = RunConfig::new("build", &a.out)
        .input("references", &a.references)
        .input("calibration", &a.calibration);
    cfg.seed_root = Some(a.seed);
    cfg.extra.insert("stage1_only", json!(a.stage1_only));
    cfg.extra.insert("images", json!(manifest.len()));
    finish(&a.out, &cfg)
}

fn parse_metrics(list: &str) -> Result<Vec<BuiltinMetric>> {
    let mut out = Vec::new();
    for id in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m = BuiltinMetric::from_id(id).with_context(|| format!("unknown metric `{id}`"))?;
        if out.contains(&m) {
            bail!("metric `{id}` listed twice");
        }
        out.push(m);
    }
    if out.is_empty() {
        bail!("no metrics given");
    }
    Ok(out)
}

fn cmd_score(ctx: &Ctx, a: ScoreArgs) -> Result<()> {
    let metrics = parse_metrics(&a.metrics)?;
    ctx.prepare(&a.out, &["scores.csv", "segments.json"])?;
    let refs: HashMap<String, ManifestRecord> = read_manifest(&a.references)?
        .into_iter()
        .map(|r| (r.ref_id.clone(), r))
        .collect();
    let mut records: Vec<ManifestRecord> =
        read_manifest(&a.manifest)?.into_iter().filter(|r| r.stage > 0).collect();
    records.sort_by(|x, y| x.image_id.cmp(&y.image_id));
    for r in &records {
        if !refs.contains_key(&r.ref_id) {
            bail!("image `{}` refers to unknown reference `{}`", r.image_id, r.ref_id);
        }
    }
    let per_image = par::try_map(&records, |r| {
        let reference = load_image(&refs[&r.ref_id].path)?;
        let distorted = load_image(&r.path)?;
        metrics
            .iter()
            .map(|m| m.score(&reference, &distorted))
            .collect::<iqa_forge::Result<Vec<f64>>>()
    })
    .map_err(|e| match e {
        iqa_forge::Error::Pair { index, source } => {
            anyhow::anyhow!("image `{}`: {source}", records[index].image_id)
        }
        other => other.into(),
    })?;
    let mut rows = Vec::with_capacity(records.len() * metrics.len());
    for (r, scores) in records.iter().zip(per_image) {
        for (m, s) in metrics.iter().zip(scores) {
            rows.push(ScoreRow {
                image_id: r.image_id.clone(),
                metric_id: m.id().to_string(),
                score: s,
            });
        }
    }
    io::write_scores(&a.out.join("scores.csv"), &rows)?;
    let segments = vec![SegmentSpec {
        name: a.segment.clone(),
        image_ids: records.iter().map(|r| r.image_id.clone()).collect(),
        subjective: None,
        orientation: None,
        variants: Vec::new(),
    }];
    write_json(&a.out.join("segments.json"), &segments)?;

    let mut cfg = RunConfig::new("score", &a.out)
        .input("manifest", &a.manifest)
        .input("references", &a.references);
    cfg.extra.insert(
        "metrics",
        json!(metrics.iter().map(|m| m.id()).collect::<Vec<_>>()),
    );
    finish(&a.out, &cfg)
}

fn parse_orientations(items: &[String]) -> Result<BTreeMap<String, Orientation>> {
    let mut out = BTreeMap::new();
    for item in items {
        let (id, o) = item
            .split_once('=')
            .with_context(|| format!("orientation `{item}` is not of the form id=higher_better|lower_better"))?;
        if out.insert(id.to_string(), o.parse()?).is_some() {
            bail!("orientation for `{id}` given twice");
        }
    }
    Ok(out)
}

struct Fusion {
    aligned: io::AlignedScores,
    matrix: sqb::ScoreMatrix,
    orientations: BTreeMap<String, Orientation>,
}

fn load_fusion(inputs: &FusionInputs) -> Result<Fusion> {
    let orientations = parse_orientations(&inputs.orientations)?;
    let rows = io::read_scores(&inputs.scores)?;
    let specs = io::read_segments(&inputs.segments)?;
    let aligned = io::align(&rows, &specs)?;
    let matrix = io::score_matrix(&aligned, &orientations)?;
    Ok(Fusion {
        aligned,
        matrix,
        orientations,
    })
}

fn fusion_config(command: &'static str, inputs: &FusionInputs, out: &Path, f: &Fusion) -> RunConfig {
    let mut cfg = RunConfig::new(command, out)
        .input("scores", &inputs.scores)
        .input("segments", &inputs.segments);
    cfg.anchor = Some(inputs.anchor.clone());
    cfg.extra.insert("n", json!(f.matrix.n()));
    let metrics: BTreeMap<&str, &str> = f
        .matrix
        .metrics()
        .iter()
        .map(|m| (m.id.as_str(), m.orientation.as_str()))
        .collect();
    cfg.extra.insert("metrics", json!(metrics));
    if !f.orientations.is_empty() {
        cfg.extra.insert("orientation_overrides", json!(f.orientations));
    }
    cfg
}

fn cmd_sqb(ctx: &Ctx, a: SqbArgs) -> Result<()> {
    let f = load_fusion(&a.inputs)?;
    let mut files: Vec<String> = f.aligned.segments.iter().map(|s| format!("{}.csv", s.name)).collect();
    files.push("sqb_params.json".into());
    if a.annotate.is_some() {
        files.push("manifest.csv".into());
    }
    ctx.prepare(&a.out, &files.iter().map(String::as_str).collect::<Vec<_>>())?;

    let n = f.matrix.n();
    let k = io::parse_k(&a.k, n)?;
    let outcome = sqb::generate_sqb(&f.aligned.segments, &f.matrix, k, &a.inputs.anchor)?;
    io::write_sqb_segments(&a.out, &f.aligned, &outcome)?;
    write_json(
        &a.out.join("sqb_params.json"),
        &json!({ "k": k, "logistic": outcome.params.as_array() }),
    )?;

    let mut cfg = fusion_config("sqb", &a.inputs, &a.out, &f);
    cfg.k = Some(json!({ "requested": a.k, "resolved": k }));
    if let Some(manifest) = &a.annotate {
        let mut records: Vec<ManifestRecord> = read_csv(manifest)
            .with_context(|| format!("reading manifest {}", manifest.display()))?;
        let scores: HashMap<String, f64> = f
            .aligned
            .image_ids
            .iter()
            .cloned()
            .zip(outcome.sqb.iter().copied())
            .collect();
        let hit = builder::annotate(&mut records, &scores);
        // keep relative image paths valid from the new location
        let base = std::path::absolute(base_dir(manifest))?;
        for r in &mut records {
            if Path::new(&r.path).is_relative() {
                r.path = r.resolve(&base).to_string_lossy().into_owned();
            }
        }
        write_csv(&a.out.join("manifest.csv"), &records)?;
        cfg.inputs.insert("annotate", manifest.display().to_string());
        cfg.extra.insert("annotated_rows", json!(hit));
    }
    finish(&a.out, &cfg)
}

fn cmd_ksweep(ctx: &Ctx, a: KsweepArgs) -> Result<()> {
    let f = load_fusion(&a.inputs)?;
    ctx.prepare(&a.out, &["ksweep.csv"])?;
    let ks = io::parse_k_list(&a.k_list, f.matrix.n())?;
    if ks.is_empty() {
        bail!("--k-list is empty");
    }
    let points = sqb::k_sweep(&f.aligned.segments, &f.matrix, &ks, &a.inputs.anchor)?;
    io::write_ksweep(&a.out.join("ksweep.csv"), &points)?;
    let mut cfg = fusion_config("ksweep", &a.inputs, &a.out, &f);
    cfg.k = Some(json!({ "requested": a.k_list, "resolved": ks }));
    finish(&a.out, &cfg)
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        bail!("--alpha must lie in (0, 1)");
    }
    let mut files = vec!["eval.csv", "weighted.csv", "summary.json"];
    if a.designated.is_some() {
        files.push("verdicts.csv");
    }
    ctx.prepare(&a.out, &files)?;
    let rows = io::read_scores(&a.predictions)?;
    let specs = io::read_segments(&a.segments)?;
    let aligned = io::align(&rows, &specs)?;
    if let Some(d) = &a.designated {
        if !aligned.columns.contains_key(d) {
            bail!("designated method `{d}` has no predictions");
        }
    }
    let report = eval::evaluate_methods(&aligned.columns, &aligned.segments, a.designated.as_deref(), a.alpha)?;
    write_csv(&a.out.join("eval.csv"), &report.rows)?;
    write_csv(&a.out.join("weighted.csv"), &report.weighted)?;
    if let Some(m) = &report.matrix {
        atomic_write(&a.out.join("verdicts.csv"), &m.to_csv()?)?;
    }
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "alpha": a.alpha,
            "designated": a.designated,
            "gaussian_pass_rate": report.gaussian_pass_rate(),
            "weighted": report.weighted,
        }),
    )?;
    let mut cfg = RunConfig::new("eval", &a.out)
        .input("predictions", &a.predictions)
        .input("segments", &a.segments);
    cfg.extra.insert("alpha", json!(a.alpha));
    if let Some(d) = &a.designated {
        cfg.extra.insert("designated", json!(d));
    }
    finish(&a.out, &cfg)
}

fn cmd_summarize(ctx: &Ctx, a: SummarizeArgs) -> Result<()> {
    ctx.prepare(&a.out, &["summary.json"])?;
    let records: Vec<ManifestRecord> =
        read_csv(&a.manifest).with_context(|| format!("reading manifest {}", a.manifest.display()))?;
    let summary = builder::summarize(&records)?;
    write_json(&a.out.join("summary.json"), &summary)?;
    finish(&a.out, &RunConfig::new("summarize", &a.out).input("manifest", &a.manifest))
}

#[derive(Serialize)]
struct LatentRow {
    image_id: String,
    latent: f64,
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    if a.n < 16 {
        bail!("--n must be at least 16");
    }
    ctx.prepare(&a.out, &["scores.csv", "segments.json", "latent.csv"])?;
    let bench = SyntheticBenchmark::generate(&BenchmarkConfig::standard(a.n), a.seed);
    let ids: Vec<String> = (0..a.n).map(|i| format!("img{i:06}")).collect();
    let mut rows = Vec::with_capacity(a.n * bench.scores.metrics().len());
    for (i, id) in ids.iter().enumerate() {
        for (m, col) in bench.scores.metrics().iter().zip(bench.scores.columns()) {
            rows.push(ScoreRow {
                image_id: id.clone(),
                metric_id: m.id.clone(),
                score: col[i],
            });
        }
    }
    let specs: Vec<SegmentSpec> = bench
        .segments
        .iter()
        .map(|s| {
            let subj = &s.subjective[0];
            SegmentSpec {
                name: s.name.clone(),
                image_ids: ids[s.range()].to_vec(),
                subjective: Some(subj.scores.clone()),
                orientation: Some(subj.orientation),
                variants: Vec::new(),
            }
        })
        .collect();
    let latent: Vec<LatentRow> = ids
        .iter()
        .zip(&bench.latent)
        .map(|(id, &u)| LatentRow {
            image_id: id.clone(),
            latent: u,
        })
        .collect();
    io::write_scores(&a.out.join("scores.csv"), &rows)?;
    write_json(&a.out.join("segments.json"), &specs)?;
    write_csv(&a.out.join("latent.csv"), &latent)?;

    let orientations: BTreeMap<&str, &str> = bench
        .scores
        .metrics()
        .iter()
        .map(|m| (m.id.as_str(), m.orientation.as_str()))
        .collect();
    let mut cfg = RunConfig::new("synth", &a.out);
    cfg.seed_root = Some(a.seed);
    cfg.extra.insert("n", json!(a.n));
    cfg.extra.insert("orientations", json!(orientations));
    finish(&a.out, &cfg)
}
