use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iqa_forge::pixels::save_image;
use iqa_forge::synthetic::natural_scene;

const SYNTH_ORIENTATIONS: [&str; 8] = [
    "--orientation",
    "m0=higher_better",
    "--orientation",
    "m1=higher_better",
    "--orientation",
    "m2=higher_better",
    "--orientation",
    "m3=lower_better",
];

fn forge<A: AsRef<std::ffi::OsStr> + std::fmt::Debug>(args: &[A]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iqa-forge"))
        .args(args)
        .env_remove("IQA_FORGE_WORKERS")
        .output()
        .expect("spawn iqa-forge")
}

fn ok<A: AsRef<std::ffi::OsStr> + std::fmt::Debug>(args: &[A]) -> Output {
    let out = forge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize) -> PathBuf {
    let out = dir.join("synth");
    ok(&["synth", "--n", &n.to_string(), "--seed", "3", "--out", s(&out)]);
    out
}

fn fusion_args(cmd: &str, syn: &Path, out: &Path) -> Vec<String> {
    let mut v: Vec<String> = [
        cmd,
        "--scores",
        s(&syn.join("scores.csv")),
        "--segments",
        s(&syn.join("segments.json")),
        "--anchor",
        "anchor",
        "--out",
        s(out),
    ]
    .map(String::from)
    .to_vec();
    v.extend(SYNTH_ORIENTATIONS.map(String::from));
    v
}

/// Every file under `dir`, relative path → bytes, skipping `run.json`.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().unwrap() != "run.json" {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut v = Vec::new();
    walk(dir, dir, &mut v);
    v.sort();
    v
}

#[test]
fn sqb_happy_path_writes_one_csv_per_segment() {
    let tmp = tempfile::tempdir().unwrap();
    let syn = synth(tmp.path(), 200);
    let out = tmp.path().join("sqb");
    let mut args = fusion_args("sqb", &syn, &out);
    args.extend(["--k", "auto"].map(String::from));
    ok(&args);
    for seg in ["anchor", "seg1", "seg2", "seg3"] {
        let text = fs::read_to_string(out.join(format!("{seg}.csv"))).unwrap();
        assert!(text.starts_with("image_id,sqb\n"));
        assert_eq!(text.lines().count(), 51);
    }
    let run: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["k"]["requested"], "auto");
    assert_eq!(run["k"]["resolved"], 400.0);
    assert_eq!(run["anchor"], "anchor");

    // refuses to overwrite, then reproduces byte-identically with --force
    let before = snapshot(&out);
    let again = forge(&args);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    args.push("--force".into());
    ok(&args);
    assert_eq!(snapshot(&out), before);
}

#[test]
fn undeclared_orientation_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let syn = synth(tmp.path(), 64);
    let out = forge(&[
        "sqb",
        "--scores",
        s(&syn.join("scores.csv")),
        "--segments",
        s(&syn.join("segments.json")),
        "--anchor",
        "anchor",
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`m0`"), "{err}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = forge(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(forge(&["sqb"]).status.code(), Some(2));
}

#[test]
fn missing_input_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let out = forge(&[
        "summarize",
        "--manifest",
        s(&missing),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn ksweep_and_eval_over_synthetic_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let syn = synth(tmp.path(), 200);
    let sweep = tmp.path().join("sweep");
    let mut args = fusion_args("ksweep", &syn, &sweep);
    args.extend(["--k-list", "1,60,auto,100000"].map(String::from));
    ok(&args);
    let text = fs::read_to_string(sweep.join("ksweep.csv")).unwrap();
    assert!(text.starts_with("k,wa_srcc\n"));
    assert_eq!(text.lines().count(), 5);

    let ev = tmp.path().join("eval");
    ok(&[
        "eval",
        "--predictions",
        s(&syn.join("scores.csv")),
        "--segments",
        s(&syn.join("segments.json")),
        "--designated",
        "m0",
        "--out",
        s(&ev),
    ]);
    let verdicts = fs::read_to_string(ev.join("verdicts.csv")).unwrap();
    assert_eq!(verdicts.lines().next().unwrap(), "method,anchor,seg1,seg2,seg3");
    assert!(verdicts.contains("\nm0,-,-,-,-\n"));
    assert_eq!(fs::read_to_string(ev.join("eval.csv")).unwrap().lines().count(), 17);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(ev.join("summary.json")).unwrap()).unwrap();
    let rate = summary["gaussian_pass_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
}

#[test]
fn dataset_workflow_is_worker_count_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let refs = tmp.path().join("refs");
    fs::create_dir(&refs).unwrap();
    for (i, name) in ["alpha", "beta"].iter().enumerate() {
        save_image(&natural_scene(48, 40, 10 + i as u64), refs.join(format!("{name}.png"))).unwrap();
    }
    let cal = tmp.path().join("cal");
    ok(&["calibrate", "--refs", s(&refs), "--out", s(&cal), "--seed", "9"]);
    let cal_text = fs::read_to_string(cal.join("calibration.csv")).unwrap();
    assert!(cal_text.starts_with("ref_id,kind,level,param,achieved,clamped\n"));
    assert_eq!(cal_text.lines().count(), 1 + 2 * 4 * 17);
    assert_eq!(fs::read_to_string(cal.join("content.csv")).unwrap().lines().count(), 3);

    let mut snaps = Vec::new();
    for workers in ["1", "8"] {
        let out = tmp.path().join(format!("build{workers}"));
        ok(&[
            "--workers",
            workers,
            "build",
            "--references",
            s(&cal.join("references.csv")),
            "--calibration",
            s(&cal.join("calibration.csv")),
            "--seed",
            "9",
            "--out",
            s(&out),
        ]);
        snaps.push(snapshot(&out));
    }
    assert_eq!(snaps[0], snaps[1]);
    let manifest = tmp.path().join("build1/manifest.csv");
    let rows = fs::read_to_string(&manifest).unwrap().lines().count() - 1;
    assert_eq!(rows, 2 * (33 + 935));

    // --force rebuild reproduces every byte
    ok(&[
        "--force",
        "build",
        "--references",
        s(&cal.join("references.csv")),
        "--calibration",
        s(&cal.join("calibration.csv")),
        "--seed",
        "9",
        "--out",
        s(&tmp.path().join("build1")),
    ]);
    assert_eq!(snapshot(&tmp.path().join("build1")), snaps[0]);

    let scored = tmp.path().join("scores");
    ok(&[
        "score",
        "--manifest",
        s(&manifest),
        "--references",
        s(&cal.join("references.csv")),
        "--metrics",
        "psnr,ssim",
        "--out",
        s(&scored),
    ]);
    let scores = fs::read_to_string(scored.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 2 * rows);

    // annotate the manifest using the achieved scores as a stand-in anchor
    let seg: serde_json::Value = serde_json::from_slice(&fs::read(scored.join("segments.json")).unwrap()).unwrap();
    let ids: Vec<String> = serde_json::from_value(seg[0]["image_ids"].clone()).unwrap();
    let records: Vec<serde_json::Map<String, serde_json::Value>> = {
        let mut r = csv_rows(&manifest);
        r.sort_by(|a, b| a["image_id"].as_str().cmp(&b["image_id"].as_str()));
        r
    };
    let subjective: Vec<f64> = records
        .iter()
        .map(|r| {
            let a2 = r["achieved2"].as_str().unwrap();
            let a = if a2.is_empty() { r["achieved1"].as_str().unwrap() } else { a2 };
            a.parse::<f64>().unwrap()
        })
        .collect();
    let segs = serde_json::json!([{ "name": "corpus", "image_ids": ids, "subjective": subjective }]);
    let seg_path = tmp.path().join("anchored.json");
    fs::write(&seg_path, serde_json::to_vec(&segs).unwrap()).unwrap();
    let fused = tmp.path().join("fused");
    ok(&[
        "sqb",
        "--scores",
        s(&scored.join("scores.csv")),
        "--segments",
        s(&seg_path),
        "--anchor",
        "corpus",
        "--annotate",
        s(&manifest),
        "--out",
        s(&fused),
    ]);
    let summary = tmp.path().join("summary");
    ok(&["summarize", "--manifest", s(&fused.join("manifest.csv")), "--out", s(&summary)]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(summary.join("summary.json")).unwrap()).unwrap();
    assert_eq!(v["overall"]["count"], rows);
    assert!(v["groups"]["stage2/blur-jpeg"]["count"].as_u64().unwrap() > 0);
}

fn csv_rows(path: &Path) -> Vec<serde_json::Map<String, serde_json::Value>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| {
            header
                .iter()
                .zip(l.split(','))
                .map(|(h, v)| (h.to_string(), serde_json::Value::String(v.to_string())))
                .collect()
        })
        .collect()
}
