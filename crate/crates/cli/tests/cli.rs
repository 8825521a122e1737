use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cpa_ae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpa-ae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const CIRCLE: &str = r#"{
  "model": {"widths": [2, 8, 1, 8, 2], "bottleneck": 2},
  "data": {"kind": "orbit", "x0": [1, 0], "generator": "rotation2d",
           "train": {"grid": {"lo": 0, "hi": 6.283185307179586, "count": 8}},
           "test": {"grid": {"lo": 0.1, "hi": 6.383185307179586, "count": 64}}},
  "normalization": "none",
  "train": {"epochs": 20, "batch_size": 4, "reg": {"kind": "lie1", "weight": 1.0}}
}"#;

fn metric_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "timing.json")
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn train_smoke_and_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "circle.json", CIRCLE);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = cpa_ae(&[
            "train",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "11",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["model.json", "generators.json", "runrecord.jsonl"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    assert_eq!(metric_files(&a), metric_files(&b));
    let summary = fs::read_to_string(a.join("runrecord.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(summary.lines().last().unwrap()).unwrap();
    assert_eq!(last["seed"], 11);
    assert_eq!(last["status"], "completed");
}

#[test]
fn suite_with_two_methods_has_two_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let text = CIRCLE.replace(
        r#""train": {"epochs": 20, "batch_size": 4, "reg": {"kind": "lie1", "weight": 1.0}}"#,
        r#""train": {"epochs": 10, "batch_size": 4, "runs": 2},
           "methods": [{"name": "plain", "reg": {"kind": "none"}},
                       {"name": "lie1", "reg": {"kind": "lie1", "weight": 1.0}}]"#,
    );
    let cfg = write(tmp.path(), "suite.json", &text);
    let out = tmp.path().join("suite");
    let o = cpa_ae(&[
        "suite",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[2..], ["plain", "lie1"]);
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);
}

#[test]
fn exit_codes_and_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("err");
    let outs = out.to_str().unwrap();

    let bad = write(tmp.path(), "bad.json", r#"{"model": 1}"#);
    let o = cpa_ae(&["train", "--config", &bad, "--out", outs]);
    assert_eq!(o.status.code(), Some(2));
    let doc: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(doc["error"], "config");
    assert!(out.join("error.json").is_file());

    let csv = write(tmp.path(), "data.csv", "1,2\n3,nan\n");
    let cfg = write(
        tmp.path(),
        "csv.json",
        &format!(
            r#"{{"model": {{"widths": [2, 1, 2], "bottleneck": 1}},
                "data": {{"kind": "csv", "train": {csv:?}, "test": {csv:?}}},
                "train": {{"epochs": 1, "batch_size": 1}}}}"#
        ),
    );
    let o = cpa_ae(&["train", "--config", &cfg, "--out", outs]);
    assert_eq!(o.status.code(), Some(3));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert!(doc["message"].as_str().unwrap().contains("row 2"));
    assert_eq!(fs::read_dir(&out).unwrap().count(), 1);

    let diverge = CIRCLE.replace(r#""epochs": 20"#, r#""epochs": 50, "lr": 1e300"#);
    let cfg = write(tmp.path(), "diverge.json", &diverge);
    let o = cpa_ae(&["train", "--config", &cfg, "--out", outs]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(&out).unwrap().count(), 1);
}

#[test]
fn analyze_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "circle.json", CIRCLE);
    let model_dir = tmp.path().join("model");
    assert!(
        cpa_ae(&["train", "--config", &cfg, "--out", model_dir.to_str().unwrap()])
            .status
            .success()
    );
    let model = model_dir.join("model.json");
    let an = write(
        tmp.path(),
        "an.json",
        &format!(
            r#"{{"model": {:?}, "kind": "partition2d", "resolution": 64}}"#,
            model.to_str().unwrap()
        ),
    );
    let out = tmp.path().join("an");
    let outs = out.to_str().unwrap();

    assert!(cpa_ae(&["analyze", "--config", &an, "--out", outs]).status.success());
    let grid = fs::read_to_string(out.join("partition2d.csv")).unwrap();
    let ids: HashSet<&str> = grid.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(grid.lines().count(), 1 + 64 * 64);
    assert!(ids.len() > 1);
    assert!(out.join("partition2d.py").is_file());

    let o = cpa_ae(&["analyze", "--config", &an, "--out", outs, "--kind", "ball_counts"]);
    assert!(o.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("ball_counts.json")).unwrap()).unwrap();
    let counts: Vec<u64> = report["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]));

    let o = cpa_ae(&["analyze", "--config", &an, "--out", outs, "--kind", "epsilon_trace"]);
    assert_eq!(o.status.code(), Some(2));
    let o = cpa_ae(&["analyze", "--config", &an, "--out", outs, "--kind", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn surface_vertices_are_coplanar_per_region() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "m.json",
        r#"{"model": {"widths": [3, 12, 2, 12, 3], "bottleneck": 2},
            "data": {"kind": "csv", "train": "d.csv", "test": "d.csv"},
            "normalization": "none",
            "train": {"epochs": 1, "batch_size": 4}}"#,
    );
    write(tmp.path(), "d.csv", "0,0,1\n0,1,0\n1,0,0\n1,1,1\n0.5,0.2,0.1\n");
    let mdir = tmp.path().join("m");
    let o = cpa_ae(&["train", "--config", &cfg, "--out", mdir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let an = write(
        tmp.path(),
        "s.json",
        r#"{"model": "m/model.json", "kind": "surface", "resolution": 25}"#,
    );
    let out = tmp.path().join("s");
    assert!(cpa_ae(&["analyze", "--config", &an, "--out", out.to_str().unwrap()])
        .status
        .success());
    let mesh = fs::read_to_string(out.join("surface.csv")).unwrap();
    let mut by_region: BTreeMap<String, Vec<[f64; 3]>> = BTreeMap::new();
    for line in mesh.lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        let v = [c[2].parse().unwrap(), c[3].parse().unwrap(), c[4].parse().unwrap()];
        by_region.entry(c[5].to_string()).or_default().push(v);
    }
    assert!(by_region.len() > 1);
    for pts in by_region.values().filter(|p| p.len() >= 4) {
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        let p0 = pts[0];
        let (i, j) = (1..pts.len())
            .flat_map(|i| (i + 1..pts.len()).map(move |j| (i, j)))
            .max_by(|&(a, b), &(c, d)| {
                let n = |x: [f64; 3]| x.iter().map(|v| v * v).sum::<f64>();
                n(cross(sub(pts[a], p0), sub(pts[b], p0))).total_cmp(&n(cross(sub(pts[c], p0), sub(pts[d], p0))))
            })
            .unwrap();
        let normal = cross(sub(pts[i], p0), sub(pts[j], p0));
        let scale = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if scale < 1e-12 {
            continue;
        }
        for p in pts {
            let d = sub(*p, p0);
            let off = (d[0] * normal[0] + d[1] * normal[1] + d[2] * normal[2]) / scale;
            assert!(off.abs() <= 1e-9, "vertex off plane by {off}");
        }
    }
}

#[test]
fn gen_data_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    for p in [&a, &b] {
        let o = cpa_ae(&[
            "gen-data",
            "--kind",
            "control_chart",
            "--seed",
            "5",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    let labels: HashSet<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels.len(), 6);

    let cfg = write(
        tmp.path(),
        "g.json",
        r#"{"kind": "orbit_circle", "count": 64, "output": "circle.csv"}"#,
    );
    assert!(cpa_ae(&["gen-data", "--config", &cfg]).status.success());
    let rows = fs::read_to_string(tmp.path().join("circle.csv")).unwrap();
    assert_eq!(rows.lines().count(), 65);
    for l in rows.lines().skip(1) {
        let v: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((v[0].hypot(v[1]) - 1.0).abs() <= 1e-12);
    }
}
