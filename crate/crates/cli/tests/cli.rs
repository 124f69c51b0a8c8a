use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--preset",
    "fixture",
    "--set",
    "iterations=40",
    "--set",
    "width=16",
    "--set",
    "depth=2",
    "--set",
    "skip_at=none",
    "--set",
    "batch_size=64",
    "--set",
    "dist_subsample=64",
    "--quiet",
];

fn udf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_udf"))
        .args(args)
        .env("RUST_BACKTRACE", "0")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = udf(args);
    assert!(
        out.status.success(),
        "udf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path, shape: &str, count: &str) -> std::path::PathBuf {
    let out = dir.join(format!("fx-{shape}"));
    ok(&["fixtures", "--out", s(&out), "--shape", shape, "--count", count, "--with-normals"]);
    out.join(format!("{shape}.xyz"))
}

fn fit(input: &Path, out: &Path) {
    let mut args = vec!["--threads", "1", "fit", s(input), "--out", s(out)];
    args.extend_from_slice(SMALL);
    ok(&args);
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cloud = fixture(tmp.path(), "sphere", "300");
    assert_eq!(fs::read_to_string(&cloud).unwrap().lines().next().unwrap().split_whitespace().count(), 6);

    let run = tmp.path().join("fit");
    fit(&cloud, &run);
    for f in ["checkpoint.udf", "trace.tsv", "diagnostics.txt", "config.txt", "manifest.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let ck = run.join("checkpoint.udf");

    let rec = tmp.path().join("rec");
    let stdout = ok(&["reconstruct", s(&ck), "--out", s(&rec), "--resolution", "24"]);
    assert!(stdout.contains("triangles"));
    assert!(rec.join("mesh.obj").exists());

    let nrm = tmp.path().join("nrm");
    ok(&["normals", s(&ck), s(&cloud), "--out", s(&nrm)]);
    let text = fs::read_to_string(nrm.join("normals.txt")).unwrap();
    assert!(text.lines().all(|l| l.split_whitespace().count() == 6));

    let up = tmp.path().join("up");
    let out = udf(&["upsample", s(&ck), s(&cloud), "--out", s(&up), "--factor", "2", "--beta", "inf"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(up.join("upsampled.xyz")).unwrap().lines().count(), 600);

    let ev = tmp.path().join("ev");
    ok(&["eval", s(&rec.join("mesh.obj")), s(&cloud), "--out", s(&ev), "--samples", "2000"]);
    let report = fs::read_to_string(ev.join("report.tsv")).unwrap();
    assert!(report.contains("cd_l1\t"));
    assert!(ev.join("report.txt").exists());
}

#[test]
fn eval_of_a_cloud_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let cloud = fixture(tmp.path(), "torus", "500");
    let ev = tmp.path().join("ev");
    ok(&["eval", s(&cloud), s(&cloud), "--out", s(&ev)]);
    let kv = fs::read_to_string(ev.join("report.txt")).unwrap();
    let get = |k: &str| -> f64 {
        kv.lines()
            .find_map(|l| l.strip_prefix(&format!("{k} = ")))
            .unwrap_or_else(|| panic!("no {k} in {kv}"))
            .trim()
            .parse()
            .unwrap()
    };
    assert_eq!(get("cd_l1"), 0.0);
    assert_eq!(get("fscore@0.005"), 100.0);
    assert_eq!(get("normal_consistency"), 100.0);
    assert_eq!(get("rmse_deg"), 0.0);
}

#[test]
fn rerun_reproduces_the_checkpoint_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let cloud = fixture(tmp.path(), "half-sphere", "200");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    fit(&cloud, &a);
    fit(&cloud, &b);
    ok(&["rerun", s(&a.join("manifest.json")), "--out", s(&c)]);
    let bytes = |d: &Path| fs::read(d.join("checkpoint.udf")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(bytes(&a), bytes(&c));
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.xyz");
    let out = udf(&["fit", s(&missing), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3));

    let cloud = fixture(tmp.path(), "plane", "100");
    let out = udf(&["fit", s(&cloud), "--out", s(&tmp.path().join("r2")), "--set", "alpha9=1"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha9"));

    let out = udf(&["fit"]);
    assert_eq!(out.status.code(), Some(2));

    let garbage = tmp.path().join("bad.xyz");
    fs::write(&garbage, "1 2 x\n").unwrap();
    let out = udf(&["fit", s(&garbage), "--out", s(&tmp.path().join("r3"))]);
    assert_eq!(out.status.code(), Some(7));

    let out = udf(&["fixtures", "--out", s(&tmp.path().join("fx")), "--shape", "cube"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn upsample_shortfall_keeps_the_partial_cloud() {
    let tmp = tempfile::tempdir().unwrap();
    let cloud = fixture(tmp.path(), "sphere", "100");
    let run = tmp.path().join("fit");
    fit(&cloud, &run);
    let up = tmp.path().join("up");
    let out = udf(&[
        "upsample",
        s(&run.join("checkpoint.udf")),
        s(&cloud),
        "--out",
        s(&up),
        "--beta",
        "0",
        "--max-rounds",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(8));
    let m = fs::read_to_string(up.join("manifest.json")).unwrap();
    assert!(m.contains("partial"));
}

#[test]
fn coarse_lattices_do_not_crash() {
    let tmp = tempfile::tempdir().unwrap();
    let cloud = fixture(tmp.path(), "two-planes", "200");
    let run = tmp.path().join("fit");
    fit(&cloud, &run);
    let ck = run.join("checkpoint.udf");
    for (i, r) in ["2", "3"].iter().enumerate() {
        let d = tmp.path().join(format!("rec{i}"));
        ok(&["reconstruct", s(&ck), "--out", s(&d), "--resolution", r, "--format", "ply"]);
        assert!(d.join("mesh.ply").exists());
    }
    let out = udf(&["reconstruct", s(&ck), "--out", s(&tmp.path().join("rec9")), "--resolution", "1"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn an_existing_run_directory_is_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    ok(&["fixtures", "--out", s(&fx), "--shape", "plane", "--count", "10"]);
    let out = udf(&["fixtures", "--out", s(&fx), "--shape", "plane", "--count", "10"]);
    assert_eq!(out.status.code(), Some(4));
}
