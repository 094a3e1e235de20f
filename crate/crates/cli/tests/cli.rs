use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use pathosynth::diffusion::{read_message, MessageKind};
use pathosynth::phantom::{brain_phantom, intensity_phantom};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pathosynth"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()))
        .collect();
    files.sort();
    files
}

fn raw_subjects(dir: &Path, n: u64, dims: [usize; 3]) {
    for i in 0..n {
        let labels = brain_phantom(dims, i);
        labels.write(dir.join(format!("sub-{i}_dseg.nii.gz"))).unwrap();
        intensity_phantom(&labels, 5.0, i).write(dir.join(format!("sub-{i}_T2w.nii.gz"))).unwrap();
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    let tmp = tempfile::tempdir().unwrap();
    let d = p(tmp.path());
    assert_eq!(code(&["generate", d, d, "--override-pathology", "vm,xyz"]), 2);
    assert_eq!(code(&["generate", d, d, "--severity", "1.5"]), 2);
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"pathology": {"vm_budget": 2.0}}"#).unwrap();
    assert_eq!(code(&["prepare", d, d, "--config", p(&cfg)]), 2);
    assert_eq!(code(&["sample", d, d, "--denoiser", "plugin"]), 2);
}

#[test]
fn runtime_errors_exit_1() {
    let empty = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = run(&["prepare", p(empty.path()), p(out.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no label volumes"));

    raw_subjects(empty.path(), 1, [24, 24, 24]);
    std::fs::write(empty.path().join("broken_dseg.nii.gz"), b"junk").unwrap();
    assert_eq!(code(&["generate", p(empty.path()), p(out.path()), "--count", "1"]), 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"][0]["status"], "failed");
    assert_eq!(manifest["entries"][1]["status"], "ok");
}

#[test]
fn generate_is_identical_across_job_counts() {
    let raw = tempfile::tempdir().unwrap();
    raw_subjects(raw.path(), 4, [40, 40, 40]);
    let outs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (out, jobs) in outs.iter().zip(["1", "1", "8"]) {
        let o = run(&["generate", p(raw.path()), p(out.path()), "--count", "2", "--seed", "11", "--jobs", jobs]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = dir_bytes(outs[0].path());
    assert_eq!(a.len(), 4 * 2 * 3 + 1);
    assert_eq!(a, dir_bytes(outs[1].path()));
    assert_eq!(a, dir_bytes(outs[2].path()));
}

#[test]
fn full_workflow() {
    let raw = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    raw_subjects(raw.path(), 2, [36, 36, 36]);
    let dir = |name: &str| work.path().join(name);
    let ok = |args: &[&str]| {
        let o = run(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    ok(&["generate", p(raw.path()), p(&dir("gen")), "--count", "1", "--override-pathology", "vm", "--severity", "0.7"]);
    ok(&["prepare", p(raw.path()), p(&dir("prep")), "--jobs", "2"]);
    // tiny grid and few steps keep the sampler fast
    let cfg = work.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"preprocess": {"target_dims": [16, 16, 16]}}"#).unwrap();
    ok(&["prepare", p(raw.path()), p(&dir("small")), "--config", p(&cfg)]);
    ok(&["sample", p(&dir("small")), p(&dir("synth")), "--config", p(&cfg), "--timesteps", "5"]);
    assert!(dir("synth").join("sub-0_synth-reverted_T2w.nii.gz").exists());
    ok(&["revert", p(&dir("small")), p(&dir("back")), "--records", p(&dir("small"))]);
    let back = pathosynth::LabelVolume::read(dir("back").join("sub-1_dseg.nii.gz"), None).unwrap();
    assert_eq!(back.dims(), [36, 36, 36]);
    ok(&["eval", p(&dir("prep")), p(&dir("prep")), p(&dir("eval")), "--labels", "1,2,3"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir("eval").join("dice.json")).unwrap()).unwrap();
    assert_eq!(report["summary"], 1.0);
    assert_eq!(report["medians"].as_array().unwrap().len(), 3);
}

#[test]
fn raters_command() {
    let work = tempfile::tempdir().unwrap();
    let table = work.path().join("scores.csv");
    std::fs::write(
        &table,
        "rater,arm,unusable,poor,good,excellent\n1,real,9,14,13,14\n1,synthetic,0,5,27,18\n2,real,15,10,14,11\n2,synthetic,1,8,32,9\n3,real,13,24,13,0\n3,synthetic,3,43,3,1\n4,real,6,15,20,9\n4,synthetic,1,8,32,9\n",
    )
    .unwrap();
    let out = work.path().join("out");
    assert_eq!(code(&["raters", p(&table), p(&out)]), 0);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("raters.json")).unwrap()).unwrap();
    assert_eq!(stats["real_mean"], 1.425);
    assert_eq!(stats["synthetic_mean"], 1.815);
    assert!(std::fs::read_to_string(out.join("raters.txt")).unwrap().contains("Welch"));
}

#[test]
fn plugin_oracle_matches_in_process_oracle() {
    let raw = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    raw_subjects(raw.path(), 1, [28, 28, 28]);
    let cfg = work.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"preprocess": {"target_dims": [12, 12, 12]}, "diffusion": {"timesteps": 20}}"#).unwrap();
    let prep = work.path().join("prep");
    assert_eq!(code(&["prepare", p(raw.path()), p(&prep), "--config", p(&cfg)]), 0);

    let local = work.path().join("local");
    let remote = work.path().join("remote");
    assert_eq!(code(&["sample", p(&prep), p(&local), "--config", p(&cfg), "--denoiser", "oracle", "--seed", "4"]), 0);
    let target = prep.join("sub-0_T2w.nii.gz");
    let o = run(&[
        "sample",
        p(&prep),
        p(&remote),
        "--config",
        p(&cfg),
        "--seed",
        "4",
        "--denoiser",
        "plugin",
        "--plugin",
        env!("CARGO_BIN_EXE_pathosynth"),
        "--plugin-arg",
        "serve-builtin",
        "--plugin-arg",
        "--denoiser",
        "--plugin-arg",
        "oracle",
        "--plugin-arg",
        "--target",
        "--plugin-arg",
        p(&target),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let image = |d: &Path| std::fs::read(d.join("sub-0_synth_T2w.nii.gz")).unwrap();
    assert_eq!(image(&local), image(&remote));

    let missing = work.path().join("none");
    let o = run(&["sample", p(&prep), p(&missing), "--denoiser", "plugin", "--plugin", "/no/such/plugin"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn builtin_server_rejects_malformed_frames() {
    let mut child = bin()
        .args(["serve-builtin"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"XXXX\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_ne!(out.status.code(), Some(0));
    let (kind, body) = read_message(&mut out.stdout.as_slice()).unwrap();
    assert_eq!(kind, MessageKind::Error);
    assert!(!body.is_empty());
}
