use std::path::Path;
use std::process::{Command, Output};

fn vidgan(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidgan"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .output()
        .expect("spawn vidgan")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &[&str] = &["--scale", "quarter", "--synthetic", "8", "--batch-size", "4", "--seed", "5"];

#[test]
fn train_gan_logs_one_line_per_iteration_then_generates_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let wd = tmp.path();
    let mut args = vec!["train-gan", "--iters", "6", "--out", "m/gan.tvgan", "--arch", "two-stream"];
    args.extend_from_slice(SMALL);
    let stdout = ok(&vidgan(wd, &args));
    let lines: Vec<serde_json::Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["iter"], i as u64 + 1);
        assert!(l["d_loss"].as_f64().unwrap().is_finite());
        assert!(l["g_loss"].as_f64().unwrap().is_finite());
    }
    assert!(wd.join("m/gan.tvgan").exists());

    for out in ["a", "b"] {
        ok(&vidgan(wd, &["generate", "--checkpoint", "m/gan.tvgan", "--count", "3", "--seed", "9", "--out", out, "--gif"]));
    }
    for i in 0..3 {
        let name = format!("clip_{i:04}.tvclip");
        let a = std::fs::read(wd.join("a").join(&name)).unwrap();
        assert_eq!(a, std::fs::read(wd.join("b").join(&name)).unwrap());
        assert!(std::fs::read(wd.join("a").join(format!("clip_{i:04}.gif"))).unwrap().starts_with(b"GIF89a"));
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(wd.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["clips"].as_array().unwrap().len(), 3);

    ok(&vidgan(wd, &["generate", "--checkpoint", "m/gan.tvgan", "--count", "1", "--seed", "10", "--out", "c"]));
    assert_ne!(
        std::fs::read(wd.join("a/clip_0000.tvclip")).unwrap(),
        std::fs::read(wd.join("c/clip_0000.tvclip")).unwrap()
    );

    ok(&vidgan(wd, &["export-gif", "--input", "a", "--out", "gifs"]));
    assert!(wd.join("gifs/clip_0002.gif").exists());
}

#[test]
fn metrics_go_to_log_file_and_config_file_is_honored() {
    let tmp = tempfile::tempdir().unwrap();
    let wd = tmp.path();
    std::fs::write(wd.join("run.toml"), "seed = 2\narch = \"one-stream\"\n[train]\nmax_iterations = 3\nbatch_size = 4\n[net]\nscale = \"quarter\"\n").unwrap();
    let stdout = ok(&vidgan(wd, &["--log", "logs/m.jsonl", "train-gan", "--config", "run.toml", "--synthetic", "6", "--out", "g.tvgan"]));
    assert!(stdout.is_empty());
    let log = std::fs::read_to_string(wd.join("logs/m.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    std::fs::write(wd.join("bad.toml"), "[train]\nlearning_rate = 1\n").unwrap();
    let out = vidgan(wd, &["train-gan", "--config", "bad.toml", "--seed", "1", "--synthetic", "4"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn future_and_baseline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let wd = tmp.path();
    let mut args = vec!["train-future", "--iters", "3", "--out", "f.tvgan"];
    args.extend_from_slice(SMALL);
    assert_eq!(ok(&vidgan(wd, &args)).lines().count(), 3);

    let mut args = vec!["train-baseline", "--steps", "3", "--components", "2", "--out", "b.tvgan"];
    args.extend_from_slice(SMALL);
    assert_eq!(ok(&vidgan(wd, &args)).lines().count(), 3);
    ok(&vidgan(wd, &["generate", "--checkpoint", "b.tvgan", "--count", "2", "--seed", "1", "--out", "bs"]));
    let clip = vidgan::videoio::read_clip(&wd.join("bs/clip_0001.tvclip")).unwrap();
    assert_eq!(clip.shape(), &[3, 8, 16, 16]);

    ok(&vidgan(wd, &["predict-future", "--checkpoint", "f.tvgan", "--input", "bs/clip_0000.tvclip", "--out", "p.tvclip"]));
    let pred = vidgan::videoio::read_clip(&wd.join("p.tvclip")).unwrap();
    assert_eq!(pred.shape(), &[3, 8, 16, 16]);

    let out = vidgan(wd, &["predict-future", "--checkpoint", "b.tvgan", "--input", "bs/clip_0000.tvclip", "--out", "q.tvclip"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn aggregate_reads_a_store() {
    let tmp = tempfile::tempdir().unwrap();
    let wd = tmp.path();
    for m in ["x", "y"] {
        let d = wd.join("media").join(m);
        std::fs::create_dir_all(&d).unwrap();
        std::fs::write(d.join("0.gif"), b"GIF89a").unwrap();
    }
    let registry = vidgan::evalsvc::ClipRegistry::scan(&wd.join("media")).unwrap();
    let mut svc = vidgan::evalsvc::EvalService::open(&wd.join("store"), registry, Some(1)).unwrap();
    for rater in ["r1", "r2"] {
        let p = svc.next_pair(Some(rater)).unwrap();
        svc.record_choice(&p.pair_id, vidgan::evalsvc::Side::Left, rater).unwrap();
    }
    drop(svc);
    let v: serde_json::Value = serde_json::from_str(&ok(&vidgan(wd, &["aggregate", "--store", "store"]))).unwrap();
    assert_eq!(v["records"], 2);
    let v: serde_json::Value = serde_json::from_str(&ok(&vidgan(wd, &["aggregate", "--store", "store", "--exclude", "r2"]))).unwrap();
    assert_eq!(v["records"], 1);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let wd = tmp.path();
    assert_eq!(vidgan(wd, &["train-gan", "--synthetic", "4"]).status.code(), Some(1));
    assert_eq!(vidgan(wd, &["train-gan", "--seed", "1"]).status.code(), Some(1));
    assert_eq!(vidgan(wd, &["bogus"]).status.code(), Some(1));
    assert_eq!(vidgan(wd, &["export-gif", "--input", "nope.tvclip", "--out", "x.gif"]).status.code(), Some(2));
    assert_eq!(vidgan(wd, &["--help"]).status.code(), Some(0));
}
