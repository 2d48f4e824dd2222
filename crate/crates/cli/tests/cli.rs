use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use p2s_core::audio::AudioClip;
use p2s_core::checkpoint::Checkpoint;
use p2s_core::scene::dataset::{example_dir, load_dataset, ExampleManifest, MANIFEST_FILE, MONO_FILE, SCENE_FILE};
use serde_json::Value;

const TINY: &str = r#"{
  "vision": {"stage_channels": [4, 4, 4, 4], "head_channels": 4, "voxel_size": 0.1},
  "audio": {"depth": 2, "initial_channels": 2},
  "iterations": 3, "batch_size": 2, "eval_every": 2, "val_count": 2, "lr": 0.001
}"#;

fn p2s(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_p2s"))
        .args(args)
        .env_remove("P2S_THREADS")
        .output()
        .expect("p2s runs")
}

fn ok(args: &[&str]) -> Output {
    let out = p2s(args);
    assert!(
        out.status.success(),
        "p2s {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, split: &str, count: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    let (count, seed) = (count.to_string(), seed.to_string());
    ok(&[
        "--threads", "1", "gen-data", "--out", s(&out), "--count", &count, "--seed", &seed, "--split", split,
        "--clip-secs", "0.1", "--classes", "guitar,violin",
    ]);
    out
}

fn gen_default_clip(dir: &Path, name: &str, split: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&["gen-data", "--out", s(&out), "--count", "1", "--split", split, "--classes", "violin"]);
    out
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    fs::write(&p, TINY).unwrap();
    p
}

fn train(dir: &Path, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let cfg = tiny_config(dir);
    let out = dir.join(name);
    let mut args = vec!["--threads", "1", "train", "--data", s(data), "--config", s(&cfg), "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn gen_data_is_reproducible_and_split_defaults_apply() {
    let t = tempfile::tempdir().unwrap();
    let a = gen(t.path(), "a", "test", 10, 7);
    let b = gen(t.path(), "b", "test", 10, 7);
    assert_eq!(files(&a), files(&b));
    assert_eq!(files(&a).len(), 1 + 10 * 4);
    for i in 0..10 {
        let m: ExampleManifest = serde_json::from_value(json(&example_dir(&a, i).join(MANIFEST_FILE))).unwrap();
        assert!(!m.augmentation);
    }
    let (_, long) = load_dataset(&gen_default_clip(t.path(), "long", "test")).unwrap();
    assert_eq!(long[0].mono.len(), 16000);
    let (_, short) = load_dataset(&gen_default_clip(t.path(), "short", "train")).unwrap();
    assert_eq!(short[0].mono.len(), 8000);
    let c = gen(t.path(), "c", "train", 2, 7);
    let m: ExampleManifest = serde_json::from_value(json(&example_dir(&c, 0).join(MANIFEST_FILE))).unwrap();
    assert!(m.augmentation);
}

#[test]
fn usage_errors_exit_with_two() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("x");
    let r = p2s(&["gen-data", "--out", s(&out), "--count", "0"]);
    assert_eq!(r.status.code(), Some(2));
    let r = p2s(&["train", "--data", s(&t.path().join("missing")), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing"));
    let r = p2s(&["frobnicate"]);
    assert_eq!(r.status.code(), Some(2));
    let r = p2s(&["gen-data", "--out", s(&out), "--count", "1", "--classes", "kazoo"]);
    assert_eq!(r.status.code(), Some(2));
    let bad = t.path().join("bad.json");
    fs::write(&bad, "{\"batch_size\": 0}").unwrap();
    let r = p2s(&["train", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn loss_modes_set_output_width() {
    let t = tempfile::tempdir().unwrap();
    let data = gen(t.path(), "train", "train", 4, 1);
    for (mode, width) in [("full", 2), ("diff", 1)] {
        let ck = train(t.path(), &data, &format!("{mode}.ckpt"), &["--loss", mode]);
        let side = json(&PathBuf::from(format!("{}.json", ck.display())));
        assert_eq!(side["audio"]["output_channels"], width);
        let tensors = Checkpoint::<f32>::load(&ck).unwrap();
        assert_eq!(tensors.get("audio.dec1.w2").unwrap().dim(1), width);
        let log = fs::read_to_string(format!("{}.log.jsonl", ck.display())).unwrap();
        assert_eq!(log.lines().count(), 3);
        let rec: Value = serde_json::from_str(log.lines().nth(1).unwrap()).unwrap();
        assert!(rec["iter"].is_u64() && rec["train_loss"].is_f64() && rec["val_loss"].is_f64());
    }
}

#[test]
fn single_thread_pipeline_is_bit_identical() {
    let t = tempfile::tempdir().unwrap();
    let data = gen(t.path(), "train", "train", 4, 1);
    let test = gen(t.path(), "test", "test", 3, 1);
    let a = train(t.path(), &data, "a.ckpt", &[]);
    let b = train(t.path(), &data, "b.ckpt", &[]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let ex = example_dir(&test, 0);
    let (scene, mono) = (ex.join(SCENE_FILE), ex.join(MONO_FILE));
    let render = |ck: &Path, name: &str, rotate: bool| {
        let out = t.path().join(name);
        let mut args = vec![
            "--threads", "1", "binauralize", "--ckpt", s(ck), "--scene", s(&scene), "--mono", s(&mono), "--out",
            s(&out),
        ];
        if rotate {
            args.push("--rotate");
        }
        ok(&args);
        fs::read(&out).unwrap()
    };
    let first = render(&a, "1.wav", false);
    assert_eq!(first, render(&a, "2.wav", false));
    assert_ne!(first, render(&a, "3.wav", true));
    let clip = AudioClip::read_wav(&t.path().join("1.wav")).unwrap();
    let mono = AudioClip::read_wav(&mono).unwrap();
    assert_eq!(clip.num_channels(), 2);
    assert_eq!(clip.len(), mono.len());
    assert_eq!(clip.sample_rate(), mono.sample_rate());

    let eval = |ck: &Path, name: &str| {
        let out = t.path().join(name);
        ok(&["--threads", "1", "evaluate", "--ckpt", s(ck), "--data", s(&test), "--out", s(&out)]);
        fs::read(&out).unwrap()
    };
    assert_eq!(eval(&a, "r1.json"), eval(&a, "r2.json"));
}

#[test]
fn binauralize_rejects_stereo_input() {
    let t = tempfile::tempdir().unwrap();
    let data = gen(t.path(), "train", "train", 2, 1);
    let ck = train(t.path(), &data, "m.ckpt", &[]);
    let ex = example_dir(&data, 0);
    let out = t.path().join("o.wav");
    let r = p2s(&[
        "binauralize", "--ckpt", s(&ck), "--scene", s(&ex.join(SCENE_FILE)), "--mono",
        s(&ex.join("binaural.wav")), "--out", s(&out),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn report_schema_and_model_independent_baseline() {
    let t = tempfile::tempdir().unwrap();
    let data = gen(t.path(), "train", "train", 4, 1);
    let test = gen(t.path(), "test", "test", 6, 2);
    let a = train(t.path(), &data, "a.ckpt", &["--seed", "1"]);
    let b = train(t.path(), &data, "b.ckpt", &["--seed", "2", "--loss", "diff"]);
    let report = |ck: &Path, name: &str| {
        let out = t.path().join(name);
        ok(&["evaluate", "--ckpt", s(ck), "--data", s(&test), "--out", s(&out)]);
        json(&out)
    };
    let ra = report(&a, "a.json");
    let rb = report(&b, "b.json");
    for method in ["model", "mono-mono", "rotated-visual"] {
        for metric in ["env", "stft"] {
            let mut keys: Vec<String> = ra[method][metric].as_object().unwrap().keys().cloned().collect();
            keys.sort();
            assert_eq!(keys, ["1", "2", "3", "avg"]);
        }
        let n: u64 = ra[method]["counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
        assert_eq!(n, 6);
    }
    assert_eq!(ra["mono-mono"], rb["mono-mono"]);
    assert_ne!(ra["model"], rb["model"]);

    let r = p2s(&["evaluate", "--ckpt", s(&a), "--data", s(&data), "--out", s(&t.path().join("x.json"))]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn desk_preset_smoke_run_on_200_examples() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("train");
    ok(&["gen-data", "--out", s(&data), "--count", "200", "--seed", "5", "--split", "train", "--classes", "guitar,violin"]);
    let ck = t.path().join("desk.ckpt");
    ok(&[
        "train", "--data", s(&data), "--preset", "desk", "--iterations", "2", "--eval-every", "1", "--out", s(&ck),
    ]);
    let side = json(&PathBuf::from(format!("{}.json", ck.display())));
    assert_eq!(side["vision"]["stage_channels"], serde_json::json!([16, 32, 64, 128]));
    assert!(Checkpoint::<f32>::load(&ck).unwrap().get("adam.step").is_some());
}
