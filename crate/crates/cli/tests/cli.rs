use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stegnet_core::checkpoint;
use stegnet_core::data::{read_pgm, GrayImage};
use stegnet_core::zhunet::{ModelConfig, ZhuNet};
use tempfile::TempDir;

fn stegnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stegnet"))
        .args(args)
        .env_remove("STEGNET_THREADS")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), stderr(o));
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec!["synth", "--out", p(&out)];
    args.extend_from_slice(extra);
    assert_ok(&stegnet(&args));
    out.join("manifest.txt")
}

fn covers(dir: &Path, n: usize, size: usize) -> PathBuf {
    let d = dir.join("covers");
    fs::create_dir_all(&d).unwrap();
    for i in 0..n {
        GrayImage::from_fn(size, size, |x, y| ((x * 7 + y * 13 + i * 29) % 200 + 20) as u8)
            .unwrap()
            .save(d.join(format!("img{i:03}.pgm")))
            .unwrap();
    }
    d
}

fn write_config(dir: &Path, manifest: &Path, out: &str, extra: &str) -> PathBuf {
    let cfg = dir.join(format!("{out}.cfg"));
    fs::write(&cfg, format!("manifest = {}\nout_dir = {out}\nlr_decay_epochs =\n{extra}", p(manifest))).unwrap();
    cfg
}

fn random_checkpoint(dir: &Path) -> PathBuf {
    let path = dir.join("random.znet");
    checkpoint::save(&path, &ZhuNet::<f32>::new(ModelConfig::default()).unwrap()).unwrap();
    path
}

#[test]
fn tiny_payload_leaves_covers_untouched() {
    let t = TempDir::new().unwrap();
    let input = covers(t.path(), 3, 8);
    let out = t.path().join("out");
    assert_ok(&stegnet(&["embed", "--in", p(&input), "--out", p(&out), "--payload", "0.0001", "--seed", "4"]));
    for i in 0..3 {
        let name = format!("img{i:03}.pgm");
        assert_eq!(fs::read(out.join("cover").join(&name)).unwrap(), fs::read(out.join("stego").join(&name)).unwrap());
    }
}

#[test]
fn embed_is_deterministic_and_lists_every_image() {
    let t = TempDir::new().unwrap();
    let input = covers(t.path(), 100, 16);
    let run = |name: &str| {
        let out = t.path().join(name);
        assert_ok(&stegnet(&["embed", "--in", p(&input), "--out", p(&out), "--payload", "0.4", "--seed", "9"]));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 100);
    assert_eq!(manifest, fs::read_to_string(b.join("manifest.txt")).unwrap());
    let count = |s: &str| manifest.lines().filter(|l| l.ends_with(s)).count();
    assert_eq!((count(" train"), count(" validation"), count(" test")), (40, 10, 50));
    for i in 0..100 {
        let name = format!("img{i:03}.pgm");
        let sa = fs::read(a.join("stego").join(&name)).unwrap();
        assert_eq!(sa, fs::read(b.join("stego").join(&name)).unwrap());
        let cover = read_pgm(&fs::read(a.join("cover").join(&name)).unwrap()).unwrap();
        let stego = read_pgm(&sa).unwrap();
        let changed = cover.pixels().iter().zip(stego.pixels()).filter(|(c, s)| c != s).count();
        assert!(cover.pixels().iter().zip(stego.pixels()).all(|(&c, &s)| c.abs_diff(s) <= 1));
        assert!(changed as f64 <= 0.4 * 256.0);
    }
}

#[test]
fn unreadable_image_is_reported_per_file() {
    let t = TempDir::new().unwrap();
    let input = covers(t.path(), 4, 8);
    fs::write(input.join("broken.pgm"), b"P2\n1 1\n255\n0\n").unwrap();
    let out = t.path().join("out");
    let o = stegnet(&["embed", "--in", p(&input), "--out", p(&out), "--payload", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken.pgm"), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("manifest.txt")).unwrap().lines().count(), 4);
}

#[test]
fn invalid_payload_is_a_usage_error() {
    let t = TempDir::new().unwrap();
    let input = covers(t.path(), 1, 8);
    let o = stegnet(&["embed", "--in", p(&input), "--out", p(&t.path().join("o")), "--payload", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn one_epoch_run_writes_all_outputs() {
    let t = TempDir::new().unwrap();
    let manifest = synth(t.path(), &["--train", "8", "--val", "4", "--test", "4", "--size", "32"]);
    let cfg = write_config(t.path(), &manifest, "run", "max_epochs = 1\n");
    assert_ok(&stegnet(&["--threads", "1", "train", "--config", p(&cfg)]));
    let run = t.path().join("run");
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert_eq!(metrics.lines().next(), Some("epoch,lr,train_loss,val_error"));
    let resolved = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(resolved.contains("max_epochs = 1") && resolved.contains("momentum = 0.9"));
    assert!(fs::read_to_string(run.join("train.log")).unwrap().contains("epoch=0"));
    let ckpt = run.join("best.znet");
    let o = stegnet(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--split", "val"]);
    assert_ok(&o);
    assert!(stdout(&o).starts_with("error_rate="));
}

#[test]
fn unknown_config_key_is_rejected() {
    let t = TempDir::new().unwrap();
    let cfg = write_config(t.path(), Path::new("m.txt"), "run", "epochs = 3\n");
    let o = stegnet(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown key `epochs`"));
}

#[test]
fn identical_runs_give_identical_outputs() {
    let t = TempDir::new().unwrap();
    let manifest = synth(t.path(), &["--train", "16", "--val", "4", "--test", "0", "--size", "32", "--seed", "3"]);
    for name in ["a", "b"] {
        let cfg = write_config(t.path(), &manifest, name, "max_epochs = 2\nseed = 5\n");
        assert_ok(&stegnet(&["--threads", "1", "train", "--config", p(&cfg)]));
    }
    let read = |run: &str, f: &str| fs::read(t.path().join(run).join(f)).unwrap();
    assert_eq!(read("a", "metrics.csv"), read("b", "metrics.csv"));
    assert_eq!(read("a", "best.znet"), read("b", "best.znet"));
}

#[test]
fn threads_fall_back_to_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_stegnet"))
        .args(["gradcheck", "--scale", "ops"])
        .env("STEGNET_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--threads"));
}

#[test]
fn random_model_is_at_chance() {
    let t = TempDir::new().unwrap();
    let manifest = synth(t.path(), &["--train", "0", "--val", "0", "--test", "500", "--size", "32", "--seed", "8"]);
    let ckpt = random_checkpoint(t.path());
    let o = stegnet(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--split", "test"]);
    assert_ok(&o);
    let rate: f64 = stdout(&o).trim().strip_prefix("error_rate=").unwrap().parse().unwrap();
    assert!((rate - 0.5).abs() <= 0.05, "{rate}");
}

#[test]
fn overfit_model_calls_training_cover_cover() {
    let t = TempDir::new().unwrap();
    let manifest = synth(t.path(), &["--train", "8", "--val", "8", "--test", "0", "--size", "32", "--noise", "40"]);
    let cfg = write_config(t.path(), &manifest, "run", "max_epochs = 40\npatience = 40\n");
    assert_ok(&stegnet(&["--threads", "1", "train", "--config", p(&cfg)]));
    let ckpt = t.path().join("run/best.znet");
    let data = t.path().join("data");
    let o = stegnet(&["infer", "--checkpoint", p(&ckpt), "--image", p(&data.join("cover/s00000.pgm"))]);
    assert_ok(&o);
    assert!(stdout(&o).starts_with("cover "), "{}", stdout(&o));
    let o = stegnet(&["infer", "--checkpoint", p(&ckpt), "--image", p(&data.join("stego/s00000.pgm"))]);
    assert!(stdout(&o).starts_with("stego "), "{}", stdout(&o));
}

#[test]
fn corrupt_checkpoint_and_small_image() {
    let t = TempDir::new().unwrap();
    let image = t.path().join("small.pgm");
    GrayImage::filled(16, 16, 100).unwrap().save(&image).unwrap();
    let bad = t.path().join("bad.znet");
    fs::write(&bad, b"ZNEX\x01\0\0\0").unwrap();
    let o = stegnet(&["infer", "--checkpoint", p(&bad), "--image", p(&image)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("magic"));
    let good = random_checkpoint(t.path());
    let truncated = t.path().join("truncated.znet");
    let bytes = fs::read(&good).unwrap();
    fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(stegnet(&["infer", "--checkpoint", p(&truncated), "--image", p(&image)]).status.code(), Some(2));
    let o = stegnet(&["infer", "--checkpoint", p(&good), "--image", p(&image)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stage `spp`"), "{}", stderr(&o));
}

#[test]
fn gradcheck_exit_codes_and_report() {
    let a = stegnet(&["gradcheck", "--scale", "ops", "--seed", "1"]);
    assert_ok(&a);
    assert_eq!(stdout(&a), stdout(&stegnet(&["gradcheck", "--scale", "ops", "--seed", "1"])));
    for op in ["conv2d_grouped", "batchnorm_train", "tlu", "avg_pool", "spp", "linear", "softmax_xent"] {
        assert!(stdout(&a).contains(op), "{op}");
    }
    let f = stegnet(&["gradcheck", "--scale", "ops", "--inject-fault", "conv2d"]);
    assert_eq!(f.status.code(), Some(3));
    assert!(stderr(&f).contains("conv2d"));
    assert_ok(&stegnet(&["gradcheck", "--scale", "model", "--seed", "2"]));
}

#[test]
fn feature_dumps() {
    let t = TempDir::new().unwrap();
    let ckpt = random_checkpoint(t.path());
    let flat = t.path().join("flat.pgm");
    GrayImage::filled(64, 64, 117).unwrap().save(&flat).unwrap();
    let out = t.path().join("pre");
    assert_ok(&stegnet(&["dump-features", "--checkpoint", p(&ckpt), "--image", p(&flat), "--stage", "preprocessing", "--out", p(&out)]));
    for ch in 0..30 {
        let img = GrayImage::load(out.join(format!("preprocessing_{ch}.pgm"))).unwrap();
        assert!(img.pixels().iter().all(|&v| v == img.pixels()[0]), "channel {ch}");
    }
    assert!(!out.join("preprocessing_30.pgm").exists());
    assert_eq!(fs::metadata(out.join("preprocessing.f32")).unwrap().len(), 30 * 64 * 64 * 4);

    let textured = t.path().join("tex.pgm");
    GrayImage::from_fn(64, 64, |x, y| ((x * x + 3 * y) % 251) as u8).unwrap().save(&textured).unwrap();
    let out = t.path().join("b4");
    assert_ok(&stegnet(&["dump-features", "--checkpoint", p(&ckpt), "--image", p(&textured), "--stage", "block4", "--out", p(&out)]));
    let pgms = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "pgm").count();
    assert_eq!(pgms, 128);
    assert_eq!(fs::metadata(out.join("block4.f32")).unwrap().len(), 128 * 8 * 8 * 4);

    let o = stegnet(&["dump-features", "--checkpoint", p(&ckpt), "--image", p(&flat), "--stage", "block5", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("preprocessing, sep1, sep2, block1, block2, block3, block4"));
}

#[test]
fn fixed_srm_flag_keeps_kernels() {
    let t = TempDir::new().unwrap();
    let manifest = synth(t.path(), &["--train", "8", "--val", "4", "--test", "0", "--size", "32", "--seed", "6"]);
    let cfg = write_config(t.path(), &manifest, "run", "max_epochs = 2\n");
    assert_ok(&stegnet(&["train", "--config", p(&cfg), "--fixed-srm"]));
    let model: ZhuNet<f32> = checkpoint::load(t.path().join("run/best.znet")).unwrap();
    assert_eq!(model.preprocessing, stegnet_core::srm::PreprocessingLayer::srm(false));
    assert!(fs::read_to_string(t.path().join("run/config.txt")).unwrap().contains("freeze_srm = true"));
}

#[test]
fn ablation_produces_four_runs_and_a_table() {
    let t = TempDir::new().unwrap();
    let manifest = synth(t.path(), &["--train", "8", "--val", "4", "--test", "4", "--size", "32"]);
    let cfg = write_config(t.path(), &manifest, "grid", "max_epochs = 1\n");
    let o = stegnet(&["ablate", "--config", p(&cfg)]);
    assert_ok(&o);
    let csv = fs::read_to_string(t.path().join("grid/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    for run in ["relu-trainable", "relu-fixed", "tlu3-trainable", "tlu3-fixed"] {
        assert!(t.path().join("grid").join(run).join("best.znet").exists(), "{run}");
    }
    let table = stdout(&o);
    assert!(table.contains("best_val_error") && table.lines().filter(|l| l.starts_with("tlu3 ")).count() == 2);
    let resolved = fs::read_to_string(t.path().join("grid/tlu3-fixed/config.txt")).unwrap();
    assert!(resolved.contains("activation_mode = tlu3") && resolved.contains("freeze_srm = true"));
}
