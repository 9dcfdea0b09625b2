use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drivecls::dataset::{class_code, scan, NUM_CLASSES};
use drivecls::graph::{build_yolov8_cls, ModelConfig};
use drivecls::train::{evaluate_head, extract_dataset, train_head, HeadWeights, TrainConfig};
use drivecls::DType;

fn drivecls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drivecls"))
        .args(args)
        .env_remove("DW_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `per_class` images per class; images of one class share a colour with a
/// small per-image ramp.
fn write_dataset(root: &Path, per_class: usize) {
    for c in 0..NUM_CLASSES {
        let dir = root.join(class_code(c));
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let base = [(c * 53 % 256) as u8, (c * 97 % 256) as u8, (255 - c * 25) as u8];
            let img = image::RgbImage::from_fn(64, 48, |x, y| {
                let d = ((x + y + i as u32) % 4) as u8;
                image::Rgb([base[0].saturating_add(d), base[1], base[2].saturating_sub(d)])
            });
            img.save(dir.join(format!("img_{i}.png"))).unwrap();
        }
    }
}

fn random_weights(dir: &Path) -> PathBuf {
    let p = dir.join("w.dwt");
    let o = drivecls(&["init", "--classes", "10", "--seed", "3", "--out", s(&p)]);
    assert!(o.status.success(), "{}", stderr(&o));
    p
}

#[test]
fn params_prints_exact_counts() {
    for (nc, want) in [("10", "1451098"), ("1000", "2719288")] {
        let o = drivecls(&["params", "--classes", nc]);
        assert!(o.status.success());
        let out = stdout(&o);
        assert_eq!(out.lines().last(), Some(want));
        assert_eq!(out.lines().count(), 12, "{out}");
    }
    let o = drivecls(&["params", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema"], "drivecls.params/1");
    assert_eq!(v["params"], 1451098);
    assert_eq!(v["layers"].as_array().unwrap().len(), 10);
}

#[test]
fn classify_reports_prediction_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let weights = random_weights(dir.path());
    write_dataset(&dir.path().join("data"), 1);
    let image = dir.path().join("data/c1/img_0.png");

    let o = drivecls(&["classify", "--weights", s(&weights), "--image", s(&image), "--topk", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines[0].starts_with('c') && lines[0].contains(" p="), "{}", lines[0]);
    let probs: Vec<f64> = lines[1..].iter().map(|l| l.rsplit(' ').next().unwrap().parse().unwrap()).collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));

    let o = drivecls(&["classify", "--weights", s(&weights), "--image", s(&image), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema"], "drivecls.prediction/1");
    assert_eq!(v["topk"].as_array().unwrap().len(), 5);
    let sum: f64 = v["probs"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-5);

    let missing = dir.path().join("absent.dwt");
    let o = drivecls(&["classify", "--weights", s(&missing), "--image", s(&image)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("absent.dwt"));

    let bad = dir.path().join("bad.jpg");
    std::fs::write(&bad, b"garbage").unwrap();
    let o = drivecls(&["classify", "--weights", s(&weights), "--image", s(&bad)]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let o = drivecls(&["classify", "--weights", s(&weights)]);
    assert_eq!(o.status.code(), Some(2));
    let o = drivecls(&["classify", "--weights", s(&image), "--image", s(&image)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn eval_is_reproducible_and_validates_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let weights = random_weights(dir.path());
    let data = dir.path().join("data");
    write_dataset(&data, 4);
    let run = |out: &Path| {
        let o = drivecls(&[
            "eval", "--weights", s(&weights), "--data-root", s(&data), "--ratios", "0.5,0.25,0.25", "--seed", "42",
            "--split", "test", "--out", s(out), "--workers", "2",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).lines().any(|l| l.starts_with("macro")));
        std::fs::read(out.join("report.json")).unwrap()
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["schema"], "drivecls.eval/1");
    let csv = std::fs::read_to_string(dir.path().join("a/confusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);

    let o = drivecls(&["eval", "--weights", s(&weights), "--data-root", s(&data), "--ratios", "0.7,0.2,0.2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = drivecls(&["eval", "--weights", s(&weights), "--data-root", s(&data), "--ratios", "0.7,0.3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn split_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 6);
    let run = |out: &str| {
        let out = dir.path().join(out);
        let o = drivecls(&["split", "--data-root", s(&data), "--seed", "1", "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        ["train.txt", "val.txt", "test.txt"].map(|f| std::fs::read(out.join(f)).unwrap())
    };
    let a = run("m1");
    assert_eq!(a, run("m2"));
    let total: usize = a.iter().map(|b| b.iter().filter(|&&c| c == b'\n').count()).sum();
    assert_eq!(total, 60);
}

#[test]
fn overfit_weights_give_all_ones_macro_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 2);
    let index = scan(&data).unwrap();
    assert_eq!(index.len(), 20);

    let mut model = build_yolov8_cls(ModelConfig::yolov8n_cls(10)).unwrap();
    let mut store = model.random_weights(5);
    model.bind(&store).unwrap();
    let (examples, failed) = extract_dataset(&model, &index.root, &index.samples, 1, None).unwrap();
    assert!(failed.is_empty());
    let cfg = TrainConfig {
        lr: 0.5,
        epochs: 300,
        batch_size: 20,
        seed: 1,
        l2: 0.0,
    };
    let (head, _) = train_head(HeadWeights::zeros(10, 1280), &examples, &examples, &cfg).unwrap();
    assert_eq!(evaluate_head(&head, &examples).unwrap().1, 1.0);
    head.write_into(&mut store);
    let weights = dir.path().join("overfit.dwt");
    store.save_file(&weights, DType::F32).unwrap();

    let out = dir.path().join("report");
    let o = drivecls(&["eval", "--weights", s(&weights), "--data-root", s(&data), "--split", "all", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let row = text.lines().find(|l| l.starts_with("macro")).unwrap();
    assert_eq!(row.split_whitespace().skip(1).collect::<Vec<_>>(), vec!["1.0000"; 3], "{text}");
}

#[test]
fn train_head_writes_head_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let weights = random_weights(dir.path());
    let data = dir.path().join("data");
    write_dataset(&data, 4);
    let head = dir.path().join("head.dwt");
    let log = dir.path().join("epochs.csv");
    let cache = dir.path().join("cache");
    let args = [
        "train-head", "--weights", s(&weights), "--data-root", s(&data), "--ratios", "0.5,0.25,0.25", "--epochs", "3",
        "--lr", "0.1", "--batch-size", "4", "--out", s(&head), "--log", s(&log), "--cache-dir", s(&cache),
    ];
    let o = drivecls(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&log).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,train_loss,val_loss,top1,top5"));
    assert_eq!(csv.lines().count(), 4);
    let first = std::fs::read(&head).unwrap();
    assert!(std::fs::read_dir(&cache).unwrap().count() == 1);

    let o = drivecls(&args);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&head).unwrap(), first);

    let image = data.join("c0/img_0.png");
    let o = drivecls(&["classify", "--weights", s(&weights), "--head", s(&head), "--image", s(&image)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn bench_reports_counters() {
    let o = drivecls(&["bench", "--size", "64", "--iters", "10", "--warmup", "1", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema"], "drivecls.bench/1");
    assert_eq!(v["params"], 1451098);
    assert_eq!(v["samples_ms"].as_array().unwrap().len(), 10);
    let o = drivecls(&["bench", "--iters", "3"]);
    assert_eq!(o.status.code(), Some(2));
}
