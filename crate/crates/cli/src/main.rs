use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use drivecls::dataset::{self, Split, SplitSpec, SplitStrategy};
use drivecls::graph::{count_macs, count_params, layer_summary};
use drivecls::train::{self, FeatureCache, HeadWeights, TrainConfig};
use drivecls::{build_yolov8_cls, eval, DType, Model, ModelConfig, Prediction, WeightStore};

/// Failure classes that map to distinct exit codes.
#[derive(Clone, Copy, Debug)]
enum Exit {
    Usage = 2,
    Weights = 3,
    Image = 4,
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Exit::Usage => "invalid arguments",
            Exit::Weights => "cannot load weights",
            Exit::Image => "cannot read image",
        })
    }
}

#[derive(Parser)]
#[command(name = "drivecls", version, about = "Distracted-driver classification with YOLOv8n-cls")]
struct Cli {
    /// Worker threads for evaluation and feature extraction.
    #[arg(long, global = true, env = "DW_WORKERS", default_value_t = 1)]
    workers: usize,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify one image.
    Classify {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        /// Head-only DWT file replacing the final linear layer.
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Evaluate one partition of a dataset; writes report.json and confusion.csv.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data_root: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        /// Partition to evaluate.
        #[arg(long = "split", value_enum, default_value_t = Partition::Test)]
        split_name: Partition,
        #[arg(long)]
        head: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Time single-image forward passes.
    Bench {
        /// Weights to bench; seeded random weights when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = dataset::INPUT_SIZE)]
        size: usize,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        /// Threads inside each forward pass.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Per-layer parameter table and the exact total.
    Params {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = dataset::INPUT_SIZE)]
        size: usize,
        #[arg(long)]
        json: bool,
    },
    /// Write train/val/test manifests.
    Split {
        #[arg(long)]
        data_root: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the final linear layer on frozen backbone features.
    TrainHead {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data_root: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long, default_value_t = 0.1)]
        lr: f32,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.0)]
        l2: f32,
        /// Start from the head in --weights instead of zeros.
        #[arg(long)]
        warm_start: bool,
        /// Directory for cached backbone features.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Trained head (DWT).
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write a seeded random weight file (for smoke tests and benches).
    Init {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Dtype::F32)]
        dtype: Dtype,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct SplitArgs {
    /// train,val,test fractions summing to 1.
    #[arg(long, default_value = "0.7,0.15,0.15")]
    ratios: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Keep every driver in one partition.
    #[arg(long)]
    group_by_subject: bool,
    /// Subject list CSV; looked up next to the data root when absent.
    #[arg(long)]
    subjects: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Partition {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dtype {
    F32,
    F16,
}

impl SplitArgs {
    fn spec(&self) -> Result<SplitSpec> {
        let ratios: Vec<f64> = self
            .ratios
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("--ratios {:?}", self.ratios))
            .context(Exit::Usage)?;
        let Ok(ratios) = <[f64; 3]>::try_from(ratios) else {
            return Err(anyhow::anyhow!("--ratios needs three values, got {:?}", self.ratios).context(Exit::Usage));
        };
        let spec = SplitSpec {
            ratios,
            seed: self.seed,
            strategy: if self.group_by_subject {
                SplitStrategy::GroupedBySubject
            } else {
                SplitStrategy::StratifiedRandom
            },
        };
        spec.validate().context(Exit::Usage)?;
        Ok(spec)
    }

    fn run(&self, root: &Path) -> Result<(dataset::DatasetIndex, Split)> {
        let spec = self.spec()?;
        let index = dataset::scan_with_subjects(root, self.subjects.as_deref())
            .with_context(|| format!("scanning {}", root.display()))?;
        let split = dataset::split(&index, &spec)?;
        Ok((index, split))
    }
}

fn read_store(path: &Path) -> Result<WeightStore> {
    WeightStore::load_file(path)
        .with_context(|| path.display().to_string())
        .context(Exit::Weights)
}

/// Loads and binds a model, optionally swapping in a separately trained head.
fn load_model(weights: &Path, head: Option<&Path>) -> Result<Model> {
    let mut store = read_store(weights)?;
    if let Some(head_path) = head {
        let head = HeadWeights::from_store(&read_store(head_path)?)
            .with_context(|| head_path.display().to_string())
            .context(Exit::Weights)?;
        head.write_into(&mut store);
        store.metadata.nc = head.classes;
    }
    if store.metadata.arch != "yolov8n-cls" {
        return Err(anyhow::anyhow!("unsupported architecture {:?}", store.metadata.arch).context(Exit::Weights));
    }
    let mut model = build_yolov8_cls(ModelConfig::yolov8n_cls(store.metadata.nc)).context(Exit::Weights)?;
    model
        .bind(&store)
        .with_context(|| weights.display().to_string())
        .context(Exit::Weights)?;
    Ok(model)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers.max(1);
    match cli.command {
        Command::Classify {
            weights,
            image,
            topk,
            head,
            json,
        } => {
            if topk == 0 {
                bail!(anyhow::anyhow!("--topk must be at least 1").context(Exit::Usage));
            }
            let model = load_model(&weights, head.as_deref())?;
            let input = dataset::load_image(&image, dataset::INPUT_SIZE)
                .with_context(|| image.display().to_string())
                .context(Exit::Image)?;
            let logits = model.forward(&input)?.remove(0);
            let p = Prediction::from_logits(&logits, topk)?;
            if json {
                print_json(&p)?;
            } else {
                println!("{}", p.headline());
                for (rank, e) in p.topk.iter().enumerate() {
                    println!("{:>3}. {} {:<34} {:.4}", rank + 1, e.code, dataset::class_label(e.class_id), e.prob);
                }
            }
        }
        Command::Eval {
            weights,
            data_root,
            split,
            split_name,
            head,
            out,
            json,
        } => {
            let (index, parts) = split.run(&data_root)?;
            let model = load_model(&weights, head.as_deref())?;
            let samples: &[dataset::Sample] = match split_name {
                Partition::Train => &parts.train,
                Partition::Val => &parts.val,
                Partition::Test => &parts.test,
                Partition::All => &index.samples,
            };
            let report = eval::evaluate(&model, &index.root, samples, workers)?;
            fs::create_dir_all(&out)?;
            report.write_json(out.join("report.json"))?;
            report.write_confusion_csv(out.join("confusion.csv"))?;
            if json {
                print_json(&report)?;
            } else {
                println!("{:<6} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1");
                for (j, m) in report.per_class.iter().enumerate() {
                    println!("{:<6} {:>9.4} {:>9.4} {:>9.4}", dataset::class_code(j), m.precision, m.recall, m.f1);
                }
                let m = &report.macro_avg;
                println!("{:<6} {:>9.4} {:>9.4} {:>9.4}", "macro", m.precision, m.recall, m.f1);
                println!(
                    "top1 {:.4} top5 {:.4} ({} evaluated, {} failed)",
                    report.top1, report.top5, report.n_evaluated, report.n_failed
                );
            }
        }
        Command::Bench {
            weights,
            classes,
            size,
            iters,
            warmup,
            threads,
            seed,
            out,
            json,
        } => {
            let model = match weights {
                Some(w) => load_model(&w, None)?,
                None => {
                    let mut m = build_yolov8_cls(ModelConfig::yolov8n_cls(classes)).context(Exit::Usage)?;
                    let store = m.random_weights(seed);
                    m.bind(&store)?;
                    m
                }
            };
            let report = drivecls::bench::bench(&model, size, iters, warmup, threads).context(Exit::Usage)?;
            if let Some(path) = out {
                fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
                    .with_context(|| path.display().to_string())?;
            }
            if json {
                print_json(&report)?;
            } else {
                let l = &report.latency_ms;
                println!("params {}  macs {}  flops {}  input {size}", report.params, report.macs, report.flops);
                println!(
                    "latency ms over {iters} runs ({threads} thread{}): mean {:.2} p50 {:.2} p90 {:.2} p99 {:.2} min {:.2} max {:.2}",
                    if threads == 1 { "" } else { "s" },
                    l.mean,
                    l.p50,
                    l.p90,
                    l.p99,
                    l.min,
                    l.max
                );
            }
        }
        Command::Params { classes, size, json } => {
            let model = build_yolov8_cls(ModelConfig::yolov8n_cls(classes)).context(Exit::Usage)?;
            let layers = layer_summary(&model, size);
            let total = count_params(&model);
            if json {
                #[derive(Serialize)]
                struct ParamsReport<'a> {
                    schema: &'static str,
                    params: u64,
                    macs: u64,
                    flops: u64,
                    input_size: usize,
                    layers: &'a [drivecls::graph::LayerSummary],
                }
                let cost = count_macs(&model, size);
                print_json(&ParamsReport {
                    schema: "drivecls.params/1",
                    params: total,
                    macs: cost.macs,
                    flops: cost.flops,
                    input_size: size,
                    layers: &layers,
                })?;
            } else {
                println!(
                    "{:>3}  {:<12} {:<12} {:>5} {:>5} {:>10} {:>9} {:>14}",
                    "idx", "name", "kind", "c_in", "c_out", "params", "out", "macs"
                );
                for l in &layers {
                    println!(
                        "{:>3}  {:<12} {:<12} {:>5} {:>5} {:>10} {:>9} {:>14}",
                        l.index,
                        l.name,
                        l.spec.kind(),
                        l.spec.c_in(),
                        l.spec.c_out(),
                        l.params,
                        format!("{}x{}", l.out_h, l.out_w),
                        l.cost.macs
                    );
                }
                println!("{total}");
            }
        }
        Command::Split { data_root, split, out } => {
            let (index, parts) = split.run(&data_root)?;
            dataset::write_manifests(&out, &parts)?;
            println!(
                "{} samples: train {} val {} test {} -> {}",
                index.len(),
                parts.train.len(),
                parts.val.len(),
                parts.test.len(),
                out.display()
            );
        }
        Command::TrainHead {
            weights,
            data_root,
            split,
            lr,
            epochs,
            batch_size,
            l2,
            warm_start,
            cache_dir,
            out,
            log,
        } => {
            let config = TrainConfig {
                lr,
                epochs,
                batch_size,
                seed: split.seed,
                l2,
            };
            config.validate().context(Exit::Usage)?;
            let (index, parts) = split.run(&data_root)?;
            let store = read_store(&weights)?;
            let model = load_model(&weights, None)?;
            let mut cache = cache_dir
                .map(|dir| FeatureCache::open(dir, FeatureCache::checksum(&store)))
                .transpose()?;
            let (train_set, train_failed) =
                train::extract_dataset(&model, &index.root, &parts.train, workers, cache.as_mut())?;
            let (val_set, val_failed) = train::extract_dataset(&model, &index.root, &parts.val, workers, cache.as_mut())?;
            for (path, reason) in train_failed.iter().chain(&val_failed) {
                log::warn!("skipped {path}: {reason}");
            }
            let init = match HeadWeights::from_model(&model)? {
                h if warm_start && h.classes == dataset::NUM_CLASSES => h,
                h => HeadWeights::zeros(dataset::NUM_CLASSES, h.dim),
            };
            let (head, records) = train::train_head(init, &train_set, &val_set, &config)?;
            let mut meta = store.metadata.clone();
            meta.nc = head.classes;
            train::write_head(&out, &head, meta).with_context(|| out.display().to_string())?;
            if let Some(path) = log {
                train::write_epoch_csv(&path, &records)?;
            }
            println!("epoch train_loss val_loss top1 top5");
            for r in &records {
                println!(
                    "{:>5} {:.5} {:.5} {:.4} {:.4}",
                    r.epoch, r.train_loss, r.val_loss, r.top1, r.top5
                );
            }
        }
        Command::Init {
            classes,
            seed,
            dtype,
            out,
        } => {
            let model = build_yolov8_cls(ModelConfig::yolov8n_cls(classes)).context(Exit::Usage)?;
            let dtype = match dtype {
                Dtype::F32 => DType::F32,
                Dtype::F16 => DType::F16,
            };
            model
                .random_weights(seed)
                .save_file(&out, dtype)
                .with_context(|| out.display().to_string())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Exit>().map_or(1, |&x| x as u8);
            ExitCode::from(code)
        }
    }
}
