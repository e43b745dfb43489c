mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use examguard::agent::{replay, write_alert_log, AlertTrigger};
use examguard::dataset::{
    augment_minority, generate_synthetic, load_csv, split, write_csv, Dataset, SplitSpec, SynthSpec,
};
use examguard::encoder::{AssessmentManifest, Difficulty, Encoder, EncoderConfig, Label};
use examguard::eval::{
    evaluate, pca_svg, report_csv, report_json, report_table_csv, roc_svg, run_protocol, CompareEvent, MetricsReport,
    NamedCurve, Protocol,
};
use examguard::ipdetector::{project_ips, IpAddress, IpStore, ProjectedIp, QuestionBank, QuestionSetPool};
use examguard::model::{
    load_checkpoint, save_checkpoint, Model, ModelConfig, TrainConfig, Trainer, CHECKPOINT_VERSION,
};

use config::CliConfig;

fn version() -> &'static str {
    concat!(env!("CARGO_PKG_VERSION"), " (checkpoint format 1)")
}

#[derive(Parser)]
#[command(name = "examguard", version = version(), about = "Online-assessment misconduct detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ManifestArg {
    /// Assessment manifest (JSON); defaults to 20 easy questions worth 5 points.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the one-hot features and labels of a CSV export.
    Encode {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labelled synthetic CSV.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        prior: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Split, optionally augment, train and save a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        seed: u64,
        /// `denselstm`, `dnn`, `rnn` or `lstm` (overrides the config).
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Continue from this checkpoint's training state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on test CSVs.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        test: Vec<PathBuf>,
        #[command(flatten)]
        manifest: ManifestArg,
        /// `.csv` or `.json`.
        #[arg(long)]
        report: PathBuf,
    },
    /// Train several architectures and compare them on test CSVs.
    Compare {
        /// Comma-separated model names.
        #[arg(long, value_delimiter = ',', default_value = "dnn,rnn,lstm,denselstm")]
        models: Vec<String>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        tests: Vec<PathBuf>,
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        config: Option<PathBuf>,
        /// `.csv` or `.json`.
        #[arg(long)]
        report: PathBuf,
        /// First seed; runs use `seed, seed + 1, ...`.
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        runs: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Write the CSV as testset,model,accuracy,auc rows instead of one row
        /// per model with a column per test set.
        #[arg(long)]
        long: bool,
    },
    /// Replay a CSV as proctored sessions and log alerts.
    Simulate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Question bank (JSON); a placeholder bank is used when absent.
        #[arg(long)]
        bank: Option<PathBuf>,
        #[command(flatten)]
        manifest: ManifestArg,
        /// Alert log (JSON lines).
        #[arg(long)]
        alerts: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        sets: usize,
        /// Also save the final IP store snapshot.
        #[arg(long)]
        store_out: Option<PathBuf>,
    },
    /// Project the addresses of an IP store and draw them.
    Ipscan {
        #[arg(long)]
        store: PathBuf,
        /// JSON object mapping addresses to `normal` or `suspected`.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out_svg: PathBuf,
        /// Also write the projected points as JSON.
        #[arg(long)]
        out_points: Option<PathBuf>,
    },
    /// Render a report's ROC curves or projected points as SVG.
    Plot {
        #[arg(long, conflicts_with = "pca", required_unless_present = "pca")]
        roc: bool,
        #[arg(long)]
        pca: bool,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn manifest(arg: &ManifestArg) -> Result<AssessmentManifest> {
    match &arg.manifest {
        Some(p) => AssessmentManifest::load(p).with_context(|| format!("loading manifest {}", p.display())),
        None => Ok(AssessmentManifest::uniform(Difficulty::Easy, 5)?),
    }
}

fn load(path: &Path, encoder: &Encoder) -> Result<Dataset> {
    load_csv(path, encoder).with_context(|| format!("loading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: serde_json::Value) {
    println!("{value}");
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Encode { data, manifest: m, out } => {
            let encoder = Encoder::new(manifest(&m)?, EncoderConfig::default());
            let ds = load(&data, &encoder)?;
            let mut text = String::from("candidate_id");
            for q in 1..=20 {
                text.push_str(&format!(",q{q}"));
            }
            text.push_str(",long,normal,short,label\n");
            for s in ds.samples() {
                let id = s.raw.as_ref().map(|r| r.candidate_id.as_str()).unwrap_or("");
                let bits: Vec<String> = s.features.bits().iter().map(u8::to_string).collect();
                text.push_str(&format!("{id},{},{}\n", bits.join(","), s.label));
            }
            write(&out, &text)?;
            let [normal, suspected] = ds.class_counts();
            print_json(json!({"records": ds.len(), "normal": normal, "suspected": suspected}));
        }
        Command::Synth {
            n,
            prior,
            seed,
            out,
            manifest: m,
        } => {
            let ds = generate_synthetic(&SynthSpec {
                n,
                suspected_prior: prior,
                seed,
                manifest: manifest(&m)?,
                encoder: EncoderConfig::default(),
            })?;
            write_csv(&ds, &out).with_context(|| format!("writing {}", out.display()))?;
            let [normal, suspected] = ds.class_counts();
            print_json(json!({"records": ds.len(), "normal": normal, "suspected": suspected}));
        }
        Command::Train {
            data,
            manifest: m,
            config,
            out_model,
            seed,
            model,
            epochs,
            lr,
            batch_size,
            resume,
        } => {
            let cfg = CliConfig::load(config.as_deref())?;
            let encoder = Encoder::new(manifest(&m)?, cfg.encoder);
            let ds = load(&data, &encoder)?;
            if ds.is_empty() {
                bail!("{} holds no records", data.display());
            }
            let spec = SplitSpec {
                train_fraction: cfg.split.train_fraction,
                seed,
                stratified: cfg.split.stratified,
            };
            let (train, val) = split(&ds, &spec)?;
            let train = if cfg.augment && train.class_counts()[1] > 0 {
                augment_minority(&train, seed)?
            } else {
                train
            };
            let mut trainer = match resume {
                Some(path) => {
                    let ck = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
                    let state = ck
                        .train
                        .with_context(|| format!("{} holds no training state", path.display()))?;
                    let mut t = Trainer::resume(ck.model, state);
                    if let Some(e) = epochs {
                        t.state.config.epochs = e;
                    }
                    t
                }
                None => {
                    let model_cfg = match model {
                        Some(name) => {
                            ModelConfig::from_name(&name, seed).with_context(|| format!("unknown model {name:?}"))?
                        }
                        None => cfg
                            .model
                            .clone()
                            .unwrap_or_else(|| ModelConfig::from_name("denselstm", seed).unwrap())
                            .with_seed(seed),
                    };
                    let tcfg = TrainConfig {
                        seed,
                        epochs: epochs.unwrap_or(cfg.train.epochs),
                        lr: lr.unwrap_or(cfg.train.lr),
                        batch_size: batch_size.unwrap_or(cfg.train.batch_size),
                        ..cfg.train.clone()
                    };
                    Trainer::new(Model::build(model_cfg)?, tcfg)
                }
            };
            let val = (!val.is_empty()).then_some(&val);
            trainer.fit(&train, val, |e| {
                eprintln!(
                    "epoch {:>4}  loss {:.6}  train_acc {:.4}  val_acc {}",
                    e.epoch + 1,
                    e.loss,
                    e.train_accuracy,
                    e.val_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
                );
            })?;
            save_checkpoint(&out_model, &trainer.model, Some(&trainer.state))
                .with_context(|| format!("writing {}", out_model.display()))?;
            let last = trainer.state.history.last();
            print_json(json!({
                "model": trainer.model.name(),
                "epochs": trainer.state.history.len(),
                "final_loss": last.map(|e| e.loss),
                "best_epoch": trainer.state.best.as_ref().map(|b| b.epoch + 1),
                "best_val_accuracy": trainer.state.best.as_ref().map(|b| b.val_accuracy),
                "train_records": train.len(),
                "validation_records": val.map_or(0, Dataset::len),
            }));
        }
        Command::Eval {
            model,
            test,
            manifest: m,
            report,
        } => {
            let ck = load_checkpoint(&model).with_context(|| format!("loading {}", model.display()))?;
            let encoder = Encoder::new(manifest(&m)?, EncoderConfig::default());
            let tests = test.iter().map(|p| load(p, &encoder)).collect::<Result<Vec<_>>>()?;
            let best = ck.best_model();
            let r = evaluate(&best, best.name(), best.config().seed(), &tests)?;
            write_report(&r, &report, false)?;
            summarize(&r);
        }
        Command::Compare {
            models,
            train,
            tests,
            manifest: m,
            config,
            report,
            seed,
            runs,
            epochs,
            lr,
            long,
        } => {
            let cfg = CliConfig::load(config.as_deref())?;
            let encoder = Encoder::new(manifest(&m)?, cfg.encoder);
            let labelled = load(&train, &encoder)?;
            if labelled.is_empty() {
                bail!("{} holds no records", train.display());
            }
            let test_sets = tests.iter().map(|p| load(p, &encoder)).collect::<Result<Vec<_>>>()?;
            let configs = models
                .iter()
                .map(|n| ModelConfig::from_name(n.trim(), seed).with_context(|| format!("unknown model {n:?}")))
                .collect::<Result<Vec<_>>>()?;
            let tcfg = TrainConfig {
                epochs: epochs.unwrap_or(cfg.train.epochs),
                lr: lr.unwrap_or(cfg.train.lr),
                ..cfg.train.clone()
            };
            let protocol = Protocol {
                split: SplitSpec {
                    train_fraction: cfg.split.train_fraction,
                    seed,
                    stratified: cfg.split.stratified,
                },
                augment: cfg.augment && labelled.class_counts()[1] > 0,
            };
            let seeds: Vec<u64> = (0..runs.max(1)).map(|i| seed + i).collect();
            let r = run_protocol(
                &protocol,
                &configs,
                &labelled,
                &test_sets,
                &tcfg,
                &seeds,
                |ev| match ev {
                    CompareEvent::Epoch { model, seed, stats } => {
                        eprintln!(
                            "{model} seed {seed} epoch {:>4}  loss {:.6}",
                            stats.epoch + 1,
                            stats.loss
                        )
                    }
                    CompareEvent::Trained { model, seed } => eprintln!("{model} seed {seed} trained"),
                },
            )?;
            write_report(&r, &report, !long)?;
            summarize(&r);
        }
        Command::Simulate {
            data,
            model,
            bank,
            manifest: m,
            alerts,
            seed,
            sets,
            store_out,
        } => {
            let ck = load_checkpoint(&model).with_context(|| format!("loading {}", model.display()))?;
            let encoder = Encoder::new(manifest(&m)?, EncoderConfig::default());
            let ds = load(&data, &encoder)?;
            let bank = match bank {
                Some(p) => QuestionBank::load(&p).with_context(|| format!("loading {}", p.display()))?,
                None => QuestionBank::placeholder(20, 4),
            };
            let pool = QuestionSetPool::generate(&bank, sets, seed)?;
            let out = replay(&ds, &encoder, &ck.best_model(), &pool, seed)?;
            let mut buf = Vec::new();
            write_alert_log(&out.alerts, &mut buf)?;
            fs::write(&alerts, buf).with_context(|| format!("writing {}", alerts.display()))?;
            if let Some(p) = store_out {
                out.store.save(&p).with_context(|| format!("writing {}", p.display()))?;
            }
            let count = |t| out.alerts.iter().filter(|a| a.trigger == t).count();
            print_json(json!({
                "sessions": out.decisions.len(),
                "ip_repeat_alerts": count(AlertTrigger::IpRepeat),
                "behavior_alerts": count(AlertTrigger::BehaviorSuspected),
                "distinct_ips": out.store.len(),
            }));
        }
        Command::Ipscan {
            store,
            labels,
            out_svg,
            out_points,
        } => {
            let st = IpStore::load(&store).with_context(|| format!("loading {}", store.display()))?;
            let labels: BTreeMap<IpAddress, Label> = match labels {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => BTreeMap::new(),
            };
            let points = project_ips(&st, &labels)?;
            write(&out_svg, &pca_svg(&points)?)?;
            if let Some(p) = out_points {
                write(&p, &serde_json::to_string_pretty(&points)?)?;
            }
            let suspected = points.iter().filter(|p| p.label == Label::Suspected).count();
            print_json(json!({"points": points.len(), "suspected": suspected}));
        }
        Command::Plot {
            roc,
            pca: _,
            input,
            out,
        } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let svg = if roc {
                let curves: Vec<NamedCurve> = match serde_json::from_str::<MetricsReport>(&text) {
                    Ok(r) => r.curves,
                    Err(_) => serde_json::from_str(&text)
                        .with_context(|| format!("{} is neither a report nor a curve list", input.display()))?,
                };
                roc_svg(&curves)?
            } else {
                let points: Vec<ProjectedIp> =
                    serde_json::from_str(&text).with_context(|| format!("parsing points {}", input.display()))?;
                pca_svg(&points)?
            };
            write(&out, &svg)?;
            print_json(json!({"written": out.display().to_string()}));
        }
    }
    Ok(())
}

fn write_report(r: &MetricsReport, path: &Path, table: bool) -> Result<()> {
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => report_json(r)?,
        Some("csv") if table => report_table_csv(r)?,
        Some("csv") => report_csv(r)?,
        _ => bail!("report path {} must end in .csv or .json", path.display()),
    };
    write(path, &text)
}

fn summarize(r: &MetricsReport) {
    let overall: Vec<_> = r
        .models
        .iter()
        .filter_map(|m| {
            r.mean(examguard::eval::OVERALL, m)
                .map(|(acc, auc)| json!({"model": m, "accuracy": acc, "auc": auc}))
        })
        .collect();
    print_json(json!({"overall": overall, "checkpoint_format": CHECKPOINT_VERSION}));
}
