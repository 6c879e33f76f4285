mod run_config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mambaforgcn::checkpoint::Checkpoint;
use mambaforgcn::config::ablate;
use mambaforgcn::data::{attach_conllu, label_histogram, load_dataset, parse_conllu, save_dataset, Sample};
use mambaforgcn::synth::{synth_longrange_generate, SynthConfig};
use mambaforgcn::trainer::{evaluate_checkpoint, evaluate_model, layer_sweep, train};
use mambaforgcn::{PoolMode, Scalar, Variant};

use run_config::RunConfig;

#[derive(Parser)]
#[command(name = "mambaforgcn", version, about = "Train and evaluate the aspect sentiment model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run config; writes the resolved config, per-epoch
    /// metrics and the best checkpoint to the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        ablate: Option<Variant>,
        #[arg(long)]
        pool: Option<PoolMode>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f64")]
        precision: Precision,
    },
    /// Score a checkpoint on a JSONL dataset and print metrics as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// CoNLL-U parses parallel to `--data`.
        #[arg(long)]
        conllu: Option<PathBuf>,
    },
    /// Generate the synthetic long-range dataset as JSONL.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        d_min: usize,
        #[arg(long, default_value_t = 15)]
        d_max: usize,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        distractor_prob: f64,
    },
    /// Train one model per layer count and print an accuracy table.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<usize>,
        #[arg(long, default_value = "run.toml")]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            ablate,
            pool,
            epochs,
            out_dir,
            precision,
        } => {
            let cfg = resolve(&config, seed, ablate, pool, epochs, out_dir)?;
            match precision {
                Precision::F64 => cmd_train::<f64>(&cfg),
                Precision::F32 => cmd_train::<f32>(&cfg),
            }
        }
        Command::Eval { checkpoint, data, conllu } => cmd_eval(&checkpoint, &data, conllu.as_deref()),
        Command::Synth {
            out,
            d_min,
            d_max,
            n,
            seed,
            distractor_prob,
        } => cmd_synth(
            &out,
            &SynthConfig {
                d_min,
                d_max,
                n,
                seed,
                distractor_prob,
                ..SynthConfig::default()
            },
        ),
        Command::Sweep {
            layers,
            config,
            seed,
            epochs,
            out_dir,
        } => cmd_sweep(&resolve(&config, seed, None, None, epochs, out_dir)?, &layers),
    }
}

fn resolve(
    path: &Path,
    seed: Option<u64>,
    variant: Option<Variant>,
    pool: Option<PoolMode>,
    epochs: Option<usize>,
    out_dir: Option<PathBuf>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.model.seed = s;
    }
    if let Some(v) = variant {
        cfg.model = ablate(&cfg.model, v)?;
    }
    if let Some(p) = pool {
        cfg.model.pool = p;
    }
    if let Some(e) = epochs {
        cfg.model.epochs = e;
    }
    if let Some(o) = out_dir {
        cfg.data.out_dir = o;
    }
    cfg.model.validate()?;
    Ok(cfg)
}

fn load_split(path: &Path, conllu: Option<&Path>) -> Result<Vec<Sample>> {
    let mut samples = load_dataset(path)?;
    if let Some(c) = conllu {
        let text = std::fs::read_to_string(c).with_context(|| format!("reading {}", c.display()))?;
        attach_conllu(&mut samples, &parse_conllu(&text)?).with_context(|| format!("attaching {}", c.display()))?;
    }
    Ok(samples)
}

struct Splits {
    train: Vec<Sample>,
    dev: Vec<Sample>,
    test: Option<Vec<Sample>>,
}

fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let d = &cfg.data;
    let train = load_split(&d.train, d.train_conllu.as_deref())?;
    if train.is_empty() {
        bail!("{}: training set is empty", d.train.display());
    }
    let dev = match &d.dev {
        Some(p) => load_split(p, d.dev_conllu.as_deref())?,
        None => Vec::new(),
    };
    let test = d.test.as_ref().map(|p| load_split(p, d.test_conllu.as_deref())).transpose()?;
    Ok(Splits { train, dev, test })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn cmd_train<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let splits = load_splits(cfg)?;
    let out = &cfg.data.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    log::info!(
        "training {} on {} samples {:?}, dev {}",
        cfg.model.variant,
        splits.train.len(),
        label_histogram(&splits.train),
        splits.dev.len()
    );

    let metrics_path = out.join("metrics.jsonl");
    let mut log_file = BufWriter::new(File::create(&metrics_path)?);
    let mut write_err = None;
    let outcome = train::<T>(
        cfg.model.clone(),
        &splits.train,
        &splits.dev,
        cfg.data.word_vectors.as_deref(),
        |rec| {
            let line = serde_json::to_string(rec).expect("record serializes");
            if let Err(e) = writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
                write_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(e).context(format!("writing {}", metrics_path.display()));
    }
    let ck_path = out.join("checkpoint.json");
    outcome.best.save(&ck_path)?;

    let mut summary = serde_json::json!({
        "variant": cfg.model.variant.name(),
        "best_epoch": outcome.best_epoch,
        "dev_acc": outcome.history[outcome.best_epoch - 1].dev_acc,
        "dev_macro_f1": outcome.history[outcome.best_epoch - 1].dev_macro_f1,
        "params": outcome.trainer.model.num_params(),
        "checkpoint": ck_path,
    });
    if let Some(test) = &splits.test {
        let best = outcome.best.to_model::<T>()?;
        let m = evaluate_model(&best, &mambaforgcn::data::encode(test, &outcome.best.words, &outcome.best.tags))?;
        write_json(&out.join("test_metrics.json"), &m)?;
        summary["test"] = serde_json::to_value(&m)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data: &Path, conllu: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let samples = load_split(data, conllu)?;
    let m = match ck.scalar.as_str() {
        "f32" => evaluate_checkpoint::<f32>(&ck, &samples)?,
        _ => evaluate_checkpoint::<f64>(&ck, &samples)?,
    };
    println!("{}", serde_json::to_string(&m)?);
    Ok(())
}

fn cmd_synth(out: &Path, cfg: &SynthConfig) -> Result<()> {
    let samples = synth_longrange_generate(cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_dataset(out, &samples)?;
    log::info!("wrote {} samples {:?} to {}", samples.len(), label_histogram(&samples), out.display());
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, layers: &[usize]) -> Result<()> {
    let splits = load_splits(cfg)?;
    let rows = layer_sweep::<f64>(&cfg.model, layers, &splits.train, &splits.dev)?;
    let out = &cfg.data.out_dir;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let mut w = BufWriter::new(File::create(out.join("sweep.jsonl"))?);
    println!("layers  best_epoch  dev_acc  dev_macro_f1  seconds");
    for r in &rows {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
        println!(
            "{:>6}  {:>10}  {:>7.4}  {:>12.4}  {:>7.1}",
            r.layers, r.best_epoch, r.dev_acc, r.dev_macro_f1, r.seconds
        );
    }
    w.flush()?;
    Ok(())
}
