use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use histocad_mavit::{checkpoint_id, Mavit, ModelConfig};
use histocad_slidekit::{parse_ratios, DatasetSplit, Partition};
use histocad_trainkit::{
    evaluate, log_accuracy, read_config, run_ablation, train, write_curve, DataSpec, Splits, TrainConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "trainkit", about = "Train, evaluate and ablate the patch classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint, curve and split.
    Train(RunArgs),
    /// Train and test the three ablation variants.
    Ablate(RunArgs),
    /// Write a prediction log for one split of a finished run.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Directory holding `run.json`; defaults to the checkpoint's directory.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Preset name (paper, toy, tiny, micro) or a JSON/TOML file.
    #[arg(long, default_value = "tiny")]
    model_config: String,
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// Data source description; defaults to the synthetic set.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "0.7,0.15,0.15")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Everything needed to rebuild a run's dataset and split.
#[derive(Serialize, Deserialize)]
struct RunRecord {
    model_config: ModelConfig,
    train_config: TrainConfig,
    data: DataSpec,
    split: DatasetSplit,
}

fn model_config(arg: &str) -> Result<ModelConfig> {
    Ok(match arg {
        "paper" => ModelConfig::paper(),
        "toy" => ModelConfig::toy(),
        "tiny" => ModelConfig::tiny(),
        "micro" => ModelConfig::micro(),
        path => read_config(Path::new(path))?,
    })
}

fn prepare(args: &RunArgs) -> Result<(RunRecord, Splits)> {
    let model_config = model_config(&args.model_config)?;
    let train_config: TrainConfig = match &args.train_config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    train_config.validate()?;
    let data = match &args.data {
        Some(p) => DataSpec::read(p)?,
        None => DataSpec::default(),
    };
    let dataset = data.load(model_config.input_size)?;
    let split = dataset.split(parse_ratios(&args.ratios)?, args.split_seed)?;
    let splits = Splits::new(&dataset, split.clone());
    log::info!(
        "{} patches: train {}, val {}, test {}",
        dataset.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok((RunRecord { model_config, train_config, data, split }, splits))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(args) => {
            let (record, splits) = prepare(&args)?;
            fs::create_dir_all(&args.out)?;
            let model = Mavit::<f32>::new(record.model_config.clone(), record.train_config.seed)?;
            let outcome = train(model, &record.train_config, &splits)?;
            let id = outcome.model.save(&args.out.join("model.ckpt"))?;
            write_curve(&outcome.curve, &args.out.join("curve.csv"))?;
            write_json(&args.out.join("run.json"), &record)?;
            println!(
                "checkpoint {id}: best epoch {} of {}, val loss {:.4}",
                outcome.best_epoch,
                outcome.curve.len(),
                outcome.best_val_loss
            );
        }
        Command::Ablate(args) => {
            let (record, splits) = prepare(&args)?;
            fs::create_dir_all(&args.out)?;
            let table = run_ablation::<f32>(&record.model_config, &record.train_config, &splits)?;
            write_json(&args.out.join("ablation.json"), &table)?;
            fs::write(args.out.join("ablation.csv"), table.to_csv())?;
            write_json(&args.out.join("run.json"), &record)?;
            print!("{}", table.to_markdown());
        }
        Command::Eval { checkpoint, split, run_dir, out } => {
            let partition: Partition = serde_json::from_value(serde_json::Value::String(split.clone()))
                .with_context(|| format!("unknown split `{split}`"))?;
            let run_dir = run_dir
                .or_else(|| checkpoint.parent().map(Path::to_path_buf))
                .unwrap_or_default();
            let record: RunRecord = read_config(&run_dir.join("run.json"))?;
            let bytes = fs::read(&checkpoint)?;
            let model = Mavit::<f32>::from_checkpoint_bytes(&bytes)?;
            if model.config().input_size != record.model_config.input_size {
                bail!("checkpoint input size differs from the run's data");
            }
            let dataset = record.data.load(model.config().input_size)?;
            let splits = Splits::new(&dataset, record.split);
            let log = evaluate(&model, splits.get(partition), &split, &checkpoint_id(&bytes))?;
            log.save(&out)?;
            println!("{} records, accuracy {:.4}", log.records.len(), log_accuracy(&log));
        }
    }
    Ok(())
}
