use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use perturbench::cli::{
    cmd_analyze, cmd_attack, cmd_synth, cmd_train, default_campaign, default_checkpoint, default_dataset, timed,
    RunConfig,
};
use perturbench::Result;

/// Train small CNNs, attack them with FGSM/BIM and analyse adversarial selectivity.
#[derive(Parser)]
#[command(name = "perturbench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the top-level seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct Inputs {
    /// Class-per-folder PPM tree [default: <out>/dataset].
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Model checkpoint [default: <out>/model.ckpt].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Campaign artifact from `attack` [default: <out>/campaigns.json].
    #[arg(long)]
    campaign: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark as a PPM tree under <out>/dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Split, train and evaluate; writes <out>/model.ckpt.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Run the configured FGSM/BIM campaigns on the test split.
    Attack {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Embed features, compute class centers, selectivity and distribution statistics.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// synth, train, attack and analyze in one go.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Print the default configuration.
    Config,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn or_default(given: &Option<PathBuf>, out: &Path, default: fn(&Path) -> PathBuf) -> PathBuf {
    given.clone().unwrap_or_else(|| default(out))
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let s = timed(out, "synth", || cmd_synth(cfg, out))?;
    println!("wrote {} records in {} classes to {}", s.records, s.class_counts.len(), default_dataset(out).display());
    for (name, count) in s.class_names.iter().zip(&s.class_counts) {
        println!("  {name}\t{count}");
    }
    Ok(())
}

fn train(cfg: &RunConfig, out: &Path, dataset: &Path) -> Result<()> {
    let s = timed(out, "train", || cmd_train(cfg, dataset, out))?;
    println!(
        "train accuracy {:.4}, test accuracy {:.4} ({} / {} records)",
        s.train_accuracy, s.test_accuracy, s.split.train_records, s.split.test_records
    );
    if let Some(m) = &s.memorization {
        println!("memorization: {} samples, train accuracy {:.4}", m.samples, m.train_accuracy);
    }
    println!("checkpoint {}", default_checkpoint(out).display());
    Ok(())
}

fn attack(cfg: &RunConfig, out: &Path, checkpoint: &Path, dataset: &Path) -> Result<()> {
    let s = timed(out, "attack", || cmd_attack(cfg, checkpoint, dataset, out))?;
    println!("algorithm\tepsilon\t# adversarial examples\tfooling rate");
    for r in &s.rows {
        println!("{}\t{:.6}\t{}\t{:.2}%", r.algorithm, r.epsilon, r.adversarial_examples, r.fooling_rate_percent);
    }
    Ok(())
}

fn analyze(cfg: &RunConfig, out: &Path, inputs: &Inputs) -> Result<()> {
    let checkpoint = or_default(&inputs.checkpoint, out, default_checkpoint);
    let dataset = or_default(&inputs.dataset, out, default_dataset);
    let campaign = or_default(&inputs.campaign, out, default_campaign);
    let s = timed(out, "analyze", || cmd_analyze(cfg, &checkpoint, &dataset, &campaign, out))?;
    println!("embedded {} samples (feature width {}), k = {}", s.samples, s.feature_width, s.k);
    for c in &s.campaigns {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        println!(
            "{}: top-{} coverage {} (chance {:.3}), entropy {}, gini {}",
            c.label,
            s.k,
            fmt(c.selectivity.coverage),
            c.selectivity.chance_baseline,
            fmt(c.distribution.normalized_entropy),
            fmt(c.distribution.gini)
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => synth(&load_config(&common)?, &common.out),
        Command::Train { common, inputs } => {
            let dataset = or_default(&inputs.dataset, &common.out, default_dataset);
            train(&load_config(&common)?, &common.out, &dataset)
        }
        Command::Attack { common, inputs } => {
            let checkpoint = or_default(&inputs.checkpoint, &common.out, default_checkpoint);
            let dataset = or_default(&inputs.dataset, &common.out, default_dataset);
            attack(&load_config(&common)?, &common.out, &checkpoint, &dataset)
        }
        Command::Analyze { common, inputs } => analyze(&load_config(&common)?, &common.out, &inputs),
        Command::Run { common } => {
            let cfg = load_config(&common)?;
            let out = &common.out;
            synth(&cfg, out)?;
            train(&cfg, out, &default_dataset(out))?;
            attack(&cfg, out, &default_checkpoint(out), &default_dataset(out))?;
            analyze(&cfg, out, &Inputs { dataset: None, checkpoint: None, campaign: None })
        }
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&RunConfig::default())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PERTURBENCH_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
