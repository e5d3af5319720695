use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use operon::experiment::{
    cmd_evaluate, cmd_generate, cmd_train, model_path, ExperimentConfig, Variant,
};
use operon::metrics::{MetricReport, Summary};
use operon::{Error, Result};

#[derive(Parser)]
#[command(name = "operon", version, about = "Multi-resolution operator surrogates for 1-D PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate high-resolution, low-resolution and test datasets.
    Generate(Common),
    /// Train one or all benchmark variants.
    Train(Common),
    /// Score trained models on the test set.
    Evaluate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; without it the full-scale defaults for KdV apply.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data seed for `generate`, training seed for `train` and `evaluate`.
    #[arg(long)]
    seed: Option<u64>,
    /// Benchmark variant; every variant when omitted.
    #[arg(long)]
    variant: Option<String>,
    /// Use the desk-scale preset.
    #[arg(long)]
    desk: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Loaded {
    config: ExperimentConfig,
    /// Directory that relative paths in the config refer to.
    base: PathBuf,
}

fn load_config(args: &Common) -> Result<Loaded> {
    match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let config = ExperimentConfig::from_json(&text, args.desk)?;
            let base = path
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            Ok(Loaded { config, base })
        }
        None => Ok(Loaded {
            config: ExperimentConfig::from_json(r#"{"equation":"kdv"}"#, args.desk)?,
            base: PathBuf::from("."),
        }),
    }
}

fn variants(args: &Common) -> Result<Vec<Variant>> {
    match &args.variant {
        Some(name) => Ok(vec![name.parse()?]),
        None => Ok(Variant::ALL.to_vec()),
    }
}

fn seeds(args: &Common, config: &ExperimentConfig) -> Vec<u64> {
    match args.seed {
        Some(s) => vec![s],
        None => config.seeds.clone(),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let Loaded { config, base } = load_config(&args)?;
            let out = args.out.unwrap_or_else(|| base.join(&config.data_dir));
            let seed = args.seed.unwrap_or(0);
            let manifest = cmd_generate(&config, seed, &out)?;
            for (name, sum) in &manifest.files {
                println!("{}  {sum}", out.join(name).display());
            }
        }
        Command::Train(args) => {
            let Loaded { config, base } = load_config(&args)?;
            let variants = variants(&args)?;
            for &v in &variants {
                config.check_variant(v)?;
            }
            let data_dir = base.join(&config.data_dir);
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
            for seed in seeds(&args, &config) {
                for &variant in &variants {
                    info!("training {variant} with seed {seed}");
                    let outcome = cmd_train(&config, variant, seed, &data_dir, &out)?;
                    println!("{}", outcome.model_path.display());
                }
            }
        }
        Command::Evaluate(args) => {
            let Loaded { config, base } = load_config(&args)?;
            let variants = variants(&args)?;
            let data_dir = base.join(&config.data_dir);
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
            let explicit = args.variant.is_some() || args.seed.is_some();
            let mut models = Vec::new();
            for &variant in &variants {
                for seed in seeds(&args, &config) {
                    let path = model_path(&out, variant, seed);
                    if path.exists() {
                        models.push(path);
                    } else if explicit {
                        return Err(Error::io(
                            &path,
                            std::io::Error::new(std::io::ErrorKind::NotFound, "no such model"),
                        ));
                    }
                }
            }
            if models.is_empty() {
                return Err(Error::config(format!(
                    "no trained models found in {}",
                    out.display()
                )));
            }
            let reports = cmd_evaluate(&data_dir, &models, &out.join("metrics.csv"))?;
            print_summary(&reports);
        }
    }
    Ok(())
}

/// Mean and spread over seeds of each model's mean metrics.
fn print_summary(reports: &[MetricReport]) {
    let mut names: Vec<&str> = reports.iter().map(|r| r.model.as_str()).collect();
    names.dedup();
    println!("model,runs,mae,rmse,rse");
    for name in names {
        let runs: Vec<&MetricReport> = reports.iter().filter(|r| r.model == name).collect();
        let agg = |f: fn(&MetricReport) -> Summary| {
            Summary::of(&runs.iter().map(|r| f(r).mean).collect::<Vec<_>>())
        };
        println!(
            "{name},{},{},{},{}",
            runs.len(),
            agg(MetricReport::mae),
            agg(MetricReport::rmse),
            agg(MetricReport::rse)
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
