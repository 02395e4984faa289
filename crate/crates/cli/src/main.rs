//! Command-line front end for adapter experiments.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use peft_forge::adapter::{vtab_average_classes, AdaptedModel, Preset};
use peft_forge::experiment::{
    self, budget_row, emit_results, linear_budget, parse_config, render_records,
    standard_budget, AblationTable, ExperimentConfig, OutputFormat, ResultRecord,
};
use peft_forge::tensor::{DType, Scalar};
use peft_forge::training::evaluate;
use peft_forge::vit::BackboneConfig;

#[derive(Parser)]
#[command(name = "peft-forge", version, about = "Bottleneck adapters for vision transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Result file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration over all seeds.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated adapter ranks; trains the config once per rank.
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
    },
    /// Evaluate a saved model checkpoint on the configured target task.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Base adapter in the pre, intermediate, parallel and post positions.
    AblatePosition(RunArgs),
    /// Bias, norm, scaling and initialization variants of the base adapter.
    AblateStructure(RunArgs),
    /// Prior-work presets against Adapter+.
    CompareConfigs(RunArgs),
    /// ImageNet against Inception input normalization.
    StudyNorm(RunArgs),
    /// Stochastic depth and dropout grid.
    StudyReg(RunArgs),
    /// Trainable parameter budgets.
    CountParams {
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 8)]
        rank: usize,
        #[arg(long, default_value_t = 768)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 12)]
        layers: usize,
        /// Class count; defaults to the VTAB average.
        #[arg(long)]
        classes: Option<f64>,
        #[arg(long, default_value = "text")]
        format: String,
    },
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => parse_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(p) = &args.precision {
        cfg.precision = p.parse::<DType>().map_err(anyhow::Error::msg)?;
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_records(records: &[ResultRecord], args: &RunArgs, cfg: &ExperimentConfig) -> Result<()> {
    let format: OutputFormat = args.format.parse()?;
    match &cfg.output {
        Some(path) => {
            emit_results(records, format, path).with_context(|| format!("writing {}", path.display()))?;
            log::info!("wrote {} records to {}", records.len(), path.display());
        }
        None => print!("{}", render_records(records, format)?),
    }
    Ok(())
}

fn run_table(args: &RunArgs, f: fn(&ExperimentConfig) -> peft_forge::Result<AblationTable>) -> Result<()> {
    let cfg = load_config(args)?;
    let table = f(&cfg)?;
    if cfg.output.is_some() {
        print!("{table}");
    } else {
        eprint!("{table}");
    }
    write_records(&table.records, args, &cfg)
}

fn eval_checkpoint<T: Scalar>(cfg: &ExperimentConfig, path: &Path) -> Result<(f64, f64)> {
    let model = AdaptedModel::<T>::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let data = experiment::prepare_data(cfg)?;
    let prep = cfg.preprocess();
    let val = if data.target.val.is_empty() { f64::NAN } else { 100.0 * evaluate(&model, &data.target.val, &prep)? };
    let test = 100.0 * evaluate(&model, &data.target.test, &prep)?;
    Ok((val, test))
}

fn count_params(preset: Option<String>, rank: usize, d: usize, layers: usize, classes: Option<f64>, format: &str) -> Result<()> {
    let backbone = BackboneConfig {
        hidden_dim: d,
        num_layers: layers,
        ..BackboneConfig::vit_b16()
    };
    let c = classes.unwrap_or_else(vtab_average_classes);
    let rows = match preset {
        Some(p) => vec![budget_row(&backbone, p.parse::<Preset>()?, rank, c)],
        None => standard_budget(&backbone, c),
    };
    match format {
        "json" => println!("{}", serde_json::to_string_pretty(&rows)?),
        "text" => {
            println!("d={d} N={layers} classes={c:.4}");
            println!("{:<18} {:>10} {:>8}", "config", "adapter", "M");
            for r in &rows {
                println!("{:<18} {:>10} {:>8.2}", r.label, r.adapter_params, r.millions);
            }
            println!("{:<18} {:>10} {:>8.2}", "linear", 0, linear_budget(&backbone, c));
        }
        other => bail!("unknown format `{other}` for count-params (expected text or json)"),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Train { run, ranks } => {
            let cfg = load_config(&run)?;
            let records = match ranks {
                None => experiment::run_experiment(&cfg)?,
                Some(ranks) => {
                    let data = experiment::prepare_data(&cfg)?;
                    let mut all = Vec::new();
                    for r in ranks {
                        let mut c = cfg.clone();
                        c.adapter.rank = r;
                        c.validate()?;
                        all.extend(experiment::run_with_data(&c, &data, &format!("r={r}"))?);
                    }
                    all
                }
            };
            write_records(&records, &run, &cfg)
        }
        Command::Eval { run, checkpoint } => {
            let cfg = load_config(&run)?;
            let (val, test) = match cfg.precision {
                DType::F32 => eval_checkpoint::<f32>(&cfg, &checkpoint)?,
                DType::F64 => eval_checkpoint::<f64>(&cfg, &checkpoint)?,
            };
            println!("val_acc={} test_acc={}", experiment::format_sig(val), experiment::format_sig(test));
            Ok(())
        }
        Command::AblatePosition(a) => run_table(&a, experiment::run_position_ablation),
        Command::AblateStructure(a) => run_table(&a, experiment::run_structure_ablation),
        Command::CompareConfigs(a) => run_table(&a, experiment::run_configuration_comparison),
        Command::StudyNorm(a) => run_table(&a, experiment::run_normalization_study),
        Command::StudyReg(a) => run_table(&a, experiment::run_regularization_grid),
        Command::CountParams { preset, rank, hidden_dim, layers, classes, format } => {
            count_params(preset, rank, hidden_dim, layers, classes, &format)
        }
    }
}
