use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use neurocycle::classifier::{
    desk_classifier, load_classifier, paper_classifier, predict, save_classifier,
    train_classifier, ClassifierTrainConfig,
};
use neurocycle::cohort::{
    generate_synthetic_cohort, save_cohort, Cohort, Diagnosis, SyntheticSpec,
};
use neurocycle::cyclegan::{
    desk_preset, load_checkpoint, paper_preset, save_checkpoint, train_gan, GanTrainConfig,
};
use neurocycle::error::{Error, Result};
use neurocycle::harness::{load_cohort_dir, run_experiment, emit_plots, ExperimentConfig, ExperimentResult};
use neurocycle::imputation::{apply_strategy, ImputationStrategy, StrategyKind};
use neurocycle::metrics::classification_metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Subsample,
    ZeroFill,
    Generative,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Subsample => StrategyKind::Subsample,
            StrategyArg::ZeroFill => StrategyKind::ZeroFill,
            StrategyArg::Generative => StrategyKind::Generative,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "neurocycle",
    about = "Cross-modal generative imputation: cycle-consistent translation \
             between connectivity vectors and structural volumes, imputation \
             strategies, fusion classification, and cross-validated experiments."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and save it (plus its ground truth).
    Synth {
        /// JSON file with the synthetic cohort parameters; defaults apply if omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the translation GAN on a saved cohort and write a checkpoint.
    TrainGan {
        #[arg(long)]
        cohort: PathBuf,
        /// JSON training config; protocol defaults apply if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "desk")]
        arch: ArchArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Complete a cohort's missing modalities with one strategy.
    Impute {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        /// GAN checkpoint; required for the generative strategy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fusion classifier on a complete cohort.
    TrainClf {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "desk")]
        arch: ArchArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a complete cohort with a trained classifier.
    Evaluate {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full cross-validated experiment from a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory (and NEUROCYCLE_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render the comparison figures from saved artifacts.
    Plot {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{what} {}: {e}", path.display())))
}

fn gan_arch(arch: ArchArg, cohort: &Cohort) -> Result<neurocycle::cyclegan::GanArch> {
    match arch {
        ArchArg::Desk => desk_preset(cohort.n_components(), cohort.volume_shape()),
        ArchArg::Paper => Ok(paper_preset()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out, seed } => {
            let mut spec: SyntheticSpec = match spec {
                Some(p) => read_json(&p, "synthetic spec")?,
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (cohort, truth) = generate_synthetic_cohort(&spec)?;
            fs::create_dir_all(&out)?;
            save_cohort(&cohort, &out)?;
            fs::write(
                out.join("ground_truth.json"),
                serde_json::to_string_pretty(&truth)?,
            )?;
            println!(
                "wrote {} records ({} paired) to {}",
                cohort.records().len(),
                cohort.paired().len(),
                out.display()
            );
        }
        Command::TrainGan {
            cohort,
            config,
            arch,
            out,
            seed,
        } => {
            let cohort = load_cohort_dir(&cohort)?;
            let mut cfg: GanTrainConfig = match config {
                Some(p) => read_json(&p, "GAN config")?,
                None => GanTrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let arch = gan_arch(arch, &cohort)?;
            let (model, log) = train_gan(&cohort, &arch, &cfg)?;
            save_checkpoint(&model, &cfg, &out)?;
            if let Some(last) = log.last() {
                println!(
                    "trained {} epochs; final cycle loss {:.6}",
                    log.len(),
                    last.cycle
                );
            }
            println!("checkpoint written to {}", out.display());
        }
        Command::Impute {
            cohort,
            strategy,
            checkpoint,
            out,
        } => {
            let cohort = load_cohort_dir(&cohort)?;
            let kind: StrategyKind = strategy.into();
            let ckpt = match (kind, checkpoint) {
                (StrategyKind::Generative, Some(p)) => Some(load_checkpoint(&p)?),
                (StrategyKind::Generative, None) => {
                    return Err(Error::Config(
                        "the generative strategy requires --checkpoint".into(),
                    ))
                }
                (_, _) => None,
            };
            let strat = match &ckpt {
                Some(c) => ImputationStrategy::Generative(&c.model),
                None if kind == StrategyKind::Subsample => ImputationStrategy::Subsample,
                None => ImputationStrategy::ZeroFill,
            };
            let completed = apply_strategy(&strat, &cohort)?;
            fs::create_dir_all(&out)?;
            save_cohort(&completed, &out)?;
            println!(
                "completed cohort ({} records) written to {}",
                completed.records().len(),
                out.display()
            );
        }
        Command::TrainClf {
            cohort,
            config,
            arch,
            out,
            seed,
        } => {
            let cohort = load_cohort_dir(&cohort)?;
            let mut cfg: ClassifierTrainConfig = match config {
                Some(p) => read_json(&p, "classifier config")?,
                None => ClassifierTrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let arch = match arch {
                ArchArg::Desk => desk_classifier(cohort.fnc_dim(), cohort.volume_shape()),
                ArchArg::Paper => paper_classifier(cohort.fnc_dim(), cohort.volume_shape()),
            };
            let (model, _) = train_classifier(&cohort, &arch, &cfg)?;
            println!(
                "selected learning rate {}",
                model.selected_lr.expect("trainer sets selected_lr")
            );
            save_classifier(&model, &cfg, &out)?;
            println!("classifier written to {}", out.display());
        }
        Command::Evaluate { cohort, model, out } => {
            let cohort = load_cohort_dir(&cohort)?;
            let ckpt = load_classifier(&model)?;
            let preds = predict(&ckpt.model, &cohort)?;
            let truth: Vec<Diagnosis> = cohort.records().iter().map(|r| r.diagnosis).collect();
            let predicted: Vec<Diagnosis> = preds.iter().map(|p| p.label).collect();
            let metrics = classification_metrics(&truth, &predicted)?;
            let report = serde_json::json!({
                "metrics": metrics,
                "predictions": preds,
            });
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => fs::write(&p, text + "\n")?,
                None => println!("{text}"),
            }
        }
        Command::Experiment { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            } else if let Ok(root) = std::env::var("NEUROCYCLE_OUT") {
                cfg.output_dir = PathBuf::from(root);
            }
            let output = run_experiment(&cfg)?;
            println!("artifacts under {}", output.out_dir.display());
            for s in &output.result.strategies {
                println!(
                    "{:<11} accuracy {:.4} ± {:.4}",
                    s.strategy.as_str(),
                    s.accuracy.mean,
                    s.accuracy.std
                );
            }
        }
        Command::Plot {
            result,
            checkpoint,
            cohort,
            out,
        } => {
            let result: ExperimentResult = read_json(&result, "result document")?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let cohort = load_cohort_dir(&cohort)?;
            emit_plots(&result, &ckpt.model, &cohort, &out)?;
            println!("plots written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
