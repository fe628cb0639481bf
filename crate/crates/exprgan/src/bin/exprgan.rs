//! Thin command-line front end over the library: corpus generation,
//! augmentation, gradient checking, training, recognition, cross-validation,
//! and report writing.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use exprgan::corpus::{
    augment, generate_corpus, load_dataset, load_image, save_dataset, AugmentPlan, CorpusSpec,
    Domain, Expression, LabeledFaceImage,
};
use exprgan::error::{Error, Result};
use exprgan::eval::{
    cross_validate, make_folds, recognize, write_report, ClassifierTrainer, CnnBaselineTrainer,
    GanClassifierTrainer, OracleClassifierTrainer,
};
use exprgan::nn::{layer_suite, FD_STEP, FD_TOL};
use exprgan::trainer::{
    latest_checkpoint, read_checkpoint_info, DatasetIndex, TrainConfig, Trainer,
};

#[derive(Parser)]
#[command(name = "exprgan", about = "expression-transfer pipeline", version)]
struct Cli {
    /// Seed override applied to the subcommand's randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset generation and augmentation.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Finite-difference verification of every layer kind plus the composed
    /// generate-discriminate probe.
    Gradcheck {
        /// Number of random seeds per layer kind.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Adversarial training.
    Train(TrainArgs),
    /// Classify one image with a trained checkpoint.
    Recognize {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Subject-disjoint k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Rewrite report files from a saved metrics JSON.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Generate the synthetic two-domain corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        subjects: usize,
        #[arg(long, default_value_t = 3)]
        characters: usize,
        #[arg(long, default_value_t = 10)]
        images_per_cell: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
    /// Materialize all 110 augmentation variants of every human image.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file with all training keys; defaults to the desk preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from the newest checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct CrossvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    runs: usize,
    #[arg(long)]
    out: PathBuf,
    /// gan (full pipeline), cnn (supervised baseline), or oracle
    /// (geometric decoder; harness check).
    #[arg(long, default_value = "gan")]
    classifier: String,
    /// TOML training config for the gan classifier.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::desk_default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus { command } => match command {
            CorpusCommand::Synth { out, subjects, characters, images_per_cell, size } => {
                let spec = CorpusSpec {
                    n_human_subjects: subjects,
                    n_characters: characters,
                    images_per_cell,
                    image_size: (size, size),
                    seed: cli.seed.unwrap_or(7),
                };
                let images = generate_corpus(&spec)?;
                save_dataset(&out, &images)?;
                println!("wrote {} images to {}", images.len(), out.display());
            }
            CorpusCommand::Augment { data, out } => {
                let images = load_dataset(&data)?;
                let mut expanded = Vec::new();
                for img in &images {
                    if img.domain != Domain::Human {
                        continue;
                    }
                    let plan = AugmentPlan::proportional(img.height(), img.width());
                    expanded.extend(augment(img, &plan)?);
                }
                save_dataset(&out, &expanded)?;
                println!("wrote {} augmented images to {}", expanded.len(), out.display());
            }
        },
        Command::Gradcheck { seeds } => {
            let report = layer_suite(seeds, FD_STEP)?;
            for b in &report.blocks {
                println!("{:<24} max rel err {:.3e}", b.name, b.max_rel_err);
            }
            let composed = composed_probe(cli.seed.unwrap_or(0), seeds)?;
            println!("{:<24} max rel err {:.3e}", "generate-discriminate", composed);
            let worst = report.max_rel_err().max(composed);
            if worst > FD_TOL {
                return Err(Error::Numeric(format!(
                    "gradient check failed: max rel err {worst:.3e} > {FD_TOL:.0e}"
                )));
            }
            println!("all gradients within {FD_TOL:.0e}");
        }
        Command::Train(args) => {
            let cfg = load_config(&args.config, cli.seed)?;
            let data = DatasetIndex::build(&load_dataset(&args.data)?)?;
            let mut trainer = if args.resume {
                match latest_checkpoint(&args.out)? {
                    Some(ck) => {
                        let t = Trainer::load(&cfg, &ck)?;
                        println!("resuming from {} at epoch {}", ck.display(), t.epoch);
                        t
                    }
                    None => Trainer::new(&cfg)?,
                }
            } else {
                Trainer::new(&cfg)?
            };
            let summary = trainer.train(&data, &args.out)?;
            println!(
                "trained to epoch {}; final g_total {:.4}, d_total {:.4}",
                trainer.epoch, summary.g_total, summary.d_total
            );
        }
        Command::Recognize { image, ckpt } => {
            let info = read_checkpoint_info(&ckpt)?;
            let trainer = Trainer::load(&info.config, &ckpt)?;
            let pixels = load_image(&image)?;
            // The label slot is unused by recognition; any class name fits.
            let img = LabeledFaceImage::new(pixels, Expression::Anger, "query", Domain::Human)?;
            // Recognition conditions on the configured character; the roster
            // is implicit in the model, so indices follow the sorted ids the
            // trainer saw. The config stores the id; map it via a synthetic
            // roster of the same size.
            let ci = character_index_from_config(&info.config)?;
            let labels = recognize(&trainer.gen, &trainer.dis, ci, &[img])?;
            println!("{}", labels[0].name());
        }
        Command::Crossval(args) => {
            let images = load_dataset(&args.data)?;
            let seed = cli.seed.unwrap_or(7);
            let trainer: Box<dyn ClassifierTrainer> = match args.classifier.as_str() {
                "gan" => Box::new(GanClassifierTrainer { cfg: load_config(&args.config, cli.seed)? }),
                "cnn" => {
                    let cfg = load_config(&args.config, cli.seed)?;
                    Box::new(CnnBaselineTrainer {
                        model: cfg.model.clone(),
                        epochs: cfg.epochs,
                        batch_size: cfg.batch_size,
                        lr: cfg.lr,
                    })
                }
                "oracle" => Box::new(OracleClassifierTrainer),
                other => {
                    return Err(Error::Usage(format!(
                        "unknown classifier {other:?}; expected gan, cnn, or oracle"
                    )))
                }
            };
            let plan = make_folds(&images, args.k, seed)?;
            plan.validate()?;
            let report = cross_validate(&images, trainer.as_ref(), args.k, args.runs, seed)?;
            write_report(&report, &args.out)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Usage(format!("encode metrics: {e}")))?;
            std::fs::write(args.out.join("metrics.json"), json)?;
            println!("mean accuracy {:.4} over {} folds x {} runs", report.mean_accuracy, args.k, args.runs);
        }
        Command::Report { metrics, out } => {
            let text = std::fs::read_to_string(&metrics)?;
            let report = serde_json::from_str(&text)
                .map_err(|e| Error::Load(format!("parse metrics {}: {e}", metrics.display())))?;
            write_report(&report, &out)?;
            println!("report written to {}", out.display());
        }
    }
    Ok(())
}

/// The identity index the one-hot code points at during recognition: the
/// position of `fixed_character` among the sorted roster the model was
/// trained with. The roster size is pinned by the model config.
fn character_index_from_config(cfg: &TrainConfig) -> Result<usize> {
    // Synthetic roster ids are c0, c1, ...; other rosters must keep the
    // fixed character's sorted position stable across train and inference.
    let mut ids: Vec<String> =
        (0..cfg.model.n_characters).map(exprgan::corpus::character_id).collect();
    ids.sort();
    ids.binary_search(&cfg.fixed_character)
        .map_err(|_| Error::Config(format!("character {} not in the roster", cfg.fixed_character)))
}

/// Composed probe over many seeds at 8x8 with a two-block model. Returns
/// the worst relative error seen.
fn composed_probe(base_seed: u64, seeds: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let report = exprgan::model::composed_grad_check(base_seed.wrapping_add(s), FD_STEP)?;
        worst = worst.max(report.max_rel_err());
    }
    Ok(worst)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
