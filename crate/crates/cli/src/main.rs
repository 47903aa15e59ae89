use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use origin_lens::baselines::FeatureKind;
use origin_lens::network::{random_frozen_weights, write_frozen_weights, Scenario};
use origin_lens::pipeline::{
    self, configure_workers, ConfigOverrides, RunConfig, TrainedNet, SEED_ENV, SYNTHETIC_PER_CLASS, SYNTHETIC_SEED,
    SYNTHETIC_SIDE,
};
use origin_lens::robustness::Family;
use origin_lens::tensor::ScalarKind;

/// Identify whether images are photographs (NPI), rendered graphics (CGG) or
/// network-generated (DGI) from edge-rich patches and majority voting.
#[derive(Parser, Debug)]
#[command(name = "origin-lens", version)]
struct Cli {
    #[command(flatten)]
    run: RunArgs,

    #[command(subcommand)]
    command: Command,
}

/// Run settings; a value given here beats the config file and the
/// ORIGIN_LENS_SEED variable.
#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root holding npi/, cgg/ and dgi/
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Output directory shared by all stages
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Patches per image (M)
    #[arg(long, global = true)]
    patches: Option<usize>,
    /// Patch side in pixels; a multiple of 32
    #[arg(long, global = true)]
    patch_side: Option<usize>,
    /// Candidate windows per requested patch
    #[arg(long, global = true)]
    pool_factor: Option<usize>,
    /// vgg (imported frozen conv1/conv2) or ada (all layers trained)
    #[arg(long, global = true)]
    scenario: Option<Scenario>,
    /// f32 or f64
    #[arg(long, global = true)]
    scalar: Option<ScalarKind>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Dropout retention probability
    #[arg(long, global = true)]
    retention: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// conv1/conv2 weight file for the vgg scenario
    #[arg(long, global = true)]
    frozen_weights: Option<PathBuf>,
    /// Comma-separated subset of histogram,saturation,cooccurrence
    #[arg(long, global = true, value_delimiter = ',')]
    baselines: Option<Vec<FeatureKind>>,
    /// Comma-separated subset of jpeg,scaling,geometric,contrast
    #[arg(long, global = true, value_delimiter = ',')]
    families: Option<Vec<Family>>,
    /// Worker threads (default: logical cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            data_root: self.data_root.clone(),
            out_dir: self.out_dir.clone(),
            patches_per_image: self.patches,
            patch_side: self.patch_side,
            pool_factor: self.pool_factor,
            scenario: self.scenario,
            scalar: self.scalar,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            retention: self.retention,
            seed: self.seed,
            frozen_weights: self.frozen_weights.clone(),
            baselines: self.baselines.clone(),
            families: self.families.clone(),
            workers: self.workers,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the procedural three-class texture dataset
    MakeSynthetic {
        /// Destination root (defaults to the configured data root)
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long, default_value_t = SYNTHETIC_PER_CLASS)]
        per_class: usize,
        #[arg(long, default_value_t = SYNTHETIC_SIDE)]
        side: usize,
        #[arg(long, default_value_t = SYNTHETIC_SEED)]
        synthetic_seed: u64,
    },
    /// Write a random conv1/conv2 weight file usable with --scenario vgg
    MakeFrozen {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        weight_seed: u64,
    },
    /// Split the dataset 70/10/20 and store train/val patches
    Sample,
    /// Train the CNN on the stored patches
    Train,
    /// Evaluate the checkpoint on the test split with majority voting
    Eval,
    /// Train and evaluate the handcrafted-feature baselines
    Baseline,
    /// Accuracy curves under JPEG, scaling, geometric and contrast changes
    Robustness,
    /// Consolidated summary, conv1 variance CSV and filter images
    Report,
    /// Export the 3x3 filters of one conv layer and input channel as PGM
    ExportFilters {
        #[arg(long, default_value_t = 1)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// sample, train, eval, baseline, robustness and report in order
    All,
}

fn run(cli: Cli) -> origin_lens::Result<()> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = RunConfig::resolve(cli.run.config.as_deref(), env_seed.as_deref(), &cli.run.overrides())?;
    configure_workers(cfg.workers);

    match cli.command {
        Command::MakeSynthetic {
            root,
            per_class,
            side,
            synthetic_seed,
        } => {
            let root = root.unwrap_or_else(|| cfg.data_root.clone());
            let n = pipeline::make_synthetic(&root, per_class, side, synthetic_seed)?;
            println!("wrote {n} images under {}", root.display());
        }
        Command::MakeFrozen { output, weight_seed } => {
            write_frozen_weights(&output, &random_frozen_weights(weight_seed))?;
            println!("wrote {}", output.display());
        }
        Command::Sample => sample(&cfg)?,
        Command::Train => train(&cfg)?,
        Command::Eval => eval(&cfg)?,
        Command::Baseline => baseline(&cfg)?,
        Command::Robustness => robustness(&cfg)?,
        Command::Report => print!("{}", pipeline::run_report(&cfg)?),
        Command::ExportFilters { layer, channel, output } => {
            let net = TrainedNet::load(&cfg)?;
            let paths = net.export_filters(layer, channel, &output)?;
            println!("wrote {} filter images to {}", paths.len(), output.display());
        }
        Command::All => {
            sample(&cfg)?;
            train(&cfg)?;
            eval(&cfg)?;
            baseline(&cfg)?;
            robustness(&cfg)?;
            print!("{}", pipeline::run_report(&cfg)?);
        }
    }
    Ok(())
}

fn sample(cfg: &RunConfig) -> origin_lens::Result<()> {
    let s = pipeline::run_sample(cfg)?;
    for (split, row) in ["train", "val", "test"].iter().zip(&s.images) {
        println!("{split:<5} npi {:>5}  cgg {:>5}  dgi {:>5}", row[0], row[1], row[2]);
    }
    println!(
        "{} patches stored, {} images skipped",
        s.patches_written,
        s.skipped.len()
    );
    Ok(())
}

fn train(cfg: &RunConfig) -> origin_lens::Result<()> {
    let s = pipeline::run_train(cfg)?;
    for h in &s.history {
        let val = h.val_accuracy.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "epoch {:>3}  loss {:.4}  train acc {:.4}  val acc {val}",
            h.epoch, h.train_loss, h.train_accuracy
        );
    }
    println!(
        "kept epoch {}; training patch accuracy {:.4}; checkpoint sha256 {}",
        s.best_epoch, s.train_patch_accuracy, s.checkpoint_sha256
    );
    Ok(())
}

fn eval(cfg: &RunConfig) -> origin_lens::Result<()> {
    print!("{}", pipeline::run_eval(cfg)?.summary_text());
    Ok(())
}

fn baseline(cfg: &RunConfig) -> origin_lens::Result<()> {
    for (kind, r) in pipeline::run_baselines(cfg)? {
        println!(
            "{kind:<13} unit accuracy {:.4}  image accuracy {:.4}",
            r.patch_accuracy(),
            r.image_accuracy()
        );
    }
    Ok(())
}

fn robustness(cfg: &RunConfig) -> origin_lens::Result<()> {
    for (who, curves) in pipeline::run_robustness_stage(cfg)? {
        for c in curves {
            let pts: Vec<String> = c
                .points
                .iter()
                .map(|p| format!("{}={:.3}", p.parameter, p.image_accuracy))
                .collect();
            println!("{who:<13} {:<9} {}", c.family, pts.join(" "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("origin-lens: error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_parse_into_overrides() {
        let cli = Cli::try_parse_from([
            "origin-lens",
            "train",
            "--scenario",
            "vgg",
            "--patch-side",
            "32",
            "--epochs",
            "3",
            "--baselines",
            "histogram,cooccurrence",
        ])
        .unwrap();
        let o = cli.run.overrides();
        assert_eq!(o.scenario, Some(Scenario::Vgg));
        assert_eq!(o.patch_side, Some(32));
        assert_eq!(o.epochs, Some(3));
        assert_eq!(
            o.baselines,
            Some(vec![FeatureKind::Histogram, FeatureKind::Cooccurrence])
        );
        assert!(matches!(cli.command, Command::Train));
    }
}
