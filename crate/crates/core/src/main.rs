use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ris_cnnar::channel::{AgingSampler, ChannelTrace};
use ris_cnnar::classifier::{accuracy, read_dataset, write_dataset, CsiWindow, TrainingRun};
use ris_cnnar::experiment::{
    self, config_hash, generate_splits, train_checkpoint, training_table, ExperimentId,
    ExperimentSpec, CHECKPOINT_FILE, REFERENCE_DOPPLER_HZ, SPLIT_NAMES,
};
use ris_cnnar::scenario::{doppler_hz_to_normalized, ConfigFile, Scenario};
use ris_cnnar::{Error, Result};

/// Channel prediction for RIS-assisted MIMO under channel aging.
#[derive(Parser, Debug)]
#[command(name = "ris-cnnar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's rng_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate labelled train/val/test windows.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Training windows per class; validation and test get 1/4 and 1/8.
        #[arg(long, default_value_t = 400)]
        per_class: usize,
        /// Also dump one channel trace of the configured geometry.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Train the Doppler classifier and write the checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding train.ds and val.ds (defaults to --out).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
    },
    /// Run one experiment and write its CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_experiment)]
        experiment: ExperimentId,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Classifier checkpoint (defaults to <out>/classifier.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pilot overhead table.
    Overhead {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_experiment(s: &str) -> std::result::Result<ExperimentId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(common: &Common) -> Result<ConfigFile> {
    match &common.config {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn seed_of(common: &Common, scenario: &Scenario) -> u64 {
    common.seed.unwrap_or(scenario.system.rng_seed)
}

fn split_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.ds"))
}

fn read_split(dir: &Path, name: &str) -> Result<Vec<CsiWindow>> {
    let path = split_path(dir, name);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    read_dataset(BufReader::new(File::open(path)?))
}

fn gen_data(common: &Common, per_class: usize, trace: Option<&Path>) -> Result<()> {
    let scenario = load_config(common)?.into_scenario()?;
    let seed = seed_of(common, &scenario);
    std::fs::create_dir_all(&common.out)?;
    let splits = generate_splits(&scenario, per_class, seed)?;
    for (name, windows) in SPLIT_NAMES.iter().zip(&splits) {
        let path = split_path(&common.out, name);
        write_dataset(BufWriter::new(File::create(&path)?), windows)?;
        println!("{}: {} windows", path.display(), windows.len());
    }
    if let Some(path) = trace {
        let cfg = &scenario.system;
        let f_n = doppler_hz_to_normalized(REFERENCE_DOPPLER_HZ, cfg)?;
        let sampler = AgingSampler::new(
            f_n,
            cfg.train_intervals + cfg.predict_intervals,
            cfg.loading,
        )?;
        let t = ChannelTrace::generate(
            cfg,
            &scenario.geometry,
            &sampler,
            &mut ChaCha20Rng::seed_from_u64(seed),
        )?;
        t.write_to(BufWriter::new(File::create(path)?))?;
        println!("{}: {} intervals", path.display(), t.n_intervals());
    }
    Ok(())
}

fn train_cmd(common: &Common, data: Option<&Path>, epochs: usize) -> Result<()> {
    let scenario = load_config(common)?.into_scenario()?;
    let seed = seed_of(common, &scenario);
    let data = data.unwrap_or(&common.out);
    let train_set = read_split(data, "train")?;
    let val_set = read_split(data, "val")?;
    let mut run = TrainingRun {
        epochs,
        ..TrainingRun::new(seed)
    };
    let ckpt = train_checkpoint(&scenario, &train_set, &val_set, &mut run)?;
    std::fs::create_dir_all(&common.out)?;
    let path = common.out.join(CHECKPOINT_FILE);
    ckpt.save(&path)?;
    let mut table = training_table(&run);
    table.metadata = vec![
        ("config_sha256".into(), config_hash(&load_config(common)?)),
        ("seed".into(), seed.to_string()),
    ];
    table.write_csv(&common.out)?;
    println!(
        "{}: best epoch {:?} of {}, validation accuracy {:.4}",
        path.display(),
        run.best_epoch,
        run.loss_history.len(),
        run.best_val_accuracy().unwrap_or(f64::NAN)
    );
    if split_path(data, "test").exists() {
        println!(
            "test accuracy {:.4}",
            accuracy(&ckpt.net, &read_split(data, "test")?)?
        );
    }
    Ok(())
}

fn eval(
    common: &Common,
    experiment: ExperimentId,
    trials: usize,
    checkpoint: Option<PathBuf>,
) -> Result<()> {
    let seed = match common.seed {
        Some(s) => s,
        None => load_config(common)?.system.rng_seed,
    };
    let spec = ExperimentSpec {
        experiment,
        config: common.config.clone(),
        trials,
        out_dir: common.out.clone(),
        seed,
        checkpoint,
    };
    let path = experiment::run(&spec)?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData {
            common,
            per_class,
            trace,
        } => gen_data(common, *per_class, trace.as_deref()),
        Command::Train {
            common,
            data,
            epochs,
        } => train_cmd(common, data.as_deref(), *epochs),
        Command::Eval {
            common,
            experiment,
            trials,
            checkpoint,
        } => eval(common, *experiment, *trials, checkpoint.clone()),
        Command::Overhead { common } => eval(common, ExperimentId::Overhead, 1, None),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
