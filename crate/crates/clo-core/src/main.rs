use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use clo_core::cli::{
    cmd_ablate, cmd_eval, cmd_gen_data, cmd_prepare, cmd_pretrain, cmd_replay, cmd_sweep,
    cmd_train, default_config, exit_code, parse_sizes, save_config, AblateStudy, RunConfig,
    TrainOverrides,
};
use clo_core::objectives::NllMode;
use clo_core::trainer::{Method, UpdateMask};
use clo_core::Result;

/// Cross-lingual transfer experiments on synthetic bilingual languages.
#[derive(Parser)]
#[command(name = "clo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Sft,
    SftDpo,
    Clo,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Sft => Method::Sft,
            MethodArg::SftDpo => Method::SftDpo,
            MethodArg::Clo => Method::Clo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Attention,
    Full,
}

impl From<MaskArg> for UpdateMask {
    fn from(m: MaskArg) -> UpdateMask {
        match m {
            MaskArg::Attention => UpdateMask::AttentionOnly,
            MaskArg::Full => UpdateMask::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NllArg {
    TargetOnly,
    Both,
}

impl From<NllArg> for NllMode {
    fn from(m: NllArg) -> NllMode {
        match m {
            NllArg::TargetOnly => NllMode::TargetOnly,
            NllArg::Both => NllMode::TargetAndEnglish,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyArg {
    Mask,
    Nll,
    Lambda,
}

impl From<StudyArg> for AblateStudy {
    fn from(s: StudyArg) -> AblateStudy {
        match s {
            StudyArg::Mask => AblateStudy::Mask,
            StudyArg::Nll => AblateStudy::Nll,
            StudyArg::Lambda => AblateStudy::Lambda,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the default run configuration to a file.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the cross-lingual corpus as a dataset file.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset file into train/validation.
    Prepare {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        /// Shuffle seed; defaults to the seed stored in the dataset.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the source-language base model.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer-train from a base checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        method: Option<MethodArg>,
        #[arg(long)]
        mask: Option<MaskArg>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        nll: Option<NllArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on held-out synthetic data.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train SFT and CLO across data sizes and emit a sweep table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        base: PathBuf,
        /// Comma-separated ascending sizes, e.g. 8,16,32.
        #[arg(long)]
        sizes: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run an ablation study (mask, nll, or lambda).
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        study: StudyArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Re-execute a recorded manifest and verify its outputs.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitConfig { out } => {
            save_config(&out, &default_config())?;
            println!("wrote {}", out.display());
        }
        Command::GenData { config, out } => {
            let config = RunConfig::load(&config)?;
            cmd_gen_data(&config, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Prepare {
            dataset,
            val_fraction,
            seed,
            out,
        } => {
            cmd_prepare(&dataset, val_fraction, seed, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Pretrain { config, out } => {
            let config = RunConfig::load(&config)?;
            cmd_pretrain(&config, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Train {
            config,
            data,
            base,
            method,
            mask,
            lambda,
            beta,
            nll,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            let overrides = TrainOverrides {
                method: method.map(Into::into),
                mask: mask.map(Into::into),
                lambda,
                beta,
                nll: nll.map(Into::into),
            };
            cmd_train(&config, &data, &base, &overrides, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Eval {
            config,
            checkpoint,
            out_dir,
        } => {
            let config = RunConfig::load(&config)?;
            cmd_eval(&config, &checkpoint, &out_dir)?;
            println!("wrote {}/{}.eval.json", out_dir.display(), config.run_id);
        }
        Command::Sweep {
            config,
            base,
            sizes,
            out_dir,
        } => {
            let config = RunConfig::load(&config)?;
            let sizes = parse_sizes(&sizes)?;
            cmd_sweep(&config, &base, &sizes, &out_dir)?;
            println!("wrote {}/{}.sweep.csv", out_dir.display(), config.run_id);
        }
        Command::Ablate {
            config,
            base,
            study,
            out_dir,
        } => {
            let config = RunConfig::load(&config)?;
            cmd_ablate(&config, &base, study.into(), &out_dir)?;
            println!(
                "wrote {}/{}.ablate-{}.csv",
                out_dir.display(),
                config.run_id,
                AblateStudy::from(study)
            );
        }
        Command::Replay { manifest, out_dir } => {
            cmd_replay(&manifest, &out_dir)?;
            println!("replay verified in {}", out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
