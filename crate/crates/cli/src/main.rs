use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use cogesture_cli::{
    cmd_ablate, cmd_compare_modes, cmd_edit, cmd_eval, cmd_export, cmd_gen_data, cmd_init_config, cmd_sample,
    cmd_train, cmd_train_extractor, exit_code, EditOptions, EvalOptions, ExportFormat, HarnessOptions, Preset,
    RunConfig, SampleOptions, TrainOptions,
};

#[derive(Parser)]
#[command(name = "cogesture", version, about = "Emotive co-speech gesture diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML); built-in paper defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Pre-trained feature extractor; trained on the corpus when omitted.
    #[arg(long)]
    extractor: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    max_clips: Option<usize>,
}

impl EvalArgs {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            extractor: self.extractor.clone(),
            repetitions: self.repetitions,
            max_clips: self.max_clips,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a configuration file with every default filled in.
    InitConfig {
        #[arg(long, value_enum, default_value = "paper")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic paired corpus.
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoiser.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        /// Drop the reconstruction loss.
        #[arg(long)]
        no_rec: bool,
        /// Drop the emotion branch.
        #[arg(long)]
        no_emotion: bool,
        /// Drop the joint-correlation (spatial) branch.
        #[arg(long)]
        no_jcformer_spatial: bool,
    },
    /// Generate motion for an audio feature file.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Native audio container, or CSV with one row per feature frame.
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Emotion label overriding the one predicted from audio.
        #[arg(long)]
        emotion: Option<usize>,
        #[arg(long, default_value_t = 0)]
        speaker: usize,
        /// Motion file whose first frames pin the start of the output.
        #[arg(long)]
        seed_pose: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Frame rate of CSV audio features.
        #[arg(long, default_value_t = 50.0)]
        audio_rate: f64,
    },
    /// Regenerate selected joints of a reference motion.
    Edit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Comma separated joint or group names to regenerate (`none`, `all`).
        #[arg(long)]
        mask: String,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emotion: Option<usize>,
        #[arg(long, default_value_t = 0)]
        speaker: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50.0)]
        audio_rate: f64,
    },
    /// FGD, SRGR and BeatAlign on the test split.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Train the gesture feature extractor used by FGD.
    TrainExtractor {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a motion file as CSV, SVG keyframes or extractor latents.
    Export {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        keyframes: usize,
        #[arg(long)]
        extractor: Option<PathBuf>,
    },
    /// Train and evaluate every emotion conditioning mode.
    CompareModes {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Train and evaluate the ablation variants.
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[command(flatten)]
        eval: EvalArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitConfig { preset, out } => {
            cmd_init_config(preset, &out)?;
        }
        Command::GenData { config, out } => {
            let m = cmd_gen_data(&config.load()?, &out)?;
            println!(
                "samples: {} train, {} validation, {} test",
                m.splits.train.len(),
                m.splits.validation.len(),
                m.splits.test.len()
            );
        }
        Command::Train {
            config,
            corpus,
            out,
            resume,
            steps,
            no_rec,
            no_emotion,
            no_jcformer_spatial,
        } => {
            let options = TrainOptions {
                resume,
                steps,
                no_rec,
                no_emotion,
                no_spatial: no_jcformer_spatial,
            };
            let o = cmd_train(&config.load()?, &corpus, &out, &options)?;
            if let Some(last) = o.log.last() {
                println!("final step {} total loss {:.6}", last.step, last.total);
            }
            if let Some(v) = o.validation {
                println!("validation mse {:.6}", v.mse);
                if let Some(a) = v.emotion_accuracy {
                    println!("validation emotion accuracy {a:.4}");
                }
            }
        }
        Command::Sample {
            checkpoint,
            audio,
            out,
            emotion,
            speaker,
            seed_pose,
            seed,
            audio_rate,
        } => {
            let options = SampleOptions {
                emotion,
                speaker,
                seed,
                seed_pose,
                audio_rate_hz: audio_rate,
            };
            let m = cmd_sample(&checkpoint, &audio, &out, &options)?;
            println!("frames {}", m.frames());
        }
        Command::Edit {
            checkpoint,
            reference,
            mask,
            audio,
            out,
            emotion,
            speaker,
            seed,
            audio_rate,
        } => {
            let options = EditOptions {
                mask,
                emotion,
                speaker,
                seed,
                audio_rate_hz: audio_rate,
            };
            let m = cmd_edit(&checkpoint, &reference, &audio, &out, &options)?;
            println!("frames {}", m.frames());
        }
        Command::Eval {
            config,
            checkpoint,
            corpus,
            out,
            eval,
        } => {
            let o = cmd_eval(&config.load()?, &checkpoint, &corpus, &out, &eval.options())?;
            print!("{}{}", o.real.to_text(), o.model.to_text());
        }
        Command::TrainExtractor { config, corpus, out } => {
            cmd_train_extractor(&config.load()?, &corpus, &out)?;
        }
        Command::Export {
            motion,
            format,
            out,
            keyframes,
            extractor,
        } => {
            let n = cmd_export(&motion, format, &out, keyframes, extractor.as_deref())?;
            println!("wrote {n} items");
        }
        Command::CompareModes {
            config,
            corpus,
            out,
            steps,
            eval,
        } => {
            let options = HarnessOptions {
                steps,
                eval: eval.options(),
            };
            cmd_compare_modes(&config.load()?, &corpus, &out, &options)?;
            print!("{}", std::fs::read_to_string(out.join("compare.txt")).unwrap_or_default());
        }
        Command::Ablate {
            config,
            corpus,
            out,
            steps,
            eval,
        } => {
            let options = HarnessOptions {
                steps,
                eval: eval.options(),
            };
            cmd_ablate(&config.load()?, &corpus, &out, &options)?;
            print!("{}", std::fs::read_to_string(out.join("ablation.txt")).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
