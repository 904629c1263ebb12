use std::path::PathBuf;
use std::process::ExitCode;

use bhgan::commands;
use bhgan::config::{resolve, Overrides, RunConfig};
use bhgan::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bhgan", version, about = "Fill pad gaps in borehole images with a WGAN inpainting model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run seed (masks, splits, initialization, batch order)
    #[arg(long)]
    seed: Option<u64>,
    /// JSON run configuration; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus directory of 128x128 grayscale PGM/PNG images
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct MaskFlags {
    #[arg(long)]
    min_cover: Option<f64>,
    #[arg(long)]
    max_cover: Option<f64>,
    #[arg(long)]
    min_stripes: Option<usize>,
    #[arg(long)]
    max_stripes: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long, visible_alias = "iters")]
    iterations: Option<u64>,
    #[arg(long, visible_alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    n_critic: Option<usize>,
    #[arg(long)]
    clip_c: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda_rec: Option<f64>,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    snapshot_every: Option<u64>,
    #[arg(long)]
    rms_decay: Option<f64>,
    #[arg(long)]
    rms_eps: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct NetFlags {
    #[arg(long)]
    gen_width: Option<usize>,
    #[arg(long)]
    critic_width: Option<usize>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    slope: Option<f64>,
    #[arg(long)]
    local_size: Option<usize>,
}

// parsed once per process, so the size spread between variants is irrelevant
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand)]
enum Command {
    /// Write a synthetic stripe mask `<stem>.mask.pgm` for every image
    MakeMasks {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mask: MaskFlags,
    },
    /// Train the generator and both critics
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        net: NetFlags,
        #[command(flatten)]
        mask: MaskFlags,
        /// Continue from this checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fill the masked pixels of one image
    Inpaint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Output image (default: `<out>/<stem>.inpainted.pgm`)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare the model with linear interpolation on held-out images
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mask: MaskFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate every image instead of the held-out split
        #[arg(long)]
        all: bool,
        /// Also write gapped|baseline|model|truth grids
        #[arg(long)]
        render: bool,
    },
    /// Write a synthetic layered-texture corpus
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
}

fn overrides(common: &Common, train: &TrainFlags, net: &NetFlags, mask: &MaskFlags) -> Overrides {
    Overrides {
        seed: common.seed,
        data_dir: common.data.clone(),
        out_dir: common.out.clone(),
        iterations: train.iterations,
        learning_rate: train.learning_rate,
        n_critic: train.n_critic,
        clip_c: train.clip_c,
        batch_size: train.batch_size,
        lambda_rec: train.lambda_rec,
        lambda_adv: train.lambda_adv,
        snapshot_every: train.snapshot_every,
        rms_decay: train.rms_decay,
        rms_eps: train.rms_eps,
        gen_width: net.gen_width,
        critic_width: net.critic_width,
        kernel: net.kernel,
        slope: net.slope,
        local_size: net.local_size,
        min_cover: mask.min_cover,
        max_cover: mask.max_cover,
        min_stripes: mask.min_stripes,
        max_stripes: mask.max_stripes,
    }
}

fn run(command: Command) -> Result<()> {
    let none = (TrainFlags::default(), NetFlags::default(), MaskFlags::default());
    match command {
        Command::MakeMasks { common, mask } => {
            let cfg =
                resolve(RunConfig::default(), common.config.as_deref(), &overrides(&common, &none.0, &none.1, &mask))?;
            let written = commands::make_masks(&cfg, common.out.as_deref())?;
            println!("wrote {} masks", written.len());
        }
        Command::Train { common, train, net, mask, resume } => {
            let flags = overrides(&common, &train, &net, &mask);
            let (base, state) = match &resume {
                Some(path) => {
                    let (state, echo) = commands::open_model(path)?;
                    (echo, Some(state))
                }
                None => (RunConfig::default(), None),
            };
            let cfg = resolve(base, common.config.as_deref(), &flags)?;
            let outcome = commands::train(&cfg, state)?;
            println!("wrote {}", outcome.model_path.display());
        }
        Command::Inpaint { common, checkpoint, image, mask, output } => {
            let (state, _) = commands::open_model(&checkpoint)?;
            let output = match (output, &common.out) {
                (Some(p), _) => p,
                (None, Some(dir)) => {
                    let stem = image.file_stem().unwrap_or_default().to_string_lossy();
                    dir.join(format!("{stem}.inpainted.pgm"))
                }
                (None, None) => return Err(Error::Usage("give --output or --out".into())),
            };
            commands::inpaint(&state, &image, &mask, &output)?;
            println!("wrote {}", output.display());
        }
        Command::Evaluate { common, mask, checkpoint, all, render } => {
            let (state, echo) = commands::open_model(&checkpoint)?;
            let cfg = resolve(echo, common.config.as_deref(), &overrides(&common, &none.0, &none.1, &mask))?;
            let file = commands::evaluate(&state, &cfg, all, render)?;
            println!(
                "mean MSE model {:.6} baseline {:.6} (model better: {}), speedup {:.2}",
                file.report.mean_mse_model,
                file.report.mean_mse_baseline,
                file.report.model_beats_baseline,
                file.report.speedup
            );
        }
        Command::Synth { common, count } => {
            let out = common.out.ok_or_else(|| Error::Usage("give --out".into()))?;
            let written = commands::synth(&out, count, common.seed.unwrap_or(0))?;
            println!("wrote {} images to {}", written.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
