use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eapcr_cli::commands::{self, sibling, Split};
use eapcr_cli::config::{Overrides, RunConfig};
use eapcr_cli::Result;
use eapcr_core::synth::SynthSpec;
use eapcr_core::Variant;

#[derive(Parser)]
#[command(name = "time-eapcr", version, about = "Two-branch anomaly detector for multivariate sensor series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl Common {
    fn resolve(&self, variant: Option<Variant>) -> Result<RunConfig> {
        let flags = Overrides {
            seed: self.seed,
            window: self.window,
            threshold: self.threshold,
            epochs: self.epochs,
            variant,
        };
        RunConfig::resolve(self.config.as_deref(), &flags)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Smoke,
    Collective,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    MultiSensor,
    TimeSeries,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::MultiSensor => Variant::MultiSensor,
            VariantArg::TimeSeries => Variant::TimeSeries,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic series.
    Synth {
        /// SynthSpec JSON; overrides --preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "smoke")]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the chronological training split and write a checkpoint.
    Train {
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// History CSV; defaults to `<out stem>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a checkpoint against labelled data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
        /// ROC CSV; defaults to `<out stem>.roc.csv`.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Train and evaluate one model per window size.
    Sweep {
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "72,96,120,144,168,192")]
        windows: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the multi-sensor-only, time-series-only and full models.
    Ablate {
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every complete window of a file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, preset, seed, out } => {
            let spec = match (spec, preset) {
                (Some(path), _) => commands::load_synth_spec(&path)?,
                (None, Preset::Smoke) => SynthSpec::smoke(),
                (None, Preset::Collective) => SynthSpec::collective(),
            };
            commands::cmd_synth(&spec, seed, &out)?;
        }
        Command::Train { data, common, variant, out, history } => {
            let cfg = common.resolve(variant.map(Variant::from))?;
            let history = history.unwrap_or_else(|| sibling(&out, "history.csv"));
            commands::cmd_train(&data, &cfg, &out, &history)?;
        }
        Command::Eval { checkpoint, data, threshold, split, out, roc } => {
            let split = match split {
                SplitArg::Test => Split::Test,
                SplitArg::All => Split::All,
            };
            let roc = roc.unwrap_or_else(|| sibling(&out, "roc.csv"));
            commands::cmd_eval(&checkpoint, &data, threshold, split, &out, &roc)?;
        }
        Command::Sweep { data, common, windows, out } => {
            let cfg = common.resolve(None)?;
            commands::cmd_sweep(&data, &windows, &cfg, &out)?;
        }
        Command::Ablate { data, common, out } => {
            let cfg = common.resolve(None)?;
            commands::cmd_ablate(&data, &cfg, &out)?;
        }
        Command::Predict { checkpoint, data, out } => {
            commands::cmd_predict(&checkpoint, &data, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
