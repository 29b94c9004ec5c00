// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oodscore::cadref::{DecoupleAggregation, DecoupleMode};
use oodscore::cli::{self, RunConfig, THREADS_ENV};
use oodscore::error::{OodError, Result};
use oodscore::registry::Hyperparams;
use oodscore::synth::SynthParams;
use oodscore::vim::VimCenter;

#[derive(Parser)]
#[command(
    name = "oodscore",
    version,
    about = "Post-hoc OOD scoring on exported classifier features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit methods on the train split and save their state.
    Fit(RunArgs),
    /// Score ID and OOD splits and write AUROC / FPR95 reports.
    Eval(RunArgs),
    /// Run the five-row CADRef component ablation.
    Ablate(RunArgs),
    /// Write a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Print the method roster.
    ListMethods,
}

#[derive(Args)]
struct RunArgs {
    /// Manifest JSON (or a CSV directory with --from-csv).
    #[arg(long)]
    manifest: PathBuf,
    /// Treat --manifest as a directory of CSV files.
    #[arg(long)]
    from_csv: bool,
    /// Comma-separated method names.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "msp,maxlogit,energy,gen,caref,cadref"
    )]
    methods: Vec<String>,
    #[arg(long, default_value = "train")]
    train_split: String,
    #[arg(long, default_value = "test")]
    id_split: String,
    /// Comma-separated; defaults to every split other than train and ID.
    #[arg(long, value_delimiter = ',')]
    ood_splits: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Directory of fitted states written by `fit` (its `fitted/` folder).
    #[arg(long)]
    fitted: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// relative | raw
    #[arg(long, default_value = "relative")]
    decouple_mode: String,
    /// abs_sum | sum_abs
    #[arg(long, default_value = "abs_sum")]
    decouple_aggregation: String,
    /// none | mean
    #[arg(long, default_value = "none")]
    vim_center: String,
    #[arg(long)]
    vim_dim: Option<usize>,
    #[arg(long = "energy-T", default_value_t = 1.0)]
    energy_t: f64,
    #[arg(long = "gen-M")]
    gen_m: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    gen_gamma: f64,
    #[arg(long, default_value_t = 90.0)]
    react_p: f64,
    #[arg(long, default_value_t = 90.0)]
    ash_p: f64,
    #[arg(long, default_value_t = 0.7)]
    dice_p: f64,
    /// Histogram bins per (method, OOD split); 0 disables histograms.
    #[arg(long, default_value_t = cli::DEFAULT_BINS)]
    bins: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Training rows per class.
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    #[arg(long, default_value_t = 200)]
    n_id: usize,
    #[arg(long, default_value_t = 200)]
    n_ood: usize,
    #[arg(long, default_value_t = 4.0)]
    ood_shift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| {
                OodError::InvalidConfig(format!("{THREADS_ENV}={v:?} is not a positive integer"))
            }),
        _ => Ok(None),
    }
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let vim_center = match self.vim_center.as_str() {
            "none" => VimCenter::None,
            "mean" => VimCenter::Mean,
            other => {
                return Err(OodError::InvalidConfig(format!(
                    "unknown ViM centering {other:?}"
                )))
            }
        };
        let hyper = Hyperparams {
            energy_temperature: self.energy_t,
            gen_top_m: self.gen_m,
            gen_gamma: self.gen_gamma,
            react_percentile: self.react_p,
            ash_prune_percent: self.ash_p,
            dice_sparsity: self.dice_p,
            vim_dim: self.vim_dim,
            vim_center,
            decouple_mode: self.decouple_mode.parse::<DecoupleMode>()?,
            decouple_aggregation: self.decouple_aggregation.parse::<DecoupleAggregation>()?,
        };
        Ok(RunConfig {
            manifest: self.manifest,
            from_csv: self.from_csv,
            methods: self.methods,
            train_split: self.train_split,
            id_split: self.id_split,
            ood_splits: self.ood_splits,
            out: self.out,
            fitted: self.fitted,
            seed: self.seed,
            hyper,
            bins: self.bins,
            threads: threads_from_env()?,
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => {
            let cfg = args.into_config()?;
            for dir in cli::cmd_fit(&cfg)? {
                println!("{}", dir.display());
            }
        }
        Command::Eval(args) => {
            let cfg = args.into_config()?;
            let reports = cli::cmd_eval(&cfg)?;
            print!("{}", oodscore::metrics::reports_to_markdown(&reports));
        }
        Command::Ablate(args) => {
            let cfg = args.into_config()?;
            let reports = cli::cmd_ablate(&cfg)?;
            print!("{}", oodscore::metrics::reports_to_markdown(&reports));
        }
        Command::Synth(args) => {
            let params = SynthParams {
                classes: args.classes,
                dim: args.dim,
                train_per_class: args.n_per_class,
                n_id: args.n_id,
                n_ood: args.n_ood,
                ood_shift: args.ood_shift,
                seed: args.seed,
                ..SynthParams::default()
            };
            println!("{}", cli::cmd_synth(&params, &args.out)?.display());
        }
        Command::ListMethods => print!("{}", cli::list_methods()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(parsed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
