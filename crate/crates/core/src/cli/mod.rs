//! Command-line front end.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    checkpoint_path, embed_cmd, evaluate_cmd, evaluate_supervised_cmd, gen_synth, load_encoder, load_segments,
    pretrain_cmd, sweep_window_cmd, PretrainRun, CHECKPOINT_FILE,
};
pub use config::{ExperimentConfig, Paths};

use crate::error::{Error, Result};
use crate::probes::ProbeKind;
use crate::sigproc::io::SignalFormat;
use crate::sigproc::SyntheticSpec;
use crate::ssl::SslMethod;

#[derive(Debug, Parser)]
#[command(name = "ecg-ssl", version, about = "Self-supervised ECG representation learning and evaluation")]
pub struct Cli {
    /// Worker threads for fold-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (manifest plus signal files).
    GenSynth(GenSynthArgs),
    /// Pretrain an encoder on an unlabeled corpus.
    Pretrain(PretrainArgs),
    /// Write per-segment embeddings from a checkpoint as CSV.
    Embed(EmbedArgs),
    /// Patient-level cross-validated probe evaluation of a frozen encoder.
    Evaluate(EvalArgs),
    /// The same protocol with an end-to-end supervised network.
    EvaluateSupervised(SupervisedArgs),
    /// Probe evaluation followed by the window-length sweep.
    SweepWindow(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    F32,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub patients_per_class: Option<usize>,
    #[arg(long)]
    pub recordings_per_patient: Option<usize>,
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long)]
    pub sample_rate_hz: Option<f64>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    /// Omit labels from the manifest.
    #[arg(long)]
    pub unlabeled: bool,
    #[arg(long)]
    pub id_prefix: Option<String>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (JSON). Missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for all outputs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub method: Option<SslMethod>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: u64,
    /// Number of labeled patients per fold used for fitting.
    #[arg(long)]
    pub label_budget: Option<usize>,
    /// Permute labels before fitting (negative control).
    #[arg(long)]
    pub shuffle_labels: bool,
    #[arg(long)]
    pub k_folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// logistic, svm or forest.
    #[arg(long)]
    pub probe: Option<String>,
}

#[derive(Debug, Args)]
pub struct SupervisedArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Comma-separated window lengths in seconds.
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<f64>>,
}

fn base_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &common.out {
        cfg.paths.output_dir = o.clone();
    }
    if let Some(m) = &common.manifest {
        cfg.paths.manifest = Some(m.clone());
    }
    Ok(cfg)
}

fn protocol_config(args: &ProtocolArgs) -> Result<ExperimentConfig> {
    let mut cfg = base_config(&args.common)?;
    cfg.seed = args.seed;
    if args.label_budget.is_some() {
        cfg.protocol.label_budget = args.label_budget;
    }
    if args.shuffle_labels {
        cfg.protocol.shuffle_labels = true;
    }
    if let Some(k) = args.k_folds {
        cfg.protocol.k_folds = k;
    }
    Ok(cfg)
}

fn eval_config(args: &EvalArgs) -> Result<ExperimentConfig> {
    let mut cfg = protocol_config(&args.protocol)?;
    if let Some(c) = &args.checkpoint {
        cfg.paths.checkpoint = Some(c.clone());
    }
    if let Some(p) = &args.probe {
        cfg.probe = ProbeKind::from_name(p)?;
    }
    cfg.resolve()
}

fn print_report(report: &crate::eval::MetricsReport, out: &std::path::Path) {
    println!("{}", report.summary_table());
    println!("artifacts in {}", out.display());
}

/// Run one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth(a) => {
            let spec = SyntheticSpec {
                n_patients_per_class: a.patients_per_class.unwrap_or(SyntheticSpec::default().n_patients_per_class),
                recordings_per_patient: a
                    .recordings_per_patient
                    .unwrap_or(SyntheticSpec::default().recordings_per_patient),
                duration_s: a.duration_s.unwrap_or(SyntheticSpec::default().duration_s),
                sample_rate_hz: a.sample_rate_hz.unwrap_or(SyntheticSpec::default().sample_rate_hz),
                noise_level: a.noise_level.unwrap_or(SyntheticSpec::default().noise_level),
                with_labels: !a.unlabeled,
                id_prefix: a.id_prefix.unwrap_or_else(|| SyntheticSpec::default().id_prefix),
                seed: a.seed,
                ..SyntheticSpec::default()
            };
            let format = match a.format {
                FormatArg::Csv => SignalFormat::Csv,
                FormatArg::F32 => SignalFormat::F32,
            };
            println!("{}", gen_synth(&a.out, &spec, format, a.force)?);
        }
        Command::Pretrain(a) => {
            let mut cfg = base_config(&a.common)?;
            if let Some(m) = &a.common.manifest {
                cfg.paths.pretrain_manifest = Some(m.clone());
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(m) = a.method {
                cfg.pretrain.method = m;
            }
            if let Some(e) = a.epochs {
                cfg.pretrain.epochs = e;
            }
            let cfg = cfg.resolve()?;
            let run = pretrain_cmd(&cfg)?;
            println!(
                "{} pretraining: {} epochs, final loss {:.4}",
                cfg.pretrain.method,
                run.losses.len(),
                run.losses.last().copied().unwrap_or(f64::NAN)
            );
            println!("checkpoint written to {}", run.checkpoint.display());
        }
        Command::Embed(a) => {
            let cfg = match &a.config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            let n = embed_cmd(&a.checkpoint, &a.manifest, &cfg, &a.out)?;
            println!("embedded {n} segments into {}", a.out.display());
        }
        Command::Evaluate(a) => {
            let cfg = eval_config(&a)?;
            let report = evaluate_cmd(&cfg)?;
            print_report(&report, &cfg.paths.output_dir);
        }
        Command::EvaluateSupervised(a) => {
            let mut cfg = protocol_config(&a.protocol)?;
            if let Some(e) = a.max_epochs {
                cfg.supervised.recipe.max_epochs = e;
            }
            let cfg = cfg.resolve()?;
            let report = evaluate_supervised_cmd(&cfg)?;
            print_report(&report, &cfg.paths.output_dir);
        }
        Command::SweepWindow(a) => {
            let mut cfg = eval_config(&a.eval)?;
            if a.windows.is_some() {
                cfg.window_grid = a.windows;
                cfg = cfg.resolve()?;
            }
            let (report, sweep) = sweep_window_cmd(&cfg)?;
            print_report(&report, &cfg.paths.output_dir);
            println!("window_s  accuracy  f1");
            for r in &sweep.rows {
                println!("{:>8}  {:>8.4}  {:.4}", r.window_s, r.accuracy, r.f1);
            }
            println!("best window: {} s", sweep.best_window_s);
        }
    }
    Ok(())
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return 3;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Io { .. } = e {
                eprintln!("check that the path exists and is writable");
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_3() {
        assert_eq!(main_with_args(["ecg-ssl", "frobnicate"]), 3);
        assert_eq!(main_with_args(["ecg-ssl", "evaluate"]), 3);
        assert_eq!(main_with_args(["ecg-ssl", "--help"]), 0);
    }

    #[test]
    fn method_flag_parses() {
        let cli = Cli::try_parse_from(["ecg-ssl", "pretrain", "--method", "deaps", "--epochs", "2"]).unwrap();
        match cli.command {
            Command::Pretrain(a) => {
                assert_eq!(a.method, Some(SslMethod::Deaps));
                assert_eq!(a.epochs, Some(2));
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
