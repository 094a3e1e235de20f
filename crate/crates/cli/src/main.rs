use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pathosynth::config::Config;
use pathosynth::diffusion::{serve, Denoiser, Handshake, NoiseSchedule, OracleDenoiser, VarianceMode, ZeroDenoiser};
use pathosynth::labels::ClassMap;
use pathosynth::pathology::{PlanOverride, Symmetry};
use pathosynth::pipeline::{self, DenoiserSpec, GenerateOptions, PrepareOptions, RunManifest, SampleOptions};
use pathosynth::{IntensityVolume, Vocabulary};

/// Synthetic pathology generation and evaluation for fetal and neonatal
/// brain label volumes.
#[derive(Parser, Debug)]
#[command(name = "pathosynth", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads over subjects.
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cleanup, class remap, crop, normalize and resize every `*_dseg`
    /// volume (and matching `*_T2w` image) in a directory.
    Prepare {
        input: PathBuf,
        output: PathBuf,
        /// Label vocabulary JSON applied to every input instead of sidecars.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Role → class JSON map replacing the configured one.
        #[arg(long)]
        class_map: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample pathology plans per subject and write modified label volumes.
    Generate {
        input: PathBuf,
        output: PathBuf,
        /// Synthetic variants per subject.
        #[arg(long, default_value_t = 6)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Force the pathology set, e.g. `vm,pch` (vm, ch, pch, mc).
        #[arg(long)]
        override_pathology: Option<String>,
        /// Force one severity in [0, 1] for every pathology in the plan.
        #[arg(long)]
        severity: Option<f64>,
        #[arg(long, value_enum)]
        symmetry: Option<SymmetryArg>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the reverse diffusion per prepared label volume.
    Sample {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = DenoiserArg::Zero)]
        denoiser: DenoiserArg,
        /// Plugin executable for `--denoiser plugin`.
        #[arg(long)]
        plugin: Option<PathBuf>,
        /// Extra argument passed to the plugin (repeatable).
        #[arg(long = "plugin-arg", allow_hyphen_values = true)]
        plugin_args: Vec<String>,
        /// Directory holding `*_crop.json` records (defaults to the input).
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Map volumes back to their original geometry using crop records.
    Revert {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Per-label Dice between same-named label volumes.
    Eval {
        predictions: PathBuf,
        truth: PathBuf,
        output: PathBuf,
        /// Comma-separated label codes; defaults to every non-background code.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<u16>>,
    },
    /// Rater score means and Welch t-test from a CSV table.
    Raters { table: PathBuf, output: PathBuf },
    /// Serve a built-in denoiser over stdin/stdout (plugin protocol).
    #[command(hide = true)]
    ServeBuiltin {
        #[arg(long, value_enum, default_value_t = BuiltinArg::Zero)]
        denoiser: BuiltinArg,
        /// Clean target image for the oracle.
        #[arg(long)]
        target: Option<PathBuf>,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct ScheduleArgs {
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
    #[arg(long, value_enum)]
    variance: Option<VarianceArg>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SymmetryArg {
    Symmetric,
    Asymmetric,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum DenoiserArg {
    Zero,
    Oracle,
    Plugin,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum BuiltinArg {
    Zero,
    Oracle,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum VarianceArg {
    Stochastic,
    Zero,
}

/// Bad arguments or config: exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(failures) if failures == 0 => ExitCode::SUCCESS,
        Ok(failures) => {
            log::error!("{failures} input(s) failed");
            ExitCode::from(1)
        }
        Err(e) => {
            log::error!("{e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(common: &Common) -> anyhow::Result<Config> {
    match &common.config {
        Some(path) => Config::read_json(path).map_err(|e| usage(format!("config {}: {e}", path.display()))),
        None => Ok(Config::default()),
    }
}

fn load_vocabulary(path: Option<&Path>) -> anyhow::Result<Option<Vocabulary>> {
    path.map(|p| Vocabulary::read_json(p).map_err(|e| usage(format!("vocabulary {}: {e}", p.display()))))
        .transpose()
}

fn apply_schedule(cfg: &mut Config, s: &ScheduleArgs) -> anyhow::Result<()> {
    let d = &mut cfg.diffusion;
    if let Some(t) = s.timesteps {
        d.timesteps = t;
    }
    if let Some(b) = s.beta_start {
        d.beta_start = b;
    }
    if let Some(b) = s.beta_end {
        d.beta_end = b;
    }
    if let Some(v) = s.variance {
        d.variance = match v {
            VarianceArg::Stochastic => VarianceMode::Stochastic,
            VarianceArg::Zero => VarianceMode::Zero,
        };
    }
    cfg.validate().map_err(|e| usage(e.to_string()))
}

fn report(manifest: &RunManifest) -> usize {
    log::info!(
        "{}: {} input(s), {} failed",
        manifest.command,
        manifest.entries.len(),
        manifest.failures()
    );
    manifest.failures()
}

/// Returns the number of failed inputs.
fn run(command: Command) -> anyhow::Result<usize> {
    match command {
        Command::Prepare {
            input,
            output,
            labels,
            class_map,
            common,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(p) = class_map {
                cfg.preprocess.class_map =
                    ClassMap::read_json(&p).map_err(|e| usage(format!("class map {}: {e}", p.display())))?;
            }
            let opts = PrepareOptions {
                vocabulary: load_vocabulary(labels.as_deref())?,
                jobs: common.jobs,
            };
            let m = pipeline::prepare(&input, &output, &cfg, &opts).context("prepare")?;
            Ok(report(&m))
        }
        Command::Generate {
            input,
            output,
            count,
            seed,
            override_pathology,
            severity,
            symmetry,
            labels,
            common,
        } => {
            let cfg = load_config(&common)?;
            let pathologies = override_pathology
                .map(|s| PlanOverride::parse_pathologies(&s))
                .transpose()
                .map_err(|e| usage(e.to_string()))?;
            if let Some(s) = severity {
                if !(0.0..=1.0).contains(&s) {
                    return Err(usage(format!("--severity {s} outside [0, 1]")));
                }
            }
            let overrides = PlanOverride {
                pathologies,
                severity,
                symmetry: symmetry.map(|s| match s {
                    SymmetryArg::Symmetric => Symmetry::Symmetric,
                    SymmetryArg::Asymmetric => Symmetry::Asymmetric,
                }),
                vm_iterations: None,
            };
            let opts = GenerateOptions {
                count,
                seed,
                overrides,
                vocabulary: load_vocabulary(labels.as_deref())?,
                jobs: common.jobs,
            };
            let m = pipeline::generate(&input, &output, &cfg, &opts).context("generate")?;
            Ok(report(&m))
        }
        Command::Sample {
            input,
            output,
            denoiser,
            plugin,
            plugin_args,
            records,
            seed,
            schedule,
            common,
        } => {
            let mut cfg = load_config(&common)?;
            apply_schedule(&mut cfg, &schedule)?;
            let denoiser = match (denoiser, plugin) {
                (DenoiserArg::Zero, None) => DenoiserSpec::Zero,
                (DenoiserArg::Oracle, None) => DenoiserSpec::Oracle,
                (DenoiserArg::Plugin, Some(program)) => DenoiserSpec::Plugin {
                    program,
                    args: plugin_args,
                },
                (DenoiserArg::Plugin, None) => return Err(usage("--denoiser plugin needs --plugin PATH")),
                (_, Some(_)) => return Err(usage("--plugin is only valid with --denoiser plugin")),
            };
            let opts = SampleOptions {
                denoiser,
                seed,
                records,
                jobs: common.jobs,
            };
            let m = pipeline::sample(&input, &output, &cfg, &opts).context("sample")?;
            Ok(report(&m))
        }
        Command::Revert {
            input,
            output,
            records,
            common,
        } => {
            let m = pipeline::revert(&input, &records, &output, common.jobs).context("revert")?;
            Ok(report(&m))
        }
        Command::Eval {
            predictions,
            truth,
            output,
            labels,
        } => {
            let r = pipeline::evaluate(&predictions, &truth, labels.as_deref(), &output).context("eval")?;
            log::info!("{} subject(s), mean of medians {:.4}", r.subjects.len(), r.summary);
            Ok(0)
        }
        Command::Raters { table, output } => {
            let s = pipeline::raters(&table, &output).context("raters")?;
            log::info!("count-weighted means: real {:.4}, synthetic {:.4}", s.real_mean, s.synthetic_mean);
            Ok(0)
        }
        Command::ServeBuiltin {
            denoiser,
            target,
            schedule,
        } => {
            let mut cfg = Config::default();
            apply_schedule(&mut cfg, &schedule)?;
            let target = match (denoiser, target) {
                (BuiltinArg::Oracle, Some(p)) => Some(IntensityVolume::read(&p).with_context(|| p.display().to_string())?),
                (BuiltinArg::Oracle, None) => return Err(usage("the oracle needs --target")),
                (BuiltinArg::Zero, _) => None,
            };
            let diffusion = cfg.diffusion;
            let make = move |h: &Handshake| -> pathosynth::Result<Box<dyn Denoiser>> {
                match target {
                    None => Ok(Box::new(ZeroDenoiser)),
                    Some(img) => {
                        let mut d = diffusion;
                        d.timesteps = h.timesteps;
                        let schedule = NoiseSchedule::from_config(&d)?;
                        if img.voxels().len() != h.voxel_count() {
                            return Err(pathosynth::Error::Denoiser(format!(
                                "target has {} voxels, handshake {:?}",
                                img.voxels().len(),
                                h.dims
                            )));
                        }
                        Ok(Box::new(OracleDenoiser::new(img.into_voxels(), schedule)))
                    }
                }
            };
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            let steps = serve(stdin.lock(), stdout.lock(), make).context("serving denoiser")?;
            log::debug!("served {steps} steps");
            Ok(0)
        }
    }
}
