use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use croplabel::pipeline::{Pipeline, PipelineManifest, Stage, OUTPUT_ROOT_ENV};
use croplabel::synth::{self, SynthConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Crop-label refinement and label-quality evaluation.
#[derive(Debug, Parser)]
#[command(name = "croplabel", version)]
struct Cli {
    /// Pipeline manifest (TOML, or JSON by extension).
    #[arg(long, global = true, default_value = "pipeline.toml")]
    manifest: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    /// Overrides the manifest's output root.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bi-weekly cloud-filtered composites, normalised and tiled into grids.
    Composite,
    /// Resample, merge and erode the reference labels per grid.
    PrepLabels,
    /// Accept or reject grids by label coverage.
    Curate,
    /// Assign accepted grids to train/val/test.
    Split,
    /// Segmenter probabilities and region-grown labels.
    Refine,
    /// Confusion, metrics and NMSE score curves.
    Evaluate,
    /// CSV and JSON reports.
    Report,
    /// PNG chips of reference, refined and composite grids.
    Chips,
    /// Every enabled stage in order.
    Run,
    /// Writes a synthetic region and a manifest that runs on it.
    Synth {
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 24)]
        windows: usize,
        #[arg(long, default_value_t = 0.15)]
        speckle: f64,
        /// Fraction of fields given a wrong reference crop.
        #[arg(long, default_value_t = 0.0)]
        field_errors: f64,
    },
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Composite => Stage::Composite,
            Command::PrepLabels => Stage::PrepLabels,
            Command::Curate => Stage::Curate,
            Command::Split => Stage::Split,
            Command::Refine => Stage::Refine,
            Command::Evaluate => Stage::Evaluate,
            Command::Report => Stage::Report,
            Command::Chips => Stage::Chips,
            Command::Run | Command::Synth { .. } => return None,
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp_secs()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let validation = err
                .chain()
                .filter_map(|e| e.downcast_ref::<croplabel::Error>())
                .any(croplabel::Error::is_validation);
            eprintln!("error: {err:#}");
            ExitCode::from(if validation {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    if let Command::Synth {
        out,
        size,
        windows,
        speckle,
        field_errors,
    } = &cli.command
    {
        let cfg = SynthConfig {
            size: *size,
            windows: *windows,
            speckle: *speckle,
            field_errors: *field_errors,
            seed: cli.seed,
            ..SynthConfig::default()
        };
        let region = synth::generate(out, &cfg)?;
        println!("{}", region.manifest.display());
        return Ok(());
    }

    if !cli.manifest.is_file() {
        let msg = format!("manifest {} not found", cli.manifest.display());
        return Err(croplabel::Error::Config(msg).into());
    }
    let mut manifest = PipelineManifest::load(&cli.manifest)
        .with_context(|| format!("reading manifest {}", cli.manifest.display()))?;
    if let Some(root) = cli.output_root {
        manifest.output_root = root;
    }
    let pipeline = Pipeline::new(manifest, cli.seed)?;
    let entries = match cli.command.stage() {
        Some(stage) => vec![pipeline.run_stage(stage)?],
        None => pipeline.run_all()?,
    };
    for e in entries {
        let cached = if e.cache_hit { " (cached)" } else { "" };
        log::info!(
            "{}: {} outputs in {:.2}s{cached}",
            e.stage,
            e.outputs.len(),
            e.seconds
        );
    }
    Ok(())
}
