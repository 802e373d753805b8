//! The `jmlab` command line: every command writes into its own run
//! directory together with the resolved configuration and a run log.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 numeric failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{ModelSection, RunConfig, SchemaSection};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "jmlab", version, about = "Full-duplex spoken dialogue modeling on token grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a scripted two-speaker corpus as transcript and diarization files.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        dialogues: usize,
        #[arg(long, default_value_t = 120.0)]
        duration_s: f64,
    },
    /// Build token grids and a manifest from transcripts and diarization.
    Prep {
        #[command(flatten)]
        common: Common,
        /// Directory of `<id>.tsv` transcripts.
        #[arg(long)]
        transcripts: PathBuf,
        /// Directory of `<id>.tsv` diarization files.
        #[arg(long)]
        diarization: PathBuf,
    },
    /// Assign train/valid/test splits to a manifest.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train a model on the train split of a manifest.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Number of optimization steps; overrides the config.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Prompted continuation of every test chunk.
    Continue {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long)]
        max_chunks: Option<usize>,
    },
    /// Multi-stream TTS with best-of-N selection by WER.
    Tts {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Transcript whose labels are channel names (`self`, `user`).
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Content frames; by default one second past the last token.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Turn-taking statistics of grids or diarization segments.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with_all = ["manifest", "segments"])]
        grid: Option<PathBuf>,
        #[arg(long, conflicts_with = "segments")]
        manifest: Option<PathBuf>,
        /// Diarization file whose labels are channel names.
        #[arg(long)]
        segments: Option<PathBuf>,
        /// Duration in seconds for `--segments`; defaults to the last end.
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Continuation experiment across temperatures.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Single temperature; overrides the config's list.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Describe a grid, checkpoint or manifest.
    Inspect { path: PathBuf },
}

/// Run directory with its log.
pub(crate) struct RunDir {
    pub path: PathBuf,
    log: File,
}

impl RunDir {
    pub fn create(path: &Path, config: &RunConfig) -> Result<RunDir> {
        fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let text = config.to_toml();
        write_file(&path.join("config.toml"), text.as_bytes())?;
        let log_path = path.join("run.log");
        let log = File::create(&log_path).map_err(|e| Error::io(format!("creating {}", log_path.display()), e))?;
        let mut dir = RunDir {
            path: path.to_path_buf(),
            log,
        };
        dir.line("resolved configuration:");
        for l in text.lines() {
            dir.line(&format!("  {l}"));
        }
        Ok(dir)
    }

    pub fn line(&mut self, message: &str) {
        log::info!("{message}");
        let _ = writeln!(self.log, "{message}");
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn configure_threads() {
    if let Some(n) = std::env::var("JMLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Execute a parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    configure_threads();
    commands::dispatch(cli.command)
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
