//! `homwb` command-line front end.
//!
//! Exit codes: 0 on success, 2 for config or input errors, 3 for I/O errors.
//! Every run writes `manifest.json` into the output directory.

mod analyze;
mod entangle;
mod manifest;
mod simulate;
mod theory;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use homwb::io::StreamFormat;
use serde::de::DeserializeOwned;

use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "homwb", version, about = "Two-photon interference simulator and time-tag analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a time-tag stream from an experiment config.
    Simulate(Common),
    /// Histogram recorded or simulated streams.
    Analyze(AnalyzeArgs),
    /// Compute theory coincidence curves and band levels.
    Theory(Common),
    /// Tabulate heralded-entanglement fidelities and rates.
    Entangle(Common),
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON config document.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Stream encoding.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, clap::Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides every delay bin width in the config, ns.
    #[arg(long, value_name = "NS")]
    bin_ns: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Binary,
}

impl From<FormatArg> for StreamFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => StreamFormat::Csv,
            FormatArg::Binary => StreamFormat::Binary,
        }
    }
}

/// Failure with its exit code class.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Io(_) => "io",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Io(m) => m,
        }
    }
}

impl From<homwb::Error> for CliError {
    fn from(e: homwb::Error) -> Self {
        match e {
            homwb::Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Options shared by every subcommand after parsing.
pub struct Run<'a> {
    pub config_path: &'a Path,
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub format: Option<StreamFormat>,
    pub manifest: &'a mut Manifest,
}

impl Run<'_> {
    pub fn read_config<T: DeserializeOwned>(&mut self) -> CliResult<T> {
        let text = fs::read_to_string(self.config_path)
            .map_err(|e| CliError::Io(format!("{}: {e}", self.config_path.display())))?;
        self.manifest.config = serde_json::from_str(&text).ok();
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", self.config_path.display())))
    }

    pub fn prepare_out(&self) -> CliResult<()> {
        fs::create_dir_all(self.out).map_err(|e| io_error(self.out, e))
    }

    /// Creates `name` in the output directory and records it.
    pub fn create(&mut self, name: &str) -> CliResult<std::io::BufWriter<fs::File>> {
        let path = self.out.join(name);
        let file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
        self.manifest.outputs.push(name.to_string());
        Ok(std::io::BufWriter::new(file))
    }

    /// Resolves `path` against the directory holding the config.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            return path.to_path_buf();
        }
        self.config_path.parent().map_or_else(|| path.to_path_buf(), |dir| dir.join(path))
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_json<T: serde::Serialize>(run: &mut Run, name: &str, value: &T) -> CliResult<()> {
    use std::io::Write;
    let mut out = run.create(name)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    out.write_all(text.as_bytes()).and_then(|_| out.write_all(b"\n")).and_then(|_| out.flush()).map_err(|e| io_error(&run.out.join(name), e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HOMWB_LOG", "warn")).init();
    let cli = Cli::parse();
    let (name, common, bin_ns) = match &cli.command {
        Command::Simulate(c) => ("simulate", c, None),
        Command::Analyze(a) => ("analyze", &a.common, a.bin_ns),
        Command::Theory(c) => ("theory", c, None),
        Command::Entangle(c) => ("entangle", c, None),
    };
    let mut manifest = Manifest::new(name, common.seed);

    let result = (|| {
        if let Some(n) = common.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
        }
        let mut run = Run {
            config_path: &common.config,
            out: &common.out,
            seed: common.seed,
            format: common.format.map(Into::into),
            manifest: &mut manifest,
        };
        match &cli.command {
            Command::Simulate(_) => simulate::run(&mut run),
            Command::Analyze(_) => analyze::run(&mut run, bin_ns),
            Command::Theory(_) => theory::run(&mut run),
            Command::Entangle(_) => entangle::run(&mut run),
        }
    })();

    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{}", e.message());
            eprintln!("error: {}", e.message());
            manifest.fail(e.kind(), e.message());
            e.code()
        }
    };
    if let Err(e) = manifest.write(&common.out) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(3);
    }
    ExitCode::from(code)
}
