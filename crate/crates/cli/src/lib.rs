//! Driver behind the `fairlab` binary: loads run configurations, dispatches
//! to the solvers and writes CSV, JSON and SVG artifacts.

pub mod config;
mod input;
mod modes;
pub mod presets;
pub mod svg;

use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{Format, Mode, RunConfig};
pub use presets::preset;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<fairlab::Error> for CliError {
    fn from(e: fairlab::Error) -> Self {
        CliError::Solver(e.to_string())
    }
}

/// Command-line overrides applied on top of a configuration.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps; 0 lets rayon decide.
    pub jobs: usize,
    pub formats: Option<Vec<Format>>,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: serde_json::Value,
    pub files: Vec<PathBuf>,
    /// Set when the solver stopped without the requested result (blow-up,
    /// no convergence). Artifacts are still written.
    pub diagnosis: Option<String>,
}

/// Writes the artifacts of one run, skipping formats that were not requested.
pub struct Artifacts {
    dir: PathBuf,
    formats: Vec<Format>,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn create(dir: &Path, formats: &[Format]) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), formats: formats.to_vec(), written: Vec::new() })
    }

    fn put(&mut self, format: Format, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        if !self.formats.contains(&format) {
            return Ok(());
        }
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        if !self.formats.contains(&Format::Csv) {
            return Ok(());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(format!("{name}: {e}"));
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        self.put(Format::Csv, name, &bytes)
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        text.push('\n');
        self.put(Format::Json, name, text.as_bytes())
    }

    pub fn svg(&mut self, name: &str, plot: &svg::Plot) -> Result<(), CliError> {
        self.put(Format::Svg, name, plot.render().as_bytes())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Formats a row of numbers for CSV output.
pub(crate) fn row(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}

/// Runs `config` and writes its artifacts.
pub fn execute(config: &RunConfig, options: &Options) -> Result<Outcome, CliError> {
    config.validate()?;
    let dir = options.out.clone().unwrap_or_else(|| config.output.directory.clone());
    let formats = options.formats.clone().unwrap_or_else(|| config.output.formats.clone());
    if formats.is_empty() {
        return Err(CliError::Config("--format: at least one format is required".into()));
    }
    let mut out = Artifacts::create(&dir, &formats)?;
    let (report, diagnosis) = match config.mode {
        Mode::FixedPoint => modes::fixed_point(config, &mut out)?,
        Mode::Jko => modes::jko(config, &mut out)?,
        Mode::ChiSweep => modes::chi_sweep(config, options.jobs, &mut out)?,
        Mode::PsiTable => modes::psi_table(config, &mut out)?,
        Mode::Envelope => modes::envelope(config, &mut out)?,
    };
    out.json("report.json", &report)?;
    Ok(Outcome { report, files: out.written().to_vec(), diagnosis })
}
