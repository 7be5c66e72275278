//! Experiment driver: presets and config files, sweeps, generation-size search and
//! the three-link tandem, with CSV and JSON manifest output.

pub mod optimize;
pub mod spec;
pub mod sweep;

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid experiment: {0}")]
    Spec(#[from] spec::SpecError),
    #[error(transparent)]
    Sweep(#[from] sweep::SweepError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for rejected input, 3 for failures while running or writing.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec(_) => 2,
            CliError::Sweep(e) if e.is_config() => 2,
            _ => 3,
        }
    }
}

/// Path of the manifest written next to `out`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes `csv` to `out` and the manifest beside it.
pub fn write_outputs(out: &Path, csv: &str, manifest: &serde_json::Value) -> Result<(), CliError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(out, csv).map_err(io(out))?;
    let mpath = manifest_path(out);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    std::fs::write(&mpath, text + "\n").map_err(io(&mpath))?;
    Ok(())
}

/// Runs a validated spec and returns (csv, manifest).
pub fn execute(spec: &spec::ExperimentSpec) -> Result<(String, serde_json::Value), CliError> {
    spec::validate(spec)?;
    if spec.tandem.is_some() {
        let out = sweep::run_tandem_sweep(spec)?;
        Ok((out.csv, out.manifest))
    } else {
        let out = sweep::run_sweep(spec)?;
        Ok((out.csv, out.manifest))
    }
}
