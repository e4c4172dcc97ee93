//! Exit-code mapping, output paths and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Relative output paths are resolved under this directory when it is set.
pub const OUT_DIR_ENV: &str = "SLD_OUT_DIR";

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<sld_core::Error> for Failure {
    fn from(e: sld_core::Error) -> Self {
        Self {
            code: if e.is_validation() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            },
            message: e.to_string(),
        }
    }
}

/// An input that does not exist is a usage error, not a runtime failure.
pub fn input_file(path: &Path) -> Result<&Path, Failure> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure::usage(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() && !dir.is_empty() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

/// Everything needed to reproduce an artifact; written to `<artifact>.manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: &'static str,
    pub timestamp: String,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config: C,
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(command: &str, argv: &[String], seed: Option<u64>, config: C) -> Self {
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION"),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config,
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Writes the manifest next to each output.
    pub fn write(&self) -> Result<(), Failure> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Failure::runtime(format!("cannot serialize manifest: {e}")))?;
        for out in &self.outputs {
            write_file(
                &manifest_path(Path::new(out)),
                format!("{json}\n").as_bytes(),
            )?;
        }
        Ok(())
    }
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}
