//! CSV and JSON writers. Every JSON summary carries the schema version,
//! tool version, config hash and seed.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub struct Output {
    pub dir: PathBuf,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    schema_version: u32,
    experiment: &'a str,
    tool_version: &'a str,
    config_hash: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_hash: Option<&'a str>,
    files: Vec<String>,
    results: &'a T,
}

impl Output {
    pub fn new(dir: &Path, config_hash: String, seed: u64) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash,
            seed,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `rows` with a header row; callers pass rows already sorted.
    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<String, CliError> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(name.to_string())
    }

    pub fn summary<T: Serialize>(
        &self,
        name: &str,
        experiment: &str,
        model_hash: Option<&str>,
        files: Vec<String>,
        results: &T,
    ) -> Result<(), CliError> {
        let summary = Summary {
            schema_version: SCHEMA_VERSION,
            experiment,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_hash: &self.config_hash,
            seed: self.seed,
            model_hash,
            files,
            results,
        };
        let mut text = serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Io(format!("serialising {name}: {e}")))?;
        text.push('\n');
        std::fs::write(self.path(name), text)?;
        Ok(())
    }
}
