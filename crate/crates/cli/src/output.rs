use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::Failure;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shared state of one command invocation.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
}

/// Wrapper written around every JSON artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope {
    pub config_hash: String,
    pub seed: u64,
    pub command: String,
    pub version: String,
    pub data: Value,
}

impl Run {
    pub fn new(cfg: ExperimentConfig, out: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let hash = cfg.hash();
        Ok(Self { cfg, hash, out })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write_json(&self, name: &str, command: &str, data: Value) -> Result<()> {
        let env = Envelope {
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            command: command.into(),
            version: VERSION.into(),
            data,
        };
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        serde_json::to_writer_pretty(&mut w, &env)?;
        writeln!(w)?;
        Ok(())
    }

    /// CSV preceded by a `# config_hash=.. seed=..` comment line.
    pub fn write_csv<F>(&self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> lvhg_core::Result<()>,
    {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(w, "# config_hash={} seed={}", self.hash, self.cfg.seed)?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Reads an envelope and rejects it when its hash differs from `hash`.
pub fn read_envelope(path: &Path, hash: Option<&str>) -> Result<Envelope> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let env: Envelope = serde_json::from_str(&text)
        .map_err(|e| Failure::validation(format!("{}: not a valid artifact: {e}", path.display())))?;
    if let Some(h) = hash {
        if env.config_hash != h {
            return Err(Failure::validation(format!(
                "{} was produced by a different config (hash {})",
                path.display(),
                env.config_hash
            ))
            .into());
        }
    }
    Ok(env)
}
