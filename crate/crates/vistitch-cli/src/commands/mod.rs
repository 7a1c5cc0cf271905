//! One module per subcommand, plus the shared run-directory plumbing.

pub mod analyze;
pub mod anchors;
pub mod collect;
pub mod replay;
pub mod report;
pub mod stitch_eval;
pub mod sweep;
pub mod train;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use vistitch::eval::ExperimentSpec;
use vistitch::{Error, Result};

use crate::config::RunConfig;
use crate::logger;

/// Loaded config plus its expanded experiment, shared by every command.
pub struct Context {
    pub cfg: RunConfig,
    pub spec: ExperimentSpec,
}

impl Context {
    /// Loads the config file, applies environment overrides, configures
    /// logging, and ensures the output directory exists.
    pub fn load(config_path: &Path) -> Result<Context> {
        let cfg = RunConfig::load(config_path)?;
        logger::set_level(cfg.run.log_level);
        std::fs::create_dir_all(&cfg.run.output_dir)?;
        let spec = cfg.spec();
        logger::debug(&format!(
            "loaded config {} (experiment '{}')",
            config_path.display(),
            spec.experiment_id
        ));
        Ok(Context { cfg, spec })
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.run.output_dir
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.out_dir().join(name);
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// Persists the expanded experiment and the resolved config next to
    /// the artifacts so a run directory is self-describing.
    pub fn write_spec(&self) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(&self.spec)
            .map_err(|e| Error::format(format!("cannot serialize spec: {e}")))?;
        std::fs::write(self.out_dir().join("spec.json"), bytes)?;
        std::fs::write(
            self.out_dir().join("config_resolved.toml"),
            self.cfg.to_toml()?,
        )?;
        Ok(())
    }

    /// Appends a timestamped line to the run's sidecar file. This is the
    /// only artifact that may differ between identical runs.
    pub fn note_invocation(&self, command: &str) -> Result<()> {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let line = format!("{stamp} {command}\n");
        use std::io::Write as _;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.out_dir().join("run_info.txt"))?;
        f.write_all(line.as_bytes())?;
        Ok(())
    }
}

/// Writes pretty JSON, creating parent directories.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::format(format!("cannot serialize {}: {e}", path.display())))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// FNV-1a checksum of a file's bytes, for summaries and provenance.
pub fn file_checksum(path: &Path) -> Result<u64> {
    Ok(vistitch::io::fnv1a(&std::fs::read(path)?))
}

/// Path of one seed's source dataset.
pub fn source_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join("datasets").join(format!("seed{seed}_source.bin"))
}

/// Path of one seed's replayed dataset.
pub fn replayed_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir
        .join("datasets")
        .join(format!("seed{seed}_replayed.bin"))
}

/// Path of one seed's anchor index.
pub fn index_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join("anchors").join(format!("seed{seed}_index.json"))
}

/// Path of one seed's policy checkpoint (`policy1`, `policy2`, `stitched`).
pub fn checkpoint_path(out_dir: &Path, seed: u64, name: &str) -> PathBuf {
    out_dir
        .join("checkpoints")
        .join(format!("seed{seed}_{name}.bin"))
}

/// Path of one seed's optimizer state sidecar.
pub fn state_path(out_dir: &Path, seed: u64, name: &str) -> PathBuf {
    out_dir
        .join("checkpoints")
        .join(format!("seed{seed}_{name}.state"))
}

/// Path of one seed's training-log CSV.
pub fn train_log_path(out_dir: &Path, seed: u64, name: &str) -> PathBuf {
    out_dir
        .join("train_logs")
        .join(format!("seed{seed}_{name}.csv"))
}
