use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use duohand_core::config::Config;
use duohand_core::corpus::sha256_hex;

use crate::{io_error, CliResult};

/// What a command read and wrote, for its provenance file.
#[derive(Debug, Default)]
pub struct Provenance {
    pub seeds: Vec<(&'static str, u64)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub fn git_describe() -> String {
    Process::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl Provenance {
    /// Writes `<out_dir>/provenance_<command>.txt`.
    pub fn write(&self, command: &str, cfg: &Config) -> CliResult<PathBuf> {
        let mut s = String::new();
        let _ = writeln!(s, "command {command}");
        let _ = writeln!(s, "version {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "git {}", git_describe());
        s.push_str("[config]\n");
        s.push_str(&cfg.to_text());
        s.push_str("[seeds]\n");
        for (k, v) in &self.seeds {
            let _ = writeln!(s, "{k} = {v}");
        }
        for (title, files) in [("[inputs]", &self.inputs), ("[outputs]", &self.outputs)] {
            let _ = writeln!(s, "{title}");
            for f in files {
                let _ = writeln!(s, "sha256 {} {}", file_digest(f)?, f.display());
            }
        }
        let path = cfg.out_dir().join(format!("provenance_{command}.txt"));
        std::fs::write(&path, s).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}
