use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Map, Value};

use crate::config::RunConfig;

/// Output directory with an inventory of everything written to it.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
}

impl Outputs {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        self.write(name, &bytes)
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Written last; `note` marks an aborted run.
    pub fn finish(mut self, command: &str, cfg: &RunConfig, metrics: Value, note: Option<String>) -> std::io::Result<()> {
        let config: Map<String, Value> = cfg.entries().iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        let manifest = json!({
            "artifact": "pagar",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": cfg.seed().unwrap_or(0),
            "config": config,
            "wall_clock_secs": self.started.elapsed().as_secs_f64(),
            "complete": note.is_none(),
            "note": note,
            "metrics": metrics,
            "files": self.files.clone(),
        });
        let mut text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        text.push('\n');
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes())?;
        self.files.push("manifest.json".into());
        Ok(())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
