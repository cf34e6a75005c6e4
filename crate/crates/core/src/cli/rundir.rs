use std::fs::{self, File};
use std::io::{LineWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use crate::{Error, Result};

pub const MANIFEST_FORMAT: &str = "coaccel-manifest";
pub const TRACE_FORMAT: &str = "coaccel-trace";
pub const REPORT_FORMAT: &str = "coaccel-report";
pub const FORMAT_VERSION: u32 = 1;

pub fn code_version() -> String {
    format!("coaccel {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'a str,
    version: u32,
    code_version: String,
    command: &'a str,
    args: Vec<String>,
    seeds: &'a [u64],
    deterministic: bool,
}

/// One output directory per invocation.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates `root/name`, or `root/name-1`, `root/name-2`, .. if taken.
    pub fn create(root: &Path, name: &str) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut path = root.join(name);
        let mut n = 0;
        loop {
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    n += 1;
                    path = root.join(format!("{name}-{n}"));
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let p = self.file(name);
        fs::write(&p, contents).map_err(|e| Error::io(p, e))
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value).expect("json serializes") + "\n"))
    }

    /// Config snapshot and manifest; enough to repeat the run.
    pub fn snapshot(&self, cfg: &RunConfig, command: &str, seeds: &[u64]) -> Result<()> {
        self.write("config.toml", &cfg.to_toml())?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT,
            version: FORMAT_VERSION,
            code_version: code_version(),
            command,
            args: std::env::args().collect(),
            seeds,
            deterministic: cfg.deterministic,
        };
        self.write_json("manifest.json", &manifest)
    }

    /// Line-buffered JSONL log whose first line names the format.
    pub fn jsonl(&self, name: &str, kind: &str) -> Result<LineWriter<File>> {
        let p = self.file(name);
        let mut w = LineWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?);
        let header = serde_json::json!({ "format": TRACE_FORMAT, "version": FORMAT_VERSION, "kind": kind });
        writeln!(w, "{header}").map_err(|e| Error::io(&p, e))?;
        Ok(w)
    }

    pub fn csv(&self, name: &str) -> Result<csv::Writer<File>> {
        let p = self.file(name);
        csv::Writer::from_path(&p).map_err(|e| Error::format(p, e))
    }
}

/// JSON report wrapper with the format header.
#[derive(Serialize)]
pub struct Report<'a, T: Serialize> {
    pub format: &'a str,
    pub version: u32,
    pub kind: &'a str,
    #[serde(flatten)]
    pub body: T,
}

impl<'a, T: Serialize> Report<'a, T> {
    pub fn new(kind: &'a str, body: T) -> Self {
        Report { format: REPORT_FORMAT, version: FORMAT_VERSION, kind, body }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taken_names_get_a_suffix() {
        let root = tempfile::tempdir().unwrap();
        let a = RunDir::create(root.path(), "search").unwrap();
        let b = RunDir::create(root.path(), "search").unwrap();
        assert!(a.path.ends_with("search") && b.path.ends_with("search-1"));
    }

    #[test]
    fn jsonl_starts_with_a_header() {
        let root = tempfile::tempdir().unwrap();
        let d = RunDir::create(root.path(), "r").unwrap();
        drop(d.jsonl("log.jsonl", "train").unwrap());
        let text = fs::read_to_string(d.file("log.jsonl")).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["format"], TRACE_FORMAT);
    }
}
