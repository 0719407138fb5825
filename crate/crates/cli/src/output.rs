//! Artifact writers. Every CSV row and NDJSON record carries the manifest
//! hash of the run that produced it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use otc_mm::config::hex;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Text form of a float for CSV cells: shortest round-trip decimal, scientific
/// notation only for very large/small magnitudes, `.` as decimal separator.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else if x.abs() < 1e-5 || x.abs() >= 1e15 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// The fields of a run that determine its outputs. Wall-clock and paths are
/// recorded in the manifest file but kept out of the hash.
#[derive(Serialize)]
struct Identity<'a> {
    version: &'a str,
    subcommand: &'a str,
    config_hash: &'a str,
    seed: u64,
}

pub fn manifest_hash(subcommand: &str, config_hash: &str, seed: u64) -> String {
    let id = Identity {
        version: VERSION,
        subcommand,
        config_hash,
        seed,
    };
    hex(&Sha256::digest(serde_json::to_vec(&id).expect("identity serialises")))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub manifest_hash: String,
    pub version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    /// Surface caches read or written, with their keys.
    pub surfaces: Vec<SurfaceRef>,
    /// Relative to the output directory.
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SurfaceRef {
    pub path: String,
    pub key: String,
    pub cache_hit: bool,
}

/// Collects the files of one run and writes `<subcommand>.manifest.json` at
/// the end.
pub struct Run {
    pub dir: PathBuf,
    pub manifest_hash: String,
    subcommand: String,
    config_hash: String,
    seed: u64,
    artifacts: Vec<String>,
    surfaces: Vec<SurfaceRef>,
    started: Instant,
}

impl Run {
    pub fn start(dir: &Path, subcommand: &str, config_hash: &str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest_hash: manifest_hash(subcommand, config_hash, seed),
            subcommand: subcommand.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            artifacts: Vec::new(),
            surfaces: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
    }

    pub fn note_surface(&mut self, name: &str, key: &str, cache_hit: bool) {
        self.surfaces.push(SurfaceRef {
            path: name.to_string(),
            key: key.to_string(),
            cache_hit,
        });
        if !cache_hit {
            self.record(name);
        }
    }

    /// Writes a CSV with `header` plus a trailing `manifest` column.
    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        let mut full: Vec<&str> = header.to_vec();
        full.push("manifest");
        w.write_record(&full)?;
        for mut row in rows {
            debug_assert_eq!(row.len(), header.len(), "{name}: row width");
            row.push(self.manifest_hash.clone());
            w.write_record(&row)?;
        }
        w.flush()?;
        self.record(name);
        Ok(())
    }

    /// One JSON object per line, each with a leading `manifest` field.
    pub fn ndjson<T, I>(&mut self, name: &str, records: I) -> Result<()>
    where
        T: Serialize,
        I: IntoIterator<Item = T>,
    {
        #[derive(Serialize)]
        struct Tagged<'a, T> {
            manifest: &'a str,
            #[serde(flatten)]
            record: T,
        }
        use std::io::Write;
        let path = self.path(name);
        let file = std::fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        let mut w = std::io::BufWriter::new(file);
        for record in records {
            serde_json::to_writer(
                &mut w,
                &Tagged {
                    manifest: &self.manifest_hash,
                    record,
                },
            )?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        self.record(name);
        Ok(())
    }

    pub fn finish(self) -> Result<RunManifest> {
        let manifest = RunManifest {
            manifest_hash: self.manifest_hash,
            version: VERSION.to_string(),
            subcommand: self.subcommand.clone(),
            config_hash: self.config_hash,
            seed: self.seed,
            surfaces: self.surfaces,
            artifacts: self.artifacts,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let name = format!("{}.manifest.json", self.subcommand.replace(' ', "-"));
        let path = self.dir.join(&name);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(manifest)
    }
}
