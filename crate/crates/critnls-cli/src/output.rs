//! Run-directory persistence: self-describing CSVs, a deterministic summary, and the
//! manifest written last via temp file + rename.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use critnls::{ComplexField, Error, RealField, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize, Debug, Clone)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Serialize, Debug)]
pub struct RunManifest {
    pub command: String,
    pub configuration: BTreeMap<String, String>,
    pub code_version: String,
    pub grid: Vec<String>,
    pub tolerances: BTreeMap<String, f64>,
    pub wall_clock_seconds: f64,
    /// `ok`, `numerical_failure` or `configuration_error`.
    pub status: String,
    pub diagnostics: Vec<String>,
    pub files: Vec<FileEntry>,
}

pub struct RunDir {
    root: PathBuf,
    files: Vec<FileEntry>,
    summary: Vec<(String, String)>,
}

fn io(e: std::io::Error, p: &Path) -> Error {
    Error::Config(format!("{}: {e}", p.display()))
}

/// Fixed formatting for every number written to disk.
pub fn fmt(x: f64) -> String {
    format!("{x:.15e}")
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| io(e, root))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new(), summary: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        let p = self.root.join(name);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
        }
        std::fs::write(&p, data).map_err(|e| io(e, &p))?;
        self.files.push(FileEntry { path: name.to_string(), bytes: data.len() as u64, sha256: hex(&Sha256::digest(data)) });
        Ok(())
    }

    /// `header` entries are `name [unit]`.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let mut s = header.join(",");
        s.push('\n');
        for row in rows {
            s.push_str(&row.iter().map(|x| fmt(*x)).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        self.write_bytes(name, s.as_bytes())
    }

    /// Mixed text/number table (labels in the first columns).
    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut s = header.join(",");
        s.push('\n');
        for row in rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        self.write_bytes(name, s.as_bytes())
    }

    pub fn real_field(&mut self, name: &str, f: &RealField) -> Result<()> {
        let rows = f.grid.nodes().iter().zip(&f.values).map(|(r, v)| vec![*r, *v, 0.0]);
        self.csv(name, &["r [length]", &format!("re_l{} [amplitude]", f.l), &format!("im_l{} [amplitude]", f.l)], rows)
    }

    pub fn complex_field(&mut self, name: &str, f: &ComplexField) -> Result<()> {
        let rows = f.grid.nodes().iter().zip(&f.values).map(|(r, v)| vec![*r, v.re, v.im]);
        self.csv(name, &["r [length]", &format!("re_l{} [amplitude]", f.l), &format!("im_l{} [amplitude]", f.l)], rows)
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub fn num(&mut self, key: &str, x: f64) {
        self.note(key, fmt(x));
    }

    pub fn summary_text(&self) -> String {
        self.summary.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes `summary.txt` and then the manifest; the manifest is the last file to appear.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<()> {
        let text = self.summary_text();
        self.write_bytes("summary.txt", text.as_bytes())?;
        manifest.files = self.files.clone();
        write_manifest(&self.root, &manifest)
    }
}

pub fn write_manifest(root: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest).map_err(|e| Error::Numerical(format!("manifest serialization: {e}")))?;
    let tmp = root.join(".manifest.json.tmp");
    let dst = root.join("manifest.json");
    let mut f = std::fs::File::create(&tmp).map_err(|e| io(e, &tmp))?;
    f.write_all(json.as_bytes()).and_then(|_| f.write_all(b"\n")).and_then(|_| f.sync_all()).map_err(|e| io(e, &tmp))?;
    std::fs::rename(&tmp, &dst).map_err(|e| io(e, &dst))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksums_match_contents() {
        let dir = std::env::temp_dir().join(format!("critnls-out-{}", std::process::id()));
        let mut rd = RunDir::create(&dir).unwrap();
        rd.csv("a.csv", &["t [time]", "x [1]"], vec![vec![0.0, 1.0], vec![0.5, -2.0]]).unwrap();
        let data = std::fs::read(dir.join("a.csv")).unwrap();
        assert_eq!(rd.files[0].sha256, hex(&Sha256::digest(&data)));
        assert!(String::from_utf8(data).unwrap().starts_with("t [time],x [1]\n0.000000000000000e0,"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn empty_input_hash() {
        assert_eq!(hex(&Sha256::digest(b"")), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
