use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Writes artifacts into one directory, stamping each with the config hash
/// and seed.  JSON goes in an envelope; CSV gets two trailing columns.
pub struct Artifacts {
    dir: PathBuf,
    command: &'static str,
    hash: String,
    seed: u64,
    written: Vec<String>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config_sha256: &'a str,
    seed: u64,
    result: &'a T,
}

/// A number cell: shortest round-trip decimal, empty for `None`.
pub fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        Some(x) if x.is_nan() => "nan".into(),
        Some(x) if x > 0.0 => "inf".into(),
        Some(_) => "-inf".into(),
        None => String::new(),
    }
}

impl Artifacts {
    pub fn new(dir: &Path, command: &'static str, hash: String, seed: u64) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), command, hash, seed, written: vec![] })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> io::Result<()> {
        let env = Envelope { command: self.command, config_sha256: &self.hash, seed: self.seed, result };
        let mut text = serde_json::to_string_pretty(&env).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        self.written.push(name.into());
        Ok(())
    }

    /// RFC 4180 CSV with '\n' line endings.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(self.dir.join(name))?;
        let mut head: Vec<&str> = header.to_vec();
        head.extend(["config_sha256", "seed"]);
        w.write_record(&head)?;
        let seed = self.seed.to_string();
        for r in rows {
            w.write_record(r.iter().map(String::as_str).chain([self.hash.as_str(), seed.as_str()]))?;
        }
        w.flush()?;
        self.written.push(name.into());
        Ok(())
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> io::Result<()> {
        fs::write(self.dir.join(name), data)?;
        self.written.push(name.into());
        Ok(())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

/// The long-format table shared by the sweep commands.
pub const LONG_HEADER: [&str; 6] = ["p", "eps", "r", "R", "name", "value"];

pub fn long_row(p: Option<f64>, eps: Option<f64>, r: Option<f64>, big_r: Option<f64>, name: &str, value: f64) -> Vec<String> {
    vec![num(p), num(eps), num(r), num(big_r), name.to_string(), num(Some(value))]
}
