use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub const SIG_DIGITS: i32 = 6;

/// Fixed-point rendering with six significant digits.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = |e: i32| (SIG_DIGITS - 1 - e).max(0) as usize;
    let s = format!("{:.*}", decimals(exp), x);
    // rounding can carry into the next decade (9.999999 -> 10.00000)
    let rounded: f64 = s.parse().unwrap_or(x);
    if rounded.abs() >= 10f64.powi(exp + 1) {
        format!("{:.*}", decimals(exp + 1), x)
    } else {
        s
    }
}

/// A CSV table built row by row.
#[derive(Debug, Clone, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Table {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub output: PathBuf,
    pub version: &'static str,
    pub timestamp: u64,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Send `body` to `output` (plus its manifest) or to stdout.
pub fn emit(
    body: &str,
    output: Option<&Path>,
    manifest: impl FnOnce(PathBuf) -> RunManifest,
) -> io::Result<()> {
    match output {
        None => io::stdout().lock().write_all(body.as_bytes()),
        Some(path) => {
            fs::write(path, body)?;
            let m = manifest(path.to_path_buf());
            let json = serde_json::to_string_pretty(&m).map_err(io::Error::other)?;
            fs::write(manifest_path(path), json + "\n")
        }
    }
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
