//! Artifact emission. Everything except `manifest.json` is a pure function
//! of the configuration and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use pixfas::pcdm::{CovarianceMatrix, TargetCovariance};
use pixfas::search::PortState;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Digest of a file, or of every file under a directory in sorted order.
pub fn digest_inputs(path: &Path) -> Result<Vec<InputDigest>, CliError> {
    let mut files = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        files.extend(entries);
    } else {
        files.push(path.to_path_buf());
    }
    files
        .into_iter()
        .map(|f| {
            let bytes = fs::read(&f).map_err(|e| CliError::io(&f, e))?;
            Ok(InputDigest { path: f.display().to_string(), sha256: sha256_hex(&bytes) })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_path: String,
    pub config_sha256: String,
    pub seed: u64,
    pub budget: u64,
    pub target_matched_sets: usize,
    pub threads: Option<usize>,
    pub created_unix_s: u64,
    pub inputs: Vec<InputDigest>,
}

impl RunManifest {
    pub fn now_unix() -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }
}

/// Output directory that must already exist.
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn open(path: &Path) -> Result<Self, CliError> {
        if !path.is_dir() {
            return Err(CliError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
            ));
        }
        Ok(Self(path.to_path_buf()))
    }

    pub fn path(&self) -> &Path {
        &self.0
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let p = self.0.join(name);
        fs::write(&p, contents).map_err(|e| CliError::io(&p, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }
}

pub fn covariance_csv(rho: &[CovarianceMatrix]) -> String {
    let mut s = String::from("freq_hz,row,col,value\n");
    for r in rho {
        for i in 0..r.size() {
            for j in 0..r.size() {
                let _ = writeln!(s, "{},{},{},{}", r.frequency_hz, i + 1, j + 1, r.values[(i, j)]);
            }
        }
    }
    s
}

/// `|rho*|`, the magnitude the objective compares against.
pub fn target_csv(target: &TargetCovariance) -> String {
    let mut s = String::from("row,col,value\n");
    for i in 0..target.ports {
        for j in 0..target.ports {
            let _ = writeln!(s, "{},{},{}", i + 1, j + 1, target.values[(i, j)].abs());
        }
    }
    s
}

pub fn abs_error_csv(rho: &[CovarianceMatrix], target: &TargetCovariance) -> String {
    let mut s = String::from("freq_hz,row,col,value\n");
    for r in rho {
        for i in 0..r.size() {
            for j in 0..r.size() {
                let e = (r.values[(i, j)] - target.values[(i, j)].abs()).abs();
                let _ = writeln!(s, "{},{},{},{}", r.frequency_hz, i + 1, j + 1, e);
            }
        }
    }
    s
}

/// Parses a covariance CSV back into matrices, one per frequency.
pub fn parse_covariance_csv(text: &str) -> Result<Vec<CovarianceMatrix>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some("freq_hz,row,col,value") {
        return Err(CliError::Input("covariance CSV: unexpected header".into()));
    }
    // One block of (row, col, value) entries per frequency.
    type Block = (f64, Vec<(usize, usize, f64)>);
    let mut blocks: Vec<Block> = Vec::new();
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Input(format!("covariance CSV line {}: `{line}`", k + 2));
        if f.len() != 4 {
            return Err(bad());
        }
        let freq: f64 = f[0].parse().map_err(|_| bad())?;
        let entry = (f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?, f[3].parse().map_err(|_| bad())?);
        match blocks.last_mut() {
            Some((fr, v)) if *fr == freq => v.push(entry),
            _ => blocks.push((freq, vec![entry])),
        }
    }
    blocks
        .into_iter()
        .map(|(freq, entries)| {
            let n = (entries.len() as f64).sqrt() as usize;
            if n * n != entries.len() {
                return Err(CliError::Input(format!("covariance CSV: {} entries is not square", entries.len())));
            }
            let mut m = nalgebra::DMatrix::zeros(n, n);
            for (i, j, v) in entries {
                if i == 0 || j == 0 || i > n || j > n {
                    return Err(CliError::Input(format!("covariance CSV: index ({i},{j}) out of range")));
                }
                m[(i - 1, j - 1)] = v;
            }
            Ok(CovarianceMatrix { frequency_hz: freq, values: m })
        })
        .collect()
}

pub fn state_table_csv(switch_positions: &[usize], rows: &[PortState]) -> String {
    let mut s = String::from("fas_port,state_code");
    for p in switch_positions {
        let _ = write!(s, ",switch_q{p}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{}", r.fas_port, r.state_code);
        for &b in &r.switch_bits {
            s.push_str(if b { ",on" } else { ",off" });
        }
        s.push('\n');
    }
    s
}

/// A parsed state table: switch positions from the header, then
/// `(fas_port, state_code, bits)` rows sorted by port.
pub type StateTable = (Vec<usize>, Vec<(usize, u64, Vec<bool>)>);

pub fn parse_state_table(text: &str) -> Result<StateTable, CliError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| CliError::Input("state table is empty".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "fas_port" || cols[1] != "state_code" {
        return Err(CliError::Input("state table header must start with fas_port,state_code".into()));
    }
    let positions = cols[2..]
        .iter()
        .map(|c| {
            c.strip_prefix("switch_q")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::Input(format!("state table column `{c}` is not switch_q<port>")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |m: &str| CliError::Input(format!("state table row {}: {m}", k + 1));
        if f.len() != cols.len() {
            return Err(bad("wrong column count"));
        }
        let port: usize = f[0].parse().map_err(|_| bad("bad fas_port"))?;
        let code: u64 = f[1].parse().map_err(|_| bad("bad state_code"))?;
        let bits = f[2..]
            .iter()
            .map(|v| match *v {
                "on" | "1" => Ok(true),
                "off" | "0" => Ok(false),
                _ => Err(bad("switch values must be on/off")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((port, code, bits));
    }
    rows.sort_by_key(|r| r.0);
    Ok((positions, rows))
}

pub fn reflection_csv(rows: &[PortState], freqs: &[f64]) -> String {
    let mut s = String::from("fas_port,state_code,freq_hz,s11_db\n");
    for r in rows {
        for (f, db) in freqs.iter().zip(&r.reflection_db) {
            let _ = writeln!(s, "{},{},{},{}", r.fas_port, r.state_code, f, db);
        }
    }
    s
}
