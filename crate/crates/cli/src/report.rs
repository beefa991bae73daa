//! Report assembly: structured JSON, flat CSV tables, and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use sojourn_core::delay::TimeDelayReport;

/// One flat table row; `r` is empty for scale-independent quantities.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub suite: String,
    pub model: String,
    pub r: Option<f64>,
    pub quantity: String,
    pub value: f64,
    pub tail: f64,
    pub verdict: bool,
}

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub model: String,
    pub pass: bool,
    pub conclusive: bool,
    /// Present when the suite aborted on a computation error.
    pub error: Option<String>,
    pub rows: Vec<Row>,
    /// Full-fidelity study attached by the delay suite.
    pub delay: Option<TimeDelayReport<f64>>,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub package_version: String,
    pub threads: usize,
    pub seed: u64,
    pub wall_ms: BTreeMap<String, u128>,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Writes the flat table with the fixed header
/// `suite,model,r,quantity,value,tail,verdict`.
pub fn write_csv(path: &Path, rows: &[Row]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "suite,model,r,quantity,value,tail,verdict")?;
    for row in rows {
        let r = row.r.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            row.suite,
            row.model,
            r,
            row.quantity,
            row.value,
            row.tail,
            if row.verdict { "pass" } else { "fail" }
        )?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
