use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

/// Everything needed to reproduce a run. No wall-clock data lives here so
/// that replays are byte-identical; timings go to the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub flags: serde_json::Value,
    pub seed: u64,
    /// Input path (as given) to lowercase hex SHA-256.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, flags: &impl Serialize, seed: u64, inputs: &[&Path]) -> Result<Self, Failure> {
        let mut digests = BTreeMap::new();
        for p in inputs {
            digests.insert(p.display().to_string(), sha256_file(p)?);
        }
        Ok(Self {
            tool: "longfuse".into(),
            version: longfuse::VERSION.into(),
            command: command.into(),
            flags: serde_json::to_value(flags).expect("flags serialize"),
            seed,
            inputs: digests,
        })
    }

    /// Fails when a recorded input no longer matches its digest.
    pub fn verify_inputs(&self) -> Result<(), Failure> {
        for (path, want) in &self.inputs {
            let got = sha256_file(Path::new(path))?;
            if &got != want {
                return Err(Failure::usage(format!(
                    "input {path} changed since the recorded run (sha256 {got}, recorded {want})"
                )));
            }
        }
        Ok(())
    }

    pub fn comment_lines(&self) -> String {
        format!("# manifest: {}\n", serde_json::to_string(self).expect("manifest serializes"))
    }
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let mut f = fs::File::open(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = f
            .read(&mut buf)
            .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    manifest: &'a RunManifest,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    threads: usize,
    outputs: Vec<String>,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_sidecar(path: &Path, manifest: &RunManifest, started: u128, outputs: &[PathBuf]) -> Result<(), Failure> {
    let side = Sidecar {
        manifest,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        threads: rayon::current_num_threads(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    write_file(path, &(text + "\n"))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

/// Pulls the manifest out of a JSON result, a sidecar, or a file carrying
/// `# manifest:` comment lines.
pub fn extract(path: &Path) -> Result<RunManifest, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let bad = |msg: String| Failure::usage(format!("{}: {msg}", path.display()));
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# manifest: ") {
            return serde_json::from_str(rest).map_err(|e| bad(format!("malformed manifest line: {e}")));
        }
    }
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(format!("no manifest found ({e})")))?;
    let m = value
        .get("manifest")
        .cloned()
        .ok_or_else(|| bad("no manifest field".into()))?;
    serde_json::from_value(m).map_err(|e| bad(format!("malformed manifest: {e}")))
}

pub fn read_to_string(path: &Path) -> io::Result<String> {
    fs::read_to_string(path)
}
