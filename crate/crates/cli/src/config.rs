//! Config-file merging, output headers and the configuration hash.

use std::ffi::OsString;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::ArgMatches;
use sha2::{Digest, Sha256};
use tghrf::io::{write_table, Table};
use tghrf::{Error, Result};

/// Appends `--key value` for every `key=value` line of the file whose flag
/// is not already on the command line, so flags win.
pub fn merge_config_file(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut i = 0;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            path = args.get(i + 1).map(|p| p.to_string_lossy().into_owned());
            break;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
            break;
        }
        i += 1;
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let present: Vec<String> = args
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut out = args.clone();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                file: path.clone(),
                line: ln as u64 + 1,
                column: 1,
                msg: format!("expected key=value, got {line:?}"),
            });
        };
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        if k == "config" || present.contains(&k) {
            continue;
        }
        match v {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

/// SHA-256 over the resolved options of the subcommand, leaving out the
/// thread count, the config path and output locations.
pub fn config_hash(name: &str, m: &ArgMatches) -> String {
    let mut ids: Vec<&str> = m.ids().map(|id| id.as_str()).collect();
    ids.sort_unstable();
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    for id in ids {
        if id == "threads" || id == "config" || id.starts_with("out") {
            continue;
        }
        let Ok(Some(vals)) = m.try_get_raw(id) else { continue };
        h.update(b"\n");
        h.update(id.as_bytes());
        for v in vals {
            h.update(b"=");
            h.update(v.to_string_lossy().as_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Comment lines written at the top of every output file.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub seed: u64,
    pub hash: String,
}

impl Provenance {
    pub fn lines(&self) -> Vec<String> {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        vec![
            format!("tghrf {}", env!("CARGO_PKG_VERSION")),
            format!("seed {}", self.seed),
            format!("config sha256:{}", self.hash),
            format!("created {created}"),
        ]
    }

    pub fn write(&self, path: &Path, table: &Table) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_table(path, &self.lines(), table)?;
        log::info!("wrote {} ({} rows)", path.display(), table.rows.len());
        Ok(())
    }
}
