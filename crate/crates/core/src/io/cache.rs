//! Optional on-disk cache of eigensystems, enabled by `MQC_CACHE_DIR`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hamiltonian::{EigenSystem, SpinSystem};
use crate::io::manifest::{sha256_hex, write_atomic};

pub const CACHE_ENV: &str = "MQC_CACHE_DIR";

fn key(sys: &SpinSystem) -> Result<String> {
    let payload = serde_json::to_vec(&("eigensystem-v1", &sys.couplings, sys.order_parameter.to_bits())).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(sha256_hex(&payload))
}

pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Eigensystem of `sys`, read from or stored into `dir` when given.
/// Returns whether the cache supplied it.
pub fn eigensystem_cached(sys: &SpinSystem, dir: Option<&Path>) -> Result<(EigenSystem, bool)> {
    let Some(dir) = dir else {
        return Ok((sys.eigensystem()?, false));
    };
    let path = dir.join(format!("eig-{}.json", key(sys)?));
    if let Ok(text) = std::fs::read_to_string(&path) {
        match serde_json::from_str::<EigenSystem>(&text) {
            Ok(eig) if eig.n_spins() == sys.n_spins() => return Ok((eig, true)),
            _ => log::warn!("ignoring unreadable cache entry {}", path.display()),
        }
    }
    let eig = sys.eigensystem()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = serde_json::to_string(&eig).map_err(|e| Error::Numerical(e.to_string()))?;
    write_atomic(&path, text.as_bytes())?;
    Ok((eig, false))
}
