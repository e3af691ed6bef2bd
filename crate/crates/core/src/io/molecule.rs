//! Molecule description files.
//!
//! ```toml
//! name = "pair"
//! order_parameter = 0.6
//! n_spins = 2
//! couplings = [{ j = 0, k = 1, hz = 3000.0 }]
//! ```
//!
//! or, with geometry in angstrom,
//!
//! ```toml
//! name = "pair"
//! order_parameter = 0.6
//! sites = [[0.0, 0.0, 0.0], [0.0, 0.0, 1.8]]
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{CouplingTable, SpinSystem, GAMMA_PROTON};

const ANGSTROM: f64 = 1e-10;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MoleculeFile {
    name: String,
    gamma: Option<f64>,
    order_parameter: f64,
    n_spins: Option<usize>,
    sites: Option<Vec<[f64; 3]>>,
    couplings: Option<Vec<PairCoupling>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairCoupling {
    j: usize,
    k: usize,
    hz: f64,
}

pub fn parse_molecule(text: &str, path: &Path) -> Result<SpinSystem> {
    let file: MoleculeFile = toml::from_str(text).map_err(|e| Error::parse(path, e.message()))?;
    let gamma = file.gamma.unwrap_or(GAMMA_PROTON);
    match (file.sites, file.couplings) {
        (Some(sites), None) => {
            if let Some(n) = file.n_spins {
                if n != sites.len() {
                    return Err(Error::parse(path, format!("n_spins = {n} but {} sites listed", sites.len())));
                }
            }
            let positions = sites.iter().map(|s| [s[0] * ANGSTROM, s[1] * ANGSTROM, s[2] * ANGSTROM]).collect();
            SpinSystem::from_positions(file.name, positions, gamma, file.order_parameter)
        }
        (None, Some(pairs)) => {
            let n = file.n_spins.ok_or_else(|| Error::parse(path, "a coupling list needs n_spins"))?;
            let table = CouplingTable::from_pairs(n, &pairs.iter().map(|p| (p.j, p.k, p.hz)).collect::<Vec<_>>())?;
            let mut sys = SpinSystem::from_couplings(file.name, table, file.order_parameter)?;
            sys.gamma = gamma;
            sys.validate()?;
            Ok(sys)
        }
        (Some(_), Some(_)) => Err(Error::parse(path, "give either sites or couplings, not both")),
        (None, None) => Err(Error::parse(path, "molecule needs sites or couplings")),
    }
}

pub fn load_molecule(path: &Path) -> Result<SpinSystem> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_molecule(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<SpinSystem> {
        parse_molecule(s, Path::new("test.toml"))
    }

    #[test]
    fn couplings_form() {
        let sys = parse(
            r#"
            name = "pair"
            order_parameter = 0.6
            n_spins = 2
            couplings = [{ j = 0, k = 1, hz = 3000.0 }]
            "#,
        )
        .unwrap();
        assert_eq!(sys.n_spins(), 2);
        assert_eq!(sys.couplings.get(1, 0), 3000.0);
    }

    #[test]
    fn geometry_form() {
        let sys = parse(
            r#"
            name = "pair"
            order_parameter = 0.6
            sites = [[0.0, 0.0, 0.0], [0.0, 0.0, 1.8]]
            "#,
        )
        .unwrap();
        assert!(sys.couplings.get(0, 1) < 0.0);
        assert!(sys.positions.is_some());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse("name = 'x'\norder_parameter = 0.5\n").is_err());
        assert!(parse("name = 'x'\norder_parameter = 0.5\ncouplings = [{ j = 0, k = 1, hz = 1.0 }]\n").is_err());
        assert!(parse("name = 'x'\norder_parameter = 2.0\nn_spins = 2\ncouplings = [{ j = 0, k = 1, hz = 1.0 }]\n").is_err());
        assert!(parse("name = 'x'\norder_parameter = 0.5\nn_spins = 2\ncouplings = [{ j = 0, k = 0, hz = 1.0 }]\n").is_err());
        assert!(parse("name = 'x'\norder_parameter = 0.5\nsites = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]\n").is_err());
        assert!(parse("name = 'x'\norder_parameter = 0.5\nbogus = 1\nsites = [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]\n").is_err());
    }
}
