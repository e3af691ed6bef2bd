//! Shared fixtures for the benchmarks.

use mqc_core::hamiltonian::{CouplingTable, SpinSystem};

/// Chain of `n` spins with nearest-neighbour couplings falling off along
/// the chain and a weak next-nearest coupling.
pub fn chain(n: usize) -> SpinSystem {
    let mut pairs = Vec::new();
    for j in 0..n {
        for k in j + 1..n {
            let hz = match k - j {
                1 => 3000.0 - 150.0 * j as f64,
                2 => -400.0,
                _ => 60.0,
            };
            pairs.push((j, k, hz));
        }
    }
    let table = CouplingTable::from_pairs(n, &pairs).expect("valid chain");
    SpinSystem::from_couplings(format!("chain-{n}"), table, 0.6).expect("valid chain")
}
