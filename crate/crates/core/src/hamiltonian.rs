//! Secular intramolecular dipolar Hamiltonian, its eigensystem and
//! free-evolution propagators.
//!
//! Couplings are carried in Hz; the conversion to angular frequency happens
//! exactly once, when the Hamiltonian matrix is assembled.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::{collective_angular_momentum, commutator, max_abs, Axis, CMatrix, Operator, OperatorKind, SpinRegister, C64};

/// Vacuum permeability (T m / A), CODATA 2018.
pub const MU0: f64 = 1.256_637_062_12e-6;
/// Reduced Planck constant (J s), CODATA 2018.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Proton gyromagnetic ratio (rad s^-1 T^-1), CODATA 2018.
pub const GAMMA_PROTON: f64 = 2.675_221_874_4e8;

/// Dipolar frequency of a spin pair separated by `r` (meters, molecular
/// frame), in Hz: `3 mu0 gamma^2 hbar / (8 pi r^3) (1 - 3 cos^2 beta)`.
pub fn dipolar_frequency(r: [f64; 3], gamma: f64) -> Result<f64> {
    let len = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::DegenerateGeometry(format!("pair vector {r:?} has zero length")));
    }
    let cos_beta = r[2] / len;
    let prefactor = 3.0 * MU0 * gamma * gamma * HBAR / (8.0 * PI * len.powi(3));
    Ok(prefactor * (1.0 - 3.0 * cos_beta * cos_beta))
}

/// Symmetric table of pair couplings in Hz with zero diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTable {
    n: usize,
    hz: Vec<f64>,
}

impl CouplingTable {
    pub fn zeros(n: usize) -> Self {
        Self { n, hz: vec![0.0; n * n] }
    }

    pub fn from_pairs(n: usize, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let mut table = Self::zeros(n);
        for &(j, k, hz) in pairs {
            table.set(j, k, hz)?;
        }
        Ok(table)
    }

    /// Validates a full row-major matrix.
    pub fn from_matrix(n: usize, hz: Vec<f64>) -> Result<Self> {
        if hz.len() != n * n {
            return Err(Error::InvalidSystem(format!("coupling matrix needs {} entries", n * n)));
        }
        let table = Self { n, hz };
        for j in 0..n {
            if table.get(j, j) != 0.0 {
                return Err(Error::InvalidSystem(format!("nonzero self-coupling at site {j}")));
            }
            for k in 0..j {
                if table.get(j, k) != table.get(k, j) {
                    return Err(Error::InvalidSystem(format!("coupling table asymmetric at ({j}, {k})")));
                }
            }
        }
        if table.hz.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSystem("non-finite coupling".into()));
        }
        Ok(table)
    }

    pub fn set(&mut self, j: usize, k: usize, hz: f64) -> Result<()> {
        if j == k {
            return Err(Error::InvalidPair {
                j,
                k,
                reason: "self-coupling".into(),
            });
        }
        if j >= self.n || k >= self.n {
            return Err(Error::InvalidPair {
                j,
                k,
                reason: format!("site out of range for {} sites", self.n),
            });
        }
        if !hz.is_finite() {
            return Err(Error::InvalidSystem(format!("coupling ({j}, {k}) is not finite")));
        }
        self.hz[j * self.n + k] = hz;
        self.hz[k * self.n + j] = hz;
        Ok(())
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.hz[j * self.n + k]
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    /// `(j, k, hz)` for `j < k` with nonzero coupling.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n)
            .flat_map(move |j| (j + 1..self.n).map(move |k| (j, k, self.get(j, k))))
            .filter(|p| p.2 != 0.0)
    }
}

/// One molecule's spin system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    pub name: String,
    pub gamma: f64,
    pub order_parameter: f64,
    /// Site positions in meters, when the couplings were derived from geometry.
    pub positions: Option<Vec<[f64; 3]>>,
    pub couplings: CouplingTable,
}

impl SpinSystem {
    pub fn from_couplings(name: impl Into<String>, couplings: CouplingTable, order_parameter: f64) -> Result<Self> {
        let sys = Self {
            name: name.into(),
            gamma: GAMMA_PROTON,
            order_parameter,
            positions: None,
            couplings,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn from_positions(name: impl Into<String>, positions: Vec<[f64; 3]>, gamma: f64, order_parameter: f64) -> Result<Self> {
        let n = positions.len();
        let mut couplings = CouplingTable::zeros(n);
        for j in 0..n {
            for k in j + 1..n {
                let d = [
                    positions[k][0] - positions[j][0],
                    positions[k][1] - positions[j][1],
                    positions[k][2] - positions[j][2],
                ];
                couplings.set(j, k, dipolar_frequency(d, gamma)?)?;
            }
        }
        let sys = Self {
            name: name.into(),
            gamma,
            order_parameter,
            positions: Some(positions),
            couplings,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-0.5..=1.0).contains(&self.order_parameter) {
            return Err(Error::InvalidSystem(format!("order parameter {} outside [-0.5, 1]", self.order_parameter)));
        }
        if !(self.gamma.is_finite() && self.gamma != 0.0) {
            return Err(Error::InvalidSystem("gyromagnetic ratio must be finite and nonzero".into()));
        }
        SpinRegister::new(self.couplings.n_sites())?;
        Ok(())
    }

    pub fn n_spins(&self) -> usize {
        self.couplings.n_sites()
    }

    pub fn register(&self) -> Result<SpinRegister> {
        SpinRegister::new(self.n_spins())
    }

    /// Same system with every coupling multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.couplings.hz.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Hamiltonian with the order parameter set to one; its eigenvalues are
    /// the zeta values.
    pub fn reduced_hamiltonian(&self) -> Result<CMatrix> {
        let reg = self.register()?;
        if reg.n_spins() < 2 {
            return Err(Error::TrivialSystem("a dipolar Hamiltonian needs at least two sites".into()));
        }
        Ok(assemble_dipolar(&reg, &self.couplings))
    }

    pub fn eigensystem(&self) -> Result<EigenSystem> {
        let reg = self.register()?;
        let reduced = self.reduced_hamiltonian()?;
        EigenSystem::from_reduced(&reduced, &reg, self.order_parameter)
    }
}

/// `(1/2) S_zz sum_{j != k} sqrt(2/3) (2 pi w_D) T20^{jk}`, written out
/// element by element.
pub fn secular_hamiltonian(sys: &SpinSystem, reg: &SpinRegister) -> Result<Operator> {
    if reg.n_spins() != sys.n_spins() {
        return Err(Error::DimensionMismatch {
            expected: sys.n_spins(),
            found: reg.n_spins(),
        });
    }
    let h = sys.reduced_hamiltonian()? * C64::new(sys.order_parameter, 0.0);
    Ok(Operator::trusted(h, OperatorKind::Hermitian))
}

fn assemble_dipolar(reg: &SpinRegister, couplings: &CouplingTable) -> CMatrix {
    let n = reg.n_spins();
    let dim = reg.dim();
    let mut h = CMatrix::zeros(dim, dim);
    for (j, k, hz) in couplings.pairs() {
        // (1/2) sum over ordered pairs = sum over j < k; sqrt(2/3)/sqrt(6) = 1/3
        let a = 2.0 * PI * hz / 3.0;
        let (sj, sk) = (n - 1 - j, n - 1 - k);
        for b in 0..dim {
            let same = ((b >> sj) & 1) == ((b >> sk) & 1);
            if same {
                h[(b, b)].re += 0.5 * a;
            } else {
                h[(b, b)].re -= 0.5 * a;
                let partner = b ^ (1 << sj) ^ (1 << sk);
                h[(partner, b)].re -= 0.5 * a;
            }
        }
    }
    h
}

/// Simultaneous eigenbasis of the secular Hamiltonian and total Iz.
///
/// Eigenvalues are stored with the order parameter factored out:
/// `H |k> = S_zz * zeta[k] |k>`. Columns are grouped by magnetization block
/// (descending m) and sorted by ascending zeta within each block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenSystem {
    n_spins: usize,
    order_parameter: f64,
    zeta: Vec<f64>,
    double_m: Vec<i32>,
    level: Vec<usize>,
    degeneracy: Vec<usize>,
    #[serde(with = "cmatrix_serde")]
    vectors: CMatrix,
}

impl EigenSystem {
    fn from_reduced(reduced: &CMatrix, reg: &SpinRegister, order_parameter: f64) -> Result<Self> {
        let iz = collective_angular_momentum(reg, Axis::Z).into_matrix();
        let scale = max_abs(reduced).max(1.0);
        let residual = max_abs(&commutator(reduced, &iz));
        if residual > 1e-10 * scale {
            return Err(Error::NotSecular { residual });
        }
        let dim = reg.dim();
        let n = reg.n_spins();
        let mut vectors = CMatrix::zeros(dim, dim);
        let mut zeta = Vec::with_capacity(dim);
        let mut double_m = Vec::with_capacity(dim);
        let mut col = 0;
        for flips in 0..=n {
            let members: Vec<usize> = (0..dim).filter(|b| b.count_ones() as usize == flips).collect();
            let size = members.len();
            let block = DMatrix::from_fn(size, size, |r, c| reduced[(members[r], members[c])]);
            let eig = SymmetricEigen::new(block);
            let mut order: Vec<usize> = (0..size).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            for &idx in &order {
                let v = eig.eigenvectors.column(idx);
                // fix the phase so the largest component is real positive
                let pivot = (0..size).max_by(|&a, &b| v[a].norm().total_cmp(&v[b].norm())).unwrap_or(0);
                let phase = if v[pivot].norm() > 0.0 {
                    v[pivot].conj() / v[pivot].norm()
                } else {
                    C64::new(1.0, 0.0)
                };
                for (r, &basis) in members.iter().enumerate() {
                    vectors[(basis, col)] = v[r] * phase;
                }
                zeta.push(eig.eigenvalues[idx]);
                double_m.push(n as i32 - 2 * flips as i32);
                col += 1;
            }
        }
        let (level, degeneracy) = group_levels(&zeta);
        Ok(Self {
            n_spins: n,
            order_parameter,
            zeta,
            double_m,
            level,
            degeneracy,
            vectors,
        })
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.zeta.len()
    }

    pub fn order_parameter(&self) -> f64 {
        self.order_parameter
    }

    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    /// Twice the total-Iz eigenvalue of each eigenvector.
    pub fn double_m(&self) -> &[i32] {
        &self.double_m
    }

    /// Coherence order of eigenbasis element (a, b).
    #[inline]
    pub fn order(&self, a: usize, b: usize) -> i32 {
        (self.double_m[a] - self.double_m[b]) / 2
    }

    /// Index of the distinct zeta level each eigenvector belongs to.
    pub fn level(&self) -> &[usize] {
        &self.level
    }

    /// Position of each eigenvector within its degenerate group.
    pub fn degeneracy_label(&self) -> &[usize] {
        &self.degeneracy
    }

    pub fn vectors(&self) -> &CMatrix {
        &self.vectors
    }

    /// Eigenvalues of H in rad/s.
    pub fn energies(&self) -> Vec<f64> {
        self.zeta.iter().map(|z| z * self.order_parameter).collect()
    }

    /// Eigenbasis sizes per magnetization block, ordered by descending m.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = Vec::new();
        let mut last = None;
        for &m in &self.double_m {
            if last == Some(m) {
                *sizes.last_mut().unwrap() += 1;
            } else {
                sizes.push(1);
                last = Some(m);
            }
        }
        sizes
    }

    pub fn with_order_parameter(&self, order_parameter: f64) -> Self {
        let mut out = self.clone();
        out.order_parameter = order_parameter;
        out
    }

    pub fn hamiltonian(&self) -> CMatrix {
        let diag: Vec<C64> = self.energies().into_iter().map(|e| C64::new(e, 0.0)).collect();
        self.from_eigenbasis(&CMatrix::from_diagonal(&diag.into()))
    }

    /// `V^dagger A V`
    pub fn to_eigenbasis(&self, a: &CMatrix) -> CMatrix {
        self.vectors.adjoint() * a * &self.vectors
    }

    /// `V A V^dagger`
    pub fn from_eigenbasis(&self, a: &CMatrix) -> CMatrix {
        &self.vectors * a * self.vectors.adjoint()
    }

    /// Diagonal of `exp(-i scale S_zz zeta t)` in the eigenbasis.
    pub fn phases(&self, duration: f64, scale: f64) -> Vec<C64> {
        let f = -scale * self.order_parameter * duration;
        self.zeta.iter().map(|z| C64::from_polar(1.0, f * z)).collect()
    }

    /// Largest |zeta_a - zeta_b| over all eigenvector pairs.
    pub fn max_gap(&self) -> f64 {
        let (lo, hi) = self.zeta.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &z| (lo.min(z), hi.max(z)));
        hi - lo
    }
}

fn group_levels(zeta: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let norm = zeta.iter().fold(0.0_f64, |a, z| a.max(z.abs()));
    let tol = 1e-9 * norm.max(f64::MIN_POSITIVE);
    let mut idx: Vec<usize> = (0..zeta.len()).collect();
    idx.sort_by(|&a, &b| zeta[a].total_cmp(&zeta[b]).then(a.cmp(&b)));
    let mut level = vec![0; zeta.len()];
    let mut degeneracy = vec![0; zeta.len()];
    let mut current = 0;
    let mut start_value = f64::NAN;
    let mut within = 0;
    for (pos, &i) in idx.iter().enumerate() {
        if pos > 0 && (zeta[i] - start_value).abs() > tol {
            current += 1;
            within = 0;
        }
        if within == 0 {
            start_value = zeta[i];
        }
        level[i] = current;
        degeneracy[i] = within;
        within += 1;
    }
    (level, degeneracy)
}

/// Eigendecomposition of an arbitrary secular Hamiltonian `h` (rad/s) given
/// the order parameter that scales it.
pub fn eigendecompose(h: &CMatrix, reg: &SpinRegister, order_parameter: f64) -> Result<EigenSystem> {
    if h.nrows() != reg.dim() || h.ncols() != reg.dim() {
        return Err(Error::DimensionMismatch {
            expected: reg.dim(),
            found: h.nrows(),
        });
    }
    if order_parameter == 0.0 || !order_parameter.is_finite() {
        return Err(Error::InvalidSystem("zeta is undefined for a zero order parameter".into()));
    }
    let reduced = h.unscale(order_parameter);
    EigenSystem::from_reduced(&reduced, reg, order_parameter)
}

/// `V diag(exp(-i scale S_zz zeta t)) V^dagger`. `scale = 1` is free
/// evolution; `scale = -1/2` is the effective magic-sandwich burst.
pub fn propagator(eig: &EigenSystem, duration: f64, scale: f64) -> Operator {
    let phases = eig.phases(duration, scale);
    let mut scaled = eig.vectors.clone();
    for (c, p) in phases.iter().enumerate() {
        for r in 0..scaled.nrows() {
            scaled[(r, c)] *= *p;
        }
    }
    Operator::trusted(scaled * eig.vectors.adjoint(), OperatorKind::Unitary)
}

mod cmatrix_serde {
    use super::{CMatrix, C64};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Flat {
        n: usize,
        re: Vec<f64>,
        im: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        Flat {
            n: m.nrows(),
            re: m.iter().map(|z| z.re).collect(),
            im: m.iter().map(|z| z.im).collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let flat = Flat::deserialize(d)?;
        if flat.re.len() != flat.n * flat.n || flat.im.len() != flat.re.len() {
            return Err(serde::de::Error::custom("matrix payload has wrong length"));
        }
        Ok(CMatrix::from_iterator(
            flat.n,
            flat.n,
            flat.re.into_iter().zip(flat.im).map(|(re, im)| C64::new(re, im)),
        ))
    }
}
