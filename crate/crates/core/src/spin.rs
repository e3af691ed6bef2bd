//! Spin-1/2 operator algebra on N-spin product spaces.
//!
//! Basis convention: site 0 is the most significant bit of the basis index,
//! and a cleared bit is spin up (m = +1/2). Rotations follow
//! `R_a(theta) = exp(+i theta I_a)`; many NMR texts use the opposite sign.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Largest register the dense engine accepts (dim 1024).
pub const MAX_SPINS: usize = 10;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const UNITARY_TOL: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// The product space of `n_spins` spin-1/2 sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpinRegister {
    n_spins: usize,
}

impl SpinRegister {
    pub fn new(n_spins: usize) -> Result<Self> {
        if n_spins == 0 {
            return Err(Error::InvalidRegister("at least one spin is required".into()));
        }
        if n_spins > MAX_SPINS {
            return Err(Error::InvalidRegister(format!(
                "{n_spins} spins exceeds the dense-matrix ceiling of {MAX_SPINS}"
            )));
        }
        Ok(Self { n_spins })
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins
    }

    /// Bit of `site` inside basis index `b` (0 = up, 1 = down).
    #[inline]
    fn bit(&self, b: usize, site: usize) -> usize {
        (b >> (self.n_spins - 1 - site)) & 1
    }

    /// Twice the total Iz eigenvalue of product state `b`.
    #[inline]
    pub fn double_m(&self, b: usize) -> i32 {
        self.n_spins as i32 - 2 * b.count_ones() as i32
    }

    pub fn magnetization(&self, b: usize) -> f64 {
        0.5 * self.double_m(b) as f64
    }

    /// Coherence order of matrix element (r, c): m_r - m_c.
    #[inline]
    pub fn coherence_order(&self, r: usize, c: usize) -> i32 {
        c.count_ones() as i32 - r.count_ones() as i32
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.n_spins {
            return Err(Error::InvalidRegister(format!("site {site} out of range for {} spins", self.n_spins)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Rotation axis: either a direction in the transverse plane at the given
/// phase (0 = x, pi/2 = y) or the z axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RotationAxis {
    Transverse(f64),
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Hermitian,
    Unitary,
    Density,
    General,
}

/// A dense square operator on a register's Hilbert space, tagged by role.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
    kind: OperatorKind,
}

impl Operator {
    /// Wraps `matrix`, checking the invariant that goes with `kind`.
    /// Density operators are rescaled to unit trace.
    pub fn new(matrix: CMatrix, kind: OperatorKind) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::OperatorKind(format!("matrix is {}x{}, not square", matrix.nrows(), matrix.ncols())));
        }
        match kind {
            OperatorKind::Hermitian => {
                let dev = hermitian_deviation(&matrix);
                if dev > HERMITIAN_TOL {
                    return Err(Error::OperatorKind(format!("not hermitian (max deviation {dev:e})")));
                }
            }
            OperatorKind::Unitary => {
                let dev = unitary_deviation(&matrix);
                if dev > UNITARY_TOL {
                    return Err(Error::OperatorKind(format!("not unitary (max deviation {dev:e})")));
                }
            }
            OperatorKind::Density => {
                let dev = hermitian_deviation(&matrix);
                if dev > HERMITIAN_TOL {
                    return Err(Error::OperatorKind(format!("density not hermitian ({dev:e})")));
                }
                let tr = matrix.trace();
                if tr.norm() < 1e-300 {
                    return Err(Error::OperatorKind("density has zero trace".into()));
                }
                return Ok(Self {
                    matrix: matrix.unscale(tr.re),
                    kind,
                });
            }
            OperatorKind::General => {}
        }
        Ok(Self { matrix, kind })
    }

    pub fn general(matrix: CMatrix) -> Self {
        Self {
            matrix,
            kind: OperatorKind::General,
        }
    }

    pub(crate) fn trusted(matrix: CMatrix, kind: OperatorKind) -> Self {
        Self { matrix, kind }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            matrix: self.matrix.adjoint(),
            kind: self.kind,
        }
    }

    /// `U A U^dagger`
    pub fn conjugate_by(&self, u: &CMatrix) -> CMatrix {
        u * &self.matrix * u.adjoint()
    }

    /// Row-major text dump, one row per line, entries formatted `re+imj`.
    pub fn to_text(&self) -> String {
        matrix_to_text(&self.matrix)
    }
}

pub fn matrix_to_text(m: &CMatrix) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(' ');
            }
            let z = m[(r, c)];
            let sign = if z.im.is_sign_negative() { '-' } else { '+' };
            let _ = write!(out, "{:e}{}{:e}j", z.re, sign, z.im.abs());
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`matrix_to_text`].
pub fn matrix_from_text(text: &str) -> Result<CMatrix> {
    let rows: Vec<Vec<C64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| line.split_whitespace().map(parse_complex).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::parse("<matrix>", "matrix text is not square"));
    }
    Ok(CMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

fn parse_complex(tok: &str) -> Result<C64> {
    let body = tok
        .strip_suffix('j')
        .ok_or_else(|| Error::parse("<matrix>", format!("entry {tok:?} lacks 'j'")))?;
    // split at the sign that starts the imaginary part (not an exponent sign)
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'))
        .ok_or_else(|| Error::parse("<matrix>", format!("entry {tok:?} malformed")))?;
    let re: f64 = body[..split].parse().map_err(|e| Error::parse("<matrix>", format!("{tok:?}: {e}")))?;
    let im: f64 = body[split..].parse().map_err(|e| Error::parse("<matrix>", format!("{tok:?}: {e}")))?;
    Ok(C64::new(re, im))
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |acc, (x, y)| acc.max((x - y).norm()))
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0_f64;
    for r in 0..n {
        for c in r..n {
            dev = dev.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    dev
}

pub fn unitary_deviation(m: &CMatrix) -> f64 {
    let prod = m * m.adjoint();
    max_abs_diff(&prod, &CMatrix::identity(m.nrows(), m.ncols()))
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Single-spin operator on `site`, identity elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteOp {
    X,
    Y,
    Z,
    Raise,
    Lower,
}

pub fn site_operator(reg: &SpinRegister, site: usize, op: SiteOp) -> Result<CMatrix> {
    reg.check_site(site)?;
    let dim = reg.dim();
    let shift = reg.n_spins - 1 - site;
    let mut m = CMatrix::zeros(dim, dim);
    for b in 0..dim {
        let down = (b >> shift) & 1 == 1;
        let flipped = b ^ (1 << shift);
        match op {
            SiteOp::Z => m[(b, b)] = C64::new(if down { -0.5 } else { 0.5 }, 0.0),
            SiteOp::X => m[(flipped, b)] = C64::new(0.5, 0.0),
            // <up|Iy|down> = -i/2, <down|Iy|up> = +i/2
            SiteOp::Y => m[(flipped, b)] = C64::new(0.0, if down { -0.5 } else { 0.5 }),
            SiteOp::Raise => {
                if down {
                    m[(flipped, b)] = ONE;
                }
            }
            SiteOp::Lower => {
                if !down {
                    m[(flipped, b)] = ONE;
                }
            }
        }
    }
    Ok(m)
}

/// Total angular momentum component along `axis`.
pub fn collective_angular_momentum(reg: &SpinRegister, axis: Axis) -> Operator {
    let dim = reg.dim();
    let mut m = CMatrix::zeros(dim, dim);
    match axis {
        Axis::Z => {
            for b in 0..dim {
                m[(b, b)] = C64::new(reg.magnetization(b), 0.0);
            }
        }
        Axis::X | Axis::Y => {
            for b in 0..dim {
                for site in 0..reg.n_spins {
                    let shift = reg.n_spins - 1 - site;
                    let down = (b >> shift) & 1 == 1;
                    let flipped = b ^ (1 << shift);
                    m[(flipped, b)] = match axis {
                        Axis::X => C64::new(0.5, 0.0),
                        _ => C64::new(0.0, if down { -0.5 } else { 0.5 }),
                    };
                }
            }
        }
    }
    Operator::trusted(m, OperatorKind::Hermitian)
}

/// `I_+ = I_x + i I_y`
pub fn collective_raising(reg: &SpinRegister) -> CMatrix {
    let dim = reg.dim();
    let mut m = CMatrix::zeros(dim, dim);
    for b in 0..dim {
        for site in 0..reg.n_spins {
            let shift = reg.n_spins - 1 - site;
            if (b >> shift) & 1 == 1 {
                m[(b ^ (1 << shift), b)] = ONE;
            }
        }
    }
    m
}

/// `exp(i * angle * I_axis)`, built as a Kronecker power of the single-spin
/// rotation (or as a diagonal phase for z).
pub fn rotation(reg: &SpinRegister, axis: RotationAxis, angle: f64) -> Operator {
    let dim = reg.dim();
    let mut m = CMatrix::zeros(dim, dim);
    match axis {
        RotationAxis::Z => {
            for b in 0..dim {
                m[(b, b)] = C64::from_polar(1.0, angle * reg.magnetization(b));
            }
        }
        RotationAxis::Transverse(phase) => {
            let (s, c) = (0.5 * angle).sin_cos();
            // exp(i a/2 (cos(p) sx + sin(p) sy)) in the (up, down) basis
            let single = [
                [C64::new(c, 0.0), C64::i() * s * C64::from_polar(1.0, -phase)],
                [C64::i() * s * C64::from_polar(1.0, phase), C64::new(c, 0.0)],
            ];
            for r in 0..dim {
                for col in 0..dim {
                    let mut z = ONE;
                    for site in 0..reg.n_spins {
                        z *= single[reg.bit(r, site)][reg.bit(col, site)];
                        if z == ZERO {
                            break;
                        }
                    }
                    m[(r, col)] = z;
                }
            }
        }
    }
    Operator::trusted(m, OperatorKind::Unitary)
}

/// Secular rank-2 pair tensor
/// `(1/sqrt 6) [2 Izj Izk - (1/2)(I+j I-k + I-j I+k)]`.
pub fn t20_pair(reg: &SpinRegister, j: usize, k: usize) -> Result<Operator> {
    if j == k {
        return Err(Error::InvalidPair {
            j,
            k,
            reason: "sites must differ".into(),
        });
    }
    for site in [j, k] {
        if site >= reg.n_spins {
            return Err(Error::InvalidPair {
                j,
                k,
                reason: format!("site {site} out of range for {} spins", reg.n_spins),
            });
        }
    }
    let dim = reg.dim();
    let norm = 1.0 / 6.0_f64.sqrt();
    let (sj, sk) = (reg.n_spins - 1 - j, reg.n_spins - 1 - k);
    let mut m = CMatrix::zeros(dim, dim);
    for b in 0..dim {
        let bj = (b >> sj) & 1;
        let bk = (b >> sk) & 1;
        if bj == bk {
            m[(b, b)] = C64::new(0.5 * norm, 0.0);
        } else {
            m[(b, b)] = C64::new(-0.5 * norm, 0.0);
            let partner = b ^ (1 << sj) ^ (1 << sk);
            m[(partner, b)] = C64::new(-0.5 * norm, 0.0);
        }
    }
    Ok(Operator::trusted(m, OperatorKind::Hermitian))
}

/// Splits `op` into coherence-order components; only orders with a nonzero
/// entry appear. The components sum exactly to `op`.
pub fn coherence_order_decompose(op: &CMatrix, reg: &SpinRegister) -> Result<BTreeMap<i32, Operator>> {
    let dim = reg.dim();
    if op.nrows() != dim || op.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: op.nrows(),
        });
    }
    let mut parts: BTreeMap<i32, CMatrix> = BTreeMap::new();
    for c in 0..dim {
        for r in 0..dim {
            let z = op[(r, c)];
            if z == ZERO {
                continue;
            }
            let order = reg.coherence_order(r, c);
            parts.entry(order).or_insert_with(|| CMatrix::zeros(dim, dim))[(r, c)] = z;
        }
    }
    Ok(parts.into_iter().map(|(k, m)| (k, Operator::general(m))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn reg(n: usize) -> SpinRegister {
        SpinRegister::new(n).unwrap()
    }

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn register_bounds() {
        assert!(SpinRegister::new(0).is_err());
        assert!(SpinRegister::new(11).is_err());
        assert_eq!(reg(10).dim(), 1024);
        assert_eq!(reg(3).dim(), 8);
    }

    #[test]
    fn iz_single_and_pair() {
        let iz = collective_angular_momentum(&reg(1), Axis::Z);
        assert_eq!(iz.matrix(), &CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.5), c(-0.5)])));
        let iz = collective_angular_momentum(&reg(2), Axis::Z);
        assert_eq!(
            iz.matrix(),
            &CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0), c(0.0), c(0.0), c(-1.0)]))
        );
    }

    #[test]
    fn angular_momentum_commutation() {
        for n in 1..=4 {
            let r = reg(n);
            let ix = collective_angular_momentum(&r, Axis::X).into_matrix();
            let iy = collective_angular_momentum(&r, Axis::Y).into_matrix();
            let iz = collective_angular_momentum(&r, Axis::Z).into_matrix();
            let lhs = commutator(&ix, &iy);
            assert!(max_abs_diff(&lhs, &(iz.clone() * C64::i())) < 1e-14, "n = {n}");
            assert!(ix.trace().norm() < 1e-14 && iy.trace().norm() < 1e-14);
            assert!(hermitian_deviation(&iy) == 0.0);
        }
    }

    #[test]
    fn site_operators_sum_to_collective() {
        let r = reg(3);
        for (axis, op) in [(Axis::X, SiteOp::X), (Axis::Y, SiteOp::Y), (Axis::Z, SiteOp::Z)] {
            let sum = (0..3).fold(CMatrix::zeros(8, 8), |acc, s| acc + site_operator(&r, s, op).unwrap());
            assert_eq!(&sum, collective_angular_momentum(&r, axis).matrix());
        }
        let raise = (0..3).fold(CMatrix::zeros(8, 8), |acc, s| acc + site_operator(&r, s, SiteOp::Raise).unwrap());
        assert_eq!(raise, collective_raising(&r));
        assert!(site_operator(&r, 3, SiteOp::X).is_err());
    }

    #[test]
    fn pulse_maps_iz_to_iy() {
        let r = reg(3);
        let rx = rotation(&r, RotationAxis::Transverse(0.0), FRAC_PI_2);
        let rx_inv = rotation(&r, RotationAxis::Transverse(0.0), -FRAC_PI_2);
        let iz = collective_angular_momentum(&r, Axis::Z).into_matrix();
        let iy = collective_angular_momentum(&r, Axis::Y).into_matrix();
        let out = rx.matrix() * iz * rx_inv.matrix();
        assert!(max_abs_diff(&out, &iy) < 1e-14);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let r = reg(2);
        for axis in [RotationAxis::Transverse(0.7), RotationAxis::Z] {
            assert!(max_abs_diff(rotation(&r, axis, 0.0).matrix(), &CMatrix::identity(4, 4)) == 0.0);
        }
    }

    #[test]
    fn phase_shifted_pulse_factorizes() {
        let r = reg(3);
        let phi = 0.3;
        let lhs = rotation(&r, RotationAxis::Transverse(FRAC_PI_2 + phi), FRAC_PI_4).into_matrix();
        let rhs = rotation(&r, RotationAxis::Z, -phi).into_matrix()
            * rotation(&r, RotationAxis::Transverse(FRAC_PI_2), FRAC_PI_4).matrix()
            * rotation(&r, RotationAxis::Z, phi).matrix();
        assert!(max_abs_diff(&lhs, &rhs) < 1e-14);
    }

    #[test]
    fn transverse_generator_phase_shift() {
        let r = reg(2);
        let ix = collective_angular_momentum(&r, Axis::X).into_matrix();
        let iy = collective_angular_momentum(&r, Axis::Y).into_matrix();
        for k in 0..24 {
            let phi = 2.0 * PI * k as f64 / 24.0;
            let rotated = rotation(&r, RotationAxis::Z, -phi).into_matrix() * &ix * rotation(&r, RotationAxis::Z, phi).matrix();
            let expect = &ix * c(phi.cos()) + &iy * c(phi.sin());
            assert!(max_abs_diff(&rotated, &expect) < 1e-14, "phi = {phi}");
        }
    }

    #[test]
    fn rotation_composes() {
        let r = reg(3);
        let axis = RotationAxis::Transverse(1.1);
        let a = rotation(&r, axis, 0.4).into_matrix() * rotation(&r, axis, 0.9).matrix();
        let b = rotation(&r, axis, 1.3).into_matrix();
        assert!(max_abs_diff(&a, &b) < 1e-14);
        assert!(unitary_deviation(&b) < UNITARY_TOL);
    }

    #[test]
    fn t20_two_spin_matrix() {
        let r = reg(2);
        let t = t20_pair(&r, 0, 1).unwrap().into_matrix();
        let s6 = 6.0_f64.sqrt();
        let mut expect = CMatrix::zeros(4, 4);
        expect[(0, 0)] = c(0.5 / s6);
        expect[(1, 1)] = c(-0.5 / s6);
        expect[(2, 2)] = c(-0.5 / s6);
        expect[(3, 3)] = c(0.5 / s6);
        expect[(1, 2)] = c(-0.5 / s6);
        expect[(2, 1)] = c(-0.5 / s6);
        assert!(max_abs_diff(&t, &expect) < 1e-15);
        let norm = (t.adjoint() * &t).trace();
        // off-diagonal -1/(2 sqrt 6) contributes as well, so the trace is 4/24 + 2/24 = 1/4
        assert!((norm.re - 0.25).abs() < 1e-15);
    }

    #[test]
    fn t20_is_secular() {
        let r = reg(4);
        let iz = collective_angular_momentum(&r, Axis::Z).into_matrix();
        for (j, k) in [(0, 1), (0, 3), (2, 1)] {
            let t = t20_pair(&r, j, k).unwrap().into_matrix();
            assert!(max_abs(&commutator(&iz, &t)) < 1e-15);
            assert!(t.trace().norm() < 1e-15);
        }
        assert!(matches!(t20_pair(&r, 1, 1), Err(Error::InvalidPair { .. })));
        assert!(t20_pair(&r, 1, 4).is_err());
    }

    #[test]
    fn t20_matches_operator_definition() {
        let r = reg(3);
        let (j, k) = (0, 2);
        let zj = site_operator(&r, j, SiteOp::Z).unwrap();
        let zk = site_operator(&r, k, SiteOp::Z).unwrap();
        let pj = site_operator(&r, j, SiteOp::Raise).unwrap();
        let mj = site_operator(&r, j, SiteOp::Lower).unwrap();
        let pk = site_operator(&r, k, SiteOp::Raise).unwrap();
        let mk = site_operator(&r, k, SiteOp::Lower).unwrap();
        let expect = ((zj * zk) * c(2.0) - (pj * mk + mj * pk) * c(0.5)) * c(1.0 / 6.0_f64.sqrt());
        assert!(max_abs_diff(t20_pair(&r, j, k).unwrap().matrix(), &expect) < 1e-15);
    }

    #[test]
    fn decomposition_of_simple_operators() {
        let r = reg(3);
        let iz = collective_angular_momentum(&r, Axis::Z).into_matrix();
        let parts = coherence_order_decompose(&iz, &r).unwrap();
        assert_eq!(parts.keys().copied().collect::<Vec<_>>(), vec![0]);

        let raise = site_operator(&r, 1, SiteOp::Raise).unwrap();
        let parts = coherence_order_decompose(&raise, &r).unwrap();
        assert_eq!(parts.keys().copied().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn decomposition_matches_phase_fourier_analysis() {
        // brute-force oracle: C_nu = (1/M) sum_k exp(-i nu phi_k) Rz(phi_k) A Rz(-phi_k)
        let r = reg(2);
        let ry = rotation(&r, RotationAxis::Transverse(FRAC_PI_2), FRAC_PI_4).into_matrix();
        let t = t20_pair(&r, 0, 1).unwrap().into_matrix();
        let a = &ry * t * ry.adjoint();
        let parts = coherence_order_decompose(&a, &r).unwrap();
        assert_eq!(parts.keys().copied().collect::<Vec<_>>(), vec![-2, -1, 0, 1, 2]);
        let samples = 16;
        for nu in -2..=2 {
            let mut acc = CMatrix::zeros(4, 4);
            for k in 0..samples {
                let phi = 2.0 * PI * k as f64 / samples as f64;
                let rz = rotation(&r, RotationAxis::Z, phi).into_matrix();
                acc += (&rz * &a * rz.adjoint()) * C64::from_polar(1.0 / samples as f64, -(nu as f64) * phi);
            }
            assert!(max_abs_diff(&acc, parts[&nu].matrix()) < 1e-14, "order {nu}");
            // phase-encoding property
            let phi = 0.77;
            let rz = rotation(&r, RotationAxis::Z, phi).into_matrix();
            let enc = &rz * parts[&nu].matrix() * rz.adjoint();
            assert!(max_abs_diff(&enc, &(parts[&nu].matrix() * C64::from_polar(1.0, nu as f64 * phi))) < 1e-14);
        }
    }

    #[test]
    fn text_dump_round_trip() {
        let r = reg(2);
        let op = rotation(&r, RotationAxis::Transverse(0.3), 1.234);
        let text = op.to_text();
        assert_eq!(text.lines().count(), 4);
        let back = matrix_from_text(&text).unwrap();
        assert_eq!(&back, op.matrix());
        assert!(matrix_from_text("1e0+0e0j 2e0+0e0j\n").is_err());
    }

    #[test]
    fn operator_kind_validation() {
        let r = reg(2);
        let iy = collective_angular_momentum(&r, Axis::Y).into_matrix();
        assert!(Operator::new(iy.clone(), OperatorKind::Hermitian).is_ok());
        assert!(Operator::new(iy.clone() * C64::i(), OperatorKind::Hermitian).is_err());
        assert!(Operator::new(iy.clone(), OperatorKind::Unitary).is_err());
        let rho = CMatrix::identity(4, 4) * c(3.0);
        let d = Operator::new(rho, OperatorKind::Density).unwrap();
        assert!((d.matrix().trace().re - 1.0).abs() < 1e-15);
    }
}
