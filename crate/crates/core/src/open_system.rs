//! Eigen-selective adiabatic decoherence of the single-molecule reduced state.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::EigenSystem;
use crate::spectra::{CoherenceSpectrum, ReadoutKernel, XiTransform};
use crate::spin::{hermitian_deviation, CMatrix, C64};

/// Orientational distribution `p(x)` of the dimensionless order-parameter
/// fluctuation. A copy of it, stretched by the gap, shapes every line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Omdf {
    /// No orientational spread; every line is sharp.
    Delta,
    /// Zero-mean Gaussian with standard deviation `width`.
    Gaussian { width: f64 },
    /// Tabulated density on strictly increasing abscissae, normalized on load.
    Tabulated { x: Vec<f64>, p: Vec<f64> },
}

impl Default for Omdf {
    fn default() -> Self {
        Omdf::Gaussian { width: 0.05 }
    }
}

impl Omdf {
    pub fn tabulated(x: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if x.len() != p.len() || x.len() < 2 {
            return Err(Error::InvalidDecoherence(
                "tabulated distribution needs two equal columns of at least 2 rows".into(),
            ));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidDecoherence("tabulated abscissae must be strictly increasing".into()));
        }
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidDecoherence("tabulated density must be finite and non-negative".into()));
        }
        let area: f64 = x.windows(2).zip(p.windows(2)).map(|(xs, ps)| 0.5 * (xs[1] - xs[0]) * (ps[0] + ps[1])).sum();
        if !(area > 0.0) {
            return Err(Error::InvalidDecoherence("tabulated density has zero area".into()));
        }
        Ok(Omdf::Tabulated {
            x,
            p: p.into_iter().map(|v| v / area).collect(),
        })
    }

    /// Reads a two-column whitespace- or comma-separated table; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut x = Vec::new();
        let mut p = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            if cols.len() != 2 {
                return Err(Error::parse(path, format!("line {}: expected two columns", lineno + 1)));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)));
            x.push(parse(cols[0])?);
            p.push(parse(cols[1])?);
        }
        Self::tabulated(x, p)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Omdf::Delta => Ok(()),
            Omdf::Gaussian { width } => {
                if width.is_finite() && *width > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidDecoherence(format!("gaussian width must be positive, got {width}")))
                }
            }
            Omdf::Tabulated { x, p } => Self::tabulated(x.clone(), p.clone()).map(|_| ()),
        }
    }

    /// Density `p(x)`. Undefined (returns `None`) for the delta family.
    pub fn density(&self, x: f64) -> Option<f64> {
        match self {
            Omdf::Delta => None,
            Omdf::Gaussian { width } => {
                let z = x / width;
                Some((-0.5 * z * z).exp() / (width * TAU.sqrt()))
            }
            Omdf::Tabulated { x: xs, p } => {
                if x < xs[0] || x > xs[xs.len() - 1] {
                    return Some(0.0);
                }
                let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
                let f = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
                Some(p[i - 1] + f * (p[i] - p[i - 1]))
            }
        }
    }

    /// `q(u) = int p(x) exp(-i x u) dx`.
    pub fn characteristic(&self, u: f64) -> C64 {
        match self {
            Omdf::Delta => C64::new(1.0, 0.0),
            Omdf::Gaussian { width } => C64::new((-0.5 * width * width * u * u).exp(), 0.0),
            Omdf::Tabulated { x, p } => {
                // exact integral of the piecewise-linear density
                let mut acc = C64::default();
                for i in 1..x.len() {
                    acc += linear_segment_ft(x[i - 1], x[i], p[i - 1], p[i], u);
                }
                acc
            }
        }
    }
}

/// `int_{a}^{b} (pa + (pb - pa)(x - a)/(b - a)) exp(-i u x) dx`
fn linear_segment_ft(a: f64, b: f64, pa: f64, pb: f64, u: f64) -> C64 {
    let h = b - a;
    let th = u * h;
    if th.abs() < 1e-4 {
        // series in th to fourth order
        let e = C64::from_polar(1.0, -u * a);
        let i = C64::i();
        let m0 = 0.5 * (pa + pb);
        let m1 = (pa + 2.0 * pb) / 6.0;
        let m2 = (pa + 3.0 * pb) / 12.0;
        let m3 = (pa + 4.0 * pb) / 20.0;
        return e * h * (m0 - i * th * m1 - th * th * m2 / 2.0 + i * th * th * th * m3 / 6.0);
    }
    let ea = C64::from_polar(1.0, -u * a);
    let eb = C64::from_polar(1.0, -u * b);
    let i = C64::i();
    // int (alpha + beta x) e^{-iux} dx with beta the slope
    let beta = (pb - pa) / h;
    let alpha = pa - beta * a;
    let prim = |x: f64, e: C64| -> C64 { e * (i * (alpha + beta * x) / u + beta / (u * u)) };
    prim(b, eb) - prim(a, ea)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceParams {
    /// Bath correlation rate in s^-1.
    pub sigma_cl: f64,
    pub kappa: f64,
    pub omdf: Omdf,
}

impl DecoherenceParams {
    pub fn new(sigma_cl: f64, kappa: f64, omdf: Omdf) -> Result<Self> {
        let p = Self { sigma_cl, kappa, omdf };
        p.validate()?;
        Ok(p)
    }

    /// Parameters that make every decoherence factor equal to one.
    pub fn none() -> Self {
        Self {
            sigma_cl: 0.0,
            kappa: 2.0,
            omdf: Omdf::Delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_cl.is_finite() && self.sigma_cl >= 0.0) {
            return Err(Error::InvalidDecoherence(format!("sigma_cl must be non-negative, got {}", self.sigma_cl)));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::InvalidDecoherence(format!("kappa must be positive, got {}", self.kappa)));
        }
        self.omdf.validate()
    }

    /// `sigma_cl` that puts the fastest decay time at `target_td` for the
    /// largest gap `max_gap` (rad/s).
    pub fn calibrated_sigma(max_gap: f64, target_td: f64, kappa: f64) -> Result<f64> {
        if !(max_gap > 0.0 && target_td > 0.0) {
            return Err(Error::InvalidDecoherence("calibration needs a positive gap and target time".into()));
        }
        Ok(8f64.sqrt() * (kappa + 1.0) / (max_gap * target_td * target_td))
    }
}

/// Irreversible factor `exp(-dz^2 sigma^2 tau^4 / (8 (kappa + 1)^2))`.
pub fn g_irreversible(dzeta: f64, tau: f64, params: &DecoherenceParams) -> f64 {
    let k = params.kappa + 1.0;
    let tau2 = tau * tau;
    (-(dzeta * dzeta) * params.sigma_cl * params.sigma_cl * tau2 * tau2 / (8.0 * k * k)).exp()
}

/// Time at which the irreversible exponent reaches one.
pub fn decay_time(dzeta: f64, params: &DecoherenceParams) -> f64 {
    let k = params.kappa + 1.0;
    (8.0 * k * k / (dzeta * dzeta * params.sigma_cl * params.sigma_cl)).powf(0.25)
}

/// Reversible factor `q(dz t)`.
pub fn g_reversible(dzeta: f64, t: f64, params: &DecoherenceParams) -> C64 {
    if dzeta == 0.0 {
        return C64::new(1.0, 0.0);
    }
    params.omdf.characteristic(dzeta * t)
}

/// Single-molecule reduced density matrix in the eigenbasis.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedState {
    matrix: CMatrix,
}

impl ReducedState {
    pub fn from_eigenbasis(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        let scale = matrix.iter().fold(1.0_f64, |a, z| a.max(z.norm()));
        if hermitian_deviation(&matrix) > 1e-10 * scale {
            return Err(Error::OperatorKind("reduced state must be hermitian".into()));
        }
        Ok(Self { matrix })
    }

    pub fn from_product_basis(eig: &EigenSystem, rho: &CMatrix) -> Result<Self> {
        Self::from_eigenbasis(eig.to_eigenbasis(rho))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn to_product_basis(&self, eig: &EigenSystem) -> CMatrix {
        eig.from_eigenbasis(&self.matrix)
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }
}

/// Multiplies each element by `exp(-i dz S t) G^T(dz, t) G^R(dz, tau)`.
pub fn evolve_open(state: &ReducedState, t: f64, tau: f64, params: &DecoherenceParams, eig: &EigenSystem) -> ReducedState {
    let zeta = eig.zeta();
    let szz = eig.order_parameter();
    let mut m = state.matrix.clone();
    for a in 0..m.nrows() {
        for b in 0..m.ncols() {
            if a == b {
                continue;
            }
            m[(a, b)] *= element_factor(zeta[a] - zeta[b], szz, t, tau, params);
        }
    }
    ReducedState { matrix: m }
}

#[inline]
pub(crate) fn element_factor(dz: f64, szz: f64, t: f64, tau: f64, params: &DecoherenceParams) -> C64 {
    if dz == 0.0 {
        return C64::new(1.0, 0.0);
    }
    C64::from_polar(1.0, -dz * szz * t) * g_reversible(dz, t, params) * g_irreversible(dz, tau, params)
}

/// Continuous transform of `exp(-i dz S t) q(dz t) G^R(dz, tau)` over all t:
/// a copy of the distribution centered at `dz S`, scaled by `1/|dz|`.
///
/// Zero gaps produce a delta at the origin that cannot be represented on a
/// grid; they are skipped here and reported by [`synthesize_spectrum`].
pub struct OmdfCopies<'a> {
    pub params: &'a DecoherenceParams,
    pub tau: f64,
}

impl XiTransform for OmdfCopies<'_> {
    fn transform(&self, dzeta: f64, order_parameter: f64, omega: f64) -> C64 {
        if dzeta == 0.0 {
            return C64::default();
        }
        let p = self.params.omdf.density((omega - dzeta * order_parameter) / dzeta).unwrap_or(0.0);
        C64::new(TAU / dzeta.abs() * p * g_irreversible(dzeta, self.tau, self.params), 0.0)
    }
}

/// Open-system spectrum for one order on an arbitrary frequency axis.
#[derive(Clone, Debug)]
pub struct SynthesizedSpectrum {
    pub spectrum: CoherenceSpectrum,
    /// Total weight of zero-gap terms; their transform is `2 pi delta(omega)`
    /// times this value.
    pub static_weight: C64,
}

/// Sum of distribution copies over eigen-pairs of order `order`, weighted by
/// the readout coefficients and the prepared-state elements.
pub fn synthesize_spectrum(
    state: &ReducedState,
    tau: f64,
    params: &DecoherenceParams,
    eig: &EigenSystem,
    kernel: &ReadoutKernel,
    order: i32,
    freqs_hz: &[f64],
    molecules: f64,
) -> Result<SynthesizedSpectrum> {
    let n = eig.n_spins() as i32;
    if order.abs() > n {
        return Err(Error::InvalidSequence(format!("order {order} outside [-{n}, {n}]")));
    }
    if matches!(params.omdf, Omdf::Delta) {
        return Err(Error::InvalidDecoherence(
            "a delta distribution has no continuous spectrum; use the finite-window assembly".into(),
        ));
    }
    let copies = OmdfCopies { params, tau };
    let spectrum = crate::spectra::spectral_assembly(kernel, state.matrix(), eig, &copies, &[order], freqs_hz, tau, molecules);
    let zeta = eig.zeta();
    let mut static_weight = C64::default();
    for a in 0..eig.dim() {
        for b in 0..eig.dim() {
            if eig.order(a, b) == order && zeta[a] == zeta[b] {
                static_weight += kernel.g(a, b) * state.matrix()[(a, b)] * molecules;
            }
        }
    }
    Ok(SynthesizedSpectrum { spectrum, static_weight })
}
