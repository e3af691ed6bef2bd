//! Coherence-order-resolved spectra.
//!
//! Conventions: the phase transform is `(1/N_phi) sum_j S(phi_j) exp(-i mu phi_j)`,
//! so a signal component `exp(+i nu phi)` lands at `mu = nu`. The time
//! transform is the unnormalized `sum_n S(t_n) exp(+i omega t_n)`, so a
//! component `exp(-i 2 pi f t)` lands at `+f`. Neither carries a `dt` factor.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::EigenSystem;
use crate::spin::{collective_angular_momentum, collective_raising, rotation, Axis, CMatrix, RotationAxis, SpinRegister, C64};

/// Detected quantity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Observable {
    X,
    Y,
    /// Quadrature signal `S_x + i S_y`.
    #[default]
    Plus,
}

impl Observable {
    pub fn matrix(&self, reg: &SpinRegister) -> CMatrix {
        match self {
            Observable::X => collective_angular_momentum(reg, Axis::X).into_matrix(),
            Observable::Y => collective_angular_momentum(reg, Axis::Y).into_matrix(),
            Observable::Plus => collective_raising(reg),
        }
    }
}

/// Acquisition window centered at `t_m` with width `window` (seconds).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub t_m: f64,
    pub window: f64,
    pub observable: Observable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalMetadata {
    pub dt: f64,
    pub dphi: f64,
    pub taus: Vec<f64>,
    pub t_p: f64,
    pub acquisition: AcquisitionSpec,
    pub n_spins: usize,
    pub engine: String,
}

/// Complex signal sampled on a uniform (phi, t) grid for each tau.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalGrid {
    n_phi: usize,
    n_t: usize,
    /// Layout: `[tau][phi][t]`.
    data: Vec<C64>,
    meta: SignalMetadata,
}

impl SignalGrid {
    pub fn new(n_phi: usize, n_t: usize, data: Vec<C64>, meta: SignalMetadata) -> Result<Self> {
        if n_phi == 0 || n_t == 0 || meta.taus.is_empty() {
            return Err(Error::InsufficientData("signal grid has an empty axis".into()));
        }
        if data.len() != n_phi * n_t * meta.taus.len() {
            return Err(Error::DimensionMismatch {
                expected: n_phi * n_t * meta.taus.len(),
                found: data.len(),
            });
        }
        let span = n_phi as f64 * meta.dphi;
        if ((span - TAU) / TAU).abs() > 1e-6 {
            return Err(Error::UnsupportedSampling(format!("phase grid spans {span} rad, must span 2 pi")));
        }
        if !(meta.dt > 0.0) {
            return Err(Error::UnsupportedSampling("time step must be positive".into()));
        }
        Ok(Self { n_phi, n_t, data, meta })
    }

    /// Builds a grid from explicit sample coordinates, rejecting anything
    /// that is not uniformly spaced.
    pub fn from_samples(phis: &[f64], times: &[f64], data: Vec<C64>, mut meta: SignalMetadata) -> Result<Self> {
        let dphi = uniform_step(phis, "phase")?;
        let dt = uniform_step(times, "time")?;
        if times.first().copied().unwrap_or(0.0).abs() > 1e-9 * dt {
            return Err(Error::UnsupportedSampling("time axis must start at zero".into()));
        }
        meta.dphi = dphi;
        meta.dt = dt;
        Self::new(phis.len(), times.len(), data, meta)
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_tau(&self) -> usize {
        self.meta.taus.len()
    }

    pub fn meta(&self) -> &SignalMetadata {
        &self.meta
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, i_phi: usize, i_t: usize, i_tau: usize) -> usize {
        (i_tau * self.n_phi + i_phi) * self.n_t + i_t
    }

    pub fn get(&self, i_phi: usize, i_t: usize, i_tau: usize) -> C64 {
        self.data[self.index(i_phi, i_t, i_tau)]
    }

    pub fn phi(&self, i_phi: usize) -> f64 {
        i_phi as f64 * self.meta.dphi
    }

    pub fn time(&self, i_t: usize) -> f64 {
        i_t as f64 * self.meta.dt
    }

    /// `[phi][t]` slab for one tau.
    pub fn slab(&self, i_tau: usize) -> &[C64] {
        let len = self.n_phi * self.n_t;
        &self.data[i_tau * len..(i_tau + 1) * len]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= factor);
        out
    }
}

fn uniform_step(values: &[f64], what: &str) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::UnsupportedSampling(format!("{what} axis needs at least two samples")));
    }
    let step = values[1] - values[0];
    if !(step > 0.0) {
        return Err(Error::UnsupportedSampling(format!("{what} axis is not increasing")));
    }
    for w in values.windows(2) {
        if ((w[1] - w[0]) - step).abs() > 1e-9 * step {
            return Err(Error::UnsupportedSampling(format!("{what} axis is not uniformly sampled")));
        }
    }
    Ok(step)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Apodization {
    #[default]
    None,
    /// `exp(-pi lb t)`
    Exponential { line_broadening_hz: f64 },
    /// `exp(-(pi lb t)^2 / (4 ln 2))`, FWHM `lb`.
    Gaussian { line_broadening_hz: f64 },
}

impl Apodization {
    fn weight(&self, t: f64) -> f64 {
        match *self {
            Apodization::None => 1.0,
            Apodization::Exponential { line_broadening_hz } => (-PI * line_broadening_hz * t).exp(),
            Apodization::Gaussian { line_broadening_hz } => {
                let x = PI * line_broadening_hz * t;
                (-x * x / (4.0 * std::f64::consts::LN_2)).exp()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub apodization: Apodization,
    /// Total length factor after zero filling (1 = none).
    pub zero_fill: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self::analysis()
    }
}

impl SpectrumOptions {
    /// Unpadded, unapodized bins; what fits run on.
    pub fn analysis() -> Self {
        Self {
            apodization: Apodization::None,
            zero_fill: 1,
        }
    }

    pub fn display() -> Self {
        Self {
            apodization: Apodization::None,
            zero_fill: 4,
        }
    }
}

/// Spectrum over (coherence order, frequency) for one tau.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSpectrum {
    pub tau: f64,
    /// Ascending, `-N_phi/2 .. N_phi/2 - 1`.
    pub orders: Vec<i32>,
    /// Ascending frequency axis in Hz.
    pub freqs_hz: Vec<f64>,
    /// Layout: `[order][freq]`.
    pub values: Vec<C64>,
}

impl CoherenceSpectrum {
    pub fn n_freq(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn order_index(&self, order: i32) -> Option<usize> {
        self.orders.iter().position(|&o| o == order)
    }

    pub fn row(&self, order: i32) -> Option<&[C64]> {
        let i = self.order_index(order)?;
        let n = self.n_freq();
        Some(&self.values[i * n..(i + 1) * n])
    }

    pub fn at(&self, order: i32, i_freq: usize) -> C64 {
        self.row(order).map(|r| r[i_freq]).unwrap_or_default()
    }

    /// Index of the bin nearest `hz`.
    pub fn nearest_bin(&self, hz: f64) -> usize {
        let mut best = 0;
        for (i, f) in self.freqs_hz.iter().enumerate() {
            if (f - hz).abs() < (self.freqs_hz[best] - hz).abs() {
                best = i;
            }
        }
        best
    }

    /// Largest magnitude in the row of `order`.
    pub fn peak_magnitude(&self, order: i32) -> f64 {
        self.row(order).map(|r| r.iter().fold(0.0_f64, |a, z| a.max(z.norm()))).unwrap_or(0.0)
    }

    pub fn total_power(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Rows restricted to `|f| <= band_hz`.
    pub fn band_limited(&self, band_hz: f64) -> Self {
        let keep: Vec<usize> = (0..self.n_freq()).filter(|&i| self.freqs_hz[i].abs() <= band_hz).collect();
        let n = self.n_freq();
        let mut values = Vec::with_capacity(keep.len() * self.orders.len());
        for o in 0..self.orders.len() {
            values.extend(keep.iter().map(|&i| self.values[o * n + i]));
        }
        Self {
            tau: self.tau,
            orders: self.orders.clone(),
            freqs_hz: keep.iter().map(|&i| self.freqs_hz[i]).collect(),
            values,
        }
    }
}

/// Signed index for FFT bin `k` of an `n`-point transform, in `[-n/2, n/2)`.
#[inline]
pub fn signed_bin(k: usize, n: usize) -> i64 {
    let k = k as i64;
    let n = n as i64;
    if k >= n - n / 2 {
        k - n
    } else {
        k
    }
}

/// Order axis for an `n_phi`-point phase transform.
pub fn order_axis(n_phi: usize) -> Vec<i32> {
    let half = (n_phi / 2) as i32;
    (-half..(n_phi as i32 - half)).collect()
}

/// Frequency axis (Hz) for an `n`-point time transform with step `dt`.
pub fn frequency_axis(n: usize, dt: f64) -> Vec<f64> {
    let half = (n / 2) as i64;
    (-half..(n as i64 - half)).map(|m| m as f64 / (n as f64 * dt)).collect()
}

/// Two-dimensional transform over phase and time, one spectrum per tau.
pub fn fft2_coherence(grid: &SignalGrid, opts: &SpectrumOptions) -> Result<Vec<CoherenceSpectrum>> {
    if opts.zero_fill == 0 {
        return Err(Error::Config("zero fill factor must be at least 1".into()));
    }
    let n_phi = grid.n_phi();
    let n_t = grid.n_t();
    let n_out = n_t * opts.zero_fill;
    let dt = grid.meta().dt;
    let orders = order_axis(n_phi);
    let freqs = frequency_axis(n_out, dt);
    let weights: Vec<f64> = (0..n_t).map(|k| opts.apodization.weight(k as f64 * dt)).collect();

    let mut planner = FftPlanner::<f64>::new();
    let phi_fft = planner.plan_fft_forward(n_phi);
    let t_fft = planner.plan_fft_inverse(n_out);

    (0..grid.n_tau())
        .into_par_iter()
        .map(|i_tau| {
            let slab = grid.slab(i_tau);
            // phase transform, column by column
            let mut by_order = vec![C64::default(); n_phi * n_t];
            let mut column = vec![C64::default(); n_phi];
            for k in 0..n_t {
                for j in 0..n_phi {
                    column[j] = slab[j * n_t + k];
                }
                phi_fft.process(&mut column);
                for (bin, z) in column.iter().enumerate() {
                    let mu = signed_bin(bin, n_phi);
                    let row = (mu + (n_phi / 2) as i64) as usize;
                    by_order[row * n_t + k] = z / n_phi as f64;
                }
            }
            let mut values = vec![C64::default(); n_phi * n_out];
            let mut buf = vec![C64::default(); n_out];
            for row in 0..n_phi {
                buf.iter_mut().for_each(|z| *z = C64::default());
                for k in 0..n_t {
                    buf[k] = by_order[row * n_t + k] * weights[k];
                }
                t_fft.process(&mut buf);
                for (bin, z) in buf.iter().enumerate() {
                    let m = signed_bin(bin, n_out);
                    let col = (m + (n_out / 2) as i64) as usize;
                    values[row * n_out + col] = *z;
                }
            }
            CoherenceSpectrum {
                tau: grid.meta().taus[i_tau],
                orders: orders.clone(),
                freqs_hz: freqs.clone(),
                values,
            }
        })
        .collect::<Vec<_>>()
        .pipe(Ok)
}

trait Pipe: Sized {
    fn pipe<T>(self, f: impl FnOnce(Self) -> T) -> T {
        f(self)
    }
}
impl<T> Pipe for T {}

/// `sin(x)/x` with the removable singularity filled in.
#[inline]
pub(crate) fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Read-pulse + acquisition kernel in the eigenbasis.
///
/// For an eigenbasis component `|a><b|` of the reduced state, the
/// window-averaged readout coefficient is `g(a, b)`; the measured signal is
/// `sum_ab exp(i nu_ab phi) g(a, b) rho_ab`.
#[derive(Clone, Debug)]
pub struct ReadoutKernel {
    /// `R_y(pi/4)^dagger O_avg R_y(pi/4)` in the eigenbasis; `g(a, b) = b_matrix[(b, a)]`.
    b_matrix: CMatrix,
    acquisition: AcquisitionSpec,
}

impl ReadoutKernel {
    pub fn new(eig: &EigenSystem, reg: &SpinRegister, acquisition: AcquisitionSpec) -> Result<Self> {
        if acquisition.window < 0.0 || !acquisition.window.is_finite() || !acquisition.t_m.is_finite() {
            return Err(Error::Config("acquisition window must be finite and non-negative".into()));
        }
        let averaged = averaged_observable(eig, reg, &acquisition);
        let ry = rotation(reg, RotationAxis::Transverse(PI / 2.0), PI / 4.0).into_matrix();
        let b = ry.adjoint() * eig.from_eigenbasis(&averaged) * &ry;
        Ok(Self {
            b_matrix: eig.to_eigenbasis(&b),
            acquisition,
        })
    }

    pub fn acquisition(&self) -> &AcquisitionSpec {
        &self.acquisition
    }

    #[inline]
    pub fn g(&self, a: usize, b: usize) -> C64 {
        self.b_matrix[(b, a)]
    }

    /// `tr(B C)` for a component `C` given in the eigenbasis.
    pub fn g_of_eigen(&self, component: &CMatrix) -> C64 {
        (&self.b_matrix * component).trace()
    }

    pub fn b_matrix(&self) -> &CMatrix {
        &self.b_matrix
    }
}

/// Window-averaged Heisenberg observable `(1/D) int U^dag(t') O U(t') dt'`
/// in the eigenbasis.
fn averaged_observable(eig: &EigenSystem, reg: &SpinRegister, acq: &AcquisitionSpec) -> CMatrix {
    let o = eig.to_eigenbasis(&acq.observable.matrix(reg));
    let e = eig.energies();
    CMatrix::from_fn(o.nrows(), o.ncols(), |a, b| {
        let w = e[a] - e[b];
        o[(a, b)] * C64::from_polar(sinc(0.5 * w * acq.window), w * acq.t_m)
    })
}

/// Window-averaged readout coefficient of a coherence component given in
/// the product basis.
pub fn g_coefficients(eig: &EigenSystem, reg: &SpinRegister, component: &CMatrix, acquisition: AcquisitionSpec) -> Result<C64> {
    let kernel = ReadoutKernel::new(eig, reg, acquisition)?;
    Ok(kernel.g_of_eigen(&eig.to_eigenbasis(component)))
}

/// Time-transform of an eigenbasis coefficient `xi_ab(t)`.
pub trait XiTransform: Sync {
    /// Transform of `xi_ab(t) / rho_ab` at angular frequency `omega`, given
    /// the reduced gap `dzeta = zeta_a - zeta_b` and the order parameter.
    fn transform(&self, dzeta: f64, order_parameter: f64, omega: f64) -> C64;
}

/// Closed-system coefficient sampled at `t_n = n dt`, `n < n_t`, and
/// transformed with the same DFT as [`fft2_coherence`]; an optional
/// irreversible factor multiplies each line.
pub struct FiniteWindow<F = fn(f64) -> f64> {
    pub n_t: usize,
    pub dt: f64,
    pub attenuation: Option<F>,
}

impl FiniteWindow {
    pub fn closed(n_t: usize, dt: f64) -> Self {
        Self { n_t, dt, attenuation: None }
    }
}

impl<F: Fn(f64) -> f64 + Sync> XiTransform for FiniteWindow<F> {
    fn transform(&self, dzeta: f64, order_parameter: f64, omega: f64) -> C64 {
        // sum_n r^n with r = exp(i (omega - S dzeta) dt)
        let theta = (omega - order_parameter * dzeta) * self.dt;
        let wrapped = theta - TAU * (theta / TAU).round();
        let n = self.n_t as f64;
        let sum = if wrapped.abs() < 1e-12 {
            C64::new(n, 0.0)
        } else {
            let num = C64::new(0.0, 0.5 * n * wrapped).exp() * (0.5 * n * wrapped).sin();
            let den = C64::new(0.0, 0.5 * wrapped).exp() * (0.5 * wrapped).sin();
            num / den
        };
        match &self.attenuation {
            Some(f) => sum * f(dzeta),
            None => sum,
        }
    }
}

/// Assembles the spectrum of each requested order from the readout
/// coefficients, an eigenbasis state and a coefficient transform:
/// `sum_{ab, nu_ab = mu} molecules * g(a, b) rho_ab X_ab(omega)`.
pub fn spectral_assembly<X: XiTransform + ?Sized>(
    kernel: &ReadoutKernel,
    state: &CMatrix,
    eig: &EigenSystem,
    transform: &X,
    orders: &[i32],
    freqs_hz: &[f64],
    tau: f64,
    molecules: f64,
) -> CoherenceSpectrum {
    let dim = eig.dim();
    let zeta = eig.zeta();
    let szz = eig.order_parameter();
    let n_f = freqs_hz.len();
    let mut values = vec![C64::default(); orders.len() * n_f];
    values.par_chunks_mut(n_f).zip(orders.par_iter()).for_each(|(row, &mu)| {
        for a in 0..dim {
            for b in 0..dim {
                if eig.order(a, b) != mu {
                    continue;
                }
                let w = kernel.g(a, b) * state[(a, b)] * molecules;
                if w == C64::default() {
                    continue;
                }
                let dz = zeta[a] - zeta[b];
                for (slot, f) in row.iter_mut().zip(freqs_hz) {
                    *slot += w * transform.transform(dz, szz, TAU * f);
                }
            }
        }
    });
    CoherenceSpectrum {
        tau,
        orders: orders.to_vec(),
        freqs_hz: freqs_hz.to_vec(),
        values,
    }
}
