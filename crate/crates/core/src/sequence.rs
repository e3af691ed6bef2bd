//! Pulse-sequence programs, propagator compilation and grid execution.
//!
//! The experiment is `(pi/2)_x - t_p - (pi/4)_y - D(tau) - t - (pi/4)_{y+phi}`
//! followed by acquisition. Pulses are instantaneous. The receiver follows the
//! read-pulse phase, so the recorded signal is
//! `tr[O R_y(pi/4) R_z(phi) sigma R_z(-phi) R_y(-pi/4)]` and a density-matrix
//! element of coherence order `nu` carries `exp(i nu phi)`.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::sync::Arc;

use nalgebra::{ComplexField, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::EigenSystem;
use crate::open_system::{element_factor, DecoherenceParams};
use crate::spectra::{AcquisitionSpec, Observable, ReadoutKernel, SignalGrid, SignalMetadata};
use crate::spin::{collective_angular_momentum, max_abs, rotation, unitary_deviation, Axis, CMatrix, RotationAxis, SpinRegister, C64, UNITARY_TOL};

/// Relative delays of one MREV-8 cycle in units of `tau1`.
const MREV8_DELAYS: [f64; 9] = [1.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 1.0];
/// Axis phases of the eight pi/2 pulses: -x, -y, y, x, -x, y, -y, x.
const MREV8_PHASES: [f64; 8] = [PI, 1.5 * PI, FRAC_PI_2, 0.0, PI, FRAC_PI_2, 1.5 * PI, 0.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mrev8Mode {
    /// One cycle whose `tau1` scales with the block length.
    Stretch,
    /// Whole cycles of fixed `tau1`.
    Concatenate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SequenceEvent {
    /// `exp(i angle (cos(phase) Ix + sin(phase) Iy))`
    Pulse {
        angle: f64,
        phase: f64,
    },
    /// `exp(-i scale H duration)`
    FreeEvolution {
        duration: f64,
        scale: f64,
    },
    Mrev8Block {
        tau1: f64,
        n_blocks: usize,
        mode: Mrev8Mode,
    },
    MagicSandwich {
        tau_m: f64,
    },
}

impl SequenceEvent {
    pub fn duration(&self) -> f64 {
        match *self {
            SequenceEvent::Pulse { .. } => 0.0,
            SequenceEvent::FreeEvolution { duration, .. } => duration,
            SequenceEvent::Mrev8Block { tau1, n_blocks, .. } => 12.0 * tau1 * n_blocks as f64,
            SequenceEvent::MagicSandwich { tau_m } => 1.5 * tau_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::InvalidSequence(format!("{what} must be finite and non-negative, got {v}"));
        match *self {
            SequenceEvent::Pulse { angle, phase } => {
                if !(angle.is_finite() && phase.is_finite()) {
                    return Err(Error::InvalidSequence("pulse angle and phase must be finite".into()));
                }
            }
            SequenceEvent::FreeEvolution { duration, scale } => {
                if !(duration.is_finite() && duration >= 0.0) {
                    return Err(bad("delay", duration));
                }
                if !scale.is_finite() {
                    return Err(Error::InvalidSequence("evolution scale must be finite".into()));
                }
            }
            SequenceEvent::Mrev8Block { tau1, .. } => {
                if !(tau1.is_finite() && tau1 > 0.0) {
                    return Err(Error::InvalidSequence(format!("tau1 must be positive, got {tau1}")));
                }
            }
            SequenceEvent::MagicSandwich { tau_m } => {
                if !(tau_m.is_finite() && tau_m > 0.0) {
                    return Err(Error::InvalidSequence(format!("tau_m must be positive, got {tau_m}")));
                }
            }
        }
        Ok(())
    }

    /// Flattens composite blocks into pulses and delays.
    pub fn expand(&self) -> Result<Vec<SequenceEvent>> {
        self.validate()?;
        match *self {
            SequenceEvent::Mrev8Block { tau1, n_blocks, mode } => mrev8_block(tau1, n_blocks, mode),
            SequenceEvent::MagicSandwich { tau_m } => magic_sandwich(tau_m),
            _ => Ok(vec![self.clone()]),
        }
    }
}

/// `(pi/2)_x - t_p - (pi/4)_y`
pub fn jb_prepare(t_p: f64) -> Result<Vec<SequenceEvent>> {
    if !(t_p.is_finite() && t_p >= 0.0) {
        return Err(Error::InvalidSequence(format!("t_p must be non-negative, got {t_p}")));
    }
    Ok(vec![
        SequenceEvent::Pulse { angle: FRAC_PI_2, phase: 0.0 },
        SequenceEvent::FreeEvolution { duration: t_p, scale: 1.0 },
        SequenceEvent::Pulse {
            angle: FRAC_PI_4,
            phase: FRAC_PI_2,
        },
    ])
}

/// `n_blocks` MREV-8 cycles of length `12 tau1` as delta pulses and delays.
pub fn mrev8_block(tau1: f64, n_blocks: usize, _mode: Mrev8Mode) -> Result<Vec<SequenceEvent>> {
    if !(tau1.is_finite() && tau1 > 0.0) {
        return Err(Error::InvalidSequence(format!("tau1 must be positive, got {tau1}")));
    }
    let mut out = Vec::with_capacity(17 * n_blocks);
    for _ in 0..n_blocks {
        for (i, d) in MREV8_DELAYS.iter().enumerate() {
            out.push(SequenceEvent::FreeEvolution {
                duration: d * tau1,
                scale: 1.0,
            });
            if let Some(&phase) = MREV8_PHASES.get(i) {
                out.push(SequenceEvent::Pulse { angle: FRAC_PI_2, phase });
            }
        }
    }
    Ok(out)
}

/// Effective magic sandwich: `tau_m / 2` of free evolution followed by
/// `tau_m` under `-H/2`.
pub fn magic_sandwich(tau_m: f64) -> Result<Vec<SequenceEvent>> {
    if !(tau_m.is_finite() && tau_m > 0.0) {
        return Err(Error::InvalidSequence(format!("tau_m must be positive, got {tau_m}")));
    }
    Ok(vec![
        SequenceEvent::FreeEvolution {
            duration: 0.5 * tau_m,
            scale: 1.0,
        },
        SequenceEvent::FreeEvolution { duration: tau_m, scale: -0.5 },
    ])
}

/// Reversion block placed between preparation and the waiting time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReversionBlock {
    /// Plain free evolution for `tau`.
    None,
    Mrev8 {
        mode: Mrev8Mode,
        /// Required for concatenation; ignored when stretching.
        #[serde(default)]
        tau1: Option<f64>,
    },
    MagicSandwich,
}

impl ReversionBlock {
    /// Block event of total duration `tau`, or `None` for the identity.
    pub fn event(&self, tau: f64) -> Result<Option<SequenceEvent>> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::InvalidSequence(format!("tau must be non-negative, got {tau}")));
        }
        if tau == 0.0 {
            return Ok(None);
        }
        let ev = match *self {
            ReversionBlock::None => SequenceEvent::FreeEvolution { duration: tau, scale: 1.0 },
            ReversionBlock::MagicSandwich => SequenceEvent::MagicSandwich { tau_m: tau / 1.5 },
            ReversionBlock::Mrev8 { mode: Mrev8Mode::Stretch, .. } => SequenceEvent::Mrev8Block {
                tau1: tau / 12.0,
                n_blocks: 1,
                mode: Mrev8Mode::Stretch,
            },
            ReversionBlock::Mrev8 {
                mode: Mrev8Mode::Concatenate,
                tau1,
            } => {
                let tau1 = tau1.ok_or_else(|| Error::InvalidSequence("concatenated MREV-8 needs tau1".into()))?;
                SequenceEvent::Mrev8Block {
                    tau1,
                    n_blocks: concatenated_cycles(tau, tau1)?,
                    mode: Mrev8Mode::Concatenate,
                }
            }
        };
        ev.validate()?;
        Ok(Some(ev))
    }
}

fn concatenated_cycles(tau: f64, tau1: f64) -> Result<usize> {
    if !(tau1.is_finite() && tau1 > 0.0) {
        return Err(Error::InvalidSequence(format!("tau1 must be positive, got {tau1}")));
    }
    let cycle = 12.0 * tau1;
    let n = (tau / cycle).round();
    if (n * cycle - tau).abs() > 1e-9 * tau.max(cycle) {
        return Err(Error::InvalidSequence(format!(
            "tau = {tau:e} s is not a whole number of {cycle:e} s MREV-8 cycles"
        )));
    }
    Ok(n as usize)
}

/// How the acquisition point and window are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSettings {
    /// Fixed window center; searched for when absent.
    pub t_m: Option<f64>,
    /// Window width; two dwell steps when absent.
    pub window: Option<f64>,
    pub dwell: f64,
    /// Number of dwell steps scanned for the first magnitude maximum.
    pub search_steps: usize,
    pub observable: Observable,
}

impl Default for AcquisitionSettings {
    fn default() -> Self {
        Self {
            t_m: None,
            window: None,
            dwell: 1e-6,
            search_steps: 1000,
            observable: Observable::Plus,
        }
    }
}

impl AcquisitionSettings {
    pub fn fixed(t_m: f64, window: f64, observable: Observable) -> Self {
        Self {
            t_m: Some(t_m),
            window: Some(window),
            observable,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceTemplate {
    pub block: ReversionBlock,
    pub acquisition: AcquisitionSettings,
}

/// A complete single-shot program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceProgram {
    pub events: Vec<SequenceEvent>,
    pub acquisition: AcquisitionSpec,
    /// Receiver reference phase; tracks the read-pulse phase.
    pub receiver_phase: f64,
}

impl SequenceTemplate {
    pub fn program(&self, t_p: f64, tau: f64, t: f64, phi: f64, acquisition: AcquisitionSpec) -> Result<SequenceProgram> {
        let mut events = jb_prepare(t_p)?;
        events.extend(self.block.event(tau)?);
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidSequence(format!("t must be non-negative, got {t}")));
        }
        events.push(SequenceEvent::FreeEvolution { duration: t, scale: 1.0 });
        events.push(SequenceEvent::Pulse {
            angle: FRAC_PI_4,
            phase: FRAC_PI_2 + phi,
        });
        Ok(SequenceProgram {
            events,
            acquisition,
            receiver_phase: phi,
        })
    }
}

impl SequenceProgram {
    pub fn total_duration(&self) -> f64 {
        self.events.iter().map(SequenceEvent::duration).sum()
    }

    /// Product-basis propagator of the whole program, built without caching.
    pub fn propagator(&self, eig: &EigenSystem) -> Result<CMatrix> {
        let reg = SpinRegister::new(eig.n_spins())?;
        let mut u = CMatrix::identity(reg.dim(), reg.dim());
        for ev in &self.events {
            for prim in ev.expand()? {
                let step = match prim {
                    SequenceEvent::Pulse { angle, phase } => rotation(&reg, RotationAxis::Transverse(phase), angle).into_matrix(),
                    SequenceEvent::FreeEvolution { duration, scale } => crate::hamiltonian::propagator(eig, duration, scale).into_matrix(),
                    _ => unreachable!("expand yields primitives"),
                };
                u = step * u;
            }
        }
        Ok(u)
    }

    /// Signal for an initial density operator, evaluated directly in the
    /// product basis. Serves as the reference for the grid engine.
    pub fn evaluate(&self, eig: &EigenSystem, rho0: &CMatrix) -> Result<C64> {
        let reg = SpinRegister::new(eig.n_spins())?;
        let u = self.propagator(eig)?;
        let sigma = &u * rho0 * u.adjoint();
        // receiver rotated with the read pulse
        let rz = rotation(&reg, RotationAxis::Z, self.receiver_phase).into_matrix();
        let o = averaged_observable_product(eig, &reg, &self.acquisition);
        Ok((rz.adjoint() * o * rz * sigma).trace())
    }
}

fn averaged_observable_product(eig: &EigenSystem, reg: &SpinRegister, acq: &AcquisitionSpec) -> CMatrix {
    let o = eig.to_eigenbasis(&acq.observable.matrix(reg));
    let e = eig.energies();
    let avg = CMatrix::from_fn(o.nrows(), o.ncols(), |a, b| {
        let w = e[a] - e[b];
        o[(a, b)] * C64::from_polar(crate::spectra::sinc(0.5 * w * acq.window), w * acq.t_m)
    });
    eig.from_eigenbasis(&avg)
}

/// Uniform sampling of the waiting time and read phase plus the tau schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub n_t: usize,
    pub dt: f64,
    pub n_phi: usize,
    pub taus: Vec<f64>,
    pub t_p: f64,
}

impl ExperimentGrid {
    pub fn new(n_t: usize, dt: f64, n_phi: usize, taus: Vec<f64>, t_p: f64) -> Result<Self> {
        let g = Self { n_t, dt, n_phi, taus, t_p };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t < 2 {
            return Err(Error::Config("the t grid needs at least 2 points".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.n_phi == 0 {
            return Err(Error::Config("the phase grid needs at least 1 point".into()));
        }
        if self.taus.is_empty() {
            return Err(Error::Config("the tau schedule is empty".into()));
        }
        if self.taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("tau values must be finite and non-negative".into()));
        }
        if !(self.t_p.is_finite() && self.t_p >= 0.0) {
            return Err(Error::Config("t_p must be non-negative".into()));
        }
        Ok(())
    }

    /// Number of phase points for a step in degrees. The step must divide
    /// the full circle to within half a percent.
    pub fn phi_points_for_step(step_deg: f64) -> Result<usize> {
        if !(step_deg.is_finite() && step_deg > 0.0 && step_deg <= 360.0) {
            return Err(Error::UnsupportedSampling(format!("phase step {step_deg} deg out of range")));
        }
        let n = (360.0 / step_deg).round();
        if (n * step_deg - 360.0).abs() > 0.005 * 360.0 {
            return Err(Error::UnsupportedSampling(format!(
                "phase step {step_deg} deg does not divide 360 deg; nearest grid has {n} points of {:.4} deg",
                360.0 / n
            )));
        }
        Ok(n as usize)
    }

    pub fn dphi(&self) -> f64 {
        TAU / self.n_phi as f64
    }

    pub fn phis(&self) -> Vec<f64> {
        (0..self.n_phi).map(|j| j as f64 * self.dphi()).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_t).map(|k| k as f64 * self.dt).collect()
    }

    /// Largest |order| that is not aliased by the phase transform.
    pub fn max_encoded_order(&self) -> usize {
        self.n_phi.saturating_sub(1) / 2
    }

    pub fn signal_bytes(&self) -> u64 {
        (self.n_phi * self.n_t * self.taus.len()) as u64 * std::mem::size_of::<C64>() as u64
    }
}

/// `start, start + step, ...` with `count` entries.
pub fn arithmetic_schedule(start: f64, step: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start + step * i as f64).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub free_hits: u64,
    pub free_misses: u64,
    pub pulse_hits: u64,
    pub pulse_misses: u64,
    pub block_hits: u64,
    pub block_misses: u64,
}

/// Propagator chain in the eigenbasis.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledChain {
    matrix: CMatrix,
    duration: f64,
}

impl CompiledChain {
    pub fn eigenbasis(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn product_basis(&self, eig: &EigenSystem) -> CMatrix {
        eig.from_eigenbasis(&self.matrix)
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }
}

/// Compiles events to eigenbasis propagators, reusing every distinct delay,
/// pulse and MREV-8 cycle power.
pub struct PropagatorCache<'a> {
    eig: &'a EigenSystem,
    reg: SpinRegister,
    free: HashMap<(u64, u64), Arc<Vec<C64>>>,
    pulses: HashMap<(u64, u64), Arc<CMatrix>>,
    cycles: HashMap<u64, Vec<Arc<CMatrix>>>,
    stats: CacheStats,
}

impl<'a> PropagatorCache<'a> {
    pub fn new(eig: &'a EigenSystem) -> Result<Self> {
        Ok(Self {
            eig,
            reg: SpinRegister::new(eig.n_spins())?,
            free: HashMap::new(),
            pulses: HashMap::new(),
            cycles: HashMap::new(),
            stats: CacheStats::default(),
        })
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    /// Diagonal of a free-evolution propagator.
    pub fn free(&mut self, duration: f64, scale: f64) -> Arc<Vec<C64>> {
        let key = (duration.to_bits(), scale.to_bits());
        if let Some(v) = self.free.get(&key) {
            self.stats.free_hits += 1;
            return v.clone();
        }
        self.stats.free_misses += 1;
        let v = Arc::new(self.eig.phases(duration, scale));
        self.free.insert(key, v.clone());
        v
    }

    /// Pulse rotation expressed in the eigenbasis.
    pub fn pulse(&mut self, angle: f64, phase: f64) -> Arc<CMatrix> {
        let key = (angle.to_bits(), phase.to_bits());
        if let Some(m) = self.pulses.get(&key) {
            self.stats.pulse_hits += 1;
            return m.clone();
        }
        self.stats.pulse_misses += 1;
        let r = rotation(&self.reg, RotationAxis::Transverse(phase), angle).into_matrix();
        let m = Arc::new(self.eig.to_eigenbasis(&r));
        self.pulses.insert(key, m.clone());
        m
    }

    /// `n` MREV-8 cycles of the given `tau1`.
    pub fn mrev8(&mut self, tau1: f64, n: usize) -> Result<Option<Arc<CMatrix>>> {
        if n == 0 {
            return Ok(None);
        }
        let key = tau1.to_bits();
        if let Some(p) = self.cycles.get(&key).and_then(|v| v.get(n - 1)) {
            self.stats.block_hits += 1;
            return Ok(Some(p.clone()));
        }
        self.stats.block_misses += 1;
        if !self.cycles.contains_key(&key) {
            let one = self.chain(&mrev8_block(tau1, 1, Mrev8Mode::Concatenate)?)?;
            self.cycles.insert(key, vec![Arc::new(one.matrix)]);
        }
        let powers = self.cycles.get_mut(&key).expect("inserted above");
        while powers.len() < n {
            let next = &*powers[0] * &*powers[powers.len() - 1];
            powers.push(Arc::new(next));
        }
        Ok(Some(powers[n - 1].clone()))
    }

    fn chain(&mut self, events: &[SequenceEvent]) -> Result<CompiledChain> {
        let dim = self.reg.dim();
        let mut u: Option<CMatrix> = None;
        let mut duration = 0.0;
        for ev in events {
            ev.validate()?;
            duration += ev.duration();
            match *ev {
                SequenceEvent::FreeEvolution { duration, scale } => {
                    let ph = self.free(duration, scale);
                    let m = u.get_or_insert_with(|| CMatrix::identity(dim, dim));
                    for (r, p) in ph.iter().enumerate() {
                        m.row_mut(r).scale_mut_complex(*p);
                    }
                }
                SequenceEvent::Pulse { angle, phase } => {
                    let p = self.pulse(angle, phase);
                    u = Some(match u {
                        Some(m) => &*p * m,
                        None => (*p).clone(),
                    });
                }
                SequenceEvent::Mrev8Block { tau1, n_blocks, .. } => {
                    if let Some(p) = self.mrev8(tau1, n_blocks)? {
                        u = Some(match u {
                            Some(m) => &*p * m,
                            None => (*p).clone(),
                        });
                    }
                }
                SequenceEvent::MagicSandwich { tau_m } => {
                    let inner = self.chain(&magic_sandwich(tau_m)?)?;
                    u = Some(match u {
                        Some(m) => inner.matrix * m,
                        None => inner.matrix,
                    });
                }
            }
        }
        Ok(CompiledChain {
            matrix: u.unwrap_or_else(|| CMatrix::identity(dim, dim)),
            duration,
        })
    }

    /// Compiles a program fragment. The result is checked for unitarity.
    pub fn compile(&mut self, events: &[SequenceEvent]) -> Result<CompiledChain> {
        let chain = self.chain(events)?;
        let dev = unitary_deviation(&chain.matrix);
        if dev > UNITARY_TOL {
            return Err(Error::Numerical(format!("compiled propagator deviates from unitarity by {dev:e}")));
        }
        Ok(chain)
    }
}

trait ScaleComplex {
    fn scale_mut_complex(&mut self, s: C64);
}

impl<S: nalgebra::StorageMut<C64, nalgebra::U1, nalgebra::Dyn>> ScaleComplex for nalgebra::Matrix<C64, nalgebra::U1, nalgebra::Dyn, S> {
    fn scale_mut_complex(&mut self, s: C64) {
        for z in self.iter_mut() {
            *z *= s;
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReversionReport {
    /// `min_theta max|U - exp(i theta) 1|`, product basis.
    pub residual: f64,
    pub global_phase: f64,
    pub duration: f64,
    /// Traceless effective Hamiltonian `i log(U exp(-i theta)) / duration`, rad/s.
    pub effective_hamiltonian: CMatrix,
    /// Largest absolute element of the effective Hamiltonian.
    pub generator_norm: f64,
}

/// Exact propagator of a block and its distance from the identity.
pub fn verify_reversion(block: &[SequenceEvent], eig: &EigenSystem) -> Result<ReversionReport> {
    let mut cache = PropagatorCache::new(eig)?;
    let chain = cache.compile(block).map_err(|e| match e {
        Error::Numerical(m) => Error::Numerical(format!("block is not unitary: {m}")),
        other => other,
    })?;
    let u = chain.product_basis(eig);
    let dim = u.nrows();
    let theta = u.trace().arg();
    let w = &u * C64::from_polar(1.0, -theta);
    let residual = max_abs(&(&w - CMatrix::identity(dim, dim)));
    let duration = chain.duration();
    let effective_hamiltonian = if duration > 0.0 {
        let id = CMatrix::identity(dim, dim);
        let inv = (&id + &w)
            .try_inverse()
            .ok_or_else(|| Error::Numerical("block rotation reaches pi; effective Hamiltonian is ambiguous".into()))?;
        let c = (&id - &w) * inv * C64::i();
        let c = (&c + c.adjoint()) * C64::new(0.5, 0.0);
        let se = SymmetricEigen::new(c);
        let alpha: Vec<C64> = se.eigenvalues.iter().map(|l| C64::new(-2.0 * l.atan() / duration, 0.0)).collect();
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(alpha));
        let h = &se.eigenvectors * d * se.eigenvectors.adjoint();
        let mean = h.trace() / dim as f64;
        h - CMatrix::identity(dim, dim) * mean
    } else {
        CMatrix::zeros(dim, dim)
    };
    let generator_norm = effective_hamiltonian.iter().fold(0.0_f64, |a, z| a.max(z.modulus()));
    Ok(ReversionReport {
        residual,
        global_phase: theta,
        duration,
        effective_hamiltonian,
        generator_norm,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Engine {
    Closed,
    /// Ideal reversion with eigen-selective decoherence.
    Open(DecoherenceParams),
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Closed => "closed",
            Engine::Open(_) => "open",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Thread count; the global pool when absent.
    pub workers: Option<usize>,
    pub memory_budget_bytes: u64,
    /// Number of identical molecules the signal is scaled by.
    pub molecules: f64,
    /// Product-basis initial state; `I_z` when absent.
    pub initial_state: Option<CMatrix>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: None,
            memory_budget_bytes: 4 << 30,
            molecules: 1.0,
            initial_state: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SignalRun {
    pub signals: SignalGrid,
    pub acquisition: AcquisitionSpec,
    pub cache: CacheStats,
    /// Eigenbasis state after preparation.
    pub prepared: CMatrix,
    /// Eigenbasis state entering the waiting time, per tau.
    pub states: Vec<CMatrix>,
}

/// First maximum of `|S(t')|` over the dwell grid for the state entering
/// acquisition at `tau = 0, t = 0, phi = 0`.
fn search_t_m(eig: &EigenSystem, reg: &SpinRegister, prepared: &CMatrix, settings: &AcquisitionSettings) -> Result<f64> {
    if !(settings.dwell.is_finite() && settings.dwell > 0.0) {
        return Err(Error::Config("acquisition dwell must be positive".into()));
    }
    let ry = eig.to_eigenbasis(&rotation(reg, RotationAxis::Transverse(FRAC_PI_2), FRAC_PI_4).into_matrix());
    let rho = &ry * prepared * ry.adjoint();
    let o = eig.to_eigenbasis(&settings.observable.matrix(reg));
    let e = eig.energies();
    let dim = eig.dim();
    let value = |t: f64| -> f64 {
        let mut acc = C64::default();
        for a in 0..dim {
            for b in 0..dim {
                acc += o[(a, b)] * rho[(b, a)] * C64::from_polar(1.0, (e[a] - e[b]) * t);
            }
        }
        acc.norm()
    };
    let steps = settings.search_steps.max(2);
    let mags: Vec<f64> = (0..=steps).map(|k| value(k as f64 * settings.dwell)).collect();
    if mags[0] >= mags[1] {
        return Ok(0.0);
    }
    for k in 1..steps {
        if mags[k] > mags[k - 1] && mags[k] >= mags[k + 1] {
            return Ok(k as f64 * settings.dwell);
        }
    }
    let best = (0..=steps).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap_or(0);
    Ok(best as f64 * settings.dwell)
}

/// Resolves the acquisition spec for a prepared eigenbasis state.
pub fn resolve_acquisition(eig: &EigenSystem, prepared: &CMatrix, settings: &AcquisitionSettings) -> Result<AcquisitionSpec> {
    let reg = SpinRegister::new(eig.n_spins())?;
    let t_m = match settings.t_m {
        Some(t) => t,
        None => search_t_m(eig, &reg, prepared, settings)?,
    };
    let window = settings.window.unwrap_or(2.0 * settings.dwell);
    if !(t_m.is_finite() && t_m >= 0.0 && window.is_finite() && window >= 0.0) {
        return Err(Error::Config("acquisition t_m and window must be non-negative".into()));
    }
    if window > 2.0 * t_m && settings.t_m.is_some() && t_m > 0.0 {
        log::warn!("acquisition window extends before the read pulse");
    }
    Ok(AcquisitionSpec {
        t_m,
        window,
        observable: settings.observable,
    })
}

fn initial_state(reg: &SpinRegister, opts: &RunOptions) -> Result<CMatrix> {
    match &opts.initial_state {
        Some(m) => {
            if m.nrows() != reg.dim() || m.ncols() != reg.dim() {
                return Err(Error::DimensionMismatch {
                    expected: reg.dim(),
                    found: m.nrows(),
                });
            }
            Ok(m.clone())
        }
        None => Ok(collective_angular_momentum(reg, Axis::Z).into_matrix()),
    }
}

fn estimate_bytes(grid: &ExperimentGrid, dim: usize, workers: usize) -> u64 {
    let mat = (dim * dim * std::mem::size_of::<C64>()) as u64;
    grid.signal_bytes() + mat * (2 * grid.taus.len() as u64 + 32) + mat * 2 * workers as u64
}

/// Executes the experiment over the grid.
pub fn run_grid(eig: &EigenSystem, template: &SequenceTemplate, grid: &ExperimentGrid, engine: &Engine, opts: &RunOptions) -> Result<SignalRun> {
    grid.validate()?;
    let reg = SpinRegister::new(eig.n_spins())?;
    let dim = reg.dim();
    let workers = opts.workers.unwrap_or_else(rayon::current_num_threads).max(1);
    let estimate = estimate_bytes(grid, dim, workers);
    if estimate > opts.memory_budget_bytes {
        return Err(Error::GridTooLarge {
            estimate_bytes: estimate,
            budget_bytes: opts.memory_budget_bytes,
        });
    }
    if let Engine::Open(p) = engine {
        p.validate()?;
        if template.block == ReversionBlock::None {
            return Err(Error::InvalidSequence(
                "the open engine assumes an ideal reversion block; none configured".into(),
            ));
        }
    }
    if !(opts.molecules.is_finite() && opts.molecules > 0.0) {
        return Err(Error::Config("molecule count must be positive".into()));
    }

    let rho0 = eig.to_eigenbasis(&initial_state(&reg, opts)?);
    let mut cache = PropagatorCache::new(eig)?;
    let prep = cache.compile(&jb_prepare(grid.t_p)?)?;
    let prepared = prep.eigenbasis() * &rho0 * prep.eigenbasis().adjoint();

    let acquisition = resolve_acquisition(eig, &prepared, &template.acquisition)?;
    let kernel = ReadoutKernel::new(eig, &reg, acquisition)?;

    // block propagators are compiled up front; the parallel section only reads
    let states: Vec<CMatrix> = match engine {
        Engine::Closed => {
            let mut out = Vec::with_capacity(grid.taus.len());
            for &tau in &grid.taus {
                match template.block.event(tau)? {
                    Some(ev) => {
                        let u = cache.compile(std::slice::from_ref(&ev))?;
                        out.push(u.eigenbasis() * &prepared * u.eigenbasis().adjoint());
                    }
                    None => out.push(prepared.clone()),
                }
            }
            out
        }
        Engine::Open(_) => {
            for &tau in &grid.taus {
                template.block.event(tau)?;
            }
            vec![prepared.clone(); grid.taus.len()]
        }
    };

    let signals = signals_from_states(eig, &kernel, &states, grid, engine, opts.molecules, Some(workers))?;
    Ok(SignalRun {
        signals,
        acquisition,
        cache: cache.stats(),
        prepared,
        states,
    })
}

/// Signals for given eigenbasis states entering the waiting time, one per
/// tau. States may be arbitrary (not necessarily hermitian) operators.
pub fn signals_from_states(
    eig: &EigenSystem,
    kernel: &ReadoutKernel,
    states: &[CMatrix],
    grid: &ExperimentGrid,
    engine: &Engine,
    molecules: f64,
    workers: Option<usize>,
) -> Result<SignalGrid> {
    grid.validate()?;
    if states.len() != grid.taus.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.taus.len(),
            found: states.len(),
        });
    }
    let dim = eig.dim();
    if let Some(s) = states.iter().find(|s| s.nrows() != dim || s.ncols() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: s.nrows(),
        });
    }
    let n_phi = grid.n_phi;
    let n_t = grid.n_t;
    let n_spins = eig.n_spins() as i32;
    let n_orders = (2 * n_spins + 1) as usize;
    let phases: Vec<C64> = (0..n_phi)
        .flat_map(|j| {
            let phi = j as f64 * grid.dphi();
            (-n_spins..=n_spins).map(move |nu| C64::from_polar(1.0, nu as f64 * phi))
        })
        .collect();
    let zeta = eig.zeta();
    let szz = eig.order_parameter();

    let fill = |(i_tau, slab): (usize, &mut [C64])| {
        let tau = grid.taus[i_tau];
        let state = &states[i_tau];
        let mut pairs: Vec<(usize, usize, usize, C64, f64)> = Vec::new();
        for a in 0..dim {
            for b in 0..dim {
                let c = kernel.g(a, b) * state[(a, b)] * molecules;
                if c != C64::default() {
                    let nu = (eig.order(a, b) + n_spins) as usize;
                    pairs.push((a, b, nu, c, zeta[a] - zeta[b]));
                }
            }
        }
        let mut w = vec![C64::default(); n_orders];
        for k in 0..n_t {
            let t = k as f64 * grid.dt;
            w.iter_mut().for_each(|z| *z = C64::default());
            match engine {
                Engine::Closed => {
                    let ph = eig.phases(t, 1.0);
                    for &(a, b, nu, c, _) in &pairs {
                        w[nu] += c * ph[a] * ph[b].conj();
                    }
                }
                Engine::Open(p) => {
                    for &(_, _, nu, c, dz) in &pairs {
                        w[nu] += c * element_factor(dz, szz, t, tau, p);
                    }
                }
            }
            for j in 0..n_phi {
                let e = &phases[j * n_orders..(j + 1) * n_orders];
                slab[j * n_t + k] = w.iter().zip(e).map(|(a, b)| a * b).sum();
            }
        }
    };

    let mut data = vec![C64::default(); n_phi * n_t * grid.taus.len()];
    let workers = workers.unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| data.par_chunks_mut(n_phi * n_t).enumerate().for_each(fill));

    let meta = SignalMetadata {
        dt: grid.dt,
        dphi: grid.dphi(),
        taus: grid.taus.clone(),
        t_p: grid.t_p,
        acquisition: *kernel.acquisition(),
        n_spins: eig.n_spins(),
        engine: engine.name().into(),
    };
    SignalGrid::new(n_phi, n_t, data, meta)
}
