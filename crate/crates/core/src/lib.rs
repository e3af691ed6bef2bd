//! Multiple-quantum coherence NMR simulation for small dipolar-coupled spin clusters.

pub mod analysis;
pub mod error;
pub mod hamiltonian;
pub mod io;
pub mod open_system;
pub mod sequence;
pub mod spectra;
pub mod spin;

pub use analysis::{eigen_selectivity_report, fit_decay, frequency_cuts, DecayCurve, FitModel, FitResult};
pub use error::{Error, Result};
pub use hamiltonian::{eigendecompose, propagator, CouplingTable, EigenSystem, SpinSystem};
pub use open_system::{DecoherenceParams, Omdf, ReducedState};
pub use sequence::{
    run_grid, AcquisitionSettings, Engine, ExperimentGrid, Mrev8Mode, ReversionBlock, RunOptions, SequenceEvent, SequenceProgram, SequenceTemplate, SignalRun,
};
pub use spectra::{fft2_coherence, AcquisitionSpec, CoherenceSpectrum, Observable, SignalGrid, SpectrumOptions};
pub use spin::{CMatrix, Operator, OperatorKind, SpinRegister, C64};
