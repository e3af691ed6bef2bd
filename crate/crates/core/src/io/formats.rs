//! CSV and JSON encodings of signals, spectra, decay curves and run records.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the values bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::DecayCurve;
use crate::error::{Error, Result};
use crate::hamiltonian::SpinSystem;
use crate::open_system::DecoherenceParams;
use crate::sequence::{ExperimentGrid, SequenceTemplate};
use crate::spectra::{Apodization, CoherenceSpectrum, SignalGrid, SignalMetadata};
use crate::spin::C64;

pub const SIGNALS_CSV: &str = "signals.csv";
pub const SIGNALS_JSON: &str = "signals.json";
pub const RUN_JSON: &str = "run.json";
pub const SPECTRA_CSV: &str = "spectra.csv";
pub const SPECTRA_JSON: &str = "spectra.json";
pub const DISPLAY_CSV: &str = "display_spectra.csv";
pub const DISPLAY_JSON: &str = "display_spectra.json";
pub const CURVES_CSV: &str = "decay_curves.csv";
pub const FIT_JSON: &str = "fit_report.json";
pub const FIT_TXT: &str = "fit_report.txt";

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Numerical(e.to_string()))
}

fn field(path: &Path, line: usize, s: Option<&str>) -> Result<f64> {
    let s = s.ok_or_else(|| Error::parse(path, format!("line {line}: missing column")))?;
    s.trim().parse().map_err(|e| Error::parse(path, format!("line {line}: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalHeader {
    pub n_phi: usize,
    pub n_t: usize,
    pub meta: SignalMetadata,
}

pub fn signals_json(grid: &SignalGrid) -> Result<String> {
    to_json(&SignalHeader {
        n_phi: grid.n_phi(),
        n_t: grid.n_t(),
        meta: grid.meta().clone(),
    })
}

pub fn signals_csv(grid: &SignalGrid) -> String {
    let mut s = String::from("tau_s,phi_rad,t_s,re,im\n");
    for (i_tau, tau) in grid.meta().taus.iter().enumerate() {
        for j in 0..grid.n_phi() {
            for k in 0..grid.n_t() {
                let z = grid.get(j, k, i_tau);
                let _ = writeln!(s, "{tau:e},{:e},{:e},{:e},{:e}", grid.phi(j), grid.time(k), z.re, z.im);
            }
        }
    }
    s
}

pub fn parse_signals(header_json: &str, csv: &str, path: &Path) -> Result<SignalGrid> {
    let header: SignalHeader = serde_json::from_str(header_json).map_err(|e| Error::parse(path.with_file_name(SIGNALS_JSON), e))?;
    let mut data = Vec::with_capacity(header.n_phi * header.n_t * header.meta.taus.len());
    for (i, line) in csv.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let tau = field(path, i + 1, cols.next())?;
        let expect_tau = header.meta.taus.get(data.len() / (header.n_phi * header.n_t).max(1));
        if expect_tau != Some(&tau) {
            return Err(Error::parse(path, format!("line {}: rows are not in (tau, phi, t) order", i + 1)));
        }
        cols.next();
        cols.next();
        let re = field(path, i + 1, cols.next())?;
        let im = field(path, i + 1, cols.next())?;
        data.push(C64::new(re, im));
    }
    SignalGrid::new(header.n_phi, header.n_t, data, header.meta)
}

pub fn read_signals(dir: &Path) -> Result<SignalGrid> {
    let jp = dir.join(SIGNALS_JSON);
    let cp = dir.join(SIGNALS_CSV);
    let header = std::fs::read_to_string(&jp).map_err(|e| Error::io(&jp, e))?;
    let csv = std::fs::read_to_string(&cp).map_err(|e| Error::io(&cp, e))?;
    parse_signals(&header, &csv, &cp)
}

/// Grid metadata stored next to a spectrum table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectraHeader {
    pub taus: Vec<f64>,
    pub orders: Vec<i32>,
    pub n_freq: usize,
    pub zero_fill: usize,
    pub apodization: Apodization,
    pub band_hz: Option<f64>,
    pub source: SignalMetadata,
}

pub fn spectra_csv(spectra: &[CoherenceSpectrum]) -> String {
    let mut s = String::from("tau_s,mu,freq_hz,re,im,abs\n");
    for sp in spectra {
        for (o, mu) in sp.orders.iter().enumerate() {
            for (i, f) in sp.freqs_hz.iter().enumerate() {
                let z = sp.values[o * sp.n_freq() + i];
                let _ = writeln!(s, "{:e},{mu},{f:e},{:e},{:e},{:e}", sp.tau, z.re, z.im, z.norm());
            }
        }
    }
    s
}

pub fn parse_spectra(header_json: &str, csv: &str, path: &Path) -> Result<(SpectraHeader, Vec<CoherenceSpectrum>)> {
    let header: SpectraHeader = serde_json::from_str(header_json).map_err(|e| Error::parse(path, e))?;
    if header.taus.is_empty() {
        return Err(Error::InsufficientData("spectrum file has an empty tau axis".into()));
    }
    let per_tau = header.orders.len() * header.n_freq;
    let mut spectra: Vec<CoherenceSpectrum> = header
        .taus
        .iter()
        .map(|&tau| CoherenceSpectrum {
            tau,
            orders: header.orders.clone(),
            freqs_hz: Vec::with_capacity(header.n_freq),
            values: Vec::with_capacity(per_tau),
        })
        .collect();
    let mut row = 0usize;
    for (i, line) in csv.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let i_tau = row / per_tau.max(1);
        let within = row % per_tau.max(1);
        let sp = spectra
            .get_mut(i_tau)
            .ok_or_else(|| Error::parse(path, format!("line {}: more rows than the header declares", i + 1)))?;
        let mut cols = line.split(',');
        let _tau = field(path, i + 1, cols.next())?;
        let mu: i32 = cols
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, format!("line {}: bad order", i + 1)))?;
        if mu != header.orders[within / header.n_freq] {
            return Err(Error::parse(path, format!("line {}: rows are not in (tau, mu, freq) order", i + 1)));
        }
        let f = field(path, i + 1, cols.next())?;
        if within < header.n_freq {
            sp.freqs_hz.push(f);
        }
        let re = field(path, i + 1, cols.next())?;
        let im = field(path, i + 1, cols.next())?;
        sp.values.push(C64::new(re, im));
        row += 1;
    }
    if row != per_tau * header.taus.len() {
        return Err(Error::parse(path, format!("expected {} rows, found {row}", per_tau * header.taus.len())));
    }
    Ok((header, spectra))
}

pub fn read_spectra(dir: &Path, csv_name: &str, json_name: &str) -> Result<(SpectraHeader, Vec<CoherenceSpectrum>)> {
    let jp = dir.join(json_name);
    let cp = dir.join(csv_name);
    let header = std::fs::read_to_string(&jp).map_err(|e| Error::io(&jp, e))?;
    let csv = std::fs::read_to_string(&cp).map_err(|e| Error::io(&cp, e))?;
    parse_spectra(&header, &csv, &cp)
}

pub fn spectra_json(header: &SpectraHeader) -> Result<String> {
    to_json(header)
}

pub fn curves_csv(curves: &[DecayCurve]) -> String {
    let mut s = String::from("order,freq_hz,tau_s,amplitude,reference\n");
    for c in curves {
        for (t, a) in c.taus.iter().zip(&c.amplitudes) {
            let _ = writeln!(s, "{},{:e},{t:e},{a:e},{:e}", c.order, c.freq_hz, c.reference);
        }
    }
    s
}

/// What a simulation ran, enough to rebuild it without the original files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub system: SpinSystem,
    pub template: SequenceTemplate,
    pub grid: ExperimentGrid,
    pub engine: String,
    pub decoherence: Option<DecoherenceParams>,
    pub molecules: f64,
}

pub fn run_json(record: &RunRecord) -> Result<String> {
    to_json(record)
}

pub fn read_run(dir: &Path) -> Result<RunRecord> {
    let p = dir.join(RUN_JSON);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{AcquisitionSpec, Observable};
    use std::f64::consts::TAU;

    fn grid() -> SignalGrid {
        let meta = SignalMetadata {
            dt: 1.25e-6,
            dphi: TAU / 3.0,
            taus: vec![0.0, 1e-4],
            t_p: 2.7e-5,
            acquisition: AcquisitionSpec {
                t_m: 3e-6,
                window: 2e-6,
                observable: Observable::Plus,
            },
            n_spins: 2,
            engine: "closed".into(),
        };
        let data = (0..12).map(|i| C64::new((i as f64).sin() / 3.0, 1e-300 * i as f64)).collect();
        SignalGrid::new(3, 2, data, meta).unwrap()
    }

    #[test]
    fn signals_round_trip_bit_exact() {
        let g = grid();
        let back = parse_signals(&signals_json(&g).unwrap(), &signals_csv(&g), Path::new("s.csv")).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn spectra_round_trip_bit_exact() {
        let g = grid();
        let spectra = crate::spectra::fft2_coherence(&g, &crate::spectra::SpectrumOptions::analysis()).unwrap();
        let header = SpectraHeader {
            taus: g.meta().taus.clone(),
            orders: spectra[0].orders.clone(),
            n_freq: spectra[0].n_freq(),
            zero_fill: 1,
            apodization: Apodization::None,
            band_hz: None,
            source: g.meta().clone(),
        };
        let (h, back) = parse_spectra(&spectra_json(&header).unwrap(), &spectra_csv(&spectra), Path::new("x.csv")).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, spectra);
        let truncated: String = spectra_csv(&spectra).lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(parse_spectra(&spectra_json(&header).unwrap(), &truncated, Path::new("x.csv")).is_err());
    }

    #[test]
    fn empty_tau_axis_rejected() {
        let g = grid();
        let header = SpectraHeader {
            taus: vec![],
            orders: vec![0],
            n_freq: 1,
            zero_fill: 1,
            apodization: Apodization::None,
            band_hz: None,
            source: g.meta().clone(),
        };
        let r = parse_spectra(&spectra_json(&header).unwrap(), "tau_s,mu,freq_hz,re,im,abs\n", Path::new("x.csv"));
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }
}
