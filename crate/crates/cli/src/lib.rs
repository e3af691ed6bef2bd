//! Pipeline stages behind the `mqc` command.

use std::path::{Path, PathBuf};
use std::time::Instant;

use mqc_core::analysis::{frequency_cuts, selectivity_report, CutMode, FitModel, SelectivityReport};
use mqc_core::hamiltonian::EigenSystem;
use mqc_core::io::cache::{cache_dir, eigensystem_cached};
use mqc_core::io::config::RunConfig;
use mqc_core::io::formats::{self, RunRecord, SpectraHeader};
use mqc_core::io::manifest::{OutputDir, RunManifest, MANIFEST_NAME};
use mqc_core::sequence::{run_grid, verify_reversion, Engine, ReversionReport};
use mqc_core::spectra::{fft2_coherence, spectral_assembly, CoherenceSpectrum, FiniteWindow, ReadoutKernel, SignalGrid, SpectrumOptions};
use mqc_core::spin::{matrix_to_text, SpinRegister};
use mqc_core::{Error, Result};

/// Copy of the configuration kept next to the outputs.
pub const CONFIG_COPY: &str = "config.toml";
pub const ROUTE_CHECK_JSON: &str = "route_check.json";
/// Largest relative difference tolerated between the two spectral routes.
pub const ROUTE_TOLERANCE: f64 = 1e-8;

/// Process exit code for an error: 2 for bad input, 3 for numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::InvalidSystem(_)
        | Error::InvalidSequence(_)
        | Error::InvalidPair { .. }
        | Error::InvalidRegister(_)
        | Error::UnsupportedSampling(_)
        | Error::GridTooLarge { .. }
        | Error::InvalidDecoherence(_)
        | Error::DegenerateGeometry(_)
        | Error::TrivialSystem(_) => 2,
        _ => 3,
    }
}

fn to_json(v: &serde_json::Value) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Numerical(e.to_string()))
}

fn eigensystem(run: &RunRecord) -> Result<(EigenSystem, bool)> {
    eigensystem_cached(&run.system, cache_dir().as_deref())
}

/// Deletes the files a previous run recorded so a rerun starts clean.
fn clear_previous(dir: &Path) -> Result<()> {
    if !dir.join(MANIFEST_NAME).exists() {
        return Ok(());
    }
    let old = RunManifest::load(dir)?;
    for name in old.files.keys() {
        let p = dir.join(name);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        }
    }
    let m = dir.join(MANIFEST_NAME);
    std::fs::remove_file(&m).map_err(|e| Error::Io { path: m.clone(), source: e })
}

#[derive(Clone, Debug, Default)]
pub struct SimulateOverrides {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

/// Runs the experiment a configuration describes and writes the signals.
/// Returns the output directory.
pub fn simulate(config: &Path, overrides: &SimulateOverrides) -> Result<PathBuf> {
    let cfg = RunConfig::load(config)?;
    simulate_config(&cfg, overrides)
}

pub fn simulate_config(cfg: &RunConfig, overrides: &SimulateOverrides) -> Result<PathBuf> {
    let dir = overrides.out.clone().unwrap_or_else(|| cfg.output_dir());
    let mut exp = cfg.experiment()?;
    if let Some(w) = overrides.workers {
        if w == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        exp.options.workers = Some(w);
    }
    let started = Instant::now();
    let (eig, hit) = eigensystem_cached(&exp.system, cache_dir().as_deref())?;
    let eig_s = started.elapsed().as_secs_f64();
    let engine = cfg.engine(&eig)?;
    let run = run_grid(&eig, &exp.template, &exp.grid, &engine, &exp.options)?;
    log::info!("simulated {} tau points in {:.2} s", exp.grid.taus.len(), started.elapsed().as_secs_f64());

    clear_previous(&dir)?;
    let mut out = OutputDir::open(&dir, "simulate")?;
    out.set_config_hash(cfg.sha256().to_string());
    out.set_cache(run.cache);
    out.note("engine", engine.name());
    out.note("eigensystem_cache", if hit { "hit" } else { "miss" });
    out.note("eigensystem_s", format!("{eig_s:.6}"));
    out.note("t_m_s", format!("{:e}", run.acquisition.t_m));
    out.note("window_s", format!("{:e}", run.acquisition.window));
    out.write(CONFIG_COPY, cfg.to_toml()?.as_bytes())?;
    out.write(formats::SIGNALS_JSON, formats::signals_json(&run.signals)?.as_bytes())?;
    out.write(formats::SIGNALS_CSV, formats::signals_csv(&run.signals).as_bytes())?;
    let record = RunRecord {
        system: exp.system.clone(),
        template: exp.template,
        grid: exp.grid.clone(),
        engine: engine.name().into(),
        decoherence: match &engine {
            Engine::Open(p) => Some(p.clone()),
            Engine::Closed => None,
        },
        molecules: exp.options.molecules,
    };
    out.write(formats::RUN_JSON, formats::run_json(&record)?.as_bytes())?;
    if cfg.output.dump_operators {
        out.write("operators/hamiltonian.txt", matrix_to_text(&eig.hamiltonian()).as_bytes())?;
        out.write("operators/eigenvectors.txt", matrix_to_text(eig.vectors()).as_bytes())?;
        out.write("operators/prepared_eigenbasis.txt", matrix_to_text(&run.prepared).as_bytes())?;
    }
    out.finish()?;
    Ok(dir)
}

fn header(spectra: &[CoherenceSpectrum], signals: &SignalGrid, opts: &SpectrumOptions, band_hz: Option<f64>) -> Result<SpectraHeader> {
    let first = spectra.first().ok_or_else(|| Error::InsufficientData("no spectra".into()))?;
    Ok(SpectraHeader {
        taus: spectra.iter().map(|s| s.tau).collect(),
        orders: first.orders.clone(),
        n_freq: first.n_freq(),
        zero_fill: opts.zero_fill,
        apodization: opts.apodization,
        band_hz,
        source: signals.meta().clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectraOutcome {
    /// Largest relative difference between the two routes, when checked.
    pub route_difference: Option<f64>,
}

/// Transforms stored signals into coherence spectra: an analysis set at the
/// native resolution and a display set with the configured zero filling,
/// apodization and band.
pub fn spectra(dir: &Path, route_check: bool) -> Result<SpectraOutcome> {
    let signals = formats::read_signals(dir)?;
    if signals.n_tau() == 0 {
        return Err(Error::InsufficientData("signal file has an empty tau axis".into()));
    }
    let record = formats::read_run(dir)?;
    let cfg_path = dir.join(CONFIG_COPY);
    let (display, band_hz) = if cfg_path.exists() {
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::Io {
            path: cfg_path.clone(),
            source: e,
        })?;
        let cfg = RunConfig::from_toml_str(&text, dir)?;
        (cfg.display_options(), cfg.output.band_khz.map(|b| b * 1e3))
    } else {
        (SpectrumOptions::display(), None)
    };

    let analysis_opts = SpectrumOptions::analysis();
    let analysis = fft2_coherence(&signals, &analysis_opts)?;
    let mut shown = fft2_coherence(&signals, &display)?;
    if let Some(b) = band_hz {
        shown = shown.iter().map(|s| s.band_limited(b)).collect();
    }

    let route_difference = if route_check { Some(route_difference(&record, &analysis)?) } else { None };

    let mut out = OutputDir::open(dir, "spectra")?;
    out.write(
        formats::SPECTRA_JSON,
        formats::spectra_json(&header(&analysis, &signals, &analysis_opts, None)?)?.as_bytes(),
    )?;
    out.write(formats::SPECTRA_CSV, formats::spectra_csv(&analysis).as_bytes())?;
    out.write(
        formats::DISPLAY_JSON,
        formats::spectra_json(&header(&shown, &signals, &display, band_hz)?)?.as_bytes(),
    )?;
    out.write(formats::DISPLAY_CSV, formats::spectra_csv(&shown).as_bytes())?;
    if let Some(d) = route_difference {
        let v = serde_json::json!({ "max_relative_difference": d, "tolerance": ROUTE_TOLERANCE, "pass": d < ROUTE_TOLERANCE });
        out.write(ROUTE_CHECK_JSON, to_json(&v)?.as_bytes())?;
        out.note("route_check", format!("{d:e}"));
    }
    out.finish()?;
    match route_difference {
        Some(d) if d >= ROUTE_TOLERANCE => Err(Error::Numerical(format!(
            "eigenbasis assembly and time-domain spectra differ by {d:e} (tolerance {ROUTE_TOLERANCE:e})"
        ))),
        _ => Ok(SpectraOutcome { route_difference }),
    }
}

/// Rebuilds the run and compares the time-domain spectra against the
/// eigenbasis assembly of the same states.
fn route_difference(record: &RunRecord, analysis: &[CoherenceSpectrum]) -> Result<f64> {
    if record.engine != "closed" {
        return Err(Error::Config(
            "the route check compares closed-system routes; this run used the open engine".into(),
        ));
    }
    let (eig, _) = eigensystem(record)?;
    let opts = mqc_core::RunOptions {
        molecules: record.molecules,
        ..Default::default()
    };
    let run = run_grid(&eig, &record.template, &record.grid, &Engine::Closed, &opts)?;
    let reg = SpinRegister::new(eig.n_spins())?;
    let kernel = ReadoutKernel::new(&eig, &reg, run.acquisition)?;
    let window = FiniteWindow::closed(record.grid.n_t, record.grid.dt);
    let mut worst = 0.0_f64;
    for (sp, state) in analysis.iter().zip(&run.states) {
        let assembled = spectral_assembly(&kernel, state, &eig, &window, &sp.orders, &sp.freqs_hz, sp.tau, record.molecules);
        let scale = sp.values.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        let diff = sp.values.iter().zip(&assembled.values).fold(0.0_f64, |m, (a, b)| m.max((a - b).norm()));
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        } else if diff > 0.0 {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct FitRequest {
    pub order: i32,
    pub freqs_hz: Vec<f64>,
    /// `None` fits exponentials and falls back to lines where needed.
    pub model: Option<FitModel>,
    pub cut: CutMode,
}

/// Cuts the analysis spectra at the requested frequencies and fits each
/// decay curve.
pub fn fit(dir: &Path, req: &FitRequest) -> Result<SelectivityReport> {
    let (_, spectra) = formats::read_spectra(dir, formats::SPECTRA_CSV, formats::SPECTRA_JSON)?;
    if req.freqs_hz.is_empty() {
        return Err(Error::Config("give at least one cut frequency".into()));
    }
    let curves = frequency_cuts(&spectra, req.order, &req.freqs_hz, req.cut)?;
    let report = selectivity_report(&curves, req.model)?;
    let mut out = OutputDir::open(dir, "fit")?;
    out.write(formats::CURVES_CSV, formats::curves_csv(&curves).as_bytes())?;
    let v = serde_json::json!({
        "order": req.order,
        "cut": req.cut,
        "model": req.model.map(|m| serde_json::to_value(m).unwrap_or_default()).unwrap_or_else(|| "auto".into()),
        "linear_tau_d": "extrapolated zero crossing -intercept/slope",
        "report": report,
    });
    out.write(formats::FIT_JSON, to_json(&v)?.as_bytes())?;
    out.write(formats::FIT_TXT, report.to_text().as_bytes())?;
    out.finish()?;
    Ok(report)
}

/// Residual of the configured reversion block at one tau (the largest
/// scheduled tau when not given).
pub fn check_reversion(config: &Path, tau: Option<f64>) -> Result<ReversionReport> {
    let cfg = RunConfig::load(config)?;
    let exp = cfg.experiment()?;
    let (eig, _) = eigensystem_cached(&exp.system, cache_dir().as_deref())?;
    let tau = match tau {
        Some(t) => t,
        None => exp.grid.taus.iter().copied().fold(0.0, f64::max),
    };
    let block: Vec<_> = exp.template.block.event(tau)?.into_iter().collect();
    verify_reversion(&block, &eig)
}

#[derive(Clone, Debug)]
pub struct SweepRequest {
    pub t_p_us: Vec<f64>,
    pub tau1_us: Vec<f64>,
    /// Rebuilds the tau schedule as whole MREV-8 cycles up to this value.
    pub tau_max_us: Option<f64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn label(v: f64) -> String {
    format!("{v}").replace('.', "p").replace('-', "m")
}

/// Simulates and transforms every (t_p, tau1) combination into its own
/// subdirectory; the top-level manifest lists each subrun's manifest.
pub fn sweep(config: &Path, req: &SweepRequest) -> Result<Vec<PathBuf>> {
    let base = RunConfig::load(config)?;
    let root = req.out.clone().unwrap_or_else(|| base.output_dir());
    let t_ps = if req.t_p_us.is_empty() {
        vec![base.sequence.t_p_us]
    } else {
        req.t_p_us.clone()
    };
    let tau1s: Vec<Option<f64>> = if req.tau1_us.is_empty() {
        vec![base.sequence.block.tau1_us]
    } else {
        req.tau1_us.iter().copied().map(Some).collect()
    };
    clear_previous(&root)?;
    let mut top = OutputDir::open(&root, "sweep")?;
    top.set_config_hash(base.sha256().to_string());
    let mut dirs = Vec::new();
    for &t_p in &t_ps {
        for &tau1 in &tau1s {
            let mut cfg = base.clone();
            cfg.sequence.t_p_us = t_p;
            cfg.sequence.block.tau1_us = tau1;
            let mut name = format!("tp_{}", label(t_p));
            if let Some(t1) = tau1 {
                name.push_str(&format!("_tau1_{}", label(t1)));
                if let Some(max) = req.tau_max_us {
                    let cycles = (max / (12.0 * t1) + 1e-9).floor() as usize;
                    cfg.sequence.tau_us = mqc_core::io::config::TauSchedule::List((0..=cycles).map(|i| i as f64 * 12.0 * t1).collect());
                }
            }
            // reparse so the recorded hash describes the variant
            let cfg = RunConfig::from_toml_str(&cfg.to_toml()?, base.base_dir())?;
            let sub = root.join(&name);
            simulate_config(
                &cfg,
                &SimulateOverrides {
                    out: Some(sub.clone()),
                    workers: req.workers,
                },
            )?;
            spectra(&sub, false)?;
            top.adopt(&format!("{name}/{MANIFEST_NAME}"))?;
            dirs.push(sub);
        }
    }
    top.finish()?;
    Ok(dirs)
}
