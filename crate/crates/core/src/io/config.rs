//! Run configuration: one TOML file describes one experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{EigenSystem, SpinSystem};
use crate::io::manifest::sha256_hex;
use crate::io::molecule::load_molecule;
use crate::open_system::{DecoherenceParams, Omdf};
use crate::sequence::{AcquisitionSettings, Engine, ExperimentGrid, Mrev8Mode, ReversionBlock, RunOptions, SequenceTemplate};
use crate::spectra::{Apodization, Observable, SpectrumOptions};

const US: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    #[default]
    Closed,
    Open,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Molecule file, relative to the configuration file.
    pub molecule: PathBuf,
    #[serde(default)]
    pub engine: EngineKind,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_budget_mb")]
    pub memory_budget_mb: u64,
    /// Number of molecules the single-molecule signal is scaled by.
    #[serde(default = "default_molecules")]
    pub molecules: f64,
    pub sequence: SequenceConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub decoherence: Option<DecoherenceConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(skip)]
    base_dir: PathBuf,
    #[serde(skip)]
    source_sha256: String,
}

fn default_budget_mb() -> u64 {
    4096
}

fn default_molecules() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub t_p_us: f64,
    pub n_t: usize,
    pub dt_us: f64,
    #[serde(default)]
    pub n_phi: Option<usize>,
    #[serde(default)]
    pub phi_step_deg: Option<f64>,
    pub tau_us: TauSchedule,
    pub block: BlockConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSchedule {
    List(Vec<f64>),
    Arithmetic { start: f64, step: f64, count: usize },
}

impl TauSchedule {
    pub fn values_us(&self) -> Vec<f64> {
        match self {
            TauSchedule::List(v) => v.clone(),
            TauSchedule::Arithmetic { start, step, count } => (0..*count).map(|i| start + step * i as f64).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    None,
    Mrev8,
    MagicSandwich,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub kind: BlockKind,
    #[serde(default)]
    pub mode: Option<Mrev8Mode>,
    #[serde(default)]
    pub tau1_us: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionConfig {
    #[serde(default)]
    pub t_m_us: Option<f64>,
    #[serde(default)]
    pub window_us: Option<f64>,
    #[serde(default = "default_dwell")]
    pub dwell_us: f64,
    #[serde(default = "default_search")]
    pub search_steps: usize,
    #[serde(default)]
    pub observable: Observable,
}

fn default_dwell() -> f64 {
    1.0
}

fn default_search() -> usize {
    1000
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            t_m_us: None,
            window_us: None,
            dwell_us: default_dwell(),
            search_steps: default_search(),
            observable: Observable::Plus,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Value(f64),
    /// Only `"auto"` is accepted.
    Keyword(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoherenceConfig {
    pub sigma_cl: SigmaSpec,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Fastest decay time targeted by `sigma_cl = "auto"`.
    #[serde(default = "default_auto_target")]
    pub auto_target_us: f64,
    #[serde(default)]
    pub omdf: OmdfConfig,
}

fn default_kappa() -> f64 {
    2.0
}

fn default_auto_target() -> f64 {
    400.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmdfFamily {
    #[default]
    Gaussian,
    Tabulated,
    Delta,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmdfConfig {
    #[serde(default)]
    pub family: OmdfFamily,
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    /// Zero-fill factor of the display spectra.
    #[serde(default = "default_zero_fill")]
    pub zero_fill: usize,
    /// Half-width of the display band.
    #[serde(default)]
    pub band_khz: Option<f64>,
    #[serde(default)]
    pub apodization: Apodization,
    /// Also write the Hamiltonian and prepared state as text matrices.
    #[serde(default)]
    pub dump_operators: bool,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_zero_fill() -> usize {
    4
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out(),
            zero_fill: default_zero_fill(),
            band_khz: None,
            apodization: Apodization::None,
            dump_operators: false,
        }
    }
}

/// Everything needed to execute a configured run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub system: SpinSystem,
    pub template: SequenceTemplate,
    pub grid: ExperimentGrid,
    pub options: RunOptions,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be non-negative, got {v}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path, message),
            other => other,
        })
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::parse("<config>", e.message()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.source_sha256 = sha256_hex(text.as_bytes());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes back to TOML, keeping the base directory for path lookup.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: &Path) {
        self.base_dir = dir.to_path_buf();
    }

    /// Digest of the configuration text as loaded.
    pub fn sha256(&self) -> &str {
        &self.source_sha256
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn molecule_path(&self) -> PathBuf {
        self.resolve(&self.molecule)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sequence;
        non_negative("sequence.t_p_us", s.t_p_us)?;
        positive("sequence.dt_us", s.dt_us)?;
        if s.n_t < 2 {
            return Err(Error::Config("sequence.n_t must be at least 2".into()));
        }
        self.n_phi()?;
        let taus = s.tau_us.values_us();
        if taus.is_empty() {
            return Err(Error::Config("sequence.tau_us is empty".into()));
        }
        for t in &taus {
            non_negative("tau", *t)?;
        }
        if taus.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("sequence.tau_us must be strictly increasing".into()));
        }
        self.block()?;
        positive("acquisition.dwell_us", self.acquisition.dwell_us)?;
        if let Some(t) = self.acquisition.t_m_us {
            non_negative("acquisition.t_m_us", t)?;
        }
        if let Some(w) = self.acquisition.window_us {
            non_negative("acquisition.window_us", w)?;
        }
        positive("molecules", self.molecules)?;
        if self.memory_budget_mb == 0 {
            return Err(Error::Config("memory_budget_mb must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.output.zero_fill == 0 {
            return Err(Error::Config("output.zero_fill must be at least 1".into()));
        }
        if let Some(b) = self.output.band_khz {
            positive("output.band_khz", b)?;
        }
        match (&self.engine, &self.decoherence) {
            (EngineKind::Open, None) => {
                return Err(Error::Config("engine = \"open\" requires a [decoherence] table".into()));
            }
            (EngineKind::Open, Some(_)) if s.block.kind == BlockKind::None => {
                return Err(Error::Config(
                    "engine = \"open\" assumes an ideal reversion block; set sequence.block.kind".into(),
                ));
            }
            _ => {}
        }
        if let Some(d) = &self.decoherence {
            positive("decoherence.kappa", d.kappa)?;
            positive("decoherence.auto_target_us", d.auto_target_us)?;
            match &d.sigma_cl {
                SigmaSpec::Value(v) => non_negative("decoherence.sigma_cl", *v)?,
                SigmaSpec::Keyword(k) if k == "auto" => {}
                SigmaSpec::Keyword(k) => {
                    return Err(Error::Config(format!("decoherence.sigma_cl must be a number or \"auto\", got {k:?}")));
                }
            }
            match d.omdf.family {
                OmdfFamily::Gaussian => positive("decoherence.omdf.width", d.omdf.width.unwrap_or(0.05))?,
                OmdfFamily::Tabulated if d.omdf.file.is_none() => {
                    return Err(Error::Config("a tabulated distribution needs decoherence.omdf.file".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn n_phi(&self) -> Result<usize> {
        match (self.sequence.n_phi, self.sequence.phi_step_deg) {
            (Some(n), None) if n > 0 => Ok(n),
            (Some(_), None) => Err(Error::Config("sequence.n_phi must be positive".into())),
            (None, Some(step)) => ExperimentGrid::phi_points_for_step(step),
            (None, None) => Err(Error::Config("give sequence.n_phi or sequence.phi_step_deg".into())),
            (Some(_), Some(_)) => Err(Error::Config("give only one of sequence.n_phi and sequence.phi_step_deg".into())),
        }
    }

    pub fn block(&self) -> Result<ReversionBlock> {
        let b = &self.sequence.block;
        Ok(match b.kind {
            BlockKind::None => ReversionBlock::None,
            BlockKind::MagicSandwich => ReversionBlock::MagicSandwich,
            BlockKind::Mrev8 => {
                let mode = b.mode.unwrap_or(Mrev8Mode::Concatenate);
                let tau1 = b.tau1_us.map(|t| t * US);
                if mode == Mrev8Mode::Concatenate {
                    positive("sequence.block.tau1_us", b.tau1_us.unwrap_or(0.0))?;
                }
                ReversionBlock::Mrev8 { mode, tau1 }
            }
        })
    }

    pub fn grid(&self) -> Result<ExperimentGrid> {
        let s = &self.sequence;
        ExperimentGrid::new(
            s.n_t,
            s.dt_us * US,
            self.n_phi()?,
            s.tau_us.values_us().into_iter().map(|t| t * US).collect(),
            s.t_p_us * US,
        )
    }

    pub fn template(&self) -> Result<SequenceTemplate> {
        let a = &self.acquisition;
        Ok(SequenceTemplate {
            block: self.block()?,
            acquisition: AcquisitionSettings {
                t_m: a.t_m_us.map(|t| t * US),
                window: a.window_us.map(|t| t * US),
                dwell: a.dwell_us * US,
                search_steps: a.search_steps,
                observable: a.observable,
            },
        })
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            workers: self.workers,
            memory_budget_bytes: self.memory_budget_mb << 20,
            molecules: self.molecules,
            initial_state: None,
        }
    }

    pub fn display_options(&self) -> SpectrumOptions {
        SpectrumOptions {
            apodization: self.output.apodization,
            zero_fill: self.output.zero_fill,
        }
    }

    pub fn experiment(&self) -> Result<Experiment> {
        let system = load_molecule(&self.molecule_path())?;
        Ok(Experiment {
            system,
            template: self.template()?,
            grid: self.grid()?,
            options: self.run_options(),
        })
    }

    /// Engine with decoherence parameters resolved against the eigensystem.
    pub fn engine(&self, eig: &EigenSystem) -> Result<Engine> {
        let d = match (&self.engine, &self.decoherence) {
            (EngineKind::Closed, _) => return Ok(Engine::Closed),
            (EngineKind::Open, Some(d)) => d,
            (EngineKind::Open, None) => return Err(Error::Config("engine = \"open\" requires a [decoherence] table".into())),
        };
        let sigma = match &d.sigma_cl {
            SigmaSpec::Value(v) => *v,
            SigmaSpec::Keyword(_) => DecoherenceParams::calibrated_sigma(eig.max_gap(), d.auto_target_us * US, d.kappa)?,
        };
        let omdf = match d.omdf.family {
            OmdfFamily::Gaussian => Omdf::Gaussian {
                width: d.omdf.width.unwrap_or(0.05),
            },
            OmdfFamily::Delta => Omdf::Delta,
            OmdfFamily::Tabulated => {
                let file = d.omdf.file.as_ref().expect("validated");
                Omdf::from_file(&self.resolve(file))?
            }
        };
        Ok(Engine::Open(DecoherenceParams::new(sigma, d.kappa, omdf)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
molecule = "pair.toml"

[sequence]
t_p_us = 27.0
n_t = 64
dt_us = 5.0
phi_step_deg = 9.47
tau_us = { start = 0.0, step = 90.36, count = 4 }

[sequence.block]
kind = "mrev8"
mode = "concatenate"
tau1_us = 7.53
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = RunConfig::from_toml_str(BASE, Path::new("/tmp/x")).unwrap();
        assert_eq!(cfg.n_phi().unwrap(), 38);
        assert_eq!(cfg.molecule_path(), PathBuf::from("/tmp/x/pair.toml"));
        let g = cfg.grid().unwrap();
        assert_eq!(g.taus.len(), 4);
        assert!((g.taus[3] - 3.0 * 90.36e-6).abs() < 1e-15);
        assert_eq!(cfg.sha256().len(), 64);
        let back = RunConfig::from_toml_str(&cfg.to_toml().unwrap(), Path::new("/tmp/x")).unwrap();
        assert_eq!(back.grid().unwrap(), g);
    }

    #[test]
    fn distinct_diagnostics() {
        let open = format!("engine = \"open\"\n{BASE}");
        let e = RunConfig::from_toml_str(&open, Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("[decoherence]"), "{e}");
        let bad_step = BASE.replace("9.47", "20.5");
        assert!(matches!(
            RunConfig::from_toml_str(&bad_step, Path::new(".")),
            Err(Error::UnsupportedSampling(_))
        ));
        let empty = BASE.replace("count = 4", "count = 0");
        assert!(RunConfig::from_toml_str(&empty, Path::new(".")).unwrap_err().to_string().contains("empty"));
        let typo = BASE.replace("dt_us", "dt_usec");
        assert!(matches!(RunConfig::from_toml_str(&typo, Path::new(".")), Err(Error::Parse { .. })));
        let neg = BASE.replace("t_p_us = 27.0", "t_p_us = -1.0");
        assert!(RunConfig::from_toml_str(&neg, Path::new(".")).is_err());
    }

    #[test]
    fn open_engine_with_auto_sigma() {
        let text = format!("engine = \"open\"\n{BASE}\n[decoherence]\nsigma_cl = \"auto\"\n[decoherence.omdf]\nwidth = 0.1\n");
        let cfg = RunConfig::from_toml_str(&text, Path::new(".")).unwrap();
        let c = crate::hamiltonian::CouplingTable::from_pairs(2, &[(0, 1, 2000.0)]).unwrap();
        let eig = SpinSystem::from_couplings("p", c, 0.5).unwrap().eigensystem().unwrap();
        match cfg.engine(&eig).unwrap() {
            Engine::Open(p) => {
                let td = crate::open_system::decay_time(eig.max_gap(), &p);
                assert!((td - 400e-6).abs() < 1e-12);
            }
            Engine::Closed => panic!("expected open engine"),
        }
        let bad = text.replace("\"auto\"", "\"fast\"");
        assert!(RunConfig::from_toml_str(&bad, Path::new(".")).is_err());
    }
}
