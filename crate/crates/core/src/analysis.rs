//! Decay curves at fixed frequency and their fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::CoherenceSpectrum;

/// Amplitude versus tau at one frequency of one coherence order,
/// normalized to the first point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub order: i32,
    pub freq_hz: f64,
    pub taus: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Unnormalized magnitude at the first tau.
    pub reference: f64,
}

impl DecayCurve {
    /// Builds a curve from raw amplitudes, normalizing to the first one.
    pub fn new(order: i32, freq_hz: f64, taus: Vec<f64>, raw: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::InsufficientData("empty tau axis".into()));
        }
        if taus.len() != raw.len() {
            return Err(Error::DimensionMismatch {
                expected: taus.len(),
                found: raw.len(),
            });
        }
        if taus.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InsufficientData("tau values must be strictly increasing".into()));
        }
        let reference = raw[0];
        if !(reference.is_finite() && reference != 0.0) {
            return Err(Error::InsufficientData(format!("cannot normalize to a zero amplitude at {freq_hz} Hz")));
        }
        Ok(Self {
            order,
            freq_hz,
            taus,
            amplitudes: raw.iter().map(|a| a / reference).collect(),
            reference,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutMode {
    /// Magnitude at the nearest bin.
    #[default]
    Nearest,
    /// Mean magnitude of the nearest bin and its two neighbours.
    Average3,
}

/// Magnitude cuts through a tau series of spectra.
pub fn frequency_cuts(spectra: &[CoherenceSpectrum], order: i32, freqs_hz: &[f64], mode: CutMode) -> Result<Vec<DecayCurve>> {
    let first = spectra.first().ok_or_else(|| Error::InsufficientData("empty tau axis".into()))?;
    if first.order_index(order).is_none() {
        return Err(Error::Config(format!("order {order} is not resolved by the phase grid")));
    }
    let taus: Vec<f64> = spectra.iter().map(|s| s.tau).collect();
    let (lo, hi) = (first.freqs_hz[0], first.freqs_hz[first.n_freq() - 1]);
    let mut out = Vec::with_capacity(freqs_hz.len());
    for &f in freqs_hz {
        if f < lo || f > hi {
            return Err(Error::Config(format!("cut frequency {f} Hz outside the band [{lo}, {hi}] Hz")));
        }
        let raw: Vec<f64> = spectra
            .iter()
            .map(|s| {
                if s.freqs_hz != first.freqs_hz {
                    return Err(Error::DimensionMismatch {
                        expected: first.n_freq(),
                        found: s.n_freq(),
                    });
                }
                let row = s.row(order).expect("orders checked above");
                let i = s.nearest_bin(f);
                Ok(match mode {
                    CutMode::Nearest => row[i].norm(),
                    CutMode::Average3 => {
                        let a = i.saturating_sub(1);
                        let b = (i + 1).min(row.len() - 1);
                        row[a..=b].iter().map(|z| z.norm()).sum::<f64>() / (b - a + 1) as f64
                    }
                })
            })
            .collect::<Result<_>>()?;
        out.push(DecayCurve::new(order, f, taus.clone(), raw)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    /// `A exp(-tau / tau_d)`
    Exponential,
    /// `a + b tau`
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    /// Exponential: decay constant. Linear: `-intercept / slope`, the
    /// extrapolated zero crossing; absent for a non-negative slope.
    pub tau_d: Option<f64>,
    pub tau_d_sigma: Option<f64>,
    /// Exponential prefactor, or the linear intercept.
    pub amplitude: f64,
    pub amplitude_sigma: f64,
    /// Linear model only.
    pub slope: Option<f64>,
    pub slope_sigma: Option<f64>,
    /// Root of the residual sum of squares.
    pub residual_norm: f64,
    pub n_points: usize,
}

const MIN_POINTS: usize = 2;

fn check_points(curve: &DecayCurve) -> Result<()> {
    if curve.taus.len() < MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "a fit needs at least {MIN_POINTS} points, got {}",
            curve.taus.len()
        )));
    }
    if curve.amplitudes.iter().chain(&curve.taus).any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData("curve contains non-finite values".into()));
    }
    Ok(())
}

/// Unweighted least-squares fit of a decay curve.
pub fn fit_decay(curve: &DecayCurve, model: FitModel) -> Result<FitResult> {
    check_points(curve)?;
    match model {
        FitModel::Linear => Ok(fit_linear(&curve.taus, &curve.amplitudes)),
        FitModel::Exponential => fit_exponential(&curve.taus, &curve.amplitudes),
    }
}

/// Exponential fit, falling back to the linear model when the data cannot
/// be described by a decaying exponential. The error that forced the
/// fallback is returned alongside.
pub fn fit_decay_or_linear(curve: &DecayCurve) -> Result<(FitResult, Option<Error>)> {
    match fit_decay(curve, FitModel::Exponential) {
        Ok(r) => Ok((r, None)),
        Err(e @ Error::FitDomain(_)) => Ok((fit_decay(curve, FitModel::Linear)?, Some(e))),
        Err(e) => Err(e),
    }
}

fn fit_linear(x: &[f64], y: &[f64]) -> FitResult {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let s2 = if x.len() > 2 { rss / (n - 2.0) } else { 0.0 };
    let slope_sigma = (s2 / sxx).sqrt();
    let intercept_sigma = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    let tau_d = (slope < 0.0).then(|| -intercept / slope);
    let tau_d_sigma = tau_d.map(|t| {
        // first-order propagation, intercept and slope treated as independent
        let rel = (intercept_sigma / intercept).powi(2) + (slope_sigma / slope).powi(2);
        t.abs() * rel.sqrt()
    });
    FitResult {
        model: FitModel::Linear,
        tau_d,
        tau_d_sigma,
        amplitude: intercept,
        amplitude_sigma: intercept_sigma,
        slope: Some(slope),
        slope_sigma: Some(slope_sigma),
        residual_norm: rss.sqrt(),
        n_points: x.len(),
    }
}

fn exp_rss(x: &[f64], y: &[f64], a: f64, k: f64) -> f64 {
    x.iter().zip(y).map(|(t, v)| (v - a * (-k * t).exp()).powi(2)).sum()
}

fn fit_exponential(x: &[f64], y: &[f64]) -> Result<FitResult> {
    if let Some(v) = y.iter().find(|v| **v <= 0.0) {
        return Err(Error::FitDomain(format!("exponential model needs positive amplitudes, found {v}")));
    }
    // fit unit-peak data so the iteration path does not depend on the overall scale
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(*v));
    let y: Vec<f64> = y.iter().map(|v| v / scale).collect();
    let y = y.as_slice();
    // log-linear seed
    let logs: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let seed = fit_linear(x, &logs);
    let mut a = seed.amplitude.exp();
    let mut k = -seed.slope.unwrap_or(0.0);

    // Levenberg-Marquardt on (a, k)
    let mut rss = exp_rss(x, y, a, k);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (t, v) in x.iter().zip(y) {
            let e = (-k * t).exp();
            let r = v - a * e;
            let j = [e, -a * t * e];
            for p in 0..2 {
                jtr[p] += j[p] * r;
                for q in 0..2 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let m = [[jtj[0][0] * (1.0 + lambda), jtj[0][1]], [jtj[1][0], jtj[1][1] * (1.0 + lambda)]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det == 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let da = (jtr[0] * m[1][1] - jtr[1] * m[0][1]) / det;
            let dk = (m[0][0] * jtr[1] - m[1][0] * jtr[0]) / det;
            let trial = exp_rss(x, y, a + da, k + dk);
            if trial <= rss {
                let converged = (da.abs() <= 1e-14 * a.abs().max(1e-300)) && (dk.abs() <= 1e-14 * k.abs().max(1e-300));
                a += da;
                k += dk;
                let small = rss - trial <= 1e-16 * rss.max(1e-300);
                rss = trial;
                lambda = (lambda / 10.0).max(1e-12);
                improved = !(converged || small);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    // rss only resolves the parameters to ~sqrt(eps); finish with plain
    // Gauss-Newton steps, which converge on the step size instead
    for _ in 0..20 {
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (t, v) in x.iter().zip(y) {
            let e = (-k * t).exp();
            let j = [e, -a * t * e];
            for p in 0..2 {
                jtr[p] += j[p] * (v - a * e);
                for q in 0..2 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        let da = (jtr[0] * jtj[1][1] - jtr[1] * jtj[0][1]) / det;
        let dk = (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det;
        if !(da.is_finite() && dk.is_finite()) || exp_rss(x, y, a + da, k + dk) > 2.0 * rss {
            break;
        }
        a += da;
        k += dk;
        if da.abs() <= 1e-15 * a.abs() && dk.abs() <= 1e-15 * k.abs() {
            break;
        }
    }
    rss = exp_rss(x, y, a, k);

    if !(k > 0.0) || !k.is_finite() || !a.is_finite() {
        return Err(Error::FitDomain(format!("no decay found (rate {k:e})")));
    }

    let n = x.len();
    let (mut jtj, s2) = ([[0.0; 2]; 2], if n > 2 { rss / (n - 2) as f64 } else { 0.0 });
    for t in x {
        let e = (-k * t).exp();
        let j = [e, -a * t * e];
        for p in 0..2 {
            for q in 0..2 {
                jtj[p][q] += j[p] * j[q];
            }
        }
    }
    let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
    let (var_a, var_k) = if det > 0.0 {
        (s2 * jtj[1][1] / det, s2 * jtj[0][0] / det)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(FitResult {
        model: FitModel::Exponential,
        tau_d: Some(1.0 / k),
        tau_d_sigma: Some(var_k.sqrt() / (k * k)),
        amplitude: a * scale,
        amplitude_sigma: var_a.sqrt() * scale,
        slope: None,
        slope_sigma: None,
        residual_norm: rss.sqrt() * scale,
        n_points: n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectivityRow {
    pub freq_hz: f64,
    pub tau_d: Option<f64>,
    pub fit: FitResult,
    /// Reason the exponential model was abandoned, if it was.
    pub fallback: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectivityReport {
    /// Sorted by `|f|`, then `f`.
    pub rows: Vec<SelectivityRow>,
    /// `tau_d` never increases with `|f|`.
    pub monotone_decreasing: bool,
    /// `tau_d` at the lowest `|f|` over `tau_d` at the highest.
    pub extreme_ratio: Option<f64>,
}

/// Fits every curve and checks that decay times shrink with `|f|`.
pub fn eigen_selectivity_report(curves: &[DecayCurve]) -> Result<SelectivityReport> {
    selectivity_report(curves, None)
}

/// As [`eigen_selectivity_report`] with a fixed model; `None` tries the
/// exponential first and falls back to the linear model.
pub fn selectivity_report(curves: &[DecayCurve], model: Option<FitModel>) -> Result<SelectivityReport> {
    if curves.is_empty() {
        return Err(Error::InsufficientData("no decay curves".into()));
    }
    let mut rows = curves
        .iter()
        .map(|c| {
            let (fit, fallback) = match model {
                Some(m) => (fit_decay(c, m)?, None),
                None => fit_decay_or_linear(c)?,
            };
            Ok(SelectivityRow {
                freq_hz: c.freq_hz,
                tau_d: fit.tau_d,
                fit,
                fallback: fallback.map(|e| e.to_string()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.freq_hz.abs().total_cmp(&b.freq_hz.abs()).then(a.freq_hz.total_cmp(&b.freq_hz)));
    let td = |r: &SelectivityRow| r.tau_d.unwrap_or(f64::INFINITY);
    let monotone_decreasing = rows.windows(2).all(|w| td(&w[1]) <= td(&w[0]) * (1.0 + 1e-9));
    let extreme_ratio = match (rows.first().and_then(|r| r.tau_d), rows.last().and_then(|r| r.tau_d)) {
        (Some(lo), Some(hi)) if hi > 0.0 => Some(lo / hi),
        _ => None,
    };
    Ok(SelectivityReport {
        rows,
        monotone_decreasing,
        extreme_ratio,
    })
}

impl SelectivityReport {
    /// Fixed-width text table.
    pub fn to_text(&self) -> String {
        let mut s = String::from("freq_hz        model        tau_d_s        sigma_s        residual\n");
        for r in &self.rows {
            let model = match r.fit.model {
                FitModel::Exponential => "exponential",
                FitModel::Linear => "linear",
            };
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:<14.6e}")).unwrap_or_else(|| format!("{:<14}", "-"));
            s.push_str(&format!(
                "{:<14.3} {:<12} {} {} {:.3e}\n",
                r.freq_hz,
                model,
                fmt(r.tau_d),
                fmt(r.fit.tau_d_sigma),
                r.fit.residual_norm
            ));
        }
        s.push_str(&format!("monotone_decreasing: {}\n", self.monotone_decreasing));
        match self.extreme_ratio {
            Some(r) => s.push_str(&format!("extreme_ratio: {r:.6}\n")),
            None => s.push_str("extreme_ratio: -\n"),
        }
        s.push_str("linear tau_d is the extrapolated zero crossing -intercept/slope\n");
        s
    }
}
