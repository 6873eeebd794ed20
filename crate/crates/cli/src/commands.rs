//! Subcommand implementations. Each validates its whole configuration before
//! any compute, writes its tables plus a `.meta.toml` sidecar, and returns a
//! short text report together with the computed data.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use fret_core::detection::poisson_weight;
use fret_core::{
    extract_params, fwhm, interaction_histogram, lorentz_fit, lorentz_fit_fixed_offset,
    observe, peak_amplitude, simulate_spectrum_with, Calibration, DetectionChain, InteractionHistogram,
    LorentzFit, Mixed, Spectrum, SpectrumSet,
};

use crate::config::RunConfig;
use crate::output::{interpolate, read_spectrum, spectrum_table, Table, Writer};

/// Largest detected count reported by `detect`.
pub const MAX_DETECTED: usize = 5;

/// Text report plus the files a command wrote.
#[derive(Debug, Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    fn say(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

fn metric(table: &mut toml::Table, key: impl Into<String>, value: f64) {
    if value.is_finite() {
        table.insert(key.into(), toml::Value::Float(value));
    }
}

/// Loads `rho_<i>.csv` from `--from`, or simulates every requested `i`.
pub fn compute_spectra(cfg: &RunConfig) -> Result<SpectrumSet> {
    let mut set = SpectrumSet::new();
    for &i in &cfg.atoms {
        let spec = match &cfg.from {
            Some(dir) => read_spectrum(&dir.join(format!("rho_{i}.csv")))?,
            None => {
                log::info!("simulating rho_{i}: {} realizations", cfg.realizations);
                simulate_spectrum_with(&cfg.request(i)?, cfg.workers)
                    .with_context(|| format!("simulating rho_{i}"))?
            }
        };
        if let Some((k, first)) = set.iter().next() {
            if !first.same_grid(&spec) {
                anyhow::bail!("rho_{i} and rho_{k} use different detuning grids");
            }
        }
        set.insert(i, spec);
    }
    Ok(set)
}

fn write_spectra(w: &mut Writer, set: &SpectrumSet, metrics: &mut toml::Table, out: &mut Outcome) -> Result<()> {
    let mut combined_cols = vec!["detuning_mhz".to_string()];
    for i in set.keys() {
        combined_cols.push(format!("rho_{i}"));
        combined_cols.push(format!("stderr_{i}"));
    }
    let cols: Vec<&str> = combined_cols.iter().map(String::as_str).collect();
    let mut combined = Table::new("spectra", &cols);
    let grid = &set.values().next().expect("non-empty set").detunings;
    for (k, &d) in grid.iter().enumerate() {
        let mut row = vec![d];
        for s in set.values() {
            row.push(s.values[k]);
            row.push(s.stderr[k]);
        }
        combined.push(row);
    }

    for (i, s) in set {
        w.table(&spectrum_table(&format!("rho_{i}"), s))?;
        let (v0, e0) = s.at(0.0);
        let width = fwhm(s).ok();
        metric(metrics, format!("rho_{i}_at_zero"), v0);
        metric(metrics, format!("rho_{i}_stderr_at_zero"), e0);
        if let Some(wd) = width {
            metric(metrics, format!("rho_{i}_fwhm_mhz"), wd);
        }
        out.say(format!(
            "rho_{i}: rho(0) = {v0:.4} ± {e0:.4}, FWHM = {} MHz",
            fmt_opt(width)
        ));
    }
    w.table(&combined)?;
    Ok(())
}

/// `spectrum`: one CSV per atom count plus a combined table.
pub fn cmd_spectrum(cfg: &RunConfig) -> Result<(SpectrumSet, Outcome)> {
    cfg.validate_simulation()?;
    let mut w = Writer::new(&cfg.out, cfg.format)?;
    let set = compute_spectra(cfg)?;
    let mut out = Outcome::default();
    let mut metrics = toml::Table::new();
    write_spectra(&mut w, &set, &mut metrics, &mut out)?;
    w.sidecar("spectrum", "spectrum", cfg, metrics)?;
    out.files = w.written().to_vec();
    Ok((set, out))
}

/// Post-selected signals and their summary metrics.
#[derive(Debug, Clone)]
pub struct Detection {
    pub signals: BTreeMap<usize, Mixed>,
    pub amplitudes: BTreeMap<usize, f64>,
    pub widths: BTreeMap<usize, Option<f64>>,
    pub histograms: Vec<InteractionHistogram>,
}

pub fn run_detection(set: &SpectrumSet, chain: &DetectionChain) -> Result<Detection> {
    let mut signals = BTreeMap::new();
    let mut amplitudes = BTreeMap::new();
    let mut widths = BTreeMap::new();
    let mut histograms = Vec::new();
    for n in 1..=MAX_DETECTED.min(chain.i_max) {
        let m = observe(set, chain, n).with_context(|| format!("computing S_{n}"))?;
        amplitudes.insert(n, peak_amplitude(&m.spectrum)?);
        widths.insert(n, fwhm(&m.spectrum).ok());
        signals.insert(n, m);
        histograms.push(interaction_histogram(chain, n)?);
    }
    Ok(Detection {
        signals,
        amplitudes,
        widths,
        histograms,
    })
}

pub fn histogram_table(chain: &DetectionChain, hists: &[InteractionHistogram]) -> Table {
    let mut cols = vec!["n".to_string(), "none".to_string()];
    cols.extend((2..=chain.i_max).map(|k| format!("k{k}")));
    cols.push("tail_mass".into());
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new("histogram", &cols);
    for h in hists {
        let mut row = vec![h.detected as f64, h.none];
        row.extend((2..=chain.i_max).map(|k| h.weight(k)));
        row.push(h.tail_mass);
        t.push(row);
    }
    t
}

fn write_detection(w: &mut Writer, chain: &DetectionChain, det: &Detection, metrics: &mut toml::Table, out: &mut Outcome) -> Result<()> {
    let mut amp = Table::new("amplitude_vs_n", &["n", "amplitude", "stderr"]);
    let mut wid = Table::new("fwhm_vs_n", &["n", "fwhm_mhz"]);
    for (&n, m) in &det.signals {
        let mut t = Table::new(format!("s_{n}"), &["detuning_mhz", "s_n"]);
        for (d, v) in m.spectrum.detunings.iter().zip(&m.spectrum.values) {
            t.push(vec![*d, *v]);
        }
        w.table(&t)?;
        let a = det.amplitudes[&n];
        let peak_err = m.spectrum.at(0.0).1;
        amp.push(vec![n as f64, a, peak_err]);
        wid.push(vec![n as f64, det.widths[&n].unwrap_or(f64::NAN)]);
        metric(metrics, format!("s_{n}_amplitude"), a);
        if let Some(wd) = det.widths[&n] {
            metric(metrics, format!("s_{n}_fwhm_mhz"), wd);
        }
        metric(metrics, format!("s_{n}_tail_mass"), m.truncation_mass);
        out.say(format!(
            "S_{n}: amplitude = {a:.4}, FWHM = {} MHz, Poisson tail = {:.2e}",
            fmt_opt(det.widths[&n]),
            m.truncation_mass
        ));
    }
    w.table(&amp)?;
    w.table(&wid)?;
    w.table(&histogram_table(chain, &det.histograms))?;
    for h in &det.histograms {
        out.say(format!(
            "N = {}: k=2 share of resonant weight = {:.4}",
            h.detected,
            h.resonant_share(2)
        ));
    }
    Ok(())
}

/// `detect`: `S_N` for `N = 1..=5`, amplitude/width summaries, histogram.
pub fn cmd_detect(cfg: &RunConfig) -> Result<(Detection, Outcome)> {
    cfg.validate_detection()?;
    let mut w = Writer::new(&cfg.out, cfg.format)?;
    let set = compute_spectra(cfg)?;
    let det = run_detection(&set, &cfg.chain)?;
    let mut out = Outcome::default();
    let mut metrics = toml::Table::new();
    write_detection(&mut w, &cfg.chain, &det, &mut metrics, &mut out)?;
    w.sidecar("detect", "detect", cfg, metrics)?;
    out.files = w.written().to_vec();
    Ok((det, out))
}

/// `histogram`: interacting-atom distributions only; needs no spectra.
pub fn cmd_histogram(cfg: &RunConfig) -> Result<(Vec<InteractionHistogram>, Outcome)> {
    cfg.validate_detection()?;
    let mut w = Writer::new(&cfg.out, cfg.format)?;
    let mut out = Outcome::default();
    let mut metrics = toml::Table::new();
    let hists = (1..=MAX_DETECTED.min(cfg.chain.i_max))
        .map(|n| interaction_histogram(&cfg.chain, n))
        .collect::<fret_core::Result<Vec<_>>>()?;
    for h in &hists {
        let weights: Vec<String> = h.weights.iter().map(|(k, v)| format!("k{k}={v:.4}")).collect();
        out.say(format!(
            "N = {}: none={:.4} {} tail={:.2e} | k=2 share {:.4}",
            h.detected,
            h.none,
            weights.join(" "),
            h.tail_mass,
            h.resonant_share(2)
        ));
        metric(&mut metrics, format!("n{}_k2_share", h.detected), h.resonant_share(2));
    }
    w.table(&histogram_table(&cfg.chain, &hists))?;
    w.sidecar("histogram", "histogram", cfg, metrics)?;
    out.files = w.written().to_vec();
    Ok((hists, out))
}

/// `calibrate`: n̄ and T from the amplitude ratio and mean detected count.
pub fn cmd_calibrate(alpha: f64, n_bar_t: f64) -> Result<(Calibration, Outcome)> {
    let c = extract_params(alpha, n_bar_t)?;
    let mut out = Outcome::default();
    out.say(format!("alpha = {alpha}, mean detected = {n_bar_t}"));
    out.say(format!("n_bar = {:.4}", c.n_bar));
    out.say(format!("T     = {:.4}", c.efficiency));
    out.say(format!(
        "lambda = n_bar (1 - T) = {:.4}, P(no undetected atom) = {:.4}",
        c.n_bar * (1.0 - c.efficiency),
        poisson_weight(0, c.n_bar * (1.0 - c.efficiency))
    ));
    Ok((c, out))
}

/// One `S_N` resampled on the field axis.
#[derive(Debug, Clone)]
pub struct FieldTrace {
    pub fields: Vec<f64>,
    pub values: Vec<f64>,
    pub peak_field: f64,
    /// FWHM on the field axis, V/cm.
    pub width: Option<f64>,
}

/// `fieldscan`: runs `detect`, then maps every `S_N` onto the field grid.
pub fn cmd_fieldscan(cfg: &RunConfig) -> Result<(BTreeMap<usize, FieldTrace>, Outcome)> {
    cfg.validate_fieldscan()?;
    let mut w = Writer::new(&cfg.out, cfg.format)?;
    let set = compute_spectra(cfg)?;
    let det = run_detection(&set, &cfg.chain)?;
    let mut out = Outcome::default();
    let mut metrics = toml::Table::new();
    write_detection(&mut w, &cfg.chain, &det, &mut metrics, &mut out)?;
    let traces = field_traces(cfg, &det)?;
    write_traces(&mut w, &traces, &mut metrics, &mut out)?;
    w.sidecar("fieldscan", "fieldscan", cfg, metrics)?;
    out.files = w.written().to_vec();
    Ok((traces, out))
}

fn write_traces(
    w: &mut Writer,
    traces: &BTreeMap<usize, FieldTrace>,
    metrics: &mut toml::Table,
    out: &mut Outcome,
) -> Result<()> {
    for (n, tr) in traces {
        let mut t = Table::new(format!("fieldscan_s{n}"), &["field_vcm", "s_n"]);
        for (f, v) in tr.fields.iter().zip(&tr.values) {
            t.push(vec![*f, *v]);
        }
        w.table(&t)?;
        metric(metrics, format!("s_{n}_peak_field_vcm"), tr.peak_field);
        if let Some(wd) = tr.width {
            metric(metrics, format!("s_{n}_width_mvcm"), wd * 1e3);
        }
        out.say(format!(
            "S_{n}: peak at {:.4} V/cm, width = {} mV/cm",
            tr.peak_field,
            fmt_opt(tr.width.map(|x| x * 1e3))
        ));
    }
    Ok(())
}

pub fn field_traces(cfg: &RunConfig, det: &Detection) -> Result<BTreeMap<usize, FieldTrace>> {
    let fields = cfg.field_grid.points()?;
    let mut traces = BTreeMap::new();
    for (&n, m) in &det.signals {
        let values: Vec<f64> = fields
            .iter()
            .map(|&f| Ok(interpolate(&m.spectrum, fret_core::field_to_detuning(f, &cfg.stark)?)))
            .collect::<Result<_>>()?;
        let top = values
            .iter()
            .enumerate()
            .fold(0, |b, (k, &v)| if v > values[b] { k } else { b });
        let on_field = Spectrum::new(fields.clone(), values.clone(), vec![0.0; fields.len()])?;
        traces.insert(
            n,
            FieldTrace {
                peak_field: fields[top],
                width: fwhm(&on_field).ok(),
                fields: fields.clone(),
                values,
            },
        );
    }
    Ok(traces)
}

/// Lorentz comparison for one ideal spectrum.
#[derive(Debug, Clone)]
pub struct LineShape {
    pub atoms: usize,
    pub fwhm: f64,
    pub amplitude: f64,
    pub fit: LorentzFit,
    /// Fit with the offset pinned to zero (the ideal spectra have no background).
    pub pinned: LorentzFit,
    pub wing_residual: Option<f64>,
    pub pinned_wing_residual: Option<f64>,
}

pub fn analyze_lineshape(atoms: usize, spec: &Spectrum) -> Result<LineShape> {
    let fit = lorentz_fit(spec).with_context(|| format!("Lorentz fit of rho_{atoms}"))?;
    let pinned = lorentz_fit_fixed_offset(spec, 0.0)
        .with_context(|| format!("pinned Lorentz fit of rho_{atoms}"))?;
    Ok(LineShape {
        atoms,
        fwhm: fwhm(spec)?,
        amplitude: peak_amplitude(spec)?,
        wing_residual: fit.wing_residual(&spec.detunings, 3.0),
        pinned_wing_residual: pinned.wing_residual(&spec.detunings, 3.0),
        fit,
        pinned,
    })
}

fn write_lineshape(w: &mut Writer, spec: &Spectrum, ls: &LineShape, metrics: &mut toml::Table, out: &mut Outcome) -> Result<()> {
    let i = ls.atoms;
    let mut t = Table::new(
        format!("lineshape_{i}"),
        &["detuning_mhz", "rho", "lorentz", "residual", "lorentz_pinned", "residual_pinned"],
    );
    for k in 0..spec.len() {
        t.push(vec![
            spec.detunings[k],
            spec.values[k],
            ls.fit.eval(spec.detunings[k]),
            ls.fit.residuals[k],
            ls.pinned.eval(spec.detunings[k]),
            ls.pinned.residuals[k],
        ]);
    }
    w.table(&t)?;
    for (key, v) in [
        ("fwhm_mhz", ls.fwhm),
        ("amplitude", ls.amplitude),
        ("lorentz_amplitude", ls.fit.amplitude),
        ("lorentz_gamma_mhz", ls.fit.gamma),
        ("lorentz_center_mhz", ls.fit.center),
        ("lorentz_offset", ls.fit.offset),
        ("lorentz_sse", ls.fit.sse),
        ("wing_residual", ls.wing_residual.unwrap_or(f64::NAN)),
        ("pinned_gamma_mhz", ls.pinned.gamma),
        ("pinned_wing_residual", ls.pinned_wing_residual.unwrap_or(f64::NAN)),
    ] {
        metric(metrics, format!("rho_{i}_{key}"), v);
    }
    out.say(format!(
        "rho_{i}: FWHM = {:.3} MHz, amplitude = {:.4}; Lorentz γ = {:.3} MHz, offset = {:.4}, \
         mean wing residual (|Δ-c| > 3γ) = {} (pinned offset: {})",
        ls.fwhm,
        ls.amplitude,
        ls.fit.gamma,
        ls.fit.offset,
        ls.wing_residual.map_or("n/a".into(), |r| format!("{r:+.2e}")),
        ls.pinned_wing_residual.map_or("n/a".into(), |r| format!("{r:+.2e}")),
    ));
    Ok(())
}

/// `lineshape`: FWHM, amplitude and Lorentz comparison for each `--i`.
pub fn cmd_lineshape(cfg: &RunConfig) -> Result<(Vec<LineShape>, Outcome)> {
    cfg.validate_simulation()?;
    let mut w = Writer::new(&cfg.out, cfg.format)?;
    let set = compute_spectra(cfg)?;
    let mut out = Outcome::default();
    let mut metrics = toml::Table::new();
    let mut shapes = Vec::new();
    for (&i, spec) in &set {
        let ls = analyze_lineshape(i, spec)?;
        write_lineshape(&mut w, spec, &ls, &mut metrics, &mut out)?;
        shapes.push(ls);
    }
    w.sidecar("lineshape", "lineshape", cfg, metrics)?;
    out.files = w.written().to_vec();
    Ok((shapes, out))
}

/// Defaults for `reproduce-fig2`: ρ_2..ρ_5 on the standard grid.
pub fn fig2_defaults() -> RunConfig {
    RunConfig::default()
}

/// Defaults for `reproduce-fig3`: as fig2, with the Poisson sum carried to
/// `i_max = 8` so every reported `S_N` keeps its tail below 1e-3.
pub fn fig3_defaults() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.chain.i_max = 8;
    cfg
}

/// Everything `reproduce-fig2` computes.
#[derive(Debug, Clone)]
pub struct Fig2 {
    pub spectra: SpectrumSet,
    pub lineshape: LineShape,
}

/// `reproduce-fig2`: ideal spectra plus the Lorentz comparison for the
/// smallest atom count.
pub fn cmd_reproduce_fig2(cfg: &RunConfig) -> Result<(Fig2, Outcome)> {
    cfg.validate_simulation()?;
    let mut w = Writer::new(&cfg.out, cfg.format)?;
    let set = compute_spectra(cfg)?;
    let mut out = Outcome::default();
    let mut metrics = toml::Table::new();
    write_spectra(&mut w, &set, &mut metrics, &mut out)?;
    let (&i, spec) = set.iter().next().expect("validated non-empty");
    let ls = analyze_lineshape(i, spec)?;
    write_lineshape(&mut w, spec, &ls, &mut metrics, &mut out)?;
    w.sidecar("fig2", "reproduce-fig2", cfg, metrics)?;
    out.files = w.written().to_vec();
    Ok((Fig2 { spectra: set, lineshape: ls }, out))
}

/// Everything `reproduce-fig3` computes.
#[derive(Debug, Clone)]
pub struct Fig3 {
    pub spectra: SpectrumSet,
    pub detection: Detection,
    pub traces: BTreeMap<usize, FieldTrace>,
}

/// `reproduce-fig3`: ideal spectra through the detection chain, with the
/// amplitude/width tables, histogram, and field-axis traces.
pub fn cmd_reproduce_fig3(cfg: &RunConfig) -> Result<(Fig3, Outcome)> {
    cfg.validate_fieldscan()?;
    let mut w = Writer::new(&cfg.out, cfg.format)?;
    let set = compute_spectra(cfg)?;
    let mut out = Outcome::default();
    let mut metrics = toml::Table::new();
    write_spectra(&mut w, &set, &mut metrics, &mut out)?;
    let det = run_detection(&set, &cfg.chain)?;
    write_detection(&mut w, &cfg.chain, &det, &mut metrics, &mut out)?;
    let traces = field_traces(cfg, &det)?;
    write_traces(&mut w, &traces, &mut metrics, &mut out)?;
    w.sidecar("fig3", "reproduce-fig3", cfg, metrics)?;
    out.files = w.written().to_vec();
    Ok((
        Fig3 {
            spectra: set,
            detection: det,
            traces,
        },
        out,
    ))
}
