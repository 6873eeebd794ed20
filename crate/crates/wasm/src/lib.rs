//! wasm-bindgen bindings for the browser demo in `www/`.
//!
//! Each export returns a JSON string; the plain Rust functions behind them
//! are usable (and tested) natively.

use fret_core::{
    build_hamiltonian, enumerate_states, fwhm, interaction_histogram, propagate, simulate_spectrum,
    transfer_fraction, AtomConfiguration, CouplingConstants, DetectionChain, SpectrumRequest,
    StateVector,
};
use nalgebra::Vector3;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Keeps the page responsive.
pub const MAX_DEMO_REALIZATIONS: usize = 200;

#[derive(Debug, Serialize)]
pub struct PairDynamics {
    pub times: Vec<f64>,
    pub transfer: Vec<f64>,
    pub coupling_mhz: f64,
}

/// Transfer fraction of two atoms `distance` µm apart at polar angle
/// `theta_deg` to the field axis, sampled on `points` times in `[0, t_max]`.
pub fn pair_dynamics(
    distance: f64,
    theta_deg: f64,
    delta: f64,
    t_max: f64,
    points: usize,
) -> Result<PairDynamics, String> {
    if !(2..=10_000).contains(&points) {
        return Err(format!("points must lie in [2, 10000], got {points}"));
    }
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(format!("t_max must be positive, got {t_max}"));
    }
    let th = theta_deg.to_radians();
    let b = Vector3::new(distance * th.sin(), 0.0, distance * th.cos());
    let side = 2.0 * distance.abs().max(1.0);
    let config = AtomConfiguration::new(vec![Vector3::zeros(), b], side).map_err(|e| e.to_string())?;
    let basis = enumerate_states(2).map_err(|e| e.to_string())?;
    let constants = CouplingConstants::default();
    let h = build_hamiltonian(&basis, &config, delta, &constants).map_err(|e| e.to_string())?;
    let coupling_mhz = fret_core::pair_coupling(&Vector3::zeros(), &b, constants.c3_forster)
        .map_err(|e| e.to_string())?;
    let psi0 = StateVector::basis_state(basis.dim(), 0);
    let mut times = Vec::with_capacity(points);
    let mut transfer = Vec::with_capacity(points);
    for k in 0..points {
        let t = t_max * k as f64 / (points - 1) as f64;
        let psi = propagate(&h, &psi0, t).map_err(|e| e.to_string())?;
        times.push(t);
        transfer.push(transfer_fraction(&psi, &basis));
    }
    Ok(PairDynamics {
        times,
        transfer,
        coupling_mhz,
    })
}

#[derive(Debug, Serialize)]
pub struct DemoSpectrum {
    pub detunings: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub fwhm_mhz: Option<f64>,
}

/// Averaged spectrum `rho_i(Δ)` on the default grid with few realizations.
pub fn spectrum(atoms: usize, realizations: usize, seed: u64, t0: f64) -> Result<DemoSpectrum, String> {
    if !(1..=MAX_DEMO_REALIZATIONS).contains(&realizations) {
        return Err(format!(
            "realizations must lie in [1, {MAX_DEMO_REALIZATIONS}] in the demo, got {realizations}"
        ));
    }
    if !(2..=4).contains(&atoms) {
        return Err(format!("the demo supports 2 to 4 atoms, got {atoms}"));
    }
    let mut req = SpectrumRequest::paper_defaults(atoms);
    req.realizations = realizations;
    req.seed = seed;
    req.t0 = t0;
    let s = simulate_spectrum(&req).map_err(|e| e.to_string())?;
    Ok(DemoSpectrum {
        fwhm_mhz: fwhm(&s).ok(),
        detunings: s.detunings,
        values: s.values,
        stderr: s.stderr,
    })
}

#[derive(Debug, Serialize)]
pub struct HistogramRow {
    pub detected: usize,
    pub none: f64,
    pub weights: Vec<(usize, f64)>,
    pub tail_mass: f64,
}

/// Interacting-atom distributions for `N = 1..=min(5, i_max)`.
pub fn histograms(n_bar: f64, efficiency: f64, i_max: usize) -> Result<Vec<HistogramRow>, String> {
    let chain = DetectionChain {
        n_bar,
        efficiency,
        i_max,
        ..DetectionChain::default()
    };
    chain.validate().map_err(|e| e.to_string())?;
    (1..=i_max.min(5))
        .map(|n| {
            let h = interaction_histogram(&chain, n).map_err(|e| e.to_string())?;
            Ok(HistogramRow {
                detected: h.detected,
                none: h.none,
                weights: h.weights,
                tail_mass: h.tail_mass,
            })
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = pairDynamics)]
pub fn pair_dynamics_js(distance: f64, theta_deg: f64, delta: f64, t_max: f64, points: usize) -> Result<String, JsValue> {
    to_js(pair_dynamics(distance, theta_deg, delta, t_max, points))
}

#[wasm_bindgen(js_name = spectrum)]
pub fn spectrum_js(atoms: usize, realizations: usize, seed: u64, t0: f64) -> Result<String, JsValue> {
    to_js(spectrum(atoms, realizations, seed, t0))
}

#[wasm_bindgen(js_name = histograms)]
pub fn histograms_js(n_bar: f64, efficiency: f64, i_max: usize) -> Result<String, JsValue> {
    to_js(histograms(n_bar, efficiency, i_max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_on_the_magic_angle_does_not_transfer() {
        let d = pair_dynamics(10.0, 54.735_610_317_245_35, 0.0, 1.0, 11).unwrap();
        assert!(d.coupling_mhz.abs() < 1e-12);
        assert!(d.transfer.iter().all(|&p| p < 1e-12));
    }

    #[test]
    fn resonant_pair_reaches_full_transfer() {
        // Perpendicular pair at 10 µm: coupling 0.3 MHz, flip at 1/(4·√2·0.3) µs.
        // One flip per pair is a transfer fraction of 1/2.
        let t = 0.25 / (2f64.sqrt() * 0.3);
        let d = pair_dynamics(10.0, 90.0, 0.0, t, 2).unwrap();
        assert!((d.coupling_mhz - 0.3).abs() < 1e-12);
        assert!((d.transfer[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn spectrum_demo_is_bounded_and_symmetric_for_two_atoms() {
        let s = spectrum(2, 20, 1, 2.0).unwrap();
        assert_eq!(s.values.len(), 121);
        assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
        for k in 0..s.values.len() {
            assert!((s.values[k] - s.values[120 - k]).abs() < 1e-9);
        }
    }

    #[test]
    fn histogram_rows_are_distributions() {
        let rows = histograms(1.05, 0.65, 8).unwrap();
        assert_eq!(rows.len(), 5);
        for r in rows {
            let total: f64 = r.none + r.weights.iter().map(|w| w.1).sum::<f64>() + r.tail_mass;
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(spectrum(2, 0, 1, 2.0).is_err());
        assert!(spectrum(7, 10, 1, 2.0).is_err());
        assert!(histograms(1.0, 1.5, 5).is_err());
        assert!(pair_dynamics(0.01, 0.0, 0.0, 1.0, 10).is_err());
    }
}
