//! Realization-averaged spectra `ρ_i(Δ)` over random atom geometries.
//!
//! Each realization owns a ChaCha stream addressed by `(seed, r)`, so results
//! do not depend on scheduling. Per-realization rows are reduced in ascending
//! `r` order, which makes threaded runs bitwise identical to sequential ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{enumerate_states, CollectiveBasis};
use crate::error::{invalid, FretError, Result};
use crate::evolution::{propagate, transfer_fraction, StateVector};
use crate::interaction::{build_hamiltonian, sample_positions, CouplingConstants};

/// Random stream for one realization.
pub type RealizationStream = ChaCha8Rng;

/// Derives the stream of realization `r` from the master seed. The key comes
/// from `seed`, the ChaCha stream id is `r`.
pub fn realization_stream(seed: u64, r: u64) -> RealizationStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

/// Evenly spaced grid from `min` to `max` inclusive. The last point is
/// dropped if it would overshoot `max` by more than a rounding error.
pub fn detuning_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) {
        return Err(invalid("grid", "bounds and step must be finite"));
    }
    if step <= 0.0 {
        return Err(invalid("grid_step", format!("must be > 0, got {step}")));
    }
    if max < min {
        return Err(invalid("grid_max", format!("{max} is below grid_min {min}")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| min + k as f64 * step).collect())
}

/// Everything needed to compute one `ρ_i` spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRequest {
    pub atoms: usize,
    /// MHz, ascending.
    pub detunings: Vec<f64>,
    /// Interaction time, µs.
    pub t0: f64,
    /// Cube side, µm.
    pub side: f64,
    pub realizations: usize,
    pub constants: CouplingConstants,
    pub seed: u64,
}

impl SpectrumRequest {
    /// Defaults used for the two-to-five atom spectra: 0.515 µs, 18 µm cube,
    /// 500 realizations, ±15 MHz at 0.25 MHz.
    pub fn paper_defaults(atoms: usize) -> Self {
        Self {
            atoms,
            detunings: detuning_grid(-15.0, 15.0, 0.25).expect("static grid"),
            t0: 0.515,
            side: 18.0,
            realizations: 500,
            constants: CouplingConstants::default(),
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        enumerate_states(self.atoms)?;
        if self.detunings.is_empty() {
            return Err(invalid("detunings", "grid is empty"));
        }
        if self.detunings.iter().any(|d| !d.is_finite()) {
            return Err(invalid("detunings", "all detunings must be finite"));
        }
        if self.detunings.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("detunings", "grid must be strictly ascending"));
        }
        if !(self.t0.is_finite() && self.t0 >= 0.0) {
            return Err(invalid("t0", format!("must be >= 0, got {}", self.t0)));
        }
        if !(self.side.is_finite() && self.side > 0.0) {
            return Err(invalid("side", format!("must be > 0, got {}", self.side)));
        }
        if self.realizations == 0 {
            return Err(invalid("realizations", "need at least one realization"));
        }
        self.constants.validate()
    }
}

/// A spectrum on a detuning grid with per-point Monte-Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub detunings: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// The request that produced it, for simulated spectra.
    pub meta: Option<SpectrumRequest>,
}

impl Spectrum {
    pub fn new(detunings: Vec<f64>, values: Vec<f64>, stderr: Vec<f64>) -> Result<Self> {
        if detunings.len() != values.len() || values.len() != stderr.len() {
            return Err(FretError::DimensionMismatch(format!(
                "{} detunings, {} values, {} stderr",
                detunings.len(),
                values.len(),
                stderr.len()
            )));
        }
        Ok(Self {
            detunings,
            values,
            stderr,
            meta: None,
        })
    }

    /// Noise-free spectrum sampled from `f`.
    pub fn from_fn(detunings: Vec<f64>, mut f: impl FnMut(f64) -> f64) -> Self {
        let values = detunings.iter().map(|&d| f(d)).collect();
        let stderr = vec![0.0; detunings.len()];
        Self {
            detunings,
            values,
            stderr,
            meta: None,
        }
    }

    pub fn zeros(detunings: Vec<f64>) -> Self {
        Self::from_fn(detunings, |_| 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value and stderr at the grid point closest to `detuning`.
    pub fn at(&self, detuning: f64) -> (f64, f64) {
        let k = self
            .detunings
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - detuning).abs().total_cmp(&(b.1 - detuning).abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        (self.values[k], self.stderr[k])
    }

    pub fn same_grid(&self, other: &Spectrum) -> bool {
        self.detunings == other.detunings
    }
}

/// Computes `ρ_i` with the global rayon pool (or sequentially without the
/// `parallel` feature).
pub fn simulate_spectrum(req: &SpectrumRequest) -> Result<Spectrum> {
    simulate_spectrum_with(req, 0)
}

/// As [`simulate_spectrum`], on `workers` threads (`0` = default pool,
/// `1` = sequential). Output does not depend on `workers`.
pub fn simulate_spectrum_with(req: &SpectrumRequest, workers: usize) -> Result<Spectrum> {
    req.validate()?;
    let basis = enumerate_states(req.atoms)?;
    let rows = run_realizations(req, &basis, workers)?;
    Ok(reduce(req, rows))
}

fn one_realization(req: &SpectrumRequest, basis: &CollectiveBasis, r: usize) -> Result<Vec<f64>> {
    let wrap = |detuning: f64| {
        move |e: FretError| FretError::Realization {
            realization: r,
            detuning,
            source: Box::new(e),
        }
    };
    let first = req.detunings[0];
    let mut rng = realization_stream(req.seed, r as u64);
    let config = sample_positions(req.atoms, req.side, &mut rng).map_err(wrap(first))?;
    let mut h = build_hamiltonian(basis, &config, first, &req.constants).map_err(wrap(first))?;
    let psi0 = StateVector::basis_state(basis.dim(), 0);
    req.detunings
        .iter()
        .map(|&delta| {
            h.retune(delta);
            let psi = propagate(&h, &psi0, req.t0).map_err(wrap(delta))?;
            Ok(transfer_fraction(&psi, basis))
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn run_realizations(
    req: &SpectrumRequest,
    basis: &CollectiveBasis,
    workers: usize,
) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    if workers == 1 {
        return (0..req.realizations)
            .map(|r| one_realization(req, basis, r))
            .collect();
    }
    let job = || {
        (0..req.realizations)
            .into_par_iter()
            .map(|r| one_realization(req, basis, r))
            .collect::<Result<Vec<_>>>()
    };
    if workers == 0 {
        job()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?
            .install(job)
    }
}

#[cfg(not(feature = "parallel"))]
fn run_realizations(
    req: &SpectrumRequest,
    basis: &CollectiveBasis,
    _workers: usize,
) -> Result<Vec<Vec<f64>>> {
    (0..req.realizations)
        .map(|r| one_realization(req, basis, r))
        .collect()
}

fn reduce(req: &SpectrumRequest, rows: Vec<Vec<f64>>) -> Spectrum {
    let n = rows.len() as f64;
    let points = req.detunings.len();
    let mut mean = vec![0.0; points];
    for row in &rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; points];
    for row in &rows {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let stderr = var
        .iter()
        .map(|v| {
            if rows.len() > 1 {
                (v / (n - 1.0)).sqrt() / n.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Spectrum {
        detunings: req.detunings.clone(),
        values: mean,
        stderr,
        meta: Some(req.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small(atoms: usize, realizations: usize) -> SpectrumRequest {
        SpectrumRequest {
            detunings: detuning_grid(-6.0, 6.0, 0.5).unwrap(),
            realizations,
            ..SpectrumRequest::paper_defaults(atoms)
        }
    }

    #[test]
    fn grid_construction() {
        let g = detuning_grid(-15.0, 15.0, 0.25).unwrap();
        assert_eq!(g.len(), 121);
        assert_eq!(g[60], 0.0);
        assert_eq!(*g.last().unwrap(), 15.0);
        assert_eq!(detuning_grid(0.0, 0.0, 1.0).unwrap(), vec![0.0]);
        assert!(detuning_grid(1.0, 0.0, 0.1).is_err());
        assert!(detuning_grid(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |seed, r| {
            let mut s = realization_stream(seed, r);
            (0..16).map(|_| s.random::<u64>()).collect::<Vec<_>>()
        };
        assert_eq!(draw(42, 3), draw(42, 3));
        assert_ne!(draw(42, 3), draw(42, 4));
        assert_ne!(draw(42, 3), draw(43, 3));
    }

    #[test]
    fn adjacent_streams_pass_independence_test() {
        // 10x10 contingency table of paired draws from streams 0 and 1.
        let mut a = realization_stream(42, 0);
        let mut b = realization_stream(42, 1);
        let bins = 10;
        let n = 10_000;
        let mut table = vec![0.0f64; bins * bins];
        for _ in 0..n {
            let x = (a.random::<f64>() * bins as f64) as usize;
            let y = (b.random::<f64>() * bins as f64) as usize;
            table[x * bins + y] += 1.0;
        }
        let rows: Vec<f64> = (0..bins).map(|x| (0..bins).map(|y| table[x * bins + y]).sum()).collect();
        let cols: Vec<f64> = (0..bins).map(|y| (0..bins).map(|x| table[x * bins + y]).sum()).collect();
        let mut chi2 = 0.0;
        for x in 0..bins {
            for y in 0..bins {
                let e = rows[x] * cols[y] / n as f64;
                chi2 += (table[x * bins + y] - e).powi(2) / e;
            }
        }
        let dof = ((bins - 1) * (bins - 1)) as f64;
        let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2 = {chi2}, p = {p}");
    }

    #[test]
    fn seeds_change_geometry() {
        let mut a = realization_stream(1, 0);
        let mut b = realization_stream(2, 0);
        let pa = sample_positions(2, 18.0, &mut a).unwrap();
        let pb = sample_positions(2, 18.0, &mut b).unwrap();
        assert_ne!(pa, pb);
    }

    #[test]
    fn deterministic_across_workers() {
        let req = small(3, 24);
        let seq = simulate_spectrum_with(&req, 1).unwrap();
        let par = simulate_spectrum_with(&req, 4).unwrap();
        let again = simulate_spectrum_with(&req, 3).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq, again);
        let one = small(2, 1);
        let x = simulate_spectrum(&one).unwrap();
        assert_eq!(x, simulate_spectrum(&one).unwrap());
        assert!(x.stderr.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn two_atom_spectrum_is_symmetric() {
        let req = small(2, 40);
        let s = simulate_spectrum(&req).unwrap();
        let n = s.len();
        for k in 0..n {
            assert_eq!(s.detunings[k], -s.detunings[n - 1 - k]);
            assert!((s.values[k] - s.values[n - 1 - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn values_bounded() {
        for atoms in 2..=4 {
            let s = simulate_spectrum(&small(atoms, 10)).unwrap();
            assert!(s.values.iter().all(|&v| (0.0..=0.5 + 1e-12).contains(&v)));
            assert!(s.stderr.iter().all(|&e| e >= 0.0));
            assert_eq!(s.meta.as_ref().unwrap().atoms, atoms);
        }
    }

    #[test]
    fn request_validation() {
        let mut req = small(2, 5);
        req.atoms = 9;
        assert!(matches!(req.validate(), Err(FretError::AtomCount { .. })));
        let mut req = small(2, 5);
        req.realizations = 0;
        assert!(req.validate().is_err());
        let mut req = small(2, 5);
        req.detunings = vec![1.0, 0.0];
        assert!(req.validate().is_err());
        let mut req = small(2, 5);
        req.detunings = vec![];
        assert!(req.validate().is_err());
        let mut req = small(2, 5);
        req.constants.c3_exchange_s = -1.0;
        assert!(req.validate().is_err());
    }
}
