//! From ideal multiplicity spectra `ρ_k` to post-selected signals `S_N`.
//!
//! Two mixing stages are applied. A binomial stage accounts for atoms excited
//! into the non-interacting 37P(1/2) level: of `i` excited atoms only `k` end
//! up in the interacting level. A Poisson stage accounts for the finite
//! detection efficiency: `N` detected atoms come from `i >= N` excited ones
//! with weight `Pois(i - N; n̄(1 - T))`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::basis::MAX_ATOMS;
use crate::error::{invalid, FretError, Result};
use crate::montecarlo::Spectrum;

/// Poisson tail mass above which [`detection_mix`] logs a warning.
pub const TAIL_WARN: f64 = 1e-3;

/// Ideal spectra keyed by the number of interacting atoms.
pub type SpectrumSet = BTreeMap<usize, Spectrum>;

/// Detector and excitation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionChain {
    /// Mean number of Rydberg atoms excited per pulse.
    pub n_bar: f64,
    /// Detection efficiency `T`.
    pub efficiency: f64,
    /// Additive non-resonant background.
    pub rho_bg: f64,
    /// Probability that an excited atom lands in 37P(3/2).
    pub p32: f64,
    /// Largest multiplicity kept in the sums.
    pub i_max: usize,
}

impl Default for DetectionChain {
    fn default() -> Self {
        Self {
            n_bar: 1.05,
            efficiency: 0.65,
            rho_bg: 0.01,
            p32: 0.52,
            i_max: 5,
        }
    }
}

impl DetectionChain {
    /// Mean number of excited but undetected atoms, `n̄(1 - T)`.
    pub fn lambda(&self) -> f64 {
        self.n_bar * (1.0 - self.efficiency)
    }

    pub fn p12(&self) -> f64 {
        1.0 - self.p32
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_bar.is_finite() && self.n_bar >= 0.0) {
            return Err(invalid("n_bar", format!("must be >= 0, got {}", self.n_bar)));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid(
                "efficiency",
                format!("must lie in (0, 1], got {}", self.efficiency),
            ));
        }
        if !self.rho_bg.is_finite() {
            return Err(invalid("rho_bg", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.p32) {
            return Err(invalid("p32", format!("must lie in [0, 1], got {}", self.p32)));
        }
        if !(2..=MAX_ATOMS).contains(&self.i_max) {
            return Err(invalid(
                "i_max",
                format!("must lie in [2, {MAX_ATOMS}], got {}", self.i_max),
            ));
        }
        Ok(())
    }
}

/// `e^{-λ} λ^j / j!`
pub fn poisson_weight(j: usize, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    let log = -lambda + j as f64 * lambda.ln() - ln_factorial(j);
    log.exp()
}

/// `C(n, k) p^k (1 - p)^(n - k)`
pub fn binomial_weight(k: usize, n: usize, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    binomial_coefficient(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

fn binomial_coefficient(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Poisson mass beyond `j_max`.
fn poisson_tail(j_max: usize, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut tail = 0.0;
    let mut j = j_max + 1;
    loop {
        let w = poisson_weight(j, lambda);
        tail += w;
        if w < 1e-18 * tail.max(1e-300) || j > j_max + 400 {
            break;
        }
        j += 1;
    }
    tail
}

/// A mixed spectrum together with the probability mass its truncation dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixed {
    pub spectrum: Spectrum,
    pub truncation_mass: f64,
}

fn common_grid<'a>(spectra: impl IntoIterator<Item = (&'a usize, &'a Spectrum)>) -> Result<Vec<f64>> {
    let mut grid: Option<&Vec<f64>> = None;
    for (k, s) in spectra {
        match grid {
            None => grid = Some(&s.detunings),
            Some(g) if *g != s.detunings => {
                return Err(FretError::GridMismatch(format!(
                    "spectrum for {k} atoms has a different detuning grid"
                )))
            }
            _ => {}
        }
    }
    grid.cloned()
        .ok_or_else(|| invalid("spectra", "no input spectra"))
}

/// Accumulates `Σ w·s` pointwise; stderr adds in quadrature.
struct Accumulator {
    values: Vec<f64>,
    var: Vec<f64>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            var: vec![0.0; len],
        }
    }

    fn add(&mut self, weight: f64, s: &Spectrum) {
        for k in 0..self.values.len() {
            self.values[k] += weight * s.values[k];
            self.var[k] += (weight * s.stderr[k]).powi(2);
        }
    }

    fn finish(self, grid: Vec<f64>, offset: f64) -> Spectrum {
        Spectrum {
            detunings: grid,
            values: self.values.into_iter().map(|v| v + offset).collect(),
            stderr: self.var.into_iter().map(f64::sqrt).collect(),
            meta: None,
        }
    }
}

/// Binomial dilution by non-interacting atoms:
/// `ρ̃_i = Σ_{k=2}^{i} ρ_k C(i,k) p32^k (1-p32)^(i-k)`.
///
/// `rho` must hold every `k` from 2 up to `min(i, max key)`; terms above the
/// largest key are dropped and their binomial weight is reported.
pub fn fine_structure_mix(rho: &SpectrumSet, atoms: usize, p32: f64) -> Result<Mixed> {
    if atoms < 2 {
        return Err(invalid("atoms", format!("need at least 2, got {atoms}")));
    }
    if !(0.0..=1.0).contains(&p32) {
        return Err(invalid("p32", format!("must lie in [0, 1], got {p32}")));
    }
    let grid = common_grid(rho)?;
    let k_max = *rho.keys().next_back().expect("non-empty after common_grid");
    let mut acc = Accumulator::new(grid.len());
    let mut truncation_mass = 0.0;
    for k in 2..=atoms {
        let w = binomial_weight(k, atoms, p32);
        if k > k_max {
            truncation_mass += w;
            continue;
        }
        let s = rho.get(&k).ok_or(FretError::MissingSpectrum(k))?;
        acc.add(w, s);
    }
    Ok(Mixed {
        spectrum: acc.finish(grid, 0.0),
        truncation_mass,
    })
}

/// Post-selected signal for `detected` atoms:
/// `S_N = ρ_bg + e^{-λ} Σ_{i>=N} ρ̃_i λ^(i-N)/(i-N)!`, truncated at `i_max`.
///
/// `rho_tilde` holds the diluted spectra for `i = max(N, 2) ..= i_max`. A
/// single atom cannot undergo a Förster flip, so `i = 1` contributes nothing.
pub fn detection_mix(rho_tilde: &SpectrumSet, chain: &DetectionChain, detected: usize) -> Result<Mixed> {
    chain.validate()?;
    if detected == 0 {
        return Err(invalid("detected", "N must be >= 1"));
    }
    if detected > chain.i_max {
        return Err(invalid(
            "detected",
            format!("N = {detected} exceeds i_max = {}", chain.i_max),
        ));
    }
    let needed: Vec<usize> = (detected.max(2)..=chain.i_max).collect();
    for i in &needed {
        if !rho_tilde.contains_key(i) {
            return Err(FretError::MissingSpectrum(*i));
        }
    }
    let grid = common_grid(needed.iter().map(|i| (i, &rho_tilde[i])))?;
    let lambda = chain.lambda();
    let mut acc = Accumulator::new(grid.len());
    for &i in &needed {
        acc.add(poisson_weight(i - detected, lambda), &rho_tilde[&i]);
    }
    let tail = poisson_tail(chain.i_max - detected, lambda);
    if tail > TAIL_WARN {
        log::warn!(
            "S_{detected}: Poisson tail beyond i_max = {} carries {tail:.2e} of the weight",
            chain.i_max
        );
    }
    Ok(Mixed {
        spectrum: acc.finish(grid, chain.rho_bg),
        truncation_mass: tail,
    })
}

/// Full chain: binomial dilution of every `ρ_k`, then Poisson mixing.
pub fn observe(rho: &SpectrumSet, chain: &DetectionChain, detected: usize) -> Result<Mixed> {
    chain.validate()?;
    let mut diluted = SpectrumSet::new();
    for i in detected.max(2)..=chain.i_max {
        diluted.insert(i, fine_structure_mix(rho, i, chain.p32)?.spectrum);
    }
    detection_mix(&diluted, chain, detected)
}

/// Distribution of the number of interacting atoms behind a detected count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionHistogram {
    pub detected: usize,
    /// No resonant pair among the excited atoms.
    pub none: f64,
    /// `(k, weight)` for `k = 2 ..= i_max`.
    pub weights: Vec<(usize, f64)>,
    /// Poisson mass dropped by the `i_max` truncation.
    pub tail_mass: f64,
}

impl InteractionHistogram {
    pub fn weight(&self, k: usize) -> f64 {
        self.weights
            .iter()
            .find(|(kk, _)| *kk == k)
            .map_or(0.0, |(_, w)| *w)
    }

    pub fn resonant_total(&self) -> f64 {
        self.weights.iter().map(|(_, w)| w).sum()
    }

    /// Share of `k` within the resonant (`k >= 2`) weight.
    pub fn resonant_share(&self, k: usize) -> f64 {
        let total = self.resonant_total();
        if total > 0.0 {
            self.weight(k) / total
        } else {
            0.0
        }
    }

    pub fn total(&self) -> f64 {
        self.none + self.resonant_total() + self.tail_mass
    }
}

/// `weight(k) = Σ_{i >= max(N, k)} Pois(i - N; λ) Binom(k; i, p32)`.
pub fn interaction_histogram(chain: &DetectionChain, detected: usize) -> Result<InteractionHistogram> {
    chain.validate()?;
    if detected == 0 {
        return Err(invalid("detected", "N must be >= 1"));
    }
    if detected > chain.i_max {
        return Err(invalid(
            "detected",
            format!("N = {detected} exceeds i_max = {}", chain.i_max),
        ));
    }
    let lambda = chain.lambda();
    let mut weights: Vec<(usize, f64)> = (2..=chain.i_max).map(|k| (k, 0.0)).collect();
    let mut none = 0.0;
    for i in detected..=chain.i_max {
        let pois = poisson_weight(i - detected, lambda);
        for k in 0..=i {
            let w = pois * binomial_weight(k, i, chain.p32);
            if k < 2 {
                none += w;
            } else {
                weights[k - 2].1 += w;
            }
        }
    }
    let tail_mass = poisson_tail(chain.i_max - detected, lambda);
    if tail_mass > TAIL_WARN {
        log::warn!("histogram N = {detected}: tail mass {tail_mass:.2e} beyond i_max");
    }
    Ok(InteractionHistogram {
        detected,
        none,
        weights,
        tail_mass,
    })
}

/// Mean excited count and detection efficiency recovered from the 1-to-2 atom
/// amplitude ratio `alpha` and the measured mean detected count `n̄T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub n_bar: f64,
    pub efficiency: f64,
}

/// `n̄ = α/(1-α) + n̄T`, `T = n̄T / n̄`.
pub fn extract_params(alpha: f64, n_bar_t: f64) -> Result<Calibration> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(FretError::Calibration(format!("alpha must be >= 0, got {alpha}")));
    }
    if alpha >= 1.0 {
        return Err(FretError::Calibration(format!(
            "alpha = {alpha} >= 1: the one-atom amplitude cannot reach the two-atom one"
        )));
    }
    if !(n_bar_t.is_finite() && n_bar_t > 0.0) {
        return Err(FretError::Calibration(format!(
            "mean detected count must be > 0, got {n_bar_t}"
        )));
    }
    let n_bar = alpha / (1.0 - alpha) + n_bar_t;
    let efficiency = n_bar_t / n_bar;
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(FretError::Calibration(format!(
            "derived efficiency {efficiency} outside (0, 1]"
        )));
    }
    Ok(Calibration { n_bar, efficiency })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid() -> Vec<f64> {
        vec![-2.0, -1.0, 0.0, 1.0, 2.0]
    }

    fn fake_set(i_max: usize) -> SpectrumSet {
        (2..=i_max)
            .map(|k| {
                let s = Spectrum::from_fn(grid(), |d| 0.05 * k as f64 / (1.0 + d * d));
                (k, s)
            })
            .collect()
    }

    #[test]
    fn fine_structure_examples() {
        let set = fake_set(5);
        let identity = fine_structure_mix(&set, 2, 1.0).unwrap();
        assert_eq!(identity.spectrum.values, set[&2].values);

        let diluted = fine_structure_mix(&set, 2, 0.52).unwrap();
        for (a, b) in diluted.spectrum.values.iter().zip(&set[&2].values) {
            assert_abs_diff_eq!(*a, 0.2704 * b, epsilon = 1e-15);
        }

        for i in 2..=5 {
            let zero = fine_structure_mix(&set, i, 0.0).unwrap();
            assert!(zero.spectrum.values.iter().all(|&v| v == 0.0));
        }

        let truncated = fine_structure_mix(&fake_set(3), 5, 0.5).unwrap();
        let dropped = binomial_weight(4, 5, 0.5) + binomial_weight(5, 5, 0.5);
        assert_abs_diff_eq!(truncated.truncation_mass, dropped, epsilon = 1e-15);
    }

    #[test]
    fn fine_structure_errors() {
        let mut set = fake_set(4);
        set.insert(3, Spectrum::zeros(vec![0.0, 1.0]));
        assert!(matches!(
            fine_structure_mix(&set, 4, 0.5),
            Err(FretError::GridMismatch(_))
        ));
        let mut holey = fake_set(4);
        holey.remove(&3);
        assert_eq!(
            fine_structure_mix(&holey, 4, 0.5).unwrap_err(),
            FretError::MissingSpectrum(3)
        );
    }

    #[test]
    fn poisson_weights_for_paper_chain() {
        let chain = DetectionChain::default();
        assert_abs_diff_eq!(chain.lambda(), 0.3675, epsilon = 1e-12);
        let expect = [0.6924, 0.2545, 0.0468, 0.0057];
        for (j, e) in expect.iter().enumerate() {
            assert_abs_diff_eq!(poisson_weight(j, chain.lambda()), *e, epsilon = 1e-4);
        }
    }

    #[test]
    fn perfect_detector_selects_own_multiplicity() {
        let chain = DetectionChain {
            efficiency: 1.0,
            ..DetectionChain::default()
        };
        let set = fake_set(5);
        for n in 2..=5 {
            let s = detection_mix(&set, &chain, n).unwrap();
            for (a, b) in s.spectrum.values.iter().zip(&set[&n].values) {
                assert_abs_diff_eq!(*a, chain.rho_bg + b, epsilon = 1e-15);
            }
            assert_eq!(s.truncation_mass, 0.0);
        }
        let s1 = detection_mix(&set, &chain, 1).unwrap();
        assert!(s1.spectrum.values.iter().all(|&v| v == chain.rho_bg));
    }

    #[test]
    fn zero_input_gives_background() {
        let chain = DetectionChain::default();
        let set: SpectrumSet = (2..=5).map(|k| (k, Spectrum::zeros(grid()))).collect();
        for n in 1..=5 {
            let s = observe(&set, &chain, n).unwrap();
            assert!(s.spectrum.values.iter().all(|&v| v == chain.rho_bg));
        }
    }

    #[test]
    fn tail_metric() {
        let chain = DetectionChain::default();
        let set = fake_set(5);
        for n in 1..=2 {
            let t = detection_mix(&set, &chain, n).unwrap().truncation_mass;
            let direct: f64 = 1.0 - (0..=5 - n).map(|j| poisson_weight(j, chain.lambda())).sum::<f64>();
            assert_abs_diff_eq!(t, direct, epsilon = 1e-12);
            assert!(t < 1e-3);
        }
        assert!(detection_mix(&set, &chain, 6).is_err());
        assert!(detection_mix(&set, &chain, 0).is_err());
    }

    #[test]
    fn histogram_examples() {
        let chain = DetectionChain {
            efficiency: 1.0,
            p32: 1.0,
            ..DetectionChain::default()
        };
        let h = interaction_histogram(&chain, 3).unwrap();
        assert_abs_diff_eq!(h.weight(3), 1.0, epsilon = 1e-15);
        assert_eq!(h.none, 0.0);
        assert_eq!(h.weight(2) + h.weight(4) + h.weight(5), 0.0);

        let chain = DetectionChain {
            efficiency: 1.0,
            p32: 0.5,
            ..DetectionChain::default()
        };
        let h = interaction_histogram(&chain, 2).unwrap();
        assert_abs_diff_eq!(h.weight(2), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(h.none, 0.75, epsilon = 1e-15);

        let h = interaction_histogram(&DetectionChain::default(), 1).unwrap();
        assert_abs_diff_eq!(h.weight(2), 0.0893, epsilon = 1e-4);
        assert_abs_diff_eq!(h.weight(3), 0.0083, epsilon = 1e-4);
        assert!(h.resonant_share(2) >= 0.85);
    }

    #[test]
    fn calibration_examples() {
        let c = extract_params(0.27, 0.65).unwrap();
        assert_abs_diff_eq!(c.n_bar, 0.27 / 0.73 + 0.65, epsilon = 1e-15);
        assert_abs_diff_eq!(c.n_bar, 1.0199, epsilon = 1e-4);
        assert_abs_diff_eq!(c.efficiency, 0.637, epsilon = 5e-4);

        let c = extract_params(0.0, 0.65).unwrap();
        assert_eq!((c.n_bar, c.efficiency), (0.65, 1.0));

        let c = extract_params(0.5, 0.5).unwrap();
        assert_abs_diff_eq!(c.n_bar, 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.efficiency, 1.0 / 3.0, epsilon = 1e-15);

        assert!(extract_params(1.0, 0.5).is_err());
        assert!(extract_params(1.3, 0.5).is_err());
        assert!(extract_params(0.2, 0.0).is_err());
    }

    #[test]
    fn chain_validation() {
        let bad = [
            DetectionChain { efficiency: 0.0, ..Default::default() },
            DetectionChain { efficiency: 1.2, ..Default::default() },
            DetectionChain { p32: 1.5, ..Default::default() },
            DetectionChain { n_bar: -0.1, ..Default::default() },
            DetectionChain { i_max: 1, ..Default::default() },
            DetectionChain { i_max: 9, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    proptest! {
        #[test]
        fn histogram_is_a_distribution(
            n_bar in 0.0..3.0f64,
            t in 0.05..=1.0f64,
            p in 0.0..=1.0f64,
            i_max in 2usize..=8,
            n in 1usize..=8,
        ) {
            prop_assume!(n <= i_max);
            let chain = DetectionChain { n_bar, efficiency: t, p32: p, i_max, rho_bg: 0.0 };
            let h = interaction_histogram(&chain, n).unwrap();
            prop_assert!(h.none >= 0.0);
            prop_assert!(h.weights.iter().all(|(_, w)| *w >= 0.0));
            prop_assert!((h.total() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn detection_mix_is_linear(scale in 0.0..5.0f64, n in 1usize..=5) {
            let chain = DetectionChain::default();
            let set = fake_set(5);
            let scaled: SpectrumSet = set
                .iter()
                .map(|(k, s)| (*k, Spectrum::from_fn(s.detunings.clone(), |d| {
                    scale * s.values[s.detunings.iter().position(|&x| x == d).unwrap()]
                })))
                .collect();
            let a = observe(&set, &chain, n).unwrap().spectrum;
            let b = observe(&scaled, &chain, n).unwrap().spectrum;
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!(((y - chain.rho_bg) - scale * (x - chain.rho_bg)).abs() < 1e-12);
            }
        }
    }
}
