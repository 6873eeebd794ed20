//! Line-shape metrics, the Lorentz comparison fit, and the local Stark map.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FretError, Result};
use crate::montecarlo::Spectrum;

/// Fraction of grid points (split between both ends) used for the baseline.
pub const BASELINE_FRACTION: f64 = 0.10;

/// Gradient-norm target of [`lorentz_fit`].
pub const FIT_GRAD_TOL: f64 = 1e-9;
pub const FIT_MAX_ITER: usize = 2000;

/// Median of the outermost points, `BASELINE_FRACTION / 2` from each end.
pub fn baseline(spec: &Spectrum) -> Result<f64> {
    let n = spec.len();
    if n == 0 {
        return Err(FretError::LineShape("empty spectrum".into()));
    }
    let per_side = ((n as f64 * BASELINE_FRACTION / 2.0).ceil() as usize).clamp(1, n.div_ceil(2));
    let mut edge: Vec<f64> = spec.values[..per_side]
        .iter()
        .chain(&spec.values[n - per_side..])
        .copied()
        .collect();
    edge.sort_by(f64::total_cmp);
    let m = edge.len();
    Ok(if m % 2 == 1 {
        edge[m / 2]
    } else {
        0.5 * (edge[m / 2 - 1] + edge[m / 2])
    })
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (k, &v)| if v > values[best] { k } else { best })
}

/// Baseline-subtracted maximum.
pub fn peak_amplitude(spec: &Spectrum) -> Result<f64> {
    let base = baseline(spec)?;
    Ok(spec.values[argmax(&spec.values)] - base)
}

/// Full width at half maximum above the baseline, with linearly
/// interpolated crossings on each side of the maximum.
pub fn fwhm(spec: &Spectrum) -> Result<f64> {
    let (left, right) = half_max_crossings(spec)?;
    Ok(right - left)
}

/// Detunings where the spectrum crosses half maximum, left then right.
pub fn half_max_crossings(spec: &Spectrum) -> Result<(f64, f64)> {
    let base = baseline(spec)?;
    let v = &spec.values;
    let x = &spec.detunings;
    let top = argmax(v);
    let peak = v[top] - base;
    if !(peak > 0.0) {
        return Err(FretError::LineShape("no peak above the baseline".into()));
    }
    let half = base + peak / 2.0;
    let interp = |a: usize, b: usize| x[a] + (half - v[a]) / (v[b] - v[a]) * (x[b] - x[a]);

    let left = (0..top)
        .rev()
        .find(|&j| v[j] < half)
        .map(|j| interp(j, j + 1))
        .ok_or_else(|| FretError::LineShape("no half-maximum crossing left of the peak".into()))?;
    let right = (top + 1..v.len())
        .find(|&j| v[j] < half)
        .map(|j| interp(j - 1, j))
        .ok_or_else(|| FretError::LineShape("no half-maximum crossing right of the peak".into()))?;
    Ok((left, right))
}

/// Least-squares fit of `A γ²/(γ² + (Δ - c)²) + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzFit {
    pub amplitude: f64,
    /// Half width at half maximum, MHz.
    pub gamma: f64,
    pub center: f64,
    pub offset: f64,
    pub sse: f64,
    /// `data - model` per grid point.
    pub residuals: Vec<f64>,
    /// One-sigma parameter errors `[A, γ, c, offset]` from `(JᵀJ)⁻¹·sse/dof`;
    /// zero for a pinned offset.
    pub param_stderr: [f64; 4],
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LorentzFit {
    pub fn eval(&self, detuning: f64) -> f64 {
        lorentzian(&Vector4::new(self.amplitude, self.gamma, self.center, self.offset), detuning)
    }

    /// Mean residual over grid points farther than `k·γ` from the center.
    pub fn wing_residual(&self, detunings: &[f64], k: f64) -> Option<f64> {
        let wing: Vec<f64> = detunings
            .iter()
            .zip(&self.residuals)
            .filter(|(d, _)| (**d - self.center).abs() > k * self.gamma)
            .map(|(_, r)| *r)
            .collect();
        (!wing.is_empty()).then(|| wing.iter().sum::<f64>() / wing.len() as f64)
    }
}

fn lorentzian(p: &Vector4<f64>, x: f64) -> f64 {
    let g2 = p[1] * p[1];
    let d = x - p[2];
    p[0] * g2 / (g2 + d * d) + p[3]
}

fn jacobian_row(p: &Vector4<f64>, x: f64) -> Vector4<f64> {
    let (a, g, c) = (p[0], p[1], p[2]);
    let d = x - c;
    let q = g * g + d * d;
    Vector4::new(
        g * g / q,
        2.0 * a * g * d * d / (q * q),
        2.0 * a * g * g * d / (q * q),
        1.0,
    )
}

struct Normal {
    jtj: Matrix4<f64>,
    jtr: Vector4<f64>,
    sse: f64,
}

fn normal_equations(p: &Vector4<f64>, x: &[f64], y: &[f64]) -> Normal {
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    let mut sse = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let row = jacobian_row(p, xi);
        let r = yi - lorentzian(p, xi);
        jtj += row * row.transpose();
        jtr += row * r;
        sse += r * r;
    }
    Normal { jtj, jtr, sse }
}

/// Levenberg-Marquardt fit started from the peak amplitude, half the FWHM,
/// the argmax detuning and the baseline. All four parameters are free.
pub fn lorentz_fit(spec: &Spectrum) -> Result<LorentzFit> {
    fit(spec, None)
}

/// As [`lorentz_fit`] with the offset pinned to `offset`.
///
/// A free offset can go negative to absorb the far tails, which hides how
/// heavy the wings of the data really are; pinning it to the known
/// background keeps the wing residual meaningful.
pub fn lorentz_fit_fixed_offset(spec: &Spectrum, offset: f64) -> Result<LorentzFit> {
    fit(spec, Some(offset))
}

fn fit(spec: &Spectrum, fixed_offset: Option<f64>) -> Result<LorentzFit> {
    if spec.len() < 8 {
        return Err(FretError::LineShape(format!(
            "need at least 8 points for a Lorentz fit, got {}",
            spec.len()
        )));
    }
    let x = &spec.detunings;
    let y = &spec.values;
    let start = Vector4::new(
        peak_amplitude(spec)?,
        fwhm(spec)? / 2.0,
        x[argmax(y)],
        fixed_offset.unwrap_or(baseline(spec)?),
    );
    let free = [true, true, true, fixed_offset.is_none()];
    let equations = |p: &Vector4<f64>| {
        let mut eq = normal_equations(p, x, y);
        if !free[3] {
            eq.jtj.row_mut(3).fill(0.0);
            eq.jtj.column_mut(3).fill(0.0);
            eq.jtj[(3, 3)] = 1.0;
            eq.jtr[3] = 0.0;
        }
        eq
    };

    let mut p = start;
    let mut eq = equations(&p);
    let mut damping = 1e-3;
    let mut iterations = 0;
    // SSE gradient is -2 Jᵀr.
    let grad = |eq: &Normal| 2.0 * eq.jtr.norm();
    while grad(&eq) >= FIT_GRAD_TOL {
        if iterations >= FIT_MAX_ITER || damping > 1e20 {
            return Err(FretError::FitConvergence {
                iterations,
                grad_norm: grad(&eq),
                params: [p[0], p[1], p[2], p[3]],
            });
        }
        iterations += 1;
        let mut lhs = eq.jtj;
        for k in 0..4 {
            lhs[(k, k)] += damping * eq.jtj[(k, k)].max(1e-12);
        }
        let Some(step) = lhs.cholesky().map(|c| c.solve(&eq.jtr)) else {
            damping *= 10.0;
            continue;
        };
        let trial = p + step;
        let trial_eq = equations(&trial);
        if trial_eq.sse <= eq.sse && trial[1] != 0.0 {
            p = trial;
            eq = trial_eq;
            damping = (damping / 10.0).max(1e-15);
        } else {
            damping *= 10.0;
        }
    }

    p[1] = p[1].abs();
    let dof = (x.len() - free.iter().filter(|&&f| f).count()) as f64;
    let param_stderr = eq
        .jtj
        .try_inverse()
        .map(|cov| {
            let s2 = eq.sse / dof;
            [0, 1, 2, 3].map(|k| if free[k] { (cov[(k, k)] * s2).max(0.0).sqrt() } else { 0.0 })
        })
        .unwrap_or([f64::NAN; 4]);
    let residuals = x.iter().zip(y).map(|(&xi, &yi)| yi - lorentzian(&p, xi)).collect();
    Ok(LorentzFit {
        amplitude: p[0],
        gamma: p[1],
        center: p[2],
        offset: p[3],
        sse: eq.sse,
        residuals,
        param_stderr,
        iterations,
        grad_norm: grad(&eq),
    })
}

/// Linearized detuning `Δ = slope·(F - f_res)` around the resonance field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarkMap {
    /// Resonance field, V/cm.
    pub f_res: f64,
    /// MHz per V/cm.
    pub slope: f64,
    /// Zero-field detuning, MHz. Informational only.
    pub delta0: f64,
}

/// Half-width of the field window where the linear map is trusted, V/cm.
pub const STARK_WINDOW: f64 = 0.1;

impl Default for StarkMap {
    /// 1.79 V/cm resonance; 1.94 MHz per 16.4 mV/cm gives -118.3 MHz/(V/cm).
    fn default() -> Self {
        Self {
            f_res: 1.79,
            slope: -118.3,
            delta0: 103.0,
        }
    }
}

impl StarkMap {
    pub fn validate(&self) -> Result<()> {
        if !(self.slope.is_finite() && self.slope != 0.0) {
            return Err(invalid("slope", format!("must be finite and nonzero, got {}", self.slope)));
        }
        if !self.f_res.is_finite() {
            return Err(invalid("f_res", "must be finite"));
        }
        Ok(())
    }

    fn check_field(&self, field: f64) -> Result<()> {
        if !field.is_finite() || (field - self.f_res).abs() > STARK_WINDOW + 1e-12 {
            return Err(FretError::FieldWindow {
                field,
                f_res: self.f_res,
                window: STARK_WINDOW,
            });
        }
        Ok(())
    }
}

pub fn field_to_detuning(field: f64, map: &StarkMap) -> Result<f64> {
    map.validate()?;
    map.check_field(field)?;
    Ok(map.slope * (field - map.f_res))
}

pub fn detuning_to_field(detuning: f64, map: &StarkMap) -> Result<f64> {
    map.validate()?;
    let field = map.f_res + detuning / map.slope;
    map.check_field(field)?;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::detuning_grid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lorentz(a: f64, g: f64, c: f64, o: f64) -> impl Fn(f64) -> f64 {
        move |d| a * g * g / (g * g + (d - c) * (d - c)) + o
    }

    #[test]
    fn fwhm_of_lorentzian() {
        let s = Spectrum::from_fn(detuning_grid(-200.0, 200.0, 0.01).unwrap(), lorentz(0.2, 1.0, 0.0, 0.0));
        let w = fwhm(&s).unwrap();
        assert!((w / 2.0 - 1.0).abs() < 0.005, "{w}");
    }

    #[test]
    fn fwhm_of_triangle() {
        let w = 1.5;
        let s = Spectrum::from_fn(detuning_grid(-5.0, 5.0, 0.1).unwrap(), |d| (1.0 - d.abs() / w).max(0.0));
        assert_abs_diff_eq!(fwhm(&s).unwrap(), w, epsilon = 1e-12);
        assert_abs_diff_eq!(peak_amplitude(&s).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn flat_and_one_sided_spectra() {
        let grid = detuning_grid(-5.0, 5.0, 0.5).unwrap();
        let flat = Spectrum::from_fn(grid.clone(), |_| 0.3);
        assert_eq!(peak_amplitude(&flat).unwrap(), 0.0);
        assert!(fwhm(&flat).is_err());
        let edge = Spectrum::from_fn(grid, |d| (-(d - 5.0).powi(2)).exp());
        assert!(fwhm(&edge).is_err());
    }

    proptest! {
        #[test]
        fn metrics_shift_and_scale(shift in -1.0..1.0f64, scale in 0.1..10.0f64) {
            let grid = detuning_grid(-15.0, 15.0, 0.25).unwrap();
            let base = Spectrum::from_fn(grid.clone(), lorentz(0.1, 1.0, 0.3, 0.0));
            let moved = Spectrum::from_fn(grid, |d| scale * lorentz(0.1, 1.0, 0.3, 0.0)(d) + shift);
            let (w0, a0) = (fwhm(&base).unwrap(), peak_amplitude(&base).unwrap());
            let (w1, a1) = (fwhm(&moved).unwrap(), peak_amplitude(&moved).unwrap());
            prop_assert!((w0 - w1).abs() < 1e-9);
            prop_assert!((a1 - scale * a0).abs() < 1e-9);
        }

        #[test]
        fn stark_round_trip(offset in -0.1..0.1f64) {
            let map = StarkMap::default();
            let f = map.f_res + offset;
            let d = field_to_detuning(f, &map).unwrap();
            prop_assert!((detuning_to_field(d, &map).unwrap() - f).abs() < 1e-12);
        }
    }

    #[test]
    fn self_fit_recovers_parameters() {
        let s = Spectrum::from_fn(detuning_grid(-15.0, 15.0, 0.25).unwrap(), lorentz(0.12, 0.9, 0.2, 0.01));
        let f = lorentz_fit(&s).unwrap();
        for (got, want) in [(f.amplitude, 0.12), (f.gamma, 0.9), (f.center, 0.2), (f.offset, 0.01)] {
            assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
        }
        assert!(f.grad_norm < FIT_GRAD_TOL);
        assert_eq!(f.residuals.len(), s.len());
    }

    #[test]
    fn gaussian_wings_fall_below_lorentz() {
        for sigma in [0.5, 1.0, 2.0, 3.0] {
            let s = Spectrum::from_fn(detuning_grid(-15.0, 15.0, 0.25).unwrap(), |d| {
                0.1 * (-d * d / (2.0 * sigma * sigma)).exp()
            });
            let f = lorentz_fit_fixed_offset(&s, 0.0).unwrap();
            assert_eq!(f.offset, 0.0);
            assert!(f.wing_residual(&s.detunings, 3.0).unwrap() < 0.0, "sigma {sigma}");
        }
    }

    #[test]
    fn noisy_fit_recovers_gamma() {
        let grid = detuning_grid(-15.0, 15.0, 0.25).unwrap();
        let sigma = 0.002;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let truth = lorentz(0.1, 1.0, 0.0, 0.01);
        for _ in 0..100 {
            let noisy = Spectrum::from_fn(grid.clone(), |d| {
                // Box-Muller
                let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
                truth(d) + sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            });
            let f = lorentz_fit(&noisy).unwrap();
            assert!((f.gamma - 1.0).abs() < 5.0 * f.param_stderr[1], "{} ± {}", f.gamma, f.param_stderr[1]);
        }
    }

    #[test]
    fn fit_needs_points() {
        let s = Spectrum::from_fn(vec![-1.0, 0.0, 1.0], |d| 1.0 - d.abs());
        assert!(lorentz_fit(&s).is_err());
    }

    #[test]
    fn stark_examples() {
        let map = StarkMap::default();
        assert_eq!(field_to_detuning(1.79, &map).unwrap(), 0.0);
        assert_abs_diff_eq!(field_to_detuning(1.79 - 0.0164, &map).unwrap(), 1.94, epsilon = 1e-3);
        assert!(matches!(field_to_detuning(1.95, &map), Err(FretError::FieldWindow { .. })));
        assert!(detuning_to_field(50.0, &map).is_err());
        let zero = StarkMap { slope: 0.0, ..map };
        assert!(field_to_detuning(1.79, &zero).is_err());
    }
}
