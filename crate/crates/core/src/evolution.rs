//! Time evolution under a static interaction Hamiltonian.
//!
//! Phase convention: a level of energy `E` (MHz) acquires `exp(-i·2π·E·t)`
//! after `t` µs.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::basis::CollectiveBasis;
use crate::error::{invalid, FretError, Result};
use crate::interaction::InteractionHamiltonian;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Largest `2π·‖H‖·dt` taken by [`propagate_rk4`].
pub const RK4_PHASE_STEP: f64 = 0.01;
/// Smallest step [`propagate_rk4`] accepts, µs.
pub const RK4_MIN_STEP: f64 = 1e-9;

/// Amplitudes over a collective basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(DVector<Complex64>);

impl StateVector {
    /// Normalizes `amplitudes`; rejects the zero vector.
    pub fn new(amplitudes: DVector<Complex64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(invalid("amplitudes", "state must have finite nonzero norm"));
        }
        Ok(Self(amplitudes.unscale(norm)))
    }

    /// The basis state with ordinal `index`.
    pub fn basis_state(dim: usize, index: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[index] = Complex64::new(1.0, 0.0);
        Self(v)
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// Largest componentwise amplitude difference.
    pub fn max_deviation(&self, other: &StateVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

fn check(h: &InteractionHamiltonian, psi0: &StateVector, t: f64) -> Result<()> {
    if h.dim() != psi0.dim() {
        return Err(FretError::DimensionMismatch(format!(
            "Hamiltonian dim {} vs state dim {}",
            h.dim(),
            psi0.dim()
        )));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(invalid("t", format!("must be finite and >= 0, got {t}")));
    }
    Ok(())
}

fn eigen_failure(h: &InteractionHamiltonian) -> FretError {
    FretError::Eigen {
        dim: h.dim(),
        max_abs: h.entries().iter().map(|z| z.norm()).fold(0.0, f64::max),
        finite: h.entries().iter().all(|z| z.re.is_finite() && z.im.is_finite()),
    }
}

/// Exact propagation through the Hermitian eigendecomposition of `h`.
pub fn propagate(h: &InteractionHamiltonian, psi0: &StateVector, t: f64) -> Result<StateVector> {
    check(h, psi0, t)?;
    if t == 0.0 {
        return Ok(psi0.clone());
    }
    let psi = psi0.amplitudes();
    let out = if h.is_real() {
        let real: DMatrix<f64> = h.entries().map(|z| z.re);
        let eig = SymmetricEigen::try_new(real, EIGEN_EPS, EIGEN_MAX_ITER)
            .ok_or_else(|| eigen_failure(h))?;
        let u = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
        evolve_in_eigenbasis(&u, eig.eigenvalues.as_slice(), psi, t)
    } else {
        let eig = SymmetricEigen::try_new(h.entries().clone(), EIGEN_EPS, EIGEN_MAX_ITER)
            .ok_or_else(|| eigen_failure(h))?;
        evolve_in_eigenbasis(&eig.eigenvectors, eig.eigenvalues.as_slice(), psi, t)
    };
    Ok(StateVector(out))
}

fn evolve_in_eigenbasis(
    u: &DMatrix<Complex64>,
    energies: &[f64],
    psi: &DVector<Complex64>,
    t: f64,
) -> DVector<Complex64> {
    let mut coeffs = u.ad_mul(psi);
    for (c, &e) in coeffs.iter_mut().zip(energies) {
        *c *= Complex64::from_polar(1.0, -TAU * e * t);
    }
    u * coeffs
}

/// Fixed-step classic RK4 integration of `dψ/dt = -i·2π·H·ψ`.
///
/// The step keeps `2π·‖H‖·dt <= RK4_PHASE_STEP`. The result is not
/// renormalized.
pub fn propagate_rk4(
    h: &InteractionHamiltonian,
    psi0: &StateVector,
    t: f64,
) -> Result<StateVector> {
    check(h, psi0, t)?;
    if t == 0.0 {
        return Ok(psi0.clone());
    }
    let norm = h.max_row_norm();
    let steps = ((TAU * norm * t) / RK4_PHASE_STEP).ceil().max(1.0);
    let dt = t / steps;
    if dt < RK4_MIN_STEP {
        return Err(FretError::StepUnderflow { dt, norm });
    }
    let gen: DMatrix<Complex64> = h.entries() * Complex64::new(0.0, -TAU);
    let half = Complex64::from(dt / 2.0);
    let full = Complex64::from(dt);
    let sixth = Complex64::from(dt / 6.0);
    let two = Complex64::from(2.0);
    let mut psi = psi0.amplitudes().clone();
    for _ in 0..steps as usize {
        let k1 = &gen * &psi;
        let k2 = &gen * (&psi + &k1 * half);
        let k3 = &gen * (&psi + &k2 * half);
        let k4 = &gen * (&psi + &k3 * full);
        psi += (k1 + k2 * two + k3 * two + k4) * sixth;
    }
    Ok(StateVector(psi))
}

/// Fraction of atoms found in 37S: `Σ |c_k|²·m_k / i`.
pub fn transfer_fraction(psi: &StateVector, basis: &CollectiveBasis) -> f64 {
    let atoms = basis.atoms() as f64;
    psi.amplitudes()
        .iter()
        .zip(basis.states())
        .map(|(c, s)| c.norm_sqr() * s.flip_count() as f64)
        .sum::<f64>()
        / atoms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{enumerate_states, AtomLevel};
    use crate::interaction::{build_hamiltonian, sample_positions, AtomConfiguration, CouplingConstants};
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn transverse_pair(delta: f64) -> (CollectiveBasis, InteractionHamiltonian) {
        let basis = enumerate_states(2).unwrap();
        let cfg = AtomConfiguration::new(
            vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(10.0, 0.0, 0.0)],
            18.0,
        )
        .unwrap();
        let h = build_hamiltonian(&basis, &cfg, delta, &CouplingConstants::default()).unwrap();
        (basis, h)
    }

    fn random_hermitian(dim: usize, scale: f64, rng: &mut impl Rng) -> InteractionHamiltonian {
        let mut m = DMatrix::<Complex64>::zeros(dim, dim);
        for r in 0..dim {
            m[(r, r)] = Complex64::new(scale * (rng.random::<f64>() - 0.5), 0.0);
            for c in r + 1..dim {
                let z = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale;
                m[(r, c)] = z;
                m[(c, r)] = z.conj();
            }
        }
        InteractionHamiltonian::from_matrix(m).unwrap()
    }

    #[test]
    fn zero_time_is_identity() {
        let (_, h) = transverse_pair(1.0);
        let psi = StateVector::basis_state(3, 0);
        assert_eq!(propagate(&h, &psi, 0.0).unwrap(), psi);
        assert_eq!(propagate_rk4(&h, &psi, 0.0).unwrap(), psi);
    }

    #[test]
    fn full_pair_flip() {
        let (basis, h) = transverse_pair(0.0);
        // 2π·√2·0.3·t = π/2
        let t = 0.25 / (2f64.sqrt() * 0.3);
        let psi = propagate(&h, &StateVector::basis_state(3, 0), t).unwrap();
        assert_abs_diff_eq!(transfer_fraction(&psi, &basis), 0.5, epsilon = 1e-12);
        let psi = propagate(&h, &StateVector::basis_state(3, 0), 0.589).unwrap();
        assert_abs_diff_eq!(transfer_fraction(&psi, &basis), 0.5, epsilon = 1e-5);
    }

    #[test]
    fn two_level_rabi_formula() {
        let v = 0.3;
        let omega = 2f64.sqrt() * v;
        for &delta in &[-7.0, -1.3, 0.0, 0.4, 2.5, 11.0] {
            let (basis, h) = transverse_pair(delta);
            for &t in &[0.05, 0.515, 1.7, 3.0] {
                let psi = propagate(&h, &StateVector::basis_state(3, 0), t).unwrap();
                let gen = (omega * omega + delta * delta / 4.0).sqrt();
                let analytic = 0.5 * omega * omega / gen.powi(2) * (TAU * gen * t).sin().powi(2);
                assert_abs_diff_eq!(transfer_fraction(&psi, &basis), analytic, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn far_detuned_transfer_is_negligible() {
        let (basis, h) = transverse_pair(1e3);
        let psi = propagate_rk4(&h, &StateVector::basis_state(3, 0), 0.515).unwrap();
        assert!(transfer_fraction(&psi, &basis) < 1e-6);
        let psi = propagate(&h, &StateVector::basis_state(3, 0), 0.515).unwrap();
        assert!(transfer_fraction(&psi, &basis) < 1e-6);
    }

    #[test]
    fn rk4_agrees_with_eigen_on_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..30 {
            let i = 2 + trial % 3;
            let basis = enumerate_states(i).unwrap();
            let cfg = sample_positions(i, 18.0, &mut rng).unwrap();
            let delta = 6.0 * (rng.random::<f64>() - 0.5);
            let h = build_hamiltonian(&basis, &cfg, delta, &CouplingConstants::default()).unwrap();
            let psi0 = StateVector::basis_state(basis.dim(), 0);
            let a = propagate(&h, &psi0, 0.515).unwrap();
            let b = propagate_rk4(&h, &psi0, 0.515).unwrap();
            assert!(a.max_deviation(&b) < 1e-6);
        }
    }

    #[test]
    fn complex_path_agrees_with_rk4() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [2, 5, 9] {
            let h = random_hermitian(dim, 4.0, &mut rng);
            assert!(!h.is_real());
            let psi0 = StateVector::basis_state(dim, dim - 1);
            let a = propagate(&h, &psi0, 1.1).unwrap();
            let b = propagate_rk4(&h, &psi0, 1.1).unwrap();
            assert!(a.max_deviation(&b) < 1e-6);
            assert_abs_diff_eq!(a.norm(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn transfer_fraction_examples() {
        let basis = enumerate_states(4).unwrap();
        let all_p = StateVector::basis_state(basis.dim(), 0);
        assert_eq!(transfer_fraction(&all_p, &basis), 0.0);

        let b2 = enumerate_states(2).unwrap();
        let flipped = b2.index_of(&[AtomLevel::S, AtomLevel::Sp]).unwrap();
        assert_eq!(transfer_fraction(&StateVector::basis_state(3, flipped), &b2), 0.5);

        let amps = DVector::from_iterator(
            basis.dim(),
            basis
                .states()
                .iter()
                .map(|s| Complex64::new(if s.flip_count() == 1 { 1.0 } else { 0.0 }, 0.0)),
        );
        let psi = StateVector::new(amps).unwrap();
        assert_abs_diff_eq!(transfer_fraction(&psi, &basis), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (_, h) = transverse_pair(0.0);
        let psi = StateVector::basis_state(3, 0);
        assert!(propagate(&h, &psi, -1.0).is_err());
        assert!(propagate(&h, &StateVector::basis_state(4, 0), 1.0).is_err());
        assert!(StateVector::new(DVector::zeros(3)).is_err());
        let big = InteractionHamiltonian::from_matrix(DMatrix::from_element(
            2,
            2,
            Complex64::new(1e12, 0.0),
        ))
        .unwrap();
        assert!(matches!(
            propagate_rk4(&big, &StateVector::basis_state(2, 0), 1.0),
            Err(FretError::StepUnderflow { .. })
        ));
        let nan = InteractionHamiltonian::from_matrix(DMatrix::from_element(
            2,
            2,
            Complex64::new(f64::NAN, 0.0),
        ));
        // NaN is never equal to its conjugate, so construction already refuses it.
        assert!(nan.is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn unitary_and_composable(seed in any::<u64>(), t1 in 0.0..1.5f64, t2 in 0.0..1.5f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = 2 + (seed % 10) as usize;
            let h = random_hermitian(dim, 10.0, &mut rng);
            let psi0 = StateVector::basis_state(dim, 0);
            let whole = propagate(&h, &psi0, t1 + t2).unwrap();
            let split = propagate(&h, &propagate(&h, &psi0, t1).unwrap(), t2).unwrap();
            prop_assert!((whole.norm() - 1.0).abs() < 1e-10);
            prop_assert!(whole.max_deviation(&split) < 1e-10);
        }
    }
}
