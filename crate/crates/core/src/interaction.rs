//! Random atom geometries and the dipole-dipole interaction Hamiltonian.
//!
//! Energies are linear frequencies in MHz and lengths are in µm, so coupling
//! constants carry units of MHz·µm³. The z axis is the dc field axis.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{AtomLevel, CollectiveBasis};
use crate::error::{invalid, FretError, Result};

/// Minimum pair separation, µm. Closer configurations are resampled.
pub const R_MIN: f64 = 0.1;

/// Consecutive rejected configurations tolerated by [`sample_positions`].
pub const MAX_REJECTIONS: usize = 1000;

/// Effective C3 constants (MHz·µm³) for the three coupling channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConstants {
    /// `PP <-> SS'` Förster channel.
    pub c3_forster: f64,
    /// `SP <-> PS` exchange.
    pub c3_exchange_s: f64,
    /// `S'P <-> PS'` exchange.
    pub c3_exchange_sp: f64,
}

impl Default for CouplingConstants {
    /// 300 MHz·µm³ puts 0.3 MHz on a transverse pair 10 µm apart.
    fn default() -> Self {
        Self {
            c3_forster: 300.0,
            c3_exchange_s: 300.0,
            c3_exchange_sp: 300.0,
        }
    }
}

impl CouplingConstants {
    pub fn uniform(c3: f64) -> Self {
        Self {
            c3_forster: c3,
            c3_exchange_s: c3,
            c3_exchange_sp: c3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c3_forster", self.c3_forster),
            ("c3_exchange_s", self.c3_exchange_s),
            ("c3_exchange_sp", self.c3_exchange_sp),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Atom positions inside a cube of side `side` µm.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomConfiguration {
    positions: Vec<Vector3<f64>>,
    side: f64,
}

impl AtomConfiguration {
    /// Wraps explicit positions, checking the cube bounds and the `R_MIN` floor.
    pub fn new(positions: Vec<Vector3<f64>>, side: f64) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(invalid("side", format!("must be > 0, got {side}")));
        }
        for p in &positions {
            if p.iter().any(|&x| !(0.0..=side).contains(&x)) {
                return Err(invalid(
                    "positions",
                    format!("({}, {}, {}) lies outside [0, {side}]³", p.x, p.y, p.z),
                ));
            }
        }
        if let Some(d) = min_separation(&positions) {
            if d < R_MIN {
                return Err(FretError::PairTooClose {
                    distance: d,
                    r_min: R_MIN,
                });
            }
        }
        Ok(Self { positions, side })
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn side(&self) -> f64 {
        self.side
    }
}

fn min_separation(positions: &[Vector3<f64>]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (a, pa) in positions.iter().enumerate() {
        for pb in &positions[a + 1..] {
            let d = (pa - pb).norm();
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best
}

/// Draws `atoms` positions uniformly in `[0, side]³`, resampling the whole
/// configuration whenever a pair falls closer than [`R_MIN`].
pub fn sample_positions<R: Rng + ?Sized>(
    atoms: usize,
    side: f64,
    rng: &mut R,
) -> Result<AtomConfiguration> {
    if atoms == 0 {
        return Err(invalid("atoms", "need at least one atom"));
    }
    if !(side.is_finite() && side > 0.0) {
        return Err(invalid("side", format!("must be > 0, got {side}")));
    }
    for _ in 0..MAX_REJECTIONS {
        let positions: Vec<Vector3<f64>> = (0..atoms)
            .map(|_| {
                Vector3::new(
                    rng.random::<f64>() * side,
                    rng.random::<f64>() * side,
                    rng.random::<f64>() * side,
                )
            })
            .collect();
        if min_separation(&positions).is_none_or(|d| d >= R_MIN) {
            return Ok(AtomConfiguration { positions, side });
        }
    }
    Err(FretError::Placement {
        atoms,
        side,
        attempts: MAX_REJECTIONS,
    })
}

/// Dipole-dipole coupling `c3 (1 - 3 Z²/R²) / R³` between two atoms, in MHz.
pub fn pair_coupling(a: &Vector3<f64>, b: &Vector3<f64>, c3: f64) -> Result<f64> {
    let sep = b - a;
    let r2 = sep.norm_squared();
    let r = r2.sqrt();
    if r < R_MIN {
        return Err(FretError::PairTooClose {
            distance: r,
            r_min: R_MIN,
        });
    }
    Ok(c3 * (1.0 - 3.0 * sep.z * sep.z / r2) / (r2 * r))
}

/// Dense Hermitian Hamiltonian over a collective basis, in MHz.
#[derive(Debug, Clone)]
pub struct InteractionHamiltonian {
    entries: DMatrix<Complex64>,
    flips: Vec<usize>,
    delta: f64,
}

impl InteractionHamiltonian {
    /// Wraps an arbitrary Hermitian matrix; `flips` and `delta` are kept only
    /// for [`retune`](Self::retune) and may be empty / zero.
    pub fn from_matrix(entries: DMatrix<Complex64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(FretError::DimensionMismatch(format!(
                "{}x{} matrix is not square",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let n = entries.nrows();
        for r in 0..n {
            for c in r..n {
                if entries[(r, c)] != entries[(c, r)].conj() {
                    return Err(invalid(
                        "entries",
                        format!("not Hermitian at ({r}, {c})"),
                    ));
                }
            }
        }
        Ok(Self {
            entries,
            flips: vec![0; n],
            delta: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    /// Resets the diagonal to `m·delta` without touching the couplings.
    pub fn retune(&mut self, delta: f64) {
        for (k, &m) in self.flips.iter().enumerate() {
            self.entries[(k, k)] = Complex64::new(m as f64 * delta, 0.0);
        }
        self.delta = delta;
    }

    /// True when every entry is real, which holds for all built Hamiltonians.
    pub fn is_real(&self) -> bool {
        self.entries.iter().all(|z| z.im == 0.0)
    }

    /// Largest absolute row sum; bounds the spectral radius from above.
    pub fn max_row_norm(&self) -> f64 {
        self.entries
            .row_iter()
            .map(|row| row.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

enum Channel {
    Forster,
    ExchangeS,
    ExchangeSp,
}

fn channel(from: (AtomLevel, AtomLevel), to: (AtomLevel, AtomLevel)) -> Option<Channel> {
    use AtomLevel::*;
    let flipped = |p| p == (S, Sp) || p == (Sp, S);
    match (from, to) {
        ((P, P), t) if flipped(t) => Some(Channel::Forster),
        (f, (P, P)) if flipped(f) => Some(Channel::Forster),
        ((S, P), (P, S)) | ((P, S), (S, P)) => Some(Channel::ExchangeS),
        ((Sp, P), (P, Sp)) | ((P, Sp), (Sp, P)) => Some(Channel::ExchangeSp),
        _ => None,
    }
}

/// Assembles the Hamiltonian for one geometry at detuning `delta` (MHz).
///
/// The diagonal holds `m·delta`; off-diagonal entries connect states that
/// differ on exactly two atoms through one of the three channels.
pub fn build_hamiltonian(
    basis: &CollectiveBasis,
    config: &AtomConfiguration,
    delta: f64,
    constants: &CouplingConstants,
) -> Result<InteractionHamiltonian> {
    if basis.atoms() != config.atoms() {
        return Err(FretError::DimensionMismatch(format!(
            "basis has {} atoms, configuration has {}",
            basis.atoms(),
            config.atoms()
        )));
    }
    constants.validate()?;

    let n_atoms = config.atoms();
    let pos = config.positions();
    // Pairwise couplings per channel, indexed [a][b].
    let mut table = vec![[0.0f64; 3]; n_atoms * n_atoms];
    for a in 0..n_atoms {
        for b in a + 1..n_atoms {
            let row = [
                pair_coupling(&pos[a], &pos[b], constants.c3_forster)?,
                pair_coupling(&pos[a], &pos[b], constants.c3_exchange_s)?,
                pair_coupling(&pos[a], &pos[b], constants.c3_exchange_sp)?,
            ];
            table[a * n_atoms + b] = row;
            table[b * n_atoms + a] = row;
        }
    }

    let dim = basis.dim();
    let states = basis.states();
    let mut entries = DMatrix::<Complex64>::zeros(dim, dim);
    for u in 0..dim {
        let lu = states[u].levels();
        for v in u + 1..dim {
            let lv = states[v].levels();
            let mut diff = [0usize; 2];
            let mut count = 0;
            for k in 0..n_atoms {
                if lu[k] != lv[k] {
                    if count < 2 {
                        diff[count] = k;
                    }
                    count += 1;
                }
            }
            if count != 2 {
                continue;
            }
            let [a, b] = diff;
            let value = match channel((lu[a], lu[b]), (lv[a], lv[b])) {
                Some(Channel::Forster) => table[a * n_atoms + b][0],
                Some(Channel::ExchangeS) => table[a * n_atoms + b][1],
                Some(Channel::ExchangeSp) => table[a * n_atoms + b][2],
                None => continue,
            };
            let z = Complex64::new(value, 0.0);
            entries[(u, v)] = z;
            entries[(v, u)] = z.conj();
        }
    }

    let mut h = InteractionHamiltonian {
        entries,
        flips: basis.flip_counts(),
        delta,
    };
    h.retune(delta);
    Ok(h)
}
