//! Collective quasimolecular basis for `i` atoms sharing the three Förster levels.
//!
//! A Förster event turns a `P + P` pair into one `S` and one `S'` atom, so every
//! reachable collective state carries equal numbers of `S` and `S'` atoms.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{FretError, Result};

/// Largest supported atom count.
pub const MAX_ATOMS: usize = 8;

/// Single-atom level taking part in the `P + P -> S + S'` process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AtomLevel {
    /// Initial 37P(3/2), |M_J| = 1/2.
    P,
    /// Final 37S(1/2).
    S,
    /// Final 38S(1/2).
    Sp,
}

impl AtomLevel {
    pub const ALL: [AtomLevel; 3] = [AtomLevel::P, AtomLevel::S, AtomLevel::Sp];

    fn symbol(self) -> &'static str {
        match self {
            AtomLevel::P => "P",
            AtomLevel::S => "S",
            AtomLevel::Sp => "S'",
        }
    }
}

/// One assignment of levels to the atoms, with its flip count cached.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CollectiveState {
    levels: Vec<AtomLevel>,
    flips: usize,
}

impl CollectiveState {
    /// Builds a state, rejecting level lists with unequal `S` and `S'` counts.
    pub fn new(levels: Vec<AtomLevel>) -> Result<Self> {
        let s = levels.iter().filter(|&&l| l == AtomLevel::S).count();
        let sp = levels.iter().filter(|&&l| l == AtomLevel::Sp).count();
        if s != sp {
            return Err(crate::error::invalid(
                "levels",
                format!("{s} S atoms but {sp} S' atoms"),
            ));
        }
        Ok(Self { levels, flips: s })
    }

    pub fn levels(&self) -> &[AtomLevel] {
        &self.levels
    }

    pub fn atoms(&self) -> usize {
        self.levels.len()
    }

    /// Number of completed pair flips (count of `S`, equal to count of `S'`).
    pub fn flip_count(&self) -> usize {
        self.flips
    }
}

impl fmt::Display for CollectiveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.levels {
            f.write_str(l.symbol())?;
        }
        Ok(())
    }
}

/// Free-function form of [`CollectiveState::flip_count`].
pub fn flip_count(state: &CollectiveState) -> usize {
    state.flip_count()
}

/// Ordered collective basis with reverse lookup.
#[derive(Debug, Clone)]
pub struct CollectiveBasis {
    atoms: usize,
    states: Vec<CollectiveState>,
    index: HashMap<Vec<AtomLevel>, usize>,
}

impl CollectiveBasis {
    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[CollectiveState] {
        &self.states
    }

    pub fn state(&self, ordinal: usize) -> &CollectiveState {
        &self.states[ordinal]
    }

    pub fn index_of(&self, levels: &[AtomLevel]) -> Option<usize> {
        self.index.get(levels).copied()
    }

    /// Flip count of every state, in basis order.
    pub fn flip_counts(&self) -> Vec<usize> {
        self.states.iter().map(CollectiveState::flip_count).collect()
    }
}

/// Closed-form basis size: `Σ_m i! / ((i-2m)! m! m!)`.
pub fn basis_size(atoms: usize) -> usize {
    let fact = |n: usize| (1..=n).product::<usize>();
    (0..=atoms / 2)
        .map(|m| fact(atoms) / (fact(atoms - 2 * m) * fact(m) * fact(m)))
        .sum()
}

/// Enumerates all collective states of `atoms` atoms in lexicographic order
/// (`P < S < S'`), so the all-`P` state is ordinal 0.
pub fn enumerate_states(atoms: usize) -> Result<CollectiveBasis> {
    if !(1..=MAX_ATOMS).contains(&atoms) {
        return Err(FretError::AtomCount {
            got: atoms,
            min: 1,
            max: MAX_ATOMS,
        });
    }

    let mut states = Vec::with_capacity(basis_size(atoms));
    let mut levels = vec![AtomLevel::P; atoms];
    extend(&mut levels, 0, 0, 0, &mut states);

    let index = states
        .iter()
        .enumerate()
        .map(|(k, s)| (s.levels.clone(), k))
        .collect();
    Ok(CollectiveBasis {
        atoms,
        states,
        index,
    })
}

// Depth-first over positions; prunes branches that can no longer balance S and S'.
fn extend(
    levels: &mut Vec<AtomLevel>,
    pos: usize,
    s: usize,
    sp: usize,
    out: &mut Vec<CollectiveState>,
) {
    let remaining = levels.len() - pos;
    if s.abs_diff(sp) > remaining {
        return;
    }
    if remaining == 0 {
        out.push(CollectiveState {
            levels: levels.clone(),
            flips: s,
        });
        return;
    }
    for level in AtomLevel::ALL {
        levels[pos] = level;
        let (ns, nsp) = match level {
            AtomLevel::P => (s, sp),
            AtomLevel::S => (s + 1, sp),
            AtomLevel::Sp => (s, sp + 1),
        };
        extend(levels, pos + 1, ns, nsp, out);
    }
    levels[pos] = AtomLevel::P;
}
