//! Monte-Carlo simulation of Stark-tuned Förster resonance spectra for a few
//! randomly placed Rydberg atoms, and the detection chain that turns ideal
//! multiplicity spectra into post-selected signals.
//!
//! The pipeline runs [`basis`] → [`interaction`] → [`evolution`] →
//! [`montecarlo`] for the ideal spectra `ρ_i(Δ)`, then [`detection`] for the
//! observable `S_N(Δ)`; [`lineshape`] measures widths and amplitudes.

pub mod basis;
pub mod detection;
pub mod error;
pub mod evolution;
pub mod interaction;
pub mod lineshape;
pub mod montecarlo;

pub use basis::{enumerate_states, flip_count, AtomLevel, CollectiveBasis, CollectiveState};
pub use detection::{
    detection_mix, extract_params, fine_structure_mix, interaction_histogram, observe, Calibration,
    DetectionChain, InteractionHistogram, Mixed, SpectrumSet,
};
pub use error::{FretError, Result};
pub use evolution::{propagate, propagate_rk4, transfer_fraction, StateVector};
pub use interaction::{
    build_hamiltonian, pair_coupling, sample_positions, AtomConfiguration, CouplingConstants,
    InteractionHamiltonian,
};
pub use lineshape::{
    detuning_to_field, field_to_detuning, fwhm, lorentz_fit, lorentz_fit_fixed_offset, peak_amplitude,
    LorentzFit, StarkMap,
};
pub use montecarlo::{
    detuning_grid, realization_stream, simulate_spectrum, simulate_spectrum_with, Spectrum,
    SpectrumRequest,
};
