//! Simulation and analysis of high-dimensional OAM-entangled photon pairs
//! produced by entanglement by path identity.
//!
//! A chain of crystals ([`chain`]) is pumped coherently; because the pairs
//! from different crystals leave along identical paths, their amplitudes add
//! and the OAM each crystal imprints becomes one dimension of an entangled
//! state. The remaining modules measure such states ([`measurement`],
//! [`fringe`]), reconstruct them ([`mle`]), solve the waveplate algebra used
//! to set the interferometer phases ([`jones`]) and read setup descriptions
//! ([`setup`]).

pub mod chain;
pub mod error;
pub mod fringe;
pub mod io;
pub mod jones;
pub mod linalg;
pub mod measurement;
pub mod mle;
pub mod rng;
pub mod setup;
pub mod space;
pub mod state;

pub use chain::{
    build_density, build_state, coherence_satisfied, crystal_emission, relative_pair_rate,
    ChainConfig, CoherenceGeometry, CrystalSpec, DistinguishabilityModel, Stage,
};
pub use error::{Error, Result};
pub use fringe::{visibility, FringeFit};
pub use jones::{
    half_wave, qhq_reduction_check, quarter_wave, qwp_phase_transfer, rotation, solve_qhq,
    JonesMatrix, JonesVector, PlateKind, QhqSolution, WaveplateSetting,
};
pub use measurement::{
    crosstalk_matrix, expected_counts, simulate_counts, CountRecord, MeasurementSetting, Subspace,
    TomographyDesign,
};
pub use mle::{
    bootstrap_fidelity, mle_reconstruct, FidelityEstimate, MleOptions, ReconstructionResult,
};
pub use setup::{parse_setup, ParseError, SetupDocument};
pub use space::{ModeSpace, Oam};
pub use state::{fidelity, projection_probability, BiphotonKet, DensityOperator, PhotonKet};

pub use num_complex::Complex64;
