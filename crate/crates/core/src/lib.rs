//! Bell/CHSH tests on path-entangled single photons.
//!
//! - [`state`]: pure states, density matrices and unitaries on 2- and
//!   4-dimensional mode spaces.
//! - [`optics`]: beam splitters, rotations, wave plates and the input state.
//! - [`chsh`]: correlations, the CHSH parameter, angle sweeps and `S_max`.
//! - [`noise`]: depolarizing and multi-photon purity models.
//! - [`sim`]: Monte Carlo detector time tags.
//! - [`counting`]: the tag file format, coincidences and probability estimators.

pub mod chsh;
pub mod counting;
pub mod error;
pub mod format;
pub mod noise;
pub mod optics;
pub mod sim;
pub mod state;

pub use chsh::{chsh_s, correlation, max_s, AngleSetting, ChshResult, OutcomeProbabilities};
pub use error::{Error, FormatError, Result};
pub use state::{apply_unitary, basis_probabilities, tensor, DensityMatrix, PureState, Unitary};
