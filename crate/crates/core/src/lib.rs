//! Self-calibration of receiver arrays from time-of-arrival data when
//! neither the source emission times nor the receiver clock offsets are
//! known.
//!
//! The pipeline works on a loss that is blind to all timing terms: centering
//! the rows and columns of the TOA matrix removes every offset and emission
//! time, leaving a function of geometry only. A semidefinite relaxation over
//! the Gram matrix of receivers and sources provides an initial geometry,
//! Levenberg–Marquardt refines it, and the timings follow from a linear
//! least-squares fit.
//!
//! ```no_run
//! use arraycalib::{pipeline, scenario, sdr::ClarabelBackend, evaluation};
//!
//! let instance = scenario::generate(&scenario::ScenarioConfig::default()).unwrap();
//! let mut backend = ClarabelBackend::default();
//! let result = pipeline::localize(&instance.toa, &Default::default(), &mut backend).unwrap();
//! let aligned = evaluation::procrustes_align(&result.points, &instance.truth).unwrap();
//! println!("mean error {:.2e} m", aligned.e_rs);
//! ```

// links the system OpenBLAS used by the conic solver
use openblas_src as _;

pub mod constraints;
pub mod dof;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod refine;
pub mod scenario;
pub mod sdr;
pub mod sweep;
pub mod timing;
pub mod toa;

pub use error::{Error, Result};
pub use geometry::PointSet;
pub use toa::{SyncMode, Timing, ToaMatrix};
