pub mod diagnostics;
pub mod eigen;
pub mod error;
pub mod fft;
pub mod field;
pub mod gns;
pub mod grid;
pub mod kinetic;
pub mod linalg;
pub mod oracle;
pub mod lt;
pub mod resample;
pub mod riesz;
pub mod state;
pub mod trapped;

pub use error::{Error, Result};
pub use field::{Field, FieldTag};
pub use grid::Grid;
pub use kinetic::{apply_fractional_kinetic, KineticOperator, KineticSpec};
pub use riesz::{hartree_energy, riesz_convolve, RieszKernel};
pub use state::{loewdin_orthonormalize, DensityOperator, OrthoFrame, SchattenIndex};
