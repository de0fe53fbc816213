//! Generalized motion pattern (GMP) enhancement for volumetric grayscale
//! scans, with the classical segmentation, detection and evaluation stages
//! that consume it.
//!
//! Processing order: [`io`] loads and standardizes a volume, [`denoise`]
//! smooths it with total-variation denoising, [`roi`] crops the bright
//! band, [`gmp`] builds the motion-pattern ensemble and coalesces it,
//! [`segment`] turns the result into a fluid mask, [`detect`] decides
//! per-volume presence and [`eval`] scores everything against ground truth.
//! [`phantom`] generates synthetic volumes with known answers and
//! [`pipeline`] strings the stages together.

pub mod denoise;
pub mod detect;
pub mod digest;
pub mod error;
pub mod eval;
pub mod gmp;
pub mod image;
pub mod io;
pub mod parallel;
pub mod phantom;
pub mod pipeline;
pub mod resample;
pub mod roi;
pub mod segment;

pub use error::{GmpError, Result};
pub use image::{Image2D, Volume};
