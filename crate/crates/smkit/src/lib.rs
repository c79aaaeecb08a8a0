//! Simulation and restoration toolkit for magnetic particle imaging (MPI)
//! system matrices.
//!
//! The crate simulates system matrices with an equilibrium magnetization
//! model extended by uniaxial anisotropy, samples randomized particle /
//! scanner / calibration parameters, applies corruption models (noise,
//! downsampling, masking), restores them with classical baselines (DCT
//! soft thresholding, cubic spline interpolation, biharmonic inpainting),
//! reconstructs concentration images with a regularized Kaczmarz solver,
//! and evaluates restoration quality with PSNR/SSIM.

pub mod consts;
pub mod corrupt;
pub mod error;
pub mod evalkit;
pub mod fieldsim;
pub mod magnetization;
pub mod paramspace;
pub mod recon;
pub mod restore;
pub mod shape;
pub mod smsim;
pub mod storage;

pub use error::{Error, Result};
pub use shape::Shape3;
