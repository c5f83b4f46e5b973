//! Supervised contrastive (SupCon) and cross-entropy representation learning
//! with linear-probe transfer evaluation over multi-domain image banks.

pub mod augment;
mod binio;
pub mod data;
pub mod error;
pub mod evalsuite;
pub mod losses;
pub mod models;
pub mod ndtensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
