//! Reference methods the learned model is compared against.

pub mod vanilla;
pub mod zf;
pub mod ccp;
