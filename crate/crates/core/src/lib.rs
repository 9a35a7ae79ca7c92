//! Tooling for acquisition-native echocardiography recordings.

pub mod annotations;
pub mod container;
pub mod geometry;
pub mod metrics;
pub mod phantom;
pub mod timing;
