//! Core math for reconstructing full-body motion from a head trajectory and
//! intermittently visible hands.

pub mod augmentation;
pub mod conditioning;
pub mod geometry;
pub mod guidance;
pub mod metrics;
pub mod record;
pub mod skeleton;
pub mod synth;
pub mod schedule;
pub mod seed;
