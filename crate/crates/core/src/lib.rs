//! Magnetic-anomaly map matching for aided inertial navigation.
//!
//! Scalar magnetometer readings are matched against a total-magnetic-intensity
//! grid map to produce position fixes, which are fused into a simulated
//! inertial navigation solution.
//!
//! * [`map`] and [`geo`]: grid maps, sampling, downsampling and coordinates.
//! * [`pda`]: gating and probabilistic data association for one measurement.
//! * [`quality`]: map feature variability and PDA error statistics.
//! * [`ins`]: truth trajectories, IMU simulation and INS error propagation.
//! * [`matching`]: batch map matching (PMHT-style EM and Viterbi).
//! * [`integrator`]: unscented update of the navigation state with fixes.
//! * [`harness`]: scenarios, Monte Carlo runs and reports.

pub mod geo;
pub mod harness;
pub mod ins;
pub mod integrator;
pub mod map;
pub mod matching;
pub mod pda;
pub mod quality;
pub mod rng;

pub use geo::{GeoPosition, LocalFrame};
pub use map::{MapError, MapGrid};
