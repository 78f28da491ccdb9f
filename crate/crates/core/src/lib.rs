//! Optical-flow collision avoidance for a small Ackermann vehicle.
//!
//! The crate covers the whole chain: macroblock motion-vector codecs
//! ([`mvcodec`]), flow fields and input masks ([`flowcore`]), a kinematic
//! vehicle simulator ([`simworld`]) with synthetic flow rendering
//! ([`synthflow`]), a from-scratch CNN ([`tinynet`]), dataset tooling
//! ([`datapipe`]), the steering proxy and its frame-skipping runtime
//! ([`avoidproxy`]), the wire protocols ([`linkproto`]) and the experiment
//! and service harness ([`harness`]).

pub mod avoidproxy;
pub mod datapipe;
pub mod error;
pub mod flowcore;
pub mod harness;
pub mod linkproto;
pub mod mvcodec;
pub mod simworld;
pub mod synthflow;
pub mod tinynet;

pub use error::{Error, Result};
