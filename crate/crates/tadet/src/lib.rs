//! One-stage temporal action detection with boundary-confidence refinement.
//!
//! The crate covers the full pipeline at desk scale: pyramid geometry and
//! interval math ([`timeline`]), label assignment ([`assign`]), small
//! convolutional prediction heads with hand-written backprop ([`heads`]),
//! the composite training loss ([`losses`]), confidence-fused decoding with
//! Soft-NMS ([`decode`]), detection metrics ([`eval`]), a synthetic dataset
//! generator ([`synth`]), and file formats plus CLI plumbing ([`formats`],
//! [`config`]).

pub mod assign;
pub mod config;
pub mod decode;
pub mod eval;
pub mod features;
pub mod formats;
pub mod heads;
pub mod losses;
pub mod rng;
pub mod synth;
pub mod timeline;
