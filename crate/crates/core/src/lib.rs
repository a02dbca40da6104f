//! Beam-training simulator for pinching-antenna systems.
//!
//! Waveguides run along x at height `d0`, spaced `y0` apart in y. Each
//! carries `L` movable antennas; users stand on the floor `z = 0`. A
//! codeword is a full antenna layout, and beam training picks the codeword
//! (and baseband weights) that maximize gain or sum rate.

pub mod analysis;
pub mod beamforming;
pub mod channel;
pub mod codebook;
pub mod geometry;
pub mod predictor;
pub mod rng;
pub mod scene;
pub mod tokens;
