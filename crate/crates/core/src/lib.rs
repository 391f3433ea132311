//! Visual product authentication: locate a brand mark in a photograph,
//! normalize it to a canonical frame, score it with a binary classifier and
//! turn the score into a GENUINE / COUNTERFEIT / REJECT verdict.

pub mod affine;
pub mod decision;
pub mod error;
pub mod manifest;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod training;
